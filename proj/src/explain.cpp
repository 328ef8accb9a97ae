#include "connectome/explain.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

#include "connectome/adam.hpp"
#include "connectome/util.hpp"

namespace connectome {

namespace ops = connectome::ops;
using nlohmann::json;

namespace {

SaliencyReport uniform_report(std::size_t n, std::string warning) {
  SaliencyReport r;
  r.scores.assign(n, 0.0);
  r.percentages.assign(n, 100.0 / static_cast<double>(n));
  r.ranking.resize(n);
  std::iota(r.ranking.begin(), r.ranking.end(), 0);
  r.warnings.push_back(std::move(warning));
  return r;
}

void finalize_ranking(SaliencyReport& r) {
  r.ranking.resize(r.percentages.size());
  std::iota(r.ranking.begin(), r.ranking.end(), 0);
  std::stable_sort(r.ranking.begin(), r.ranking.end(),
                   [&](std::size_t a, std::size_t b) {
                     return r.percentages[a] > r.percentages[b];
                   });
}

}  // namespace

SaliencyReport saliency(Model& model, const ConnectomeGraph& g) {
  const std::size_t n = g.node_count;
  auto features = make_tensor(n, model.config().input_dim, g.node_features,
                              /*requires_grad=*/true);

  ForwardOptions opts;
  opts.features_override = features;
  auto logits = model.forward(g, opts);
  const int pred = logits->data()[1] > logits->data()[0] ? 1 : 0;
  const TensorPtr pick =
      make_tensor(1, 2, pred == 1 ? std::vector<double>{0.0, 1.0}
                                  : std::vector<double>{1.0, 0.0});
  auto target = ops::sum(ops::mul(logits, pick));
  features->zero_grad();
  target->backward();

  SaliencyReport r;
  r.scores.resize(n);
  double total = 0.0;
  const auto& grad = features->grad();
  const std::size_t dim = model.config().input_dim;
  for (std::size_t i = 0; i < n; ++i) {
    double ss = 0.0;
    for (std::size_t c = 0; c < dim; ++c) {
      const double v = grad[i * dim + c];
      ss += v * v;
    }
    r.scores[i] = std::sqrt(ss);
    total += r.scores[i];
  }
  if (total == 0.0) {
    return uniform_report(
        n, "saliency gradient is identically zero; reporting uniform "
           "importance");
  }
  r.percentages.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    r.percentages[i] = 100.0 * r.scores[i] / total;
  }
  finalize_ranking(r);
  return r;
}

SaliencyReport saliency(EnsembleModel& ensemble, const ConnectomeGraph& g) {
  if (ensemble.members.empty()) {
    throw std::invalid_argument("saliency: ensemble has no members");
  }
  std::vector<SaliencyReport> parts;
  parts.reserve(ensemble.members.size());
  for (auto& m : ensemble.members) parts.push_back(saliency(m, g));
  return cohort_saliency(parts);
}

SaliencyReport cohort_saliency(const std::vector<SaliencyReport>& reports) {
  if (reports.empty()) {
    throw std::invalid_argument("cohort_saliency: no reports");
  }
  const std::size_t n = reports.front().percentages.size();
  SaliencyReport out;
  out.scores.assign(n, 0.0);
  out.percentages.assign(n, 0.0);
  for (const auto& r : reports) {
    if (r.percentages.size() != n) {
      throw std::invalid_argument("cohort_saliency: mixed ROI counts");
    }
    for (std::size_t i = 0; i < n; ++i) {
      out.percentages[i] += r.percentages[i];
      out.scores[i] += r.scores[i];
    }
    for (const auto& w : r.warnings) out.warnings.push_back(w);
  }
  const double inv = 1.0 / static_cast<double>(reports.size());
  for (std::size_t i = 0; i < n; ++i) {
    out.percentages[i] *= inv;
    out.scores[i] *= inv;
  }
  finalize_ranking(out);
  return out;
}

std::vector<std::size_t> EdgeMask::top_indices(std::size_t k) const {
  std::vector<std::size_t> idx(values.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    if (values[a] != values[b]) return values[a] > values[b];
    if (edges[a].i != edges[b].i) return edges[a].i < edges[b].i;
    return edges[a].j < edges[b].j;
  });
  idx.resize(std::min(k, idx.size()));
  return idx;
}

EdgeMask gnn_explain(const std::vector<Model*>& models,
                     const ConnectomeGraph& g, const ExplainConfig& cfg,
                     SeededRng& rng) {
  if (models.empty()) {
    throw std::invalid_argument("gnn_explain: no models");
  }
  EdgeMask mask;
  mask.subject_id = g.subject_id;
  mask.edges = g.edges;
  if (g.edges.empty()) {
    // Nothing to mask; the prediction cannot depend on edges.
    std::vector<std::array<double, 2>> probs;
    for (auto* m : models) probs.push_back(m->predict_proba(g));
    const auto vote = soft_vote(probs);
    mask.target_class = vote[1] > vote[0] ? 1 : 0;
    return mask;
  }

  // Explained class: the unmasked soft-vote prediction.
  {
    std::vector<std::array<double, 2>> probs;
    for (auto* m : models) probs.push_back(m->predict_proba(g));
    const auto vote = soft_vote(probs);
    mask.target_class = vote[1] > vote[0] ? 1 : 0;
  }

  // Each edge's init is keyed to its weight bits rather than its list
  // position, so relabeling nodes permutes the initialization alongside the
  // edges and the learned mask stays equivariant. Edges with bit-equal
  // weights share an init value, which is harmless.
  const std::size_t E = g.edges.size();
  const auto base = rng.child("explain/" + g.subject_id);
  std::vector<double> init(E);
  for (std::size_t e = 0; e < E; ++e) {
    std::uint64_t bits = 0;
    static_assert(sizeof(double) == sizeof(std::uint64_t));
    std::memcpy(&bits, &g.edges[e].weight, sizeof(bits));
    SeededRng edge_stream(SeededRng::mix64(base.seed() ^ SeededRng::mix64(bits)));
    init[e] = edge_stream.gaussian(0.0, cfg.init_std);
  }
  auto logits_m = make_tensor(E, 1, std::move(init), /*requires_grad=*/true);

  AdamConfig adam_cfg;
  adam_cfg.lr = cfg.lr;
  Adam optimizer({logits_m}, adam_cfg);

  const TensorPtr pick =
      make_tensor(1, 2, mask.target_class == 1
                            ? std::vector<double>{0.0, 1.0}
                            : std::vector<double>{1.0, 0.0});

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    ForwardOptions opts;
    opts.edge_mask_logits = logits_m;

    // Soft-vote probability of the target class under the masked graph.
    TensorPtr prob_sum;
    for (auto* m : models) {
      auto probs = ops::softmax_rows(m->forward(g, opts));
      prob_sum = prob_sum ? ops::add(prob_sum, probs) : probs;
    }
    auto vote = ops::scale(prob_sum, 1.0 / static_cast<double>(models.size()));
    auto ce = ops::scale(ops::log(ops::sum(ops::mul(vote, pick))), -1.0);

    auto s = ops::sigmoid(logits_m);
    auto s_neg = ops::sigmoid(ops::scale(logits_m, -1.0));  // 1 - s, stably
    auto size_term = ops::scale(ops::sum(s), cfg.lambda_size);
    auto entropy = ops::scale(
        ops::sum(ops::add(ops::mul(s, ops::log(s)),
                          ops::mul(s_neg, ops::log(s_neg)))),
        -cfg.lambda_entropy);

    auto loss = ops::add(ops::add(ce, size_term), entropy);
    const double value = loss->item();
    if (!std::isfinite(value)) {
      throw std::domain_error("gnn_explain: loss diverged at step " +
                              std::to_string(step));
    }
    logits_m->zero_grad();
    loss->backward();
    optimizer.step();
  }

  mask.values.resize(E);
  for (std::size_t e = 0; e < E; ++e) {
    const double m = logits_m->data()[e];
    mask.values[e] = m >= 0.0 ? 1.0 / (1.0 + std::exp(-m))
                              : std::exp(m) / (1.0 + std::exp(m));
  }
  return mask;
}

EdgeMask gnn_explain(Model& model, const ConnectomeGraph& g,
                     const ExplainConfig& cfg, SeededRng& rng) {
  std::vector<Model*> models{&model};
  return gnn_explain(models, g, cfg, rng);
}

EdgeMask gnn_explain(EnsembleModel& ensemble, const ConnectomeGraph& g,
                     const ExplainConfig& cfg, SeededRng& rng) {
  std::vector<Model*> models;
  for (auto& m : ensemble.members) models.push_back(&m);
  return gnn_explain(models, g, cfg, rng);
}

FidelityResult mask_fidelity(const Predictor& predict,
                             const ConnectomeGraph& g, const EdgeMask& mask,
                             std::size_t k) {
  if (k > mask.values.size()) {
    throw std::invalid_argument("mask_fidelity: k exceeds edge count");
  }
  const auto full = predict(g);
  const int target = full[1] > full[0] ? 1 : 0;
  const auto top = mask.top_indices(k);
  std::vector<bool> in_top(mask.values.size(), false);
  for (std::size_t e : top) in_top[e] = true;

  ConnectomeGraph keep = g;
  keep.edges.clear();
  ConnectomeGraph remove = g;
  remove.edges.clear();
  for (std::size_t e = 0; e < mask.edges.size(); ++e) {
    if (in_top[e]) {
      keep.edges.push_back(mask.edges[e]);
    } else {
      remove.edges.push_back(mask.edges[e]);
    }
  }

  FidelityResult r;
  r.keep_delta = predict(keep)[target] - full[target];
  r.remove_delta = predict(remove)[target] - full[target];
  return r;
}

void write_saliency_json(const SaliencyReport& report,
                         const std::vector<std::string>& roi_labels,
                         const std::string& path) {
  json j;
  json rows = json::array();
  for (std::size_t rank = 0; rank < report.ranking.size(); ++rank) {
    const std::size_t roi = report.ranking[rank];
    json row;
    row["roi_index"] = roi;
    if (roi < roi_labels.size() && !roi_labels[roi].empty()) {
      row["roi_label"] = roi_labels[roi];
    }
    row["percentage"] = report.percentages[roi];
    rows.push_back(std::move(row));
  }
  j["regions"] = std::move(rows);
  if (!report.warnings.empty()) j["warnings"] = report.warnings;
  write_file_atomic(path, j.dump(2) + "\n");
}

void write_saliency_csv(const SaliencyReport& report,
                        const std::vector<std::string>& roi_labels,
                        const std::string& path) {
  std::string body = "rank,roi_index,roi_label,percentage\n";
  char buf[64];
  for (std::size_t rank = 0; rank < report.ranking.size(); ++rank) {
    const std::size_t roi = report.ranking[rank];
    const std::string label =
        roi < roi_labels.size() ? roi_labels[roi] : "";
    std::snprintf(buf, sizeof(buf), "%.17g", report.percentages[roi]);
    body += std::to_string(rank + 1) + "," + std::to_string(roi) + "," +
            label + "," + buf + "\n";
  }
  write_file_atomic(path, body);
}

void write_edge_mask_csv(const EdgeMask& mask, const std::string& path) {
  std::string body = "i,j,mask_value\n";
  char buf[64];
  for (std::size_t e : mask.top_indices(mask.values.size())) {
    std::snprintf(buf, sizeof(buf), "%.17g", mask.values[e]);
    body += std::to_string(mask.edges[e].i) + "," +
            std::to_string(mask.edges[e].j) + "," + buf + "\n";
  }
  write_file_atomic(path, body);
}

}  // namespace connectome

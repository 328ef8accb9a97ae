#include "connectome/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <thread>

#include <json.hpp>

#include "connectome/adam.hpp"
#include "connectome/util.hpp"

namespace connectome {

namespace ops = connectome::ops;

void TrainConfig::validate() const {
  if (epochs < 1) {
    throw std::invalid_argument("train config: epochs must be >= 1");
  }
  if (batch_size < 1) {
    throw std::invalid_argument("train config: batch_size must be >= 1");
  }
  if (lr < 0.0) {
    throw std::invalid_argument("train config: lr must be >= 0");
  }
  if (!(density > 0.0) || density > 1.0) {
    throw std::invalid_argument("train config: density must be in (0, 1]");
  }
  if (sigma < 0.0) {
    throw std::invalid_argument("train config: sigma must be >= 0");
  }
}

namespace {

int require_label(const ConnectomeGraph& g) {
  if (!g.label.has_value()) {
    throw std::invalid_argument("graph for subject '" + g.subject_id +
                                "' has no label");
  }
  return *g.label;
}

double val_accuracy(Model& model, const std::vector<ConnectomeGraph>& graphs) {
  if (graphs.empty()) return 0.0;
  std::size_t correct = 0;
  for (const auto& g : graphs) {
    const auto p = model.predict_proba(g);
    const int pred = p[1] > p[0] ? 1 : 0;
    if (pred == require_label(g)) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(graphs.size());
}

}  // namespace

TrainResult train(Model& model, const std::vector<ConnectomeGraph>& train_graphs,
                  const std::vector<ConnectomeGraph>& val_graphs,
                  const TrainConfig& cfg, SeededRng& rng) {
  cfg.validate();
  if (train_graphs.empty()) {
    throw std::invalid_argument("train: empty training set");
  }
  for (const auto& g : train_graphs) require_label(g);
  for (const auto& g : val_graphs) require_label(g);

  auto params = model.parameters();
  AdamConfig adam_cfg;
  adam_cfg.lr = cfg.lr;
  Adam optimizer(params, adam_cfg);

  auto stream = rng.child("train");

  TrainResult result{model.clone(), {}, {}};
  result.meta.seed = rng.seed();
  double best_val = -1.0;

  std::vector<std::size_t> order(train_graphs.size());
  std::iota(order.begin(), order.end(), 0);

  const TensorPtr onehot[2] = {make_tensor(1, 2, {1.0, 0.0}),
                               make_tensor(1, 2, {0.0, 1.0})};

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    // Fisher-Yates from the job stream.
    for (std::size_t i = order.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(stream.below(i));
      std::swap(order[i - 1], order[j]);
    }

    double epoch_loss = 0.0;
    std::size_t train_correct = 0;
    for (std::size_t start = 0; start < order.size();
         start += cfg.batch_size) {
      const std::size_t stop =
          std::min(order.size(), start + cfg.batch_size);
      TensorPtr batch_loss;
      for (std::size_t k = start; k < stop; ++k) {
        const auto& g = train_graphs[order[k]];
        ForwardOptions opts;
        opts.training = true;
        opts.rng = &stream;
        auto logits = model.forward(g, opts);
        const int label = require_label(g);
        const int pred = logits->data()[1] > logits->data()[0] ? 1 : 0;
        if (pred == label) ++train_correct;
        auto nll =
            ops::scale(ops::sum(ops::mul(ops::log_softmax_rows(logits),
                                         onehot[label])),
                       -1.0);
        batch_loss = batch_loss ? ops::add(batch_loss, nll) : nll;
      }
      batch_loss =
          ops::scale(batch_loss, 1.0 / static_cast<double>(stop - start));
      const double loss_value = batch_loss->item();
      if (!std::isfinite(loss_value)) {
        throw std::domain_error(
            "train: loss diverged (non-finite) at epoch " +
            std::to_string(epoch));
      }
      epoch_loss += loss_value * static_cast<double>(stop - start);
      for (auto& p : params) p->zero_grad();
      batch_loss->backward();
      optimizer.step();
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = epoch_loss / static_cast<double>(order.size());
    stats.train_acc = static_cast<double>(train_correct) /
                      static_cast<double>(order.size());
    stats.val_acc = val_accuracy(model, val_graphs);
    result.history.push_back(stats);

    if (stats.val_acc > best_val) {
      best_val = stats.val_acc;
      result.best_model = model.clone();
      result.meta.best_epoch = epoch;
      result.meta.best_val_accuracy = stats.val_acc;
    }
    result.meta.final_train_loss = stats.train_loss;
  }
  result.meta.epochs = cfg.epochs;
  return result;
}

double auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size() || scores.empty()) {
    throw std::invalid_argument("auc: scores and labels must align");
  }
  std::size_t n_pos = 0;
  for (int l : labels) {
    if (l != 0 && l != 1) {
      throw std::invalid_argument("auc: labels must be 0 or 1");
    }
    n_pos += static_cast<std::size_t>(l);
  }
  const std::size_t n_neg = labels.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) {
    throw std::invalid_argument("auc: need both classes present");
  }

  // Midrank formulation of the Mann-Whitney statistic; exact halves keep it
  // bit-equal to the pairwise count with ties at 1/2.
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] < scores[b];
  });
  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) ++j;
    const double midrank =
        (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t k = i; k < j; ++k) {
      if (labels[idx[k]] == 1) rank_sum_pos += midrank;
    }
    i = j;
  }
  const double np = static_cast<double>(n_pos);
  const double nn = static_cast<double>(n_neg);
  return (rank_sum_pos - np * (np + 1.0) / 2.0) / (np * nn);
}

MetricsReport evaluate(const Predictor& predict,
                       const std::vector<ConnectomeGraph>& graphs) {
  if (graphs.empty()) {
    throw std::invalid_argument("evaluate: no graphs");
  }
  MetricsReport r;
  std::vector<double> scores;
  std::vector<int> labels;
  for (const auto& g : graphs) {
    if (g.augmented) {
      throw std::invalid_argument(
          "evaluate: refusing augmented graph for subject '" + g.subject_id +
          "'; augmented copies belong to training pools only");
    }
    const int label = require_label(g);
    const auto p = predict(g);
    const int pred = p[1] > p[0] ? 1 : 0;
    scores.push_back(p[1]);
    labels.push_back(label);
    if (label == 1 && pred == 1) r.tp++;
    if (label == 1 && pred == 0) r.fn++;
    if (label == 0 && pred == 1) r.fp++;
    if (label == 0 && pred == 0) r.tn++;
  }
  r.n = graphs.size();
  r.accuracy = static_cast<double>(r.tp + r.tn) / static_cast<double>(r.n);
  r.precision = (r.tp + r.fp) == 0
                    ? 0.0
                    : static_cast<double>(r.tp) /
                          static_cast<double>(r.tp + r.fp);
  r.recall = (r.tp + r.fn) == 0
                 ? 0.0
                 : static_cast<double>(r.tp) /
                       static_cast<double>(r.tp + r.fn);
  r.auc = auc(scores, labels);
  return r;
}

MetricsReport evaluate(Model& model, const std::vector<ConnectomeGraph>& graphs) {
  return evaluate(
      [&model](const ConnectomeGraph& g) { return model.predict_proba(g); },
      graphs);
}

std::string MetricsReport::to_json() const {
  nlohmann::json j;
  j["accuracy"] = accuracy;
  j["precision"] = precision;
  j["recall"] = recall;
  j["auc"] = auc;
  j["confusion"] = {{"tn", tn}, {"fp", fp}, {"fn", fn}, {"tp", tp}};
  j["n"] = n;
  return j.dump(2) + "\n";
}

std::array<double, 2> soft_vote(
    const std::vector<std::array<double, 2>>& member_probs) {
  if (member_probs.empty()) {
    throw std::invalid_argument("soft_vote: no members");
  }
  double p0 = 0.0, p1 = 0.0;
  for (const auto& p : member_probs) {
    p0 += p[0];
    p1 += p[1];
  }
  const double inv = 1.0 / static_cast<double>(member_probs.size());
  return {p0 * inv, p1 * inv};
}

std::array<double, 2> EnsembleModel::predict_proba(const ConnectomeGraph& g) {
  if (members.empty()) {
    throw std::invalid_argument("ensemble: no members");
  }
  std::vector<std::array<double, 2>> probs;
  probs.reserve(members.size());
  for (auto& m : members) probs.push_back(m.predict_proba(g));
  return soft_vote(probs);
}

Predictor EnsembleModel::predictor() {
  return [this](const ConnectomeGraph& g) { return predict_proba(g); };
}

EnsembleTrainResult train_ensemble(const ModelConfig& model_cfg,
                                   const std::vector<ConnectomeGraph>& train_graphs,
                                   const std::vector<ConnectomeGraph>& val_graphs,
                                   const TrainConfig& cfg, std::size_t members,
                                   std::uint64_t base_seed, std::size_t jobs) {
  if (members < 1) {
    throw std::invalid_argument("train_ensemble: members must be >= 1");
  }
  jobs = std::max<std::size_t>(1, std::min(jobs, members));

  EnsembleTrainResult result;
  result.ensemble.members.resize(members, Model{});
  result.metas.resize(members);
  result.histories.resize(members);

  SeededRng base(base_seed);
  std::vector<std::exception_ptr> errors(members);

  auto run_member = [&](std::size_t i) {
    try {
      auto member_rng = base.child("member", i);
      ModelConfig mc = model_cfg;
      mc.seed = member_rng.seed();
      Model model = Model::build(mc, member_rng);
      auto r = train(model, train_graphs, val_graphs, cfg, member_rng);
      result.ensemble.members[i] = std::move(r.best_model);
      result.metas[i] = r.meta;
      result.histories[i] = std::move(r.history);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };

  if (jobs == 1) {
    for (std::size_t i = 0; i < members; ++i) run_member(i);
  } else {
    std::size_t next = 0;
    while (next < members) {
      const std::size_t batch = std::min(jobs, members - next);
      std::vector<std::thread> pool;
      for (std::size_t t = 0; t < batch; ++t) {
        pool.emplace_back(run_member, next + t);
      }
      for (auto& t : pool) t.join();
      next += batch;
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return result;
}

void write_history_csv(const std::vector<EpochStats>& history,
                       const std::string& path) {
  std::string body = "epoch,train_loss,train_acc,val_acc\n";
  char buf[128];
  for (const auto& h : history) {
    std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,%.17g\n", h.epoch,
                  h.train_loss, h.train_acc, h.val_acc);
    body += buf;
  }
  write_file_atomic(path, body);
}

}  // namespace connectome

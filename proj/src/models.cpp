#include "connectome/models.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

#include "connectome/util.hpp"

namespace connectome {

using nlohmann::json;
namespace ops = connectome::ops;

const char* architecture_name(Architecture a) {
  switch (a) {
    case Architecture::kGcnBaseline: return "gcn-baseline";
    case Architecture::kGcnOptimised: return "gcn-optimised";
    case Architecture::kGat: return "gat";
  }
  return "?";
}

Architecture architecture_from_name(const std::string& name) {
  if (name == "gcn-baseline") return Architecture::kGcnBaseline;
  if (name == "gcn-optimised") return Architecture::kGcnOptimised;
  if (name == "gat") return Architecture::kGat;
  throw std::invalid_argument("unknown architecture: " + name +
                              " (expected gcn-baseline, gcn-optimised or gat)");
}

ModelConfig ModelConfig::preset(Architecture arch, std::size_t input_dim,
                                std::uint64_t seed) {
  ModelConfig cfg;
  cfg.architecture = arch;
  cfg.input_dim = input_dim;
  cfg.seed = seed;
  switch (arch) {
    case Architecture::kGcnBaseline:
      cfg.hidden_dims = {64, 32};
      cfg.dropout = 0.3;
      cfg.dropedge = 0.0;
      cfg.batchnorm = false;
      break;
    case Architecture::kGcnOptimised:
      cfg.hidden_dims = {64, 64, 64};
      cfg.dropout = 0.0;
      cfg.dropedge = 0.0;
      cfg.batchnorm = true;
      break;
    case Architecture::kGat:
      cfg.hidden_dims = {64, 64};
      cfg.heads = 2;
      cfg.dropout = 0.5;
      cfg.dropedge = 0.2;
      cfg.batchnorm = false;
      break;
  }
  return cfg;
}

void ModelConfig::validate() const {
  if (input_dim == 0) {
    throw std::invalid_argument("model config: input_dim must be positive");
  }
  if (hidden_dims.empty()) {
    throw std::invalid_argument("model config: hidden_dims must be non-empty");
  }
  for (std::size_t d : hidden_dims) {
    if (d == 0) {
      throw std::invalid_argument("model config: hidden dims must be positive");
    }
  }
  if (dropout < 0.0 || dropout >= 1.0) {
    throw std::invalid_argument("model config: dropout must be in [0, 1)");
  }
  if (dropedge < 0.0 || dropedge >= 1.0) {
    throw std::invalid_argument("model config: dropedge must be in [0, 1)");
  }
  if (architecture == Architecture::kGat) {
    if (heads == 0) {
      throw std::invalid_argument("model config: heads must be >= 1");
    }
    for (std::size_t d : hidden_dims) {
      if (d % heads != 0) {
        throw std::invalid_argument(
            "model config: GAT hidden dims must be divisible by heads");
      }
    }
  }
}

namespace {

TensorPtr glorot(std::size_t rows, std::size_t cols, std::size_t fan_in,
                 std::size_t fan_out, SeededRng& rng) {
  const double limit =
      std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  auto t = make_tensor(rows, cols, true);
  for (double& v : t->data()) v = rng.uniform(-limit, limit);
  return t;
}

TensorPtr zeros(std::size_t rows, std::size_t cols) {
  return make_tensor(rows, cols, true);
}

// Dense symmetric-normalized propagation matrix over binary A + I.
TensorPtr normalized_adjacency(const std::vector<Edge>& edges, std::size_t n) {
  std::vector<double> a(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) a[i * n + i] = 1.0;
  for (const auto& e : edges) {
    a[e.i * n + e.j] = 1.0;
    a[e.j * n + e.i] = 1.0;
  }
  std::vector<double> dinv(n);
  for (std::size_t i = 0; i < n; ++i) {
    double deg = 0.0;
    for (std::size_t j = 0; j < n; ++j) deg += a[i * n + j];
    dinv[i] = 1.0 / std::sqrt(deg);
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      a[i * n + j] *= dinv[i] * dinv[j];
    }
  }
  return make_tensor(n, n, std::move(a));
}

std::vector<std::uint8_t> neighbor_mask(const std::vector<Edge>& edges,
                                        std::size_t n) {
  std::vector<std::uint8_t> m(n * n, 0);
  for (std::size_t i = 0; i < n; ++i) m[i * n + i] = 1;
  for (const auto& e : edges) {
    m[e.i * n + e.j] = 1;
    m[e.j * n + e.i] = 1;
  }
  return m;
}

std::vector<std::pair<std::size_t, std::size_t>> edge_pairs(
    const std::vector<Edge>& edges) {
  std::vector<std::pair<std::size_t, std::size_t>> p;
  p.reserve(edges.size());
  for (const auto& e : edges) p.emplace_back(e.i, e.j);
  return p;
}

TensorPtr features_tensor(const ConnectomeGraph& g) {
  return make_tensor(g.node_count, g.node_count, g.node_features);
}

TensorPtr gcn_propagate(const GcnLayer& layer, const std::vector<Edge>& edges,
                        std::size_t n, const TensorPtr& H,
                        const TensorPtr& mask_logits) {
  if (H->rows() != n) {
    throw std::invalid_argument("gcn_forward: feature rows " +
                                H->shape_str() + " do not match node count " +
                                std::to_string(n));
  }
  TensorPtr S = normalized_adjacency(edges, n);
  if (mask_logits) {
    auto scaled = ops::edge_scatter(ops::sigmoid(mask_logits),
                                    edge_pairs(edges), n, 1.0, 1.0);
    S = ops::mul(S, scaled);
  }
  return ops::add(ops::matmul(ops::matmul(S, H), layer.weight), layer.bias);
}

TensorPtr gat_propagate(const GatLayer& layer, const std::vector<Edge>& edges,
                        std::size_t n, const TensorPtr& H,
                        const TensorPtr& mask_logits) {
  if (H->rows() != n) {
    throw std::invalid_argument("gat_forward: feature rows " +
                                H->shape_str() + " do not match node count " +
                                std::to_string(n));
  }
  const auto mask = neighbor_mask(edges, n);
  const std::size_t d = layer.head_dim;
  std::vector<std::size_t> src_idx(d), dst_idx(d);
  std::iota(src_idx.begin(), src_idx.end(), 0);
  std::iota(dst_idx.begin(), dst_idx.end(), d);

  TensorPtr ones_row = make_tensor(1, n, std::vector<double>(n, 1.0));
  TensorPtr ones_col = make_tensor(n, 1, std::vector<double>(n, 1.0));
  TensorPtr mask_add;
  if (mask_logits) {
    mask_add = ops::edge_scatter(ops::log(ops::sigmoid(mask_logits)),
                                 edge_pairs(edges), n, 0.0, 0.0);
  }

  std::vector<TensorPtr> per_head;
  for (std::size_t h = 0; h < layer.weights.size(); ++h) {
    auto hw = ops::matmul(H, layer.weights[h]);  // n x d
    auto a_src = ops::gather_rows(layer.attn[h], src_idx);
    auto a_dst = ops::gather_rows(layer.attn[h], dst_idx);
    auto src = ops::matmul(hw, a_src);  // n x 1
    auto dst = ops::matmul(hw, a_dst);  // n x 1
    // e_ij = LeakyReLU(src_i + dst_j), dense, masked to the neighborhood.
    auto scores = ops::add(ops::matmul(src, ones_row),
                           ops::matmul(ones_col, ops::transpose(dst)));
    scores = ops::leaky_relu(scores, layer.negative_slope);
    if (mask_add) scores = ops::add(scores, mask_add);
    auto alpha = ops::masked_softmax_rows(scores, mask);
    per_head.push_back(ops::matmul(alpha, hw));
  }

  if (layer.concat) {
    TensorPtr out = per_head[0];
    for (std::size_t h = 1; h < per_head.size(); ++h) {
      out = ops::concat_cols(out, per_head[h]);
    }
    return out;
  }
  TensorPtr out = per_head[0];
  for (std::size_t h = 1; h < per_head.size(); ++h) {
    out = ops::add(out, per_head[h]);
  }
  return ops::scale(out, 1.0 / static_cast<double>(per_head.size()));
}

TensorPtr apply_dropout(const TensorPtr& x, double rate, SeededRng& rng) {
  const double keep = 1.0 - rate;
  std::vector<double> m(x->size());
  for (double& v : m) v = rng.uniform() < rate ? 0.0 : 1.0 / keep;
  return ops::mul(x, make_tensor(x->rows(), x->cols(), std::move(m)));
}

}  // namespace

std::vector<Edge> dropedge(const std::vector<Edge>& edges, double rate,
                           SeededRng& rng) {
  if (rate < 0.0 || rate >= 1.0) {
    throw std::invalid_argument("dropedge: rate must be in [0, 1)");
  }
  if (rate == 0.0) return edges;
  std::vector<Edge> kept;
  kept.reserve(edges.size());
  for (const auto& e : edges) {
    if (rng.uniform() >= rate) kept.push_back(e);
  }
  return kept;
}

TensorPtr gcn_forward(const GcnLayer& layer, const ConnectomeGraph& g,
                      const TensorPtr& H) {
  return gcn_propagate(layer, g.edges, g.node_count, H, nullptr);
}

TensorPtr gat_forward(const GatLayer& layer, const ConnectomeGraph& g,
                      const TensorPtr& H) {
  return gat_propagate(layer, g.edges, g.node_count, H, nullptr);
}

TensorPtr global_mean_pool(const TensorPtr& H) {
  if (H->rows() < 1) {
    throw std::invalid_argument("global_mean_pool: empty graph");
  }
  return ops::mean_rows(H);
}

Model Model::build(const ModelConfig& cfg, SeededRng& rng) {
  cfg.validate();
  Model m;
  m.cfg_ = cfg;
  auto stream = rng.child("init");

  switch (cfg.architecture) {
    case Architecture::kGcnBaseline:
    case Architecture::kGcnOptimised: {
      std::size_t in = cfg.input_dim;
      for (std::size_t d : cfg.hidden_dims) {
        GcnLayer layer;
        layer.weight = glorot(in, d, in, d, stream);
        layer.bias = zeros(1, d);
        m.gcn_layers.push_back(std::move(layer));
        if (cfg.batchnorm) {
          BatchNormLayer bn;
          bn.gamma = make_tensor(1, d, std::vector<double>(d, 1.0), true);
          bn.beta = zeros(1, d);
          bn.running_mean.assign(d, 0.0);
          bn.running_var.assign(d, 1.0);
          m.bn_layers.push_back(std::move(bn));
        }
        in = d;
      }
      m.head.weight = glorot(in, 2, in, 2, stream);
      m.head.bias = zeros(1, 2);
      break;
    }
    case Architecture::kGat: {
      std::size_t in = cfg.input_dim;
      for (std::size_t li = 0; li < cfg.hidden_dims.size(); ++li) {
        const bool last = li + 1 == cfg.hidden_dims.size();
        GatLayer layer;
        // Hidden widths are post-merge: concat divides by heads, average
        // keeps the full width per head.
        layer.concat = !last;
        layer.head_dim = layer.concat ? cfg.hidden_dims[li] / cfg.heads
                                      : cfg.hidden_dims[li];
        for (std::size_t h = 0; h < cfg.heads; ++h) {
          layer.weights.push_back(
              glorot(in, layer.head_dim, in, layer.head_dim, stream));
          layer.attn.push_back(
              glorot(2 * layer.head_dim, 1, 2 * layer.head_dim, 1, stream));
        }
        m.gat_layers.push_back(std::move(layer));
        in = cfg.hidden_dims[li];
      }
      m.head.weight = glorot(in, 2, in, 2, stream);
      m.head.bias = zeros(1, 2);
      break;
    }
  }
  return m;
}

TensorPtr Model::forward(const ConnectomeGraph& g, const ForwardOptions& opts) {
  if (g.node_count == 0) {
    throw std::invalid_argument("forward: empty graph");
  }
  const std::size_t feat_dim = g.node_features.size() / g.node_count;
  if (feat_dim != cfg_.input_dim) {
    throw std::invalid_argument(
        "forward: graph feature dim " + std::to_string(feat_dim) +
        " does not match model input dim " + std::to_string(cfg_.input_dim));
  }
  if (opts.training && opts.rng == nullptr) {
    throw std::invalid_argument("forward: training mode requires an rng");
  }

  std::vector<Edge> edges = g.edges;
  if (opts.training && cfg_.dropedge > 0.0) {
    edges = dropedge(edges, cfg_.dropedge, *opts.rng);
  }

  TensorPtr H = opts.features_override ? opts.features_override
                                       : features_tensor(g);
  if (opts.features_override &&
      (H->rows() != g.node_count || H->cols() != cfg_.input_dim)) {
    throw std::invalid_argument("forward: features_override shape mismatch");
  }

  switch (cfg_.architecture) {
    case Architecture::kGcnBaseline: {
      H = gcn_propagate(gcn_layers[0], edges, g.node_count, H,
                        opts.edge_mask_logits);
      H = ops::relu(H);
      if (opts.training && cfg_.dropout > 0.0) {
        H = apply_dropout(H, cfg_.dropout, *opts.rng);
      }
      H = gcn_propagate(gcn_layers[1], edges, g.node_count, H,
                        opts.edge_mask_logits);
      H = ops::relu(H);
      break;
    }
    case Architecture::kGcnOptimised: {
      for (std::size_t li = 0; li < gcn_layers.size(); ++li) {
        H = gcn_propagate(gcn_layers[li], edges, g.node_count, H,
                          opts.edge_mask_logits);
        auto& bn = bn_layers[li];
        H = ops::batchnorm(H, bn.gamma, bn.beta, bn.running_mean,
                           bn.running_var, opts.training);
        H = ops::relu(H);
      }
      break;
    }
    case Architecture::kGat: {
      for (std::size_t li = 0; li < gat_layers.size(); ++li) {
        H = gat_propagate(gat_layers[li], edges, g.node_count, H,
                          opts.edge_mask_logits);
        H = ops::elu(H);
        if (opts.training && cfg_.dropout > 0.0 &&
            li + 1 < gat_layers.size()) {
          H = apply_dropout(H, cfg_.dropout, *opts.rng);
        }
      }
      break;
    }
  }

  auto pooled = global_mean_pool(H);
  return ops::add(ops::matmul(pooled, head.weight), head.bias);
}

std::array<double, 2> Model::predict_proba(const ConnectomeGraph& g) {
  auto logits = forward(g, ForwardOptions{});
  auto probs = ops::softmax_rows(logits);
  return {probs->data()[0], probs->data()[1]};
}

std::vector<TensorPtr> Model::parameters() const {
  std::vector<TensorPtr> out;
  for (const auto& [name, t] : named_parameters()) out.push_back(t);
  return out;
}

std::vector<std::pair<std::string, TensorPtr>> Model::named_parameters() const {
  std::vector<std::pair<std::string, TensorPtr>> out;
  for (std::size_t i = 0; i < gcn_layers.size(); ++i) {
    out.emplace_back("gcn" + std::to_string(i + 1) + ".weight",
                     gcn_layers[i].weight);
    out.emplace_back("gcn" + std::to_string(i + 1) + ".bias",
                     gcn_layers[i].bias);
    if (cfg_.batchnorm && i < bn_layers.size()) {
      out.emplace_back("bn" + std::to_string(i + 1) + ".gamma",
                       bn_layers[i].gamma);
      out.emplace_back("bn" + std::to_string(i + 1) + ".beta",
                       bn_layers[i].beta);
    }
  }
  for (std::size_t i = 0; i < gat_layers.size(); ++i) {
    for (std::size_t h = 0; h < gat_layers[i].weights.size(); ++h) {
      const std::string prefix =
          "gat" + std::to_string(i + 1) + ".head" + std::to_string(h);
      out.emplace_back(prefix + ".weight", gat_layers[i].weights[h]);
      out.emplace_back(prefix + ".attn", gat_layers[i].attn[h]);
    }
  }
  out.emplace_back("head.weight", head.weight);
  out.emplace_back("head.bias", head.bias);
  return out;
}

Model Model::clone() const {
  Model m;
  m.cfg_ = cfg_;
  auto copy_tensor = [](const TensorPtr& t) {
    return make_tensor(t->rows(), t->cols(), t->data(), t->requires_grad());
  };
  for (const auto& l : gcn_layers) {
    m.gcn_layers.push_back({copy_tensor(l.weight), copy_tensor(l.bias)});
  }
  for (const auto& l : gat_layers) {
    GatLayer c;
    c.head_dim = l.head_dim;
    c.concat = l.concat;
    c.negative_slope = l.negative_slope;
    for (const auto& w : l.weights) c.weights.push_back(copy_tensor(w));
    for (const auto& a : l.attn) c.attn.push_back(copy_tensor(a));
    m.gat_layers.push_back(std::move(c));
  }
  for (const auto& l : bn_layers) {
    BatchNormLayer c;
    c.gamma = copy_tensor(l.gamma);
    c.beta = copy_tensor(l.beta);
    c.running_mean = l.running_mean;
    c.running_var = l.running_var;
    m.bn_layers.push_back(std::move(c));
  }
  m.head.weight = copy_tensor(head.weight);
  m.head.bias = copy_tensor(head.bias);
  return m;
}

namespace {

json config_to_json(const ModelConfig& cfg) {
  json j;
  j["architecture"] = architecture_name(cfg.architecture);
  j["input_dim"] = cfg.input_dim;
  j["hidden_dims"] = cfg.hidden_dims;
  j["heads"] = cfg.heads;
  j["dropout"] = cfg.dropout;
  j["dropedge"] = cfg.dropedge;
  j["batchnorm"] = cfg.batchnorm;
  j["seed"] = cfg.seed;
  return j;
}

ModelConfig config_from_json(const json& j) {
  ModelConfig cfg;
  cfg.architecture = architecture_from_name(j.at("architecture").get<std::string>());
  cfg.input_dim = j.at("input_dim").get<std::size_t>();
  cfg.hidden_dims = j.at("hidden_dims").get<std::vector<std::size_t>>();
  cfg.heads = j.at("heads").get<std::size_t>();
  cfg.dropout = j.at("dropout").get<double>();
  cfg.dropedge = j.at("dropedge").get<double>();
  cfg.batchnorm = j.at("batchnorm").get<bool>();
  cfg.seed = j.at("seed").get<std::uint64_t>();
  return cfg;
}

void append_le_doubles(std::string& out, const std::vector<double>& values) {
  static_assert(sizeof(double) == 8);
  const auto* bytes = reinterpret_cast<const char*>(values.data());
  out.append(bytes, values.size() * 8);
}

}  // namespace

void save_checkpoint(const Model& model, const TrainMeta& meta,
                     const std::string& path) {
  json header;
  header["format"] = "connectome-checkpoint";
  header["version"] = 1;
  header["config"] = config_to_json(model.config());
  header["meta"] = {{"epochs", meta.epochs},
                    {"best_epoch", meta.best_epoch},
                    {"final_train_loss", meta.final_train_loss},
                    {"best_val_accuracy", meta.best_val_accuracy},
                    {"seed", meta.seed}};

  // Parameters first, then batchnorm buffers, offsets in payload bytes.
  std::string payload;
  json table = json::array();
  auto add_entry = [&](const std::string& name, std::size_t rows,
                       std::size_t cols, const std::vector<double>& values) {
    table.push_back({{"name", name},
                     {"rows", rows},
                     {"cols", cols},
                     {"offset", payload.size()}});
    append_le_doubles(payload, values);
  };
  for (const auto& [name, t] : model.named_parameters()) {
    add_entry(name, t->rows(), t->cols(), t->data());
  }
  for (std::size_t i = 0; i < model.bn_layers.size(); ++i) {
    const auto& bn = model.bn_layers[i];
    add_entry("bn" + std::to_string(i + 1) + ".running_mean", 1,
              bn.running_mean.size(), bn.running_mean);
    add_entry("bn" + std::to_string(i + 1) + ".running_var", 1,
              bn.running_var.size(), bn.running_var);
  }
  header["tensors"] = table;

  const std::string head_str = header.dump();
  std::string file;
  std::uint64_t len = head_str.size();
  char lenbuf[8];
  std::memcpy(lenbuf, &len, 8);
  file.append(lenbuf, 8);
  file += head_str;
  file += payload;
  write_file_atomic(path, file);
}

Model load_checkpoint(const std::string& path, TrainMeta* meta) {
  const std::string file = read_file(path);
  if (file.size() < 8) {
    throw std::runtime_error(path + ": truncated checkpoint");
  }
  std::uint64_t len = 0;
  std::memcpy(&len, file.data(), 8);
  if (file.size() < 8 + len) {
    throw std::runtime_error(path + ": truncated checkpoint header");
  }
  json header;
  try {
    header = json::parse(file.substr(8, len));
  } catch (const json::exception& e) {
    throw std::runtime_error(path + ": bad checkpoint header: " + e.what());
  }
  if (header.value("format", "") != "connectome-checkpoint") {
    throw std::runtime_error(path + ": not a connectome checkpoint");
  }
  const ModelConfig cfg = config_from_json(header.at("config"));
  if (meta != nullptr) {
    const auto& m = header.at("meta");
    meta->epochs = m.at("epochs").get<std::size_t>();
    meta->best_epoch = m.at("best_epoch").get<std::size_t>();
    meta->final_train_loss = m.at("final_train_loss").get<double>();
    meta->best_val_accuracy = m.at("best_val_accuracy").get<double>();
    meta->seed = m.at("seed").get<std::uint64_t>();
  }

  SeededRng scratch(cfg.seed);
  Model model = Model::build(cfg, scratch);

  const char* payload = file.data() + 8 + len;
  const std::size_t payload_size = file.size() - 8 - len;
  auto read_into = [&](const json& entry, std::vector<double>& dst,
                       std::size_t rows, std::size_t cols) {
    const auto offset = entry.at("offset").get<std::size_t>();
    const auto r = entry.at("rows").get<std::size_t>();
    const auto c = entry.at("cols").get<std::size_t>();
    if (r != rows || c != cols) {
      throw std::runtime_error(path + ": tensor '" +
                               entry.at("name").get<std::string>() +
                               "' has unexpected shape");
    }
    if (offset + rows * cols * 8 > payload_size) {
      throw std::runtime_error(path + ": tensor data out of bounds");
    }
    dst.resize(rows * cols);
    std::memcpy(dst.data(), payload + offset, rows * cols * 8);
  };

  std::map<std::string, json> by_name;
  for (const auto& entry : header.at("tensors")) {
    by_name[entry.at("name").get<std::string>()] = entry;
  }
  auto lookup = [&](const std::string& name) -> const json& {
    auto it = by_name.find(name);
    if (it == by_name.end()) {
      throw std::runtime_error(path + ": checkpoint missing tensor '" + name +
                               "'");
    }
    return it->second;
  };

  for (auto& [name, t] : model.named_parameters()) {
    read_into(lookup(name), t->data(), t->rows(), t->cols());
  }
  for (std::size_t i = 0; i < model.bn_layers.size(); ++i) {
    auto& bn = model.bn_layers[i];
    const std::string base = "bn" + std::to_string(i + 1);
    read_into(lookup(base + ".running_mean"), bn.running_mean, 1,
              bn.running_mean.size());
    read_into(lookup(base + ".running_var"), bn.running_var, 1,
              bn.running_var.size());
  }
  return model;
}

}  // namespace connectome

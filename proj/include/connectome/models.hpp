#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "connectome/graph.hpp"
#include "connectome/rng.hpp"
#include "connectome/tensor.hpp"

namespace connectome {

enum class Architecture { kGcnBaseline, kGcnOptimised, kGat };

const char* architecture_name(Architecture a);
Architecture architecture_from_name(const std::string& name);

struct ModelConfig {
  Architecture architecture = Architecture::kGat;
  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden_dims;  // post-merge widths for GAT
  std::size_t heads = 2;                 // GAT only
  double dropout = 0.0;
  double dropedge = 0.0;
  bool batchnorm = false;
  std::uint64_t seed = 0;

  // The three named configurations: per-architecture widths, dropout,
  // normalization and DropEdge defaults.
  static ModelConfig preset(Architecture arch, std::size_t input_dim,
                            std::uint64_t seed);
  void validate() const;
};

struct GcnLayer {
  TensorPtr weight;  // in x out
  TensorPtr bias;    // 1 x out
};

struct GatLayer {
  // Per head: weight (in x head_dim) and attention vector (2*head_dim x 1,
  // source half on top of destination half).
  std::vector<TensorPtr> weights;
  std::vector<TensorPtr> attn;
  std::size_t head_dim = 0;
  bool concat = true;  // false: average heads
  double negative_slope = 0.2;
};

struct BatchNormLayer {
  TensorPtr gamma;  // 1 x dim
  TensorPtr beta;   // 1 x dim
  std::vector<double> running_mean;
  std::vector<double> running_var;
};

struct LinearLayer {
  TensorPtr weight;  // in x out
  TensorPtr bias;    // 1 x out
};

// Options threaded through a forward pass. Training mode consumes the rng
// for dropout masks and DropEdge; eval mode touches no randomness. The
// explainer passes raw per-edge mask logits m (E x 1, one per graph edge):
// GCN propagation entries are scaled by sigmoid(m) and GAT pre-softmax
// attention scores receive log(sigmoid(m)) additively. Saliency passes
// features_override, a differentiable copy of the node features.
struct ForwardOptions {
  bool training = false;
  SeededRng* rng = nullptr;
  TensorPtr edge_mask_logits;
  TensorPtr features_override;
};

// Remove each edge independently with probability rate (training-time
// regularization; callers bypass it entirely in eval mode).
std::vector<Edge> dropedge(const std::vector<Edge>& edges, double rate,
                           SeededRng& rng);

// One symmetric-normalized graph convolution: H' = D^-1/2 (A+I) D^-1/2 H W + b
// with binary adjacency. Activation is applied by the architecture.
TensorPtr gcn_forward(const GcnLayer& layer, const ConnectomeGraph& g,
                      const TensorPtr& H);

// One multi-head attention layer: per head, alpha = softmax over the
// neighborhood (self-loop included) of LeakyReLU(a^T [Wx_i || Wx_j]);
// outputs merged by concat or average.
TensorPtr gat_forward(const GatLayer& layer, const ConnectomeGraph& g,
                      const TensorPtr& H);

// Column-wise mean over nodes -> 1 x dim graph embedding.
TensorPtr global_mean_pool(const TensorPtr& H);

class Model {
 public:
  // Fresh parameters: Glorot-uniform weights and attention vectors, zero
  // biases, unit/zero batchnorm, drawn in a fixed order from rng.
  static Model build(const ModelConfig& cfg, SeededRng& rng);

  const ModelConfig& config() const { return cfg_; }

  // Graph-level logits (1 x 2). Training mode mutates batchnorm running
  // statistics and consumes opts.rng.
  TensorPtr forward(const ConnectomeGraph& g, const ForwardOptions& opts);

  // Eval-mode class probabilities (ASD probability at index 1).
  std::array<double, 2> predict_proba(const ConnectomeGraph& g);

  std::vector<TensorPtr> parameters() const;
  std::vector<std::pair<std::string, TensorPtr>> named_parameters() const;

  // Deep copy of parameters and batchnorm statistics.
  Model clone() const;

  std::vector<GcnLayer> gcn_layers;
  std::vector<GatLayer> gat_layers;
  std::vector<BatchNormLayer> bn_layers;
  LinearLayer head;

 private:
  ModelConfig cfg_;
};

struct TrainMeta {
  std::size_t epochs = 0;
  std::size_t best_epoch = 0;
  double final_train_loss = 0.0;
  double best_val_accuracy = 0.0;
  std::uint64_t seed = 0;
};

// Checkpoint container: u64 little-endian header length, a JSON header
// (config, metadata, tensor name/shape/offset table), then the raw tensor
// payload as little-endian doubles in table order. Offsets are byte
// positions inside the payload.
void save_checkpoint(const Model& model, const TrainMeta& meta,
                     const std::string& path);
Model load_checkpoint(const std::string& path, TrainMeta* meta = nullptr);

}  // namespace connectome

#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "connectome/graph.hpp"
#include "connectome/models.hpp"
#include "connectome/rng.hpp"

namespace connectome {

struct TrainConfig {
  std::size_t epochs = 100;
  double lr = 1e-3;
  std::size_t batch_size = 16;
  double density = 0.20;  // used by the augmentation stage
  double sigma = 0.05;
  std::size_t copies = 5;
  std::uint64_t seed = 0;

  void validate() const;
};

struct EpochStats {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double train_acc = 0.0;
  double val_acc = 0.0;
};

struct TrainResult {
  Model best_model;  // parameters at the best-validation epoch
  TrainMeta meta;
  std::vector<EpochStats> history;
};

// Mini-batch cross-entropy training with Adam. Per-epoch seeded shuffle;
// dropout and DropEdge active only here. Returns the checkpoint with the
// best validation accuracy (ties resolved to the earliest epoch). The passed
// model is left in its final-epoch state.
TrainResult train(Model& model, const std::vector<ConnectomeGraph>& train_graphs,
                  const std::vector<ConnectomeGraph>& val_graphs,
                  const TrainConfig& cfg, SeededRng& rng);

struct MetricsReport {
  double accuracy = 0.0;
  double precision = 0.0;  // positive class is ASD = 1
  double recall = 0.0;
  double auc = 0.0;
  std::size_t tn = 0, fp = 0, fn = 0, tp = 0;
  std::size_t n = 0;

  std::string to_json() const;
};

using Predictor = std::function<std::array<double, 2>(const ConnectomeGraph&)>;

// Eval-mode metrics over labeled graphs. Augmented copies are refused: they
// exist only inside training pools.
MetricsReport evaluate(const Predictor& predict,
                       const std::vector<ConnectomeGraph>& graphs);
MetricsReport evaluate(Model& model, const std::vector<ConnectomeGraph>& graphs);

// Mann-Whitney AUC of scores against binary labels, ties counted 1/2.
// Requires at least one positive and one negative label.
double auc(const std::vector<double>& scores, const std::vector<int>& labels);

struct EnsembleModel {
  std::vector<Model> members;

  // Soft vote: arithmetic mean of member probability vectors.
  std::array<double, 2> predict_proba(const ConnectomeGraph& g);
  Predictor predictor();
};

// Mean of member probability vectors; every entry must be a 2-vector from a
// softmax, and the result sums to 1.
std::array<double, 2> soft_vote(
    const std::vector<std::array<double, 2>>& member_probs);

struct EnsembleTrainResult {
  EnsembleModel ensemble;
  std::vector<TrainMeta> metas;
  std::vector<std::vector<EpochStats>> histories;
};

// Trains `members` models on the same data with per-member child seeds
// (independent init/shuffle/dropout streams). jobs > 1 trains members on
// that many threads; results do not depend on jobs.
EnsembleTrainResult train_ensemble(const ModelConfig& model_cfg,
                                   const std::vector<ConnectomeGraph>& train_graphs,
                                   const std::vector<ConnectomeGraph>& val_graphs,
                                   const TrainConfig& cfg, std::size_t members,
                                   std::uint64_t base_seed, std::size_t jobs = 1);

void write_history_csv(const std::vector<EpochStats>& history,
                       const std::string& path);

}  // namespace connectome

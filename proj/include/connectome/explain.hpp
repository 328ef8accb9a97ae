#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "connectome/graph.hpp"
#include "connectome/models.hpp"
#include "connectome/rng.hpp"
#include "connectome/trainer.hpp"

namespace connectome {

struct SaliencyReport {
  std::vector<double> scores;       // per-ROI gradient L2 norms, >= 0
  std::vector<double> percentages;  // normalized, sums to 100
  std::vector<std::size_t> ranking; // ROI indices, descending percentage
  std::vector<std::string> warnings;
};

// Gradient saliency of one eval-mode model on one graph: the L2 norm over
// the feature dimension of d(predicted-class logit)/d(node features),
// normalized to percentages. A zero gradient yields uniform percentages and
// a warning.
SaliencyReport saliency(Model& model, const ConnectomeGraph& g);

// Ensemble saliency: per-member percentages averaged (a soft-vote ensemble
// has no single logit to differentiate).
SaliencyReport saliency(EnsembleModel& ensemble, const ConnectomeGraph& g);

// Cohort-level report: the per-ROI percentages averaged over subjects.
SaliencyReport cohort_saliency(const std::vector<SaliencyReport>& reports);

struct ExplainConfig {
  std::size_t steps = 200;
  double lr = 0.01;
  double lambda_size = 0.005;
  double lambda_entropy = 1.0;
  double init_std = 0.1;
};

struct EdgeMask {
  std::string subject_id;
  int target_class = 0;
  std::vector<Edge> edges;     // the explained graph's edge list
  std::vector<double> values;  // sigmoid(m_e), aligned with edges

  // Edge indices by descending mask value (ties by ascending (i, j)).
  std::vector<std::size_t> top_indices(std::size_t k) const;
};

// Learns a sigmoid edge mask that preserves the models' (soft-vote)
// prediction while penalizing mask size and entropy:
//   L = CE(prediction with masked edges, predicted class)
//       + lambda_size * sum sigma(m) + lambda_entropy * sum H_b(sigma(m)),
// optimized with Adam on the unconstrained logits m, initialized
// N(0, init_std^2). GCN propagation entries are scaled by sigma(m); GAT
// pre-softmax scores receive log sigma(m).
EdgeMask gnn_explain(const std::vector<Model*>& models,
                     const ConnectomeGraph& g, const ExplainConfig& cfg,
                     SeededRng& rng);
EdgeMask gnn_explain(Model& model, const ConnectomeGraph& g,
                     const ExplainConfig& cfg, SeededRng& rng);
EdgeMask gnn_explain(EnsembleModel& ensemble, const ConnectomeGraph& g,
                     const ExplainConfig& cfg, SeededRng& rng);

struct FidelityResult {
  double keep_delta = 0.0;    // P(orig class | top-k edges only) - P(full)
  double remove_delta = 0.0;  // P(orig class | top-k edges removed) - P(full)
};

// Probability deltas of the originally predicted class when keeping only the
// top-k masked edges vs. removing them. k = 0 under keep leaves only
// self-loops in the propagation.
FidelityResult mask_fidelity(const Predictor& predict,
                             const ConnectomeGraph& g, const EdgeMask& mask,
                             std::size_t k);

// Report emission: saliency as JSON ({roi_index, roi_label, percentage},
// ranked) plus a plotting CSV; edge masks as CSV rows "i,j,mask_value"
// sorted by descending value.
void write_saliency_json(const SaliencyReport& report,
                         const std::vector<std::string>& roi_labels,
                         const std::string& path);
void write_saliency_csv(const SaliencyReport& report,
                        const std::vector<std::string>& roi_labels,
                        const std::string& path);
void write_edge_mask_csv(const EdgeMask& mask, const std::string& path);

}  // namespace connectome

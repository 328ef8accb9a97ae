#pragma once

#include <cstdint>
#include <vector>

#include "connectome/tensor.hpp"

namespace connectome {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with bias correction over a fixed list of parameter tensors.
// Moment buffers mirror the parameter shapes; step() consumes the gradients
// currently held in each parameter's grad buffer.
class Adam {
 public:
  Adam(const std::vector<TensorPtr>& params, AdamConfig cfg = {});

  // One update from the parameters' accumulated gradients. Gradients are not
  // cleared here; callers zero them before the next backward.
  void step();

  // Update a single parameter from an explicit gradient (used by tests and
  // by the scalar reference in the suite).
  static void update(std::vector<double>& param, const std::vector<double>& grad,
                     std::vector<double>& m, std::vector<double>& v,
                     std::int64_t t, const AdamConfig& cfg);

  std::int64_t step_count() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  std::vector<TensorPtr> params_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::int64_t t_ = 0;
  AdamConfig cfg_;
};

}  // namespace connectome

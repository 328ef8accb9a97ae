#pragma once

#include <functional>
#include <vector>

#include "connectome/tensor.hpp"

namespace connectome {

// A differentiable scalar function of a parameter list: rebuilds its graph on
// every call and returns the 1x1 loss. It must be pure given the parameter
// values (stateful layers take copies of their state per call).
using ScalarFn = std::function<TensorPtr(const std::vector<TensorPtr>&)>;

// Max over all parameter entries of
//   |analytic - central difference| / max(|analytic|, |numeric|, 1e-8).
// Analytic gradients come from one reverse pass of f; numeric ones from
// central differences with the given step.
double gradcheck(const ScalarFn& f, const std::vector<TensorPtr>& params,
                 double step = 1e-5);

// Same error metric against caller-supplied "analytic" gradients, one vector
// per parameter. Lets tests verify that a corrupted gradient is detected.
double gradcheck_against(const ScalarFn& f, const std::vector<TensorPtr>& params,
                         const std::vector<std::vector<double>>& analytic,
                         double step = 1e-5);

}  // namespace connectome

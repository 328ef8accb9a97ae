#include "connectome/gradcheck.hpp"

#include <cmath>
#include <stdexcept>

namespace connectome {

namespace {

double eval_scalar(const ScalarFn& f, const std::vector<TensorPtr>& params) {
  const double v = f(params)->item();
  if (!std::isfinite(v)) {
    throw std::domain_error("gradcheck: function value is non-finite");
  }
  return v;
}

}  // namespace

double gradcheck_against(const ScalarFn& f, const std::vector<TensorPtr>& params,
                         const std::vector<std::vector<double>>& analytic,
                         double step) {
  if (analytic.size() != params.size()) {
    throw std::invalid_argument("gradcheck: gradient list size mismatch");
  }
  double worst = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = *params[k];
    if (analytic[k].size() != p.size()) {
      throw std::invalid_argument("gradcheck: gradient shape mismatch");
    }
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double saved = p.data()[i];
      p.data()[i] = saved + step;
      const double fp = eval_scalar(f, params);
      p.data()[i] = saved - step;
      const double fm = eval_scalar(f, params);
      p.data()[i] = saved;
      const double numeric = (fp - fm) / (2.0 * step);
      const double a = analytic[k][i];
      const double denom =
          std::max({std::fabs(a), std::fabs(numeric), 1e-8});
      worst = std::max(worst, std::fabs(a - numeric) / denom);
    }
  }
  return worst;
}

double gradcheck(const ScalarFn& f, const std::vector<TensorPtr>& params,
                 double step) {
  for (const auto& p : params) {
    p->zero_grad();
  }
  auto loss = f(params);
  if (!std::isfinite(loss->item())) {
    throw std::domain_error("gradcheck: function value is non-finite");
  }
  loss->backward();
  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (const auto& p : params) {
    analytic.push_back(p->grad());
  }
  return gradcheck_against(f, params, analytic, step);
}

}  // namespace connectome

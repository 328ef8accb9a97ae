#include "connectome/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace connectome {

Adam::Adam(const std::vector<TensorPtr>& params, AdamConfig cfg)
    : params_(params), cfg_(cfg) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const auto& p : params_) {
    m_.emplace_back(p->size(), 0.0);
    v_.emplace_back(p->size(), 0.0);
  }
}

void Adam::update(std::vector<double>& param, const std::vector<double>& grad,
                  std::vector<double>& m, std::vector<double>& v,
                  std::int64_t t, const AdamConfig& cfg) {
  if (param.size() != grad.size() || param.size() != m.size() ||
      param.size() != v.size()) {
    throw std::invalid_argument("adam: parameter/gradient/state size mismatch");
  }
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i];
    m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
    v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
    const double mhat = m[i] / bc1;
    const double vhat = v[i] / bc2;
    param[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    if (!std::isfinite(param[i])) {
      throw std::domain_error("adam: parameter became non-finite");
    }
  }
}

void Adam::step() {
  ++t_;
  for (std::size_t k = 0; k < params_.size(); ++k) {
    update(params_[k]->data(), params_[k]->grad(), m_[k], v_[k], t_, cfg_);
  }
}

}  // namespace connectome

#include "connectome/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

#define EIGEN_DONT_PARALLELIZE
#include <Eigen/Dense>

namespace connectome {

namespace {

using RowMat =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

ConstMap map_of(const Tensor& t) {
  return ConstMap(t.data().data(), static_cast<Eigen::Index>(t.rows()),
                  static_cast<Eigen::Index>(t.cols()));
}

MutMap map_of(Tensor& t) {
  return MutMap(t.data().data(), static_cast<Eigen::Index>(t.rows()),
                static_cast<Eigen::Index>(t.cols()));
}

MutMap map_of_grad(Tensor& t) {
  return MutMap(t.grad().data(), static_cast<Eigen::Index>(t.rows()),
                static_cast<Eigen::Index>(t.cols()));
}

ConstMap map_of_grad_const(const Tensor& t) {
  return ConstMap(t.grad().data(), static_cast<Eigen::Index>(t.rows()),
                  static_cast<Eigen::Index>(t.cols()));
}

[[noreturn]] void shape_error(const std::string& op, const Tensor& a,
                              const Tensor& b) {
  throw std::invalid_argument(op + ": incompatible shapes " + a.shape_str() +
                              " and " + b.shape_str());
}

// An op participates in the tape when any input is a grad source, i.e. is a
// requires_grad leaf or was itself produced by a recorded op.
bool grad_source(const TensorPtr& t) {
  return t->requires_grad() || t->tape_recorded();
}

void record(const TensorPtr& out, std::vector<TensorPtr> parents,
            std::function<void()> fn) {
  bool any = false;
  for (const auto& p : parents) {
    if (grad_source(p)) {
      any = true;
      break;
    }
  }
  if (!any) return;
  out->parents_ = std::move(parents);
  out->backward_fn_ = std::move(fn);
}

void check_finite(const Tensor& t, const char* op) {
  if (!t.all_finite()) {
    throw std::domain_error(std::string(op) + ": produced non-finite values");
  }
}

}  // namespace

Tensor::Tensor(std::size_t rows, std::size_t cols, bool requires_grad)
    : rows_(rows), cols_(cols), data_(rows * cols, 0.0),
      requires_grad_(requires_grad) {
  if (rows == 0 || cols == 0) {
    throw std::invalid_argument("Tensor: dimensions must be positive");
  }
}

Tensor::Tensor(std::size_t rows, std::size_t cols, std::vector<double> values,
               bool requires_grad)
    : rows_(rows), cols_(cols), data_(std::move(values)),
      requires_grad_(requires_grad) {
  if (rows == 0 || cols == 0) {
    throw std::invalid_argument("Tensor: dimensions must be positive");
  }
  if (data_.size() != rows * cols) {
    throw std::invalid_argument("Tensor: data length " +
                                std::to_string(data_.size()) +
                                " does not equal rows*cols " +
                                std::to_string(rows * cols));
  }
}

double Tensor::item() const {
  if (rows_ != 1 || cols_ != 1) {
    throw std::logic_error("item(): tensor is " + shape_str() + ", not 1x1");
  }
  return data_[0];
}

std::vector<double>& Tensor::grad() {
  if (grad_.size() != data_.size()) grad_.assign(data_.size(), 0.0);
  return grad_;
}

void Tensor::zero_grad() {
  std::fill(grad_.begin(), grad_.end(), 0.0);
}

bool Tensor::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << rows_ << "x" << cols_;
  return os.str();
}

void Tensor::backward() {
  if (rows_ != 1 || cols_ != 1) {
    throw std::logic_error("backward(): loss must be 1x1, got " + shape_str());
  }
  if (!tape_recorded() && !requires_grad_) {
    throw std::logic_error("backward(): loss records no operations");
  }

  // Reverse topological order via iterative DFS.
  std::vector<Tensor*> order;
  std::unordered_set<Tensor*> visited;
  std::vector<std::pair<Tensor*, std::size_t>> stack;
  stack.emplace_back(this, 0);
  visited.insert(this);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents_.size()) {
      Tensor* p = node->parents_[next++].get();
      if (visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  grad().assign(1, 1.0);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward_fn_) {
      (*it)->grad();  // ensure the adjoint buffer exists even if all-zero
      (*it)->backward_fn_();
    }
  }
  // Clear the tape: interior nodes release parents and closures, so the next
  // loss records independently and memory is reclaimed.
  for (Tensor* node : order) {
    node->backward_fn_ = nullptr;
    node->parents_.clear();
  }
}

TensorPtr make_tensor(std::size_t rows, std::size_t cols, bool requires_grad) {
  return std::make_shared<Tensor>(rows, cols, requires_grad);
}

TensorPtr make_tensor(std::size_t rows, std::size_t cols,
                      std::vector<double> values, bool requires_grad) {
  return std::make_shared<Tensor>(rows, cols, std::move(values), requires_grad);
}

TensorPtr make_scalar(double value, bool requires_grad) {
  return make_tensor(1, 1, {value}, requires_grad);
}

namespace ops {

TensorPtr matmul(const TensorPtr& a, const TensorPtr& b) {
  if (a->cols() != b->rows()) shape_error("matmul", *a, *b);
  auto out = make_tensor(a->rows(), b->cols());
  map_of(*out).noalias() = map_of(*a) * map_of(*b);
  check_finite(*out, "matmul");
  record(out, {a, b}, [a, b, o = out.get()]() {
    auto g = map_of_grad_const(*o);
    if (grad_source(a)) map_of_grad(*a).noalias() += g * map_of(*b).transpose();
    if (grad_source(b)) map_of_grad(*b).noalias() += map_of(*a).transpose() * g;
  });
  return out;
}

TensorPtr add(const TensorPtr& a, const TensorPtr& b) {
  const bool row_broadcast = b->rows() == 1 && b->cols() == a->cols() &&
                             a->rows() != 1;
  if (!row_broadcast && (a->rows() != b->rows() || a->cols() != b->cols())) {
    shape_error("add", *a, *b);
  }
  auto out = make_tensor(a->rows(), a->cols());
  if (row_broadcast) {
    map_of(*out) = map_of(*a).rowwise() + map_of(*b).row(0);
  } else {
    map_of(*out) = map_of(*a) + map_of(*b);
  }
  record(out, {a, b}, [a, b, row_broadcast, o = out.get()]() {
    auto g = map_of_grad_const(*o);
    if (grad_source(a)) map_of_grad(*a) += g;
    if (grad_source(b)) {
      if (row_broadcast) {
        map_of_grad(*b).row(0) += g.colwise().sum();
      } else {
        map_of_grad(*b) += g;
      }
    }
  });
  return out;
}

TensorPtr mul(const TensorPtr& a, const TensorPtr& b) {
  if (a->rows() != b->rows() || a->cols() != b->cols()) {
    shape_error("mul", *a, *b);
  }
  auto out = make_tensor(a->rows(), a->cols());
  map_of(*out) = map_of(*a).cwiseProduct(map_of(*b));
  record(out, {a, b}, [a, b, o = out.get()]() {
    auto g = map_of_grad_const(*o);
    if (grad_source(a)) map_of_grad(*a) += g.cwiseProduct(map_of(*b));
    if (grad_source(b)) map_of_grad(*b) += g.cwiseProduct(map_of(*a));
  });
  return out;
}

TensorPtr scale(const TensorPtr& a, double c) {
  auto out = make_tensor(a->rows(), a->cols());
  map_of(*out) = map_of(*a) * c;
  record(out, {a}, [a, c, o = out.get()]() {
    if (grad_source(a)) map_of_grad(*a) += map_of_grad_const(*o) * c;
  });
  return out;
}

TensorPtr relu(const TensorPtr& a) {
  auto out = make_tensor(a->rows(), a->cols());
  for (std::size_t i = 0; i < a->size(); ++i) {
    out->data()[i] = a->data()[i] > 0.0 ? a->data()[i] : 0.0;
  }
  record(out, {a}, [a, o = out.get()]() {
    if (!grad_source(a)) return;
    auto& ga = a->grad();
    const auto& g = o->grad();
    for (std::size_t i = 0; i < a->size(); ++i) {
      if (a->data()[i] > 0.0) ga[i] += g[i];
    }
  });
  return out;
}

TensorPtr leaky_relu(const TensorPtr& a, double negative_slope) {
  auto out = make_tensor(a->rows(), a->cols());
  for (std::size_t i = 0; i < a->size(); ++i) {
    const double v = a->data()[i];
    out->data()[i] = v > 0.0 ? v : negative_slope * v;
  }
  record(out, {a, }, [a, negative_slope, o = out.get()]() {
    if (!grad_source(a)) return;
    auto& ga = a->grad();
    const auto& g = o->grad();
    for (std::size_t i = 0; i < a->size(); ++i) {
      ga[i] += (a->data()[i] > 0.0 ? 1.0 : negative_slope) * g[i];
    }
  });
  return out;
}

TensorPtr elu(const TensorPtr& a, double alpha) {
  auto out = make_tensor(a->rows(), a->cols());
  for (std::size_t i = 0; i < a->size(); ++i) {
    const double v = a->data()[i];
    out->data()[i] = v > 0.0 ? v : alpha * (std::exp(v) - 1.0);
  }
  record(out, {a}, [a, alpha, o = out.get()]() {
    if (!grad_source(a)) return;
    auto& ga = a->grad();
    const auto& g = o->grad();
    for (std::size_t i = 0; i < a->size(); ++i) {
      const double v = a->data()[i];
      // d/dv [alpha*(e^v - 1)] = alpha*e^v = output + alpha for v <= 0
      ga[i] += (v > 0.0 ? 1.0 : o->data()[i] + alpha) * g[i];
    }
  });
  return out;
}

TensorPtr sigmoid(const TensorPtr& a) {
  auto out = make_tensor(a->rows(), a->cols());
  for (std::size_t i = 0; i < a->size(); ++i) {
    const double v = a->data()[i];
    // Branch keeps exp() argument negative on both sides.
    out->data()[i] = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v))
                              : std::exp(v) / (1.0 + std::exp(v));
  }
  record(out, {a}, [a, o = out.get()]() {
    if (!grad_source(a)) return;
    auto& ga = a->grad();
    const auto& g = o->grad();
    for (std::size_t i = 0; i < a->size(); ++i) {
      const double s = o->data()[i];
      ga[i] += s * (1.0 - s) * g[i];
    }
  });
  return out;
}

TensorPtr log(const TensorPtr& a) {
  auto out = make_tensor(a->rows(), a->cols());
  for (std::size_t i = 0; i < a->size(); ++i) {
    if (!(a->data()[i] > 0.0)) {
      throw std::domain_error("log: input entries must be positive");
    }
    out->data()[i] = std::log(a->data()[i]);
  }
  record(out, {a}, [a, o = out.get()]() {
    if (!grad_source(a)) return;
    auto& ga = a->grad();
    const auto& g = o->grad();
    for (std::size_t i = 0; i < a->size(); ++i) {
      ga[i] += g[i] / a->data()[i];
    }
  });
  return out;
}

TensorPtr softmax_rows(const TensorPtr& a) {
  auto out = make_tensor(a->rows(), a->cols());
  const std::size_t C = a->cols();
  for (std::size_t r = 0; r < a->rows(); ++r) {
    const double* in = a->data().data() + r * C;
    double* row = out->data().data() + r * C;
    double mx = in[0];
    for (std::size_t c = 1; c < C; ++c) mx = std::max(mx, in[c]);
    double denom = 0.0;
    for (std::size_t c = 0; c < C; ++c) {
      row[c] = std::exp(in[c] - mx);
      denom += row[c];
    }
    for (std::size_t c = 0; c < C; ++c) row[c] /= denom;
  }
  record(out, {a}, [a, o = out.get()]() {
    if (!grad_source(a)) return;
    const std::size_t C = a->cols();
    auto& ga = a->grad();
    const auto& g = o->grad();
    for (std::size_t r = 0; r < a->rows(); ++r) {
      const double* s = o->data().data() + r * C;
      const double* gr = g.data() + r * C;
      double dot = 0.0;
      for (std::size_t c = 0; c < C; ++c) dot += s[c] * gr[c];
      for (std::size_t c = 0; c < C; ++c) {
        ga[r * C + c] += s[c] * (gr[c] - dot);
      }
    }
  });
  return out;
}

TensorPtr masked_softmax_rows(const TensorPtr& a,
                              const std::vector<std::uint8_t>& mask) {
  if (mask.size() != a->size()) {
    throw std::invalid_argument("masked_softmax_rows: mask size mismatch");
  }
  auto out = make_tensor(a->rows(), a->cols());
  const std::size_t C = a->cols();
  for (std::size_t r = 0; r < a->rows(); ++r) {
    const double* in = a->data().data() + r * C;
    const std::uint8_t* m = mask.data() + r * C;
    double* row = out->data().data() + r * C;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < C; ++c) {
      if (m[c]) mx = std::max(mx, in[c]);
    }
    if (!std::isfinite(mx)) {
      throw std::invalid_argument(
          "masked_softmax_rows: row " + std::to_string(r) +
          " has no unmasked entries");
    }
    double denom = 0.0;
    for (std::size_t c = 0; c < C; ++c) {
      if (m[c]) {
        row[c] = std::exp(in[c] - mx);
        denom += row[c];
      } else {
        row[c] = 0.0;
      }
    }
    for (std::size_t c = 0; c < C; ++c) {
      if (m[c]) row[c] /= denom;
    }
  }
  record(out, {a}, [a, mask, o = out.get()]() {
    if (!grad_source(a)) return;
    const std::size_t C = a->cols();
    auto& ga = a->grad();
    const auto& g = o->grad();
    for (std::size_t r = 0; r < a->rows(); ++r) {
      const double* s = o->data().data() + r * C;
      const double* gr = g.data() + r * C;
      const std::uint8_t* m = mask.data() + r * C;
      double dot = 0.0;
      for (std::size_t c = 0; c < C; ++c) {
        if (m[c]) dot += s[c] * gr[c];
      }
      for (std::size_t c = 0; c < C; ++c) {
        if (m[c]) ga[r * C + c] += s[c] * (gr[c] - dot);
      }
    }
  });
  return out;
}

TensorPtr log_softmax_rows(const TensorPtr& a) {
  auto out = make_tensor(a->rows(), a->cols());
  const std::size_t C = a->cols();
  for (std::size_t r = 0; r < a->rows(); ++r) {
    const double* in = a->data().data() + r * C;
    double* row = out->data().data() + r * C;
    double mx = in[0];
    for (std::size_t c = 1; c < C; ++c) mx = std::max(mx, in[c]);
    double denom = 0.0;
    for (std::size_t c = 0; c < C; ++c) denom += std::exp(in[c] - mx);
    const double lse = mx + std::log(denom);
    for (std::size_t c = 0; c < C; ++c) row[c] = in[c] - lse;
  }
  record(out, {a}, [a, o = out.get()]() {
    if (!grad_source(a)) return;
    const std::size_t C = a->cols();
    auto& ga = a->grad();
    const auto& g = o->grad();
    for (std::size_t r = 0; r < a->rows(); ++r) {
      const double* lsm = o->data().data() + r * C;
      const double* gr = g.data() + r * C;
      double gsum = 0.0;
      for (std::size_t c = 0; c < C; ++c) gsum += gr[c];
      for (std::size_t c = 0; c < C; ++c) {
        ga[r * C + c] += gr[c] - std::exp(lsm[c]) * gsum;
      }
    }
  });
  return out;
}

TensorPtr sum(const TensorPtr& a) {
  auto out = make_scalar(map_of(*a).sum());
  record(out, {a}, [a, o = out.get()]() {
    if (!grad_source(a)) return;
    const double g = o->grad()[0];
    auto& ga = a->grad();
    for (double& v : ga) v += g;
  });
  return out;
}

TensorPtr mean(const TensorPtr& a) {
  const double inv = 1.0 / static_cast<double>(a->size());
  auto out = make_scalar(map_of(*a).sum() * inv);
  record(out, {a}, [a, inv, o = out.get()]() {
    if (!grad_source(a)) return;
    const double g = o->grad()[0] * inv;
    auto& ga = a->grad();
    for (double& v : ga) v += g;
  });
  return out;
}

TensorPtr mean_rows(const TensorPtr& a) {
  auto out = make_tensor(1, a->cols());
  const double inv = 1.0 / static_cast<double>(a->rows());
  map_of(*out).row(0) = map_of(*a).colwise().sum() * inv;
  record(out, {a}, [a, inv, o = out.get()]() {
    if (!grad_source(a)) return;
    map_of_grad(*a).rowwise() += map_of_grad_const(*o).row(0) * inv;
  });
  return out;
}

TensorPtr concat_cols(const TensorPtr& a, const TensorPtr& b) {
  if (a->rows() != b->rows()) shape_error("concat_cols", *a, *b);
  auto out = make_tensor(a->rows(), a->cols() + b->cols());
  for (std::size_t r = 0; r < a->rows(); ++r) {
    std::copy_n(a->data().data() + r * a->cols(), a->cols(),
                out->data().data() + r * out->cols());
    std::copy_n(b->data().data() + r * b->cols(), b->cols(),
                out->data().data() + r * out->cols() + a->cols());
  }
  record(out, {a, b}, [a, b, o = out.get()]() {
    const auto& g = o->grad();
    const std::size_t ca = a->cols();
    const std::size_t cb = b->cols();
    for (std::size_t r = 0; r < a->rows(); ++r) {
      const double* gr = g.data() + r * (ca + cb);
      if (grad_source(a)) {
        auto& ga = a->grad();
        for (std::size_t c = 0; c < ca; ++c) ga[r * ca + c] += gr[c];
      }
      if (grad_source(b)) {
        auto& gb = b->grad();
        for (std::size_t c = 0; c < cb; ++c) gb[r * cb + c] += gr[ca + c];
      }
    }
  });
  return out;
}

TensorPtr transpose(const TensorPtr& a) {
  auto out = make_tensor(a->cols(), a->rows());
  map_of(*out) = map_of(*a).transpose();
  record(out, {a}, [a, o = out.get()]() {
    if (grad_source(a)) {
      map_of_grad(*a) += map_of_grad_const(*o).transpose();
    }
  });
  return out;
}

TensorPtr gather_rows(const TensorPtr& a,
                      const std::vector<std::size_t>& indices) {
  for (std::size_t idx : indices) {
    if (idx >= a->rows()) {
      throw std::out_of_range("gather_rows: index " + std::to_string(idx) +
                              " out of range for " + a->shape_str());
    }
  }
  auto out = make_tensor(indices.size(), a->cols());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    std::copy_n(a->data().data() + indices[r] * a->cols(), a->cols(),
                out->data().data() + r * a->cols());
  }
  record(out, {a}, [a, indices, o = out.get()]() {
    if (!grad_source(a)) return;
    auto& ga = a->grad();
    const auto& g = o->grad();
    const std::size_t C = a->cols();
    for (std::size_t r = 0; r < indices.size(); ++r) {
      for (std::size_t c = 0; c < C; ++c) {
        ga[indices[r] * C + c] += g[r * C + c];
      }
    }
  });
  return out;
}

TensorPtr edge_scatter(
    const TensorPtr& values,
    const std::vector<std::pair<std::size_t, std::size_t>>& edges,
    std::size_t n, double diag_value, double fill_value) {
  if (values->cols() != 1 || values->rows() != edges.size()) {
    throw std::invalid_argument(
        "edge_scatter: values must be Ex1 matching the edge list");
  }
  auto out = make_tensor(n, n, std::vector<double>(n * n, fill_value));
  for (std::size_t i = 0; i < n; ++i) out->at(i, i) = diag_value;
  for (std::size_t e = 0; e < edges.size(); ++e) {
    const auto [i, j] = edges[e];
    if (i >= n || j >= n || i == j) {
      throw std::invalid_argument("edge_scatter: invalid edge index");
    }
    out->at(i, j) = values->data()[e];
    out->at(j, i) = values->data()[e];
  }
  record(out, {values}, [values, edges, n, o = out.get()]() {
    if (!grad_source(values)) return;
    auto& gv = values->grad();
    const auto& g = o->grad();
    for (std::size_t e = 0; e < edges.size(); ++e) {
      const auto [i, j] = edges[e];
      gv[e] += g[i * n + j] + g[j * n + i];
    }
  });
  return out;
}

TensorPtr batchnorm(const TensorPtr& x, const TensorPtr& gamma,
                    const TensorPtr& beta, std::vector<double>& running_mean,
                    std::vector<double>& running_var, bool train,
                    double momentum, double eps) {
  const std::size_t N = x->rows();
  const std::size_t C = x->cols();
  if (gamma->rows() != 1 || gamma->cols() != C) shape_error("batchnorm", *x, *gamma);
  if (beta->rows() != 1 || beta->cols() != C) shape_error("batchnorm", *x, *beta);
  if (running_mean.size() != C || running_var.size() != C) {
    throw std::invalid_argument("batchnorm: running statistics size mismatch");
  }

  auto out = make_tensor(N, C);
  // xhat is saved for the backward pass in both modes.
  auto xhat = std::make_shared<std::vector<double>>(N * C);
  auto inv_std = std::make_shared<std::vector<double>>(C);

  std::vector<double> mu(C), var(C);
  if (train) {
    for (std::size_t c = 0; c < C; ++c) {
      double m = 0.0;
      for (std::size_t r = 0; r < N; ++r) m += x->at(r, c);
      m /= static_cast<double>(N);
      double v = 0.0;
      for (std::size_t r = 0; r < N; ++r) {
        const double d = x->at(r, c) - m;
        v += d * d;
      }
      v /= static_cast<double>(N);  // biased, matches the normalizer
      mu[c] = m;
      var[c] = v;
      running_mean[c] = (1.0 - momentum) * running_mean[c] + momentum * m;
      running_var[c] = (1.0 - momentum) * running_var[c] + momentum * v;
    }
  } else {
    mu = running_mean;
    var = running_var;
  }

  for (std::size_t c = 0; c < C; ++c) {
    (*inv_std)[c] = 1.0 / std::sqrt(var[c] + eps);
  }
  for (std::size_t r = 0; r < N; ++r) {
    for (std::size_t c = 0; c < C; ++c) {
      const double h = (x->at(r, c) - mu[c]) * (*inv_std)[c];
      (*xhat)[r * C + c] = h;
      out->at(r, c) = gamma->data()[c] * h + beta->data()[c];
    }
  }
  check_finite(*out, "batchnorm");

  record(out, {x, gamma, beta},
         [x, gamma, beta, xhat, inv_std, train, N, C, o = out.get()]() {
           const auto& g = o->grad();
           // dgamma/dbeta are shared by both modes.
           if (grad_source(gamma)) {
             auto& gg = gamma->grad();
             for (std::size_t c = 0; c < C; ++c) {
               double s = 0.0;
               for (std::size_t r = 0; r < N; ++r) {
                 s += g[r * C + c] * (*xhat)[r * C + c];
               }
               gg[c] += s;
             }
           }
           if (grad_source(beta)) {
             auto& gb = beta->grad();
             for (std::size_t c = 0; c < C; ++c) {
               double s = 0.0;
               for (std::size_t r = 0; r < N; ++r) s += g[r * C + c];
               gb[c] += s;
             }
           }
           if (!grad_source(x)) return;
           auto& gx = x->grad();
           if (!train) {
             // Affine map with frozen statistics.
             for (std::size_t r = 0; r < N; ++r) {
               for (std::size_t c = 0; c < C; ++c) {
                 gx[r * C + c] +=
                     g[r * C + c] * gamma->data()[c] * (*inv_std)[c];
               }
             }
             return;
           }
           // Train mode: mean and variance carry gradient too.
           const double invN = 1.0 / static_cast<double>(N);
           for (std::size_t c = 0; c < C; ++c) {
             double sum_g = 0.0;
             double sum_gh = 0.0;
             for (std::size_t r = 0; r < N; ++r) {
               sum_g += g[r * C + c];
               sum_gh += g[r * C + c] * (*xhat)[r * C + c];
             }
             const double k = gamma->data()[c] * (*inv_std)[c];
             for (std::size_t r = 0; r < N; ++r) {
               gx[r * C + c] += k * (g[r * C + c] - invN * sum_g -
                                     (*xhat)[r * C + c] * invN * sum_gh);
             }
           }
         });
  return out;
}

}  // namespace ops

}  // namespace connectome

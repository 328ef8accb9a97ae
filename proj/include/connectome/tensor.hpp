#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

namespace connectome {

class Tensor;
using TensorPtr = std::shared_ptr<Tensor>;

// Dense row-major matrix of doubles, doubling as a node in the reverse-mode
// tape. The tape is implicit: every op result keeps shared_ptr links to its
// inputs plus a closure that propagates the adjoint. backward() on a 1x1
// loss walks the recorded subgraph in reverse topological order, accumulates
// into grad buffers of requires_grad leaves, then severs the links so a
// second loss starts from a clean tape.
//
// Values are treated as immutable once an op has consumed them; the training
// loop mutates leaf parameter data only between forward passes.
class Tensor : public std::enable_shared_from_this<Tensor> {
 public:
  Tensor(std::size_t rows, std::size_t cols, bool requires_grad = false);
  Tensor(std::size_t rows, std::size_t cols, std::vector<double> values,
         bool requires_grad = false);

  Tensor(const Tensor&) = delete;
  Tensor& operator=(const Tensor&) = delete;

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool requires_grad() const { return requires_grad_; }

  double& at(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  // Scalar value of a 1x1 tensor.
  double item() const;

  // Gradient buffer; sized on demand, zero until backward has touched it.
  std::vector<double>& grad();
  const std::vector<double>& grad() const { return grad_; }
  void zero_grad();

  bool all_finite() const;

  // Reverse pass from a 1x1 loss. Seeds d(loss)/d(loss) = 1, visits the
  // recorded graph in reverse topological order, then clears the tape links
  // of every visited node (leaves keep their grad buffers).
  void backward();

  std::string shape_str() const;

  // --- op-recording internals -------------------------------------------
  bool tape_recorded() const { return !parents_.empty() || backward_fn_ != nullptr; }

  std::vector<TensorPtr> parents_;
  std::function<void()> backward_fn_;

 private:
  std::size_t rows_;
  std::size_t cols_;
  std::vector<double> data_;
  bool requires_grad_;
  std::vector<double> grad_;
};

TensorPtr make_tensor(std::size_t rows, std::size_t cols,
                      bool requires_grad = false);
TensorPtr make_tensor(std::size_t rows, std::size_t cols,
                      std::vector<double> values, bool requires_grad = false);
TensorPtr make_scalar(double value, bool requires_grad = false);

namespace ops {

// Primitive set. Every op records onto the tape when any input requires a
// gradient (directly or through earlier recorded ops), so composite losses
// differentiate end to end.

// Standard matrix product. a.cols must equal b.rows.
TensorPtr matmul(const TensorPtr& a, const TensorPtr& b);

// Elementwise sum; b may also be 1 x a.cols (row broadcast, used for biases).
TensorPtr add(const TensorPtr& a, const TensorPtr& b);

// Elementwise (Hadamard) product of same-shape tensors.
TensorPtr mul(const TensorPtr& a, const TensorPtr& b);

// Multiply by a compile-time constant scalar.
TensorPtr scale(const TensorPtr& a, double c);

TensorPtr relu(const TensorPtr& a);
TensorPtr leaky_relu(const TensorPtr& a, double negative_slope);
TensorPtr elu(const TensorPtr& a, double alpha = 1.0);
TensorPtr sigmoid(const TensorPtr& a);

// Natural log; every input entry must be > 0.
TensorPtr log(const TensorPtr& a);

// Row-wise softmax over all columns.
TensorPtr softmax_rows(const TensorPtr& a);

// Row-wise softmax restricted to entries where mask != 0; masked-out
// entries of the result are exactly 0. Every row must contain at least one
// unmasked entry. mask is not differentiated.
TensorPtr masked_softmax_rows(const TensorPtr& a,
                              const std::vector<std::uint8_t>& mask);

// Numerically stable row-wise log-softmax.
TensorPtr log_softmax_rows(const TensorPtr& a);

// Sum of all entries -> 1x1.
TensorPtr sum(const TensorPtr& a);

// Mean of all entries -> 1x1.
TensorPtr mean(const TensorPtr& a);

// Column means over rows -> 1 x cols.
TensorPtr mean_rows(const TensorPtr& a);

// Horizontal concatenation [a | b].
TensorPtr concat_cols(const TensorPtr& a, const TensorPtr& b);

TensorPtr transpose(const TensorPtr& a);

// Select rows by index (indices may repeat); backward scatter-adds.
TensorPtr gather_rows(const TensorPtr& a, const std::vector<std::size_t>& indices);

// Scatter a length-E column vector of per-edge values into a symmetric
// n x n matrix: entry (i,j) and (j,i) of edge e get values[e]; the diagonal
// gets diag_value and all remaining entries fill_value (both constants).
TensorPtr edge_scatter(const TensorPtr& values,
                       const std::vector<std::pair<std::size_t, std::size_t>>& edges,
                       std::size_t n, double diag_value, double fill_value);

// Per-channel batch normalization over the row (node) dimension of x (N x C),
// with scale gamma (1 x C) and shift beta (1 x C).
//
// train mode: normalizes with the biased batch statistics of x and folds the
// update running <- (1-momentum)*running + momentum*batch into running_mean /
// running_var as a side effect. eval mode: normalizes with the frozen running
// statistics (an affine map, still differentiable in x, gamma, beta).
TensorPtr batchnorm(const TensorPtr& x, const TensorPtr& gamma,
                    const TensorPtr& beta, std::vector<double>& running_mean,
                    std::vector<double>& running_var, bool train,
                    double momentum = 0.1, double eps = 1e-5);

}  // namespace ops

}  // namespace connectome

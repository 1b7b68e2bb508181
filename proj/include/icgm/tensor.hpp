#pragma once

#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace icgm {

/// Error thrown when operand shapes are incompatible. The message always
/// reports both shapes.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {
struct TensorNode;
}

/// Dense row-major 2-D tensor of doubles with reverse-mode differentiation.
///
/// Every tensor is a matrix; scalars are 1x1 and vectors 1xN. Operations on
/// tensors that (transitively) require gradients record a backward closure,
/// so backward() on a scalar output populates grad() on every reachable
/// leaf created with requires_grad = true. Copies are shallow: a Tensor is
/// a handle to a shared node.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(int rows, int cols, bool requires_grad = false);
  static Tensor full(int rows, int cols, double value);
  static Tensor from_values(int rows, int cols, std::vector<double> values,
                            bool requires_grad = false);
  static Tensor scalar(double value);

  /// Leaf sharing the same value buffer as `other` (no copy). Used to give
  /// frozen or thread-local views of parameters their own grad buffer.
  static Tensor alias(const Tensor& other, bool requires_grad);

  bool defined() const { return node_ != nullptr; }
  int rows() const;
  int cols() const;
  int size() const { return rows() * cols(); }

  double at(int r, int c) const;
  double& at_mut(int r, int c);
  double scalar_value() const;

  std::span<const double> values() const;
  std::span<double> values_mut();

  bool requires_grad() const;
  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> grad_mut();
  void zero_grad();

  /// Reverse-mode pass from a scalar output. Throws if this tensor is not
  /// 1x1 or was not produced by recorded operations / is not a leaf.
  void backward() const;

  bool all_finite() const;

  /// Identity of the underlying node, for leaf bookkeeping.
  const void* node_id() const { return node_.get(); }

  // Internal: used by the op implementations in tensor.cpp.
  explicit Tensor(std::shared_ptr<detail::TensorNode> node)
      : node_(std::move(node)) {}
  const std::shared_ptr<detail::TensorNode>& node() const { return node_; }

 private:
  std::shared_ptr<detail::TensorNode> node_;
};

// Primitive operations. Each records a backward closure when any input
// requires grad.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor divide(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
/// Adds a 1xC row vector to every row of an RxC matrix (bias add).
Tensor add_rowvec(const Tensor& m, const Tensor& v);
/// Horizontal concatenation: [a | b], equal row counts.
Tensor concat_cols(const Tensor& a, const Tensor& b);
Tensor relu(const Tensor& a);
/// exp with the exponent clamped to at most `cap` (overflow guard).
Tensor exp_clamped(const Tensor& a, double cap = 50.0);
Tensor sqrt_elem(const Tensor& a);
/// Divides every row by its sum. Rows must have strictly positive sums.
Tensor row_normalize(const Tensor& a);
Tensor col_normalize(const Tensor& a);
Tensor sum_all(const Tensor& a);
/// Column-wise mean: RxC -> 1xC.
Tensor mean_rows(const Tensor& a);

inline Tensor dot(const Tensor& a, const Tensor& b) {
  return sum_all(mul(a, b));
}

}  // namespace icgm

#include "icgm/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace icgm {
namespace detail {

struct TensorNode {
  int rows = 0;
  int cols = 0;
  std::shared_ptr<std::vector<double>> values;
  std::vector<double> grad;  // sized lazily, same length as values
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  // Propagates this node's grad into the parents' grads.
  std::function<void(TensorNode&)> backprop;

  int size() const { return rows * cols; }
  void ensure_grad() {
    if (grad.size() != static_cast<size_t>(size())) grad.assign(size(), 0.0);
  }
};

}  // namespace detail

using detail::TensorNode;

namespace {

using EMat =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Map = Eigen::Map<EMat>;
using CMap = Eigen::Map<const EMat>;

CMap as_mat(const TensorNode& n) {
  return CMap(n.values->data(), n.rows, n.cols);
}

Map grad_mat(TensorNode& n) {
  n.ensure_grad();
  return Map(n.grad.data(), n.rows, n.cols);
}

std::string shape_str(const TensorNode& n) {
  return "[" + std::to_string(n.rows) + "x" + std::to_string(n.cols) + "]";
}

std::shared_ptr<TensorNode> make_node(int rows, int cols) {
  if (rows <= 0 || cols <= 0)
    throw ShapeError("tensor dimensions must be positive, got [" +
                     std::to_string(rows) + "x" + std::to_string(cols) + "]");
  auto n = std::make_shared<TensorNode>();
  n->rows = rows;
  n->cols = cols;
  n->values = std::make_shared<std::vector<double>>(
      static_cast<size_t>(rows) * cols, 0.0);
  return n;
}

bool any_requires(std::initializer_list<const Tensor*> inputs) {
  for (const Tensor* t : inputs)
    if (t->node()->requires_grad) return true;
  return false;
}

// Builds the result node for an op and wires parents/backprop only when a
// gradient is actually needed; inference stays tape-free.
std::shared_ptr<TensorNode> make_result(
    int rows, int cols, std::initializer_list<const Tensor*> inputs,
    std::function<void(TensorNode&)> backprop) {
  auto out = make_node(rows, cols);
  if (any_requires(inputs)) {
    out->requires_grad = true;
    for (const Tensor* t : inputs) out->parents.push_back(t->node());
    out->backprop = std::move(backprop);
  }
  return out;
}

void check_same_shape(const TensorNode& a, const TensorNode& b,
                      const char* op) {
  if (a.rows != b.rows || a.cols != b.cols)
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) +
                     " vs " + shape_str(b));
}

}  // namespace

Tensor Tensor::zeros(int rows, int cols, bool requires_grad) {
  auto n = make_node(rows, cols);
  n->requires_grad = requires_grad;
  return Tensor(n);
}

Tensor Tensor::full(int rows, int cols, double value) {
  auto n = make_node(rows, cols);
  std::fill(n->values->begin(), n->values->end(), value);
  return Tensor(n);
}

Tensor Tensor::from_values(int rows, int cols, std::vector<double> values,
                           bool requires_grad) {
  auto n = make_node(rows, cols);
  if (values.size() != static_cast<size_t>(n->size()))
    throw ShapeError("from_values: " + std::to_string(values.size()) +
                     " values for shape " + shape_str(*n));
  *n->values = std::move(values);
  n->requires_grad = requires_grad;
  return Tensor(n);
}

Tensor Tensor::scalar(double value) { return full(1, 1, value); }

Tensor Tensor::alias(const Tensor& other, bool requires_grad) {
  auto n = std::make_shared<TensorNode>();
  n->rows = other.rows();
  n->cols = other.cols();
  n->values = other.node()->values;
  n->requires_grad = requires_grad;
  return Tensor(n);
}

int Tensor::rows() const { return node_->rows; }
int Tensor::cols() const { return node_->cols; }

double Tensor::at(int r, int c) const {
  return (*node_->values)[static_cast<size_t>(r) * node_->cols + c];
}

double& Tensor::at_mut(int r, int c) {
  return (*node_->values)[static_cast<size_t>(r) * node_->cols + c];
}

double Tensor::scalar_value() const {
  if (node_->size() != 1)
    throw ShapeError("scalar_value on non-scalar " + shape_str(*node_));
  return (*node_->values)[0];
}

std::span<const double> Tensor::values() const {
  return {node_->values->data(), node_->values->size()};
}

std::span<double> Tensor::values_mut() {
  return {node_->values->data(), node_->values->size()};
}

bool Tensor::requires_grad() const { return node_->requires_grad; }

bool Tensor::has_grad() const {
  return node_->grad.size() == static_cast<size_t>(node_->size());
}

std::span<const double> Tensor::grad() const {
  if (!has_grad())
    throw NumericError("grad requested but backward never reached this leaf");
  return {node_->grad.data(), node_->grad.size()};
}

std::span<double> Tensor::grad_mut() {
  node_->ensure_grad();
  return {node_->grad.data(), node_->grad.size()};
}

void Tensor::zero_grad() { node_->grad.clear(); }

bool Tensor::all_finite() const {
  for (double v : *node_->values)
    if (!std::isfinite(v)) return false;
  return true;
}

void Tensor::backward() const {
  if (!defined() || node_->size() != 1)
    throw NumericError("backward requires a scalar (1x1) output");
  if (node_->parents.empty() && !node_->requires_grad)
    throw NumericError("backward on a tensor with no recorded operations");
  // Iterative post-order DFS for a topological ordering.
  std::vector<TensorNode*> order;
  std::unordered_set<TensorNode*> visited;
  std::vector<std::pair<TensorNode*, size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, idx] = stack.back();
    if (idx < n->parents.size()) {
      TensorNode* p = n->parents[idx++].get();
      if (visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  node_->ensure_grad();
  node_->grad[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorNode* n = *it;
    if (n->backprop && n->grad.size() == static_cast<size_t>(n->size()))
      n->backprop(*n);
  }
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  auto& an = *a.node();
  auto& bn = *b.node();
  if (an.cols != bn.rows)
    throw ShapeError("matmul: inner dimensions disagree, " + shape_str(an) +
                     " x " + shape_str(bn));
  auto out = make_result(
      an.rows, bn.cols, {&a, &b}, [a = a.node(), b = b.node()](TensorNode& o) {
        CMap g(o.grad.data(), o.rows, o.cols);
        if (a->requires_grad) grad_mat(*a).noalias() += g * as_mat(*b).transpose();
        if (b->requires_grad) grad_mat(*b).noalias() += as_mat(*a).transpose() * g;
      });
  Map(out->values->data(), out->rows, out->cols).noalias() =
      as_mat(an) * as_mat(bn);
  return Tensor(out);
}

Tensor transpose(const Tensor& a) {
  auto& an = *a.node();
  auto out = make_result(an.cols, an.rows, {&a}, [a = a.node()](TensorNode& o) {
    grad_mat(*a) += CMap(o.grad.data(), o.rows, o.cols).transpose();
  });
  Map(out->values->data(), out->rows, out->cols) = as_mat(an).transpose();
  return Tensor(out);
}

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(*a.node(), *b.node(), "add");
  auto out = make_result(a.rows(), a.cols(), {&a, &b},
                         [a = a.node(), b = b.node()](TensorNode& o) {
                           if (a->requires_grad)
                             grad_mat(*a) += CMap(o.grad.data(), o.rows, o.cols);
                           if (b->requires_grad)
                             grad_mat(*b) += CMap(o.grad.data(), o.rows, o.cols);
                         });
  Map(out->values->data(), out->rows, out->cols) =
      as_mat(*a.node()) + as_mat(*b.node());
  return Tensor(out);
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(*a.node(), *b.node(), "sub");
  auto out = make_result(a.rows(), a.cols(), {&a, &b},
                         [a = a.node(), b = b.node()](TensorNode& o) {
                           if (a->requires_grad)
                             grad_mat(*a) += CMap(o.grad.data(), o.rows, o.cols);
                           if (b->requires_grad)
                             grad_mat(*b) -= CMap(o.grad.data(), o.rows, o.cols);
                         });
  Map(out->values->data(), out->rows, out->cols) =
      as_mat(*a.node()) - as_mat(*b.node());
  return Tensor(out);
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(*a.node(), *b.node(), "mul");
  auto out = make_result(
      a.rows(), a.cols(), {&a, &b}, [a = a.node(), b = b.node()](TensorNode& o) {
        CMap g(o.grad.data(), o.rows, o.cols);
        if (a->requires_grad)
          grad_mat(*a) += g.cwiseProduct(as_mat(*b));
        if (b->requires_grad)
          grad_mat(*b) += g.cwiseProduct(as_mat(*a));
      });
  Map(out->values->data(), out->rows, out->cols) =
      as_mat(*a.node()).cwiseProduct(as_mat(*b.node()));
  return Tensor(out);
}

Tensor divide(const Tensor& a, const Tensor& b) {
  check_same_shape(*a.node(), *b.node(), "divide");
  for (double v : *b.node()->values)
    if (v == 0.0) throw NumericError("divide: zero denominator");
  auto out = make_result(
      a.rows(), a.cols(), {&a, &b}, [a = a.node(), b = b.node()](TensorNode& o) {
        CMap g(o.grad.data(), o.rows, o.cols);
        auto bm = as_mat(*b);
        if (a->requires_grad) grad_mat(*a) += g.cwiseQuotient(bm);
        if (b->requires_grad)
          grad_mat(*b) -= g.cwiseProduct(as_mat(*a))
                              .cwiseQuotient(bm.cwiseProduct(bm));
      });
  Map(out->values->data(), out->rows, out->cols) =
      as_mat(*a.node()).cwiseQuotient(as_mat(*b.node()));
  return Tensor(out);
}

Tensor scale(const Tensor& a, double c) {
  auto out = make_result(a.rows(), a.cols(), {&a}, [a = a.node(), c](TensorNode& o) {
    grad_mat(*a) += c * CMap(o.grad.data(), o.rows, o.cols);
  });
  Map(out->values->data(), out->rows, out->cols) = c * as_mat(*a.node());
  return Tensor(out);
}

Tensor add_rowvec(const Tensor& m, const Tensor& v) {
  auto& mn = *m.node();
  auto& vn = *v.node();
  if (vn.rows != 1 || vn.cols != mn.cols)
    throw ShapeError("add_rowvec: " + shape_str(mn) + " + " + shape_str(vn));
  auto out = make_result(
      mn.rows, mn.cols, {&m, &v}, [m = m.node(), v = v.node()](TensorNode& o) {
        CMap g(o.grad.data(), o.rows, o.cols);
        if (m->requires_grad) grad_mat(*m) += g;
        if (v->requires_grad) grad_mat(*v) += g.colwise().sum();
      });
  Map(out->values->data(), out->rows, out->cols) =
      as_mat(mn).rowwise() + as_mat(vn).row(0);
  return Tensor(out);
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
  auto& an = *a.node();
  auto& bn = *b.node();
  if (an.rows != bn.rows)
    throw ShapeError("concat_cols: row counts differ, " + shape_str(an) +
                     " | " + shape_str(bn));
  auto out = make_result(
      an.rows, an.cols + bn.cols, {&a, &b},
      [a = a.node(), b = b.node()](TensorNode& o) {
        CMap g(o.grad.data(), o.rows, o.cols);
        if (a->requires_grad) grad_mat(*a) += g.leftCols(a->cols);
        if (b->requires_grad) grad_mat(*b) += g.rightCols(b->cols);
      });
  Map om(out->values->data(), out->rows, out->cols);
  om.leftCols(an.cols) = as_mat(an);
  om.rightCols(bn.cols) = as_mat(bn);
  return Tensor(out);
}

Tensor relu(const Tensor& a) {
  auto out = make_result(a.rows(), a.cols(), {&a}, [a = a.node()](TensorNode& o) {
    auto g = grad_mat(*a);
    for (int i = 0; i < o.size(); ++i)
      if ((*o.values)[i] > 0.0) g.data()[i] += o.grad[i];
  });
  const auto& av = *a.node()->values;
  auto& ov = *out->values;
  for (size_t i = 0; i < av.size(); ++i) ov[i] = av[i] > 0.0 ? av[i] : 0.0;
  return Tensor(out);
}

Tensor exp_clamped(const Tensor& a, double cap) {
  auto out = make_result(
      a.rows(), a.cols(), {&a}, [a = a.node(), cap](TensorNode& o) {
        auto g = grad_mat(*a);
        const auto& av = *a->values;
        for (int i = 0; i < o.size(); ++i)
          if (av[i] <= cap && av[i] >= -cap)
            g.data()[i] += o.grad[i] * (*o.values)[i];
        // outside [-cap, cap] the output is constant, gradient is zero
      });
  const auto& av = *a.node()->values;
  auto& ov = *out->values;
  // The lower clamp keeps exp strictly positive: unguarded exponents below
  // roughly -745 underflow to exactly zero, which Sinkhorn rejects.
  for (size_t i = 0; i < av.size(); ++i)
    ov[i] = std::exp(std::clamp(av[i], -cap, cap));
  return Tensor(out);
}

Tensor sqrt_elem(const Tensor& a) {
  for (double v : *a.node()->values)
    if (v < 0.0) throw NumericError("sqrt_elem: negative input");
  auto out = make_result(a.rows(), a.cols(), {&a}, [a = a.node()](TensorNode& o) {
    auto g = grad_mat(*a);
    for (int i = 0; i < o.size(); ++i)
      g.data()[i] += o.grad[i] * 0.5 / (*o.values)[i];
  });
  const auto& av = *a.node()->values;
  auto& ov = *out->values;
  for (size_t i = 0; i < av.size(); ++i) ov[i] = std::sqrt(av[i]);
  return Tensor(out);
}

namespace {

// Shared by row_normalize / col_normalize; `rowwise` picks the axis.
// For Y_ij = X_ij / r_i:  dX_ij = (dY_ij - sum_k dY_ik Y_ik) / r_i.
Tensor normalize_axis(const Tensor& a, bool rowwise, const char* opname) {
  auto& an = *a.node();
  Eigen::VectorXd sums;
  if (rowwise)
    sums = as_mat(an).rowwise().sum();
  else
    sums = as_mat(an).colwise().sum().transpose();
  for (int i = 0; i < sums.size(); ++i)
    if (!(sums[i] > 0.0))
      throw NumericError(std::string(opname) +
                         ": nonpositive slice sum (entries must be > 0)");
  auto out = make_result(
      an.rows, an.cols, {&a}, [a = a.node(), rowwise, sums](TensorNode& o) {
        CMap g(o.grad.data(), o.rows, o.cols);
        CMap y(o.values->data(), o.rows, o.cols);
        auto ag = grad_mat(*a);
        if (rowwise) {
          Eigen::VectorXd gy = g.cwiseProduct(y).rowwise().sum();
          ag += ((g.colwise() - gy).array().colwise() / sums.array()).matrix();
        } else {
          Eigen::RowVectorXd gy = g.cwiseProduct(y).colwise().sum();
          ag += ((g.rowwise() - gy).array().rowwise() /
                 sums.transpose().array())
                    .matrix();
        }
      });
  Map om(out->values->data(), out->rows, out->cols);
  if (rowwise)
    om = as_mat(an).array().colwise() / sums.array();
  else
    om = as_mat(an).array().rowwise() / sums.transpose().array();
  return Tensor(out);
}

}  // namespace

Tensor row_normalize(const Tensor& a) {
  return normalize_axis(a, true, "row_normalize");
}

Tensor col_normalize(const Tensor& a) {
  return normalize_axis(a, false, "col_normalize");
}

Tensor sum_all(const Tensor& a) {
  auto out = make_result(1, 1, {&a}, [a = a.node()](TensorNode& o) {
    grad_mat(*a).array() += o.grad[0];
  });
  (*out->values)[0] = as_mat(*a.node()).sum();
  return Tensor(out);
}

Tensor mean_rows(const Tensor& a) {
  auto& an = *a.node();
  const double inv_n = 1.0 / an.rows;
  auto out = make_result(1, an.cols, {&a}, [a = a.node(), inv_n](TensorNode& o) {
    grad_mat(*a).rowwise() += inv_n * CMap(o.grad.data(), 1, o.cols).row(0);
  });
  Map(out->values->data(), 1, an.cols) = as_mat(an).colwise().mean();
  return Tensor(out);
}

}  // namespace icgm

#pragma once

// Dense 64-bit-float tensors with define-by-run reverse-mode autodiff.
// Graphs are built per forward pass; backward walks nodes in reverse
// creation order, so gradient accumulation is deterministic. Single-writer
// per graph; frozen tensors may be read concurrently.

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "khpn/errors.hpp"

namespace khpn {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

struct TensorNode {
  Shape shape;
  std::vector<double> value;  // row-major, length == product(shape)
  std::vector<double> grad;   // empty until needed, then same length as value
  bool requires_grad = false;
  bool backward_ran = false;  // set on the node backward() was invoked on
  uint64_t seq = 0;           // creation order, drives backward scheduling
  std::vector<std::shared_ptr<TensorNode>> parents;
  // Propagates this->grad into parents' grads. Null on leaves.
  std::function<void(TensorNode&)> backprop;

  void ensure_grad();  // allocate zero-filled grad if absent
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorNode> node) : n(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double v, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> data,
                          bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);

  bool defined() const { return n != nullptr; }
  const Shape& shape() const { return n->shape; }
  int rank() const { return static_cast<int>(n->shape.size()); }
  int64_t dim(int i) const { return n->shape.at(i); }
  int64_t numel() const { return static_cast<int64_t>(n->value.size()); }
  const std::vector<double>& data() const { return n->value; }
  // Leaf-value mutation (parameter updates, finite differencing). Only
  // meaningful on leaves: downstream nodes hold materialized values.
  std::vector<double>& mutable_data() { return n->value; }
  bool requires_grad() const { return n->requires_grad; }
  // Gradient view; allocates zeros on demand for requires_grad tensors.
  const std::vector<double>& grad() const;
  void zero_grad();
  double item() const;  // scalar extraction

  std::shared_ptr<TensorNode> n;
};

// Disables graph construction on this thread for its lifetime (evaluation
// and finite-difference passes that only need values).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// Low-level constructor for differentiable ops defined outside tensor.cpp.
// `backprop` receives the finished node (grad filled) and must accumulate
// into parents' grads (call ensure_grad on each parent it touches).
Tensor custom_op(Shape out_shape, std::vector<double> value,
                 std::vector<Tensor> inputs,
                 std::function<void(TensorNode&)> backprop);

// ---- op-tag dispatch surface --------------------------------------------
enum class EwOp { add, sub, mul, neg, exp, silu };
enum class ReduceOp { max, mean, sum };

Tensor elementwise(EwOp op, const Tensor& a);                   // unary tags
Tensor elementwise(EwOp op, const Tensor& a, const Tensor& b);  // binary tags
Tensor reduce(ReduceOp op, const Tensor& a, int axis, bool keepdim = false);

// ---- named ops -----------------------------------------------------------
// Binary ops broadcast with trailing-dimension alignment (sizes equal or 1).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor silu(const Tensor& a);
Tensor add_scalar(const Tensor& a, double s);
Tensor mul_scalar(const Tensor& a, double s);

Tensor matmul(const Tensor& a, const Tensor& b);     // [m,k] x [k,n]
Tensor matmul_nt(const Tensor& a, const Tensor& bt); // [m,k] x ([n,k])^T

Tensor reduce_max(const Tensor& a, int axis, bool keepdim = false);
Tensor reduce_mean(const Tensor& a, int axis, bool keepdim = false);
Tensor reduce_sum(const Tensor& a, int axis, bool keepdim = false);
Tensor sum_all(const Tensor& a);  // -> scalar

Tensor reshape(const Tensor& a, Shape shape);
Tensor gather_rows(const Tensor& a, const std::vector<int64_t>& idx);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);

// 1-D "same" convolution over the middle axis of [B,L,Cin] with a single
// output channel: out[b,l] = bias + sum_{o,c} w[o,c] * xpad[b, l+o-kw/2, c].
Tensor conv1d_same(const Tensor& x, const Tensor& w, const Tensor& bias);

// ---- backward ------------------------------------------------------------
// Seeds d(loss)/d(loss) = 1 and accumulates gradients into every
// requires_grad ancestor. Calling twice on one node without rebuilding the
// graph is a contract error.
void backward(const Tensor& loss);

// ---- verification helpers --------------------------------------------------
// Max over components of |analytic - central difference| /
// max(|analytic|, |numeric|, 1e-8). f must map x to a scalar tensor and be
// pure given x's current values. Throws NumericError (with the component
// index) if f is non-finite at a perturbed point.
double grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor& x,
                  double eps);
// Same, restricted to the given component indices.
double grad_check_at(const std::function<Tensor(const Tensor&)>& f, Tensor& x,
                     double eps, const std::vector<int64_t>& indices);

// Raw GEMM entry points shared by the forward/backward paths (row-major).
// c = alpha * op(a) x op(b) + beta * c, where op transposes when flagged.
void gemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k,
          double alpha, const double* a, int64_t lda, const double* b,
          int64_t ldb, double beta, double* c, int64_t ldc);

}  // namespace khpn

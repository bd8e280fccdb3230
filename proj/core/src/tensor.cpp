#include "khpn/tensor.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstring>
#include <numeric>
#include <unordered_set>

#ifdef KHPN_HAVE_CBLAS
#include <cblas.h>
#endif

namespace khpn {

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

void TensorNode::ensure_grad() {
  if (grad.empty()) grad.assign(value.size(), 0.0);
}

namespace {

std::atomic<uint64_t> g_seq{1};

thread_local bool g_grad_enabled = true;

std::shared_ptr<TensorNode> new_node(Shape shape, std::vector<double> value,
                                     bool requires_grad) {
  for (int64_t d : shape)
    if (d <= 0)
      throw ShapeError("tensor: non-positive dimension in " + shape_str(shape));
  if (shape_numel(shape) != static_cast<int64_t>(value.size()))
    throw ShapeError("tensor: shape " + shape_str(shape) + " wants " +
                     std::to_string(shape_numel(shape)) + " values, got " +
                     std::to_string(value.size()));
  for (int64_t d : shape)
    if (d <= 0)
      throw ShapeError("tensor: non-positive dimension in " + shape_str(shape));
  auto n = std::make_shared<TensorNode>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  n->seq = g_seq.fetch_add(1, std::memory_order_relaxed);
  return n;
}

bool wants_grad(const std::vector<Tensor>& inputs) {
  if (!g_grad_enabled) return false;
  for (const auto& t : inputs)
    if (t.n && t.n->requires_grad) return true;
  return false;
}

double sigmoid_s(double x) {
  if (x >= 0) {
    double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double v, bool requires_grad) {
  for (int64_t d : shape)
    if (d <= 0)
      throw ShapeError("tensor: non-positive dimension in " + shape_str(shape));
  auto n = shape_numel(shape);
  return Tensor(
      new_node(std::move(shape), std::vector<double>(n, v), requires_grad));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data,
                         bool requires_grad) {
  return Tensor(new_node(std::move(shape), std::move(data), requires_grad));
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  return from_data({1}, {v}, requires_grad);
}

const std::vector<double>& Tensor::grad() const {
  if (n->requires_grad) n->ensure_grad();
  return n->grad;
}

void Tensor::zero_grad() {
  n->ensure_grad();
  std::fill(n->grad.begin(), n->grad.end(), 0.0);
}

double Tensor::item() const {
  if (numel() != 1)
    throw ContractError("item: tensor of shape " + shape_str(n->shape) +
                        " is not a scalar");
  return n->value[0];
}

Tensor custom_op(Shape out_shape, std::vector<double> value,
                 std::vector<Tensor> inputs,
                 std::function<void(TensorNode&)> backprop) {
  bool rg = wants_grad(inputs);
  auto node = new_node(std::move(out_shape), std::move(value), rg);
  if (rg) {
    node->parents.reserve(inputs.size());
    for (auto& t : inputs) node->parents.push_back(t.n);
    node->backprop = std::move(backprop);
  }
  return Tensor(std::move(node));
}

// ---- GEMM ------------------------------------------------------------------

#ifdef KHPN_HAVE_CBLAS
void gemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k,
          double alpha, const double* a, int64_t lda, const double* b,
          int64_t ldb, double beta, double* c, int64_t ldc) {
  cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, static_cast<int>(m),
              static_cast<int>(n), static_cast<int>(k), alpha, a,
              static_cast<int>(lda), b, static_cast<int>(ldb), beta, c,
              static_cast<int>(ldc));
}
#else
void gemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k,
          double alpha, const double* a, int64_t lda, const double* b,
          int64_t ldb, double beta, double* c, int64_t ldc) {
  auto A = [&](int64_t i, int64_t p) {
    return trans_a ? a[p * lda + i] : a[i * lda + p];
  };
  auto B = [&](int64_t p, int64_t j) {
    return trans_b ? b[j * ldb + p] : b[p * ldb + j];
  };
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int64_t p = 0; p < k; ++p) acc += A(i, p) * B(p, j);
      c[i * ldc + j] = alpha * acc + beta * c[i * ldc + j];
    }
}
#endif

// ---- broadcasting machinery --------------------------------------------

namespace {

Shape broadcast_shape(const Shape& a, const Shape& b) {
  size_t ra = a.size(), rb = b.size(), r = std::max(ra, rb);
  Shape out(r);
  for (size_t i = 0; i < r; ++i) {
    int64_t da = i < ra ? a[ra - 1 - i] : 1;
    int64_t db = i < rb ? b[rb - 1 - i] : 1;
    if (da != db && da != 1 && db != 1)
      throw ShapeError("broadcast: incompatible shapes " + shape_str(a) +
                       " and " + shape_str(b));
    out[r - 1 - i] = std::max(da, db);
  }
  return out;
}

// Strides of `s` positioned inside broadcast result shape `r` (0 where the
// dimension is broadcast).
std::vector<int64_t> broadcast_strides(const Shape& s, const Shape& r) {
  std::vector<int64_t> st(r.size(), 0);
  int64_t stride = 1;
  for (size_t i = 0; i < s.size(); ++i) {
    size_t rd = r.size() - 1 - i;
    size_t sd = s.size() - 1 - i;
    st[rd] = (s[sd] == 1 && r[rd] != 1) ? 0 : stride;
    stride *= s[sd];
  }
  return st;
}

// Result dims fused wherever both operands stay contiguous across a
// dimension boundary: {length, a-stride, b-stride}, outermost first. Equal
// shapes collapse to one flat dim; bias rows, gating columns, and the
// [M,1,C]/[M,k,1] attention patterns collapse to two or three.
std::vector<std::array<int64_t, 3>> fuse_broadcast(
    const Shape& rshape, const std::vector<int64_t>& sa,
    const std::vector<int64_t>& sb) {
  std::vector<std::array<int64_t, 3>> dims;
  for (size_t d = 0; d < rshape.size(); ++d) {
    int64_t len = rshape[d], da = sa[d], db = sb[d];
    if (len == 1) continue;
    if (!dims.empty() && dims.back()[1] == da * len &&
        dims.back()[2] == db * len) {
      dims.back() = {dims.back()[0] * len, da, db};
    } else {
      dims.push_back({len, da, db});
    }
  }
  if (dims.empty()) dims.push_back({1, 0, 0});
  return dims;
}

template <typename F>
void fused_walk_rec(const std::array<int64_t, 3>* d, size_t nd, int64_t& i,
                    int64_t oa, int64_t ob, F& fn) {
  const int64_t len = (*d)[0], da = (*d)[1], db = (*d)[2];
  if (nd == 1) {
    for (int64_t j = 0; j < len; ++j) {
      fn(i, oa, ob);
      ++i;
      oa += da;
      ob += db;
    }
    return;
  }
  for (int64_t j = 0; j < len; ++j) {
    fused_walk_rec(d + 1, nd - 1, i, oa, ob, fn);
    oa += da;
    ob += db;
  }
}

// Walks every element of the result shape, handing (out_index, a_off, b_off)
// to fn. Deterministic ascending order, identical to a plain odometer over
// rshape; the fused form only removes per-element counter bookkeeping.
template <typename F>
void broadcast_walk(const Shape& rshape, const std::vector<int64_t>& sa,
                    const std::vector<int64_t>& sb, F&& fn) {
  auto dims = fuse_broadcast(rshape, sa, sb);
  int64_t i = 0;
  fused_walk_rec(dims.data(), dims.size(), i, 0, 0, fn);
}

enum class BinKind { add, sub, mul };

Tensor binary_broadcast(BinKind kind, const Tensor& a, const Tensor& b) {
  const auto& as = a.shape();
  const auto& bs = b.shape();
  Shape rs = broadcast_shape(as, bs);
  int64_t n = shape_numel(rs);
  std::vector<double> out(n);

  const double* av = a.data().data();
  const double* bv = b.data().data();
  if (as == bs) {  // fast path, also guarantees bitwise add-commutativity
    switch (kind) {
      case BinKind::add:
        for (int64_t i = 0; i < n; ++i) out[i] = av[i] + bv[i];
        break;
      case BinKind::sub:
        for (int64_t i = 0; i < n; ++i) out[i] = av[i] - bv[i];
        break;
      case BinKind::mul:
        for (int64_t i = 0; i < n; ++i) out[i] = av[i] * bv[i];
        break;
    }
  } else {
    auto sa = broadcast_strides(as, rs);
    auto sb = broadcast_strides(bs, rs);
    switch (kind) {
      case BinKind::add:
        broadcast_walk(rs, sa, sb, [&](int64_t i, int64_t oa, int64_t ob) {
          out[i] = av[oa] + bv[ob];
        });
        break;
      case BinKind::sub:
        broadcast_walk(rs, sa, sb, [&](int64_t i, int64_t oa, int64_t ob) {
          out[i] = av[oa] - bv[ob];
        });
        break;
      case BinKind::mul:
        broadcast_walk(rs, sa, sb, [&](int64_t i, int64_t oa, int64_t ob) {
          out[i] = av[oa] * bv[ob];
        });
        break;
    }
  }

  Shape rshape = rs;
  return custom_op(std::move(rs), std::move(out), {a, b},
                   [kind, rshape](TensorNode& nd) {
                     auto& pa = *nd.parents[0];
                     auto& pb = *nd.parents[1];
                     const double* g = nd.grad.data();
                     auto sa = broadcast_strides(pa.shape, rshape);
                     auto sb = broadcast_strides(pb.shape, rshape);
                     if (pa.requires_grad) {
                       pa.ensure_grad();
                       double* ga = pa.grad.data();
                       const double* bv = pb.value.data();
                       switch (kind) {
                         case BinKind::add:
                         case BinKind::sub:
                           broadcast_walk(rshape, sa, sb,
                                          [&](int64_t i, int64_t oa, int64_t) {
                                            ga[oa] += g[i];
                                          });
                           break;
                         case BinKind::mul:
                           broadcast_walk(rshape, sa, sb,
                                          [&](int64_t i, int64_t oa, int64_t ob) {
                                            ga[oa] += g[i] * bv[ob];
                                          });
                           break;
                       }
                     }
                     if (pb.requires_grad) {
                       pb.ensure_grad();
                       double* gb = pb.grad.data();
                       const double* av = pa.value.data();
                       switch (kind) {
                         case BinKind::add:
                           broadcast_walk(rshape, sa, sb,
                                          [&](int64_t i, int64_t, int64_t ob) {
                                            gb[ob] += g[i];
                                          });
                           break;
                         case BinKind::sub:
                           broadcast_walk(rshape, sa, sb,
                                          [&](int64_t i, int64_t, int64_t ob) {
                                            gb[ob] -= g[i];
                                          });
                           break;
                         case BinKind::mul:
                           broadcast_walk(rshape, sa, sb,
                                          [&](int64_t i, int64_t oa, int64_t ob) {
                                            gb[ob] += g[i] * av[oa];
                                          });
                           break;
                       }
                     }
                   });
}

Tensor unary_map(const Tensor& a, double (*f)(double), double (*df)(double)) {
  int64_t n = a.numel();
  std::vector<double> out(n);
  const double* av = a.data().data();
  for (int64_t i = 0; i < n; ++i) out[i] = f(av[i]);
  return custom_op(a.shape(), std::move(out), {a}, [df](TensorNode& nd) {
    auto& p = *nd.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    const double* g = nd.grad.data();
    const double* xv = p.value.data();
    double* pg = p.grad.data();
    for (size_t i = 0; i < nd.value.size(); ++i) pg[i] += g[i] * df(xv[i]);
  });
}

}  // namespace

// ---- named elementwise ops -----------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_broadcast(BinKind::add, a, b);
}
Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_broadcast(BinKind::sub, a, b);
}
Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_broadcast(BinKind::mul, a, b);
}

Tensor neg(const Tensor& a) {
  return unary_map(
      a, [](double x) { return -x; }, [](double) { return -1.0; });
}

Tensor exp(const Tensor& a) {
  int64_t n = a.numel();
  std::vector<double> out(static_cast<size_t>(n));
  const double* av = a.data().data();
  for (int64_t i = 0; i < n; ++i) out[static_cast<size_t>(i)] = std::exp(av[i]);
  // The derivative of exp is its own forward value.
  return custom_op(a.shape(), std::move(out), {a}, [](TensorNode& nd) {
    auto& p = *nd.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    const double* g = nd.grad.data();
    const double* y = nd.value.data();
    double* pg = p.grad.data();
    for (size_t i = 0; i < nd.value.size(); ++i) pg[i] += g[i] * y[i];
  });
}

Tensor log(const Tensor& a) {
  return unary_map(
      a, [](double x) { return std::log(x); },
      [](double x) { return 1.0 / x; });
}

Tensor sigmoid(const Tensor& a) {
  int64_t n = a.numel();
  std::vector<double> out(static_cast<size_t>(n));
  const double* av = a.data().data();
  for (int64_t i = 0; i < n; ++i)
    out[static_cast<size_t>(i)] = sigmoid_s(av[i]);
  // s(1-s), with s taken from the forward value: no exp in the backward pass.
  return custom_op(a.shape(), std::move(out), {a}, [](TensorNode& nd) {
    auto& p = *nd.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    const double* g = nd.grad.data();
    const double* y = nd.value.data();
    double* pg = p.grad.data();
    for (size_t i = 0; i < nd.value.size(); ++i) {
      double s = y[i];
      pg[i] += g[i] * (s * (1.0 - s));
    }
  });
}

Tensor silu(const Tensor& a) {
  int64_t n = a.numel();
  std::vector<double> out(static_cast<size_t>(n));
  // x*s(x) is not invertible for s near x == 0, so the sigmoid factors are
  // kept for the backward pass instead of being recomputed from exp.
  auto sig = std::make_shared<std::vector<double>>(static_cast<size_t>(n));
  const double* av = a.data().data();
  double* sv = sig->data();
  for (int64_t i = 0; i < n; ++i) {
    double s = sigmoid_s(av[i]);
    sv[i] = s;
    out[static_cast<size_t>(i)] = av[i] * s;
  }
  return custom_op(a.shape(), std::move(out), {a}, [sig](TensorNode& nd) {
    auto& p = *nd.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    const double* g = nd.grad.data();
    const double* xv = p.value.data();
    const double* sv = sig->data();
    double* pg = p.grad.data();
    for (size_t i = 0; i < nd.value.size(); ++i) {
      double s = sv[i];
      pg[i] += g[i] * (s * (1.0 + xv[i] * (1.0 - s)));
    }
  });
}

Tensor add_scalar(const Tensor& a, double s) {
  int64_t n = a.numel();
  std::vector<double> out(n);
  const double* av = a.data().data();
  for (int64_t i = 0; i < n; ++i) out[i] = av[i] + s;
  return custom_op(a.shape(), std::move(out), {a}, [](TensorNode& nd) {
    auto& p = *nd.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (size_t i = 0; i < nd.value.size(); ++i) p.grad[i] += nd.grad[i];
  });
}

Tensor mul_scalar(const Tensor& a, double s) {
  int64_t n = a.numel();
  std::vector<double> out(n);
  const double* av = a.data().data();
  for (int64_t i = 0; i < n; ++i) out[i] = av[i] * s;
  return custom_op(a.shape(), std::move(out), {a}, [s](TensorNode& nd) {
    auto& p = *nd.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (size_t i = 0; i < nd.value.size(); ++i) p.grad[i] += nd.grad[i] * s;
  });
}

// ---- op-tag dispatchers -----------------------------------------------------

Tensor elementwise(EwOp op, const Tensor& a) {
  switch (op) {
    case EwOp::neg:
      return neg(a);
    case EwOp::exp:
      return exp(a);
    case EwOp::silu:
      return silu(a);
    default:
      throw ContractError("elementwise: binary op-tag used without second operand");
  }
}

Tensor elementwise(EwOp op, const Tensor& a, const Tensor& b) {
  switch (op) {
    case EwOp::add:
      return add(a, b);
    case EwOp::sub:
      return sub(a, b);
    case EwOp::mul:
      return mul(a, b);
    default:
      throw ContractError("elementwise: unary op-tag used with two operands");
  }
}

Tensor reduce(ReduceOp op, const Tensor& a, int axis, bool keepdim) {
  switch (op) {
    case ReduceOp::max:
      return reduce_max(a, axis, keepdim);
    case ReduceOp::mean:
      return reduce_mean(a, axis, keepdim);
    case ReduceOp::sum:
      return reduce_sum(a, axis, keepdim);
  }
  throw ContractError("reduce: unknown op-tag");
}

// ---- matmul -----------------------------------------------------------------

namespace {
void check_matmul(const Tensor& a, const Tensor& b, int64_t ka, int64_t kb,
                  const char* name) {
  if (a.rank() != 2 || b.rank() != 2)
    throw ShapeError(std::string(name) + ": operands must be matrices, got " +
                     shape_str(a.shape()) + " and " + shape_str(b.shape()));
  if (ka != kb)
    throw ShapeError(std::string(name) + ": inner dimensions disagree for " +
                     shape_str(a.shape()) + " and " + shape_str(b.shape()));
}
}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_matmul(a, b, a.dim(1), b.dim(0), "matmul");
  int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n);
  gemm(false, false, m, n, k, 1.0, a.data().data(), k, b.data().data(), n, 0.0,
       out.data(), n);
  return custom_op({m, n}, std::move(out), {a, b}, [m, n, k](TensorNode& nd) {
    auto& pa = *nd.parents[0];
    auto& pb = *nd.parents[1];
    if (pa.requires_grad) {
      pa.ensure_grad();  // dA += dC * B^T
      gemm(false, true, m, k, n, 1.0, nd.grad.data(), n, pb.value.data(), n,
           1.0, pa.grad.data(), k);
    }
    if (pb.requires_grad) {
      pb.ensure_grad();  // dB += A^T * dC
      gemm(true, false, k, n, m, 1.0, pa.value.data(), k, nd.grad.data(), n,
           1.0, pb.grad.data(), n);
    }
  });
}

Tensor matmul_nt(const Tensor& a, const Tensor& bt) {
  check_matmul(a, bt, a.dim(1), bt.dim(1), "matmul_nt");
  int64_t m = a.dim(0), k = a.dim(1), n = bt.dim(0);
  std::vector<double> out(m * n);
  gemm(false, true, m, n, k, 1.0, a.data().data(), k, bt.data().data(), k, 0.0,
       out.data(), n);
  return custom_op({m, n}, std::move(out), {a, bt}, [m, n, k](TensorNode& nd) {
    auto& pa = *nd.parents[0];
    auto& pb = *nd.parents[1];
    if (pa.requires_grad) {
      pa.ensure_grad();  // dA += dC * Bt
      gemm(false, false, m, k, n, 1.0, nd.grad.data(), n, pb.value.data(), k,
           1.0, pa.grad.data(), k);
    }
    if (pb.requires_grad) {
      pb.ensure_grad();  // dBt += dC^T * A
      gemm(true, false, n, k, m, 1.0, nd.grad.data(), n, pa.value.data(), k,
           1.0, pb.grad.data(), k);
    }
  });
}

// ---- reductions ------------------------------------------------------------

namespace {

struct AxisSplit {
  int64_t outer, n, inner;
  Shape out_shape;
};

AxisSplit split_axis(const Tensor& a, int axis, bool keepdim) {
  if (axis < 0 || axis >= a.rank())
    throw ShapeError("reduce: axis " + std::to_string(axis) +
                     " out of range for shape " + shape_str(a.shape()));
  AxisSplit s{1, a.dim(axis), 1, {}};
  for (int d = 0; d < axis; ++d) s.outer *= a.dim(d);
  for (int d = axis + 1; d < a.rank(); ++d) s.inner *= a.dim(d);
  for (int d = 0; d < a.rank(); ++d) {
    if (d == axis) {
      if (keepdim) s.out_shape.push_back(1);
    } else {
      s.out_shape.push_back(a.dim(d));
    }
  }
  if (s.out_shape.empty()) s.out_shape.push_back(1);
  return s;
}

}  // namespace

Tensor reduce_max(const Tensor& a, int axis, bool keepdim) {
  auto sp = split_axis(a, axis, keepdim);
  int64_t count = sp.outer * sp.inner;
  std::vector<double> out(count);
  // First-occurrence argmax positions, kept for the backward pass.
  auto arg = std::make_shared<std::vector<int64_t>>(count);
  const double* av = a.data().data();
  for (int64_t o = 0; o < sp.outer; ++o) {
    for (int64_t in = 0; in < sp.inner; ++in) {
      int64_t base = o * sp.n * sp.inner + in;
      double best = av[base];
      int64_t bestpos = base;
      for (int64_t j = 1; j < sp.n; ++j) {
        double v = av[base + j * sp.inner];
        if (v > best) {
          best = v;
          bestpos = base + j * sp.inner;
        }
      }
      out[o * sp.inner + in] = best;
      (*arg)[o * sp.inner + in] = bestpos;
    }
  }
  return custom_op(sp.out_shape, std::move(out), {a}, [arg](TensorNode& nd) {
    auto& p = *nd.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (size_t i = 0; i < nd.grad.size(); ++i)
      p.grad[(*arg)[i]] += nd.grad[i];
  });
}

Tensor reduce_sum(const Tensor& a, int axis, bool keepdim) {
  auto sp = split_axis(a, axis, keepdim);
  int64_t count = sp.outer * sp.inner;
  std::vector<double> out(count, 0.0);
  const double* av = a.data().data();
  for (int64_t o = 0; o < sp.outer; ++o)
    for (int64_t j = 0; j < sp.n; ++j) {
      int64_t base = o * sp.n * sp.inner + j * sp.inner;
      for (int64_t in = 0; in < sp.inner; ++in)
        out[o * sp.inner + in] += av[base + in];
    }
  int64_t nn = sp.n, inner = sp.inner, outer = sp.outer;
  return custom_op(sp.out_shape, std::move(out), {a},
                   [nn, inner, outer](TensorNode& nd) {
                     auto& p = *nd.parents[0];
                     if (!p.requires_grad) return;
                     p.ensure_grad();
                     for (int64_t o = 0; o < outer; ++o)
                       for (int64_t j = 0; j < nn; ++j)
                         for (int64_t in = 0; in < inner; ++in)
                           p.grad[o * nn * inner + j * inner + in] +=
                               nd.grad[o * inner + in];
                   });
}

Tensor reduce_mean(const Tensor& a, int axis, bool keepdim) {
  auto sp = split_axis(a, axis, keepdim);
  return mul_scalar(reduce_sum(a, axis, keepdim), 1.0 / double(sp.n));
}

Tensor sum_all(const Tensor& a) {
  double acc = 0.0;
  for (double v : a.data()) acc += v;
  return custom_op({1}, {acc}, {a}, [](TensorNode& nd) {
    auto& p = *nd.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    double g = nd.grad[0];
    for (auto& pg : p.grad) pg += g;
  });
}

// ---- structural ops --------------------------------------------------------

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel())
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                     shape_str(shape));
  std::vector<double> out = a.data();
  return custom_op(std::move(shape), std::move(out), {a}, [](TensorNode& nd) {
    auto& p = *nd.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (size_t i = 0; i < nd.grad.size(); ++i) p.grad[i] += nd.grad[i];
  });
}

Tensor gather_rows(const Tensor& a, const std::vector<int64_t>& idx) {
  if (a.rank() != 2)
    throw ShapeError("gather_rows: expected a matrix, got " +
                     shape_str(a.shape()));
  int64_t rows = a.dim(0), cols = a.dim(1);
  for (int64_t i : idx)
    if (i < 0 || i >= rows)
      throw ContractError("gather_rows: row index " + std::to_string(i) +
                          " out of range [0," + std::to_string(rows) + ")");
  int64_t m = static_cast<int64_t>(idx.size());
  std::vector<double> out(m * cols);
  const double* av = a.data().data();
  for (int64_t r = 0; r < m; ++r)
    std::memcpy(out.data() + r * cols, av + idx[r] * cols,
                sizeof(double) * cols);
  auto idx_copy = std::make_shared<std::vector<int64_t>>(idx);
  return custom_op({m, cols}, std::move(out), {a},
                   [idx_copy, cols](TensorNode& nd) {
                     auto& p = *nd.parents[0];
                     if (!p.requires_grad) return;
                     p.ensure_grad();
                     const auto& ix = *idx_copy;
                     for (size_t r = 0; r < ix.size(); ++r) {
                       double* dst = p.grad.data() + ix[r] * cols;
                       const double* src = nd.grad.data() + r * cols;
                       for (int64_t c = 0; c < cols; ++c) dst[c] += src[c];
                     }
                   });
}

namespace {
void check_concat(const std::vector<Tensor>& parts, const char* name) {
  if (parts.empty())
    throw ContractError(std::string(name) + ": empty part list");
  for (const auto& p : parts)
    if (p.rank() != 2)
      throw ShapeError(std::string(name) + ": expected matrices, got " +
                       shape_str(p.shape()));
}
}  // namespace

Tensor concat_rows(const std::vector<Tensor>& parts) {
  check_concat(parts, "concat_rows");
  int64_t cols = parts[0].dim(1), rows = 0;
  for (const auto& p : parts) {
    if (p.dim(1) != cols)
      throw ShapeError("concat_rows: column mismatch between " +
                       shape_str(parts[0].shape()) + " and " +
                       shape_str(p.shape()));
    rows += p.dim(0);
  }
  std::vector<double> out(rows * cols);
  int64_t at = 0;
  for (const auto& p : parts) {
    std::memcpy(out.data() + at, p.data().data(),
                sizeof(double) * p.data().size());
    at += p.numel();
  }
  return custom_op({rows, cols}, std::move(out), parts, [](TensorNode& nd) {
    int64_t at = 0;
    for (auto& pp : nd.parents) {
      if (pp->requires_grad) {
        pp->ensure_grad();
        for (size_t i = 0; i < pp->value.size(); ++i)
          pp->grad[i] += nd.grad[at + i];
      }
      at += static_cast<int64_t>(pp->value.size());
    }
  });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  check_concat(parts, "concat_cols");
  int64_t rows = parts[0].dim(0), cols = 0;
  for (const auto& p : parts) {
    if (p.dim(0) != rows)
      throw ShapeError("concat_cols: row mismatch between " +
                       shape_str(parts[0].shape()) + " and " +
                       shape_str(p.shape()));
    cols += p.dim(1);
  }
  std::vector<double> out(rows * cols);
  int64_t col_at = 0;
  for (const auto& p : parts) {
    int64_t pc = p.dim(1);
    const double* pv = p.data().data();
    for (int64_t r = 0; r < rows; ++r)
      std::memcpy(out.data() + r * cols + col_at, pv + r * pc,
                  sizeof(double) * pc);
    col_at += pc;
  }
  return custom_op({rows, cols}, std::move(out), parts,
                   [rows, cols](TensorNode& nd) {
                     int64_t col_at = 0;
                     for (auto& pp : nd.parents) {
                       int64_t pc = pp->shape[1];
                       if (pp->requires_grad) {
                         pp->ensure_grad();
                         for (int64_t r = 0; r < rows; ++r)
                           for (int64_t c = 0; c < pc; ++c)
                             pp->grad[r * pc + c] +=
                                 nd.grad[r * cols + col_at + c];
                       }
                       col_at += pc;
                     }
                   });
}

Tensor conv1d_same(const Tensor& x, const Tensor& w, const Tensor& bias) {
  if (x.rank() != 3)
    throw ShapeError("conv1d_same: expected [B,L,C] input, got " +
                     shape_str(x.shape()));
  if (w.rank() != 2 || w.dim(1) != x.dim(2))
    throw ShapeError("conv1d_same: kernel " + shape_str(w.shape()) +
                     " does not match input " + shape_str(x.shape()));
  if (bias.numel() != 1)
    throw ShapeError("conv1d_same: bias must be a scalar, got " +
                     shape_str(bias.shape()));
  int64_t B = x.dim(0), L = x.dim(1), C = x.dim(2), kw = w.dim(0);
  if (kw % 2 == 0)
    throw ContractError("conv1d_same: kernel width must be odd, got " +
                        std::to_string(kw));
  int64_t half = kw / 2;
  std::vector<double> out(B * L);
  const double* xv = x.data().data();
  const double* wv = w.data().data();
  double b0 = bias.data()[0];
  for (int64_t b = 0; b < B; ++b)
    for (int64_t l = 0; l < L; ++l) {
      double acc = b0;
      for (int64_t o = 0; o < kw; ++o) {
        int64_t src = l + o - half;
        if (src < 0 || src >= L) continue;  // zero padding
        const double* row = xv + (b * L + src) * C;
        const double* wr = wv + o * C;
        for (int64_t c = 0; c < C; ++c) acc += wr[c] * row[c];
      }
      out[b * L + l] = acc;
    }
  return custom_op({B, L}, std::move(out), {x, w, bias},
                   [B, L, C, kw, half](TensorNode& nd) {
                     auto& px = *nd.parents[0];
                     auto& pw = *nd.parents[1];
                     auto& pb = *nd.parents[2];
                     const double* g = nd.grad.data();
                     if (pb.requires_grad) {
                       pb.ensure_grad();
                       double acc = 0.0;
                       for (int64_t i = 0; i < B * L; ++i) acc += g[i];
                       pb.grad[0] += acc;
                     }
                     const double* xv = px.value.data();
                     const double* wv = pw.value.data();
                     if (pw.requires_grad) pw.ensure_grad();
                     if (px.requires_grad) px.ensure_grad();
                     for (int64_t b = 0; b < B; ++b)
                       for (int64_t l = 0; l < L; ++l) {
                         double gl = g[b * L + l];
                         for (int64_t o = 0; o < kw; ++o) {
                           int64_t src = l + o - half;
                           if (src < 0 || src >= L) continue;
                           if (pw.requires_grad) {
                             const double* row = xv + (b * L + src) * C;
                             for (int64_t c = 0; c < C; ++c)
                               pw.grad[o * C + c] += gl * row[c];
                           }
                           if (px.requires_grad) {
                             const double* wr = wv + o * C;
                             double* xg = px.grad.data() + (b * L + src) * C;
                             for (int64_t c = 0; c < C; ++c)
                               xg[c] += gl * wr[c];
                           }
                         }
                       }
                   });
}

// ---- backward ----------------------------------------------------------------

void backward(const Tensor& loss) {
  if (!loss.defined()) throw ContractError("backward: undefined tensor");
  TensorNode* root = loss.n.get();
  if (root->value.size() != 1)
    throw ContractError("backward: loss must be scalar, got shape " +
                        shape_str(root->shape));
  if (root->backward_ran)
    throw ContractError(
        "backward: repeated call on the same graph without rebuilding it");
  root->backward_ran = true;

  std::vector<TensorNode*> order;
  std::unordered_set<TensorNode*> seen;
  std::vector<TensorNode*> stack{root};
  seen.insert(root);
  while (!stack.empty()) {
    TensorNode* nd = stack.back();
    stack.pop_back();
    order.push_back(nd);
    for (auto& p : nd->parents) {
      if (p->seq >= nd->seq)
        throw InternalError("backward: cycle detected in computation graph");
      if (p->requires_grad && seen.insert(p.get()).second)
        stack.push_back(p.get());
    }
  }
  std::sort(order.begin(), order.end(),
            [](TensorNode* a, TensorNode* b) { return a->seq > b->seq; });

  root->ensure_grad();
  root->grad[0] = 1.0;
  for (TensorNode* nd : order) {
    if (!nd->backprop) continue;
    nd->ensure_grad();
    nd->backprop(*nd);
  }
}

// ---- finite differences ---------------------------------------------------------

double grad_check_at(const std::function<Tensor(const Tensor&)>& f, Tensor& x,
                     double eps, const std::vector<int64_t>& indices) {
  if (eps <= 0) throw ContractError("grad_check: eps must be positive");
  if (!x.requires_grad())
    throw ContractError("grad_check: x must have requires_grad set");
  x.zero_grad();
  Tensor y = f(x);
  if (y.numel() != 1)
    throw ContractError("grad_check: f must produce a scalar, got shape " +
                        shape_str(y.shape()));
  backward(y);
  std::vector<double> analytic = x.grad();

  auto& xd = x.mutable_data();
  double max_err = 0.0;
  for (int64_t i : indices) {
    if (i < 0 || i >= x.numel())
      throw ContractError("grad_check: component index out of range");
    double orig = xd[i];
    double fp, fm;
    {
      NoGradGuard ng;
      xd[i] = orig + eps;
      fp = f(x).item();
      xd[i] = orig - eps;
      fm = f(x).item();
      xd[i] = orig;
    }
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw NumericError("grad_check: f non-finite at perturbed component " +
                         std::to_string(i));
    double numeric = (fp - fm) / (2.0 * eps);
    double a = analytic[i];
    double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-8});
    max_err = std::max(max_err, std::fabs(a - numeric) / denom);
  }
  return max_err;
}

double grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor& x,
                  double eps) {
  std::vector<int64_t> idx(x.numel());
  std::iota(idx.begin(), idx.end(), 0);
  return grad_check_at(f, x, eps, idx);
}

}  // namespace khpn

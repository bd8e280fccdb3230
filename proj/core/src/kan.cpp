#include "khpn/kan.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>

namespace khpn {

SplineGrid make_uniform_grid(double gmin, double gmax, int G, int p) {
  if (!(gmin < gmax))
    throw ContractError("spline grid: degenerate domain [" +
                        std::to_string(gmin) + "," + std::to_string(gmax) +
                        "]");
  if (G < 1 || p < 0)
    throw ContractError("spline grid: need G >= 1 and degree >= 0");
  SplineGrid g;
  g.gmin = gmin;
  g.gmax = gmax;
  g.G = G;
  g.p = p;
  double h = (gmax - gmin) / G;
  g.knots.resize(G + 2 * p + 1);
  for (int i = 0; i <= G + 2 * p; ++i) g.knots[i] = gmin + (i - p) * h;
  return g;
}

namespace {

// One Cox–de Boor evaluation; writes G+p values and, when derivs != null,
// their x-derivatives. x is assumed already clamped into [gmin, gmax].
// Runs once per (row, input) pair of every KAN layer, so the scratch rows
// live on the stack for ordinary grid sizes.
void basis_eval(double xc, const SplineGrid& g, double* vals, double* derivs) {
  const auto& t = g.knots;
  const int p = g.p;
  const int nb0 = g.G + 2 * p;  // degree-0 indicator count
  constexpr int kStackCap = 64;
  double sbuf[2 * kStackCap];
  std::vector<double> hbuf;
  double* cur = sbuf;
  double* prev = sbuf + kStackCap;
  if (nb0 > kStackCap) {
    hbuf.resize(2 * static_cast<size_t>(nb0));
    cur = hbuf.data();
    prev = hbuf.data() + nb0;
  }
  // Degree-0 indicators over [t_i, t_{i+1}); xc <= gmax = t_{G+p} < t_{G+2p}
  // keeps the scan in range when p >= 1; at p == 0 the right boundary point
  // belongs to the last interval.
  for (int i = 0; i < nb0; ++i) {
    bool inside = (t[i] <= xc && xc < t[i + 1]);
    if (p == 0 && i == nb0 - 1 && xc == t[nb0]) inside = true;
    cur[i] = inside ? 1.0 : 0.0;
  }
  for (int d = 1; d <= p; ++d) {
    // The degree p-1 row feeds the derivative formula.
    if (d == p) std::copy(cur, cur + nb0, prev);
    for (int i = 0; i + d < nb0; ++i) {
      double a = (xc - t[i]) / (t[i + d] - t[i]);
      double b = (t[i + d + 1] - xc) / (t[i + d + 1] - t[i + 1]);
      cur[i] = a * cur[i] + b * cur[i + 1];
    }
  }
  int nb = g.basis_count();
  std::copy(cur, cur + nb, vals);
  if (derivs) {
    if (p == 0) {
      std::fill(derivs, derivs + nb, 0.0);
    } else {
      for (int i = 0; i < nb; ++i) {
        double left = prev[i] / (t[i + p] - t[i]);
        double right = prev[i + 1] / (t[i + p + 1] - t[i + 1]);
        derivs[i] = p * (left - right);
      }
    }
  }
}

}  // namespace

std::vector<double> bspline_basis(double x, const SplineGrid& grid) {
  if (!(grid.gmin < grid.gmax))
    throw ContractError("bspline_basis: degenerate grid");
  std::vector<double> vals(grid.basis_count());
  double xc = std::clamp(x, grid.gmin, grid.gmax);
  basis_eval(xc, grid, vals.data(), nullptr);
  return vals;
}

void bspline_basis_dx(double x, const SplineGrid& grid, double* vals,
                      double* derivs) {
  double xc = std::clamp(x, grid.gmin, grid.gmax);
  basis_eval(xc, grid, vals, derivs);
  if (x < grid.gmin || x > grid.gmax) {
    // Flat clamp: the composite basis(clamp(x)) is constant out there.
    int nb = grid.basis_count();
    std::fill(derivs, derivs + nb, 0.0);
  }
}

Tensor bspline_basis_op(const Tensor& x, const SplineGrid& grid) {
  if (x.rank() != 2)
    throw ShapeError("bspline_basis_op: expected [R,n] input, got " +
                     shape_str(x.shape()));
  int64_t R = x.dim(0), n = x.dim(1);
  int nb = grid.basis_count();
  std::vector<double> vals(R * n * nb);
  auto derivs = std::make_shared<std::vector<double>>(R * n * nb);
  const double* xv = x.data().data();
  for (int64_t i = 0; i < R * n; ++i)
    bspline_basis_dx(xv[i], grid, vals.data() + i * nb,
                     derivs->data() + i * nb);
  return custom_op({R, n * nb}, std::move(vals), {x},
                   [derivs, nb](TensorNode& nd) {
                     auto& p = *nd.parents[0];
                     if (!p.requires_grad) return;
                     p.ensure_grad();
                     const double* g = nd.grad.data();
                     const double* dv = derivs->data();
                     for (size_t i = 0; i < p.value.size(); ++i) {
                       double acc = 0.0;
                       for (int b = 0; b < nb; ++b)
                         acc += g[i * nb + b] * dv[i * nb + b];
                       p.grad[i] += acc;
                     }
                   });
}

double phi_activation(double x, double w_b, double w_s,
                      const std::vector<double>& c_row,
                      const SplineGrid& grid) {
  if (static_cast<int>(c_row.size()) != grid.basis_count())
    throw ShapeError("phi_activation: coefficient row length " +
                     std::to_string(c_row.size()) + " != basis count " +
                     std::to_string(grid.basis_count()));
  auto b = bspline_basis(x, grid);
  double spline = 0.0;
  for (size_t i = 0; i < b.size(); ++i) spline += c_row[i] * b[i];
  double s = x >= 0 ? 1.0 / (1.0 + std::exp(-x))
                    : std::exp(x) / (1.0 + std::exp(x));
  return w_b * (x * s) + w_s * spline;
}

void KanLayerParams::check() const {
  int nb = grid.basis_count();
  Shape want_c{n_out, n_in, nb};
  if (c.shape() != want_c)
    throw ShapeError("kan layer: coefficients " + shape_str(c.shape()) +
                     " do not match " + shape_str(want_c));
  Shape want_w{n_out, n_in};
  if (w_b.shape() != want_w || w_s.shape() != want_w)
    throw ShapeError("kan layer: weight shapes " + shape_str(w_b.shape()) +
                     "/" + shape_str(w_s.shape()) + " do not match " +
                     shape_str(want_w));
}

KanLayerParams make_kan_layer(int64_t n_in, int64_t n_out,
                              const SplineGrid& grid, std::mt19937_64& rng) {
  KanLayerParams kp;
  kp.n_in = n_in;
  kp.n_out = n_out;
  kp.grid = grid;
  int nb = grid.basis_count();

  double bound = std::sqrt(6.0 / static_cast<double>(n_in));
  std::uniform_real_distribution<double> u(-bound, bound);
  std::vector<double> wb(n_out * n_in);
  for (auto& v : wb) v = u(rng);
  kp.w_b = Tensor::from_data({n_out, n_in}, std::move(wb), true);

  kp.w_s = Tensor::full({n_out, n_in}, 1.0, true);

  std::normal_distribution<double> nd(0.0, 0.1 / nb);
  std::vector<double> c(n_out * n_in * nb);
  for (auto& v : c) v = nd(rng);
  kp.c = Tensor::from_data({n_out, n_in, nb}, std::move(c), true);
  return kp;
}

Tensor kan_layer(const Tensor& x, const KanLayerParams& params) {
  params.check();
  bool vec = x.rank() == 1;
  Tensor xin = vec ? reshape(x, {1, x.dim(0)}) : x;
  if (xin.rank() != 2 || xin.dim(1) != params.n_in)
    throw ShapeError("kan_layer: input " + shape_str(x.shape()) +
                     " does not match n_in=" + std::to_string(params.n_in));
  int nb = params.grid.basis_count();
  // silu path: [R,n_in] x w_b^T
  Tensor base = matmul_nt(silu(xin), params.w_b);
  // spline path: basis [R, n_in*nb] x flatten(w_s ⊙ c)^T
  Tensor basis = bspline_basis_op(xin, params.grid);
  Tensor wsc = mul(reshape(params.w_s, {params.n_out, params.n_in, 1}),
                   params.c);
  Tensor spline =
      matmul_nt(basis, reshape(wsc, {params.n_out, params.n_in * nb}));
  Tensor out = add(base, spline);
  return vec ? reshape(out, {params.n_out}) : out;
}

DKanBlock make_dkan(int64_t width, const SplineGrid& grid,
                    std::mt19937_64& rng) {
  DKanBlock b;
  b.l1 = make_kan_layer(width, width, grid, rng);
  b.l2 = make_kan_layer(width, width, grid, rng);
  b.l3 = make_kan_layer(width, width, grid, rng);
  return b;
}

Tensor dkan_block(const Tensor& x, const DKanBlock& blk) {
  return kan_layer(kan_layer(kan_layer(x, blk.l1), blk.l2), blk.l3);
}

}  // namespace khpn

#pragma once

// Kolmogorov–Arnold layers: B-spline basis on a uniform extended grid, edge
// activations phi(x) = w_b*silu(x) + w_s*spline(x), layer-level summation and
// the three-layer D-KAN block. Differentiable in inputs and parameters.

#include <random>
#include <vector>

#include "khpn/tensor.hpp"

namespace khpn {

struct SplineGrid {
  double gmin = -1.0;
  double gmax = 1.0;
  int G = 5;  // interior interval count
  int p = 3;  // degree
  std::vector<double> knots;  // G + 2p + 1 knots, uniform, p-fold extension

  int basis_count() const { return G + p; }
};

// Uniform knots t_i = gmin + (i-p)*h, h = (gmax-gmin)/G, i in [0, G+2p].
SplineGrid make_uniform_grid(double gmin, double gmax, int G, int p);

// Cox–de Boor basis values at clamp(x, [gmin,gmax]); length G+p. Values are
// nonnegative and sum to 1 on the domain.
std::vector<double> bspline_basis(double x, const SplineGrid& grid);

// Basis values and d/dx into caller arrays of length G+p. The derivative is
// 0 when x lies strictly outside the domain (flat clamp).
void bspline_basis_dx(double x, const SplineGrid& grid, double* vals,
                      double* derivs);

// Differentiable batched basis: x [R,n] -> [R, n*(G+p)], block layout per
// input column.
Tensor bspline_basis_op(const Tensor& x, const SplineGrid& grid);

// Scalar edge activation phi(x) = w_b*silu(x) + w_s*sum_i c_i B_i(x).
double phi_activation(double x, double w_b, double w_s,
                      const std::vector<double>& c_row, const SplineGrid& grid);

struct KanLayerParams {
  int64_t n_in = 0;
  int64_t n_out = 0;
  SplineGrid grid;  // shared across the layer's edges
  Tensor c;         // [n_out, n_in, G+p] spline coefficients
  Tensor w_b;       // [n_out, n_in] base (SiLU) weights
  Tensor w_s;       // [n_out, n_in] spline weights

  void check() const;  // coefficient dims match the grid's basis count
};

// w_b ~ U(+-sqrt(6/n_in)), w_s = 1, c ~ N(0, (0.1/(G+p))^2): spline part
// starts small so early training is SiLU-dominated.
KanLayerParams make_kan_layer(int64_t n_in, int64_t n_out,
                              const SplineGrid& grid, std::mt19937_64& rng);

// out[r,q] = sum_n phi_{q,n}(x[r,n]). Accepts [R,n_in] or a bare vector
// [n_in] (returns [n_out]). No bias term.
Tensor kan_layer(const Tensor& x, const KanLayerParams& params);

// Three composed width-preserving KAN layers; one parameter set shared by
// every stream/group that calls it.
struct DKanBlock {
  KanLayerParams l1, l2, l3;
  int64_t width() const { return l1.n_in; }
};

DKanBlock make_dkan(int64_t width, const SplineGrid& grid,
                    std::mt19937_64& rng);

Tensor dkan_block(const Tensor& x, const DKanBlock& blk);

}  // namespace khpn

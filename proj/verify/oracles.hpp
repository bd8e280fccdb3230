#pragma once

// Reference implementations used to cross-check the production kernels.
// Each one is written from the mathematical definition in the most direct
// way available (full scans, textbook recursions, triple loops) and shares
// no code with core/ beyond the data types.

#include <cstdint>
#include <functional>
#include <vector>

#include "khpn/gsp.hpp"
#include "khpn/kan.hpp"
#include "khpn/nn.hpp"
#include "khpn/pointcloud.hpp"
#include "khpn/rmm.hpp"

namespace khpn::oracle {

// C[m,n] = A[m,k] * B[k,n], plain triple loop.
std::vector<double> matmul(const std::vector<double>& a,
                           const std::vector<double>& b, int64_t m, int64_t k,
                           int64_t n);

// Textbook Cox-de Boor recursion for one basis function B_{i,p}(x) over an
// arbitrary knot vector, with the usual 0/0 -> 0 convention.
double bspline_recursive(double x, int64_t i, int p,
                         const std::vector<double>& knots);

// Greedy farthest-point sampling recomputed from scratch at every step:
// the distance of each unselected point to the selected set is found by a
// full scan over the selected set (no cached nearest distances).
std::vector<int64_t> fps(const PointCloudFrame& frame, int64_t k,
                         int64_t start);

// k nearest neighbors of one query point by sorting all (distance^2, index)
// pairs.
std::vector<int64_t> knn(const PointCloudFrame& frame, const double* query,
                         int64_t k);

// Indices of all points with squared distance to the query <= radius^2,
// in ascending index order.
std::vector<int64_t> radius_members(const PointCloudFrame& frame,
                                    const double* query, double radius);

// Squared Euclidean distance between 3-vectors.
double dist2(const double* a, const double* b);

// Scalar-loop evaluation of a linear->SiLU stack on one input row.
std::vector<double> mlp_eval(const Mlp& m, const std::vector<double>& x);

// Feature row of a point for the direct convolution below.
using PointFeatureFn =
    std::function<std::vector<double>(int64_t frame, int64_t point)>;

// Direct (unfactored) evaluation of the 4D point convolution: one flat
// reduction per anchor over every displacement record in the scoper,
// evaluating the kernel per record with plain loops.
std::vector<double> point_conv_direct(const MotionScoper& scoper,
                                      const PointFeatureFn& features,
                                      int64_t feature_width, const Mlp& gamma,
                                      bool sum_form);

// Sum of per-edge activations w_b*silu(x) + w_s*sum_i c_i*B_i(clamp(x)),
// basis values from the recursive oracle, one output per row of the
// coefficient tensor.
std::vector<double> kan_layer_direct(const std::vector<double>& x,
                                     const KanLayerParams& params);

// Three composed kan_layer_direct evaluations.
std::vector<double> dkan_direct(const std::vector<double>& x,
                                const DKanBlock& blk);

// Step-by-step scalar evaluation of one attention-gated set-abstraction
// layer over a precomputed neighborhood: input assembly, both attention
// stages, the shared transform, and the per-region max, all plain loops.
// Returns M x (tmlp_out + 3) row-major.
std::vector<double> spatial_layer_direct(const std::vector<double>& features,
                                         int64_t feature_width,
                                         const NeighborhoodIndex& hood,
                                         const SpatialLayerParams& params,
                                         bool attention);

}  // namespace khpn::oracle

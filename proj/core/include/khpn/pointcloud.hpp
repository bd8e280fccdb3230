#pragma once

// Non-differentiable geometric kernels: farthest point sampling, nearest
// neighbor and radius queries, neighborhood grouping. Pure functions over
// immutable inputs. Distances are squared internally, Euclidean at the API.

#include <cstdint>
#include <vector>

#include "khpn/errors.hpp"

namespace khpn {

struct PointCloudFrame {
  std::vector<double> coords;    // N*3, row-major, meters in sensor frame
  std::vector<double> features;  // N*C, row-major; empty when C == 0
  int64_t feature_width = 0;

  int64_t size() const { return static_cast<int64_t>(coords.size()) / 3; }
  const double* point(int64_t i) const { return coords.data() + 3 * i; }
  // N >= 1, coords finite, feature storage consistent with feature_width.
  void validate() const;
};

using PointCloudSequence = std::vector<PointCloudFrame>;

struct NeighborhoodIndex {
  std::vector<int64_t> center_indices;  // M; -1 for external center coords
  std::vector<double> center_coords;    // M*3
  std::vector<int64_t> neighbor_indices;  // M*K
  std::vector<double> offsets;          // M*K*3, coords[neighbor] - center
  // Number of leading non-fill slots per center; entries past this repeat
  // the nearest qualifying (or globally nearest) point.
  std::vector<int64_t> qualifying_counts;
  int64_t k = 0;

  int64_t centers() const {
    return static_cast<int64_t>(center_indices.size());
  }
};

// Greedy max-min selection. First index is `start`; each next index
// maximizes distance to the selected set, ties to the lowest index.
std::vector<int64_t> farthest_point_sample(const PointCloudFrame& frame,
                                           int64_t k, int64_t start = 0);

// Index of the lexicographically smallest (x,y,z) point: a permutation-stable
// FPS start used by the model paths.
int64_t lexmin_point(const PointCloudFrame& frame);

// Per query row (M*3 coords), the k nearest points sorted by ascending
// distance, ties to the lowest index. Returns M*k indices.
std::vector<int64_t> knn_query(const PointCloudFrame& frame,
                               const std::vector<double>& queries, int64_t k);

// Up to k points within `radius` of each center, nearest-first. Fewer than k
// qualifying: the nearest qualifying index repeats to fill. None qualifying:
// the globally nearest point fills all k slots. `center_indices` may name
// in-frame centers for bookkeeping; offsets always use the given coords.
NeighborhoodIndex ball_group(const PointCloudFrame& frame,
                             const std::vector<double>& centers, double radius,
                             int64_t k,
                             const std::vector<int64_t>* center_indices = nullptr);

// Pure-KNN variant of ball_group (no radius constraint, k nearest per
// center); qualifying_counts are all k.
NeighborhoodIndex knn_group(const PointCloudFrame& frame,
                            const std::vector<double>& centers, int64_t k,
                            const std::vector<int64_t>* center_indices = nullptr);

}  // namespace khpn

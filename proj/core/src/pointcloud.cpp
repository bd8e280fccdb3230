#include "khpn/pointcloud.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace khpn {

namespace {

double dist2(const double* a, const double* b) {
  double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return dx * dx + dy * dy + dz * dz;
}

struct Cand {
  double d2;
  int64_t idx;
  bool operator<(const Cand& o) const {
    return d2 != o.d2 ? d2 < o.d2 : idx < o.idx;
  }
};

}  // namespace

void PointCloudFrame::validate() const {
  if (coords.size() % 3 != 0)
    throw ContractError("frame: coords length " +
                        std::to_string(coords.size()) +
                        " is not a multiple of 3");
  if (size() < 1) throw ContractError("frame: empty point set");
  for (double v : coords)
    if (!std::isfinite(v))
      throw ContractError("frame: non-finite coordinate");
  if (features.size() !=
      static_cast<size_t>(size() * feature_width))
    throw ContractError("frame: feature storage (" +
                        std::to_string(features.size()) +
                        " values) inconsistent with " + std::to_string(size()) +
                        " points x width " + std::to_string(feature_width));
}

std::vector<int64_t> farthest_point_sample(const PointCloudFrame& frame,
                                           int64_t k, int64_t start) {
  frame.validate();
  int64_t n = frame.size();
  if (k < 1 || k > n)
    throw ContractError("farthest_point_sample: k=" + std::to_string(k) +
                        " outside [1," + std::to_string(n) + "]");
  if (start < 0 || start >= n)
    throw ContractError("farthest_point_sample: start=" +
                        std::to_string(start) + " outside [0," +
                        std::to_string(n) + ")");

  std::vector<int64_t> out;
  out.reserve(k);
  out.push_back(start);
  std::vector<char> selected(n, 0);
  selected[start] = 1;
  std::vector<double> best_d2(n);
  for (int64_t i = 0; i < n; ++i)
    best_d2[i] = dist2(frame.point(i), frame.point(start));

  while (static_cast<int64_t>(out.size()) < k) {
    int64_t pick = -1;
    double best = -1.0;
    for (int64_t i = 0; i < n; ++i) {
      if (selected[i]) continue;
      if (best_d2[i] > best) {  // strict: ties keep the lowest index
        best = best_d2[i];
        pick = i;
      }
    }
    out.push_back(pick);
    selected[pick] = 1;
    const double* p = frame.point(pick);
    for (int64_t i = 0; i < n; ++i) {
      double d = dist2(frame.point(i), p);
      if (d < best_d2[i]) best_d2[i] = d;
    }
  }
  return out;
}

int64_t lexmin_point(const PointCloudFrame& frame) {
  frame.validate();
  int64_t best = 0;
  const double* bp = frame.point(0);
  for (int64_t i = 1; i < frame.size(); ++i) {
    const double* p = frame.point(i);
    if (p[0] != bp[0] ? p[0] < bp[0]
        : p[1] != bp[1] ? p[1] < bp[1]
                        : p[2] < bp[2]) {
      best = i;
      bp = p;
    }
  }
  return best;
}

std::vector<int64_t> knn_query(const PointCloudFrame& frame,
                               const std::vector<double>& queries, int64_t k) {
  frame.validate();
  if (queries.size() % 3 != 0)
    throw ContractError("knn_query: query coords not a multiple of 3");
  int64_t n = frame.size();
  if (k < 1 || k > n)
    throw ContractError("knn_query: k=" + std::to_string(k) + " outside [1," +
                        std::to_string(n) + "]");
  int64_t m = static_cast<int64_t>(queries.size()) / 3;
  std::vector<int64_t> out(m * k);
  std::vector<Cand> cands(n);
  for (int64_t q = 0; q < m; ++q) {
    const double* qp = queries.data() + 3 * q;
    for (int64_t i = 0; i < n; ++i) cands[i] = {dist2(frame.point(i), qp), i};
    std::partial_sort(cands.begin(), cands.begin() + k, cands.end());
    for (int64_t j = 0; j < k; ++j) out[q * k + j] = cands[j].idx;
  }
  return out;
}

namespace {

NeighborhoodIndex group_impl(const PointCloudFrame& frame,
                             const std::vector<double>& centers, double radius,
                             bool radius_constrained, int64_t k,
                             const std::vector<int64_t>* center_indices) {
  frame.validate();
  if (centers.size() % 3 != 0)
    throw ContractError("ball_group: center coords not a multiple of 3");
  if (k < 1) throw ContractError("ball_group: k must be >= 1");
  if (radius_constrained && !(radius > 0))
    throw ContractError("ball_group: radius must be positive");
  int64_t n = frame.size();
  int64_t m = static_cast<int64_t>(centers.size()) / 3;
  if (center_indices && static_cast<int64_t>(center_indices->size()) != m)
    throw ContractError("ball_group: center index list length mismatch");

  NeighborhoodIndex out;
  out.k = k;
  out.center_coords = centers;
  out.center_indices.assign(m, -1);
  if (center_indices) out.center_indices = *center_indices;
  out.neighbor_indices.resize(m * k);
  out.offsets.resize(m * k * 3);
  out.qualifying_counts.resize(m);

  double r2 = radius * radius;
  std::vector<Cand> qual;
  qual.reserve(n);
  for (int64_t c = 0; c < m; ++c) {
    const double* cp = centers.data() + 3 * c;
    qual.clear();
    Cand global_best{std::numeric_limits<double>::infinity(), -1};
    for (int64_t i = 0; i < n; ++i) {
      double d2v = dist2(frame.point(i), cp);
      Cand cd{d2v, i};
      if (cd < global_best) global_best = cd;
      if (!radius_constrained || d2v <= r2) qual.push_back(cd);
    }
    int64_t have = std::min<int64_t>(k, static_cast<int64_t>(qual.size()));
    std::partial_sort(qual.begin(), qual.begin() + have, qual.end());
    out.qualifying_counts[c] = have;
    for (int64_t j = 0; j < k; ++j) {
      int64_t nb;
      if (j < have)
        nb = qual[j].idx;
      else if (have > 0)
        nb = qual[0].idx;  // repeat nearest qualifying
      else
        nb = global_best.idx;  // nothing in the ball: globally nearest
      out.neighbor_indices[c * k + j] = nb;
      const double* np = frame.point(nb);
      double* off = out.offsets.data() + (c * k + j) * 3;
      off[0] = np[0] - cp[0];
      off[1] = np[1] - cp[1];
      off[2] = np[2] - cp[2];
    }
  }
  return out;
}

}  // namespace

NeighborhoodIndex ball_group(const PointCloudFrame& frame,
                             const std::vector<double>& centers, double radius,
                             int64_t k,
                             const std::vector<int64_t>* center_indices) {
  return group_impl(frame, centers, radius, true, k, center_indices);
}

NeighborhoodIndex knn_group(const PointCloudFrame& frame,
                            const std::vector<double>& centers, int64_t k,
                            const std::vector<int64_t>* center_indices) {
  if (k > frame.size())
    throw ContractError("knn_group: k=" + std::to_string(k) +
                        " exceeds point count " + std::to_string(frame.size()));
  return group_impl(frame, centers, 0.0, false, k, center_indices);
}

}  // namespace khpn

#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace khpn::oracle {

std::vector<double> matmul(const std::vector<double>& a,
                           const std::vector<double>& b, int64_t m, int64_t k,
                           int64_t n) {
  std::vector<double> c(static_cast<size_t>(m * n), 0.0);
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (int64_t t = 0; t < k; ++t) s += a[i * k + t] * b[t * n + j];
      c[i * n + j] = s;
    }
  return c;
}

double bspline_recursive(double x, int64_t i, int p,
                         const std::vector<double>& knots) {
  if (p == 0) {
    // Half-open support [t_i, t_{i+1}); the production code's closed right
    // boundary is handled by the callers that compare against it.
    return (knots[i] <= x && x < knots[i + 1]) ? 1.0 : 0.0;
  }
  double left = 0.0, right = 0.0;
  double den1 = knots[i + p] - knots[i];
  if (den1 != 0.0)
    left = (x - knots[i]) / den1 * bspline_recursive(x, i, p - 1, knots);
  double den2 = knots[i + p + 1] - knots[i + 1];
  if (den2 != 0.0)
    right = (knots[i + p + 1] - x) / den2 *
            bspline_recursive(x, i + 1, p - 1, knots);
  return left + right;
}

double dist2(const double* a, const double* b) {
  double s = 0.0;
  for (int d = 0; d < 3; ++d) {
    double t = a[d] - b[d];
    s += t * t;
  }
  return s;
}

std::vector<int64_t> fps(const PointCloudFrame& frame, int64_t k,
                         int64_t start) {
  const int64_t n = frame.size();
  std::vector<int64_t> sel;
  sel.push_back(start);
  while (static_cast<int64_t>(sel.size()) < k) {
    double best = -1.0;
    int64_t best_idx = -1;
    for (int64_t i = 0; i < n; ++i) {
      if (std::find(sel.begin(), sel.end(), i) != sel.end()) continue;
      double dmin = std::numeric_limits<double>::infinity();
      for (int64_t s : sel)
        dmin = std::min(dmin, dist2(frame.point(i), frame.point(s)));
      if (dmin > best) {
        best = dmin;
        best_idx = i;
      }
    }
    sel.push_back(best_idx);
  }
  return sel;
}

std::vector<int64_t> knn(const PointCloudFrame& frame, const double* query,
                         int64_t k) {
  const int64_t n = frame.size();
  std::vector<std::pair<double, int64_t>> all;
  all.reserve(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i)
    all.emplace_back(dist2(frame.point(i), query), i);
  std::sort(all.begin(), all.end());
  std::vector<int64_t> out;
  for (int64_t i = 0; i < k; ++i) out.push_back(all[i].second);
  return out;
}

std::vector<int64_t> radius_members(const PointCloudFrame& frame,
                                    const double* query, double radius) {
  std::vector<int64_t> out;
  for (int64_t i = 0; i < frame.size(); ++i)
    if (dist2(frame.point(i), query) <= radius * radius) out.push_back(i);
  return out;
}

std::vector<double> mlp_eval(const Mlp& m, const std::vector<double>& x) {
  std::vector<double> h = x;
  for (const auto& l : m.layers) {
    int64_t out_w = l.w.dim(0), in_w = l.w.dim(1);
    std::vector<double> next(static_cast<size_t>(out_w));
    for (int64_t o = 0; o < out_w; ++o) {
      double s = l.b.data()[static_cast<size_t>(o)];
      for (int64_t i = 0; i < in_w; ++i)
        s += l.w.data()[static_cast<size_t>(o * in_w + i)] *
             h[static_cast<size_t>(i)];
      next[static_cast<size_t>(o)] = s / (1.0 + std::exp(-s));
    }
    h = std::move(next);
  }
  return h;
}

std::vector<double> point_conv_direct(const MotionScoper& scoper,
                                      const PointFeatureFn& features,
                                      int64_t feature_width, const Mlp& gamma,
                                      bool sum_form) {
  const int64_t a = scoper.anchor_count;
  const int64_t w_out = gamma.layers.back().w.dim(0);
  std::vector<double> out(
      static_cast<size_t>(a * w_out),
      sum_form ? 0.0 : -std::numeric_limits<double>::infinity());
  std::vector<double> rec(static_cast<size_t>(4 + feature_width));
  for (size_t s = 0; s < scoper.hoods.size(); ++s) {
    const NeighborhoodIndex& hood = scoper.hoods[s];
    for (int64_t c = 0; c < a; ++c)
      for (int64_t j = 0; j < hood.k; ++j) {
        int64_t r = c * hood.k + j;
        rec[0] = hood.offsets[static_cast<size_t>(3 * r)];
        rec[1] = hood.offsets[static_cast<size_t>(3 * r + 1)];
        rec[2] = hood.offsets[static_cast<size_t>(3 * r + 2)];
        rec[3] = static_cast<double>(scoper.deltas[s]);
        if (feature_width > 0) {
          auto f = features(scoper.frames[s],
                            hood.neighbor_indices[static_cast<size_t>(r)]);
          std::copy(f.begin(), f.end(), rec.begin() + 4);
        }
        auto v = mlp_eval(gamma, rec);
        for (int64_t o = 0; o < w_out; ++o) {
          double& slot = out[static_cast<size_t>(c * w_out + o)];
          double vo = v[static_cast<size_t>(o)];
          slot = sum_form ? slot + vo : std::max(slot, vo);
        }
      }
  }
  return out;
}

namespace {

double sigmoid_s(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double silu_s(double x) { return x / (1.0 + std::exp(-x)); }

// y = W x + b for one row, reading weights straight from a Linear.
std::vector<double> linear_eval(const khpn::Linear& l,
                                const std::vector<double>& x) {
  int64_t out_w = l.w.dim(0), in_w = l.w.dim(1);
  std::vector<double> y(static_cast<size_t>(out_w));
  for (int64_t o = 0; o < out_w; ++o) {
    double s = l.b.data()[static_cast<size_t>(o)];
    for (int64_t i = 0; i < in_w; ++i)
      s += l.w.data()[static_cast<size_t>(o * in_w + i)] *
           x[static_cast<size_t>(i)];
    y[static_cast<size_t>(o)] = s;
  }
  return y;
}

}  // namespace

std::vector<double> kan_layer_direct(const std::vector<double>& x,
                                     const KanLayerParams& params) {
  const SplineGrid& g = params.grid;
  const int64_t nb = g.basis_count();
  std::vector<double> out(static_cast<size_t>(params.n_out), 0.0);
  for (int64_t n = 0; n < params.n_in; ++n) {
    double xn = x[static_cast<size_t>(n)];
    double xc = std::min(std::max(xn, g.gmin), g.gmax);
    // Half-open degree-0 intervals: evaluate "just inside" at the right edge.
    if (xc >= g.gmax) xc = std::nextafter(g.gmax, g.gmin);
    std::vector<double> basis(static_cast<size_t>(nb));
    for (int64_t i = 0; i < nb; ++i)
      basis[static_cast<size_t>(i)] = bspline_recursive(xc, i, g.p, g.knots);
    double s = xn / (1.0 + std::exp(-xn));
    for (int64_t q = 0; q < params.n_out; ++q) {
      double spline = 0.0;
      for (int64_t i = 0; i < nb; ++i)
        spline += params.c.data()[static_cast<size_t>((q * params.n_in + n) *
                                                      nb + i)] *
                  basis[static_cast<size_t>(i)];
      out[static_cast<size_t>(q)] +=
          params.w_b.data()[static_cast<size_t>(q * params.n_in + n)] * s +
          params.w_s.data()[static_cast<size_t>(q * params.n_in + n)] * spline;
    }
  }
  return out;
}

std::vector<double> dkan_direct(const std::vector<double>& x,
                                const DKanBlock& blk) {
  return kan_layer_direct(kan_layer_direct(kan_layer_direct(x, blk.l1),
                                           blk.l2),
                          blk.l3);
}

std::vector<double> spatial_layer_direct(const std::vector<double>& features,
                                         int64_t feature_width,
                                         const NeighborhoodIndex& hood,
                                         const SpatialLayerParams& params,
                                         bool attention) {
  const int64_t m = hood.centers();
  const int64_t k = hood.k;
  const int64_t c = 4 + feature_width;

  // rows[i][j][*]: [offset; distance; features of the neighbor].
  std::vector<std::vector<std::vector<double>>> rows(
      static_cast<size_t>(m),
      std::vector<std::vector<double>>(static_cast<size_t>(k)));
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < k; ++j) {
      int64_t r = i * k + j;
      const double* o = hood.offsets.data() + 3 * r;
      std::vector<double> row(static_cast<size_t>(c));
      row[0] = o[0];
      row[1] = o[1];
      row[2] = o[2];
      row[3] = std::sqrt(o[0] * o[0] + o[1] * o[1] + o[2] * o[2]);
      int64_t pt = hood.neighbor_indices[static_cast<size_t>(r)];
      for (int64_t f = 0; f < feature_width; ++f)
        row[static_cast<size_t>(4 + f)] =
            features[static_cast<size_t>(pt * feature_width + f)];
      rows[static_cast<size_t>(i)][static_cast<size_t>(j)] = std::move(row);
    }

  if (attention) {
    const CbamParams& p = params.cbam;
    for (int64_t i = 0; i < m; ++i) {
      auto& region = rows[static_cast<size_t>(i)];
      // Channel stage: sigmoid(bottleneck(mean) + bottleneck(max)).
      std::vector<double> dmean(static_cast<size_t>(c), 0.0);
      std::vector<double> dmax(static_cast<size_t>(c),
                               -std::numeric_limits<double>::infinity());
      for (int64_t j = 0; j < k; ++j)
        for (int64_t ch = 0; ch < c; ++ch) {
          double v = region[static_cast<size_t>(j)][static_cast<size_t>(ch)];
          dmean[static_cast<size_t>(ch)] += v / static_cast<double>(k);
          dmax[static_cast<size_t>(ch)] =
              std::max(dmax[static_cast<size_t>(ch)], v);
        }
      auto bottleneck = [&](const std::vector<double>& x) {
        auto h = linear_eval(p.reduce, x);
        for (auto& v : h) v = silu_s(v);
        return linear_eval(p.expand, h);
      };
      auto lm = bottleneck(dmean);
      auto lx = bottleneck(dmax);
      std::vector<double> chscore(static_cast<size_t>(c));
      for (int64_t ch = 0; ch < c; ++ch)
        chscore[static_cast<size_t>(ch)] =
            sigmoid_s(lm[static_cast<size_t>(ch)] + lx[static_cast<size_t>(ch)]);

      // Spatial stage over the channel-gated rows: per-slot channelwise
      // mean/max maps, zero-padded 1-D convolution along the slot axis.
      std::vector<std::vector<double>> gated(region);
      for (int64_t j = 0; j < k; ++j)
        for (int64_t ch = 0; ch < c; ++ch)
          gated[static_cast<size_t>(j)][static_cast<size_t>(ch)] *=
              chscore[static_cast<size_t>(ch)];
      std::vector<double> maps(static_cast<size_t>(k) * 2);
      for (int64_t j = 0; j < k; ++j) {
        double s = 0.0, mx = -std::numeric_limits<double>::infinity();
        for (int64_t ch = 0; ch < c; ++ch) {
          double v = gated[static_cast<size_t>(j)][static_cast<size_t>(ch)];
          s += v;
          mx = std::max(mx, v);
        }
        maps[static_cast<size_t>(2 * j)] = s / static_cast<double>(c);
        maps[static_cast<size_t>(2 * j + 1)] = mx;
      }
      int64_t kw = p.conv_w.dim(0);
      for (int64_t j = 0; j < k; ++j) {
        double logit = p.conv_b.data()[0];
        for (int64_t o = 0; o < kw; ++o) {
          int64_t src = j + o - kw / 2;
          if (src < 0 || src >= k) continue;
          for (int64_t ch2 = 0; ch2 < 2; ++ch2)
            logit += p.conv_w.data()[static_cast<size_t>(o * 2 + ch2)] *
                     maps[static_cast<size_t>(2 * src + ch2)];
        }
        double spscore = sigmoid_s(logit);
        for (int64_t ch = 0; ch < c; ++ch)
          region[static_cast<size_t>(j)][static_cast<size_t>(ch)] *=
              chscore[static_cast<size_t>(ch)] * spscore;
      }
    }
  }

  const int64_t w = params.tmlp.layers.back().w.dim(0);
  std::vector<double> out(static_cast<size_t>(m * (w + 3)));
  for (int64_t i = 0; i < m; ++i) {
    std::vector<double> pooled(static_cast<size_t>(w),
                               -std::numeric_limits<double>::infinity());
    for (int64_t j = 0; j < k; ++j) {
      auto v = mlp_eval(params.tmlp,
                        rows[static_cast<size_t>(i)][static_cast<size_t>(j)]);
      for (int64_t o = 0; o < w; ++o)
        pooled[static_cast<size_t>(o)] =
            std::max(pooled[static_cast<size_t>(o)], v[static_cast<size_t>(o)]);
    }
    for (int64_t o = 0; o < w; ++o)
      out[static_cast<size_t>(i * (w + 3) + o)] = pooled[static_cast<size_t>(o)];
    for (int64_t d = 0; d < 3; ++d)
      out[static_cast<size_t>(i * (w + 3) + w + d)] =
          hood.center_coords[static_cast<size_t>(3 * i + d)];
  }
  return out;
}

}  // namespace khpn::oracle

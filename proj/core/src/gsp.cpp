#include "khpn/gsp.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace khpn {

CbamParams make_cbam(int64_t channels, int64_t ratio, int64_t kernel,
                     std::mt19937_64& rng) {
  if (channels < 1 || ratio < 1 || channels % ratio != 0)
    throw ContractError("make_cbam: reduction ratio " + std::to_string(ratio) +
                        " does not divide channel width " +
                        std::to_string(channels));
  if (kernel < 1 || kernel % 2 == 0)
    throw ContractError("make_cbam: spatial kernel must be odd, got " +
                        std::to_string(kernel));
  CbamParams p;
  p.ratio = ratio;
  p.kernel = kernel;
  p.reduce = make_linear(channels, channels / ratio, rng);
  p.expand = make_linear(channels / ratio, channels, rng);
  double bound = std::sqrt(6.0 / (static_cast<double>(kernel) * 2.0));
  std::uniform_real_distribution<double> u(-bound, bound);
  std::vector<double> w(static_cast<size_t>(kernel) * 2);
  for (auto& v : w) v = u(rng);
  p.conv_w = Tensor::from_data({kernel, 2}, std::move(w), true);
  p.conv_b = Tensor::zeros({1}, true);
  return p;
}

std::pair<Tensor, Tensor> channel_descriptors(const Tensor& features) {
  if (!features.defined() || features.rank() != 3)
    throw ShapeError("channel_descriptors: expected [M,k,C] features");
  return {reduce_mean(features, 1), reduce_max(features, 1)};
}

CbamScores cbam_attention(const Tensor& features, const CbamParams& p) {
  if (!features.defined() || features.rank() != 3)
    throw ShapeError("cbam_attention: expected [M,k,C] features");
  int64_t m = features.dim(0), k = features.dim(1), c = features.dim(2);
  if (p.ratio < 1 || c % p.ratio != 0)
    throw ContractError("cbam_attention: reduction ratio " +
                        std::to_string(p.ratio) +
                        " does not divide channel width " + std::to_string(c));
  if (p.reduce.w.dim(1) != c || p.expand.w.dim(0) != c)
    throw ShapeError("cbam_attention: attention weights built for width " +
                     std::to_string(p.reduce.w.dim(1)) + ", features have " +
                     std::to_string(c));

  auto bottleneck = [&](const Tensor& x) {
    return linear(silu(linear(x, p.reduce)), p.expand);
  };
  auto [dmean, dmax] = channel_descriptors(features);
  Tensor ch = reshape(sigmoid(add(bottleneck(dmean), bottleneck(dmax))),
                      {m, 1, c});

  // The spatial stage reads the channel-gated features (sequential gating).
  Tensor gated = mul(features, ch);
  Tensor smean = reshape(reduce_mean(gated, 2), {m * k, 1});
  Tensor smax = reshape(reduce_max(gated, 2), {m * k, 1});
  Tensor maps = reshape(concat_cols({smean, smax}), {m, k, 2});
  Tensor sp =
      reshape(sigmoid(conv1d_same(maps, p.conv_w, p.conv_b)), {m, k, 1});
  return CbamScores{ch, sp, mul(ch, sp)};
}

SpatialLayerParams make_spatial_layer(const SpatialEncodeLayerSpec& spec,
                                      int64_t in_features,
                                      std::mt19937_64& rng) {
  if (spec.widths.empty())
    throw ContractError(
        "make_spatial_layer: shared transform needs at least one width");
  SpatialLayerParams p;
  int64_t in_width = 4 + in_features;
  p.tmlp = make_mlp(in_width, spec.widths, rng);
  if (spec.attention)
    p.cbam = make_cbam(in_width, spec.ratio, spec.kernel, rng);
  return p;
}

namespace {

void check_layer_contract(const PointCloudFrame& frame,
                          const SpatialEncodeLayerSpec& spec) {
  frame.validate();
  int64_t n = frame.size();
  if (spec.centroids < 1 || spec.centroids > n)
    throw ContractError("spatial_encode_layer: centroid count " +
                        std::to_string(spec.centroids) + " outside [1, " +
                        std::to_string(n) + "]");
  if (spec.k < 0)
    throw ContractError(
        "spatial_encode_layer: neighbor count must be >= 1 (0 groups all "
        "points)");
}

void check_transform_width(int64_t in_width, const SpatialLayerParams& params) {
  if (params.tmlp.layers.empty() ||
      params.tmlp.layers[0].w.dim(1) != in_width)
    throw ShapeError("spatial_encode_layer: shared transform expects width " +
                     std::to_string(params.tmlp.layers.empty()
                                        ? 0
                                        : params.tmlp.layers[0].w.dim(1)) +
                     ", grouped rows have " + std::to_string(in_width));
}

// The non-differentiable geometry of one layer on one frame: farthest-point
// centroids, the neighborhood around them, and the per-record distances.
struct FrameGrouping {
  std::vector<int64_t> centroid_indices;
  std::vector<double> centers;  // centroids x 3
  NeighborhoodIndex hood;
  std::vector<double> dist;  // centroids * k
};

FrameGrouping group_frame(const PointCloudFrame& frame,
                          const SpatialEncodeLayerSpec& spec) {
  check_layer_contract(frame, spec);
  FrameGrouping g;
  g.centroid_indices =
      farthest_point_sample(frame, spec.centroids, lexmin_point(frame));
  g.centers.resize(g.centroid_indices.size() * 3);
  for (size_t j = 0; j < g.centroid_indices.size(); ++j) {
    const double* pt = frame.point(g.centroid_indices[j]);
    g.centers[3 * j] = pt[0];
    g.centers[3 * j + 1] = pt[1];
    g.centers[3 * j + 2] = pt[2];
  }
  g.hood = spec.k > 0 ? ball_group(frame, g.centers, spec.radius, spec.k,
                                   &g.centroid_indices)
                      : knn_group(frame, g.centers, frame.size(),
                                  &g.centroid_indices);
  if (g.hood.k < 1)
    throw InternalError("spatial_encode_layer: empty neighborhood");
  int64_t rows = spec.centroids * g.hood.k;
  g.dist.resize(static_cast<size_t>(rows));
  for (int64_t i = 0; i < rows; ++i) {
    const double* o = g.hood.offsets.data() + 3 * i;
    g.dist[static_cast<size_t>(i)] =
        std::sqrt(o[0] * o[0] + o[1] * o[1] + o[2] * o[2]);
  }
  return g;
}

// Attention gating, shared transform, and per-region max over grouped rows
// [regions * k, in_width] -> [regions, tmlp_out]. Shared by the single-frame
// and the sequence-batched paths; `regions` counts centroids across however
// many frames the rows cover.
Tensor encode_grouped(const Tensor& input, int64_t regions, int64_t k,
                      const SpatialEncodeLayerSpec& spec,
                      const SpatialLayerParams& params) {
  int64_t in_width = input.dim(1);
  Tensor gated = input;
  if (spec.attention) {
    Tensor grouped = reshape(input, {regions, k, in_width});
    CbamScores a = cbam_attention(grouped, params.cbam);
    gated = reshape(mul(grouped, a.combined), {regions * k, in_width});
  }
  Tensor h = mlp_forward(gated, params.tmlp);
  return reduce_max(reshape(h, {regions, k, h.dim(1)}), 1);
}

}  // namespace

SpatialEncodeResult spatial_encode_layer(const PointCloudFrame& frame,
                                         const Tensor& features,
                                         const SpatialEncodeLayerSpec& spec,
                                         const SpatialLayerParams& params) {
  check_layer_contract(frame, spec);
  int64_t n = frame.size();
  int64_t c_in = 0;
  if (features.defined()) {
    if (features.rank() != 2 || features.dim(0) != n)
      throw ShapeError("spatial_encode_layer: features " +
                       shape_str(features.shape()) + " do not match " +
                       std::to_string(n) + " points");
    c_in = features.dim(1);
  }
  int64_t in_width = 4 + c_in;
  check_transform_width(in_width, params);

  FrameGrouping g = group_frame(frame, spec);
  int64_t k = g.hood.k;
  int64_t rows = spec.centroids * k;

  std::vector<Tensor> cols{Tensor::from_data({rows, 3}, g.hood.offsets),
                           Tensor::from_data({rows, 1}, std::move(g.dist))};
  if (c_in > 0)
    cols.push_back(gather_rows(features, g.hood.neighbor_indices));
  Tensor input = concat_cols(cols);

  Tensor pooled = encode_grouped(input, spec.centroids, k, spec, params);
  Tensor ctr = Tensor::from_data({spec.centroids, 3}, g.centers);

  SpatialEncodeResult out;
  out.features = concat_cols({pooled, ctr});
  out.centroid_indices = std::move(g.centroid_indices);
  out.centroids.coords = std::move(g.centers);
  return out;
}

GspParams make_gsp(const std::vector<SpatialEncodeLayerSpec>& specs,
                   int64_t in_features, std::mt19937_64& rng) {
  if (specs.empty()) throw ContractError("make_gsp: need at least one layer");
  GspParams p;
  p.specs = specs;
  p.in_features = in_features;
  int64_t width = in_features;
  for (const auto& s : specs) {
    p.layers.push_back(make_spatial_layer(s, width, rng));
    width = s.widths.back() + 3;
  }
  return p;
}

std::vector<SpatialEncodeLayerSpec> default_gsp_specs() {
  return {
      {64, 10, 0.24, {24, 21}, true, 4, 7},
      {16, 10, 0.45, {32, 29}, true, 4, 7},
      {1, 0, 10.0, {48, 29}, true, 4, 7},
  };
}

Tensor gsp_forward(const PointCloudFrame& frame, const GspParams& p) {
  if (p.specs.empty() || p.layers.size() != p.specs.size())
    throw ContractError("gsp_forward: empty or inconsistent layer stack");
  if (p.specs.back().centroids != 1)
    throw ContractError(
        "gsp_forward: final layer must pool to a single region");
  if (frame.feature_width != p.in_features)
    throw ShapeError("gsp_forward: frame carries " +
                     std::to_string(frame.feature_width) +
                     " features per point, params built for " +
                     std::to_string(p.in_features));
  PointCloudFrame cur = frame;
  Tensor feats;
  if (p.in_features > 0)
    feats = Tensor::from_data({cur.size(), p.in_features}, cur.features);
  for (size_t i = 0; i < p.specs.size(); ++i) {
    SpatialEncodeResult r =
        spatial_encode_layer(cur, feats, p.specs[i], p.layers[i]);
    cur = std::move(r.centroids);
    feats = r.features;
  }
  return reshape(feats, {p.out_width()});
}

Tensor gsp_forward_seq(const PointCloudSequence& seq, const GspParams& p) {
  if (p.specs.empty() || p.layers.size() != p.specs.size())
    throw ContractError("gsp_forward_seq: empty or inconsistent layer stack");
  if (p.specs.back().centroids != 1)
    throw ContractError(
        "gsp_forward_seq: final layer must pool to a single region");
  if (seq.empty()) throw ContractError("gsp_forward_seq: empty sequence");
  const int64_t t = static_cast<int64_t>(seq.size());

  // Frames feed the geometric stages one by one; their features live in a
  // single [sum n_f, C] tensor addressed through per-frame row offsets, so
  // each layer runs one gather, one attention pass, and one transform chain
  // for the whole sequence.
  std::vector<PointCloudFrame> cur(seq.begin(), seq.end());
  std::vector<int64_t> row_off(static_cast<size_t>(t), 0);
  Tensor feats;
  for (int64_t f = 0; f < t; ++f)
    if (cur[static_cast<size_t>(f)].feature_width != p.in_features)
      throw ShapeError(
          "gsp_forward_seq: frame " + std::to_string(f) + " carries " +
          std::to_string(cur[static_cast<size_t>(f)].feature_width) +
          " features per point, params built for " +
          std::to_string(p.in_features));
  if (p.in_features > 0) {
    std::vector<Tensor> blocks;
    blocks.reserve(static_cast<size_t>(t));
    int64_t off = 0;
    for (int64_t f = 0; f < t; ++f) {
      const PointCloudFrame& fr = cur[static_cast<size_t>(f)];
      row_off[static_cast<size_t>(f)] = off;
      off += fr.size();
      blocks.push_back(
          Tensor::from_data({fr.size(), p.in_features}, fr.features));
    }
    feats = concat_rows(blocks);
  }

  for (size_t li = 0; li < p.specs.size(); ++li) {
    const SpatialEncodeLayerSpec& spec = p.specs[li];
    const SpatialLayerParams& params = p.layers[li];
    const int64_t m = spec.centroids;
    const int64_t c_in = feats.defined() ? feats.dim(1) : 0;
    check_transform_width(4 + c_in, params);

    std::vector<FrameGrouping> groups;
    groups.reserve(static_cast<size_t>(t));
    int64_t k = -1;
    for (int64_t f = 0; f < t; ++f) {
      groups.push_back(group_frame(cur[static_cast<size_t>(f)], spec));
      int64_t kf = groups.back().hood.k;
      if (k < 0) k = kf;
      if (kf != k)
        throw ContractError(
            "gsp_forward_seq: grouping every point needs one common frame "
            "size, got neighborhoods of " + std::to_string(k) + " and " +
            std::to_string(kf));
    }

    const int64_t rows = t * m * k;
    std::vector<double> offsets(static_cast<size_t>(rows * 3));
    std::vector<double> dist(static_cast<size_t>(rows));
    std::vector<double> centers(static_cast<size_t>(t * m * 3));
    std::vector<int64_t> gidx(c_in > 0 ? static_cast<size_t>(rows) : 0);
    for (int64_t f = 0; f < t; ++f) {
      const FrameGrouping& g = groups[static_cast<size_t>(f)];
      std::copy(g.hood.offsets.begin(), g.hood.offsets.end(),
                offsets.begin() + f * m * k * 3);
      std::copy(g.dist.begin(), g.dist.end(), dist.begin() + f * m * k);
      std::copy(g.centers.begin(), g.centers.end(),
                centers.begin() + f * m * 3);
      if (c_in > 0) {
        int64_t base = row_off[static_cast<size_t>(f)];
        for (int64_t i = 0; i < m * k; ++i)
          gidx[static_cast<size_t>(f * m * k + i)] =
              base + g.hood.neighbor_indices[static_cast<size_t>(i)];
      }
    }

    std::vector<Tensor> cols{Tensor::from_data({rows, 3}, std::move(offsets)),
                             Tensor::from_data({rows, 1}, std::move(dist))};
    if (c_in > 0) cols.push_back(gather_rows(feats, gidx));
    Tensor input = concat_cols(cols);
    Tensor pooled = encode_grouped(input, t * m, k, spec, params);
    feats = concat_cols(
        {pooled, Tensor::from_data({t * m, 3}, std::move(centers))});
    for (int64_t f = 0; f < t; ++f) {
      PointCloudFrame nf;
      nf.coords = std::move(groups[static_cast<size_t>(f)].centers);
      cur[static_cast<size_t>(f)] = std::move(nf);
      row_off[static_cast<size_t>(f)] = f * m;
    }
  }
  return feats;  // the final layer leaves one region per frame: [t, width]
}

}  // namespace khpn

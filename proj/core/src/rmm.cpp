#include "khpn/rmm.hpp"

#include <algorithm>
#include <string>

namespace khpn {

namespace {

int64_t clamp_idx(int64_t v, int64_t n) {
  return std::max<int64_t>(0, std::min(v, n - 1));
}

}  // namespace

std::pair<int64_t, int64_t> resolve_padding(int64_t t, const ClipSpec& spec) {
  if (spec.p1 >= 0 && spec.p2 >= 0) return {spec.p1, spec.p2};
  // One output step per input frame needs t clips: (t + p1 + p2) / d_t == t.
  int64_t total = t * (spec.d_t - 1);
  int64_t p1 = spec.d_t / 2;
  return {p1, total - p1};
}

std::vector<Clip> split_clips(const PointCloudSequence& seq,
                              const ClipSpec& spec) {
  int64_t t = static_cast<int64_t>(seq.size());
  if (t < 1) throw ContractError("split_clips: empty sequence");
  if (spec.d_t < 1) throw ContractError("split_clips: stride must be >= 1");
  if (spec.r_t < 0) throw ContractError("split_clips: negative window radius");
  if (2 * spec.r_t + 1 > t)
    throw ContractError("split_clips: window length " +
                        std::to_string(2 * spec.r_t + 1) +
                        " exceeds sequence length " + std::to_string(t));
  auto [p1, p2] = resolve_padding(t, spec);
  int64_t padded = t + p1 + p2;
  if (padded % spec.d_t != 0)
    throw ContractError("split_clips: padded length " + std::to_string(padded) +
                        " not divisible by stride " + std::to_string(spec.d_t));

  int64_t n_clips = padded / spec.d_t;
  std::vector<Clip> out(static_cast<size_t>(n_clips));
  for (int64_t c = 0; c < n_clips; ++c) {
    // Center of the stride block (upper median), mapped back into the
    // original sequence; window indices clamp into range, which is
    // equivalent to replicating boundary frames.
    int64_t center = c * spec.d_t + spec.d_t / 2 - p1;
    Clip& clip = out[static_cast<size_t>(c)];
    clip.anchor = clamp_idx(center, t);
    for (int64_t d = -spec.r_t; d <= spec.r_t; ++d) {
      clip.deltas.push_back(d);
      clip.frames.push_back(clamp_idx(center + d, t));
    }
  }
  return out;
}

MotionScoper build_motionscoper(const PointCloudSequence& seq,
                                const Clip& clip, const ClipSpec& spec) {
  const PointCloudFrame& af = seq.at(static_cast<size_t>(clip.anchor));
  af.validate();
  MotionScoper sc;
  sc.anchor_frame = clip.anchor;
  sc.anchor_count = spec.anchors;
  auto idx = farthest_point_sample(af, spec.anchors, lexmin_point(af));
  sc.anchor_coords.reserve(static_cast<size_t>(3 * spec.anchors));
  for (int64_t i : idx) {
    const double* p = af.point(i);
    sc.anchor_coords.insert(sc.anchor_coords.end(), p, p + 3);
  }
  sc.frames = clip.frames;
  sc.deltas = clip.deltas;
  for (int64_t f : clip.frames) {
    const PointCloudFrame& frame = seq.at(static_cast<size_t>(f));
    sc.hoods.push_back(spec.knn_mode
                           ? knn_group(frame, sc.anchor_coords,
                                       std::min(spec.K, frame.size()))
                           : ball_group(frame, sc.anchor_coords, spec.r_s,
                                        spec.K));
  }
  return sc;
}

Tensor point_conv_4d(const MotionScoper& scoper,
                     const FrameFeatureFn& frame_features,
                     int64_t feature_width, const Mlp& gamma, bool sum_form) {
  if (scoper.hoods.empty())
    throw ContractError("point_conv_4d: scoper has no window slots");
  int64_t in_width = gamma.layers.front().w.dim(1);
  if (in_width != 4 + feature_width)
    throw ShapeError("point_conv_4d: kernel expects width " +
                     std::to_string(in_width) + ", displacements+features give " +
                     std::to_string(4 + feature_width));

  const int64_t a = scoper.anchor_count;
  const int64_t s_n = static_cast<int64_t>(scoper.hoods.size());
  const int64_t w_out = gamma.layers.back().w.dim(0);
  ReduceOp red = sum_form ? ReduceOp::sum : ReduceOp::max;

  std::vector<Tensor> slot_records(static_cast<size_t>(s_n));
  for (int64_t s = 0; s < s_n; ++s) {
    const NeighborhoodIndex& hood = scoper.hoods[static_cast<size_t>(s)];
    const int64_t k = hood.k;
    // Displacement block [a*k, 4]: spatial offset plus the slot's nominal
    // temporal offset.
    std::vector<double> disp(static_cast<size_t>(a * k * 4));
    for (int64_t r = 0; r < a * k; ++r) {
      disp[static_cast<size_t>(4 * r)] = hood.offsets[static_cast<size_t>(3 * r)];
      disp[static_cast<size_t>(4 * r + 1)] =
          hood.offsets[static_cast<size_t>(3 * r + 1)];
      disp[static_cast<size_t>(4 * r + 2)] =
          hood.offsets[static_cast<size_t>(3 * r + 2)];
      disp[static_cast<size_t>(4 * r + 3)] =
          static_cast<double>(scoper.deltas[static_cast<size_t>(s)]);
    }
    Tensor records = Tensor::from_data({a * k, 4}, std::move(disp));
    if (feature_width > 0) {
      Tensor feats = frame_features(scoper.frames[static_cast<size_t>(s)]);
      if (!feats.defined() || feats.dim(1) != feature_width)
        throw ShapeError(
            "point_conv_4d: frame " +
            std::to_string(scoper.frames[static_cast<size_t>(s)]) +
            " lacks the declared feature width");
      records =
          concat_cols({records, gather_rows(feats, hood.neighbor_indices)});
    }
    slot_records[static_cast<size_t>(s)] = records;
  }

  bool uniform = true;
  for (int64_t s = 1; s < s_n; ++s)
    if (scoper.hoods[static_cast<size_t>(s)].k != scoper.hoods[0].k)
      uniform = false;

  if (uniform) {
    // Every slot through one kernel chain: pool the neighborhood per
    // (slot, anchor), then reduce over slots.
    const int64_t k = scoper.hoods[0].k;
    Tensor per_record = mlp_forward(
        s_n == 1 ? slot_records[0] : concat_rows(slot_records), gamma);
    Tensor pooled = reduce(red, reshape(per_record, {s_n * a, k, w_out}), 1);
    Tensor stacked = reshape(pooled, {s_n, a * w_out});
    return reshape(reduce(red, stacked, 0), {a, w_out});
  }

  // Ragged neighborhoods (knn over frames smaller than K): one chain per slot.
  std::vector<Tensor> slot_rows;  // each [1, a*w_out]
  for (int64_t s = 0; s < s_n; ++s) {
    const int64_t k = scoper.hoods[static_cast<size_t>(s)].k;
    Tensor per_record =
        mlp_forward(slot_records[static_cast<size_t>(s)], gamma);
    Tensor pooled = reduce(red, reshape(per_record, {a, k, w_out}), 1);
    slot_rows.push_back(reshape(pooled, {1, a * w_out}));
  }
  Tensor stacked = concat_rows(slot_rows);  // [slots, a*w_out]
  return reshape(reduce(red, stacked, 0), {a, w_out});
}

RmmParams make_rmm(int64_t in_features, const std::vector<int64_t>& g1_widths,
                   const std::vector<int64_t>& g2_widths,
                   std::mt19937_64& rng) {
  RmmParams p;
  p.in_features = in_features;
  p.gamma1 = make_mlp(4 + in_features, g1_widths, rng);
  p.gamma2 = make_mlp(4 + g1_widths.back(), g2_widths, rng);
  return p;
}

Tensor rmm_forward(const PointCloudSequence& seq, const ClipSpec& spec,
                   const RmmParams& params, bool sum_form) {
  int64_t t = static_cast<int64_t>(seq.size());
  if (t < 2 * spec.r_t + 1)
    throw ContractError("rmm_forward: sequence shorter than the temporal window");
  auto [p1, p2] = resolve_padding(t, spec);
  int64_t padded = t + p1 + p2;
  if (padded % spec.d_t != 0 || padded / spec.d_t != t) {
    ClipSpec wanted = spec;
    wanted.p1 = wanted.p2 = -1;
    auto [q1, q2] = resolve_padding(t, wanted);
    throw ContractError(
        "rmm_forward: padding (" + std::to_string(p1) + "," +
        std::to_string(p2) + ") gives " + std::to_string(padded / spec.d_t) +
        " motion steps for " + std::to_string(t) + " posture steps; required (" +
        std::to_string(q1) + "," + std::to_string(q2) + ")");
  }
  ClipSpec resolved = spec;
  resolved.p1 = p1;
  resolved.p2 = p2;
  auto clips = split_clips(seq, resolved);

  // Per-frame raw features, materialized once (constant inputs).
  std::vector<Tensor> raw(static_cast<size_t>(t));
  auto frame_feats = [&](int64_t f) -> Tensor {
    if (params.in_features == 0) return Tensor();
    Tensor& slot = raw[static_cast<size_t>(f)];
    if (!slot.defined()) {
      const PointCloudFrame& fr = seq[static_cast<size_t>(f)];
      if (fr.feature_width != params.in_features)
        throw ShapeError("rmm_forward: frame feature width " +
                         std::to_string(fr.feature_width) + " != configured " +
                         std::to_string(params.in_features));
      slot = Tensor::from_data({fr.size(), fr.feature_width}, fr.features);
    }
    return slot;
  };

  const int64_t c1 = params.gamma1.layers.back().w.dim(0);
  std::vector<Tensor> steps;
  steps.reserve(clips.size());
  for (const Clip& clip : clips) {
    MotionScoper sc = build_motionscoper(seq, clip, resolved);
    Tensor stage1 = point_conv_4d(sc, frame_feats, params.in_features,
                                  params.gamma1, sum_form);  // [A, c1]

    // Stage 2: the clip's anchor cloud is aggregated from one distinguished
    // anchor into a single motion vector.
    PointCloudFrame anchor_cloud;
    anchor_cloud.coords = sc.anchor_coords;
    int64_t pick = lexmin_point(anchor_cloud);
    MotionScoper sc2;
    sc2.anchor_frame = clip.anchor;
    sc2.anchor_count = 1;
    const double* pc = anchor_cloud.point(pick);
    sc2.anchor_coords.assign(pc, pc + 3);
    sc2.frames = {0};
    sc2.deltas = {0};
    sc2.hoods.push_back(
        knn_group(anchor_cloud, sc2.anchor_coords, sc.anchor_count));
    auto stage1_feats = [&](int64_t) -> Tensor { return stage1; };
    steps.push_back(point_conv_4d(sc2, stage1_feats, c1, params.gamma2,
                                  sum_form));  // [1, out]
  }
  return concat_rows(steps);  // [t, out]
}

}  // namespace khpn

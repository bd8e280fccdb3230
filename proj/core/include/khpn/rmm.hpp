#pragma once

// Regional-momentary motion synthesizer: splits a sequence into strided
// clips, builds spatio-temporal neighborhoods (motion scopers) around
// sampled anchors, and applies a factored 4D point convolution twice to
// produce one motion vector per time step.

#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "khpn/nn.hpp"
#include "khpn/pointcloud.hpp"
#include "khpn/tensor.hpp"

namespace khpn {

struct ClipSpec {
  int64_t d_t = 1;       // temporal stride between anchor frames
  int64_t r_t = 1;       // temporal window radius (clip spans anchor +- r_t)
  double r_s = 0.3;      // spatial ball radius
  int64_t K = 6;         // neighbors per (anchor, frame) pair
  int64_t anchors = 32;  // stage-1 anchors per clip
  // Replicate-padding frame counts. Negative means "compute so that the
  // motion stream has exactly one step per input frame".
  int64_t p1 = -1, p2 = -1;
  // Neighbor search: radius-constrained ball by default, pure knn when set.
  bool knn_mode = false;
};

struct Clip {
  int64_t anchor = 0;            // original frame index (already clamped)
  std::vector<int64_t> frames;   // window of 2*r_t+1 original frame indices
  std::vector<int64_t> deltas;   // nominal offsets -r_t..r_t, one per frame
};

// Resolves negative (automatic) padding for a sequence of length t. The
// returned pair keeps the clip count equal to t.
std::pair<int64_t, int64_t> resolve_padding(int64_t t, const ClipSpec& spec);

// Divides the padded sequence into equal-stride clips. The anchor frame is
// the center of each stride block (upper median for even strides); window
// frames are clamped into the sequence, which realizes replicate padding.
std::vector<Clip> split_clips(const PointCloudSequence& seq,
                              const ClipSpec& spec);

struct MotionScoper {
  int64_t anchor_frame = 0;
  int64_t anchor_count = 0;
  std::vector<double> anchor_coords;     // anchor_count x 3
  std::vector<int64_t> frames;           // window slot -> original frame
  std::vector<int64_t> deltas;           // window slot -> nominal offset
  std::vector<NeighborhoodIndex> hoods;  // one per window slot
};

// Samples spec.anchors anchors on the clip's anchor frame (farthest-point,
// started from the lexicographically smallest point so the choice does not
// depend on point order) and groups neighbors around them in every window
// frame.
MotionScoper build_motionscoper(const PointCloudSequence& seq,
                                const Clip& clip, const ClipSpec& spec);

// Per-frame neighbor features for the convolution; returns an undefined
// tensor for frames without features. Shape [N_frame, C].
using FrameFeatureFn = std::function<Tensor(int64_t frame)>;

// Factored evaluation of the 4D point convolution over one scoper: every
// displacement record [dx, dy, dz, dt, features...] runs through the shared
// kernel MLP, is reduced over the spatial neighborhood per window slot, then
// reduced over slots. Reducers are max (default) or sum (sum_form), which
// matches the flat single-reduction form over the whole scoper either way.
// Slots of equal neighborhood width run the kernel as one batch, so values
// can differ from independent per-slot evaluation in the last bits.
// Returns [anchor_count, kernel_out_width].
Tensor point_conv_4d(const MotionScoper& scoper,
                     const FrameFeatureFn& frame_features,
                     int64_t feature_width, const Mlp& gamma, bool sum_form);

struct RmmParams {
  Mlp gamma1;  // stage-1 kernel: 4 + input feature width -> c1
  Mlp gamma2;  // stage-2 kernel: 4 + c1 -> motion width
  int64_t in_features = 0;
  int64_t out_width() const { return gamma2.layers.back().w.dim(0); }
};

RmmParams make_rmm(int64_t in_features, const std::vector<int64_t>& g1_widths,
                   const std::vector<int64_t>& g2_widths, std::mt19937_64& rng);

// Full two-stage synthesizer. Stage 1 turns each clip into an anchor cloud
// with motion features; stage 2 picks one anchor per clip and aggregates the
// whole anchor cloud into a single vector. Output [steps, out_width] with
// one step per input frame.
Tensor rmm_forward(const PointCloudSequence& seq, const ClipSpec& spec,
                   const RmmParams& params, bool sum_form = false);

}  // namespace khpn

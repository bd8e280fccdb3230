#pragma once

// Sequence container files, the synthetic motion benchmark, raw point-list
// conversion, and preprocessing. Files hold 32-bit floats, memory is 64-bit
// throughout; values written to disk must be representable in both.

#include <cstdint>
#include <string>
#include <vector>

#include "khpn/model.hpp"
#include "khpn/pointcloud.hpp"

namespace khpn {

// Binary container: magic "PCSQ", u16 version (1), u32 frame count, u32 max
// per-frame point count, u32 feature width C, i32 label (-1 unlabeled); then
// per frame a u32 point count followed by count*(3+C) little-endian 32-bit
// floats, xyz first. Counts must stay within the header maximum and every
// stored value must be finite. Loading reports malformed input as a format
// error carrying the byte offset of the offending field.
void save_sequence(const std::string& path, const PointCloudSequence& seq,
                   int64_t label = -1);
LabeledSample load_sequence(const std::string& path);

// Writes samples as zero-padded <index>.pcsq files under dir (created if
// missing); loads every *.pcsq under dir in filename order.
void save_dataset(const std::string& dir, const Dataset& ds);
Dataset load_dataset(const std::string& dir);

// Converter stub for per-frame XYZ text exports: one "x y z" line per point,
// a blank line between frames.
PointCloudSequence load_xyz_frames(const std::string& path);

struct SynthSpec {
  std::vector<std::string> classes{"translate", "rotate", "scale-oscillate",
                                   "two-part-swing"};
  int64_t points = 256;
  int64_t frames = 24;
  double noise_sigma = 0.008;  // per-point jitter; 0 selects exact motion
  uint64_t seed = 7;
  void check() const;
};

// `per_class` samples per class, interleaved (sample i carries label i mod
// C), bitwise deterministic per seed. Every class animates the same kind of
// randomized rigid template with a common linear drift plus identically
// distributed motion components (breathing, a volume-preserving stretch, a
// two-half counter-swing, an orientation jiggle), so per-frame shape
// statistics carry no class information. Class identity lives in temporal
// structure alone: scale-oscillate runs its stretch at high frequency,
// two-part-swing its swing, rotate adds a monotone orientation sweep, and
// translate adds nothing. With noise 0 the slow decoy components switch off
// and the construction is exact: a translate-class frame t equals frame 0
// shifted by t*v, bitwise, and survives the 32-bit file format.
Dataset synth_dataset(const SynthSpec& spec, int64_t per_class);

// T_out frames at uniformly spaced indices; each frame reduced to N_out
// points by farthest-point sampling (cyclic repetition when short), then
// the whole sequence is centered on its centroid and scaled to max radius
// 1. `seed` picks the per-frame sampling start point.
PointCloudSequence subsample_sequence(const PointCloudSequence& seq,
                                      int64_t t_out, int64_t n_out,
                                      uint64_t seed);

}  // namespace khpn

#pragma once

// Temporal mixer over a per-step feature sequence: multi-scale sliding-window
// grouping, dislocation by temporal order values, residual width-preserving
// KAN mixing per member, componentwise max over each group, and centroid
// addition. Scale branches are fused by feature concatenation.

#include <cstdint>
#include <random>
#include <vector>

#include "khpn/kan.hpp"
#include "khpn/tensor.hpp"

namespace khpn {

struct ScaleSpec {
  int64_t r_f = 1;  // temporal radius; window = 2*r_f + 1
  int64_t s_f = 1;  // temporal stride
  int64_t p_f = 1;  // zero-vector padding on each end
};

struct GroupingSpec {
  std::vector<ScaleSpec> branches;
};

// Default two-branch config: windows 3 and 5 with "same" padding, so every
// branch keeps the sequence length.
GroupingSpec default_grouping();

// l = floor((t + 2*p_f - (2*r_f+1)) / s_f) + 1; throws ContractError when the
// window exceeds the padded sequence.
int64_t group_count(int64_t t, const ScaleSpec& spec);

struct DHyperpointGroup {
  Tensor members;            // [t_l, w]; zero rows where the window left the
                             // sequence (padding)
  std::vector<int64_t> t_o;  // temporal order of each member, 0..t_l-1
  int64_t t_l = 0;           // 2*r_f + 1
  Tensor centroid;           // [1, w], the window's center member
};

std::vector<DHyperpointGroup> group_dhyperpoints(const Tensor& seq,
                                                 const ScaleSpec& spec);

// (t_o / (t_l - 1)) - 0.5 for t_o = 0..t_l-1; defined as {0} when t_l == 1.
std::vector<double> tov_values(int64_t t_l);

// members + ToV(t_o) broadcast over the feature axis.
Tensor dislocate(const DHyperpointGroup& group);

// dkan(dislocate(group)) + dislocate(group), one row per member.
Tensor stkm_forward(const DHyperpointGroup& group, const DKanBlock& dkan);

// Componentwise max over the mixed member rows, plus the group centroid
// (or concatenated with it when centroid_concat). Returns [1, w] / [1, 2w].
Tensor mix_group(const Tensor& mixed, const DHyperpointGroup& group,
                 bool centroid_concat = false);

struct MixerParams {
  GroupingSpec grouping;
  DKanBlock dkan;  // one block shared by every group and branch
  bool centroid_concat = false;
};

MixerParams make_mixer(int64_t width, const GroupingSpec& grouping,
                       const SplineGrid& grid, std::mt19937_64& rng);

// Output width of one mixer applied to `width`-wide steps.
int64_t mixer_out_width(const MixerParams& p, int64_t width);

// [T, w] -> [l, w * branches] (every branch must produce the same l).
Tensor kansmixer_forward(const Tensor& seq, const MixerParams& p);

}  // namespace khpn

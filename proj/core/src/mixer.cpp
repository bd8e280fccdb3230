#include "khpn/mixer.hpp"

#include <string>

namespace khpn {

namespace {

// Zero-padded copy of the sequence; padding steps carry no signal.
Tensor pad_sequence(const Tensor& seq, int64_t p_f) {
  if (p_f == 0) return seq;
  Tensor z = Tensor::zeros({p_f, seq.dim(1)});
  return concat_rows({z, seq, z});
}

void check_seq(const Tensor& seq) {
  if (!seq.defined() || seq.rank() != 2 || seq.dim(0) < 1)
    throw ShapeError("mixer: expected a [T, width] step sequence");
}

}  // namespace

GroupingSpec default_grouping() { return {{{1, 1, 1}, {2, 1, 2}}}; }

int64_t group_count(int64_t t, const ScaleSpec& spec) {
  if (t < 1 || spec.r_f < 0 || spec.s_f < 1 || spec.p_f < 0)
    throw ContractError("group_count: need t >= 1, r_f >= 0, s_f >= 1, p_f "
                        ">= 0");
  int64_t window = 2 * spec.r_f + 1;
  int64_t padded = t + 2 * spec.p_f;
  if (window > padded)
    throw ContractError("group_count: window " + std::to_string(window) +
                        " exceeds padded length " + std::to_string(padded));
  return (padded - window) / spec.s_f + 1;
}

std::vector<DHyperpointGroup> group_dhyperpoints(const Tensor& seq,
                                                 const ScaleSpec& spec) {
  check_seq(seq);
  int64_t l = group_count(seq.dim(0), spec);
  int64_t t_l = 2 * spec.r_f + 1;
  Tensor padded = pad_sequence(seq, spec.p_f);
  std::vector<DHyperpointGroup> out(static_cast<size_t>(l));
  for (int64_t g = 0; g < l; ++g) {
    std::vector<int64_t> window(static_cast<size_t>(t_l));
    for (int64_t j = 0; j < t_l; ++j) window[static_cast<size_t>(j)] =
        g * spec.s_f + j;
    DHyperpointGroup& grp = out[static_cast<size_t>(g)];
    grp.members = gather_rows(padded, window);
    grp.t_o.resize(static_cast<size_t>(t_l));
    for (int64_t j = 0; j < t_l; ++j) grp.t_o[static_cast<size_t>(j)] = j;
    grp.t_l = t_l;
    grp.centroid = gather_rows(padded, {g * spec.s_f + spec.r_f});
  }
  return out;
}

namespace {

// t_o/(t_l-1) - 0.5, written as (2*t_o - (t_l-1)) / (2*(t_l-1)): the integer
// numerator negates exactly, so the value set is bitwise symmetric about 0
// for every group length, not just the dyadic ones.
double tov_at(int64_t t_o, int64_t t_l) {
  if (t_l == 1) return 0.0;  // single member has no temporal order
  return static_cast<double>(2 * t_o - (t_l - 1)) /
         static_cast<double>(2 * (t_l - 1));
}

}  // namespace

std::vector<double> tov_values(int64_t t_l) {
  if (t_l < 1) throw ContractError("tov_values: group length must be >= 1");
  std::vector<double> v(static_cast<size_t>(t_l));
  for (int64_t o = 0; o < t_l; ++o)
    v[static_cast<size_t>(o)] = tov_at(o, t_l);
  return v;
}

Tensor dislocate(const DHyperpointGroup& group) {
  if (!group.members.defined() || group.members.rank() != 2 ||
      group.members.dim(0) != group.t_l)
    throw ContractError("dislocate: members do not match t_l");
  if (static_cast<int64_t>(group.t_o.size()) != group.t_l)
    throw ContractError("dislocate: temporal order list does not match t_l");
  std::vector<double> tov(static_cast<size_t>(group.t_l));
  for (int64_t j = 0; j < group.t_l; ++j)
    tov[static_cast<size_t>(j)] =
        tov_at(group.t_o[static_cast<size_t>(j)], group.t_l);
  return add(group.members, Tensor::from_data({group.t_l, 1}, tov));
}

Tensor stkm_forward(const DHyperpointGroup& group, const DKanBlock& dkan) {
  Tensor x = dislocate(group);
  return add(dkan_block(x, dkan), x);
}

Tensor mix_group(const Tensor& mixed, const DHyperpointGroup& group,
                 bool centroid_concat) {
  if (!mixed.defined() || mixed.rank() != 2 || mixed.dim(0) < 1)
    throw ShapeError("mix_group: expected [members, width] mixed rows");
  if (group.centroid.dim(1) != mixed.dim(1))
    throw ShapeError("mix_group: centroid width " +
                     std::to_string(group.centroid.dim(1)) +
                     " != mixed width " + std::to_string(mixed.dim(1)));
  Tensor pooled = reduce_max(mixed, 0, /*keepdim=*/true);
  return centroid_concat ? concat_cols({pooled, group.centroid})
                         : add(pooled, group.centroid);
}

MixerParams make_mixer(int64_t width, const GroupingSpec& grouping,
                       const SplineGrid& grid, std::mt19937_64& rng) {
  if (grouping.branches.empty())
    throw ContractError("make_mixer: need at least one scale branch");
  MixerParams p;
  p.grouping = grouping;
  p.dkan = make_dkan(width, grid, rng);
  return p;
}

int64_t mixer_out_width(const MixerParams& p, int64_t width) {
  return static_cast<int64_t>(p.grouping.branches.size()) * width *
         (p.centroid_concat ? 2 : 1);
}

Tensor kansmixer_forward(const Tensor& seq, const MixerParams& p) {
  check_seq(seq);
  if (p.grouping.branches.empty())
    throw ContractError("kansmixer_forward: no scale branches");
  int64_t t = seq.dim(0), w = seq.dim(1);

  std::vector<int64_t> counts;
  for (const auto& b : p.grouping.branches)
    counts.push_back(group_count(t, b));
  for (size_t i = 1; i < counts.size(); ++i)
    if (counts[i] != counts[0]) {
      std::string msg = "kansmixer_forward: branch group counts differ: [";
      for (size_t j = 0; j < counts.size(); ++j)
        msg += (j ? ", " : "") + std::to_string(counts[j]);
      throw ContractError(msg + "]");
    }
  int64_t l = counts[0];

  // All groups of a branch run through the shared block as one batch. The
  // result matches the per-group op chain to ulp level (the BLAS may pair
  // rows into position-dependent kernels), and reruns are bitwise stable.
  std::vector<Tensor> branch_out;
  for (const auto& b : p.grouping.branches) {
    int64_t t_l = 2 * b.r_f + 1;
    Tensor padded = pad_sequence(seq, b.p_f);
    std::vector<int64_t> rows(static_cast<size_t>(l * t_l));
    std::vector<int64_t> centers(static_cast<size_t>(l));
    for (int64_t g = 0; g < l; ++g) {
      for (int64_t j = 0; j < t_l; ++j)
        rows[static_cast<size_t>(g * t_l + j)] = g * b.s_f + j;
      centers[static_cast<size_t>(g)] = g * b.s_f + b.r_f;
    }
    std::vector<double> tov_col(rows.size());
    std::vector<double> tl_vals = tov_values(t_l);
    for (int64_t g = 0; g < l; ++g)
      for (int64_t j = 0; j < t_l; ++j)
        tov_col[static_cast<size_t>(g * t_l + j)] =
            tl_vals[static_cast<size_t>(j)];

    Tensor x = add(gather_rows(padded, rows),
                   Tensor::from_data({l * t_l, 1}, std::move(tov_col)));
    Tensor y = add(dkan_block(x, p.dkan), x);
    Tensor pooled = reduce_max(reshape(y, {l, t_l, w}), 1);
    Tensor ctr = gather_rows(padded, centers);
    branch_out.push_back(p.centroid_concat ? concat_cols({pooled, ctr})
                                           : add(pooled, ctr));
  }
  return branch_out.size() == 1 ? branch_out[0] : concat_cols(branch_out);
}

}  // namespace khpn

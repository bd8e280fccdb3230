#include "suites.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <sstream>
#include <utility>

#include "khpn/gsp.hpp"
#include "khpn/kan.hpp"
#include "khpn/mixer.hpp"
#include "khpn/pointcloud.hpp"
#include "khpn/rmm.hpp"
#include "khpn/tensor.hpp"
#include "oracles.hpp"

namespace khpn::verify {
namespace {

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

PointCloudFrame random_frame(std::mt19937_64& rng, int64_t n, double span) {
  PointCloudFrame f;
  std::uniform_real_distribution<double> u(-span, span);
  f.coords.resize(static_cast<size_t>(3 * n));
  for (auto& c : f.coords) c = u(rng);
  return f;
}

SuiteResult matmul_vs_reference(uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    std::uniform_int_distribution<int64_t> dim(1, 17);
    int64_t m = dim(rng), k = dim(rng), n = dim(rng);
    std::vector<double> a(static_cast<size_t>(m * k)),
        b(static_cast<size_t>(k * n));
    for (auto& v : a) v = u(rng);
    for (auto& v : b) v = u(rng);
    Tensor ta = Tensor::from_data({m, k}, a);
    Tensor tb = Tensor::from_data({k, n}, b);
    Tensor tc = matmul(ta, tb);
    auto ref = oracle::matmul(a, b, m, k, n);
    for (int64_t i = 0; i < m * n; ++i)
      worst = std::max(worst, std::fabs(tc.data()[i] - ref[i]));
  }
  return {"matmul_vs_reference", worst < 1e-12,
          "max abs diff " + fmt("%.3e", worst)};
}

SuiteResult spline_partition_of_unity(uint64_t) {
  double worst = 0.0;
  for (int p = 1; p <= 3; ++p) {
    SplineGrid g = make_uniform_grid(-1.0, 1.0, 5, p);
    for (int i = 0; i < 1000; ++i) {
      double x = -1.0 + 2.0 * i / 999.0;
      auto b = bspline_basis(x, g);
      double s = 0.0;
      for (double v : b) s += v;
      worst = std::max(worst, std::fabs(s - 1.0));
    }
  }
  return {"spline_partition_of_unity", worst < 1e-10,
          "max |sum-1| " + fmt("%.3e", worst)};
}

SuiteResult spline_vs_recursive(uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  SplineGrid g = make_uniform_grid(-1.0, 1.0, 5, 3);
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    double x = u(rng);
    auto b = bspline_basis(x, g);
    for (int64_t i = 0; i < g.basis_count(); ++i) {
      double ref = oracle::bspline_recursive(x, i, g.p, g.knots);
      worst = std::max(worst, std::fabs(b[static_cast<size_t>(i)] - ref));
    }
  }
  return {"spline_vs_recursive", worst < 1e-12,
          "max abs diff " + fmt("%.3e", worst)};
}

SuiteResult fps_vs_reference(uint64_t seed) {
  for (int trial = 0; trial < 50; ++trial) {
    std::mt19937_64 rng(seed + static_cast<uint64_t>(trial));
    std::uniform_int_distribution<int64_t> nd(2, 64);
    int64_t n = nd(rng);
    PointCloudFrame f = random_frame(rng, n, 5.0);
    std::uniform_int_distribution<int64_t> kd(1, n);
    int64_t k = kd(rng);
    auto got = farthest_point_sample(f, k, 0);
    auto ref = oracle::fps(f, k, 0);
    if (got != ref) {
      std::ostringstream os;
      os << "mismatch at trial " << trial << " (n=" << n << ", k=" << k << ")";
      return {"fps_vs_reference", false, os.str()};
    }
  }
  return {"fps_vs_reference", true, "50 random frames, exact match"};
}

SuiteResult knn_vs_reference(uint64_t seed) {
  for (int trial = 0; trial < 50; ++trial) {
    std::mt19937_64 rng(seed + 1000 + static_cast<uint64_t>(trial));
    std::uniform_int_distribution<int64_t> nd(2, 64);
    int64_t n = nd(rng);
    PointCloudFrame f = random_frame(rng, n, 5.0);
    std::uniform_int_distribution<int64_t> kd(1, n);
    int64_t k = kd(rng);
    PointCloudFrame q = random_frame(rng, 3, 5.0);
    auto got = knn_query(f, q.coords, k);
    for (int64_t j = 0; j < 3; ++j) {
      auto ref = oracle::knn(f, q.point(j), k);
      for (int64_t i = 0; i < k; ++i)
        if (got[static_cast<size_t>(j * k + i)] != ref[static_cast<size_t>(i)]) {
          std::ostringstream os;
          os << "mismatch at trial " << trial << " query " << j;
          return {"knn_vs_reference", false, os.str()};
        }
    }
  }
  return {"knn_vs_reference", true, "50 random frames, exact match"};
}

SuiteResult ball_group_rules(uint64_t seed) {
  for (int trial = 0; trial < 50; ++trial) {
    std::mt19937_64 rng(seed + 2000 + static_cast<uint64_t>(trial));
    std::uniform_int_distribution<int64_t> nd(1, 48);
    int64_t n = nd(rng);
    PointCloudFrame f = random_frame(rng, n, 2.0);
    PointCloudFrame q = random_frame(rng, 2, 2.0);
    std::uniform_real_distribution<double> rd(0.3, 2.5);
    double radius = rd(rng);
    int64_t k = std::uniform_int_distribution<int64_t>(1, 8)(rng);
    auto idx = ball_group(f, q.coords, radius, k);
    for (int64_t c = 0; c < idx.centers(); ++c) {
      auto members = oracle::radius_members(f, q.point(c), radius);
      int64_t qc = idx.qualifying_counts[static_cast<size_t>(c)];
      int64_t expect_q = std::min<int64_t>(
          static_cast<int64_t>(members.size()), k);
      if (qc != expect_q)
        return {"ball_group_rules", false, "qualifying count mismatch"};
      for (int64_t i = 0; i < k; ++i) {
        int64_t nb = idx.neighbor_indices[static_cast<size_t>(c * k + i)];
        bool in_ball = oracle::dist2(f.point(nb), q.point(c)) <= radius * radius;
        if (i < qc && !in_ball)
          return {"ball_group_rules", false,
                  "qualifying slot filled with out-of-ball point"};
        if (!members.empty() && !in_ball)
          return {"ball_group_rules", false,
                  "fill slot left the ball although members exist"};
      }
      if (members.empty()) {
        // All slots must repeat the globally nearest point.
        auto ref = oracle::knn(f, q.point(c), 1);
        for (int64_t i = 0; i < k; ++i)
          if (idx.neighbor_indices[static_cast<size_t>(c * k + i)] != ref[0])
            return {"ball_group_rules", false,
                    "empty ball not filled with globally nearest point"};
      }
    }
  }
  return {"ball_group_rules", true, "50 random frames, all rules hold"};
}

SuiteResult motion_factored_vs_direct(uint64_t seed) {
  // Staged (per-slot, then across slots) evaluation against one flat
  // reduction over every displacement record, in both reducer modes.
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    std::mt19937_64 rng(seed + 4000 + static_cast<uint64_t>(trial));
    std::uniform_int_distribution<int64_t> rt_d(0, 2), a_d(1, 4), k_d(1, 8),
        n_d(8, 16), c_d(0, 3);
    int64_t r_t = rt_d(rng), a = a_d(rng), k = k_d(rng), c_in = c_d(rng);
    int64_t t = 2 * r_t + 1 + std::uniform_int_distribution<int64_t>(0, 2)(rng);
    std::uniform_real_distribution<double> u(-1.0, 1.0);

    PointCloudSequence seq(static_cast<size_t>(t));
    for (auto& f : seq) {
      int64_t n = n_d(rng);
      f.coords.resize(static_cast<size_t>(3 * n));
      for (auto& v : f.coords) v = u(rng);
      f.feature_width = c_in;
      f.features.resize(static_cast<size_t>(n * c_in));
      for (auto& v : f.features) v = u(rng);
    }

    ClipSpec spec;
    spec.d_t = 1;
    spec.r_t = r_t;
    spec.r_s = std::uniform_real_distribution<double>(0.3, 1.5)(rng);
    spec.K = k;
    spec.anchors = a;
    spec.knn_mode = (trial % 2 == 1);
    auto clips = split_clips(seq, spec);
    const Clip& clip = clips[clips.size() / 2];
    MotionScoper sc = build_motionscoper(seq, clip, spec);

    Mlp gamma = make_mlp(4 + c_in, {6, 5}, rng);
    std::vector<Tensor> cached(static_cast<size_t>(t));
    auto feats = [&](int64_t f) -> Tensor {
      if (c_in == 0) return Tensor();
      Tensor& slot = cached[static_cast<size_t>(f)];
      if (!slot.defined())
        slot = Tensor::from_data(
            {seq[static_cast<size_t>(f)].size(), c_in},
            seq[static_cast<size_t>(f)].features);
      return slot;
    };
    auto feat_row = [&](int64_t f, int64_t p) {
      const auto& fr = seq[static_cast<size_t>(f)];
      return std::vector<double>(
          fr.features.begin() + p * c_in, fr.features.begin() + (p + 1) * c_in);
    };

    for (bool sum_form : {false, true}) {
      Tensor got = point_conv_4d(sc, feats, c_in, gamma, sum_form);
      auto ref = oracle::point_conv_direct(sc, feat_row, c_in, gamma, sum_form);
      for (int64_t i = 0; i < got.numel(); ++i)
        worst = std::max(worst,
                         std::fabs(got.data()[static_cast<size_t>(i)] -
                                   ref[static_cast<size_t>(i)]));
    }
  }
  return {"motion_factored_vs_direct", worst < 1e-10,
          "100 scopers, both reducers, max abs diff " + fmt("%.3e", worst)};
}

SuiteResult posture_permutation_invariance(uint64_t seed) {
  std::mt19937_64 rng(seed + 4000);
  std::vector<SpatialEncodeLayerSpec> specs{
      {6, 3, 0.8, {8, 5}, true, 4, 3},
      {2, 2, 1.5, {8, 5}, true, 4, 3},
      {1, 0, 10.0, {8, 5}, true, 4, 3},
  };
  GspParams p = make_gsp(specs, 0, rng);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    PointCloudFrame f = random_frame(rng, 12, 1.0);
    Tensor base = gsp_forward(f, p);
    std::vector<int64_t> perm(static_cast<size_t>(f.size()));
    for (size_t i = 0; i < perm.size(); ++i) perm[i] = static_cast<int64_t>(i);
    std::shuffle(perm.begin(), perm.end(), rng);
    PointCloudFrame g;
    g.coords.resize(f.coords.size());
    for (size_t i = 0; i < perm.size(); ++i)
      for (int d = 0; d < 3; ++d)
        g.coords[3 * i + d] = f.coords[static_cast<size_t>(3 * perm[i] + d)];
    Tensor shuffled = gsp_forward(g, p);
    for (int64_t i = 0; i < base.numel(); ++i)
      worst = std::max(worst,
                       std::fabs(base.data()[static_cast<size_t>(i)] -
                                 shuffled.data()[static_cast<size_t>(i)]));
  }
  return {"posture_permutation_invariance", worst < 1e-9,
          "20 frames, max abs diff " + fmt("%.3e", worst)};
}

SuiteResult dislocation_tov_exact(uint64_t) {
  const std::vector<std::pair<int64_t, std::vector<double>>> closed{
      {1, {0.0}},
      {2, {-0.5, 0.5}},
      {3, {-0.5, 0.0, 0.5}},
      {5, {-0.5, -0.25, 0.0, 0.25, 0.5}},
  };
  for (const auto& [t_l, want] : closed) {
    auto got = tov_values(t_l);
    if (got != want)
      return {"dislocation_tov_exact", false,
              "closed form mismatch at t_l=" + std::to_string(t_l)};
  }
  for (int64_t t_l = 2; t_l <= 16; ++t_l) {
    auto v = tov_values(t_l);
    for (int64_t j = 0; j < t_l; ++j)
      if (v[static_cast<size_t>(j)] != -v[static_cast<size_t>(t_l - 1 - j)])
        return {"dislocation_tov_exact", false,
                "asymmetric at t_l=" + std::to_string(t_l)};
  }
  return {"dislocation_tov_exact", true,
          "closed forms bitwise, symmetric through t_l=16"};
}

SuiteResult mixing_exchange_invariance(uint64_t seed) {
  std::mt19937_64 rng(seed + 5000);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  SplineGrid grid = make_uniform_grid(-1.0, 1.0, 4, 2);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    int64_t w = 3 + static_cast<int64_t>(rng() % 3);
    int64_t t_l = 3 + 2 * static_cast<int64_t>(rng() % 2);
    DKanBlock dkan = make_dkan(w, grid, rng);
    std::vector<double> rows(static_cast<size_t>(t_l * w));
    for (auto& v : rows) v = u(rng);
    std::vector<double> ctr(static_cast<size_t>(w));
    for (auto& v : ctr) v = u(rng);

    DHyperpointGroup a;
    a.members = Tensor::from_data({t_l, w}, rows);
    a.t_l = t_l;
    a.t_o.resize(static_cast<size_t>(t_l));
    for (int64_t j = 0; j < t_l; ++j) a.t_o[static_cast<size_t>(j)] = j;
    a.centroid = Tensor::from_data({1, w}, ctr);

    // Swap two member rows together with their temporal order values.
    int64_t i = static_cast<int64_t>(rng() % static_cast<uint64_t>(t_l));
    int64_t j = static_cast<int64_t>(rng() % static_cast<uint64_t>(t_l));
    DHyperpointGroup b = a;
    std::vector<double> swapped = rows;
    for (int64_t c = 0; c < w; ++c)
      std::swap(swapped[static_cast<size_t>(i * w + c)],
                swapped[static_cast<size_t>(j * w + c)]);
    b.members = Tensor::from_data({t_l, w}, swapped);
    std::swap(b.t_o[static_cast<size_t>(i)], b.t_o[static_cast<size_t>(j)]);

    Tensor fa = mix_group(stkm_forward(a, dkan), a);
    Tensor fb = mix_group(stkm_forward(b, dkan), b);
    for (int64_t c = 0; c < w; ++c)
      worst = std::max(worst,
                       std::fabs(fa.data()[static_cast<size_t>(c)] -
                                 fb.data()[static_cast<size_t>(c)]));
  }
  // Exact in real arithmetic; the BLAS pairs rows into position-dependent
  // kernels, so swapped rows may differ in the last ulp.
  return {"mixing_exchange_invariance", worst < 1e-12,
          "20 groups, max abs diff " + fmt("%.3e", worst)};
}

SuiteResult gradcheck_composite(uint64_t seed) {
  std::mt19937_64 rng(seed + 3000);
  std::uniform_real_distribution<double> u(-0.8, 0.8);
  std::vector<double> xv(12);
  for (auto& v : xv) v = u(rng);
  Tensor x = Tensor::from_data({3, 4}, xv, true);
  auto f = [](const Tensor& t) {
    Tensor h = silu(t);
    Tensor r = reduce_max(h, 1);
    return sum_all(mul(r, r));
  };
  double err = grad_check(f, x, 1e-5);
  return {"gradcheck_composite", err < 1e-4,
          "max rel err " + fmt("%.3e", err)};
}

using SuiteFn = std::function<SuiteResult(uint64_t)>;

struct Entry {
  const char* name;
  SuiteFn fn;
};

const std::vector<Entry>& registry() {
  static const std::vector<Entry> reg = {
      {"matmul_vs_reference", matmul_vs_reference},
      {"spline_partition_of_unity", spline_partition_of_unity},
      {"spline_vs_recursive", spline_vs_recursive},
      {"fps_vs_reference", fps_vs_reference},
      {"knn_vs_reference", knn_vs_reference},
      {"ball_group_rules", ball_group_rules},
      {"motion_factored_vs_direct", motion_factored_vs_direct},
      {"posture_permutation_invariance", posture_permutation_invariance},
      {"dislocation_tov_exact", dislocation_tov_exact},
      {"mixing_exchange_invariance", mixing_exchange_invariance},
      {"gradcheck_composite", gradcheck_composite},
  };
  return reg;
}

}  // namespace

std::vector<SuiteResult> run_all(uint64_t seed) {
  std::vector<SuiteResult> out;
  for (const auto& e : registry()) out.push_back(e.fn(seed));
  return out;
}

std::vector<SuiteResult> run_named(const std::vector<std::string>& names,
                                   uint64_t seed) {
  std::vector<SuiteResult> out;
  for (const auto& want : names) {
    bool found = false;
    for (const auto& e : registry())
      if (want == e.name) {
        out.push_back(e.fn(seed));
        found = true;
        break;
      }
    if (!found) out.push_back({want, false, "unknown suite"});
  }
  return out;
}

std::vector<std::string> suite_names() {
  std::vector<std::string> out;
  for (const auto& e : registry()) out.emplace_back(e.name);
  return out;
}

}  // namespace khpn::verify

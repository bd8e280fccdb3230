#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"
#include "khpn/mixer.hpp"
#include "oracles.hpp"
#include "suites.hpp"

using namespace khpn;

namespace {

// Rows carry their index so window membership is visible in the values.
Tensor indexed_seq(int64_t t, int64_t w) {
  std::vector<double> v(static_cast<size_t>(t * w));
  for (int64_t i = 0; i < t; ++i)
    for (int64_t c = 0; c < w; ++c)
      v[static_cast<size_t>(i * w + c)] =
          static_cast<double>(i) + 0.1 * static_cast<double>(c);
  return Tensor::from_data({t, w}, std::move(v));
}

Tensor random_seq(std::mt19937_64& rng, int64_t t, int64_t w,
                  bool requires_grad = false) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(static_cast<size_t>(t * w));
  for (auto& x : v) x = u(rng);
  return Tensor::from_data({t, w}, std::move(v), requires_grad);
}

DHyperpointGroup random_group(std::mt19937_64& rng, int64_t t_l, int64_t w) {
  DHyperpointGroup g;
  g.members = random_seq(rng, t_l, w);
  g.t_l = t_l;
  g.t_o.resize(static_cast<size_t>(t_l));
  for (int64_t j = 0; j < t_l; ++j) g.t_o[static_cast<size_t>(j)] = j;
  g.centroid = random_seq(rng, 1, w);
  return g;
}

void zero_block(DKanBlock& blk) {
  for (KanLayerParams* l : {&blk.l1, &blk.l2, &blk.l3})
    for (Tensor* t : {&l->c, &l->w_b, &l->w_s})
      std::fill(t->mutable_data().begin(), t->mutable_data().end(), 0.0);
}

}  // namespace

TEST_CASE("sliding windows cover the padded sequence in temporal order") {
  Tensor seq = indexed_seq(6, 2);

  SUBCASE("no padding, unit stride") {
    ScaleSpec spec{1, 1, 0};
    CHECK(group_count(6, spec) == 4);
    auto groups = group_dhyperpoints(seq, spec);
    REQUIRE(groups.size() == 4);
    for (int64_t g = 0; g < 4; ++g) {
      const auto& grp = groups[static_cast<size_t>(g)];
      CHECK(grp.t_l == 3);
      CHECK(grp.t_o == std::vector<int64_t>{0, 1, 2});
      for (int64_t j = 0; j < 3; ++j)
        CHECK(grp.members.data()[static_cast<size_t>(2 * j)] ==
              static_cast<double>(g + j));
      CHECK(grp.centroid.data()[0] == static_cast<double>(g + 1));
    }
  }
  SUBCASE("stride equal to window tiles without overlap") {
    ScaleSpec spec{1, 3, 0};
    auto groups = group_dhyperpoints(seq, spec);
    REQUIRE(groups.size() == 2);
    CHECK(groups[0].members.data()[0] == 0.0);
    CHECK(groups[0].members.data()[4] == 2.0);
    CHECK(groups[1].members.data()[0] == 3.0);
    CHECK(groups[1].members.data()[4] == 5.0);
  }
  SUBCASE("same padding preserves the group count") {
    ScaleSpec spec{1, 1, 1};
    CHECK(group_count(6, spec) == 6);
    auto groups = group_dhyperpoints(seq, spec);
    REQUIRE(groups.size() == 6);
    // First and last windows reach one zero padding row each.
    CHECK(groups[0].members.data()[0] == 0.0);
    CHECK(groups[0].members.data()[1] == 0.0);
    CHECK(groups[0].members.data()[2] == 0.0);  // row 0 of the sequence
    CHECK(groups[0].centroid.data()[0] == 0.0);
    CHECK(groups[5].members.data()[2] == 5.0);  // last real row
    CHECK(groups[5].members.data()[4] == 0.0);  // trailing padding
    CHECK(groups[5].centroid.data()[0] == 5.0);
  }
  SUBCASE("window longer than the padded sequence is rejected") {
    CHECK_THROWS_AS(group_count(2, ScaleSpec{2, 1, 0}), ContractError);
    CHECK_THROWS_AS(group_count(6, ScaleSpec{1, 0, 0}), ContractError);
    CHECK_THROWS_AS(group_count(0, ScaleSpec{1, 1, 0}), ContractError);
  }
}

TEST_CASE("temporal order values match the closed forms bitwise") {
  CHECK(tov_values(1) == std::vector<double>{0.0});
  CHECK(tov_values(2) == std::vector<double>{-0.5, 0.5});
  CHECK(tov_values(3) == std::vector<double>{-0.5, 0.0, 0.5});
  CHECK(tov_values(5) ==
        std::vector<double>{-0.5, -0.25, 0.0, 0.25, 0.5});
  CHECK(tov_values(5)[1] == -0.25);
  CHECK_THROWS_AS(tov_values(0), ContractError);

  // Negation symmetry holds exactly for every length, dyadic or not.
  for (int64_t t_l = 2; t_l <= 16; ++t_l) {
    auto v = tov_values(t_l);
    for (int64_t j = 0; j < t_l; ++j)
      CHECK(v[static_cast<size_t>(j)] ==
            -v[static_cast<size_t>(t_l - 1 - j)]);
  }

  verify::SuiteResult suite =
      verify::run_named({"dislocation_tov_exact"}, 0).front();
  INFO(suite.detail);
  CHECK(suite.pass);
}

TEST_CASE("dislocation adds the order value to every component") {
  std::mt19937_64 rng(21);
  DHyperpointGroup g = random_group(rng, 3, 4);
  Tensor x = dislocate(g);
  auto tov = tov_values(3);
  for (int64_t j = 0; j < 3; ++j)
    for (int64_t c = 0; c < 4; ++c)
      CHECK(x.data()[static_cast<size_t>(4 * j + c)] ==
            g.members.data()[static_cast<size_t>(4 * j + c)] +
                tov[static_cast<size_t>(j)]);
  // The center member of an odd window is unchanged (ToV = 0).
  for (int64_t c = 0; c < 4; ++c)
    CHECK(x.data()[static_cast<size_t>(4 + c)] ==
          g.members.data()[static_cast<size_t>(4 + c)]);

  DHyperpointGroup single = random_group(rng, 1, 4);
  Tensor xs = dislocate(single);
  for (int64_t c = 0; c < 4; ++c)
    CHECK(xs.data()[static_cast<size_t>(c)] ==
          single.members.data()[static_cast<size_t>(c)]);

  DHyperpointGroup bad = random_group(rng, 3, 4);
  bad.t_o.pop_back();
  CHECK_THROWS_AS(dislocate(bad), ContractError);
}

TEST_CASE("residual mixing follows the dislocate-transform-add chain") {
  std::mt19937_64 rng(22);
  SplineGrid grid = make_uniform_grid(-1.0, 1.0, 4, 2);
  for (int trial = 0; trial < 10; ++trial) {
    int64_t w = 3 + (trial % 3);
    int64_t t_l = 1 + 2 * (trial % 3);
    DKanBlock dkan = make_dkan(w, grid, rng);
    DHyperpointGroup g = random_group(rng, t_l, w);

    Tensor y = stkm_forward(g, dkan);
    REQUIRE(y.shape() == Shape{t_l, w});

    auto tov = tov_values(t_l);
    for (int64_t j = 0; j < t_l; ++j) {
      std::vector<double> xj(static_cast<size_t>(w));
      for (int64_t c = 0; c < w; ++c)
        xj[static_cast<size_t>(c)] =
            g.members.data()[static_cast<size_t>(j * w + c)] +
            tov[static_cast<size_t>(j)];
      auto ref = oracle::dkan_direct(xj, dkan);
      for (int64_t c = 0; c < w; ++c)
        CHECK(std::fabs(y.data()[static_cast<size_t>(j * w + c)] -
                        (ref[static_cast<size_t>(c)] +
                         xj[static_cast<size_t>(c)])) < 1e-10);
    }
  }

  SUBCASE("zero-parameter block reduces to the dislocated input") {
    DKanBlock dkan = make_dkan(4, grid, rng);
    zero_block(dkan);
    DHyperpointGroup g = random_group(rng, 3, 4);
    Tensor y = stkm_forward(g, dkan);
    Tensor x = dislocate(g);
    for (int64_t i = 0; i < y.numel(); ++i)
      CHECK(y.data()[static_cast<size_t>(i)] ==
            x.data()[static_cast<size_t>(i)]);
  }
}

TEST_CASE("mixing is a componentwise max plus the centroid") {
  std::mt19937_64 rng(23);
  DHyperpointGroup g = random_group(rng, 3, 5);
  Tensor mixed = random_seq(rng, 3, 5);
  Tensor f = mix_group(mixed, g);
  REQUIRE(f.shape() == Shape{1, 5});
  for (int64_t c = 0; c < 5; ++c) {
    double mx = mixed.data()[static_cast<size_t>(c)];
    for (int64_t j = 1; j < 3; ++j)
      mx = std::max(mx, mixed.data()[static_cast<size_t>(5 * j + c)]);
    CHECK(f.data()[static_cast<size_t>(c)] ==
          mx + g.centroid.data()[static_cast<size_t>(c)]);
  }

  SUBCASE("equal members collapse to one row") {
    std::vector<double> row{0.3, -0.8, 1.2, 0.0, 2.5};
    std::vector<double> rows;
    for (int j = 0; j < 3; ++j) rows.insert(rows.end(), row.begin(), row.end());
    Tensor same = Tensor::from_data({3, 5}, rows);
    Tensor out = mix_group(same, g);
    for (int64_t c = 0; c < 5; ++c)
      CHECK(out.data()[static_cast<size_t>(c)] ==
            row[static_cast<size_t>(c)] +
                g.centroid.data()[static_cast<size_t>(c)]);
  }
  SUBCASE("single member passes through") {
    Tensor one = random_seq(rng, 1, 5);
    Tensor out = mix_group(one, g);
    for (int64_t c = 0; c < 5; ++c)
      CHECK(out.data()[static_cast<size_t>(c)] ==
            one.data()[static_cast<size_t>(c)] +
                g.centroid.data()[static_cast<size_t>(c)]);
  }
  SUBCASE("concatenation variant keeps both halves") {
    Tensor out = mix_group(mixed, g, /*centroid_concat=*/true);
    REQUIRE(out.shape() == Shape{1, 10});
    Tensor pooled = reduce_max(mixed, 0, true);
    for (int64_t c = 0; c < 5; ++c) {
      CHECK(out.data()[static_cast<size_t>(c)] ==
            pooled.data()[static_cast<size_t>(c)]);
      CHECK(out.data()[static_cast<size_t>(5 + c)] ==
            g.centroid.data()[static_cast<size_t>(c)]);
    }
  }
  SUBCASE("width mismatch is rejected") {
    Tensor narrow = random_seq(rng, 3, 4);
    CHECK_THROWS_AS(mix_group(narrow, g), ShapeError);
  }
}

TEST_CASE("exchanging members with their order values leaves mixing fixed") {
  verify::SuiteResult suite =
      verify::run_named({"mixing_exchange_invariance"}, 77).front();
  INFO(suite.detail);
  CHECK(suite.pass);
}

TEST_CASE("member order is generically significant") {
  std::mt19937_64 rng(24);
  SplineGrid grid = make_uniform_grid(-1.0, 1.0, 4, 2);
  int changed = 0;
  const int trials = 100;
  for (int t = 0; t < trials; ++t) {
    DKanBlock dkan = make_dkan(4, grid, rng);
    DHyperpointGroup g = random_group(rng, 3, 4);
    DHyperpointGroup rev = g;
    std::vector<double> rows(g.members.data());
    for (int64_t c = 0; c < 4; ++c)
      std::swap(rows[static_cast<size_t>(c)],
                rows[static_cast<size_t>(8 + c)]);
    rev.members = Tensor::from_data({3, 4}, rows);  // t_o kept as 0,1,2
    Tensor fa = mix_group(stkm_forward(g, dkan), g);
    Tensor fb = mix_group(stkm_forward(rev, dkan), rev);
    for (int64_t c = 0; c < 4; ++c)
      if (fa.data()[static_cast<size_t>(c)] !=
          fb.data()[static_cast<size_t>(c)]) {
        ++changed;
        break;
      }
  }
  CHECK(changed >= 90);
}

TEST_CASE("scale branches fuse by feature concatenation") {
  std::mt19937_64 rng(25);
  SplineGrid grid = make_uniform_grid(-1.0, 1.0, 4, 2);
  Tensor seq = random_seq(rng, 6, 4);

  SUBCASE("default two-branch config preserves length") {
    MixerParams p = make_mixer(4, default_grouping(), grid, rng);
    Tensor out = kansmixer_forward(seq, p);
    REQUIRE(out.shape() == Shape{6, 8});
    CHECK(mixer_out_width(p, 4) == 8);
  }
  SUBCASE("identical branches produce identical halves") {
    GroupingSpec two{{{1, 1, 1}, {1, 1, 1}}};
    MixerParams p = make_mixer(4, two, grid, rng);
    Tensor out = kansmixer_forward(seq, p);
    REQUIRE(out.shape() == Shape{6, 8});
    for (int64_t i = 0; i < 6; ++i)
      for (int64_t c = 0; c < 4; ++c)
        CHECK(out.data()[static_cast<size_t>(8 * i + c)] ==
              out.data()[static_cast<size_t>(8 * i + 4 + c)]);
  }
  SUBCASE("misaligned branch group counts are rejected with the counts") {
    GroupingSpec bad{{{1, 1, 1}, {1, 2, 2}}};
    MixerParams p = make_mixer(4, bad, grid, rng);
    try {
      kansmixer_forward(seq, p);
      FAIL("expected ContractError");
    } catch (const ContractError& e) {
      CHECK(std::string(e.what()).find("[6, 4]") != std::string::npos);
    }
  }
  SUBCASE("batched evaluation equals the per-group op chain") {
    // Same math, different gemm row batching: equal to the last few ulps.
    MixerParams p = make_mixer(4, default_grouping(), grid, rng);
    Tensor batched = kansmixer_forward(seq, p);
    std::vector<Tensor> branch_rows;
    for (const auto& b : p.grouping.branches) {
      auto groups = group_dhyperpoints(seq, b);
      std::vector<Tensor> rows;
      for (const auto& g : groups)
        rows.push_back(mix_group(stkm_forward(g, p.dkan), g));
      branch_rows.push_back(concat_rows(rows));
    }
    Tensor manual = concat_cols(branch_rows);
    REQUIRE(manual.shape() == batched.shape());
    for (int64_t i = 0; i < manual.numel(); ++i)
      CHECK(std::fabs(batched.data()[static_cast<size_t>(i)] -
                      manual.data()[static_cast<size_t>(i)]) < 1e-13);
  }
  SUBCASE("stacking same-length configs preserves sequence length") {
    MixerParams p1 = make_mixer(4, default_grouping(), grid, rng);
    MixerParams p2 = make_mixer(8, default_grouping(), grid, rng);
    Tensor out = kansmixer_forward(kansmixer_forward(seq, p1), p2);
    REQUIRE(out.shape() == Shape{6, 16});
  }
}

TEST_CASE("mixer gradients match finite differences") {
  std::mt19937_64 rng(26);
  SplineGrid grid = make_uniform_grid(-1.0, 1.0, 4, 2);
  Tensor seq = random_seq(rng, 4, 3, /*requires_grad=*/true);
  MixerParams p = make_mixer(3, default_grouping(), grid, rng);
  auto loss = [&](const Tensor&) {
    Tensor y = kansmixer_forward(seq, p);
    return sum_all(mul(y, y));
  };
  CHECK(grad_check(loss, seq, 1e-5) < 1e-4);
  for (KanLayerParams* l : {&p.dkan.l1, &p.dkan.l2, &p.dkan.l3})
    for (Tensor* t : {&l->c, &l->w_b, &l->w_s})
      CHECK(grad_check(loss, *t, 1e-5) < 1e-4);
}

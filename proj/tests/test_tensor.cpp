#include <algorithm>
#include <cmath>
#include <cstring>
#include <random>

#include "doctest.h"
#include "khpn/tensor.hpp"
#include "oracles.hpp"

using namespace khpn;

namespace {

std::vector<double> random_vec(std::mt19937_64& rng, int64_t n, double lo,
                               double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(static_cast<size_t>(n));
  for (auto& x : v) x = u(rng);
  return v;
}

Tensor random_tensor(std::mt19937_64& rng, Shape s, bool rg, double lo = -1.5,
                     double hi = 1.5) {
  return Tensor::from_data(s, random_vec(rng, shape_numel(s), lo, hi), rg);
}

}  // namespace

TEST_CASE("tensor construction and invariants") {
  Tensor z = Tensor::zeros({2, 3});
  CHECK(z.numel() == 6);
  CHECK(z.rank() == 2);
  for (double v : z.data()) CHECK(v == 0.0);

  Tensor f = Tensor::full({4}, 2.5);
  for (double v : f.data()) CHECK(v == 2.5);

  Tensor s = Tensor::scalar(7.0);
  CHECK(s.numel() == 1);
  CHECK(s.item() == 7.0);

  CHECK_THROWS_AS(Tensor::from_data({2, 2}, {1.0, 2.0, 3.0}), ShapeError);
  CHECK_THROWS_AS(Tensor::zeros({0, 3}), ShapeError);
  CHECK_THROWS_AS(Tensor::zeros({2, -1}), ShapeError);
}

TEST_CASE("matmul identity and scalar cases") {
  std::mt19937_64 rng(1);
  Tensor eye = Tensor::from_data({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  Tensor b = random_tensor(rng, {3, 5}, false);
  Tensor c = matmul(eye, b);
  for (int64_t i = 0; i < 15; ++i) CHECK(c.data()[i] == b.data()[i]);

  Tensor p = matmul(Tensor::from_data({1, 1}, {2.0}),
                    Tensor::from_data({1, 1}, {3.0}));
  CHECK(p.data()[0] == 6.0);
}

TEST_CASE("matmul matches triple-loop reference on random 5x4 * 4x3") {
  std::mt19937_64 rng(42);
  auto av = random_vec(rng, 20, -2.0, 2.0);
  auto bv = random_vec(rng, 12, -2.0, 2.0);
  Tensor a = Tensor::from_data({5, 4}, av);
  Tensor b = Tensor::from_data({4, 3}, bv);
  Tensor c = matmul(a, b);
  auto ref = oracle::matmul(av, bv, 5, 4, 3);
  for (int64_t i = 0; i < 15; ++i)
    CHECK(std::fabs(c.data()[i] - ref[i]) < 1e-12);
}

TEST_CASE("matmul shape error names both shapes") {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({4, 5});
  try {
    matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    std::string msg = e.what();
    CHECK(msg.find("[2,3]") != std::string::npos);
    CHECK(msg.find("[4,5]") != std::string::npos);
  }
}

TEST_CASE("matmul_nt equals matmul with pre-transposed operand") {
  std::mt19937_64 rng(7);
  Tensor a = random_tensor(rng, {4, 6}, false);
  Tensor bt = random_tensor(rng, {5, 6}, false);
  std::vector<double> btrans(30);
  for (int64_t i = 0; i < 5; ++i)
    for (int64_t j = 0; j < 6; ++j) btrans[j * 5 + i] = bt.data()[i * 6 + j];
  Tensor c1 = matmul_nt(a, bt);
  Tensor c2 = matmul(a, Tensor::from_data({6, 5}, btrans));
  for (int64_t i = 0; i < 20; ++i)
    CHECK(c1.data()[i] == doctest::Approx(c2.data()[i]).epsilon(1e-13));
}

TEST_CASE("elementwise identities and values") {
  std::mt19937_64 rng(3);
  Tensor x = random_tensor(rng, {2, 3}, false);

  Tensor xz = add(x, Tensor::zeros({2, 3}));
  Tensor xo = mul(x, Tensor::full({2, 3}, 1.0));
  for (int64_t i = 0; i < 6; ++i) {
    CHECK(xz.data()[i] == x.data()[i]);
    CHECK(xo.data()[i] == x.data()[i]);
  }

  Tensor e = exp(Tensor::from_data({2}, {0.0, 1.0}));
  CHECK(std::fabs(e.data()[0] - 1.0) < 1e-12);
  CHECK(std::fabs(e.data()[1] - 2.718281828459045) < 1e-12);

  Tensor d = sub(x, x);
  for (double v : d.data()) CHECK(v == 0.0);
  Tensor nn = neg(neg(x));
  for (int64_t i = 0; i < 6; ++i) CHECK(nn.data()[i] == x.data()[i]);
}

TEST_CASE("elementwise op-tag dispatch matches named ops") {
  std::mt19937_64 rng(4);
  Tensor a = random_tensor(rng, {3, 2}, false);
  Tensor b = random_tensor(rng, {3, 2}, false);
  CHECK(elementwise(EwOp::add, a, b).data() == add(a, b).data());
  CHECK(elementwise(EwOp::sub, a, b).data() == sub(a, b).data());
  CHECK(elementwise(EwOp::mul, a, b).data() == mul(a, b).data());
  CHECK(elementwise(EwOp::neg, a).data() == neg(a).data());
  CHECK(elementwise(EwOp::exp, a).data() == exp(a).data());
  CHECK(elementwise(EwOp::silu, a).data() == silu(a).data());
  CHECK(reduce(ReduceOp::max, a, 0).data() == reduce_max(a, 0).data());
  CHECK(reduce(ReduceOp::mean, a, 1).data() == reduce_mean(a, 1).data());
  CHECK(reduce(ReduceOp::sum, a, 0).data() == reduce_sum(a, 0).data());
}

TEST_CASE("trailing-dimension broadcasting") {
  Tensor a = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor r = Tensor::from_data({3}, {10, 20, 30});
  Tensor s = add(a, r);
  std::vector<double> want = {11, 22, 33, 14, 25, 36};
  CHECK(s.data() == want);

  Tensor col = Tensor::from_data({2, 1}, {100, 200});
  Tensor t = add(a, col);
  std::vector<double> want2 = {101, 102, 103, 204, 205, 206};
  CHECK(t.data() == want2);

  CHECK_THROWS_AS(add(a, Tensor::zeros({4})), ShapeError);
  CHECK_THROWS_AS(mul(a, Tensor::zeros({2, 2})), ShapeError);
}

TEST_CASE("broadcast add and mul are commutative bitwise") {
  std::mt19937_64 rng(5);
  Tensor a = random_tensor(rng, {4, 5}, false, -100.0, 100.0);
  Tensor b = random_tensor(rng, {4, 5}, false, -100.0, 100.0);
  CHECK(std::memcmp(add(a, b).data().data(), add(b, a).data().data(),
                    20 * sizeof(double)) == 0);
  CHECK(std::memcmp(mul(a, b).data().data(), mul(b, a).data().data(),
                    20 * sizeof(double)) == 0);
  Tensor r = random_tensor(rng, {5}, false, -100.0, 100.0);
  CHECK(std::memcmp(add(a, r).data().data(), add(r, a).data().data(),
                    20 * sizeof(double)) == 0);
  CHECK(std::memcmp(mul(a, r).data().data(), mul(r, a).data().data(),
                    20 * sizeof(double)) == 0);
}

TEST_CASE("reductions: values and tie routing") {
  Tensor a = Tensor::from_data({3}, {1, 2, 3});
  CHECK(reduce_mean(a, 0).item() == doctest::Approx(2.0));
  CHECK(reduce_sum(Tensor::zeros({4, 4}), 0).data() ==
        std::vector<double>(4, 0.0));

  // Identical rows: max picks either value; gradient goes to the first row.
  Tensor m = Tensor::from_data({2, 3}, {5, 1, 7, 5, 1, 7}, true);
  Tensor mx = reduce_max(m, 0);
  CHECK(mx.data() == std::vector<double>{5, 1, 7});
  backward(sum_all(mx));
  CHECK(m.grad() == std::vector<double>{1, 1, 1, 0, 0, 0});

  Tensor b = Tensor::zeros({2, 2});
  CHECK_THROWS_AS(reduce_sum(b, 2), ShapeError);
  CHECK_THROWS_AS(reduce_max(b, -1), ShapeError);

  // keepdim retains a size-1 axis.
  Tensor k = reduce_sum(Tensor::zeros({2, 3}), 1, true);
  CHECK(k.shape() == Shape{2, 1});
}

TEST_CASE("reduce_max routes gradient to first argmax within the axis") {
  Tensor x = Tensor::from_data({1, 4}, {2, 9, 9, 3}, true);
  backward(sum_all(reduce_max(x, 1)));
  CHECK(x.grad() == std::vector<double>{0, 1, 0, 0});
}

TEST_CASE("backward basics") {
  Tensor x = Tensor::scalar(3.0, true);
  Tensor loss = mul(x, x);
  backward(loss);
  CHECK(x.grad()[0] == doctest::Approx(6.0));
  CHECK(loss.n->grad[0] == 1.0);

  // Constant loss: gradient flows but is identically zero.
  Tensor y = Tensor::from_data({3}, {1, 2, 3}, true);
  Tensor c = mul_scalar(sum_all(y), 0.0);
  backward(c);
  CHECK(y.grad() == std::vector<double>{0, 0, 0});
}

TEST_CASE("backward contract violations") {
  Tensor x = Tensor::from_data({2}, {1, 2}, true);
  Tensor v = silu(x);
  CHECK_THROWS_AS(backward(v), ContractError);  // non-scalar loss

  Tensor s = sum_all(v);
  backward(s);
  CHECK_THROWS_AS(backward(s), ContractError);  // repeated call
}

TEST_CASE("backward is deterministic bitwise") {
  auto run = [](uint64_t seed) {
    std::mt19937_64 rng(seed);
    Tensor a = random_tensor(rng, {6, 4}, true);
    Tensor b = random_tensor(rng, {5, 4}, true);
    Tensor h = silu(matmul_nt(a, b));
    Tensor loss = sum_all(mul(h, h));
    backward(loss);
    auto g = a.grad();
    g.insert(g.end(), b.grad().begin(), b.grad().end());
    return g;
  };
  auto g1 = run(99), g2 = run(99);
  CHECK(std::memcmp(g1.data(), g2.data(), g1.size() * sizeof(double)) == 0);
}

TEST_CASE("composite graph gradient matches finite differences") {
  std::mt19937_64 rng(11);
  Tensor a = random_tensor(rng, {3, 4}, true);
  Tensor w = random_tensor(rng, {4, 2}, false);
  auto f = [&](const Tensor& t) { return sum_all(silu(matmul(t, w))); };
  CHECK(grad_check(f, a, 1e-5) < 1e-5);
}

TEST_CASE("grad_check on linear and smooth functions") {
  std::mt19937_64 rng(12);
  Tensor x = random_tensor(rng, {7}, true);
  auto fsum = [](const Tensor& t) { return sum_all(t); };
  // Central differences are exact for linear maps, so a generous step keeps
  // the roundoff of the two sums negligible.
  CHECK(grad_check(fsum, x, 1e-2) < 1e-12);
  auto fsilu = [](const Tensor& t) { return sum_all(silu(t)); };
  CHECK(grad_check(fsilu, x, 1e-5) < 1e-6);
}

TEST_CASE("grad_check reports non-finite evaluations") {
  Tensor x = Tensor::from_data({2}, {0.5, 1e-6}, true);
  auto f = [](const Tensor& t) { return sum_all(log(t)); };
  // log goes non-finite when the second component is pushed negative.
  CHECK_THROWS_AS(grad_check(f, x, 1e-3), NumericError);
}

TEST_CASE("finite differences agree for every op over randomized shapes") {
  int combos = 0;
  auto sweep = [&combos](const char* name,
                         const std::function<Tensor(const Tensor&)>& f,
                         Shape shape, double lo, double hi, int seeds) {
    for (int s = 0; s < seeds; ++s) {
      std::mt19937_64 rng(static_cast<uint64_t>(1000 + 7 * s) ^
                          std::hash<std::string>{}(name));
      Tensor x = random_tensor(rng, shape, true, lo, hi);
      double err = grad_check(f, x, 1e-5);
      INFO(name << " seed " << s);
      CHECK(err < 1e-4);
      ++combos;
    }
  };

  std::mt19937_64 prng(2024);
  Tensor b23 = random_tensor(prng, {2, 3}, false);
  Tensor b3 = random_tensor(prng, {3}, false);
  Tensor w42 = random_tensor(prng, {4, 2}, false);
  Tensor w24 = random_tensor(prng, {2, 4}, false);
  Tensor kw = random_tensor(prng, {3, 2}, false);
  Tensor kb = random_tensor(prng, {1}, false);

  sweep("add", [&](const Tensor& t) { return sum_all(add(t, b23)); }, {2, 3},
        -2, 2, 6);
  sweep("add_bcast", [&](const Tensor& t) { return sum_all(add(t, b3)); },
        {2, 3}, -2, 2, 6);
  sweep("add_bcast_left",
        [&](const Tensor& t) { return sum_all(mul(add(b23, t), b23)); }, {3},
        -2, 2, 6);
  sweep("sub", [&](const Tensor& t) { return sum_all(sub(t, b23)); }, {2, 3},
        -2, 2, 6);
  sweep("mul", [&](const Tensor& t) { return sum_all(mul(t, b23)); }, {2, 3},
        -2, 2, 6);
  sweep("mul_self", [&](const Tensor& t) { return sum_all(mul(t, t)); },
        {2, 3}, -2, 2, 6);
  sweep("neg", [&](const Tensor& t) { return sum_all(neg(t)); }, {5}, -2, 2,
        4);
  sweep("exp", [&](const Tensor& t) { return sum_all(exp(t)); }, {5}, -1, 1,
        6);
  sweep("log", [&](const Tensor& t) { return sum_all(log(t)); }, {5}, 0.5, 3,
        6);
  sweep("sigmoid", [&](const Tensor& t) { return sum_all(sigmoid(t)); }, {5},
        -3, 3, 6);
  sweep("silu", [&](const Tensor& t) { return sum_all(silu(t)); }, {5}, -3, 3,
        6);
  sweep("add_scalar", [&](const Tensor& t) { return sum_all(add_scalar(t, 1.5)); },
        {4}, -2, 2, 4);
  sweep("mul_scalar", [&](const Tensor& t) { return sum_all(mul_scalar(t, -2.5)); },
        {4}, -2, 2, 4);
  sweep("matmul_a",
        [&](const Tensor& t) { return sum_all(silu(matmul(t, w42))); }, {3, 4},
        -1, 1, 6);
  sweep("matmul_b",
        [&](const Tensor& t) { return sum_all(silu(matmul(w24, t))); }, {4, 3},
        -1, 1, 6);
  sweep("matmul_nt_a",
        [&](const Tensor& t) { return sum_all(silu(matmul_nt(t, w42))); },
        {3, 2}, -1, 1, 6);
  sweep("matmul_nt_b",
        [&](const Tensor& t) { return sum_all(silu(matmul_nt(w24, t))); },
        {3, 4}, -1, 1, 6);
  sweep("reduce_max",
        [&](const Tensor& t) { return sum_all(reduce_max(t, 1)); }, {3, 5}, -2,
        2, 6);
  sweep("reduce_max_mid",
        [&](const Tensor& t) { return sum_all(reduce_max(t, 1, true)); },
        {2, 3, 2}, -2, 2, 6);
  sweep("reduce_mean",
        [&](const Tensor& t) { return sum_all(reduce_mean(t, 0)); }, {3, 5},
        -2, 2, 4);
  sweep("reduce_sum",
        [&](const Tensor& t) { return sum_all(mul(reduce_sum(t, 1), b3)); },
        {3, 5}, -2, 2, 4);
  sweep("reshape",
        [&](const Tensor& t) {
          return sum_all(mul(reshape(t, {3, 2}), reshape(b23, {3, 2})));
        },
        {2, 3}, -2, 2, 4);
  sweep("gather_rows",
        [&](const Tensor& t) {
          return sum_all(silu(gather_rows(t, {2, 0, 2, 1})));
        },
        {3, 4}, -2, 2, 6);
  sweep("concat_rows",
        [&](const Tensor& t) {
          return sum_all(silu(concat_rows({t, b23})));
        },
        {2, 3}, -2, 2, 4);
  sweep("concat_cols",
        [&](const Tensor& t) {
          return sum_all(silu(concat_cols({t, b23})));
        },
        {2, 2}, -2, 2, 4);
  sweep("conv1d_same",
        [&](const Tensor& t) {
          return sum_all(silu(conv1d_same(t, kw, kb)));
        },
        {2, 5, 2}, -1, 1, 6);

  CHECK(combos >= 100);
}

TEST_CASE("gather_rows accumulates gradient across duplicate indices") {
  Tensor x = Tensor::from_data({2, 2}, {1, 2, 3, 4}, true);
  Tensor g = gather_rows(x, {0, 0, 1});
  CHECK(g.shape() == Shape{3, 2});
  backward(sum_all(g));
  CHECK(x.grad() == std::vector<double>{2, 2, 1, 1});
}

TEST_CASE("concat shapes and values") {
  Tensor a = Tensor::from_data({1, 2}, {1, 2});
  Tensor b = Tensor::from_data({2, 2}, {3, 4, 5, 6});
  Tensor r = concat_rows({a, b});
  CHECK(r.shape() == Shape{3, 2});
  CHECK(r.data() == std::vector<double>{1, 2, 3, 4, 5, 6});

  Tensor c = Tensor::from_data({2, 1}, {7, 8});
  Tensor d = concat_cols({b, c});
  CHECK(d.shape() == Shape{2, 3});
  CHECK(d.data() == std::vector<double>{3, 4, 7, 5, 6, 8});

  CHECK_THROWS_AS(concat_rows({a, c}), ShapeError);
  CHECK_THROWS_AS(concat_cols({a, c}), ShapeError);
}

TEST_CASE("conv1d_same hand-computed example") {
  // One batch, length 4, one channel; kernel [1, 0, -1], bias 0.5:
  // out[l] = x[l-1] - x[l+1] + 0.5 with zero padding at the ends.
  Tensor x = Tensor::from_data({1, 4, 1}, {1, 2, 3, 4});
  Tensor w = Tensor::from_data({3, 1}, {1, 0, -1});
  Tensor b = Tensor::from_data({1}, {0.5});
  Tensor y = conv1d_same(x, w, b);
  CHECK(y.shape() == Shape{1, 4});
  CHECK(y.data()[0] == doctest::Approx(0.0 - 2.0 + 0.5));
  CHECK(y.data()[1] == doctest::Approx(1.0 - 3.0 + 0.5));
  CHECK(y.data()[2] == doctest::Approx(2.0 - 4.0 + 0.5));
  CHECK(y.data()[3] == doctest::Approx(3.0 - 0.0 + 0.5));

  CHECK_THROWS_AS(
      conv1d_same(x, Tensor::from_data({2, 1}, {1, 1}), b),  // even width
      ContractError);
}

TEST_CASE("sigmoid and silu are numerically stable at large inputs") {
  Tensor x = Tensor::from_data({2}, {50.0, -50.0});
  Tensor s = sigmoid(x);
  CHECK(s.data()[0] == doctest::Approx(1.0));
  CHECK(s.data()[1] > 0.0);
  CHECK(s.data()[1] < 1e-20);
  Tensor y = silu(Tensor::from_data({1}, {30.0}));
  CHECK(std::fabs(y.data()[0] - 30.0) < 1e-11);
}

TEST_CASE("NoGradGuard suppresses graph construction") {
  Tensor x = Tensor::from_data({2}, {1, 2}, true);
  NoGradGuard ng;
  Tensor y = silu(x);
  CHECK_FALSE(y.requires_grad());
  CHECK(y.n->parents.empty());
}

TEST_CASE("raw gemm matches reference for all transpose combinations") {
  std::mt19937_64 rng(31);
  const int64_t m = 4, n = 3, k = 5;
  auto av = random_vec(rng, m * k, -2, 2);
  auto bv = random_vec(rng, k * n, -2, 2);
  auto ref = oracle::matmul(av, bv, m, k, n);

  std::vector<double> at(static_cast<size_t>(k * m));
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < k; ++j) at[j * m + i] = av[i * k + j];
  std::vector<double> btr(static_cast<size_t>(n * k));
  for (int64_t i = 0; i < k; ++i)
    for (int64_t j = 0; j < n; ++j) btr[j * k + i] = bv[i * n + j];

  std::vector<double> c(static_cast<size_t>(m * n));
  auto check = [&]() {
    for (int64_t i = 0; i < m * n; ++i)
      CHECK(std::fabs(c[i] - ref[i]) < 1e-12);
  };
  gemm(false, false, m, n, k, 1.0, av.data(), k, bv.data(), n, 0.0, c.data(), n);
  check();
  gemm(true, false, m, n, k, 1.0, at.data(), m, bv.data(), n, 0.0, c.data(), n);
  check();
  gemm(false, true, m, n, k, 1.0, av.data(), k, btr.data(), k, 0.0, c.data(), n);
  check();
  gemm(true, true, m, n, k, 1.0, at.data(), m, btr.data(), k, 0.0, c.data(), n);
  check();

  // beta accumulates.
  std::vector<double> acc(static_cast<size_t>(m * n), 1.0);
  gemm(false, false, m, n, k, 1.0, av.data(), k, bv.data(), n, 1.0, acc.data(), n);
  for (int64_t i = 0; i < m * n; ++i)
    CHECK(std::fabs(acc[i] - (ref[i] + 1.0)) < 1e-12);
}

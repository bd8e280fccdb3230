#include <benchmark/benchmark.h>

#include <random>

#include "khpn/kan.hpp"
#include "khpn/pointcloud.hpp"
#include "khpn/tensor.hpp"

namespace {

khpn::PointCloudFrame make_frame(int64_t n, uint64_t seed) {
  khpn::PointCloudFrame f;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  f.coords.resize(static_cast<size_t>(3 * n));
  for (auto& c : f.coords) c = u(rng);
  return f;
}

void BM_fps(benchmark::State& state) {
  auto f = make_frame(state.range(0), 11);
  for (auto _ : state) {
    auto idx = khpn::farthest_point_sample(f, state.range(1), 0);
    benchmark::DoNotOptimize(idx);
  }
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_fps)->Args({256, 96})->Args({1024, 128});

void BM_knn(benchmark::State& state) {
  auto f = make_frame(state.range(0), 13);
  auto q = make_frame(64, 17);
  for (auto _ : state) {
    auto idx = khpn::knn_query(f, q.coords, state.range(1));
    benchmark::DoNotOptimize(idx);
  }
  state.SetItemsProcessed(state.iterations() * 64);
}
BENCHMARK(BM_knn)->Args({256, 12})->Args({1024, 16});

void BM_ball_group(benchmark::State& state) {
  auto f = make_frame(state.range(0), 19);
  auto q = make_frame(64, 23);
  for (auto _ : state) {
    auto idx = khpn::ball_group(f, q.coords, 0.3, state.range(1));
    benchmark::DoNotOptimize(idx);
  }
  state.SetItemsProcessed(state.iterations() * 64);
}
BENCHMARK(BM_ball_group)->Args({256, 12})->Args({1024, 16});

void BM_kan_layer(benchmark::State& state) {
  std::mt19937_64 rng(29);
  auto grid = khpn::make_uniform_grid(-1.0, 1.0, 5, 3);
  auto layer = khpn::make_kan_layer(64, 64, grid, rng);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> xv(static_cast<size_t>(state.range(0)) * 64);
  for (auto& v : xv) v = u(rng);
  khpn::Tensor x = khpn::Tensor::from_data({state.range(0), 64}, xv);
  for (auto _ : state) {
    khpn::NoGradGuard ng;
    auto y = khpn::kan_layer(x, layer);
    benchmark::DoNotOptimize(y);
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_kan_layer)->Arg(24)->Arg(256);

}  // namespace

BENCHMARK_MAIN();

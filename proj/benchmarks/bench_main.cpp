#include "wordflow/analytics.hpp"
#include "wordflow/layout.hpp"
#include "wordflow/measures.hpp"

#include <benchmark/benchmark.h>

#include <cmath>
#include <random>

using namespace wordflow;

namespace {

void BM_DeltaS(benchmark::State& state) {
  const auto dim = static_cast<Eigen::Index>(state.range(0));
  const Vector w = Vector::LinSpaced(dim, -1.0, 1.0);
  const Scorer phi = [&](const Vector& x) { return 1.0 / (1.0 + std::exp(-w.dot(x))); };
  const Vector h = Vector::Constant(dim, 0.1);
  CorpusNormalization norm;
  std::uint64_t seed = 0;
  for (auto _ : state) benchmark::DoNotOptimize(estimate_delta_s(phi, h, 0.5, norm, 128, ++seed));
}
BENCHMARK(BM_DeltaS)->Arg(8)->Arg(64)->Arg(768);

void BM_LayerDp(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0, 3);
  std::vector<double> d(m, 0.0);
  for (std::size_t i = 1; i < m; ++i) d[i] = u(rng);
  std::vector<int> prev(m);
  for (std::size_t i = 0; i < m; ++i) prev[i] = static_cast<int>(i * 2);
  for (auto _ : state) benchmark::DoNotOptimize(optimize_layer_dp(prev, std::nullopt, d, 0.4, 5.0, 64));
}
BENCHMARK(BM_LayerDp)->Arg(8)->Arg(24);

void BM_Storyline(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0, 1);
  DistanceProfile raw(6, std::vector<double>(m, 0.0));
  for (auto& row : raw)
    for (std::size_t i = 1; i < m; ++i) row[i] = u(rng);
  LayoutConfig cfg;
  const auto d = rescale_profile(raw, cfg.grid_size, cfg.fill);
  for (auto _ : state) benchmark::DoNotOptimize(storyline_layout(d, cfg));
}
BENCHMARK(BM_Storyline)->Arg(12)->Arg(30);

void BM_Tsne(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g(0, 1);
  std::vector<std::vector<double>> x(n, std::vector<double>(8));
  for (std::size_t k = 0; k < n; ++k)
    for (auto& v : x[k]) v = g(rng) + static_cast<double>(k % 3) * 5;
  TsneConfig cfg;
  cfg.iterations = 300;
  for (auto _ : state) benchmark::DoNotOptimize(project_1d(x, cfg));
}
BENCHMARK(BM_Tsne)->Arg(100)->Arg(400)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();

#include <benchmark/benchmark.h>

#include "radvqa/scaling/scaling.hpp"

namespace {

void BM_ScalingFit(benchmark::State& state) {
  radvqa::scaling::ScalingFit truth;
  truth.A = 2.0;
  truth.alpha = 0.3;
  truth.beta = 0.2;
  truth.E = 0.5;
  std::vector<radvqa::scaling::LossPoint> pts;
  for (double x : {1e6, 1e7, 1e8})
    for (double d : {1e5, 1e6, 1e7}) pts.push_back({x, d, radvqa::scaling::predict(truth, x, d)});
  for (auto _ : state) benchmark::DoNotOptimize(radvqa::scaling::fit(pts));
}
BENCHMARK(BM_ScalingFit)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();

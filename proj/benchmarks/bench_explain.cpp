#include <benchmark/benchmark.h>

#include "ctxrec/explain.hpp"
#include "ctxrec/simgen.hpp"

namespace {

using namespace ctxrec;

void BM_ChiSquarePValue(benchmark::State& state) {
  const int df = static_cast<int>(state.range(0));
  double x = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(chi_square_pvalue(x, df));
    x = x > 60 ? 0 : x + 0.37;
  }
}
BENCHMARK(BM_ChiSquarePValue)->Arg(1)->Arg(2)->Arg(7)->Arg(30);

void BM_SelectFactors(benchmark::State& state) {
  WorldSpec spec;
  spec.n_users = 200;
  spec.n_apps = 50;
  const UsageCube cube = run_pipeline(generate_usage(spec, 10000).pipeline_input()).cube;
  const ContextVector context = parse_context("daytime=evening,location=home,isweekend=weekend", neutral_context());
  std::uint32_t app = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(select_factors(cube, app, context));
    app = (app + 1) % static_cast<std::uint32_t>(cube.num_apps());
  }
}
BENCHMARK(BM_SelectFactors);

}  // namespace

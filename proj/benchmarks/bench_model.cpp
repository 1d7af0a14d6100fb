#include <benchmark/benchmark.h>

#include <sstream>
#include <vector>

#include "ctxrec/model.hpp"
#include "ctxrec/simgen.hpp"

namespace {

using namespace ctxrec;

UsageCube world_cube(std::size_t users, std::size_t apps, std::size_t events) {
  WorldSpec spec;
  spec.n_users = users;
  spec.n_apps = apps;
  spec.n_days = 7;
  return run_pipeline(generate_usage(spec, events).pipeline_input()).cube;
}

void BM_Recommend(benchmark::State& state) {
  const auto apps = static_cast<std::size_t>(state.range(0));
  const UsageCube cube = world_cube(100, apps, 5000);
  ModelConfig cfg;
  cfg.epochs = 1;
  const FactorModel model = train(cube, cfg);
  const UserId user = cube.tuples().front().user;
  const ContextVector context = parse_context("daytime=evening,location=home", neutral_context());
  for (auto _ : state) benchmark::DoNotOptimize(recommend(model, user, context));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(model.num_apps()));
}
BENCHMARK(BM_Recommend)->Arg(50)->Arg(500)->Arg(5000);

void BM_TrainEpoch(benchmark::State& state) {
  const UsageCube cube = world_cube(200, 50, 10000);
  ModelConfig cfg;
  cfg.epochs = 1;
  for (auto _ : state) benchmark::DoNotOptimize(train(cube, cfg));
  state.counters["tuples"] = static_cast<double>(cube.size());
}
BENCHMARK(BM_TrainEpoch)->Unit(benchmark::kMillisecond);

void BM_SaveLoad(benchmark::State& state) {
  ModelConfig cfg;
  cfg.epochs = 0;
  const FactorModel model = train(world_cube(200, 50, 10000), cfg);
  for (auto _ : state) {
    std::stringstream buf;
    save_model(model, buf);
    benchmark::DoNotOptimize(load_model(buf));
  }
}
BENCHMARK(BM_SaveLoad);

}  // namespace

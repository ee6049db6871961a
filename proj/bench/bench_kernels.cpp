// Serial reference path vs OpenMP path for each parallel kernel.
// Arg 0 = serial, 1 = parallel. Thread count follows EXECKIT_THREADS / OMP_NUM_THREADS.

#include "execkit/config.hpp"
#include "execkit/dp.hpp"
#include "execkit/eval.hpp"
#include "execkit/ortho.hpp"
#include "execkit/pipeline.hpp"
#include "execkit/strategy.hpp"
#include "execkit/training.hpp"

#include <benchmark/benchmark.h>
#include <spdlog/spdlog.h>

using namespace execkit;

namespace {

ExecMode mode_of(const benchmark::State& state) { return state.range(0) ? ExecMode::Parallel : ExecMode::Serial; }

const RunConfig& three_asset() {
    static const RunConfig cfg = load_config(std::string(EXECKIT_FIXTURE_DIR) + "/three_asset.json");
    return cfg;
}

void BM_SolveDp(benchmark::State& state) {
    const auto spec = single_asset_slice(load_config(std::string(EXECKIT_FIXTURE_DIR) + "/scenario1.json").market, 0, -2.0);
    DpOptions opt;
    opt.mc.n_samples = 500;
    opt.mc.n_iterations = 1;
    opt.mode = mode_of(state);
    for (auto _ : state) benchmark::DoNotOptimize(solve_dp(spec, opt));
}

void BM_SolvePortfolios(benchmark::State& state) {
    auto cfg = three_asset();
    cfg.dp.mc.n_samples = 300;
    cfg.dp.mc.n_iterations = 1;
    const auto decomp = build_decomposition(cfg.market, -1.0);
    for (auto _ : state) benchmark::DoNotOptimize(solve_portfolios(cfg, decomp, 1, mode_of(state)));
}

void BM_DrawPaths(benchmark::State& state) {
    const Market mk(three_asset().market);
    for (auto _ : state) benchmark::DoNotOptimize(draw_paths(mk, 10000, 1, stream::eval, 0, mode_of(state)));
}

void BM_BatchObjective(benchmark::State& state) {
    const auto& cfg = three_asset();
    const Market mk(cfg.market);
    const auto paths = draw_paths(mk, 256, 1, stream::train, 0);
    const auto policy = initial_policy(cfg.market, cfg.training, 1);
    for (auto _ : state)
        benchmark::DoNotOptimize(batch_objective(policy, mk, paths, cfg.objective, true, mode_of(state)));
}

void BM_Evaluate(benchmark::State& state) {
    const auto& cfg = three_asset();
    const Market mk(cfg.market);
    const BenchmarkStrategy bench(cfg.market);
    const MlpStrategy mlp(cfg.market, initial_policy(cfg.market, cfg.training, 1));
    for (auto _ : state) benchmark::DoNotOptimize(evaluate({&bench, &mlp}, mk, 10000, 1, -1.0, mode_of(state)));
}

}  // namespace

BENCHMARK(BM_SolveDp)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_SolvePortfolios)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_DrawPaths)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_BatchObjective)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Evaluate)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

int main(int argc, char** argv) {
    spdlog::set_level(spdlog::level::err);
    configure_threads_from_env();
    benchmark::Initialize(&argc, argv);
    if (benchmark::ReportUnrecognizedArguments(argc, argv)) return 1;
    benchmark::RunSpecifiedBenchmarks();
    benchmark::Shutdown();
    return 0;
}

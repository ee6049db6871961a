#include "support.hpp"

#include "execkit/error.hpp"
#include "execkit/mlp.hpp"
#include "execkit/pipeline.hpp"
#include "execkit/strategy.hpp"
#include "execkit/training.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <omp.h>

#include <filesystem>

using namespace execkit;
using namespace testsupport;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

void check_gradient(const MarketSpec& spec, const Objective& obj, int hidden, int n_paths, std::uint64_t seed) {
    const auto g = gradient_check(spec, obj, hidden, n_paths, seed);
    INFO(obj.label() << " worst parameter " << g.worst_index << " analytic " << g.worst_analytic << " fd "
                     << g.worst_fd);
    CHECK(g.worst_ratio <= 1.0);
}

}  // namespace

TEST_CASE("forward pass", "[policy]") {
    MlpPolicy zero(6, 4, 2);
    CHECK(zero.forward(Vec::Ones(6)).isZero(0.0));

    Engine rng(1);
    auto lin = MlpPolicy::xavier(5, 3, 2, 1.0, rng);
    lin.b1() = Vec::LinSpaced(3, -1, 1);
    lin.b2() << 0.3, -0.2;
    const Vec f = Vec::LinSpaced(5, -2, 2);
    const Vec affine = lin.w2() * (lin.w1() * f + lin.b1()) + lin.b2();
    CHECK((lin.forward(f) - affine).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("network gradients match finite differences", "[policy]") {
    Engine rng(2);
    auto p = MlpPolicy::xavier(7, 5, 3, 0.01, rng);
    std::normal_distribution<double> g;
    p.b1() = Vec::NullaryExpr(5, [&] { return g(rng); });
    const Vec f = Vec::NullaryExpr(7, [&] { return g(rng); });
    const Vec theta = p.flat();
    for (int out = 0; out < 3; ++out) {
        MlpPolicy::Cache cache;
        p.forward(f, cache);
        Vec grad = Vec::Zero(p.n_params());
        p.backward(f, cache, Vec::Unit(3, out), grad);
        for (int i = 0; i < theta.size(); ++i) {
            Vec tp = theta, tm = theta;
            tp[i] += 1e-5;
            tm[i] -= 1e-5;
            MlpPolicy a = p, b = p;
            a.set_flat(tp);
            b.set_flat(tm);
            const double fd = (a.forward(f)[out] - b.forward(f)[out]) / 2e-5;
            CHECK(std::abs(fd - grad[i]) <= 1e-4 * std::abs(fd) + 1e-7);
        }
    }
}

TEST_CASE("action projection", "[policy]") {
    const Vec rem = Vec::LinSpaced(3, 1, 5);
    CHECK(project_action(Vec::Constant(3, -3.0), rem, 4, 5) == rem);
    CHECK(project_action(Vec::Constant(3, 2.0), Vec::Zero(3), 1, 5).isZero(0.0));
    CHECK(project_action(Vec::Zero(3), rem, 0, 5) == rem / 2);
    CHECK((project_action(Vec::Constant(3, 60.0), rem, 0, 5) - rem).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(project_action(Vec::Constant(3, -800.0), rem, 0, 5).isZero(0.0));
}

TEST_CASE("pretraining on the policy's own outputs changes nothing", "[policy]") {
    const auto spec = two_asset(4);
    const auto fs = FeatureScale::of(spec);
    MlpPolicy pol = random_policy(spec, 3, 5);
    std::vector<PretrainSample> data;
    Engine rng(6);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 64; ++i) {
        PathState s;
        s.t = i % 3;
        s.regime = i % 2;
        s.prices = spec.initial_prices * (0.9 + 0.2 * u(rng));
        s.remaining = Vec::NullaryExpr(2, [&] { return std::floor(8 * u(rng)); });
        s.cash = 10 * u(rng);
        const Vec f = features(s, fs);
        data.push_back({f, s.remaining, project_action(pol.forward(f), s.remaining, s.t, 4)});
    }
    TrainConfig cfg;
    cfg.pretrain_steps = 20;
    cfg.pretrain_batch = 16;
    cfg.turbulence = 0.0;
    auto res = pretrain(pol, data, cfg, 4, 1);
    CHECK(res.policy.flat() == pol.flat());
    for (double l : res.loss) CHECK(l == 0.0);
    CHECK(pretrain_loss(pol, data, 4) == 0.0);

    cfg.turbulence = 1e-3;
    auto noisy = pretrain(pol, data, cfg, 4, 1);
    const double rms = std::sqrt(pol.flat().squaredNorm() / pol.n_params());
    const double moved = (noisy.policy.flat() - pol.flat()).norm() / std::sqrt(pol.n_params());
    CHECK(moved > 0.0);
    CHECK(moved < 5e-3 * rms);
}

TEST_CASE("pretraining reaches the least-squares optimum", "[policy]") {
    // Identical features, scattered targets: the best output is the mean target.
    const int n = 2;
    std::vector<PretrainSample> data;
    Engine rng(12);
    std::normal_distribution<double> g(0.0, 0.5);
    Vec mean = Vec::Zero(n);
    for (int i = 0; i < 400; ++i) {
        Vec target(n);
        target << 3.0 + g(rng), 6.5 + g(rng);
        mean += target;
        data.push_back({Vec::Constant(4, 0.5), Vec::Constant(n, 10.0), target});
    }
    mean /= data.size();
    double residual = 0.0;
    for (const auto& s : data) residual += (s.target - mean).squaredNorm();
    residual /= data.size();

    Engine init(3);
    MlpPolicy lin = MlpPolicy::xavier(4, 3, n, 1.0, init);
    TrainConfig cfg;
    cfg.pretrain_steps = 3000;
    cfg.pretrain_batch = 400;
    cfg.pretrain_adam.lr = 1e-2;
    cfg.turbulence = 0.0;
    auto res = pretrain(lin, data, cfg, 5, 2);
    CHECK(pretrain_loss(res.policy, data, 5) <= 1.01 * residual);
}

TEST_CASE("pretraining loss curve decreases on the three-asset example", "[policy]") {
    auto cfg = fixture_config("three_asset.json");
    PipelineOptions po;
    po.stop_after = Stage::Pretrain;
    cfg.dp.mc.n_samples = 300;
    cfg.dp.mc.n_iterations = 1;
    const auto res = run_pipeline(cfg, po);
    const auto& loss = res.pretrain_loss;
    REQUIRE(loss.size() >= 200);
    std::vector<double> smooth;
    for (std::size_t start = 0; start + 100 <= loss.size(); start += 100) {
        double acc = 0.0;
        for (std::size_t i = start; i < start + 100; ++i) acc += loss[i];
        smooth.push_back(acc / 100);
    }
    for (std::size_t i = 1; i < smooth.size(); ++i) {
        INFO("window " << i << ": " << smooth[i - 1] << " -> " << smooth[i]);
        CHECK(smooth[i] <= smooth[i - 1]);
    }
}

TEST_CASE("pathwise gradients through the simulator", "[policy]") {
    check_gradient(two_asset(2), Objective::crra(-1.0), 3, 4, 1);
    check_gradient(two_asset(2), Objective::mean_variance(1.0), 3, 4, 2);
}

TEST_CASE("property: pathwise gradients for small nets", "[policy][property]") {
    for (std::uint64_t seed = 10; seed < 14; ++seed) {
        const int T = 2 + static_cast<int>(seed % 2);
        check_gradient(two_asset(T), Objective::crra(seed % 2 ? -3.0 : 0.0), 3, 6, seed);
        check_gradient(two_asset(T), Objective::mean_variance(0.1 * seed), 2, 6, seed);
    }
}

TEST_CASE("mean-variance with lambda 0 is the batch mean", "[policy]") {
    const auto spec = two_asset(3);
    const Market mk(spec);
    const auto paths = draw_paths(mk, 32, 4, stream::train, 0);
    const auto pol = random_policy(spec, 3, 4);
    const auto ev = batch_objective(pol, mk, paths, Objective::mean_variance(0.0), false);
    CHECK(ev.objective == ev.mean_wealth);
}

TEST_CASE("zero learning rate leaves the policy unchanged", "[policy]") {
    const auto spec = two_asset(3);
    const Market mk(spec);
    TrainConfig cfg;
    cfg.adam.lr = 0.0;
    cfg.train_steps = 5;
    cfg.batch_size = 16;
    const auto pol = random_policy(spec, 3, 5);
    const auto res = train(pol, mk, Objective::crra(-1.0), cfg, 9);
    CHECK(res.policy.flat() == pol.flat());
    for (const auto& c : res.curve) {
        const auto paths = draw_paths(mk, 16, 9, stream::train, c.step);
        CHECK(batch_objective(pol, mk, paths, Objective::crra(-1.0), false).objective == c.objective);
    }
}

TEST_CASE("property: training is deterministic across modes and thread counts", "[policy][property]") {
    const auto spec = two_asset(3);
    const Market mk(spec);
    TrainConfig cfg;
    cfg.train_steps = 10;
    cfg.batch_size = 64;
    const auto pol = random_policy(spec, 3, 6);
    const auto serial = train(pol, mk, Objective::mean_variance(0.5), cfg, 3, ExecMode::Serial);
    const int saved = omp_get_max_threads();
    for (int threads : {1, 2, 3}) {
        omp_set_num_threads(threads);
        const auto par = train(pol, mk, Objective::mean_variance(0.5), cfg, 3, ExecMode::Parallel);
        CHECK(par.policy.flat() == serial.policy.flat());
    }
    omp_set_num_threads(saved);
    const auto again = train(pol, mk, Objective::mean_variance(0.5), cfg, 3, ExecMode::Serial);
    CHECK(again.policy.flat() == serial.policy.flat());
}

TEST_CASE("property: Adam ascent on a frozen batch", "[policy][property]") {
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
        const auto spec = two_asset(3);
        const Market mk(spec);
        const auto paths = draw_paths(mk, 64, seed, stream::train, 0);
        for (const auto& obj : {Objective::crra(-2.0), Objective::mean_variance(0.3)}) {
            MlpPolicy pol = random_policy(spec, 3, seed);
            Adam adam(pol.n_params(), AdamConfig{});
            Vec theta = pol.flat();
            const double before = batch_objective(pol, mk, paths, obj, false).scaled_objective;
            for (int step = 0; step < 50; ++step) {
                const auto ev = batch_objective(pol, mk, paths, obj, true);
                adam.ascend(theta, ev.grad);
                pol.set_flat(theta);
            }
            CHECK(batch_objective(pol, mk, paths, obj, false).scaled_objective >= before);
        }
    }
}

TEST_CASE("property: network trades are feasible and liquidate", "[policy][property]") {
    const auto spec = two_asset(5);
    const Market mk(spec);
    const auto paths = draw_paths(mk, 200, 8, stream::eval, 0);
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const MlpStrategy strat(spec, random_policy(spec, 4, seed));
        for (const auto& path : paths) {
            std::vector<StepRecord> trace;
            simulate_path(mk, strat, path, &trace);
            Vec left = spec.chunks();
            for (const auto& rec : trace) {
                CHECK((rec.action.array() >= 0.0).all());
                CHECK((rec.action.array() <= rec.state.remaining.array()).all());
                left -= rec.action;
            }
            CHECK(trace.back().action == trace.back().state.remaining);
            CHECK(left.cwiseAbs().maxCoeff() < 1e-9);
        }
    }
}

TEST_CASE("policy files round-trip", "[policy]") {
    const auto spec = two_asset(3);
    const auto pol = random_policy(spec, 3, 7);
    const auto path = (std::filesystem::temp_directory_path() / "execkit_policy_test.json").string();
    save_policy(path, pol, "abc");
    const auto back = load_policy(path);
    CHECK(back.flat() == pol.flat());
    CHECK(back.leak() == pol.leak());
    std::filesystem::remove(path);
}

TEST_CASE("invalid training settings", "[policy]") {
    TrainConfig cfg;
    cfg.batch_size = 1;
    CHECK_THROWS_AS(require_valid(cfg, Objective::mean_variance(1.0)), SpecError);
    CHECK_NOTHROW(require_valid(cfg, Objective::crra(-1.0)));
    CHECK_THROWS_AS(require_valid(TrainConfig{}, Objective::crra(1.5)), SpecError);
}

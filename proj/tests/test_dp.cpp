#include "support.hpp"

#include "execkit/dp.hpp"
#include "execkit/error.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <chrono>
#include <ctime>
#include <sstream>

using namespace execkit;
using namespace testsupport;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

DpOptions fast(int samples = 200, int iterations = 1) {
    DpOptions o;
    o.mc.n_samples = samples;
    o.mc.n_iterations = iterations;
    o.mc.seed = 17;
    return o;
}

/// Realized path that stays in `regime` with returns at the regime mean.
std::vector<int> schedule_in_regime(const ValueTable& table, const SingleAssetSpec& spec, int regime) {
    std::vector<int> regimes(spec.horizon, regime);
    std::vector<double> returns(spec.horizon, spec.regimes[regime].mean_return);
    std::vector<int> out;
    for (const auto& s : rollout_policy(table, spec, regimes, returns)) out.push_back(s.chunks_sold);
    return out;
}

}  // namespace

TEST_CASE("CRRA utility", "[dp]") {
    CHECK_THAT(utility(160.829, -1.0), WithinAbs(-0.00622, 5e-6));
    CHECK(utility(1.0, 0.0) == 0.0);
    CHECK_THAT(utility(2.0, -2.0), WithinRel(-0.125, 1e-15));
    CHECK_THROWS_AS(utility(0.0, -1.0), DomainError);
    CHECK_THROWS_AS(utility(-1.0, 0.0), DomainError);
    CHECK(utility(0.0, 0.5) == 0.0);
    for (double g : {-20.0, -3.0, -1.0, 0.3}) {
        const double a = 3.7, w = 1.9;
        CHECK_THAT(utility(a * w, g), WithinRel(std::pow(a, g) * utility(w, g), 1e-13));
    }
    CHECK_THAT(utility(3.7 * 1.9, 0.0), WithinRel(utility(1.9, 0.0) + std::log(3.7), 1e-13));
}

TEST_CASE("one period sells everything", "[dp]") {
    auto spec = appendix_b_spec(1, 5, 2, -2.0, {0.01, -0.01}, 1e-4);
    auto table = solve_dp(spec, fast());
    for (int i = 0; i < 2; ++i)
        for (int k = 0; k < table.grid().size(); ++k)
            for (int s = 0; s <= 5; ++s) CHECK(table.policy(i, k, s, 0) == s);
}

TEST_CASE("last epoch policy sells all remaining chunks", "[dp]") {
    auto spec = appendix_b_spec(4, 6, 2, -1.0, {0.002, -0.003}, 1e-5);
    auto table = solve_dp(spec, fast());
    for (int i = 0; i < 2; ++i)
        for (int k = 0; k < table.grid().size(); k += 7)
            for (int s = 0; s <= 6; ++s) CHECK(table.policy(i, k, s, 3) == s);
}

TEST_CASE("two periods, three chunks: brute force over all splits", "[dp]") {
    auto spec = appendix_b_spec(2, 3, 1, -2.0);
    auto table = solve_dp(spec, fast(1));
    int best_x = -1;
    double best = -HUGE_VAL;
    for (int x1 = 0; x1 <= 3; ++x1) {
        const double a1 = 2e-3 * x1 + 1e-4 * x1 * x1, b1 = 1e-4 * x1 + 2e-4 * x1 * x1;
        const int x2 = 3 - x1;
        const double a2 = 2e-3 * x2 + 1e-4 * x2 * x2;
        const double w = x1 * (1 - a1) + x2 * (1 - b1) * (1 - a2);
        if (crra(w, -2.0) > best) {
            best = crra(w, -2.0);
            best_x = x1;
        }
    }
    CHECK(decide(table, 0, 0.0, 3, 0) == best_x);
    CHECK_THAT(table.value(0, 0, 3, 0), WithinRel(best, 1e-12));
}

TEST_CASE("oracle: DP policy value equals exhaustive enumeration", "[dp][property]") {
    for (const char* fx : {"scenario1.json", "scenario2.json"})
        for (double gamma : {-2.0, -1.0, 0.0, 0.5})
            for (int T : {2, 3})
                for (int S0 : {2, 3, 4})
                    for (int m : {1, 2}) {
                        const auto spec = scenario_slice(fx, gamma, T, S0, m);
                        const auto table = solve_dp(spec, fast(2));
                        for (DecisionRule rule : {DecisionRule::Interpolated, DecisionRule::Lookahead})
                            for (int i0 = 0; i0 < m; ++i0) {
                                const Rule follow = [&](int t, int i, double c, double p, int left) {
                                    return rule == DecisionRule::Interpolated
                                               ? decide(table, i, c / p, left, t)
                                               : decide_lookahead(table, spec, i, c / p, left, t);
                                };
                                const double opt = tree_value(spec, 0, i0, 0.0, 1.0, S0);
                                const double got = tree_value(spec, 0, i0, 0.0, 1.0, S0, follow);
                                INFO(fx << " gamma " << gamma << " T " << T << " S0 " << S0 << " m " << m << " i0 "
                                        << i0);
                                CHECK_THAT(got, WithinRel(opt, 1e-12));
                            }
                    }
}

TEST_CASE("random drifts and costs: DP value is within cash-interpolation error", "[dp][property]") {
    // Near-ties closer than the interpolation error of the cash grid may flip.
    Engine rng(2024);
    std::uniform_real_distribution<double> drift(-0.01, 0.01);
    int exact = 0, cases = 0;
    for (double gamma : {-2.0, -1.0, 0.0, 0.5})
        for (int T : {2, 3})
            for (int S0 : {2, 3, 4})
                for (int m : {1, 2}) {
                    auto spec = appendix_b_spec(T, S0, m, gamma, {drift(rng), drift(rng)});
                    auto table = solve_dp(spec, fast(2));
                    for (int i0 = 0; i0 < m; ++i0) {
                        const Rule follow = [&](int t, int i, double c, double p, int left) {
                            return decide(table, i, c / p, left, t);
                        };
                        const double opt = tree_value(spec, 0, i0, 0.0, 1.0, S0);
                        const double got = tree_value(spec, 0, i0, 0.0, 1.0, S0, follow);
                        CHECK_THAT(got, WithinRel(opt, 1e-4));
                        exact += std::abs(got - opt) <= 1e-12 * std::abs(opt);
                        ++cases;
                    }
                }
    CHECK(exact >= cases - 2);
}

TEST_CASE("scenario 1: selling accelerates while regime 1 persists", "[dp]") {
    const auto cfg = fixture_config("scenario1.json");
    auto spec = single_asset_slice(cfg.market, 0, -2.0);
    auto table = solve_dp(spec, fast(1000, 3));
    const auto sched = schedule_in_regime(table, spec, 0);
    int total = 0;
    for (std::size_t t = 0; t < sched.size(); ++t) {
        total += sched[t];
        if (t > 0) CHECK(sched[t] >= sched[t - 1]);
    }
    CHECK(total == 20);
}

TEST_CASE("rollout is non-anticipative and complete", "[dp][property]") {
    auto spec = appendix_b_spec(6, 9, 2, -1.0, {0.004, -0.004}, 2e-5);
    auto table = solve_dp(spec, fast());
    Engine rng(8);
    std::uniform_int_distribution<int> reg(0, 1);
    std::normal_distribution<double> ret(0.0, 0.005);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<int> regimes(6);
        std::vector<double> returns(6);
        for (int t = 0; t < 6; ++t) {
            regimes[t] = reg(rng);
            returns[t] = ret(rng);
        }
        const auto a = rollout_policy(table, spec, regimes, returns);
        int total = 0;
        for (const auto& s : a) total += s.chunks_sold;
        CHECK(total == 9);
        // Changing the future leaves earlier decisions unchanged.
        const int cut = 1 + trial % 5;
        auto regimes2 = regimes;
        auto returns2 = returns;
        for (int t = cut; t < 6; ++t) {
            regimes2[t] = 1 - regimes2[t];
            returns2[t] = -returns2[t];
        }
        returns2[cut - 1] = returns[cut - 1];
        const auto b = rollout_policy(table, spec, regimes2, returns2);
        for (int t = 0; t < cut; ++t) CHECK(a[t].chunks_sold == b[t].chunks_sold);
    }
}

TEST_CASE("identity transition reproduces the pure-regime tables", "[dp]") {
    auto mixed = appendix_b_spec(5, 8, 2, -1.0, {0.003, -0.002}, 0.0);
    mixed.transition = Mat::Identity(2, 2);
    auto mixed_table = solve_dp(mixed, fast(4));
    for (int i = 0; i < 2; ++i) {
        SingleAssetSpec pure = mixed;
        pure.transition = Mat::Ones(1, 1);
        pure.regimes = {mixed.regimes[i]};
        auto pure_table = solve_dp(pure, fast(4));
        CHECK(schedule_in_regime(mixed_table, mixed, i) == schedule_in_regime(pure_table, pure, 0));
    }
}

TEST_CASE("sensitivity: identity transition separates regime schedules most", "[dp]") {
    std::vector<int> distance;
    for (const char* name : {"sensitivity_transition_identity.json", "sensitivity_transition_p90.json",
                             "sensitivity_transition_p80.json", "sensitivity_transition_uniform.json"}) {
        const auto cfg = fixture_config(name);
        auto spec = single_asset_slice(cfg.market, 0, -2.0);
        auto table = solve_dp(spec, fast(1000, 1));
        const auto a = schedule_in_regime(table, spec, 0);
        const auto b = schedule_in_regime(table, spec, 1);
        int l1 = 0;
        for (std::size_t t = 0; t < a.size(); ++t) l1 += std::abs(a[t] - b[t]);
        distance.push_back(l1);
    }
    INFO("L1 distances " << distance[0] << " " << distance[1] << " " << distance[2] << " " << distance[3]);
    for (std::size_t i = 1; i < distance.size(); ++i) CHECK(distance[0] >= distance[i]);
}

TEST_CASE("step aggregation", "[dp]") {
    auto spec = appendix_b_spec(20, 10, 2, -1.0);
    CHECK(aggregate_steps(spec, 1).n_epochs() == 20);
    CHECK(aggregate_steps(spec, 2).n_epochs() == 10);
    CHECK(aggregate_steps(spec, 2).group_sizes() == std::vector<int>(10, 2));
    CHECK(split_equal(7, 3) == std::vector<int>{3, 2, 2});

    // One group: a single decision, executed as equal trades.
    auto small = appendix_b_spec(3, 4, 1, -1.0);
    auto one = aggregate_steps(small, 3);
    CHECK(one.n_epochs() == 1);
    auto table = solve_dp(one, fast(4));
    std::vector<int> sched;
    for (const auto& s : rollout_policy(table, one, {0, 0, 0}, {0.0, 0.0, 0.0})) sched.push_back(s.chunks_sold);
    CHECK(sched == std::vector<int>{2, 1, 1});
}

TEST_CASE("property: values are nondecreasing in cash", "[dp][property]") {
    auto spec = appendix_b_spec(5, 10, 2, -2.0, {0.002, -0.004}, 3e-5);
    auto table = solve_dp(spec, fast());
    for (int e = 0; e < table.n_epochs(); ++e)
        for (int i = 0; i < 2; ++i)
            for (int s = 0; s <= 10; ++s)
                for (int k = 1; k < table.grid().size(); ++k)
                    CHECK(table.value(i, k, s, e) >= table.value(i, k - 1, s, e));
}

TEST_CASE("property: decisions are invariant to price scaling", "[dp][property]") {
    auto spec = appendix_b_spec(6, 10, 2, -3.0, {0.003, -0.002}, 2e-5);
    auto table = solve_dp(spec, fast());
    Engine rng(31);
    std::uniform_int_distribution<int> reg(0, 1);
    std::normal_distribution<double> ret(0.0, 0.004);
    for (int trial = 0; trial < 30; ++trial) {
        std::vector<int> regimes(6);
        std::vector<double> returns(6);
        for (int t = 0; t < 6; ++t) {
            regimes[t] = reg(rng);
            returns[t] = ret(rng);
        }
        const auto base = rollout_policy(table, spec, regimes, returns, 1.0);
        for (double alpha : {0.25, 4.0, 3.7}) {
            const auto scaled = rollout_policy(table, spec, regimes, returns, alpha);
            for (int t = 0; t < 6; ++t) CHECK(scaled[t].chunks_sold == base[t].chunks_sold);
        }
    }
}

TEST_CASE("property: Monte-Carlo estimate is stable when doubling samples", "[dp][property]") {
    auto spec = appendix_b_spec(4, 6, 2, -2.0, {0.003, -0.003}, 4e-4);
    auto a = solve_dp(spec, fast(500, 1));
    auto opts = fast(1000, 1);
    opts.mc.seed = 18;
    auto b = solve_dp(spec, opts);
    for (int i = 0; i < 2; ++i) {
        const double se = std::hypot(initial_value_stderr(a, spec, i), initial_value_stderr(b, spec, i));
        CHECK(se > 0.0);
        CHECK(std::abs(a.value(i, 0, 6, 0) - b.value(i, 0, 6, 0)) < 3 * se);
    }
}

TEST_CASE("property: serial and parallel solves are bit-identical", "[dp][property]") {
    auto spec = appendix_b_spec(5, 12, 2, -2.0, {0.002, -0.003}, 5e-5);
    auto opts = fast();
    opts.mode = ExecMode::Serial;
    auto s = solve_dp(spec, opts);
    opts.mode = ExecMode::Parallel;
    auto p = solve_dp(spec, opts);
    CHECK(s.values_data() == p.values_data());
    CHECK(s.policy_data() == p.policy_data());
    CHECK(s.q_data() == p.q_data());
}

TEST_CASE("running time grows linearly with the horizon", "[dp][property][timing]") {
    const auto cfg = fixture_config("scenario1.json");
    auto cpu_seconds = [&](int T) {
        auto spec = single_asset_slice(cfg.market, 0, -2.0);
        spec.horizon = T;
        // Process CPU time is less sensitive to other load than wall time.
        const std::clock_t t0 = std::clock();
        solve_dp(spec, fast(1000, 1));
        return static_cast<double>(std::clock() - t0) / CLOCKS_PER_SEC;
    };
    double t10 = HUGE_VAL, t20 = HUGE_VAL;
    for (int rep = 0; rep < 5; ++rep) {
        t10 = std::min(t10, cpu_seconds(10));
        t20 = std::min(t20, cpu_seconds(20));
    }
    const double ratio = t20 / t10;
    INFO("T=20 / T=10 time ratio " << ratio);
    CHECK(ratio >= 1.6);
    CHECK(ratio <= 2.6);
}

TEST_CASE("grid coverage and table serialization", "[dp]") {
    auto spec = appendix_b_spec(4, 6, 2, -1.0, {0.03, -0.03}, 1e-3);
    auto narrow = fast();
    narrow.cash_grid_factor = 0.5;
    try {
        solve_dp(spec, narrow);
        FAIL("expected GridCoverageError");
    } catch (const GridCoverageError& e) {
        CHECK(e.required_upper() > 0.5 * 6);
        CHECK(std::string(e.what()).find("required upper bound") != std::string::npos);
    }

    auto table = solve_dp(spec, fast());
    std::stringstream buf;
    write_table(buf, table);
    auto back = read_table(buf);
    CHECK(back.values_data() == table.values_data());
    CHECK(back.policy_data() == table.policy_data());
    CHECK(back.q_data() == table.q_data());
    CHECK(back.group_sizes() == table.group_sizes());
    CHECK(back.grid().knots() == table.grid().knots());
    CHECK(decide_lookahead(back, spec, 1, 0.4, 6, 0) == decide_lookahead(table, spec, 1, 0.4, 6, 0));

    std::stringstream junk("not a table");
    CHECK_THROWS_AS(read_table(junk), SpecError);
}

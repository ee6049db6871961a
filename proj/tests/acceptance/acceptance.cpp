// Runs acceptance criteria 1-9 and prints one PASS/FAIL line per criterion.
// Usage: acceptance [criterion ...]   (default: all)

#include "support.hpp"

#include "execkit/eval.hpp"
#include "execkit/ortho.hpp"
#include "execkit/pipeline.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

using namespace execkit;
using namespace testsupport;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

struct Criterion {
    int id;
    std::string name;
    double budget_seconds;
    std::function<Outcome()> run;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

/// a - b > 2 pooled standard errors.
bool exceeds(double a, double se_a, double b, double se_b) { return a - b > 2.0 * pooled_se(se_a, se_b); }

/// a >= b allowing 2 pooled standard errors of slack.
bool at_least(double a, double se_a, double b, double se_b) { return a - b >= -2.0 * pooled_se(se_a, se_b); }

Outcome ortho_reproduction() {
    const auto cfg = fixture_config("three_asset.json");
    const double paper_avg[3][3] = {{9.8462, 2.2154, 1.2923}, {1.6615, 12.9231, 1.2923}, {1.2923, 1.2923, 8.3077}};
    const double paper_rows[3][3] = {{0.488, 0.826, 0.281}, {0.765, -0.484, 0.425}, {-0.429, -0.084, 0.899}};
    const double paper_q[3] = {31.13, 10.52, 7.53};

    const Mat avg = average_impact_matrix(cfg.market);
    double worst_avg = 0.0, worst_raw = 0.0;
    for (int k = 0; k < 3; ++k)
        for (int j = 0; j < 3; ++j) {
            const double want = paper_avg[k][j] * 1e-4;
            // The printed matrix carries 4 decimals, so compare at that precision.
            worst_avg = std::max(worst_avg, std::abs(std::round(avg(k, j) * 1e8) / 1e8 - want) / want);
            worst_raw = std::max(worst_raw, std::abs(avg(k, j) - want) / want);
        }

    const auto d = build_decomposition(cfg.market, -1.0);
    double worst_row = 0.0;
    for (const auto& row : paper_rows) {
        double best = HUGE_VAL;
        for (int k = 0; k < 3; ++k) {
            double plus = 0.0, minus = 0.0;
            for (int j = 0; j < 3; ++j) {
                plus = std::max(plus, std::abs(d.weights(k, j) - row[j]));
                minus = std::max(minus, std::abs(d.weights(k, j) + row[j]));
            }
            best = std::min({best, plus, minus});
        }
        worst_row = std::max(worst_row, best);
    }
    std::vector<double> q(d.chunk_targets.data(), d.chunk_targets.data() + 3);
    std::sort(q.rbegin(), q.rend());
    double worst_q = 0.0;
    for (int k = 0; k < 3; ++k) worst_q = std::max(worst_q, std::abs(q[k] - paper_q[k]));

    return {worst_avg <= 1e-8 && worst_row <= 5e-3 && worst_q <= 0.05,
            fmt::format("avg rel err {:.2e} at 4 dp ({:.1e} unrounded), weight err {:.2e}, targets ({:.3f}, {:.3f}, "
                        "{:.3f}) err {:.3f}",
                        worst_avg, worst_raw, worst_row, q[0], q[1], q[2], worst_q)};
}

Outcome stationary_weighting() {
    Mat p(2, 2);
    p << 0.95, 0.05, 0.08, 0.92;
    const Vec pi = stationary_distribution(p).distribution;
    const bool four_dp = std::round(pi[0] * 1e4) == 6154 && std::round(pi[1] * 1e4) == 3846;
    const auto cfg = fixture_config("three_asset.json");
    const double a11 = average_impact_matrix(cfg.market)(0, 0);
    const bool entry = std::abs(a11 - 9.85e-4) <= 1e-12 || std::abs(std::round(a11 * 1e6) / 1e6 - 9.85e-4) <= 1e-12;
    return {four_dp && entry, fmt::format("pi = ({:.4f}, {:.4f}), avg(1,1) = {:.10e} (4-sig-fig {:.3e})", pi[0],
                                          pi[1], a11, std::round(a11 * 1e6) / 1e6)};
}

Outcome dp_oracle() {
    DpOptions opt;
    opt.mc.n_samples = 2;
    opt.mc.n_iterations = 1;
    opt.mc.seed = 17;
    int cases = 0, failures = 0;
    double worst = 0.0;
    for (const char* fx : {"scenario1.json", "scenario2.json"})
        for (double gamma : {-2.0, -1.0, 0.0, 0.5})
            for (int T : {2, 3})
                for (int S0 : {2, 3, 4})
                    for (int m : {1, 2}) {
                        const auto spec = scenario_slice(fx, gamma, T, S0, m);
                        const auto table = solve_dp(spec, opt);
                        for (DecisionRule rule : {DecisionRule::Interpolated, DecisionRule::Lookahead})
                            for (int i0 = 0; i0 < m; ++i0) {
                                const Rule follow = [&](int t, int i, double c, double p, int left) {
                                    return rule == DecisionRule::Interpolated
                                               ? decide(table, i, c / p, left, t)
                                               : decide_lookahead(table, spec, i, c / p, left, t);
                                };
                                const double best = tree_value(spec, 0, i0, 0.0, 1.0, S0);
                                const double got = tree_value(spec, 0, i0, 0.0, 1.0, S0, follow);
                                const double rel = std::abs(got - best) / std::max(std::abs(best), 1e-300);
                                worst = std::max(worst, rel);
                                ++cases;
                                if (rel > 1e-12) ++failures;
                            }
                    }
    return {failures == 0, fmt::format("{} cases, {} mismatches, worst rel diff {:.1e}", cases, failures, worst)};
}

Outcome gradients() {
    const auto crra = gradient_check(two_asset(2), Objective::crra(-1.0), 3, 4, 1);
    const auto mv = gradient_check(two_asset(2), Objective::mean_variance(1.0), 3, 4, 2);
    return {crra.worst_ratio <= 1.0 && mv.worst_ratio <= 1.0,
            fmt::format("worst |fd-g|/(1e-4|fd|+1e-7): crra {:.3f}, mean-variance {:.3f}", crra.worst_ratio,
                        mv.worst_ratio)};
}

Outcome pipeline_dominance() {
    const auto cfg = fixture_config("three_asset.json");
    const auto res = run_pipeline(cfg);
    const auto& rep = *res.report;
    const auto& b = rep.row("benchmark");
    const auto& o = rep.row("ortho_dp");
    const auto& n = rep.row("mlp");
    const bool util = at_least(n.mean_utility, n.se_utility, o.mean_utility, o.se_utility);
    const bool o_mean = exceeds(o.mean_wealth, o.se_mean, b.mean_wealth, b.se_mean);
    const bool n_mean = exceeds(n.mean_wealth, n.se_mean, b.mean_wealth, b.se_mean);
    return {util && o_mean && n_mean,
            fmt::format("{} paths; utility mlp {:.7f} vs ortho {:.7f}; mean wealth bench {:.3f}, ortho {:.3f}, mlp {:.3f}",
                        rep.n_paths, n.mean_utility, o.mean_utility, b.mean_wealth, o.mean_wealth, n.mean_wealth)};
}

Outcome mean_variance_trend() {
    const auto cfg = fixture_config("ten_asset.json");
    const std::vector<double> lambdas = {0.2, 0.5, 1.0, 5.0};
    const auto front = frontier_sweep(cfg, lambdas, 3);
    const auto& b = front.benchmark;
    const int n = static_cast<int>(b.wealth.size());
    bool ok = true;
    std::ostringstream os;
    os << fmt::format("benchmark {:.2f}/{:.2f};", b.mean_wealth, b.std_wealth);
    const StrategyStats* prev = nullptr;
    for (const auto& row : front.rows) {
        const auto* best = row.best_point();
        if (!best) {
            ok = false;
            os << fmt::format(" lambda {} all restarts failed;", row.lambda);
            continue;
        }
        const auto& s = best->stats;
        const bool mean_ok = exceeds(s.mean_wealth, s.se_mean, b.mean_wealth, b.se_mean);
        const bool std_ok = exceeds(b.std_wealth, std_stderr(b.std_wealth, n), s.std_wealth, std_stderr(s.std_wealth, n));
        bool trend_ok = true;
        if (prev)
            trend_ok = at_least(prev->std_wealth, std_stderr(prev->std_wealth, n), s.std_wealth,
                                std_stderr(s.std_wealth, n));
        ok = ok && mean_ok && std_ok && trend_ok;
        os << fmt::format(" lambda {} -> {:.2f}/{:.2f}{};", row.lambda, s.mean_wealth, s.std_wealth,
                          mean_ok && std_ok && trend_ok ? "" : " (violates)");
        prev = &s;
    }
    return {ok, os.str()};
}

Outcome crra_ordering() {
    const auto cfg = fixture_config("ten_asset.json");
    const auto sweep = crra_sweep(cfg, {-1.0, -20.0});
    const auto& a = sweep.rows[0].mlp;
    const auto& z = sweep.rows[1].mlp;
    const int n = static_cast<int>(a.wealth.size());
    const bool ok = exceeds(a.std_wealth, std_stderr(a.std_wealth, n), z.std_wealth, std_stderr(z.std_wealth, n));
    return {ok, fmt::format("mlp std gamma=-1 {:.3f} vs gamma=-20 {:.3f} (means {:.2f}, {:.2f}; benchmark {:.2f})",
                            a.std_wealth, z.std_wealth, a.mean_wealth, z.mean_wealth,
                            sweep.benchmark.mean_wealth)};
}

Outcome step_aggregation() {
    const auto cfg = fixture_config("ten_asset_t20.json");
    PipelineOptions po;
    po.group_size = 1;
    const auto full = run_pipeline(cfg, po);
    po.group_size = 2;
    const auto grouped = run_pipeline(cfg, po);
    const double ratio = grouped.manifest.dp_wall_seconds / full.manifest.dp_wall_seconds;
    const auto& a = full.report->row("mlp");
    const auto& g = grouped.report->row("mlp");
    const bool close = std::abs(a.mean_wealth - g.mean_wealth) < 2.0 * pooled_se(a.se_mean, g.se_mean);
    return {ratio < 0.7 && close,
            fmt::format("dp wall {:.1f} s -> {:.1f} s (ratio {:.3f}); mlp mean {:.3f} vs {:.3f} (2 pooled SE {:.3f})",
                        full.manifest.dp_wall_seconds, grouped.manifest.dp_wall_seconds, ratio, a.mean_wealth,
                        g.mean_wealth, 2.0 * pooled_se(a.se_mean, g.se_mean))};
}

Outcome invariant_suites() {
    std::vector<std::string> failed;
    for (const char* exe : {EXECKIT_PROPERTY_SUITES}) {
        const std::string cmd = std::string("\"") + exe + "\" \"[property]~[timing]\" --reporter compact > /dev/null 2>&1";
        if (std::system(cmd.c_str()) != 0) failed.push_back(exe);
    }
    std::string detail = failed.empty() ? "all [property] suites pass" : "failing:";
    for (const auto& f : failed) detail += " " + f;
    return {failed.empty(), detail};
}

}  // namespace

int main(int argc, char** argv) {
    spdlog::set_level(spdlog::level::err);
    configure_threads_from_env();
    const std::vector<Criterion> all = {
        {1, "ortho reproduction", 1.0, ortho_reproduction},
        {2, "stationary weighting", 1.0, stationary_weighting},
        {3, "dp oracle equivalence", 10.0, dp_oracle},
        {4, "gradient correctness", 5.0, gradients},
        {5, "pipeline dominance (3 assets)", 15 * 60.0, pipeline_dominance},
        {6, "mean-variance trend (10 assets)", 2 * 3600.0, mean_variance_trend},
        {7, "crra risk ordering (10 assets)", 2 * 3600.0, crra_ordering},
        {8, "step aggregation (T=20)", 2 * 3600.0, step_aggregation},
        {9, "invariant suites", 120.0, invariant_suites},
    };
    std::set<int> wanted;
    for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));

    std::ofstream results("acceptance_results.txt");
    int failures = 0;
    for (const auto& c : all) {
        if (!wanted.empty() && !wanted.count(c.id)) continue;
        const auto t0 = Clock::now();
        Outcome out;
        try {
            out = c.run();
        } catch (const std::exception& e) {
            out = {false, std::string("error: ") + e.what()};
        }
        const double secs = seconds_since(t0);
        const bool in_budget = secs <= c.budget_seconds;
        const bool pass = out.pass && in_budget;
        if (!pass) ++failures;
        const auto line = fmt::format("{} criterion {}: {} | {} | {:.2f} s (budget {:.0f} s{})\n", pass ? "PASS" : "FAIL",
                                      c.id, c.name, out.detail, secs, c.budget_seconds, in_budget ? "" : ", exceeded");
        fmt::print("{}", line);
        std::fflush(stdout);
        results << line << std::flush;
    }
    return failures == 0 ? 0 : 1;
}

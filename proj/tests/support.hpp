#pragma once

#include "execkit/config.hpp"
#include "execkit/dp.hpp"
#include "execkit/market.hpp"
#include "execkit/mlp.hpp"
#include "execkit/strategy.hpp"
#include "execkit/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace testsupport {

using execkit::Mat;
using execkit::Vec;

inline std::string fixture(const std::string& name) { return std::string(EXECKIT_FIXTURE_DIR) + "/" + name; }

inline execkit::RunConfig fixture_config(const std::string& name) { return execkit::load_config(fixture(name)); }

/// Single-asset spec with the Appendix-B cost shapes (costs scaled per regime).
inline execkit::SingleAssetSpec appendix_b_spec(int horizon, int chunks, int regimes, double gamma,
                                                std::vector<double> means = {}, double variance = 0.0) {
    execkit::SingleAssetSpec s;
    s.horizon = horizon;
    s.total_chunks = chunks;
    s.gamma = gamma;
    if (regimes == 1) {
        s.transition = Mat::Ones(1, 1);
    } else {
        s.transition.resize(2, 2);
        s.transition << 0.7, 0.3, 0.4, 0.6;
    }
    for (int i = 0; i < regimes; ++i) {
        execkit::ScalarRegime r;
        r.mean_return = i < static_cast<int>(means.size()) ? means[i] : 0.0;
        r.variance = variance;
        r.temp_linear = 2e-3 * (1 + i);
        r.temp_quadratic = 1e-4 * (1 + i);
        r.perm_linear = 1e-4 * (1 + i);
        r.perm_quadratic = 2e-4 * (1 + i);
        s.regimes.push_back(r);
    }
    return s;
}

/// Appendix-B scenario fixture cut down to a small deterministic problem:
/// variance zeroed, first `regimes` regimes kept.
inline execkit::SingleAssetSpec scenario_slice(const std::string& fixture_name, double gamma, int horizon, int chunks,
                                               int regimes) {
    auto spec = execkit::single_asset_slice(fixture_config(fixture_name).market, 0, gamma);
    spec.horizon = horizon;
    spec.total_chunks = chunks;
    for (auto& r : spec.regimes) r.variance = 0.0;
    if (regimes == 1) {
        spec.regimes.resize(1);
        spec.transition = Mat::Ones(1, 1);
    }
    return spec;
}

inline double crra(double w, double gamma) { return gamma == 0.0 ? std::log(w) : std::pow(w, gamma) / gamma; }

/// Decision rule seen by the oracle: (period, regime, cash, price, remaining) -> chunks to sell.
using Rule = std::function<int(int, int, double, double, int)>;

/**
 * Exact expected utility of a zero-variance single-asset problem, starting at
 * price 1 and no cash. With `rule` empty it maximizes over every integer sale at
 * every node of the regime tree (all non-anticipative schedules); otherwise it
 * follows the rule.
 */
inline double tree_value(const execkit::SingleAssetSpec& s, int t, int regime, double cash, double price, int left,
                         const Rule& rule = {}) {
    const auto& r = s.regimes[regime];
    auto after = [&](int x) {
        const double a = r.temp_linear * x + r.temp_quadratic * x * x;
        const double b = r.perm_linear * x + r.perm_quadratic * x * x;
        if (a >= 1.0 || b >= 1.0) return -HUGE_VAL;
        const double c = cash + x * price * (1.0 - a);
        if (t == s.horizon - 1) return crra(c, s.gamma);
        const double p = price * (1.0 - b) * (1.0 + r.mean_return);
        double acc = 0.0;
        for (int j = 0; j < s.n_regimes(); ++j) {
            const double pj = s.transition(regime, j);
            if (pj > 0.0) acc += pj * tree_value(s, t + 1, j, c, p, left - x, rule);
        }
        return acc;
    };
    if (t == s.horizon - 1) return after(left);
    if (rule) return after(rule(t, regime, cash, price, left));
    double best = -HUGE_VAL;
    for (int x = 0; x <= left; ++x) best = std::max(best, after(x));
    return best;
}

/// Two assets, two regimes, cross impact in every cost matrix.
inline execkit::MarketSpec two_asset(int horizon) {
    execkit::MarketSpec s;
    s.name = "two_asset";
    s.horizon = horizon;
    s.transition.resize(2, 2);
    s.transition << 0.9, 0.1, 0.2, 0.8;
    for (int i = 0; i < 2; ++i) {
        const double k = 1.0 + i;
        execkit::RegimeParams r;
        r.mean_return = Vec(2);
        r.mean_return << 0.004 - 0.006 * i, 0.001;
        r.return_cov = Mat(2, 2);
        r.return_cov << 4e-4, 1e-4, 1e-4, 2e-4;
        r.temp_linear = Mat(2, 2);
        r.temp_linear << 2e-3 * k, 4e-4, 3e-4, 3e-3 * k;
        r.temp_quadratic = Mat(2, 2);
        r.temp_quadratic << 1e-4 * k, 2e-5, 1e-5, 2e-4;
        r.perm_linear = Mat(2, 2);
        r.perm_linear << 1e-4 * k, 2e-5, 3e-5, 2e-4;
        r.perm_quadratic = Mat(2, 2);
        r.perm_quadratic << 2e-4, 1e-5, 2e-5, 1e-4 * k;
        s.regimes.push_back(r);
    }
    s.initial_prices = Vec(2);
    s.initial_prices << 3.0, 5.0;
    s.initial_chunks = {12, 8};
    return s;
}

/// Xavier weights plus N(0, 0.3) noise, so biases and saturation are exercised.
inline execkit::MlpPolicy random_policy(const execkit::MarketSpec& spec, int hidden, std::uint64_t seed) {
    execkit::Engine rng(seed);
    auto p = execkit::MlpPolicy::xavier(execkit::FeatureScale::of(spec).dim(), hidden, spec.n_assets(), 0.01, rng);
    std::normal_distribution<double> g(0.0, 0.3);
    Vec theta = p.flat();
    for (int i = 0; i < theta.size(); ++i) theta[i] += g(rng);
    p.set_flat(theta);
    return p;
}

struct GradientCheck {
    double worst_ratio = 0.0;  ///< max |fd - g| / (1e-4 |fd| + 1e-7); <= 1 passes
    int worst_index = -1;
    double worst_analytic = 0.0;
    double worst_fd = 0.0;
};

/// Central finite differences (h = 1e-5) of the scaled batch objective against the pathwise gradient.
inline GradientCheck gradient_check(const execkit::MarketSpec& spec, const execkit::Objective& obj, int hidden,
                                    int n_paths, std::uint64_t seed) {
    using namespace execkit;
    const Market mk(spec);
    const auto paths = draw_paths(mk, n_paths, seed, stream::train, 0);
    const MlpPolicy pol = random_policy(spec, hidden, seed);
    const auto ev = batch_objective(pol, mk, paths, obj, true);
    const Vec theta = pol.flat();
    const double h = 1e-5;
    GradientCheck out;
    for (int i = 0; i < theta.size(); ++i) {
        Vec tp = theta, tm = theta;
        tp[i] += h;
        tm[i] -= h;
        MlpPolicy a = pol, b = pol;
        a.set_flat(tp);
        b.set_flat(tm);
        const double fd = (batch_objective(a, mk, paths, obj, false).scaled_objective -
                           batch_objective(b, mk, paths, obj, false).scaled_objective) /
                          (2 * h);
        const double ratio = std::abs(fd - ev.grad[i]) / (1e-4 * std::abs(fd) + 1e-7);
        if (ratio > out.worst_ratio || out.worst_index < 0) out = {ratio, i, ev.grad[i], fd};
    }
    return out;
}

}  // namespace testsupport

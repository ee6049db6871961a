#include "execkit/eval.hpp"

#include "execkit/dp.hpp"
#include "execkit/error.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>

namespace execkit {

StrategyStats summarize(std::string label, std::vector<double> wealth, double gamma) {
    StrategyStats s;
    s.label = std::move(label);
    const std::size_t n = wealth.size();
    if (n == 0) return s;
    double sum = 0.0, usum = 0.0;
    std::vector<double> u(n);
    for (std::size_t i = 0; i < n; ++i) {
        sum += wealth[i];
        u[i] = utility_or_ninf(wealth[i], gamma);
        usum += u[i];
    }
    s.mean_wealth = sum / n;
    s.mean_utility = usum / n;
    double ss = 0.0, us = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        ss += (wealth[i] - s.mean_wealth) * (wealth[i] - s.mean_wealth);
        us += (u[i] - s.mean_utility) * (u[i] - s.mean_utility);
    }
    if (n > 1) {
        s.std_wealth = std::sqrt(ss / (n - 1));
        s.se_utility = std::sqrt(us / (n - 1)) / std::sqrt(static_cast<double>(n));
    }
    s.se_mean = s.std_wealth / std::sqrt(static_cast<double>(n));
    std::vector<double> sorted = wealth;
    std::sort(sorted.begin(), sorted.end());
    s.median_wealth = n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
    s.wealth = std::move(wealth);
    return s;
}

const StrategyStats& EvalReport::row(const std::string& label) const {
    for (const auto& r : rows)
        if (r.label == label) return r;
    throw ContractViolation("no strategy labelled '" + label + "' in report");
}

std::vector<std::vector<double>> simulate_wealth(const std::vector<const Strategy*>& strategies, const Market& market,
                                                 const std::vector<PathDraw>& paths, ExecMode mode) {
    const int n = static_cast<int>(paths.size());
    std::vector<std::vector<double>> out;
    for (const Strategy* s : strategies) {
        std::vector<double> w(n);
        FirstError err;
#pragma omp parallel for schedule(static) if (mode == ExecMode::Parallel)
        for (int p = 0; p < n; ++p) err.guard(p, [&] { w[p] = simulate_path(market, *s, paths[p]); });
        err.rethrow();
        out.push_back(std::move(w));
    }
    return out;
}

EvalReport evaluate(const std::vector<const Strategy*>& strategies, const Market& market, int n_paths,
                    std::uint64_t seed, double gamma, ExecMode mode, std::uint64_t set) {
    if (n_paths < 1) throw ContractViolation("evaluate: n_paths must be positive");
    EvalReport rep;
    rep.n_paths = n_paths;
    rep.seed = seed;
    rep.gamma = gamma;
    const auto paths = draw_paths(market, n_paths, seed, stream::eval, set, mode);
    auto wealth = simulate_wealth(strategies, market, paths, mode);
    for (std::size_t i = 0; i < strategies.size(); ++i)
        rep.rows.push_back(summarize(strategies[i]->label(), std::move(wealth[i]), gamma));
    return rep;
}

double pooled_se(double se_a, double se_b) { return std::sqrt(se_a * se_a + se_b * se_b); }

double std_stderr(double std, int n) { return n > 1 ? std / std::sqrt(2.0 * (n - 1)) : 0.0; }

void write_report_csv(std::ostream& out, const EvalReport& report) {
    out << "strategy,n_paths,mean_wealth,median_wealth,std_wealth,se_mean,mean_utility,se_utility\n";
    out << std::setprecision(10);
    for (const auto& r : report.rows)
        out << r.label << ',' << report.n_paths << ',' << r.mean_wealth << ',' << r.median_wealth << ','
            << r.std_wealth << ',' << r.se_mean << ',' << r.mean_utility << ',' << r.se_utility << '\n';
}

}  // namespace execkit

#pragma once

#include "execkit/market.hpp"
#include "execkit/parallel.hpp"
#include "execkit/strategy.hpp"

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace execkit {

struct StrategyStats {
    std::string label;
    double mean_wealth = 0.0;
    double median_wealth = 0.0;
    double std_wealth = 0.0;     ///< n-1 divisor
    double se_mean = 0.0;        ///< std / sqrt(n)
    double mean_utility = 0.0;
    double se_utility = 0.0;
    std::vector<double> wealth;  ///< per path, in path order
};

StrategyStats summarize(std::string label, std::vector<double> wealth, double gamma);

struct EvalReport {
    int n_paths = 0;
    std::uint64_t seed = 0;
    double gamma = -1.0;
    std::vector<StrategyStats> rows;

    const StrategyStats& row(const std::string& label) const;
};

/// Terminal wealth of every strategy on one common path set.
std::vector<std::vector<double>> simulate_wealth(const std::vector<const Strategy*>& strategies, const Market& market,
                                                 const std::vector<PathDraw>& paths,
                                                 ExecMode mode = ExecMode::Parallel);

/// Paths come from the "eval" stream with index `set`; every strategy sees the same draws.
EvalReport evaluate(const std::vector<const Strategy*>& strategies, const Market& market, int n_paths,
                    std::uint64_t seed, double gamma, ExecMode mode = ExecMode::Parallel, std::uint64_t set = 0);

/// Pooled standard error of a difference of two means.
double pooled_se(double se_a, double se_b);

/// Standard error of a sample standard deviation under normality.
double std_stderr(double std, int n);

void write_report_csv(std::ostream& out, const EvalReport& report);

}  // namespace execkit

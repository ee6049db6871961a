#pragma once

#include "execkit/market.hpp"
#include "execkit/parallel.hpp"

#include <cstdint>
#include <iosfwd>
#include <string>
#include <limits>
#include <vector>

namespace execkit {

/// Scalar cost coefficients and return law of one asset in one regime.
struct ScalarRegime {
    double mean_return = 0.0;
    double variance = 0.0;
    double temp_linear = 0.0;
    double temp_quadratic = 0.0;
    double perm_linear = 0.0;
    double perm_quadratic = 0.0;

    double temp_cost(double x) const { return temp_linear * x + temp_quadratic * x * x; }
    double perm_cost(double x) const { return perm_linear * x + perm_quadratic * x * x; }
};

/**
 * Single-asset liquidation problem solved by the DP.
 *
 * `step_groups` partitions the T periods into consecutive decision epochs.
 * Empty means one period per epoch. Within an epoch the chosen chunk count
 * is executed as equal per-period trades, remainder to the earliest periods.
 */
struct SingleAssetSpec {
    int horizon = 0;
    Mat transition;
    std::vector<ScalarRegime> regimes;
    int total_chunks = 0;
    double gamma = 0.0;  ///< CRRA coefficient, gamma < 1; 0 means log utility
    std::vector<int> step_groups;

    int n_regimes() const { return static_cast<int>(regimes.size()); }
    /// Group sizes with the empty default expanded to all ones.
    std::vector<int> group_sizes() const;
    int n_epochs() const { return static_cast<int>(group_sizes().size()); }
};

void require_valid(const SingleAssetSpec& spec);

/// Asset `asset` of a market as a standalone single-asset problem.
SingleAssetSpec single_asset_slice(const MarketSpec& spec, int asset, double gamma);

/// Groups consecutive periods into epochs of `group_size` (the last epoch
/// takes whatever is left). group_size == 1 returns the spec unchanged.
SingleAssetSpec aggregate_steps(const SingleAssetSpec& spec, int group_size);

/// Splits `total` chunks into `parts` near-equal integers, remainder first.
std::vector<int> split_equal(int total, int parts);

/// CRRA utility: w^gamma / gamma, or ln w at gamma == 0.
/// Throws DomainError for w <= 0 when gamma <= 0, and for w < 0 otherwise.
double utility(double w, double gamma);

/// As utility(), but returns -infinity outside the domain instead of throwing.
double utility_or_ninf(double w, double gamma);

struct MonteCarloOptions {
    int n_samples = 1000;    ///< return scenarios per pass
    int n_iterations = 3;    ///< passes with fresh scenarios, averaged
    std::uint64_t seed = 0;
};

struct DpOptions {
    MonteCarloOptions mc;
    int cash_knots = 101;
    double cash_grid_factor = 1.5;  ///< grid covers [0, factor * S0]
    double grid_ratio = 1.02;       ///< growth of consecutive knot spacings
    ExecMode mode = ExecMode::Parallel;
};

/**
 * Normalized-cash grid: knot k sits at upper * (r^k - 1) / (r^(K-1) - 1), so
 * spacing grows geometrically away from zero.
 */
class CashGrid {
public:
    CashGrid() = default;
    CashGrid(int knots, double upper, double ratio);
    explicit CashGrid(std::vector<double> knots);

    int size() const { return static_cast<int>(knots_.size()); }
    double upper() const { return knots_.back(); }
    const std::vector<double>& knots() const { return knots_; }
    double operator[](int k) const { return knots_[k]; }

    /// Bracketing knot k with knots[k] <= c < knots[k+1] and the fractional
    /// position inside it. Values at or beyond the top clamp to (K-2, 1).
    struct Bracket {
        int k;
        double frac;
        bool clamped;
    };
    Bracket locate(double c) const;

private:
    std::vector<double> knots_;
};

/// Sampled intra-epoch scenarios for one (epoch, starting regime).
struct ScenarioSet {
    int steps = 0;
    int count = 0;
    std::vector<double> returns;  ///< count x steps, row-major
    std::vector<int> regimes;     ///< count x steps, first column = starting regime
};

/**
 * DP solution: values V(regime, cash knot, chunks, epoch), the argmax policy,
 * the action values behind it, and the scenarios used to estimate them.
 *
 * Values are expected utility under a current price normalized to 1, so the
 * value at actual price p is p^gamma * V (or V + ln p at gamma == 0). The
 * last epoch always sells everything that remains.
 */
class ValueTable {
public:
    ValueTable() = default;
    ValueTable(CashGrid grid, int n_regimes, int max_chunks, std::vector<int> group_sizes, double gamma);

    const CashGrid& grid() const { return grid_; }
    int n_regimes() const { return n_regimes_; }
    int max_chunks() const { return max_chunks_; }
    int n_epochs() const { return static_cast<int>(groups_.size()); }
    const std::vector<int>& group_sizes() const { return groups_; }
    double gamma() const { return gamma_; }

    double value(int regime, int knot, int chunks, int epoch) const {
        return values_[vindex(regime, knot, chunks, epoch)];
    }
    int policy(int regime, int knot, int chunks, int epoch) const {
        return policy_[vindex(regime, knot, chunks, epoch)];
    }
    /// Estimated action value of selling `x` (x <= chunks) at a knot.
    double action_value(int regime, int knot, int chunks, int x, int epoch) const {
        return q_[qindex(regime, knot, chunks, x, epoch)];
    }
    const ScenarioSet& scenarios(int epoch, int regime) const {
        return scenarios_[static_cast<std::size_t>(epoch) * n_regimes_ + regime];
    }

    /// Clamp events (continuation cash beyond the top knot) seen while solving.
    long long clamp_count() const { return clamp_count_; }

    // Raw storage, for the solver and serialization.
    std::vector<double>& values_data() { return values_; }
    std::vector<int>& policy_data() { return policy_; }
    std::vector<double>& q_data() { return q_; }
    std::vector<ScenarioSet>& scenario_data() { return scenarios_; }
    const std::vector<double>& values_data() const { return values_; }
    const std::vector<int>& policy_data() const { return policy_; }
    const std::vector<double>& q_data() const { return q_; }
    const std::vector<ScenarioSet>& scenario_data() const { return scenarios_; }
    void set_clamp_count(long long n) { clamp_count_ = n; }

    std::size_t vindex(int regime, int knot, int chunks, int epoch) const {
        return ((static_cast<std::size_t>(epoch) * n_regimes_ + regime) * (max_chunks_ + 1) + chunks) *
                   grid_.size() +
               knot;
    }
    /// Action values are stored triangularly: for each (epoch, regime) all
    /// pairs x <= S, knots innermost.
    std::size_t qindex(int regime, int knot, int chunks, int x, int epoch) const {
        const std::size_t per_slice = triangle(max_chunks_ + 1) * grid_.size();
        return (static_cast<std::size_t>(epoch) * n_regimes_ + regime) * per_slice +
               (triangle(chunks) + x) * grid_.size() + knot;
    }

private:
    static std::size_t triangle(int s) { return static_cast<std::size_t>(s) * (s + 1) / 2; }

    CashGrid grid_;
    int n_regimes_ = 0;
    int max_chunks_ = 0;
    std::vector<int> groups_;
    double gamma_ = 0.0;
    std::vector<double> values_;
    std::vector<int> policy_;
    std::vector<double> q_;
    std::vector<ScenarioSet> scenarios_;
    long long clamp_count_ = 0;
};

/// Conservative bound on normalized cash reachable with overwhelming
/// probability (4 sigma on the cumulative return, worst-case impact).
double required_cash_upper(const SingleAssetSpec& spec);

/// Backward induction over epochs. Throws GridCoverageError when the cash
/// grid cannot cover required_cash_upper(spec).
ValueTable solve_dp(const SingleAssetSpec& spec, const DpOptions& options = {});

/// Chunks to sell at an arbitrary normalized cash: argmax over x of the
/// action values interpolated linearly between the bracketing knots.
/// Ties go to the smaller x. Exactly the stored policy at a knot.
int decide(const ValueTable& table, int regime, double cash, int chunks, int epoch);

/// Chunks to sell by re-evaluating the one-step Bellman lookahead at the
/// exact cash with the stored scenarios. Agrees with the stored policy at
/// knots; off-grid it avoids interpolating the current slice.
int decide_lookahead(const ValueTable& table, const SingleAssetSpec& spec, int regime, double cash,
                     int chunks, int epoch);

/// Lookahead action values for every x in 0..chunks (same estimator as the
/// solver). Entries for infeasible trades are -infinity.
std::vector<double> lookahead_values(const ValueTable& table, const SingleAssetSpec& spec, int regime,
                                     double cash, int chunks, int epoch);

/// Standard error of the Monte-Carlo estimate behind V(regime, 0, S0, 0).
double initial_value_stderr(const ValueTable& table, const SingleAssetSpec& spec, int regime);

struct RolloutStep {
    int t = 0;
    int regime = 0;
    int chunks_sold = 0;
    double price = 0.0;  ///< price at which the trade executes
    double cash = 0.0;   ///< accumulated cash after the trade
};

enum class DecisionRule { Interpolated, Lookahead };

/**
 * Follows the solved policy along one realized path. `regimes` holds the
 * regime of each of the T periods and `returns` the return applied after
 * each period's trade (at least T-1 entries; a T-th is ignored).
 */
std::vector<RolloutStep> rollout_policy(const ValueTable& table, const SingleAssetSpec& spec,
                                        const std::vector<int>& regimes, const std::vector<double>& returns,
                                        double initial_price = 1.0,
                                        DecisionRule rule = DecisionRule::Lookahead);

/**
 * Binary table layout (little-endian, version 1):
 *   "EXKVTBL\0", u32 version, i32 n_regimes, i32 max_chunks, i32 n_epochs,
 *   i32 knots, f64 gamma, i64 clamp_count, i32 group_sizes[n_epochs],
 *   f64 knots[knots], f64 values[...], i32 policy[...], i64 q_size,
 *   f64 q[q_size], then per (epoch, regime): i32 steps, i32 count,
 *   f64 returns[count*steps], i32 regimes[count*steps].
 */
void write_table(std::ostream& out, const ValueTable& table);
ValueTable read_table(std::istream& in);
void save_table(const std::string& path, const ValueTable& table);
ValueTable load_table(const std::string& path);

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

}  // namespace execkit

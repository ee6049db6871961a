#pragma once

#include "execkit/dp.hpp"
#include "execkit/market.hpp"
#include "execkit/mlp.hpp"
#include "execkit/ortho.hpp"

#include <memory>
#include <string>
#include <vector>

namespace execkit {

/// Exogenous randomness of one path: the regime of every period and the
/// return applied after each of the first T-1 trades.
struct PathDraw {
    std::vector<int> regimes;  ///< length T
    Mat returns;               ///< (T-1) x n
};

/// Initial regime from the stationary law, then normals and a uniform per period.
PathDraw draw_path(const Market& market, Engine& rng);

/// Path p uses its own engine (seed, stream, index, p), so draws do not
/// depend on thread count or on how many paths are requested.
std::vector<PathDraw> draw_paths(const Market& market, int n_paths, std::uint64_t seed, std::string_view stream,
                                 std::uint64_t index = 0, ExecMode mode = ExecMode::Parallel);

/// Per-path decision state of a strategy.
class Episode {
public:
    virtual ~Episode() = default;
    /// Asset trades for the state; must satisfy 0 <= x <= remaining.
    virtual Vec act(const PathState& state) = 0;
};

class Strategy {
public:
    virtual ~Strategy() = default;
    virtual std::string label() const = 0;
    virtual std::unique_ptr<Episode> begin() const = 0;
};

/// Equal trades S0/T per period; with `integer_chunks` the remainder goes to
/// the earliest periods.
Mat benchmark_schedule(const MarketSpec& spec, bool integer_chunks = false);

class BenchmarkStrategy : public Strategy {
public:
    explicit BenchmarkStrategy(const MarketSpec& spec, bool integer_chunks = false);
    std::string label() const override { return "benchmark"; }
    std::unique_ptr<Episode> begin() const override;

private:
    Mat schedule_;
};

/**
 * Ortho/DP baseline. Each portfolio keeps virtual chunks and cash valued at
 * its own price e_k'p / e_k'p0 and asks its DP table for a chunk count. The
 * summed asset trades are clamped to [0, remaining]; the last period sells
 * everything left. Portfolios without a sub-problem trade q_k/T per period.
 */
class OrthoDpStrategy : public Strategy {
public:
    OrthoDpStrategy(const MarketSpec& spec, OrthoDecomposition decomposition, std::vector<ValueTable> tables,
                    DecisionRule rule = DecisionRule::Interpolated);
    std::string label() const override { return "ortho_dp"; }
    std::unique_ptr<Episode> begin() const override;

    const OrthoDecomposition& decomposition() const { return decomp_; }
    const std::vector<ValueTable>& tables() const { return tables_; }

private:
    friend class OrthoDpEpisode;
    MarketSpec spec_;
    OrthoDecomposition decomp_;
    std::vector<ValueTable> tables_;  // empty table for untradable portfolios
    std::vector<Vec> rows_;
    std::vector<double> base_price_;
    DecisionRule rule_;
};

class MlpStrategy : public Strategy {
public:
    MlpStrategy(const MarketSpec& spec, MlpPolicy policy, std::string label = "mlp");
    std::string label() const override { return label_; }
    std::unique_ptr<Episode> begin() const override;
    const MlpPolicy& policy() const { return policy_; }

private:
    MlpPolicy policy_;
    FeatureScale scale_;
    int horizon_;
    std::string label_;
};

struct StepRecord {
    PathState state;  ///< before the trade
    Vec action;
};

/// Rolls a strategy along one path. Throws ContractViolation naming the
/// strategy and period when an action is infeasible. Terminal wealth is the
/// final cash.
double simulate_path(const Market& market, const Strategy& strategy, const PathDraw& path,
                     std::vector<StepRecord>* trace = nullptr);

}  // namespace execkit

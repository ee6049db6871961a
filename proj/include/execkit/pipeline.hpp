#pragma once

#include "execkit/config.hpp"
#include "execkit/eval.hpp"
#include "execkit/ortho.hpp"
#include "execkit/strategy.hpp"
#include "execkit/training.hpp"

#include <nlohmann/json.hpp>

#include <optional>
#include <string>
#include <vector>

namespace execkit {

enum class Stage { Ortho = 0, Dp = 1, Pretrain = 2, Train = 3, Eval = 4 };

std::string stage_name(Stage s);
Stage parse_stage(const std::string& name);

struct RunManifest {
    std::string config_hash;
    std::uint64_t seed = 0;
    std::string version;
    int group_size = 1;
    bool serial_dp = false;
    std::vector<std::string> completed;
    std::vector<double> dp_seconds;  ///< per portfolio
    double dp_wall_seconds = 0.0;
    double pretrain_seconds = 0.0;
    double train_seconds = 0.0;
    double eval_seconds = 0.0;
    std::vector<std::string> outputs;

    nlohmann::json to_json() const;
};

/// CRRA coefficient used for the DP stage: the objective's gamma, or -1 for mean-variance.
double dp_gamma(const Objective& objective);

struct DpStage {
    std::vector<ValueTable> tables;  ///< empty table where a portfolio has no sub-problem
    std::vector<double> seconds;
    double wall_seconds = 0.0;
};

/// Solves every portfolio sub-problem. Parallel mode spreads portfolios over
/// threads; results do not depend on the mode.
DpStage solve_portfolios(const RunConfig& cfg, const OrthoDecomposition& decomp, int group_size, ExecMode mode);

struct PipelineOptions {
    Stage stop_after = Stage::Eval;
    int group_size = 0;  ///< 0: take it from the config
    bool serial_dp = false;
    ExecMode mode = ExecMode::Parallel;
    std::string out_dir;  ///< empty: keep results in memory only
};

struct PipelineResult {
    RunManifest manifest;
    std::optional<OrthoDecomposition> decomposition;
    std::vector<ValueTable> tables;
    std::optional<MlpPolicy> pretrained;
    std::vector<double> pretrain_loss;
    std::optional<MlpPolicy> trained;
    std::vector<CurvePoint> curve;
    std::optional<EvalReport> report;
};

/// Stages: ortho, dp, pretrain, train, eval. Writes artifacts and the
/// manifest after every stage when out_dir is set.
PipelineResult run_pipeline(const RunConfig& cfg, const PipelineOptions& opts = {});

nlohmann::json ortho_to_json(const OrthoDecomposition& d);

void write_curve_csv(std::ostream& out, const std::vector<CurvePoint>& curve);
void write_loss_csv(std::ostream& out, const std::vector<double>& loss);

struct FrontierPoint {
    int restart = 0;
    bool failed = false;
    std::string error;
    double selection_objective = 0.0;  ///< E - lambda Var on the held-out set
    StrategyStats stats;               ///< on the common evaluation set
};

struct FrontierRow {
    double lambda = 0.0;
    int best = -1;  ///< index into points, -1 when every restart failed
    std::vector<FrontierPoint> points;

    const FrontierPoint* best_point() const { return best >= 0 ? &points[best] : nullptr; }
};

struct FrontierResult {
    StrategyStats benchmark;
    StrategyStats ortho_dp;
    std::vector<FrontierRow> rows;
};

/**
 * Mean-variance sweep. The ortho/DP baseline (solved once, gamma -1) and one
 * pretrained network per restart are shared across lambdas; training uses the
 * restart's seed. The best restart per lambda maximizes E - lambda Var on a
 * held-out path set; reported statistics use the common evaluation set.
 */
FrontierResult frontier_sweep(const RunConfig& cfg, const std::vector<double>& lambdas, int restarts,
                              ExecMode mode = ExecMode::Parallel);

void write_frontier_csv(std::ostream& out, const FrontierResult& res);

struct CrraRow {
    double gamma = 0.0;
    StrategyStats ortho_dp;
    StrategyStats mlp;
};

struct CrraSweepResult {
    StrategyStats benchmark;
    std::vector<CrraRow> rows;
};

/// Full pipeline per gamma, every strategy on the common evaluation set.
CrraSweepResult crra_sweep(const RunConfig& cfg, const std::vector<double>& gammas,
                           ExecMode mode = ExecMode::Parallel);

void write_crra_csv(std::ostream& out, const CrraSweepResult& res);

/// Seed of restart r; restart 0 uses the master seed itself.
std::uint64_t restart_seed(std::uint64_t seed, int r);

}  // namespace execkit

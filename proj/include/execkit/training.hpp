#pragma once

#include "execkit/market.hpp"
#include "execkit/mlp.hpp"
#include "execkit/parallel.hpp"
#include "execkit/strategy.hpp"

#include <string>
#include <vector>

namespace execkit {

struct Objective {
    enum class Kind { Crra, MeanVariance };
    Kind kind = Kind::Crra;
    double gamma = -1.0;   ///< CRRA coefficient
    double lambda = 0.0;   ///< mean-variance coefficient

    static Objective crra(double gamma) { return {Kind::Crra, gamma, 0.0}; }
    static Objective mean_variance(double lambda) { return {Kind::MeanVariance, -1.0, lambda}; }
    std::string label() const;
    /// Raw objective of a wealth sample: mean U(W), or mean - lambda * Var (n-1 divisor).
    double value(const std::vector<double>& wealth) const;
};

struct TrainConfig {
    int hidden_dim = 4;
    double leak = 0.01;
    int batch_size = 256;
    int train_steps = 1000;
    AdamConfig adam;
    int pretrain_states = 10000;
    int pretrain_steps = 2000;
    int pretrain_batch = 256;
    AdamConfig pretrain_adam;
    double turbulence = 1e-3;  ///< noise sigma as a fraction of weight RMS
};

void require_valid(const TrainConfig& cfg, const Objective& obj);

/**
 * Batch objective of a policy over fixed paths, with its pathwise gradient.
 *
 * The gradient is taken of the scaled objective: mean U(W/V0) for CRRA and
 * (mean W - lambda Var W) / V0 for mean-variance, V0 the initial portfolio
 * value. Both are positive rescalings of the raw objective with the same
 * maximizer; they keep gradients well above Adam's epsilon for any gamma.
 */
struct BatchEval {
    double objective = 0.0;         ///< raw
    double scaled_objective = 0.0;  ///< what the gradient refers to
    double mean_wealth = 0.0;
    std::vector<double> wealth;
    Vec grad;                       ///< d(scaled_objective)/d(theta), if requested
};

BatchEval batch_objective(const MlpPolicy& policy, const Market& market, const std::vector<PathDraw>& paths,
                          const Objective& objective, bool with_gradient, ExecMode mode = ExecMode::Parallel);

struct CurvePoint {
    int step = 0;
    double mean_wealth = 0.0;
    double objective = 0.0;
};

struct TrainResult {
    MlpPolicy policy;
    std::vector<CurvePoint> curve;
};

/// Adam ascent; step s draws a fresh batch from the "train" stream.
TrainResult train(MlpPolicy policy, const Market& market, const Objective& objective, const TrainConfig& cfg,
                  std::uint64_t seed, ExecMode mode = ExecMode::Parallel);

struct PretrainSample {
    Vec features;
    Vec remaining;
    Vec target;
};

/// States (before the last period) visited by `baseline` on "pretrain" paths.
std::vector<PretrainSample> baseline_dataset(const Market& market, const Strategy& baseline, int n_states,
                                             std::uint64_t seed, ExecMode mode = ExecMode::Parallel);

struct PretrainResult {
    MlpPolicy policy;
    std::vector<double> loss;  ///< minibatch loss per step
};

/// Mean squared error between projected outputs and baseline trades.
double pretrain_loss(const MlpPolicy& policy, const std::vector<PretrainSample>& data, int horizon);

/// Adam descent on minibatch MSE, then Gaussian turbulence on the weights.
PretrainResult pretrain(MlpPolicy policy, const std::vector<PretrainSample>& data, const TrainConfig& cfg,
                        int horizon, std::uint64_t seed, ExecMode mode = ExecMode::Parallel);

MlpPolicy initial_policy(const MarketSpec& spec, const TrainConfig& cfg, std::uint64_t seed);

}  // namespace execkit

#pragma once

#include "execkit/rng.hpp"

#include <Eigen/Dense>

#include <string>
#include <vector>

namespace execkit {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/**
 * Return distribution and impact coefficients of one market regime.
 *
 * Impact is quadratic in the traded chunk vector x. For asset k,
 *   cost_k(x) = sum_j linear(k, j) * x_j + quadratic(k, j) * x_j^2,
 * i.e. cost = linear * x + quadratic * (x .* x). Costs are dimensionless
 * fractions: temporary cost reduces the proceeds of the current trade, and
 * permanent cost multiplies the post-trade price by (1 - cost). The matrices
 * need not be symmetric and are applied exactly as given.
 */
struct RegimeParams {
    Vec mean_return;       ///< per-period arithmetic return
    Mat return_cov;        ///< per-period return covariance
    Mat temp_linear;
    Mat temp_quadratic;
    Mat perm_linear;
    Mat perm_quadratic;
};

/// Full problem description. Immutable once wrapped in a Market.
struct MarketSpec {
    std::string name;
    int horizon = 0;                  ///< number of trading periods T
    Mat transition;                   ///< m x m, row-stochastic
    std::vector<RegimeParams> regimes;
    Vec initial_prices;               ///< currency, strictly positive
    std::vector<int> initial_chunks;  ///< S0 per asset

    int n_assets() const { return static_cast<int>(initial_prices.size()); }
    int n_regimes() const { return static_cast<int>(regimes.size()); }
    Vec chunks() const;
    /// Sum of S0_k * p0_k.
    double initial_value() const;
};

/// Collects every problem with a spec. Errors make the spec unusable;
/// warnings are informational (e.g. an auto-symmetrized covariance).
struct ValidationReport {
    std::vector<std::string> errors;
    std::vector<std::string> warnings;
    bool ok() const { return errors.empty(); }
};

ValidationReport check_spec(const MarketSpec& spec);

/// Throws SpecError listing every error found by check_spec.
void require_valid(const MarketSpec& spec);

/// Observable state of one path at the start of period t (0-based).
struct PathState {
    int t = 0;
    int regime = 0;
    Vec prices;
    Vec remaining;
    double cash = 0.0;
};

struct TradeResult {
    double proceeds = 0.0;
    Vec new_prices;
};

struct StationaryResult {
    Vec distribution;
    bool reducible = false;
};

/// Left eigenvector of a row-stochastic matrix for eigenvalue 1, normalized
/// to sum to one. Solves (P^T - I) pi = 0 with sum(pi) = 1; falls back to
/// power iteration when that system is singular. A reducible chain (no
/// unique stationary law) reports `reducible` and returns the uniform vector.
StationaryResult stationary_distribution(const Mat& transition);

/// Samples the next regime from row `regime` of `transition` with the
/// inverse-CDF of a single uniform draw u in [0, 1).
int next_regime(const Mat& transition, int regime, double u);

/**
 * Validated market model with cached Cholesky factors and the stationary
 * regime distribution. All methods are const and thread-safe; callers own
 * their random engines.
 *
 * Timing within a period: observe prices, trade, apply permanent impact, then
 * a return drawn under the current regime moves prices into the next period,
 * and the regime switches.
 */
class Market {
public:
    explicit Market(MarketSpec spec);

    const MarketSpec& spec() const { return spec_; }
    int n_assets() const { return spec_.n_assets(); }
    int n_regimes() const { return spec_.n_regimes(); }
    int horizon() const { return spec_.horizon; }
    const Vec& stationary() const { return stationary_; }
    const Mat& return_factor(int regime) const { return chol_[regime]; }

    Vec temporary_cost(int regime, const Vec& x) const;
    Vec permanent_cost(int regime, const Vec& x) const;

    /// Proceeds sum_k x_k p_k (1 - temp_k(x)) and post-impact prices
    /// p_k (1 - perm_k(x)). Cash and remaining are updated by the caller.
    TradeResult execute_trade(const PathState& state, const Vec& x) const;

    Vec sample_return(int regime, Engine& rng) const;
    /// mean + L z for a vector of standard normals z.
    Vec return_from_normals(int regime, const Vec& z) const;
    int step_regime(int regime, Engine& rng) const;

private:
    MarketSpec spec_;
    std::vector<Mat> chol_;
    Vec stationary_;
};

/// Cholesky factor of a PSD covariance, adding up to 1e-10 diagonal jitter.
/// Throws SpecError when the matrix is not PSD within that jitter.
Mat psd_cholesky(const Mat& cov);

}  // namespace execkit

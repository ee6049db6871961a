#pragma once

#include "execkit/dp.hpp"
#include "execkit/market.hpp"

#include <optional>
#include <string>
#include <vector>

namespace execkit {

/// Average permanent-impact matrix at the mean trading rate S0/T,
/// weighted by the stationary regime distribution.
Mat average_impact_matrix(const MarketSpec& spec);

/// Same, with explicit regime weights instead of the stationary law.
Mat average_impact_matrix(const MarketSpec& spec, const Vec& regime_weights);

struct Eigenportfolios {
    Mat weights;      ///< rows are unit-norm eigenvectors e_k
    Vec eigenvalues;  ///< descending, matching the rows
    bool symmetrized = false;
};

/**
 * Real eigenvectors of `avg`, as rows ordered by descending eigenvalue, each
 * scaled to unit norm with its largest-magnitude entry positive. When any
 * eigenpair is complex beyond 1e-8 * |avg| the symmetric part is used
 * instead and `symmetrized` is set.
 */
Eigenportfolios decompose(const Mat& avg);

/// Solves q * weights = initial_chunks for the row vector q.
Vec chunk_targets(const Mat& weights, const Vec& initial_chunks);

/**
 * Scalar problem for portfolio e_k with q_k chunks: value-weighted shares
 * v = (e_k .* p0) / (e_k' p0) give the return law (v'mu, v'Sigma v) and the
 * costs c1 = v' M_linear e_k, c2 = v' M_quadratic (e_k .* e_k).
 * Throws DomainError when e_k' p0 <= 0.
 */
SingleAssetSpec project_sub_spec(const MarketSpec& spec, const Vec& e_k, double q_k, double gamma);

/**
 * Asset trades per period from portfolio trades: row t of the result is
 * row t of `portfolio_trades` (T x n) times `weights`. The last row absorbs
 * the residual so that every column sums to initial_chunks exactly.
 */
Mat convert_schedule(const Mat& portfolio_trades, const Mat& weights, const Vec& initial_chunks);

/// Portfolio trades (T x n) that an asset schedule corresponds to.
Mat to_portfolio_schedule(const Mat& asset_trades, const Mat& inverse_weights);

struct OrthoDecomposition {
    Mat avg_impact;
    Mat weights;          ///< trading rows: eigen rows, negated where q_k < 0
    Vec eigenvalues;
    Vec chunk_targets;    ///< q with q * weights = S0, all >= 0
    Mat inverse_weights;  ///< weights^{-1}
    std::vector<bool> negated;
    bool symmetrized = false;
    /// Sub-problem per portfolio; empty when the portfolio price e_k' p0 is
    /// not positive, in which case the portfolio is traded evenly.
    std::vector<std::optional<SingleAssetSpec>> sub_specs;
    std::vector<std::string> notes;

    int n() const { return static_cast<int>(weights.rows()); }
};

OrthoDecomposition build_decomposition(const MarketSpec& spec, double gamma);

/// Price of portfolio row e_k at prices p, i.e. e_k' p.
inline double portfolio_price(const Vec& e_k, const Vec& p) { return e_k.dot(p); }

}  // namespace execkit

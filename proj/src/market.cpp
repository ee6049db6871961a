#include "execkit/market.hpp"

#include "execkit/error.hpp"

#include <spdlog/spdlog.h>

#include <cmath>
#include <sstream>

namespace execkit {

namespace {

constexpr double kRowSumTol = 1e-12;
constexpr double kJitter = 1e-10;

std::string dims(const Mat& m) {
    std::ostringstream os;
    os << m.rows() << "x" << m.cols();
    return os.str();
}

void check_square(std::vector<std::string>& errors, const Mat& m, int n, const std::string& where) {
    if (m.rows() != n || m.cols() != n) {
        errors.push_back(where + ": expected " + std::to_string(n) + "x" + std::to_string(n) +
                         ", got " + dims(m));
    } else if (!m.allFinite()) {
        errors.push_back(where + ": non-finite entry");
    }
}

}  // namespace

Vec MarketSpec::chunks() const {
    Vec s(initial_chunks.size());
    for (std::size_t k = 0; k < initial_chunks.size(); ++k) s[k] = initial_chunks[k];
    return s;
}

double MarketSpec::initial_value() const { return chunks().dot(initial_prices); }

ValidationReport check_spec(const MarketSpec& spec) {
    ValidationReport rep;
    auto& err = rep.errors;
    const int n = spec.n_assets();
    const int m = spec.n_regimes();

    if (spec.horizon <= 0) err.push_back("horizon_periods: must be a positive integer");
    if (n <= 0) err.push_back("initial_prices_usd: at least one asset is required");
    if (m <= 0) err.push_back("regimes: at least one regime is required");

    for (int k = 0; k < n; ++k) {
        if (!(spec.initial_prices[k] > 0.0) || !std::isfinite(spec.initial_prices[k]))
            err.push_back("initial_prices_usd[" + std::to_string(k) + "]: must be strictly positive");
    }
    if (static_cast<int>(spec.initial_chunks.size()) != n) {
        err.push_back("initial_chunks: length " + std::to_string(spec.initial_chunks.size()) +
                      " does not match " + std::to_string(n) + " assets");
    } else {
        for (int k = 0; k < n; ++k)
            if (spec.initial_chunks[k] < 0)
                err.push_back("initial_chunks[" + std::to_string(k) + "]: must be nonnegative");
    }

    if (spec.transition.rows() != m || spec.transition.cols() != m) {
        err.push_back("transition: expected " + std::to_string(m) + "x" + std::to_string(m) +
                      ", got " + dims(spec.transition));
    } else {
        for (int i = 0; i < m; ++i) {
            const auto row = spec.transition.row(i);
            bool in_range = true;
            for (int j = 0; j < m; ++j)
                in_range = in_range && row[j] >= 0.0 && row[j] <= 1.0;
            if (!in_range)
                err.push_back("transition[" + std::to_string(i) + "]: entries must lie in [0, 1]");
            if (std::abs(row.sum() - 1.0) > kRowSumTol) {
                std::ostringstream os;
                os << "transition[" << i << "]: row sums to " << row.sum() << ", expected 1";
                err.push_back(os.str());
            }
        }
    }

    for (int i = 0; i < m; ++i) {
        const auto& r = spec.regimes[i];
        const std::string at = "regimes[" + std::to_string(i) + "]";
        if (r.mean_return.size() != n)
            err.push_back(at + ".mean_return: expected length " + std::to_string(n) + ", got " +
                          std::to_string(r.mean_return.size()));
        check_square(err, r.return_cov, n, at + ".return_cov");
        check_square(err, r.temp_linear, n, at + ".temp_linear");
        check_square(err, r.temp_quadratic, n, at + ".temp_quadratic");
        check_square(err, r.perm_linear, n, at + ".perm_linear");
        check_square(err, r.perm_quadratic, n, at + ".perm_quadratic");
        if (r.return_cov.rows() == n && r.return_cov.cols() == n && r.return_cov.allFinite()) {
            const double asym = (r.return_cov - r.return_cov.transpose()).cwiseAbs().maxCoeff();
            if (asym > 0.0) rep.warnings.push_back(at + ".return_cov: not symmetric (max |C-C^T| = " +
                                                   std::to_string(asym) + "), symmetrized");
            const Mat sym = 0.5 * (r.return_cov + r.return_cov.transpose());
            const double tr = std::max(sym.trace(), 0.0);
            Eigen::SelfAdjointEigenSolver<Mat> es(sym, Eigen::EigenvaluesOnly);
            if (n > 0 && es.eigenvalues().minCoeff() < -1e-10 * std::max(tr, 1e-300) &&
                es.eigenvalues().minCoeff() < -kJitter) {
                std::ostringstream os;
                os << at << ".return_cov: not positive semidefinite (min eigenvalue "
                   << es.eigenvalues().minCoeff() << ")";
                err.push_back(os.str());
            }
        }
    }

    if (rep.errors.empty() && m > 0) {
        if (stationary_distribution(spec.transition).reducible)
            rep.warnings.push_back("transition: reducible chain, stationary distribution is not unique");
    }
    return rep;
}

void require_valid(const MarketSpec& spec) {
    auto rep = check_spec(spec);
    if (!rep.ok()) {
        std::string msg = "invalid market spec";
        if (!spec.name.empty()) msg += " '" + spec.name + "'";
        msg += ":";
        for (const auto& e : rep.errors) msg += "\n  " + e;
        throw SpecError(msg, rep.errors);
    }
}

StationaryResult stationary_distribution(const Mat& transition) {
    const int m = static_cast<int>(transition.rows());
    StationaryResult out;
    if (m == 1) {
        out.distribution = Vec::Ones(1);
        return out;
    }
    // Replace one equation of (P^T - I) pi = 0 by the normalization row.
    Mat a = transition.transpose() - Mat::Identity(m, m);
    a.row(m - 1).setOnes();
    Vec rhs = Vec::Zero(m);
    rhs[m - 1] = 1.0;

    Eigen::FullPivLU<Mat> lu(a);
    lu.setThreshold(1e-12);
    if (lu.isInvertible()) {
        out.distribution = lu.solve(rhs);
        out.distribution = out.distribution.cwiseMax(0.0);
        out.distribution /= out.distribution.sum();
        return out;
    }

    // Singular: either reducible (several closed classes) or numerically
    // awkward. Power iteration from uniform decides which.
    Vec pi = Vec::Constant(m, 1.0 / m);
    for (int it = 0; it < 100000; ++it) {
        Vec next = transition.transpose() * pi;
        if ((next - pi).cwiseAbs().maxCoeff() < 1e-15) {
            pi = next;
            break;
        }
        pi = next;
    }
    // With more than one closed class the limit depends on the start vector.
    Vec alt = Vec::Zero(m);
    alt[0] = 1.0;
    for (int it = 0; it < 100000; ++it) alt = transition.transpose() * alt;
    if ((alt - pi).cwiseAbs().maxCoeff() > 1e-8) {
        spdlog::warn("stationary_distribution: reducible chain, returning uniform vector");
        out.reducible = true;
        out.distribution = Vec::Constant(m, 1.0 / m);
        return out;
    }
    out.distribution = pi / pi.sum();
    return out;
}

int next_regime(const Mat& transition, int regime, double u) {
    const int m = static_cast<int>(transition.cols());
    double acc = 0.0;
    for (int j = 0; j < m; ++j) {
        acc += transition(regime, j);
        if (u < acc) return j;
    }
    // u within rounding of 1: last regime with positive mass.
    for (int j = m - 1; j >= 0; --j)
        if (transition(regime, j) > 0.0) return j;
    return m - 1;
}

Mat psd_cholesky(const Mat& cov) {
    const Mat sym = 0.5 * (cov + cov.transpose());
    const auto n = sym.rows();
    if (sym.isZero(0.0)) return Mat::Zero(n, n);
    Eigen::LLT<Mat> llt(sym);
    if (llt.info() == Eigen::Success) return llt.matrixL();
    Eigen::LLT<Mat> jittered(sym + kJitter * Mat::Identity(n, n));
    if (jittered.info() == Eigen::Success) return jittered.matrixL();
    throw SpecError("return covariance is not positive semidefinite within 1e-10 jitter");
}

Market::Market(MarketSpec spec) : spec_(std::move(spec)) {
    auto rep = check_spec(spec_);
    for (const auto& w : rep.warnings) spdlog::warn("{}", w);
    require_valid(spec_);
    chol_.reserve(spec_.regimes.size());
    for (const auto& r : spec_.regimes) chol_.push_back(psd_cholesky(r.return_cov));
    stationary_ = stationary_distribution(spec_.transition).distribution;
}

Vec Market::temporary_cost(int regime, const Vec& x) const {
    if (x.size() != n_assets()) throw SpecError("temporary_cost: trade vector has wrong dimension");
    const auto& r = spec_.regimes.at(regime);
    return r.temp_linear * x + r.temp_quadratic * x.cwiseProduct(x);
}

Vec Market::permanent_cost(int regime, const Vec& x) const {
    if (x.size() != n_assets()) throw SpecError("permanent_cost: trade vector has wrong dimension");
    const auto& r = spec_.regimes.at(regime);
    return r.perm_linear * x + r.perm_quadratic * x.cwiseProduct(x);
}

TradeResult Market::execute_trade(const PathState& state, const Vec& x) const {
    const int n = n_assets();
    if (x.size() != n || state.remaining.size() != n || state.prices.size() != n)
        throw SpecError("execute_trade: dimension mismatch");
    for (int k = 0; k < n; ++k) {
        if (x[k] < 0.0 || x[k] > state.remaining[k]) {
            std::ostringstream os;
            os << "execute_trade: asset " << k << " trade " << x[k] << " outside [0, " << state.remaining[k]
               << "]";
            throw ContractViolation(os.str());
        }
    }
    const Vec temp = temporary_cost(state.regime, x);
    const Vec perm = permanent_cost(state.regime, x);
    for (int k = 0; k < n; ++k) {
        if (temp[k] >= 1.0 || perm[k] >= 1.0) {
            std::ostringstream os;
            os << "impact overflow: asset " << k << " cost fractions temp=" << temp[k] << " perm=" << perm[k]
               << " at t=" << state.t;
            throw ImpactOverflow(os.str());
        }
    }
    TradeResult out;
    out.proceeds = 0.0;
    for (int k = 0; k < n; ++k) out.proceeds += x[k] * state.prices[k] * (1.0 - temp[k]);
    out.new_prices = state.prices.cwiseProduct((Vec::Ones(n) - perm));
    return out;
}

Vec Market::return_from_normals(int regime, const Vec& z) const {
    return spec_.regimes[regime].mean_return + chol_[regime] * z;
}

Vec Market::sample_return(int regime, Engine& rng) const {
    std::normal_distribution<double> normal;
    Vec z(n_assets());
    for (int k = 0; k < n_assets(); ++k) z[k] = normal(rng);
    return return_from_normals(regime, z);
}

int Market::step_regime(int regime, Engine& rng) const {
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    return next_regime(spec_.transition, regime, unif(rng));
}

}  // namespace execkit

#include "execkit/ortho.hpp"

#include "execkit/error.hpp"

#include <spdlog/spdlog.h>

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace execkit {

Mat average_impact_matrix(const MarketSpec& spec) {
    return average_impact_matrix(spec, stationary_distribution(spec.transition).distribution);
}

Mat average_impact_matrix(const MarketSpec& spec, const Vec& w) {
    if (spec.horizon <= 0) throw SpecError("average_impact_matrix: horizon must be positive");
    const int n = spec.n_assets();
    if (w.size() != spec.n_regimes()) throw SpecError("average_impact_matrix: one weight per regime required");
    const Vec xbar = spec.chunks() / static_cast<double>(spec.horizon);
    Mat avg = Mat::Zero(n, n);
    for (int i = 0; i < spec.n_regimes(); ++i) {
        const auto& r = spec.regimes[i];
        for (int k = 0; k < n; ++k)
            for (int j = 0; j < n; ++j)
                avg(k, j) += w[i] * (r.perm_linear(k, j) * xbar[j] + r.perm_quadratic(k, j) * xbar[j] * xbar[j]);
    }
    return avg;
}

namespace {

void normalize_rows(Mat& rows) {
    for (int k = 0; k < rows.rows(); ++k) {
        rows.row(k).normalize();
        Eigen::Index arg = 0;
        rows.row(k).cwiseAbs().maxCoeff(&arg);
        if (rows(k, arg) < 0.0) rows.row(k) *= -1.0;
    }
}

Eigenportfolios sorted(const Vec& values, const Mat& vectors_by_column, bool symmetrized) {
    const int n = static_cast<int>(values.size());
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return values[a] > values[b]; });
    Eigenportfolios out;
    out.weights.resize(n, n);
    out.eigenvalues.resize(n);
    for (int k = 0; k < n; ++k) {
        out.weights.row(k) = vectors_by_column.col(order[k]).transpose();
        out.eigenvalues[k] = values[order[k]];
    }
    normalize_rows(out.weights);
    out.symmetrized = symmetrized;
    return out;
}

}  // namespace

Eigenportfolios decompose(const Mat& avg) {
    const int n = static_cast<int>(avg.rows());
    if (avg.cols() != n) throw SpecError("decompose: matrix must be square");
    if (n == 0) return {};
    const double scale = std::max(avg.norm(), 1e-300);
    Eigen::EigenSolver<Mat> es(avg, true);
    if (es.info() == Eigen::Success) {
        const auto vals = es.eigenvalues();
        const auto vecs = es.eigenvectors();
        const bool real = vals.imag().cwiseAbs().maxCoeff() <= 1e-8 * scale &&
                          vecs.imag().cwiseAbs().maxCoeff() <= 1e-8;
        if (real) return sorted(vals.real(), vecs.real(), false);
    }
    spdlog::warn("decompose: complex eigenpairs, using the symmetric part of the average impact matrix");
    Eigen::SelfAdjointEigenSolver<Mat> sym(0.5 * (avg + avg.transpose()));
    return sorted(sym.eigenvalues(), sym.eigenvectors(), true);
}

Vec chunk_targets(const Mat& weights, const Vec& initial_chunks) {
    Eigen::FullPivLU<Mat> lu(weights.transpose());
    if (!lu.isInvertible()) throw SpecError("chunk_targets: singular weight matrix");
    return lu.solve(initial_chunks);
}

SingleAssetSpec project_sub_spec(const MarketSpec& spec, const Vec& e, double q, double gamma) {
    const double price = e.dot(spec.initial_prices);
    if (!(price > 0.0)) {
        std::ostringstream os;
        os << "non-positive portfolio price " << price;
        throw DomainError(os.str());
    }
    const Vec v = e.cwiseProduct(spec.initial_prices) / price;
    const Vec e2 = e.cwiseProduct(e);
    SingleAssetSpec out;
    out.horizon = spec.horizon;
    out.transition = spec.transition;
    out.total_chunks = static_cast<int>(std::lround(q));
    out.gamma = gamma;
    for (const auto& r : spec.regimes) {
        ScalarRegime s;
        s.mean_return = v.dot(r.mean_return);
        s.variance = std::max(0.0, v.dot(r.return_cov * v));
        s.temp_linear = v.dot(r.temp_linear * e);
        s.temp_quadratic = v.dot(r.temp_quadratic * e2);
        s.perm_linear = v.dot(r.perm_linear * e);
        s.perm_quadratic = v.dot(r.perm_quadratic * e2);
        out.regimes.push_back(s);
    }
    return out;
}

Mat convert_schedule(const Mat& portfolio_trades, const Mat& weights, const Vec& initial_chunks) {
    Eigen::FullPivLU<Mat> lu(weights);
    if (!lu.isInvertible()) throw SpecError("convert_schedule: singular weight matrix");
    if (portfolio_trades.cols() != weights.rows()) throw SpecError("convert_schedule: dimension mismatch");
    Mat out = portfolio_trades * weights;
    if (out.rows() > 0) {
        const Vec residual = initial_chunks - out.colwise().sum().transpose();
        out.row(out.rows() - 1) += residual.transpose();
    }
    return out;
}

Mat to_portfolio_schedule(const Mat& asset_trades, const Mat& inverse_weights) {
    return asset_trades * inverse_weights;
}

OrthoDecomposition build_decomposition(const MarketSpec& spec, double gamma) {
    require_valid(spec);
    OrthoDecomposition d;
    d.avg_impact = average_impact_matrix(spec);
    auto eig = decompose(d.avg_impact);
    d.weights = eig.weights;
    d.eigenvalues = eig.eigenvalues;
    d.symmetrized = eig.symmetrized;
    if (d.symmetrized) d.notes.push_back("average impact matrix has complex eigenpairs; symmetric part used");
    d.chunk_targets = chunk_targets(d.weights, spec.chunks());
    const int n = d.n();
    d.negated.assign(n, false);
    for (int k = 0; k < n; ++k) {
        if (d.chunk_targets[k] < 0.0) {
            d.weights.row(k) *= -1.0;
            d.chunk_targets[k] = -d.chunk_targets[k];
            d.negated[k] = true;
        }
    }
    d.inverse_weights = d.weights.inverse();
    d.sub_specs.resize(n);
    for (int k = 0; k < n; ++k) {
        try {
            d.sub_specs[k] = project_sub_spec(spec, d.weights.row(k).transpose(), d.chunk_targets[k], gamma);
        } catch (const DomainError& err) {
            std::ostringstream os;
            os << "portfolio " << k << ": " << err.what() << "; traded as q/T per period";
            d.notes.push_back(os.str());
            spdlog::warn("{}", os.str());
        }
    }
    d.notes.push_back("per-portfolio returns and costs use value-weighted projection (approximation)");
    return d;
}

}  // namespace execkit

#pragma once

#include "execkit/market.hpp"
#include "execkit/rng.hpp"

#include <string>

namespace execkit {

/// Scales that map a market state to network features.
struct FeatureScale {
    int horizon = 1;
    int n_regimes = 1;
    Vec chunks0;     ///< S0 per asset
    Vec prices0;     ///< initial prices
    double value0 = 1.0;

    static FeatureScale of(const MarketSpec& spec);
    int dim() const { return 2 + n_regimes + 2 * static_cast<int>(chunks0.size()); }
};

/// [t/(T-1), one-hot regime, remaining/S0, prices/p0, cash/V0].
Vec features(const PathState& s, const FeatureScale& fs);

/// Chain-rule factors d(feature)/d(remaining_k), d/d(price_k), d/d(cash).
struct FeatureJacobian {
    Vec d_remaining;
    Vec d_price;
    double d_cash = 0.0;
};
FeatureJacobian feature_jacobian(const FeatureScale& fs);

/**
 * One-hidden-layer network raw = W2 lrelu(W1 f + b1) + b2.
 * Flat parameter order: W1 row-major, b1, W2 row-major, b2.
 */
class MlpPolicy {
public:
    MlpPolicy() = default;
    MlpPolicy(int input_dim, int hidden_dim, int output_dim, double leak = 0.01);

    /// Uniform in +-sqrt(6 / (fan_in + fan_out)) for weights, zero biases.
    static MlpPolicy xavier(int input_dim, int hidden_dim, int output_dim, double leak, Engine& rng);

    int input_dim() const { return static_cast<int>(w1_.cols()); }
    int hidden_dim() const { return static_cast<int>(w1_.rows()); }
    int output_dim() const { return static_cast<int>(w2_.rows()); }
    double leak() const { return leak_; }
    int n_params() const;

    Vec flat() const;
    void set_flat(const Vec& theta);

    Mat& w1() { return w1_; }
    Vec& b1() { return b1_; }
    Mat& w2() { return w2_; }
    Vec& b2() { return b2_; }
    const Mat& w1() const { return w1_; }
    const Vec& b1() const { return b1_; }
    const Mat& w2() const { return w2_; }
    const Vec& b2() const { return b2_; }

    struct Cache {
        Vec pre;
        Vec hidden;
    };
    Vec forward(const Vec& f) const;
    Vec forward(const Vec& f, Cache& cache) const;
    /// Adds d(loss)/d(theta) to `grad` (flat order) and returns d(loss)/d(f).
    Vec backward(const Vec& f, const Cache& cache, const Vec& d_raw, Vec& grad) const;

private:
    Mat w1_;
    Vec b1_;
    Mat w2_;
    Vec b2_;
    double leak_ = 0.01;
};

inline double sigmoid(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

/// remaining .* sigmoid(raw) before the last period, remaining at t = T-1.
Vec project_action(const Vec& raw, const Vec& remaining, int t, int horizon);

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

class Adam {
public:
    Adam(int n, AdamConfig cfg);
    /// theta += lr * mhat / (sqrt(vhat) + eps) for an ascent direction g.
    void ascend(Vec& theta, const Vec& g);
    void descend(Vec& theta, const Vec& g);
    long steps() const { return t_; }

private:
    AdamConfig cfg_;
    Vec m_;
    Vec v_;
    long t_ = 0;
};

void save_policy(const std::string& path, const MlpPolicy& policy, const std::string& manifest_hash = "");
MlpPolicy load_policy(const std::string& path);

}  // namespace execkit

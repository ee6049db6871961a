#include "execkit/mlp.hpp"

#include "execkit/error.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>

namespace execkit {

FeatureScale FeatureScale::of(const MarketSpec& spec) {
    FeatureScale fs;
    fs.horizon = spec.horizon;
    fs.n_regimes = spec.n_regimes();
    fs.chunks0 = spec.chunks();
    fs.prices0 = spec.initial_prices;
    fs.value0 = spec.initial_value() > 0.0 ? spec.initial_value() : 1.0;
    return fs;
}

Vec features(const PathState& s, const FeatureScale& fs) {
    const int n = static_cast<int>(fs.chunks0.size());
    const int m = fs.n_regimes;
    Vec f = Vec::Zero(fs.dim());
    f[0] = fs.horizon > 1 ? static_cast<double>(s.t) / (fs.horizon - 1) : 0.0;
    f[1 + s.regime] = 1.0;
    for (int k = 0; k < n; ++k) {
        f[1 + m + k] = fs.chunks0[k] > 0.0 ? s.remaining[k] / fs.chunks0[k] : 0.0;
        f[1 + m + n + k] = s.prices[k] / fs.prices0[k];
    }
    f[1 + m + 2 * n] = s.cash / fs.value0;
    return f;
}

FeatureJacobian feature_jacobian(const FeatureScale& fs) {
    const int n = static_cast<int>(fs.chunks0.size());
    FeatureJacobian j;
    j.d_remaining = Vec::Zero(n);
    j.d_price = Vec::Zero(n);
    for (int k = 0; k < n; ++k) {
        j.d_remaining[k] = fs.chunks0[k] > 0.0 ? 1.0 / fs.chunks0[k] : 0.0;
        j.d_price[k] = 1.0 / fs.prices0[k];
    }
    j.d_cash = 1.0 / fs.value0;
    return j;
}

MlpPolicy::MlpPolicy(int input_dim, int hidden_dim, int output_dim, double leak)
    : w1_(Mat::Zero(hidden_dim, input_dim)), b1_(Vec::Zero(hidden_dim)), w2_(Mat::Zero(output_dim, hidden_dim)),
      b2_(Vec::Zero(output_dim)), leak_(leak) {
    if (input_dim <= 0 || hidden_dim <= 0 || output_dim <= 0) throw SpecError("network dimensions must be positive");
}

MlpPolicy MlpPolicy::xavier(int input_dim, int hidden_dim, int output_dim, double leak, Engine& rng) {
    MlpPolicy p(input_dim, hidden_dim, output_dim, leak);
    std::uniform_real_distribution<double> u1(-1.0, 1.0);
    const double a1 = std::sqrt(6.0 / (input_dim + hidden_dim));
    const double a2 = std::sqrt(6.0 / (hidden_dim + output_dim));
    for (int r = 0; r < hidden_dim; ++r)
        for (int c = 0; c < input_dim; ++c) p.w1_(r, c) = a1 * u1(rng);
    for (int r = 0; r < output_dim; ++r)
        for (int c = 0; c < hidden_dim; ++c) p.w2_(r, c) = a2 * u1(rng);
    return p;
}

int MlpPolicy::n_params() const {
    return static_cast<int>(w1_.size() + b1_.size() + w2_.size() + b2_.size());
}

Vec MlpPolicy::flat() const {
    Vec th(n_params());
    int i = 0;
    for (int r = 0; r < w1_.rows(); ++r)
        for (int c = 0; c < w1_.cols(); ++c) th[i++] = w1_(r, c);
    for (int r = 0; r < b1_.size(); ++r) th[i++] = b1_[r];
    for (int r = 0; r < w2_.rows(); ++r)
        for (int c = 0; c < w2_.cols(); ++c) th[i++] = w2_(r, c);
    for (int r = 0; r < b2_.size(); ++r) th[i++] = b2_[r];
    return th;
}

void MlpPolicy::set_flat(const Vec& th) {
    if (th.size() != n_params()) throw SpecError("set_flat: parameter count mismatch");
    int i = 0;
    for (int r = 0; r < w1_.rows(); ++r)
        for (int c = 0; c < w1_.cols(); ++c) w1_(r, c) = th[i++];
    for (int r = 0; r < b1_.size(); ++r) b1_[r] = th[i++];
    for (int r = 0; r < w2_.rows(); ++r)
        for (int c = 0; c < w2_.cols(); ++c) w2_(r, c) = th[i++];
    for (int r = 0; r < b2_.size(); ++r) b2_[r] = th[i++];
}

Vec MlpPolicy::forward(const Vec& f) const {
    Cache c;
    return forward(f, c);
}

Vec MlpPolicy::forward(const Vec& f, Cache& cache) const {
    cache.pre = w1_ * f + b1_;
    cache.hidden = cache.pre;
    for (int k = 0; k < cache.hidden.size(); ++k)
        if (cache.hidden[k] < 0.0) cache.hidden[k] *= leak_;
    return w2_ * cache.hidden + b2_;
}

Vec MlpPolicy::backward(const Vec& f, const Cache& cache, const Vec& d_raw, Vec& grad) const {
    const int h = hidden_dim();
    const int in = input_dim();
    const int out = output_dim();
    const int o_b1 = h * in;
    const int o_w2 = o_b1 + h;
    const int o_b2 = o_w2 + out * h;
    for (int r = 0; r < out; ++r) {
        for (int c = 0; c < h; ++c) grad[o_w2 + r * h + c] += d_raw[r] * cache.hidden[c];
        grad[o_b2 + r] += d_raw[r];
    }
    Vec d_pre = w2_.transpose() * d_raw;
    for (int k = 0; k < h; ++k)
        if (cache.pre[k] < 0.0) d_pre[k] *= leak_;
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < in; ++c) grad[r * in + c] += d_pre[r] * f[c];
        grad[o_b1 + r] += d_pre[r];
    }
    return w1_.transpose() * d_pre;
}

Vec project_action(const Vec& raw, const Vec& remaining, int t, int horizon) {
    if (t >= horizon - 1) return remaining;
    Vec a(remaining.size());
    for (int k = 0; k < a.size(); ++k) a[k] = remaining[k] * sigmoid(raw[k]);
    return a;
}

Adam::Adam(int n, AdamConfig cfg) : cfg_(cfg), m_(Vec::Zero(n)), v_(Vec::Zero(n)) {}

void Adam::ascend(Vec& theta, const Vec& g) {
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (int i = 0; i < theta.size(); ++i) {
        m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g[i];
        v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
        theta[i] += cfg_.lr * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + cfg_.eps);
    }
}

void Adam::descend(Vec& theta, const Vec& g) { ascend(theta, -g); }

namespace {

nlohmann::json matrix_json(const Mat& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (int r = 0; r < m.rows(); ++r) {
        nlohmann::json row = nlohmann::json::array();
        for (int c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        rows.push_back(row);
    }
    return rows;
}

Mat matrix_from(const nlohmann::json& j, int rows, int cols) {
    Mat m(rows, cols);
    if (static_cast<int>(j.size()) != rows) throw SpecError("policy file: bad matrix shape");
    for (int r = 0; r < rows; ++r) {
        if (static_cast<int>(j[r].size()) != cols) throw SpecError("policy file: bad matrix shape");
        for (int c = 0; c < cols; ++c) m(r, c) = j[r][c].get<double>();
    }
    return m;
}

}  // namespace

void save_policy(const std::string& path, const MlpPolicy& p, const std::string& manifest_hash) {
    nlohmann::json j;
    j["format_version"] = 1;
    j["kind"] = "mlp_policy";
    j["input_dim"] = p.input_dim();
    j["hidden_dim"] = p.hidden_dim();
    j["output_dim"] = p.output_dim();
    j["leak"] = p.leak();
    if (!manifest_hash.empty()) j["manifest"] = manifest_hash;
    j["W1"] = matrix_json(p.w1());
    j["b1"] = std::vector<double>(p.b1().data(), p.b1().data() + p.b1().size());
    j["W2"] = matrix_json(p.w2());
    j["b2"] = std::vector<double>(p.b2().data(), p.b2().data() + p.b2().size());
    std::ofstream out(path);
    if (!out) throw SpecError("cannot open " + path + " for writing");
    out << j.dump(1) << "\n";
}

MlpPolicy load_policy(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw SpecError("cannot open " + path);
    const auto j = nlohmann::json::parse(in);
    if (j.value("format_version", 0) != 1) throw SpecError(path + ": unsupported policy format_version");
    const int in_dim = j.at("input_dim").get<int>();
    const int h = j.at("hidden_dim").get<int>();
    const int out = j.at("output_dim").get<int>();
    MlpPolicy p(in_dim, h, out, j.at("leak").get<double>());
    p.w1() = matrix_from(j.at("W1"), h, in_dim);
    p.w2() = matrix_from(j.at("W2"), out, h);
    const auto b1 = j.at("b1").get<std::vector<double>>();
    const auto b2 = j.at("b2").get<std::vector<double>>();
    if (static_cast<int>(b1.size()) != h || static_cast<int>(b2.size()) != out) throw SpecError(path + ": bad biases");
    p.b1() = Eigen::Map<const Vec>(b1.data(), h);
    p.b2() = Eigen::Map<const Vec>(b2.data(), out);
    return p;
}

}  // namespace execkit

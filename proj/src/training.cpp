#include "execkit/training.hpp"

#include "execkit/dp.hpp"
#include "execkit/error.hpp"

#include <spdlog/spdlog.h>

#include <cmath>
#include <numeric>
#include <sstream>

namespace execkit {

std::string Objective::label() const {
    std::ostringstream os;
    if (kind == Kind::Crra)
        os << "crra(" << gamma << ")";
    else
        os << "mv(" << lambda << ")";
    return os.str();
}

double Objective::value(const std::vector<double>& w) const {
    const double n = static_cast<double>(w.size());
    if (kind == Kind::Crra) {
        double acc = 0.0;
        for (double x : w) acc += utility_or_ninf(x, gamma);
        return acc / n;
    }
    const double mean = std::accumulate(w.begin(), w.end(), 0.0) / n;
    double ss = 0.0;
    for (double x : w) ss += (x - mean) * (x - mean);
    return mean - lambda * (w.size() > 1 ? ss / (n - 1.0) : 0.0);
}

void require_valid(const TrainConfig& cfg, const Objective& obj) {
    std::vector<std::string> errors;
    if (cfg.hidden_dim <= 0) errors.push_back("hidden_dim must be positive");
    if (cfg.batch_size < 1) errors.push_back("batch_size must be positive");
    if (obj.kind == Objective::Kind::MeanVariance && cfg.batch_size < 2)
        errors.push_back("mean-variance training needs batch_size >= 2");
    if (!(cfg.adam.lr >= 0.0) || !(cfg.pretrain_adam.lr >= 0.0)) errors.push_back("learning rates must be >= 0");
    if (obj.kind == Objective::Kind::Crra && !(obj.gamma < 1.0)) errors.push_back("gamma must be < 1");
    if (!errors.empty()) {
        std::string msg = "invalid training config:";
        for (const auto& e : errors) msg += "\n  " + e;
        throw SpecError(msg, errors);
    }
}

namespace {

struct StepTape {
    Vec f;
    MlpPolicy::Cache cache;
    Vec sig;
    Vec a;
    Vec p;
    Vec remaining;
    Vec temp;
    Vec perm;
};

/// Forward pass of one path; fills the tape when given.
double forward_path(const MlpPolicy& pol, const Market& market, const FeatureScale& fs, const PathDraw& path,
                    std::vector<StepTape>* tape) {
    const auto& spec = market.spec();
    const int T = spec.horizon;
    const int n = spec.n_assets();
    PathState s;
    s.prices = spec.initial_prices;
    s.remaining = spec.chunks();
    s.cash = 0.0;
    for (int t = 0; t < T; ++t) {
        s.t = t;
        s.regime = path.regimes[t];
        const auto& reg = spec.regimes[s.regime];
        StepTape st;
        st.f = features(s, fs);
        Vec a;
        if (t < T - 1) {
            const Vec raw = pol.forward(st.f, st.cache);
            st.sig.resize(n);
            for (int k = 0; k < n; ++k) st.sig[k] = sigmoid(raw[k]);
            a = s.remaining.cwiseProduct(st.sig);
        } else {
            a = s.remaining;
        }
        const Vec a2 = a.cwiseProduct(a);
        st.temp = reg.temp_linear * a + reg.temp_quadratic * a2;
        st.perm = reg.perm_linear * a + reg.perm_quadratic * a2;
        for (int k = 0; k < n; ++k) {
            if (st.temp[k] >= 1.0 || st.perm[k] >= 1.0) {
                std::ostringstream os;
                os << "impact overflow during training: asset " << k << " at t=" << t;
                throw ImpactOverflow(os.str());
            }
        }
        s.cash += (a.array() * s.prices.array() * (1.0 - st.temp.array())).sum();
        st.a = a;
        st.p = s.prices;
        st.remaining = s.remaining;
        s.prices = s.prices.cwiseProduct(Vec::Ones(n) - st.perm);
        if (t + 1 < T) s.prices = s.prices.cwiseProduct(Vec::Ones(n) + path.returns.row(t).transpose());
        s.remaining -= a;
        if (tape) tape->push_back(std::move(st));
    }
    return s.cash;
}

/// Reverse pass: accumulates d(objective)/d(theta) given d(objective)/dW.
void backward_path(const MlpPolicy& pol, const Market& market, const FeatureScale& fs, const FeatureJacobian& jac,
                   const PathDraw& path, const std::vector<StepTape>& tape, double w_bar, Vec& grad) {
    const auto& spec = market.spec();
    const int T = spec.horizon;
    const int n = spec.n_assets();
    const int m = spec.n_regimes();
    double c_bar = w_bar;
    Vec p_bar = Vec::Zero(n);
    Vec r_bar = Vec::Zero(n);
    for (int t = T - 1; t >= 0; --t) {
        const auto& st = tape[t];
        const auto& reg = spec.regimes[path.regimes[t]];
        const Vec pa_bar = t + 1 < T ? Vec(p_bar.cwiseProduct(Vec::Ones(n) + path.returns.row(t).transpose())) : p_bar;
        Vec a_bar = -r_bar;
        Vec r_bar_t = r_bar;
        const Vec keep = Vec::Ones(n) - st.temp;
        a_bar += c_bar * st.p.cwiseProduct(keep);
        Vec p_bar_t = c_bar * st.a.cwiseProduct(keep);
        const Vec temp_bar = -c_bar * st.a.cwiseProduct(st.p);
        p_bar_t += pa_bar.cwiseProduct(Vec::Ones(n) - st.perm);
        const Vec perm_bar = -pa_bar.cwiseProduct(st.p);
        a_bar += reg.temp_linear.transpose() * temp_bar +
                 2.0 * st.a.cwiseProduct(reg.temp_quadratic.transpose() * temp_bar) +
                 reg.perm_linear.transpose() * perm_bar +
                 2.0 * st.a.cwiseProduct(reg.perm_quadratic.transpose() * perm_bar);
        if (t < T - 1) {
            r_bar_t += a_bar.cwiseProduct(st.sig);
            Vec raw_bar(n);
            for (int k = 0; k < n; ++k)
                raw_bar[k] = a_bar[k] * st.remaining[k] * st.sig[k] * (1.0 - st.sig[k]);
            const Vec f_bar = pol.backward(st.f, st.cache, raw_bar, grad);
            r_bar_t += f_bar.segment(1 + m, n).cwiseProduct(jac.d_remaining);
            p_bar_t += f_bar.segment(1 + m + n, n).cwiseProduct(jac.d_price);
            c_bar += f_bar[1 + m + 2 * n] * jac.d_cash;
        } else {
            r_bar_t += a_bar;
        }
        r_bar = r_bar_t;
        p_bar = p_bar_t;
    }
    (void)fs;
}

}  // namespace

BatchEval batch_objective(const MlpPolicy& policy, const Market& market, const std::vector<PathDraw>& paths,
                          const Objective& obj, bool with_gradient, ExecMode mode) {
    const int B = static_cast<int>(paths.size());
    if (B == 0) throw ContractViolation("batch_objective: empty batch");
    if (obj.kind == Objective::Kind::MeanVariance && B < 2)
        throw ContractViolation("batch_objective: mean-variance needs at least two paths");
    const FeatureScale fs = FeatureScale::of(market.spec());
    const FeatureJacobian jac = feature_jacobian(fs);
    const double v0 = fs.value0;
    const int P = policy.n_params();
    const bool parallel = mode == ExecMode::Parallel;

    BatchEval out;
    out.wealth.resize(B);
    std::vector<std::vector<StepTape>> tapes(with_gradient ? B : 0);
    FirstError forward_err;
#pragma omp parallel for schedule(static) if (parallel)
    for (int b = 0; b < B; ++b)
        forward_err.guard(b, [&] {
            out.wealth[b] = forward_path(policy, market, fs, paths[b], with_gradient ? &tapes[b] : nullptr);
        });
    forward_err.rethrow();

    for (int b = 0; b < B; ++b) {
        if (!(out.wealth[b] > 0.0) && (obj.kind == Objective::Kind::MeanVariance || obj.gamma <= 0.0)) {
            if (obj.kind == Objective::Kind::Crra) {
                std::ostringstream os;
                os << "wealth underflow: terminal wealth " << out.wealth[b] << " on batch path " << b;
                throw DomainError(os.str());
            }
        }
    }
    out.mean_wealth = std::accumulate(out.wealth.begin(), out.wealth.end(), 0.0) / B;
    out.objective = obj.value(out.wealth);

    std::vector<double> w_bar(B);
    if (obj.kind == Objective::Kind::Crra) {
        double acc = 0.0;
        for (int b = 0; b < B; ++b) {
            const double w = out.wealth[b] / v0;
            acc += utility_or_ninf(w, obj.gamma);
            w_bar[b] = std::pow(w, obj.gamma - 1.0) / v0 / B;
        }
        out.scaled_objective = acc / B;
    } else {
        double mean = 0.0;
        for (int b = 0; b < B; ++b) mean += out.wealth[b] / v0;
        mean /= B;
        double ss = 0.0;
        for (int b = 0; b < B; ++b) ss += (out.wealth[b] / v0 - mean) * (out.wealth[b] / v0 - mean);
        out.scaled_objective = mean - obj.lambda * v0 * ss / (B - 1);
        for (int b = 0; b < B; ++b)
            w_bar[b] = (1.0 / B - obj.lambda * v0 * 2.0 * (out.wealth[b] / v0 - mean) / (B - 1)) / v0;
    }

    if (with_gradient) {
        std::vector<Vec> grads(B);
        FirstError backward_err;
#pragma omp parallel for schedule(static) if (parallel)
        for (int b = 0; b < B; ++b) {
            backward_err.guard(b, [&] {
                grads[b] = Vec::Zero(P);
                backward_path(policy, market, fs, jac, paths[b], tapes[b], w_bar[b], grads[b]);
            });
        }
        backward_err.rethrow();
        // Fixed-order reduction keeps results independent of thread count.
        out.grad = Vec::Zero(P);
        for (int b = 0; b < B; ++b) out.grad += grads[b];
    }
    return out;
}

TrainResult train(MlpPolicy policy, const Market& market, const Objective& obj, const TrainConfig& cfg,
                  std::uint64_t seed, ExecMode mode) {
    require_valid(cfg, obj);
    TrainResult res;
    Adam adam(policy.n_params(), cfg.adam);
    Vec theta = policy.flat();
    for (int step = 0; step < cfg.train_steps; ++step) {
        const auto paths = draw_paths(market, cfg.batch_size, seed, stream::train, static_cast<std::uint64_t>(step), mode);
        const auto ev = batch_objective(policy, market, paths, obj, true, mode);
        if (!ev.grad.allFinite()) throw DomainError("train: non-finite gradient at step " + std::to_string(step));
        res.curve.push_back({step, ev.mean_wealth, ev.objective});
        adam.ascend(theta, ev.grad);
        policy.set_flat(theta);
    }
    res.policy = std::move(policy);
    return res;
}

std::vector<PretrainSample> baseline_dataset(const Market& market, const Strategy& baseline, int n_states,
                                             std::uint64_t seed, ExecMode mode) {
    const auto& spec = market.spec();
    const int T = spec.horizon;
    std::vector<PretrainSample> out;
    if (T < 2 || n_states <= 0) return out;
    const FeatureScale fs = FeatureScale::of(spec);
    const int per_path = T - 1;
    const int n_paths = (n_states + per_path - 1) / per_path;
    const auto paths = draw_paths(market, n_paths, seed, stream::pretrain, 0, mode);
    std::vector<std::vector<StepRecord>> traces(n_paths);
    FirstError err;
#pragma omp parallel for schedule(static) if (mode == ExecMode::Parallel)
    for (int p = 0; p < n_paths; ++p) err.guard(p, [&] { simulate_path(market, baseline, paths[p], &traces[p]); });
    err.rethrow();
    for (const auto& tr : traces)
        for (const auto& rec : tr) {
            if (rec.state.t >= T - 1) continue;
            if (static_cast<int>(out.size()) == n_states) break;
            out.push_back({features(rec.state, fs), rec.state.remaining, rec.action});
        }
    return out;
}

namespace {

double sample_loss(const MlpPolicy& pol, const PretrainSample& s, int horizon, MlpPolicy::Cache* cache, Vec* sig) {
    MlpPolicy::Cache local;
    const Vec raw = pol.forward(s.features, cache ? *cache : local);
    const int n = static_cast<int>(raw.size());
    if (sig) sig->resize(n);
    double loss = 0.0;
    for (int k = 0; k < n; ++k) {
        const double g = sigmoid(raw[k]);
        if (sig) (*sig)[k] = g;
        const double d = s.remaining[k] * g - s.target[k];
        loss += d * d;
    }
    (void)horizon;
    return loss;
}

}  // namespace

double pretrain_loss(const MlpPolicy& policy, const std::vector<PretrainSample>& data, int horizon) {
    if (data.empty()) return 0.0;
    double acc = 0.0;
    for (const auto& s : data) acc += sample_loss(policy, s, horizon, nullptr, nullptr);
    return acc / data.size();
}

PretrainResult pretrain(MlpPolicy policy, const std::vector<PretrainSample>& data, const TrainConfig& cfg, int horizon,
                        std::uint64_t seed, ExecMode mode) {
    if (data.empty()) throw ContractViolation("pretrain: empty baseline dataset");
    PretrainResult res;
    const int P = policy.n_params();
    const int B = std::min<int>(cfg.pretrain_batch, static_cast<int>(data.size()));
    Adam adam(P, cfg.pretrain_adam);
    Vec theta = policy.flat();
    Engine pick = make_engine(seed, stream::pretrain, 1);
    std::uniform_int_distribution<int> idx(0, static_cast<int>(data.size()) - 1);
    std::vector<int> batch(B);
    std::vector<Vec> grads(B);
    std::vector<double> losses(B);
    for (int step = 0; step < cfg.pretrain_steps; ++step) {
        for (int b = 0; b < B; ++b) batch[b] = idx(pick);
#pragma omp parallel for schedule(static) if (mode == ExecMode::Parallel)
        for (int b = 0; b < B; ++b) {
            const auto& s = data[batch[b]];
            MlpPolicy::Cache cache;
            Vec sig;
            losses[b] = sample_loss(policy, s, horizon, &cache, &sig);
            const int n = static_cast<int>(sig.size());
            Vec raw_bar(n);
            for (int k = 0; k < n; ++k) {
                const double d = s.remaining[k] * sig[k] - s.target[k];
                raw_bar[k] = 2.0 * d * s.remaining[k] * sig[k] * (1.0 - sig[k]) / B;
            }
            grads[b] = Vec::Zero(P);
            policy.backward(s.features, cache, raw_bar, grads[b]);
        }
        Vec g = Vec::Zero(P);
        double loss = 0.0;
        for (int b = 0; b < B; ++b) {
            g += grads[b];
            loss += losses[b];
        }
        loss /= B;
        if (!std::isfinite(loss) || !g.allFinite())
            throw DomainError("pretrain: non-finite loss at step " + std::to_string(step));
        res.loss.push_back(loss);
        adam.descend(theta, g);
        policy.set_flat(theta);
    }
    if (cfg.turbulence > 0.0) {
        const double rms = std::sqrt(theta.squaredNorm() / std::max(P, 1));
        Engine noise = make_engine(seed, stream::pretrain, 2);
        std::normal_distribution<double> normal(0.0, cfg.turbulence * rms);
        for (int i = 0; i < P; ++i) theta[i] += normal(noise);
        policy.set_flat(theta);
    }
    res.policy = std::move(policy);
    return res;
}

MlpPolicy initial_policy(const MarketSpec& spec, const TrainConfig& cfg, std::uint64_t seed) {
    Engine rng = make_engine(seed, stream::pretrain, 0);
    const FeatureScale fs = FeatureScale::of(spec);
    return MlpPolicy::xavier(fs.dim(), cfg.hidden_dim, spec.n_assets(), cfg.leak, rng);
}

}  // namespace execkit

#include "execkit/strategy.hpp"

#include "execkit/error.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace execkit {

PathDraw draw_path(const Market& market, Engine& rng) {
    const int T = market.horizon();
    const int n = market.n_assets();
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::normal_distribution<double> normal;
    PathDraw p;
    p.regimes.resize(T);
    p.returns.resize(std::max(T - 1, 0), n);
    // Inverse CDF of the stationary law.
    const Vec& pi = market.stationary();
    const double u0 = unif(rng);
    int r = static_cast<int>(pi.size()) - 1;
    double acc = 0.0;
    for (int j = 0; j < pi.size(); ++j) {
        acc += pi[j];
        if (u0 < acc) {
            r = j;
            break;
        }
    }
    p.regimes[0] = r;
    Vec z(n);
    for (int t = 0; t + 1 < T; ++t) {
        for (int k = 0; k < n; ++k) z[k] = normal(rng);
        p.returns.row(t) = market.return_from_normals(p.regimes[t], z).transpose();
        p.regimes[t + 1] = next_regime(market.spec().transition, p.regimes[t], unif(rng));
    }
    return p;
}

std::vector<PathDraw> draw_paths(const Market& market, int n_paths, std::uint64_t seed, std::string_view stream,
                                 std::uint64_t index, ExecMode mode) {
    std::vector<PathDraw> out(n_paths);
    FirstError err;
#pragma omp parallel for schedule(static) if (mode == ExecMode::Parallel)
    for (int p = 0; p < n_paths; ++p) {
        err.guard(p, [&] {
            Engine rng = make_engine(seed, stream, index, static_cast<std::uint64_t>(p));
            out[p] = draw_path(market, rng);
        });
    }
    err.rethrow();
    return out;
}

// ---------------------------------------------------------------------------

Mat benchmark_schedule(const MarketSpec& spec, bool integer_chunks) {
    const int T = spec.horizon;
    const int n = spec.n_assets();
    Mat s(T, n);
    for (int k = 0; k < n; ++k) {
        if (integer_chunks) {
            const auto parts = split_equal(spec.initial_chunks[k], T);
            for (int t = 0; t < T; ++t) s(t, k) = parts[t];
        } else {
            for (int t = 0; t < T; ++t) s(t, k) = static_cast<double>(spec.initial_chunks[k]) / T;
        }
    }
    return s;
}

namespace {

class ScheduleEpisode : public Episode {
public:
    explicit ScheduleEpisode(const Mat& schedule) : schedule_(schedule) {}
    Vec act(const PathState& s) override {
        if (s.t >= schedule_.rows() - 1) return s.remaining;
        return schedule_.row(s.t).transpose().cwiseMin(s.remaining);
    }

private:
    const Mat& schedule_;
};

}  // namespace

BenchmarkStrategy::BenchmarkStrategy(const MarketSpec& spec, bool integer_chunks)
    : schedule_(benchmark_schedule(spec, integer_chunks)) {}

std::unique_ptr<Episode> BenchmarkStrategy::begin() const { return std::make_unique<ScheduleEpisode>(schedule_); }

// ---------------------------------------------------------------------------

OrthoDpStrategy::OrthoDpStrategy(const MarketSpec& spec, OrthoDecomposition decomposition,
                                 std::vector<ValueTable> tables, DecisionRule rule)
    : spec_(spec), decomp_(std::move(decomposition)), tables_(std::move(tables)), rule_(rule) {
    const int n = decomp_.n();
    if (static_cast<int>(tables_.size()) != n) throw SpecError("OrthoDpStrategy: one table per portfolio required");
    for (int k = 0; k < n; ++k) {
        rows_.push_back(decomp_.weights.row(k).transpose());
        base_price_.push_back(rows_[k].dot(spec_.initial_prices));
    }
}

class OrthoDpEpisode : public Episode {
public:
    explicit OrthoDpEpisode(const OrthoDpStrategy& s) : s_(s) {
        const int n = s.decomp_.n();
        left_.resize(n);
        cash_.assign(n, 0.0);
        for (int k = 0; k < n; ++k)
            left_[k] = s.decomp_.sub_specs[k] ? s.decomp_.sub_specs[k]->total_chunks : 0;
        pending_.assign(n, std::vector<int>());
    }

    Vec act(const PathState& st) override {
        const int T = s_.spec_.horizon;
        if (st.t >= T - 1) return st.remaining;
        const int n = s_.decomp_.n();
        Vec portfolio_trades = Vec::Zero(n);
        for (int k = 0; k < n; ++k) {
            if (!s_.decomp_.sub_specs[k]) {
                portfolio_trades[k] = s_.decomp_.chunk_targets[k] / T;
                continue;
            }
            const auto& spec = *s_.decomp_.sub_specs[k];
            const auto& table = s_.tables_[k];
            const double price = s_.rows_[k].dot(st.prices) / s_.base_price_[k];
            // New epoch: decide a chunk count and split it over the group.
            if (pending_[k].empty()) {
                const int epoch = epoch_of(table, st.t);
                int x = left_[k];
                if (left_[k] > 0 && price > 0.0) {
                    const double c = cash_[k] / price;
                    x = s_.rule_ == DecisionRule::Lookahead
                            ? decide_lookahead(table, spec, st.regime, c, left_[k], epoch)
                            : decide(table, st.regime, c, left_[k], epoch);
                }
                const int g = table.group_sizes()[epoch];
                pending_[k] = split_equal(x, g);
                std::reverse(pending_[k].begin(), pending_[k].end());
            }
            const int x = pending_[k].back();
            pending_[k].pop_back();
            const auto& reg = spec.regimes[st.regime];
            if (x > 0) cash_[k] += x * price * (1.0 - reg.temp_cost(x));
            left_[k] -= x;
            portfolio_trades[k] = x;
        }
        Vec a = s_.decomp_.weights.transpose() * portfolio_trades;
        return a.cwiseMax(0.0).cwiseMin(st.remaining);
    }

private:
    static int epoch_of(const ValueTable& table, int t) {
        int start = 0;
        const auto& g = table.group_sizes();
        for (int e = 0; e < static_cast<int>(g.size()); ++e) {
            if (t < start + g[e]) return e;
            start += g[e];
        }
        return static_cast<int>(g.size()) - 1;
    }

    const OrthoDpStrategy& s_;
    std::vector<int> left_;
    std::vector<double> cash_;
    std::vector<std::vector<int>> pending_;
};

std::unique_ptr<Episode> OrthoDpStrategy::begin() const { return std::make_unique<OrthoDpEpisode>(*this); }

// ---------------------------------------------------------------------------

namespace {

class MlpEpisode : public Episode {
public:
    MlpEpisode(const MlpPolicy& p, const FeatureScale& fs, int T) : p_(p), fs_(fs), T_(T) {}
    Vec act(const PathState& s) override {
        return project_action(p_.forward(features(s, fs_)), s.remaining, s.t, T_);
    }

private:
    const MlpPolicy& p_;
    const FeatureScale& fs_;
    int T_;
};

}  // namespace

MlpStrategy::MlpStrategy(const MarketSpec& spec, MlpPolicy policy, std::string label)
    : policy_(std::move(policy)), scale_(FeatureScale::of(spec)), horizon_(spec.horizon), label_(std::move(label)) {
    if (policy_.input_dim() != scale_.dim() || policy_.output_dim() != spec.n_assets())
        throw SpecError("MlpStrategy: network dimensions do not match the market");
}

std::unique_ptr<Episode> MlpStrategy::begin() const {
    return std::make_unique<MlpEpisode>(policy_, scale_, horizon_);
}

// ---------------------------------------------------------------------------

double simulate_path(const Market& market, const Strategy& strategy, const PathDraw& path,
                     std::vector<StepRecord>* trace) {
    const auto& spec = market.spec();
    const int T = spec.horizon;
    PathState s;
    s.prices = spec.initial_prices;
    s.remaining = spec.chunks();
    s.cash = 0.0;
    auto ep = strategy.begin();
    for (int t = 0; t < T; ++t) {
        s.t = t;
        s.regime = path.regimes[t];
        Vec a = ep->act(s);
        for (int k = 0; k < a.size(); ++k) {
            const bool ok = std::isfinite(a[k]) && a[k] >= 0.0 && a[k] <= s.remaining[k] &&
                            (t < T - 1 || a[k] == s.remaining[k]);
            if (!ok) {
                std::ostringstream os;
                os << "strategy '" << strategy.label() << "' produced infeasible trade " << a[k] << " of asset " << k
                   << " at t=" << t << " (remaining " << s.remaining[k] << ", regime " << s.regime << ")";
                throw ContractViolation(os.str());
            }
        }
        if (trace) trace->push_back({s, a});
        const auto res = market.execute_trade(s, a);
        s.cash += res.proceeds;
        s.remaining -= a;
        if (t == T - 1) s.remaining.setZero();
        s.prices = res.new_prices;
        if (t + 1 < T) s.prices = s.prices.cwiseProduct((Vec::Ones(a.size()) + path.returns.row(t).transpose()));
    }
    return s.cash;
}

}  // namespace execkit

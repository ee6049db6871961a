#include "execkit/dp.hpp"

#include "execkit/error.hpp"
#include "execkit/rng.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace execkit {

namespace {

/// CRRA utility with an exact-multiplication fast path for integer gamma.
class Crra {
public:
    explicit Crra(double gamma) : gamma_(gamma), inv_gamma_(gamma == 0.0 ? 0.0 : 1.0 / gamma) {
        const double r = std::round(gamma);
        integer_ = r == gamma && std::abs(r) <= 64.0;
        power_ = static_cast<int>(r);
    }

    double operator()(double w) const {
        if (gamma_ == 0.0) return w > 0.0 ? std::log(w) : kNegInf;
        if (w < 0.0 || (w == 0.0 && gamma_ < 0.0)) return kNegInf;
        return pow(w) * inv_gamma_;
    }

    double pow(double w) const {
        if (!integer_) return std::pow(w, gamma_);
        switch (power_) {
            case -1: return 1.0 / w;
            case -2: return 1.0 / (w * w);
            case 1: return w;
            default: break;
        }
        unsigned e = static_cast<unsigned>(std::abs(power_));
        double base = w;
        double acc = 1.0;
        while (e != 0) {
            if (e & 1U) acc *= base;
            base *= base;
            e >>= 1U;
        }
        return power_ < 0 ? 1.0 / acc : acc;
    }

private:
    double gamma_;
    double inv_gamma_;
    bool integer_ = false;
    int power_ = 0;
};

/// Knot index k with knots[k] <= c < knots[k+1] and the fraction inside it;
/// at or beyond the top knot, (K-1, 0).
struct Knot {
    int k;
    double f;
};

inline Knot bracket(const std::vector<double>& kn, double c) {
    const int last = static_cast<int>(kn.size()) - 1;
    if (c >= kn[last]) return {last, 0.0};
    if (c <= kn[0]) return {0, 0.0};
    const int k = static_cast<int>(std::upper_bound(kn.begin(), kn.end(), c) - kn.begin()) - 1;
    return {k, (c - kn[k]) / (kn[k + 1] - kn[k])};
}

inline double interp(const double* v, Knot b) {
    const double v0 = v[b.k];
    if (b.f == 0.0) return v0;
    const double v1 = v[b.k + 1];
    if (v0 == kNegInf || v1 == kNegInf) return kNegInf;
    return v0 + b.f * (v1 - v0);
}

/// Per-scenario outcome of selling x chunks over one epoch, in units of the
/// price at the start of the epoch.
struct ActionScenarios {
    bool feasible = true;
    std::vector<double> proceeds;
    std::vector<double> end_price;
    std::vector<double> scale;  // p^gamma (or 1 at gamma == 0)
    std::vector<double> shift;  // 0 (or ln p at gamma == 0)
    std::vector<int> last_regime;
};

bool trade_feasible(const ScalarRegime& r, double x) {
    if (x == 0.0) return true;
    return r.temp_cost(x) < 1.0 && r.perm_cost(x) < 1.0;
}

ActionScenarios action_scenarios(const SingleAssetSpec& spec, const ScenarioSet& sc, int x, const Crra& u,
                                 double gamma) {
    ActionScenarios a;
    const int g = sc.steps;
    const auto trades = split_equal(x, g);
    a.proceeds.resize(sc.count);
    a.end_price.resize(sc.count);
    a.scale.resize(sc.count);
    a.shift.resize(sc.count);
    a.last_regime.resize(sc.count);
    for (int s = 0; s < sc.count; ++s) {
        double price = 1.0;
        double cash = 0.0;
        for (int step = 0; step < g; ++step) {
            const int r = sc.regimes[static_cast<std::size_t>(s) * g + step];
            const auto& reg = spec.regimes[r];
            const double xs = trades[step];
            if (!trade_feasible(reg, xs)) a.feasible = false;
            cash += xs * price * (1.0 - reg.temp_cost(xs));
            price *= (1.0 - reg.perm_cost(xs)) * (1.0 + sc.returns[static_cast<std::size_t>(s) * g + step]);
        }
        if (!(price > 0.0)) a.feasible = false;
        a.proceeds[s] = cash;
        a.end_price[s] = price;
        a.last_regime[s] = sc.regimes[static_cast<std::size_t>(s) * g + g - 1];
        if (gamma == 0.0) {
            a.scale[s] = 1.0;
            a.shift[s] = price > 0.0 ? std::log(price) : kNegInf;
        } else {
            a.scale[s] = price > 0.0 ? u.pow(price) : 0.0;
            a.shift[s] = 0.0;
        }
    }
    return a;
}

/// Sum over next regimes of P(l, j) V(j, knot, chunks, epoch), skipping
/// zero-probability transitions so that -inf values do not produce NaN.
double mixed_value(const ValueTable& t, const Mat& P, int l, int knot, int chunks, int epoch) {
    double acc = 0.0;
    for (int j = 0; j < t.n_regimes(); ++j) {
        const double p = P(l, j);
        if (p == 0.0) continue;
        const double v = t.value(j, knot, chunks, epoch);
        if (v == kNegInf) return kNegInf;
        acc += p * v;
    }
    return acc;
}

/// Net proceeds per unit price of selling `chunks` at once in each regime,
/// for the closed-form final epoch; NaN marks an impact overflow.
struct FinalSale {
    int n_regimes = 0;
    std::vector<double> net;  // [chunks][regime]

    explicit FinalSale(const SingleAssetSpec& spec) : n_regimes(spec.n_regimes()) {
        net.resize(static_cast<std::size_t>(spec.total_chunks + 1) * n_regimes);
        for (int S = 0; S <= spec.total_chunks; ++S)
            for (int j = 0; j < n_regimes; ++j) {
                const auto& reg = spec.regimes[j];
                net[static_cast<std::size_t>(S) * n_regimes + j] =
                    trade_feasible(reg, S) ? S * (1.0 - reg.temp_cost(S)) : std::nan("");
            }
    }
};

/// Value of entering the closed-form final epoch from regime l: the next
/// regime is summed exactly and everything is sold at once.
double final_mixed_value(const Mat& P, const FinalSale& fs, const Crra& u, int l, double cash, int chunks) {
    const double* net = &fs.net[static_cast<std::size_t>(chunks) * fs.n_regimes];
    double acc = 0.0;
    for (int j = 0; j < fs.n_regimes; ++j) {
        const double p = P(l, j);
        if (p == 0.0) continue;
        if (std::isnan(net[j])) return kNegInf;
        const double v = u(cash + net[j]);
        if (v == kNegInf) return kNegInf;
        acc += p * v;
    }
    return acc;
}

ScenarioSet draw_scenarios(const SingleAssetSpec& spec, const MonteCarloOptions& mc, int epoch, int regime,
                           int steps) {
    ScenarioSet sc;
    sc.steps = steps;
    sc.count = mc.n_samples * mc.n_iterations;
    sc.returns.resize(static_cast<std::size_t>(sc.count) * steps);
    sc.regimes.resize(static_cast<std::size_t>(sc.count) * steps);
    const std::uint64_t stream_index = static_cast<std::uint64_t>(epoch) * spec.n_regimes() + regime;
    std::size_t pos = 0;
    for (int it = 0; it < mc.n_iterations; ++it) {
        Engine eng = make_engine(mc.seed, stream::dp, stream_index, static_cast<std::uint64_t>(it));
        std::normal_distribution<double> normal;
        std::uniform_real_distribution<double> unif(0.0, 1.0);
        for (int s = 0; s < mc.n_samples; ++s) {
            int r = regime;
            for (int step = 0; step < steps; ++step) {
                const auto& reg = spec.regimes[r];
                sc.regimes[pos] = r;
                sc.returns[pos] = reg.mean_return + std::sqrt(reg.variance) * normal(eng);
                ++pos;
                if (step + 1 < steps) r = next_regime(spec.transition, r, unif(eng));
            }
        }
    }
    return sc;
}

bool final_is_closed_form(const std::vector<int>& groups) { return groups.back() == 1; }

}  // namespace

// ---------------------------------------------------------------------------

std::vector<int> SingleAssetSpec::group_sizes() const {
    if (!step_groups.empty()) return step_groups;
    return std::vector<int>(static_cast<std::size_t>(std::max(horizon, 0)), 1);
}

void require_valid(const SingleAssetSpec& spec) {
    std::vector<std::string> errors;
    const int m = spec.n_regimes();
    if (spec.horizon <= 0) errors.push_back("horizon must be positive");
    if (spec.total_chunks < 0) errors.push_back("total_chunks must be nonnegative");
    if (m <= 0) errors.push_back("at least one regime is required");
    if (!(spec.gamma < 1.0)) errors.push_back("gamma must be < 1");
    if (spec.transition.rows() != m || spec.transition.cols() != m) {
        errors.push_back("transition must be m x m");
    } else {
        for (int i = 0; i < m; ++i) {
            if (std::abs(spec.transition.row(i).sum() - 1.0) > 1e-12 || spec.transition.row(i).minCoeff() < 0.0)
                errors.push_back("transition row " + std::to_string(i) + " is not a probability vector");
        }
    }
    for (int i = 0; i < m; ++i)
        if (!(spec.regimes[i].variance >= 0.0))
            errors.push_back("regime " + std::to_string(i) + ": variance must be nonnegative");
    if (!spec.step_groups.empty()) {
        int total = 0;
        for (int g : spec.step_groups) {
            if (g <= 0) errors.push_back("step groups must be positive");
            total += g;
        }
        if (total != spec.horizon)
            errors.push_back("step groups cover " + std::to_string(total) + " periods, horizon is " +
                             std::to_string(spec.horizon));
    }
    if (!errors.empty()) {
        std::string msg = "invalid single-asset spec:";
        for (const auto& e : errors) msg += "\n  " + e;
        throw SpecError(msg, errors);
    }
}

SingleAssetSpec single_asset_slice(const MarketSpec& spec, int asset, double gamma) {
    SingleAssetSpec out;
    out.horizon = spec.horizon;
    out.transition = spec.transition;
    out.total_chunks = spec.initial_chunks.at(asset);
    out.gamma = gamma;
    for (const auto& r : spec.regimes) {
        ScalarRegime s;
        s.mean_return = r.mean_return[asset];
        s.variance = r.return_cov(asset, asset);
        s.temp_linear = r.temp_linear(asset, asset);
        s.temp_quadratic = r.temp_quadratic(asset, asset);
        s.perm_linear = r.perm_linear(asset, asset);
        s.perm_quadratic = r.perm_quadratic(asset, asset);
        out.regimes.push_back(s);
    }
    return out;
}

SingleAssetSpec aggregate_steps(const SingleAssetSpec& spec, int group_size) {
    if (group_size <= 0) throw SpecError("group size must be positive");
    SingleAssetSpec out = spec;
    if (group_size == 1) return out;
    out.step_groups.clear();
    for (int left = spec.horizon; left > 0; left -= group_size) out.step_groups.push_back(std::min(group_size, left));
    return out;
}

std::vector<int> split_equal(int total, int parts) {
    std::vector<int> out(static_cast<std::size_t>(parts), total / parts);
    for (int k = 0; k < total % parts; ++k) ++out[k];
    return out;
}

double utility(double w, double gamma) {
    if ((gamma <= 0.0 && w <= 0.0) || w < 0.0) {
        std::ostringstream os;
        os << "utility undefined for wealth " << w << " at gamma " << gamma;
        throw DomainError(os.str());
    }
    return Crra(gamma)(w);
}

double utility_or_ninf(double w, double gamma) { return Crra(gamma)(w); }

// ---------------------------------------------------------------------------

CashGrid::CashGrid(int knots, double upper, double ratio) {
    if (knots < 2 || !(upper > 0.0) || !(ratio >= 1.0)) throw SpecError("invalid cash grid");
    knots_.resize(knots);
    const int last = knots - 1;
    if (ratio == 1.0) {
        for (int k = 0; k < knots; ++k) knots_[k] = upper * k / last;
    } else {
        const double denom = std::pow(ratio, last) - 1.0;
        for (int k = 0; k < knots; ++k) knots_[k] = upper * (std::pow(ratio, k) - 1.0) / denom;
    }
    knots_[0] = 0.0;
    knots_[last] = upper;
}

CashGrid::CashGrid(std::vector<double> knots) : knots_(std::move(knots)) {
    if (knots_.size() < 2 || !std::is_sorted(knots_.begin(), knots_.end()))
        throw SpecError("cash grid knots must be sorted, at least two");
}

CashGrid::Bracket CashGrid::locate(double c) const {
    const int last = size() - 1;
    if (c >= knots_[last]) return {last - 1, 1.0, c > knots_[last]};
    if (c <= knots_[0]) return {0, 0.0, false};
    const auto it = std::upper_bound(knots_.begin(), knots_.end(), c);
    const int k = static_cast<int>(it - knots_.begin()) - 1;
    return {k, (c - knots_[k]) / (knots_[k + 1] - knots_[k]), false};
}

ValueTable::ValueTable(CashGrid grid, int n_regimes, int max_chunks, std::vector<int> group_sizes, double gamma)
    : grid_(std::move(grid)), n_regimes_(n_regimes), max_chunks_(max_chunks), groups_(std::move(group_sizes)),
      gamma_(gamma) {
    const std::size_t n_epochs = groups_.size();
    values_.assign(n_epochs * n_regimes_ * (max_chunks_ + 1) * grid_.size(), 0.0);
    policy_.assign(values_.size(), 0);
    q_.assign(n_epochs * n_regimes_ * triangle(max_chunks_ + 1) * grid_.size(), kNegInf);
    scenarios_.resize(n_epochs * n_regimes_);
}

// ---------------------------------------------------------------------------

double required_cash_upper(const SingleAssetSpec& spec) {
    const int s0 = spec.total_chunks;
    if (s0 == 0) return 0.0;
    double unit = 1.0;
    double impact_floor = 1.0;
    double worst_drift = 0.0;
    double worst_sd = 0.0;
    for (const auto& r : spec.regimes) {
        for (int x = 1; x <= s0; ++x) {
            unit = std::max(unit, 1.0 - r.temp_cost(x));
            const double keep = 1.0 - r.perm_cost(x);
            if (keep > 0.0) impact_floor = std::min(impact_floor, std::pow(keep, static_cast<double>(s0) / x));
        }
        worst_drift = std::min(worst_drift, r.mean_return);
        worst_sd = std::max(worst_sd, std::sqrt(r.variance));
    }
    const double periods = std::max(spec.horizon - 1, 0);
    const double return_floor = std::exp(worst_drift * periods - 4.0 * worst_sd * std::sqrt(periods));
    return s0 * unit / (impact_floor * return_floor);
}

namespace {

/// Continuation after an epoch that ends in regime l with normalized cash cn
/// and `rest` chunks left. Same arithmetic as the solver's vectorized loop.
double continuation(const ValueTable& t, const SingleAssetSpec& spec, const Crra& u, const FinalSale* closed, int l,
                    double cn, int rest, int next_epoch) {
    if (closed != nullptr) return final_mixed_value(spec.transition, *closed, u, l, cn, rest);
    const Knot b = bracket(t.grid().knots(), cn);
    double two[2] = {mixed_value(t, spec.transition, l, b.k, rest, next_epoch), 0.0};
    if (b.f != 0.0) two[1] = mixed_value(t, spec.transition, l, b.k + 1, rest, next_epoch);
    return interp(two, {0, b.f});
}

/// Per-scenario terms of the action value at one cash level.
std::vector<double> contributions(const ValueTable& t, const SingleAssetSpec& spec, const Crra& u,
                                  const ActionScenarios& a, int epoch, double cash, int rest) {
    const auto& groups = t.group_sizes();
    const int n_epochs = t.n_epochs();
    const bool next_closed = final_is_closed_form(groups) && epoch + 1 == n_epochs - 1;
    const FinalSale final_sale(spec);
    const FinalSale* closed = next_closed ? &final_sale : nullptr;
    std::vector<double> out(a.proceeds.size());
    for (std::size_t s = 0; s < out.size(); ++s) {
        const double y = a.proceeds[s];
        if (rest == 0) {
            out[s] = u(cash + y);
        } else {
            const double cn = (cash + y) / a.end_price[s];
            out[s] = a.scale[s] * continuation(t, spec, u, closed, a.last_regime[s], cn, rest, epoch + 1) +
                     a.shift[s];
        }
    }
    return out;
}

}  // namespace

ValueTable solve_dp(const SingleAssetSpec& spec, const DpOptions& options) {
    require_valid(spec);
    if (options.mc.n_samples <= 0 || options.mc.n_iterations <= 0)
        throw SpecError("Monte-Carlo sample and iteration counts must be positive");

    const int s0 = spec.total_chunks;
    const int m = spec.n_regimes();
    const auto groups = spec.group_sizes();
    const int n_epochs = static_cast<int>(groups.size());
    const double upper = options.cash_grid_factor * std::max(s0, 1);
    const double needed = required_cash_upper(spec);
    if (needed > upper) {
        std::ostringstream os;
        os << "cash grid upper bound " << upper << " does not cover reachable normalized cash; required upper bound "
           << needed << " (cash_grid_factor >= " << needed / std::max(s0, 1) << ")";
        throw GridCoverageError(os.str(), needed);
    }

    ValueTable table(CashGrid(options.cash_knots, upper, options.grid_ratio), m, s0, groups, spec.gamma);
    const int K = table.grid().size();
    const auto& knots = table.grid().knots();
    const Crra u(spec.gamma);
    const bool closed_final = final_is_closed_form(groups);
    const bool parallel = options.mode == ExecMode::Parallel;
    long long clamps = 0;

    // Chunk-free states hold cash only: V = U(C) at every epoch.
    for (int e = 0; e < n_epochs; ++e)
        for (int i = 0; i < m; ++i)
            for (int c = 0; c < K; ++c) {
                const auto idx = table.vindex(i, c, 0, e);
                table.values_data()[idx] = u(knots[c]);
                table.policy_data()[idx] = 0;
                table.q_data()[table.qindex(i, c, 0, 0, e)] = u(knots[c]);
            }

    for (int e = n_epochs - 1; e >= 0; --e) {
        const int g = groups[e];
        const bool final_epoch = e == n_epochs - 1;
        for (int i = 0; i < m; ++i) {
            if (!(final_epoch && g == 1))
                table.scenario_data()[static_cast<std::size_t>(e) * m + i] = draw_scenarios(spec, options.mc, e, i, g);
        }

        if (final_epoch) {
#pragma omp parallel for schedule(dynamic, 1) if (parallel)
            for (int task = 0; task < m * s0; ++task) {
                const int i = task / s0;
                const int S = task % s0 + 1;
                std::vector<double> vals(K);
                if (g == 1) {
                    const auto& reg = spec.regimes[i];
                    const bool ok = trade_feasible(reg, S);
                    for (int c = 0; c < K; ++c)
                        vals[c] = ok ? u(knots[c] + S * (1.0 - reg.temp_cost(S))) : kNegInf;
                } else {
                    const auto& sc = table.scenarios(e, i);
                    const auto a = action_scenarios(spec, sc, S, u, spec.gamma);
                    std::vector<double> acc(K, 0.0);
                    for (int s = 0; s < sc.count; ++s)
                        for (int c = 0; c < K; ++c) acc[c] += u(knots[c] + a.proceeds[s]);
                    for (int c = 0; c < K; ++c) vals[c] = a.feasible ? acc[c] / sc.count : kNegInf;
                }
                for (int c = 0; c < K; ++c) {
                    const auto idx = table.vindex(i, c, S, e);
                    table.values_data()[idx] = vals[c];
                    table.policy_data()[idx] = S;
                    table.q_data()[table.qindex(i, c, S, S, e)] = vals[c];
                }
            }
            continue;
        }

        // Continuation values mixed over the regime reached after the epoch.
        const bool next_closed = closed_final && e + 1 == n_epochs - 1;
        const FinalSale final_sale(spec);
        // Rows are padded with a copy of the top knot so that the top bracket
        // (K-1, 0) can use the branch-free interpolation.
        const int stride = K + 1;
        std::vector<double> mixed;
        std::vector<char> mixed_finite;
        if (!next_closed) {
            mixed.assign(static_cast<std::size_t>(m) * (s0 + 1) * stride, 0.0);
            mixed_finite.assign(static_cast<std::size_t>(m) * (s0 + 1), 1);
            for (int l = 0; l < m; ++l)
                for (int S = 0; S <= s0; ++S) {
                    const std::size_t row = static_cast<std::size_t>(l) * (s0 + 1) + S;
                    double* v = &mixed[row * stride];
                    for (int c = 0; c < K; ++c) {
                        v[c] = mixed_value(table, spec.transition, l, c, S, e + 1);
                        if (v[c] == kNegInf) mixed_finite[row] = 0;
                    }
                    v[K] = v[K - 1];
                }
        }

        // One task per (regime, action): the scenario outcomes and the cash
        // brackets are shared by every remaining-chunk count.
#pragma omp parallel for schedule(dynamic, 1) if (parallel) reduction(+ : clamps)
        for (int task = 0; task < m * (s0 + 1); ++task) {
            const int i = task / (s0 + 1);
            const int x = task % (s0 + 1);
            const int max_rest = s0 - x;
            const int first_rest = x == 0 ? 1 : 0;
            if (first_rest > max_rest) continue;
            const auto& sc = table.scenarios(e, i);
            const int N = sc.count;
            const auto a = action_scenarios(spec, sc, x, u, spec.gamma);
            auto q_row = [&](int rest) { return &table.q_data()[table.qindex(i, 0, x + rest, x, e)]; };
            if (!a.feasible) {
                for (int rest = first_rest; rest <= max_rest; ++rest) std::fill(q_row(rest), q_row(rest) + K, kNegInf);
                continue;
            }
            std::vector<double> acc(static_cast<std::size_t>(max_rest + 1) * K, 0.0);
            std::vector<Knot> br(K);
            std::vector<int> bk(K);
            std::vector<double> bf(K);
            std::vector<double> cn(K);
            std::vector<double> pj(m);
            std::vector<double> netj(m);
            for (int s = 0; s < N; ++s) {
                const double y = a.proceeds[s];
                const double p = a.end_price[s];
                const double scale = a.scale[s];
                const double shift = a.shift[s];
                const int l = a.last_regime[s];
                if (first_rest == 0 && g > 1)
                    for (int c = 0; c < K; ++c) acc[c] += u(knots[c] + y);
                if (max_rest == 0) continue;
                for (int c = 0; c < K; ++c) cn[c] = (knots[c] + y) / p;
                if (next_closed) {
                    // final_mixed_value unrolled over the regimes reachable from l;
                    // the wealth cn + net is positive, so no -inf can arise.
                    for (int rest = 1; rest <= max_rest; ++rest) {
                        double* row = &acc[static_cast<std::size_t>(rest) * K];
                        const double* net = &final_sale.net[static_cast<std::size_t>(rest) * m];
                        int nj = 0;
                        bool dead = false;
                        for (int j = 0; j < m; ++j) {
                            if (spec.transition(l, j) == 0.0) continue;
                            if (std::isnan(net[j])) dead = true;
                            pj[nj] = spec.transition(l, j);
                            netj[nj] = net[j];
                            ++nj;
                        }
                        if (dead) {
                            for (int c = 0; c < K; ++c) row[c] += scale * kNegInf + shift;
                            continue;
                        }
                        for (int c = 0; c < K; ++c) {
                            double v = 0.0;
                            for (int j = 0; j < nj; ++j) v += pj[j] * u(cn[c] + netj[j]);
                            row[c] += scale * v + shift;
                        }
                    }
                    continue;
                }
                // Continuation cash is increasing in c: walk the bracket forward.
                int k = 0;
                for (int c = 0; c < K; ++c) {
                    while (k < K - 1 && knots[k + 1] <= cn[c]) ++k;
                    if (k == K - 1) {
                        br[c] = {K - 1, 0.0};
                        if (cn[c] > knots[K - 1]) {
                            const double room = std::floor(needed - knots[c] - x);
                            clamps += static_cast<long long>(std::clamp(room, 0.0, static_cast<double>(max_rest)));
                        }
                    } else {
                        br[c] = {k, (cn[c] - knots[k]) / (knots[k + 1] - knots[k])};
                    }
                    bk[c] = br[c].k;
                    bf[c] = br[c].f;
                }
                for (int rest = 1; rest <= max_rest; ++rest) {
                    const std::size_t mrow = static_cast<std::size_t>(l) * (s0 + 1) + rest;
                    const double* v = &mixed[mrow * stride];
                    double* row = &acc[static_cast<std::size_t>(rest) * K];
                    if (mixed_finite[mrow]) {
                        // v0 + 0 * (v1 - v0) == v0 exactly for finite values.
                        for (int c = 0; c < K; ++c) {
                            const double v0 = v[bk[c]];
                            row[c] += scale * (v0 + bf[c] * (v[bk[c] + 1] - v0)) + shift;
                        }
                    } else {
                        for (int c = 0; c < K; ++c) row[c] += scale * interp(v, br[c]) + shift;
                    }
                }
            }
            if (first_rest == 0) {
                double* q = q_row(0);
                if (g == 1) {
                    for (int c = 0; c < K; ++c) q[c] = u(knots[c] + a.proceeds[0]);
                } else {
                    for (int c = 0; c < K; ++c) q[c] = acc[c] / N;
                }
            }
            for (int rest = 1; rest <= max_rest; ++rest) {
                double* q = q_row(rest);
                for (int c = 0; c < K; ++c) q[c] = acc[static_cast<std::size_t>(rest) * K + c] / N;
            }
        }

#pragma omp parallel for schedule(static) if (parallel)
        for (int task = 0; task < m * s0; ++task) {
            const int i = task / s0;
            const int S = task % s0 + 1;
            for (int c = 0; c < K; ++c) {
                double best = kNegInf;
                int arg = 0;
                for (int x = 0; x <= S; ++x) {
                    const double q = table.q_data()[table.qindex(i, c, S, x, e)];
                    if (q > best) {
                        best = q;
                        arg = x;
                    }
                }
                const auto idx = table.vindex(i, c, S, e);
                table.values_data()[idx] = best;
                table.policy_data()[idx] = arg;
            }
        }
    }
    table.set_clamp_count(clamps);
    if (clamps > 0)
        spdlog::warn("solve_dp: {} continuation evaluations from reachable states exceeded the cash grid top {:.4g} "
                     "and were clamped",
                     clamps, upper);
    return table;
}

// ---------------------------------------------------------------------------

int decide(const ValueTable& table, int regime, double cash, int chunks, int epoch) {
    if (chunks <= 0) return 0;
    if (epoch >= table.n_epochs() - 1) return chunks;
    const auto br = bracket(table.grid().knots(), cash);
    double best = kNegInf;
    int arg = 0;
    for (int x = 0; x <= chunks; ++x) {
        const double v = interp(&table.q_data()[table.qindex(regime, 0, chunks, x, epoch)], br);
        if (v > best) {
            best = v;
            arg = x;
        }
    }
    return arg;
}

std::vector<double> lookahead_values(const ValueTable& table, const SingleAssetSpec& spec, int regime, double cash,
                                     int chunks, int epoch) {
    const int n_epochs = table.n_epochs();
    const int g = table.group_sizes()[epoch];
    const Crra u(spec.gamma);
    std::vector<double> out(static_cast<std::size_t>(chunks) + 1, kNegInf);

    if (epoch == n_epochs - 1) {
        if (g == 1) {
            const auto& reg = spec.regimes[regime];
            out[chunks] = trade_feasible(reg, chunks) ? u(cash + chunks * (1.0 - reg.temp_cost(chunks))) : kNegInf;
        } else {
            const auto& sc = table.scenarios(epoch, regime);
            const auto a = action_scenarios(spec, sc, chunks, u, spec.gamma);
            double acc = 0.0;
            for (int s = 0; s < sc.count; ++s) acc += u(cash + a.proceeds[s]);
            out[chunks] = a.feasible ? acc / sc.count : kNegInf;
        }
        return out;
    }
    if (chunks == 0) {
        out[0] = u(cash);
        return out;
    }

    const auto& sc = table.scenarios(epoch, regime);
    for (int x = 0; x <= chunks; ++x) {
        const auto a = action_scenarios(spec, sc, x, u, spec.gamma);
        if (!a.feasible) continue;
        const int rest = chunks - x;
        if (rest == 0 && g == 1) {
            out[x] = u(cash + a.proceeds[0]);
            continue;
        }
        const auto terms = contributions(table, spec, u, a, epoch, cash, rest);
        double acc = 0.0;
        for (double v : terms) acc += v;
        out[x] = acc / sc.count;
    }
    return out;
}

int decide_lookahead(const ValueTable& table, const SingleAssetSpec& spec, int regime, double cash, int chunks,
                     int epoch) {
    if (chunks <= 0) return 0;
    if (epoch >= table.n_epochs() - 1) return chunks;
    const auto q = lookahead_values(table, spec, regime, cash, chunks, epoch);
    double best = kNegInf;
    int arg = 0;
    for (int x = 0; x <= chunks; ++x) {
        if (q[x] > best) {
            best = q[x];
            arg = x;
        }
    }
    return arg;
}

double initial_value_stderr(const ValueTable& table, const SingleAssetSpec& spec, int regime) {
    const int S = spec.total_chunks;
    if (S == 0) return 0.0;
    const int g = table.group_sizes()[0];
    const Crra u(spec.gamma);
    std::vector<double> terms;
    const auto& sc = table.scenarios(0, regime);
    if (table.n_epochs() == 1) {
        if (g == 1) return 0.0;
        const auto a = action_scenarios(spec, sc, S, u, spec.gamma);
        for (double y : a.proceeds) terms.push_back(u(y));
    } else {
        const int x = table.policy(regime, 0, S, 0);
        if (x == S && g == 1) return 0.0;
        const auto a = action_scenarios(spec, sc, x, u, spec.gamma);
        terms = contributions(table, spec, u, a, 0, 0.0, S - x);
    }
    const double n = static_cast<double>(terms.size());
    const double mean = std::accumulate(terms.begin(), terms.end(), 0.0) / n;
    double ss = 0.0;
    for (double c : terms) ss += (c - mean) * (c - mean);
    return std::sqrt(ss / std::max(n - 1.0, 1.0) / n);
}

std::vector<RolloutStep> rollout_policy(const ValueTable& table, const SingleAssetSpec& spec,
                                        const std::vector<int>& regimes, const std::vector<double>& returns,
                                        double initial_price, DecisionRule rule) {
    const int T = spec.horizon;
    if (static_cast<int>(regimes.size()) < T || static_cast<int>(returns.size()) < T - 1)
        throw ContractViolation("rollout_policy: path needs T regimes and T-1 returns");
    const auto groups = table.group_sizes();
    std::vector<RolloutStep> out;
    out.reserve(T);
    double price = 1.0;  // normalized; reported times initial_price
    double cash = 0.0;
    int left = spec.total_chunks;
    int t = 0;
    for (int e = 0; e < static_cast<int>(groups.size()); ++e) {
        const int regime = regimes[t];
        const double c = cash / price;
        const int chunks = rule == DecisionRule::Lookahead ? decide_lookahead(table, spec, regime, c, left, e)
                                                           : decide(table, regime, c, left, e);
        const auto trades = split_equal(chunks, groups[e]);
        for (int x : trades) {
            const auto& reg = spec.regimes[regimes[t]];
            RolloutStep step;
            step.t = t;
            step.regime = regimes[t];
            step.chunks_sold = x;
            step.price = price * initial_price;
            cash += x * price * (1.0 - reg.temp_cost(x));
            step.cash = cash * initial_price;
            left -= x;
            if (t + 1 < T) price *= (1.0 - reg.perm_cost(x)) * (1.0 + returns[t]);
            out.push_back(step);
            ++t;
        }
    }
    return out;
}

}  // namespace execkit

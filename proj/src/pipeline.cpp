#include "execkit/pipeline.hpp"

#include "execkit/error.hpp"
#include "execkit/rng.hpp"

#include <omp.h>
#include <spdlog/spdlog.h>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>

#ifndef EXECKIT_VERSION
#define EXECKIT_VERSION "0.0.0"
#endif

namespace execkit {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

json matrix_json(const Mat& m) {
    json rows = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        json row = json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

json vector_json(const Vec& v) {
    json out = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
    return out;
}

/// Applies step aggregation to every sub-problem in place.
void aggregate_all(OrthoDecomposition& d, int group_size) {
    if (group_size <= 1) return;
    for (auto& s : d.sub_specs)
        if (s) s = aggregate_steps(*s, group_size);
}

class ArtifactWriter {
public:
    ArtifactWriter(std::string dir, RunManifest& manifest) : dir_(std::move(dir)), manifest_(manifest) {
        if (!dir_.empty()) fs::create_directories(dir_);
    }
    bool enabled() const { return !dir_.empty(); }

    template <class F>
    void write(const std::string& name, F&& body, bool binary = false) {
        if (!enabled()) return;
        const std::string path = (fs::path(dir_) / name).string();
        std::ofstream out(path, binary ? std::ios::binary : std::ios::out);
        if (!out) throw SpecError("cannot write artifact '" + path + "'");
        body(out, path);
        manifest_.outputs.push_back(name);
    }

    void json_file(const std::string& name, const json& doc) {
        write(name, [&](std::ostream& out, const std::string&) { out << doc.dump(1) << '\n'; });
    }

    void manifest() {
        if (!enabled()) return;
        std::ofstream out(fs::path(dir_) / "manifest.json");
        out << manifest_.to_json().dump(1) << '\n';
    }

private:
    std::string dir_;
    RunManifest& manifest_;
};

template <class F>
auto tagged(Stage s, F&& f) -> decltype(f()) {
    try {
        return f();
    } catch (const SpecError& e) {
        throw SpecError("[" + stage_name(s) + "] " + e.what(), e.issues());
    } catch (const DomainError& e) {
        throw DomainError("[" + stage_name(s) + "] " + e.what());
    } catch (const ImpactOverflow& e) {
        throw ImpactOverflow("[" + stage_name(s) + "] " + e.what());
    } catch (const GridCoverageError& e) {
        throw GridCoverageError("[" + stage_name(s) + "] " + e.what(), e.required_upper());
    } catch (const ContractViolation& e) {
        throw ContractViolation("[" + stage_name(s) + "] " + e.what());
    }
}

}  // namespace

std::string stage_name(Stage s) {
    switch (s) {
    case Stage::Ortho: return "ortho";
    case Stage::Dp: return "dp";
    case Stage::Pretrain: return "pretrain";
    case Stage::Train: return "train";
    case Stage::Eval: return "eval";
    }
    return "?";
}

Stage parse_stage(const std::string& name) {
    for (Stage s : {Stage::Ortho, Stage::Dp, Stage::Pretrain, Stage::Train, Stage::Eval})
        if (stage_name(s) == name) return s;
    throw SpecError("unknown stage '" + name + "' (expected ortho, dp, pretrain, train or eval)");
}

json RunManifest::to_json() const {
    return json{{"format_version", 1},
                {"config_hash", config_hash},
                {"seed", seed},
                {"version", version},
                {"group_size", group_size},
                {"serial_dp", serial_dp},
                {"completed_stages", completed},
                {"timings_seconds",
                 {{"dp_per_portfolio", dp_seconds},
                  {"dp_wall", dp_wall_seconds},
                  {"pretrain", pretrain_seconds},
                  {"train", train_seconds},
                  {"eval", eval_seconds}}},
                {"outputs", outputs}};
}

double dp_gamma(const Objective& objective) {
    return objective.kind == Objective::Kind::Crra ? objective.gamma : -1.0;
}

std::uint64_t restart_seed(std::uint64_t seed, int r) {
    return r == 0 ? seed : derive_seed(seed, "restart", static_cast<std::uint64_t>(r));
}

DpStage solve_portfolios(const RunConfig& cfg, const OrthoDecomposition& decomp, int group_size, ExecMode mode) {
    const int n = decomp.n();
    DpStage out;
    out.tables.resize(n);
    out.seconds.assign(n, 0.0);
    const auto wall = Clock::now();
    auto solve_one = [&](int k, ExecMode inner) {
        if (!decomp.sub_specs[k]) return;
        const auto t0 = Clock::now();
        SingleAssetSpec spec = *decomp.sub_specs[k];
        if (group_size > 1 && static_cast<int>(spec.step_groups.size()) == 0) spec = aggregate_steps(spec, group_size);
        DpOptions opt = cfg.dp;
        opt.mc.seed = derive_seed(cfg.seed, stream::dp, static_cast<std::uint64_t>(k));
        opt.mode = inner;
        out.tables[k] = solve_dp(spec, opt);
        out.seconds[k] = seconds_since(t0);
    };
    if (mode == ExecMode::Parallel && max_threads() > 1 && n >= max_threads()) {
        FirstError err;
#pragma omp parallel for schedule(dynamic, 1)
        for (int k = 0; k < n; ++k) err.guard(k, [&] { solve_one(k, ExecMode::Serial); });
        err.rethrow();
    } else {
        for (int k = 0; k < n; ++k) solve_one(k, mode);
    }
    out.wall_seconds = seconds_since(wall);
    return out;
}

json ortho_to_json(const OrthoDecomposition& d) {
    json subs = json::array();
    for (int k = 0; k < d.n(); ++k) {
        if (!d.sub_specs[k]) {
            subs.push_back(nullptr);
            continue;
        }
        const auto& s = *d.sub_specs[k];
        json regimes = json::array();
        for (const auto& r : s.regimes)
            regimes.push_back(json{{"mean_return", r.mean_return},
                                   {"variance", r.variance},
                                   {"temp_linear", r.temp_linear},
                                   {"temp_quadratic", r.temp_quadratic},
                                   {"perm_linear", r.perm_linear},
                                   {"perm_quadratic", r.perm_quadratic}});
        subs.push_back(json{{"total_chunks", s.total_chunks}, {"gamma", s.gamma}, {"regimes", regimes}});
    }
    return json{{"format_version", 1},
                {"avg_impact", matrix_json(d.avg_impact)},
                {"weights", matrix_json(d.weights)},
                {"eigenvalues", vector_json(d.eigenvalues)},
                {"chunk_targets", vector_json(d.chunk_targets)},
                {"inverse_weights", matrix_json(d.inverse_weights)},
                {"negated", d.negated},
                {"symmetrized", d.symmetrized},
                {"sub_specs", subs},
                {"approximation", "value-weighted projection of returns and costs onto each portfolio"},
                {"notes", d.notes}};
}

void write_curve_csv(std::ostream& out, const std::vector<CurvePoint>& curve) {
    out << "step,mean_wealth,objective\n" << std::setprecision(12);
    for (const auto& c : curve) out << c.step << ',' << c.mean_wealth << ',' << c.objective << '\n';
}

void write_loss_csv(std::ostream& out, const std::vector<double>& loss) {
    out << "step,loss\n" << std::setprecision(12);
    for (std::size_t i = 0; i < loss.size(); ++i) out << i << ',' << loss[i] << '\n';
}

PipelineResult run_pipeline(const RunConfig& cfg, const PipelineOptions& opts) {
    PipelineResult res;
    auto& man = res.manifest;
    man.config_hash = hash_hex(config_hash(cfg));
    man.seed = cfg.seed;
    man.version = EXECKIT_VERSION;
    man.group_size = opts.group_size > 0 ? opts.group_size : cfg.group_size;
    man.serial_dp = opts.serial_dp;
    ArtifactWriter out(opts.out_dir, man);
    out.json_file("config.json", to_json(cfg));

    const Market market(cfg.market);
    const double gamma = dp_gamma(cfg.objective);

    res.decomposition = tagged(Stage::Ortho, [&] { return build_decomposition(cfg.market, gamma); });
    aggregate_all(*res.decomposition, man.group_size);
    {
        json doc = ortho_to_json(*res.decomposition);
        doc["config_hash"] = man.config_hash;
        out.json_file("ortho.json", doc);
    }
    man.completed.push_back("ortho");
    out.manifest();
    if (opts.stop_after == Stage::Ortho) return res;

    auto dp = tagged(Stage::Dp, [&] {
        return solve_portfolios(cfg, *res.decomposition, 1, opts.serial_dp ? ExecMode::Serial : opts.mode);
    });
    man.dp_seconds = dp.seconds;
    man.dp_wall_seconds = dp.wall_seconds;
    res.tables = std::move(dp.tables);
    for (std::size_t k = 0; k < res.tables.size(); ++k) {
        if (!res.decomposition->sub_specs[k]) continue;
        out.write("dp_portfolio_" + std::to_string(k) + ".bin",
                  [&](std::ostream& os, const std::string&) { write_table(os, res.tables[k]); }, true);
    }
    man.completed.push_back("dp");
    out.manifest();
    const OrthoDpStrategy baseline(cfg.market, *res.decomposition, res.tables);
    if (opts.stop_after == Stage::Dp) return res;

    {
        const auto t0 = Clock::now();
        auto pre = tagged(Stage::Pretrain, [&] {
            const auto data = baseline_dataset(market, baseline, cfg.training.pretrain_states, cfg.seed, opts.mode);
            return pretrain(initial_policy(cfg.market, cfg.training, cfg.seed), data, cfg.training, cfg.market.horizon,
                            cfg.seed, opts.mode);
        });
        man.pretrain_seconds = seconds_since(t0);
        res.pretrained = pre.policy;
        res.pretrain_loss = std::move(pre.loss);
        out.write("pretrain_loss.csv", [&](std::ostream& os, const std::string&) { write_loss_csv(os, res.pretrain_loss); });
        out.write("policy_pretrained.json",
                  [&](std::ostream&, const std::string& path) { save_policy(path, *res.pretrained, man.config_hash); });
    }
    man.completed.push_back("pretrain");
    out.manifest();
    if (opts.stop_after == Stage::Pretrain) return res;

    {
        const auto t0 = Clock::now();
        auto tr = tagged(Stage::Train, [&] {
            return train(*res.pretrained, market, cfg.objective, cfg.training, cfg.seed, opts.mode);
        });
        man.train_seconds = seconds_since(t0);
        res.trained = tr.policy;
        res.curve = std::move(tr.curve);
        out.write("train_curve.csv", [&](std::ostream& os, const std::string&) { write_curve_csv(os, res.curve); });
        out.write("policy.json",
                  [&](std::ostream&, const std::string& path) { save_policy(path, *res.trained, man.config_hash); });
    }
    man.completed.push_back("train");
    out.manifest();
    if (opts.stop_after == Stage::Train) return res;

    {
        const auto t0 = Clock::now();
        const BenchmarkStrategy bench(cfg.market);
        const MlpStrategy mlp(cfg.market, *res.trained);
        res.report = tagged(Stage::Eval, [&] {
            return evaluate({&bench, &baseline, &mlp}, market, cfg.eval_paths, cfg.seed, gamma, opts.mode);
        });
        man.eval_seconds = seconds_since(t0);
        out.write("report.csv", [&](std::ostream& os, const std::string&) { write_report_csv(os, *res.report); });
    }
    man.completed.push_back("eval");
    out.manifest();
    return res;
}

FrontierResult frontier_sweep(const RunConfig& cfg, const std::vector<double>& lambdas, int restarts, ExecMode mode) {
    if (restarts < 1) throw ContractViolation("frontier_sweep: restarts must be >= 1");
    if (cfg.training.batch_size < 2) throw SpecError("frontier_sweep: batch_size must be >= 2");
    const Market market(cfg.market);
    auto decomp = build_decomposition(cfg.market, -1.0);
    aggregate_all(decomp, cfg.group_size);
    auto dp = solve_portfolios(cfg, decomp, 1, mode);
    const OrthoDpStrategy baseline(cfg.market, decomp, std::move(dp.tables));
    const BenchmarkStrategy bench(cfg.market);

    const auto eval_paths = draw_paths(market, cfg.eval_paths, cfg.seed, stream::eval, 0, mode);
    const auto held_out = draw_paths(market, cfg.eval_paths, cfg.seed, stream::eval, 1, mode);
    FrontierResult res;
    {
        auto w = simulate_wealth({&bench, &baseline}, market, eval_paths, mode);
        res.benchmark = summarize(bench.label(), std::move(w[0]), -1.0);
        res.ortho_dp = summarize(baseline.label(), std::move(w[1]), -1.0);
    }

    // One pretrained network per restart, shared by every lambda.
    std::vector<std::optional<MlpPolicy>> pretrained(restarts);
    std::vector<std::string> pre_errors(restarts);
    const auto data = baseline_dataset(market, baseline, cfg.training.pretrain_states, cfg.seed, mode);
    for (int r = 0; r < restarts; ++r) {
        const auto s = restart_seed(cfg.seed, r);
        try {
            pretrained[r] = pretrain(initial_policy(cfg.market, cfg.training, s), data, cfg.training,
                                     cfg.market.horizon, s, mode)
                                .policy;
        } catch (const std::exception& e) {
            pre_errors[r] = e.what();
        }
    }

    for (double lambda : lambdas) {
        FrontierRow row;
        row.lambda = lambda;
        const Objective obj = Objective::mean_variance(lambda);
        for (int r = 0; r < restarts; ++r) {
            FrontierPoint pt;
            pt.restart = r;
            try {
                if (!pretrained[r]) throw DomainError(pre_errors[r]);
                auto tr = train(*pretrained[r], market, obj, cfg.training, restart_seed(cfg.seed, r), mode);
                const MlpStrategy mlp(cfg.market, tr.policy, "mlp_r" + std::to_string(r));
                auto sel = simulate_wealth({&mlp}, market, held_out, mode);
                pt.selection_objective = obj.value(sel[0]);
                auto w = simulate_wealth({&mlp}, market, eval_paths, mode);
                pt.stats = summarize(mlp.label(), std::move(w[0]), -1.0);
            } catch (const std::exception& e) {
                pt.failed = true;
                pt.error = e.what();
                spdlog::warn("frontier: lambda {} restart {} failed: {}", lambda, r, e.what());
            }
            row.points.push_back(std::move(pt));
        }
        for (std::size_t i = 0; i < row.points.size(); ++i) {
            const auto& p = row.points[i];
            if (p.failed) continue;
            if (row.best < 0 || p.selection_objective > row.points[row.best].selection_objective)
                row.best = static_cast<int>(i);
        }
        if (row.best < 0) spdlog::warn("frontier: every restart failed at lambda {}", lambda);
        res.rows.push_back(std::move(row));
    }
    return res;
}

void write_frontier_csv(std::ostream& out, const FrontierResult& res) {
    out << "lambda,mean,std,restart_id,is_best\n" << std::setprecision(10);
    for (const auto& row : res.rows)
        for (std::size_t i = 0; i < row.points.size(); ++i) {
            const auto& p = row.points[i];
            if (p.failed) continue;
            out << row.lambda << ',' << p.stats.mean_wealth << ',' << p.stats.std_wealth << ',' << p.restart << ','
                << (static_cast<int>(i) == row.best ? 1 : 0) << '\n';
        }
}

CrraSweepResult crra_sweep(const RunConfig& cfg, const std::vector<double>& gammas, ExecMode mode) {
    const Market market(cfg.market);
    const auto paths = draw_paths(market, cfg.eval_paths, cfg.seed, stream::eval, 0, mode);
    CrraSweepResult res;
    const BenchmarkStrategy bench(cfg.market);
    auto bw = simulate_wealth({&bench}, market, paths, mode);
    res.benchmark = summarize(bench.label(), std::move(bw[0]), gammas.empty() ? -1.0 : gammas.front());
    for (double g : gammas) {
        RunConfig c = cfg;
        c.objective = Objective::crra(g);
        PipelineOptions po;
        po.stop_after = Stage::Train;
        po.mode = mode;
        auto run = run_pipeline(c, po);
        const OrthoDpStrategy baseline(c.market, *run.decomposition, run.tables);
        const MlpStrategy mlp(c.market, *run.trained);
        auto w = simulate_wealth({&baseline, &mlp}, market, paths, mode);
        CrraRow row;
        row.gamma = g;
        row.ortho_dp = summarize(baseline.label(), std::move(w[0]), g);
        row.mlp = summarize(mlp.label(), std::move(w[1]), g);
        res.rows.push_back(std::move(row));
    }
    return res;
}

void write_crra_csv(std::ostream& out, const CrraSweepResult& res) {
    out << "strategy,gamma,mean_wealth,median_wealth,std_wealth,mean_utility\n" << std::setprecision(10);
    const auto& b = res.benchmark;
    out << b.label << ",," << b.mean_wealth << ',' << b.median_wealth << ',' << b.std_wealth << ",\n";
    for (const auto& r : res.rows)
        for (const StrategyStats* s : {&r.ortho_dp, &r.mlp})
            out << s->label << ',' << r.gamma << ',' << s->mean_wealth << ',' << s->median_wealth << ','
                << s->std_wealth << ',' << s->mean_utility << '\n';
}

}  // namespace execkit

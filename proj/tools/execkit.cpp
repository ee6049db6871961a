#include "execkit/config.hpp"
#include "execkit/dp.hpp"
#include "execkit/error.hpp"
#include "execkit/eval.hpp"
#include "execkit/ortho.hpp"
#include "execkit/parallel.hpp"
#include "execkit/pipeline.hpp"
#include "execkit/strategy.hpp"
#include "execkit/training.hpp"

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

using namespace execkit;
namespace fs = std::filesystem;

namespace {

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<double> crra;
    std::optional<double> mv;
    std::string out_dir = ".";
    bool serial = false;
};

void add_common(CLI::App* app, Common& c, bool objective = true) {
    app->add_option("-c,--config", c.config, "Config file (JSON)")->required()->check(CLI::ExistingFile);
    app->add_option("--seed", c.seed, "Master seed (overrides the config)");
    app->add_option("--out-dir", c.out_dir, "Directory for artifacts");
    app->add_flag("--serial", c.serial, "Run every kernel on its serial reference path");
    if (objective) {
        auto* g = app->add_option("--crra", c.crra, "CRRA objective with this gamma");
        app->add_option("--mv", c.mv, "Mean-variance objective with this lambda")->excludes(g);
    }
}

RunConfig load(const Common& c) {
    RunConfig cfg = load_config(c.config);
    if (c.seed) cfg.seed = *c.seed;
    if (c.crra) cfg.objective = Objective::crra(*c.crra);
    if (c.mv) cfg.objective = Objective::mean_variance(*c.mv);
    return cfg;
}

ExecMode mode_of(const Common& c) { return c.serial ? ExecMode::Serial : ExecMode::Parallel; }

std::string in_dir(const Common& c, const std::string& name) {
    fs::create_directories(c.out_dir);
    return (fs::path(c.out_dir) / name).string();
}

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path);
    if (!out) throw SpecError("cannot write '" + path + "'");
    return out;
}

std::vector<double> parse_list(const std::string& s) {
    std::vector<double> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(std::stod(item));
    return out;
}

/// Path file: CSV with header "t,regime,return", regimes 0-based.
void read_path_file(const std::string& path, std::vector<int>& regimes, std::vector<double>& returns) {
    std::ifstream in(path);
    if (!in) throw SpecError("cannot open path file '" + path + "'");
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string t, r, x;
        std::getline(ss, t, ',');
        std::getline(ss, r, ',');
        std::getline(ss, x, ',');
        regimes.push_back(std::stoi(r));
        returns.push_back(x.empty() ? 0.0 : std::stod(x));
    }
}

std::vector<ValueTable> load_tables(const std::string& dir, const OrthoDecomposition& d) {
    std::vector<ValueTable> tables(d.n());
    for (int k = 0; k < d.n(); ++k)
        if (d.sub_specs[k]) tables[k] = load_table((fs::path(dir) / ("dp_portfolio_" + std::to_string(k) + ".bin")).string());
    return tables;
}

void print_report(const EvalReport& rep) {
    std::cout << std::left << std::setw(12) << "strategy" << std::right << std::setw(14) << "mean" << std::setw(14)
              << "median" << std::setw(12) << "std" << std::setw(16) << "mean_utility" << '\n';
    for (const auto& r : rep.rows)
        std::cout << std::left << std::setw(12) << r.label << std::right << std::fixed << std::setprecision(3)
                  << std::setw(14) << r.mean_wealth << std::setw(14) << r.median_wealth << std::setw(12)
                  << r.std_wealth << std::setprecision(8) << std::setw(16) << r.mean_utility << '\n';
    std::cout.unsetf(std::ios::fixed);
}

}  // namespace

int main(int argc, char** argv) {
    configure_threads_from_env();
    CLI::App app{"execkit: optimal liquidation of multi-asset portfolios under regime switching"};
    app.set_version_flag("--version", std::string(EXECKIT_VERSION));
    app.require_subcommand(1);
    bool verbose = false, quiet = false;
    app.add_flag("-v,--verbose", verbose, "Debug logging");
    app.add_flag("-q,--quiet", quiet, "Errors only");

    // validate
    std::string v_config, v_normalized;
    auto* validate = app.add_subcommand("validate", "Check a config file and report every problem");
    validate->add_option("config", v_config)->required()->check(CLI::ExistingFile);
    validate->add_option("--normalized", v_normalized, "Write the normalized config here");

    // ortho
    Common o;
    std::string o_out;
    auto* ortho = app.add_subcommand("ortho", "Average impact matrix, eigen-portfolios and chunk targets");
    add_common(ortho, o);
    ortho->add_option("--out", o_out, "Output JSON (default <out-dir>/ortho.json)");

    // dp
    Common d;
    std::string d_out, d_rollout, d_rollout_out, d_table;
    int d_asset = 0, d_group = 1;
    auto* dp = app.add_subcommand("dp", "Solve the single-asset DP for one asset of a config");
    add_common(dp, d);
    dp->add_option("--asset", d_asset, "Asset index (0-based)");
    dp->add_option("--group-size", d_group, "Periods per decision epoch");
    dp->add_option("--out", d_out, "Binary value table (default <out-dir>/table.bin)");
    dp->add_option("--table", d_table, "Reuse a solved table instead of solving")->check(CLI::ExistingFile);
    dp->add_option("--rollout", d_rollout, "Path file (CSV t,regime,return) to roll the policy along")
        ->check(CLI::ExistingFile);
    dp->add_option("--rollout-out", d_rollout_out, "Schedule CSV (default stdout)");

    // ortho-solve
    Common os;
    int os_group = 0, os_paths = 1;
    auto* ortho_solve = app.add_subcommand("ortho-solve", "Solve every portfolio DP and emit baseline schedules");
    add_common(ortho_solve, os);
    ortho_solve->add_option("--group-size", os_group, "Periods per decision epoch");
    ortho_solve->add_option("--paths", os_paths, "Sample baseline schedules to emit");

    // pretrain
    Common pt;
    std::optional<int> pt_steps;
    auto* pretrain_cmd = app.add_subcommand("pretrain", "Fit the network to the ortho/DP baseline");
    add_common(pretrain_cmd, pt);
    pretrain_cmd->add_option("--steps", pt_steps, "Pretraining steps");

    // train
    Common tr;
    std::optional<int> tr_steps, tr_batch;
    std::string tr_policy;
    auto* train_cmd = app.add_subcommand("train", "Train the network on the objective");
    add_common(train_cmd, tr);
    train_cmd->add_option("--policy", tr_policy, "Initial weights (default: cold start)")->check(CLI::ExistingFile);
    train_cmd->add_option("--steps", tr_steps, "Training steps");
    train_cmd->add_option("--batch", tr_batch, "Paths per step");

    // eval
    Common ev;
    std::string ev_policy, ev_tables;
    std::optional<int> ev_paths;
    auto* eval_cmd = app.add_subcommand("eval", "Monte-Carlo comparison on common paths");
    add_common(eval_cmd, ev);
    eval_cmd->add_option("--policy", ev_policy, "Trained weights to include")->check(CLI::ExistingFile);
    eval_cmd->add_option("--tables-dir", ev_tables, "Directory with dp_portfolio_k.bin from ortho-solve");
    eval_cmd->add_option("--paths", ev_paths, "Number of evaluation paths");

    // frontier
    Common fr;
    std::string fr_lambdas = "0,0.2,0.5,1,2,5,10";
    int fr_restarts = 3;
    std::optional<int> fr_steps;
    auto* frontier = app.add_subcommand("frontier", "Mean-variance efficient frontier with restarts");
    add_common(frontier, fr, false);
    frontier->add_option("--lambdas", fr_lambdas, "Comma-separated lambdas");
    frontier->add_option("--restarts", fr_restarts, "Training restarts per lambda");
    frontier->add_option("--steps", fr_steps, "Training steps");

    // sweep-crra
    Common sc;
    std::string sc_gammas = "-1,-3,-5,-10,-20";
    std::optional<int> sc_steps;
    auto* sweep = app.add_subcommand("sweep-crra", "Full pipeline per CRRA coefficient");
    add_common(sweep, sc, false);
    sweep->add_option("--gammas", sc_gammas, "Comma-separated gammas");
    sweep->add_option("--steps", sc_steps, "Training steps");

    // run
    Common rn;
    std::string rn_stop = "eval";
    int rn_group = 0;
    auto* run = app.add_subcommand("run", "Full pipeline: ortho, dp, pretrain, train, eval");
    add_common(run, rn);
    run->add_option("--stop-after", rn_stop, "Last stage to run")
        ->check(CLI::IsMember({"ortho", "dp", "pretrain", "train", "eval"}));
    run->add_option("--group-size", rn_group, "Periods per decision epoch");

    CLI11_PARSE(app, argc, argv);
    spdlog::set_level(verbose ? spdlog::level::debug : quiet ? spdlog::level::err : spdlog::level::info);

    try {
        if (*validate) {
            auto chk = check_config_file(v_config);
            for (const auto& w : chk.report.warnings) std::cout << "warning: " << w << '\n';
            for (const auto& e : chk.report.errors) std::cout << "error: " << e << '\n';
            if (!chk.report.ok()) return 1;
            std::cout << v_config << ": ok (" << chk.config.market.n_assets() << " assets, "
                      << chk.config.market.n_regimes() << " regimes, T=" << chk.config.market.horizon
                      << ", hash " << hash_hex(config_hash(chk.config)) << ")\n";
            if (!v_normalized.empty()) open_out(v_normalized) << to_json(chk.config).dump(1) << '\n';
            return 0;
        }
        if (*ortho) {
            auto cfg = load(o);
            auto dec = build_decomposition(cfg.market, dp_gamma(cfg.objective));
            auto doc = ortho_to_json(dec);
            doc["config_hash"] = hash_hex(config_hash(cfg));
            const std::string path = o_out.empty() ? in_dir(o, "ortho.json") : o_out;
            open_out(path) << doc.dump(1) << '\n';
            std::cout << "chunk targets:";
            for (int k = 0; k < dec.n(); ++k) std::cout << ' ' << dec.chunk_targets[k];
            std::cout << "\nwrote " << path << '\n';
            return 0;
        }
        if (*dp) {
            auto cfg = load(d);
            if (d_asset < 0 || d_asset >= cfg.market.n_assets()) throw SpecError("--asset out of range");
            auto spec = aggregate_steps(single_asset_slice(cfg.market, d_asset, dp_gamma(cfg.objective)), d_group);
            ValueTable table;
            if (!d_table.empty()) {
                table = load_table(d_table);
            } else {
                DpOptions opt = cfg.dp;
                opt.mc.seed = derive_seed(cfg.seed, stream::dp, static_cast<std::uint64_t>(d_asset));
                opt.mode = mode_of(d);
                table = solve_dp(spec, opt);
                const std::string path = d_out.empty() ? in_dir(d, "table.bin") : d_out;
                save_table(path, table);
                std::cout << "wrote " << path << '\n';
            }
            if (!d_rollout.empty()) {
                std::vector<int> regimes;
                std::vector<double> returns;
                read_path_file(d_rollout, regimes, returns);
                const auto steps = rollout_policy(table, spec, regimes, returns, cfg.market.initial_prices[d_asset]);
                std::ofstream file;
                if (!d_rollout_out.empty()) file = open_out(d_rollout_out);
                std::ostream& out = d_rollout_out.empty() ? std::cout : file;
                out << "t,regime,chunks_sold,price,cash\n" << std::setprecision(10);
                for (const auto& s : steps)
                    out << s.t << ',' << s.regime << ',' << s.chunks_sold << ',' << s.price << ',' << s.cash << '\n';
            }
            return 0;
        }
        if (*ortho_solve) {
            auto cfg = load(os);
            PipelineOptions po;
            po.stop_after = Stage::Dp;
            po.group_size = os_group;
            po.serial_dp = os.serial;
            po.mode = mode_of(os);
            po.out_dir = os.out_dir;
            auto res = run_pipeline(cfg, po);
            const Market market(cfg.market);
            const OrthoDpStrategy baseline(cfg.market, *res.decomposition, res.tables);
            const auto paths = draw_paths(market, os_paths, cfg.seed, stream::eval, 0, mode_of(os));
            auto out = open_out(in_dir(os, "baseline_schedule.csv"));
            out << "path,t,regime,asset,chunks_sold,price\n" << std::setprecision(10);
            for (int p = 0; p < os_paths; ++p) {
                std::vector<StepRecord> trace;
                simulate_path(market, baseline, paths[p], &trace);
                for (const auto& rec : trace)
                    for (int k = 0; k < cfg.market.n_assets(); ++k)
                        out << p << ',' << rec.state.t << ',' << rec.state.regime << ',' << k << ','
                            << rec.action[k] << ',' << rec.state.prices[k] << '\n';
            }
            std::cout << "dp wall " << res.manifest.dp_wall_seconds << " s; artifacts in " << os.out_dir << '\n';
            return 0;
        }
        if (*pretrain_cmd) {
            auto cfg = load(pt);
            if (pt_steps) cfg.training.pretrain_steps = *pt_steps;
            PipelineOptions po;
            po.stop_after = Stage::Pretrain;
            po.mode = mode_of(pt);
            po.serial_dp = pt.serial;
            po.out_dir = pt.out_dir;
            auto res = run_pipeline(cfg, po);
            std::cout << "final pretrain loss " << (res.pretrain_loss.empty() ? 0.0 : res.pretrain_loss.back())
                      << "; artifacts in " << pt.out_dir << '\n';
            return 0;
        }
        if (*train_cmd) {
            auto cfg = load(tr);
            if (tr_steps) cfg.training.train_steps = *tr_steps;
            if (tr_batch) cfg.training.batch_size = *tr_batch;
            const Market market(cfg.market);
            MlpPolicy init = tr_policy.empty() ? initial_policy(cfg.market, cfg.training, cfg.seed) : load_policy(tr_policy);
            if (tr_policy.empty()) spdlog::warn("train: cold start without pretraining");
            auto res = train(init, market, cfg.objective, cfg.training, cfg.seed, mode_of(tr));
            const auto hash = hash_hex(config_hash(cfg));
            save_policy(in_dir(tr, "policy.json"), res.policy, hash);
            {
                auto f = open_out(in_dir(tr, "train_curve.csv"));
                write_curve_csv(f, res.curve);
            }
            std::cout << "objective " << cfg.objective.label() << ": "
                      << (res.curve.empty() ? 0.0 : res.curve.front().objective) << " -> "
                      << (res.curve.empty() ? 0.0 : res.curve.back().objective) << '\n';
            return 0;
        }
        if (*eval_cmd) {
            auto cfg = load(ev);
            if (ev_paths) cfg.eval_paths = *ev_paths;
            const Market market(cfg.market);
            std::vector<std::unique_ptr<Strategy>> owned;
            owned.push_back(std::make_unique<BenchmarkStrategy>(cfg.market));
            if (!ev_tables.empty()) {
                auto dec = build_decomposition(cfg.market, dp_gamma(cfg.objective));
                if (cfg.group_size > 1)
                    for (auto& s : dec.sub_specs)
                        if (s) s = aggregate_steps(*s, cfg.group_size);
                auto tables = load_tables(ev_tables, dec);
                owned.push_back(std::make_unique<OrthoDpStrategy>(cfg.market, std::move(dec), std::move(tables)));
            }
            if (!ev_policy.empty()) owned.push_back(std::make_unique<MlpStrategy>(cfg.market, load_policy(ev_policy)));
            std::vector<const Strategy*> strategies;
            for (const auto& s : owned) strategies.push_back(s.get());
            auto rep = evaluate(strategies, market, cfg.eval_paths, cfg.seed, dp_gamma(cfg.objective), mode_of(ev));
            print_report(rep);
            {
                auto f = open_out(in_dir(ev, "report.csv"));
                write_report_csv(f, rep);
            }
            return 0;
        }
        if (*frontier) {
            auto cfg = load(fr);
            if (fr_steps) cfg.training.train_steps = *fr_steps;
            auto res = frontier_sweep(cfg, parse_list(fr_lambdas), fr_restarts, mode_of(fr));
            {
                auto f = open_out(in_dir(fr, "frontier.csv"));
                write_frontier_csv(f, res);
            }
            std::cout << "benchmark mean " << res.benchmark.mean_wealth << " std " << res.benchmark.std_wealth << '\n';
            for (const auto& row : res.rows)
                if (const auto* b = row.best_point())
                    std::cout << "lambda " << row.lambda << ": mean " << b->stats.mean_wealth << " std "
                              << b->stats.std_wealth << " (restart " << b->restart << ")\n";
            return 0;
        }
        if (*sweep) {
            auto cfg = load(sc);
            if (sc_steps) cfg.training.train_steps = *sc_steps;
            auto res = crra_sweep(cfg, parse_list(sc_gammas), mode_of(sc));
            {
                auto f = open_out(in_dir(sc, "crra_sweep.csv"));
                write_crra_csv(f, res);
            }
            write_crra_csv(std::cout, res);
            return 0;
        }
        if (*run) {
            auto cfg = load(rn);
            PipelineOptions po;
            po.stop_after = parse_stage(rn_stop);
            po.group_size = rn_group;
            po.serial_dp = rn.serial;
            po.mode = mode_of(rn);
            po.out_dir = rn.out_dir;
            auto res = run_pipeline(cfg, po);
            if (res.report) print_report(*res.report);
            std::cout << "manifest " << (fs::path(rn.out_dir) / "manifest.json").string() << '\n';
            return 0;
        }
    } catch (const SpecError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 3;
    }
    return 0;
}

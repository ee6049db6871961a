#include "execkit/config.hpp"

#include "execkit/error.hpp"
#include "execkit/rng.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace execkit {

using nlohmann::json;

namespace {

/// Accumulates errors while reading a document; every read names its JSON pointer.
class Reader {
public:
    std::vector<std::string> errors;

    void fail(const std::string& at, const std::string& what) { errors.push_back(at + ": " + what); }

    const json* member(const json& obj, const std::string& at, const char* key, bool required) {
        if (!obj.is_object()) {
            fail(at, "expected an object");
            return nullptr;
        }
        auto it = obj.find(key);
        if (it == obj.end()) {
            if (required) fail(at + "/" + key, "missing");
            return nullptr;
        }
        return &*it;
    }

    double number(const json& v, const std::string& at) {
        if (!v.is_number()) {
            fail(at, "expected a number");
            return 0.0;
        }
        const double d = v.get<double>();
        if (!std::isfinite(d)) fail(at, "non-finite number");
        return d;
    }

    long long integer(const json& v, const std::string& at) {
        if (v.is_number_integer()) return v.get<long long>();
        if (v.is_number_float()) {
            const double d = v.get<double>();
            if (std::isfinite(d) && d == std::floor(d) && std::abs(d) < 9e15) return static_cast<long long>(d);
        }
        fail(at, "expected an integer");
        return 0;
    }

    Vec vector(const json& v, const std::string& at) {
        if (!v.is_array()) {
            fail(at, "expected an array");
            return {};
        }
        Vec out(v.size());
        for (std::size_t i = 0; i < v.size(); ++i) out[i] = number(v[i], at + "/" + std::to_string(i));
        return out;
    }

    Mat matrix(const json& v, const std::string& at) {
        double scale = 1.0;
        const json* rows = &v;
        std::string rows_at = at;
        if (v.is_object()) {
            if (const json* s = member(v, at, "scale", false)) scale = number(*s, at + "/scale");
            rows = member(v, at, "rows", true);
            rows_at = at + "/rows";
            if (!rows) return {};
        }
        if (!rows->is_array()) {
            fail(rows_at, "expected an array of rows");
            return {};
        }
        const std::size_t r = rows->size();
        const std::size_t c = r ? ((*rows)[0].is_array() ? (*rows)[0].size() : 0) : 0;
        Mat out = Mat::Zero(r, c);
        for (std::size_t i = 0; i < r; ++i) {
            const std::string row_at = rows_at + "/" + std::to_string(i);
            const json& row = (*rows)[i];
            if (!row.is_array()) {
                fail(row_at, "expected an array");
                continue;
            }
            if (row.size() != c) {
                fail(row_at, "expected " + std::to_string(c) + " entries, got " + std::to_string(row.size()));
                continue;
            }
            for (std::size_t j = 0; j < c; ++j) out(i, j) = scale * number(row[j], row_at + "/" + std::to_string(j));
        }
        return out;
    }

    template <class F>
    void optional(const json& obj, const std::string& at, const char* key, F&& apply) {
        if (const json* v = member(obj, at, key, false)) apply(*v, at + "/" + key);
    }
};

/// Converts "regimes[1].temp_linear" style locations from spec checks to JSON pointers.
std::string to_pointer(const std::string& msg) {
    const auto colon = msg.find(':');
    if (colon == std::string::npos) return msg;
    std::string loc = msg.substr(0, colon);
    std::string ptr = "/";
    for (char ch : loc) {
        if (ch == '[' || ch == '.')
            ptr += '/';
        else if (ch != ']')
            ptr += ch;
    }
    return ptr + msg.substr(colon);
}

MarketSpec read_market(Reader& rd, const json& doc) {
    MarketSpec spec;
    if (const json* v = rd.member(doc, "", "format_version", false)) {
        const long long fv = rd.integer(*v, "/format_version");
        if (fv != kConfigFormatVersion)
            rd.fail("/format_version", "unsupported version " + std::to_string(fv));
    }
    rd.optional(doc, "", "name", [&](const json& v, const std::string& at) {
        if (v.is_string())
            spec.name = v.get<std::string>();
        else
            rd.fail(at, "expected a string");
    });
    if (const json* v = rd.member(doc, "", "horizon_periods", true))
        spec.horizon = static_cast<int>(rd.integer(*v, "/horizon_periods"));
    if (const json* v = rd.member(doc, "", "initial_prices_usd", true))
        spec.initial_prices = rd.vector(*v, "/initial_prices_usd");
    if (const json* v = rd.member(doc, "", "initial_chunks", true)) {
        if (!v->is_array()) {
            rd.fail("/initial_chunks", "expected an array");
        } else {
            for (std::size_t i = 0; i < v->size(); ++i)
                spec.initial_chunks.push_back(
                    static_cast<int>(rd.integer((*v)[i], "/initial_chunks/" + std::to_string(i))));
        }
    }
    if (const json* v = rd.member(doc, "", "transition", true)) spec.transition = rd.matrix(*v, "/transition");
    if (const json* v = rd.member(doc, "", "regimes", true)) {
        if (!v->is_array()) {
            rd.fail("/regimes", "expected an array");
        } else {
            for (std::size_t i = 0; i < v->size(); ++i) {
                const std::string at = "/regimes/" + std::to_string(i);
                const json& r = (*v)[i];
                RegimeParams p;
                if (const json* x = rd.member(r, at, "mean_return", true)) p.mean_return = rd.vector(*x, at + "/mean_return");
                if (const json* x = rd.member(r, at, "return_cov", true)) p.return_cov = rd.matrix(*x, at + "/return_cov");
                if (const json* x = rd.member(r, at, "temp_linear", true)) p.temp_linear = rd.matrix(*x, at + "/temp_linear");
                if (const json* x = rd.member(r, at, "temp_quadratic", true))
                    p.temp_quadratic = rd.matrix(*x, at + "/temp_quadratic");
                if (const json* x = rd.member(r, at, "perm_linear", true)) p.perm_linear = rd.matrix(*x, at + "/perm_linear");
                if (const json* x = rd.member(r, at, "perm_quadratic", true))
                    p.perm_quadratic = rd.matrix(*x, at + "/perm_quadratic");
                spec.regimes.push_back(std::move(p));
            }
        }
    }
    return spec;
}

void read_adam(Reader& rd, const json& v, const std::string& at, AdamConfig& a) {
    rd.optional(v, at, "lr", [&](const json& x, const std::string& p) { a.lr = rd.number(x, p); });
    rd.optional(v, at, "beta1", [&](const json& x, const std::string& p) { a.beta1 = rd.number(x, p); });
    rd.optional(v, at, "beta2", [&](const json& x, const std::string& p) { a.beta2 = rd.number(x, p); });
    rd.optional(v, at, "eps", [&](const json& x, const std::string& p) { a.eps = rd.number(x, p); });
}

void read_settings(Reader& rd, const json& doc, RunConfig& cfg) {
    auto as_int = [&](int& dst) {
        return [&rd, &dst](const json& x, const std::string& p) { dst = static_cast<int>(rd.integer(x, p)); };
    };
    auto as_num = [&](double& dst) { return [&rd, &dst](const json& x, const std::string& p) { dst = rd.number(x, p); }; };

    rd.optional(doc, "", "objective", [&](const json& o, const std::string& at) {
        std::string type = "crra";
        rd.optional(o, at, "type", [&](const json& x, const std::string& p) {
            if (x.is_string())
                type = x.get<std::string>();
            else
                rd.fail(p, "expected a string");
        });
        if (type == "crra") {
            cfg.objective = Objective::crra(-1.0);
            rd.optional(o, at, "gamma", as_num(cfg.objective.gamma));
            if (!(cfg.objective.gamma < 1.0)) rd.fail(at + "/gamma", "must be < 1");
        } else if (type == "mean_variance") {
            cfg.objective = Objective::mean_variance(0.0);
            rd.optional(o, at, "lambda", as_num(cfg.objective.lambda));
            if (cfg.objective.lambda < 0.0) rd.fail(at + "/lambda", "must be >= 0");
        } else {
            rd.fail(at + "/type", "expected 'crra' or 'mean_variance', got '" + type + "'");
        }
    });
    rd.optional(doc, "", "dp", [&](const json& d, const std::string& at) {
        rd.optional(d, at, "n_samples", as_int(cfg.dp.mc.n_samples));
        rd.optional(d, at, "n_iterations", as_int(cfg.dp.mc.n_iterations));
        rd.optional(d, at, "cash_knots", as_int(cfg.dp.cash_knots));
        rd.optional(d, at, "cash_grid_factor", as_num(cfg.dp.cash_grid_factor));
        rd.optional(d, at, "grid_ratio", as_num(cfg.dp.grid_ratio));
        rd.optional(d, at, "group_size", as_int(cfg.group_size));
        if (cfg.dp.mc.n_samples < 1) rd.fail(at + "/n_samples", "must be positive");
        if (cfg.dp.mc.n_iterations < 1) rd.fail(at + "/n_iterations", "must be positive");
        if (cfg.dp.cash_knots < 2) rd.fail(at + "/cash_knots", "must be at least 2");
        if (!(cfg.dp.cash_grid_factor > 0.0)) rd.fail(at + "/cash_grid_factor", "must be positive");
        if (!(cfg.dp.grid_ratio >= 1.0)) rd.fail(at + "/grid_ratio", "must be >= 1");
        if (cfg.group_size < 1) rd.fail(at + "/group_size", "must be positive");
    });
    rd.optional(doc, "", "training", [&](const json& t, const std::string& at) {
        auto& tc = cfg.training;
        rd.optional(t, at, "hidden_dim", as_int(tc.hidden_dim));
        rd.optional(t, at, "leak", as_num(tc.leak));
        rd.optional(t, at, "batch_size", as_int(tc.batch_size));
        rd.optional(t, at, "train_steps", as_int(tc.train_steps));
        rd.optional(t, at, "pretrain_states", as_int(tc.pretrain_states));
        rd.optional(t, at, "pretrain_steps", as_int(tc.pretrain_steps));
        rd.optional(t, at, "pretrain_batch", as_int(tc.pretrain_batch));
        rd.optional(t, at, "turbulence", as_num(tc.turbulence));
        rd.optional(t, at, "adam", [&](const json& a, const std::string& p) { read_adam(rd, a, p, tc.adam); });
        rd.optional(t, at, "pretrain_adam",
                    [&](const json& a, const std::string& p) { read_adam(rd, a, p, tc.pretrain_adam); });
        if (tc.hidden_dim < 1) rd.fail(at + "/hidden_dim", "must be positive");
        if (tc.batch_size < 1) rd.fail(at + "/batch_size", "must be positive");
        if (tc.train_steps < 0) rd.fail(at + "/train_steps", "must be >= 0");
        if (tc.pretrain_steps < 0) rd.fail(at + "/pretrain_steps", "must be >= 0");
        if (tc.pretrain_states < 1) rd.fail(at + "/pretrain_states", "must be positive");
        if (tc.pretrain_batch < 1) rd.fail(at + "/pretrain_batch", "must be positive");
        if (tc.turbulence < 0.0) rd.fail(at + "/turbulence", "must be >= 0");
        if (tc.adam.lr < 0.0) rd.fail(at + "/adam/lr", "must be >= 0");
        if (tc.pretrain_adam.lr < 0.0) rd.fail(at + "/pretrain_adam/lr", "must be >= 0");
    });
    if (cfg.objective.kind == Objective::Kind::MeanVariance && cfg.training.batch_size < 2)
        rd.fail("/training/batch_size", "mean-variance training needs at least 2 paths per batch");
    rd.optional(doc, "", "eval", [&](const json& e, const std::string& at) {
        rd.optional(e, at, "n_paths", as_int(cfg.eval_paths));
        if (cfg.eval_paths < 1) rd.fail(at + "/n_paths", "must be positive");
    });
    rd.optional(doc, "", "seed", [&](const json& s, const std::string& at) {
        if (s.is_number_unsigned() || (s.is_number_integer() && s.get<long long>() >= 0))
            cfg.seed = s.get<std::uint64_t>();
        else
            rd.fail(at, "expected a nonnegative integer");
    });
}

json rows_of(const Mat& m) {
    json rows = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        json row = json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

json list_of(const Vec& v) {
    json out = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
    return out;
}

json adam_json(const AdamConfig& a) {
    return json{{"lr", a.lr}, {"beta1", a.beta1}, {"beta2", a.beta2}, {"eps", a.eps}};
}

}  // namespace

ConfigCheck check_config(const json& doc) {
    ConfigCheck out;
    Reader rd;
    if (!doc.is_object()) {
        out.report.errors.push_back("/: expected a JSON object");
        return out;
    }
    out.config.market = read_market(rd, doc);
    read_settings(rd, doc, out.config);
    out.report.errors = rd.errors;
    if (!out.report.ok()) return out;

    auto rep = check_spec(out.config.market);
    for (auto& e : rep.errors) out.report.errors.push_back(to_pointer(e));
    for (auto& w : rep.warnings) out.report.warnings.push_back(to_pointer(w));
    if (out.report.ok()) {
        for (auto& r : out.config.market.regimes) r.return_cov = (0.5 * (r.return_cov + r.return_cov.transpose())).eval();
    }
    return out;
}

json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw SpecError("cannot open config file '" + path + "'");
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw SpecError(path + ": JSON parse error: " + e.what());
    }
}

ConfigCheck check_config_file(const std::string& path) { return check_config(read_json_file(path)); }

RunConfig parse_config(const json& doc) {
    auto chk = check_config(doc);
    if (!chk.report.ok()) {
        std::string msg = "invalid config:";
        for (const auto& e : chk.report.errors) msg += "\n  " + e;
        throw SpecError(msg, chk.report.errors);
    }
    return chk.config;
}

RunConfig load_config(const std::string& path) {
    try {
        return parse_config(read_json_file(path));
    } catch (const SpecError& e) {
        const std::string what = e.what();
        if (what.rfind(path, 0) == 0) throw;
        throw SpecError(path + ": " + what, e.issues());
    }
}

json market_to_json(const MarketSpec& spec) {
    json doc;
    doc["format_version"] = kConfigFormatVersion;
    doc["name"] = spec.name;
    doc["horizon_periods"] = spec.horizon;
    doc["initial_prices_usd"] = list_of(spec.initial_prices);
    doc["initial_chunks"] = spec.initial_chunks;
    doc["transition"] = rows_of(spec.transition);
    json regimes = json::array();
    for (const auto& r : spec.regimes) {
        regimes.push_back(json{{"mean_return", list_of(r.mean_return)},
                               {"return_cov", rows_of(r.return_cov)},
                               {"temp_linear", rows_of(r.temp_linear)},
                               {"temp_quadratic", rows_of(r.temp_quadratic)},
                               {"perm_linear", rows_of(r.perm_linear)},
                               {"perm_quadratic", rows_of(r.perm_quadratic)}});
    }
    doc["regimes"] = std::move(regimes);
    return doc;
}

json to_json(const RunConfig& cfg) {
    json doc = market_to_json(cfg.market);
    if (cfg.objective.kind == Objective::Kind::Crra)
        doc["objective"] = json{{"type", "crra"}, {"gamma", cfg.objective.gamma}};
    else
        doc["objective"] = json{{"type", "mean_variance"}, {"lambda", cfg.objective.lambda}};
    doc["dp"] = json{{"n_samples", cfg.dp.mc.n_samples},         {"n_iterations", cfg.dp.mc.n_iterations},
                     {"cash_knots", cfg.dp.cash_knots},          {"cash_grid_factor", cfg.dp.cash_grid_factor},
                     {"grid_ratio", cfg.dp.grid_ratio},          {"group_size", cfg.group_size}};
    const auto& t = cfg.training;
    doc["training"] = json{{"hidden_dim", t.hidden_dim},
                           {"leak", t.leak},
                           {"batch_size", t.batch_size},
                           {"train_steps", t.train_steps},
                           {"pretrain_states", t.pretrain_states},
                           {"pretrain_steps", t.pretrain_steps},
                           {"pretrain_batch", t.pretrain_batch},
                           {"turbulence", t.turbulence},
                           {"adam", adam_json(t.adam)},
                           {"pretrain_adam", adam_json(t.pretrain_adam)}};
    doc["eval"] = json{{"n_paths", cfg.eval_paths}};
    doc["seed"] = cfg.seed;
    return doc;
}

std::uint64_t config_hash(const RunConfig& cfg) { return fnv1a64(to_json(cfg).dump()); }

std::string hash_hex(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace execkit

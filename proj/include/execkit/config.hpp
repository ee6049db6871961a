#pragma once

#include "execkit/dp.hpp"
#include "execkit/market.hpp"
#include "execkit/training.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace execkit {

inline constexpr int kConfigFormatVersion = 1;
inline constexpr std::uint64_t kDefaultSeed = 20190401;

/// Everything a pipeline run needs. Sections other than the market are optional in the file.
struct RunConfig {
    MarketSpec market;
    Objective objective = Objective::crra(-1.0);
    DpOptions dp;
    int group_size = 1;
    TrainConfig training;
    int eval_paths = 10000;
    std::uint64_t seed = kDefaultSeed;
};

/**
 * Config file layout (JSON, matrices row-major):
 *
 *   format_version, name, horizon_periods, initial_prices_usd[n], initial_chunks[n],
 *   transition[m][m], regimes[m]: {mean_return[n], return_cov, temp_linear,
 *   temp_quadratic, perm_linear, perm_quadratic}
 *
 * A matrix is either plain rows or {"scale": s, "rows": [...]}, meaning s * rows.
 * Optional: objective {type: crra|mean_variance, gamma, lambda}, dp {...},
 * training {...}, eval {n_paths}, seed.
 *
 * Error messages locate problems with JSON pointers (e.g. /regimes/1/temp_linear/rows/2).
 */
struct ConfigCheck {
    ValidationReport report;
    RunConfig config;  ///< normalized; meaningful only when report.ok()
};

ConfigCheck check_config(const nlohmann::json& doc);
ConfigCheck check_config_file(const std::string& path);

/// Parses and validates; throws SpecError listing every problem.
RunConfig parse_config(const nlohmann::json& doc);
RunConfig load_config(const std::string& path);

/// Normalized form: scales multiplied out, covariances symmetrized, every section present.
nlohmann::json to_json(const RunConfig& cfg);
nlohmann::json market_to_json(const MarketSpec& spec);

/// FNV-1a of the normalized serialization; changes iff a field changes.
std::uint64_t config_hash(const RunConfig& cfg);
std::string hash_hex(std::uint64_t h);

nlohmann::json read_json_file(const std::string& path);

}  // namespace execkit

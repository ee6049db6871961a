#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace execkit {

using Engine = std::mt19937_64;

// Named random streams. Every stage draws from its own stream so that stages
// can be re-run independently from one master seed.
namespace stream {
inline constexpr std::string_view dp = "dp";
inline constexpr std::string_view pretrain = "pretrain";
inline constexpr std::string_view train = "train";
inline constexpr std::string_view eval = "eval";
}  // namespace stream

/// Mixes (master, stream name, index...) into a 64-bit seed. Stable across
/// platforms and releases.
std::uint64_t derive_seed(std::uint64_t master, std::string_view stream,
                          std::uint64_t index = 0, std::uint64_t sub = 0);

inline Engine make_engine(std::uint64_t master, std::string_view stream,
                          std::uint64_t index = 0, std::uint64_t sub = 0) {
    return Engine(derive_seed(master, stream, index, sub));
}

/// FNV-1a over bytes; used for config hashes.
std::uint64_t fnv1a64(std::string_view bytes);

}  // namespace execkit

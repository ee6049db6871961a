#include "execkit/rng.hpp"

#include "execkit/parallel.hpp"

#include <cstdlib>
#include <string>

#include <omp.h>

namespace execkit {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

}  // namespace

std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    return h;
}

std::uint64_t derive_seed(std::uint64_t master, std::string_view stream, std::uint64_t index,
                          std::uint64_t sub) {
    std::uint64_t h = splitmix64(master);
    h = splitmix64(h ^ fnv1a64(stream));
    h = splitmix64(h ^ index);
    h = splitmix64(h ^ (sub * 0xD6E8FEB86659FD93ULL));
    return h;
}

int configure_threads_from_env() {
    if (const char* env = std::getenv("EXECKIT_THREADS")) {
        const int n = std::atoi(env);
        if (n > 0) omp_set_num_threads(n);
    }
    return omp_get_max_threads();
}

int max_threads() { return omp_get_max_threads(); }

}  // namespace execkit

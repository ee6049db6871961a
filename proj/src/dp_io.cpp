#include "execkit/dp.hpp"

#include "execkit/error.hpp"

#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace execkit {

namespace {

constexpr char kMagic[8] = {'E', 'X', 'K', 'V', 'T', 'B', 'L', '\0'};
constexpr std::uint32_t kVersion = 1;

template <class T>
void put(std::ostream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
void put_all(std::ostream& out, const std::vector<T>& v) {
    out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(T)));
}

template <class T>
T get(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw SpecError("value table: truncated file");
    return v;
}

template <class T>
void get_all(std::istream& in, std::vector<T>& v) {
    in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(T)));
    if (!in) throw SpecError("value table: truncated file");
}

}  // namespace

void write_table(std::ostream& out, const ValueTable& t) {
    out.write(kMagic, sizeof kMagic);
    put(out, kVersion);
    put(out, static_cast<std::int32_t>(t.n_regimes()));
    put(out, static_cast<std::int32_t>(t.max_chunks()));
    put(out, static_cast<std::int32_t>(t.n_epochs()));
    put(out, static_cast<std::int32_t>(t.grid().size()));
    put(out, t.gamma());
    put(out, static_cast<std::int64_t>(t.clamp_count()));
    for (int g : t.group_sizes()) put(out, static_cast<std::int32_t>(g));
    put_all(out, t.grid().knots());
    put_all(out, t.values_data());
    std::vector<std::int32_t> policy(t.policy_data().begin(), t.policy_data().end());
    put_all(out, policy);
    put(out, static_cast<std::int64_t>(t.q_data().size()));
    put_all(out, t.q_data());
    for (const auto& sc : t.scenario_data()) {
        put(out, static_cast<std::int32_t>(sc.steps));
        put(out, static_cast<std::int32_t>(sc.count));
        put_all(out, sc.returns);
        std::vector<std::int32_t> regimes(sc.regimes.begin(), sc.regimes.end());
        put_all(out, regimes);
    }
    if (!out) throw SpecError("value table: write failed");
}

ValueTable read_table(std::istream& in) {
    char magic[8];
    in.read(magic, sizeof magic);
    if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw SpecError("value table: bad magic");
    const auto version = get<std::uint32_t>(in);
    if (version != kVersion)
        throw SpecError("value table: unsupported version " + std::to_string(version));
    const int m = get<std::int32_t>(in);
    const int max_chunks = get<std::int32_t>(in);
    const int n_epochs = get<std::int32_t>(in);
    const int n_knots = get<std::int32_t>(in);
    const double gamma = get<double>(in);
    const auto clamps = get<std::int64_t>(in);
    if (m <= 0 || max_chunks < 0 || n_epochs <= 0 || n_knots < 2) throw SpecError("value table: bad header");
    std::vector<int> groups(n_epochs);
    for (auto& g : groups) g = get<std::int32_t>(in);
    std::vector<double> knots(n_knots);
    get_all(in, knots);

    ValueTable t(CashGrid(std::move(knots)), m, max_chunks, groups, gamma);
    get_all(in, t.values_data());
    std::vector<std::int32_t> policy(t.policy_data().size());
    get_all(in, policy);
    t.policy_data().assign(policy.begin(), policy.end());
    const auto q_size = get<std::int64_t>(in);
    if (q_size != static_cast<std::int64_t>(t.q_data().size())) throw SpecError("value table: q size mismatch");
    get_all(in, t.q_data());
    for (auto& sc : t.scenario_data()) {
        sc.steps = get<std::int32_t>(in);
        sc.count = get<std::int32_t>(in);
        const auto n = static_cast<std::size_t>(sc.steps) * static_cast<std::size_t>(sc.count);
        sc.returns.resize(n);
        get_all(in, sc.returns);
        std::vector<std::int32_t> regimes(n);
        get_all(in, regimes);
        sc.regimes.assign(regimes.begin(), regimes.end());
    }
    t.set_clamp_count(clamps);
    return t;
}

void save_table(const std::string& path, const ValueTable& table) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw SpecError("cannot open " + path + " for writing");
    write_table(out, table);
}

ValueTable load_table(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw SpecError("cannot open " + path);
    return read_table(in);
}

}  // namespace execkit

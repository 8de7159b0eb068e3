#include "slq/noise.hpp"

#include "slq/errors.hpp"

#include <cmath>
#include <numbers>
#include <string>
#include <thread>

namespace slq {

TimeGrid make_time_grid(double T, std::size_t N) {
    if (!(T > 0.0) || !std::isfinite(T)) throw ConfigError("horizon T must be positive");
    if (N < 1) throw ConfigError("time grid needs at least one step");
    const double tau = T / static_cast<double>(N);
    if (tau > 1.0) {
        throw ConfigError("time step " + std::to_string(tau) + " exceeds 1; use more steps");
    }
    return TimeGrid{T, N, tau};
}

std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> ctr,
                                        std::array<std::uint32_t, 2> key) {
    constexpr std::uint64_t kM0 = 0xD2511F53u;
    constexpr std::uint64_t kM1 = 0xCD9E8D57u;
    constexpr std::uint32_t kW0 = 0x9E3779B9u;
    constexpr std::uint32_t kW1 = 0xBB67AE85u;
    for (int round = 0; round < 10; ++round) {
        if (round > 0) {
            key[0] += kW0;
            key[1] += kW1;
        }
        const std::uint64_t p0 = kM0 * ctr[0];
        const std::uint64_t p1 = kM1 * ctr[2];
        const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
        const auto lo0 = static_cast<std::uint32_t>(p0);
        const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
        const auto lo1 = static_cast<std::uint32_t>(p1);
        ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    }
    return ctr;
}

namespace {

// 53 random bits mapped to (0, 1].
double open_unit(std::uint32_t hi, std::uint32_t lo) {
    const std::uint64_t bits = ((static_cast<std::uint64_t>(hi) << 32) | lo) >> 11;
    return (static_cast<double>(bits) + 1.0) * 0x1.0p-53;
}

}  // namespace

double keyed_normal(std::uint64_t seed, std::uint64_t path, std::uint64_t step) {
    const auto r = philox4x32({static_cast<std::uint32_t>(path),
                               static_cast<std::uint32_t>(path >> 32),
                               static_cast<std::uint32_t>(step),
                               static_cast<std::uint32_t>(step >> 32)},
                              {static_cast<std::uint32_t>(seed),
                               static_cast<std::uint32_t>(seed >> 32)});
    const double u1 = open_unit(r[0], r[1]);
    const double u2 = open_unit(r[2], r[3]);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

WienerDriver WienerDriver::tree(const TimeGrid& grid, std::size_t cap) {
    if (grid.N > cap) {
        throw ResourceError("tree depth " + std::to_string(grid.N) + " exceeds cap " +
                            std::to_string(cap));
    }
    WienerDriver d;
    d.kind_ = Kind::Tree;
    d.grid_ = grid;
    const double s = std::sqrt(grid.tau);
    d.increments_.resize(grid.N);
    for (std::size_t k = 1; k <= grid.N; ++k) {
        const std::size_t half = std::size_t{1} << (k - 1);
        auto& inc = d.increments_[k - 1];
        inc.assign(2 * half, s);
        for (std::size_t c = half; c < 2 * half; ++c) inc[c] = -s;
    }
    d.n_paths_ = std::size_t{1} << grid.N;
    return d;
}

WienerDriver WienerDriver::gaussian(const TimeGrid& grid, std::size_t n_paths,
                                    std::uint64_t seed, std::size_t workers) {
    if (n_paths < 1) throw ConfigError("ensemble needs at least one path");
    WienerDriver d;
    d.kind_ = Kind::Ensemble;
    d.grid_ = grid;
    d.n_paths_ = n_paths;
    d.seed_ = seed;
    d.increments_.assign(grid.N, std::vector<double>(n_paths));
    const double s = std::sqrt(grid.tau);
    auto fill = [&](std::size_t begin, std::size_t end) {
        for (std::size_t k = 0; k < grid.N; ++k) {
            for (std::size_t p = begin; p < end; ++p) {
                d.increments_[k][p] = s * keyed_normal(seed, p, k);
            }
        }
    };
    workers = std::max<std::size_t>(1, std::min(workers, n_paths));
    if (workers == 1) {
        fill(0, n_paths);
    } else {
        std::vector<std::thread> pool;
        const std::size_t chunk = (n_paths + workers - 1) / workers;
        for (std::size_t w = 0; w < workers; ++w) {
            const std::size_t b = w * chunk;
            const std::size_t e = std::min(n_paths, b + chunk);
            if (b < e) pool.emplace_back(fill, b, e);
        }
        for (auto& t : pool) t.join();
    }
    return d;
}

WienerDriver WienerDriver::from_increments(const TimeGrid& grid,
                                           std::vector<std::vector<double>> increments,
                                           std::uint64_t seed) {
    if (increments.size() != grid.N) throw DimensionError("one increment column per step");
    const std::size_t p = increments.empty() ? 0 : increments.front().size();
    if (p < 1) throw ConfigError("ensemble needs at least one path");
    for (const auto& col : increments) {
        if (col.size() != p) throw DimensionError("ragged increment columns");
    }
    WienerDriver d;
    d.kind_ = Kind::Ensemble;
    d.grid_ = grid;
    d.n_paths_ = p;
    d.seed_ = seed;
    d.increments_ = std::move(increments);
    return d;
}

WienerDriver WienerDriver::replay_tree(const TimeGrid& grid, std::size_t cap) {
    if (grid.N > cap) {
        throw ResourceError("tree depth " + std::to_string(grid.N) + " exceeds cap " +
                            std::to_string(cap));
    }
    const std::size_t leaves = std::size_t{1} << grid.N;
    const double s = std::sqrt(grid.tau);
    std::vector<std::vector<double>> inc(grid.N, std::vector<double>(leaves));
    for (std::size_t k = 1; k <= grid.N; ++k) {
        for (std::size_t p = 0; p < leaves; ++p) {
            inc[k - 1][p] = ((p >> (k - 1)) & 1u) != 0 ? -s : s;
        }
    }
    return from_increments(grid, std::move(inc));
}

std::size_t WienerDriver::scenarios(std::size_t n) const {
    return is_tree() ? (std::size_t{1} << n) : n_paths_;
}

const std::vector<double>& WienerDriver::increments(std::size_t k) const {
    if (k < 1 || k > grid_.N) throw DimensionError("increment index out of range");
    return increments_[k - 1];
}

std::vector<double> WienerDriver::brownian(std::size_t n) const {
    if (n > grid_.N) throw DimensionError("time level out of range");
    std::vector<double> w(scenarios(0), 0.0);
    for (std::size_t k = 1; k <= n; ++k) {
        const auto& inc = increments_[k - 1];
        std::vector<double> next(scenarios(k));
        for (std::size_t c = 0; c < next.size(); ++c) next[c] = w[parent(k, c)] + inc[c];
        w.swap(next);
    }
    return w;
}

WienerDriver refine_common_path(const WienerDriver& fine) {
    if (fine.is_tree()) throw ConfigError("common-path refinement applies to ensembles");
    const TimeGrid& g = fine.grid();
    if (g.N % 2 != 0) throw ConfigError("common-path refinement needs an even step count");
    const TimeGrid coarse = make_time_grid(g.T, g.N / 2);
    std::vector<std::vector<double>> inc(coarse.N, std::vector<double>(fine.n_paths()));
    for (std::size_t k = 1; k <= coarse.N; ++k) {
        const auto& a = fine.increments(2 * k - 1);
        const auto& b = fine.increments(2 * k);
        for (std::size_t p = 0; p < fine.n_paths(); ++p) inc[k - 1][p] = a[p] + b[p];
    }
    return WienerDriver::from_increments(coarse, std::move(inc), fine.seed());
}

std::vector<double> tree_condexp(const std::vector<double>& values, std::size_t j,
                                 std::size_t n) {
    if (n > j) throw ConfigError("conditional expectation target level is above the source");
    if (values.size() != (std::size_t{1} << j)) throw DimensionError("tree level size");
    std::vector<double> v = values;
    for (std::size_t level = j; level > n; --level) {
        const std::size_t half = std::size_t{1} << (level - 1);
        std::vector<double> up(half);
        for (std::size_t s = 0; s < half; ++s) up[s] = 0.5 * v[s] + 0.5 * v[s + half];
        v.swap(up);
    }
    return v;
}

}  // namespace slq

#pragma once

// Uniform time grids and Wiener drivers.
//
// Scenarios at time level n are stored as columns. On a tree, level n has 2^n
// scenarios and child c of level n descends from parent c mod 2^(n-1): the
// first half of level n took the +sqrt(tau) branch at step n, the second half
// the -sqrt(tau) branch. Bit k-1 of a level-n index therefore records the sign
// of the k-th increment. On an ensemble, path p is column p at every level.

#include <array>
#include <cstddef>
#include <cstdint>
#include <vector>

namespace slq {

struct TimeGrid {
    double T = 0.0;
    std::size_t N = 0;
    double tau = 0.0;

    [[nodiscard]] double node(std::size_t n) const {
        return n == N ? T : static_cast<double>(n) * tau;
    }
};

/// Throws ConfigError unless T > 0, N >= 1 and T/N <= 1.
TimeGrid make_time_grid(double T, std::size_t N);

/// Philox4x32-10 counter-based generator.
std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> counter,
                                        std::array<std::uint32_t, 2> key);

/// Standard normal sample for (seed, path, step), via the cosine branch of
/// Box-Muller on one Philox block.
double keyed_normal(std::uint64_t seed, std::uint64_t path, std::uint64_t step);

inline constexpr std::size_t kDefaultTreeCap = 16;

class WienerDriver {
public:
    enum class Kind { Tree, Ensemble };

    /// Bernoulli tree with +-sqrt(tau) increments; ResourceError if N > cap.
    static WienerDriver tree(const TimeGrid& grid, std::size_t cap = kDefaultTreeCap);

    /// i.i.d. N(0, tau) increments. `workers` threads split the paths; the
    /// result does not depend on it.
    static WienerDriver gaussian(const TimeGrid& grid, std::size_t n_paths, std::uint64_t seed,
                                 std::size_t workers = 1);

    /// Ensemble with given increments; increments[k-1][p] is Delta_k W on path p.
    static WienerDriver from_increments(const TimeGrid& grid,
                                        std::vector<std::vector<double>> increments,
                                        std::uint64_t seed = 0);

    /// Every path of a tree as an ensemble of 2^N paths; path p follows the
    /// leaf with index p.
    static WienerDriver replay_tree(const TimeGrid& grid, std::size_t cap = kDefaultTreeCap);

    [[nodiscard]] Kind kind() const { return kind_; }
    [[nodiscard]] bool is_tree() const { return kind_ == Kind::Tree; }
    [[nodiscard]] const TimeGrid& grid() const { return grid_; }
    [[nodiscard]] std::uint64_t seed() const { return seed_; }
    [[nodiscard]] std::size_t n_paths() const { return n_paths_; }

    /// Scenario count at time level n.
    [[nodiscard]] std::size_t scenarios(std::size_t n) const;

    /// Delta_k W for every level-k scenario, k = 1..N.
    [[nodiscard]] const std::vector<double>& increments(std::size_t k) const;

    /// Level-(k-1) scenario a level-k scenario descends from.
    [[nodiscard]] std::size_t parent(std::size_t k, std::size_t c) const {
        return is_tree() ? c % scenarios(k - 1) : c;
    }

    /// W(t_n) for every level-n scenario.
    [[nodiscard]] std::vector<double> brownian(std::size_t n) const;

private:
    WienerDriver() = default;

    Kind kind_ = Kind::Tree;
    TimeGrid grid_;
    std::size_t n_paths_ = 0;
    std::uint64_t seed_ = 0;
    std::vector<std::vector<double>> increments_;
};

/// Coarse ensemble with N/2 steps whose increments are pairwise sums.
WienerDriver refine_common_path(const WienerDriver& fine);

/// Mean over descendants: maps level-j tree values to level n <= j.
std::vector<double> tree_condexp(const std::vector<double>& values, std::size_t j, std::size_t n);

}  // namespace slq

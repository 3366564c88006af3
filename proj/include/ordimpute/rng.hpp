#pragma once

#include <array>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string_view>

namespace ordimpute {

/// xoshiro256** seeded through splitmix64. Every random draw in the project
/// goes through this type so results are reproducible across platforms;
/// std:: distributions are implementation-defined and are not used.
///
/// Stream splitting: `Rng::derive(master, {k1, k2, ...})` hashes the master
/// seed with an ordered key path. The harness keys substreams by
/// (purpose, replication, method, chain), never by thread.
class Rng {
public:
    explicit Rng(std::uint64_t seed);

    static std::uint64_t derive(std::uint64_t master, std::initializer_list<std::uint64_t> keys);
    static Rng substream(std::uint64_t master, std::initializer_list<std::uint64_t> keys) {
        return Rng(derive(master, keys));
    }

    std::uint64_t next_u64();

    /// Uniform on the open interval (0, 1).
    double uniform();
    /// Uniform integer in [0, n). n must be > 0.
    std::uint64_t uniform_index(std::uint64_t n);
    bool bernoulli(double p) { return uniform() < p; }

    double normal();
    double exponential();
    /// Gamma with the given shape and unit rate.
    double gamma(double shape);
    double gamma(double shape, double rate) { return gamma(shape) / rate; }
    double beta(double a, double b);
    double chi_squared(double dof) { return 2.0 * gamma(0.5 * dof); }

    /// Draws an index in [0, weights.size()) proportional to nonnegative weights.
    std::size_t categorical(std::span<const double> weights);
    /// Dirichlet draw written into out; alpha and out have equal length.
    void dirichlet(std::span<const double> alpha, std::span<double> out);

    template <class T>
    void shuffle(std::span<T> items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(uniform_index(i));
            std::swap(items[i - 1], items[j]);
        }
    }

    // UniformRandomBitGenerator surface.
    using result_type = std::uint64_t;
    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return ~result_type{0}; }
    result_type operator()() { return next_u64(); }

private:
    std::array<std::uint64_t, 4> s_{};
};

std::uint64_t splitmix64(std::uint64_t& state);

/// Stable 64-bit key for a text label (FNV-1a), used in substream paths.
std::uint64_t key_of(std::string_view label);

}  // namespace ordimpute

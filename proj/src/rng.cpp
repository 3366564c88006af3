#include "ordimpute/rng.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace ordimpute {

namespace {

constexpr std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

// log of a Gamma(shape, 1) variate; stays finite for tiny shapes where the
// variate itself underflows.
double log_gamma_variate(Rng& rng, double shape) {
    if (shape < 1.0) {
        double boosted = rng.gamma(shape + 1.0);
        return std::log(boosted) + std::log(rng.uniform()) / shape;
    }
    return std::log(rng.gamma(shape));
}

}  // namespace

std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

std::uint64_t key_of(std::string_view label) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : label) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

Rng::Rng(std::uint64_t seed) {
    std::uint64_t state = seed;
    for (auto& word : s_) word = splitmix64(state);
}

std::uint64_t Rng::derive(std::uint64_t master, std::initializer_list<std::uint64_t> keys) {
    std::uint64_t state = master;
    std::uint64_t h = splitmix64(state);
    for (std::uint64_t k : keys) {
        state = h ^ (k + 0x632be59bd9b4e019ULL + (h << 6) + (h >> 2));
        h = splitmix64(state);
    }
    return h;
}

std::uint64_t Rng::next_u64() {
    const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
}

double Rng::uniform() {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
}

std::uint64_t Rng::uniform_index(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("uniform_index: empty range");
    // Rejection keeps the draw exactly uniform.
    const std::uint64_t limit = max() - max() % n;
    std::uint64_t x;
    do {
        x = next_u64();
    } while (x >= limit);
    return x % n;
}

double Rng::normal() {
    double u1 = uniform();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double Rng::exponential() { return -std::log(uniform()); }

double Rng::gamma(double shape) {
    if (!(shape > 0.0)) throw std::invalid_argument("gamma: shape must be positive");
    if (shape < 1.0) {
        return gamma(shape + 1.0) * std::pow(uniform(), 1.0 / shape);
    }
    // Marsaglia & Tsang.
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
        double x, v;
        do {
            x = normal();
            v = 1.0 + c * x;
        } while (v <= 0.0);
        v = v * v * v;
        const double u = uniform();
        if (std::log(u) < 0.5 * x * x + d - d * v + d * std::log(v)) return d * v;
    }
}

double Rng::beta(double a, double b) {
    const double lx = log_gamma_variate(*this, a);
    const double ly = log_gamma_variate(*this, b);
    return 1.0 / (1.0 + std::exp(ly - lx));
}

std::size_t Rng::categorical(std::span<const double> weights) {
    double total = 0.0;
    for (double w : weights) total += w;
    if (!(total > 0.0) || !std::isfinite(total)) {
        throw std::invalid_argument("categorical: weights must have a positive finite sum");
    }
    double target = uniform() * total;
    std::size_t last_positive = 0;
    for (std::size_t k = 0; k < weights.size(); ++k) {
        if (weights[k] <= 0.0) continue;
        last_positive = k;
        target -= weights[k];
        if (target < 0.0) return k;
    }
    return last_positive;
}

void Rng::dirichlet(std::span<const double> alpha, std::span<double> out) {
    double total = 0.0;
    for (std::size_t k = 0; k < alpha.size(); ++k) {
        out[k] = gamma(alpha[k]);
        total += out[k];
    }
    if (total > 0.0) {
        for (double& v : out) v /= total;
        return;
    }
    // All components underflowed; renormalise in log space.
    double hi = -INFINITY;
    for (std::size_t k = 0; k < alpha.size(); ++k) {
        out[k] = log_gamma_variate(*this, alpha[k]);
        hi = std::max(hi, out[k]);
    }
    total = 0.0;
    for (double& v : out) {
        v = std::exp(v - hi);
        total += v;
    }
    for (double& v : out) v /= total;
}

}  // namespace ordimpute

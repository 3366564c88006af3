#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "ordimpute/data.hpp"
#include "ordimpute/rng.hpp"

namespace ordimpute {

/// pi_k = V_k * prod_{h<k} (1 - V_h). Requires V_k in [0,1] and V_K = 1;
/// throws std::invalid_argument otherwise.
std::vector<double> stick_break(std::span<const double> v);

/// Stick weights from their full conditional given class sizes:
/// V_k ~ Beta(1 + n_k, alpha + sum_{h>k} n_h) for k < K, V_K = 1. Draws are
/// kept at most 1 - 1e-12 so log(1 - V_k) stays finite.
void update_sticks(std::span<const std::size_t> class_sizes, double alpha, Rng& rng, std::vector<double>& v);

/// Concentration from its Gamma(shape + K - 1, rate - sum_{k<K} log(1 - V_k))
/// full conditional (shape-rate convention).
double update_alpha(std::span<const double> v, double prior_shape, double prior_rate, Rng& rng);

/// Number of classes with at least one member.
int occupied_classes(std::span<const std::size_t> class_sizes);

/// One row of a sampler's convergence trace. `marginals` holds the
/// label-switching-invariant model probabilities P(Y_j = 1), one per variable.
struct SweepTrace {
    int sweep = 0;
    int classes = 0;
    int occupied = 0;
    double alpha = 0.0;
    std::vector<double> marginals;
};

void write_trace_csv(const std::vector<SweepTrace>& trace, const std::vector<VariableSpec>& variables,
                     const std::filesystem::path& path);

/// Sweeps (1-based) at which the L completed datasets are kept: evenly
/// spaced over (burn_in, iterations], the last one at `iterations`.
/// Throws ConfigError when they do not fit.
std::vector<int> retained_sweeps(int iterations, int burn_in, int imputations);

}  // namespace ordimpute

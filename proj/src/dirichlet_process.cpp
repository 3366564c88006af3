#include "ordimpute/dirichlet_process.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include "ordimpute/error.hpp"

namespace ordimpute {

std::vector<double> stick_break(std::span<const double> v) {
    if (v.empty() || v.back() != 1.0) throw std::invalid_argument("the last stick weight must be 1");
    std::vector<double> pi(v.size());
    double rest = 1.0;
    for (std::size_t k = 0; k < v.size(); ++k) {
        if (!(v[k] >= 0.0 && v[k] <= 1.0)) throw std::invalid_argument("stick weights must lie in [0,1]");
        pi[k] = v[k] * rest;
        rest *= 1.0 - v[k];
    }
    return pi;
}

void update_sticks(std::span<const std::size_t> class_sizes, double alpha, Rng& rng, std::vector<double>& v) {
    const std::size_t k_max = class_sizes.size();
    v.assign(k_max, 1.0);
    double tail = 0.0;
    for (std::size_t k = k_max; k-- > 0;) {
        if (k + 1 < k_max) {
            v[k] = std::min(rng.beta(1.0 + static_cast<double>(class_sizes[k]), alpha + tail), 1.0 - 1e-12);
        }
        tail += static_cast<double>(class_sizes[k]);
    }
}

double update_alpha(std::span<const double> v, double prior_shape, double prior_rate, Rng& rng) {
    double log_rest = 0.0;
    for (std::size_t k = 0; k + 1 < v.size(); ++k) log_rest += std::log1p(-v[k]);
    const double shape = prior_shape + static_cast<double>(v.size()) - 1.0;
    const double alpha = rng.gamma(shape, prior_rate - log_rest);
    // a vanishing draw would freeze the sticks at 1; keep it representable
    return std::max(alpha, 1e-300);
}

int occupied_classes(std::span<const std::size_t> class_sizes) {
    int n = 0;
    for (std::size_t s : class_sizes) n += s > 0;
    return n;
}

void write_trace_csv(const std::vector<SweepTrace>& trace, const std::vector<VariableSpec>& variables,
                     const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write trace file " + path.string());
    out << "sweep,classes,occupied,alpha";
    for (const auto& v : variables) out << ",P(" << v.name << "=1)";
    out << '\n';
    out.precision(10);
    for (const auto& row : trace) {
        out << row.sweep << ',' << row.classes << ',' << row.occupied << ',' << row.alpha;
        for (double m : row.marginals) out << ',' << m;
        out << '\n';
    }
    if (!out) throw DataError("failed writing trace file " + path.string());
}

std::vector<int> retained_sweeps(int iterations, int burn_in, int imputations) {
    if (imputations < 1) throw ConfigError("need at least one imputation");
    if (burn_in < 0 || burn_in >= iterations) throw ConfigError("burn-in must be in [0, iterations)");
    const long long span = iterations - burn_in;
    if (imputations > span) throw ConfigError("more imputations than post-burn-in sweeps");
    std::vector<int> sweeps;
    for (long long l = 1; l <= imputations; ++l) sweeps.push_back(burn_in + static_cast<int>(l * span / imputations));
    return sweeps;
}

}  // namespace ordimpute

#include "ordimpute/dpmpm.hpp"

#include <algorithm>
#include <cmath>

#include "ordimpute/error.hpp"
#include "ordimpute/mice.hpp"

namespace ordimpute {

namespace {

void validate(const DpmpmOptions& o) {
    if (o.initial_classes < 1) throw ConfigError("DPMPM needs at least one class");
    if (o.growth_step < 1) throw ConfigError("growth_step must be >= 1");
    if (!(o.alpha_shape > 0.0) || !(o.alpha_rate > 0.0)) throw ConfigError("alpha prior must be positive");
    retained_sweeps(o.iterations, o.burn_in, o.imputations);
}

}  // namespace

DpmpmSampler::DpmpmSampler(const IncompleteDataset& input, const DpmpmOptions& options, std::uint64_t seed)
    : input_(input), options_(options), rng_(Rng::derive(seed, {1})), n_(input.rows()), p_(input.cols()) {
    validate(options_);
    width_ = 0;
    for (const auto& v : input.variables()) {
        cards_.push_back(v.cardinality);
        offset_.push_back(width_);
        width_ += static_cast<std::size_t>(v.cardinality);
    }
    cells_ = initialize_missing(input, Initializer::Marginal, Rng::derive(seed, {0})).cells();
    for (std::size_t j = 0; j < p_; ++j) {
        for (std::size_t i = 0; i < n_; ++i) {
            if (input.mask().missing(i, j)) missing_.push_back(j * n_ + i);
        }
    }

    // parameters start from their priors
    const int k_max = options_.initial_classes;
    state_.classes = k_max;
    state_.alpha = 1.0;
    state_.v.assign(static_cast<std::size_t>(k_max), 1.0);
    for (int k = 0; k + 1 < k_max; ++k) state_.v[static_cast<std::size_t>(k)] = std::min(rng_.beta(1.0, state_.alpha), 1.0 - 1e-12);
    state_.pi = stick_break(state_.v);
    state_.lambda.assign(static_cast<std::size_t>(k_max) * width_, 0.0);
    for (int k = 0; k < k_max; ++k) {
        for (std::size_t j = 0; j < p_; ++j) {
            std::vector<double> ones(static_cast<std::size_t>(cards_[j]), 1.0);
            rng_.dirichlet(ones, std::span<double>(state_.lambda.data() + static_cast<std::size_t>(k) * width_ + offset_[j],
                                                   ones.size()));
        }
    }
    state_.z.assign(n_, 0);
    for (auto& z : state_.z) z = static_cast<int>(rng_.categorical(state_.pi));
}

void DpmpmSampler::update_z() {
    const std::size_t k_max = static_cast<std::size_t>(state_.classes);
    std::vector<double> log_lambda(state_.lambda.size());
    for (std::size_t t = 0; t < log_lambda.size(); ++t) log_lambda[t] = std::log(state_.lambda[t]);
    std::vector<double> log_pi(k_max);
    for (std::size_t k = 0; k < k_max; ++k) log_pi[k] = std::log(state_.pi[k]);
    std::vector<double> w(k_max);
    for (std::size_t i = 0; i < n_; ++i) {
        double top = -INFINITY;
        for (std::size_t k = 0; k < k_max; ++k) {
            double s = log_pi[k];
            const double* row = log_lambda.data() + k * width_;
            for (std::size_t j = 0; j < p_; ++j) s += row[offset_[j] + static_cast<std::size_t>(cells_[j * n_ + i] - 1)];
            w[k] = s;
            top = std::max(top, s);
        }
        if (!std::isfinite(top)) throw SamplerError("DPMPM: row has zero probability under every class");
        for (auto& x : w) x = std::exp(x - top);
        state_.z[i] = static_cast<int>(rng_.categorical(w));
    }
}

std::vector<std::size_t> DpmpmSampler::class_sizes() const {
    std::vector<std::size_t> sizes(static_cast<std::size_t>(state_.classes), 0);
    for (int z : state_.z) ++sizes[static_cast<std::size_t>(z)];
    return sizes;
}

void DpmpmSampler::grow_if_full() {
    if (!options_.grow_classes) return;
    if (occupied_classes(class_sizes()) < state_.classes) return;
    state_.classes += options_.growth_step;
    // new lambda blocks are drawn in update_lambda from Dirichlet(1 + 0)
    state_.lambda.resize(static_cast<std::size_t>(state_.classes) * width_, 1.0);
}

void DpmpmSampler::update_lambda() {
    const std::size_t k_max = static_cast<std::size_t>(state_.classes);
    std::vector<double> alpha(k_max * width_, 1.0);
    for (std::size_t j = 0; j < p_; ++j) {
        for (std::size_t i = 0; i < n_; ++i) {
            alpha[static_cast<std::size_t>(state_.z[i]) * width_ + offset_[j] + static_cast<std::size_t>(cells_[j * n_ + i] - 1)] += 1.0;
        }
    }
    for (std::size_t k = 0; k < k_max; ++k) {
        for (std::size_t j = 0; j < p_; ++j) {
            const std::size_t at = k * width_ + offset_[j];
            const std::size_t d = static_cast<std::size_t>(cards_[j]);
            rng_.dirichlet(std::span<const double>(alpha.data() + at, d), std::span<double>(state_.lambda.data() + at, d));
            // keep every level representable in log space
            for (std::size_t t = at; t < at + d; ++t) state_.lambda[t] = std::max(state_.lambda[t], 1e-300);
        }
    }
}

void DpmpmSampler::update_missing() {
    for (std::size_t flat : missing_) {
        const std::size_t j = flat / n_;
        const std::size_t i = flat % n_;
        const std::size_t at = static_cast<std::size_t>(state_.z[i]) * width_ + offset_[j];
        cells_[flat] = 1 + static_cast<int>(rng_.categorical(
                               std::span<const double>(state_.lambda.data() + at, static_cast<std::size_t>(cards_[j]))));
    }
}

void DpmpmSampler::sweep() {
    update_z();
    grow_if_full();
    update_lambda();
    update_sticks(class_sizes(), state_.alpha, rng_, state_.v);
    state_.alpha = update_alpha(state_.v, options_.alpha_shape, options_.alpha_rate, rng_);
    state_.pi = stick_break(state_.v);
    update_missing();
#ifndef NDEBUG
    check_invariants();
#endif
}

OrdinalDataset DpmpmSampler::completed() const { return OrdinalDataset(input_.variables(), n_, cells_); }

double DpmpmSampler::cell_probability(const std::vector<std::pair<std::size_t, int>>& cells) const {
    double total = 0.0;
    for (int k = 0; k < state_.classes; ++k) {
        double prod = state_.pi[static_cast<std::size_t>(k)];
        for (const auto& [j, d] : cells) prod *= lambda(k, j, d);
        total += prod;
    }
    return total;
}

SweepTrace DpmpmSampler::trace_row(int sweep) const {
    SweepTrace row;
    row.sweep = sweep;
    row.classes = state_.classes;
    row.occupied = occupied_classes(class_sizes());
    row.alpha = state_.alpha;
    for (std::size_t j = 0; j < p_; ++j) row.marginals.push_back(cell_probability({{j, 1}}));
    return row;
}

void DpmpmSampler::check_invariants() const {
    const auto fail = [](const char* what) { throw SamplerError(std::string("DPMPM invariant violated: ") + what); };
    if (!(state_.alpha > 0.0)) fail("alpha > 0");
    if (state_.v.size() != static_cast<std::size_t>(state_.classes) || state_.v.back() != 1.0) fail("V_K = 1");
    double sum = 0.0;
    for (double w : state_.pi) {
        if (w < 0.0) fail("pi nonnegative");
        sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-10) fail("pi sums to 1");
    for (int k = 0; k < state_.classes; ++k) {
        for (std::size_t j = 0; j < p_; ++j) {
            double s = 0.0;
            for (int d = 1; d <= cards_[j]; ++d) {
                if (lambda(k, j, d) < 0.0) fail("lambda nonnegative");
                s += lambda(k, j, d);
            }
            if (std::abs(s - 1.0) > 1e-10) fail("lambda sums to 1");
        }
    }
    for (int z : state_.z) {
        if (z < 0 || z >= state_.classes) fail("z in range");
    }
}

ImputationResult dpmpm_impute(const IncompleteDataset& input, const DpmpmOptions& options, std::uint64_t seed,
                              std::vector<SweepTrace>* trace) {
    validate(options);
    require_observed_values(input);
    ImputationResult result;
    result.method = "DPMPM";
    result.seed = seed;
    if (!input.mask().any()) {
        result.completed.assign(static_cast<std::size_t>(options.imputations), input.data());
        return result;
    }
    const auto keep = retained_sweeps(options.iterations, options.burn_in, options.imputations);
    DpmpmSampler sampler(input, options, seed);
    std::size_t next = 0;
    for (int t = 1; t <= options.iterations; ++t) {
        sampler.sweep();
        if (trace) trace->push_back(sampler.trace_row(t));
        if (next < keep.size() && keep[next] == t) {
            result.completed.push_back(sampler.completed());
            ++next;
        }
    }
    result.diagnostics["final_classes"] = sampler.state().classes;
    result.diagnostics["final_occupied"] = occupied_classes(sampler.class_sizes());
    result.diagnostics["final_alpha"] = sampler.state().alpha;
    return result;
}

}  // namespace ordimpute

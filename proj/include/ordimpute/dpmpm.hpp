#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "ordimpute/data.hpp"
#include "ordimpute/dirichlet_process.hpp"
#include "ordimpute/rng.hpp"

namespace ordimpute {

struct DpmpmOptions {
    int initial_classes = 40;
    int iterations = 15000;
    int burn_in = 5000;
    int imputations = 5;
    /// When every class is occupied after a z update, add `growth_step`
    /// empty classes (their parameters then come from the prior).
    bool grow_classes = true;
    int growth_step = 10;
    double alpha_shape = 0.25;
    double alpha_rate = 0.25;
};

struct DpmpmState {
    int classes = 0;
    std::vector<int> z;       // 0-based class per row
    std::vector<double> v;    // stick weights, v.back() == 1
    std::vector<double> pi;
    /// lambda[k * width + offset[j] + d - 1] = P(Y_j = d | class k)
    std::vector<double> lambda;
    double alpha = 1.0;
};

/// Truncated DP mixture of products of multinomials with missing cells
/// redrawn inside the sampler. One sweep updates z, lambda, V, alpha and
/// then the missing cells, in that order.
class DpmpmSampler {
public:
    DpmpmSampler(const IncompleteDataset& input, const DpmpmOptions& options, std::uint64_t seed);

    void sweep();

    const DpmpmState& state() const { return state_; }
    /// Current completed data.
    OrdinalDataset completed() const;
    std::vector<std::size_t> class_sizes() const;
    double lambda(int k, std::size_t j, int level) const {
        return state_.lambda[static_cast<std::size_t>(k) * width_ + offset_[j] + static_cast<std::size_t>(level - 1)];
    }
    /// Model probability of the joint cell {Y_j = d for (j, d) in cells}.
    double cell_probability(const std::vector<std::pair<std::size_t, int>>& cells) const;
    SweepTrace trace_row(int sweep) const;
    /// Throws SamplerError if a state invariant is violated.
    void check_invariants() const;

private:
    void update_z();
    void grow_if_full();
    void update_lambda();
    void update_missing();

    IncompleteDataset input_;
    DpmpmOptions options_;
    Rng rng_;
    std::size_t n_;
    std::size_t p_;
    std::vector<int> cards_;
    std::vector<std::size_t> offset_;
    std::size_t width_;
    std::vector<int> cells_;  // column-major completed data
    std::vector<std::size_t> missing_;  // flat i + j * n of masked cells
    DpmpmState state_;
};

/// Runs one chain for options.iterations sweeps and keeps the completed data
/// at the evenly spaced retained sweeps. Appends one trace row per sweep when
/// `trace` is given.
ImputationResult dpmpm_impute(const IncompleteDataset& input, const DpmpmOptions& options, std::uint64_t seed,
                              std::vector<SweepTrace>* trace = nullptr);

}  // namespace ordimpute

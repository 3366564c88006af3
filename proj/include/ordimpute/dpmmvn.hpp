#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "ordimpute/data.hpp"
#include "ordimpute/dirichlet_process.hpp"
#include "ordimpute/rng.hpp"

namespace ordimpute {

/// gamma_0 = -inf < gamma_1 < ... < gamma_D = +inf with gamma_d = Phi^-1(d/D).
std::vector<double> default_cutoffs(int levels);

/// The d with x in (cutoffs[d-1], cutoffs[d]].
int level_of(double x, std::span<const double> cutoffs);

/// Hyperprior constants. mu_k, Sigma_k ~ N(m, Vmat) x IW(nu, S);
/// m ~ N(a_m, B_m), Vmat ~ IW(a_V, B_V), S ~ W(a_S, B_S).
struct DpmmvnPrior {
    double nu = 0.0;
    Eigen::VectorXd a_m;
    Eigen::MatrixXd b_m;
    double a_v = 0.0;
    Eigen::MatrixXd b_v;
    double a_s = 0.0;
    Eigen::MatrixXd b_s;

    /// a_m = 0, B_m = 10 I, a_V = p + 2, B_V = I, a_S = p + 2,
    /// B_S = I / (p + 2), nu = p + 2.
    static DpmmvnPrior defaults(std::size_t p);
};

struct DpmmvnOptions {
    int initial_classes = 50;
    int iterations = 15000;
    int burn_in = 5000;
    int imputations = 5;
    bool grow_classes = true;
    int growth_step = 10;
    double alpha_shape = 0.25;
    double alpha_rate = 0.25;
    /// Unset means DpmmvnPrior::defaults(p).
    std::optional<DpmmvnPrior> prior;
    /// Per-variable cutoffs; empty means default_cutoffs for each variable.
    std::vector<std::vector<double>> cutoffs;
};

struct DpmmvnState {
    int classes = 0;
    std::vector<int> z;
    std::vector<double> v;
    std::vector<double> pi;
    double alpha = 1.0;
    Eigen::MatrixXd x;  // n x p latent values
    std::vector<Eigen::VectorXd> mu;
    std::vector<Eigen::MatrixXd> sigma;
    Eigen::VectorXd m;
    Eigen::MatrixXd vmat;
    Eigen::MatrixXd s;
};

/// Truncated DP mixture of multivariate normals on latent variables; each
/// ordinal level is the cutoff window its latent value falls in. One sweep
/// updates, in order: latents (coordinate-wise conditional normals,
/// truncated to the level window for observed cells), z, (mu_k, Sigma_k),
/// the hyperparameters m, Vmat, S, then V and alpha.
class DpmmvnSampler {
public:
    DpmmvnSampler(const IncompleteDataset& input, const DpmmvnOptions& options, std::uint64_t seed);

    void sweep();

    const DpmmvnState& state() const { return state_; }
    const std::vector<std::vector<double>>& cutoffs() const { return cutoffs_; }
    OrdinalDataset completed() const;
    std::vector<std::size_t> class_sizes() const;
    /// Model probability P(Y_j = d).
    double marginal_probability(std::size_t j, int level) const;
    SweepTrace trace_row(int sweep) const;
    /// Throws SamplerError when an invariant fails: SPD covariances, latent
    /// windows of observed cells, and the stick-breaking weights.
    void check_invariants() const;

private:
    struct ClassCache {
        Eigen::MatrixXd precision;
        Eigen::MatrixXd chol_inverse;  // lower triangular L^-1 with Sigma = LL'
        double log_det = 0.0;
    };

    void refresh_cache(std::size_t k);
    void update_latents();
    void update_z();
    void grow_if_full();
    void update_components();
    void update_hyperparameters();

    IncompleteDataset input_;
    DpmmvnOptions options_;
    DpmmvnPrior prior_;
    std::vector<std::vector<double>> cutoffs_;
    Rng rng_;
    std::size_t n_;
    std::size_t p_;
    std::vector<int> cells_;  // column-major completed levels
    DpmmvnState state_;
    std::vector<ClassCache> cache_;
};

ImputationResult dpmmvn_impute(const IncompleteDataset& input, const DpmmvnOptions& options, std::uint64_t seed,
                               std::vector<SweepTrace>* trace = nullptr);

}  // namespace ordimpute

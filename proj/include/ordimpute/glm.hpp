#pragma once

#include <Eigen/Dense>
#include <span>
#include <vector>

#include "ordimpute/rng.hpp"

namespace ordimpute {

/// Dummy (indicator) contrasts against level 1 for each predictor; output
/// width is sum_k (D_k - 1).
std::vector<double> encode_predictors(std::span<const int> levels, std::span<const int> cardinalities);
/// Row-wise encoding of an n x q level matrix (row-major levels).
Eigen::MatrixXd encode_predictor_rows(std::span<const int> levels, std::size_t n_rows,
                                      std::span<const int> cardinalities);

struct GlmFitOptions {
    /// L2 penalty on slope terms (intercepts / cutpoints are unpenalised).
    double ridge = 1e-4;
    double gradient_tolerance = 1e-6;
    int max_iterations = 200;
};

/// Baseline-category logit with level 1 as reference.
struct MultinomialLogitModel {
    int n_levels = 2;
    /// (D-1) x (1+q); row k holds the intercept and slopes for level k+2.
    Eigen::MatrixXd coefficients;
    /// Negative Hessian of the penalised log-likelihood at the optimum, in
    /// row-major parameter order of `coefficients`.
    Eigen::MatrixXd information;
    std::vector<double> loglik_trace;
    int iterations = 0;
    bool converged = false;

    std::vector<double> probabilities(std::span<const double> features) const;
    /// Copy with coefficients drawn from N(estimate, information^-1).
    MultinomialLogitModel draw_parameters(Rng& rng) const;
};

/// P(Y <= d | x) = logistic(cutpoint_d - x'slopes).
struct ProportionalOddsModel {
    std::vector<double> cutpoints;  // D-1, strictly increasing
    Eigen::VectorXd slopes;
    /// Negative Hessian in the unconstrained parameterisation
    /// (c_1, log(c_2 - c_1), ..., log(c_{D-1} - c_{D-2}), slopes).
    Eigen::MatrixXd information;
    std::vector<double> loglik_trace;
    int iterations = 0;
    bool converged = false;

    int n_levels() const { return static_cast<int>(cutpoints.size()) + 1; }
    std::vector<double> probabilities(std::span<const double> features) const;
    ProportionalOddsModel draw_parameters(Rng& rng) const;
};

/// Penalised Newton-Raphson with step halving; labels are levels 1..n_levels
/// and every level must occur at least once. Throws FitError on non-finite
/// likelihood or empty levels.
MultinomialLogitModel fit_multinomial(const Eigen::MatrixXd& features, std::span<const int> labels, int n_levels,
                                      const GlmFitOptions& options = {});

/// Cumulative-logit fit; cutpoint ordering is kept by the log-gap
/// parameterisation. Same error contract as fit_multinomial.
ProportionalOddsModel fit_polr(const Eigen::MatrixXd& features, std::span<const int> labels, int n_levels,
                               const GlmFitOptions& options = {});

/// Level in 1..D drawn from a probability vector.
int sample_level(std::span<const double> probabilities, Rng& rng);

/// Penalised log-likelihoods, exposed for optimiser tests.
double multinomial_loglik(const Eigen::MatrixXd& coefficients, const Eigen::MatrixXd& features,
                          std::span<const int> labels, double ridge);
double polr_loglik(std::span<const double> cutpoints, const Eigen::VectorXd& slopes, const Eigen::MatrixXd& features,
                   std::span<const int> labels, double ridge);

}  // namespace ordimpute

#pragma once

#include <Eigen/Dense>

#include "ordimpute/rng.hpp"

namespace ordimpute {

double normal_cdf(double x);
/// 1 - normal_cdf(x), accurate in the upper tail.
double normal_survival(double x);
double normal_quantile(double p);
/// Student-t quantile; an infinite dof gives the normal quantile.
double student_t_quantile(double p, double dof);

/// N(mean, sd^2) restricted to (lower, upper]; either bound may be infinite.
/// Accept-reject after Robert (1995): normal, uniform, or translated
/// exponential proposals depending on the standardized window.
/// Throws std::invalid_argument when lower >= upper or sd <= 0.
double sample_truncated_normal(double mean, double sd, double lower, double upper, Rng& rng);

/// Lower Cholesky factor; on failure retries once with 1e-8 added to the
/// diagonal, then throws SamplerError.
Eigen::MatrixXd cholesky_lower(const Eigen::MatrixXd& a);

/// Draw from N(mean, LL') given the lower factor L.
Eigen::VectorXd sample_mvn(const Eigen::VectorXd& mean, const Eigen::MatrixXd& chol_lower, Rng& rng);
/// N(P^-1 b, P^-1) from a precision matrix P and linear term b.
Eigen::VectorXd sample_mvn_canonical(const Eigen::MatrixXd& precision, const Eigen::VectorXd& linear, Rng& rng);

/// Wishart W(dof, scale) with mean dof * scale (Bartlett decomposition).
Eigen::MatrixXd sample_wishart(double dof, const Eigen::MatrixXd& scale, Rng& rng);
/// Inverse-Wishart IW(dof, scale) with mean scale / (dof - p - 1).
Eigen::MatrixXd sample_inverse_wishart(double dof, const Eigen::MatrixXd& scale, Rng& rng);

}  // namespace ordimpute

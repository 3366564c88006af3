#include "ordimpute/distributions.hpp"

#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "ordimpute/error.hpp"

namespace ordimpute {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;

// Standardized draw on (a, b] with a >= 0 (b may be +inf).
double tail_draw(double a, double b, Rng& rng) {
    const double root = std::sqrt(a * a + 4.0);
    const double lambda = 0.5 * (a + root);
    const bool use_exponential =
        !std::isfinite(b) || b - a > (2.0 / (a + root)) * std::exp(0.25 * (a * a - a * root) + 0.5);
    if (use_exponential) {
        if (a < 0.45 && !std::isfinite(b)) {
            for (;;) {
                const double z = rng.normal();
                if (z > a) return z;
            }
        }
        for (;;) {
            const double z = a + rng.exponential() / lambda;
            if (z > b) continue;
            const double d = z - lambda;
            if (rng.uniform() <= std::exp(-0.5 * d * d)) return z;
        }
    }
    for (;;) {
        const double z = a + (b - a) * rng.uniform();
        if (rng.uniform() <= std::exp(0.5 * (a * a - z * z))) return z;
    }
}

// Standardized draw on (a, b], any finite or infinite bounds.
double standard_draw(double a, double b, Rng& rng) {
    if (a >= 0.0) return tail_draw(a, b, rng);
    if (b <= 0.0) return -tail_draw(-b, -a, rng);
    // window straddles zero
    if (b - a > 2.5066282746310002) {
        for (;;) {
            const double z = rng.normal();
            if (z > a && z <= b) return z;
        }
    }
    for (;;) {
        const double z = a + (b - a) * rng.uniform();
        if (rng.uniform() <= std::exp(-0.5 * z * z)) return z;
    }
}

}  // namespace

double normal_cdf(double x) { return 0.5 * std::erfc(-x * kInvSqrt2); }

double normal_survival(double x) { return 0.5 * std::erfc(x * kInvSqrt2); }

double normal_quantile(double p) {
    if (p <= 0.0) return -std::numeric_limits<double>::infinity();
    if (p >= 1.0) return std::numeric_limits<double>::infinity();
    return boost::math::quantile(boost::math::normal_distribution<double>(), p);
}

double student_t_quantile(double p, double dof) {
    if (!(dof > 0.0)) throw std::invalid_argument("t quantile needs dof > 0");
    if (std::isinf(dof)) return normal_quantile(p);
    return boost::math::quantile(boost::math::students_t_distribution<double>(dof), p);
}

double sample_truncated_normal(double mean, double sd, double lower, double upper, Rng& rng) {
    if (!(sd > 0.0)) throw std::invalid_argument("truncated normal needs sd > 0");
    if (!(lower < upper)) throw std::invalid_argument("truncated normal needs lower < upper");
    const double a = (lower - mean) / sd;
    const double b = (upper - mean) / sd;
    double x = mean + sd * standard_draw(a, b, rng);
    // guard the half-open window against rounding in the back-transform
    if (x <= lower) x = std::nextafter(lower, upper);
    if (x > upper) x = upper;
    return x;
}

Eigen::MatrixXd cholesky_lower(const Eigen::MatrixXd& a) {
    Eigen::LLT<Eigen::MatrixXd> llt(a);
    if (llt.info() == Eigen::Success) return llt.matrixL();
    Eigen::MatrixXd jittered = a;
    jittered.diagonal().array() += 1e-8;
    llt.compute(jittered);
    if (llt.info() != Eigen::Success) throw SamplerError("covariance matrix is not positive definite");
    return llt.matrixL();
}

Eigen::VectorXd sample_mvn(const Eigen::VectorXd& mean, const Eigen::MatrixXd& chol_lower, Rng& rng) {
    Eigen::VectorXd z(mean.size());
    for (Eigen::Index k = 0; k < z.size(); ++k) z(k) = rng.normal();
    return mean + chol_lower * z;
}

Eigen::VectorXd sample_mvn_canonical(const Eigen::MatrixXd& precision, const Eigen::VectorXd& linear, Rng& rng) {
    const Eigen::MatrixXd l = cholesky_lower(precision);
    const Eigen::VectorXd mean = l.transpose().triangularView<Eigen::Upper>().solve(
        l.triangularView<Eigen::Lower>().solve(linear));
    Eigen::VectorXd z(linear.size());
    for (Eigen::Index k = 0; k < z.size(); ++k) z(k) = rng.normal();
    // P = LL', so L'^-1 z has covariance P^-1
    return mean + l.transpose().triangularView<Eigen::Upper>().solve(z);
}

Eigen::MatrixXd sample_wishart(double dof, const Eigen::MatrixXd& scale, Rng& rng) {
    const Eigen::Index p = scale.rows();
    if (!(dof > static_cast<double>(p) - 1.0)) throw std::invalid_argument("Wishart needs dof > p - 1");
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(p, p);
    for (Eigen::Index i = 0; i < p; ++i) {
        a(i, i) = std::sqrt(rng.chi_squared(dof - static_cast<double>(i)));
        for (Eigen::Index j = 0; j < i; ++j) a(i, j) = rng.normal();
    }
    const Eigen::MatrixXd la = cholesky_lower(scale) * a;
    Eigen::MatrixXd w = la * la.transpose();
    return 0.5 * (w + w.transpose());
}

Eigen::MatrixXd sample_inverse_wishart(double dof, const Eigen::MatrixXd& scale, Rng& rng) {
    const Eigen::Index p = scale.rows();
    const Eigen::MatrixXd scale_inv = cholesky_lower(scale).triangularView<Eigen::Lower>().solve(
        Eigen::MatrixXd::Identity(p, p));  // L^-1
    const Eigen::MatrixXd w = sample_wishart(dof, scale_inv.transpose() * scale_inv, rng);
    const Eigen::MatrixXd lw = cholesky_lower(w);
    const Eigen::MatrixXd lw_inv = lw.triangularView<Eigen::Lower>().solve(Eigen::MatrixXd::Identity(p, p));
    Eigen::MatrixXd out = lw_inv.transpose() * lw_inv;
    return 0.5 * (out + out.transpose());
}

}  // namespace ordimpute

#include "ordimpute/glm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "ordimpute/error.hpp"

namespace ordimpute {

namespace {

struct Evaluation {
    double loglik = 0.0;
    Eigen::VectorXd gradient;
    Eigen::MatrixXd information;  // PSD curvature, exact negative Hessian at the optimum
};

struct NewtonResult {
    Eigen::VectorXd params;
    Eigen::MatrixXd information;
    std::vector<double> trace;
    int iterations = 0;
    bool converged = false;
};

Eigen::LLT<Eigen::MatrixXd> robust_llt(Eigen::MatrixXd m) {
    Eigen::LLT<Eigen::MatrixXd> llt(m);
    double jitter = 1e-10 * std::max(1.0, m.diagonal().cwiseAbs().maxCoeff());
    for (int attempt = 0; llt.info() != Eigen::Success && attempt < 8; ++attempt) {
        m.diagonal().array() += jitter;
        jitter *= 100.0;
        llt.compute(m);
    }
    if (llt.info() != Eigen::Success) throw FitError("information matrix is not positive definite");
    return llt;
}

// Damped Newton ascent. Steps are halved until the objective does not
// decrease, so the recorded log-likelihood trace is non-decreasing.
template <class Evaluate, class Value>
NewtonResult newton_maximize(Eigen::VectorXd params, Evaluate evaluate, Value value, const GlmFitOptions& opt) {
    NewtonResult out;
    Evaluation ev = evaluate(params);
    if (!std::isfinite(ev.loglik)) throw FitError("non-finite log-likelihood at the starting point");
    out.trace.push_back(ev.loglik);
    for (int iter = 0; iter < opt.max_iterations; ++iter) {
        if (ev.gradient.norm() < opt.gradient_tolerance) {
            out.converged = true;
            break;
        }
        const Eigen::VectorXd step = robust_llt(ev.information).solve(ev.gradient);
        // Newton decrement at roundoff level: ill-conditioned fits otherwise
        // never get the gradient norm under the tolerance
        if (step.dot(ev.gradient) < 1e-12 * std::max(1.0, std::abs(ev.loglik))) {
            out.converged = true;
            break;
        }
        double scale = 1.0;
        bool moved = false;
        for (int halving = 0; halving < 40; ++halving, scale *= 0.5) {
            Eigen::VectorXd trial = params + scale * step;
            const double ll = value(trial);
            if (std::isfinite(ll) && ll >= ev.loglik) {
                params = std::move(trial);
                moved = true;
                break;
            }
        }
        out.iterations = iter + 1;
        if (!moved) {
            // No ascent left at double precision: accept as the optimum when
            // the Newton decrement is negligible.
            out.converged = step.dot(ev.gradient) < 1e-10 * std::max(1.0, std::abs(ev.loglik));
            break;
        }
        ev = evaluate(params);
        if (!std::isfinite(ev.loglik)) throw FitError("log-likelihood became non-finite");
        out.trace.push_back(ev.loglik);
    }
    if (!out.converged && ev.gradient.norm() < opt.gradient_tolerance) out.converged = true;
    out.params = std::move(params);
    out.information = std::move(ev.information);
    return out;
}

void check_labels(std::span<const int> labels, int n_levels, Eigen::Index n_rows) {
    if (n_levels < 2) throw FitError("need at least two response levels");
    if (labels.empty()) throw FitError("no training rows");
    if (static_cast<Eigen::Index>(labels.size()) != n_rows) throw FitError("labels and features disagree in length");
    std::vector<int> counts(static_cast<std::size_t>(n_levels), 0);
    for (int y : labels) {
        if (y < 1 || y > n_levels) throw FitError("label outside 1..D");
        ++counts[static_cast<std::size_t>(y - 1)];
    }
    for (int d = 0; d < n_levels; ++d) {
        if (counts[static_cast<std::size_t>(d)] == 0) {
            throw FitError("response level " + std::to_string(d + 1) + " has no observations");
        }
    }
}

Eigen::MatrixXd with_intercept(const Eigen::MatrixXd& features) {
    Eigen::MatrixXd x(features.rows(), features.cols() + 1);
    x.col(0).setOnes();
    x.rightCols(features.cols()) = features;
    return x;
}

Eigen::VectorXd draw_gaussian(const Eigen::VectorXd& mean, const Eigen::MatrixXd& information, Rng& rng) {
    auto llt = robust_llt(information);
    Eigen::VectorXd z(mean.size());
    for (Eigen::Index k = 0; k < z.size(); ++k) z[k] = rng.normal();
    // information = L L^T, so L^-T z has covariance information^-1.
    return mean + llt.matrixU().solve(z);
}

// ---- multinomial -----------------------------------------------------------

Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> as_coef(
    const Eigen::VectorXd& params, Eigen::Index rows, Eigen::Index cols) {
    return {params.data(), rows, cols};
}

double multinomial_value(const Eigen::MatrixXd& coef, const Eigen::MatrixXd& xt, std::span<const int> labels,
                         double ridge, Eigen::MatrixXd* probs) {
    const Eigen::MatrixXd eta = xt * coef.transpose();  // n x (D-1)
    double ll = 0.0;
    if (probs) probs->resize(eta.rows(), eta.cols());
    for (Eigen::Index i = 0; i < eta.rows(); ++i) {
        const double m = std::max(0.0, eta.row(i).maxCoeff());
        double denom = std::exp(-m);
        for (Eigen::Index k = 0; k < eta.cols(); ++k) denom += std::exp(eta(i, k) - m);
        const int y = labels[static_cast<std::size_t>(i)];
        ll += (y > 1 ? eta(i, y - 2) : 0.0) - m - std::log(denom);
        if (probs) {
            for (Eigen::Index k = 0; k < eta.cols(); ++k) (*probs)(i, k) = std::exp(eta(i, k) - m) / denom;
        }
    }
    ll -= 0.5 * ridge * coef.rightCols(coef.cols() - 1).squaredNorm();
    return ll;
}

// ---- proportional odds -----------------------------------------------------

struct Logistic {
    double F;   // cdf
    double f;   // density
    double df;  // derivative of density
};

Logistic logistic_at(double x) {
    if (x == std::numeric_limits<double>::infinity()) return {1.0, 0.0, 0.0};
    if (x == -std::numeric_limits<double>::infinity()) return {0.0, 0.0, 0.0};
    const double F = x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
    const double f = F * (1.0 - F);
    return {F, f, f * (1.0 - 2.0 * F)};
}

double logistic_cdf(double x) { return logistic_at(x).F; }

// P(l < Z <= u) for the standard logistic, evaluated on the side that
// avoids cancellation.
double interval_prob(double u, double l) {
    if (l > 0.0) return logistic_cdf(-l) - logistic_cdf(-u);
    return logistic_cdf(u) - logistic_cdf(l);
}

std::vector<double> cutpoints_from(const Eigen::VectorXd& a) {
    std::vector<double> theta(static_cast<std::size_t>(a.size()));
    theta[0] = a[0];
    for (Eigen::Index m = 1; m < a.size(); ++m) theta[static_cast<std::size_t>(m)] = theta[static_cast<std::size_t>(m - 1)] + std::exp(a[m]);
    return theta;
}

constexpr double kInf = std::numeric_limits<double>::infinity();

double polr_value(std::span<const double> theta, const Eigen::VectorXd& beta, const Eigen::MatrixXd& x,
                  std::span<const int> labels, double ridge) {
    const int D = static_cast<int>(theta.size()) + 1;
    const Eigen::VectorXd eta = x * beta;
    double ll = 0.0;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const int y = labels[static_cast<std::size_t>(i)];
        const double u = y < D ? theta[static_cast<std::size_t>(y - 1)] - eta[i] : kInf;
        const double l = y > 1 ? theta[static_cast<std::size_t>(y - 2)] - eta[i] : -kInf;
        ll += std::log(interval_prob(u, l));
    }
    return ll - 0.5 * ridge * beta.squaredNorm();
}

}  // namespace

std::vector<double> encode_predictors(std::span<const int> levels, std::span<const int> cardinalities) {
    std::vector<double> out;
    for (std::size_t k = 0; k < levels.size(); ++k) {
        for (int d = 2; d <= cardinalities[k]; ++d) out.push_back(levels[k] == d ? 1.0 : 0.0);
    }
    return out;
}

Eigen::MatrixXd encode_predictor_rows(std::span<const int> levels, std::size_t n_rows,
                                      std::span<const int> cardinalities) {
    const std::size_t q = cardinalities.size();
    Eigen::Index width = 0;
    for (int c : cardinalities) width += c - 1;
    Eigen::MatrixXd x = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n_rows), width);
    for (std::size_t i = 0; i < n_rows; ++i) {
        Eigen::Index offset = 0;
        for (std::size_t k = 0; k < q; ++k) {
            const int level = levels[i * q + k];
            if (level >= 2) x(static_cast<Eigen::Index>(i), offset + level - 2) = 1.0;
            offset += cardinalities[k] - 1;
        }
    }
    return x;
}

double multinomial_loglik(const Eigen::MatrixXd& coefficients, const Eigen::MatrixXd& features,
                          std::span<const int> labels, double ridge) {
    return multinomial_value(coefficients, with_intercept(features), labels, ridge, nullptr);
}

double polr_loglik(std::span<const double> cutpoints, const Eigen::VectorXd& slopes, const Eigen::MatrixXd& features,
                   std::span<const int> labels, double ridge) {
    return polr_value(cutpoints, slopes, features, labels, ridge);
}

std::vector<double> MultinomialLogitModel::probabilities(std::span<const double> features) const {
    std::vector<double> eta(static_cast<std::size_t>(n_levels), 0.0);
    for (int k = 1; k < n_levels; ++k) {
        double v = coefficients(k - 1, 0);
        for (std::size_t c = 0; c < features.size(); ++c) v += coefficients(k - 1, static_cast<Eigen::Index>(c + 1)) * features[c];
        eta[static_cast<std::size_t>(k)] = v;
    }
    const double m = *std::max_element(eta.begin(), eta.end());
    double total = 0.0;
    for (double& v : eta) {
        v = std::exp(v - m);
        total += v;
    }
    for (double& v : eta) v /= total;
    return eta;
}

MultinomialLogitModel MultinomialLogitModel::draw_parameters(Rng& rng) const {
    MultinomialLogitModel out = *this;
    Eigen::VectorXd flat(coefficients.size());
    for (Eigen::Index k = 0; k < coefficients.rows(); ++k) {
        for (Eigen::Index c = 0; c < coefficients.cols(); ++c) flat[k * coefficients.cols() + c] = coefficients(k, c);
    }
    const Eigen::VectorXd drawn = draw_gaussian(flat, information, rng);
    out.coefficients = as_coef(drawn, coefficients.rows(), coefficients.cols());
    return out;
}

MultinomialLogitModel fit_multinomial(const Eigen::MatrixXd& features, std::span<const int> labels, int n_levels,
                                      const GlmFitOptions& options) {
    check_labels(labels, n_levels, features.rows());
    if (!features.allFinite()) throw FitError("non-finite feature");
    const Eigen::MatrixXd xt = with_intercept(features);
    const Eigen::Index K = n_levels - 1;
    const Eigen::Index C = xt.cols();
    const double ridge = options.ridge;

    Eigen::VectorXd start = Eigen::VectorXd::Zero(K * C);
    {
        std::vector<double> counts(static_cast<std::size_t>(n_levels), 0.0);
        for (int y : labels) counts[static_cast<std::size_t>(y - 1)] += 1.0;
        for (Eigen::Index k = 0; k < K; ++k) start[k * C] = std::log(counts[static_cast<std::size_t>(k + 1)] / counts[0]);
    }

    Eigen::MatrixXd ymat = Eigen::MatrixXd::Zero(xt.rows(), K);
    for (Eigen::Index i = 0; i < xt.rows(); ++i) {
        const int y = labels[static_cast<std::size_t>(i)];
        if (y > 1) ymat(i, y - 2) = 1.0;
    }

    auto value = [&](const Eigen::VectorXd& p) {
        return multinomial_value(as_coef(p, K, C), xt, labels, ridge, nullptr);
    };
    auto evaluate = [&](const Eigen::VectorXd& p) {
        const Eigen::MatrixXd coef = as_coef(p, K, C);
        Eigen::MatrixXd probs;
        Evaluation ev;
        ev.loglik = multinomial_value(coef, xt, labels, ridge, &probs);
        const Eigen::MatrixXd grad = (ymat - probs).transpose() * xt;  // K x C
        ev.gradient.resize(K * C);
        ev.information.resize(K * C, K * C);
        for (Eigen::Index k = 0; k < K; ++k) {
            for (Eigen::Index c = 0; c < C; ++c) {
                ev.gradient[k * C + c] = grad(k, c) - (c > 0 ? ridge * coef(k, c) : 0.0);
            }
            for (Eigen::Index l = k; l < K; ++l) {
                Eigen::VectorXd w = (k == l) ? Eigen::VectorXd(probs.col(k).array() * (1.0 - probs.col(k).array()))
                                             : Eigen::VectorXd(-probs.col(k).array() * probs.col(l).array());
                const Eigen::MatrixXd block = xt.transpose() * w.asDiagonal() * xt;
                ev.information.block(k * C, l * C, C, C) = block;
                if (l != k) ev.information.block(l * C, k * C, C, C) = block.transpose();
            }
            for (Eigen::Index c = 1; c < C; ++c) ev.information(k * C + c, k * C + c) += ridge;
        }
        return ev;
    };

    NewtonResult res = newton_maximize(start, evaluate, value, options);
    MultinomialLogitModel model;
    model.n_levels = n_levels;
    model.coefficients = as_coef(res.params, K, C);
    model.information = std::move(res.information);
    model.loglik_trace = std::move(res.trace);
    model.iterations = res.iterations;
    model.converged = res.converged;
    return model;
}

std::vector<double> ProportionalOddsModel::probabilities(std::span<const double> features) const {
    double eta = 0.0;
    for (std::size_t c = 0; c < features.size(); ++c) eta += slopes[static_cast<Eigen::Index>(c)] * features[c];
    const int D = n_levels();
    std::vector<double> p(static_cast<std::size_t>(D));
    for (int d = 1; d <= D; ++d) {
        const double u = d < D ? cutpoints[static_cast<std::size_t>(d - 1)] - eta : kInf;
        const double l = d > 1 ? cutpoints[static_cast<std::size_t>(d - 2)] - eta : -kInf;
        p[static_cast<std::size_t>(d - 1)] = interval_prob(u, l);
    }
    return p;
}

ProportionalOddsModel ProportionalOddsModel::draw_parameters(Rng& rng) const {
    const Eigen::Index m = static_cast<Eigen::Index>(cutpoints.size());
    Eigen::VectorXd flat(m + slopes.size());
    flat[0] = cutpoints[0];
    for (Eigen::Index d = 1; d < m; ++d) {
        flat[d] = std::log(cutpoints[static_cast<std::size_t>(d)] - cutpoints[static_cast<std::size_t>(d - 1)]);
    }
    flat.tail(slopes.size()) = slopes;
    const Eigen::VectorXd drawn = draw_gaussian(flat, information, rng);
    ProportionalOddsModel out = *this;
    out.cutpoints = cutpoints_from(drawn.head(m));
    out.slopes = drawn.tail(slopes.size());
    return out;
}

ProportionalOddsModel fit_polr(const Eigen::MatrixXd& features, std::span<const int> labels, int n_levels,
                               const GlmFitOptions& options) {
    check_labels(labels, n_levels, features.rows());
    if (!features.allFinite()) throw FitError("non-finite feature");
    const Eigen::Index M = n_levels - 1;
    const Eigen::Index Q = features.cols();
    const Eigen::Index n = features.rows();
    const double ridge = options.ridge;
    const int D = n_levels;

    Eigen::VectorXd start = Eigen::VectorXd::Zero(M + Q);
    {
        std::vector<double> counts(static_cast<std::size_t>(D), 0.0);
        for (int y : labels) counts[static_cast<std::size_t>(y - 1)] += 1.0;
        double cum = 0.0;
        double prev = 0.0;
        for (Eigen::Index d = 0; d < M; ++d) {
            cum += counts[static_cast<std::size_t>(d)];
            const double c = (cum + 0.5) / (static_cast<double>(n) + 1.0);
            const double theta = std::log(c / (1.0 - c));
            start[d] = d == 0 ? theta : std::log(theta - prev);
            prev = theta;
        }
    }

    auto value = [&](const Eigen::VectorXd& p) {
        return polr_value(cutpoints_from(p.head(M)), p.tail(Q), features, labels, ridge);
    };
    auto evaluate = [&](const Eigen::VectorXd& p) {
        const std::vector<double> theta = cutpoints_from(p.head(M));
        const Eigen::VectorXd beta = p.tail(Q);
        const Eigen::VectorXd eta = features * beta;

        Evaluation ev;
        Eigen::VectorXd g_theta = Eigen::VectorXd::Zero(M);
        Eigen::VectorXd g_eta(n);
        Eigen::VectorXd w_eta(n);
        Eigen::MatrixXd w_theta_eta = Eigen::MatrixXd::Zero(n, M);
        Eigen::MatrixXd i_theta = Eigen::MatrixXd::Zero(M, M);
        double ll = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            const int y = labels[static_cast<std::size_t>(i)];
            const bool has_u = y < D;
            const bool has_l = y > 1;
            const double u = has_u ? theta[static_cast<std::size_t>(y - 1)] - eta[i] : kInf;
            const double l = has_l ? theta[static_cast<std::size_t>(y - 2)] - eta[i] : -kInf;
            const Logistic U = logistic_at(u);
            const Logistic Lo = logistic_at(l);
            const double P = interval_prob(u, l);
            ll += std::log(P);
            const double fd = U.f - Lo.f;
            const Eigen::Index iu = y - 1;
            const Eigen::Index il = y - 2;
            if (has_u) g_theta[iu] += U.f / P;
            if (has_l) g_theta[il] -= Lo.f / P;
            g_eta[i] = -fd / P;
            // Negative second derivatives.
            w_eta[i] = -((U.df - Lo.df) / P - fd * fd / (P * P));
            if (has_u) {
                i_theta(iu, iu) -= U.df / P - U.f * U.f / (P * P);
                w_theta_eta(i, iu) = -(-U.df / P + U.f * fd / (P * P));
            }
            if (has_l) {
                i_theta(il, il) -= -Lo.df / P - Lo.f * Lo.f / (P * P);
                w_theta_eta(i, il) = -(Lo.df / P - Lo.f * fd / (P * P));
            }
            if (has_u && has_l) {
                const double cross = U.f * Lo.f / (P * P);
                i_theta(iu, il) -= cross;
                i_theta(il, iu) -= cross;
            }
        }
        ev.loglik = ll - 0.5 * ridge * beta.squaredNorm();

        // Chain rule to the log-gap parameterisation.
        Eigen::MatrixXd J = Eigen::MatrixXd::Zero(M, M);
        for (Eigen::Index m = 0; m < M; ++m) {
            J(m, 0) = 1.0;
            for (Eigen::Index r = 1; r <= m; ++r) J(m, r) = std::exp(p[r]);
        }
        ev.gradient.resize(M + Q);
        ev.gradient.head(M) = J.transpose() * g_theta;
        ev.gradient.tail(Q) = features.transpose() * g_eta - ridge * beta;

        ev.information.resize(M + Q, M + Q);
        ev.information.topLeftCorner(M, M) = J.transpose() * i_theta * J;
        const Eigen::MatrixXd cross = J.transpose() * (w_theta_eta.transpose() * features);
        ev.information.topRightCorner(M, Q) = cross;
        ev.information.bottomLeftCorner(Q, M) = cross.transpose();
        ev.information.bottomRightCorner(Q, Q) = features.transpose() * w_eta.asDiagonal() * features;
        ev.information.bottomRightCorner(Q, Q).diagonal().array() += ridge;
        return ev;
    };

    NewtonResult res = newton_maximize(start, evaluate, value, options);
    ProportionalOddsModel model;
    model.cutpoints = cutpoints_from(res.params.head(M));
    model.slopes = res.params.tail(Q);
    model.information = std::move(res.information);
    model.loglik_trace = std::move(res.trace);
    model.iterations = res.iterations;
    model.converged = res.converged;
    return model;
}

int sample_level(std::span<const double> probabilities, Rng& rng) {
    return static_cast<int>(rng.categorical(probabilities)) + 1;
}

}  // namespace ordimpute

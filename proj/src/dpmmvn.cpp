#include "ordimpute/dpmmvn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "ordimpute/distributions.hpp"
#include "ordimpute/error.hpp"
#include "ordimpute/mice.hpp"

namespace ordimpute {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void validate(const DpmmvnOptions& o, const std::vector<VariableSpec>& vars) {
    if (o.initial_classes < 1) throw ConfigError("DPMMVN needs at least one class");
    if (o.growth_step < 1) throw ConfigError("growth_step must be >= 1");
    if (!(o.alpha_shape > 0.0) || !(o.alpha_rate > 0.0)) throw ConfigError("alpha prior must be positive");
    retained_sweeps(o.iterations, o.burn_in, o.imputations);
    if (!o.cutoffs.empty()) {
        if (o.cutoffs.size() != vars.size()) throw ConfigError("need one cutoff vector per variable");
        for (std::size_t j = 0; j < vars.size(); ++j) {
            const auto& c = o.cutoffs[j];
            if (c.size() != static_cast<std::size_t>(vars[j].cardinality) + 1 || c.front() != -kInf || c.back() != kInf) {
                throw ConfigError("cutoffs for '" + vars[j].name + "' must run from -inf to +inf with D+1 entries");
            }
            for (std::size_t d = 1; d < c.size(); ++d) {
                if (!(c[d - 1] < c[d])) throw ConfigError("cutoffs for '" + vars[j].name + "' must increase");
            }
        }
    }
    if (o.prior) {
        const auto p = static_cast<Eigen::Index>(vars.size());
        const auto& pr = *o.prior;
        if (pr.a_m.size() != p || pr.b_m.rows() != p || pr.b_v.rows() != p || pr.b_s.rows() != p) {
            throw ConfigError("DPMMVN prior dimensions do not match the data");
        }
        if (!(pr.nu > static_cast<double>(p) - 1) || !(pr.a_v > static_cast<double>(p) - 1) ||
            !(pr.a_s > static_cast<double>(p) - 1)) {
            throw ConfigError("DPMMVN prior degrees of freedom must exceed p - 1");
        }
    }
}

Eigen::MatrixXd symmetric_inverse(const Eigen::MatrixXd& a) {
    const Eigen::MatrixXd l = cholesky_lower(a);
    const Eigen::MatrixXd li = l.triangularView<Eigen::Lower>().solve(Eigen::MatrixXd::Identity(a.rows(), a.cols()));
    Eigen::MatrixXd inv = li.transpose() * li;
    return 0.5 * (inv + inv.transpose());
}

}  // namespace

std::vector<double> default_cutoffs(int levels) {
    std::vector<double> c{-kInf};
    for (int d = 1; d < levels; ++d) c.push_back(normal_quantile(static_cast<double>(d) / levels));
    c.push_back(kInf);
    return c;
}

int level_of(double x, std::span<const double> cutoffs) {
    const int levels = static_cast<int>(cutoffs.size()) - 1;
    for (int d = 1; d < levels; ++d) {
        if (x <= cutoffs[static_cast<std::size_t>(d)]) return d;
    }
    return levels;
}

DpmmvnPrior DpmmvnPrior::defaults(std::size_t p) {
    const auto q = static_cast<Eigen::Index>(p);
    const double dof = static_cast<double>(p) + 2.0;
    DpmmvnPrior pr;
    pr.nu = dof;
    pr.a_m = Eigen::VectorXd::Zero(q);
    pr.b_m = 10.0 * Eigen::MatrixXd::Identity(q, q);
    pr.a_v = dof;
    pr.b_v = Eigen::MatrixXd::Identity(q, q);
    pr.a_s = dof;
    pr.b_s = Eigen::MatrixXd::Identity(q, q) / dof;
    return pr;
}

DpmmvnSampler::DpmmvnSampler(const IncompleteDataset& input, const DpmmvnOptions& options, std::uint64_t seed)
    : input_(input), options_(options), rng_(Rng::derive(seed, {1})), n_(input.rows()), p_(input.cols()) {
    validate(options_, input.variables());
    prior_ = options_.prior ? *options_.prior : DpmmvnPrior::defaults(p_);
    if (options_.cutoffs.empty()) {
        for (const auto& v : input.variables()) cutoffs_.push_back(default_cutoffs(v.cardinality));
    } else {
        cutoffs_ = options_.cutoffs;
    }
    cells_ = initialize_missing(input, Initializer::Marginal, Rng::derive(seed, {0})).cells();

    const auto q = static_cast<Eigen::Index>(p_);
    state_.x.resize(static_cast<Eigen::Index>(n_), q);
    for (std::size_t j = 0; j < p_; ++j) {
        for (std::size_t i = 0; i < n_; ++i) {
            const auto d = static_cast<std::size_t>(cells_[j * n_ + i]);
            state_.x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                sample_truncated_normal(0.0, 1.0, cutoffs_[j][d - 1], cutoffs_[j][d], rng_);
        }
    }
    state_.m = prior_.a_m;
    state_.vmat = Eigen::MatrixXd::Identity(q, q);
    state_.s = Eigen::MatrixXd::Identity(q, q);
    const int k_max = options_.initial_classes;
    state_.classes = k_max;
    state_.alpha = 1.0;
    state_.v.assign(static_cast<std::size_t>(k_max), 1.0);
    for (int k = 0; k + 1 < k_max; ++k) state_.v[static_cast<std::size_t>(k)] = std::min(rng_.beta(1.0, state_.alpha), 1.0 - 1e-12);
    state_.pi = stick_break(state_.v);
    const Eigen::MatrixXd lv = cholesky_lower(state_.vmat);
    for (int k = 0; k < k_max; ++k) {
        state_.mu.push_back(sample_mvn(state_.m, lv, rng_));
        state_.sigma.push_back(state_.s);
    }
    cache_.resize(static_cast<std::size_t>(k_max));
    for (std::size_t k = 0; k < cache_.size(); ++k) refresh_cache(k);
    // every row starts in the first class
    state_.z.assign(n_, 0);
}

void DpmmvnSampler::refresh_cache(std::size_t k) {
    const Eigen::MatrixXd l = cholesky_lower(state_.sigma[k]);
    auto& c = cache_[k];
    const auto q = static_cast<Eigen::Index>(p_);
    c.chol_inverse = l.triangularView<Eigen::Lower>().solve(Eigen::MatrixXd::Identity(q, q));
    c.precision = c.chol_inverse.transpose() * c.chol_inverse;
    c.log_det = 2.0 * l.diagonal().array().log().sum();
}

void DpmmvnSampler::update_latents() {
    for (std::size_t i = 0; i < n_; ++i) {
        const auto ii = static_cast<Eigen::Index>(i);
        const auto k = static_cast<std::size_t>(state_.z[i]);
        const Eigen::MatrixXd& prec = cache_[k].precision;
        const Eigen::VectorXd& mu = state_.mu[k];
        for (std::size_t j = 0; j < p_; ++j) {
            const auto jj = static_cast<Eigen::Index>(j);
            double shift = 0.0;
            for (Eigen::Index l = 0; l < static_cast<Eigen::Index>(p_); ++l) {
                if (l != jj) shift += prec(jj, l) * (state_.x(ii, l) - mu(l));
            }
            const double var = 1.0 / prec(jj, jj);
            const double mean = mu(jj) - var * shift;
            const double sd = std::sqrt(var);
            if (input_.mask().missing(i, j)) {
                const double x = mean + sd * rng_.normal();
                state_.x(ii, jj) = x;
                cells_[j * n_ + i] = level_of(x, cutoffs_[j]);
            } else {
                const auto d = static_cast<std::size_t>(cells_[j * n_ + i]);
                state_.x(ii, jj) = sample_truncated_normal(mean, sd, cutoffs_[j][d - 1], cutoffs_[j][d], rng_);
            }
        }
    }
}

void DpmmvnSampler::update_z() {
    const std::size_t k_max = static_cast<std::size_t>(state_.classes);
    std::vector<double> base(k_max);
    for (std::size_t k = 0; k < k_max; ++k) base[k] = std::log(state_.pi[k]) - 0.5 * cache_[k].log_det;
    // log weights, one column per class: ||L^-1 (x_i - mu_k)||^2 through one
    // product per class
    const auto n = static_cast<Eigen::Index>(n_);
    Eigen::MatrixXd logw(static_cast<Eigen::Index>(k_max), n);
    Eigen::MatrixXd centred(n, static_cast<Eigen::Index>(p_));
    for (std::size_t k = 0; k < k_max; ++k) {
        const auto kk = static_cast<Eigen::Index>(k);
        if (state_.pi[k] <= 0.0) {
            logw.row(kk).setConstant(-kInf);
            continue;
        }
        centred = state_.x.rowwise() - state_.mu[k].transpose();
        const Eigen::MatrixXd y = centred * cache_[k].chol_inverse.transpose();
        logw.row(kk) = (base[k] - 0.5 * y.rowwise().squaredNorm().array()).matrix().transpose();
    }
    std::vector<double> w(k_max);
    for (std::size_t i = 0; i < n_; ++i) {
        const auto ii = static_cast<Eigen::Index>(i);
        const double top = logw.col(ii).maxCoeff();
        if (!std::isfinite(top)) throw SamplerError("DPMMVN: row has zero density under every class");
        for (std::size_t k = 0; k < k_max; ++k) {
            const double d = logw(static_cast<Eigen::Index>(k), ii) - top;
            w[k] = d < -745.0 ? 0.0 : std::exp(d);
        }
        state_.z[i] = static_cast<int>(rng_.categorical(w));
    }
}

std::vector<std::size_t> DpmmvnSampler::class_sizes() const {
    std::vector<std::size_t> sizes(static_cast<std::size_t>(state_.classes), 0);
    for (int z : state_.z) ++sizes[static_cast<std::size_t>(z)];
    return sizes;
}

void DpmmvnSampler::grow_if_full() {
    if (!options_.grow_classes) return;
    if (occupied_classes(class_sizes()) < state_.classes) return;
    // new classes are empty; update_components draws them from the prior
    for (int g = 0; g < options_.growth_step; ++g) {
        state_.mu.push_back(state_.m);
        state_.sigma.push_back(state_.s);
    }
    state_.classes += options_.growth_step;
    cache_.resize(static_cast<std::size_t>(state_.classes));
}

void DpmmvnSampler::update_components() {
    const auto q = static_cast<Eigen::Index>(p_);
    const std::size_t k_max = static_cast<std::size_t>(state_.classes);
    std::vector<std::size_t> size(k_max, 0);
    std::vector<Eigen::VectorXd> sum(k_max, Eigen::VectorXd::Zero(q));
    std::vector<Eigen::MatrixXd> outer(k_max, Eigen::MatrixXd::Zero(q, q));
    for (std::size_t i = 0; i < n_; ++i) {
        const auto k = static_cast<std::size_t>(state_.z[i]);
        const Eigen::VectorXd xi = state_.x.row(static_cast<Eigen::Index>(i)).transpose();
        ++size[k];
        sum[k] += xi;
        outer[k].noalias() += xi * xi.transpose();
    }
    const Eigen::MatrixXd v_inv = symmetric_inverse(state_.vmat);
    const Eigen::VectorXd v_inv_m = v_inv * state_.m;
    for (std::size_t k = 0; k < k_max; ++k) {
        const double nk = static_cast<double>(size[k]);
        // mu_k | Sigma_k: precision Vmat^-1 + n_k Sigma_k^-1
        Eigen::MatrixXd precision = v_inv;
        Eigen::VectorXd linear = v_inv_m;
        if (size[k] > 0) {
            precision += nk * cache_[k].precision;
            linear += cache_[k].precision * sum[k];
        }
        state_.mu[k] = sample_mvn_canonical(precision, linear, rng_);
        // Sigma_k | mu_k ~ IW(nu + n_k, S + scatter about mu_k)
        const Eigen::VectorXd& mu = state_.mu[k];
        Eigen::MatrixXd scale = state_.s;
        if (size[k] > 0) {
            scale += outer[k] - mu * sum[k].transpose() - sum[k] * mu.transpose() + nk * mu * mu.transpose();
        }
        scale = 0.5 * (scale + scale.transpose());
        state_.sigma[k] = sample_inverse_wishart(prior_.nu + nk, scale, rng_);
        refresh_cache(k);
    }
}

void DpmmvnSampler::update_hyperparameters() {
    const auto q = static_cast<Eigen::Index>(p_);
    const double k_count = static_cast<double>(state_.classes);
    const Eigen::MatrixXd bm_inv = symmetric_inverse(prior_.b_m);
    const Eigen::MatrixXd v_inv = symmetric_inverse(state_.vmat);
    Eigen::VectorXd mu_sum = Eigen::VectorXd::Zero(q);
    for (const auto& mu : state_.mu) mu_sum += mu;
    state_.m = sample_mvn_canonical(bm_inv + k_count * v_inv, bm_inv * prior_.a_m + v_inv * mu_sum, rng_);

    Eigen::MatrixXd spread = prior_.b_v;
    for (const auto& mu : state_.mu) spread += (mu - state_.m) * (mu - state_.m).transpose();
    state_.vmat = sample_inverse_wishart(prior_.a_v + k_count, 0.5 * (spread + spread.transpose()), rng_);

    Eigen::MatrixXd precision_sum = symmetric_inverse(prior_.b_s);
    for (const auto& c : cache_) precision_sum += c.precision;
    state_.s = sample_wishart(prior_.a_s + k_count * prior_.nu, symmetric_inverse(precision_sum), rng_);
}

void DpmmvnSampler::sweep() {
    update_latents();
    update_z();
    grow_if_full();
    update_components();
    update_hyperparameters();
    update_sticks(class_sizes(), state_.alpha, rng_, state_.v);
    state_.alpha = update_alpha(state_.v, options_.alpha_shape, options_.alpha_rate, rng_);
    state_.pi = stick_break(state_.v);
#ifndef NDEBUG
    check_invariants();
#endif
}

OrdinalDataset DpmmvnSampler::completed() const { return OrdinalDataset(input_.variables(), n_, cells_); }

double DpmmvnSampler::marginal_probability(std::size_t j, int level) const {
    const auto jj = static_cast<Eigen::Index>(j);
    const auto d = static_cast<std::size_t>(level);
    double total = 0.0;
    for (std::size_t k = 0; k < static_cast<std::size_t>(state_.classes); ++k) {
        const double sd = std::sqrt(state_.sigma[k](jj, jj));
        const double mu = state_.mu[k](jj);
        const double hi = cutoffs_[j][d];
        const double lo = cutoffs_[j][d - 1];
        const double mass = (std::isinf(hi) ? 1.0 : normal_cdf((hi - mu) / sd)) -
                            (std::isinf(lo) ? 0.0 : normal_cdf((lo - mu) / sd));
        total += state_.pi[k] * mass;
    }
    return total;
}

SweepTrace DpmmvnSampler::trace_row(int sweep) const {
    SweepTrace row;
    row.sweep = sweep;
    row.classes = state_.classes;
    row.occupied = occupied_classes(class_sizes());
    row.alpha = state_.alpha;
    for (std::size_t j = 0; j < p_; ++j) row.marginals.push_back(marginal_probability(j, 1));
    return row;
}

void DpmmvnSampler::check_invariants() const {
    const auto fail = [](const std::string& what) { throw SamplerError("DPMMVN invariant violated: " + what); };
    const auto spd = [](const Eigen::MatrixXd& a) { return Eigen::LLT<Eigen::MatrixXd>(a).info() == Eigen::Success; };
    for (const auto& s : state_.sigma) {
        if (!spd(s)) fail("Sigma_k SPD");
    }
    if (!spd(state_.vmat)) fail("Vmat SPD");
    if (!spd(state_.s)) fail("S SPD");
    if (!(state_.alpha > 0.0)) fail("alpha > 0");
    double sum = 0.0;
    for (double w : state_.pi) sum += w;
    if (std::abs(sum - 1.0) > 1e-10) fail("pi sums to 1");
    for (std::size_t j = 0; j < p_; ++j) {
        for (std::size_t i = 0; i < n_; ++i) {
            const auto d = static_cast<std::size_t>(cells_[j * n_ + i]);
            const double x = state_.x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
            if (!(x > cutoffs_[j][d - 1] && x <= cutoffs_[j][d])) {
                fail("latent window for row " + std::to_string(i) + ", variable " + std::to_string(j));
            }
        }
    }
}

ImputationResult dpmmvn_impute(const IncompleteDataset& input, const DpmmvnOptions& options, std::uint64_t seed,
                               std::vector<SweepTrace>* trace) {
    validate(options, input.variables());
    require_observed_values(input);
    ImputationResult result;
    result.method = "DPMMVN";
    result.seed = seed;
    if (!input.mask().any()) {
        result.completed.assign(static_cast<std::size_t>(options.imputations), input.data());
        return result;
    }
    const auto keep = retained_sweeps(options.iterations, options.burn_in, options.imputations);
    DpmmvnSampler sampler(input, options, seed);
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

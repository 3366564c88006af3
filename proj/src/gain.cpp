#include "ordimpute/gain.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "ordimpute/error.hpp"
#include "ordimpute/mice.hpp"

namespace ordimpute {

namespace {

constexpr double kClamp = 1e-7;

bool clamped(double p) { return p < kClamp || p > 1.0 - kClamp; }

// Per-variable indicators widened to the one-hot layout.
Eigen::MatrixXd widen(const Eigen::MatrixXd& m, const GainEncoding& enc) {
    Eigen::MatrixXd out(m.rows(), enc.width);
    for (std::size_t j = 0; j < enc.cardinalities.size(); ++j) {
        for (int d = 0; d < enc.cardinalities[j]; ++d) out.col(enc.offsets[j] + d) = m.col(static_cast<Eigen::Index>(j));
    }
    return out;
}

Eigen::MatrixXd hcat(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    Eigen::MatrixXd out(a.rows(), a.cols() + b.cols());
    out << a, b;
    return out;
}

GainBatch take_rows(const Eigen::MatrixXd& y, const Eigen::MatrixXd& m, std::span<const std::size_t> rows) {
    GainBatch b;
    const auto r = static_cast<Eigen::Index>(rows.size());
    b.y.resize(r, y.cols());
    b.m.resize(r, m.cols());
    for (Eigen::Index k = 0; k < r; ++k) {
        b.y.row(k) = y.row(static_cast<Eigen::Index>(rows[static_cast<std::size_t>(k)]));
        b.m.row(k) = m.row(static_cast<Eigen::Index>(rows[static_cast<std::size_t>(k)]));
    }
    return b;
}

Eigen::MatrixXd uniform_noise(Eigen::Index rows, Eigen::Index cols, double scale, Rng& rng) {
    Eigen::MatrixXd z(rows, cols);
    for (Eigen::Index c = 0; c < cols; ++c) {
        for (Eigen::Index r = 0; r < rows; ++r) z(r, c) = scale * rng.uniform();
    }
    return z;
}

}  // namespace

GainEncoding::GainEncoding(std::vector<int> cards) : cardinalities(std::move(cards)) {
    for (int d : cardinalities) {
        offsets.push_back(width);
        width += d;
    }
}

Eigen::MatrixXd GainEncoding::encode(const IncompleteDataset& data) const {
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(data.rows()), width);
    for (std::size_t j = 0; j < cardinalities.size(); ++j) {
        for (std::size_t i = 0; i < data.rows(); ++i) {
            if (data.mask().missing(i, j)) continue;
            out(static_cast<Eigen::Index>(i), offsets[j] + data.data().at(i, j) - 1) = 1.0;
        }
    }
    return out;
}

Eigen::MatrixXd GainEncoding::encode(const OrdinalDataset& data) const { return encode(IncompleteDataset(data)); }

OrdinalDataset GainEncoding::decode(const Eigen::MatrixXd& encoded, const std::vector<VariableSpec>& variables) const {
    const auto n = static_cast<std::size_t>(encoded.rows());
    std::vector<int> cells(n * cardinalities.size());
    for (std::size_t j = 0; j < cardinalities.size(); ++j) {
        for (std::size_t i = 0; i < n; ++i) {
            Eigen::Index best = 0;
            encoded.row(static_cast<Eigen::Index>(i)).segment(offsets[j], cardinalities[j]).maxCoeff(&best);
            cells[j * n + i] = static_cast<int>(best) + 1;
        }
    }
    return OrdinalDataset(variables, n, std::move(cells));
}

Eigen::MatrixXd GainEncoding::observed_indicator(const IncompleteDataset& data) {
    Eigen::MatrixXd m(static_cast<Eigen::Index>(data.rows()), static_cast<Eigen::Index>(data.cols()));
    for (std::size_t j = 0; j < data.cols(); ++j) {
        for (std::size_t i = 0; i < data.rows(); ++i) {
            m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = data.mask().missing(i, j) ? 0.0 : 1.0;
        }
    }
    return m;
}

Mlp::Mlp(int in, int hidden, int out, Rng& rng) {
    // Xavier-style normal init, biases zero
    const auto init = [&rng](int rows, int cols) {
        Eigen::MatrixXd w(rows, cols);
        const double sd = 1.0 / std::sqrt(rows / 2.0);
        for (Eigen::Index c = 0; c < cols; ++c) {
            for (Eigen::Index r = 0; r < rows; ++r) w(r, c) = sd * rng.normal();
        }
        return w;
    };
    w1 = init(in, hidden);
    w2 = init(hidden, hidden);
    w3 = init(hidden, out);
    b1 = Eigen::RowVectorXd::Zero(hidden);
    b2 = Eigen::RowVectorXd::Zero(hidden);
    b3 = Eigen::RowVectorXd::Zero(out);
}

Eigen::MatrixXd Mlp::forward(const Eigen::MatrixXd& x, Cache* cache) const {
    Eigen::MatrixXd h1 = ((x * w1).rowwise() + b1).array().tanh().matrix();
    Eigen::MatrixXd h2 = ((h1 * w2).rowwise() + b2).array().tanh().matrix();
    Eigen::MatrixXd out = (h2 * w3).rowwise() + b3;
    if (cache) {
        cache->input = x;
        cache->h1 = std::move(h1);
        cache->h2 = std::move(h2);
    }
    return out;
}

Eigen::VectorXd Mlp::backward(const Cache& c, const Eigen::MatrixXd& d_out, Eigen::MatrixXd* d_input) const {
    const Eigen::MatrixXd gw3 = c.h2.transpose() * d_out;
    const Eigen::RowVectorXd gb3 = d_out.colwise().sum();
    const Eigen::MatrixXd dz2 = ((d_out * w3.transpose()).array() * (1.0 - c.h2.array().square())).matrix();
    const Eigen::MatrixXd gw2 = c.h1.transpose() * dz2;
    const Eigen::RowVectorXd gb2 = dz2.colwise().sum();
    const Eigen::MatrixXd dz1 = ((dz2 * w2.transpose()).array() * (1.0 - c.h1.array().square())).matrix();
    const Eigen::MatrixXd gw1 = c.input.transpose() * dz1;
    const Eigen::RowVectorXd gb1 = dz1.colwise().sum();
    if (d_input) *d_input = dz1 * w1.transpose();

    Mlp g;
    g.w1 = gw1;
    g.w2 = gw2;
    g.w3 = gw3;
    g.b1 = gb1;
    g.b2 = gb2;
    g.b3 = gb3;
    return g.parameters();
}

Eigen::Index Mlp::size() const { return w1.size() + w2.size() + w3.size() + b1.size() + b2.size() + b3.size(); }

Eigen::VectorXd Mlp::parameters() const {
    Eigen::VectorXd theta(size());
    Eigen::Index at = 0;
    for (const Eigen::MatrixXd* w : {&w1, &w2, &w3}) {
        theta.segment(at, w->size()) = Eigen::Map<const Eigen::VectorXd>(w->data(), w->size());
        at += w->size();
    }
    for (const Eigen::RowVectorXd* b : {&b1, &b2, &b3}) {
        theta.segment(at, b->size()) = b->transpose();
        at += b->size();
    }
    return theta;
}

void Mlp::set_parameters(const Eigen::VectorXd& theta) {
    if (theta.size() != size()) throw std::invalid_argument("parameter vector has the wrong length");
    Eigen::Index at = 0;
    for (Eigen::MatrixXd* w : {&w1, &w2, &w3}) {
        Eigen::Map<Eigen::VectorXd>(w->data(), w->size()) = theta.segment(at, w->size());
        at += w->size();
    }
    for (Eigen::RowVectorXd* b : {&b1, &b2, &b3}) {
        *b = theta.segment(at, b->size()).transpose();
        at += b->size();
    }
}

double clamp_probability(double p) { return std::clamp(p, kClamp, 1.0 - kClamp); }

double discriminator_loss(const Eigen::MatrixXd& m, const Eigen::MatrixXd& m_hat) {
    double loss = 0.0;
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
        for (Eigen::Index r = 0; r < m.rows(); ++r) {
            const double p = clamp_probability(m_hat(r, c));
            loss -= m(r, c) * std::log(p) + (1.0 - m(r, c)) * std::log(1.0 - p);
        }
    }
    return loss;
}

GeneratorLosses generator_losses(const Eigen::MatrixXd& m, const Eigen::MatrixXd& m_hat, const Eigen::MatrixXd& y_bar,
                                 const Eigen::MatrixXd& y, const GainEncoding& enc,
                                 const std::vector<double>& weights) {
    GeneratorLosses out;
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
        const auto j = static_cast<std::size_t>(c);
        for (Eigen::Index r = 0; r < m.rows(); ++r) {
            out.adversarial -= (1.0 - m(r, c)) * std::log(clamp_probability(m_hat(r, c)));
            if (m(r, c) == 0.0) continue;
            double ce = 0.0;
            for (int d = 0; d < enc.cardinalities[j]; ++d) {
                const Eigen::Index k = enc.offsets[j] + d;
                if (y(r, k) != 0.0) ce -= y(r, k) * std::log(clamp_probability(y_bar(r, k)));
            }
            out.reconstruction += m(r, c) * weights[j] * ce;
        }
    }
    return out;
}

Eigen::MatrixXd make_hint(const Eigen::MatrixXd& m, double hint_rate, Rng& rng) {
    if (!(hint_rate >= 0.0 && hint_rate <= 1.0)) throw ConfigError("hint_rate must be in [0, 1]");
    Eigen::MatrixXd h = Eigen::MatrixXd::Zero(m.rows(), m.cols());
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
        for (Eigen::Index r = 0; r < m.rows(); ++r) {
            if (m(r, c) != 0.0 && rng.uniform() < hint_rate) h(r, c) = 1.0;
        }
    }
    return h;
}

Eigen::MatrixXd block_softmax(const Eigen::MatrixXd& logits, const GainEncoding& enc) {
    Eigen::MatrixXd out(logits.rows(), logits.cols());
    for (std::size_t j = 0; j < enc.cardinalities.size(); ++j) {
        const auto block = logits.middleCols(enc.offsets[j], enc.cardinalities[j]);
        Eigen::MatrixXd e = (block.colwise() - block.rowwise().maxCoeff()).array().exp().matrix();
        const Eigen::VectorXd total = e.rowwise().sum();
        out.middleCols(enc.offsets[j], enc.cardinalities[j]) = e.array().colwise() / total.array();
    }
    return out;
}

GainForward gain_forward(const GainNets& nets, const GainBatch& batch) {
    const auto& enc = nets.encoding;
    const Eigen::MatrixXd mw = widen(batch.m, enc);
    const Eigen::MatrixXd filled = (mw.array() * batch.y.array() + (1.0 - mw.array()) * batch.noise.array()).matrix();
    GainForward f;
    f.y_bar = block_softmax(nets.generator.forward(hcat(filled, batch.m), &f.g_cache), enc);
    f.y_hat = (mw.array() * batch.y.array() + (1.0 - mw.array()) * f.y_bar.array()).matrix();
    const Eigen::MatrixXd logits = nets.discriminator.forward(hcat(f.y_hat, batch.hint), &f.d_cache);
    f.m_hat = (1.0 / (1.0 + (-logits.array()).exp())).matrix();
    return f;
}

GainGradients gain_gradients(const GainNets& nets, const GainBatch& batch, double g_weight, double m_weight) {
    const auto& enc = nets.encoding;
    const GainForward f = gain_forward(nets, batch);
    const Eigen::Index rows = batch.m.rows();
    const Eigen::Index p = batch.m.cols();

    // sigmoid + cross-entropy; zero slope where the clamp is active
    Eigen::MatrixXd d_disc(rows, p), d_adv(rows, p);
    for (Eigen::Index c = 0; c < p; ++c) {
        for (Eigen::Index r = 0; r < rows; ++r) {
            const double q = f.m_hat(r, c);
            const double m = batch.m(r, c);
            d_disc(r, c) = clamped(q) ? 0.0 : q - m;
            d_adv(r, c) = clamped(q) ? 0.0 : -(1.0 - m) * (1.0 - q);
        }
    }
    GainGradients g;
    g.discriminator = nets.discriminator.backward(f.d_cache, d_disc);

    Eigen::MatrixXd d_input;
    nets.discriminator.backward(f.d_cache, g_weight * d_adv, &d_input);
    const Eigen::MatrixXd mw = widen(batch.m, enc);
    // d loss / d y_bar: adversarial part reaches only the imputed blocks
    Eigen::MatrixXd d_ybar = ((1.0 - mw.array()) * d_input.leftCols(enc.width).array()).matrix();
    for (std::size_t j = 0; j < enc.cardinalities.size(); ++j) {
        const double w = m_weight * nets.weights[j];
        for (Eigen::Index r = 0; r < rows; ++r) {
            const double m = batch.m(r, static_cast<Eigen::Index>(j));
            if (m == 0.0) continue;
            for (int d = 0; d < enc.cardinalities[j]; ++d) {
                const Eigen::Index k = enc.offsets[j] + d;
                const double y = batch.y(r, k);
                if (y != 0.0 && !clamped(f.y_bar(r, k))) d_ybar(r, k) -= w * m * y / f.y_bar(r, k);
            }
        }
    }
    // through the block softmax
    Eigen::MatrixXd d_logits(rows, enc.width);
    for (std::size_t j = 0; j < enc.cardinalities.size(); ++j) {
        const Eigen::Index o = enc.offsets[j];
        const Eigen::Index width = enc.cardinalities[j];
        const Eigen::VectorXd dot =
            (f.y_bar.middleCols(o, width).array() * d_ybar.middleCols(o, width).array()).rowwise().sum();
        d_logits.middleCols(o, width) =
            (f.y_bar.middleCols(o, width).array() * (d_ybar.middleCols(o, width).colwise() - dot).array()).matrix();
    }
    g.generator = nets.generator.backward(f.g_cache, d_logits);
    return g;
}

std::vector<double> missing_rate_weights(const IncompleteDataset& input) {
    std::vector<double> w(input.cols());
    double total = 0.0;
    for (std::size_t j = 0; j < input.cols(); ++j) {
        w[j] = static_cast<double>(input.mask().count_in_column(j)) / static_cast<double>(input.rows());
        total += w[j];
    }
    if (total == 0.0) return std::vector<double>(input.cols(), 1.0);
    const double mean = total / static_cast<double>(input.cols());
    for (double& x : w) x /= mean;
    return w;
}

void validate(const GainConfig& c, std::size_t n_variables) {
    if (!(c.hint_rate >= 0.0 && c.hint_rate <= 1.0)) throw ConfigError("hint_rate must be in [0, 1]");
    if (!(c.alpha_weight >= 0.0) || !std::isfinite(c.alpha_weight)) throw ConfigError("alpha_weight must be >= 0");
    if (c.batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (c.n_steps < 1) throw ConfigError("n_steps must be >= 1");
    if (!(c.learning_rate > 0.0) || !std::isfinite(c.learning_rate)) throw ConfigError("learning_rate must be > 0");
    if (!(c.noise_scale >= 0.0) || !std::isfinite(c.noise_scale)) throw ConfigError("noise_scale must be finite and >= 0");
    if (!c.missing_rate_weights.empty()) {
        if (c.missing_rate_weights.size() != n_variables) throw ConfigError("need one missing-rate weight per variable");
        for (double w : c.missing_rate_weights) {
            if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigError("missing-rate weights must be >= 0");
        }
    }
}

GainNets init_gain(const IncompleteDataset& input, const GainConfig& config, Rng& rng) {
    std::vector<int> cards;
    for (const auto& v : input.variables()) cards.push_back(v.cardinality);
    GainNets nets;
    nets.encoding = GainEncoding(cards);
    const int w = nets.encoding.width;
    const int p = static_cast<int>(cards.size());
    nets.generator = Mlp(w + p, w, w, rng);
    nets.discriminator = Mlp(w + p, w, p, rng);
    nets.noise_scale = config.noise_scale;
    nets.weights = config.missing_rate_weights.empty() ? missing_rate_weights(input) : config.missing_rate_weights;
    return nets;
}

GainNets train_gain(const IncompleteDataset& input, const GainConfig& config, std::uint64_t seed) {
    validate(config, input.cols());
    require_observed_values(input);
    Rng rng(seed);
    GainNets nets = init_gain(input, config, rng);
    const Eigen::MatrixXd y = nets.encoding.encode(input);
    const Eigen::MatrixXd m = GainEncoding::observed_indicator(input);
    const std::size_t n = input.rows();
    const std::size_t b = std::min<std::size_t>(n, static_cast<std::size_t>(config.batch_size));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    nets.trace.reserve(static_cast<std::size_t>(config.n_steps));

    for (int step = 1; step <= config.n_steps; ++step) {
        for (std::size_t k = 0; k < b; ++k) {
            std::swap(order[k], order[k + static_cast<std::size_t>(rng.uniform_index(n - k))]);
        }
        GainBatch batch = take_rows(y, m, std::span<const std::size_t>(order.data(), b));
        batch.noise = uniform_noise(batch.y.rows(), batch.y.cols(), config.noise_scale, rng);
        batch.hint = make_hint(batch.m, config.hint_rate, rng);

        GainLossRow row;
        row.step = step;
        {
            const GainForward f = gain_forward(nets, batch);
            row.discriminator = discriminator_loss(batch.m, f.m_hat);
            const GainGradients g = gain_gradients(nets, batch, 0.0, 0.0);
            nets.discriminator.set_parameters(nets.discriminator.parameters() - config.learning_rate * g.discriminator);
        }
        {
            const GainForward f = gain_forward(nets, batch);
            const GeneratorLosses l = generator_losses(batch.m, f.m_hat, f.y_bar, batch.y, nets.encoding, nets.weights);
            row.generator = l.adversarial;
            row.reconstruction = l.reconstruction;
            const GainGradients g = gain_gradients(nets, batch, 1.0, config.alpha_weight);
            nets.generator.set_parameters(nets.generator.parameters() - config.learning_rate * g.generator);
        }
        if (!std::isfinite(row.discriminator) || !std::isfinite(row.generator) || !std::isfinite(row.reconstruction)) {
            throw SamplerError("GAIN training diverged at step " + std::to_string(step) +
                               "; lower learning_rate or alpha_weight");
        }
        nets.trace.push_back(row);
    }
    return nets;
}

ImputationResult gain_impute(const IncompleteDataset& input, const GainNets& nets, int imputations,
                             std::uint64_t seed, bool argmax) {
    if (imputations < 1) throw ConfigError("GAIN needs at least one imputation");
    ImputationResult result;
    result.method = "GAIN";
    result.seed = seed;
    if (!input.mask().any()) {
        result.completed.assign(static_cast<std::size_t>(imputations), input.data());
        return result;
    }
    const auto& enc = nets.encoding;
    GainBatch batch;
    batch.y = enc.encode(input);
    batch.m = GainEncoding::observed_indicator(input);
    batch.hint = batch.m;
    const std::size_t n = input.rows();
    for (int l = 0; l < imputations; ++l) {
        Rng rng = Rng::substream(seed, {static_cast<std::uint64_t>(l)});
        batch.noise = uniform_noise(batch.y.rows(), batch.y.cols(), nets.noise_scale, rng);
        const Eigen::MatrixXd mw = widen(batch.m, enc);
        const Eigen::MatrixXd filled =
            (mw.array() * batch.y.array() + (1.0 - mw.array()) * batch.noise.array()).matrix();
        const Eigen::MatrixXd probs = block_softmax(nets.generator.forward(hcat(filled, batch.m)), enc);
        std::vector<int> cells = input.data().cells();
        std::vector<double> w;
        for (std::size_t j = 0; j < input.cols(); ++j) {
            const int d_j = enc.cardinalities[j];
            w.resize(static_cast<std::size_t>(d_j));
            for (std::size_t i = 0; i < n; ++i) {
                if (!input.mask().missing(i, j)) continue;
                const auto row = probs.row(static_cast<Eigen::Index>(i)).segment(enc.offsets[j], d_j);
                int level;
                if (argmax) {
                    Eigen::Index best = 0;
                    row.maxCoeff(&best);
                    level = static_cast<int>(best) + 1;
                } else {
                    for (int d = 0; d < d_j; ++d) w[static_cast<std::size_t>(d)] = row(d);
                    level = static_cast<int>(rng.categorical(w)) + 1;
                }
                cells[j * n + i] = level;
            }
        }
        result.completed.emplace_back(input.variables(), n, std::move(cells));
    }
    return result;
}

ImputationResult gain_train_and_impute(const IncompleteDataset& input, const GainConfig& config, int imputations,
                                       std::uint64_t seed) {
    validate(config, input.cols());
    if (imputations < 1) throw ConfigError("GAIN needs at least one imputation");
    if (!input.mask().any()) return gain_impute(input, GainNets{}, imputations, seed, config.argmax);
    const GainNets nets = train_gain(input, config, Rng::derive(seed, {0}));
    ImputationResult result = gain_impute(input, nets, imputations, Rng::derive(seed, {1}), config.argmax);
    result.seed = seed;
    const auto& last = nets.trace.back();
    result.diagnostics["final_L_D"] = last.discriminator;
    result.diagnostics["final_L_G"] = last.generator;
    result.diagnostics["final_L_M"] = last.reconstruction;
    return result;
}

void write_loss_trace_csv(const std::vector<GainLossRow>& trace, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out.precision(17);
    out << "step,L_D,L_G,L_M\n";
    for (const auto& r : trace) out << r.step << ',' << r.discriminator << ',' << r.generator << ',' << r.reconstruction << '\n';
    if (!out) throw DataError("failed writing " + path.string());
}

}  // namespace ordimpute

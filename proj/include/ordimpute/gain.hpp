#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "ordimpute/data.hpp"
#include "ordimpute/rng.hpp"

namespace ordimpute {

// Row-major batches: one row per record. Mask matrices here use the
// convention m = 1 for an observed cell, m = 0 for a missing one.

/// One-hot layout: variable j owns columns offset(j) .. offset(j) + D_j - 1.
struct GainEncoding {
    std::vector<int> cardinalities;
    std::vector<int> offsets;
    int width = 0;

    GainEncoding() = default;
    explicit GainEncoding(std::vector<int> cards);
    /// Observed cells become exact one-hot blocks; missing blocks are zero.
    Eigen::MatrixXd encode(const IncompleteDataset& data) const;
    Eigen::MatrixXd encode(const OrdinalDataset& data) const;
    /// Argmax of each block, as levels 1..D_j.
    OrdinalDataset decode(const Eigen::MatrixXd& encoded, const std::vector<VariableSpec>& variables) const;
    /// n x p observed indicators.
    static Eigen::MatrixXd observed_indicator(const IncompleteDataset& data);
};

/// Fully connected net, two tanh hidden layers of width `hidden`. Weights are
/// stored in x out so a batch maps as X W + b.
struct Mlp {
    Eigen::MatrixXd w1, w2, w3;
    Eigen::RowVectorXd b1, b2, b3;

    Mlp() = default;
    Mlp(int in, int hidden, int out, Rng& rng);

    struct Cache {
        Eigen::MatrixXd input, h1, h2;
    };
    /// Output pre-activations.
    Eigen::MatrixXd forward(const Eigen::MatrixXd& x, Cache* cache = nullptr) const;
    /// Gradient of the loss w.r.t. the flattened parameters, given
    /// d loss / d output; optionally also w.r.t. the input.
    Eigen::VectorXd backward(const Cache& cache, const Eigen::MatrixXd& d_out, Eigen::MatrixXd* d_input = nullptr) const;

    Eigen::VectorXd parameters() const;
    void set_parameters(const Eigen::VectorXd& theta);
    Eigen::Index size() const;
};

struct GainConfig {
    double hint_rate = 0.9;
    double alpha_weight = 10.0;
    int batch_size = 128;
    int n_steps = 2000;
    double learning_rate = 1e-3;
    /// One per variable; empty means the missing fraction of each variable
    /// scaled to mean 1.
    std::vector<double> missing_rate_weights;
    /// Missing blocks are filled with U(0, noise_scale) before the generator.
    double noise_scale = 0.01;
    /// Impute the most probable level instead of drawing from the softmax.
    bool argmax = false;
};

struct GainLossRow {
    int step = 0;
    double discriminator = 0.0;
    double generator = 0.0;
    double reconstruction = 0.0;
};

struct GainNets {
    GainEncoding encoding;
    Mlp generator;      // [noisy one-hot, m] -> per-block logits
    Mlp discriminator;  // [imputed one-hot, hint] -> per-variable logits
    std::vector<double> weights;
    double noise_scale = 0.01;
    std::vector<GainLossRow> trace;
};

/// Everything one training step looks at.
struct GainBatch {
    Eigen::MatrixXd y;      // one-hot truth, zero on missing blocks
    Eigen::MatrixXd m;      // observed indicators, rows x p
    Eigen::MatrixXd noise;  // rows x W, used on missing blocks
    Eigen::MatrixXd hint;   // rows x p
};

/// Clamps predictions into [1e-7, 1 - 1e-7].
double clamp_probability(double p);

/// -sum [m log m_hat + (1 - m) log(1 - m_hat)].
double discriminator_loss(const Eigen::MatrixXd& m, const Eigen::MatrixXd& m_hat);

struct GeneratorLosses {
    double adversarial = 0.0;     // -sum (1 - m) log m_hat
    double reconstruction = 0.0;  // weighted cross-entropy on observed cells
};
GeneratorLosses generator_losses(const Eigen::MatrixXd& m, const Eigen::MatrixXd& m_hat, const Eigen::MatrixXd& y_bar,
                                 const Eigen::MatrixXd& y, const GainEncoding& encoding,
                                 const std::vector<double>& weights);

/// H = 1 with probability hint_rate on observed cells, 0 elsewhere.
Eigen::MatrixXd make_hint(const Eigen::MatrixXd& m, double hint_rate, Rng& rng);

/// Softmax applied block by block.
Eigen::MatrixXd block_softmax(const Eigen::MatrixXd& logits, const GainEncoding& encoding);

struct GainForward {
    Mlp::Cache g_cache, d_cache;
    Eigen::MatrixXd y_bar;  // generator probabilities
    Eigen::MatrixXd y_hat;  // observed blocks from y, missing from y_bar
    Eigen::MatrixXd m_hat;  // discriminator probabilities
};
GainForward gain_forward(const GainNets& nets, const GainBatch& batch);

struct GainGradients {
    Eigen::VectorXd discriminator;  // of L_D
    Eigen::VectorXd generator;      // of g_weight L_G + m_weight L_M
};
GainGradients gain_gradients(const GainNets& nets, const GainBatch& batch, double g_weight, double m_weight);

/// Default weights: missing fraction per variable scaled to mean 1 (all ones
/// when nothing is missing).
std::vector<double> missing_rate_weights(const IncompleteDataset& input);

GainNets init_gain(const IncompleteDataset& input, const GainConfig& config, Rng& rng);

/// Alternating discriminator / generator SGD steps. Throws SamplerError when
/// a loss turns non-finite.
GainNets train_gain(const IncompleteDataset& input, const GainConfig& config, std::uint64_t seed);

/// L completed datasets, each from fresh noise through the generator.
ImputationResult gain_impute(const IncompleteDataset& input, const GainNets& nets, int imputations,
                             std::uint64_t seed, bool argmax = false);

/// Train with substream 0 of `seed`, impute with substream 1.
ImputationResult gain_train_and_impute(const IncompleteDataset& input, const GainConfig& config, int imputations,
                                       std::uint64_t seed);

void validate(const GainConfig& config, std::size_t n_variables);

/// step,L_D,L_G,L_M
void write_loss_trace_csv(const std::vector<GainLossRow>& trace, const std::filesystem::path& path);

}  // namespace ordimpute

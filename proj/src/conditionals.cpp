// Conditional-model adapters used by the chained-equations driver.

#include <algorithm>
#include <cmath>
#include <set>

#include "ordimpute/error.hpp"
#include "ordimpute/glm.hpp"
#include "ordimpute/mice.hpp"
#include "ordimpute/tree.hpp"

namespace ordimpute {

namespace {

double get(const ConditionalModelSpec& spec, const std::string& key, double fallback) {
    auto it = spec.hyperparameters.find(key);
    return it == spec.hyperparameters.end() ? fallback : it->second;
}

void check_keys(const ConditionalModelSpec& spec, std::set<std::string> allowed) {
    for (const auto& [key, value] : spec.hyperparameters) {
        if (!allowed.contains(key)) {
            throw ConfigError("hyperparameter '" + key + "' is not used by " + to_string(spec.kind));
        }
        if (!std::isfinite(value)) throw ConfigError("hyperparameter '" + key + "' must be finite");
    }
}

// GLM conditionals fit only over the response levels present in the
// training rows; absent levels get probability zero.
class GlmConditional final : public ConditionalModel {
public:
    GlmConditional(bool proportional_odds, GlmFitOptions options)
        : polr_(proportional_odds), options_(options) {}

    void fit(const LevelMatrix& predictors, std::span<const int> labels, int n_levels, Rng& rng) override {
        cardinalities_ = predictors.cardinalities;
        present_.clear();
        std::vector<int> code(static_cast<std::size_t>(n_levels) + 1, 0);
        for (int y : labels) code[static_cast<std::size_t>(y)] = 1;
        for (int d = 1; d <= n_levels; ++d) {
            if (code[static_cast<std::size_t>(d)]) {
                present_.push_back(d);
                code[static_cast<std::size_t>(d)] = static_cast<int>(present_.size());
            }
        }
        if (present_.empty()) throw FitError("no training rows");
        if (present_.size() == 1) return;

        std::vector<int> compact(labels.size());
        for (std::size_t i = 0; i < labels.size(); ++i) compact[i] = code[static_cast<std::size_t>(labels[i])];
        const Eigen::MatrixXd x = encode_predictor_rows(predictors.cells, predictors.rows, cardinalities_);
        const int levels = static_cast<int>(present_.size());
        if (polr_) {
            polr_model_ = fit_polr(x, compact, levels, options_).draw_parameters(rng);
        } else {
            multi_model_ = fit_multinomial(x, compact, levels, options_).draw_parameters(rng);
        }
    }

    int draw(std::span<const int> row, Rng& rng) const override {
        if (present_.size() == 1) return present_.front();
        const std::vector<double> features = encode_predictors(row, cardinalities_);
        const std::vector<double> probs =
            polr_ ? polr_model_.probabilities(features) : multi_model_.probabilities(features);
        return present_[static_cast<std::size_t>(sample_level(probs, rng) - 1)];
    }

private:
    bool polr_;
    GlmFitOptions options_;
    std::vector<int> cardinalities_;
    std::vector<int> present_;
    MultinomialLogitModel multi_model_;
    ProportionalOddsModel polr_model_;
};

class CartConditional final : public ConditionalModel {
public:
    explicit CartConditional(TreeOptions options) : options_(options) {}

    void fit(const LevelMatrix& predictors, std::span<const int> labels, int n_levels, Rng&) override {
        tree_ = fit_tree(predictors, labels, n_levels, options_);
    }
    int draw(std::span<const int> row, Rng& rng) const override { return tree_.sample_from_leaf(row, rng); }

private:
    TreeOptions options_;
    ClassificationTree tree_;
};

class ForestConditional final : public ConditionalModel {
public:
    explicit ForestConditional(ForestOptions options) : options_(options) {}

    void fit(const LevelMatrix& predictors, std::span<const int> labels, int n_levels, Rng& rng) override {
        forest_ = fit_forest(predictors, labels, n_levels, options_, rng);
    }
    int draw(std::span<const int> row, Rng& rng) const override { return forest_.impute_value(row, rng); }

private:
    ForestOptions options_;
    ForestModel forest_;
};

int as_count(double v, const char* key, int minimum) {
    if (v < minimum || v != std::floor(v)) {
        throw ConfigError(std::string(key) + " must be an integer >= " + std::to_string(minimum));
    }
    return static_cast<int>(v);
}

}  // namespace

std::string to_string(ModelKind kind) {
    switch (kind) {
        case ModelKind::Multireg: return "MULTIREG";
        case ModelKind::Polr: return "POLR";
        case ModelKind::Cart: return "CART";
        case ModelKind::ForestSample: return "FOREST_SAMPLE";
        case ModelKind::ForestMajority: return "FOREST_MAJORITY";
    }
    return "UNKNOWN";
}

ModelKind model_kind_from_string(const std::string& name) {
    for (ModelKind k : {ModelKind::Multireg, ModelKind::Polr, ModelKind::Cart, ModelKind::ForestSample,
                        ModelKind::ForestMajority}) {
        if (to_string(k) == name) return k;
    }
    throw ConfigError("unknown conditional model '" + name + "'");
}

ForestOptions forest_options(const ConditionalModelSpec& spec) {
    if (spec.kind != ModelKind::ForestSample && spec.kind != ModelKind::ForestMajority) {
        throw ConfigError(to_string(spec.kind) + " is not a forest model");
    }
    check_keys(spec, {"n_trees", "mtry", "min_leaf"});
    ForestOptions opt;
    const bool majority = spec.kind == ModelKind::ForestMajority;
    opt.mode = majority ? ForestMode::Majority : ForestMode::Sample;
    opt.n_trees = as_count(get(spec, "n_trees", majority ? 100 : 10), "n_trees", 1);
    opt.mtry = as_count(get(spec, "mtry", 0), "mtry", 0);
    opt.min_leaf = as_count(get(spec, "min_leaf", 1), "min_leaf", 1);
    return opt;
}

std::unique_ptr<ConditionalModel> make_conditional(const ConditionalModelSpec& spec) {
    switch (spec.kind) {
        case ModelKind::Multireg:
        case ModelKind::Polr: {
            check_keys(spec, {"ridge", "max_iterations"});
            GlmFitOptions opt;
            opt.ridge = get(spec, "ridge", 1e-4);
            if (opt.ridge < 0.0) throw ConfigError("ridge must be >= 0");
            opt.max_iterations = as_count(get(spec, "max_iterations", 200), "max_iterations", 1);
            return std::make_unique<GlmConditional>(spec.kind == ModelKind::Polr, opt);
        }
        case ModelKind::Cart: {
            check_keys(spec, {"min_leaf", "complexity"});
            TreeOptions opt;
            opt.min_leaf = as_count(get(spec, "min_leaf", 4), "min_leaf", 1);
            opt.complexity = get(spec, "complexity", 1e-4);
            if (opt.complexity < 0.0) throw ConfigError("complexity must be >= 0");
            return std::make_unique<CartConditional>(opt);
        }
        case ModelKind::ForestSample:
        case ModelKind::ForestMajority:
            return std::make_unique<ForestConditional>(forest_options(spec));
    }
    throw ConfigError("unknown conditional model");
}

}  // namespace ordimpute

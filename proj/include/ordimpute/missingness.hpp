#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <vector>

#include "json.hpp"
#include "ordimpute/data.hpp"

namespace ordimpute {

enum class Mechanism { MCAR, MAR };

struct McarTarget {
    std::size_t variable = 0;
    double rate = 0.0;
};

/// logit(p_miss) = intercept + sum_k coef_k * scale * (level_k - 1) / (D_k - 1).
struct MarRule {
    std::size_t target = 0;
    double intercept = 0.0;
    std::map<std::size_t, double> coefficients;
};

struct MissingnessScenario {
    Mechanism mechanism = Mechanism::MCAR;
    std::vector<std::size_t> fully_observed;
    std::vector<McarTarget> mcar_targets;
    std::vector<MarRule> mar_rules;
    /// Per-variable rate the MAR intercepts are tuned to when `calibrate` is set.
    double target_rate = 0.3;
    bool calibrate = true;
    /// Multiplier applied to every MAR coefficient; printed coefficient sets
    /// are on a ten-times larger scale than the [0,1]-rescaled predictors.
    double coefficient_scale = 0.1;
};

double logistic(double x);

/// Throws ConfigError when roles overlap, a rate is outside [0,1), an index
/// is out of range, or a MAR predictor is not fully observed.
void validate_scenario(const MissingnessScenario& scenario, std::size_t n_cols);

/// Masks each target column independently with its rate. Rate 0 is allowed
/// and masks nothing; rates must be < 1.
IncompleteDataset inject_mcar(const OrdinalDataset& data, const std::vector<McarTarget>& targets, std::uint64_t seed);

/// Per-row masking probabilities implied by a rule (intercept included).
std::vector<double> mar_probabilities(const OrdinalDataset& data, const MarRule& rule, double coefficient_scale);

/// MCAR targets are masked as in inject_mcar; each MAR target row is masked
/// with its logistic probability. Intercepts are used as given.
IncompleteDataset inject_mar(const OrdinalDataset& data, const MissingnessScenario& scenario, std::uint64_t seed);

/// Intercept such that the mean masking probability over rows equals
/// target_rate within 1e-4 (bisection; the mean is monotone in the intercept).
double calibrate_intercept(const OrdinalDataset& data, const MarRule& rule, double target_rate,
                           double coefficient_scale);

/// Copy of the scenario with every MAR intercept calibrated on `data`.
MissingnessScenario calibrate_scenario(const OrdinalDataset& data, const MissingnessScenario& scenario);

/// Validates, calibrates when requested, and dispatches on the mechanism.
IncompleteDataset inject(const OrdinalDataset& data, const MissingnessScenario& scenario, std::uint64_t seed);

/// Scenario files refer to variables by name; see docs/scenario-format.md.
MissingnessScenario scenario_from_json(const nlohmann::json& j, const std::vector<VariableSpec>& variables);
nlohmann::json scenario_to_json(const MissingnessScenario& s, const std::vector<VariableSpec>& variables);
MissingnessScenario load_scenario(const std::filesystem::path& path, const std::vector<VariableSpec>& variables);

}  // namespace ordimpute

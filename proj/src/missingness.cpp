#include "ordimpute/missingness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "ordimpute/error.hpp"
#include "ordimpute/rng.hpp"

namespace ordimpute {

namespace {

std::size_t resolve(const std::vector<VariableSpec>& variables, const std::string& name) {
    for (std::size_t j = 0; j < variables.size(); ++j) {
        if (variables[j].name == name) return j;
    }
    throw ConfigError("scenario refers to unknown variable '" + name + "'");
}

void mask_column(const OrdinalDataset& data, std::size_t j, std::span<const double> probs, std::uint64_t seed,
                 MaskMatrix& mask) {
    Rng rng = Rng::substream(seed, {j});
    for (std::size_t i = 0; i < data.rows(); ++i) {
        if (rng.bernoulli(probs.size() == 1 ? probs[0] : probs[i])) mask.set(i, j, true);
    }
}

}  // namespace

double logistic(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

void validate_scenario(const MissingnessScenario& s, std::size_t n_cols) {
    std::set<std::size_t> seen;
    auto claim = [&](std::size_t j, const char* role) {
        if (j >= n_cols) throw ConfigError(std::string(role) + " variable index out of range");
        if (!seen.insert(j).second) {
            throw ConfigError("variable " + std::to_string(j) + " has more than one missingness role");
        }
    };
    for (std::size_t j : s.fully_observed) claim(j, "fully observed");
    for (const auto& t : s.mcar_targets) {
        claim(t.variable, "MCAR");
        if (!(t.rate >= 0.0 && t.rate < 1.0)) throw ConfigError("MCAR rate must lie in [0, 1)");
    }
    const std::set<std::size_t> observed(s.fully_observed.begin(), s.fully_observed.end());
    for (const auto& rule : s.mar_rules) {
        claim(rule.target, "MAR");
        for (const auto& [k, coef] : rule.coefficients) {
            if (!observed.contains(k)) {
                throw ConfigError("MAR rule for variable " + std::to_string(rule.target) +
                                  " uses predictor " + std::to_string(k) + " which is not fully observed");
            }
            if (!std::isfinite(coef)) throw ConfigError("MAR coefficient must be finite");
        }
    }
    if (s.mechanism == Mechanism::MCAR && !s.mar_rules.empty()) {
        throw ConfigError("an MCAR scenario cannot carry MAR rules");
    }
    if (s.calibrate && !s.mar_rules.empty() && !(s.target_rate > 0.0 && s.target_rate < 1.0)) {
        throw ConfigError("target_rate must lie in (0, 1)");
    }
}

IncompleteDataset inject_mcar(const OrdinalDataset& data, const std::vector<McarTarget>& targets, std::uint64_t seed) {
    MaskMatrix mask(data.rows(), data.cols());
    for (const auto& t : targets) {
        if (t.variable >= data.cols()) throw ConfigError("MCAR target out of range");
        if (!(t.rate >= 0.0 && t.rate < 1.0)) throw ConfigError("MCAR rate must lie in [0, 1)");
        const double rate[1] = {t.rate};
        mask_column(data, t.variable, rate, seed, mask);
    }
    return IncompleteDataset(data, std::move(mask));
}

std::vector<double> mar_probabilities(const OrdinalDataset& data, const MarRule& rule, double coefficient_scale) {
    std::vector<double> eta(data.rows(), rule.intercept);
    for (const auto& [k, coef] : rule.coefficients) {
        const double span = static_cast<double>(data.cardinality(k) - 1);
        auto column = data.column(k);
        for (std::size_t i = 0; i < data.rows(); ++i) {
            eta[i] += coef * coefficient_scale * static_cast<double>(column[i] - 1) / span;
        }
    }
    for (double& v : eta) v = logistic(v);
    return eta;
}

IncompleteDataset inject_mar(const OrdinalDataset& data, const MissingnessScenario& scenario, std::uint64_t seed) {
    validate_scenario(scenario, data.cols());
    MaskMatrix mask(data.rows(), data.cols());
    for (const auto& t : scenario.mcar_targets) {
        const double rate[1] = {t.rate};
        mask_column(data, t.variable, rate, seed, mask);
    }
    for (const auto& rule : scenario.mar_rules) {
        auto probs = mar_probabilities(data, rule, scenario.coefficient_scale);
        mask_column(data, rule.target, probs, seed, mask);
    }
    return IncompleteDataset(data, std::move(mask));
}

double calibrate_intercept(const OrdinalDataset& data, const MarRule& rule, double target_rate,
                           double coefficient_scale) {
    if (!(target_rate > 0.0 && target_rate < 1.0)) throw ConfigError("target rate must lie in (0, 1)");
    MarRule probe = rule;
    probe.intercept = 0.0;
    std::vector<double> eta = mar_probabilities(data, probe, coefficient_scale);
    for (double& v : eta) v = std::log(v / (1.0 - v));
    auto mean_rate = [&](double intercept) {
        double sum = 0.0;
        for (double e : eta) sum += logistic(intercept + e);
        return sum / static_cast<double>(eta.size());
    };
    double lo = -60.0;
    double hi = 60.0;
    double mid = 0.0;
    for (int iter = 0; iter < 200; ++iter) {
        mid = 0.5 * (lo + hi);
        const double r = mean_rate(mid);
        if (std::abs(r - target_rate) < 1e-9) break;
        (r < target_rate ? lo : hi) = mid;
    }
    return mid;
}

MissingnessScenario calibrate_scenario(const OrdinalDataset& data, const MissingnessScenario& scenario) {
    MissingnessScenario out = scenario;
    for (auto& rule : out.mar_rules) {
        rule.intercept = calibrate_intercept(data, rule, scenario.target_rate, scenario.coefficient_scale);
    }
    return out;
}

IncompleteDataset inject(const OrdinalDataset& data, const MissingnessScenario& scenario, std::uint64_t seed) {
    validate_scenario(scenario, data.cols());
    if (scenario.mechanism == Mechanism::MCAR) return inject_mcar(data, scenario.mcar_targets, seed);
    if (scenario.calibrate) return inject_mar(data, calibrate_scenario(data, scenario), seed);
    return inject_mar(data, scenario, seed);
}

MissingnessScenario scenario_from_json(const nlohmann::json& j, const std::vector<VariableSpec>& variables) {
    MissingnessScenario s;
    try {
        const std::string mech = j.at("mechanism").get<std::string>();
        if (mech == "MCAR") {
            s.mechanism = Mechanism::MCAR;
        } else if (mech == "MAR") {
            s.mechanism = Mechanism::MAR;
        } else {
            throw ConfigError("mechanism must be MCAR or MAR");
        }
        for (const auto& name : j.value("fully_observed", nlohmann::json::array())) {
            s.fully_observed.push_back(resolve(variables, name.get<std::string>()));
        }
        for (const auto& t : j.value("mcar", nlohmann::json::array())) {
            s.mcar_targets.push_back({resolve(variables, t.at("variable").get<std::string>()), t.at("rate").get<double>()});
        }
        for (const auto& r : j.value("mar", nlohmann::json::array())) {
            MarRule rule;
            rule.target = resolve(variables, r.at("target").get<std::string>());
            rule.intercept = r.value("intercept", 0.0);
            for (const auto& [name, coef] : r.at("coefficients").items()) {
                rule.coefficients[resolve(variables, name)] = coef.get<double>();
            }
            s.mar_rules.push_back(std::move(rule));
        }
        s.target_rate = j.value("target_rate", s.target_rate);
        s.calibrate = j.value("calibrate", s.calibrate);
        s.coefficient_scale = j.value("coefficient_scale", s.coefficient_scale);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed scenario: ") + e.what());
    }
    validate_scenario(s, variables.size());
    return s;
}

nlohmann::json scenario_to_json(const MissingnessScenario& s, const std::vector<VariableSpec>& variables) {
    nlohmann::json j;
    j["mechanism"] = s.mechanism == Mechanism::MCAR ? "MCAR" : "MAR";
    j["fully_observed"] = nlohmann::json::array();
    for (std::size_t k : s.fully_observed) j["fully_observed"].push_back(variables.at(k).name);
    j["mcar"] = nlohmann::json::array();
    for (const auto& t : s.mcar_targets) j["mcar"].push_back({{"variable", variables.at(t.variable).name}, {"rate", t.rate}});
    j["mar"] = nlohmann::json::array();
    for (const auto& r : s.mar_rules) {
        nlohmann::json coefs = nlohmann::json::object();
        for (const auto& [k, c] : r.coefficients) coefs[variables.at(k).name] = c;
        j["mar"].push_back({{"target", variables.at(r.target).name}, {"intercept", r.intercept}, {"coefficients", coefs}});
    }
    j["target_rate"] = s.target_rate;
    j["calibrate"] = s.calibrate;
    j["coefficient_scale"] = s.coefficient_scale;
    return j;
}

MissingnessScenario load_scenario(const std::filesystem::path& path, const std::vector<VariableSpec>& variables) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open scenario " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("scenario " + path.string() + ": " + e.what());
    }
    return scenario_from_json(j, variables);
}

}  // namespace ordimpute

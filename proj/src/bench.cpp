#include "ordimpute/bench.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "ordimpute/error.hpp"
#include "ordimpute/rng.hpp"

namespace ordimpute {

using nlohmann::json;

double coverage_rate(std::span<const std::pair<double, double>> intervals, double truth) {
    if (intervals.empty()) throw std::invalid_argument("coverage_rate needs at least one interval");
    std::size_t hits = 0;
    for (const auto& [lo, hi] : intervals) hits += (lo <= truth && truth <= hi);
    return static_cast<double>(hits) / static_cast<double>(intervals.size());
}

std::optional<double> relative_mse(std::span<const double> pooled, std::span<const double> premissing, double truth) {
    if (pooled.size() != premissing.size() || pooled.empty()) {
        throw std::invalid_argument("relative_mse needs matching, non-empty inputs");
    }
    double num = 0.0, den = 0.0;
    for (std::size_t h = 0; h < pooled.size(); ++h) {
        num += (pooled[h] - truth) * (pooled[h] - truth);
        den += (premissing[h] - truth) * (premissing[h] - truth);
    }
    if (den == 0.0) return std::nullopt;
    return num / den;
}

double bias(std::span<const double> pooled, double truth) {
    if (pooled.empty()) throw std::invalid_argument("bias needs at least one estimate");
    double s = 0.0;
    for (double q : pooled) s += q;
    return s / static_cast<double>(pooled.size()) - truth;
}

double quantile_type7(std::vector<double> values, double p) {
    if (values.empty()) throw std::invalid_argument("quantile of an empty set");
    if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("quantile probability outside [0, 1]");
    std::sort(values.begin(), values.end());
    const double h = static_cast<double>(values.size() - 1) * p;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

// ---------------------------------------------------------------- population

std::vector<std::vector<std::vector<double>>> synthetic_pmfs(const SyntheticPopulation& spec) {
    if (spec.class_weights.size() != spec.tilts.size() || spec.class_weights.empty()) {
        throw ConfigError("synthetic population needs one tilt per class weight");
    }
    std::vector<std::vector<std::vector<double>>> pmfs(spec.tilts.size());
    for (std::size_t c = 0; c < spec.tilts.size(); ++c) {
        for (std::size_t j = 0; j < spec.cardinalities.size(); ++j) {
            const int levels = spec.cardinalities[j];
            if (levels < 2) throw ConfigError("synthetic cardinalities must be >= 2");
            std::vector<double> w(static_cast<std::size_t>(levels));
            double total = 0.0;
            for (int d = 1; d <= levels; ++d) {
                const double x = static_cast<double>(d - 1) / static_cast<double>(levels - 1);
                // fixed wobble so variables are not exchangeable
                const double wobble = 0.4 * std::sin(1.3 * static_cast<double>((j + 1) * static_cast<std::size_t>(d)) +
                                                     0.7 * static_cast<double>(c));
                w[static_cast<std::size_t>(d - 1)] = std::exp(spec.tilts[c] * x + wobble);
                total += w[static_cast<std::size_t>(d - 1)];
            }
            for (double& v : w) v /= total;
            pmfs[c].push_back(std::move(w));
        }
    }
    return pmfs;
}

OrdinalDataset generate_population(const SyntheticPopulation& spec) {
    if (spec.rows == 0) throw ConfigError("synthetic population needs rows >= 1");
    for (double w : spec.class_weights) {
        if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigError("class weights must be finite and >= 0");
    }
    const auto pmfs = synthetic_pmfs(spec);
    const std::size_t n = spec.rows, p = spec.cardinalities.size();
    std::vector<VariableSpec> vars;
    for (std::size_t j = 0; j < p; ++j) vars.push_back({"V" + std::to_string(j + 1), spec.cardinalities[j]});
    std::vector<int> cells(n * p);
    Rng rng(spec.seed);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t c = rng.categorical(spec.class_weights);
        for (std::size_t j = 0; j < p; ++j) cells[j * n + i] = static_cast<int>(rng.categorical(pmfs[c][j])) + 1;
    }
    return {std::move(vars), n, std::move(cells)};
}

// ---------------------------------------------------------------- methods

Profile Profile::desk() { return {}; }

Profile Profile::paper_scale() {
    Profile p;
    p.name = "paper";
    p.replications = 500;
    p.n_sample = 10000;
    p.imputations = 50;
    p.mcmc_iterations = 15000;
    p.mcmc_burn_in = 5000;
    return p;
}

std::vector<std::string> standard_method_names() {
    return {"Pre-missing", "MI-Multireg", "MI-Polr", "MI-Cart", "MI-Forest", "missForest", "MI-DPMPM", "MI-DPMMVN", "GAIN"};
}

namespace {

MethodConfig mice_method(const std::string& name, ModelKind kind) {
    MethodConfig m;
    m.name = name;
    m.kind = MethodKind::Mice;
    m.mice.model.kind = kind;
    return m;
}

}  // namespace

MethodConfig standard_method(const std::string& name, const Profile& profile) {
    static const std::map<std::string, std::string> aliases{
        {"MULTIREG", "MI-Multireg"}, {"POLR", "MI-Polr"},       {"CART", "MI-Cart"},
        {"FOREST_SAMPLE", "MI-Forest"}, {"FOREST_MAJORITY", "missForest"}, {"DPMPM", "MI-DPMPM"},
        {"DPMMVN", "MI-DPMMVN"},     {"BASELINE", "Pre-missing"},
    };
    const auto alias = aliases.find(name);
    const std::string canonical = alias == aliases.end() ? name : alias->second;
    if (canonical == "Pre-missing") {
        MethodConfig m;
        m.name = canonical;
        m.kind = MethodKind::Baseline;
        return m;
    }
    if (canonical == "MI-Multireg") return mice_method(canonical, ModelKind::Multireg);
    if (canonical == "MI-Polr") return mice_method(canonical, ModelKind::Polr);
    if (canonical == "MI-Cart") return mice_method(canonical, ModelKind::Cart);
    if (canonical == "MI-Forest") return mice_method(canonical, ModelKind::ForestSample);
    if (canonical == "missForest") return mice_method(canonical, ModelKind::ForestMajority);
    MethodConfig m;
    m.name = canonical;
    if (canonical == "MI-DPMPM") {
        m.kind = MethodKind::Dpmpm;
        m.dpmpm.iterations = profile.mcmc_iterations;
        m.dpmpm.burn_in = profile.mcmc_burn_in;
        return m;
    }
    if (canonical == "MI-DPMMVN") {
        m.kind = MethodKind::Dpmmvn;
        m.dpmmvn.iterations = profile.mcmc_iterations;
        m.dpmmvn.burn_in = profile.mcmc_burn_in;
        return m;
    }
    if (canonical == "GAIN") {
        m.kind = MethodKind::Gain;
        return m;
    }
    throw ConfigError("unknown method '" + name + "'");
}

ImputationResult run_method(const MethodConfig& method, const IncompleteDataset& input, int imputations,
                            std::uint64_t seed) {
    if (imputations < 1) throw ConfigError("imputations must be >= 1");
    switch (method.kind) {
        case MethodKind::Baseline: {
            if (input.mask().any()) throw ConfigError("the pre-missing baseline needs fully observed data");
            ImputationResult r;
            r.method = method.name;
            r.seed = seed;
            r.completed.assign(static_cast<std::size_t>(imputations), input.data());
            return r;
        }
        case MethodKind::Mice: {
            MiceConfig cfg = method.mice;
            cfg.imputations = imputations;
            auto r = mice_impute(input, cfg, seed);
            r.method = method.name;
            return r;
        }
        case MethodKind::Dpmpm: {
            DpmpmOptions opt = method.dpmpm;
            opt.imputations = imputations;
            auto r = dpmpm_impute(input, opt, seed);
            r.method = method.name;
            return r;
        }
        case MethodKind::Dpmmvn: {
            DpmmvnOptions opt = method.dpmmvn;
            opt.imputations = imputations;
            auto r = dpmmvn_impute(input, opt, seed);
            r.method = method.name;
            return r;
        }
        case MethodKind::Gain: {
            auto r = gain_train_and_impute(input, method.gain, imputations, seed);
            r.method = method.name;
            return r;
        }
    }
    throw ConfigError("unknown method kind");
}

namespace {

template <class T>
T take(const json& j, const char* key, T fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
    }
}

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
    for (const auto& [key, value] : j.items()) {
        if (!known.count(key)) throw ConfigError("unknown key '" + key + "' in " + where);
    }
}

template <class Options>
void apply_mcmc(const json& j, Options& opt) {
    opt.iterations = take(j, "iterations", opt.iterations);
    opt.burn_in = take(j, "burn_in", opt.burn_in);
    opt.initial_classes = take(j, "initial_classes", opt.initial_classes);
    opt.grow_classes = take(j, "grow_classes", opt.grow_classes);
    opt.growth_step = take(j, "growth_step", opt.growth_step);
    opt.alpha_shape = take(j, "alpha_shape", opt.alpha_shape);
    opt.alpha_rate = take(j, "alpha_rate", opt.alpha_rate);
}

}  // namespace

MethodConfig method_from_json(const json& j, const Profile& profile) {
    if (j.is_string()) return standard_method(j.get<std::string>(), profile);
    if (!j.is_object() || !j.contains("name")) throw ConfigError("a method is a name or an object with a name");
    const std::string name = take<std::string>(j, "name", "");
    MethodConfig m = standard_method(take<std::string>(j, "base", name), profile);
    m.name = name;
    const std::set<std::string> common{"name", "base"};
    switch (m.kind) {
        case MethodKind::Baseline:
            reject_unknown(j, common, "method " + name);
            break;
        case MethodKind::Mice: {
            auto known = common;
            known.insert({"iterations", "model", "hyperparameters", "order", "initializer"});
            reject_unknown(j, known, "method " + name);
            m.mice.iterations = take(j, "iterations", m.mice.iterations);
            if (j.contains("model")) m.mice.model.kind = model_kind_from_string(take<std::string>(j, "model", ""));
            if (j.contains("hyperparameters")) {
                m.mice.model.hyperparameters = take<std::map<std::string, double>>(j, "hyperparameters", {});
            }
            const auto order = take<std::string>(j, "order", "data");
            if (order == "data") {
                m.mice.order = ImputationOrder::DataOrder;
            } else if (order == "missing_count") {
                m.mice.order = ImputationOrder::ByMissingCount;
            } else {
                throw ConfigError("order must be 'data' or 'missing_count'");
            }
            const auto init = take<std::string>(j, "initializer", "marginal");
            if (init == "marginal") {
                m.mice.initializer = Initializer::Marginal;
            } else if (init == "conditional") {
                m.mice.initializer = Initializer::ConditionalAvailableCase;
            } else {
                throw ConfigError("initializer must be 'marginal' or 'conditional'");
            }
            if (m.mice.iterations < 1) throw ConfigError("iterations must be >= 1");
            make_conditional(m.mice.model);  // rejects bad hyperparameters early
            break;
        }
        case MethodKind::Dpmpm:
        case MethodKind::Dpmmvn: {
            auto known = common;
            known.insert({"iterations", "burn_in", "initial_classes", "grow_classes", "growth_step", "alpha_shape",
                          "alpha_rate"});
            reject_unknown(j, known, "method " + name);
            if (m.kind == MethodKind::Dpmpm) {
                apply_mcmc(j, m.dpmpm);
            } else {
                apply_mcmc(j, m.dpmmvn);
            }
            break;
        }
        case MethodKind::Gain: {
            auto known = common;
            known.insert({"hint_rate", "alpha_weight", "batch_size", "n_steps", "learning_rate", "noise_scale",
                          "argmax", "missing_rate_weights"});
            reject_unknown(j, known, "method " + name);
            auto& g = m.gain;
            g.hint_rate = take(j, "hint_rate", g.hint_rate);
            g.alpha_weight = take(j, "alpha_weight", g.alpha_weight);
            g.batch_size = take(j, "batch_size", g.batch_size);
            g.n_steps = take(j, "n_steps", g.n_steps);
            g.learning_rate = take(j, "learning_rate", g.learning_rate);
            g.noise_scale = take(j, "noise_scale", g.noise_scale);
            g.argmax = take(j, "argmax", g.argmax);
            g.missing_rate_weights = take(j, "missing_rate_weights", g.missing_rate_weights);
            break;
        }
    }
    return m;
}

// ---------------------------------------------------------------- experiment

namespace {

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
    std::filesystem::path path(p);
    return path.is_absolute() ? path : base / path;
}

SyntheticPopulation synthetic_from_json(const json& j) {
    reject_unknown(j, {"rows", "seed", "cardinalities", "class_weights", "tilts"}, "synthetic population");
    SyntheticPopulation s;
    s.rows = take(j, "rows", s.rows);
    s.seed = take(j, "seed", s.seed);
    s.cardinalities = take(j, "cardinalities", s.cardinalities);
    s.class_weights = take(j, "class_weights", s.class_weights);
    s.tilts = take(j, "tilts", s.tilts);
    return s;
}

std::vector<VariableSpec> synthetic_variables(const SyntheticPopulation& s) {
    std::vector<VariableSpec> vars;
    for (std::size_t j = 0; j < s.cardinalities.size(); ++j) vars.push_back({"V" + std::to_string(j + 1), s.cardinalities[j]});
    return vars;
}

}  // namespace

ExperimentConfig experiment_from_json(const json& j, const std::filesystem::path& base_dir, bool paper_scale) {
    if (!j.is_object()) throw ConfigError("experiment config must be an object");
    reject_unknown(j,
                   {"profile", "population", "n_sample", "replications", "imputations", "methods", "scenario",
                    "arities", "master_seed", "output_dir", "parallelism"},
                   "experiment config");
    const std::string profile_name = paper_scale ? "paper" : take<std::string>(j, "profile", "desk");
    Profile profile;
    if (profile_name == "paper") {
        profile = Profile::paper_scale();
    } else if (profile_name != "desk") {
        throw ConfigError("profile must be 'desk' or 'paper'");
    }
    ExperimentConfig c;
    c.profile = profile.name;
    c.n_sample = profile.n_sample;
    c.replications = profile.replications;
    c.imputations = profile.imputations;
    if (!paper_scale) {
        c.n_sample = take(j, "n_sample", c.n_sample);
        c.replications = take(j, "replications", c.replications);
        c.imputations = take(j, "imputations", c.imputations);
    }

    std::vector<VariableSpec> variables;
    const json pop = j.contains("population") ? j.at("population") : json{{"synthetic", json::object()}};
    reject_unknown(pop, {"synthetic", "path", "dictionary"}, "population");
    if (pop.contains("synthetic")) {
        if (pop.contains("path")) throw ConfigError("population is either synthetic or a path");
        c.synthetic = synthetic_from_json(pop.at("synthetic"));
        variables = synthetic_variables(*c.synthetic);
    } else {
        if (!pop.contains("path") || !pop.contains("dictionary")) {
            throw ConfigError("a population file needs 'path' and 'dictionary'");
        }
        c.population_path = resolve(base_dir, take<std::string>(pop, "path", ""));
        c.dictionary_path = resolve(base_dir, take<std::string>(pop, "dictionary", ""));
        variables = load_dictionary(*c.dictionary_path);
    }

    if (j.contains("methods")) {
        if (!j.at("methods").is_array()) throw ConfigError("methods must be a list");
        for (const auto& m : j.at("methods")) c.methods.push_back(method_from_json(m, profile));
    } else {
        for (const auto& name : standard_method_names()) c.methods.push_back(standard_method(name, profile));
    }
    if (j.contains("scenario") && !j.at("scenario").is_null()) {
        const json& s = j.at("scenario");
        if (s.is_string()) {
            c.scenario = load_scenario(resolve(base_dir, s.get<std::string>()), variables);
        } else {
            c.scenario = scenario_from_json(s, variables);
        }
    }
    c.arities = take(j, "arities", c.arities);
    c.master_seed = take(j, "master_seed", c.master_seed);
    if (j.contains("output_dir")) c.output_dir = resolve(base_dir, take<std::string>(j, "output_dir", ""));
    c.parallelism = take(j, "parallelism", c.parallelism);
    return c;
}

ExperimentConfig load_experiment(const std::filesystem::path& path, bool paper_scale) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError("config " + path.string() + ": " + e.what());
    }
    return experiment_from_json(j, path.parent_path(), paper_scale);
}

void validate(const ExperimentConfig& config, std::size_t population_rows) {
    if (config.replications < 1) throw ConfigError("replications must be >= 1");
    if (config.imputations < 2) throw ConfigError("imputations must be >= 2");
    if (config.n_sample < 1 || config.n_sample > population_rows) {
        throw ConfigError("n_sample must be between 1 and the population size");
    }
    if (config.methods.empty()) throw ConfigError("no methods configured");
    if (config.arities.empty()) throw ConfigError("no estimand arities configured");
    std::set<int> seen_arity;
    for (int a : config.arities) {
        if (a < 1 || a > 3) throw ConfigError("estimand arity must be 1, 2 or 3");
        if (!seen_arity.insert(a).second) throw ConfigError("duplicate estimand arity");
    }
    std::set<std::string> names;
    for (const auto& m : config.methods) {
        if (m.name.empty()) throw ConfigError("method names must be non-empty");
        if (!names.insert(m.name).second) throw ConfigError("duplicate method name '" + m.name + "'");
    }
    if (config.parallelism < 1) throw ConfigError("parallelism must be >= 1");
}

OrdinalDataset load_population(const ExperimentConfig& config) {
    if (config.synthetic) return generate_population(*config.synthetic);
    if (!config.population_path || !config.dictionary_path) throw ConfigError("no population configured");
    auto data = load_csv(*config.population_path, load_dictionary(*config.dictionary_path));
    if (data.mask().any()) throw DataError("the population file has missing cells");
    return data.data();
}

int effective_parallelism(const ExperimentConfig& config) {
    const char* env = std::getenv("ORDIMPUTE_THREADS");
    if (env == nullptr || *env == '\0') return config.parallelism;
    int value = 0;
    const char* end = env + std::char_traits<char>::length(env);
    const auto [ptr, ec] = std::from_chars(env, end, value);
    if (ec != std::errc() || ptr != end || value < 1) throw ConfigError("ORDIMPUTE_THREADS must be a positive integer");
    return value;
}

// ---------------------------------------------------------------- running

std::size_t MethodRecord::failures() const {
    return static_cast<std::size_t>(std::count_if(replications.begin(), replications.end(),
                                                  [](const ReplicationRecord& r) { return !r.ok; }));
}

namespace {

// Runs fn(0..count-1) on `threads` workers. Work items own disjoint output
// slots, so results do not depend on scheduling.
void parallel_for(std::size_t count, int threads, const std::function<void(std::size_t)>& fn,
                  const std::function<void()>& on_done) {
    std::atomic<std::size_t> next{0};
    std::mutex done_mutex;
    std::exception_ptr error;
    const auto worker = [&] {
        for (;;) {
            const std::size_t k = next.fetch_add(1);
            if (k >= count) return;
            try {
                fn(k);
            } catch (...) {
                std::lock_guard lock(done_mutex);
                if (!error) error = std::current_exception();
                next.store(count);
                return;
            }
            std::lock_guard lock(done_mutex);
            if (on_done) on_done();
        }
    };
    const auto n_threads = static_cast<std::size_t>(std::max(1, threads));
    if (n_threads == 1 || count <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < std::min(n_threads, count); ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    if (error) std::rethrow_exception(error);
}

struct ReplicationData {
    OrdinalDataset sample;
    IncompleteDataset incomplete;
};

ReplicationData make_replication(const ExperimentConfig& config, const OrdinalDataset& population, std::size_t h) {
    const auto h64 = static_cast<std::uint64_t>(h);
    OrdinalDataset sample =
        draw_sample(population, config.n_sample, Rng::derive(config.master_seed, {key_of("sample"), h64}));
    IncompleteDataset incomplete =
        config.scenario ? inject(sample, *config.scenario, Rng::derive(config.master_seed, {key_of("mask"), h64}))
                        : IncompleteDataset(sample);
    return {std::move(sample), std::move(incomplete)};
}

ReplicationRecord score_baseline(const OrdinalDataset& sample, std::span<const Estimand> estimands) {
    ReplicationRecord r;
    const auto est = cell_probabilities(sample, estimands);
    for (const auto& c : est) {
        const auto [lo, hi] = wald_interval(c.q, sample.rows());
        r.q_bar.push_back(c.q);
        r.t.push_back(c.u);
        r.dof.push_back(std::numeric_limits<double>::infinity());
        r.lower.push_back(lo);
        r.upper.push_back(hi);
    }
    return r;
}

ReplicationRecord score_imputations(const ImputationResult& result, std::span<const Estimand> estimands) {
    const std::size_t e_count = estimands.size(), l_count = result.completed.size();
    std::vector<std::vector<double>> q(e_count, std::vector<double>(l_count)), u = q;
    for (std::size_t l = 0; l < l_count; ++l) {
        const auto est = cell_probabilities(result.completed[l], estimands);
        for (std::size_t e = 0; e < e_count; ++e) {
            q[e][l] = est[e].q;
            u[e][l] = est[e].u;
        }
    }
    ReplicationRecord r;
    for (std::size_t e = 0; e < e_count; ++e) {
        const PooledEstimate p = pool(q[e], u[e]);
        r.q_bar.push_back(p.q_bar);
        r.t.push_back(p.t);
        r.dof.push_back(p.dof);
        r.lower.push_back(p.lower);
        r.upper.push_back(p.upper);
    }
    return r;
}

std::string range_text(double lo, double hi) {
    std::ostringstream s;
    s.precision(3);
    s << lo << " to " << hi;
    return s.str();
}

}  // namespace

MetricsReport run_experiment(const ExperimentConfig& config, const OrdinalDataset& population,
                             const ProgressFn& progress) {
    validate(config, population.rows());
    if (config.scenario) validate_scenario(*config.scenario, population.cols());
    const int threads = effective_parallelism(config);

    MetricsReport report;
    report.profile = config.profile;
    report.n_sample = config.n_sample;
    report.replications = config.replications;
    report.imputations = config.imputations;
    report.master_seed = config.master_seed;
    report.arities = config.arities;
    report.variables = population.variables();
    for (int a : config.arities) {
        auto es = enumerate_estimands(population, a, config.n_sample);
        report.estimands.insert(report.estimands.end(), es.begin(), es.end());
    }
    const auto H = static_cast<std::size_t>(config.replications);
    const std::size_t M = config.methods.size();
    report.premissing.assign(H, {});
    report.complete_case_fraction.assign(H, 0.0);
    report.runs.resize(M);
    for (std::size_t m = 0; m < M; ++m) {
        report.runs[m].method = config.methods[m].name;
        report.runs[m].replications.assign(H, {});
    }

    const std::size_t total = H + H * M;
    std::size_t finished = 0;
    const auto tick = [&] {
        ++finished;
        if (progress) progress(finished, total);
    };

    parallel_for(
        H, threads,
        [&](std::size_t h) {
            const auto rep = make_replication(config, population, h);
            const auto est = cell_probabilities(rep.sample, report.estimands);
            std::vector<double> q;
            for (const auto& c : est) q.push_back(c.q);
            report.premissing[h] = std::move(q);
            report.complete_case_fraction[h] =
                static_cast<double>(rep.incomplete.mask().complete_rows()) / static_cast<double>(rep.sample.rows());
        },
        tick);

    std::vector<std::exception_ptr> fatal(H * M);
    parallel_for(
        H * M, threads,
        [&](std::size_t job) {
            const std::size_t h = job / M, m = job % M;
            const MethodConfig& method = config.methods[m];
            ReplicationRecord& out = report.runs[m].replications[h];
            try {
                const auto rep = make_replication(config, population, h);
                if (method.kind == MethodKind::Baseline) {
                    out = score_baseline(rep.sample, report.estimands);
                } else {
                    const std::uint64_t seed = Rng::derive(
                        config.master_seed, {key_of("method"), static_cast<std::uint64_t>(h), key_of(method.name)});
                    const auto result = run_method(method, rep.incomplete, config.imputations, seed);
                    check_imputation(rep.incomplete, result);
                    out = score_imputations(result, report.estimands);
                }
            } catch (const ConfigError&) {
                fatal[job] = std::current_exception();
            } catch (const std::exception& e) {
                out = ReplicationRecord{};
                out.ok = false;
                out.error = e.what();
            }
        },
        tick);
    for (const auto& f : fatal) {
        if (f) std::rethrow_exception(f);
    }

    if (config.scenario && config.scenario->mechanism == Mechanism::MAR) {
        std::size_t outside = 0;
        for (double f : report.complete_case_fraction) outside += (f < 0.01 || f > 0.12);
        if (outside > 0) {
            const auto [lo, hi] =
                std::minmax_element(report.complete_case_fraction.begin(), report.complete_case_fraction.end());
            report.warnings.push_back("complete-case fraction outside 1%-12% in " + std::to_string(outside) + " of " +
                                      std::to_string(H) + " replications (" + range_text(*lo, *hi) + ")");
        }
    }
    for (const auto& run : report.runs) {
        if (const std::size_t f = run.failures(); f > 0) {
            report.warnings.push_back(run.method + " failed in " + std::to_string(f) + " of " + std::to_string(H) +
                                      " replications");
        }
    }
    score(report);
    return report;
}

MetricsReport run_experiment(const ExperimentConfig& config, const ProgressFn& progress) {
    return run_experiment(config, load_population(config), progress);
}

// ---------------------------------------------------------------- scoring

void score(MetricsReport& report) {
    const std::size_t E = report.estimands.size();
    report.metrics.assign(report.runs.size(), std::vector<EstimandMetrics>(E));
    for (std::size_t m = 0; m < report.runs.size(); ++m) {
        const auto& reps = report.runs[m].replications;
        for (std::size_t e = 0; e < E; ++e) {
            std::vector<std::pair<double, double>> intervals;
            std::vector<double> pooled, pre;
            for (std::size_t h = 0; h < reps.size(); ++h) {
                if (!reps[h].ok) continue;
                intervals.emplace_back(reps[h].lower[e], reps[h].upper[e]);
                pooled.push_back(reps[h].q_bar[e]);
                pre.push_back(report.premissing[h][e]);
            }
            EstimandMetrics& out = report.metrics[m][e];
            out.replications = pooled.size();
            if (pooled.empty()) continue;
            const double truth = report.estimands[e].truth;
            out.coverage = coverage_rate(intervals, truth);
            out.rel_mse = relative_mse(pooled, pre, truth);
            out.bias = bias(pooled, truth);
        }
    }

    report.summary.clear();
    for (std::size_t m = 0; m < report.runs.size(); ++m) {
        for (int arity : report.arities) {
            std::vector<double> cov, rel, bia;
            std::size_t cov_x = 0, rel_x = 0, bia_x = 0;
            for (std::size_t e = 0; e < E; ++e) {
                if (static_cast<int>(report.estimands[e].arity()) != arity) continue;
                const auto& x = report.metrics[m][e];
                if (x.coverage) cov.push_back(*x.coverage); else ++cov_x;
                if (x.rel_mse) rel.push_back(*x.rel_mse); else ++rel_x;
                if (x.bias) bia.push_back(*x.bias); else ++bia_x;
            }
            for (int s = 0; s < 5; ++s) {
                SummaryRow row;
                row.method = report.runs[m].method;
                row.arity = arity;
                row.statistic = kSummaryStatistics[s];
                const double p = kSummaryProbabilities[s];
                if (!cov.empty()) row.coverage = quantile_type7(cov, p);
                if (!rel.empty()) row.rel_mse = quantile_type7(rel, p);
                if (!bia.empty()) row.bias = quantile_type7(bia, p);
                row.coverage_excluded = cov_x;
                row.rel_mse_excluded = rel_x;
                row.bias_excluded = bia_x;
                report.summary.push_back(std::move(row));
            }
        }
    }
}

std::optional<double> summary_median(const MetricsReport& report, const std::string& method, int arity,
                                     const std::string& metric) {
    for (const auto& row : report.summary) {
        if (row.method != method || row.arity != arity || row.statistic != "Median") continue;
        if (metric == "coverage") return row.coverage;
        if (metric == "rel_mse") return row.rel_mse;
        if (metric == "bias") return row.bias;
        throw std::invalid_argument("unknown metric " + metric);
    }
    return std::nullopt;
}

// ---------------------------------------------------------------- json

namespace {

json optional_json(const std::optional<double>& x) { return x ? json(*x) : json(nullptr); }

std::optional<double> optional_from(const json& j) {
    if (j.is_null()) return std::nullopt;
    return j.get<double>();
}

// JSON has no infinity; an infinite dof is written as null.
json dof_json(const std::vector<double>& dof) {
    json a = json::array();
    for (double d : dof) a.push_back(std::isinf(d) ? json(nullptr) : json(d));
    return a;
}

std::vector<double> dof_from(const json& j) {
    std::vector<double> out;
    for (const auto& d : j) out.push_back(d.is_null() ? std::numeric_limits<double>::infinity() : d.get<double>());
    return out;
}

}  // namespace

json report_to_json(const MetricsReport& r) {
    json j;
    j["profile"] = r.profile;
    j["n_sample"] = r.n_sample;
    j["replications"] = r.replications;
    j["imputations"] = r.imputations;
    j["master_seed"] = r.master_seed;
    j["arities"] = r.arities;
    j["variables"] = json::array();
    for (const auto& v : r.variables) j["variables"].push_back({{"name", v.name}, {"cardinality", v.cardinality}});
    j["estimands"] = json::array();
    for (const auto& e : r.estimands) {
        json cells = json::array();
        for (const auto& [var, level] : e.cells) cells.push_back({var, level});
        j["estimands"].push_back({{"label", estimand_label(e, r.variables)}, {"cells", cells}, {"truth", e.truth}});
    }
    j["premissing"] = r.premissing;
    j["complete_case_fraction"] = r.complete_case_fraction;
    j["runs"] = json::array();
    for (const auto& run : r.runs) {
        json reps = json::array();
        for (const auto& rep : run.replications) {
            reps.push_back({{"ok", rep.ok},
                            {"error", rep.error},
                            {"q_bar", rep.q_bar},
                            {"t", rep.t},
                            {"dof", dof_json(rep.dof)},
                            {"lower", rep.lower},
                            {"upper", rep.upper}});
        }
        j["runs"].push_back({{"method", run.method}, {"failures", run.failures()}, {"replications", reps}});
    }
    j["metrics"] = json::array();
    for (const auto& per_method : r.metrics) {
        json a = json::array();
        for (const auto& x : per_method) {
            a.push_back({{"coverage", optional_json(x.coverage)},
                         {"rel_mse", optional_json(x.rel_mse)},
                         {"bias", optional_json(x.bias)},
                         {"replications", x.replications}});
        }
        j["metrics"].push_back(a);
    }
    j["summary"] = json::array();
    for (const auto& s : r.summary) {
        j["summary"].push_back({{"method", s.method},
                                {"arity", s.arity},
                                {"statistic", s.statistic},
                                {"coverage", optional_json(s.coverage)},
                                {"rel_mse", optional_json(s.rel_mse)},
                                {"bias", optional_json(s.bias)},
                                {"coverage_excluded", s.coverage_excluded},
                                {"rel_mse_excluded", s.rel_mse_excluded},
                                {"bias_excluded", s.bias_excluded}});
    }
    j["warnings"] = r.warnings;
    return j;
}

MetricsReport report_from_json(const json& j) {
    MetricsReport r;
    try {
        r.profile = j.at("profile").get<std::string>();
        r.n_sample = j.at("n_sample").get<std::size_t>();
        r.replications = j.at("replications").get<int>();
        r.imputations = j.at("imputations").get<int>();
        r.master_seed = j.at("master_seed").get<std::uint64_t>();
        r.arities = j.at("arities").get<std::vector<int>>();
        for (const auto& v : j.at("variables")) {
            r.variables.push_back({v.at("name").get<std::string>(), v.at("cardinality").get<int>()});
        }
        for (const auto& e : j.at("estimands")) {
            Estimand est;
            for (const auto& c : e.at("cells")) est.cells.emplace_back(c.at(0).get<std::size_t>(), c.at(1).get<int>());
            est.truth = e.at("truth").get<double>();
            r.estimands.push_back(std::move(est));
        }
        r.premissing = j.at("premissing").get<std::vector<std::vector<double>>>();
        r.complete_case_fraction = j.at("complete_case_fraction").get<std::vector<double>>();
        for (const auto& run : j.at("runs")) {
            MethodRecord m;
            m.method = run.at("method").get<std::string>();
            for (const auto& rep : run.at("replications")) {
                ReplicationRecord x;
                x.ok = rep.at("ok").get<bool>();
                x.error = rep.at("error").get<std::string>();
                x.q_bar = rep.at("q_bar").get<std::vector<double>>();
                x.t = rep.at("t").get<std::vector<double>>();
                x.dof = dof_from(rep.at("dof"));
                x.lower = rep.at("lower").get<std::vector<double>>();
                x.upper = rep.at("upper").get<std::vector<double>>();
                m.replications.push_back(std::move(x));
            }
            r.runs.push_back(std::move(m));
        }
        for (const auto& per_method : j.at("metrics")) {
            std::vector<EstimandMetrics> v;
            for (const auto& x : per_method) {
                v.push_back({optional_from(x.at("coverage")), optional_from(x.at("rel_mse")), optional_from(x.at("bias")),
                             x.at("replications").get<std::size_t>()});
            }
            r.metrics.push_back(std::move(v));
        }
        for (const auto& s : j.at("summary")) {
            SummaryRow row;
            row.method = s.at("method").get<std::string>();
            row.arity = s.at("arity").get<int>();
            row.statistic = s.at("statistic").get<std::string>();
            row.coverage = optional_from(s.at("coverage"));
            row.rel_mse = optional_from(s.at("rel_mse"));
            row.bias = optional_from(s.at("bias"));
            row.coverage_excluded = s.at("coverage_excluded").get<std::size_t>();
            row.rel_mse_excluded = s.at("rel_mse_excluded").get<std::size_t>();
            row.bias_excluded = s.at("bias_excluded").get<std::size_t>();
            r.summary.push_back(std::move(row));
        }
        r.warnings = j.at("warnings").get<std::vector<std::string>>();
    } catch (const json::exception& e) {
        throw DataError(std::string("malformed report JSON: ") + e.what());
    }
    return r;
}

// ---------------------------------------------------------------- files

std::string format_double(double x) {
    if (std::isnan(x)) return "NaN";
    if (std::isinf(x)) return x > 0 ? "Inf" : "-Inf";
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, x);
    return std::string(buf, res.ptr);
}

namespace {

std::string cell(const std::optional<double>& x) { return x ? format_double(*x) : "NA"; }

std::string quoted(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + '"';
}

std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    return out;
}

void close_out(std::ofstream& out, const std::filesystem::path& path) {
    out.close();
    if (!out) throw std::runtime_error("error writing " + path.string());
}

}  // namespace

void emit_tables(const MetricsReport& r, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    {
        const auto path = dir / "metrics.csv";
        auto out = open_out(path);
        out << "method,estimand,arity,truth,coverage,rel_mse,bias,replications_ok\n";
        for (std::size_t m = 0; m < r.runs.size(); ++m) {
            for (std::size_t e = 0; e < r.estimands.size(); ++e) {
                const auto& x = r.metrics.at(m).at(e);
                out << quoted(r.runs[m].method) << ',' << quoted(estimand_label(r.estimands[e], r.variables)) << ','
                    << r.estimands[e].arity() << ',' << format_double(r.estimands[e].truth) << ',' << cell(x.coverage)
                    << ',' << cell(x.rel_mse) << ',' << cell(x.bias) << ',' << x.replications << '\n';
            }
        }
        close_out(out, path);
    }
    {
        const auto path = dir / "summary.csv";
        auto out = open_out(path);
        out << "method,arity,statistic,coverage,rel_mse,bias,coverage_excluded,rel_mse_excluded,bias_excluded\n";
        for (const auto& s : r.summary) {
            out << quoted(s.method) << ',' << s.arity << ',' << s.statistic << ',' << cell(s.coverage) << ','
                << cell(s.rel_mse) << ',' << cell(s.bias) << ',' << s.coverage_excluded << ',' << s.rel_mse_excluded
                << ',' << s.bias_excluded << '\n';
        }
        close_out(out, path);
    }
    {
        // marginal pmf per method: mean pooled estimate over successful replications
        const auto path = dir / "pmf.csv";
        auto out = open_out(path);
        out << "method,variable,level,truth,mean_estimate\n";
        for (std::size_t m = 0; m < r.runs.size(); ++m) {
            for (std::size_t e = 0; e < r.estimands.size(); ++e) {
                const Estimand& est = r.estimands[e];
                if (est.arity() != 1) continue;
                const auto& x = r.metrics.at(m).at(e);
                const std::string mean = x.bias ? format_double(*x.bias + est.truth) : "NA";
                out << quoted(r.runs[m].method) << ',' << quoted(r.variables.at(est.cells[0].first).name) << ','
                    << est.cells[0].second << ',' << format_double(est.truth) << ',' << mean << '\n';
            }
        }
        close_out(out, path);
    }
    {
        const auto path = dir / "failures.csv";
        auto out = open_out(path);
        out << "method,replication,error\n";
        for (const auto& run : r.runs) {
            for (std::size_t h = 0; h < run.replications.size(); ++h) {
                if (!run.replications[h].ok) out << quoted(run.method) << ',' << h << ',' << quoted(run.replications[h].error) << '\n';
            }
        }
        close_out(out, path);
    }
}

void emit_report(const MetricsReport& report, const std::filesystem::path& dir) {
    emit_tables(report, dir);
    const auto path = dir / "report.json";
    auto out = open_out(path);
    out << report_to_json(report).dump() << '\n';
    close_out(out, path);
}

}  // namespace ordimpute

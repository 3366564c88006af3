#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "ordimpute/data.hpp"
#include "ordimpute/dpmmvn.hpp"
#include "ordimpute/dpmpm.hpp"
#include "ordimpute/gain.hpp"
#include "ordimpute/inference.hpp"
#include "ordimpute/mice.hpp"
#include "ordimpute/missingness.hpp"

namespace ordimpute {

// ---------------------------------------------------------------- metrics

/// Fraction of intervals with lower <= truth <= upper.
double coverage_rate(std::span<const std::pair<double, double>> intervals, double truth);

/// sum (pooled - Q)^2 / sum (premissing - Q)^2; nullopt when the denominator
/// is zero.
std::optional<double> relative_mse(std::span<const double> pooled, std::span<const double> premissing, double truth);

/// mean(pooled) - Q.
double bias(std::span<const double> pooled, double truth);

/// Linear interpolation between order statistics at h = (n - 1) p.
double quantile_type7(std::vector<double> values, double p);

inline constexpr const char* kSummaryStatistics[5] = {"Min", "1st Qu.", "Median", "3rd Qu.", "Max"};
inline constexpr double kSummaryProbabilities[5] = {0.0, 0.25, 0.5, 0.75, 1.0};

// ---------------------------------------------------------------- population

/// Latent-class population: class c has weight class_weights[c] and, for
/// variable j, level weights proportional to exp(tilt_c (d - 1) / (D_j - 1) + wobble).
struct SyntheticPopulation {
    std::size_t rows = 100000;
    std::uint64_t seed = 20240601;
    std::vector<int> cardinalities{2, 3, 4, 5, 4};
    std::vector<double> class_weights{0.5, 0.3, 0.2};
    std::vector<double> tilts{-2.0, 0.5, 2.5};

    friend bool operator==(const SyntheticPopulation&, const SyntheticPopulation&) = default;
};

/// pmfs[c][j][d - 1].
std::vector<std::vector<std::vector<double>>> synthetic_pmfs(const SyntheticPopulation& spec);

OrdinalDataset generate_population(const SyntheticPopulation& spec);

// ---------------------------------------------------------------- methods

enum class MethodKind { Baseline, Mice, Dpmpm, Dpmmvn, Gain };

struct MethodConfig {
    std::string name;
    MethodKind kind = MethodKind::Mice;
    MiceConfig mice;
    DpmpmOptions dpmpm;
    DpmmvnOptions dpmmvn;
    GainConfig gain;
};

/// Iteration counts of the two run sizes.
struct Profile {
    std::string name = "desk";
    int replications = 50;
    std::size_t n_sample = 2000;
    int imputations = 10;
    int mcmc_iterations = 3000;
    int mcmc_burn_in = 1000;

    static Profile desk();
    static Profile paper_scale();
};

/// Names: Pre-missing, MI-Multireg, MI-Polr, MI-Cart, MI-Forest, missForest,
/// MI-DPMPM, MI-DPMMVN, GAIN. Also accepts the conditional-model names
/// (CART, FOREST_MAJORITY, ...) and DPMPM, DPMMVN. ConfigError otherwise.
MethodConfig standard_method(const std::string& name, const Profile& profile);
std::vector<std::string> standard_method_names();

/// The method's completed datasets. Baseline returns L copies of the
/// underlying data and requires an empty mask.
ImputationResult run_method(const MethodConfig& method, const IncompleteDataset& input, int imputations,
                            std::uint64_t seed);

/// A string names a standard method; an object is {"name", "base"?, ...}
/// whose remaining keys override that method's settings.
MethodConfig method_from_json(const nlohmann::json& j, const Profile& profile);

// ---------------------------------------------------------------- experiment

struct ExperimentConfig {
    std::string profile = "desk";
    std::optional<std::filesystem::path> population_path;
    std::optional<std::filesystem::path> dictionary_path;
    std::optional<SyntheticPopulation> synthetic;
    std::size_t n_sample = 2000;
    int replications = 50;
    int imputations = 10;
    std::vector<MethodConfig> methods;
    std::optional<MissingnessScenario> scenario;
    std::vector<int> arities{1, 2, 3};
    std::uint64_t master_seed = 1;
    std::filesystem::path output_dir = "bench_output";
    int parallelism = 1;
};

/// Relative paths resolve against `base_dir`. `paper_scale` switches the
/// defaults to the paper-scale profile before explicit keys apply.
ExperimentConfig experiment_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir,
                                      bool paper_scale = false);
ExperimentConfig load_experiment(const std::filesystem::path& path, bool paper_scale = false);

/// ConfigError on H < 1, L < 2, n_sample > population size, bad arities,
/// duplicate method names or an empty method list.
void validate(const ExperimentConfig& config, std::size_t population_rows);

OrdinalDataset load_population(const ExperimentConfig& config);

/// ORDIMPUTE_THREADS when set, else config.parallelism.
int effective_parallelism(const ExperimentConfig& config);

// ---------------------------------------------------------------- report

struct ReplicationRecord {
    bool ok = true;
    std::string error;
    // one entry per estimand, empty when the replication failed
    std::vector<double> q_bar, t, dof, lower, upper;

    friend bool operator==(const ReplicationRecord&, const ReplicationRecord&) = default;
};

struct MethodRecord {
    std::string method;
    std::vector<ReplicationRecord> replications;  // indexed by h

    std::size_t failures() const;
    friend bool operator==(const MethodRecord&, const MethodRecord&) = default;
};

struct EstimandMetrics {
    std::optional<double> coverage;
    std::optional<double> rel_mse;
    std::optional<double> bias;
    std::size_t replications = 0;  // successful ones

    friend bool operator==(const EstimandMetrics&, const EstimandMetrics&) = default;
};

struct SummaryRow {
    std::string method;
    int arity = 1;
    std::string statistic;
    std::optional<double> coverage, rel_mse, bias;
    // estimands excluded from each column because the metric was undefined
    std::size_t coverage_excluded = 0, rel_mse_excluded = 0, bias_excluded = 0;

    friend bool operator==(const SummaryRow&, const SummaryRow&) = default;
};

struct MetricsReport {
    std::string profile;
    std::size_t n_sample = 0;
    int replications = 0;
    int imputations = 0;
    std::uint64_t master_seed = 0;
    std::vector<int> arities;
    std::vector<VariableSpec> variables;
    std::vector<Estimand> estimands;
    std::vector<std::vector<double>> premissing;  // [h][estimand]
    std::vector<double> complete_case_fraction;   // [h], after injection
    std::vector<MethodRecord> runs;
    std::vector<std::vector<EstimandMetrics>> metrics;  // [method][estimand]
    std::vector<SummaryRow> summary;
    std::vector<std::string> warnings;

    friend bool operator==(const MetricsReport&, const MetricsReport&) = default;
};

/// Fills metrics and summary from the retained intermediates.
void score(MetricsReport& report);

/// Median of the summary column for (method, arity); nullopt when absent.
std::optional<double> summary_median(const MetricsReport& report, const std::string& method, int arity,
                                     const std::string& metric);

/// Progress callback: (finished jobs, total jobs).
using ProgressFn = std::function<void(std::size_t, std::size_t)>;

MetricsReport run_experiment(const ExperimentConfig& config, const OrdinalDataset& population,
                             const ProgressFn& progress = {});
MetricsReport run_experiment(const ExperimentConfig& config, const ProgressFn& progress = {});

nlohmann::json report_to_json(const MetricsReport& report);
MetricsReport report_from_json(const nlohmann::json& j);

/// metrics.csv, summary.csv, pmf.csv, failures.csv and report.json.
void emit_report(const MetricsReport& report, const std::filesystem::path& output_dir);
/// The CSV files only, e.g. when re-rendering from a stored JSON.
void emit_tables(const MetricsReport& report, const std::filesystem::path& output_dir);

/// Full-precision decimal text that parses back to the same double.
std::string format_double(double x);

}  // namespace ordimpute

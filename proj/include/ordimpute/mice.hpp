#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>

#include "ordimpute/data.hpp"
#include "ordimpute/rng.hpp"
#include "ordimpute/tree.hpp"

namespace ordimpute {

enum class ModelKind { Multireg, Polr, Cart, ForestSample, ForestMajority };

struct ConditionalModelSpec {
    ModelKind kind = ModelKind::Cart;
    /// Recognised keys depend on the kind:
    ///   Multireg, Polr:  ridge, max_iterations
    ///   Cart:            min_leaf, complexity
    ///   Forest*:         n_trees, mtry, min_leaf
    std::map<std::string, double> hyperparameters;
};

enum class ImputationOrder { DataOrder, ByMissingCount };
enum class Initializer { Marginal, ConditionalAvailableCase };

struct MiceConfig {
    int iterations = 10;
    ImputationOrder order = ImputationOrder::DataOrder;
    Initializer initializer = Initializer::Marginal;
    ConditionalModelSpec model;
    int imputations = 5;
};

/// A univariate conditional: fitted on the rows where the target is
/// observed, then used to draw the target for the remaining rows.
class ConditionalModel {
public:
    virtual ~ConditionalModel() = default;
    /// Throws FitError when the model cannot be estimated.
    virtual void fit(const LevelMatrix& predictors, std::span<const int> labels, int n_levels, Rng& rng) = 0;
    virtual int draw(std::span<const int> predictor_row, Rng& rng) const = 0;
};

/// Throws ConfigError for unknown or out-of-range hyperparameters.
std::unique_ptr<ConditionalModel> make_conditional(const ConditionalModelSpec& spec);

/// Forest settings implied by a FOREST_* spec (throws ConfigError otherwise).
ForestOptions forest_options(const ConditionalModelSpec& spec);

std::string to_string(ModelKind kind);
ModelKind model_kind_from_string(const std::string& name);

/// Callback hook for instrumented runs: invoked before each variable update.
struct MiceObserver {
    std::function<void(int chain, int sweep, std::size_t variable)> on_update;
};

/// Incomplete variables in visiting order. ByMissingCount sorts by ascending
/// missing count with ties broken by column index.
std::vector<std::size_t> sweep_order(const IncompleteDataset& input, ImputationOrder order);

/// Fills every masked cell. Marginal draws from the column's observed pmf;
/// ConditionalAvailableCase draws from donors with the target observed that
/// match the row on all of its other observed variables, falling back to the
/// marginal when no donor exists.
OrdinalDataset initialize_missing(const IncompleteDataset& input, Initializer initializer, std::uint64_t seed);

/// One chain: initialise, then `iterations` full sweeps.
OrdinalDataset run_mice_chain(const IncompleteDataset& input, const MiceConfig& config, std::uint64_t chain_seed,
                              std::map<std::string, double>& diagnostics, const MiceObserver* observer = nullptr,
                              int chain_index = 0);

/// L independent chains; chain l uses seed Rng::derive(seed, {l}).
ImputationResult mice_impute(const IncompleteDataset& input, const MiceConfig& config, std::uint64_t seed,
                             const MiceObserver* observer = nullptr);

/// Throws DataError when a column has no observed value.
void require_observed_values(const IncompleteDataset& input);

}  // namespace ordimpute

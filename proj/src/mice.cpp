#include "ordimpute/mice.hpp"

#include <algorithm>
#include <numeric>

#include "ordimpute/error.hpp"

namespace ordimpute {

namespace {

// Column-major working copy with the missing cells filled in.
struct Working {
    std::size_t n = 0;
    std::vector<int> cells;
    int& at(std::size_t i, std::size_t j) { return cells[j * n + i]; }
    int at(std::size_t i, std::size_t j) const { return cells[j * n + i]; }
};

std::vector<std::size_t> missing_rows(const IncompleteDataset& input, std::size_t j) {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < input.rows(); ++i) {
        if (input.mask().missing(i, j)) rows.push_back(i);
    }
    return rows;
}

int draw_marginal(std::span<const std::size_t> counts, Rng& rng) {
    std::vector<double> w(counts.begin(), counts.end());
    return static_cast<int>(rng.categorical(w)) + 1;
}

LevelMatrix predictor_rows(const Working& w, const std::vector<VariableSpec>& vars, std::size_t target,
                           std::span<const std::size_t> rows) {
    LevelMatrix m;
    m.rows = rows.size();
    for (std::size_t k = 0; k < vars.size(); ++k) {
        if (k != target) m.cardinalities.push_back(vars[k].cardinality);
    }
    const std::size_t q = m.cardinalities.size();
    m.cells.resize(rows.size() * q);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        std::size_t c = 0;
        for (std::size_t k = 0; k < vars.size(); ++k) {
            if (k != target) m.cells[r * q + c++] = w.at(rows[r], k);
        }
    }
    return m;
}

}  // namespace

void require_observed_values(const IncompleteDataset& input) {
    for (std::size_t j = 0; j < input.cols(); ++j) {
        if (input.mask().count_in_column(j) == input.rows()) {
            throw DataError("column '" + input.variables()[j].name + "' has no observed values");
        }
    }
}

std::vector<std::size_t> sweep_order(const IncompleteDataset& input, ImputationOrder order) {
    std::vector<std::size_t> vars;
    for (std::size_t j = 0; j < input.cols(); ++j) {
        if (input.mask().count_in_column(j) > 0) vars.push_back(j);
    }
    if (order == ImputationOrder::ByMissingCount) {
        std::stable_sort(vars.begin(), vars.end(), [&](std::size_t a, std::size_t b) {
            return input.mask().count_in_column(a) < input.mask().count_in_column(b);
        });
    }
    return vars;
}

OrdinalDataset initialize_missing(const IncompleteDataset& input, Initializer initializer, std::uint64_t seed) {
    require_observed_values(input);
    const std::size_t n = input.rows();
    const std::size_t p = input.cols();
    std::vector<int> cells = input.data().cells();
    for (std::size_t j = 0; j < p; ++j) {
        const auto miss = missing_rows(input, j);
        if (miss.empty()) continue;
        Rng rng = Rng::substream(seed, {j});
        const auto counts = input.observed_counts(j);
        for (std::size_t i : miss) {
            int level = 0;
            if (initializer == Initializer::ConditionalAvailableCase) {
                std::vector<std::size_t> donor_counts(counts.size(), 0);
                bool any = false;
                for (std::size_t r = 0; r < n; ++r) {
                    if (input.mask().missing(r, j)) continue;
                    bool match = true;
                    for (std::size_t k = 0; k < p && match; ++k) {
                        if (k == j || input.mask().missing(i, k)) continue;
                        match = !input.mask().missing(r, k) && input.data().at(r, k) == input.data().at(i, k);
                    }
                    if (match) {
                        ++donor_counts[static_cast<std::size_t>(input.data().at(r, j) - 1)];
                        any = true;
                    }
                }
                if (any) level = draw_marginal(donor_counts, rng);
            }
            if (level == 0) level = draw_marginal(counts, rng);
            cells[j * n + i] = level;
        }
    }
    return OrdinalDataset(input.variables(), n, std::move(cells));
}

OrdinalDataset run_mice_chain(const IncompleteDataset& input, const MiceConfig& config, std::uint64_t chain_seed,
                              std::map<std::string, double>& diagnostics, const MiceObserver* observer,
                              int chain_index) {
    const auto& vars = input.variables();
    Working w;
    w.n = input.rows();
    w.cells = initialize_missing(input, config.initializer, Rng::derive(chain_seed, {0})).cells();
    if (!input.mask().any()) return OrdinalDataset(vars, w.n, std::move(w.cells));

    Rng rng = Rng::substream(chain_seed, {1});
    const auto order = sweep_order(input, config.order);
    std::vector<std::vector<std::size_t>> observed(input.cols());
    std::vector<std::vector<std::size_t>> missing(input.cols());
    for (std::size_t j : order) {
        missing[j] = missing_rows(input, j);
        for (std::size_t i = 0; i < input.rows(); ++i) {
            if (!input.mask().missing(i, j)) observed[j].push_back(i);
        }
    }

    auto model = make_conditional(config.model);
    for (int t = 0; t < config.iterations; ++t) {
        for (std::size_t j : order) {
            if (observer && observer->on_update) observer->on_update(chain_index, t, j);
            const int levels = vars[j].cardinality;
            std::vector<int> labels(observed[j].size());
            for (std::size_t r = 0; r < labels.size(); ++r) labels[r] = w.at(observed[j][r], j);
            const LevelMatrix train = predictor_rows(w, vars, j, observed[j]);
            const LevelMatrix query = predictor_rows(w, vars, j, missing[j]);
            bool fitted = true;
            try {
                model->fit(train, labels, levels, rng);
                diagnostics["fits"] += 1.0;
            } catch (const FitError&) {
                fitted = false;
                diagnostics["fallbacks"] += 1.0;
            }
            const auto counts = input.observed_counts(j);
            for (std::size_t r = 0; r < missing[j].size(); ++r) {
                w.at(missing[j][r], j) = fitted ? model->draw(query.row(r), rng) : draw_marginal(counts, rng);
            }
        }
    }
    return OrdinalDataset(vars, w.n, std::move(w.cells));
}

ImputationResult mice_impute(const IncompleteDataset& input, const MiceConfig& config, std::uint64_t seed,
                             const MiceObserver* observer) {
    if (config.iterations < 1) throw ConfigError("MICE needs at least one iteration");
    if (config.imputations < 1) throw ConfigError("MICE needs at least one imputation");
    require_observed_values(input);
    make_conditional(config.model);  // validates hyperparameters up front

    ImputationResult result;
    result.method = "MICE-" + to_string(config.model.kind);
    result.seed = seed;
    result.diagnostics["fits"] = 0.0;
    result.diagnostics["fallbacks"] = 0.0;
    for (int l = 0; l < config.imputations; ++l) {
        result.completed.push_back(run_mice_chain(input, config, Rng::derive(seed, {static_cast<std::uint64_t>(l)}),
                                                  result.diagnostics, observer, l));
    }
    return result;
}

}  // namespace ordimpute

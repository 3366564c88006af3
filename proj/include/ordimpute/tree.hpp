#pragma once

#include <span>
#include <vector>

#include "ordimpute/rng.hpp"

namespace ordimpute {

/// Row-major n x q matrix of predictor levels (1..cardinality[k]).
struct LevelMatrix {
    std::size_t rows = 0;
    std::vector<int> cardinalities;
    std::vector<int> cells;

    std::size_t cols() const { return cardinalities.size(); }
    std::span<const int> row(std::size_t i) const { return {cells.data() + i * cols(), cols()}; }
    int at(std::size_t i, std::size_t k) const { return cells[i * cols() + k]; }
};

struct TreeOptions {
    int min_leaf = 4;
    /// A split must cut total Gini impurity (n * Gini) by more than this
    /// fraction of the root's total impurity.
    double complexity = 1e-4;
    /// Candidate predictors per split; 0 means all of them.
    int mtry = 0;
};

struct TreeNode {
    int split_variable = -1;  // -1 marks a leaf
    int threshold = 0;        // rows with level <= threshold go left
    int left = -1;
    int right = -1;
    /// Response counts of the training rows routed here, by level - 1.
    std::vector<int> counts;
    int size = 0;

    bool is_leaf() const { return split_variable < 0; }
};

class ClassificationTree {
public:
    int n_levels = 2;
    std::vector<TreeNode> nodes;  // nodes[0] is the root

    const TreeNode& leaf_for(std::span<const int> row) const;
    /// Uniform draw from the reached leaf's response multiset.
    int sample_from_leaf(std::span<const int> row, Rng& rng) const;
    /// Most frequent level in the reached leaf; ties go to the lowest level.
    int predict(std::span<const int> row) const;
    std::size_t leaf_count() const;
};

/// Greedy CART on ordered predictors (splits of the form level <= c). Ties
/// between equally good splits go to the lowest variable index, then the
/// lowest threshold. `rng` is required when options.mtry > 0.
ClassificationTree fit_tree(const LevelMatrix& predictors, std::span<const int> labels, int n_levels,
                            const TreeOptions& options, Rng* rng = nullptr);
/// Same, on a subset of rows (repeats allowed, as in a bootstrap resample).
ClassificationTree fit_tree_rows(const LevelMatrix& predictors, std::span<const int> labels, int n_levels,
                                 std::vector<std::size_t> rows, const TreeOptions& options, Rng* rng = nullptr);

enum class ForestMode { Sample, Majority };

struct ForestOptions {
    int n_trees = 10;
    /// 0 means floor(sqrt(number of predictors)), at least 1.
    int mtry = 0;
    int min_leaf = 1;
    double complexity = 0.0;
    ForestMode mode = ForestMode::Sample;
};

struct ForestModel {
    std::vector<ClassificationTree> trees;
    int mtry = 1;
    int n_levels = 2;
    ForestMode mode = ForestMode::Sample;

    /// Sample mode: a uniformly chosen tree, then a leaf draw. Majority mode:
    /// plurality of the trees' predictions, ties to the lowest level.
    int impute_value(std::span<const int> row, Rng& rng) const;
    int majority_vote(std::span<const int> row) const;
};

int default_mtry(std::size_t n_predictors);

/// Bootstrap indices of size n drawn from rng.
std::vector<std::size_t> bootstrap_rows(std::size_t n, Rng& rng);

ForestModel fit_forest(const LevelMatrix& predictors, std::span<const int> labels, int n_levels,
                       const ForestOptions& options, Rng& rng);

}  // namespace ordimpute

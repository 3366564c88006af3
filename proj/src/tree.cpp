#include "ordimpute/tree.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ordimpute/error.hpp"

namespace ordimpute {

namespace {

// Sum over classes of count^2 / total; larger is purer.
double purity(const int* counts, int n_levels, int total) {
    if (total == 0) return 0.0;
    double s = 0.0;
    for (int c = 0; c < n_levels; ++c) s += static_cast<double>(counts[c]) * counts[c];
    return s / total;
}

struct SplitChoice {
    int variable = -1;
    int threshold = 0;
    double gain = 0.0;
};

class TreeBuilder {
public:
    TreeBuilder(const LevelMatrix& x, std::span<const int> y, int n_levels, const TreeOptions& opt, Rng* rng)
        : x_(x), y_(y), n_levels_(n_levels), opt_(opt), rng_(rng) {
        if (opt_.mtry > 0 && rng_ == nullptr) throw FitError("random predictor subsets need an rng");
        if (opt_.min_leaf < 1) throw FitError("min_leaf must be >= 1");
    }

    ClassificationTree build(std::vector<std::size_t> rows) {
        ClassificationTree tree;
        tree.n_levels = n_levels_;
        if (rows.empty()) throw FitError("cannot fit a tree on zero rows");
        if (static_cast<int>(rows.size()) < opt_.min_leaf) throw FitError("fewer rows than min_leaf");

        struct Pending {
            int node;
            std::size_t begin;
            std::size_t end;
        };
        rows_ = std::move(rows);
        tree.nodes.push_back(make_node(0, rows_.size()));
        const TreeNode& root = tree.nodes[0];
        min_gain_ = opt_.complexity * (root.size - purity(root.counts.data(), n_levels_, root.size));

        std::vector<Pending> stack{{0, 0, rows_.size()}};
        while (!stack.empty()) {
            Pending job = stack.back();
            stack.pop_back();
            SplitChoice split = best_split(tree.nodes[static_cast<std::size_t>(job.node)], job.begin, job.end);
            if (split.variable < 0) continue;
            auto mid_it = std::stable_partition(rows_.begin() + static_cast<std::ptrdiff_t>(job.begin),
                                                rows_.begin() + static_cast<std::ptrdiff_t>(job.end),
                                                [&](std::size_t r) {
                                                    return x_.at(r, static_cast<std::size_t>(split.variable)) <=
                                                           split.threshold;
                                                });
            const std::size_t mid = static_cast<std::size_t>(mid_it - rows_.begin());
            const int left = static_cast<int>(tree.nodes.size());
            tree.nodes.push_back(make_node(job.begin, mid));
            tree.nodes.push_back(make_node(mid, job.end));
            TreeNode& parent = tree.nodes[static_cast<std::size_t>(job.node)];
            parent.split_variable = split.variable;
            parent.threshold = split.threshold;
            parent.left = left;
            parent.right = left + 1;
            stack.push_back({left + 1, mid, job.end});
            stack.push_back({left, job.begin, mid});
        }
        return tree;
    }

private:
    TreeNode make_node(std::size_t begin, std::size_t end) {
        TreeNode node;
        node.counts.assign(static_cast<std::size_t>(n_levels_), 0);
        for (std::size_t k = begin; k < end; ++k) ++node.counts[static_cast<std::size_t>(y_[rows_[k]] - 1)];
        node.size = static_cast<int>(end - begin);
        return node;
    }

    SplitChoice best_split(const TreeNode& node, std::size_t begin, std::size_t end) {
        SplitChoice best;
        const int n = node.size;
        if (n < 2 * opt_.min_leaf) return best;
        const double parent = purity(node.counts.data(), n_levels_, n);
        if (std::abs(parent - n) < 1e-12) return best;  // pure node

        std::vector<int> candidates(x_.cols());
        std::iota(candidates.begin(), candidates.end(), 0);
        if (opt_.mtry > 0 && opt_.mtry < static_cast<int>(candidates.size())) {
            for (int k = 0; k < opt_.mtry; ++k) {
                std::size_t r = static_cast<std::size_t>(k) +
                                static_cast<std::size_t>(rng_->uniform_index(candidates.size() - static_cast<std::size_t>(k)));
                std::swap(candidates[static_cast<std::size_t>(k)], candidates[r]);
            }
            candidates.resize(static_cast<std::size_t>(opt_.mtry));
            std::sort(candidates.begin(), candidates.end());
        }

        double best_score = -1.0;
        std::vector<int> table;
        std::vector<int> left(static_cast<std::size_t>(n_levels_));
        std::vector<int> right(static_cast<std::size_t>(n_levels_));
        for (int v : candidates) {
            const int levels = x_.cardinalities[static_cast<std::size_t>(v)];
            table.assign(static_cast<std::size_t>(levels * n_levels_), 0);
            for (std::size_t k = begin; k < end; ++k) {
                const std::size_t r = rows_[k];
                ++table[static_cast<std::size_t>((x_.at(r, static_cast<std::size_t>(v)) - 1) * n_levels_ + y_[r] - 1)];
            }
            std::fill(left.begin(), left.end(), 0);
            int n_left = 0;
            for (int c = 1; c < levels; ++c) {
                for (int k = 0; k < n_levels_; ++k) {
                    const int add = table[static_cast<std::size_t>((c - 1) * n_levels_ + k)];
                    left[static_cast<std::size_t>(k)] += add;
                    n_left += add;
                }
                const int n_right = n - n_left;
                if (n_left < opt_.min_leaf || n_right < opt_.min_leaf) continue;
                for (int k = 0; k < n_levels_; ++k) {
                    right[static_cast<std::size_t>(k)] = node.counts[static_cast<std::size_t>(k)] - left[static_cast<std::size_t>(k)];
                }
                const double score = purity(left.data(), n_levels_, n_left) + purity(right.data(), n_levels_, n_right);
                if (score > best_score + 1e-12 * std::max(1.0, best_score)) {
                    best_score = score;
                    best = {v, c, score - parent};
                }
            }
        }
        if (best.variable >= 0 && !(best.gain > min_gain_ && best.gain > 1e-12 * n)) best = SplitChoice{};
        return best;
    }

    const LevelMatrix& x_;
    std::span<const int> y_;
    int n_levels_;
    TreeOptions opt_;
    Rng* rng_;
    std::vector<std::size_t> rows_;
    double min_gain_ = 0.0;
};

int leaf_majority(const TreeNode& leaf) {
    auto it = std::max_element(leaf.counts.begin(), leaf.counts.end());
    return static_cast<int>(it - leaf.counts.begin()) + 1;
}

}  // namespace

const TreeNode& ClassificationTree::leaf_for(std::span<const int> row) const {
    const TreeNode* node = &nodes.front();
    while (!node->is_leaf()) {
        node = &nodes[static_cast<std::size_t>(row[static_cast<std::size_t>(node->split_variable)] <= node->threshold
                                                   ? node->left
                                                   : node->right)];
    }
    return *node;
}

int ClassificationTree::sample_from_leaf(std::span<const int> row, Rng& rng) const {
    const TreeNode& leaf = leaf_for(row);
    std::uint64_t pick = rng.uniform_index(static_cast<std::uint64_t>(leaf.size));
    for (std::size_t k = 0; k < leaf.counts.size(); ++k) {
        if (pick < static_cast<std::uint64_t>(leaf.counts[k])) return static_cast<int>(k) + 1;
        pick -= static_cast<std::uint64_t>(leaf.counts[k]);
    }
    return n_levels;  // unreachable for consistent counts
}

int ClassificationTree::predict(std::span<const int> row) const { return leaf_majority(leaf_for(row)); }

std::size_t ClassificationTree::leaf_count() const {
    return static_cast<std::size_t>(std::count_if(nodes.begin(), nodes.end(), [](const TreeNode& n) { return n.is_leaf(); }));
}

ClassificationTree fit_tree_rows(const LevelMatrix& predictors, std::span<const int> labels, int n_levels,
                                 std::vector<std::size_t> rows, const TreeOptions& options, Rng* rng) {
    for (std::size_t r : rows) {
        if (labels[r] < 1 || labels[r] > n_levels) throw FitError("label outside 1..D");
    }
    TreeBuilder builder(predictors, labels, n_levels, options, rng);
    return builder.build(std::move(rows));
}

ClassificationTree fit_tree(const LevelMatrix& predictors, std::span<const int> labels, int n_levels,
                            const TreeOptions& options, Rng* rng) {
    if (labels.size() != predictors.rows) throw FitError("labels and predictors disagree in length");
    std::vector<std::size_t> rows(predictors.rows);
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    return fit_tree_rows(predictors, labels, n_levels, std::move(rows), options, rng);
}

int default_mtry(std::size_t n_predictors) {
    return std::max(1, static_cast<int>(std::floor(std::sqrt(static_cast<double>(n_predictors)))));
}

std::vector<std::size_t> bootstrap_rows(std::size_t n, Rng& rng) {
    std::vector<std::size_t> rows(n);
    for (auto& r : rows) r = static_cast<std::size_t>(rng.uniform_index(n));
    return rows;
}

ForestModel fit_forest(const LevelMatrix& predictors, std::span<const int> labels, int n_levels,
                       const ForestOptions& options, Rng& rng) {
    if (options.n_trees < 1) throw FitError("a forest needs at least one tree");
    if (labels.size() != predictors.rows) throw FitError("labels and predictors disagree in length");
    ForestModel forest;
    forest.n_levels = n_levels;
    forest.mode = options.mode;
    const int q = static_cast<int>(predictors.cols());
    forest.mtry = options.mtry > 0 ? std::min(options.mtry, std::max(q, 1)) : default_mtry(predictors.cols());
    TreeOptions tree_opt;
    tree_opt.min_leaf = options.min_leaf;
    tree_opt.complexity = options.complexity;
    tree_opt.mtry = q > 0 ? forest.mtry : 0;
    forest.trees.reserve(static_cast<std::size_t>(options.n_trees));
    for (int t = 0; t < options.n_trees; ++t) {
        forest.trees.push_back(
            fit_tree_rows(predictors, labels, n_levels, bootstrap_rows(predictors.rows, rng), tree_opt, &rng));
    }
    return forest;
}

int ForestModel::majority_vote(std::span<const int> row) const {
    std::vector<int> votes(static_cast<std::size_t>(n_levels), 0);
    for (const auto& tree : trees) ++votes[static_cast<std::size_t>(tree.predict(row) - 1)];
    return static_cast<int>(std::max_element(votes.begin(), votes.end()) - votes.begin()) + 1;
}

int ForestModel::impute_value(std::span<const int> row, Rng& rng) const {
    if (mode == ForestMode::Majority) return majority_vote(row);
    const auto& tree = trees[static_cast<std::size_t>(rng.uniform_index(trees.size()))];
    return tree.sample_from_leaf(row, rng);
}

}  // namespace ordimpute

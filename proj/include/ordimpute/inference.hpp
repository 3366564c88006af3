#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ordimpute/data.hpp"

namespace ordimpute {

/// P(Y_j1 = d1, ..., Y_jk = dk) for 1 to 3 distinct variables, with its
/// population value.
struct Estimand {
    std::vector<std::pair<std::size_t, int>> cells;  // (variable, level), variables ascending
    double truth = 0.0;

    std::size_t arity() const { return cells.size(); }
    friend bool operator==(const Estimand&, const Estimand&) = default;
};

/// "NAME=level" pairs joined by '&'.
std::string estimand_label(const Estimand& e, const std::vector<VariableSpec>& variables);

/// Throws std::invalid_argument unless 1 <= arity <= 3 with distinct,
/// in-range variables and levels.
void validate_estimand(const Estimand& e, const std::vector<VariableSpec>& variables);

struct CellEstimate {
    double q = 0.0;
    double u = 0.0;  // q(1 - q) / n
};

CellEstimate cell_probability(const OrdinalDataset& data, const Estimand& e);

/// Same as calling cell_probability for each estimand, with one counting
/// pass per distinct variable tuple.
std::vector<CellEstimate> cell_probabilities(const OrdinalDataset& data, std::span<const Estimand> estimands);

struct PooledEstimate {
    double q_bar = 0.0;
    double b = 0.0;      // between-imputation variance
    double u_bar = 0.0;  // mean within-imputation variance
    double t = 0.0;      // (1 + 1/L) b + u_bar
    double dof = 0.0;    // +inf when b = 0
    double lower = 0.0;
    double upper = 0.0;
};

/// Combining rules over L >= 2 completed-data estimates. The interval is
/// q_bar +- t_{dof, 0.975} sqrt(T), not clamped to [0, 1].
PooledEstimate pool(std::span<const double> q, std::span<const double> u);

/// q_hat +- 1.96 sqrt(q_hat (1 - q_hat) / n), not clamped.
std::pair<double, double> wald_interval(double q_hat, std::size_t n);

/// Every cell over `arity` variables whose population share Q satisfies
/// n_sample Q > 10 and n_sample (1 - Q) > 10. Variable tuples ascend
/// lexicographically, then levels.
std::vector<Estimand> enumerate_estimands(const OrdinalDataset& population, int arity, std::size_t n_sample);

}  // namespace ordimpute

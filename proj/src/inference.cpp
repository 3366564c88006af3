#include "ordimpute/inference.hpp"

#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>

#include "ordimpute/distributions.hpp"
#include "ordimpute/error.hpp"

namespace ordimpute {

namespace {

// Counts of every level combination over the given variables, indexed
// mixed-radix with the first variable most significant.
std::vector<std::size_t> joint_counts(const OrdinalDataset& data, const std::vector<std::size_t>& vars) {
    std::size_t size = 1;
    for (std::size_t j : vars) size *= static_cast<std::size_t>(data.cardinality(j));
    std::vector<std::size_t> counts(size, 0);
    for (std::size_t i = 0; i < data.rows(); ++i) {
        std::size_t index = 0;
        for (std::size_t j : vars) index = index * static_cast<std::size_t>(data.cardinality(j)) + static_cast<std::size_t>(data.at(i, j) - 1);
        ++counts[index];
    }
    return counts;
}

std::size_t cell_index(const OrdinalDataset& data, const Estimand& e) {
    std::size_t index = 0;
    for (const auto& [j, d] : e.cells) index = index * static_cast<std::size_t>(data.cardinality(j)) + static_cast<std::size_t>(d - 1);
    return index;
}

}  // namespace

std::string estimand_label(const Estimand& e, const std::vector<VariableSpec>& variables) {
    std::string s;
    for (const auto& [j, d] : e.cells) {
        if (!s.empty()) s += '&';
        s += variables.at(j).name + '=' + std::to_string(d);
    }
    return s;
}

void validate_estimand(const Estimand& e, const std::vector<VariableSpec>& variables) {
    if (e.cells.empty() || e.cells.size() > 3) throw std::invalid_argument("an estimand covers 1 to 3 variables");
    for (std::size_t k = 0; k < e.cells.size(); ++k) {
        const auto& [j, d] = e.cells[k];
        if (j >= variables.size()) throw std::invalid_argument("estimand variable out of range");
        if (d < 1 || d > variables[j].cardinality) throw std::invalid_argument("estimand level out of range");
        if (k > 0 && e.cells[k - 1].first >= j) throw std::invalid_argument("estimand variables must be distinct and ascending");
    }
}

CellEstimate cell_probability(const OrdinalDataset& data, const Estimand& e) {
    validate_estimand(e, data.variables());
    std::size_t hits = 0;
    for (std::size_t i = 0; i < data.rows(); ++i) {
        bool match = true;
        for (const auto& [j, d] : e.cells) match = match && data.at(i, j) == d;
        hits += match;
    }
    const double n = static_cast<double>(data.rows());
    const double q = static_cast<double>(hits) / n;
    return {q, q * (1.0 - q) / n};
}

std::vector<CellEstimate> cell_probabilities(const OrdinalDataset& data, std::span<const Estimand> estimands) {
    std::map<std::vector<std::size_t>, std::vector<std::size_t>> tables;
    std::vector<CellEstimate> out;
    out.reserve(estimands.size());
    const double n = static_cast<double>(data.rows());
    for (const auto& e : estimands) {
        validate_estimand(e, data.variables());
        std::vector<std::size_t> vars;
        for (const auto& c : e.cells) vars.push_back(c.first);
        auto it = tables.find(vars);
        if (it == tables.end()) it = tables.emplace(vars, joint_counts(data, vars)).first;
        const double q = static_cast<double>(it->second[cell_index(data, e)]) / n;
        out.push_back({q, q * (1.0 - q) / n});
    }
    return out;
}

PooledEstimate pool(std::span<const double> q, std::span<const double> u) {
    if (q.size() != u.size()) throw std::invalid_argument("pool needs one variance per estimate");
    if (q.size() < 2) throw ConfigError("pooling needs at least two completed datasets");
    const double l = static_cast<double>(q.size());
    PooledEstimate r;
    for (std::size_t k = 0; k < q.size(); ++k) {
        r.q_bar += q[k];
        r.u_bar += u[k];
    }
    r.q_bar /= l;
    r.u_bar /= l;
    for (double x : q) r.b += (x - r.q_bar) * (x - r.q_bar);
    r.b /= l - 1.0;
    const double between = (1.0 + 1.0 / l) * r.b;
    r.t = between + r.u_bar;
    if (r.b > 0.0) {
        const double ratio = 1.0 + r.u_bar / between;
        r.dof = (l - 1.0) * ratio * ratio;
    } else {
        r.dof = std::numeric_limits<double>::infinity();
    }
    const double half = student_t_quantile(0.975, r.dof) * std::sqrt(r.t);
    r.lower = r.q_bar - half;
    r.upper = r.q_bar + half;
    return r;
}

std::pair<double, double> wald_interval(double q_hat, std::size_t n) {
    if (!(q_hat >= 0.0 && q_hat <= 1.0) || n == 0) throw std::invalid_argument("wald_interval needs q in [0,1] and n >= 1");
    const double half = 1.96 * std::sqrt(q_hat * (1.0 - q_hat) / static_cast<double>(n));
    return {q_hat - half, q_hat + half};
}

std::vector<Estimand> enumerate_estimands(const OrdinalDataset& population, int arity, std::size_t n_sample) {
    if (arity < 1 || arity > 3) throw ConfigError("estimand arity must be 1, 2 or 3");
    const std::size_t p = population.cols();
    const double n_pop = static_cast<double>(population.rows());
    const double n = static_cast<double>(n_sample);
    std::vector<Estimand> out;
    // walk ascending variable tuples
    std::vector<std::size_t> idx(static_cast<std::size_t>(arity));
    for (std::size_t k = 0; k < idx.size(); ++k) idx[k] = k;
    while (!idx.empty() && idx.back() < p) {
        const auto counts = joint_counts(population, idx);
        for (std::size_t c = 0; c < counts.size(); ++c) {
            const double q = static_cast<double>(counts[c]) / n_pop;
            if (!(n * q > 10.0 && n * (1.0 - q) > 10.0)) continue;
            Estimand e;
            e.truth = q;
            std::size_t rest = c;
            e.cells.resize(idx.size());
            for (std::size_t k = idx.size(); k-- > 0;) {
                const auto card = static_cast<std::size_t>(population.cardinality(idx[k]));
                e.cells[k] = {idx[k], static_cast<int>(rest % card) + 1};
                rest /= card;
            }
            out.push_back(std::move(e));
        }
        // next combination
        std::size_t k = idx.size();
        while (k-- > 0) {
            if (idx[k] < p - idx.size() + k) {
                ++idx[k];
                for (std::size_t r = k + 1; r < idx.size(); ++r) idx[r] = idx[r - 1] + 1;
                break;
            }
            if (k == 0) {
                idx.back() = p;  // done
                break;
            }
        }
    }
    return out;
}

}  // namespace ordimpute

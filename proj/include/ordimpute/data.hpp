#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace ordimpute {

/// Level code reserved for masked cells. Valid levels are 1..cardinality.
inline constexpr int kMissingLevel = 0;

struct VariableSpec {
    std::string name;
    int cardinality = 2;

    friend bool operator==(const VariableSpec&, const VariableSpec&) = default;
};

/// n x p matrix of ordinal level codes, stored column-major.
///
/// Cells hold 1..D_j, or kMissingLevel when the dataset is the data half of
/// an IncompleteDataset. `is_complete()` tells the two apart.
class OrdinalDataset {
public:
    OrdinalDataset() = default;
    /// Throws DataError on duplicate names, cardinality < 2, size mismatch,
    /// or a cell outside {0, 1..D_j}.
    OrdinalDataset(std::vector<VariableSpec> variables, std::size_t n_rows, std::vector<int> cells);

    std::size_t rows() const { return n_; }
    std::size_t cols() const { return variables_.size(); }
    const std::vector<VariableSpec>& variables() const { return variables_; }
    const VariableSpec& variable(std::size_t j) const { return variables_.at(j); }
    int cardinality(std::size_t j) const { return variables_[j].cardinality; }

    int at(std::size_t i, std::size_t j) const { return cells_[j * n_ + i]; }
    std::span<const int> column(std::size_t j) const { return {cells_.data() + j * n_, n_}; }
    const std::vector<int>& cells() const { return cells_; }

    bool is_complete() const;
    /// Copy of row i as a level vector.
    std::vector<int> row(std::size_t i) const;
    /// New dataset holding the given rows, in order.
    OrdinalDataset select_rows(std::span<const std::size_t> rows) const;
    std::size_t index_of(const std::string& name) const;

    friend bool operator==(const OrdinalDataset&, const OrdinalDataset&) = default;

private:
    std::vector<VariableSpec> variables_;
    std::size_t n_ = 0;
    std::vector<int> cells_;
};

/// n x p missingness indicators, true = missing. Column-major like the data.
class MaskMatrix {
public:
    MaskMatrix() = default;
    MaskMatrix(std::size_t n_rows, std::size_t n_cols) : n_(n_rows), p_(n_cols), bits_(n_rows * n_cols, 0) {}

    std::size_t rows() const { return n_; }
    std::size_t cols() const { return p_; }
    bool missing(std::size_t i, std::size_t j) const { return bits_[j * n_ + i] != 0; }
    void set(std::size_t i, std::size_t j, bool value) { bits_[j * n_ + i] = value ? 1 : 0; }

    std::size_t count() const;
    std::size_t count_in_column(std::size_t j) const;
    bool any() const { return count() > 0; }
    /// Rows with no missing cell.
    std::size_t complete_rows() const;

    friend bool operator==(const MaskMatrix&, const MaskMatrix&) = default;

private:
    std::size_t n_ = 0;
    std::size_t p_ = 0;
    std::vector<std::uint8_t> bits_;
};

/// Data plus mask. Masked cells are forced to kMissingLevel on construction;
/// observed cells must hold valid levels.
class IncompleteDataset {
public:
    IncompleteDataset() = default;
    IncompleteDataset(OrdinalDataset data, MaskMatrix mask);
    /// Fully observed wrapper.
    explicit IncompleteDataset(OrdinalDataset data);

    const OrdinalDataset& data() const { return data_; }
    const MaskMatrix& mask() const { return mask_; }
    std::size_t rows() const { return data_.rows(); }
    std::size_t cols() const { return data_.cols(); }
    const std::vector<VariableSpec>& variables() const { return data_.variables(); }

    /// Observed level counts for column j, indexed 0..D_j-1.
    std::vector<std::size_t> observed_counts(std::size_t j) const;

private:
    OrdinalDataset data_;
    MaskMatrix mask_;
};

struct ImputationResult {
    std::vector<OrdinalDataset> completed;
    std::string method;
    std::uint64_t seed = 0;
    std::map<std::string, double> diagnostics;
};

/// Throws if any completed dataset disagrees with `input` on an observed
/// cell or still carries a missing-level sentinel.
void check_imputation(const IncompleteDataset& input, const ImputationResult& result);

/// `name,cardinality` per line; blank lines and lines starting with '#' skipped.
std::vector<VariableSpec> load_dictionary(const std::filesystem::path& path);
void save_dictionary(const std::vector<VariableSpec>& variables, const std::filesystem::path& path);

/// Header names must all appear in the dictionary and vice versa; the
/// dataset keeps the header's column order. Empty cells and "NA" are missing.
IncompleteDataset load_csv(const std::filesystem::path& path, const std::vector<VariableSpec>& dictionary);
IncompleteDataset parse_csv(const std::string& text, const std::vector<VariableSpec>& dictionary);
/// Missing cells are written as "NA".
void save_csv(const IncompleteDataset& data, const std::filesystem::path& path);
void save_csv(const OrdinalDataset& data, const std::filesystem::path& path);
std::string format_csv(const IncompleteDataset& data);

/// Simple random sample of n_sample rows without replacement.
OrdinalDataset draw_sample(const OrdinalDataset& population, std::size_t n_sample, std::uint64_t seed);

/// Empirical level distribution of column j (complete datasets only).
std::vector<double> marginal_pmf(const OrdinalDataset& data, std::size_t j);

}  // namespace ordimpute

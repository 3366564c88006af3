#include "ordimpute/data.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "ordimpute/error.hpp"
#include "ordimpute/rng.hpp"

namespace ordimpute {

namespace {

std::vector<std::string> split_fields(std::string_view line) {
    std::vector<std::string> fields;
    std::size_t start = 0;
    for (;;) {
        std::size_t comma = line.find(',', start);
        std::string_view field = line.substr(start, comma == std::string_view::npos ? line.npos : comma - start);
        while (!field.empty() && (field.front() == ' ' || field.front() == '\t')) field.remove_prefix(1);
        while (!field.empty() && (field.back() == ' ' || field.back() == '\t' || field.back() == '\r')) {
            field.remove_suffix(1);
        }
        fields.emplace_back(field);
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return fields;
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void write_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out << text;
    if (!out) throw DataError("write failed for " + path.string());
}

bool parse_int(std::string_view text, int& value) {
    if (text.empty()) return false;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    return ec == std::errc() && ptr == text.data() + text.size();
}

std::vector<std::string_view> split_lines(const std::string& text) {
    std::vector<std::string_view> lines;
    std::string_view rest(text);
    while (!rest.empty()) {
        std::size_t nl = rest.find('\n');
        std::string_view line = rest.substr(0, nl);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        lines.push_back(line);
        if (nl == std::string_view::npos) break;
        rest.remove_prefix(nl + 1);
    }
    return lines;
}

}  // namespace

OrdinalDataset::OrdinalDataset(std::vector<VariableSpec> variables, std::size_t n_rows, std::vector<int> cells)
    : variables_(std::move(variables)), n_(n_rows), cells_(std::move(cells)) {
    std::set<std::string> names;
    for (const auto& v : variables_) {
        if (v.cardinality < 2) throw DataError("variable '" + v.name + "' needs at least 2 levels");
        if (!names.insert(v.name).second) throw DataError("duplicate variable name '" + v.name + "'");
    }
    if (cells_.size() != n_ * variables_.size()) throw DataError("cell count does not match n x p");
    for (std::size_t j = 0; j < variables_.size(); ++j) {
        for (std::size_t i = 0; i < n_; ++i) {
            int v = cells_[j * n_ + i];
            if (v < kMissingLevel || v > variables_[j].cardinality) {
                throw DataError("row " + std::to_string(i + 1) + ", column '" + variables_[j].name + "': level " +
                                std::to_string(v) + " outside 1.." + std::to_string(variables_[j].cardinality));
            }
        }
    }
}

bool OrdinalDataset::is_complete() const {
    return std::find(cells_.begin(), cells_.end(), kMissingLevel) == cells_.end();
}

std::vector<int> OrdinalDataset::row(std::size_t i) const {
    std::vector<int> out(cols());
    for (std::size_t j = 0; j < cols(); ++j) out[j] = at(i, j);
    return out;
}

OrdinalDataset OrdinalDataset::select_rows(std::span<const std::size_t> rows) const {
    std::vector<int> cells(rows.size() * cols());
    for (std::size_t j = 0; j < cols(); ++j) {
        for (std::size_t r = 0; r < rows.size(); ++r) cells[j * rows.size() + r] = at(rows[r], j);
    }
    return OrdinalDataset(variables_, rows.size(), std::move(cells));
}

std::size_t OrdinalDataset::index_of(const std::string& name) const {
    for (std::size_t j = 0; j < variables_.size(); ++j) {
        if (variables_[j].name == name) return j;
    }
    throw DataError("unknown variable '" + name + "'");
}

std::size_t MaskMatrix::count() const {
    return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
}

std::size_t MaskMatrix::count_in_column(std::size_t j) const {
    auto first = bits_.begin() + static_cast<std::ptrdiff_t>(j * n_);
    return static_cast<std::size_t>(std::count(first, first + static_cast<std::ptrdiff_t>(n_), std::uint8_t{1}));
}

std::size_t MaskMatrix::complete_rows() const {
    std::size_t complete = 0;
    for (std::size_t i = 0; i < n_; ++i) {
        bool any = false;
        for (std::size_t j = 0; j < p_ && !any; ++j) any = missing(i, j);
        if (!any) ++complete;
    }
    return complete;
}

IncompleteDataset::IncompleteDataset(OrdinalDataset data, MaskMatrix mask) : mask_(std::move(mask)) {
    if (mask_.rows() != data.rows() || mask_.cols() != data.cols()) {
        throw DataError("mask dimensions do not match data");
    }
    std::vector<int> cells = data.cells();
    const std::size_t n = data.rows();
    for (std::size_t j = 0; j < data.cols(); ++j) {
        for (std::size_t i = 0; i < n; ++i) {
            int& cell = cells[j * n + i];
            if (mask_.missing(i, j)) {
                cell = kMissingLevel;
            } else if (cell == kMissingLevel) {
                throw DataError("row " + std::to_string(i + 1) + ", column '" + data.variable(j).name +
                                "': observed cell holds no level");
            }
        }
    }
    data_ = OrdinalDataset(data.variables(), n, std::move(cells));
}

IncompleteDataset::IncompleteDataset(OrdinalDataset data)
    : IncompleteDataset(data, MaskMatrix(data.rows(), data.cols())) {}

std::vector<std::size_t> IncompleteDataset::observed_counts(std::size_t j) const {
    std::vector<std::size_t> counts(static_cast<std::size_t>(data_.cardinality(j)), 0);
    for (int level : data_.column(j)) {
        if (level != kMissingLevel) ++counts[static_cast<std::size_t>(level - 1)];
    }
    return counts;
}

void check_imputation(const IncompleteDataset& input, const ImputationResult& result) {
    for (std::size_t l = 0; l < result.completed.size(); ++l) {
        const auto& z = result.completed[l];
        if (z.rows() != input.rows() || z.cols() != input.cols()) {
            throw SamplerError("completed dataset " + std::to_string(l) + " has wrong shape");
        }
        for (std::size_t j = 0; j < z.cols(); ++j) {
            for (std::size_t i = 0; i < z.rows(); ++i) {
                int v = z.at(i, j);
                if (v == kMissingLevel) throw SamplerError("completed dataset still has a missing cell");
                if (!input.mask().missing(i, j) && v != input.data().at(i, j)) {
                    throw SamplerError("completed dataset altered an observed cell");
                }
            }
        }
    }
}

std::vector<VariableSpec> load_dictionary(const std::filesystem::path& path) {
    std::vector<VariableSpec> specs;
    const std::string text = read_file(path);
    std::size_t line_no = 0;
    for (std::string_view line : split_lines(text)) {
        ++line_no;
        auto fields = split_fields(line);
        if (fields.size() == 1 && fields[0].empty()) continue;
        if (!fields[0].empty() && fields[0][0] == '#') continue;
        int card = 0;
        if (fields.size() != 2 || fields[0].empty() || !parse_int(fields[1], card)) {
            throw DataError(path.string() + ":" + std::to_string(line_no) + ": expected 'name,cardinality'");
        }
        if (card < 2) {
            throw DataError(path.string() + ":" + std::to_string(line_no) + ": cardinality must be >= 2");
        }
        specs.push_back({fields[0], card});
    }
    if (specs.empty()) throw DataError("dictionary " + path.string() + " lists no variables");
    return specs;
}

void save_dictionary(const std::vector<VariableSpec>& variables, const std::filesystem::path& path) {
    std::string text;
    for (const auto& v : variables) text += v.name + "," + std::to_string(v.cardinality) + "\n";
    write_file(path, text);
}

IncompleteDataset parse_csv(const std::string& text, const std::vector<VariableSpec>& dictionary) {
    auto lines = split_lines(text);
    while (!lines.empty() && lines.back().empty()) lines.pop_back();
    if (lines.empty()) throw DataError("CSV has no header row");

    const auto header = split_fields(lines[0]);
    std::vector<VariableSpec> variables;
    for (const auto& name : header) {
        auto it = std::find_if(dictionary.begin(), dictionary.end(), [&](const auto& v) { return v.name == name; });
        if (it == dictionary.end()) throw DataError("unknown column '" + name + "'");
        variables.push_back(*it);
    }
    for (const auto& v : dictionary) {
        if (std::find(header.begin(), header.end(), v.name) == header.end()) {
            throw DataError("column '" + v.name + "' missing from CSV header");
        }
    }

    const std::size_t p = variables.size();
    const std::size_t n = lines.size() - 1;
    std::vector<int> cells(n * p, kMissingLevel);
    MaskMatrix mask(n, p);
    for (std::size_t i = 0; i < n; ++i) {
        const auto fields = split_fields(lines[i + 1]);
        if (fields.size() != p) {
            throw DataError("row " + std::to_string(i + 1) + ": expected " + std::to_string(p) + " fields, found " +
                            std::to_string(fields.size()));
        }
        for (std::size_t j = 0; j < p; ++j) {
            const std::string& f = fields[j];
            if (f.empty() || f == "NA") {
                mask.set(i, j, true);
                continue;
            }
            int level = 0;
            if (!parse_int(f, level) || level < 1 || level > variables[j].cardinality) {
                throw DataError("row " + std::to_string(i + 1) + ", column '" + variables[j].name + "': value '" + f +
                                "' is not a level in 1.." + std::to_string(variables[j].cardinality));
            }
            cells[j * n + i] = level;
        }
    }
    return IncompleteDataset(OrdinalDataset(std::move(variables), n, std::move(cells)), std::move(mask));
}

IncompleteDataset load_csv(const std::filesystem::path& path, const std::vector<VariableSpec>& dictionary) {
    return parse_csv(read_file(path), dictionary);
}

std::string format_csv(const IncompleteDataset& data) {
    std::string out;
    const auto& vars = data.variables();
    for (std::size_t j = 0; j < vars.size(); ++j) {
        if (j) out += ',';
        out += vars[j].name;
    }
    out += '\n';
    for (std::size_t i = 0; i < data.rows(); ++i) {
        for (std::size_t j = 0; j < vars.size(); ++j) {
            if (j) out += ',';
            if (data.mask().missing(i, j)) {
                out += "NA";
            } else {
                out += std::to_string(data.data().at(i, j));
            }
        }
        out += '\n';
    }
    return out;
}

void save_csv(const IncompleteDataset& data, const std::filesystem::path& path) {
    write_file(path, format_csv(data));
}

void save_csv(const OrdinalDataset& data, const std::filesystem::path& path) {
    save_csv(IncompleteDataset(data), path);
}

OrdinalDataset draw_sample(const OrdinalDataset& population, std::size_t n_sample, std::uint64_t seed) {
    if (n_sample > population.rows()) {
        throw DataError("sample size " + std::to_string(n_sample) + " exceeds population size " +
                        std::to_string(population.rows()));
    }
    std::vector<std::size_t> index(population.rows());
    std::iota(index.begin(), index.end(), std::size_t{0});
    Rng rng(seed);
    // Partial Fisher-Yates: the first n_sample slots are the sample.
    for (std::size_t k = 0; k < n_sample; ++k) {
        std::size_t r = k + static_cast<std::size_t>(rng.uniform_index(index.size() - k));
        std::swap(index[k], index[r]);
    }
    index.resize(n_sample);
    return population.select_rows(index);
}

std::vector<double> marginal_pmf(const OrdinalDataset& data, std::size_t j) {
    if (j >= data.cols()) throw DataError("column index out of range");
    std::vector<double> pmf(static_cast<std::size_t>(data.cardinality(j)), 0.0);
    std::size_t total = 0;
    for (int level : data.column(j)) {
        if (level == kMissingLevel) continue;
        pmf[static_cast<std::size_t>(level - 1)] += 1.0;
        ++total;
    }
    if (total == 0) throw DataError("column '" + data.variable(j).name + "' has no observed values");
    for (double& v : pmf) v /= static_cast<double>(total);
    return pmf;
}

}  // namespace ordimpute

#pragma once

#include <abn/error.hpp>

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace abn {

enum class Family { gaussian, binomial, poisson, multinomial };

std::string_view to_string(Family family);

struct DistributionKind {
    Family family = Family::gaussian;
    int levels = 0;  // multinomial only, >= 3

    static DistributionKind gaussian() { return {Family::gaussian, 0}; }
    static DistributionKind binomial() { return {Family::binomial, 0}; }
    static DistributionKind poisson() { return {Family::poisson, 0}; }
    static DistributionKind multinomial(int levels) { return {Family::multinomial, levels}; }

    /// Number of design-matrix columns this variable contributes as a covariate.
    int design_width() const { return family == Family::multinomial ? levels - 1 : 1; }

    bool operator==(const DistributionKind&) const = default;
};

using DistSpec = std::map<std::string, DistributionKind>;

/// Parses `{"col": "gaussian" | "binomial" | "poisson" | {"multinomial": C}}`.
DistSpec parse_dist_spec(std::string_view json_text);
std::string dist_spec_json(const DistSpec& spec);

/// Square 0/1 matrix, row-major. Used for ban/retain constraints and DAG
/// adjacency (row = child, column = parent).
class BinaryMatrix {
public:
    BinaryMatrix() = default;
    explicit BinaryMatrix(std::size_t k) : k_(k), cells_(k * k, 0) {}

    std::size_t size() const { return k_; }
    std::uint8_t operator()(std::size_t row, std::size_t col) const { return cells_[row * k_ + col]; }
    std::uint8_t& operator()(std::size_t row, std::size_t col) { return cells_[row * k_ + col]; }
    std::size_t row_count(std::size_t row) const;
    std::size_t count() const;

    bool operator==(const BinaryMatrix&) const = default;

private:
    std::size_t k_ = 0;
    std::vector<std::uint8_t> cells_;
};

/// Validated observational data. Binomial columns hold {0,1}, multinomial
/// columns hold level indices 0..C-1; `level_labels` keeps the original text of
/// each level in sorted order so the data can be written back out.
struct Dataset {
    std::vector<std::string> names;
    std::vector<std::vector<double>> columns;
    std::vector<DistributionKind> dists;
    std::vector<std::vector<std::string>> level_labels;

    std::size_t n() const { return columns.empty() ? 0 : columns.front().size(); }
    std::size_t k() const { return names.size(); }
    std::optional<std::size_t> index_of(std::string_view name) const;
    DistSpec dist_spec() const;
};

/// Reads an RFC-4180 CSV with a header row and validates it against `spec`.
Dataset load_dataset(std::istream& csv, const DistSpec& spec);
Dataset load_dataset(std::string_view csv_text, const DistSpec& spec);

/// Builds a dataset from numeric columns (binomial/multinomial values are
/// recoded the same way `load_dataset` recodes them).
Dataset make_dataset(std::vector<std::string> names, std::vector<std::vector<double>> columns,
                     std::vector<DistributionKind> dists);

void write_dataset_csv(std::ostream& out, const Dataset& ds);

/// Shortest decimal text that parses back to exactly `value`.
std::string format_double(double value);

struct ConstraintSpec {
    BinaryMatrix ban;     // over dataset columns
    BinaryMatrix retain;  // over dataset columns
    std::vector<std::string> adjust;
    int max_parents = 5;

    static ConstraintSpec unconstrained(std::size_t k, int max_parents);
};

enum class ViolationKind {
    ShapeMismatch,
    BadMaxParents,
    Conflict,
    DiagonalBan,
    DiagonalRetain,
    RetainOverflow,
    UnknownAdjust,
    AdjustInStructure,
};

std::string_view to_string(ViolationKind kind);

struct Violation {
    ViolationKind kind;
    std::size_t row = 0;
    std::size_t col = 0;
    std::string message;
};

std::vector<Violation> validate_constraints(const ConstraintSpec& cs, const Dataset& ds);

/// Adjacency CSV: header row and first column of names, row = child.
BinaryMatrix read_adjacency_csv(std::istream& in, std::span<const std::string> names);
void write_adjacency_csv(std::ostream& out, const BinaryMatrix& m, std::span<const std::string> names);

/// Dataset column indices taking part in the structure (every column not
/// named in `adjust`), ascending.
std::vector<std::size_t> structure_columns(const Dataset& ds, std::span<const std::string> adjust);
std::vector<std::size_t> adjust_columns(const Dataset& ds, std::span<const std::string> adjust);

struct DesignMatrix {
    Eigen::MatrixXd values;
    std::vector<std::string> column_labels;  // first is "(Intercept)"
    std::vector<std::string> source_terms;   // originating variable per column

    Eigen::Index cols() const { return values.cols(); }
    DesignMatrix select(std::span<const Eigen::Index> keep) const;
};

struct EncodedNode {
    DesignMatrix design;
    Eigen::VectorXd response;
};

/// Intercept, then parent columns in ascending index, then adjustment
/// columns in ascending index. Multinomial covariates are dummy coded
/// against their first level.
EncodedNode encode_design(const Dataset& ds, std::size_t child, std::span<const std::size_t> parents,
                          std::span<const std::size_t> adjust);

namespace csv {

using Row = std::vector<std::string>;

std::vector<Row> parse(std::istream& in);
std::string escape(std::string_view field);
void write_row(std::ostream& out, std::span<const std::string> fields);

}  // namespace csv

}  // namespace abn

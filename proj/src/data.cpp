#include <abn/data.hpp>

#include <nlohmann/json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>

namespace abn {

std::string_view to_string(Errc code) {
    switch (code) {
        case Errc::MissingValue: return "MissingValue";
        case Errc::UnknownColumn: return "UnknownColumn";
        case Errc::MissingSpec: return "MissingSpec";
        case Errc::LevelMismatch: return "LevelMismatch";
        case Errc::IndexOutOfRange: return "IndexOutOfRange";
        case Errc::IllegalParent: return "IllegalParent";
        case Errc::ConstraintConflict: return "ConstraintConflict";
        case Errc::NotConverged: return "NotConverged";
        case Errc::Diverged: return "Diverged";
        case Errc::RankDeficient: return "RankDeficient";
        case Errc::Unfittable: return "Unfittable";
        case Errc::IncompleteCache: return "IncompleteCache";
        case Errc::KTooLarge: return "KTooLarge";
        case Errc::CyclicDag: return "CyclicDag";
        case Errc::NodeMismatch: return "NodeMismatch";
        case Errc::Precondition: return "Precondition";
        case Errc::Parse: return "Parse";
        case Errc::Io: return "Io";
    }
    return "Unknown";
}

std::string_view to_string(Family family) {
    switch (family) {
        case Family::gaussian: return "gaussian";
        case Family::binomial: return "binomial";
        case Family::poisson: return "poisson";
        case Family::multinomial: return "multinomial";
    }
    return "unknown";
}

std::string_view to_string(ViolationKind kind) {
    switch (kind) {
        case ViolationKind::ShapeMismatch: return "ShapeMismatch";
        case ViolationKind::BadMaxParents: return "BadMaxParents";
        case ViolationKind::Conflict: return "Conflict";
        case ViolationKind::DiagonalBan: return "DiagonalBan";
        case ViolationKind::DiagonalRetain: return "DiagonalRetain";
        case ViolationKind::RetainOverflow: return "RetainOverflow";
        case ViolationKind::UnknownAdjust: return "UnknownAdjust";
        case ViolationKind::AdjustInStructure: return "AdjustInStructure";
    }
    return "Unknown";
}

// ---------------------------------------------------------------------------
// distribution spec

DistSpec parse_dist_spec(std::string_view json_text) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::parse_error& e) {
        throw Error(Errc::Parse, std::string("distribution spec: ") + e.what());
    }
    if (!doc.is_object()) throw Error(Errc::Parse, "distribution spec must be a JSON object");

    DistSpec spec;
    for (const auto& [name, value] : doc.items()) {
        if (value.is_string()) {
            const auto tag = value.get<std::string>();
            if (tag == "gaussian") {
                spec[name] = DistributionKind::gaussian();
            } else if (tag == "binomial") {
                spec[name] = DistributionKind::binomial();
            } else if (tag == "poisson") {
                spec[name] = DistributionKind::poisson();
            } else {
                throw Error(Errc::Parse, "unknown distribution '" + tag + "' for column " + name);
            }
        } else if (value.is_object() && value.size() == 1 && value.contains("multinomial") &&
                   value["multinomial"].is_number_integer()) {
            const int levels = value["multinomial"].get<int>();
            if (levels < 3) {
                throw Error(Errc::Parse, "multinomial column " + name + " needs at least 3 levels");
            }
            spec[name] = DistributionKind::multinomial(levels);
        } else {
            throw Error(Errc::Parse, "malformed distribution entry for column " + name);
        }
    }
    return spec;
}

std::string dist_spec_json(const DistSpec& spec) {
    nlohmann::json doc = nlohmann::json::object();
    for (const auto& [name, kind] : spec) {
        if (kind.family == Family::multinomial) {
            doc[name] = {{"multinomial", kind.levels}};
        } else {
            doc[name] = std::string(to_string(kind.family));
        }
    }
    return doc.dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// BinaryMatrix

std::size_t BinaryMatrix::row_count(std::size_t row) const {
    return static_cast<std::size_t>(
        std::count(cells_.begin() + static_cast<std::ptrdiff_t>(row * k_),
                   cells_.begin() + static_cast<std::ptrdiff_t>((row + 1) * k_), std::uint8_t{1}));
}

std::size_t BinaryMatrix::count() const {
    return static_cast<std::size_t>(std::count(cells_.begin(), cells_.end(), std::uint8_t{1}));
}

// ---------------------------------------------------------------------------
// CSV

namespace csv {

std::vector<Row> parse(std::istream& in) {
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (text.size() >= 3 && text.compare(0, 3, "\xEF\xBB\xBF") == 0) text.erase(0, 3);

    std::vector<Row> rows;
    Row row;
    std::string field;
    bool quoted = false;
    bool field_started = false;
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    field += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                field += c;
            }
            continue;
        }
        switch (c) {
            case '"':
                quoted = true;
                field_started = true;
                break;
            case ',':
                row.push_back(std::move(field));
                field.clear();
                field_started = true;
                break;
            case '\r':
                break;
            case '\n':
                if (field_started || !field.empty() || !row.empty()) {
                    row.push_back(std::move(field));
                    rows.push_back(std::move(row));
                }
                row.clear();
                field.clear();
                field_started = false;
                break;
            default:
                field += c;
                field_started = true;
        }
    }
    if (quoted) throw Error(Errc::Parse, "unterminated quoted CSV field");
    if (field_started || !field.empty() || !row.empty()) {
        row.push_back(std::move(field));
        rows.push_back(std::move(row));
    }
    return rows;
}

std::string escape(std::string_view field) {
    if (field.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(field);
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out += '"';
        out += c;
    }
    out += '"';
    return out;
}

void write_row(std::ostream& out, std::span<const std::string> fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
        if (i) out << ',';
        out << escape(fields[i]);
    }
    out << "\r\n";
}

}  // namespace csv

// ---------------------------------------------------------------------------
// Dataset

namespace {

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
    return s;
}

std::optional<double> parse_number(std::string_view s) {
    s = trim(s);
    if (!s.empty() && s.front() == '+') s.remove_prefix(1);
    if (s.empty()) return std::nullopt;
    double value = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
    if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(value)) return std::nullopt;
    return value;
}

// Distinct labels in recode order: numeric order when every label is a
// number, lexicographic otherwise.
std::vector<std::string> sorted_levels(const std::vector<std::string>& cells) {
    std::set<std::string> distinct(cells.begin(), cells.end());
    std::vector<std::string> levels(distinct.begin(), distinct.end());
    const bool numeric = std::all_of(levels.begin(), levels.end(),
                                     [](const std::string& s) { return parse_number(s).has_value(); });
    if (numeric) {
        std::stable_sort(levels.begin(), levels.end(), [](const std::string& a, const std::string& b) {
            return *parse_number(a) < *parse_number(b);
        });
        // "1" and "1.0" are the same level.
        levels.erase(std::unique(levels.begin(), levels.end(),
                                 [](const std::string& a, const std::string& b) {
                                     return *parse_number(a) == *parse_number(b);
                                 }),
                     levels.end());
    }
    return levels;
}

void recode_categorical(const std::string& name, const DistributionKind& kind,
                        const std::vector<std::string>& cells, std::vector<double>& column,
                        std::vector<std::string>& labels) {
    labels = sorted_levels(cells);
    const std::size_t expected = kind.family == Family::binomial ? 2 : static_cast<std::size_t>(kind.levels);
    if (labels.size() != expected) {
        throw Error(Errc::LevelMismatch, "column " + name + " declared " + std::string(to_string(kind.family)) +
                                             " with " + std::to_string(expected) + " levels but has " +
                                             std::to_string(labels.size()) + " distinct values");
    }
    const bool numeric = parse_number(labels.front()).has_value() &&
                         std::all_of(cells.begin(), cells.end(), [](const auto& s) { return parse_number(s).has_value(); });
    column.resize(cells.size());
    for (std::size_t i = 0; i < cells.size(); ++i) {
        std::size_t level = 0;
        if (numeric) {
            const double v = *parse_number(cells[i]);
            while (*parse_number(labels[level]) != v) ++level;
        } else {
            level = static_cast<std::size_t>(std::lower_bound(labels.begin(), labels.end(), cells[i]) - labels.begin());
        }
        column[i] = static_cast<double>(level);
    }
}

Dataset build_dataset(std::vector<std::string> names, const std::vector<std::vector<std::string>>& cells,
                      const DistSpec& spec) {
    for (const auto& name : names) {
        if (!spec.contains(name)) throw Error(Errc::MissingSpec, "no distribution given for column " + name);
    }
    for (const auto& [name, kind] : spec) {
        if (std::find(names.begin(), names.end(), name) == names.end()) {
            throw Error(Errc::UnknownColumn, "distribution given for absent column " + name);
        }
    }
    {
        std::set<std::string> unique(names.begin(), names.end());
        if (unique.size() != names.size()) throw Error(Errc::Parse, "duplicate column names in header");
    }

    Dataset ds;
    ds.names = std::move(names);
    const std::size_t k = ds.names.size();
    ds.columns.resize(k);
    ds.dists.resize(k);
    ds.level_labels.resize(k);
    for (std::size_t j = 0; j < k; ++j) {
        const auto& name = ds.names[j];
        const auto kind = spec.at(name);
        ds.dists[j] = kind;
        if (kind.family == Family::binomial || kind.family == Family::multinomial) {
            recode_categorical(name, kind, cells[j], ds.columns[j], ds.level_labels[j]);
            continue;
        }
        auto& column = ds.columns[j];
        column.resize(cells[j].size());
        for (std::size_t i = 0; i < cells[j].size(); ++i) {
            const auto value = parse_number(cells[j][i]);
            if (!value) {
                throw Error(kind.family == Family::poisson ? Errc::LevelMismatch : Errc::Parse,
                            "column " + name + " row " + std::to_string(i + 1) + ": not a number: '" +
                                cells[j][i] + "'");
            }
            if (kind.family == Family::poisson && (*value < 0 || std::floor(*value) != *value)) {
                throw Error(Errc::LevelMismatch, "poisson column " + name + " row " + std::to_string(i + 1) +
                                                     " holds " + cells[j][i] + ", not a non-negative integer");
            }
            column[i] = *value;
        }
    }
    return ds;
}

}  // namespace

std::optional<std::size_t> Dataset::index_of(std::string_view name) const {
    const auto it = std::find(names.begin(), names.end(), name);
    if (it == names.end()) return std::nullopt;
    return static_cast<std::size_t>(it - names.begin());
}

DistSpec Dataset::dist_spec() const {
    DistSpec spec;
    for (std::size_t j = 0; j < k(); ++j) spec[names[j]] = dists[j];
    return spec;
}

Dataset load_dataset(std::istream& in, const DistSpec& spec) {
    auto rows = csv::parse(in);
    if (rows.empty()) throw Error(Errc::Parse, "CSV has no header row");
    std::vector<std::string> names;
    for (const auto& h : rows.front()) names.emplace_back(trim(h));
    const std::size_t k = names.size();
    if (rows.size() < 2) throw Error(Errc::Parse, "CSV has no data rows");

    std::vector<std::vector<std::string>> cells(k);
    for (std::size_t r = 1; r < rows.size(); ++r) {
        if (rows[r].size() != k) {
            throw Error(Errc::Parse, "row " + std::to_string(r) + " has " + std::to_string(rows[r].size()) +
                                         " fields, expected " + std::to_string(k));
        }
        for (std::size_t j = 0; j < k; ++j) {
            if (trim(rows[r][j]).empty()) {
                throw Error(Errc::MissingValue, "empty cell in column " + names[j] + " row " + std::to_string(r));
            }
            cells[j].emplace_back(trim(rows[r][j]));
        }
    }
    return build_dataset(std::move(names), cells, spec);
}

Dataset load_dataset(std::string_view csv_text, const DistSpec& spec) {
    std::istringstream in{std::string(csv_text)};
    return load_dataset(in, spec);
}

std::string format_double(double value) {
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
    return std::string(buf, ptr);
}

Dataset make_dataset(std::vector<std::string> names, std::vector<std::vector<double>> columns,
                     std::vector<DistributionKind> dists) {
    if (names.size() != columns.size() || names.size() != dists.size()) {
        throw Error(Errc::Precondition, "make_dataset: names, columns and dists differ in length");
    }
    std::vector<std::vector<std::string>> cells(columns.size());
    DistSpec spec;
    for (std::size_t j = 0; j < columns.size(); ++j) {
        if (j > 0 && columns[j].size() != columns[0].size()) {
            throw Error(Errc::Precondition, "make_dataset: columns differ in length");
        }
        for (double v : columns[j]) cells[j].push_back(format_double(v));
        spec[names[j]] = dists[j];
    }
    if (columns.empty() || columns[0].empty()) throw Error(Errc::Precondition, "make_dataset: empty dataset");
    return build_dataset(std::move(names), cells, spec);
}

void write_dataset_csv(std::ostream& out, const Dataset& ds) {
    csv::write_row(out, ds.names);
    std::vector<std::string> fields(ds.k());
    for (std::size_t i = 0; i < ds.n(); ++i) {
        for (std::size_t j = 0; j < ds.k(); ++j) {
            const double v = ds.columns[j][i];
            fields[j] = ds.level_labels[j].empty() ? format_double(v)
                                                   : ds.level_labels[j][static_cast<std::size_t>(v)];
        }
        csv::write_row(out, fields);
    }
}

// ---------------------------------------------------------------------------
// constraints

ConstraintSpec ConstraintSpec::unconstrained(std::size_t k, int max_parents) {
    ConstraintSpec cs;
    cs.ban = BinaryMatrix(k);
    cs.retain = BinaryMatrix(k);
    cs.max_parents = max_parents;
    return cs;
}

std::vector<Violation> validate_constraints(const ConstraintSpec& cs, const Dataset& ds) {
    std::vector<Violation> out;
    const std::size_t k = ds.k();
    if (cs.ban.size() != k || cs.retain.size() != k) {
        out.push_back({ViolationKind::ShapeMismatch, 0, 0,
                       "ban/retain must be " + std::to_string(k) + "x" + std::to_string(k)});
        return out;
    }
    if (cs.max_parents < 1) {
        out.push_back({ViolationKind::BadMaxParents, 0, 0, "max_parents must be at least 1"});
    }
    for (std::size_t r = 0; r < k; ++r) {
        if (cs.ban(r, r)) out.push_back({ViolationKind::DiagonalBan, r, r, "ban diagonal set for " + ds.names[r]});
        if (cs.retain(r, r)) {
            out.push_back({ViolationKind::DiagonalRetain, r, r, "retain diagonal set for " + ds.names[r]});
        }
        for (std::size_t c = 0; c < k; ++c) {
            if (cs.ban(r, c) && cs.retain(r, c)) {
                out.push_back({ViolationKind::Conflict, r, c,
                               "arc " + ds.names[c] + " -> " + ds.names[r] + " is both banned and retained"});
            }
        }
        if (cs.max_parents >= 1 && cs.retain.row_count(r) > static_cast<std::size_t>(cs.max_parents)) {
            out.push_back({ViolationKind::RetainOverflow, r, 0,
                           ds.names[r] + " retains more parents than max_parents"});
        }
    }
    for (const auto& name : cs.adjust) {
        const auto idx = ds.index_of(name);
        if (!idx) {
            out.push_back({ViolationKind::UnknownAdjust, 0, 0, "adjustment variable " + name + " not in dataset"});
            continue;
        }
        for (std::size_t o = 0; o < k; ++o) {
            if (cs.retain(*idx, o)) out.push_back({ViolationKind::AdjustInStructure, *idx, o, name + " retained as child"});
            if (cs.retain(o, *idx)) out.push_back({ViolationKind::AdjustInStructure, o, *idx, name + " retained as parent"});
        }
    }
    return out;
}

BinaryMatrix read_adjacency_csv(std::istream& in, std::span<const std::string> names) {
    const auto rows = csv::parse(in);
    if (rows.empty()) throw Error(Errc::Parse, "adjacency CSV is empty");
    const auto lookup = [&](const std::string& raw) {
        const auto name = std::string(trim(raw));
        const auto it = std::find(names.begin(), names.end(), name);
        if (it == names.end()) throw Error(Errc::UnknownColumn, "adjacency CSV names unknown variable " + name);
        return static_cast<std::size_t>(it - names.begin());
    };
    const auto& header = rows.front();
    std::vector<std::size_t> col_index;
    for (std::size_t c = 1; c < header.size(); ++c) col_index.push_back(lookup(header[c]));

    BinaryMatrix m(names.size());
    for (std::size_t r = 1; r < rows.size(); ++r) {
        const auto& row = rows[r];
        if (row.size() != header.size()) throw Error(Errc::Parse, "adjacency CSV row has wrong field count");
        const std::size_t child = lookup(row.front());
        for (std::size_t c = 1; c < row.size(); ++c) {
            const auto cell = trim(row[c]);
            if (cell == "1") {
                m(child, col_index[c - 1]) = 1;
            } else if (cell != "0") {
                throw Error(Errc::Parse, "adjacency cell must be 0 or 1, got '" + std::string(cell) + "'");
            }
        }
    }
    return m;
}

void write_adjacency_csv(std::ostream& out, const BinaryMatrix& m, std::span<const std::string> names) {
    std::vector<std::string> fields{""};
    fields.insert(fields.end(), names.begin(), names.end());
    csv::write_row(out, fields);
    for (std::size_t r = 0; r < m.size(); ++r) {
        fields.assign(1, names[r]);
        for (std::size_t c = 0; c < m.size(); ++c) fields.push_back(m(r, c) ? "1" : "0");
        csv::write_row(out, fields);
    }
}

std::vector<std::size_t> structure_columns(const Dataset& ds, std::span<const std::string> adjust) {
    std::vector<std::size_t> out;
    for (std::size_t j = 0; j < ds.k(); ++j) {
        if (std::find(adjust.begin(), adjust.end(), ds.names[j]) == adjust.end()) out.push_back(j);
    }
    return out;
}

std::vector<std::size_t> adjust_columns(const Dataset& ds, std::span<const std::string> adjust) {
    std::vector<std::size_t> out;
    for (const auto& name : adjust) {
        const auto idx = ds.index_of(name);
        if (!idx) throw Error(Errc::UnknownColumn, "adjustment variable " + name + " not in dataset");
        out.push_back(*idx);
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

// ---------------------------------------------------------------------------
// design encoding

DesignMatrix DesignMatrix::select(std::span<const Eigen::Index> keep) const {
    DesignMatrix out;
    out.values.resize(values.rows(), static_cast<Eigen::Index>(keep.size()));
    for (std::size_t i = 0; i < keep.size(); ++i) {
        out.values.col(static_cast<Eigen::Index>(i)) = values.col(keep[i]);
        out.column_labels.push_back(column_labels[static_cast<std::size_t>(keep[i])]);
        out.source_terms.push_back(source_terms[static_cast<std::size_t>(keep[i])]);
    }
    return out;
}

EncodedNode encode_design(const Dataset& ds, std::size_t child, std::span<const std::size_t> parents,
                          std::span<const std::size_t> adjust) {
    const std::size_t k = ds.k();
    if (child >= k) throw Error(Errc::IndexOutOfRange, "child index " + std::to_string(child) + " out of range");
    std::vector<std::size_t> pa(parents.begin(), parents.end());
    std::vector<std::size_t> adj(adjust.begin(), adjust.end());
    std::sort(pa.begin(), pa.end());
    std::sort(adj.begin(), adj.end());
    for (auto idx : pa) {
        if (idx >= k) throw Error(Errc::IndexOutOfRange, "parent index " + std::to_string(idx) + " out of range");
        if (idx == child) throw Error(Errc::IllegalParent, ds.names[child] + " listed as its own parent");
        if (std::binary_search(adj.begin(), adj.end(), idx)) {
            throw Error(Errc::IllegalParent, ds.names[idx] + " is both a parent and an adjustment variable");
        }
    }
    for (auto idx : adj) {
        if (idx >= k) throw Error(Errc::IndexOutOfRange, "adjust index " + std::to_string(idx) + " out of range");
        if (idx == child) throw Error(Errc::IllegalParent, ds.names[child] + " is its own adjustment variable");
    }
    if (std::adjacent_find(pa.begin(), pa.end()) != pa.end()) {
        throw Error(Errc::IllegalParent, "duplicate parent index");
    }

    std::vector<std::size_t> terms = pa;
    terms.insert(terms.end(), adj.begin(), adj.end());
    Eigen::Index p = 1;
    for (auto idx : terms) p += ds.dists[idx].design_width();

    const auto n = static_cast<Eigen::Index>(ds.n());
    EncodedNode out;
    auto& dm = out.design;
    dm.values.resize(n, p);
    dm.values.col(0).setOnes();
    dm.column_labels.emplace_back("(Intercept)");
    dm.source_terms.emplace_back("(Intercept)");
    Eigen::Index col = 1;
    for (auto idx : terms) {
        const auto& values = ds.columns[idx];
        const auto& kind = ds.dists[idx];
        if (kind.family != Family::multinomial) {
            dm.values.col(col) = Eigen::Map<const Eigen::VectorXd>(values.data(), n);
            dm.column_labels.push_back(ds.names[idx]);
            dm.source_terms.push_back(ds.names[idx]);
            ++col;
            continue;
        }
        for (int level = 1; level < kind.levels; ++level) {
            for (Eigen::Index i = 0; i < n; ++i) {
                dm.values(i, col) = values[static_cast<std::size_t>(i)] == level ? 1.0 : 0.0;
            }
            dm.column_labels.push_back(ds.names[idx] + "=" + ds.level_labels[idx][static_cast<std::size_t>(level)]);
            dm.source_terms.push_back(ds.names[idx]);
            ++col;
        }
    }
    out.response = Eigen::Map<const Eigen::VectorXd>(ds.columns[child].data(), n);
    return out;
}

}  // namespace abn

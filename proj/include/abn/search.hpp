#pragma once

#include <abn/score_cache.hpp>

#include <iosfwd>
#include <string>
#include <vector>

namespace abn {

inline constexpr std::size_t max_search_nodes = 25;
inline constexpr std::size_t max_brute_force_nodes = 5;

struct Dag {
    BinaryMatrix adjacency;  // adjacency(child, parent) = 1 for parent -> child
    std::vector<std::string> node_names;

    Dag() = default;
    explicit Dag(std::vector<std::string> names) : adjacency(names.size()), node_names(std::move(names)) {}

    std::size_t k() const { return node_names.size(); }
    std::size_t arc_count() const { return adjacency.count(); }
    ParentSet parents(std::size_t child) const;
    void set_parents(std::size_t child, ParentSet parents);

    bool operator==(const Dag&) const = default;
};

/// Kahn elimination over the parent relation.
bool is_acyclic(const BinaryMatrix& adjacency);
inline bool is_acyclic(const Dag& g) { return is_acyclic(g.adjacency); }

struct SearchResult {
    Dag dag;
    std::vector<const CacheEntry*> chosen;  // per child
    ScoreKind kind = ScoreKind::bic;
    double total = 0.0;  // sum of chosen entries' scores in child order
};

/// Exact optimum over all DAGs whose parent sets are cache entries.
///
/// Candidates are ranked by (total score, number of arcs, parent bitmasks
/// compared lexicographically from child 0 upward). Scores are compared on a
/// common fixed-point grid (finer than 1e-7 for realistic magnitudes) so
/// that the ranking does not depend on summation order; the order DP and the
/// brute-force enumeration therefore agree exactly, ties included.
SearchResult most_probable_dag(const ScoreCache& cache, ScoreKind kind, unsigned threads = 1);

/// Enumerates every combination of cache entries; test oracle for k <= 5.
SearchResult brute_force_dag(const ScoreCache& cache, ScoreKind kind);

/// Sum of the chosen nodes' scores, accumulated in child order.
double dag_total(const ScoreCache& cache, const Dag& g, ScoreKind kind);

Dag read_dag_csv(std::istream& in);
void write_dag_csv(std::ostream& out, const Dag& g);
void write_dag_dot(std::ostream& out, const Dag& g);

}  // namespace abn

#pragma once

#include <abn/data.hpp>
#include <abn/glm.hpp>

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace abn {

/// Bitmask over structure nodes; bit i set means node i is a parent.
using ParentSet = std::uint32_t;

inline constexpr std::size_t max_cache_nodes = 32;

enum class ScoreKind { mlik, aic, bic, mdl };

std::string_view to_string(ScoreKind kind);
ScoreKind parse_score_kind(std::string_view text);

/// mlik is a gain (maximized); aic, bic and mdl are losses (minimized).
constexpr bool is_gain(ScoreKind kind) { return kind == ScoreKind::mlik; }

struct NodeScores {
    double mlik = 0.0;
    double aic = 0.0;
    double bic = 0.0;
    double mdl = 0.0;

    double get(ScoreKind kind) const;
};

/// aic = -loglik + 2d, bic = -loglik + d/2 log n, mdl = bic + (1 + |Pa|) log k.
NodeScores node_scores(double loglik, int d, double n, std::size_t k, std::size_t n_parents);

struct CacheEntry {
    std::size_t child = 0;
    ParentSet parents = 0;
    double loglik = 0.0;
    int d = 0;
    int n_parents = 0;
    double aic = 0.0;
    double bic = 0.0;
    double mdl = 0.0;
    std::string method;

    double score(ScoreKind kind) const;
    /// Score oriented so that smaller is better for every kind.
    double loss(ScoreKind kind) const { return is_gain(kind) ? -score(kind) : score(kind); }
};

struct ScoreCache {
    std::vector<std::string> node_names;
    std::vector<std::vector<CacheEntry>> entries;  // per child, ascending bitmask
    std::size_t n = 0;
    int max_parents = 0;
    BinaryMatrix ban;     // over nodes
    BinaryMatrix retain;  // over nodes
    std::vector<std::string> adjust;

    std::size_t k() const { return node_names.size(); }
    std::size_t size() const;
    const CacheEntry* find(std::size_t child, ParentSet parents) const;
};

/// For each child: every subset of the other nodes that contains all retained
/// parents, no banned parent and at most `max_parents` members, ascending.
std::vector<std::vector<ParentSet>> enumerate_parent_sets(std::size_t k, int max_parents, const BinaryMatrix& ban,
                                                          const BinaryMatrix& retain);
std::vector<std::vector<ParentSet>> enumerate_parent_sets(std::size_t k, const ConstraintSpec& cs);

struct CacheOptions {
    unsigned threads = 1;
    GlmOptions glm;
};

/// Fits every licit (child, parent set) combination. Adjustment variables are
/// covariates of every model and are not nodes.
ScoreCache build_cache(const Dataset& ds, const ConstraintSpec& cs, const CacheOptions& options = {});

std::vector<std::string> parent_names(ParentSet parents, const std::vector<std::string>& names);

/// child,parents,loglik,d,aic,bic,mdl,method; child-major, bitmask ascending.
void write_cache_csv(std::ostream& out, const ScoreCache& cache);
ScoreCache read_cache_csv(std::istream& in);

}  // namespace abn

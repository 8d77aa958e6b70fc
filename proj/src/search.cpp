#include <abn/search.hpp>

#include <abn/parallel.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

namespace abn {

ParentSet Dag::parents(std::size_t child) const {
    ParentSet ps = 0;
    for (std::size_t p = 0; p < k(); ++p) {
        if (adjacency(child, p)) ps |= ParentSet{1} << p;
    }
    return ps;
}

void Dag::set_parents(std::size_t child, ParentSet parents) {
    for (std::size_t p = 0; p < k(); ++p) adjacency(child, p) = (parents >> p) & 1u;
}

bool is_acyclic(const BinaryMatrix& a) {
    const std::size_t k = a.size();
    std::vector<std::size_t> indegree(k, 0);
    for (std::size_t c = 0; c < k; ++c) indegree[c] = a.row_count(c);
    std::vector<std::size_t> ready;
    for (std::size_t c = 0; c < k; ++c) {
        if (indegree[c] == 0) ready.push_back(c);
    }
    std::size_t removed = 0;
    while (!ready.empty()) {
        const auto p = ready.back();
        ready.pop_back();
        ++removed;
        for (std::size_t c = 0; c < k; ++c) {
            if (a(c, p) && --indegree[c] == 0) ready.push_back(c);
        }
    }
    return removed == k;
}

namespace {

// Fixed-point view of the cache: every entry's loss on a power-of-two grid
// small enough that k of them can be summed in int64 without overflow.
struct QuantizedCache {
    std::vector<std::vector<std::int64_t>> loss;
};

QuantizedCache quantize(const ScoreCache& cache, ScoreKind kind) {
    const std::size_t k = cache.k();
    if (cache.entries.size() != k) throw Error(Errc::IncompleteCache, "cache has no entry list for some node");
    double largest = 1.0;
    for (std::size_t j = 0; j < k; ++j) {
        if (cache.entries[j].empty()) {
            throw Error(Errc::IncompleteCache, "node " + cache.node_names[j] + " has no licit parent set in the cache");
        }
        for (const auto& e : cache.entries[j]) {
            const double l = e.loss(kind);
            if (!std::isfinite(l)) throw Error(Errc::IncompleteCache, "non-finite score in cache");
            largest = std::max(largest, std::abs(l));
        }
    }
    // 2^exponent * largest * k stays below 2^62.
    const int exponent = std::min(40, 62 - static_cast<int>(std::ceil(std::log2(largest * static_cast<double>(k)))) - 1);
    QuantizedCache q;
    q.loss.resize(k);
    for (std::size_t j = 0; j < k; ++j) {
        for (const auto& e : cache.entries[j]) q.loss[j].push_back(std::llround(std::ldexp(e.loss(kind), exponent)));
    }
    return q;
}

// Total order used for every comparison: score, then arc count, then parent
// bitmasks lexicographically by child index.
struct Key {
    std::int64_t score = 0;
    int arcs = 0;
};

int compare_key(const Key& a, const Key& b) {
    if (a.score != b.score) return a.score < b.score ? -1 : 1;
    if (a.arcs != b.arcs) return a.arcs < b.arcs ? -1 : 1;
    return 0;
}

int compare_parents(const std::vector<ParentSet>& a, const std::vector<ParentSet>& b) {
    for (std::size_t j = 0; j < a.size(); ++j) {
        if (a[j] != b[j]) return a[j] < b[j] ? -1 : 1;
    }
    return 0;
}

SearchResult make_result(const ScoreCache& cache, ScoreKind kind, const std::vector<std::size_t>& entry_index) {
    SearchResult out;
    out.kind = kind;
    out.dag = Dag(cache.node_names);
    for (std::size_t j = 0; j < cache.k(); ++j) {
        const auto* e = &cache.entries[j][entry_index[j]];
        out.chosen.push_back(e);
        out.dag.set_parents(j, e->parents);
    }
    out.total = 0.0;
    for (const auto* e : out.chosen) out.total += e->score(kind);
    return out;
}

// Index of node j's slot in a subset of the other k-1 nodes.
inline std::uint32_t compress(std::uint32_t set, std::size_t j) {
    const std::uint32_t low = set & ((std::uint32_t{1} << j) - 1);
    return ((set >> (j + 1)) << j) | low;
}

}  // namespace

SearchResult most_probable_dag(const ScoreCache& cache, ScoreKind kind, unsigned threads) {
    const std::size_t k = cache.k();
    if (k == 0) throw Error(Errc::IncompleteCache, "empty cache");
    if (k > max_search_nodes) {
        throw Error(Errc::KTooLarge, "exact search supports at most " + std::to_string(max_search_nodes) + " nodes");
    }
    const auto q = quantize(cache, kind);

    // best[j][S]: optimal entry for child j with parents inside S (S over the
    // other k-1 nodes, compressed), or -1.
    const std::uint32_t sub_count = std::uint32_t{1} << (k - 1);
    std::vector<std::vector<std::int32_t>> best(k);
    parallel_for(k, threads, [&](std::size_t j) {
        const auto& list = cache.entries[j];
        auto& table = best[j];
        table.assign(sub_count, -1);
        const auto better = [&](std::int32_t a, std::int32_t b) {
            if (a < 0) return false;
            if (b < 0) return true;
            const auto& ea = list[static_cast<std::size_t>(a)];
            const auto& eb = list[static_cast<std::size_t>(b)];
            const auto qa = q.loss[j][static_cast<std::size_t>(a)];
            const auto qb = q.loss[j][static_cast<std::size_t>(b)];
            if (qa != qb) return qa < qb;
            if (ea.n_parents != eb.n_parents) return ea.n_parents < eb.n_parents;
            return ea.parents < eb.parents;
        };
        for (std::size_t e = 0; e < list.size(); ++e) {
            auto& slot = table[compress(list[e].parents, j)];
            if (better(static_cast<std::int32_t>(e), slot)) slot = static_cast<std::int32_t>(e);
        }
        for (std::size_t bit = 0; bit + 1 < k; ++bit) {
            const std::uint32_t mask = std::uint32_t{1} << bit;
            for (std::uint32_t s = 0; s < sub_count; ++s) {
                if ((s & mask) && better(table[s ^ mask], table[s])) table[s] = table[s ^ mask];
            }
        }
    });

    // Order DP: F(S) = best network over S whose nodes take parents in S.
    const std::uint32_t full = k == 32 ? ~std::uint32_t{0} : (std::uint32_t{1} << k) - 1;
    constexpr std::uint8_t none = 0xFF;
    std::vector<Key> value(std::size_t{full} + 1);
    std::vector<std::uint8_t> sink(std::size_t{full} + 1, none);

    // Parent vector of the optimum stored for S, restricted to S.
    std::vector<ParentSet> scratch_a(k);
    std::vector<ParentSet> scratch_b(k);
    const auto reconstruct = [&](std::uint32_t set, std::size_t v, std::vector<ParentSet>& out) {
        std::fill(out.begin(), out.end(), 0);
        std::uint32_t rest = set;
        std::size_t node = v;
        while (true) {
            rest ^= std::uint32_t{1} << node;
            out[node] = cache.entries[node][static_cast<std::size_t>(best[node][compress(rest, node)])].parents;
            if (rest == 0) break;
            node = sink[rest];
        }
    };

    for (std::uint32_t s = 1; s <= full && s != 0; ++s) {
        Key chosen;
        std::uint8_t chosen_sink = none;
        for (std::uint32_t rest_bits = s; rest_bits; rest_bits &= rest_bits - 1) {
            const auto v = static_cast<std::size_t>(std::countr_zero(rest_bits));
            const std::uint32_t t = s ^ (std::uint32_t{1} << v);
            if (t != 0 && sink[t] == none) continue;
            const auto b = best[v][compress(t, v)];
            if (b < 0) continue;
            const Key cand{value[t].score + q.loss[v][static_cast<std::size_t>(b)],
                           value[t].arcs + cache.entries[v][static_cast<std::size_t>(b)].n_parents};
            int cmp = chosen_sink == none ? -1 : compare_key(cand, chosen);
            if (cmp == 0) {
                reconstruct(s, v, scratch_a);
                reconstruct(s, chosen_sink, scratch_b);
                cmp = compare_parents(scratch_a, scratch_b);
            }
            if (cmp < 0) {
                chosen = cand;
                chosen_sink = static_cast<std::uint8_t>(v);
            }
        }
        value[s] = chosen;
        sink[s] = chosen_sink;
        if (s == full) break;
    }
    if (sink[full] == none) {
        throw Error(Errc::IncompleteCache, "no acyclic network can be assembled from the cache (retained arcs form a cycle?)");
    }

    std::vector<ParentSet> parents(k);
    reconstruct(full, sink[full], parents);
    std::vector<std::size_t> entry_index(k);
    for (std::size_t j = 0; j < k; ++j) {
        const auto* e = cache.find(j, parents[j]);
        entry_index[j] = static_cast<std::size_t>(e - cache.entries[j].data());
    }
    return make_result(cache, kind, entry_index);
}

SearchResult brute_force_dag(const ScoreCache& cache, ScoreKind kind) {
    const std::size_t k = cache.k();
    if (k == 0) throw Error(Errc::IncompleteCache, "empty cache");
    if (k > max_brute_force_nodes) {
        throw Error(Errc::KTooLarge, "brute force supports at most " + std::to_string(max_brute_force_nodes) + " nodes");
    }
    const auto q = quantize(cache, kind);

    std::vector<std::size_t> idx(k, 0);
    std::vector<std::size_t> best_idx;
    std::vector<ParentSet> parents(k);
    std::vector<ParentSet> best_parents;
    Key best_key;
    BinaryMatrix adjacency(k);
    while (true) {
        Key key;
        for (std::size_t j = 0; j < k; ++j) {
            const auto& e = cache.entries[j][idx[j]];
            parents[j] = e.parents;
            key.score += q.loss[j][idx[j]];
            key.arcs += e.n_parents;
            for (std::size_t p = 0; p < k; ++p) adjacency(j, p) = (e.parents >> p) & 1u;
        }
        if (is_acyclic(adjacency)) {
            int cmp = best_idx.empty() ? -1 : compare_key(key, best_key);
            if (cmp == 0) cmp = compare_parents(parents, best_parents);
            if (cmp < 0) {
                best_key = key;
                best_idx = idx;
                best_parents = parents;
            }
        }
        std::size_t pos = 0;
        while (pos < k && ++idx[pos] == cache.entries[pos].size()) idx[pos++] = 0;
        if (pos == k) break;
    }
    if (best_idx.empty()) throw Error(Errc::IncompleteCache, "no acyclic network can be assembled from the cache");
    return make_result(cache, kind, best_idx);
}

double dag_total(const ScoreCache& cache, const Dag& g, ScoreKind kind) {
    if (g.node_names != cache.node_names) throw Error(Errc::NodeMismatch, "DAG and cache have different nodes");
    double total = 0.0;
    for (std::size_t j = 0; j < g.k(); ++j) {
        const auto* e = cache.find(j, g.parents(j));
        if (!e) throw Error(Errc::IncompleteCache, "parent set of " + g.node_names[j] + " is not in the cache");
        total += e->score(kind);
    }
    return total;
}

Dag read_dag_csv(std::istream& in) {
    const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::istringstream header_pass(text);
    const auto rows = csv::parse(header_pass);
    if (rows.empty() || rows.front().empty()) throw Error(Errc::Parse, "DAG CSV is empty");
    std::vector<std::string> names(rows.front().begin() + 1, rows.front().end());
    if (rows.size() != names.size() + 1) throw Error(Errc::Parse, "DAG CSV must be square");
    Dag g(names);
    std::istringstream matrix_pass(text);
    g.adjacency = read_adjacency_csv(matrix_pass, g.node_names);
    for (std::size_t j = 0; j < g.k(); ++j) {
        if (g.adjacency(j, j)) throw Error(Errc::Parse, "DAG CSV has a self loop at " + names[j]);
    }
    return g;
}

void write_dag_csv(std::ostream& out, const Dag& g) { write_adjacency_csv(out, g.adjacency, g.node_names); }

void write_dag_dot(std::ostream& out, const Dag& g) {
    out << "digraph dag {\n";
    for (const auto& name : g.node_names) out << "  \"" << name << "\";\n";
    for (std::size_t c = 0; c < g.k(); ++c) {
        for (std::size_t p = 0; p < g.k(); ++p) {
            if (g.adjacency(c, p)) out << "  \"" << g.node_names[p] << "\" -> \"" << g.node_names[c] << "\";\n";
        }
    }
    out << "}\n";
}

}  // namespace abn

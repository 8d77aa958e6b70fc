#include <abn/score_cache.hpp>

#include <abn/parallel.hpp>

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>

namespace abn {

std::string_view to_string(ScoreKind kind) {
    switch (kind) {
        case ScoreKind::mlik: return "mlik";
        case ScoreKind::aic: return "aic";
        case ScoreKind::bic: return "bic";
        case ScoreKind::mdl: return "mdl";
    }
    return "unknown";
}

ScoreKind parse_score_kind(std::string_view text) {
    if (text == "mlik") return ScoreKind::mlik;
    if (text == "aic") return ScoreKind::aic;
    if (text == "bic") return ScoreKind::bic;
    if (text == "mdl") return ScoreKind::mdl;
    throw Error(Errc::Parse, "unknown score '" + std::string(text) + "' (expected mlik, aic, bic or mdl)");
}

double NodeScores::get(ScoreKind kind) const {
    switch (kind) {
        case ScoreKind::mlik: return mlik;
        case ScoreKind::aic: return aic;
        case ScoreKind::bic: return bic;
        case ScoreKind::mdl: return mdl;
    }
    return mlik;
}

NodeScores node_scores(double loglik, int d, double n, std::size_t k, std::size_t n_parents) {
    if (d < 1) throw Error(Errc::Precondition, "free-parameter count must be at least 1");
    if (!(n >= 1) || k < 1) throw Error(Errc::Precondition, "sample size and node count must be at least 1");
    NodeScores s;
    s.mlik = loglik;
    s.aic = -loglik + 2.0 * d;
    s.bic = -loglik + 0.5 * d * std::log(n);
    s.mdl = s.bic + (1.0 + static_cast<double>(n_parents)) * std::log(static_cast<double>(k));
    return s;
}

double CacheEntry::score(ScoreKind kind) const {
    switch (kind) {
        case ScoreKind::mlik: return loglik;
        case ScoreKind::aic: return aic;
        case ScoreKind::bic: return bic;
        case ScoreKind::mdl: return mdl;
    }
    return loglik;
}

std::size_t ScoreCache::size() const {
    std::size_t total = 0;
    for (const auto& e : entries) total += e.size();
    return total;
}

const CacheEntry* ScoreCache::find(std::size_t child, ParentSet parents) const {
    if (child >= entries.size()) return nullptr;
    const auto& list = entries[child];
    const auto it = std::lower_bound(list.begin(), list.end(), parents,
                                     [](const CacheEntry& e, ParentSet p) { return e.parents < p; });
    return it != list.end() && it->parents == parents ? &*it : nullptr;
}

std::vector<std::vector<ParentSet>> enumerate_parent_sets(std::size_t k, int max_parents, const BinaryMatrix& ban,
                                                          const BinaryMatrix& retain) {
    if (k == 0 || k > max_cache_nodes) {
        throw Error(Errc::KTooLarge, "score cache supports 1.." + std::to_string(max_cache_nodes) + " nodes");
    }
    if (ban.size() != k || retain.size() != k) throw Error(Errc::Precondition, "ban/retain must be k x k");
    if (max_parents < 1) throw Error(Errc::Precondition, "max_parents must be at least 1");

    std::vector<std::vector<ParentSet>> out(k);
    for (std::size_t child = 0; child < k; ++child) {
        ParentSet required = 0;
        ParentSet free = 0;
        for (std::size_t p = 0; p < k; ++p) {
            if (p == child) {
                if (ban(child, p) || retain(child, p)) {
                    throw Error(Errc::ConstraintConflict, "constraint on diagonal for node " + std::to_string(child));
                }
                continue;
            }
            if (ban(child, p) && retain(child, p)) {
                throw Error(Errc::ConstraintConflict, "arc " + std::to_string(p) + " -> " + std::to_string(child) +
                                                          " both banned and retained");
            }
            if (retain(child, p)) {
                required |= ParentSet{1} << p;
            } else if (!ban(child, p)) {
                free |= ParentSet{1} << p;
            }
        }
        const int r = std::popcount(required);
        if (r > max_parents) {
            throw Error(Errc::ConstraintConflict, "node " + std::to_string(child) + " retains more than max_parents");
        }
        // All subsets of `free` with at most max_parents - r members.
        auto& sets = out[child];
        ParentSet sub = 0;
        do {
            if (std::popcount(sub) <= max_parents - r) sets.push_back(sub | required);
            sub = (sub - free) & free;
        } while (sub != 0);
        std::sort(sets.begin(), sets.end());
    }
    return out;
}

std::vector<std::vector<ParentSet>> enumerate_parent_sets(std::size_t k, const ConstraintSpec& cs) {
    return enumerate_parent_sets(k, cs.max_parents, cs.ban, cs.retain);
}

std::vector<std::string> parent_names(ParentSet parents, const std::vector<std::string>& names) {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < names.size(); ++i) {
        if (parents & (ParentSet{1} << i)) out.push_back(names[i]);
    }
    return out;
}

ScoreCache build_cache(const Dataset& ds, const ConstraintSpec& cs, const CacheOptions& options) {
    if (const auto violations = validate_constraints(cs, ds); !violations.empty()) {
        std::string msg;
        for (const auto& v : violations) msg += (msg.empty() ? "" : "; ") + v.message;
        throw Error(Errc::ConstraintConflict, msg);
    }
    const auto nodes = structure_columns(ds, cs.adjust);
    const auto adjust = adjust_columns(ds, cs.adjust);
    const std::size_t k = nodes.size();
    if (k == 0) throw Error(Errc::Precondition, "no structure nodes left after removing adjustment variables");

    ScoreCache cache;
    cache.n = ds.n();
    cache.max_parents = cs.max_parents;
    cache.adjust = cs.adjust;
    cache.ban = BinaryMatrix(k);
    cache.retain = BinaryMatrix(k);
    for (std::size_t r = 0; r < k; ++r) {
        cache.node_names.push_back(ds.names[nodes[r]]);
        for (std::size_t c = 0; c < k; ++c) {
            cache.ban(r, c) = cs.ban(nodes[r], nodes[c]);
            cache.retain(r, c) = cs.retain(nodes[r], nodes[c]);
        }
    }

    const auto sets = enumerate_parent_sets(k, cs.max_parents, cache.ban, cache.retain);
    struct Job {
        std::size_t child;
        ParentSet parents;
    };
    std::vector<Job> jobs;
    for (std::size_t child = 0; child < k; ++child) {
        for (auto ps : sets[child]) jobs.push_back({child, ps});
    }

    std::vector<CacheEntry> results(jobs.size());
    parallel_for(jobs.size(), options.threads, [&](std::size_t idx) {
        const auto [child, ps] = jobs[idx];
        std::vector<std::size_t> parent_cols;
        for (std::size_t i = 0; i < k; ++i) {
            if (ps & (ParentSet{1} << i)) parent_cols.push_back(nodes[i]);
        }
        const auto encoded = encode_design(ds, nodes[child], parent_cols, adjust);
        GlmFit fit;
        try {
            fit = fit_node_robust(encoded.design, encoded.response, FamilySpec{ds.dists[nodes[child]]}, options.glm);
        } catch (const Error& e) {
            std::string pa;
            for (const auto& name : parent_names(ps, cache.node_names)) pa += (pa.empty() ? "" : ",") + name;
            throw Error(e.code(), "node " + cache.node_names[child] + " with parents {" + pa + "}: " + e.what());
        }
        const auto n_parents = static_cast<std::size_t>(std::popcount(ps));
        const auto s = node_scores(fit.loglik, fit.d, static_cast<double>(ds.n()), k, n_parents);
        auto& entry = results[idx];
        entry.child = child;
        entry.parents = ps;
        entry.loglik = fit.loglik;
        entry.d = fit.d;
        entry.n_parents = static_cast<int>(n_parents);
        entry.aic = s.aic;
        entry.bic = s.bic;
        entry.mdl = s.mdl;
        entry.method = fit.method_name();
    });

    cache.entries.resize(k);
    for (auto& e : results) cache.entries[e.child].push_back(std::move(e));
    return cache;
}

void write_cache_csv(std::ostream& out, const ScoreCache& cache) {
    const std::vector<std::string> header{"child", "parents", "loglik", "d", "aic", "bic", "mdl", "method"};
    csv::write_row(out, header);
    for (const auto& list : cache.entries) {
        for (const auto& e : list) {
            std::string pa;
            for (const auto& name : parent_names(e.parents, cache.node_names)) pa += (pa.empty() ? "" : ";") + name;
            const std::vector<std::string> row{cache.node_names[e.child], pa, format_double(e.loglik),
                                               std::to_string(e.d), format_double(e.aic), format_double(e.bic),
                                               format_double(e.mdl), e.method};
            csv::write_row(out, row);
        }
    }
}

namespace {

double parse_double_field(const std::string& s) {
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) throw Error(Errc::Parse, "cache CSV: bad number '" + s + "'");
    return v;
}

}  // namespace

ScoreCache read_cache_csv(std::istream& in) {
    const auto rows = csv::parse(in);
    if (rows.empty() || rows.front().size() != 8 || rows.front()[0] != "child") {
        throw Error(Errc::Parse, "cache CSV: missing or malformed header");
    }
    ScoreCache cache;
    for (std::size_t r = 1; r < rows.size(); ++r) {
        if (rows[r].size() != 8) throw Error(Errc::Parse, "cache CSV: row " + std::to_string(r) + " has wrong width");
        if (std::find(cache.node_names.begin(), cache.node_names.end(), rows[r][0]) == cache.node_names.end()) {
            cache.node_names.push_back(rows[r][0]);
        }
    }
    const std::size_t k = cache.k();
    if (k == 0) throw Error(Errc::IncompleteCache, "cache CSV has no entries");
    if (k > max_cache_nodes) throw Error(Errc::KTooLarge, "cache has more than 32 nodes");
    cache.entries.resize(k);
    cache.ban = BinaryMatrix(k);
    cache.retain = BinaryMatrix(k);
    const auto index_of = [&](const std::string& name) {
        const auto it = std::find(cache.node_names.begin(), cache.node_names.end(), name);
        if (it == cache.node_names.end()) throw Error(Errc::Parse, "cache CSV: unknown parent " + name);
        return static_cast<std::size_t>(it - cache.node_names.begin());
    };
    for (std::size_t r = 1; r < rows.size(); ++r) {
        const auto& row = rows[r];
        CacheEntry e;
        e.child = index_of(row[0]);
        std::stringstream pa(row[1]);
        for (std::string name; std::getline(pa, name, ';');) {
            if (!name.empty()) e.parents |= ParentSet{1} << index_of(name);
        }
        if (e.parents & (ParentSet{1} << e.child)) throw Error(Errc::Parse, "cache CSV: node is its own parent");
        e.n_parents = std::popcount(e.parents);
        e.loglik = parse_double_field(row[2]);
        e.d = static_cast<int>(parse_double_field(row[3]));
        e.aic = parse_double_field(row[4]);
        e.bic = parse_double_field(row[5]);
        e.mdl = parse_double_field(row[6]);
        e.method = row[7];
        cache.max_parents = std::max(cache.max_parents, e.n_parents);
        cache.entries[e.child].push_back(std::move(e));
    }
    for (auto& list : cache.entries) {
        std::sort(list.begin(), list.end(), [](const auto& a, const auto& b) { return a.parents < b.parents; });
        if (std::adjacent_find(list.begin(), list.end(), [](const auto& a, const auto& b) {
                return a.parents == b.parents;
            }) != list.end()) {
            throw Error(Errc::Parse, "cache CSV: duplicate (child, parents) entry");
        }
    }
    return cache;
}

}  // namespace abn

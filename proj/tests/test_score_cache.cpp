#include <abn/score_cache.hpp>

#include <gtest/gtest.h>

#include <bit>
#include <cmath>
#include <random>
#include <sstream>

using namespace abn;

namespace {

Dataset gaussian_chain(std::size_t k, std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal;
    std::vector<std::vector<double>> cols(k, std::vector<double>(n));
    std::vector<std::string> names;
    for (std::size_t j = 0; j < k; ++j) {
        names.push_back("v" + std::to_string(j));
        for (std::size_t i = 0; i < n; ++i) cols[j][i] = normal(rng) + (j ? 0.8 * cols[j - 1][i] : 0.0);
    }
    return make_dataset(names, cols, std::vector<DistributionKind>(k, DistributionKind::gaussian()));
}

double binom(int n, int m) {
    if (m < 0 || m > n) return 0;
    double r = 1;
    for (int i = 1; i <= m; ++i) r = r * (n - m + i) / i;
    return r;
}

}  // namespace

TEST(NodeScores, FormulaArithmetic) {
    const auto s = node_scores(-100.0, 3, std::exp(2.0), 5, 0);
    EXPECT_DOUBLE_EQ(s.mlik, -100.0);
    EXPECT_DOUBLE_EQ(s.aic, 106.0);
    EXPECT_DOUBLE_EQ(s.bic, 103.0);
    EXPECT_DOUBLE_EQ(s.mdl, 103.0 + std::log(5.0));
}

TEST(NodeScores, MdlPenaltyOverNetwork) {
    // k = 3 with parent-set sizes (0,1,1): extra penalty 5 log 3.
    double extra = 0.0;
    for (std::size_t np : {0u, 1u, 1u}) {
        const auto s = node_scores(-10.0, 2, 50, 3, np);
        extra += s.mdl - s.bic;
    }
    EXPECT_NEAR(extra, 5 * std::log(3.0), 1e-12);
}

TEST(NodeScores, ZeroParametersRejected) {
    EXPECT_THROW(node_scores(-1.0, 0, 10, 2, 0), Error);
}

TEST(Enumerate, CountsUnconstrained) {
    const auto sets = enumerate_parent_sets(4, 2, BinaryMatrix(4), BinaryMatrix(4));
    std::size_t total = 0;
    for (const auto& s : sets) {
        EXPECT_EQ(s.size(), 7u);
        total += s.size();
    }
    EXPECT_EQ(total, 28u);
}

TEST(Enumerate, RetainAndBan) {
    BinaryMatrix retain(3), ban(3);
    retain(0, 2) = 1;
    EXPECT_EQ(enumerate_parent_sets(3, 2, ban, retain)[0], (std::vector<ParentSet>{0b100, 0b110}));
    retain(0, 2) = 0;
    ban(0, 1) = ban(0, 2) = 1;
    EXPECT_EQ(enumerate_parent_sets(3, 2, ban, retain)[0], (std::vector<ParentSet>{0}));
}

TEST(Enumerate, ConflictRaises) {
    BinaryMatrix retain(3), ban(3);
    retain(1, 0) = ban(1, 0) = 1;
    try {
        enumerate_parent_sets(3, 2, ban, retain);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::ConstraintConflict);
    }
}

TEST(Enumerate, CompletenessFormula) {
    std::mt19937_64 rng(21);
    for (int t = 0; t < 200; ++t) {
        const std::size_t k = 2 + rng() % 7;
        const int mp = 1 + static_cast<int>(rng() % 4);
        BinaryMatrix ban(k), retain(k);
        for (std::size_t r = 0; r < k; ++r) {
            for (std::size_t c = 0; c < k; ++c) {
                if (r == c) continue;
                const auto u = rng() % 10;
                if (u == 0 && static_cast<int>(retain.row_count(r)) < mp) retain(r, c) = 1;
                else if (u < 3) ban(r, c) = 1;
            }
        }
        const auto sets = enumerate_parent_sets(k, mp, ban, retain);
        for (std::size_t j = 0; j < k; ++j) {
            const int r = static_cast<int>(retain.row_count(j));
            const int b = static_cast<int>(ban.row_count(j));
            double expected = 0;
            for (int m = r; m <= mp; ++m) expected += binom(static_cast<int>(k) - 1 - b - r, m - r);
            // Retained parents are always present, so only the k-1-b-r
            // remaining nodes are optional.
            ASSERT_EQ(static_cast<double>(sets[j].size()), expected) << "k=" << k << " child " << j;
            for (std::size_t s = 0; s < sets[j].size(); ++s) {
                const ParentSet ps = sets[j][s];
                EXPECT_FALSE(ps >> j & 1u);
                EXPECT_LE(std::popcount(ps), mp);
                if (s) EXPECT_LT(sets[j][s - 1], ps);
                for (std::size_t c = 0; c < k; ++c) {
                    if (retain(j, c)) EXPECT_TRUE(ps >> c & 1u);
                    if (ban(j, c)) EXPECT_FALSE(ps >> c & 1u);
                }
            }
        }
    }
}

TEST(BuildCache, EntryCountAndScores) {
    const auto ds = gaussian_chain(4, 60, 1);
    const auto cache = build_cache(ds, ConstraintSpec::unconstrained(4, 2));
    EXPECT_EQ(cache.size(), 28u);
    for (const auto& row : cache.entries) {
        for (const auto& e : row) {
            EXPECT_EQ(std::popcount(e.parents), e.n_parents);
            EXPECT_DOUBLE_EQ(e.aic, -e.loglik + 2 * e.d);
            EXPECT_DOUBLE_EQ(e.bic, -e.loglik + 0.5 * e.d * std::log(60.0));
            EXPECT_DOUBLE_EQ(e.mdl, e.bic + (1 + e.n_parents) * std::log(4.0));
            EXPECT_EQ(e.d, e.n_parents + 2);
        }
    }
}

TEST(BuildCache, TenNodesFiveParents) {
    const auto ds = gaussian_chain(10, 40, 2);
    const auto cache = build_cache(ds, ConstraintSpec::unconstrained(10, 5));
    for (const auto& row : cache.entries) EXPECT_EQ(row.size(), 382u);
    EXPECT_EQ(cache.size(), 3820u);
}

TEST(BuildCache, DeterministicAcrossRunsAndThreads) {
    const auto ds = gaussian_chain(5, 80, 3);
    const auto cs = ConstraintSpec::unconstrained(5, 3);
    const auto a = build_cache(ds, cs, {.threads = 1, .glm = {}});
    const auto b = build_cache(ds, cs, {.threads = 4, .glm = {}});
    std::ostringstream sa, sb;
    write_cache_csv(sa, a);
    write_cache_csv(sb, b);
    EXPECT_EQ(sa.str(), sb.str());
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t j = 0; j < a.k(); ++j) {
        for (std::size_t s = 0; s < a.entries[j].size(); ++s) {
            EXPECT_EQ(std::bit_cast<std::uint64_t>(a.entries[j][s].loglik),
                      std::bit_cast<std::uint64_t>(b.entries[j][s].loglik));
        }
    }
}

TEST(BuildCache, BicScoreEquivalenceTwoGaussians) {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        const auto ds = gaussian_chain(2, 200, seed);
        const auto cache = build_cache(ds, ConstraintSpec::unconstrained(2, 1));
        const double xy = cache.find(0, 0)->bic + cache.find(1, 0b01)->bic;
        const double yx = cache.find(0, 0b10)->bic + cache.find(1, 0)->bic;
        EXPECT_NEAR(xy, yx, 1e-8);
        EXPECT_EQ(cache.find(0, 0)->d + cache.find(1, 0b01)->d, 5);
    }
}

TEST(BuildCache, EmptySetNeverBeatsSupersetOnLoglik) {
    std::mt19937_64 rng(4);
    std::normal_distribution<double> normal;
    std::bernoulli_distribution coin(0.4);
    const std::size_t n = 120;
    std::vector<std::vector<double>> cols(4, std::vector<double>(n));
    for (std::size_t i = 0; i < n; ++i) {
        cols[0][i] = normal(rng);
        cols[1][i] = coin(rng);
        cols[2][i] = std::poisson_distribution<int>(std::exp(0.3 * cols[0][i]))(rng);
        cols[3][i] = static_cast<double>(rng() % 3);
    }
    const auto ds = make_dataset({"g", "b", "p", "m"}, cols,
                                 {DistributionKind::gaussian(), DistributionKind::binomial(),
                                  DistributionKind::poisson(), DistributionKind::multinomial(3)});
    const auto cache = build_cache(ds, ConstraintSpec::unconstrained(4, 3));
    for (const auto& row : cache.entries) {
        const double empty = row.front().loglik;
        ASSERT_EQ(row.front().parents, 0u);
        for (const auto& e : row) EXPECT_GE(e.loglik, empty - 1e-8) << "child " << e.child << " set " << e.parents;
    }
}

TEST(BuildCache, AdjustmentColumnsAreNotNodes) {
    auto ds = gaussian_chain(4, 50, 5);
    auto cs = ConstraintSpec::unconstrained(4, 2);
    cs.adjust = {"v1"};
    const auto cache = build_cache(ds, cs);
    EXPECT_EQ(cache.node_names, (std::vector<std::string>{"v0", "v2", "v3"}));
    EXPECT_EQ(cache.size(), 3u * 4u);
    // Every model carries the adjustment covariate: intercept + v1 + parents + variance.
    for (const auto& row : cache.entries) {
        for (const auto& e : row) EXPECT_EQ(e.d, e.n_parents + 3);
    }
}

TEST(BuildCache, UnfittableCarriesContext) {
    auto ds = gaussian_chain(3, 30, 6);
    std::fill(ds.columns[1].begin(), ds.columns[1].end(), 2.5);
    try {
        build_cache(ds, ConstraintSpec::unconstrained(3, 1));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::Unfittable);
        EXPECT_NE(std::string(e.what()).find("v1"), std::string::npos);
    }
}

TEST(BuildCache, ConflictRejected) {
    const auto ds = gaussian_chain(3, 30, 7);
    auto cs = ConstraintSpec::unconstrained(3, 2);
    cs.ban(0, 1) = cs.retain(0, 1) = 1;
    try {
        build_cache(ds, cs);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::ConstraintConflict);
    }
}

TEST(CacheCsv, RoundTrip) {
    const auto ds = gaussian_chain(3, 40, 8);
    const auto cache = build_cache(ds, ConstraintSpec::unconstrained(3, 2));
    std::ostringstream out;
    write_cache_csv(out, cache);
    EXPECT_EQ(out.str().substr(0, out.str().find('\r')), "child,parents,loglik,d,aic,bic,mdl,method");
    std::istringstream in(out.str());
    const auto back = read_cache_csv(in);
    EXPECT_EQ(back.node_names, cache.node_names);
    ASSERT_EQ(back.size(), cache.size());
    for (std::size_t j = 0; j < 3; ++j) {
        for (std::size_t s = 0; s < cache.entries[j].size(); ++s) {
            const auto& a = cache.entries[j][s];
            const auto& b = back.entries[j][s];
            EXPECT_EQ(a.parents, b.parents);
            EXPECT_EQ(a.loglik, b.loglik);
            EXPECT_EQ(a.bic, b.bic);
            EXPECT_EQ(a.mdl, b.mdl);
            EXPECT_EQ(a.method, b.method);
        }
    }
}

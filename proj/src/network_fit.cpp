#include <abn/network_fit.hpp>

#include <abn/parallel.hpp>

#include <nlohmann/json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <numbers>

namespace abn {

double wald_p_value(double estimate, double se) {
    if (!(se > 0.0)) return estimate == 0.0 ? 1.0 : 0.0;
    const double z = std::abs(estimate / se);
    return std::min(1.0, std::erfc(z / std::numbers::sqrt2));
}

FitResult fit_dag(const Dag& g, const Dataset& ds, const ConstraintSpec& cs, PValueAdjustment adjustment,
                  unsigned threads, const GlmOptions& options) {
    const auto nodes = structure_columns(ds, cs.adjust);
    const auto adjust = adjust_columns(ds, cs.adjust);
    if (g.k() != nodes.size()) {
        throw Error(Errc::NodeMismatch, "DAG has " + std::to_string(g.k()) + " nodes, dataset has " +
                                            std::to_string(nodes.size()) + " structure variables");
    }
    // DAG node j -> dataset column.
    std::vector<std::size_t> column(g.k());
    for (std::size_t j = 0; j < g.k(); ++j) {
        const auto idx = ds.index_of(g.node_names[j]);
        if (!idx || std::find(nodes.begin(), nodes.end(), *idx) == nodes.end()) {
            throw Error(Errc::NodeMismatch, "DAG node " + g.node_names[j] + " is not a structure variable of the dataset");
        }
        column[j] = *idx;
    }
    if (!is_acyclic(g)) throw Error(Errc::CyclicDag, "the given network contains a cycle");
    const bool have_bans = cs.ban.size() == ds.k();
    for (std::size_t c = 0; c < g.k(); ++c) {
        for (std::size_t p = 0; p < g.k(); ++p) {
            if (g.adjacency(c, p) && have_bans && cs.ban(column[c], column[p])) {
                throw Error(Errc::ConstraintConflict, "arc " + g.node_names[p] + " -> " + g.node_names[c] + " is banned");
            }
        }
    }

    FitResult out;
    out.adjustment = adjustment;
    out.adjust = cs.adjust;
    out.nodes.resize(g.k());
    parallel_for(g.k(), threads, [&](std::size_t j) {
        std::vector<std::size_t> parents;
        for (std::size_t p = 0; p < g.k(); ++p) {
            if (g.adjacency(j, p)) parents.push_back(column[p]);
        }
        const auto encoded = encode_design(ds, column[j], parents, adjust);
        auto& nf = out.nodes[j];
        nf.node = g.node_names[j];
        nf.parents = parent_names(g.parents(j), g.node_names);
        try {
            nf.fit = fit_node_robust(encoded.design, encoded.response, FamilySpec{ds.dists[column[j]]}, options);
        } catch (const Error& e) {
            throw Error(e.code(), "node " + nf.node + ": " + e.what());
        }
        nf.scores = node_scores(nf.fit.loglik, nf.fit.d, static_cast<double>(ds.n()), g.k(), parents.size());

        const auto& fit = nf.fit;
        const auto& levels = ds.level_labels[column[j]];
        const bool multinomial = ds.dists[column[j]].family == Family::multinomial;
        for (Eigen::Index r = 0; r < fit.coefficients.rows(); ++r) {
            for (Eigen::Index c = 0; c < fit.coefficients.cols(); ++c) {
                CoefficientRow row;
                row.label = fit.labels[static_cast<std::size_t>(c)];
                if (multinomial) row.label += "[" + nf.node + "=" + levels[static_cast<std::size_t>(r + 1)] + "]";
                row.estimate = fit.coefficients(r, c);
                row.se = fit.std_errors(r, c);
                row.z = row.se > 0.0 ? row.estimate / row.se : 0.0;
                row.p = wald_p_value(row.estimate, row.se);
                row.p_adjusted = row.p;
                nf.coefficients.push_back(row);
            }
        }
    });

    if (adjustment == PValueAdjustment::bonferroni) {
        std::size_t tests = 0;
        for (const auto& nf : out.nodes) {
            for (const auto& row : nf.coefficients) tests += row.label.rfind("(Intercept)", 0) == 0 ? 0 : 1;
        }
        for (auto& nf : out.nodes) {
            for (auto& row : nf.coefficients) row.p_adjusted = std::min(1.0, row.p * static_cast<double>(tests));
        }
    }
    for (const auto& nf : out.nodes) {
        out.totals.mlik += nf.scores.mlik;
        out.totals.aic += nf.scores.aic;
        out.totals.bic += nf.scores.bic;
        out.totals.mdl += nf.scores.mdl;
    }
    return out;
}

double network_score(const FitResult& fr, ScoreKind kind) {
    double total = 0.0;
    for (const auto& nf : fr.nodes) total += nf.scores.get(kind);
    return total;
}

std::string fit_result_json(const FitResult& fr) {
    using nlohmann::json;
    json nodes = json::array();
    for (const auto& nf : fr.nodes) {
        json coefs = json::array();
        for (const auto& row : nf.coefficients) {
            coefs.push_back({{"label", row.label},
                             {"estimate", row.estimate},
                             {"se", row.se},
                             {"z", row.z},
                             {"p", row.p},
                             {"p_adjusted", row.p_adjusted}});
        }
        nodes.push_back({{"node", nf.node},
                         {"parents", nf.parents},
                         {"method", nf.fit.method_name()},
                         {"dropped_columns", nf.fit.dropped_columns},
                         {"coefficients", coefs},
                         {"loglik", nf.scores.mlik},
                         {"d", nf.fit.d},
                         {"aic", nf.scores.aic},
                         {"bic", nf.scores.bic},
                         {"mdl", nf.scores.mdl}});
    }
    json doc = {{"nodes", nodes},
                {"totals",
                 {{"mlik", fr.totals.mlik}, {"aic", fr.totals.aic}, {"bic", fr.totals.bic}, {"mdl", fr.totals.mdl}}},
                {"pvalue_adjustment", fr.adjustment == PValueAdjustment::bonferroni ? "bonferroni" : "none"},
                {"adjust", fr.adjust}};
    return doc.dump(2) + "\n";
}

}  // namespace abn

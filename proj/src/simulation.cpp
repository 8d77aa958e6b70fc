#include <abn/simulation.hpp>

#include <abn/network_fit.hpp>
#include <abn/parallel.hpp>

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <ostream>
#include <random>

namespace abn {

namespace {

int outputs(const DistributionKind& kind) { return kind.family == Family::multinomial ? kind.levels - 1 : 1; }

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
    // splitmix64 finalizer over the combined words
    auto mix = [](std::uint64_t z) {
        z += 0x9e3779b97f4a7c15ull;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    };
    return mix(mix(mix(a) ^ b) ^ c);
}

// Covariate row contributed by a parent value (dummy coded for multinomial).
void covariate_values(const DistributionKind& kind, double value, Eigen::VectorXd& out) {
    out.setZero(kind.design_width());
    if (kind.family != Family::multinomial) {
        out[0] = value;
    } else if (value >= 1.0) {
        out[static_cast<Eigen::Index>(value) - 1] = 1.0;
    }
}

}  // namespace

std::string_view to_string(CompareMode mode) { return mode == CompareMode::directed ? "directed" : "skeleton"; }

CompareMode parse_compare_mode(std::string_view text) {
    if (text == "directed") return CompareMode::directed;
    if (text == "skeleton") return CompareMode::skeleton;
    throw Error(Errc::Parse, "unknown comparison mode '" + std::string(text) + "' (expected directed or skeleton)");
}

GroundTruth random_dag(std::size_t k, double density, const std::vector<DistributionKind>& dists, std::uint64_t seed,
                       const CoefficientBand& band) {
    if (k < 2) throw Error(Errc::Precondition, "random_dag needs at least 2 nodes");
    if (!(density >= 0.0 && density <= 1.0)) throw Error(Errc::Precondition, "density must lie in [0, 1]");
    if (dists.empty()) throw Error(Errc::Precondition, "random_dag needs at least one distribution");

    std::mt19937_64 rng(seed);
    std::vector<std::string> names;
    for (std::size_t j = 0; j < k; ++j) names.push_back("X" + std::to_string(j + 1));

    GroundTruth gt;
    gt.dag = Dag(names);
    for (std::size_t j = 0; j < k; ++j) gt.dists.push_back(dists[j % dists.size()]);

    std::vector<std::size_t> order(k);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);

    std::bernoulli_distribution arc(density);
    std::bernoulli_distribution negative(0.5);
    std::uniform_real_distribution<double> magnitude(band.min_magnitude, band.max_magnitude);
    std::uniform_real_distribution<double> intercept(-0.5, 0.5);

    gt.coefficients.assign(k, std::vector<Eigen::MatrixXd>(k));
    for (std::size_t a = 0; a < k; ++a) {
        for (std::size_t b = a + 1; b < k; ++b) {
            if (arc(rng)) gt.dag.adjacency(order[b], order[a]) = 1;
        }
    }
    for (std::size_t c = 0; c < k; ++c) {
        for (std::size_t p = 0; p < k; ++p) {
            if (!gt.dag.adjacency(c, p)) continue;
            Eigen::MatrixXd m(outputs(gt.dists[c]), gt.dists[p].design_width());
            for (Eigen::Index r = 0; r < m.rows(); ++r) {
                for (Eigen::Index s = 0; s < m.cols(); ++s) {
                    const double mag = magnitude(rng);
                    m(r, s) = negative(rng) ? -mag : mag;
                }
            }
            gt.coefficients[c][p] = std::move(m);
        }
    }
    for (std::size_t j = 0; j < k; ++j) {
        Eigen::VectorXd b(outputs(gt.dists[j]));
        for (Eigen::Index r = 0; r < b.size(); ++r) b[r] = intercept(rng);
        gt.intercepts.push_back(std::move(b));
        gt.gaussian_sd.push_back(1.0);
    }
    return gt;
}

std::vector<std::size_t> topological_order(const Dag& g) {
    const std::size_t k = g.k();
    std::vector<std::size_t> indegree(k);
    for (std::size_t c = 0; c < k; ++c) indegree[c] = g.adjacency.row_count(c);
    std::vector<std::size_t> order;
    std::vector<bool> done(k, false);
    // Lowest-index ready node first, for a reproducible order.
    while (order.size() < k) {
        std::size_t next = k;
        for (std::size_t c = 0; c < k; ++c) {
            if (!done[c] && indegree[c] == 0) {
                next = c;
                break;
            }
        }
        if (next == k) throw Error(Errc::CyclicDag, "network contains a cycle");
        done[next] = true;
        order.push_back(next);
        for (std::size_t c = 0; c < k; ++c) {
            if (g.adjacency(c, next)) --indegree[c];
        }
    }
    return order;
}

Dataset simulate_data(const GroundTruth& gt, std::size_t n, std::uint64_t seed) {
    if (n < 1) throw Error(Errc::Precondition, "simulate_data needs n >= 1");
    const std::size_t k = gt.k();
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    std::vector<std::vector<double>> columns(k, std::vector<double>(n));
    Eigen::VectorXd eta;
    Eigen::VectorXd cov;
    for (const auto j : topological_order(gt.dag)) {
        const auto& kind = gt.dists[j];
        for (std::size_t i = 0; i < n; ++i) {
            eta = gt.intercepts[j];
            for (std::size_t p = 0; p < k; ++p) {
                if (!gt.dag.adjacency(j, p)) continue;
                covariate_values(gt.dists[p], columns[p][i], cov);
                eta += gt.coefficients[j][p] * cov;
            }
            double value = 0.0;
            switch (kind.family) {
                case Family::gaussian: value = eta[0] + gt.gaussian_sd[j] * normal(rng); break;
                case Family::binomial: {
                    const double prob = 1.0 / (1.0 + std::exp(-eta[0]));
                    value = unit(rng) < prob ? 1.0 : 0.0;
                    break;
                }
                case Family::poisson: {
                    const double mean = std::exp(std::clamp(eta[0], -30.0, 30.0));
                    std::poisson_distribution<long long> poisson(mean);
                    value = static_cast<double>(poisson(rng));
                    break;
                }
                case Family::multinomial: {
                    // Softmax over (0, eta_1, ..., eta_{C-1}).
                    const double m = std::max(0.0, eta.maxCoeff());
                    std::vector<double> w(static_cast<std::size_t>(kind.levels));
                    w[0] = std::exp(-m);
                    for (Eigen::Index r = 0; r < eta.size(); ++r) w[static_cast<std::size_t>(r + 1)] = std::exp(eta[r] - m);
                    double u = unit(rng) * std::accumulate(w.begin(), w.end(), 0.0);
                    std::size_t level = 0;
                    while (level + 1 < w.size() && u >= w[level]) u -= w[level++];
                    value = static_cast<double>(level);
                    break;
                }
            }
            columns[j][i] = value;
        }
    }
    return make_dataset(gt.dag.node_names, std::move(columns), gt.dists);
}

ConfusionCounts confusion(const Dag& learned, const Dag& truth, CompareMode mode) {
    if (learned.node_names != truth.node_names) throw Error(Errc::NodeMismatch, "learned and true networks differ in nodes");
    ConfusionCounts out;
    out.mode = mode;
    const std::size_t k = truth.k();
    if (mode == CompareMode::directed) {
        for (std::size_t c = 0; c < k; ++c) {
            for (std::size_t p = 0; p < k; ++p) {
                const bool l = learned.adjacency(c, p);
                const bool t = truth.adjacency(c, p);
                out.tp += l && t;
                out.fp += l && !t;
                out.fn += !l && t;
            }
        }
        return out;
    }
    for (std::size_t a = 0; a < k; ++a) {
        for (std::size_t b = a + 1; b < k; ++b) {
            const bool l = learned.adjacency(a, b) || learned.adjacency(b, a);
            const bool t = truth.adjacency(a, b) || truth.adjacency(b, a);
            out.tp += l && t;
            out.fp += l && !t;
            out.fn += !l && t;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// truth JSON

namespace {

nlohmann::json kind_json(const DistributionKind& kind) {
    if (kind.family == Family::multinomial) return {{"multinomial", kind.levels}};
    return std::string(to_string(kind.family));
}

nlohmann::json matrix_json(const Eigen::MatrixXd& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        nlohmann::json row = nlohmann::json::array();
        for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        rows.push_back(row);
    }
    return rows;
}

}  // namespace

std::string truth_json(const GroundTruth& gt) {
    nlohmann::json nodes = nlohmann::json::array();
    for (std::size_t j = 0; j < gt.k(); ++j) {
        nlohmann::json arcs = nlohmann::json::array();
        for (std::size_t p = 0; p < gt.k(); ++p) {
            if (!gt.dag.adjacency(j, p)) continue;
            arcs.push_back({{"parent", gt.dag.node_names[p]}, {"coefficients", matrix_json(gt.coefficients[j][p])}});
        }
        std::vector<double> intercepts(gt.intercepts[j].data(), gt.intercepts[j].data() + gt.intercepts[j].size());
        nodes.push_back({{"name", gt.dag.node_names[j]},
                         {"dist", kind_json(gt.dists[j])},
                         {"intercepts", intercepts},
                         {"sd", gt.gaussian_sd[j]},
                         {"arcs", arcs}});
    }
    return nlohmann::json{{"nodes", nodes}}.dump(2) + "\n";
}

GroundTruth parse_truth_json(std::string_view text) {
    try {
        const auto doc = nlohmann::json::parse(text);
        const auto& nodes = doc.at("nodes");
        std::vector<std::string> names;
        for (const auto& node : nodes) names.push_back(node.at("name").get<std::string>());
        GroundTruth gt;
        gt.dag = Dag(names);
        const std::size_t k = names.size();
        gt.coefficients.assign(k, std::vector<Eigen::MatrixXd>(k));
        nlohmann::json spec = nlohmann::json::object();
        for (const auto& node : nodes) spec[node.at("name").get<std::string>()] = node.at("dist");
        const auto dists = parse_dist_spec(spec.dump());
        for (std::size_t j = 0; j < k; ++j) {
            const auto& node = nodes[j];
            gt.dists.push_back(dists.at(names[j]));
            const auto b = node.at("intercepts").get<std::vector<double>>();
            gt.intercepts.push_back(Eigen::Map<const Eigen::VectorXd>(b.data(), static_cast<Eigen::Index>(b.size())));
            gt.gaussian_sd.push_back(node.at("sd").get<double>());
            for (const auto& arc : node.at("arcs")) {
                const auto parent = arc.at("parent").get<std::string>();
                const auto it = std::find(names.begin(), names.end(), parent);
                if (it == names.end()) throw Error(Errc::Parse, "truth JSON: unknown parent " + parent);
                const auto p = static_cast<std::size_t>(it - names.begin());
                const auto rows = arc.at("coefficients").get<std::vector<std::vector<double>>>();
                Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), rows.empty() ? 0 : static_cast<Eigen::Index>(rows[0].size()));
                for (std::size_t r = 0; r < rows.size(); ++r) {
                    for (std::size_t c = 0; c < rows[r].size(); ++c) {
                        m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
                    }
                }
                gt.dag.adjacency(j, p) = 1;
                gt.coefficients[j][p] = std::move(m);
            }
        }
        if (!is_acyclic(gt.dag)) throw Error(Errc::CyclicDag, "truth JSON describes a cyclic network");
        return gt;
    } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::Parse, std::string("truth JSON: ") + e.what());
    }
}

double max_coefficient_rmse(const GroundTruth& gt, const Dataset& ds) {
    const auto cs = ConstraintSpec::unconstrained(ds.k(), std::max<int>(1, static_cast<int>(gt.k()) - 1));
    const auto fr = fit_dag(gt.dag, ds, cs);
    double worst = 0.0;
    for (std::size_t j = 0; j < gt.k(); ++j) {
        const auto& fit = fr.nodes[j].fit;
        double sq = 0.0;
        std::size_t count = 0;
        for (std::size_t p = 0; p < gt.k(); ++p) {
            if (!gt.dag.adjacency(j, p)) continue;
            const auto& truth = gt.coefficients[j][p];
            for (Eigen::Index s = 0; s < truth.cols(); ++s) {
                const auto& name = gt.dag.node_names[p];
                const std::string label = gt.dists[p].family == Family::multinomial
                                              ? name + "=" + ds.level_labels[p][static_cast<std::size_t>(s + 1)]
                                              : name;
                const auto it = std::find(fit.labels.begin(), fit.labels.end(), label);
                for (Eigen::Index r = 0; r < truth.rows(); ++r) {
                    const double est = it == fit.labels.end() ? 0.0 : fit.coefficients(r, it - fit.labels.begin());
                    sq += (est - truth(r, s)) * (est - truth(r, s));
                    ++count;
                }
            }
        }
        if (count) worst = std::max(worst, std::sqrt(sq / static_cast<double>(count)));
    }
    return worst;
}

// ---------------------------------------------------------------------------
// replicate study

StudyResult run_study(const StudyConfig& config) {
    std::vector<GroundTruth> truths;
    for (std::size_t r = 0; r < config.replicates; ++r) {
        truths.push_back(random_dag(config.k, config.density, config.dists, config.seed + r));
    }
    struct Job {
        std::size_t replicate;
        std::size_t n;
    };
    std::vector<Job> jobs;
    for (std::size_t r = 0; r < config.replicates; ++r) {
        for (auto n : config.sample_sizes) jobs.push_back({r, n});
    }

    std::vector<std::vector<StudyRow>> rows(jobs.size());
    std::vector<RmseRow> rmse(jobs.size());
    parallel_for(jobs.size(), config.threads, [&](std::size_t idx) {
        const auto [r, n] = jobs[idx];
        const auto& gt = truths[r];
        const auto ds = simulate_data(gt, n, mix_seed(config.seed, r, n));
        const auto cs = ConstraintSpec::unconstrained(ds.k(), config.max_parents);
        const auto cache = build_cache(ds, cs);
        for (const auto kind : config.scores) {
            const auto found = most_probable_dag(cache, kind);
            StudyRow row;
            row.replicate = r;
            row.n = n;
            row.score = kind;
            row.arcs_true = gt.dag.arc_count();
            row.arcs_learned = found.dag.arc_count();
            row.counts = confusion(found.dag, gt.dag, config.mode);
            rows[idx].push_back(row);
        }
        rmse[idx] = {r, n, max_coefficient_rmse(gt, ds)};
    });

    StudyResult out;
    for (auto& list : rows) out.rows.insert(out.rows.end(), list.begin(), list.end());
    out.rmse = std::move(rmse);
    return out;
}

void write_study_csv(std::ostream& out, const StudyResult& result) {
    csv::write_row(out, std::vector<std::string>{"replicate", "n", "score", "mode", "arcs_true", "arcs_learned", "tp",
                                                 "fp", "fn", "max_rmse"});
    std::map<std::pair<std::size_t, std::size_t>, double> rmse;
    for (const auto& row : result.rmse) rmse[{row.replicate, row.n}] = row.max_rmse;
    for (const auto& row : result.rows) {
        csv::write_row(out, std::vector<std::string>{
                                std::to_string(row.replicate), std::to_string(row.n), std::string(to_string(row.score)),
                                std::string(to_string(row.counts.mode)), std::to_string(row.arcs_true),
                                std::to_string(row.arcs_learned), std::to_string(row.counts.tp),
                                std::to_string(row.counts.fp), std::to_string(row.counts.fn),
                                format_double(rmse[{row.replicate, row.n}])});
    }
}

}  // namespace abn

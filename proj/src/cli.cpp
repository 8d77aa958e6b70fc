#include <abn/cli.hpp>

#include <abn/data.hpp>
#include <abn/glm.hpp>
#include <abn/network_fit.hpp>
#include <abn/score_cache.hpp>
#include <abn/search.hpp>
#include <abn/simulation.hpp>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>

namespace abn::cli {

namespace {

namespace fs = std::filesystem;

struct RunConfig {
    std::string data_path;
    std::string dist_path;
    std::string ban_path;
    std::string retain_path;
    std::string cache_path;
    std::string dag_path;
    std::string learned_path;
    std::string truth_path;
    std::vector<std::string> adjust;
    int max_parents = 5;
    std::string score = "bic";
    std::uint64_t seed = 1;
    unsigned threads = 1;
    std::string output_dir = ".";
    std::size_t replicates = 0;
    std::vector<std::size_t> sample_sizes{100, 1000, 10000};
    double density = 0.2;
    std::size_t k = 10;
    std::size_t n = 10000;
    std::string dists = "gaussian";
    std::string mode = "directed";
    bool bonferroni = false;
};

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(Errc::Io, "cannot read " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path output_path(const RunConfig& cfg, const std::string& name) {
    fs::create_directories(cfg.output_dir);
    return fs::path(cfg.output_dir) / name;
}

template <class Writer>
void write_output(const RunConfig& cfg, const std::string& name, Writer&& writer) {
    const auto path = output_path(cfg, name);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(Errc::Io, "cannot write " + path.string());
    writer(out);
    if (!out) throw Error(Errc::Io, "failed writing " + path.string());
}

Dataset load_data(const RunConfig& cfg) {
    if (cfg.data_path.empty() || cfg.dist_path.empty()) {
        throw Error(Errc::Precondition, "--data and --dists are required");
    }
    const auto spec = parse_dist_spec(read_file(cfg.dist_path));
    std::ifstream in(cfg.data_path, std::ios::binary);
    if (!in) throw Error(Errc::Io, "cannot read " + cfg.data_path);
    return load_dataset(in, spec);
}

ConstraintSpec load_constraints(const RunConfig& cfg, const Dataset& ds) {
    auto cs = ConstraintSpec::unconstrained(ds.k(), cfg.max_parents);
    cs.adjust = cfg.adjust;
    const auto read = [&](const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw Error(Errc::Io, "cannot read " + path);
        return read_adjacency_csv(in, ds.names);
    };
    if (!cfg.ban_path.empty()) cs.ban = read(cfg.ban_path);
    if (!cfg.retain_path.empty()) cs.retain = read(cfg.retain_path);
    if (const auto violations = validate_constraints(cs, ds); !violations.empty()) {
        std::string msg;
        for (const auto& v : violations) msg += (msg.empty() ? "" : "; ") + std::string(to_string(v.kind)) + ": " + v.message;
        throw Error(Errc::ConstraintConflict, msg);
    }
    return cs;
}

std::vector<DistributionKind> parse_kind_list(const std::string& text) {
    std::vector<DistributionKind> kinds;
    std::stringstream ss(text);
    for (std::string item; std::getline(ss, item, ',');) {
        if (item == "gaussian") {
            kinds.push_back(DistributionKind::gaussian());
        } else if (item == "binomial") {
            kinds.push_back(DistributionKind::binomial());
        } else if (item == "poisson") {
            kinds.push_back(DistributionKind::poisson());
        } else if (item.rfind("multinomial:", 0) == 0) {
            const int levels = std::stoi(item.substr(12));
            if (levels < 3) throw Error(Errc::Parse, "multinomial needs at least 3 levels");
            kinds.push_back(DistributionKind::multinomial(levels));
        } else {
            throw Error(Errc::Parse, "unknown distribution '" + item + "' in --dists");
        }
    }
    if (kinds.empty()) throw Error(Errc::Parse, "--dists is empty");
    return kinds;
}

CacheOptions cache_options(const RunConfig& cfg) {
    CacheOptions options;
    options.threads = cfg.threads;
    return options;
}

double quantile(std::vector<double> values, double q) {
    std::sort(values.begin(), values.end());
    const double pos = q * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(pos);
    const auto hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

// ---------------------------------------------------------------------------

int run_buildcache(const RunConfig& cfg, std::ostream& out) {
    const auto ds = load_data(cfg);
    const auto cs = load_constraints(cfg, ds);
    const auto cache = build_cache(ds, cs, cache_options(cfg));
    write_output(cfg, "cache.csv", [&](std::ostream& os) { write_cache_csv(os, cache); });
    out << "cache: " << cache.size() << " entries over " << cache.k() << " nodes\n";
    return exit_ok;
}

int run_search(const RunConfig& cfg, std::ostream& out) {
    const auto kind = parse_score_kind(cfg.score);
    const auto start = std::chrono::steady_clock::now();
    ScoreCache cache;
    if (!cfg.cache_path.empty()) {
        std::ifstream in(cfg.cache_path, std::ios::binary);
        if (!in) throw Error(Errc::Io, "cannot read " + cfg.cache_path);
        cache = read_cache_csv(in);
    } else {
        const auto ds = load_data(cfg);
        cache = build_cache(ds, load_constraints(cfg, ds), cache_options(cfg));
    }
    const auto found = most_probable_dag(cache, kind, cfg.threads);
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    write_output(cfg, "dag.csv", [&](std::ostream& os) { write_dag_csv(os, found.dag); });
    write_output(cfg, "dag.dot", [&](std::ostream& os) { write_dag_dot(os, found.dag); });
    const nlohmann::json summary = {{"score", std::string(to_string(kind))},
                                    {"total", found.total},
                                    {"arcs", found.dag.arc_count()},
                                    {"nodes", found.dag.k()},
                                    {"runtime_seconds", seconds}};
    write_output(cfg, "search_summary.json", [&](std::ostream& os) { os << summary.dump(2) << "\n"; });
    out << to_string(kind) << " optimum " << format_double(found.total) << " with " << found.dag.arc_count()
        << " arcs\n";
    return exit_ok;
}

int run_fit(const RunConfig& cfg, std::ostream& out) {
    if (cfg.dag_path.empty()) throw Error(Errc::Precondition, "--dag is required");
    const auto ds = load_data(cfg);
    const auto cs = load_constraints(cfg, ds);
    std::ifstream in(cfg.dag_path, std::ios::binary);
    if (!in) throw Error(Errc::Io, "cannot read " + cfg.dag_path);
    const auto dag = read_dag_csv(in);
    const auto fr = fit_dag(dag, ds, cs, cfg.bonferroni ? PValueAdjustment::bonferroni : PValueAdjustment::none,
                            cfg.threads);
    write_output(cfg, "fit.json", [&](std::ostream& os) { os << fit_result_json(fr); });
    out << "fitted " << fr.nodes.size() << " nodes; bic " << format_double(fr.totals.bic) << "\n";
    return exit_ok;
}

int run_simulate(const RunConfig& cfg, std::ostream& out) {
    const auto gt = random_dag(cfg.k, cfg.density, parse_kind_list(cfg.dists), cfg.seed);
    const auto ds = simulate_data(gt, cfg.n, cfg.seed + 1);
    write_output(cfg, "truth.csv", [&](std::ostream& os) { write_dag_csv(os, gt.dag); });
    write_output(cfg, "truth.json", [&](std::ostream& os) { os << truth_json(gt); });
    write_output(cfg, "data.csv", [&](std::ostream& os) { write_dataset_csv(os, ds); });
    write_output(cfg, "dists.json", [&](std::ostream& os) { os << dist_spec_json(ds.dist_spec()); });
    out << "simulated " << ds.n() << " rows over " << ds.k() << " nodes, " << gt.dag.arc_count() << " arcs\n";
    return exit_ok;
}

nlohmann::json counts_json(const ConfusionCounts& c) {
    return {{"tp", c.tp}, {"fp", c.fp}, {"fn", c.fn}, {"mode", std::string(to_string(c.mode))}};
}

int run_evaluate(const RunConfig& cfg, std::ostream& out) {
    const auto mode = parse_compare_mode(cfg.mode);
    if (cfg.replicates == 0) {
        if (cfg.learned_path.empty() || cfg.truth_path.empty()) {
            throw Error(Errc::Precondition, "--learned and --truth are required (or --replicates for a study)");
        }
        const auto read = [](const std::string& path) {
            std::ifstream in(path, std::ios::binary);
            if (!in) throw Error(Errc::Io, "cannot read " + path);
            return read_dag_csv(in);
        };
        const auto counts = confusion(read(cfg.learned_path), read(cfg.truth_path), mode);
        write_output(cfg, "confusion.json", [&](std::ostream& os) { os << counts_json(counts).dump(2) << "\n"; });
        out << "tp " << counts.tp << " fp " << counts.fp << " fn " << counts.fn << "\n";
        return exit_ok;
    }

    StudyConfig study;
    study.k = cfg.k;
    study.density = cfg.density;
    study.dists = parse_kind_list(cfg.dists);
    study.sample_sizes = cfg.sample_sizes;
    study.replicates = cfg.replicates;
    study.seed = cfg.seed;
    study.max_parents = cfg.max_parents;
    study.mode = mode;
    study.threads = cfg.threads;
    const auto result = run_study(study);
    write_output(cfg, "evaluation.csv", [&](std::ostream& os) { write_study_csv(os, result); });

    // Means per (score, n).
    std::map<std::pair<std::string, std::size_t>, std::array<double, 4>> sums;
    for (const auto& row : result.rows) {
        auto& s = sums[{std::string(to_string(row.score)), row.n}];
        s[0] += static_cast<double>(row.counts.tp);
        s[1] += static_cast<double>(row.counts.fp);
        s[2] += static_cast<double>(row.counts.fn);
        s[3] += 1.0;
    }
    nlohmann::json summary = nlohmann::json::array();
    for (const auto& [key, s] : sums) {
        summary.push_back({{"score", key.first},
                           {"n", key.second},
                           {"mean_tp", s[0] / s[3]},
                           {"mean_fp", s[1] / s[3]},
                           {"mean_fn", s[2] / s[3]}});
    }
    write_output(cfg, "evaluation_summary.json", [&](std::ostream& os) { os << summary.dump(2) << "\n"; });
    out << "evaluated " << cfg.replicates << " replicates x " << cfg.sample_sizes.size() << " sample sizes\n";
    return exit_ok;
}

int run_bench(const RunConfig& cfg, std::ostream& out) {
    const std::size_t reps = cfg.replicates ? cfg.replicates : 50;
    const auto gt = random_dag(cfg.k, cfg.density, parse_kind_list(cfg.dists), cfg.seed);
    const auto ds = simulate_data(gt, cfg.n, cfg.seed + 1);
    const auto cs = ConstraintSpec::unconstrained(ds.k(), cfg.max_parents);

    // One node model with the largest allowed parent set.
    std::vector<std::size_t> parents;
    for (std::size_t p = 1; p < ds.k() && parents.size() < static_cast<std::size_t>(cfg.max_parents); ++p) {
        parents.push_back(p);
    }
    const auto encoded = encode_design(ds, 0, parents, {});
    const FamilySpec family{ds.dists[0]};

    using clock = std::chrono::steady_clock;
    std::vector<double> fit_ms;
    std::vector<double> cache_ms;
    for (std::size_t r = 0; r < reps; ++r) {
        auto t0 = clock::now();
        const auto fit = fit_node_robust(encoded.design, encoded.response, family);
        fit_ms.push_back(std::chrono::duration<double, std::milli>(clock::now() - t0).count());
        t0 = clock::now();
        const auto cache = build_cache(ds, cs, cache_options(cfg));
        cache_ms.push_back(std::chrono::duration<double, std::milli>(clock::now() - t0).count());
    }
    write_output(cfg, "bench.csv", [&](std::ostream& os) {
        csv::write_row(os, std::vector<std::string>{"task", "repetitions", "median_ms", "q1_ms", "q3_ms"});
        for (const auto& [task, times] : {std::pair{std::string("glm_fit"), &fit_ms},
                                          std::pair{std::string("cache_build"), &cache_ms}}) {
            csv::write_row(os, std::vector<std::string>{task, std::to_string(reps), format_double(quantile(*times, 0.5)),
                                                        format_double(quantile(*times, 0.25)),
                                                        format_double(quantile(*times, 0.75))});
        }
    });
    out << "glm_fit median " << quantile(fit_ms, 0.5) << " ms; cache_build median " << quantile(cache_ms, 0.5)
        << " ms\n";
    return exit_ok;
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Structure learning for additive Bayesian networks", "abn"};
    app.require_subcommand(1, 1);
    RunConfig cfg;

    const auto add_common = [&](CLI::App* sub) {
        sub->add_option("--threads", cfg.threads, "Worker threads")->check(CLI::PositiveNumber);
        sub->add_option("--out", cfg.output_dir, "Output directory");
        sub->add_option("--seed", cfg.seed, "Random seed");
    };
    const auto add_data = [&](CLI::App* sub) {
        sub->add_option("--data", cfg.data_path, "Dataset CSV");
        sub->add_option("--dists", cfg.dist_path, "Distribution spec JSON");
        sub->add_option("--ban", cfg.ban_path, "Ban adjacency CSV");
        sub->add_option("--retain", cfg.retain_path, "Retain adjacency CSV");
        sub->add_option("--adjust", cfg.adjust, "Adjustment variables")->delimiter(',');
        sub->add_option("--max-parents", cfg.max_parents, "Maximum parents per node")->check(CLI::PositiveNumber);
    };
    const auto add_sim = [&](CLI::App* sub) {
        sub->add_option("--k", cfg.k, "Number of nodes")->check(CLI::Range(2, 25));
        sub->add_option("--density", cfg.density, "Arc probability")->check(CLI::Range(0.0, 1.0));
        sub->add_option("--dists", cfg.dists, "Comma list of node distributions, cycled");
        sub->add_option("--n", cfg.n, "Sample size")->check(CLI::PositiveNumber);
    };

    auto* buildcache = app.add_subcommand("buildcache", "Score every licit parent set");
    add_common(buildcache);
    add_data(buildcache);

    auto* search = app.add_subcommand("search", "Exact optimal DAG for a score");
    add_common(search);
    add_data(search);
    search->add_option("--cache", cfg.cache_path, "Score cache CSV (otherwise built from --data)");
    search->add_option("--score", cfg.score, "mlik, aic, bic or mdl")
        ->check(CLI::IsMember({"mlik", "aic", "bic", "mdl"}));

    auto* fit = app.add_subcommand("fit", "Fit a given DAG");
    add_common(fit);
    add_data(fit);
    fit->add_option("--dag", cfg.dag_path, "DAG adjacency CSV");
    fit->add_flag("--bonferroni", cfg.bonferroni, "Bonferroni-adjust p-values");

    auto* simulate = app.add_subcommand("simulate", "Simulate a random network and data");
    add_common(simulate);
    add_sim(simulate);

    auto* evaluate = app.add_subcommand("evaluate", "Compare learned and true networks");
    add_common(evaluate);
    add_sim(evaluate);
    evaluate->add_option("--learned", cfg.learned_path, "Learned DAG CSV");
    evaluate->add_option("--truth", cfg.truth_path, "True DAG CSV");
    evaluate->add_option("--mode", cfg.mode, "directed or skeleton")->check(CLI::IsMember({"directed", "skeleton"}));
    evaluate->add_option("--replicates", cfg.replicates, "Run a replicate study instead");
    evaluate->add_option("--sample-sizes", cfg.sample_sizes, "Sample sizes for the study")->delimiter(',');
    evaluate->add_option("--max-parents", cfg.max_parents, "Maximum parents per node")->check(CLI::PositiveNumber);

    auto* bench = app.add_subcommand("bench", "Time GLM fits and cache builds");
    add_common(bench);
    add_sim(bench);
    bench->add_option("--replicates", cfg.replicates, "Repetitions (default 50)");
    bench->add_option("--max-parents", cfg.max_parents, "Maximum parents per node")->check(CLI::PositiveNumber);

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(std::move(reversed));
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return exit_ok;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return exit_ok;
    } catch (const CLI::ParseError& e) {
        err << "abn: " << e.what() << "\n";
        return exit_validation;
    }

    try {
        if (buildcache->parsed()) return run_buildcache(cfg, out);
        if (search->parsed()) return run_search(cfg, out);
        if (fit->parsed()) return run_fit(cfg, out);
        if (simulate->parsed()) return run_simulate(cfg, out);
        if (evaluate->parsed()) return run_evaluate(cfg, out);
        if (bench->parsed()) return run_bench(cfg, out);
    } catch (const abn::Error& e) {
        err << "abn: " << e.what() << "\n";
        return exit_validation;
    } catch (const std::exception& e) {
        err << "abn: internal error: " << e.what() << "\n";
        return exit_internal;
    }
    err << "abn: no subcommand\n";
    return exit_validation;
}

}  // namespace abn::cli

// Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
// criterion fails.

#include <abn/glm.hpp>
#include <abn/network_fit.hpp>
#include <abn/score_cache.hpp>
#include <abn/search.hpp>
#include <abn/simulation.hpp>

#include <Eigen/Dense>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <thread>

using namespace abn;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

using clock_type = std::chrono::steady_clock;

double seconds_since(clock_type::time_point t0) {
    return std::chrono::duration<double>(clock_type::now() - t0).count();
}

struct Outcome {
    bool pass = false;
    std::string detail;
};

int failures = 0;

void report(int id, const std::string& title, const std::function<Outcome()>& check) {
    Outcome o;
    try {
        o = check();
    } catch (const std::exception& e) {
        o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass) ++failures;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  [" << id << "] " << title << " -- " << o.detail << std::endl;
}

std::string fmt(double v, int precision = 4) {
    std::ostringstream ss;
    ss.precision(precision);
    ss << v;
    return ss.str();
}

DesignMatrix design_with_intercept(const MatrixXd& cov) {
    DesignMatrix dm;
    dm.values.resize(cov.rows(), cov.cols() + 1);
    dm.values.col(0).setOnes();
    dm.values.rightCols(cov.cols()) = cov;
    dm.column_labels = {"(Intercept)"};
    dm.source_terms = {"(Intercept)"};
    for (Eigen::Index j = 0; j < cov.cols(); ++j) {
        dm.column_labels.push_back("x" + std::to_string(j + 1));
        dm.source_terms.push_back("x" + std::to_string(j + 1));
    }
    return dm;
}

MatrixXd normal_matrix(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols) {
    std::normal_distribution<double> normal;
    MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = normal(rng);
    }
    return m;
}

std::string artifacts(const Dataset& ds, const ConstraintSpec& cs, unsigned threads) {
    const auto cache = build_cache(ds, cs, {.threads = threads, .glm = {}});
    const auto found = most_probable_dag(cache, ScoreKind::bic, threads);
    const auto fr = fit_dag(found.dag, ds, cs, PValueAdjustment::bonferroni, threads);
    std::ostringstream out;
    write_cache_csv(out, cache);
    out << "\n--\n";
    write_dag_csv(out, found.dag);
    out << "\n--\n" << fit_result_json(fr);
    return out.str();
}

}  // namespace

int main() {
    const unsigned threads = std::max(1u, std::thread::hardware_concurrency());

    report(1, "exact search equals brute force (k = 2, 3, 4; 50 gaussian caches each)", [] {
        const auto t0 = clock_type::now();
        int compared = 0, mismatched = 0;
        for (std::size_t k : {2u, 3u, 4u}) {
            for (std::uint64_t s = 0; s < 50; ++s) {
                const auto gt = random_dag(k, 0.5, {DistributionKind::gaussian()}, 1000 * k + s);
                const auto ds = simulate_data(gt, 100, 7 * s + k);
                const auto cache = build_cache(ds, ConstraintSpec::unconstrained(k, static_cast<int>(k) - 1));
                for (ScoreKind kind : {ScoreKind::mlik, ScoreKind::aic, ScoreKind::bic, ScoreKind::mdl}) {
                    const auto fast = most_probable_dag(cache, kind);
                    const auto slow = brute_force_dag(cache, kind);
                    ++compared;
                    if (fast.total != slow.total || !(fast.dag == slow.dag)) ++mismatched;
                }
            }
        }
        const double secs = seconds_since(t0);
        return Outcome{mismatched == 0 && secs < 10.0, std::to_string(compared) + " searches, " +
                                                           std::to_string(mismatched) + " mismatches, " + fmt(secs) +
                                                           " s (limit 10 s)"};
    });

    report(2, "score formulas (200 random tuples, 1e-12)", [] {
        std::mt19937_64 rng(2);
        std::uniform_real_distribution<double> ll(-1e5, 0.0);
        double worst = 0.0, worst_mdl = 0.0;
        for (int t = 0; t < 200; ++t) {
            const double loglik = ll(rng);
            const int d = 1 + static_cast<int>(rng() % 60);
            const auto n = static_cast<double>(1 + rng() % 100000);
            const std::size_t k = 1 + rng() % 25;
            const std::size_t np = rng() % k;
            const auto s = node_scores(loglik, d, n, k, np);
            const double aic = -loglik + 2.0 * d;
            const double bic = -loglik + d / 2.0 * std::log(n);
            const double mdl = bic + (1.0 + np) * std::log(static_cast<double>(k));
            const auto rel = [](double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); };
            worst = std::max({worst, rel(s.mlik, loglik), rel(s.aic, aic), rel(s.bic, bic), rel(s.mdl, mdl)});
            // The difference of two doubles near |mdl| is only exact to the
            // rounding of mdl itself.
            const double penalty = (1.0 + np) * std::log(static_cast<double>(k));
            worst_mdl = std::max(worst_mdl, std::abs((s.mdl - s.bic) - penalty) / std::max(1.0, std::abs(s.mdl)));
        }
        return Outcome{worst <= 1e-12 && worst_mdl <= 1e-12,
                       "max relative error " + fmt(worst, 3) + ", mdl-bic vs (1+n_parents) log k " + fmt(worst_mdl, 3) +
                           " (relative to |mdl|)"};
    });

    report(3, "separation: firth on 50 separated datasets, 2x2 log-odds closed form (1e-4)", [] {
        std::mt19937_64 rng(3);
        std::uniform_real_distribution<double> cut(-0.8, 0.8);
        int firth = 0, finite = 0;
        const FamilySpec binomial{DistributionKind::binomial()};
        for (int t = 0; t < 50; ++t) {
            const int n = 20 + static_cast<int>(rng() % 180);
            MatrixXd cov;
            VectorXd y(n);
            // Thresholding the first covariate gives complete separation;
            // redraw until both classes occur.
            do {
                cov = normal_matrix(rng, n, 1 + t % 3);
                const double threshold = cut(rng);
                for (int i = 0; i < n; ++i) y[i] = cov(i, 0) > threshold ? 1.0 : 0.0;
            } while (y.sum() == 0 || y.sum() == n);
            const auto fit = fit_node_robust(design_with_intercept(cov), y, binomial);
            firth += fit.method_name() == "firth";
            finite += fit.coefficients.allFinite() && fit.std_errors.allFinite();
        }
        MatrixXd x(10, 1);
        VectorXd y(10);
        for (int i = 0; i < 10; ++i) x(i, 0) = y[i] = i < 5 ? 0.0 : 1.0;
        const auto two = fit_node_robust(design_with_intercept(x), y, binomial);
        const double err = std::abs(two.coefficients(0, 1) - std::log(121.0));
        return Outcome{firth == 50 && finite == 50 && err < 1e-4 && two.method_name() == "firth",
                       std::to_string(firth) + "/50 firth, " + std::to_string(finite) + "/50 finite, 2x2 slope error " +
                           fmt(err, 3)};
    });

    report(4, "GLM correctness (OLS 1e-10, score equations 1e-6 n, multinomial proportions 1e-8)", [] {
        std::mt19937_64 rng(4);
        double ols_err = 0.0, score_ratio = 0.0;
        for (int t = 0; t < 100; ++t) {
            const int n = 30 + t;
            const auto dm = design_with_intercept(normal_matrix(rng, n, 1 + t % 5));
            const VectorXd y = normal_matrix(rng, n, 1).col(0) + 0.7 * dm.values.col(1);
            const VectorXd ols = (dm.values.transpose() * dm.values).ldlt().solve(dm.values.transpose() * y);
            const auto fit = fit_irls(dm, y, FamilySpec{DistributionKind::gaussian()});
            ols_err = std::max(ols_err, (fit.coefficients.row(0).transpose() - ols).cwiseAbs().maxCoeff());
        }
        for (int t = 0; t < 100; ++t) {
            const int n = 100 + 10 * t;
            const bool pois = t % 2;
            const auto dm = design_with_intercept(normal_matrix(rng, n, 2));
            const VectorXd eta = dm.values * Eigen::Vector3d(0.2, 0.5, -0.4);
            std::uniform_real_distribution<double> unit;
            VectorXd y(n);
            for (int i = 0; i < n; ++i) {
                y[i] = pois ? std::poisson_distribution<int>(std::exp(eta[i]))(rng)
                            : (unit(rng) < 1 / (1 + std::exp(-eta[i])) ? 1.0 : 0.0);
            }
            const auto fit =
                fit_irls(dm, y, FamilySpec{pois ? DistributionKind::poisson() : DistributionKind::binomial()});
            const VectorXd e = dm.values * fit.coefficients.row(0).transpose();
            const VectorXd mu = pois ? VectorXd(e.array().exp()) : VectorXd((1 + (-e.array()).exp()).inverse());
            score_ratio = std::max(score_ratio, (dm.values.transpose() * (y - mu)).cwiseAbs().maxCoeff() / n);
        }
        DesignMatrix ones;
        ones.values = MatrixXd::Ones(100, 1);
        ones.column_labels = ones.source_terms = {"(Intercept)"};
        VectorXd y(100);
        for (int i = 0; i < 100; ++i) y[i] = i < 10 ? 0 : (i < 30 ? 1 : 2);
        const auto m = fit_multinomial(ones, y, 3);
        const double multi_err =
            std::max(std::abs(m.coefficients(0, 0) - std::log(2.0)), std::abs(m.coefficients(1, 0) - std::log(7.0)));
        return Outcome{ols_err <= 1e-10 && score_ratio <= 1e-6 && multi_err <= 1e-8,
                       "OLS max diff " + fmt(ols_err, 3) + ", max |X'(y-mu)|/n " + fmt(score_ratio, 3) +
                           ", multinomial error " + fmt(multi_err, 3)};
    });

    report(5, "BIC score equivalence on 20 two-node gaussian datasets (1e-8)", [] {
        double worst = 0.0;
        for (std::uint64_t s = 0; s < 20; ++s) {
            auto gt = random_dag(2, 1.0, {DistributionKind::gaussian()}, 500 + s);
            const auto ds = simulate_data(gt, 200 + 50 * s, 900 + s);
            const auto cache = build_cache(ds, ConstraintSpec::unconstrained(2, 1));
            const double xy = cache.find(0, 0)->bic + cache.find(1, 0b01)->bic;
            const double yx = cache.find(0, 0b10)->bic + cache.find(1, 0)->bic;
            worst = std::max(worst, std::abs(xy - yx));
        }
        return Outcome{worst <= 1e-8, "max |BIC(X->Y) - BIC(Y->X)| = " + fmt(worst, 3)};
    });

    // Criteria 6 and 7 share one replicate study.
    StudyConfig cfg;
    cfg.k = 10;
    cfg.density = 0.2;
    cfg.sample_sizes = {100, 1000, 10000};
    cfg.replicates = 20;
    cfg.seed = 20240601;
    cfg.max_parents = 5;
    cfg.mode = CompareMode::directed;
    cfg.threads = threads;
    const auto study_start = clock_type::now();
    StudyResult study;
    std::string study_error;
    try {
        study = run_study(cfg);
    } catch (const std::exception& e) {
        study_error = e.what();
    }
    const double study_secs = seconds_since(study_start);

    // (score, n) -> per-replicate values
    std::map<std::pair<ScoreKind, std::size_t>, std::vector<double>> fp, tp, arcs;
    for (const auto& row : study.rows) {
        fp[{row.score, row.n}].push_back(static_cast<double>(row.counts.fp));
        tp[{row.score, row.n}].push_back(static_cast<double>(row.counts.tp));
        arcs[{row.score, row.n}].push_back(static_cast<double>(row.arcs_learned));
    }
    const auto mean = [](const std::vector<double>& v) {
        double s = 0.0;
        for (double x : v) s += x;
        return v.empty() ? 0.0 : s / static_cast<double>(v.size());
    };
    const auto var = [&](const std::vector<double>& v) {
        const double m = mean(v);
        double s = 0.0;
        for (double x : v) s += (x - m) * (x - m);
        return v.size() < 2 ? 0.0 : s / static_cast<double>(v.size() - 1);
    };
    const auto series = [&](auto& table, ScoreKind kind) {
        std::vector<double> out;
        for (auto n : cfg.sample_sizes) out.push_back(mean(table[{kind, n}]));
        return out;
    };
    const auto show = [](const std::vector<double>& v) {
        std::string s;
        for (double x : v) s += (s.empty() ? "" : " / ") + fmt(x, 3);
        return s;
    };

    report(6, "structure recovery study (k = 10, density 0.2, n = 100/1000/10000, 20 replicates, < 15 min)", [&] {
        if (!study_error.empty()) return Outcome{false, "study failed: " + study_error};
        std::size_t more = 0, pairs = 0;
        for (std::size_t r = 0; r < cfg.replicates; ++r) {
            for (std::size_t i = 0; i < cfg.sample_sizes.size(); ++i) {
                const auto n = cfg.sample_sizes[i];
                ++pairs;
                more += arcs[{ScoreKind::mlik, n}][r] > arcs[{ScoreKind::bic, n}][r];
            }
        }
        const bool a = more * 10 >= pairs * 9;
        const auto bic_fp = series(fp, ScoreKind::bic);
        const auto mdl_fp = series(fp, ScoreKind::mdl);
        const auto bic_tp = series(tp, ScoreKind::bic);
        bool b = true, c = true;
        for (std::size_t i = 1; i < bic_fp.size(); ++i) {
            b = b && bic_fp[i] <= bic_fp[i - 1] && mdl_fp[i] <= mdl_fp[i - 1];
            c = c && bic_tp[i] >= bic_tp[i - 1];
        }
        double var_aic = 0.0, var_bic = 0.0;
        std::string var_detail;
        for (auto n : cfg.sample_sizes) {
            const double va = var(fp[{ScoreKind::aic, n}]);
            const double vb = var(fp[{ScoreKind::bic, n}]);
            var_aic += va;
            var_bic += vb;
            var_detail += (var_detail.empty() ? "" : " / ") + fmt(va, 3) + " vs " + fmt(vb, 3);
        }
        const bool d = var_aic >= var_bic;
        const bool fast = study_secs < 900.0;
        std::cout << "      (a) mlik > bic arcs in " << more << "/" << pairs << " replicate-n pairs: "
                  << (a ? "ok" : "no") << "\n"
                  << "      (b) mean fp bic " << show(bic_fp) << ", mdl " << show(mdl_fp) << ": " << (b ? "ok" : "no")
                  << "\n"
                  << "      (c) mean tp bic " << show(bic_tp) << ": " << (c ? "ok" : "no") << "\n"
                  << "      (d) fp variance aic vs bic per n " << var_detail << ": " << (d ? "ok" : "no") << "\n"
                  << "      mean arcs learned mlik " << show(series(arcs, ScoreKind::mlik)) << ", aic "
                  << show(series(arcs, ScoreKind::aic)) << "\n";
        return Outcome{a && b && c && d && fast, std::string("a=") + (a ? "ok" : "no") + " b=" + (b ? "ok" : "no") +
                                                      " c=" + (c ? "ok" : "no") + " d=" + (d ? "ok" : "no") +
                                                      ", study runtime " + fmt(study_secs) + " s (limit 900 s)"};
    });

    report(7, "coefficient max-RMSE decreases with n (20 replicates)", [&] {
        if (!study_error.empty()) return Outcome{false, "study failed: " + study_error};
        std::map<std::size_t, std::vector<double>> by_n;
        for (const auto& row : study.rmse) by_n[row.n].push_back(row.max_rmse);
        std::vector<double> means;
        for (auto n : cfg.sample_sizes) means.push_back(mean(by_n[n]));
        bool ok = true;
        for (std::size_t i = 1; i < means.size(); ++i) ok = ok && means[i] < means[i - 1];
        return Outcome{ok, "mean max-RMSE " + show(means)};
    });

    report(8, "byte-identical cache, DAG and fit across thread counts 1 and 4", [] {
        const std::vector<DistributionKind> dists{DistributionKind::gaussian(), DistributionKind::binomial(),
                                                  DistributionKind::poisson(), DistributionKind::multinomial(3)};
        const auto gt = random_dag(7, 0.3, dists, 88);
        const auto ds = simulate_data(gt, 500, 89);
        auto cs = ConstraintSpec::unconstrained(ds.k(), 3);
        const auto one = artifacts(ds, cs, 1);
        const auto four = artifacts(ds, cs, 4);
        return Outcome{one == four, std::to_string(one.size()) + " bytes compared, " +
                                        (one == four ? "identical" : "different")};
    });

    report(9, "throughput: 3820 gaussian fits (k = 10, n = 10000, max_parents 5) single-threaded < 60 s", [] {
        const auto gt = random_dag(10, 0.2, {DistributionKind::gaussian()}, 9);
        const auto ds = simulate_data(gt, 10000, 10);
        const auto t0 = clock_type::now();
        const auto cache = build_cache(ds, ConstraintSpec::unconstrained(10, 5), {.threads = 1, .glm = {}});
        const double secs = seconds_since(t0);
        return Outcome{cache.size() == 3820 && secs < 60.0,
                       std::to_string(cache.size()) + " entries in " + fmt(secs) + " s"};
    });

    std::cout << (failures ? "acceptance: " + std::to_string(failures) + " criterion(s) failed" : "acceptance: all passed")
              << std::endl;
    return failures ? 1 : 0;
}

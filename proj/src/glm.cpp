#include <abn/glm.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace abn {

namespace {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

// log(1 + exp(x)) without overflow.
double log1pexp(double x) {
    if (x > 35.0) return x;
    if (x < -35.0) return std::exp(x);
    return std::log1p(std::exp(x));
}

double logistic(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double binomial_loglik(const VectorXd& y, const VectorXd& eta) {
    double ll = 0.0;
    for (Index i = 0; i < y.size(); ++i) ll += y[i] * eta[i] - log1pexp(eta[i]);
    return ll;
}

double poisson_loglik(const VectorXd& y, const VectorXd& eta) {
    double ll = 0.0;
    for (Index i = 0; i < y.size(); ++i) ll += y[i] * eta[i] - std::exp(eta[i]) - std::lgamma(y[i] + 1.0);
    return ll;
}

bool all_finite(const MatrixXd& m) { return m.allFinite(); }

// Inverse of a symmetric positive definite matrix, or nullopt-equivalent empty
// matrix when the factorization fails.
MatrixXd spd_inverse(const MatrixXd& a) {
    Eigen::LLT<MatrixXd> llt(a);
    if (llt.info() != Eigen::Success) return {};
    return llt.solve(MatrixXd::Identity(a.rows(), a.cols()));
}

void check_dims(const DesignMatrix& x, const VectorXd& y) {
    if (x.values.rows() != y.size()) {
        throw GlmError(Errc::Precondition, "design has " + std::to_string(x.values.rows()) + " rows but response has " +
                                               std::to_string(y.size()));
    }
}

void check_full_rank(const DesignMatrix& x) {
    if (x.values.rows() < x.values.cols()) {
        throw GlmError(Errc::RankDeficient, "more columns than observations");
    }
    const auto rr = rank_reduce(x);
    if (!rr.dropped.empty()) {
        throw GlmError(Errc::RankDeficient, "design is not of full column rank (collinear: " + rr.dropped.front() + ")");
    }
}

void check_divergence(const MatrixXd& beta, const MatrixXd& se, const GlmOptions& opt, std::string_view what) {
    if (!all_finite(beta) || !all_finite(se)) {
        throw GlmError(Errc::Diverged, std::string(what) + ": non-finite estimate", beta);
    }
    if (beta.cwiseAbs().maxCoeff() > opt.max_abs_coefficient) {
        throw GlmError(Errc::Diverged, std::string(what) + ": coefficient beyond separation threshold", beta);
    }
    if (se.size() && se.maxCoeff() > opt.max_std_error) {
        throw GlmError(Errc::Diverged, std::string(what) + ": standard error beyond threshold", beta);
    }
}

GlmFit fit_gaussian(const DesignMatrix& x, const VectorXd& y) {
    const auto n = x.values.rows();
    const auto p = x.values.cols();
    Eigen::HouseholderQR<MatrixXd> qr(x.values);
    const VectorXd beta = qr.solve(y);
    const double rss = (y - x.values * beta).squaredNorm();
    const double sigma2 = rss / static_cast<double>(n);

    const double mean = y.mean();
    const double scale = std::max({mean * mean, (y.array() - mean).square().mean(), 1e-300});
    if (!(sigma2 > 1e-20 * scale)) {
        throw GlmError(Errc::Unfittable, "gaussian response has zero residual variance", beta.transpose());
    }

    const MatrixXd r = qr.matrixQR().topLeftCorner(p, p).triangularView<Eigen::Upper>();
    const MatrixXd r_inv = r.triangularView<Eigen::Upper>().solve(MatrixXd::Identity(p, p));
    const VectorXd var = sigma2 * (r_inv * r_inv.transpose()).diagonal();

    GlmFit fit;
    fit.coefficients = beta.transpose();
    fit.std_errors = var.cwiseSqrt().transpose();
    fit.labels = x.column_labels;
    fit.loglik = -0.5 * static_cast<double>(n) * (std::log(2.0 * std::numbers::pi * sigma2) + 1.0);
    fit.d = static_cast<int>(p) + 1;
    fit.method = FitMethod::irls;
    fit.converged = true;
    fit.iterations = 1;
    return fit;
}

GlmFit fit_counts(const DesignMatrix& x, const VectorXd& y, Family family, const GlmOptions& opt) {
    const bool binomial = family == Family::binomial;
    const auto n = x.values.rows();
    const auto p = x.values.cols();
    const MatrixXd& X = x.values;

    VectorXd mu(n);
    VectorXd eta(n);
    for (Index i = 0; i < n; ++i) {
        mu[i] = binomial ? (y[i] + 0.5) / 2.0 : y[i] + 0.1;
        eta[i] = binomial ? std::log(mu[i] / (1.0 - mu[i])) : std::log(mu[i]);
    }
    const auto loglik = [&](const VectorXd& e) { return binomial ? binomial_loglik(y, e) : poisson_loglik(y, e); };

    constexpr double min_weight = 1e-10;
    VectorXd beta = VectorXd::Zero(p);
    VectorXd w(n);
    VectorXd z(n);
    double dev_old = -2.0 * loglik(eta);
    bool converged = false;
    int iter = 0;
    while (iter < opt.max_iterations) {
        ++iter;
        for (Index i = 0; i < n; ++i) {
            const double var = binomial ? mu[i] * (1.0 - mu[i]) : mu[i];
            w[i] = std::max(var, min_weight);
            z[i] = eta[i] + (y[i] - mu[i]) / w[i];
        }
        const VectorXd sw = w.cwiseSqrt();
        const MatrixXd wx = sw.asDiagonal() * X;
        beta = wx.householderQr().solve(sw.cwiseProduct(z));
        eta = X * beta;
        if (!beta.allFinite() || !eta.allFinite()) {
            throw GlmError(Errc::Diverged, "IRLS produced non-finite estimates", beta.transpose());
        }
        if (!binomial && eta.maxCoeff() > 700.0) {
            throw GlmError(Errc::Diverged, "poisson linear predictor overflows", beta.transpose());
        }
        for (Index i = 0; i < n; ++i) mu[i] = binomial ? logistic(eta[i]) : std::exp(eta[i]);
        const double dev = -2.0 * loglik(eta);
        if (std::abs(dev - dev_old) / (std::abs(dev) + 0.1) < opt.tolerance) {
            converged = true;
            break;
        }
        dev_old = dev;
    }
    if (!converged) {
        throw GlmError(Errc::NotConverged, "IRLS did not converge in " + std::to_string(opt.max_iterations) +
                                               " iterations", beta.transpose());
    }

    for (Index i = 0; i < n; ++i) w[i] = std::max(binomial ? mu[i] * (1.0 - mu[i]) : mu[i], min_weight);
    const MatrixXd info = X.transpose() * w.asDiagonal() * X;
    const MatrixXd cov = spd_inverse(info);
    if (cov.size() == 0) throw GlmError(Errc::Diverged, "singular information matrix", beta.transpose());
    const VectorXd se = cov.diagonal().cwiseMax(0.0).cwiseSqrt();
    check_divergence(beta.transpose(), se.transpose(), opt, "IRLS");

    GlmFit fit;
    fit.coefficients = beta.transpose();
    fit.std_errors = se.transpose();
    fit.labels = x.column_labels;
    fit.loglik = loglik(eta);
    fit.d = static_cast<int>(p);
    fit.method = FitMethod::irls;
    fit.converged = true;
    fit.iterations = iter;
    return fit;
}

// Softmax probabilities with level 0 as the zero baseline.
void softmax_probs(const MatrixXd& X, const MatrixXd& beta, MatrixXd& probs) {
    const auto n = X.rows();
    const auto c = beta.rows() + 1;
    probs.resize(n, c);
    probs.col(0).setZero();
    probs.rightCols(c - 1) = X * beta.transpose();
    for (Index i = 0; i < n; ++i) {
        const double m = probs.row(i).maxCoeff();
        probs.row(i) = (probs.row(i).array() - m).exp();
        probs.row(i) /= probs.row(i).sum();
    }
}

double multinomial_loglik(const MatrixXd& X, const MatrixXd& beta, const VectorXd& y) {
    const auto n = X.rows();
    const MatrixXd eta = X * beta.transpose();
    double ll = 0.0;
    for (Index i = 0; i < n; ++i) {
        double m = 0.0;
        for (Index c = 0; c < eta.cols(); ++c) m = std::max(m, eta(i, c));
        double s = std::exp(-m);
        for (Index c = 0; c < eta.cols(); ++c) s += std::exp(eta(i, c) - m);
        const auto level = static_cast<Index>(y[i]);
        ll += (level == 0 ? 0.0 : eta(i, level - 1)) - m - std::log(s);
    }
    return ll;
}

}  // namespace

std::string_view FamilySpec::link() const {
    switch (kind.family) {
        case Family::gaussian: return "identity";
        case Family::binomial: return "logit";
        case Family::poisson: return "log";
        case Family::multinomial: return "softmax";
    }
    return "unknown";
}

std::string_view to_string(FitMethod method) {
    switch (method) {
        case FitMethod::irls: return "irls";
        case FitMethod::firth: return "firth";
        case FitMethod::multinomial_ml: return "multinomial_ml";
        case FitMethod::multinomial_ridge: return "multinomial_ridge";
    }
    return "unknown";
}

std::string GlmFit::method_name() const {
    std::string name(to_string(method));
    return rank_reduced() ? "rank_reduced+" + name : name;
}

GlmFit fit_irls(const DesignMatrix& x, const VectorXd& y, const FamilySpec& family, const GlmOptions& options) {
    check_dims(x, y);
    check_full_rank(x);
    if (x.values.rows() <= x.values.cols()) {
        throw GlmError(Errc::Unfittable, "saturated design: n <= p", MatrixXd::Zero(1, x.values.cols()));
    }
    switch (family.family()) {
        case Family::gaussian: return fit_gaussian(x, y);
        case Family::binomial:
        case Family::poisson: return fit_counts(x, y, family.family(), options);
        case Family::multinomial: break;
    }
    throw GlmError(Errc::Precondition, "fit_irls does not handle multinomial responses");
}

GlmFit fit_logistic_firth(const DesignMatrix& x, const VectorXd& y, const GlmOptions& opt) {
    check_dims(x, y);
    check_full_rank(x);
    const auto n = x.values.rows();
    const auto p = x.values.cols();
    const MatrixXd& X = x.values;
    for (Index i = 0; i < n; ++i) {
        if (y[i] != 0.0 && y[i] != 1.0) throw GlmError(Errc::Precondition, "firth: response must be 0/1");
    }

    constexpr double min_weight = 1e-300;
    VectorXd beta = VectorXd::Zero(p);
    VectorXd mu(n);
    VectorXd w(n);

    // Penalized log-likelihood and the Cholesky factor of X'WX at `b`.
    const auto evaluate = [&](const VectorXd& b, Eigen::LLT<MatrixXd>& llt) {
        const VectorXd eta = X * b;
        for (Index i = 0; i < n; ++i) {
            mu[i] = logistic(eta[i]);
            w[i] = std::max(mu[i] * (1.0 - mu[i]), min_weight);
        }
        llt.compute(X.transpose() * w.asDiagonal() * X);
        if (llt.info() != Eigen::Success) return -std::numeric_limits<double>::infinity();
        const double logdet = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
        return binomial_loglik(y, eta) + 0.5 * logdet;
    };

    Eigen::LLT<MatrixXd> llt;
    double pll = evaluate(beta, llt);
    bool converged = false;
    int iter = 0;
    while (iter < opt.max_iterations) {
        ++iter;
        if (!std::isfinite(pll)) break;
        // Hat values of the weighted design: h_i = w_i x_i' (X'WX)^{-1} x_i.
        const MatrixXd solved = llt.solve(X.transpose());
        VectorXd adjusted(n);
        for (Index i = 0; i < n; ++i) {
            const double h = w[i] * X.row(i).dot(solved.col(i));
            adjusted[i] = y[i] - mu[i] + h * (0.5 - mu[i]);
        }
        const VectorXd score = X.transpose() * adjusted;
        VectorXd step = llt.solve(score);

        Eigen::LLT<MatrixXd> trial_llt;
        VectorXd trial = beta + step;
        double trial_pll = evaluate(trial, trial_llt);
        for (int halving = 0; halving < 30 && !(trial_pll >= pll - 1e-12 * std::abs(pll)); ++halving) {
            step *= 0.5;
            trial = beta + step;
            trial_pll = evaluate(trial, trial_llt);
        }
        const double change = std::abs(trial_pll - pll) / (std::abs(trial_pll) + 0.1);
        beta = trial;
        pll = trial_pll;
        llt = trial_llt;
        if (!beta.allFinite() || !std::isfinite(pll)) break;
        if (step.cwiseAbs().maxCoeff() < 1e-9 || (change < opt.tolerance && score.cwiseAbs().maxCoeff() < 1e-8)) {
            converged = true;
            break;
        }
    }
    if (!converged) {
        throw GlmError(Errc::NotConverged, "bias-reduced logistic fit did not converge", beta.transpose());
    }

    evaluate(beta, llt);
    const MatrixXd cov = llt.solve(MatrixXd::Identity(p, p));
    GlmFit fit;
    fit.coefficients = beta.transpose();
    fit.std_errors = cov.diagonal().cwiseMax(0.0).cwiseSqrt().transpose();
    fit.labels = x.column_labels;
    fit.loglik = binomial_loglik(y, X * beta);
    fit.d = static_cast<int>(p);
    fit.method = FitMethod::firth;
    fit.converged = true;
    fit.iterations = iter;
    if (!fit.coefficients.allFinite() || !fit.std_errors.allFinite()) {
        throw GlmError(Errc::Diverged, "bias-reduced logistic fit returned non-finite values", fit.coefficients);
    }
    return fit;
}

GlmFit fit_multinomial(const DesignMatrix& x, const VectorXd& y, int levels, const GlmOptions& opt, double ridge) {
    check_dims(x, y);
    if (levels < 2) throw GlmError(Errc::Precondition, "multinomial fit needs at least 2 levels");
    const auto n = x.values.rows();
    const auto p = x.values.cols();
    const auto c1 = static_cast<Index>(levels - 1);
    const Index q = c1 * p;
    const MatrixXd& X = x.values;

    std::vector<double> counts(static_cast<std::size_t>(levels), 0.0);
    for (Index i = 0; i < n; ++i) {
        const double v = y[i];
        if (v < 0 || v >= levels || std::floor(v) != v) {
            throw GlmError(Errc::Precondition, "multinomial response outside 0.." + std::to_string(levels - 1));
        }
        counts[static_cast<std::size_t>(v)] += 1.0;
    }
    for (int c = 0; c < levels; ++c) {
        if (counts[static_cast<std::size_t>(c)] == 0.0) {
            throw GlmError(Errc::Precondition, "multinomial level " + std::to_string(c) + " is never observed");
        }
    }
    check_full_rank(x);

    // Non-intercept mask for the ridge term, stacked level-major.
    VectorXd penalty_mask = VectorXd::Zero(q);
    for (Index c = 0; c < c1; ++c) {
        for (Index j = 0; j < p; ++j) penalty_mask[c * p + j] = x.column_labels[static_cast<std::size_t>(j)] == "(Intercept)" ? 0.0 : 1.0;
    }
    const auto objective = [&](const MatrixXd& b) {
        double pen = 0.0;
        if (ridge > 0) {
            MatrixXd bt = b.transpose();
            const Eigen::Map<const VectorXd> stacked(bt.data(), q);
            pen = 0.5 * ridge * stacked.cwiseProduct(penalty_mask).squaredNorm();
        }
        return multinomial_loglik(X, b, y) - pen;
    };

    MatrixXd beta = MatrixXd::Zero(c1, p);
    const bool has_intercept = p > 0 && x.column_labels.front() == "(Intercept)";
    if (has_intercept) {
        for (Index c = 0; c < c1; ++c) beta(c, 0) = std::log(counts[static_cast<std::size_t>(c + 1)] / counts[0]);
    }

    MatrixXd probs;
    MatrixXd hess(q, q);
    VectorXd grad(q);
    // Gradient and negative Hessian of the penalized log-likelihood, stacked
    // as [level 1 coefficients, level 2 coefficients, ...].
    const auto derivatives = [&](const MatrixXd& b) {
        softmax_probs(X, b, probs);
        grad.setZero();
        hess.setZero();
        for (Index i = 0; i < n; ++i) {
            const auto yi = static_cast<Index>(y[i]);
            const auto xi = X.row(i);
            const MatrixXd xx = xi.transpose() * xi;
            for (Index a = 0; a < c1; ++a) {
                const double pa = probs(i, a + 1);
                grad.segment(a * p, p) += ((yi == a + 1 ? 1.0 : 0.0) - pa) * xi.transpose();
                for (Index bb = a; bb < c1; ++bb) {
                    const double wab = pa * ((a == bb ? 1.0 : 0.0) - probs(i, bb + 1));
                    hess.block(a * p, bb * p, p, p) += wab * xx;
                }
            }
        }
        for (Index a = 0; a < c1; ++a) {
            for (Index bb = a + 1; bb < c1; ++bb) hess.block(bb * p, a * p, p, p) = hess.block(a * p, bb * p, p, p).transpose();
        }
        if (ridge > 0) {
            MatrixXd bt = b.transpose();
            const Eigen::Map<const VectorXd> stacked(bt.data(), q);
            grad -= ridge * stacked.cwiseProduct(penalty_mask);
            hess.diagonal() += ridge * penalty_mask;
        }
    };

    double ll = objective(beta);
    bool converged = false;
    int iter = 0;
    while (iter < opt.max_iterations) {
        ++iter;
        derivatives(beta);
        Eigen::LDLT<MatrixXd> ldlt(hess);
        if (ldlt.info() != Eigen::Success) break;
        const VectorXd step_flat = ldlt.solve(grad);
        if (!step_flat.allFinite()) break;
        // Stacked vector -> (C-1) x p matrix.
        MatrixXd step = Eigen::Map<const MatrixXd>(step_flat.data(), p, c1).transpose();
        MatrixXd trial = beta + step;
        double trial_ll = objective(trial);
        for (int halving = 0; halving < 30 && !(trial_ll >= ll - 1e-12 * std::abs(ll)); ++halving) {
            step *= 0.5;
            trial = beta + step;
            trial_ll = objective(trial);
        }
        const double change = std::abs(trial_ll - ll) / (std::abs(trial_ll) + 0.05);
        beta = trial;
        ll = trial_ll;
        if (!beta.allFinite()) {
            throw GlmError(Errc::Diverged, "multinomial fit produced non-finite estimates", beta);
        }
        if (change < opt.tolerance) {
            converged = true;
            break;
        }
        if (!ridge && beta.cwiseAbs().maxCoeff() > 10.0 * opt.max_abs_coefficient) {
            throw GlmError(Errc::Diverged, "multinomial coefficients diverging (separation)", beta);
        }
    }
    if (!converged) {
        throw GlmError(Errc::NotConverged, "multinomial fit did not converge", beta);
    }

    derivatives(beta);
    const MatrixXd cov = spd_inverse(hess);
    if (cov.size() == 0) throw GlmError(Errc::Diverged, "singular multinomial information", beta);
    const VectorXd se_flat = cov.diagonal().cwiseMax(0.0).cwiseSqrt();
    const MatrixXd se = Eigen::Map<const MatrixXd>(se_flat.data(), p, c1).transpose();
    if (ridge <= 0) check_divergence(beta, se, opt, "multinomial");

    GlmFit fit;
    fit.coefficients = beta;
    fit.std_errors = se;
    fit.labels = x.column_labels;
    fit.loglik = multinomial_loglik(X, beta, y);
    fit.d = static_cast<int>(q);
    fit.method = ridge > 0 ? FitMethod::multinomial_ridge : FitMethod::multinomial_ml;
    fit.converged = true;
    fit.iterations = iter;
    if (!fit.coefficients.allFinite() || !fit.std_errors.allFinite()) {
        throw GlmError(Errc::Diverged, "multinomial fit returned non-finite values", beta);
    }
    return fit;
}

RankReduction rank_reduce(const DesignMatrix& x, double tolerance) {
    const auto n = x.values.rows();
    const auto p = x.values.cols();
    RankReduction out;
    MatrixXd basis(n, std::min(n, p));
    Index rank = 0;
    for (Index j = 0; j < p; ++j) {
        const VectorXd v = x.values.col(j);
        const double norm = v.norm();
        bool keep = norm > 0.0 && rank < n;
        if (keep) {
            VectorXd r = v;
            // Two passes of Gram-Schmidt keep the residual orthogonal to
            // working precision.
            for (int pass = 0; pass < 2; ++pass) {
                if (rank > 0) r -= basis.leftCols(rank) * (basis.leftCols(rank).transpose() * r);
            }
            const double rnorm = r.norm();
            keep = rnorm > tolerance * norm;
            if (keep) basis.col(rank++) = r / rnorm;
        }
        if (keep) {
            out.kept.push_back(j);
        } else {
            out.dropped.push_back(x.column_labels[static_cast<std::size_t>(j)]);
        }
    }
    out.design = out.dropped.empty() ? x : x.select(out.kept);
    return out;
}

GlmFit fit_node_robust(const DesignMatrix& x, const VectorXd& y, const FamilySpec& family, const GlmOptions& options) {
    auto reduced = rank_reduce(x);
    DesignMatrix design = std::move(reduced.design);
    std::vector<std::string> dropped = std::move(reduced.dropped);
    const Family fam = family.family();

    const auto finish = [&](GlmFit fit) {
        fit.dropped_columns = dropped;
        return fit;
    };

    while (true) {
        MatrixXd at_failure;
        std::string reason;
        try {
            if (fam == Family::multinomial) return finish(fit_multinomial(design, y, family.kind.levels, options));
            return finish(fit_irls(design, y, family, options));
        } catch (const GlmError& e) {
            if (e.code() == Errc::Precondition) throw;
            at_failure = e.coefficients_at_failure();
            reason = e.what();
        }

        if (fam == Family::binomial) {
            try {
                return finish(fit_logistic_firth(design, y, options));
            } catch (const GlmError& e) {
                if (e.code() == Errc::Precondition) throw;
                reason = e.what();
            }
        } else if (fam == Family::multinomial) {
            try {
                return finish(fit_multinomial(design, y, family.kind.levels, options, options.multinomial_ridge));
            } catch (const GlmError& e) {
                if (e.code() == Errc::Precondition) throw;
                reason = e.what();
            }
        }

        if (design.cols() <= 1) {
            throw GlmError(Errc::Unfittable, "intercept-only model cannot be fit (" + reason + ")");
        }
        // Remove the non-intercept predictor with the largest |coefficient| at
        // failure; without usable coefficients, the last column.
        Index victim = design.cols() - 1;
        if (at_failure.cols() == design.cols() && at_failure.allFinite()) {
            double largest = -1.0;
            for (Index j = 1; j < design.cols(); ++j) {
                const double mag = at_failure.col(j).cwiseAbs().maxCoeff();
                if (mag > largest) {
                    largest = mag;
                    victim = j;
                }
            }
        }
        dropped.push_back(design.column_labels[static_cast<std::size_t>(victim)]);
        std::vector<Index> keep;
        for (Index j = 0; j < design.cols(); ++j) {
            if (j != victim) keep.push_back(j);
        }
        design = design.select(keep);
    }
}

}  // namespace abn

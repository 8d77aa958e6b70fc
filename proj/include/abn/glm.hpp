#pragma once

#include <abn/data.hpp>

#include <Eigen/Dense>

#include <string>
#include <vector>

namespace abn {

/// Canonical-link GLM family of a child node: identity (gaussian), logit
/// (binomial), log (poisson), softmax (multinomial).
struct FamilySpec {
    DistributionKind kind;

    Family family() const { return kind.family; }
    std::string_view link() const;
};

enum class FitMethod { irls, firth, multinomial_ml, multinomial_ridge };

std::string_view to_string(FitMethod method);

struct GlmFit {
    // One row per linear predictor: 1 row, or C-1 rows for a multinomial child
    // (level 0 is the baseline). Columns follow `labels`.
    Eigen::MatrixXd coefficients;
    Eigen::MatrixXd std_errors;
    std::vector<std::string> labels;
    double loglik = 0.0;
    int d = 0;
    FitMethod method = FitMethod::irls;
    bool converged = false;
    int iterations = 0;
    std::vector<std::string> dropped_columns;

    bool rank_reduced() const { return !dropped_columns.empty(); }
    /// "irls", "firth", "rank_reduced+firth", ...
    std::string method_name() const;
};

struct GlmOptions {
    double tolerance = 1e-8;  // relative deviance change
    int max_iterations = 100;
    double max_abs_coefficient = 15.0;
    double max_std_error = 1e3;
    double multinomial_ridge = 1e-4;
};

/// Fit failure that still carries the coefficients reached when it failed;
/// the robust ladder uses them to pick which predictor to remove.
class GlmError : public Error {
public:
    GlmError(Errc code, const std::string& what, Eigen::MatrixXd at_failure = {})
        : Error(code, what), at_failure_(std::move(at_failure)) {}

    const Eigen::MatrixXd& coefficients_at_failure() const { return at_failure_; }

private:
    Eigen::MatrixXd at_failure_;
};

/// Maximum likelihood by iteratively reweighted least squares (gaussian is the
/// single closed-form weighted least squares step). Throws GlmError with
/// NotConverged, Diverged, RankDeficient or Unfittable.
GlmFit fit_irls(const DesignMatrix& x, const Eigen::VectorXd& y, const FamilySpec& family,
                const GlmOptions& options = {});

/// Bias-reduced logistic regression: maximizes loglik + 1/2 log det I(beta).
/// Standard errors come from the information matrix at the penalized optimum;
/// `loglik` is the unpenalized log-likelihood at the returned coefficients.
GlmFit fit_logistic_firth(const DesignMatrix& x, const Eigen::VectorXd& y, const GlmOptions& options = {});

/// Softmax regression by Newton's method on the stacked (C-1)*p parameter
/// vector. `ridge` > 0 adds 1/2*ridge*|beta|^2 on non-intercept coefficients.
/// Accepts C >= 2 so that the two-level case can be checked against logistic.
GlmFit fit_multinomial(const DesignMatrix& x, const Eigen::VectorXd& y, int levels, const GlmOptions& options = {},
                       double ridge = 0.0);

struct RankReduction {
    DesignMatrix design;
    std::vector<Eigen::Index> kept;
    std::vector<std::string> dropped;
};

/// Keeps a full-column-rank subset of columns. Columns are accepted in order
/// (intercept first) whenever they are not in the span of those already
/// accepted, so of two collinear columns the later one is dropped.
RankReduction rank_reduce(const DesignMatrix& x, double tolerance = 1e-7);

/// The fitting ladder: rank reduction, IRLS or multinomial Newton, then Firth
/// (binomial) or a ridge-stabilized softmax fit (multinomial), then removal of
/// the predictor with the largest |coefficient| and a retry. Throws
/// Errc::Unfittable only if the intercept-only model cannot be fit.
GlmFit fit_node_robust(const DesignMatrix& x, const Eigen::VectorXd& y, const FamilySpec& family,
                       const GlmOptions& options = {});

}  // namespace abn

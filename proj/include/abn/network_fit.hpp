#pragma once

#include <abn/glm.hpp>
#include <abn/score_cache.hpp>
#include <abn/search.hpp>

#include <string>
#include <vector>

namespace abn {

enum class PValueAdjustment { none, bonferroni };

struct CoefficientRow {
    std::string label;
    double estimate = 0.0;
    double se = 0.0;
    double z = 0.0;
    double p = 1.0;
    double p_adjusted = 1.0;
};

struct NodeFit {
    std::string node;
    std::vector<std::string> parents;
    GlmFit fit;
    NodeScores scores;
    std::vector<CoefficientRow> coefficients;
};

struct FitResult {
    std::vector<NodeFit> nodes;  // DAG node order
    NodeScores totals;
    PValueAdjustment adjustment = PValueAdjustment::none;
    std::vector<std::string> adjust;
};

/// Two-sided Wald p-value, 2 * (1 - Phi(|z|)).
double wald_p_value(double estimate, double se);

/// Fits every node on its DAG parents plus the adjustment covariates.
/// Bonferroni multiplies each p-value by the number of non-intercept
/// coefficients in the whole network (capped at 1). Gaussian standard errors
/// use the maximum likelihood variance (denominator n).
FitResult fit_dag(const Dag& g, const Dataset& ds, const ConstraintSpec& cs,
                  PValueAdjustment adjustment = PValueAdjustment::none, unsigned threads = 1,
                  const GlmOptions& options = {});

double network_score(const FitResult& fr, ScoreKind kind);

std::string fit_result_json(const FitResult& fr);

}  // namespace abn

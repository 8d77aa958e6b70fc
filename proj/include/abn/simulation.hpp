#pragma once

#include <abn/data.hpp>
#include <abn/score_cache.hpp>
#include <abn/search.hpp>

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

namespace abn {

struct CoefficientBand {
    double min_magnitude = 0.5;
    double max_magnitude = 2.0;
};

/// Generating network. coefficients[child][parent] is empty when there is no
/// arc, otherwise an (outputs(child) x design_width(parent)) matrix where
/// outputs is C-1 for a multinomial child and 1 otherwise.
struct GroundTruth {
    Dag dag;
    std::vector<DistributionKind> dists;
    std::vector<Eigen::VectorXd> intercepts;
    std::vector<std::vector<Eigen::MatrixXd>> coefficients;
    std::vector<double> gaussian_sd;

    std::size_t k() const { return dag.k(); }
};

/// Uniform random node order; each of the k(k-1)/2 order-respecting arcs is
/// present with probability `density`. Arc coefficients are uniform on
/// +-[0.5, 2.0], intercepts uniform on (-0.5, 0.5), gaussian sd 1.
GroundTruth random_dag(std::size_t k, double density, const std::vector<DistributionKind>& dists,
                       std::uint64_t seed, const CoefficientBand& band = {});

/// Ancestral sampling in topological order.
Dataset simulate_data(const GroundTruth& gt, std::size_t n, std::uint64_t seed);

std::vector<std::size_t> topological_order(const Dag& g);

enum class CompareMode { directed, skeleton };

std::string_view to_string(CompareMode mode);
CompareMode parse_compare_mode(std::string_view text);

struct ConfusionCounts {
    std::size_t tp = 0;
    std::size_t fp = 0;
    std::size_t fn = 0;
    CompareMode mode = CompareMode::directed;
};

ConfusionCounts confusion(const Dag& learned, const Dag& truth, CompareMode mode = CompareMode::directed);

std::string truth_json(const GroundTruth& gt);
GroundTruth parse_truth_json(std::string_view text);

/// Largest per-node RMSE between fitted and generating arc coefficients,
/// fitting the true structure on `ds`. Nodes without parents are skipped.
double max_coefficient_rmse(const GroundTruth& gt, const Dataset& ds);

// ---------------------------------------------------------------------------
// replicate study: structure recovery and coefficient error against n

struct StudyConfig {
    std::size_t k = 10;
    double density = 0.2;
    std::vector<DistributionKind> dists{DistributionKind::gaussian()};  // cycled over nodes
    std::vector<std::size_t> sample_sizes{100, 1000, 10000};
    std::size_t replicates = 20;
    std::uint64_t seed = 1;
    int max_parents = 5;
    std::vector<ScoreKind> scores{ScoreKind::mlik, ScoreKind::aic, ScoreKind::bic, ScoreKind::mdl};
    CompareMode mode = CompareMode::directed;
    unsigned threads = 1;
};

struct StudyRow {
    std::size_t replicate = 0;
    std::size_t n = 0;
    ScoreKind score = ScoreKind::bic;
    std::size_t arcs_true = 0;
    std::size_t arcs_learned = 0;
    ConfusionCounts counts;
};

struct RmseRow {
    std::size_t replicate = 0;
    std::size_t n = 0;
    double max_rmse = 0.0;
};

struct StudyResult {
    std::vector<StudyRow> rows;
    std::vector<RmseRow> rmse;
};

/// Replicate r uses the network random_dag(seed + r); each sample size draws
/// its own dataset from it.
StudyResult run_study(const StudyConfig& config);

void write_study_csv(std::ostream& out, const StudyResult& result);

}  // namespace abn

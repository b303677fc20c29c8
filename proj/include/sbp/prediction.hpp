#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sbp/data_model.hpp"
#include "sbp/parcellation.hpp"

namespace sbp {

struct NodeConnectome {
    Matrix matrix;  // K x K, symmetric, unit diagonal
    std::string subject_id;
};

enum class CPMPredictor { CpmSum, Ridge };

CPMPredictor parse_predictor(const std::string& name);
std::string predictor_name(CPMPredictor p);

struct CPMConfig {
    double selection_p_threshold = 0.01;
    CPMPredictor predictor = CPMPredictor::CpmSum;
    double ridge_penalty = 1.0;  // ridge predictor only
};

struct CPMEdge {
    int node_a = 0;  // node_a < node_b
    int node_b = 0;
    double correlation = 0.0;  // edge-outcome Pearson r on the training set
    double p_value = 1.0;
    double coefficient = 0.0;  // ridge: per-edge coefficient; cpm-sum: its group coefficient
};

struct CPMModel {
    int k = 0;
    CPMConfig config;
    std::vector<CPMEdge> positive_edges;
    std::vector<CPMEdge> negative_edges;
    double intercept = 0.0;
    double coef_pos = 0.0;  // cpm-sum only
    double coef_neg = 0.0;  // cpm-sum only
    std::vector<double> ridge_coefficients;  // positive edges then negative edges
    double fit_r2 = 0.0;
    int n_train = 0;
    bool intercept_only = false;  // no edge passed selection
};

// Node k's time course is the mean of its member voxels' courses; the
// connectome is the Pearson correlation between node courses.
NodeConnectome node_connectome_from_timeseries(const VoxelTimeSeries& ts,
                                               const Parcellation& parc,
                                               std::string subject_id = {});

// Fallback when raw series are unavailable: block averages of the voxel-level
// correlations between node pairs; diagonal set to 1.
NodeConnectome node_connectome_from_voxel_matrix(const Matrix& connectivity,
                                                 const Parcellation& parc,
                                                 std::string subject_id = {});

CPMModel cpm_fit(const std::vector<NodeConnectome>& connectomes,
                 std::span<const double> outcomes, const CPMConfig& config);

double cpm_predict(const CPMModel& model, const NodeConnectome& connectome);

// Out-of-sample R^2 = 1 - SS_res / SS_tot with the test-set mean in the
// denominator; may be negative.
double r_squared(std::span<const double> predictions, std::span<const double> truth);

// Variant with a caller-supplied baseline mean (e.g. the training mean).
double r_squared_baseline(std::span<const double> predictions, std::span<const double> truth,
                          double baseline_mean);

enum class R2Baseline { TestMean, TrainMean };

// Persisted fold assignment so any tuning run is exactly replayable.
struct FoldAssignment {
    std::uint64_t seed = 0;
    int folds_outer = 0;
    int folds_inner = 0;
    std::vector<int> outer;               // outer fold id per subject
    std::vector<std::vector<int>> inner;  // [outer fold][subject] inner id, -1 on test subjects
};

FoldAssignment make_folds(int n, int folds_outer, int folds_inner, std::uint64_t seed);

struct LambdaScore {
    double lambda = 0.0;
    std::vector<double> per_outer_fold;  // mean inner-validation R^2 per outer fold
    double mean_validation_r2 = 0.0;
};

struct CVReport {
    std::vector<double> lambda_grid;
    std::vector<LambdaScore> per_lambda;
    double chosen_lambda = 0.0;                  // argmax of pooled validation R^2
    std::vector<double> per_fold_chosen_lambda;  // one winner per outer fold
    std::vector<double> outer_fold_test_r2;
    double mean_test_r2 = 0.0;
    std::uint64_t seed = 0;
    FoldAssignment folds;
    std::string connectome_source;  // "timeseries" or "matrix"
    std::vector<std::string> warnings;
};

struct TuneOptions {
    int folds_outer = 10;
    int folds_inner = 10;
    std::uint64_t seed = 0;
    DebiasDegrees debias = DebiasDegrees::RowSums;
    PreferenceMode preference_mode = PreferenceMode::PearsonCorrelation;
    double pvalue_cap = 1e6;
    int n_restarts = 10;
    int max_iter = 100;
    double tol = 1e-5;
    int jobs = 1;
    R2Baseline r2_baseline = R2Baseline::TestMean;
    const FoldAssignment* replay_folds = nullptr;
    AccessLog* access_log = nullptr;  // leakage audit trail
};

// Nested cross-validation for lambda. Outer folds are held-out tests; on
// each outer training set an inner 10-fold CV scores every lambda by CPM
// validation R^2 (group matrices rebuilt from inner-train subjects only),
// the winner is refit on the full outer training set and scored on the test
// fold. Training fits can only see training subjects; accesses are logged
// and checked.
CVReport tune_lambda(const Cohort& cohort, int k, std::vector<double> lambda_grid,
                     AggregationMethod aggregation, const CPMConfig& cpm,
                     const TuneOptions& options = {});

enum class EdgeReportMode { TopFraction, AbsThreshold };

EdgeReportMode parse_edge_report_mode(const std::string& name);
std::string edge_report_mode_name(EdgeReportMode m);

struct EdgeImportance {
    int node_a = 0;
    int node_b = 0;
    int sign = 0;  // sign of the edge-outcome correlation
    double strength = 0.0;
};

// Ranked edge table for downstream rendering. top-fraction ranks by
// |coefficient| and keeps the top cutoff share; abs-threshold keeps edges
// with |correlation| > cutoff.
std::vector<EdgeImportance> edge_importance_report(const CPMModel& model, EdgeReportMode mode,
                                                   double cutoff);

}  // namespace sbp

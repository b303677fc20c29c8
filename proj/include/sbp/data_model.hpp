#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "sbp/common.hpp"

namespace sbp {

// One subject's raw fMRI signal: p voxel rows by T time points.
struct VoxelTimeSeries {
    Matrix values;
    std::vector<std::string> voxel_ids;

    int p() const { return static_cast<int>(values.rows()); }
    int t() const { return static_cast<int>(values.cols()); }
};

struct SubjectRecord {
    std::string id;
    Matrix connectivity;  // p x p Pearson correlations, symmetric, unit diagonal
    double outcome = 0.0;
    std::optional<VoxelTimeSeries> timeseries;
};

struct VoxelMeta {
    std::vector<std::array<double, 3>> coordinates;
    std::vector<std::string> group_tags;  // empty string = untagged
};

struct Cohort {
    std::vector<SubjectRecord> subjects;
    std::vector<std::string> voxel_ids;
    std::optional<VoxelMeta> voxel_meta;

    int n() const { return static_cast<int>(subjects.size()); }
    int p() const { return static_cast<int>(voxel_ids.size()); }
};

enum class AggregationMethod { Mean, MeanSquared, MeanSquaredDebiased };

// The debiased variant subtracts a per-subject diagonal degree term; the
// default reading uses row sums of the raw matrix, the alternative uses row
// sums of the squared matrix.
enum class DebiasDegrees { RowSums, SquaredRowSums };

AggregationMethod parse_aggregation(const std::string& name);
std::string aggregation_name(AggregationMethod m);

struct GroupAdjacency {
    Matrix matrix;
    AggregationMethod method = AggregationMethod::MeanSquared;
};

enum class PreferenceMode { PearsonCorrelation, InversePValue };

PreferenceMode parse_preference_mode(const std::string& name);
std::string preference_mode_name(PreferenceMode m);

struct PreferenceOptions {
    double pvalue_cap = 1e6;  // InversePValue entries are capped here
    int jobs = 1;
    bool warn = true;  // stderr note when constant edges are zeroed
};

struct PreferenceMatrix {
    Matrix matrix;  // symmetric, zero diagonal
    PreferenceMode mode = PreferenceMode::PearsonCorrelation;
    int constant_edge_count = 0;
};

// Thread-safe record of which subjects were touched in which protocol phase.
// Cross-validation uses it to prove training fits never read held-out data.
class AccessLog {
public:
    void record(const std::string& phase, int subject_index);
    std::set<int> accessed(const std::string& phase) const;
    std::map<std::string, std::set<int>> all() const;

private:
    mutable std::mutex mutex_;
    std::map<std::string, std::set<int>> by_phase_;
};

// A subset of a cohort's subjects. Indices are kept sorted so that any
// aggregate over the same subject set sums in the same order regardless of
// how the subset was produced. Every subject access is reported to the
// attached log, if any.
class SubjectIndexView {
public:
    SubjectIndexView(const Cohort& cohort, std::vector<int> indices,
                     AccessLog* log = nullptr, std::string phase = {});

    static SubjectIndexView all(const Cohort& cohort, AccessLog* log = nullptr,
                                std::string phase = {});

    int size() const { return static_cast<int>(indices_.size()); }
    int p() const { return cohort_->p(); }
    int global_index(int i) const { return indices_.at(static_cast<size_t>(i)); }
    const std::vector<int>& indices() const { return indices_; }
    const Cohort& cohort() const { return *cohort_; }

    const SubjectRecord& subject(int i) const;

private:
    const Cohort* cohort_;
    std::vector<int> indices_;
    AccessLog* log_;
    std::string phase_;
};

// Pearson correlation matrix of the voxel time courses. Throws
// ConstantSeries naming the first zero-variance voxel.
Matrix compute_voxel_connectivity(const VoxelTimeSeries& ts);

GroupAdjacency aggregate_adjacency(const SubjectIndexView& view, AggregationMethod method,
                                   DebiasDegrees debias = DebiasDegrees::RowSums);
GroupAdjacency aggregate_adjacency(const Cohort& cohort, AggregationMethod method,
                                   DebiasDegrees debias = DebiasDegrees::RowSums);

// Edge-outcome association matrix. Entry (j,l) correlates the j-l edge across
// subjects with the outcome; constant edges get 0; diagonal is 0.
PreferenceMatrix build_preference_matrix(const SubjectIndexView& view, PreferenceMode mode,
                                         const PreferenceOptions& options = {});
PreferenceMatrix build_preference_matrix(const Cohort& cohort, PreferenceMode mode,
                                         const PreferenceOptions& options = {});

enum class MissingDataPolicy { DropVoxel, Abort };

MissingDataPolicy parse_missing_data_policy(const std::string& name);
std::string missing_data_policy_name(MissingDataPolicy p);

// Reads the JSON manifest (subject matrix/time-series files, outcomes CSV,
// optional voxel metadata CSV, missing-data policy) into a validated Cohort.
// Voxels with non-finite or constant data are dropped from every subject or
// abort the load, per the manifest policy.
Cohort load_cohort(const std::filesystem::path& manifest_path);

}  // namespace sbp

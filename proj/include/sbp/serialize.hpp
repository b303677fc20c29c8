#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sbp/evaluation.hpp"
#include "sbp/prediction.hpp"
#include "sbp/simulation.hpp"
#include "sbp/solver.hpp"

namespace sbp::io {

using json = nlohmann::ordered_json;

void write_json(const std::filesystem::path& path, const json& doc);
json read_json(const std::filesystem::path& path);

void write_parcellation_csv(const std::filesystem::path& path, const Parcellation& parc,
                            const std::vector<std::string>& voxel_ids);
Parcellation read_parcellation_csv(const std::filesystem::path& path);

void write_label_grid_csv(const std::filesystem::path& path, const Parcellation& parc,
                          int rows, int cols);
Parcellation read_label_grid_csv(const std::filesystem::path& path, int k);

json fit_result_to_json(const FitResult& fit);

json fold_assignment_to_json(const FoldAssignment& folds);
FoldAssignment fold_assignment_from_json(const json& doc);

json cv_report_to_json(const CVReport& report);

json dice_report_to_json(const DiceReport& report);

json cpm_model_to_json(const CPMModel& model);
CPMModel cpm_model_from_json(const json& doc);

// Throws MissingModelArtifact when the file is absent or not a model.
CPMModel read_cpm_model(const std::filesystem::path& path);

void write_edge_table_csv(const std::filesystem::path& path,
                          const std::vector<EdgeImportance>& rows);

json toy_report_to_json(const ToyReport& report);

json lattice_runs_to_json(const LatticeSpec& spec, int k,
                          const std::vector<LatticeRun>& runs);

// Writes per-subject data files plus outcomes, voxel metadata and a manifest
// under dir; returns the manifest path. file_kind: "timeseries" or "matrix";
// file_format: "sbpm" or "csv".
std::filesystem::path write_cohort_dataset(const std::filesystem::path& dir,
                                           const Cohort& cohort,
                                           const std::string& file_kind = "timeseries",
                                           const std::string& file_format = "sbpm");

}  // namespace sbp::io

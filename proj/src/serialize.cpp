#include "sbp/serialize.hpp"

#include <cmath>
#include <fstream>
#include <limits>

#include "sbp/matrix_io.hpp"

namespace sbp::io {

namespace {

// NaN is not representable in JSON; reports use null.
json finite_or_null(double v) {
    if (std::isnan(v) || std::isinf(v)) return nullptr;
    return v;
}

json finite_list(const std::vector<double>& v) {
    json arr = json::array();
    for (double x : v) arr.push_back(finite_or_null(x));
    return arr;
}

}  // namespace

void write_json(const std::filesystem::path& path, const json& doc) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw_runtime("IoError", "cannot open " + path.string() + " for writing");
    out << doc.dump(2) << "\n";
    if (!out) throw_runtime("IoError", "write failed for " + path.string());
}

json read_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw_validation("ParseError", "cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw_validation("ParseError", path.string() + ": " + e.what());
    }
}

void write_parcellation_csv(const std::filesystem::path& path, const Parcellation& parc,
                            const std::vector<std::string>& voxel_ids) {
    require(static_cast<int>(voxel_ids.size()) == parc.p(), "DimensionMismatch",
            "voxel id count differs from parcellation");
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw_runtime("IoError", "cannot open " + path.string() + " for writing");
    out << "voxel_id,label\n";
    for (int j = 0; j < parc.p(); ++j)
        out << voxel_ids[static_cast<size_t>(j)] << ","
            << parc.labels[static_cast<size_t>(j)] << "\n";
    if (!out) throw_runtime("IoError", "write failed for " + path.string());
}

Parcellation read_parcellation_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw_validation("ParseError", "cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line))
        throw_validation("ParseError", path.string() + ": empty file");
    Parcellation parc;
    int max_label = -1;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto comma = line.rfind(',');
        if (comma == std::string::npos)
            throw_validation("ParseError", path.string() + ": bad row '" + line + "'");
        int label = std::stoi(line.substr(comma + 1));
        parc.labels.push_back(label);
        max_label = std::max(max_label, label);
    }
    parc.k = max_label + 1;
    parc.validate();
    return parc;
}

void write_label_grid_csv(const std::filesystem::path& path, const Parcellation& parc,
                          int rows, int cols) {
    require(rows * cols == parc.p(), "DimensionMismatch", "grid shape mismatch");
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw_runtime("IoError", "cannot open " + path.string() + " for writing");
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            if (c) out << ",";
            out << parc.labels[static_cast<size_t>(r * cols + c)];
        }
        out << "\n";
    }
    if (!out) throw_runtime("IoError", "write failed for " + path.string());
}

Parcellation read_label_grid_csv(const std::filesystem::path& path, int k) {
    Matrix grid = read_matrix_csv(path);
    Parcellation parc;
    parc.k = k;
    for (Eigen::Index r = 0; r < grid.rows(); ++r)
        for (Eigen::Index c = 0; c < grid.cols(); ++c)
            parc.labels.push_back(static_cast<int>(std::lround(grid(r, c))));
    parc.validate();
    return parc;
}

json fit_result_to_json(const FitResult& fit) {
    json doc;
    doc["objective"] = fit.objective;
    doc["objective_trace"] = fit.objective_trace;
    doc["n_iter"] = fit.n_iter;
    doc["converged"] = fit.converged;
    doc["restart_index"] = fit.restart_index;
    doc["k"] = fit.parcellation.k;
    doc["node_sizes"] = fit.parcellation.node_sizes();
    return doc;
}

json fold_assignment_to_json(const FoldAssignment& folds) {
    json doc;
    doc["seed"] = folds.seed;
    doc["folds_outer"] = folds.folds_outer;
    doc["folds_inner"] = folds.folds_inner;
    doc["outer"] = folds.outer;
    doc["inner"] = folds.inner;
    return doc;
}

FoldAssignment fold_assignment_from_json(const json& doc) {
    FoldAssignment folds;
    try {
        folds.seed = doc.at("seed").get<std::uint64_t>();
        folds.folds_outer = doc.at("folds_outer").get<int>();
        folds.folds_inner = doc.at("folds_inner").get<int>();
        folds.outer = doc.at("outer").get<std::vector<int>>();
        folds.inner = doc.at("inner").get<std::vector<std::vector<int>>>();
    } catch (const nlohmann::json::exception& e) {
        throw_validation("ParseError", std::string("bad fold assignment: ") + e.what());
    }
    return folds;
}

json cv_report_to_json(const CVReport& report) {
    json doc;
    doc["seed"] = report.seed;
    doc["lambda_grid"] = report.lambda_grid;
    doc["chosen_lambda"] = report.chosen_lambda;
    doc["per_fold_chosen_lambda"] = report.per_fold_chosen_lambda;
    json per_lambda = json::array();
    for (const auto& ls : report.per_lambda) {
        json entry;
        entry["lambda"] = ls.lambda;
        entry["mean_validation_r2"] = finite_or_null(ls.mean_validation_r2);
        entry["per_outer_fold_validation_r2"] = finite_list(ls.per_outer_fold);
        per_lambda.push_back(entry);
    }
    doc["per_lambda"] = per_lambda;
    doc["outer_fold_test_r2"] = finite_list(report.outer_fold_test_r2);
    doc["mean_test_r2"] = finite_or_null(report.mean_test_r2);
    doc["connectome_source"] = report.connectome_source;
    doc["warnings"] = report.warnings;
    return doc;
}

json dice_report_to_json(const DiceReport& report) {
    json doc;
    doc["n_samples"] = report.n_samples;
    doc["subsample_fraction"] = report.subsample_fraction;
    doc["reference_sample"] = report.reference_sample;
    doc["seed"] = report.seed;
    doc["per_node_mean_dice"] = report.per_node_mean_dice;
    doc["weighted_mean_dice"] = report.weighted_mean_dice;
    doc["node_sizes_per_sample"] = report.node_sizes_per_sample;
    if (!report.node_sizes_by_tag.empty()) doc["node_sizes_by_tag"] = report.node_sizes_by_tag;
    doc["warnings"] = report.warnings;
    return doc;
}

namespace {

json edges_to_json(const std::vector<CPMEdge>& edges) {
    json arr = json::array();
    for (const auto& e : edges) {
        json entry;
        entry["node_a"] = e.node_a;
        entry["node_b"] = e.node_b;
        entry["correlation"] = e.correlation;
        entry["p_value"] = e.p_value;
        entry["coefficient"] = e.coefficient;
        arr.push_back(entry);
    }
    return arr;
}

std::vector<CPMEdge> edges_from_json(const json& arr) {
    std::vector<CPMEdge> edges;
    for (const auto& entry : arr) {
        CPMEdge e;
        e.node_a = entry.at("node_a").get<int>();
        e.node_b = entry.at("node_b").get<int>();
        e.correlation = entry.at("correlation").get<double>();
        e.p_value = entry.at("p_value").get<double>();
        e.coefficient = entry.at("coefficient").get<double>();
        edges.push_back(e);
    }
    return edges;
}

}  // namespace

json cpm_model_to_json(const CPMModel& model) {
    json doc;
    doc["artifact"] = "cpm-model";
    doc["k"] = model.k;
    doc["predictor"] = predictor_name(model.config.predictor);
    doc["selection_p_threshold"] = model.config.selection_p_threshold;
    doc["ridge_penalty"] = model.config.ridge_penalty;
    doc["positive_edges"] = edges_to_json(model.positive_edges);
    doc["negative_edges"] = edges_to_json(model.negative_edges);
    doc["intercept"] = model.intercept;
    doc["coef_pos"] = model.coef_pos;
    doc["coef_neg"] = model.coef_neg;
    doc["ridge_coefficients"] = model.ridge_coefficients;
    doc["fit_r2"] = model.fit_r2;
    doc["n_train"] = model.n_train;
    doc["intercept_only"] = model.intercept_only;
    return doc;
}

CPMModel cpm_model_from_json(const json& doc) {
    CPMModel model;
    try {
        require(doc.at("artifact").get<std::string>() == "cpm-model", "MissingModelArtifact",
                "not a CPM model artifact");
        model.k = doc.at("k").get<int>();
        model.config.predictor = parse_predictor(doc.at("predictor").get<std::string>());
        model.config.selection_p_threshold = doc.at("selection_p_threshold").get<double>();
        model.config.ridge_penalty = doc.at("ridge_penalty").get<double>();
        model.positive_edges = edges_from_json(doc.at("positive_edges"));
        model.negative_edges = edges_from_json(doc.at("negative_edges"));
        model.intercept = doc.at("intercept").get<double>();
        model.coef_pos = doc.at("coef_pos").get<double>();
        model.coef_neg = doc.at("coef_neg").get<double>();
        model.ridge_coefficients = doc.at("ridge_coefficients").get<std::vector<double>>();
        model.fit_r2 = doc.at("fit_r2").get<double>();
        model.n_train = doc.at("n_train").get<int>();
        model.intercept_only = doc.at("intercept_only").get<bool>();
    } catch (const nlohmann::json::exception& e) {
        throw_validation("MissingModelArtifact", std::string("bad model artifact: ") + e.what());
    }
    return model;
}

CPMModel read_cpm_model(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path))
        throw_validation("MissingModelArtifact", "model file not found: " + path.string());
    json doc;
    try {
        doc = read_json(path);
    } catch (const Error&) {
        throw_validation("MissingModelArtifact", "unreadable model file: " + path.string());
    }
    return cpm_model_from_json(doc);
}

void write_edge_table_csv(const std::filesystem::path& path,
                          const std::vector<EdgeImportance>& rows) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw_runtime("IoError", "cannot open " + path.string() + " for writing");
    out << "node_a,node_b,sign,strength\n";
    for (const auto& r : rows)
        out << r.node_a << "," << r.node_b << "," << (r.sign > 0 ? "+" : "-") << ","
            << format_double(r.strength) << "\n";
    if (!out) throw_runtime("IoError", "write failed for " + path.string());
}

json toy_report_to_json(const ToyReport& report) {
    json doc;
    doc["edge_pairs"] = {"V1-V3", "V1-V2", "V2-V3"};
    doc["edge_strengths"] = report.edge_strengths;
    doc["edge_associations"] = report.edge_associations;
    doc["homogeneity_partition"] = {{"nodes", {"{V1,V3}", "{V2}"}},
                                    {"average_inter_node_association",
                                     report.homogeneity_partition_avg}};
    doc["supervised_partition"] = {{"nodes", {"{V1,V2}", "{V3}"}},
                                   {"average_inter_node_association",
                                    report.supervised_partition_avg}};
    doc["singletons_partition"] = {{"nodes", {"{V1}", "{V2}", "{V3}"}},
                                   {"average_inter_node_association",
                                    report.singletons_partition_avg}};
    return doc;
}

json lattice_runs_to_json(const LatticeSpec& spec, int k, const std::vector<LatticeRun>& runs) {
    json doc;
    doc["rows"] = spec.rows;
    doc["cols"] = spec.cols;
    doc["penalty_value"] = spec.penalty_value;
    doc["n_forbidden_pairs"] = spec.forbidden_pairs.size();
    doc["k"] = k;
    json arr = json::array();
    for (const auto& run : runs) {
        json entry;
        entry["lambda"] = run.lambda;
        entry["objective"] = run.fit.objective;
        entry["n_iter"] = run.fit.n_iter;
        entry["converged"] = run.fit.converged;
        entry["restart_index"] = run.fit.restart_index;
        entry["co_clustered_forbidden_pairs"] = run.co_clustered_forbidden_pairs;
        entry["non_contiguous_nodes"] = run.non_contiguous_nodes;
        entry["total_penalty"] = run.total_penalty;
        arr.push_back(entry);
    }
    doc["runs"] = arr;
    return doc;
}

std::filesystem::path write_cohort_dataset(const std::filesystem::path& dir,
                                           const Cohort& cohort, const std::string& file_kind,
                                           const std::string& file_format) {
    require(file_kind == "timeseries" || file_kind == "matrix", "InvalidSpec",
            "file_kind must be 'timeseries' or 'matrix'");
    require(file_format == "sbpm" || file_format == "csv", "InvalidSpec",
            "file_format must be 'sbpm' or 'csv'");
    std::filesystem::create_directories(dir / "subjects");

    json manifest;
    manifest["missing_data_policy"] = "abort";
    manifest["outcomes_file"] = "outcomes.csv";

    std::ofstream outcomes(dir / "outcomes.csv", std::ios::trunc);
    if (!outcomes) throw_runtime("IoError", "cannot write outcomes.csv");
    outcomes << "id,outcome\n";

    json subjects = json::array();
    for (const auto& s : cohort.subjects) {
        std::string file = "subjects/" + s.id + "." + file_format;
        json entry;
        entry["id"] = s.id;
        if (file_kind == "timeseries") {
            require(s.timeseries.has_value(), "InvalidSpec",
                    "subject '" + s.id + "' has no time series to write");
            write_matrix(dir / file, s.timeseries->values);
            entry["timeseries_file"] = file;
        } else {
            write_matrix(dir / file, s.connectivity);
            entry["matrix_file"] = file;
        }
        subjects.push_back(entry);
        outcomes << s.id << "," << format_double(s.outcome) << "\n";
    }
    manifest["subjects"] = subjects;
    if (!outcomes) throw_runtime("IoError", "write failed for outcomes.csv");
    outcomes.close();

    if (cohort.voxel_meta) {
        std::ofstream meta(dir / "voxel_meta.csv", std::ios::trunc);
        if (!meta) throw_runtime("IoError", "cannot write voxel_meta.csv");
        meta << "voxel_id,x,y,z,group_tag\n";
        for (int j = 0; j < cohort.p(); ++j) {
            const auto& c = cohort.voxel_meta->coordinates[static_cast<size_t>(j)];
            meta << cohort.voxel_ids[static_cast<size_t>(j)] << "," << format_double(c[0])
                 << "," << format_double(c[1]) << "," << format_double(c[2]) << ","
                 << cohort.voxel_meta->group_tags[static_cast<size_t>(j)] << "\n";
        }
        manifest["voxel_meta_file"] = "voxel_meta.csv";
    }

    auto manifest_path = dir / "manifest.json";
    write_json(manifest_path, manifest);
    return manifest_path;
}

}  // namespace sbp::io

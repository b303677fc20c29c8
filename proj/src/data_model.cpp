#include "sbp/data_model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "sbp/matrix_io.hpp"
#include "sbp/parallel.hpp"
#include "sbp/stats.hpp"

namespace sbp {

namespace {

using nlohmann::json;

constexpr double kSymmetryTol = 1e-12;

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    size_t start = 0;
    while (true) {
        size_t comma = line.find(',', start);
        out.push_back(line.substr(start, comma == std::string::npos ? std::string::npos
                                                                    : comma - start));
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    return out;
}

std::string trimmed(std::string s) {
    auto issp = [](unsigned char c) { return std::isspace(c) != 0; };
    while (!s.empty() && issp(s.back())) s.pop_back();
    size_t i = 0;
    while (i < s.size() && issp(s[i])) ++i;
    return s.substr(i);
}

}  // namespace

AggregationMethod parse_aggregation(const std::string& name) {
    if (name == "mean") return AggregationMethod::Mean;
    if (name == "mean-squared") return AggregationMethod::MeanSquared;
    if (name == "mean-squared-debiased") return AggregationMethod::MeanSquaredDebiased;
    throw_validation("ParseError", "unknown aggregation method '" + name + "'");
}

std::string aggregation_name(AggregationMethod m) {
    switch (m) {
        case AggregationMethod::Mean: return "mean";
        case AggregationMethod::MeanSquared: return "mean-squared";
        case AggregationMethod::MeanSquaredDebiased: return "mean-squared-debiased";
    }
    return "?";
}

PreferenceMode parse_preference_mode(const std::string& name) {
    if (name == "pearson") return PreferenceMode::PearsonCorrelation;
    if (name == "inverse-pvalue") return PreferenceMode::InversePValue;
    throw_validation("ParseError", "unknown preference mode '" + name + "'");
}

std::string preference_mode_name(PreferenceMode m) {
    return m == PreferenceMode::PearsonCorrelation ? "pearson" : "inverse-pvalue";
}

MissingDataPolicy parse_missing_data_policy(const std::string& name) {
    if (name == "drop-voxel") return MissingDataPolicy::DropVoxel;
    if (name == "abort") return MissingDataPolicy::Abort;
    throw_validation("ParseError", "unknown missing-data policy '" + name + "'");
}

std::string missing_data_policy_name(MissingDataPolicy p) {
    return p == MissingDataPolicy::DropVoxel ? "drop-voxel" : "abort";
}

void AccessLog::record(const std::string& phase, int subject_index) {
    std::lock_guard<std::mutex> lock(mutex_);
    by_phase_[phase].insert(subject_index);
}

std::set<int> AccessLog::accessed(const std::string& phase) const {
    std::lock_guard<std::mutex> lock(mutex_);
    auto it = by_phase_.find(phase);
    return it == by_phase_.end() ? std::set<int>{} : it->second;
}

std::map<std::string, std::set<int>> AccessLog::all() const {
    std::lock_guard<std::mutex> lock(mutex_);
    return by_phase_;
}

SubjectIndexView::SubjectIndexView(const Cohort& cohort, std::vector<int> indices,
                                   AccessLog* log, std::string phase)
    : cohort_(&cohort), indices_(std::move(indices)), log_(log), phase_(std::move(phase)) {
    std::sort(indices_.begin(), indices_.end());
    require(std::adjacent_find(indices_.begin(), indices_.end()) == indices_.end(),
            "IndexOutOfRange", "duplicate subject index in view");
    for (int i : indices_)
        require(i >= 0 && i < cohort.n(), "IndexOutOfRange",
                "subject index " + std::to_string(i) + " out of range");
}

SubjectIndexView SubjectIndexView::all(const Cohort& cohort, AccessLog* log,
                                       std::string phase) {
    std::vector<int> idx(static_cast<size_t>(cohort.n()));
    std::iota(idx.begin(), idx.end(), 0);
    return SubjectIndexView(cohort, std::move(idx), log, std::move(phase));
}

const SubjectRecord& SubjectIndexView::subject(int i) const {
    int g = indices_.at(static_cast<size_t>(i));
    if (log_) log_->record(phase_, g);
    return cohort_->subjects[static_cast<size_t>(g)];
}

Matrix compute_voxel_connectivity(const VoxelTimeSeries& ts) {
    const int p = ts.p();
    const int t = ts.t();
    require(t >= 3, "DimensionMismatch",
            "time series needs at least 3 time points, got " + std::to_string(t));
    require(p >= 1, "DimensionMismatch", "empty time series");

    // Row-normalize (center, unit norm) and take X X^T through a symmetric
    // rank update so the result is exactly symmetric.
    Matrix x = ts.values;
    for (int j = 0; j < p; ++j) {
        const double mean = x.row(j).mean();
        x.row(j).array() -= mean;
        const double norm = x.row(j).norm();
        if (norm == 0.0) {
            std::string vid = j < static_cast<int>(ts.voxel_ids.size())
                                  ? ts.voxel_ids[static_cast<size_t>(j)]
                                  : std::to_string(j);
            throw_validation("ConstantSeries", "voxel '" + vid + "' has a constant time course");
        }
        x.row(j) /= norm;
    }
    Matrix c = Matrix::Zero(p, p);
    c.selfadjointView<Eigen::Lower>().rankUpdate(x);
    c.triangularView<Eigen::StrictlyUpper>() = c.transpose();
    for (int j = 0; j < p; ++j) {
        for (int l = 0; l < p; ++l) {
            if (j == l)
                c(j, l) = 1.0;
            else
                c(j, l) = std::clamp(c(j, l), -1.0, 1.0);
        }
    }
    return c;
}

GroupAdjacency aggregate_adjacency(const SubjectIndexView& view, AggregationMethod method,
                                   DebiasDegrees debias) {
    const int n = view.size();
    require(n >= 1, "EmptyCohort", "aggregation needs at least one subject");
    const int p = static_cast<int>(view.subject(0).connectivity.rows());

    Matrix acc = Matrix::Zero(p, p);
    for (int i = 0; i < n; ++i) {
        const Matrix& a = view.subject(i).connectivity;
        if (a.rows() != p || a.cols() != p)
            throw_validation("DimensionMismatch",
                             "subject '" + view.subject(i).id + "' has mismatched voxel count");
        switch (method) {
            case AggregationMethod::Mean:
                acc += a;
                break;
            case AggregationMethod::MeanSquared:
                acc += a.cwiseProduct(a);
                break;
            case AggregationMethod::MeanSquaredDebiased: {
                acc += a.cwiseProduct(a);
                if (debias == DebiasDegrees::RowSums)
                    acc.diagonal() -= a.rowwise().sum();
                else
                    acc.diagonal() -= a.cwiseProduct(a).rowwise().sum();
                break;
            }
        }
    }
    acc /= static_cast<double>(n);
    return GroupAdjacency{std::move(acc), method};
}

GroupAdjacency aggregate_adjacency(const Cohort& cohort, AggregationMethod method,
                                   DebiasDegrees debias) {
    return aggregate_adjacency(SubjectIndexView::all(cohort), method, debias);
}

PreferenceMatrix build_preference_matrix(const SubjectIndexView& view, PreferenceMode mode,
                                         const PreferenceOptions& options) {
    const int n = view.size();
    require(n >= 3, "TooFewSubjects",
            "preference matrix needs at least 3 subjects, got " + std::to_string(n));
    require(options.pvalue_cap > 0, "InvalidSpec", "pvalue_cap must be positive");

    std::vector<const Matrix*> mats;
    std::vector<double> outcome(static_cast<size_t>(n));
    mats.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        const SubjectRecord& s = view.subject(i);
        mats.push_back(&s.connectivity);
        outcome[static_cast<size_t>(i)] = s.outcome;
    }
    const int p = static_cast<int>(mats[0]->rows());
    for (int i = 1; i < n; ++i)
        require(mats[static_cast<size_t>(i)]->rows() == p, "DimensionMismatch",
                "subject matrices disagree on voxel count");

    double omean = 0.0;
    for (double o : outcome) omean += o;
    omean /= static_cast<double>(n);
    double ovar = 0.0;
    std::vector<double> ocent(static_cast<size_t>(n));
    for (size_t i = 0; i < outcome.size(); ++i) {
        ocent[i] = outcome[i] - omean;
        ovar += ocent[i] * ocent[i];
    }
    require(ovar > 0.0, "DegenerateOutcome", "outcome is constant across subjects");

    Matrix r = Matrix::Zero(p, p);
    std::vector<int> constant_per_row(static_cast<size_t>(p), 0);

    parallel_for(p, options.jobs, [&](int j) {
        std::vector<double> edge(static_cast<size_t>(n));
        for (int l = j + 1; l < p; ++l) {
            double emean = 0.0;
            for (int i = 0; i < n; ++i) {
                edge[static_cast<size_t>(i)] = (*mats[static_cast<size_t>(i)])(j, l);
                emean += edge[static_cast<size_t>(i)];
            }
            emean /= static_cast<double>(n);
            double sxy = 0.0, sxx = 0.0;
            for (int i = 0; i < n; ++i) {
                const double de = edge[static_cast<size_t>(i)] - emean;
                sxy += de * ocent[static_cast<size_t>(i)];
                sxx += de * de;
            }
            double value = 0.0;
            if (sxx == 0.0) {
                ++constant_per_row[static_cast<size_t>(j)];
            } else {
                double corr = std::clamp(sxy / std::sqrt(sxx * ovar), -1.0, 1.0);
                if (mode == PreferenceMode::PearsonCorrelation) {
                    value = corr;
                } else {
                    double pv = stats::pearson_pvalue(corr, n);
                    value = pv <= 0.0 ? options.pvalue_cap
                                      : std::min(1.0 / pv, options.pvalue_cap);
                }
            }
            r(j, l) = value;
            r(l, j) = value;
        }
    });

    int constant_edges = 0;
    for (int c : constant_per_row) constant_edges += c;
    if (constant_edges > 0 && options.warn)
        std::cerr << "warning: " << constant_edges
                  << " edge(s) constant across subjects; preference set to 0\n";

    PreferenceMatrix out;
    out.matrix = std::move(r);
    out.mode = mode;
    out.constant_edge_count = constant_edges;
    return out;
}

PreferenceMatrix build_preference_matrix(const Cohort& cohort, PreferenceMode mode,
                                         const PreferenceOptions& options) {
    return build_preference_matrix(SubjectIndexView::all(cohort), mode, options);
}

namespace {

struct ManifestEntry {
    std::string id;
    std::filesystem::path file;
    bool is_timeseries = false;
};

std::map<std::string, double> read_outcomes_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw_validation("ParseError", "cannot open outcomes file " + path.string());
    std::string line;
    if (!std::getline(in, line))
        throw_validation("ParseError", "empty outcomes file " + path.string());
    if (!line.empty() && line.back() == '\r') line.pop_back();
    auto header = split_csv_line(line);
    if (header.size() != 2 || trimmed(header[0]) != "id" || trimmed(header[1]) != "outcome")
        throw_validation("ParseError", path.string() + ": expected header 'id,outcome'");
    std::map<std::string, double> out;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto fields = split_csv_line(line);
        if (fields.size() != 2)
            throw_validation("ParseError", path.string() + ": bad row on line " +
                                               std::to_string(lineno));
        try {
            out[trimmed(fields[0])] = std::stod(fields[1]);
        } catch (const std::exception&) {
            throw_validation("ParseError", path.string() + ": bad outcome on line " +
                                               std::to_string(lineno));
        }
    }
    return out;
}

VoxelMeta read_voxel_meta_csv(const std::filesystem::path& path,
                              std::vector<std::string>& ids_out) {
    std::ifstream in(path);
    if (!in) throw_validation("ParseError", "cannot open voxel metadata " + path.string());
    std::string line;
    if (!std::getline(in, line))
        throw_validation("ParseError", "empty voxel metadata " + path.string());
    if (!line.empty() && line.back() == '\r') line.pop_back();
    auto header = split_csv_line(line);
    if (header.size() != 5 || trimmed(header[0]) != "voxel_id")
        throw_validation("ParseError",
                         path.string() + ": expected header 'voxel_id,x,y,z,group_tag'");
    VoxelMeta meta;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto fields = split_csv_line(line);
        if (fields.size() != 5)
            throw_validation("ParseError", path.string() + ": bad row on line " +
                                               std::to_string(lineno));
        try {
            ids_out.push_back(trimmed(fields[0]));
            meta.coordinates.push_back(
                {std::stod(fields[1]), std::stod(fields[2]), std::stod(fields[3])});
            meta.group_tags.push_back(trimmed(fields[4]));
        } catch (const std::exception&) {
            throw_validation("ParseError", path.string() + ": bad coordinates on line " +
                                               std::to_string(lineno));
        }
    }
    return meta;
}

void validate_connectivity(Matrix& m, const std::string& subject_id) {
    const int p = static_cast<int>(m.rows());
    require(m.cols() == p, "InconsistentVoxelSet",
            "subject '" + subject_id + "' connectivity is not square");
    double max_asym = 0.0;
    for (int j = 0; j < p; ++j)
        for (int l = j + 1; l < p; ++l)
            max_asym = std::max(max_asym, std::abs(m(j, l) - m(l, j)));
    require(max_asym <= kSymmetryTol, "ParseError",
            "subject '" + subject_id + "' connectivity asymmetric beyond tolerance");
    for (int j = 0; j < p; ++j) {
        require(std::abs(m(j, j) - 1.0) <= 1e-9, "ParseError",
                "subject '" + subject_id + "' connectivity diagonal differs from 1");
        m(j, j) = 1.0;
        for (int l = j + 1; l < p; ++l) {
            require(m(j, l) >= -1.0 - 1e-12 && m(j, l) <= 1.0 + 1e-12, "ParseError",
                    "subject '" + subject_id + "' correlation out of [-1,1]");
            double v = std::clamp(m(j, l), -1.0, 1.0);
            m(j, l) = v;
            m(l, j) = v;
        }
    }
}

void drop_rows_cols(Matrix& m, const std::vector<bool>& drop, bool cols_too) {
    const int p = static_cast<int>(m.rows());
    int keep = 0;
    for (int j = 0; j < p; ++j)
        if (!drop[static_cast<size_t>(j)]) ++keep;
    Matrix out(keep, cols_too ? keep : m.cols());
    int r = 0;
    for (int j = 0; j < p; ++j) {
        if (drop[static_cast<size_t>(j)]) continue;
        if (cols_too) {
            int c = 0;
            for (int l = 0; l < p; ++l) {
                if (drop[static_cast<size_t>(l)]) continue;
                out(r, c++) = m(j, l);
            }
        } else {
            out.row(r) = m.row(j);
        }
        ++r;
    }
    m = std::move(out);
}

}  // namespace

Cohort load_cohort(const std::filesystem::path& manifest_path) {
    std::ifstream in(manifest_path);
    if (!in) throw_validation("ParseError", "cannot open manifest " + manifest_path.string());
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::exception& e) {
        throw_validation("ParseError", manifest_path.string() + ": " + e.what());
    }

    const auto base = manifest_path.parent_path();
    auto resolve = [&](const std::string& rel) {
        std::filesystem::path p(rel);
        return p.is_absolute() ? p : base / p;
    };

    if (!doc.contains("subjects") || !doc["subjects"].is_array() || doc["subjects"].empty())
        throw_validation("ParseError", "manifest has no subjects");
    if (!doc.contains("outcomes_file"))
        throw_validation("ParseError", "manifest has no outcomes_file");

    MissingDataPolicy policy = MissingDataPolicy::Abort;
    if (doc.contains("missing_data_policy"))
        policy = parse_missing_data_policy(doc["missing_data_policy"].get<std::string>());

    std::vector<ManifestEntry> entries;
    for (const auto& s : doc["subjects"]) {
        ManifestEntry e;
        if (!s.contains("id")) throw_validation("ParseError", "subject entry without id");
        e.id = s["id"].get<std::string>();
        if (s.contains("matrix_file")) {
            e.file = resolve(s["matrix_file"].get<std::string>());
        } else if (s.contains("timeseries_file")) {
            e.file = resolve(s["timeseries_file"].get<std::string>());
            e.is_timeseries = true;
        } else {
            throw_validation("ParseError",
                             "subject '" + e.id + "' has neither matrix_file nor timeseries_file");
        }
        entries.push_back(std::move(e));
    }

    auto outcomes = read_outcomes_csv(resolve(doc["outcomes_file"].get<std::string>()));

    std::vector<std::string> voxel_ids;
    std::optional<VoxelMeta> meta;
    if (doc.contains("voxel_meta_file")) {
        VoxelMeta m = read_voxel_meta_csv(resolve(doc["voxel_meta_file"].get<std::string>()),
                                          voxel_ids);
        meta = std::move(m);
    }

    // First pass: load raw payloads and find voxels to drop.
    struct Loaded {
        Matrix data;  // connectivity (p x p) or time series (p x T)
        bool is_timeseries;
    };
    std::vector<Loaded> loaded;
    int p = -1;
    for (const auto& e : entries) {
        Matrix m = io::read_matrix(e.file);
        if (p < 0) {
            p = static_cast<int>(m.rows());
        } else if (static_cast<int>(m.rows()) != p) {
            throw_validation("InconsistentVoxelSet",
                             "subject '" + e.id + "' has " + std::to_string(m.rows()) +
                                 " voxels, expected " + std::to_string(p));
        }
        if (!e.is_timeseries && m.cols() != p)
            throw_validation("InconsistentVoxelSet",
                             "subject '" + e.id + "' connectivity is not square");
        loaded.push_back({std::move(m), e.is_timeseries});
    }

    if (!voxel_ids.empty() && static_cast<int>(voxel_ids.size()) != p)
        throw_validation("InconsistentVoxelSet",
                         "voxel metadata lists " + std::to_string(voxel_ids.size()) +
                             " voxels but subjects have " + std::to_string(p));
    if (voxel_ids.empty())
        for (int j = 0; j < p; ++j) voxel_ids.push_back("v" + std::to_string(j));

    std::vector<bool> drop(static_cast<size_t>(p), false);
    for (size_t si = 0; si < loaded.size(); ++si) {
        const Matrix& m = loaded[si].data;
        for (int j = 0; j < p; ++j) {
            bool bad = !m.row(j).allFinite();
            if (!bad && loaded[si].is_timeseries) {
                const double mean = m.row(j).mean();
                double ss = 0.0;
                for (int t = 0; t < m.cols(); ++t) {
                    const double d = m(j, t) - mean;
                    ss += d * d;
                }
                if (ss == 0.0) bad = true;
            }
            if (bad) {
                if (policy == MissingDataPolicy::Abort)
                    throw_validation("NonFiniteData",
                                     "subject '" + entries[si].id + "' voxel '" +
                                         voxel_ids[static_cast<size_t>(j)] +
                                         "' has missing or constant data (policy abort)");
                drop[static_cast<size_t>(j)] = true;
            }
        }
    }

    const bool any_drop = std::find(drop.begin(), drop.end(), true) != drop.end();
    if (any_drop) {
        for (auto& l : loaded) drop_rows_cols(l.data, drop, !l.is_timeseries);
        std::vector<std::string> kept_ids;
        VoxelMeta kept_meta;
        for (int j = 0; j < p; ++j) {
            if (drop[static_cast<size_t>(j)]) continue;
            kept_ids.push_back(voxel_ids[static_cast<size_t>(j)]);
            if (meta) {
                kept_meta.coordinates.push_back(meta->coordinates[static_cast<size_t>(j)]);
                kept_meta.group_tags.push_back(meta->group_tags[static_cast<size_t>(j)]);
            }
        }
        voxel_ids = std::move(kept_ids);
        if (meta) meta = std::move(kept_meta);
        p = static_cast<int>(voxel_ids.size());
        require(p >= 1, "InconsistentVoxelSet", "all voxels dropped by missing-data policy");
    }

    Cohort cohort;
    cohort.voxel_ids = voxel_ids;
    cohort.voxel_meta = meta;
    for (size_t si = 0; si < entries.size(); ++si) {
        SubjectRecord rec;
        rec.id = entries[si].id;
        auto it = outcomes.find(rec.id);
        if (it == outcomes.end())
            throw_validation("MissingOutcome",
                             "no outcome row for subject '" + rec.id + "'");
        rec.outcome = it->second;
        if (loaded[si].is_timeseries) {
            VoxelTimeSeries ts;
            ts.values = std::move(loaded[si].data);
            ts.voxel_ids = voxel_ids;
            rec.connectivity = compute_voxel_connectivity(ts);
            rec.timeseries = std::move(ts);
        } else {
            rec.connectivity = std::move(loaded[si].data);
            validate_connectivity(rec.connectivity, rec.id);
        }
        cohort.subjects.push_back(std::move(rec));
    }
    return cohort;
}

}  // namespace sbp

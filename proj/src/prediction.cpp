#include "sbp/prediction.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>
#include <numeric>
#include <set>

#include "sbp/parallel.hpp"
#include "sbp/rng.hpp"
#include "sbp/solver.hpp"
#include "sbp/stats.hpp"

namespace sbp {

CPMPredictor parse_predictor(const std::string& name) {
    if (name == "cpm-sum") return CPMPredictor::CpmSum;
    if (name == "ridge") return CPMPredictor::Ridge;
    throw_validation("ParseError", "unknown predictor '" + name + "'");
}

std::string predictor_name(CPMPredictor p) {
    return p == CPMPredictor::CpmSum ? "cpm-sum" : "ridge";
}

EdgeReportMode parse_edge_report_mode(const std::string& name) {
    if (name == "top-fraction") return EdgeReportMode::TopFraction;
    if (name == "abs-threshold") return EdgeReportMode::AbsThreshold;
    throw_validation("ParseError", "unknown edge report mode '" + name + "'");
}

std::string edge_report_mode_name(EdgeReportMode m) {
    return m == EdgeReportMode::TopFraction ? "top-fraction" : "abs-threshold";
}

NodeConnectome node_connectome_from_timeseries(const VoxelTimeSeries& ts,
                                               const Parcellation& parc,
                                               std::string subject_id) {
    require(ts.p() == parc.p(), "DimensionMismatch",
            "time series voxel count differs from parcellation");
    parc.validate();
    auto members = parc.node_members();
    VoxelTimeSeries node_courses;
    node_courses.values.resize(parc.k, ts.t());
    for (int k = 0; k < parc.k; ++k) {
        const auto& m = members[static_cast<size_t>(k)];
        if (m.empty())
            throw_validation("EmptyNode", "node " + std::to_string(k) + " has no voxels");
        Vector sum = Vector::Zero(ts.t());
        for (int j : m) sum += ts.values.row(j).transpose();
        node_courses.values.row(k) = sum.transpose() / static_cast<double>(m.size());
        node_courses.voxel_ids.push_back("node" + std::to_string(k));
    }
    NodeConnectome out;
    out.matrix = compute_voxel_connectivity(node_courses);
    out.subject_id = std::move(subject_id);
    return out;
}

NodeConnectome node_connectome_from_voxel_matrix(const Matrix& connectivity,
                                                 const Parcellation& parc,
                                                 std::string subject_id) {
    require(connectivity.rows() == parc.p() && connectivity.cols() == parc.p(),
            "DimensionMismatch", "connectivity shape differs from parcellation");
    parc.validate();
    auto members = parc.node_members();
    for (int k = 0; k < parc.k; ++k)
        if (members[static_cast<size_t>(k)].empty())
            throw_validation("EmptyNode", "node " + std::to_string(k) + " has no voxels");
    Matrix m = Matrix::Identity(parc.k, parc.k);
    for (int a = 0; a < parc.k; ++a) {
        for (int b = a + 1; b < parc.k; ++b) {
            double sum = 0.0;
            for (int j : members[static_cast<size_t>(a)])
                for (int l : members[static_cast<size_t>(b)]) sum += connectivity(j, l);
            double denom = static_cast<double>(members[static_cast<size_t>(a)].size()) *
                           static_cast<double>(members[static_cast<size_t>(b)].size());
            m(a, b) = sum / denom;
            m(b, a) = m(a, b);
        }
    }
    NodeConnectome out;
    out.matrix = std::move(m);
    out.subject_id = std::move(subject_id);
    return out;
}

double r_squared(std::span<const double> predictions, std::span<const double> truth) {
    require(predictions.size() == truth.size(), "DimensionMismatch",
            "prediction/truth length mismatch");
    require(truth.size() >= 2, "DimensionMismatch", "need at least 2 samples for R^2");
    double mean = 0.0;
    for (double y : truth) mean += y;
    mean /= static_cast<double>(truth.size());
    return r_squared_baseline(predictions, truth, mean);
}

double r_squared_baseline(std::span<const double> predictions, std::span<const double> truth,
                          double baseline_mean) {
    require(predictions.size() == truth.size(), "DimensionMismatch",
            "prediction/truth length mismatch");
    require(truth.size() >= 2, "DimensionMismatch", "need at least 2 samples for R^2");
    double ss_tot = 0.0, ss_res = 0.0;
    for (size_t i = 0; i < truth.size(); ++i) {
        const double dt = truth[i] - baseline_mean;
        const double dr = predictions[i] - truth[i];
        ss_tot += dt * dt;
        ss_res += dr * dr;
    }
    require(ss_tot > 0.0, "DegenerateTruth", "truth has no variance around the baseline");
    return 1.0 - ss_res / ss_tot;
}

namespace {

std::vector<double> edge_values(const std::vector<NodeConnectome>& connectomes, int a, int b) {
    std::vector<double> out(connectomes.size());
    for (size_t i = 0; i < connectomes.size(); ++i) out[i] = connectomes[i].matrix(a, b);
    return out;
}

}  // namespace

CPMModel cpm_fit(const std::vector<NodeConnectome>& connectomes,
                 std::span<const double> outcomes, const CPMConfig& config) {
    const int n = static_cast<int>(connectomes.size());
    require(n >= 3, "TooFewSubjects", "CPM needs at least 3 training subjects");
    require(outcomes.size() == connectomes.size(), "DimensionMismatch",
            "outcome count differs from connectome count");
    require(config.selection_p_threshold > 0 && config.selection_p_threshold <= 1,
            "InvalidSpec", "selection_p_threshold must lie in (0,1]");
    require(config.ridge_penalty >= 0, "InvalidSpec", "ridge_penalty must be >= 0");

    const int k = static_cast<int>(connectomes[0].matrix.rows());
    for (const auto& c : connectomes)
        require(c.matrix.rows() == k && c.matrix.cols() == k, "DimensionMismatch",
                "connectomes disagree on node count");

    double omean = 0.0;
    for (double o : outcomes) omean += o;
    omean /= static_cast<double>(n);
    double ovar = 0.0;
    for (double o : outcomes) ovar += (o - omean) * (o - omean);
    require(ovar > 0.0, "DegenerateOutcome", "training outcomes are constant");

    CPMModel model;
    model.k = k;
    model.config = config;
    model.n_train = n;

    for (int a = 0; a < k; ++a) {
        for (int b = a + 1; b < k; ++b) {
            auto vals = edge_values(connectomes, a, b);
            double r = stats::pearson(vals, outcomes);
            if (std::isnan(r) || r == 0.0) continue;
            double p = stats::pearson_pvalue(r, n);
            if (p >= config.selection_p_threshold) continue;
            CPMEdge edge{a, b, r, p, 0.0};
            if (r > 0)
                model.positive_edges.push_back(edge);
            else
                model.negative_edges.push_back(edge);
        }
    }

    if (model.positive_edges.empty() && model.negative_edges.empty()) {
        model.intercept = omean;
        model.intercept_only = true;
        model.fit_r2 = 0.0;
        return model;
    }

    auto sum_feature = [&](const std::vector<CPMEdge>& edges, int subject) {
        double s = 0.0;
        for (const auto& e : edges)
            s += connectomes[static_cast<size_t>(subject)].matrix(e.node_a, e.node_b);
        return s;
    };

    if (config.predictor == CPMPredictor::CpmSum) {
        const bool has_pos = !model.positive_edges.empty();
        const bool has_neg = !model.negative_edges.empty();
        const int m = 1 + (has_pos ? 1 : 0) + (has_neg ? 1 : 0);
        Matrix x(n, m);
        Vector y(n);
        for (int i = 0; i < n; ++i) {
            int c = 0;
            x(i, c++) = 1.0;
            if (has_pos) x(i, c++) = sum_feature(model.positive_edges, i);
            if (has_neg) x(i, c++) = sum_feature(model.negative_edges, i);
            y(i) = outcomes[static_cast<size_t>(i)];
        }
        Vector beta = x.colPivHouseholderQr().solve(y);
        int c = 0;
        model.intercept = beta(c++);
        if (has_pos) model.coef_pos = beta(c++);
        if (has_neg) model.coef_neg = beta(c++);
        for (auto& e : model.positive_edges) e.coefficient = model.coef_pos;
        for (auto& e : model.negative_edges) e.coefficient = model.coef_neg;
    } else {
        std::vector<const CPMEdge*> all;
        for (const auto& e : model.positive_edges) all.push_back(&e);
        for (const auto& e : model.negative_edges) all.push_back(&e);
        const int m = static_cast<int>(all.size());
        Matrix x(n, m);
        Vector y(n);
        for (int i = 0; i < n; ++i) {
            for (int c = 0; c < m; ++c)
                x(i, c) = connectomes[static_cast<size_t>(i)].matrix(
                    all[static_cast<size_t>(c)]->node_a, all[static_cast<size_t>(c)]->node_b);
            y(i) = outcomes[static_cast<size_t>(i)];
        }
        Eigen::RowVectorXd xmean = x.colwise().mean();
        x.rowwise() -= xmean;
        y.array() -= omean;
        Vector beta;
        if (config.ridge_penalty > 0) {
            Matrix gram = x.transpose() * x;
            gram.diagonal().array() += config.ridge_penalty;
            beta = gram.ldlt().solve(x.transpose() * y);
        } else {
            beta = x.colPivHouseholderQr().solve(y);
        }
        model.intercept = omean - xmean.dot(beta);
        model.ridge_coefficients.assign(beta.data(), beta.data() + m);
        int c = 0;
        for (auto& e : model.positive_edges) e.coefficient = beta(c++);
        for (auto& e : model.negative_edges) e.coefficient = beta(c++);
    }

    std::vector<double> fit_preds(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) fit_preds[static_cast<size_t>(i)] = cpm_predict(model, connectomes[static_cast<size_t>(i)]);
    model.fit_r2 = r_squared(fit_preds, outcomes);
    return model;
}

double cpm_predict(const CPMModel& model, const NodeConnectome& connectome) {
    require(connectome.matrix.rows() == model.k && connectome.matrix.cols() == model.k,
            "DimensionMismatch", "connectome node count differs from model");
    if (model.intercept_only) return model.intercept;
    double y = model.intercept;
    if (model.config.predictor == CPMPredictor::CpmSum) {
        double pos = 0.0, neg = 0.0;
        for (const auto& e : model.positive_edges) pos += connectome.matrix(e.node_a, e.node_b);
        for (const auto& e : model.negative_edges) neg += connectome.matrix(e.node_a, e.node_b);
        if (!model.positive_edges.empty()) y += model.coef_pos * pos;
        if (!model.negative_edges.empty()) y += model.coef_neg * neg;
    } else {
        int c = 0;
        for (const auto& e : model.positive_edges)
            y += model.ridge_coefficients[static_cast<size_t>(c++)] *
                 connectome.matrix(e.node_a, e.node_b);
        for (const auto& e : model.negative_edges)
            y += model.ridge_coefficients[static_cast<size_t>(c++)] *
                 connectome.matrix(e.node_a, e.node_b);
    }
    return y;
}

FoldAssignment make_folds(int n, int folds_outer, int folds_inner, std::uint64_t seed) {
    require(folds_outer >= 2, "InvalidSpec", "need at least 2 outer folds");
    require(folds_inner >= 2, "InvalidSpec", "need at least 2 inner folds");
    require(n >= folds_outer * 2, "TooFewSubjects",
            "need n >= 2 * folds_outer, got n = " + std::to_string(n));
    FoldAssignment fa;
    fa.seed = seed;
    fa.folds_outer = folds_outer;
    fa.folds_inner = folds_inner;
    fa.outer.assign(static_cast<size_t>(n), 0);

    std::vector<int> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    {
        auto eng = rng::engine(rng::derive(seed, "outer-folds"));
        std::shuffle(order.begin(), order.end(), eng);
    }
    for (int i = 0; i < n; ++i)
        fa.outer[static_cast<size_t>(order[static_cast<size_t>(i)])] = i % folds_outer;

    fa.inner.assign(static_cast<size_t>(folds_outer), std::vector<int>(static_cast<size_t>(n), -1));
    for (int f = 0; f < folds_outer; ++f) {
        std::vector<int> trainval;
        for (int i = 0; i < n; ++i)
            if (fa.outer[static_cast<size_t>(i)] != f) trainval.push_back(i);
        auto eng = rng::engine(rng::derive(seed, "inner-folds", static_cast<std::uint64_t>(f)));
        std::shuffle(trainval.begin(), trainval.end(), eng);
        for (size_t i = 0; i < trainval.size(); ++i)
            fa.inner[static_cast<size_t>(f)][static_cast<size_t>(trainval[i])] =
                static_cast<int>(i) % folds_inner;
    }
    return fa;
}

namespace {

double mean_ignoring_nan(const std::vector<double>& v) {
    double sum = 0.0;
    int count = 0;
    for (double x : v)
        if (!std::isnan(x)) {
            sum += x;
            ++count;
        }
    return count == 0 ? std::numeric_limits<double>::quiet_NaN()
                      : sum / static_cast<double>(count);
}

struct SplitEval {
    std::vector<double> r2_per_lambda;
    std::vector<Parcellation> parc_per_lambda;
    std::vector<CPMModel> model_per_lambda;
};

// Builds A (and R when needed) from the training subjects only, fits the
// parcellation per lambda, trains CPM on training connectomes and scores the
// evaluation subjects. The access log then proves training work never read
// an evaluation subject.
SplitEval evaluate_split(const Cohort& cohort, const std::vector<int>& train_idx,
                         const std::vector<int>& eval_idx, int k,
                         const std::vector<double>& grid, AggregationMethod aggregation,
                         const CPMConfig& cpm, const TuneOptions& options, bool use_timeseries,
                         std::uint64_t fit_seed, AccessLog* log, const std::string& phase_train,
                         const std::string& phase_score) {
    SubjectIndexView train_view(cohort, train_idx, log, phase_train);
    SubjectIndexView eval_view(cohort, eval_idx, log, phase_score);

    GroupAdjacency a = aggregate_adjacency(train_view, aggregation, options.debias);
    bool need_r = std::any_of(grid.begin(), grid.end(), [](double l) { return l > 0; });
    PreferenceMatrix r;
    if (need_r) {
        PreferenceOptions popt;
        popt.pvalue_cap = options.pvalue_cap;
        popt.jobs = 1;
        popt.warn = false;
        r = build_preference_matrix(train_view, options.preference_mode, popt);
    } else {
        r.matrix = Matrix::Zero(cohort.p(), cohort.p());
        r.mode = options.preference_mode;
    }
    SpectralEmbedding emb = spectral_embedding(a, k);

    std::vector<double> train_outcomes;
    for (int i = 0; i < train_view.size(); ++i)
        train_outcomes.push_back(train_view.subject(i).outcome);
    std::vector<double> eval_outcomes;
    for (int i = 0; i < eval_view.size(); ++i)
        eval_outcomes.push_back(eval_view.subject(i).outcome);

    auto connectome_of = [&](const SubjectRecord& s, const Parcellation& parc) {
        return use_timeseries
                   ? node_connectome_from_timeseries(*s.timeseries, parc, s.id)
                   : node_connectome_from_voxel_matrix(s.connectivity, parc, s.id);
    };

    SplitEval out;
    for (double lambda : grid) {
        SBPConfig cfg;
        cfg.k = k;
        cfg.lambda = lambda;
        cfg.max_iter = options.max_iter;
        cfg.tol = options.tol;
        cfg.n_restarts = options.n_restarts;
        cfg.seed = fit_seed;
        FitResult fit = multi_restart_fit(emb, r, cfg);

        std::vector<NodeConnectome> train_conn;
        for (int i = 0; i < train_view.size(); ++i)
            train_conn.push_back(connectome_of(train_view.subject(i), fit.parcellation));
        CPMModel model = cpm_fit(train_conn, train_outcomes, cpm);

        std::vector<double> preds;
        for (int i = 0; i < eval_view.size(); ++i)
            preds.push_back(
                cpm_predict(model, connectome_of(eval_view.subject(i), fit.parcellation)));

        double train_mean = 0.0;
        for (double o : train_outcomes) train_mean += o;
        train_mean /= static_cast<double>(train_outcomes.size());
        double r2 = options.r2_baseline == R2Baseline::TestMean
                        ? r_squared(preds, eval_outcomes)
                        : r_squared_baseline(preds, eval_outcomes, train_mean);

        out.r2_per_lambda.push_back(r2);
        out.parc_per_lambda.push_back(fit.parcellation);
        out.model_per_lambda.push_back(std::move(model));
    }

    if (log) {
        std::set<int> allowed(train_idx.begin(), train_idx.end());
        for (int s : log->accessed(phase_train))
            if (!allowed.count(s))
                throw_runtime("LeakageViolation",
                              "training phase '" + phase_train + "' accessed subject " +
                                  std::to_string(s));
    }
    return out;
}

}  // namespace

CVReport tune_lambda(const Cohort& cohort, int k, std::vector<double> lambda_grid,
                     AggregationMethod aggregation, const CPMConfig& cpm,
                     const TuneOptions& options) {
    const int n = cohort.n();
    require(!lambda_grid.empty(), "InvalidSpec", "lambda grid is empty");
    for (double l : lambda_grid)
        require(l >= 0, "InvalidSpec", "lambda values must be non-negative");
    require(k >= 1 && k <= cohort.p(), "KOutOfRange", "k outside [1, p]");

    FoldAssignment folds =
        options.replay_folds
            ? *options.replay_folds
            : make_folds(n, options.folds_outer, options.folds_inner, options.seed);
    require(static_cast<int>(folds.outer.size()) == n, "InvalidSpec",
            "fold assignment does not match cohort size");
    const int fo = folds.folds_outer;
    const int fi = folds.folds_inner;

    AccessLog local_log;
    AccessLog* log = options.access_log ? options.access_log : &local_log;

    bool use_timeseries = true;
    for (const auto& s : cohort.subjects)
        if (!s.timeseries) use_timeseries = false;

    CVReport report;
    report.lambda_grid = lambda_grid;
    report.seed = options.seed;
    report.folds = folds;
    report.connectome_source = use_timeseries ? "timeseries" : "matrix";
    report.per_lambda.resize(lambda_grid.size());
    for (size_t l = 0; l < lambda_grid.size(); ++l) {
        report.per_lambda[l].lambda = lambda_grid[l];
        report.per_lambda[l].per_outer_fold.assign(static_cast<size_t>(fo),
                                                   std::numeric_limits<double>::quiet_NaN());
    }

    std::mutex warn_mutex;
    auto add_warning = [&](const std::string& w) {
        std::lock_guard<std::mutex> lock(warn_mutex);
        report.warnings.push_back(w);
        std::cerr << "warning: " << w << "\n";
    };

    for (int f = 0; f < fo; ++f) {
        std::vector<int> test_idx, trainval_idx;
        for (int i = 0; i < n; ++i)
            (folds.outer[static_cast<size_t>(i)] == f ? test_idx : trainval_idx).push_back(i);

        // Inner folds score every lambda on their validation split.
        std::vector<std::vector<double>> inner_r2(
            static_cast<size_t>(fi),
            std::vector<double>(lambda_grid.size(), std::numeric_limits<double>::quiet_NaN()));
        parallel_for(fi, options.jobs, [&](int g) {
            std::vector<int> train_idx, val_idx;
            for (int i : trainval_idx) {
                int gid = folds.inner[static_cast<size_t>(f)][static_cast<size_t>(i)];
                (gid == g ? val_idx : train_idx).push_back(i);
            }
            if (val_idx.empty()) return;
            const std::string tag =
                "outer" + std::to_string(f) + "/inner" + std::to_string(g);
            try {
                SplitEval eval = evaluate_split(
                    cohort, train_idx, val_idx, k, lambda_grid, aggregation, cpm, options,
                    use_timeseries,
                    rng::derive(options.seed, "tune-inner-fit",
                                static_cast<std::uint64_t>(f * fi + g)),
                    log, tag + "/train", tag + "/score");
                inner_r2[static_cast<size_t>(g)] = eval.r2_per_lambda;
            } catch (const Error& e) {
                add_warning("inner fold " + tag + " failed: " + e.what());
            }
        });

        std::vector<double> fold_score(lambda_grid.size());
        for (size_t l = 0; l < lambda_grid.size(); ++l) {
            std::vector<double> vals;
            for (int g = 0; g < fi; ++g) vals.push_back(inner_r2[static_cast<size_t>(g)][l]);
            fold_score[l] = mean_ignoring_nan(vals);
            report.per_lambda[l].per_outer_fold[static_cast<size_t>(f)] = fold_score[l];
        }

        size_t best_l = 0;
        bool any_valid = false;
        for (size_t l = 0; l < lambda_grid.size(); ++l) {
            if (std::isnan(fold_score[l])) continue;
            if (!any_valid || fold_score[l] > fold_score[best_l]) {
                best_l = l;
                any_valid = true;
            }
        }
        if (!any_valid)
            add_warning("outer fold " + std::to_string(f) +
                        ": all inner folds failed; defaulting to first grid value");
        double lambda_star = lambda_grid[best_l];
        report.per_fold_chosen_lambda.push_back(lambda_star);

        const std::string tag = "outer" + std::to_string(f);
        try {
            SplitEval eval = evaluate_split(
                cohort, trainval_idx, test_idx, k, {lambda_star}, aggregation, cpm, options,
                use_timeseries,
                rng::derive(options.seed, "tune-outer-fit", static_cast<std::uint64_t>(f)),
                log, tag + "/train", tag + "/score");
            report.outer_fold_test_r2.push_back(eval.r2_per_lambda[0]);
        } catch (const Error& e) {
            add_warning("outer fold " + std::to_string(f) + " failed: " + e.what());
            report.outer_fold_test_r2.push_back(std::numeric_limits<double>::quiet_NaN());
        }
    }

    for (auto& ls : report.per_lambda) ls.mean_validation_r2 = mean_ignoring_nan(ls.per_outer_fold);

    size_t best = 0;
    bool any = false;
    for (size_t l = 0; l < report.per_lambda.size(); ++l) {
        double v = report.per_lambda[l].mean_validation_r2;
        if (std::isnan(v)) continue;
        if (!any || v > report.per_lambda[best].mean_validation_r2) {
            best = l;
            any = true;
        }
    }
    report.chosen_lambda = lambda_grid[best];
    report.mean_test_r2 = mean_ignoring_nan(report.outer_fold_test_r2);
    return report;
}

std::vector<EdgeImportance> edge_importance_report(const CPMModel& model, EdgeReportMode mode,
                                                   double cutoff) {
    std::vector<EdgeImportance> rows;
    auto add = [&](const CPMEdge& e) {
        EdgeImportance row;
        row.node_a = e.node_a;
        row.node_b = e.node_b;
        row.sign = e.correlation > 0 ? 1 : -1;
        row.strength = mode == EdgeReportMode::TopFraction ? e.coefficient : e.correlation;
        rows.push_back(row);
    };
    for (const auto& e : model.positive_edges) add(e);
    for (const auto& e : model.negative_edges) add(e);

    std::sort(rows.begin(), rows.end(), [](const EdgeImportance& a, const EdgeImportance& b) {
        if (std::abs(a.strength) != std::abs(b.strength))
            return std::abs(a.strength) > std::abs(b.strength);
        if (a.node_a != b.node_a) return a.node_a < b.node_a;
        return a.node_b < b.node_b;
    });

    if (mode == EdgeReportMode::TopFraction) {
        require(cutoff >= 0.0 && cutoff <= 1.0, "InvalidSpec",
                "top-fraction cutoff must lie in [0,1]");
        size_t keep = static_cast<size_t>(
            std::floor(cutoff * static_cast<double>(rows.size()) + 1e-9));
        rows.resize(std::min(rows.size(), keep));
    } else {
        std::erase_if(rows, [&](const EdgeImportance& r) {
            return std::abs(r.strength) <= cutoff;
        });
    }
    return rows;
}

}  // namespace sbp

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "sbp/prediction.hpp"
#include "sbp/serialize.hpp"
#include "sbp/simulation.hpp"
#include "test_util.hpp"

using namespace sbp;

namespace {

VoxelTimeSeries random_series(int p, int t, std::mt19937_64& eng) {
    VoxelTimeSeries ts;
    ts.values = sbp_test::random_rows(p, t, eng);
    for (int j = 0; j < p; ++j) ts.voxel_ids.push_back("v" + std::to_string(j));
    return ts;
}

NodeConnectome connectome_from(Matrix m) {
    NodeConnectome c;
    c.matrix = std::move(m);
    return c;
}

}  // namespace

TEST_CASE("singleton parcellation reproduces the voxel connectivity exactly") {
    std::mt19937_64 eng(3);
    auto ts = random_series(6, 40, eng);
    Parcellation singles{{0, 1, 2, 3, 4, 5}, 6};
    auto node = node_connectome_from_timeseries(ts, singles);
    auto voxel = compute_voxel_connectivity(ts);
    CHECK(node.matrix == voxel);
}

TEST_CASE("merging identical series keeps the course, anti-phase cancels") {
    VoxelTimeSeries ts;
    ts.values.resize(3, 4);
    ts.values.row(0) << 1, 2, 3, 4;
    ts.values.row(1) << 1, 2, 3, 4;
    ts.values.row(2) << 4, 1, 3, 2;
    ts.voxel_ids = {"a", "b", "c"};
    auto node = node_connectome_from_timeseries(ts, Parcellation{{0, 0, 1}, 2});
    // Node 0's course equals either member, so its correlation with node 1
    // matches the voxel-level value.
    auto voxel = compute_voxel_connectivity(ts);
    CHECK(node.matrix(0, 1) == doctest::Approx(voxel(0, 2)));

    VoxelTimeSeries anti;
    anti.values.resize(3, 4);
    anti.values.row(0) << 1, -2, 3, -4;
    anti.values.row(1) << -1, 2, -3, 4;
    anti.values.row(2) << 4, 1, 3, 2;
    anti.voxel_ids = {"a", "b", "c"};
    CHECK_THROWS_WITH_AS(node_connectome_from_timeseries(anti, Parcellation{{0, 0, 1}, 2}),
                         doctest::Contains("ConstantSeries"), Error);
}

TEST_CASE("node connectome flags empty nodes") {
    std::mt19937_64 eng(5);
    auto ts = random_series(4, 10, eng);
    CHECK_THROWS_AS(node_connectome_from_timeseries(ts, Parcellation{{0, 0, 2, 2}, 3}), Error);
    Matrix conn = Matrix::Identity(4, 4);
    CHECK_THROWS_AS(node_connectome_from_voxel_matrix(conn, Parcellation{{0, 0, 2, 2}, 3}),
                    Error);
}

TEST_CASE("voxel-matrix connectome matches brute-force block averages") {
    Matrix c(4, 4);
    c << 1.0, 0.9, 0.3, 0.5,
         0.9, 1.0, 0.5, 0.3,
         0.3, 0.5, 1.0, 0.7,
         0.5, 0.3, 0.7, 1.0;
    Parcellation parc{{0, 0, 1, 1}, 2};
    auto node = node_connectome_from_voxel_matrix(c, parc);
    CHECK(node.matrix(0, 0) == 1.0);
    CHECK(node.matrix(1, 1) == 1.0);
    CHECK(node.matrix(0, 1) == doctest::Approx((0.3 + 0.5 + 0.5 + 0.3) / 4.0));
    CHECK(node.matrix(1, 0) == node.matrix(0, 1));

    // K = p: off-diagonal equals the voxel matrix.
    Parcellation singles{{0, 1, 2, 3}, 4};
    auto full = node_connectome_from_voxel_matrix(c, singles);
    CHECK(full.matrix(1, 2) == c(1, 2));

    // Constant inter-node block.
    Matrix flat = Matrix::Identity(4, 4);
    flat.block(0, 2, 2, 2).setConstant(0.5);
    flat.block(2, 0, 2, 2).setConstant(0.5);
    auto fb = node_connectome_from_voxel_matrix(flat, parc);
    CHECK(fb.matrix(0, 1) == doctest::Approx(0.5));
}

TEST_CASE("r_squared hand values") {
    std::vector<double> truth{1, 2, 3};
    CHECK(r_squared(truth, truth) == doctest::Approx(1.0));

    std::vector<double> mean_pred{2, 2, 2};
    CHECK(r_squared(mean_pred, truth) == doctest::Approx(0.0));

    std::vector<double> off{1, 2, 5};
    CHECK(r_squared(off, truth) == doctest::Approx(-1.0));

    std::vector<double> flat{1, 1, 1};
    CHECK_THROWS_AS(r_squared(truth, flat), Error);
    CHECK_THROWS_AS(r_squared(std::vector<double>{1.0}, std::vector<double>{1.0}), Error);

    CHECK(r_squared_baseline(off, truth, 10.0) == doctest::Approx(1.0 - 4.0 / 194.0));
}

TEST_CASE("r_squared is invariant under shared positive affine transforms") {
    std::mt19937_64 eng(7);
    std::normal_distribution<double> gauss;
    std::vector<double> truth, preds, truth2, preds2;
    for (int i = 0; i < 25; ++i) {
        double y = gauss(eng);
        truth.push_back(y);
        preds.push_back(y + 0.3 * gauss(eng));
    }
    for (size_t i = 0; i < truth.size(); ++i) {
        truth2.push_back(3.0 * truth[i] + 11.0);
        preds2.push_back(3.0 * preds[i] + 11.0);
    }
    CHECK(r_squared(preds, truth) == doctest::Approx(r_squared(preds2, truth2)).epsilon(1e-12));
}

namespace {

// Cohort of K x K "connectomes" with a designated predictive edge.
std::pair<std::vector<NodeConnectome>, std::vector<double>> edge_driven_cohort(
    int n, int k, int ea, int eb, double slope, double noise, std::mt19937_64& eng) {
    std::vector<NodeConnectome> conns;
    std::vector<double> outs;
    std::uniform_real_distribution<double> edge_val(-0.8, 0.8);
    std::normal_distribution<double> gauss;
    for (int i = 0; i < n; ++i) {
        Matrix m = Matrix::Identity(k, k);
        for (int a = 0; a < k; ++a)
            for (int b = a + 1; b < k; ++b) {
                m(a, b) = edge_val(eng);
                m(b, a) = m(a, b);
            }
        conns.push_back(connectome_from(m));
        outs.push_back(slope * m(ea, eb) + noise * gauss(eng));
    }
    return {conns, outs};
}

}  // namespace

TEST_CASE("cpm selects a noiseless predictive edge and predicts it") {
    std::mt19937_64 eng(11);
    auto [conns, outs] = edge_driven_cohort(60, 5, 1, 3, 2.0, 0.0, eng);
    std::vector<NodeConnectome> train(conns.begin(), conns.begin() + 40);
    std::vector<double> train_y(outs.begin(), outs.begin() + 40);

    CPMConfig cfg;
    CPMModel model = cpm_fit(train, train_y, cfg);
    bool found = false;
    for (const auto& e : model.positive_edges)
        if (e.node_a == 1 && e.node_b == 3) found = true;
    CHECK(found);

    std::vector<double> preds, truth;
    for (int i = 40; i < 60; ++i) {
        preds.push_back(cpm_predict(model, conns[size_t(i)]));
        truth.push_back(outs[size_t(i)]);
    }
    CHECK(r_squared(preds, truth) >= 0.99);
}

TEST_CASE("cpm on pure noise selects about the threshold rate and does not predict") {
    std::mt19937_64 eng(13);
    const int k = 24;  // 276 candidate edges
    const int n_edges = k * (k - 1) / 2;
    int selected_total = 0;
    double heldout_r2_worst = -1e9;
    const int reps = 12;
    for (int rep = 0; rep < reps; ++rep) {
        auto [conns, outs] = edge_driven_cohort(80, k, 0, 1, 0.0, 1.0, eng);
        std::vector<NodeConnectome> train(conns.begin(), conns.begin() + 60);
        std::vector<double> train_y(outs.begin(), outs.begin() + 60);
        CPMConfig cfg;
        cfg.selection_p_threshold = 0.01;
        CPMModel model = cpm_fit(train, train_y, cfg);
        selected_total +=
            int(model.positive_edges.size() + model.negative_edges.size());
        std::vector<double> preds, truth;
        for (int i = 60; i < 80; ++i) {
            preds.push_back(cpm_predict(model, conns[size_t(i)]));
            truth.push_back(outs[size_t(i)]);
        }
        heldout_r2_worst = std::max(heldout_r2_worst, r_squared(preds, truth));
    }
    // False-selection rate should be near the 1% threshold.
    double rate = double(selected_total) / double(reps * n_edges);
    CHECK(rate <= 0.03);
    CHECK(heldout_r2_worst <= 0.1);
}

TEST_CASE("a single selected edge reduces cpm-sum to simple linear regression") {
    std::mt19937_64 eng(17);
    std::vector<NodeConnectome> conns;
    std::vector<double> outs;
    std::uniform_real_distribution<double> edge_val(0.1, 0.9);
    for (int i = 0; i < 30; ++i) {
        Matrix m = Matrix::Identity(2, 2);
        m(0, 1) = edge_val(eng);
        m(1, 0) = m(0, 1);
        conns.push_back(connectome_from(m));
        outs.push_back(3.0 * m(0, 1) - 1.0);
    }
    CPMModel model = cpm_fit(conns, outs, CPMConfig{});
    REQUIRE(model.positive_edges.size() == 1);
    CHECK(model.coef_pos == doctest::Approx(3.0).epsilon(1e-9));
    CHECK(model.intercept == doctest::Approx(-1.0).epsilon(1e-9));
    CHECK(model.fit_r2 == doctest::Approx(1.0));
}

TEST_CASE("cpm ridge mode fits per-edge coefficients") {
    std::mt19937_64 eng(19);
    auto [conns, outs] = edge_driven_cohort(80, 5, 0, 2, 1.5, 0.05, eng);
    CPMConfig cfg;
    cfg.predictor = CPMPredictor::Ridge;
    cfg.ridge_penalty = 0.5;
    CPMModel model = cpm_fit(conns, outs, cfg);
    CHECK(!model.intercept_only);
    CHECK(model.ridge_coefficients.size() ==
          model.positive_edges.size() + model.negative_edges.size());
    std::vector<double> preds;
    for (const auto& c : conns) preds.push_back(cpm_predict(model, c));
    CHECK(r_squared(preds, outs) > 0.8);
}

TEST_CASE("cpm prediction is invariant to subject order") {
    std::mt19937_64 eng(23);
    auto [conns, outs] = edge_driven_cohort(40, 4, 0, 3, 1.0, 0.3, eng);
    CPMModel a = cpm_fit(conns, outs, CPMConfig{});

    std::vector<int> order(conns.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), eng);
    std::vector<NodeConnectome> conns2;
    std::vector<double> outs2;
    for (int i : order) {
        conns2.push_back(conns[size_t(i)]);
        outs2.push_back(outs[size_t(i)]);
    }
    CPMModel b = cpm_fit(conns2, outs2, CPMConfig{});
    for (const auto& c : conns)
        CHECK(cpm_predict(a, c) == doctest::Approx(cpm_predict(b, c)).epsilon(1e-9));
}

TEST_CASE("cpm with no selected edges falls back to the intercept") {
    std::vector<NodeConnectome> conns;
    std::vector<double> outs{1, 2, 3, 4};
    for (int i = 0; i < 4; ++i) conns.push_back(connectome_from(Matrix::Identity(3, 3)));
    CPMModel model = cpm_fit(conns, outs, CPMConfig{});
    CHECK(model.intercept_only);
    CHECK(model.intercept == doctest::Approx(2.5));
    CHECK(cpm_predict(model, conns[0]) == doctest::Approx(2.5));
}

TEST_CASE("fold assignment is deterministic, balanced and replayable") {
    auto f1 = make_folds(47, 10, 10, 123);
    auto f2 = make_folds(47, 10, 10, 123);
    CHECK(f1.outer == f2.outer);
    CHECK(f1.inner == f2.inner);

    std::vector<int> outer_sizes(10, 0);
    for (int f : f1.outer) ++outer_sizes[size_t(f)];
    int mn = *std::min_element(outer_sizes.begin(), outer_sizes.end());
    int mx = *std::max_element(outer_sizes.begin(), outer_sizes.end());
    CHECK(mx - mn <= 1);

    for (int f = 0; f < 10; ++f) {
        for (int i = 0; i < 47; ++i) {
            if (f1.outer[size_t(i)] == f)
                CHECK(f1.inner[size_t(f)][size_t(i)] == -1);
            else
                CHECK(f1.inner[size_t(f)][size_t(i)] >= 0);
        }
    }

    auto json = io::fold_assignment_to_json(f1);
    auto back = io::fold_assignment_from_json(json);
    CHECK(back.outer == f1.outer);
    CHECK(back.inner == f1.inner);
}

TEST_CASE("tune_lambda on a planted cohort prefers a positive lambda") {
    PlantedCohortSpec spec;
    spec.p = 24;
    spec.n = 80;
    spec.k_true = 3;
    spec.t_len = 300;
    // Small first block {0..3} holding the predictive edge, two big blocks.
    spec.block_of.assign(24, 0);
    for (int j = 4; j < 14; ++j) spec.block_of[size_t(j)] = 1;
    for (int j = 14; j < 24; ++j) spec.block_of[size_t(j)] = 2;
    spec.edges = {{0, 2, 1.0}};
    spec.noise = 0.02;
    spec.seed = 2024;
    Cohort cohort = synth_cohort(spec);

    TuneOptions opts;
    opts.folds_outer = 4;
    opts.folds_inner = 4;
    opts.seed = 9;
    opts.n_restarts = 4;
    AccessLog log;
    opts.access_log = &log;

    // One spare cluster beyond the three blocks gives the penalty room to
    // isolate the predictive edge's endpoints.
    CVReport report = tune_lambda(cohort, 4, {0.0, 1.0}, AggregationMethod::MeanSquared,
                                  CPMConfig{}, opts);
    CHECK(report.chosen_lambda == 1.0);
    CHECK(report.mean_test_r2 > 0.25);

    // Leakage audit: no training phase may touch its fold's test subjects.
    for (int f = 0; f < 4; ++f) {
        std::set<int> test;
        for (int i = 0; i < cohort.n(); ++i)
            if (report.folds.outer[size_t(i)] == f) test.insert(i);
        for (const auto& [phase, accessed] : log.all()) {
            if (phase.rfind("outer" + std::to_string(f), 0) == 0 &&
                phase.find("/train") != std::string::npos) {
                for (int s : accessed) CHECK(test.count(s) == 0);
            }
        }
    }

    // Determinism and replay.
    TuneOptions opts2 = opts;
    opts2.access_log = nullptr;
    CVReport again = tune_lambda(cohort, 4, {0.0, 1.0}, AggregationMethod::MeanSquared,
                                 CPMConfig{}, opts2);
    CHECK(io::cv_report_to_json(again) == io::cv_report_to_json(report));

    TuneOptions replay = opts2;
    replay.replay_folds = &report.folds;
    CVReport replayed = tune_lambda(cohort, 4, {0.0, 1.0}, AggregationMethod::MeanSquared,
                                    CPMConfig{}, replay);
    CHECK(replayed.outer_fold_test_r2 == report.outer_fold_test_r2);
}

TEST_CASE("tune_lambda with a single-point grid stays well-formed") {
    PlantedCohortSpec spec;
    spec.p = 12;
    spec.n = 40;
    spec.k_true = 2;
    spec.t_len = 60;
    spec.edges = {};
    spec.noise = 1.0;
    spec.seed = 7;
    Cohort cohort = synth_cohort(spec);

    TuneOptions opts;
    opts.folds_outer = 4;
    opts.folds_inner = 3;
    opts.seed = 1;
    opts.n_restarts = 2;
    CVReport report =
        tune_lambda(cohort, 2, {0.0}, AggregationMethod::Mean, CPMConfig{}, opts);
    CHECK(report.chosen_lambda == 0.0);
    CHECK(report.per_lambda.size() == 1);
    CHECK(report.outer_fold_test_r2.size() == 4);
    CHECK(report.per_fold_chosen_lambda == std::vector<double>(4, 0.0));

    // Mean fields equal the arithmetic means of the per-fold lists.
    double sum = 0;
    int cnt = 0;
    for (double v : report.outer_fold_test_r2)
        if (!std::isnan(v)) {
            sum += v;
            ++cnt;
        }
    CHECK(report.mean_test_r2 == doctest::Approx(sum / cnt));
}

TEST_CASE("edge importance report filters and ranks") {
    CPMModel model;
    model.k = 6;
    for (int i = 0; i < 10; ++i) {
        CPMEdge e;
        e.node_a = i < 5 ? 0 : 1;
        e.node_b = i < 5 ? i + 1 : i - 3;
        e.correlation = (i % 2 ? -1.0 : 1.0) * 0.01 * double(i + 1);
        e.coefficient = 0.01 * double(i + 1);
        (e.correlation > 0 ? model.positive_edges : model.negative_edges).push_back(e);
    }

    auto all = edge_importance_report(model, EdgeReportMode::TopFraction, 1.0);
    CHECK(all.size() == 10);
    for (size_t i = 1; i < all.size(); ++i)
        CHECK(std::abs(all[i].strength) <= std::abs(all[i - 1].strength));

    auto top2 = edge_importance_report(model, EdgeReportMode::TopFraction, 0.2);
    REQUIRE(top2.size() == 2);
    CHECK(std::abs(top2[0].strength) == doctest::Approx(0.10));
    CHECK(std::abs(top2[1].strength) == doctest::Approx(0.09));

    auto none = edge_importance_report(model, EdgeReportMode::AbsThreshold, 0.5);
    CHECK(none.empty());

    auto above = edge_importance_report(model, EdgeReportMode::AbsThreshold, 0.055);
    CHECK(above.size() == 5);  // correlations 0.06..0.10

    CPMModel empty;
    empty.intercept_only = true;
    CHECK(edge_importance_report(empty, EdgeReportMode::TopFraction, 1.0).empty());
}

TEST_CASE("cpm model survives a json round trip") {
    std::mt19937_64 eng(31);
    auto [conns, outs] = edge_driven_cohort(30, 4, 0, 2, 2.0, 0.1, eng);
    CPMModel model = cpm_fit(conns, outs, CPMConfig{});
    auto doc = io::cpm_model_to_json(model);
    CPMModel back = io::cpm_model_from_json(doc);
    CHECK(back.k == model.k);
    CHECK(back.positive_edges.size() == model.positive_edges.size());
    for (const auto& c : conns)
        CHECK(cpm_predict(back, c) == doctest::Approx(cpm_predict(model, c)).epsilon(1e-12));
}

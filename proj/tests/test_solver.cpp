#include <doctest.h>

#include <cmath>
#include <map>
#include <random>

#include "sbp/rng.hpp"
#include "sbp/solver.hpp"
#include "test_util.hpp"

using namespace sbp;

namespace {

SpectralEmbedding embedding_of(Matrix rows) {
    SpectralEmbedding emb;
    emb.u = std::move(rows);
    emb.eigenvalues.assign(size_t(emb.u.cols()), 0.0);
    return emb;
}

PreferenceMatrix preference_of(Matrix m) {
    PreferenceMatrix r;
    r.matrix = std::move(m);
    r.mode = PreferenceMode::PearsonCorrelation;
    return r;
}

// Independent objective evaluation: within-cluster scatter plus lambda times
// the ordered within-cluster preference sum.
double oracle_objective(const Matrix& u, const Matrix& r, const std::vector<int>& labels,
                        int k, double lambda) {
    const int p = int(u.rows());
    Matrix mu = Matrix::Zero(k, u.cols());
    std::vector<int> cnt(size_t(k), 0);
    for (int j = 0; j < p; ++j) {
        mu.row(labels[size_t(j)]) += u.row(j);
        ++cnt[size_t(labels[size_t(j)])];
    }
    for (int c = 0; c < k; ++c)
        if (cnt[size_t(c)]) mu.row(c) /= double(cnt[size_t(c)]);
    double total = 0;
    for (int j = 0; j < p; ++j) total += (u.row(j) - mu.row(labels[size_t(j)])).squaredNorm();
    for (int j = 0; j < p; ++j)
        for (int l = 0; l < p; ++l)
            if (j != l && labels[size_t(j)] == labels[size_t(l)])
                total += lambda * r(j, l);
    return total;
}

// Reference Lloyd k-means with batch assignment, ties to the lowest index,
// empty clusters reseeded with the farthest point of the larger clusters.
std::vector<int> reference_lloyd(const Matrix& u, int k, std::vector<int> labels, double tol,
                                 int max_iter) {
    const int p = int(u.rows());
    double prev = std::numeric_limits<double>::infinity();
    for (int it = 0; it < max_iter; ++it) {
        Matrix mu = Matrix::Zero(k, u.cols());
        std::vector<int> cnt(size_t(k), 0);
        for (int j = 0; j < p; ++j) {
            mu.row(labels[size_t(j)]) += u.row(j);
            ++cnt[size_t(labels[size_t(j)])];
        }
        for (int c = 0; c < k; ++c)
            if (cnt[size_t(c)]) mu.row(c) /= double(cnt[size_t(c)]);
        for (int j = 0; j < p; ++j) {
            int best = 0;
            double bd = (u.row(j) - mu.row(0)).squaredNorm();
            for (int c = 1; c < k; ++c) {
                double d = (u.row(j) - mu.row(c)).squaredNorm();
                if (d < bd) {
                    bd = d;
                    best = c;
                }
            }
            labels[size_t(j)] = best;
        }
        // Repair empties identically to the solver's rule at lambda = 0.
        std::vector<int> cnt2(size_t(k), 0);
        for (int j = 0; j < p; ++j) ++cnt2[size_t(labels[size_t(j)])];
        Matrix mu2 = Matrix::Zero(k, u.cols());
        for (int j = 0; j < p; ++j) mu2.row(labels[size_t(j)]) += u.row(j);
        for (int c = 0; c < k; ++c)
            if (cnt2[size_t(c)]) mu2.row(c) /= double(cnt2[size_t(c)]);
        for (int c = 0; c < k; ++c) {
            if (cnt2[size_t(c)] > 0) continue;
            int far = -1;
            double fd = -1;
            for (int j = 0; j < p; ++j) {
                if (cnt2[size_t(labels[size_t(j)])] < 2) continue;
                double d = (u.row(j) - mu2.row(labels[size_t(j)])).squaredNorm();
                if (d > fd) {
                    fd = d;
                    far = j;
                }
            }
            if (far < 0) continue;
            --cnt2[size_t(labels[size_t(far)])];
            labels[size_t(far)] = c;
            cnt2[size_t(c)] = 1;
        }
        double obj = 0;
        Matrix mu3 = Matrix::Zero(k, u.cols());
        std::vector<int> cnt3(size_t(k), 0);
        for (int j = 0; j < p; ++j) {
            mu3.row(labels[size_t(j)]) += u.row(j);
            ++cnt3[size_t(labels[size_t(j)])];
        }
        for (int c = 0; c < k; ++c)
            if (cnt3[size_t(c)]) mu3.row(c) /= double(cnt3[size_t(c)]);
        for (int j = 0; j < p; ++j) obj += (u.row(j) - mu3.row(labels[size_t(j)])).squaredNorm();
        if (std::abs(prev - obj) < tol) break;
        prev = obj;
    }
    return labels;
}

bool same_partition(const std::vector<int>& a, const std::vector<int>& b) {
    if (a.size() != b.size()) return false;
    std::map<int, int> fwd, bwd;
    for (size_t i = 0; i < a.size(); ++i) {
        auto f = fwd.find(a[i]);
        auto g = bwd.find(b[i]);
        if (f == fwd.end() && g == bwd.end()) {
            fwd[a[i]] = b[i];
            bwd[b[i]] = a[i];
        } else if (f == fwd.end() || g == bwd.end() || f->second != b[i] ||
                   g->second != a[i]) {
            return false;
        }
    }
    return true;
}

// The hand-checkable three-voxel instance: 1-D embedding (0, 0, 1),
// preference only between voxels 0 and 1.
struct TinyInstance {
    SpectralEmbedding emb;
    PreferenceMatrix r;
    TinyInstance() {
        Matrix u(3, 1);
        u << 0, 0, 1;
        emb = embedding_of(u);
        Matrix m = Matrix::Zero(3, 3);
        m(0, 1) = 1;
        m(1, 0) = 1;
        r = preference_of(m);
    }
};

}  // namespace

TEST_CASE("objective reproduces the hand example") {
    TinyInstance t;
    Parcellation labels{{0, 0, 1}, 2};
    CHECK(objective(t.emb, t.r, labels, 2.0) == doctest::Approx(4.0).epsilon(1e-12));

    // lambda = 0, singletons -> exactly zero.
    Parcellation singles{{0, 1, 2}, 3};
    CHECK(objective(t.emb, t.r, singles, 0.0) == 0.0);
}

TEST_CASE("objective at lambda 0 equals an independent scatter computation") {
    std::mt19937_64 eng(3);
    for (int rep = 0; rep < 20; ++rep) {
        int p = 4 + int(eng() % 20);
        int k = 1 + int(eng() % 4);
        if (k > p) k = p;
        Matrix u = sbp_test::random_rows(p, k, eng);
        Matrix rm = sbp_test::random_preference(p, eng);
        std::vector<int> labels(static_cast<size_t>(p));
        for (int j = 0; j < p; ++j) labels[size_t(j)] = int(eng() % std::uint64_t(k));
        auto emb = embedding_of(u);
        auto r = preference_of(rm);
        Parcellation parc{labels, k};
        CHECK(objective(emb, r, parc, 0.0) ==
              doctest::Approx(oracle_objective(u, rm, labels, k, 0.0)).epsilon(1e-12));
        CHECK(objective(emb, r, parc, 1.7) ==
              doctest::Approx(oracle_objective(u, rm, labels, k, 1.7)).epsilon(1e-12));
    }
}

TEST_CASE("objective is invariant under node relabeling") {
    std::mt19937_64 eng(5);
    Matrix u = sbp_test::random_rows(12, 3, eng);
    Matrix rm = sbp_test::random_preference(12, eng);
    std::vector<int> labels(12);
    for (int j = 0; j < 12; ++j) labels[size_t(j)] = j % 3;
    std::vector<int> permuted(12);
    const int perm[3] = {2, 0, 1};
    for (int j = 0; j < 12; ++j) permuted[size_t(j)] = perm[labels[size_t(j)]];
    auto emb = embedding_of(u);
    auto r = preference_of(rm);
    CHECK(objective(emb, r, Parcellation{labels, 3}, 0.8) ==
          objective(emb, r, Parcellation{permuted, 3}, 0.8));
}

TEST_CASE("assignment loss hand cases") {
    TinyInstance t;
    Parcellation labels{{0, 0, 1}, 2};
    Centroids mu = centroids_from_labels(t.emb, labels);

    SUBCASE("lambda 0 differences equal squared distance differences") {
        for (int j = 0; j < 3; ++j) {
            double l0 = assignment_loss(j, 0, t.emb, mu, t.r, labels, 0.0);
            double l1 = assignment_loss(j, 1, t.emb, mu, t.r, labels, 0.0);
            double d0 = (t.emb.u.row(j) - mu.mu.row(0)).squaredNorm();
            double d1 = (t.emb.u.row(j) - mu.mu.row(1)).squaredNorm();
            CHECK(l0 - l1 == doctest::Approx(d0 - d1).epsilon(1e-12));
        }
    }

    SUBCASE("empty node contributes only the distance part") {
        Parcellation all_zero{{0, 0, 0}, 2};
        Centroids mu2 = centroids_from_labels(t.emb, all_zero);
        double loss = assignment_loss(0, 1, t.emb, mu2, t.r, all_zero, 99.0);
        // Empty node: centroid row is zero, no members, so no penalty term.
        CHECK(loss == doctest::Approx(0.0));
    }

    SUBCASE("own-node sum excludes the voxel itself") {
        double loss = assignment_loss(0, 0, t.emb, mu, t.r, labels, 3.0);
        // Node 0 = {0, 1}; the sum over l != 0 is r(0,1) = 1.
        double expected = -2.0 * 0.0 + 0.0 + 3.0 * 1.0;
        CHECK(loss == doctest::Approx(expected));
    }
}

TEST_CASE("moving a voxel changes the objective by twice the single preference sum") {
    TinyInstance t;
    const double lambda = 2.0;
    double before = objective(t.emb, t.r, Parcellation{{0, 0, 1}, 2}, lambda);
    double after = objective(t.emb, t.r, Parcellation{{1, 0, 1}, 2}, lambda);
    // Distance change: node {0,2} has centroid 0.5 -> scatter 0.5.
    double dist_change = 0.5;
    CHECK(before - after == doctest::Approx(2.0 * lambda * 1.0 - dist_change).epsilon(1e-12));
    CHECK(after < before);
}

TEST_CASE("solver at lambda 0 matches the reference Lloyd k-means") {
    std::mt19937_64 eng(7);
    for (int rep = 0; rep < 10; ++rep) {
        int p = 10 + int(eng() % 30);
        int k = 2 + int(eng() % 4);
        Matrix u = sbp_test::random_rows(p, k, eng);
        auto emb = embedding_of(u);
        auto r = preference_of(Matrix::Zero(p, p));

        std::vector<int> init(static_cast<size_t>(p));
        for (int j = 0; j < p; ++j) init[size_t(j)] = int(eng() % std::uint64_t(k));
        for (int c = 0; c < k; ++c) init[size_t(c)] = c;

        SBPConfig cfg;
        cfg.k = k;
        cfg.lambda = 0.0;
        cfg.tol = 1e-12;
        cfg.max_iter = 500;
        FitResult fit = sbp_fit(emb, r, cfg, Parcellation{init, k});
        auto ref = reference_lloyd(u, k, init, 1e-12, 500);
        CHECK(same_partition(fit.parcellation.labels, ref));
        CHECK(fit.objective ==
              doctest::Approx(oracle_objective(u, r.matrix, ref, k, 0.0)).epsilon(1e-8));
    }
}

TEST_CASE("K = 1 converges in one sweep to the full scatter plus penalty") {
    std::mt19937_64 eng(11);
    Matrix u = sbp_test::random_rows(9, 1, eng);
    Matrix rm = sbp_test::random_preference(9, eng);
    auto emb = embedding_of(u);
    auto r = preference_of(rm);
    SBPConfig cfg;
    cfg.k = 1;
    cfg.lambda = 0.7;
    FitResult fit = sbp_fit(emb, r, cfg, Parcellation{std::vector<int>(9, 0), 1});
    CHECK(fit.converged);
    CHECK(fit.n_iter == 1);
    double expected = oracle_objective(u, rm, std::vector<int>(9, 0), 1, 0.7);
    CHECK(fit.objective == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("objective trace is non-increasing across random instances") {
    std::mt19937_64 eng(13);
    for (double lambda : {0.0, 0.5, 5.0}) {
        for (int rep = 0; rep < 12; ++rep) {
            int p = 8 + int(eng() % 33);
            int k = 2 + int(eng() % 4);
            Matrix u = sbp_test::random_rows(p, k, eng);
            Matrix rm = sbp_test::random_preference(p, eng, 0.5);
            SBPConfig cfg;
            cfg.k = k;
            cfg.lambda = lambda;
            cfg.seed = eng();
            cfg.n_restarts = 3;
            auto emb = embedding_of(u);
            auto r = preference_of(rm);
            FitResult fit = multi_restart_fit(emb, r, cfg);
            for (size_t i = 1; i < fit.objective_trace.size(); ++i)
                CHECK(fit.objective_trace[i] <= fit.objective_trace[i - 1] + 1e-10);
        }
    }
}

TEST_CASE("fit is deterministic and self-consistent") {
    std::mt19937_64 eng(17);
    Matrix u = sbp_test::random_rows(20, 3, eng);
    Matrix rm = sbp_test::random_preference(20, eng);
    auto emb = embedding_of(u);
    auto r = preference_of(rm);
    SBPConfig cfg;
    cfg.k = 3;
    cfg.lambda = 1.2;
    cfg.seed = 99;
    FitResult a = multi_restart_fit(emb, r, cfg);
    FitResult b = multi_restart_fit(emb, r, cfg);
    CHECK(a.parcellation.labels == b.parcellation.labels);
    CHECK(a.objective == b.objective);
    CHECK(a.objective_trace == b.objective_trace);
    CHECK(a.restart_index == b.restart_index);

    // Reported objective matches a from-scratch recomputation.
    CHECK(a.objective ==
          doctest::Approx(objective(emb, r, a.parcellation, cfg.lambda)).epsilon(1e-9));
    // Parallel restarts give the identical reduction.
    FitResult c = multi_restart_fit(emb, r, cfg, 4);
    CHECK(c.parcellation.labels == a.parcellation.labels);
    CHECK(c.restart_index == a.restart_index);
}

TEST_CASE("scaling R by c and lambda by 1/c leaves the label trajectory unchanged") {
    std::mt19937_64 eng(19);
    Matrix u = sbp_test::random_rows(18, 3, eng);
    Matrix rm = sbp_test::random_preference(18, eng);
    auto emb = embedding_of(u);
    Parcellation init = kmeans_init(emb, 3, InitStrategy::RandomAssignment, 7);

    for (double c : {2.0, 1024.0, 0.25}) {
        SBPConfig cfg1;
        cfg1.k = 3;
        cfg1.lambda = 1.5;
        SBPConfig cfg2 = cfg1;
        cfg2.lambda = 1.5 / c;
        FitTrace t1, t2;
        FitResult f1 = sbp_fit(emb, preference_of(rm), cfg1, init, &t1);
        FitResult f2 = sbp_fit(emb, preference_of(Matrix(c * rm)), cfg2, init, &t2);
        CHECK(t1.labels_per_sweep == t2.labels_per_sweep);
        CHECK(f1.parcellation.labels == f2.parcellation.labels);
    }
}

TEST_CASE("multi restart equals the single kmeans-init fit when n_restarts is 1") {
    std::mt19937_64 eng(23);
    Matrix u = sbp_test::random_rows(15, 2, eng);
    Matrix rm = sbp_test::random_preference(15, eng);
    auto emb = embedding_of(u);
    auto r = preference_of(rm);
    SBPConfig cfg;
    cfg.k = 2;
    cfg.lambda = 0.4;
    cfg.n_restarts = 1;
    cfg.seed = 31;
    FitResult multi = multi_restart_fit(emb, r, cfg);
    Parcellation init = kmeans_init(emb, 2, InitStrategy::KMeansLloyd,
                                    rng::derive(cfg.seed, "kmeans-init"), nullptr, cfg.tol,
                                    cfg.max_iter);
    FitResult single = sbp_fit(emb, r, cfg, init);
    CHECK(multi.parcellation.labels == single.parcellation.labels);
    CHECK(multi.objective == single.objective);
    CHECK(multi.restart_index == 0);
}

TEST_CASE("restart ties resolve to the lowest restart index") {
    // Two well-separated points, K = 2: every restart lands on the unique
    // optimum, so the winner must be restart 0.
    Matrix u(4, 2);
    u << 0, 0, 0.01, 0, 5, 5, 5.01, 5;
    auto emb = embedding_of(u);
    auto r = preference_of(Matrix::Zero(4, 4));
    SBPConfig cfg;
    cfg.k = 2;
    cfg.n_restarts = 8;
    cfg.seed = 3;
    FitResult fit = multi_restart_fit(emb, r, cfg);
    CHECK(fit.restart_index == 0);
}

TEST_CASE("multi restart reaches the enumeration optimum on small instances") {
    std::mt19937_64 eng(29);
    int hits = 0;
    const int instances = 10;
    for (int rep = 0; rep < instances; ++rep) {
        const int p = 8, k = 2;
        Matrix u = sbp_test::random_rows(p, k, eng);
        Matrix rm = sbp_test::random_preference(p, eng, 0.3);
        const double lambda = 0.5;

        double best = std::numeric_limits<double>::infinity();
        for (int mask = 0; mask < (1 << p); ++mask) {
            std::vector<int> labels(static_cast<size_t>(p));
            for (int j = 0; j < p; ++j) labels[size_t(j)] = (mask >> j) & 1;
            best = std::min(best, oracle_objective(u, rm, labels, k, lambda));
        }

        SBPConfig cfg;
        cfg.k = k;
        cfg.lambda = lambda;
        cfg.n_restarts = 20;
        cfg.seed = eng();
        FitResult fit = multi_restart_fit(embedding_of(u), preference_of(rm), cfg);
        CHECK(fit.objective >= best - 1e-9);
        if (fit.objective <= best + 1e-9) ++hits;
    }
    CHECK(hits >= 9);
}

TEST_CASE("an init with an empty node is repaired") {
    std::mt19937_64 eng(31);
    Matrix u = sbp_test::random_rows(10, 3, eng);
    auto emb = embedding_of(u);
    auto r = preference_of(sbp_test::random_preference(10, eng));
    std::vector<int> init(10, 0);
    for (int j = 5; j < 10; ++j) init[size_t(j)] = 1;  // node 2 empty
    SBPConfig cfg;
    cfg.k = 3;
    cfg.lambda = 0.3;
    FitResult fit = sbp_fit(emb, r, cfg, Parcellation{init, 3});
    auto sizes = fit.parcellation.node_sizes();
    for (int s : sizes) CHECK(s >= 1);
    for (size_t i = 1; i < fit.objective_trace.size(); ++i)
        CHECK(fit.objective_trace[i] <= fit.objective_trace[i - 1] + 1e-10);
}

TEST_CASE("per-move recentering variant also descends") {
    std::mt19937_64 eng(37);
    Matrix u = sbp_test::random_rows(20, 3, eng);
    Matrix rm = sbp_test::random_preference(20, eng);
    SBPConfig cfg;
    cfg.k = 3;
    cfg.lambda = 0.5;
    cfg.recenter_after_each_move = true;
    cfg.seed = 5;
    FitResult fit = multi_restart_fit(embedding_of(u), preference_of(rm), cfg);
    for (size_t i = 1; i < fit.objective_trace.size(); ++i)
        CHECK(fit.objective_trace[i] <= fit.objective_trace[i - 1] + 1e-10);
}

TEST_CASE("solver validates its inputs") {
    std::mt19937_64 eng(41);
    Matrix u = sbp_test::random_rows(5, 2, eng);
    auto emb = embedding_of(u);
    auto r = preference_of(Matrix::Zero(5, 5));
    SBPConfig cfg;
    cfg.k = 2;
    CHECK_THROWS_AS(sbp_fit(emb, r, cfg, Parcellation{{0, 0, 1, 1}, 2}), Error);
    CHECK_THROWS_AS(sbp_fit(emb, r, cfg, Parcellation{{0, 0, 2, 1, 0}, 2}), Error);
    SBPConfig bad = cfg;
    bad.k = 9;
    CHECK_THROWS_AS(sbp_fit(emb, r, bad, Parcellation{{0, 0, 1, 1, 0}, 9}), Error);
    CHECK_THROWS_AS(assignment_loss(9, 0, emb, centroids_from_labels(emb, Parcellation{{0, 0, 1, 1, 0}, 2}), r,
                                    Parcellation{{0, 0, 1, 1, 0}, 2}, 0.0),
                    Error);
}

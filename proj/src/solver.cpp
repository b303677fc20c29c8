#include "sbp/solver.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "sbp/parallel.hpp"
#include "sbp/rng.hpp"

namespace sbp {

namespace {

void check_dimensions(const SpectralEmbedding& u, const PreferenceMatrix& r,
                      const Parcellation& labels) {
    require(r.matrix.rows() == u.p() && r.matrix.cols() == u.p(), "DimensionMismatch",
            "preference matrix does not match embedding voxel count");
    require(labels.p() == u.p(), "DimensionMismatch",
            "parcellation does not match embedding voxel count");
    labels.validate();
}

}  // namespace

double objective(const SpectralEmbedding& u, const PreferenceMatrix& r,
                 const Parcellation& labels, double lambda) {
    check_dimensions(u, r, labels);
    Centroids mu = centroids_from_labels(u, labels);
    double dist = 0.0;
    for (int j = 0; j < u.p(); ++j)
        dist += (u.u.row(j) - mu.mu.row(labels.labels[static_cast<size_t>(j)])).squaredNorm();
    // Ordered double sum accumulated per voxel in index order, so the value
    // is bit-identical under any relabeling of the nodes.
    auto members = labels.node_members();
    double penalty = 0.0;
    for (int j = 0; j < u.p(); ++j) {
        double pj = 0.0;
        for (int l : members[static_cast<size_t>(labels.labels[static_cast<size_t>(j)])])
            if (l != j) pj += r.matrix(j, l);
        penalty += pj;
    }
    return dist + lambda * penalty;
}

double assignment_loss(int voxel, int node, const SpectralEmbedding& u,
                       const Centroids& centroids, const PreferenceMatrix& r,
                       const Parcellation& labels, double lambda) {
    check_dimensions(u, r, labels);
    require(voxel >= 0 && voxel < u.p(), "IndexOutOfRange", "voxel index out of range");
    require(node >= 0 && node < labels.k, "IndexOutOfRange", "node index out of range");
    require(centroids.mu.rows() == labels.k && centroids.mu.cols() == u.u.cols(),
            "DimensionMismatch", "centroid matrix has wrong shape");
    double loss = -2.0 * u.u.row(voxel).dot(centroids.mu.row(node)) +
                  centroids.mu.row(node).squaredNorm();
    double pref = 0.0;
    for (int l = 0; l < u.p(); ++l)
        if (l != voxel && labels.labels[static_cast<size_t>(l)] == node)
            pref += r.matrix(voxel, l);
    return loss + lambda * pref;
}

namespace {

// Running solver state: labels, node sizes, per-voxel-per-node preference
// sums S(j,k) = sum_{l in C_k} r_jl (the zero diagonal of R keeps j itself
// out of its own node's sum).
struct SolverState {
    std::vector<int> labels;
    std::vector<int> counts;
    Matrix pref_sums;  // p x k
    Matrix mu;         // k x embed_dim

    void rebuild_pref_sums(const Matrix& r, int k) {
        const int p = static_cast<int>(labels.size());
        pref_sums = Matrix::Zero(p, k);
        for (int l = 0; l < p; ++l)
            pref_sums.col(labels[static_cast<size_t>(l)]) += r.col(l);
    }

    void recenter(const Matrix& u, int k) {
        const int p = static_cast<int>(labels.size());
        mu = Matrix::Zero(k, u.cols());
        counts.assign(static_cast<size_t>(k), 0);
        for (int j = 0; j < p; ++j) {
            mu.row(labels[static_cast<size_t>(j)]) += u.row(j);
            ++counts[static_cast<size_t>(labels[static_cast<size_t>(j)])];
        }
        for (int c = 0; c < k; ++c)
            if (counts[static_cast<size_t>(c)] > 0)
                mu.row(c) /= static_cast<double>(counts[static_cast<size_t>(c)]);
    }

    void move(const Matrix& r, int voxel, int to) {
        int from = labels[static_cast<size_t>(voxel)];
        pref_sums.col(from) -= r.col(voxel);
        pref_sums.col(to) += r.col(voxel);
        --counts[static_cast<size_t>(from)];
        ++counts[static_cast<size_t>(to)];
        labels[static_cast<size_t>(voxel)] = to;
    }
};

// A voxel move changes the ordered-pair penalty by twice the single-sum
// preference term, so sweep decisions weight S by 2*lambda to descend the
// objective exactly.
constexpr double kPenaltyMoveFactor = 2.0;

// Reseed every empty node with the voxel contributing most to the objective
// (scatter plus penalty share), drawn from nodes that keep >= 2 members.
void reseed_empty_nodes(SolverState& st, const Matrix& u, const Matrix& r, int k,
                        double lambda) {
    for (int c = 0; c < k; ++c) {
        if (st.counts[static_cast<size_t>(c)] > 0) continue;
        const int p = static_cast<int>(st.labels.size());
        int pick = -1;
        double pick_contrib = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < p; ++j) {
            int home = st.labels[static_cast<size_t>(j)];
            if (st.counts[static_cast<size_t>(home)] < 2) continue;
            double contrib = (u.row(j) - st.mu.row(home)).squaredNorm() +
                             kPenaltyMoveFactor * lambda * st.pref_sums(j, home);
            if (contrib > pick_contrib) {
                pick_contrib = contrib;
                pick = j;
            }
        }
        if (pick < 0) continue;  // unreachable for k <= p
        int old = st.labels[static_cast<size_t>(pick)];
        st.move(r, pick, c);
        st.mu.row(c) = u.row(pick);
        // Re-center the donor node over its remaining members.
        Vector sum = Vector::Zero(u.cols());
        int cnt = 0;
        for (int j = 0; j < p; ++j) {
            if (st.labels[static_cast<size_t>(j)] == old) {
                sum += u.row(j).transpose();
                ++cnt;
            }
        }
        if (cnt > 0) st.mu.row(old) = sum.transpose() / static_cast<double>(cnt);
    }
}

}  // namespace

FitResult sbp_fit(const SpectralEmbedding& u, const PreferenceMatrix& r,
                  const SBPConfig& config, const Parcellation& init, FitTrace* trace) {
    check_dimensions(u, r, init);
    require(init.k == config.k, "InvalidLabels", "init parcellation has wrong k");
    require(config.k >= 1 && config.k <= u.p(), "KOutOfRange",
            "k outside [1, p]");
    require(config.tol > 0, "InvalidSpec", "tol must be positive");
    require(config.max_iter >= 1, "InvalidSpec", "max_iter must be positive");
    require(config.lambda >= 0, "InvalidSpec", "lambda must be non-negative");

    const int p = u.p();
    const int k = config.k;
    const double lambda = config.lambda;
    const Matrix& rows = u.u;

    SolverState st;
    st.labels = init.labels;
    st.recenter(rows, k);
    st.rebuild_pref_sums(r.matrix, k);
    reseed_empty_nodes(st, rows, r.matrix, k, lambda);

    auto current_parc = [&]() { return Parcellation{st.labels, k}; };

    FitResult result;
    result.objective_trace.push_back(objective(u, r, current_parc(), lambda));
    if (trace) trace->labels_per_sweep.push_back(st.labels);

    bool converged = false;
    int sweeps = 0;
    for (int iter = 0; iter < config.max_iter; ++iter) {
        st.rebuild_pref_sums(r.matrix, k);
        Matrix mu_before = st.mu;

        for (int j = 0; j < p; ++j) {
            int best = 0;
            double best_loss = std::numeric_limits<double>::infinity();
            for (int c = 0; c < k; ++c) {
                double loss = (rows.row(j) - st.mu.row(c)).squaredNorm() +
                              kPenaltyMoveFactor * lambda * st.pref_sums(j, c);
                if (loss < best_loss) {
                    best_loss = loss;
                    best = c;
                }
            }
            if (best != st.labels[static_cast<size_t>(j)]) {
                int from = st.labels[static_cast<size_t>(j)];
                st.move(r.matrix, j, best);
                if (config.recenter_after_each_move) {
                    if (st.counts[static_cast<size_t>(from)] > 0) {
                        st.mu.row(from) =
                            (st.mu.row(from) * (st.counts[static_cast<size_t>(from)] + 1) -
                             rows.row(j)) /
                            static_cast<double>(st.counts[static_cast<size_t>(from)]);
                    }
                    st.mu.row(best) =
                        (st.mu.row(best) * (st.counts[static_cast<size_t>(best)] - 1) +
                         rows.row(j)) /
                        static_cast<double>(st.counts[static_cast<size_t>(best)]);
                }
            }
        }

        st.recenter(rows, k);
        reseed_empty_nodes(st, rows, r.matrix, k, lambda);
        ++sweeps;

        double obj = objective(u, r, current_parc(), lambda);
        result.objective_trace.push_back(obj);
        if (trace) trace->labels_per_sweep.push_back(st.labels);

        if (config.convergence == ConvergenceTest::ObjectiveChange) {
            double prev = result.objective_trace[result.objective_trace.size() - 2];
            if (std::abs(prev - obj) < config.tol) {
                converged = true;
                break;
            }
        } else {
            double moved = (st.mu - mu_before).rowwise().norm().maxCoeff();
            if (moved < config.tol) {
                converged = true;
                break;
            }
        }
    }

    result.parcellation = current_parc();
    result.centroids = centroids_from_labels(u, result.parcellation);
    result.objective = result.objective_trace.back();
    result.n_iter = sweeps;
    result.converged = converged;
    result.restart_index = 0;
    return result;
}

FitResult multi_restart_fit(const SpectralEmbedding& u, const PreferenceMatrix& r,
                            const SBPConfig& config, int jobs) {
    require(config.n_restarts >= 1, "InvalidSpec", "n_restarts must be >= 1");
    std::vector<FitResult> results(static_cast<size_t>(config.n_restarts));
    parallel_for(config.n_restarts, jobs, [&](int i) {
        Parcellation init =
            i == 0 ? kmeans_init(u, config.k, InitStrategy::KMeansLloyd,
                                 rng::derive(config.seed, "kmeans-init"), nullptr, config.tol,
                                 config.max_iter)
                   : kmeans_init(u, config.k, InitStrategy::RandomAssignment,
                                 rng::derive(config.seed, "restart",
                                             static_cast<std::uint64_t>(i)));
        results[static_cast<size_t>(i)] = sbp_fit(u, r, config, init);
        results[static_cast<size_t>(i)].restart_index = i;
    });
    int best = 0;
    for (int i = 1; i < config.n_restarts; ++i)
        if (results[static_cast<size_t>(i)].objective < results[static_cast<size_t>(best)].objective)
            best = i;
    return results[static_cast<size_t>(best)];
}

}  // namespace sbp

#pragma once

#include <cstdint>
#include <vector>

#include "sbp/parcellation.hpp"
#include "sbp/spectral.hpp"

namespace sbp {

enum class ConvergenceTest { ObjectiveChange, CentroidMovement };

struct SBPConfig {
    int k = 2;
    double lambda = 0.0;
    int max_iter = 100;
    double tol = 1e-5;
    int n_restarts = 10;
    std::uint64_t seed = 0;
    ConvergenceTest convergence = ConvergenceTest::ObjectiveChange;
    bool recenter_after_each_move = false;  // per-move centroid update variant
};

struct FitResult {
    Parcellation parcellation;
    Centroids centroids;
    double objective = 0.0;
    std::vector<double> objective_trace;  // entry 0 = initialization, then per sweep
    int n_iter = 0;
    bool converged = false;
    int restart_index = 0;
};

// Optional capture of the per-sweep label states (after recentering and
// empty-node repair), plus the initial labels at index 0.
struct FitTrace {
    std::vector<std::vector<int>> labels_per_sweep;
};

// Within-cluster scatter of the embedding rows plus lambda times the ordered
// within-cluster preference sum (all pairs j != l, each unordered pair
// counted twice). Centroids are recomputed from the labels.
double objective(const SpectralEmbedding& u, const PreferenceMatrix& r,
                 const Parcellation& labels, double lambda);

// Loss of hypothetically placing voxel j in node k against the given
// centroids: -2 U_j . mu_k + ||mu_k||^2 + lambda * sum_{l in C_k, l != j} r_jl.
double assignment_loss(int voxel, int node, const SpectralEmbedding& u,
                       const Centroids& centroids, const PreferenceMatrix& r,
                       const Parcellation& labels, double lambda);

// One coordinate-descent run from the given initialization: sweeps over
// voxels in index order with centroids fixed, reassigning each to the node
// with the smallest loss (penalty change weighted to match the ordered-pair
// objective) with immediate membership bookkeeping; centroids recomputed
// after each sweep; empty nodes reseeded with the highest-loss voxel.
FitResult sbp_fit(const SpectralEmbedding& u, const PreferenceMatrix& r,
                  const SBPConfig& config, const Parcellation& init,
                  FitTrace* trace = nullptr);

// n_restarts runs (restart 0 from Lloyd k-means, the rest from seeded random
// assignments); returns the smallest-objective result, ties to the lowest
// restart index. Restarts may run concurrently; the reduction is
// schedule-independent.
FitResult multi_restart_fit(const SpectralEmbedding& u, const PreferenceMatrix& r,
                            const SBPConfig& config, int jobs = 1);

}  // namespace sbp

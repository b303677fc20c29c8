#pragma once

#include <cstdint>
#include <vector>

#include "sbp/data_model.hpp"
#include "sbp/parcellation.hpp"

namespace sbp {

// Rows are voxel coordinates in the space of the top-K eigenvectors of the
// group adjacency, ranked by absolute eigenvalue.
struct SpectralEmbedding {
    Matrix u;                          // p x K, orthonormal columns
    std::vector<double> eigenvalues;   // |.| non-increasing

    int p() const { return static_cast<int>(u.rows()); }
    int k() const { return static_cast<int>(u.cols()); }
};

struct Centroids {
    Matrix mu;  // K x embed_dim
};

enum class EigenSolverKind { Dense, SubspaceIteration };

struct SpectralOptions {
    EigenSolverKind solver = EigenSolverKind::Dense;
    double residual_tol = 1e-6;  // relative to ||A||_F
    int subspace_max_iter = 500;
    int subspace_oversample = 8;
};

// Top-K eigenpairs of A by |eigenvalue|, deterministic sign convention: the
// first entry of each eigenvector with magnitude > 1e-10 is made positive.
SpectralEmbedding spectral_embedding(const GroupAdjacency& a, int k,
                                     const SpectralOptions& options = {});

// Node means of the embedding rows; empty nodes get a zero row.
Centroids centroids_from_labels(const SpectralEmbedding& emb, const Parcellation& parc);

enum class InitStrategy { KMeansLloyd, RandomAssignment, ProvidedLabels };

// Initialization for the solver. kmeans-lloyd runs plain Lloyd iterations on
// the embedding rows (farthest-point seeding, first center drawn from the
// seed); random-assignment guarantees every node non-empty.
Parcellation kmeans_init(const SpectralEmbedding& emb, int k, InitStrategy strategy,
                         std::uint64_t seed, const Parcellation* provided = nullptr,
                         double tol = 1e-5, int max_iter = 100);

}  // namespace sbp

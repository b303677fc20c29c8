#include "sbp/spectral.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "sbp/rng.hpp"

namespace sbp {

namespace {

void apply_sign_convention(Matrix& u) {
    for (Eigen::Index c = 0; c < u.cols(); ++c) {
        for (Eigen::Index r = 0; r < u.rows(); ++r) {
            if (std::abs(u(r, c)) > 1e-10) {
                if (u(r, c) < 0) u.col(c) = -u.col(c);
                break;
            }
        }
    }
}

double max_residual(const Matrix& a, const Matrix& u, const std::vector<double>& vals) {
    double worst = 0.0;
    for (Eigen::Index c = 0; c < u.cols(); ++c) {
        double res = (a * u.col(c) - vals[static_cast<size_t>(c)] * u.col(c)).norm();
        worst = std::max(worst, res);
    }
    return worst;
}

struct RankedPairs {
    Matrix u;
    std::vector<double> eigenvalues;
};

// Keep the k pairs with largest |eigenvalue|; stable on the incoming order so
// degenerate spectra resolve deterministically.
RankedPairs take_top_by_magnitude(const Matrix& vectors, const Vector& values, int k) {
    std::vector<int> order(static_cast<size_t>(values.size()));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return std::abs(values[a]) > std::abs(values[b]);
    });
    RankedPairs out;
    out.u.resize(vectors.rows(), k);
    out.eigenvalues.resize(static_cast<size_t>(k));
    for (int c = 0; c < k; ++c) {
        out.u.col(c) = vectors.col(order[static_cast<size_t>(c)]);
        out.eigenvalues[static_cast<size_t>(c)] = values[order[static_cast<size_t>(c)]];
    }
    return out;
}

RankedPairs dense_top_k(const Matrix& a, int k) {
    Eigen::SelfAdjointEigenSolver<Matrix> solver(a);
    if (solver.info() != Eigen::Success)
        throw_runtime("ConvergenceFailure", "dense symmetric eigensolver failed");
    return take_top_by_magnitude(solver.eigenvectors(), solver.eigenvalues(), k);
}

RankedPairs subspace_top_k_impl(const Matrix& a, int k, const SpectralOptions& options) {
    const int p = static_cast<int>(a.rows());
    const int m = std::min(p, k + options.subspace_oversample);
    const double a_norm = a.norm();
    const double tol = options.residual_tol * (a_norm > 0 ? a_norm : 1.0);

    // Fixed internal seed: the solver is a deterministic function of A.
    auto eng = rng::engine(rng::derive(0x5b9d2c3a11ULL, "subspace-eigensolver"));
    std::normal_distribution<double> gauss(0.0, 1.0);
    Matrix q(p, m);
    for (int i = 0; i < p; ++i)
        for (int j = 0; j < m; ++j) q(i, j) = gauss(eng);
    q = Eigen::HouseholderQR<Matrix>(q).householderQ() * Matrix::Identity(p, m);

    RankedPairs best;
    for (int iter = 0; iter < options.subspace_max_iter; ++iter) {
        Matrix z = a * q;
        q = Eigen::HouseholderQR<Matrix>(z).householderQ() * Matrix::Identity(p, m);
        Matrix b = q.transpose() * a * q;
        b = 0.5 * (b + b.transpose());
        Eigen::SelfAdjointEigenSolver<Matrix> small(b);
        if (small.info() != Eigen::Success) continue;
        Matrix ritz_vectors = q * small.eigenvectors();
        RankedPairs top = take_top_by_magnitude(ritz_vectors, small.eigenvalues(), k);
        if (max_residual(a, top.u, top.eigenvalues) <= tol) return top;
        best = std::move(top);
    }
    throw_runtime("ConvergenceFailure",
                  "subspace iteration residual " +
                      std::to_string(max_residual(a, best.u, best.eigenvalues)) +
                      " above tolerance " + std::to_string(tol));
}

}  // namespace

SpectralEmbedding spectral_embedding(const GroupAdjacency& a, int k,
                                     const SpectralOptions& options) {
    const int p = static_cast<int>(a.matrix.rows());
    require(a.matrix.cols() == p, "DimensionMismatch", "adjacency matrix is not square");
    require(k >= 1 && k <= p, "KOutOfRange",
            "k = " + std::to_string(k) + " outside [1, " + std::to_string(p) + "]");
    double max_asym = (a.matrix - a.matrix.transpose()).cwiseAbs().maxCoeff();
    require(max_asym <= 1e-12, "DimensionMismatch", "adjacency matrix is not symmetric");

    RankedPairs top = options.solver == EigenSolverKind::Dense
                          ? dense_top_k(a.matrix, k)
                          : subspace_top_k_impl(a.matrix, k, options);

    apply_sign_convention(top.u);

    const double a_norm = a.matrix.norm();
    const double res = max_residual(a.matrix, top.u, top.eigenvalues);
    if (res > options.residual_tol * (a_norm > 0 ? a_norm : 1.0))
        throw_runtime("ConvergenceFailure",
                      "eigen residual " + std::to_string(res) + " above " +
                          std::to_string(options.residual_tol) + " * ||A||_F");

    SpectralEmbedding emb;
    emb.u = std::move(top.u);
    emb.eigenvalues = std::move(top.eigenvalues);
    return emb;
}

Centroids centroids_from_labels(const SpectralEmbedding& emb, const Parcellation& parc) {
    require(parc.p() == emb.p(), "DimensionMismatch",
            "parcellation voxel count differs from embedding");
    Matrix mu = Matrix::Zero(parc.k, emb.u.cols());
    std::vector<int> counts(static_cast<size_t>(parc.k), 0);
    for (int j = 0; j < emb.p(); ++j) {
        mu.row(parc.labels[static_cast<size_t>(j)]) += emb.u.row(j);
        ++counts[static_cast<size_t>(parc.labels[static_cast<size_t>(j)])];
    }
    for (int k = 0; k < parc.k; ++k)
        if (counts[static_cast<size_t>(k)] > 0)
            mu.row(k) /= static_cast<double>(counts[static_cast<size_t>(k)]);
    return Centroids{std::move(mu)};
}

namespace {

// Plain Lloyd k-means on embedding rows. Ties go to the lowest center index;
// empty clusters are reseeded with the point farthest from its own center.
Parcellation lloyd_kmeans(const SpectralEmbedding& emb, int k, std::uint64_t seed,
                          double tol, int max_iter) {
    const int p = emb.p();
    auto eng = rng::engine(seed);

    // Farthest-point seeding from a random start.
    std::vector<int> center_idx;
    center_idx.push_back(static_cast<int>(
        std::uniform_int_distribution<int>(0, p - 1)(eng)));
    std::vector<double> mindist(static_cast<size_t>(p),
                                std::numeric_limits<double>::infinity());
    while (static_cast<int>(center_idx.size()) < k) {
        int last = center_idx.back();
        for (int j = 0; j < p; ++j) {
            double d = (emb.u.row(j) - emb.u.row(last)).squaredNorm();
            mindist[static_cast<size_t>(j)] = std::min(mindist[static_cast<size_t>(j)], d);
        }
        int far = 0;
        for (int j = 1; j < p; ++j)
            if (mindist[static_cast<size_t>(j)] > mindist[static_cast<size_t>(far)]) far = j;
        center_idx.push_back(far);
    }

    Matrix centers(k, emb.u.cols());
    for (int c = 0; c < k; ++c) centers.row(c) = emb.u.row(center_idx[static_cast<size_t>(c)]);

    std::vector<int> labels(static_cast<size_t>(p), 0);
    double prev_obj = std::numeric_limits<double>::infinity();
    for (int iter = 0; iter < max_iter; ++iter) {
        for (int j = 0; j < p; ++j) {
            int best = 0;
            double best_d = (emb.u.row(j) - centers.row(0)).squaredNorm();
            for (int c = 1; c < k; ++c) {
                double d = (emb.u.row(j) - centers.row(c)).squaredNorm();
                if (d < best_d) {
                    best_d = d;
                    best = c;
                }
            }
            labels[static_cast<size_t>(j)] = best;
        }
        std::vector<int> counts(static_cast<size_t>(k), 0);
        Matrix sums = Matrix::Zero(k, emb.u.cols());
        for (int j = 0; j < p; ++j) {
            sums.row(labels[static_cast<size_t>(j)]) += emb.u.row(j);
            ++counts[static_cast<size_t>(labels[static_cast<size_t>(j)])];
        }
        for (int c = 0; c < k; ++c) {
            if (counts[static_cast<size_t>(c)] == 0) {
                int far = -1;
                double far_d = -1.0;
                for (int j = 0; j < p; ++j) {
                    if (counts[static_cast<size_t>(labels[static_cast<size_t>(j)])] < 2) continue;
                    double d = (emb.u.row(j) -
                                centers.row(labels[static_cast<size_t>(j)])).squaredNorm();
                    if (d > far_d) {
                        far_d = d;
                        far = j;
                    }
                }
                if (far < 0) continue;
                int old = labels[static_cast<size_t>(far)];
                sums.row(old) -= emb.u.row(far);
                --counts[static_cast<size_t>(old)];
                labels[static_cast<size_t>(far)] = c;
                sums.row(c) = emb.u.row(far);
                counts[static_cast<size_t>(c)] = 1;
            }
        }
        for (int c = 0; c < k; ++c)
            if (counts[static_cast<size_t>(c)] > 0)
                centers.row(c) = sums.row(c) / static_cast<double>(counts[static_cast<size_t>(c)]);
        double obj = 0.0;
        for (int j = 0; j < p; ++j)
            obj += (emb.u.row(j) - centers.row(labels[static_cast<size_t>(j)])).squaredNorm();
        if (std::abs(prev_obj - obj) < tol) break;
        prev_obj = obj;
    }
    return Parcellation{std::move(labels), k};
}

}  // namespace

Parcellation kmeans_init(const SpectralEmbedding& emb, int k, InitStrategy strategy,
                         std::uint64_t seed, const Parcellation* provided, double tol,
                         int max_iter) {
    const int p = emb.p();
    require(k >= 1 && k <= p, "KOutOfRange",
            "k = " + std::to_string(k) + " outside [1, " + std::to_string(p) + "]");
    switch (strategy) {
        case InitStrategy::ProvidedLabels: {
            require(provided != nullptr, "InvalidLabels", "provided-labels without labels");
            require(provided->p() == p, "InvalidLabels",
                    "provided labels have wrong voxel count");
            require(provided->k == k, "InvalidLabels", "provided labels have wrong k");
            provided->validate();
            return *provided;
        }
        case InitStrategy::RandomAssignment: {
            auto eng = rng::engine(seed);
            std::vector<int> order(static_cast<size_t>(p));
            std::iota(order.begin(), order.end(), 0);
            std::shuffle(order.begin(), order.end(), eng);
            std::vector<int> labels(static_cast<size_t>(p), 0);
            std::uniform_int_distribution<int> pick(0, k - 1);
            // First k shuffled voxels pin one member per node; the rest are uniform.
            for (int i = 0; i < p; ++i) {
                int j = order[static_cast<size_t>(i)];
                labels[static_cast<size_t>(j)] = i < k ? i : pick(eng);
            }
            return Parcellation{std::move(labels), k};
        }
        case InitStrategy::KMeansLloyd:
            return lloyd_kmeans(emb, k, seed, tol, max_iter);
    }
    throw_validation("InvalidLabels", "unknown init strategy");
}

}  // namespace sbp

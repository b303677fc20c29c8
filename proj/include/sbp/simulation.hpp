#pragma once

#include <array>
#include <cstdint>
#include <utility>
#include <vector>

#include "sbp/data_model.hpp"
#include "sbp/solver.hpp"

namespace sbp {

// Binary 4-neighbor lattice with configurable high-preference pairs. The
// default spec reproduces the canonical 10x10 instance: every pair between
// rows 1 and 2, plus the horizontal neighbor pair at columns 8-9 of every
// row.
struct LatticeSpec {
    int rows = 10;
    int cols = 10;
    std::vector<std::pair<int, int>> forbidden_pairs;
    double penalty_value = 1.0;

    int p() const { return rows * cols; }
    static LatticeSpec default_spec();
};

GroupAdjacency lattice_graph(const LatticeSpec& spec);
PreferenceMatrix lattice_preference(const LatticeSpec& spec);

struct LatticeRun {
    double lambda = 0.0;
    FitResult fit;
    int co_clustered_forbidden_pairs = 0;
    int non_contiguous_nodes = 0;
    double total_penalty = 0.0;  // ordered within-node preference sum
};

// Number of nodes whose voxels split into >1 connected component under the
// lattice's 4-adjacency.
int count_non_contiguous_nodes(const LatticeSpec& spec, const Parcellation& parc);

int count_co_clustered_forbidden_pairs(const LatticeSpec& spec, const Parcellation& parc);

std::vector<LatticeRun> run_lattice_experiment(const LatticeSpec& spec, int k,
                                               const std::vector<double>& lambdas,
                                               const SBPConfig& base_config, int jobs = 1);

// Three-voxel demonstration: average inter-node edge-outcome association for
// the homogeneity-driven partition {V1,V3}|{V2}, the supervised partition
// {V1,V2}|{V3}, and the all-singletons partition.
struct ToyReport {
    std::array<double, 3> edge_strengths{};       // (V1,V3), (V1,V2), (V2,V3)
    std::array<double, 3> edge_associations{};    // same order
    double homogeneity_partition_avg = 0.0;
    double supervised_partition_avg = 0.0;
    double singletons_partition_avg = 0.0;
};

ToyReport toy_three_voxel();

struct PlantedEdge {
    int u = 0;
    int v = 1;
    double effect = 1.0;
};

// Synthetic cohort with block-structured time series. Each planted edge gets
// a per-subject pair signal whose weight is solved so the population
// correlation of the edge equals a per-subject strength drawn from
// [strength_lo, strength_hi]; the outcome is the linear combination of those
// strengths plus Gaussian noise.
struct PlantedCohortSpec {
    int p = 60;
    int n = 200;
    int k_true = 6;
    std::vector<int> block_of;  // empty -> contiguous, near-equal blocks
    std::vector<PlantedEdge> edges;
    double noise = 0.0;       // outcome noise sd
    int t_len = 200;          // time points per subject
    double voxel_noise = 1.0; // per-voxel noise sd around the block signal
    double strength_lo = 0.6;
    double strength_hi = 0.9;
    std::uint64_t seed = 0;
    bool tag_blocks = true;   // voxel group tags carry the true block
};

Cohort synth_cohort(const PlantedCohortSpec& spec);

}  // namespace sbp

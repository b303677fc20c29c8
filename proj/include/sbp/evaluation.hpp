#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "sbp/data_model.hpp"
#include "sbp/parcellation.hpp"

namespace sbp {

// 2|C1 n C2| / (|C1| + |C2|); inputs are voxel index sets (duplicates ignored).
double dice(std::span<const int> c1, std::span<const int> c2);

struct NodeMatch {
    int node = -1;     // best-matching node in the other parcellation
    double dice = 0.0;
};

// For each reference node, the other parcellation's node with the highest
// Dice (ties to the lower node index). Matching is independent per node, not
// one-to-one. Empty reference nodes yield {-1, 0}.
std::vector<NodeMatch> match_nodes(const Parcellation& reference, const Parcellation& other);

struct DiceReport {
    int n_samples = 0;
    double subsample_fraction = 1.0;
    int reference_sample = 0;
    std::uint64_t seed = 0;
    std::vector<double> per_node_mean_dice;              // indexed by reference node
    double weighted_mean_dice = 0.0;                     // weights |C_k| / p
    std::vector<std::vector<int>> node_sizes_per_sample; // empty vector = failed sample
    std::map<std::string, std::vector<std::vector<int>>> node_sizes_by_tag;
    std::vector<Parcellation> parcellations;             // per subsample, empty on failure
    std::vector<std::string> warnings;
};

struct ReproducibilityOptions {
    int n_samples = 20;
    double fraction = 0.75;
    std::uint64_t seed = 0;
    int reference_sample = 0;
    AggregationMethod aggregation = AggregationMethod::MeanSquared;
    DebiasDegrees debias = DebiasDegrees::RowSums;
    PreferenceMode preference_mode = PreferenceMode::PearsonCorrelation;
    double pvalue_cap = 1e6;
    int n_restarts = 10;
    int max_iter = 100;
    double tol = 1e-5;
    int jobs = 1;
};

// Subsampling protocol: fit the parcellation on n_samples random subject
// subsets (fresh A and R per subset), then average each reference node's
// best-match Dice against every other sample. Fit seeds derive from the
// subject subset, so identical subsets reproduce identical parcellations.
DiceReport reproducibility(const Cohort& cohort, int k, double lambda_star,
                           const ReproducibilityOptions& options = {});

}  // namespace sbp

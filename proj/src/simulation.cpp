#include "sbp/simulation.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <numeric>
#include <set>

#include "sbp/parallel.hpp"
#include "sbp/rng.hpp"
#include "sbp/spectral.hpp"

namespace sbp {

LatticeSpec LatticeSpec::default_spec() {
    LatticeSpec spec;
    for (int i = 0; i < spec.cols; ++i)
        for (int j = 0; j < spec.cols; ++j)
            spec.forbidden_pairs.emplace_back(i, spec.cols + j);  // row 1 vs row 2
    for (int r = 0; r < spec.rows; ++r)
        spec.forbidden_pairs.emplace_back(r * spec.cols + 7, r * spec.cols + 8);
    return spec;
}

namespace {

void validate_lattice(const LatticeSpec& spec) {
    require(spec.rows >= 1 && spec.cols >= 1 && spec.p() >= 2, "InvalidSpec",
            "lattice needs at least 2 voxels");
    require(spec.penalty_value > 0, "InvalidSpec", "penalty_value must be positive");
    for (auto [a, b] : spec.forbidden_pairs) {
        require(a >= 0 && a < spec.p() && b >= 0 && b < spec.p() && a != b, "InvalidSpec",
                "forbidden pair references invalid voxels");
    }
}

}  // namespace

GroupAdjacency lattice_graph(const LatticeSpec& spec) {
    validate_lattice(spec);
    const int p = spec.p();
    Matrix a = Matrix::Zero(p, p);
    for (int r = 0; r < spec.rows; ++r) {
        for (int c = 0; c < spec.cols; ++c) {
            int v = r * spec.cols + c;
            if (c + 1 < spec.cols) {
                a(v, v + 1) = 1.0;
                a(v + 1, v) = 1.0;
            }
            if (r + 1 < spec.rows) {
                a(v, v + spec.cols) = 1.0;
                a(v + spec.cols, v) = 1.0;
            }
        }
    }
    return GroupAdjacency{std::move(a), AggregationMethod::Mean};
}

PreferenceMatrix lattice_preference(const LatticeSpec& spec) {
    validate_lattice(spec);
    const int p = spec.p();
    Matrix r = Matrix::Zero(p, p);
    for (auto [a, b] : spec.forbidden_pairs) {
        r(a, b) = spec.penalty_value;
        r(b, a) = spec.penalty_value;
    }
    PreferenceMatrix out;
    out.matrix = std::move(r);
    out.mode = PreferenceMode::PearsonCorrelation;
    return out;
}

int count_non_contiguous_nodes(const LatticeSpec& spec, const Parcellation& parc) {
    require(parc.p() == spec.p(), "DimensionMismatch",
            "parcellation does not cover the lattice");
    auto members = parc.node_members();
    int non_contiguous = 0;
    for (int k = 0; k < parc.k; ++k) {
        const auto& m = members[static_cast<size_t>(k)];
        if (m.size() <= 1) continue;
        std::set<int> in_node(m.begin(), m.end());
        // BFS from the first member over 4-neighbors inside the node.
        std::deque<int> queue{m.front()};
        std::set<int> seen{m.front()};
        while (!queue.empty()) {
            int v = queue.front();
            queue.pop_front();
            int r = v / spec.cols, c = v % spec.cols;
            std::array<int, 4> nbrs{c > 0 ? v - 1 : -1, c + 1 < spec.cols ? v + 1 : -1,
                                    r > 0 ? v - spec.cols : -1,
                                    r + 1 < spec.rows ? v + spec.cols : -1};
            for (int nb : nbrs) {
                if (nb < 0 || !in_node.count(nb) || seen.count(nb)) continue;
                seen.insert(nb);
                queue.push_back(nb);
            }
        }
        if (seen.size() != m.size()) ++non_contiguous;
    }
    return non_contiguous;
}

int count_co_clustered_forbidden_pairs(const LatticeSpec& spec, const Parcellation& parc) {
    require(parc.p() == spec.p(), "DimensionMismatch",
            "parcellation does not cover the lattice");
    std::set<std::pair<int, int>> dedup;
    for (auto [a, b] : spec.forbidden_pairs) dedup.insert({std::min(a, b), std::max(a, b)});
    int count = 0;
    for (auto [a, b] : dedup)
        if (parc.labels[static_cast<size_t>(a)] == parc.labels[static_cast<size_t>(b)]) ++count;
    return count;
}

std::vector<LatticeRun> run_lattice_experiment(const LatticeSpec& spec, int k,
                                               const std::vector<double>& lambdas,
                                               const SBPConfig& base_config, int jobs) {
    require(!lambdas.empty(), "InvalidSpec", "no lambda values given");
    require(k >= 1 && k <= spec.p(), "KOutOfRange", "k outside [1, p]");
    GroupAdjacency a = lattice_graph(spec);
    PreferenceMatrix r = lattice_preference(spec);
    SpectralEmbedding emb = spectral_embedding(a, k);

    std::vector<LatticeRun> runs(lambdas.size());
    parallel_for(static_cast<int>(lambdas.size()), jobs, [&](int i) {
        SBPConfig cfg = base_config;
        cfg.k = k;
        cfg.lambda = lambdas[static_cast<size_t>(i)];
        LatticeRun run;
        run.lambda = cfg.lambda;
        run.fit = multi_restart_fit(emb, r, cfg);
        run.co_clustered_forbidden_pairs =
            count_co_clustered_forbidden_pairs(spec, run.fit.parcellation);
        run.non_contiguous_nodes = count_non_contiguous_nodes(spec, run.fit.parcellation);
        double penalty = 0.0;
        for (const auto& members : run.fit.parcellation.node_members())
            for (size_t x = 0; x < members.size(); ++x)
                for (size_t y = 0; y < members.size(); ++y)
                    if (x != y) penalty += r.matrix(members[x], members[y]);
        run.total_penalty = penalty;
        runs[static_cast<size_t>(i)] = std::move(run);
    });
    return runs;
}

ToyReport toy_three_voxel() {
    ToyReport report;
    report.edge_strengths = {0.8, 0.7, 0.3};     // (V1,V3), (V1,V2), (V2,V3)
    report.edge_associations = {0.9, 0.1, 0.5};  // same pair order

    // Average association over inter-node pairs for a given 3-voxel labeling.
    auto inter_node_avg = [&](std::array<int, 3> labels) {
        const std::array<std::pair<int, int>, 3> pairs{{{0, 2}, {0, 1}, {1, 2}}};
        double sum = 0.0;
        int count = 0;
        for (size_t e = 0; e < pairs.size(); ++e) {
            if (labels[static_cast<size_t>(pairs[e].first)] !=
                labels[static_cast<size_t>(pairs[e].second)]) {
                sum += report.edge_associations[e];
                ++count;
            }
        }
        return count == 0 ? 0.0 : sum / static_cast<double>(count);
    };

    report.homogeneity_partition_avg = inter_node_avg({0, 1, 0});  // {V1,V3} | {V2}
    report.supervised_partition_avg = inter_node_avg({0, 0, 1});   // {V1,V2} | {V3}
    report.singletons_partition_avg = inter_node_avg({0, 1, 2});
    return report;
}

namespace {

void validate_planted(const PlantedCohortSpec& spec, const std::vector<int>& block_of) {
    require(spec.p >= 2 && spec.n >= 1 && spec.k_true >= 1, "InvalidSpec",
            "p, n, k_true must be positive");
    require(spec.k_true <= spec.p, "InvalidSpec", "k_true exceeds p");
    require(spec.t_len >= 3, "InvalidSpec", "t_len must be >= 3");
    require(spec.noise >= 0, "InvalidSpec", "noise must be >= 0");
    require(spec.voxel_noise > 0, "InvalidSpec", "voxel_noise must be > 0");
    require(spec.strength_lo > 0 && spec.strength_hi < 1 &&
                spec.strength_lo <= spec.strength_hi,
            "InvalidSpec", "strengths must satisfy 0 < lo <= hi < 1");
    require(static_cast<int>(block_of.size()) == spec.p, "InvalidSpec",
            "block map does not cover all voxels");
    for (int b : block_of)
        require(b >= 0 && b < spec.k_true, "InvalidSpec", "block id out of range");

    const double sigma2 = spec.voxel_noise * spec.voxel_noise;
    std::set<int> used;
    for (const auto& e : spec.edges) {
        require(e.u >= 0 && e.u < spec.p && e.v >= 0 && e.v < spec.p && e.u != e.v,
                "InvalidSpec", "planted edge references invalid voxels");
        require(std::isfinite(e.effect), "InvalidSpec", "edge effect must be finite");
        require(!used.count(e.u) && !used.count(e.v), "InvalidSpec",
                "a voxel may participate in at most one planted edge");
        used.insert(e.u);
        used.insert(e.v);
        if (block_of[static_cast<size_t>(e.u)] == block_of[static_cast<size_t>(e.v)]) {
            // Same-block strength must exceed the base within-block correlation.
            require(spec.strength_lo * (1.0 + sigma2) > 1.0, "InvalidSpec",
                    "strength_lo below the base within-block correlation 1/(1+sigma^2)");
        } else {
            require(spec.strength_hi * (1.0 + sigma2) <= sigma2, "InvalidSpec",
                    "cross-block strength_hi above sigma^2/(1+sigma^2)");
        }
    }
}

}  // namespace

Cohort synth_cohort(const PlantedCohortSpec& spec) {
    std::vector<int> block_of = spec.block_of;
    if (block_of.empty()) {
        block_of.resize(static_cast<size_t>(spec.p));
        for (int j = 0; j < spec.p; ++j)
            block_of[static_cast<size_t>(j)] =
                std::min(spec.k_true - 1, j / std::max(1, spec.p / spec.k_true));
    }
    validate_planted(spec, block_of);

    const int p = spec.p;
    const int t = spec.t_len;
    const double sigma = spec.voxel_noise;
    const double sigma2 = sigma * sigma;

    Cohort cohort;
    for (int j = 0; j < p; ++j) cohort.voxel_ids.push_back("v" + std::to_string(j));
    if (spec.tag_blocks) {
        VoxelMeta meta;
        for (int j = 0; j < p; ++j) {
            meta.coordinates.push_back({static_cast<double>(j),
                                        static_cast<double>(block_of[static_cast<size_t>(j)]),
                                        0.0});
            meta.group_tags.push_back("block" +
                                      std::to_string(block_of[static_cast<size_t>(j)]));
        }
        cohort.voxel_meta = std::move(meta);
    }

    // Which planted edge (if any) a voxel participates in.
    std::vector<int> edge_of(static_cast<size_t>(p), -1);
    for (size_t e = 0; e < spec.edges.size(); ++e) {
        edge_of[static_cast<size_t>(spec.edges[e].u)] = static_cast<int>(e);
        edge_of[static_cast<size_t>(spec.edges[e].v)] = static_cast<int>(e);
    }

    for (int i = 0; i < spec.n; ++i) {
        auto eng = rng::engine(rng::derive(spec.seed, "subject", static_cast<std::uint64_t>(i)));
        std::normal_distribution<double> gauss(0.0, 1.0);
        std::uniform_real_distribution<double> strength(spec.strength_lo, spec.strength_hi);

        Matrix block_signal(spec.k_true, t);
        for (int b = 0; b < spec.k_true; ++b)
            for (int s = 0; s < t; ++s) block_signal(b, s) = gauss(eng);

        Matrix pair_signal(static_cast<int>(spec.edges.size()), t);
        for (int e = 0; e < static_cast<int>(spec.edges.size()); ++e)
            for (int s = 0; s < t; ++s) pair_signal(e, s) = gauss(eng);

        // Edge voxels keep the block coefficient at 1 and total variance at
        // 1 + sigma^2; the pair-signal weight beta and compensating noise
        // weight delta are solved per subject so the population correlation
        // of the edge equals the drawn strength while every correlation with
        // block peers stays at the base value.
        std::vector<double> strengths(spec.edges.size());
        std::vector<double> betas(spec.edges.size());
        std::vector<double> deltas(spec.edges.size());
        for (size_t e = 0; e < spec.edges.size(); ++e) {
            const double s = strength(eng);
            strengths[e] = s;
            const auto& edge = spec.edges[e];
            const bool same_block = block_of[static_cast<size_t>(edge.u)] ==
                                    block_of[static_cast<size_t>(edge.v)];
            const double b2 = same_block ? s * (1.0 + sigma2) - 1.0 : s * (1.0 + sigma2);
            betas[e] = std::sqrt(b2);
            deltas[e] = std::sqrt(sigma2 - b2);
        }

        VoxelTimeSeries ts;
        ts.values.resize(p, t);
        ts.voxel_ids = cohort.voxel_ids;
        for (int j = 0; j < p; ++j) {
            const int b = block_of[static_cast<size_t>(j)];
            const int e = edge_of[static_cast<size_t>(j)];
            for (int s = 0; s < t; ++s) {
                double noise_draw = gauss(eng);
                double v;
                if (e >= 0) {
                    v = block_signal(b, s) + betas[static_cast<size_t>(e)] * pair_signal(e, s) +
                        deltas[static_cast<size_t>(e)] * noise_draw;
                } else {
                    v = block_signal(b, s) + sigma * noise_draw;
                }
                ts.values(j, s) = v;
            }
        }

        double outcome = 0.0;
        for (size_t e = 0; e < spec.edges.size(); ++e)
            outcome += spec.edges[e].effect * strengths[e];
        outcome += spec.noise * gauss(eng);

        SubjectRecord rec;
        rec.id = "s" + std::to_string(i);
        rec.outcome = outcome;
        rec.connectivity = compute_voxel_connectivity(ts);
        rec.timeseries = std::move(ts);
        cohort.subjects.push_back(std::move(rec));
    }
    return cohort;
}

}  // namespace sbp

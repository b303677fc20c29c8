#include "sbp/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <mutex>
#include <numeric>
#include <set>

#include "sbp/parallel.hpp"
#include "sbp/rng.hpp"
#include "sbp/solver.hpp"

namespace sbp {

double dice(std::span<const int> c1, std::span<const int> c2) {
    require(!c1.empty() && !c2.empty(), "EmptySet", "dice needs non-empty voxel sets");
    std::vector<int> a(c1.begin(), c1.end());
    std::vector<int> b(c2.begin(), c2.end());
    std::sort(a.begin(), a.end());
    a.erase(std::unique(a.begin(), a.end()), a.end());
    std::sort(b.begin(), b.end());
    b.erase(std::unique(b.begin(), b.end()), b.end());
    size_t i = 0, j = 0, overlap = 0;
    while (i < a.size() && j < b.size()) {
        if (a[i] == b[j]) {
            ++overlap;
            ++i;
            ++j;
        } else if (a[i] < b[j]) {
            ++i;
        } else {
            ++j;
        }
    }
    return 2.0 * static_cast<double>(overlap) / static_cast<double>(a.size() + b.size());
}

std::vector<NodeMatch> match_nodes(const Parcellation& reference, const Parcellation& other) {
    require(reference.p() == other.p(), "VoxelUniverseMismatch",
            "parcellations cover different voxel counts");
    reference.validate();
    other.validate();
    auto ref_members = reference.node_members();
    auto other_members = other.node_members();
    std::vector<NodeMatch> out(static_cast<size_t>(reference.k));
    for (int k = 0; k < reference.k; ++k) {
        const auto& rm = ref_members[static_cast<size_t>(k)];
        if (rm.empty()) continue;
        NodeMatch best;
        for (int q = 0; q < other.k; ++q) {
            const auto& om = other_members[static_cast<size_t>(q)];
            if (om.empty()) continue;
            double d = dice(rm, om);
            if (d > best.dice || best.node < 0) {
                best.node = q;
                best.dice = d;
            }
        }
        out[static_cast<size_t>(k)] = best;
    }
    return out;
}

DiceReport reproducibility(const Cohort& cohort, int k, double lambda_star,
                           const ReproducibilityOptions& options) {
    const int n = cohort.n();
    const int p = cohort.p();
    require(options.n_samples >= 2, "InvalidSpec", "need at least 2 subsamples");
    require(options.fraction > 0.0 && options.fraction <= 1.0, "InvalidSpec",
            "fraction must lie in (0, 1]");
    require(options.reference_sample >= 0 && options.reference_sample < options.n_samples,
            "InvalidSpec", "reference sample index out of range");
    require(lambda_star >= 0, "InvalidSpec", "lambda must be non-negative");
    const int m = std::max(1, static_cast<int>(std::lround(options.fraction * n)));
    require(m >= 3, "TooFewSubjects", "subsample size below 3");

    DiceReport report;
    report.n_samples = options.n_samples;
    report.subsample_fraction = options.fraction;
    report.reference_sample = options.reference_sample;
    report.seed = options.seed;
    report.parcellations.assign(static_cast<size_t>(options.n_samples), Parcellation{});
    report.node_sizes_per_sample.assign(static_cast<size_t>(options.n_samples), {});

    std::mutex warn_mutex;
    auto add_warning = [&](const std::string& w) {
        std::lock_guard<std::mutex> lock(warn_mutex);
        report.warnings.push_back(w);
        std::cerr << "warning: " << w << "\n";
    };

    parallel_for(options.n_samples, options.jobs, [&](int q) {
        std::vector<int> idx(static_cast<size_t>(n));
        std::iota(idx.begin(), idx.end(), 0);
        if (m < n) {
            auto eng = rng::engine(
                rng::derive(options.seed, "subsample", static_cast<std::uint64_t>(q)));
            std::shuffle(idx.begin(), idx.end(), eng);
            idx.resize(static_cast<size_t>(m));
            std::sort(idx.begin(), idx.end());
        }
        try {
            SubjectIndexView view(cohort, idx);
            GroupAdjacency a = aggregate_adjacency(view, options.aggregation, options.debias);
            PreferenceMatrix r;
            if (lambda_star > 0) {
                PreferenceOptions popt;
                popt.pvalue_cap = options.pvalue_cap;
                popt.warn = false;
                r = build_preference_matrix(view, options.preference_mode, popt);
            } else {
                r.matrix = Matrix::Zero(p, p);
                r.mode = options.preference_mode;
            }
            SpectralEmbedding emb = spectral_embedding(a, k);
            SBPConfig cfg;
            cfg.k = k;
            cfg.lambda = lambda_star;
            cfg.max_iter = options.max_iter;
            cfg.tol = options.tol;
            cfg.n_restarts = options.n_restarts;
            cfg.seed = rng::derive_from_set(options.seed, "subsample-fit", idx);
            FitResult fit = multi_restart_fit(emb, r, cfg);
            report.parcellations[static_cast<size_t>(q)] = fit.parcellation;
            report.node_sizes_per_sample[static_cast<size_t>(q)] = fit.parcellation.node_sizes();
        } catch (const Error& e) {
            add_warning("subsample " + std::to_string(q) + " failed: " + e.what());
        }
    });

    const Parcellation& ref = report.parcellations[static_cast<size_t>(options.reference_sample)];
    if (ref.labels.empty())
        throw_runtime("SubsampleFailure", "reference subsample fit failed");

    std::vector<double> dice_sum(static_cast<size_t>(k), 0.0);
    int valid_others = 0;
    for (int q = 0; q < options.n_samples; ++q) {
        if (q == options.reference_sample) continue;
        const Parcellation& parc = report.parcellations[static_cast<size_t>(q)];
        if (parc.labels.empty()) continue;
        auto matches = match_nodes(ref, parc);
        for (int c = 0; c < k; ++c) dice_sum[static_cast<size_t>(c)] += matches[static_cast<size_t>(c)].dice;
        ++valid_others;
    }
    require(valid_others >= 1, "SubsampleFailure", "no valid non-reference subsamples");

    report.per_node_mean_dice.resize(static_cast<size_t>(k));
    for (int c = 0; c < k; ++c)
        report.per_node_mean_dice[static_cast<size_t>(c)] =
            dice_sum[static_cast<size_t>(c)] / static_cast<double>(valid_others);

    auto ref_sizes = ref.node_sizes();
    double weighted = 0.0;
    for (int c = 0; c < k; ++c)
        weighted += (static_cast<double>(ref_sizes[static_cast<size_t>(c)]) /
                     static_cast<double>(p)) *
                    report.per_node_mean_dice[static_cast<size_t>(c)];
    report.weighted_mean_dice = weighted;

    // Node-size distributions split by voxel group tag, when tags exist.
    if (cohort.voxel_meta) {
        std::set<std::string> tags;
        for (const auto& t : cohort.voxel_meta->group_tags)
            if (!t.empty()) tags.insert(t);
        for (const auto& tag : tags) {
            auto& rows = report.node_sizes_by_tag[tag];
            rows.assign(static_cast<size_t>(options.n_samples), {});
            for (int q = 0; q < options.n_samples; ++q) {
                const Parcellation& parc = report.parcellations[static_cast<size_t>(q)];
                if (parc.labels.empty()) continue;
                std::vector<int> counts(static_cast<size_t>(k), 0);
                for (int j = 0; j < p; ++j)
                    if (cohort.voxel_meta->group_tags[static_cast<size_t>(j)] == tag)
                        ++counts[static_cast<size_t>(parc.labels[static_cast<size_t>(j)])];
                rows[static_cast<size_t>(q)] = std::move(counts);
            }
        }
    }
    return report;
}

}  // namespace sbp

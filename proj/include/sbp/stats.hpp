#pragma once

#include <span>

namespace sbp::stats {

// Pearson correlation of two equal-length samples. Returns NaN when either
// sample has zero variance; callers apply their own degenerate-case policy.
double pearson(std::span<const double> x, std::span<const double> y);

// Two-sided p-value of the Pearson correlation t-test with n-2 degrees of
// freedom. r is clamped into [-1, 1]; |r| = 1 yields p = 0.
double pearson_pvalue(double r, int n);

}  // namespace sbp::stats

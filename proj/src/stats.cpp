#include "sbp/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <boost/math/distributions/students_t.hpp>

#include "sbp/common.hpp"

namespace sbp::stats {

double pearson(std::span<const double> x, std::span<const double> y) {
    require(x.size() == y.size(), "DimensionMismatch", "pearson: sample sizes differ");
    require(x.size() >= 2, "DimensionMismatch", "pearson: need at least 2 samples");
    const size_t n = x.size();
    double mx = 0.0, my = 0.0;
    for (size_t i = 0; i < n; ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (size_t i = 0; i < n; ++i) {
        const double dx = x[i] - mx;
        const double dy = y[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx == 0.0 || syy == 0.0) return std::numeric_limits<double>::quiet_NaN();
    double r = sxy / std::sqrt(sxx * syy);
    return std::clamp(r, -1.0, 1.0);
}

double pearson_pvalue(double r, int n) {
    require(n >= 3, "TooFewSubjects", "pearson_pvalue: need n >= 3");
    r = std::clamp(r, -1.0, 1.0);
    const double r2 = r * r;
    if (r2 >= 1.0) return 0.0;
    const double df = static_cast<double>(n - 2);
    const double t = std::abs(r) * std::sqrt(df / (1.0 - r2));
    boost::math::students_t dist(df);
    return 2.0 * boost::math::cdf(boost::math::complement(dist, t));
}

}  // namespace sbp::stats

// Small order-statistic helpers shared across modules.

#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "unidrf/types.hpp"

namespace unidrf {

/// Empirical p-quantile with linear interpolation between order statistics
/// (position p * (n - 1) in the sorted sample).
inline double empirical_quantile(std::vector<double> v, double p) {
    if (v.empty()) throw InputError("quantile of an empty sample");
    std::sort(v.begin(), v.end());
    const double pos = std::clamp(p, 0.0, 1.0) * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, v.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return v[lo] + frac * (v[hi] - v[lo]);
}

/// k-th smallest value (1-based) with k = ceil(p * n). A relative slack of
/// 1e-9 keeps products like 0.9 * 100 from rounding up to the next index.
inline double upper_order_statistic(std::vector<double> v, double p) {
    if (v.empty()) throw InputError("order statistic of an empty sample");
    const double n = static_cast<double>(v.size());
    auto k = static_cast<std::size_t>(std::ceil(p * n - 1e-9 * n));
    k = std::clamp<std::size_t>(k, 1, v.size());
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(k - 1), v.end());
    return v[k - 1];
}

/// 25% and 75% standard normal quantile difference.
inline constexpr double kNormalIqr = 1.3489795003921634;

}  // namespace unidrf

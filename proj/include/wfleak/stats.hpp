#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace wfleak {

inline double mean_of(std::span<const double> x) {
    if (x.empty())
        return 0.0;
    double s = 0.0;
    for (double v : x)
        s += v;
    return s / static_cast<double>(x.size());
}

// Population standard deviation (divides by m); used for feature statistics
// where the value describes the observed sequence itself.
inline double population_std(std::span<const double> x) {
    if (x.size() < 2)
        return 0.0;
    double m = mean_of(x);
    double s = 0.0;
    for (double v : x)
        s += (v - m) * (v - m);
    return std::sqrt(s / static_cast<double>(x.size()));
}

// Sample standard deviation (divides by m-1); used by bandwidth selection.
inline double sample_std(std::span<const double> x) {
    if (x.size() < 2)
        return 0.0;
    double m = mean_of(x);
    double s = 0.0;
    for (double v : x)
        s += (v - m) * (v - m);
    return std::sqrt(s / static_cast<double>(x.size() - 1));
}

// Quantile with linear interpolation between order statistics
// (index h = q * (m - 1)). q must lie in [0, 1].
inline double quantile_sorted(std::span<const double> sorted, double q) {
    if (sorted.empty())
        return 0.0;
    if (sorted.size() == 1)
        return sorted[0];
    double h = q * static_cast<double>(sorted.size() - 1);
    auto lo = static_cast<std::size_t>(std::floor(h));
    auto hi = static_cast<std::size_t>(std::ceil(h));
    if (hi >= sorted.size())
        hi = sorted.size() - 1;
    double frac = h - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

inline double quantile_of(std::span<const double> x, double q) {
    std::vector<double> s(x.begin(), x.end());
    std::sort(s.begin(), s.end());
    return quantile_sorted(s, q);
}

inline double median_of(std::span<const double> x) {
    return quantile_of(x, 0.5);
}

inline double max_of(std::span<const double> x) {
    if (x.empty())
        return 0.0;
    return *std::max_element(x.begin(), x.end());
}

inline double min_of(std::span<const double> x) {
    if (x.empty())
        return 0.0;
    return *std::min_element(x.begin(), x.end());
}

} // namespace wfleak

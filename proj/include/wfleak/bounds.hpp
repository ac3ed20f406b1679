#pragma once

#include <cmath>
#include <span>
#include <stdexcept>

#include "wfleak/infotheory.hpp"

namespace wfleak {

// Closed-form relations between classifier accuracy and information leakage
// (Fano-style), plus the averaging law for combining equal-size worlds.

// Width of the leakage band consistent with accuracy alpha in an n-class
// world: (1 - alpha) * log2(n - 1). Independent of the prior.
inline double theorem1_range(std::size_t n, double alpha) {
    if (n < 2)
        throw std::invalid_argument("theorem1_range: need n >= 2");
    if (!(alpha >= 0.0 && alpha <= 1.0))
        throw std::invalid_argument("theorem1_range: alpha outside [0,1]");
    return (1.0 - alpha) * std::log2(static_cast<double>(n - 1));
}

struct LeakageBand {
    double min_bits;
    double max_bits;
};

// Smallest and largest leakage consistent with accuracy alpha given the
// class prior. H(D) is taken as entropy(prior); 0*log(0) handled by
// convention, so alpha = 0 and alpha = 1 are valid limits.
inline LeakageBand leakage_bounds(const DiscreteDistribution& prior, double alpha) {
    prior.validate();
    std::size_t n = prior.size();
    if (n < 2)
        throw std::invalid_argument("leakage_bounds: need n >= 2 classes");
    if (!(alpha >= 0.0 && alpha <= 1.0))
        throw std::invalid_argument("leakage_bounds: alpha outside [0,1]");

    double hd = entropy_bits(prior);
    double e = 1.0 - alpha; // error mass
    double common = hd + xlog2x(alpha);
    LeakageBand b{};
    b.max_bits = common + xlog2x(e);
    b.min_bits = common + (e > 0.0 ? e * std::log2(e / static_cast<double>(n - 1)) : 0.0);
    return b;
}

// Combined leakage of x equal-size closed worlds measured separately:
// the arithmetic mean (exact when the worlds share feature marginals).
inline double theorem2_combine(std::span<const double> leakages) {
    if (leakages.empty())
        throw std::invalid_argument("theorem2_combine: empty list");
    double s = 0.0;
    for (double v : leakages)
        s += v;
    return s / static_cast<double>(leakages.size());
}

} // namespace wfleak

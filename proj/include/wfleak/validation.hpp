#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <vector>

#include "wfleak/errors.hpp"
#include "wfleak/random.hpp"
#include "wfleak/trace.hpp"

namespace wfleak {

// Resampling confidence intervals around any dataset-level estimator.
// Trials use seeds derived from a master seed by trial index, so results
// are reproducible and independent of evaluation order.

struct ResampleConfig {
    std::size_t trials = 20;
    double ci_level = 0.90;
    std::uint64_t seed = 0;

    void validate() const {
        if (trials < 2)
            throw std::invalid_argument("resample: need at least 2 trials");
        if (!(ci_level > 0.0 && ci_level < 1.0))
            throw std::invalid_argument("resample: ci_level outside (0,1)");
    }
};

using DatasetEstimator = std::function<double(const Dataset&)>;

struct BootstrapResult {
    double low = 0.0;
    double high = 0.0;
    double point = 0.0; // estimator on the original dataset
    std::vector<double> trial_values;
    std::size_t failed_trials = 0;
};

struct SubsampleResult {
    double low = 0.0;
    double high = 0.0;
    std::vector<double> trial_values;
    std::size_t failed_trials = 0;
};

namespace detail {

// Nearest-rank empirical quantile: rank = ceil(q * S) over sorted values.
inline double nearest_rank(const std::vector<double>& sorted, double q) {
    auto s = static_cast<double>(sorted.size());
    auto rank = static_cast<std::size_t>(std::ceil(q * s));
    if (rank < 1)
        rank = 1;
    if (rank > sorted.size())
        rank = sorted.size();
    return sorted[rank - 1];
}

inline std::pair<double, double> quantile_ci(std::vector<double> values, double ci_level) {
    std::sort(values.begin(), values.end());
    double tail = (1.0 - ci_level) / 2.0;
    return {nearest_rank(values, tail), nearest_rank(values, 1.0 - tail)};
}

} // namespace detail

// Per-website resampling with replacement, resample size equal to the
// website's observation count. A trial where the estimator throws is
// recorded as failed; the CI requires at least half the trials to succeed.
inline BootstrapResult bootstrap_ci(const Dataset& ds, const DatasetEstimator& estimator,
                                    const ResampleConfig& cfg) {
    cfg.validate();
    if (ds.websites.empty())
        throw std::invalid_argument("bootstrap: empty dataset");

    BootstrapResult r;
    for (std::size_t trial = 0; trial < cfg.trials; ++trial) {
        Rng rng(derive_seed(cfg.seed, {trial}));
        Dataset resampled;
        resampled.websites = ds.websites;
        resampled.traces.resize(ds.traces.size());
        for (std::size_t s = 0; s < ds.traces.size(); ++s) {
            const auto& visits = ds.traces[s];
            resampled.traces[s].reserve(visits.size());
            for (std::size_t i = 0; i < visits.size(); ++i)
                resampled.traces[s].push_back(
                    visits[static_cast<std::size_t>(rng.next_below(visits.size()))]);
        }
        try {
            r.trial_values.push_back(estimator(resampled));
        } catch (const std::exception&) {
            ++r.failed_trials;
        }
    }

    if (r.trial_values.size() * 2 < cfg.trials)
        throw NumericError("bootstrap: more than half the trials failed");
    r.point = estimator(ds);
    auto [lo, hi] = detail::quantile_ci(r.trial_values, cfg.ci_level);
    r.low = lo;
    r.high = hi;
    return r;
}

// Website-level sampling without replacement: each trial measures a random
// world of `world_size` distinct websites. Selected sites keep dataset
// order, so a full-population subsample reproduces the dataset exactly.
inline SubsampleResult subsample_ci(const Dataset& ds, const DatasetEstimator& estimator,
                                    std::size_t world_size, const ResampleConfig& cfg) {
    cfg.validate();
    if (world_size == 0 || world_size > ds.websites.size())
        throw std::invalid_argument("subsample: world_size outside [1, population]");

    SubsampleResult r;
    for (std::size_t trial = 0; trial < cfg.trials; ++trial) {
        Rng rng(derive_seed(cfg.seed, {trial}));
        // Partial Fisher-Yates over site indices, then restore dataset order.
        std::vector<std::size_t> idx(ds.websites.size());
        for (std::size_t i = 0; i < idx.size(); ++i)
            idx[i] = i;
        for (std::size_t i = 0; i < world_size; ++i) {
            std::size_t j = i + static_cast<std::size_t>(rng.next_below(idx.size() - i));
            std::swap(idx[i], idx[j]);
        }
        std::vector<std::size_t> chosen(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(world_size));
        std::sort(chosen.begin(), chosen.end());

        Dataset world;
        for (std::size_t s : chosen) {
            world.websites.push_back(ds.websites[s]);
            world.traces.push_back(ds.traces[s]);
        }
        try {
            r.trial_values.push_back(estimator(world));
        } catch (const std::exception&) {
            ++r.failed_trials;
        }
    }

    if (r.trial_values.size() * 2 < cfg.trials)
        throw NumericError("subsample: more than half the trials failed");
    auto [lo, hi] = detail::quantile_ci(r.trial_values, cfg.ci_level);
    r.low = lo;
    r.high = hi;
    return r;
}

} // namespace wfleak

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include "wfleak/density.hpp"
#include "wfleak/feature_io.hpp"
#include "wfleak/grouping.hpp"
#include "wfleak/infotheory.hpp"
#include "wfleak/parallel.hpp"
#include "wfleak/quantifier.hpp"

namespace wfleak {

// Feature analysis: rank features by individual leakage, drop redundant
// ones, select the top n, and cluster the survivors into dependence groups.

struct LeakageRanking {
    struct Entry {
        std::size_t feature = 0;
        double bits = 0.0;
        bool failed = false; // estimation raised; ranked after all successes
    };
    std::vector<Entry> entries; // descending bits, ties by feature index
};

// Individual closed-world leakage of every feature. Each feature gets its
// own derived RNG stream, so the ranking is independent of evaluation order
// and thread count.
inline LeakageRanking rank_features(const FeatureTable& table, const DiscreteDistribution& prior,
                                    const McConfig& mc, std::size_t beta = 10,
                                    unsigned threads = 1) {
    if (table.site_count() == 0 || table.rows.front().empty())
        throw std::invalid_argument("rank_features: empty feature table");
    if (prior.size() != table.site_count())
        throw std::invalid_argument("rank_features: prior size != website count");
    std::size_t n_features = table.rows.front().front().values.size();

    LeakageRanking ranking;
    ranking.entries.resize(n_features);
    parallel_for(n_features, threads, [&](std::size_t f) {
        auto& e = ranking.entries[f];
        e.feature = f;
        try {
            std::vector<ModelGroups> models(table.site_count());
            for (std::size_t s = 0; s < table.site_count(); ++s) {
                auto col = table.column(s, f);
                auto nature = classify_nature(col, beta);
                models[s] = ModelGroups{fit_akde_1d(col, nature)};
            }
            McConfig per_feature{mc.k, derive_seed(mc.seed, {f})};
            e.bits = closed_world_leakage(models, prior, per_feature).bits;
        } catch (const std::exception&) {
            e.failed = true;
            e.bits = 0.0;
        }
    });

    std::sort(ranking.entries.begin(), ranking.entries.end(), [](const auto& a, const auto& b) {
        if (a.failed != b.failed)
            return b.failed;
        if (a.bits != b.bits)
            return a.bits > b.bits;
        return a.feature < b.feature;
    });
    return ranking;
}

struct PruneResult {
    std::vector<std::size_t> kept; // ranking order
    std::vector<std::pair<std::size_t, std::size_t>> pruned; // (dropped, keeper)
};

namespace detail {

// Greedy scan in ranking order: a candidate is dropped when its NMI with an
// already-kept feature exceeds the threshold (the higher-ranked one stays).
// nmi(a, b) is only consulted for kept candidates, so callers may evaluate
// it lazily. Scanning stops once `stop_after` features are kept.
template <typename NmiFn>
PruneResult greedy_prune(const LeakageRanking& ranking, NmiFn&& nmi, double threshold,
                         std::size_t stop_after = std::numeric_limits<std::size_t>::max()) {
    PruneResult r;
    for (const auto& e : ranking.entries) {
        if (r.kept.size() >= stop_after)
            break;
        if (e.failed)
            continue;
        bool redundant = false;
        for (std::size_t keeper : r.kept) {
            if (nmi(e.feature, keeper) > threshold) {
                r.pruned.emplace_back(e.feature, keeper);
                redundant = true;
                break;
            }
        }
        if (!redundant)
            r.kept.push_back(e.feature);
    }
    return r;
}

} // namespace detail

// Matrix-backed variant: the NMI matrix must cover every feature index the
// ranking mentions.
inline PruneResult prune_redundant(const LeakageRanking& ranking, const NmiMatrix& matrix,
                                   double threshold = 0.9) {
    for (const auto& e : ranking.entries)
        if (e.feature >= matrix.size)
            throw std::invalid_argument("prune_redundant: matrix does not cover feature set");
    return detail::greedy_prune(
        ranking, [&](std::size_t a, std::size_t b) { return matrix.at(a, b); }, threshold);
}

// Density-reachability clustering on D = 1 - M with minPts = 1: every
// feature belongs to a cluster; a feature joins a cluster when its distance
// to any member is strictly below eps, otherwise it starts a new one.
// Deterministic: seeds expand in index order, members sorted.
inline std::vector<std::vector<std::size_t>> cluster_features(const NmiMatrix& matrix,
                                                              double eps = 0.4) {
    std::size_t n = matrix.size;
    std::vector<std::vector<std::size_t>> clusters;
    std::vector<char> visited(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
        if (visited[i])
            continue;
        std::vector<std::size_t> cluster;
        std::vector<std::size_t> frontier{i};
        visited[i] = 1;
        while (!frontier.empty()) {
            std::size_t cur = frontier.back();
            frontier.pop_back();
            cluster.push_back(cur);
            for (std::size_t j = 0; j < n; ++j) {
                if (!visited[j] && matrix.distance_at(cur, j) < eps) {
                    visited[j] = 1;
                    frontier.push_back(j);
                }
            }
        }
        std::sort(cluster.begin(), cluster.end());
        clusters.push_back(std::move(cluster));
    }
    return clusters;
}

// KDE-backed NMI cross-check: resubstitution plug-in estimate of the mutual
// information, I = mean_i log2 f(x_i, y_i) / (f(x_i) f(y_i)), with the joint
// and the marginals fitted by the adaptive KDE. Normalized by the larger
// plug-in self-information (H(x) = I(x;x)), so a feature paired with any
// deterministic rescaling of itself scores exactly 1. Slower than binning;
// used to sanity-check the quantile-binned estimates.
inline NmiResult nmi_max_kde(std::span<const double> x, std::span<const double> y,
                             std::size_t beta = 10) {
    if (x.size() != y.size())
        throw std::invalid_argument("nmi_max_kde: length mismatch");
    if (x.size() < 2)
        throw std::invalid_argument("nmi_max_kde: need at least 2 samples");

    auto plug_in = [&](std::span<const double> a, std::span<const double> b) {
        std::array<FeatureNature, 2> natures{classify_nature(a, beta), classify_nature(b, beta)};
        std::vector<std::vector<double>> rows(a.size());
        for (std::size_t i = 0; i < a.size(); ++i)
            rows[i] = {a[i], b[i]};
        KernelModel joint = fit_akde(rows, natures);
        KernelModel ma = fit_akde_1d(a, natures[0]);
        KernelModel mb = fit_akde_1d(b, natures[1]);

        double total = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) {
            double point[2] = {a[i], b[i]};
            double fj = joint.pdf(std::span<const double>(point, 2));
            double fa = ma.pdf(std::span<const double>(point, 1));
            double fb = mb.pdf(std::span<const double>(point + 1, 1));
            if (fj <= 0.0 || fa <= 0.0 || fb <= 0.0)
                continue; // sample points always see their own kernel; guard anyway
            total += std::log2(fj / (fa * fb));
        }
        return total / static_cast<double>(a.size());
    };

    double self = std::max(plug_in(x, x), plug_in(y, y));
    if (self <= 0.0)
        return {0.0, true}; // constant columns: similarity undefined, reported as 0
    return {std::clamp(plug_in(x, y) / self, 0.0, 1.0), false};
}

enum class NmiEstimator { binned, kde };

struct BuildOptions {
    std::size_t top_n = 100;
    double prune_threshold = 0.9;
    double eps = 0.4;
    std::size_t beta = 10;
    NmiEstimator nmi_estimator = NmiEstimator::binned;
    unsigned threads = 1;
};

struct GroupingResult {
    FeatureGrouping grouping;
    LeakageRanking ranking;
    std::vector<std::size_t> degenerate_skipped; // constant features never kept
    bool underfull = false; // fewer than top_n survivors
};

// Full analysis: rank -> prune redundant (greedy, lazy NMI against kept
// features only) -> stop at top_n kept -> cluster the kept set. Constant
// features carry no information and no defined NMI; they are recorded and
// never kept.
inline GroupingResult build_grouping(const FeatureTable& table, const DiscreteDistribution& prior,
                                     const McConfig& mc, const BuildOptions& opts = {}) {
    GroupingResult result;
    result.ranking = rank_features(table, prior, mc, opts.beta, opts.threads);

    std::size_t n_features = result.ranking.entries.size();
    std::vector<std::vector<double>> pooled(n_features);
    std::vector<std::vector<int>> labels(n_features);
    std::vector<char> have_labels(n_features, 0);
    std::vector<char> is_constant(n_features, 0);
    auto ensure_labels = [&](std::size_t f) {
        if (!have_labels[f]) {
            pooled[f] = table.pooled_column(f);
            labels[f] = quantile_bins(pooled[f], 30);
            is_constant[f] =
                std::all_of(pooled[f].begin(), pooled[f].end(),
                            [&](double v) { return v == pooled[f].front(); })
                    ? 1
                    : 0;
            have_labels[f] = 1;
        }
    };
    auto nmi = [&](std::size_t a, std::size_t b) {
        ensure_labels(a);
        ensure_labels(b);
        if (opts.nmi_estimator == NmiEstimator::kde)
            return nmi_max_kde(pooled[a], pooled[b], opts.beta).value;
        return nmi_from_labels(labels[a], labels[b]).value;
    };

    // Greedy scan with the constant-feature filter folded in.
    LeakageRanking usable;
    for (const auto& e : result.ranking.entries) {
        if (e.failed)
            continue;
        ensure_labels(e.feature);
        if (is_constant[e.feature]) {
            result.degenerate_skipped.push_back(e.feature);
            continue;
        }
        usable.entries.push_back(e);
    }
    PruneResult pr = detail::greedy_prune(usable, nmi, opts.prune_threshold, opts.top_n);
    result.underfull = pr.kept.size() < opts.top_n;

    result.grouping.kept_features = pr.kept;
    result.grouping.pruned_redundant = pr.pruned;
    for (std::size_t f : pr.kept) {
        for (const auto& e : result.ranking.entries)
            if (e.feature == f) {
                result.grouping.per_feature_bits.push_back(e.bits);
                break;
            }
    }

    // NMI matrix over the kept set only, then density clustering.
    NmiMatrix kept_matrix;
    kept_matrix.size = pr.kept.size();
    kept_matrix.values.assign(pr.kept.size() * pr.kept.size(), 0.0);
    kept_matrix.degenerate.assign(pr.kept.size(), 0);
    for (std::size_t i = 0; i < pr.kept.size(); ++i) {
        kept_matrix.values[i * kept_matrix.size + i] = 1.0;
        for (std::size_t j = i + 1; j < pr.kept.size(); ++j) {
            double v = nmi(pr.kept[i], pr.kept[j]);
            kept_matrix.values[i * kept_matrix.size + j] = v;
            kept_matrix.values[j * kept_matrix.size + i] = v;
        }
    }
    for (const auto& cluster : cluster_features(kept_matrix, opts.eps)) {
        std::vector<std::size_t> ids;
        ids.reserve(cluster.size());
        for (std::size_t local : cluster)
            ids.push_back(pr.kept[local]);
        std::sort(ids.begin(), ids.end());
        result.grouping.clusters.push_back(std::move(ids));
    }

    result.grouping.validate();
    return result;
}

} // namespace wfleak

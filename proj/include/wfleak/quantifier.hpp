#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "wfleak/density.hpp"
#include "wfleak/errors.hpp"
#include "wfleak/feature_io.hpp"
#include "wfleak/grouping.hpp"
#include "wfleak/infotheory.hpp"
#include "wfleak/parallel.hpp"
#include "wfleak/random.hpp"

namespace wfleak {

// Monte-Carlo leakage estimation: leakage = H(world) - E[H(world | f)],
// with f drawn from each class's fitted density in proportion to the prior
// (importance sampling from the data distribution).

struct McConfig {
    std::size_t k = 5000;  // total Monte Carlo samples
    std::uint64_t seed = 0;

    void validate() const {
        if (k < 1)
            throw std::invalid_argument("mc config: k must be >= 1");
    }
};

struct LeakageEstimate {
    double bits = 0.0;
    double mc_standard_error = 0.0;
    std::size_t samples_used = 0;
    std::size_t degenerate_samples = 0; // posterior fell back to the prior
};

struct WorldConfig {
    enum class Mode { closed, open };
    Mode mode = Mode::closed;
    std::vector<std::string> websites;      // all site ids, dataset order
    std::vector<std::string> monitored;     // open mode
    std::vector<std::string> non_monitored; // open mode
    // Closed: prior over websites. Open: prior over monitored sites plus one
    // final entry carrying the whole non-monitored mass.
    DiscreteDistribution prior;

    void validate() const {
        prior.validate();
        if (mode == Mode::closed) {
            if (!monitored.empty() || !non_monitored.empty())
                throw std::invalid_argument("world: closed mode takes no monitored split");
            if (prior.size() != websites.size())
                throw std::invalid_argument("world: prior size != website count");
        } else {
            if (monitored.empty() || non_monitored.empty())
                throw std::invalid_argument("world: open mode needs non-empty M and N");
            for (const auto& m : monitored)
                for (const auto& n : non_monitored)
                    if (m == n)
                        throw std::invalid_argument("world: monitored and non-monitored overlap");
            if (prior.size() != monitored.size() + 1)
                throw std::invalid_argument("world: open prior must cover M plus the lump");
        }
    }
};

// Website prior proportional to 1/rank (exponent fixed at 1).
inline DiscreteDistribution zipf_prior(std::span<const std::uint64_t> ranks) {
    if (ranks.empty())
        throw std::invalid_argument("zipf_prior: empty rank list");
    std::set<std::uint64_t> seen;
    std::vector<double> w;
    w.reserve(ranks.size());
    for (std::uint64_t r : ranks) {
        if (r == 0)
            throw std::invalid_argument("zipf_prior: ranks must be positive");
        if (!seen.insert(r).second)
            throw std::invalid_argument("zipf_prior: duplicate rank");
        w.push_back(1.0 / static_cast<double>(r));
    }
    return DiscreteDistribution::from_weights(w);
}

// Ranks 1..n in order.
inline DiscreteDistribution zipf_prior(std::size_t n) {
    std::vector<std::uint64_t> ranks(n);
    std::iota(ranks.begin(), ranks.end(), std::uint64_t{1});
    return zipf_prior(std::span<const std::uint64_t>(ranks));
}

// Splits k samples across classes proportionally to the prior using the
// largest-remainder method, so the counts sum to exactly k. Ties in the
// fractional parts break toward the lower class index.
inline std::vector<std::size_t> allocate_samples(std::size_t k, const DiscreteDistribution& prior) {
    prior.validate();
    std::size_t n = prior.size();
    std::vector<std::size_t> alloc(n, 0);
    std::vector<std::pair<double, std::size_t>> rema;
    std::size_t assigned = 0;
    for (std::size_t j = 0; j < n; ++j) {
        double exact = static_cast<double>(k) * prior.p[j];
        auto base = static_cast<std::size_t>(std::floor(exact));
        alloc[j] = base;
        assigned += base;
        rema.emplace_back(exact - static_cast<double>(base), j);
    }
    std::sort(rema.begin(), rema.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first)
            return a.first > b.first;
        return a.second < b.second;
    });
    for (std::size_t i = 0; assigned < k; ++i, ++assigned)
        alloc[rema[i % rema.size()].second] += 1;
    return alloc;
}

// One class's density, factored over feature clusters: the class-conditional
// density of the full point is the product over group models.
using ModelGroups = std::vector<KernelModel>;

struct PosteriorResult {
    DiscreteDistribution dist;
    bool degenerate = false;
};

namespace detail {

inline std::size_t grouped_dim(const ModelGroups& groups) {
    std::size_t d = 0;
    for (const auto& g : groups)
        d += g.dim;
    return d;
}

inline void check_classes(std::span<const ModelGroups> class_models) {
    if (class_models.empty())
        throw std::invalid_argument("quantifier: no class models");
    for (const auto& groups : class_models) {
        if (groups.empty())
            throw std::invalid_argument("quantifier: class without fitted models");
        if (groups.size() != class_models.front().size())
            throw std::invalid_argument("quantifier: group count differs between classes");
        for (std::size_t g = 0; g < groups.size(); ++g)
            if (groups[g].dim != class_models.front()[g].dim)
                throw std::invalid_argument("quantifier: group dimension differs between classes");
    }
}

} // namespace detail

// Bayes posterior over classes for one observed point (concatenated over
// groups, in group order), with the Kononenko factorization
// p(f|c) = prod_g p(f_g|c). Log-space throughout; if every class's density
// underflows to zero even in log space, the posterior falls back to the
// prior and the result is flagged degenerate.
inline PosteriorResult posterior(std::span<const ModelGroups> class_models,
                                 const DiscreteDistribution& prior,
                                 std::span<const double> point) {
    detail::check_classes(class_models);
    prior.validate();
    if (prior.size() != class_models.size())
        throw std::invalid_argument("posterior: prior size != class count");
    if (point.size() != detail::grouped_dim(class_models.front()))
        throw std::invalid_argument("posterior: point does not cover grouped features");

    std::size_t n = class_models.size();
    std::vector<double> log_w(n);
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < n; ++c) {
        double lw = prior.p[c] > 0.0 ? std::log(prior.p[c])
                                     : -std::numeric_limits<double>::infinity();
        std::size_t off = 0;
        for (const auto& g : class_models[c]) {
            lw += g.log_pdf(point.subspan(off, g.dim));
            off += g.dim;
        }
        if (std::isnan(lw))
            lw = -std::numeric_limits<double>::infinity();
        log_w[c] = lw;
        best = std::max(best, lw);
    }

    PosteriorResult r;
    if (!std::isfinite(best)) {
        r.dist = prior;
        r.degenerate = true;
        return r;
    }
    r.dist.p.resize(n);
    double acc = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
        r.dist.p[c] = std::exp(log_w[c] - best);
        acc += r.dist.p[c];
    }
    for (double& v : r.dist.p)
        v /= acc;
    return r;
}

namespace detail {

// Shared Monte-Carlo engine. Classes [0, lump_from) are distinct outcomes;
// classes from lump_from onward (if any) collapse into one outcome when
// entropies are taken, which implements the open-world non-monitored lump.
// Sampling and posteriors always run over the full class list.
inline LeakageEstimate mc_leakage(std::span<const ModelGroups> class_models,
                                  const DiscreteDistribution& sampling_prior,
                                  std::size_t lump_from, const McConfig& mc,
                                  unsigned threads) {
    check_classes(class_models);
    sampling_prior.validate();
    mc.validate();
    if (sampling_prior.size() != class_models.size())
        throw std::invalid_argument("quantifier: prior size != class count");
    if (lump_from == 0 || lump_from > class_models.size())
        throw std::invalid_argument("quantifier: bad lump split");

    // Outcome distribution: individual classes plus the lumped tail.
    auto lump = [&](std::span<const double> full) {
        std::vector<double> out(full.begin(), full.begin() + static_cast<std::ptrdiff_t>(lump_from));
        if (lump_from < full.size()) {
            double tail = 0.0;
            for (std::size_t c = lump_from; c < full.size(); ++c)
                tail += full[c];
            out.push_back(tail);
        }
        return out;
    };
    std::vector<double> lumped_prior = lump(sampling_prior.p);
    double h_world = entropy_bits(lumped_prior);

    auto alloc = allocate_samples(mc.k, sampling_prior);
    struct Draw {
        std::size_t cls;
        std::size_t idx;
    };
    std::vector<Draw> draws;
    draws.reserve(mc.k);
    for (std::size_t c = 0; c < alloc.size(); ++c)
        for (std::size_t i = 0; i < alloc[c]; ++i)
            draws.push_back({c, i});

    std::size_t dim = grouped_dim(class_models.front());
    std::vector<double> h_cond(draws.size());
    std::vector<std::uint8_t> degen(draws.size(), 0);

    parallel_for(draws.size(), threads, [&](std::size_t t) {
        // One RNG stream per (class, sample index): schedule-independent.
        Rng rng(derive_seed(mc.seed, {static_cast<std::uint64_t>(draws[t].cls),
                                      static_cast<std::uint64_t>(draws[t].idx)}));
        std::vector<double> point(dim);
        std::size_t off = 0;
        for (const auto& g : class_models[draws[t].cls]) {
            g.sample_into(rng, std::span<double>(point).subspan(off, g.dim));
            off += g.dim;
        }
        auto post = posterior(class_models, sampling_prior, point);
        std::vector<double> lumped = lump(post.dist.p);
        h_cond[t] = entropy_bits(lumped);
        degen[t] = post.degenerate ? 1 : 0;
    });

    LeakageEstimate est;
    est.samples_used = draws.size();
    for (std::uint8_t d : degen)
        est.degenerate_samples += d;
    double mean = mean_of(h_cond);
    est.bits = std::max(0.0, h_world - mean);
    est.mc_standard_error =
        draws.size() > 1 ? sample_std(h_cond) / std::sqrt(static_cast<double>(h_cond.size()))
                         : 0.0;
    return est;
}

} // namespace detail

// Closed world: every candidate website is its own outcome.
inline LeakageEstimate closed_world_leakage(std::span<const ModelGroups> class_models,
                                            const DiscreteDistribution& prior,
                                            const McConfig& mc, unsigned threads = 1) {
    return detail::mc_leakage(class_models, prior, class_models.size(), mc, threads);
}

// Open world with the non-monitored traffic pooled into one model. The
// prior's last entry is the total non-monitored mass; the pooled class is
// both sampled and scored as a single outcome.
inline LeakageEstimate open_world_leakage(std::span<const ModelGroups> monitored_models,
                                          const ModelGroups& pooled_non_monitored,
                                          const DiscreteDistribution& prior,
                                          const McConfig& mc, unsigned threads = 1) {
    if (monitored_models.empty())
        throw std::invalid_argument("open world: empty monitored set");
    if (pooled_non_monitored.empty())
        throw std::invalid_argument("open world: empty non-monitored model");
    if (prior.size() != monitored_models.size() + 1)
        throw std::invalid_argument("open world: prior must cover M plus the lump");
    std::vector<ModelGroups> all(monitored_models.begin(), monitored_models.end());
    all.push_back(pooled_non_monitored);
    return detail::mc_leakage(all, prior, all.size(), mc, threads);
}

// Open world cross-check mode: each non-monitored site keeps its own model
// and prior mass; their posterior masses are summed into the lumped outcome
// before entropies are taken.
inline LeakageEstimate open_world_leakage_per_site(std::span<const ModelGroups> monitored_models,
                                                   std::span<const ModelGroups> non_monitored_models,
                                                   const DiscreteDistribution& per_site_prior,
                                                   const McConfig& mc, unsigned threads = 1) {
    if (monitored_models.empty() || non_monitored_models.empty())
        throw std::invalid_argument("open world: empty monitored or non-monitored set");
    if (per_site_prior.size() != monitored_models.size() + non_monitored_models.size())
        throw std::invalid_argument("open world: per-site prior must cover M and N");
    std::vector<ModelGroups> all(monitored_models.begin(), monitored_models.end());
    all.insert(all.end(), non_monitored_models.begin(), non_monitored_models.end());
    return detail::mc_leakage(all, per_site_prior, monitored_models.size(), mc, threads);
}

// ---------------------------------------------------------------------------
// End-to-end measurement on an extracted feature table.
// ---------------------------------------------------------------------------

namespace detail {

// Fits one class's per-cluster models from its rows of the feature table.
inline ModelGroups fit_class_models(const FeatureTable& table, std::size_t site,
                                    const std::vector<std::vector<std::size_t>>& clusters,
                                    std::size_t beta) {
    if (table.rows[site].size() < 2)
        throw DataError("quantifier: website '" + table.websites[site] +
                        "' has fewer than 2 visits");
    ModelGroups groups;
    groups.reserve(clusters.size());
    for (const auto& cluster : clusters) {
        std::vector<FeatureNature> natures;
        natures.reserve(cluster.size());
        for (std::size_t f : cluster)
            natures.push_back(classify_nature(table.column(site, f), beta));
        std::vector<std::vector<double>> rows(table.rows[site].size());
        for (std::size_t v = 0; v < rows.size(); ++v) {
            rows[v].reserve(cluster.size());
            for (std::size_t f : cluster)
                rows[v].push_back(table.rows[site][v].values[f]);
        }
        groups.push_back(fit_akde(rows, natures));
    }
    return groups;
}

// Pooled model over several sites' rows (open-world non-monitored class).
inline ModelGroups fit_pooled_models(const FeatureTable& table,
                                     std::span<const std::size_t> sites,
                                     const std::vector<std::vector<std::size_t>>& clusters,
                                     std::size_t beta) {
    ModelGroups groups;
    groups.reserve(clusters.size());
    for (const auto& cluster : clusters) {
        std::vector<std::vector<double>> rows;
        for (std::size_t s : sites)
            for (const auto& fv : table.rows[s]) {
                std::vector<double> r;
                r.reserve(cluster.size());
                for (std::size_t f : cluster)
                    r.push_back(fv.values[f]);
                rows.push_back(std::move(r));
            }
        if (rows.size() < 2)
            throw DataError("quantifier: pooled class has fewer than 2 visits");
        std::vector<FeatureNature> natures;
        natures.reserve(cluster.size());
        for (std::size_t j = 0; j < cluster.size(); ++j) {
            std::vector<double> col;
            col.reserve(rows.size());
            for (const auto& r : rows)
                col.push_back(r[j]);
            natures.push_back(classify_nature(col, beta));
        }
        groups.push_back(fit_akde(rows, natures));
    }
    return groups;
}

} // namespace detail

// Measures the leakage of the grouped features over the configured world.
// Models are fitted per class and per cluster from the table; the world's
// website lists refer to table.websites entries.
inline LeakageEstimate joint_leakage(const FeatureTable& table, const FeatureGrouping& grouping,
                                     const WorldConfig& world, const McConfig& mc,
                                     std::size_t beta = 10, unsigned threads = 1) {
    grouping.validate();
    world.validate();
    if (grouping.clusters.empty())
        throw std::invalid_argument("joint_leakage: empty grouping");

    auto site_index = [&](const std::string& id) {
        for (std::size_t s = 0; s < table.websites.size(); ++s)
            if (table.websites[s] == id)
                return s;
        throw DataError("joint_leakage: website '" + id + "' not in feature table");
    };

    if (world.mode == WorldConfig::Mode::closed) {
        std::vector<ModelGroups> models(world.websites.size());
        std::vector<std::size_t> sites(world.websites.size());
        for (std::size_t c = 0; c < world.websites.size(); ++c)
            sites[c] = site_index(world.websites[c]);
        parallel_for(models.size(), threads, [&](std::size_t c) {
            models[c] = detail::fit_class_models(table, sites[c], grouping.clusters, beta);
        });
        return closed_world_leakage(models, world.prior, mc, threads);
    }

    std::vector<ModelGroups> monitored(world.monitored.size());
    std::vector<std::size_t> m_sites(world.monitored.size());
    for (std::size_t c = 0; c < world.monitored.size(); ++c)
        m_sites[c] = site_index(world.monitored[c]);
    parallel_for(monitored.size(), threads, [&](std::size_t c) {
        monitored[c] = detail::fit_class_models(table, m_sites[c], grouping.clusters, beta);
    });
    std::vector<std::size_t> n_sites;
    n_sites.reserve(world.non_monitored.size());
    for (const auto& id : world.non_monitored)
        n_sites.push_back(site_index(id));
    ModelGroups pooled = detail::fit_pooled_models(table, n_sites, grouping.clusters, beta);
    return open_world_leakage(monitored, pooled, world.prior, mc, threads);
}

struct CategoryLeakage {
    int category_index = 0;
    std::string category_name;
    std::size_t feature_count = 0; // kept features falling in this category
    LeakageEstimate estimate;
};

// Per-category measurement: the grouping restricted to each category's
// feature range. Categories with no kept feature report a zero estimate
// with zero samples.
inline std::vector<CategoryLeakage> joint_leakage_per_category(
    const FeatureTable& table, const FeatureGrouping& grouping, const WorldConfig& world,
    const McConfig& mc, std::size_t beta = 10, unsigned threads = 1) {
    std::vector<CategoryLeakage> out;
    for (const auto& cat : category_layout()) {
        CategoryLeakage cl;
        cl.category_index = static_cast<int>(cat.id);
        cl.category_name = cat.name;

        FeatureGrouping restricted;
        for (const auto& cluster : grouping.clusters) {
            std::vector<std::size_t> sub;
            for (std::size_t f : cluster)
                if (f >= cat.offset && f < cat.offset + cat.size)
                    sub.push_back(f);
            if (!sub.empty())
                restricted.clusters.push_back(std::move(sub));
        }
        for (std::size_t i = 0; i < grouping.kept_features.size(); ++i) {
            std::size_t f = grouping.kept_features[i];
            if (f >= cat.offset && f < cat.offset + cat.size) {
                restricted.kept_features.push_back(f);
                if (i < grouping.per_feature_bits.size())
                    restricted.per_feature_bits.push_back(grouping.per_feature_bits[i]);
            }
        }
        cl.feature_count = restricted.kept_features.size();
        if (cl.feature_count > 0)
            cl.estimate = joint_leakage(table, restricted, world, mc, beta, threads);
        out.push_back(std::move(cl));
    }
    return out;
}

} // namespace wfleak

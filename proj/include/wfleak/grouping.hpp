#pragma once

#include <cstddef>
#include <set>
#include <stdexcept>
#include <utility>
#include <vector>

namespace wfleak {

// Output of the feature analysis stage: which features survive redundancy
// pruning and top-n selection, and how the survivors are partitioned into
// clusters of mutually dependent features. The joint density is factored as
// a product over these clusters.
struct FeatureGrouping {
    std::vector<std::size_t> kept_features; // ranking order
    std::vector<std::pair<std::size_t, std::size_t>> pruned_redundant; // (dropped, keeper)
    std::vector<std::vector<std::size_t>> clusters; // disjoint, cover kept_features
    std::vector<double> per_feature_bits; // aligned with kept_features

    void validate() const {
        std::set<std::size_t> kept(kept_features.begin(), kept_features.end());
        if (kept.size() != kept_features.size())
            throw std::invalid_argument("grouping: duplicate kept feature");
        std::set<std::size_t> clustered;
        for (const auto& c : clusters) {
            if (c.empty())
                throw std::invalid_argument("grouping: empty cluster");
            for (std::size_t f : c)
                if (!clustered.insert(f).second)
                    throw std::invalid_argument("grouping: clusters not disjoint");
        }
        if (clustered != kept)
            throw std::invalid_argument("grouping: clusters do not cover kept set");
        for (const auto& [dropped, keeper] : pruned_redundant)
            if (kept.count(dropped))
                throw std::invalid_argument("grouping: pruned feature also kept");
    }
};

} // namespace wfleak

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "wfleak/errors.hpp"
#include "wfleak/stats.hpp"
#include "wfleak/trace.hpp"

namespace wfleak {

// The fingerprint is a fixed 3043-dimensional vector organized into 14
// category blocks. Where the source material fixes a block's width but not
// its full composition, the fill rule is documented at the extractor and
// versioned through kLayoutVersion.

inline constexpr std::size_t kFeatureCount = 3043;

enum class Category : int {
    packet_count = 1,
    timing = 2,
    ngram = 3,
    transposition = 4,
    interval_i = 5,
    interval_ii = 6,
    interval_iii = 7,
    packet_distribution = 8,
    burst = 9,
    first20 = 10,
    first30 = 11,
    last30 = 12,
    per_second = 13,
    cumul = 14,
};

struct CategoryInfo {
    Category id;
    const char* name;
    std::size_t offset;
    std::size_t size;
};

inline const std::array<CategoryInfo, 14>& category_layout() {
    static const std::array<CategoryInfo, 14> layout = [] {
        std::array<CategoryInfo, 14> a{{
            {Category::packet_count, "packet_count", 0, 13},
            {Category::timing, "timing", 0, 24},
            {Category::ngram, "ngram", 0, 124},
            {Category::transposition, "transposition", 0, 604},
            {Category::interval_i, "interval_i", 0, 600},
            {Category::interval_ii, "interval_ii", 0, 602},
            {Category::interval_iii, "interval_iii", 0, 586},
            {Category::packet_distribution, "packet_distribution", 0, 225},
            {Category::burst, "burst", 0, 11},
            {Category::first20, "first20", 0, 20},
            {Category::first30, "first30", 0, 2},
            {Category::last30, "last30", 0, 2},
            {Category::per_second, "per_second", 0, 126},
            {Category::cumul, "cumul", 0, 104},
        }};
        std::size_t off = 0;
        for (auto& c : a) {
            c.offset = off;
            off += c.size;
        }
        return a;
    }();
    return layout;
}

inline const CategoryInfo& category_info(Category id) {
    return category_layout()[static_cast<std::size_t>(static_cast<int>(id) - 1)];
}

struct FeatureVector {
    std::vector<double> values; // length kFeatureCount

    std::span<const double> category(Category id) const {
        const auto& info = category_info(id);
        return std::span<const double>(values).subspan(info.offset, info.size);
    }
};

// Column name for CSV headers: cat<k>_<i>, i zero-based within the block.
inline std::string feature_name(std::size_t index) {
    for (const auto& c : category_layout())
        if (index >= c.offset && index < c.offset + c.size)
            return "cat" + std::to_string(static_cast<int>(c.id)) + "_" +
                   std::to_string(index - c.offset);
    throw std::out_of_range("feature_name: index out of range");
}

namespace detail {

// Round to the nearest multiple of `granularity`, half away from zero.
inline double round_to(double v, double granularity) {
    return static_cast<double>(std::llround(v / granularity)) * granularity;
}

inline std::vector<double> stream_times(const Trace& t, int direction) {
    std::vector<double> out;
    double t0 = t.packets.empty() ? 0.0 : t.packets.front().time;
    for (const Packet& p : t.packets) {
        if (direction == 0 || (direction > 0 && p.incoming()) || (direction < 0 && p.outgoing()))
            out.push_back(p.time - t0);
    }
    return out;
}

inline std::vector<double> deltas(std::span<const double> times) {
    std::vector<double> d;
    for (std::size_t i = 1; i < times.size(); ++i)
        d.push_back(times[i] - times[i - 1]);
    return d;
}

} // namespace detail

// Category 1 (13): total/out/in counts, in and out count ratios, counts
// rounded to the nearest 25, byte totals (total/out/in), byte ratios.
inline std::vector<double> packet_count_features(const Trace& t) {
    double total = static_cast<double>(t.size());
    double out_n = 0, in_n = 0, out_b = 0, in_b = 0;
    for (const Packet& p : t.packets) {
        double mag = static_cast<double>(p.length < 0 ? -p.length : p.length);
        if (p.outgoing()) {
            out_n += 1;
            out_b += mag;
        } else {
            in_n += 1;
            in_b += mag;
        }
    }
    double total_b = in_b + out_b;
    return {
        total,
        out_n,
        in_n,
        total > 0 ? in_n / total : 0.0,
        total > 0 ? out_n / total : 0.0,
        detail::round_to(total, 25.0),
        detail::round_to(out_n, 25.0),
        detail::round_to(in_n, 25.0),
        total_b,
        out_b,
        in_b,
        total_b > 0 ? in_b / total_b : 0.0,
        total_b > 0 ? out_b / total_b : 0.0,
    };
}

// Category 2 (24): per stream (total, incoming, outgoing): inter-arrival
// max/mean/std/Q3, then transmission-time 25/50/75/100% quantiles.
// Streams with fewer than 2 packets contribute zeros for inter-arrival
// statistics; empty streams contribute zeros throughout.
inline std::vector<double> timing_features(const Trace& t) {
    std::vector<double> out;
    out.reserve(24);
    for (int dir : {0, +1, -1}) {
        auto times = detail::stream_times(t, dir);
        auto d = detail::deltas(times);
        out.push_back(max_of(d));
        out.push_back(mean_of(d));
        out.push_back(population_std(d));
        out.push_back(quantile_of(d, 0.75));
    }
    for (int dir : {0, +1, -1}) {
        auto times = detail::stream_times(t, dir);
        out.push_back(quantile_of(times, 0.25));
        out.push_back(quantile_of(times, 0.50));
        out.push_back(quantile_of(times, 0.75));
        out.push_back(quantile_of(times, 1.00));
    }
    return out;
}

// Direction n-gram counts for one n: 2^n slots, lexicographic with
// outgoing (-1) ordered before incoming (+1).
inline std::vector<double> ngram_features(const Trace& t, int n) {
    if (n < 1 || n > 20)
        throw std::invalid_argument("ngram_features: n out of range");
    std::vector<double> counts(static_cast<std::size_t>(1) << n, 0.0);
    if (t.size() < static_cast<std::size_t>(n))
        return counts;
    for (std::size_t i = 0; i + n <= t.size(); ++i) {
        std::size_t idx = 0;
        for (int j = 0; j < n; ++j)
            idx = (idx << 1) | (t.packets[i + j].incoming() ? 1u : 0u);
        counts[idx] += 1.0;
    }
    return counts;
}

// Category 3 (124): n-gram counts for n = 2..6 concatenated (4+8+16+32+64).
inline std::vector<double> ngram_features(const Trace& t) {
    std::vector<double> out;
    out.reserve(124);
    for (int n = 2; n <= 6; ++n) {
        auto c = ngram_features(t, n);
        out.insert(out.end(), c.begin(), c.end());
    }
    return out;
}

// Category 4 (604): for the first 300 incoming packets, the number of
// packets preceding each in the whole trace (zero-padded), same for
// outgoing, then mean and std of each recorded position list.
inline std::vector<double> transposition_features(const Trace& t) {
    std::vector<double> in_pos, out_pos;
    for (std::size_t i = 0; i < t.size(); ++i) {
        if (t.packets[i].incoming()) {
            if (in_pos.size() < 300)
                in_pos.push_back(static_cast<double>(i));
        } else if (out_pos.size() < 300) {
            out_pos.push_back(static_cast<double>(i));
        }
        if (in_pos.size() >= 300 && out_pos.size() >= 300)
            break;
    }
    std::vector<double> out(604, 0.0);
    std::copy(in_pos.begin(), in_pos.end(), out.begin());
    std::copy(out_pos.begin(), out_pos.end(), out.begin() + 300);
    out[600] = mean_of(in_pos);
    out[601] = population_std(in_pos);
    out[602] = mean_of(out_pos);
    out[603] = population_std(out_pos);
    return out;
}

namespace detail {

// Interval sizes for one direction: number of packets strictly between
// consecutive same-direction packets. c same-direction packets -> c-1 sizes.
inline std::vector<double> interval_sizes(const Trace& t, int direction) {
    std::vector<double> sizes;
    std::ptrdiff_t last = -1;
    for (std::size_t i = 0; i < t.size(); ++i) {
        bool match = direction > 0 ? t.packets[i].incoming() : t.packets[i].outgoing();
        if (!match)
            continue;
        if (last >= 0)
            sizes.push_back(static_cast<double>(static_cast<std::ptrdiff_t>(i) - last - 1));
        last = static_cast<std::ptrdiff_t>(i);
    }
    return sizes;
}

} // namespace detail

enum class IntervalVariant { i, ii, iii };

// Categories 5-7. Variant I (600): first 300 interval sizes per direction,
// zero-padded. Variant II (602): per direction a 300-bin histogram over
// sizes 0..299 (sizes beyond clamp into the last bin) plus the direction's
// interval total. Variant III (586): per direction a histogram over exact
// sizes 0..299 plus one overflow bin for >= 300, with bins {3-5}, {6-8},
// {9-13} merged; the 290 surviving individual bins come first, the three
// merged sums follow, so each block still sums to the direction's interval
// count. Incoming block precedes outgoing throughout.
inline std::vector<double> interval_features(const Trace& t, IntervalVariant variant) {
    auto in_sizes = detail::interval_sizes(t, +1);
    auto out_sizes = detail::interval_sizes(t, -1);

    if (variant == IntervalVariant::i) {
        std::vector<double> out(600, 0.0);
        for (std::size_t i = 0; i < in_sizes.size() && i < 300; ++i)
            out[i] = in_sizes[i];
        for (std::size_t i = 0; i < out_sizes.size() && i < 300; ++i)
            out[300 + i] = out_sizes[i];
        return out;
    }

    auto histogram = [](std::span<const double> sizes) {
        std::vector<double> h(300, 0.0);
        for (double s : sizes) {
            auto b = static_cast<std::size_t>(s);
            h[std::min<std::size_t>(b, 299)] += 1.0;
        }
        return h;
    };

    if (variant == IntervalVariant::ii) {
        std::vector<double> out;
        out.reserve(602);
        for (auto* sizes : {&in_sizes, &out_sizes}) {
            auto h = histogram(*sizes);
            out.insert(out.end(), h.begin(), h.end());
        }
        out.push_back(static_cast<double>(in_sizes.size()));
        out.push_back(static_cast<double>(out_sizes.size()));
        return out;
    }

    std::vector<double> out;
    out.reserve(586);
    for (auto* sizes : {&in_sizes, &out_sizes}) {
        std::vector<double> h(301, 0.0);
        for (double s : *sizes)
            h[std::min<std::size_t>(static_cast<std::size_t>(s), 300)] += 1.0;
        for (std::size_t b = 0; b < 301; ++b)
            if (b < 3 || b > 13)
                out.push_back(h[b]); // 290 individual bins
        out.push_back(h[3] + h[4] + h[5]);
        out.push_back(h[6] + h[7] + h[8]);
        out.push_back(h[9] + h[10] + h[11] + h[12] + h[13]);
    }
    return out;
}

// Category 8 (225): outgoing counts in the first 200 non-overlapping
// 30-packet chunks (zero-padded, later chunks ignored), std/mean/median/max
// of those 200, 20 sums over 10-chunk subsets, and the grand total.
inline std::vector<double> packet_distribution_features(const Trace& t) {
    std::vector<double> chunks(200, 0.0);
    for (std::size_t i = 0; i < t.size(); ++i) {
        std::size_t c = i / 30;
        if (c >= 200)
            break;
        if (t.packets[i].outgoing())
            chunks[c] += 1.0;
    }
    std::vector<double> out(chunks);
    out.push_back(population_std(chunks));
    out.push_back(mean_of(chunks));
    out.push_back(median_of(chunks));
    out.push_back(max_of(chunks));
    double total = 0.0;
    for (std::size_t g = 0; g < 20; ++g) {
        double s = 0.0;
        for (std::size_t i = 0; i < 10; ++i)
            s += chunks[g * 10 + i];
        out.push_back(s);
        total += s;
    }
    out.push_back(total);
    return out;
}

namespace detail {

struct BurstSummary {
    std::vector<double> sizes; // per burst: packet count in the burst direction
    std::vector<double> gaps;  // packets strictly between consecutive bursts
};

// A burst in direction d is a maximal run not interrupted by two adjacent
// packets of the opposite direction; its size is the count of d-packets in
// the run. Runs containing no d-packet are not bursts.
inline BurstSummary scan_bursts(const Trace& t, int direction) {
    BurstSummary s;
    auto is_dir = [&](const Packet& p) { return direction > 0 ? p.incoming() : p.outgoing(); };

    double count = 0.0;
    std::ptrdiff_t first_idx = -1, last_idx = -1, prev_last = -1;
    bool prev_opposite = false;
    auto flush = [&] {
        if (count > 0.0) {
            s.sizes.push_back(count);
            if (prev_last >= 0)
                s.gaps.push_back(static_cast<double>(first_idx - prev_last - 1));
            prev_last = last_idx;
        }
        count = 0.0;
        first_idx = last_idx = -1;
    };
    for (std::size_t i = 0; i < t.size(); ++i) {
        bool opposite = !is_dir(t.packets[i]);
        if (opposite && prev_opposite)
            flush();
        if (!opposite) {
            if (count == 0.0)
                first_idx = static_cast<std::ptrdiff_t>(i);
            last_idx = static_cast<std::ptrdiff_t>(i);
            count += 1.0;
        }
        prev_opposite = opposite;
    }
    flush();
    return s;
}

} // namespace detail

// Category 9 (11): outgoing-burst statistics -- max, mean, count, counts of
// bursts larger than 5/10/20 packets, std, median, min, the count of
// incoming bursts (same rule with directions swapped), and the mean gap in
// packets between consecutive outgoing bursts.
inline std::vector<double> burst_features(const Trace& t) {
    auto out_b = detail::scan_bursts(t, -1);
    auto in_b = detail::scan_bursts(t, +1);
    const auto& sz = out_b.sizes;
    auto count_over = [&](double lim) {
        double c = 0.0;
        for (double v : sz)
            if (v > lim)
                c += 1.0;
        return c;
    };
    return {
        max_of(sz),
        mean_of(sz),
        static_cast<double>(sz.size()),
        count_over(5),
        count_over(10),
        count_over(20),
        population_std(sz),
        median_of(sz),
        min_of(sz),
        static_cast<double>(in_b.sizes.size()),
        mean_of(out_b.gaps),
    };
}

// Category 10 (20): direction values (+-1) of the first 20 packets, 0-padded.
inline std::vector<double> first20_features(const Trace& t) {
    std::vector<double> out(20, 0.0);
    for (std::size_t i = 0; i < t.size() && i < 20; ++i)
        out[i] = t.packets[i].incoming() ? 1.0 : -1.0;
    return out;
}

// Categories 11/12 (2 each): incoming and outgoing counts among the first
// (resp. last) 30 packets.
inline std::vector<double> edge_count_features(const Trace& t, bool from_front) {
    std::size_t n = std::min<std::size_t>(30, t.size());
    std::size_t begin = from_front ? 0 : t.size() - n;
    double in_n = 0, out_n = 0;
    for (std::size_t i = begin; i < begin + n; ++i)
        (t.packets[i].incoming() ? in_n : out_n) += 1.0;
    return {in_n, out_n};
}

inline std::vector<double> first30_features(const Trace& t) { return edge_count_features(t, true); }
inline std::vector<double> last30_features(const Trace& t) { return edge_count_features(t, false); }

// Category 13 (126): packet counts per second for the first 100 seconds
// (bin s covers [s, s+1), zero-padded), std/mean/median/min/max of those
// 100, 20 sums over 5-second subsets, and the observed whole-second count.
inline std::vector<double> per_second_features(const Trace& t) {
    std::vector<double> bins(100, 0.0);
    double t0 = t.packets.empty() ? 0.0 : t.packets.front().time;
    for (const Packet& p : t.packets) {
        double s = std::floor(p.time - t0);
        if (s < 100.0) // times are non-decreasing, so s >= 0
            bins[static_cast<std::size_t>(s)] += 1.0;
    }
    std::vector<double> out(bins);
    out.push_back(population_std(bins));
    out.push_back(mean_of(bins));
    out.push_back(median_of(bins));
    out.push_back(min_of(bins));
    out.push_back(max_of(bins));
    for (std::size_t g = 0; g < 20; ++g) {
        double s = 0.0;
        for (std::size_t i = 0; i < 5; ++i)
            s += bins[g * 5 + i];
        out.push_back(s);
    }
    double last = t.packets.empty() ? 0.0 : t.packets.back().time - t0;
    out.push_back(std::floor(last) + 1.0);
    return out;
}

// Category 14 (104): the cumulative sum of signed lengths interpolated
// piecewise-linearly over packet index 1..m and sampled at n_points
// equidistant positions, followed by incoming/outgoing counts and
// incoming/outgoing size sums.
inline std::vector<double> cumul_features(const Trace& t, std::size_t n_points = 100) {
    if (n_points < 2)
        throw std::invalid_argument("cumul_features: need at least 2 sample points");
    std::size_t m = t.size();
    std::vector<double> cum(m, 0.0);
    double run = 0.0, in_n = 0, out_n = 0, in_b = 0, out_b = 0;
    for (std::size_t i = 0; i < m; ++i) {
        const Packet& p = t.packets[i];
        run += static_cast<double>(p.length);
        cum[i] = run;
        double mag = static_cast<double>(p.length < 0 ? -p.length : p.length);
        if (p.incoming()) {
            in_n += 1;
            in_b += mag;
        } else {
            out_n += 1;
            out_b += mag;
        }
    }
    std::vector<double> out;
    out.reserve(n_points + 4);
    for (std::size_t i = 0; i < n_points; ++i) {
        if (m == 1) {
            out.push_back(cum[0]);
            continue;
        }
        // position in packet-index space [1, m]
        double x = 1.0 + static_cast<double>(i) * static_cast<double>(m - 1) /
                             static_cast<double>(n_points - 1);
        auto lo = static_cast<std::size_t>(std::floor(x)) - 1;
        if (lo >= m - 1)
            lo = m - 2;
        double frac = x - static_cast<double>(lo + 1);
        out.push_back(cum[lo] + frac * (cum[lo + 1] - cum[lo]));
    }
    out.push_back(in_n);
    out.push_back(out_n);
    out.push_back(in_b);
    out.push_back(out_b);
    return out;
}

// Full fingerprint in category_layout() block order. The trace must be
// non-empty and in cell form (lengths +-1); feed byte traces through
// to_cell_sequence first.
inline FeatureVector extract_features(const Trace& t) {
    if (t.empty())
        throw std::invalid_argument("extract_features: empty trace");

    FeatureVector fv;
    fv.values.reserve(kFeatureCount);
    auto append = [&](std::vector<double>&& block, Category id) {
        if (block.size() != category_info(id).size)
            throw std::logic_error("extract_features: block size mismatch for " +
                                   std::string(category_info(id).name));
        fv.values.insert(fv.values.end(), block.begin(), block.end());
    };

    append(packet_count_features(t), Category::packet_count);
    append(timing_features(t), Category::timing);
    append(ngram_features(t), Category::ngram);
    append(transposition_features(t), Category::transposition);
    append(interval_features(t, IntervalVariant::i), Category::interval_i);
    append(interval_features(t, IntervalVariant::ii), Category::interval_ii);
    append(interval_features(t, IntervalVariant::iii), Category::interval_iii);
    append(packet_distribution_features(t), Category::packet_distribution);
    append(burst_features(t), Category::burst);
    append(first20_features(t), Category::first20);
    append(first30_features(t), Category::first30);
    append(last30_features(t), Category::last30);
    append(per_second_features(t), Category::per_second);
    append(cumul_features(t), Category::cumul);

    for (double v : fv.values)
        if (!std::isfinite(v))
            throw NumericError("extract_features: non-finite feature value");
    return fv;
}

} // namespace wfleak

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

#include "wfleak/features.hpp"

using namespace wfleak;

namespace {

Trace make_trace(const std::vector<double>& times, const std::vector<int>& dirs) {
    REQUIRE(times.size() == dirs.size());
    Trace t;
    for (std::size_t i = 0; i < times.size(); ++i)
        t.packets.push_back({times[i], dirs[i] > 0 ? 1 : -1});
    return t;
}

// Hand trace: directions o,o,i,o,i,i,o,o,o (o = outgoing = -1).
Trace hand_trace() {
    return make_trace({0.0, 0.1, 0.5, 0.9, 1.2, 1.6, 2.0, 2.1, 2.3},
                      {-1, -1, +1, -1, +1, +1, -1, -1, -1});
}

double block_sum(std::span<const double> s, std::size_t from, std::size_t count) {
    double total = 0.0;
    for (std::size_t i = from; i < from + count; ++i)
        total += s[i];
    return total;
}

void check_block(std::span<const double> got, const std::vector<double>& want, double eps) {
    REQUIRE(got.size() == want.size());
    for (std::size_t i = 0; i < want.size(); ++i) {
        INFO("index " << i);
        CHECK(got[i] == Catch::Approx(want[i]).margin(eps));
    }
}

Trace random_cell_trace(std::uint64_t seed, std::size_t m) {
    std::mt19937_64 eng(seed);
    Trace t;
    double now = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        now += static_cast<double>(eng() % 1000) * 5e-5;
        t.packets.push_back({now, (eng() & 1) ? 1 : -1});
    }
    return t;
}

} // namespace

TEST_CASE("category layout covers the full vector", "[features]") {
    const std::vector<std::size_t> sizes = {13, 24, 124, 604, 600, 602, 586,
                                            225, 11, 20, 2, 2, 126, 104};
    const auto& layout = category_layout();
    REQUIRE(layout.size() == sizes.size());
    std::size_t off = 0;
    for (std::size_t i = 0; i < layout.size(); ++i) {
        CHECK(layout[i].size == sizes[i]);
        CHECK(layout[i].offset == off);
        CHECK(static_cast<int>(layout[i].id) == static_cast<int>(i) + 1);
        off += layout[i].size;
    }
    CHECK(off == kFeatureCount);

    CHECK(feature_name(0) == "cat1_0");
    CHECK(feature_name(12) == "cat1_12");
    CHECK(feature_name(13) == "cat2_0");
    CHECK(feature_name(kFeatureCount - 1) == "cat14_103");
    CHECK_THROWS_AS(feature_name(kFeatureCount), std::out_of_range);

    CHECK(category_info(Category::burst).name == std::string("burst"));
    CHECK(category_info(Category::cumul).offset == kFeatureCount - 104);
}

TEST_CASE("round_to snaps half away from zero", "[features]") {
    CHECK(detail::round_to(12.0, 25.0) == 0.0);
    CHECK(detail::round_to(13.0, 25.0) == 25.0);
    CHECK(detail::round_to(37.0, 25.0) == 25.0);
    CHECK(detail::round_to(38.0, 25.0) == 50.0);
    CHECK(detail::round_to(62.5, 25.0) == 75.0);
    CHECK(detail::round_to(-37.5, 25.0) == -50.0);
}

TEST_CASE("packet count block on the hand trace", "[features]") {
    auto fv = extract_features(hand_trace());
    REQUIRE(fv.values.size() == kFeatureCount);
    check_block(fv.category(Category::packet_count),
                {9, 6, 3, 3.0 / 9.0, 6.0 / 9.0, 0, 0, 0, 9, 6, 3, 3.0 / 9.0, 6.0 / 9.0},
                1e-12);
}

TEST_CASE("timing block on the hand trace", "[features]") {
    auto fv = extract_features(hand_trace());
    // Frozen from the definitions: per stream (all, in, out) inter-arrival
    // max/mean/std/Q3, then transmission-time quartiles per stream.
    check_block(fv.category(Category::timing),
                {0.40000000000000013, 0.2875, 0.12686114456365274, 0.4,
                 0.7, 0.55, 0.1499999999999999, 0.625,
                 1.1, 0.45999999999999996, 0.41279534881100594, 0.8,
                 0.5, 1.2, 2.0, 2.3,
                 0.85, 1.2, 1.4, 1.6,
                 0.30000000000000004, 1.4500000000000002, 2.075, 2.3},
                1e-12);
}

TEST_CASE("ngram block counts subsequences", "[features]") {
    auto fv = extract_features(hand_trace());
    auto ng = fv.category(Category::ngram);
    // Direction bits (incoming = 1): 0,0,1,0,1,1,0,0,0.
    // Bigrams: 00 x3, 01 x2, 10 x2, 11 x1.
    CHECK(ng[0] == 3.0);
    CHECK(ng[1] == 2.0);
    CHECK(ng[2] == 2.0);
    CHECK(ng[3] == 1.0);
    // Trigrams: every pattern except 111 occurs exactly once.
    for (std::size_t i = 0; i < 7; ++i)
        CHECK(ng[4 + i] == 1.0);
    CHECK(ng[4 + 7] == 0.0);
    // Each n-block sums to m - n + 1.
    std::size_t off = 0;
    for (int n = 2; n <= 6; ++n) {
        std::size_t width = std::size_t{1} << n;
        CHECK(block_sum(ng, off, width) == Catch::Approx(9.0 - n + 1).margin(1e-12));
        off += width;
    }
    CHECK(off == 124);

    CHECK_THROWS_AS(ngram_features(hand_trace(), 0), std::invalid_argument);
    CHECK_THROWS_AS(ngram_features(hand_trace(), 21), std::invalid_argument);
    // Trace shorter than n yields an all-zero block.
    auto short_counts = ngram_features(make_trace({0.0}, {+1}), 4);
    CHECK(block_sum(short_counts, 0, short_counts.size()) == 0.0);
}

TEST_CASE("transposition block records packet positions", "[features]") {
    auto fv = extract_features(hand_trace());
    auto tr = fv.category(Category::transposition);
    // Incoming packets sit at indices 2,4,5; outgoing at 0,1,3,6,7,8.
    CHECK(tr[0] == 2.0);
    CHECK(tr[1] == 4.0);
    CHECK(tr[2] == 5.0);
    CHECK(block_sum(tr, 3, 297) == 0.0);
    check_block(tr.subspan(300, 6), {0, 1, 3, 6, 7, 8}, 0.0);
    CHECK(block_sum(tr, 306, 294) == 0.0);
    CHECK(tr[600] == Catch::Approx(11.0 / 3.0).margin(1e-12));
    CHECK(tr[601] == Catch::Approx(1.247219128924647).margin(1e-12));
    CHECK(tr[602] == Catch::Approx(25.0 / 6.0).margin(1e-12));
    CHECK(tr[603] == Catch::Approx(3.0230595245361758).margin(1e-12));
}

TEST_CASE("interval blocks agree on per-direction gaps", "[features]") {
    auto fv = extract_features(hand_trace());
    // Incoming interval sizes: (1, 0); outgoing: (0, 1, 2, 0, 0).
    auto v1 = fv.category(Category::interval_i);
    CHECK(v1[0] == 1.0);
    CHECK(v1[1] == 0.0);
    CHECK(block_sum(v1, 0, 300) == 1.0);
    check_block(v1.subspan(300, 5), {0, 1, 2, 0, 0}, 0.0);
    CHECK(block_sum(v1, 300, 300) == 3.0);

    auto v2 = fv.category(Category::interval_ii);
    CHECK(v2[0] == 1.0); // incoming size-0 gaps
    CHECK(v2[1] == 1.0); // incoming size-1 gaps
    CHECK(block_sum(v2, 0, 300) == 2.0);
    CHECK(v2[300] == 3.0); // outgoing size-0 gaps
    CHECK(v2[301] == 1.0);
    CHECK(v2[302] == 1.0);
    CHECK(block_sum(v2, 300, 300) == 5.0);
    CHECK(v2[600] == 2.0); // incoming interval count
    CHECK(v2[601] == 5.0);

    auto v3 = fv.category(Category::interval_iii);
    CHECK(v3[0] == 1.0);
    CHECK(v3[1] == 1.0);
    CHECK(block_sum(v3, 0, 293) == 2.0); // block still sums to the count
    CHECK(v3[293] == 3.0);
    CHECK(v3[294] == 1.0);
    CHECK(v3[295] == 1.0);
    CHECK(block_sum(v3, 293, 293) == 5.0);
}

TEST_CASE("interval histogram clamps large gaps into the last bin", "[features]") {
    // Two incoming packets separated by 400 outgoing ones.
    std::vector<double> times;
    std::vector<int> dirs;
    times.push_back(0.0);
    dirs.push_back(+1);
    for (int i = 0; i < 400; ++i) {
        times.push_back(0.01 * (i + 1));
        dirs.push_back(-1);
    }
    times.push_back(5.0);
    dirs.push_back(+1);
    auto v2 = interval_features(make_trace(times, dirs), IntervalVariant::ii);
    CHECK(v2[299] == 1.0); // clamped into bin 299
    CHECK(v2[600] == 1.0);
}

TEST_CASE("packet distribution block on the hand trace", "[features]") {
    auto fv = extract_features(hand_trace());
    auto pd = fv.category(Category::packet_distribution);
    CHECK(pd[0] == 6.0); // all nine packets fall into chunk 0
    CHECK(block_sum(pd, 1, 199) == 0.0);
    CHECK(pd[200] == Catch::Approx(0.4232020793899782).margin(1e-12));
    CHECK(pd[201] == Catch::Approx(0.03).margin(1e-12));
    CHECK(pd[202] == 0.0);
    CHECK(pd[203] == 6.0);
    CHECK(pd[204] == 6.0); // first 10-chunk sum
    CHECK(block_sum(pd, 205, 19) == 0.0);
    CHECK(pd[224] == 6.0);
}

TEST_CASE("burst block splits runs on double direction flips", "[features]") {
    auto fv = extract_features(hand_trace());
    // Outgoing runs o,o,i,o | o,o,o give two bursts of size 3 with a
    // 2-packet gap; the lone incoming burst has size 3.
    check_block(fv.category(Category::burst), {3, 3, 2, 0, 0, 0, 0, 3, 3, 1, 2}, 1e-12);

    // Single alternation never sees two adjacent opposite packets.
    auto alt = extract_features(make_trace({0, 1, 2, 3}, {-1, +1, -1, +1}));
    auto b = alt.category(Category::burst);
    CHECK(b[2] == 1.0); // one outgoing burst
    CHECK(b[0] == 2.0); // of size 2
    CHECK(b[9] == 1.0); // and one incoming burst
}

TEST_CASE("prefix and edge blocks on the hand trace", "[features]") {
    auto fv = extract_features(hand_trace());
    check_block(fv.category(Category::first20),
                {-1, -1, 1, -1, 1, 1, -1, -1, -1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0}, 0.0);
    check_block(fv.category(Category::first30), {3, 6}, 0.0);
    check_block(fv.category(Category::last30), {3, 6}, 0.0);
}

TEST_CASE("per second block on the hand trace", "[features]") {
    auto fv = extract_features(hand_trace());
    auto ps = fv.category(Category::per_second);
    CHECK(ps[0] == 4.0);
    CHECK(ps[1] == 2.0);
    CHECK(ps[2] == 3.0);
    CHECK(block_sum(ps, 3, 97) == 0.0);
    CHECK(ps[100] == Catch::Approx(0.5309425580983305).margin(1e-12));
    CHECK(ps[101] == Catch::Approx(0.09).margin(1e-12));
    CHECK(ps[102] == 0.0);
    CHECK(ps[103] == 0.0);
    CHECK(ps[104] == 4.0);
    CHECK(ps[105] == 9.0); // first 5-second sum
    CHECK(block_sum(ps, 106, 19) == 0.0);
    CHECK(ps[125] == 3.0); // floor(duration) + 1
}

TEST_CASE("cumulative block interpolates the signed running sum", "[features]") {
    auto fv = extract_features(hand_trace());
    auto cu = fv.category(Category::cumul);
    CHECK(cu[0] == -1.0);  // first sample hits the first packet
    CHECK(cu[99] == -3.0); // last sample hits the final sum
    for (std::size_t i = 0; i < 100; ++i) {
        CHECK(cu[i] <= 0.0);
        CHECK(cu[i] >= -3.0);
    }
    CHECK(cu[100] == 3.0); // incoming count
    CHECK(cu[101] == 6.0);
    CHECK(cu[102] == 3.0); // incoming size sum (cells)
    CHECK(cu[103] == 6.0);

    CHECK_THROWS_AS(cumul_features(hand_trace(), 1), std::invalid_argument);
}

TEST_CASE("single packet trace exercises empty stream fallbacks", "[features]") {
    auto fv = extract_features(make_trace({5.0}, {+1}));
    check_block(fv.category(Category::packet_count), {1, 0, 1, 1, 0, 0, 0, 0, 1, 0, 1, 1, 0},
                1e-12);
    for (double v : fv.category(Category::timing))
        CHECK(v == 0.0);
    check_block(fv.category(Category::burst), {0, 0, 0, 0, 0, 0, 0, 0, 0, 1, 0}, 0.0);
    auto cu = fv.category(Category::cumul);
    for (std::size_t i = 0; i < 100; ++i)
        CHECK(cu[i] == 1.0);
    auto ps = fv.category(Category::per_second);
    CHECK(ps[0] == 1.0);
    CHECK(ps[125] == 1.0);
}

TEST_CASE("empty trace is rejected", "[features]") {
    CHECK_THROWS_AS(extract_features(Trace{}), std::invalid_argument);
}

TEST_CASE("conservation invariants hold on random traces", "[features]") {
    for (std::uint64_t seed = 1; seed <= 25; ++seed) {
        std::size_t m = 1 + static_cast<std::size_t>((seed * 7919) % 400);
        Trace t = random_cell_trace(seed, m);
        FeatureVector fv;
        REQUIRE_NOTHROW(fv = extract_features(t));
        REQUIRE(fv.values.size() == kFeatureCount);

        INFO("seed " << seed << " size " << m);
        auto pc = fv.category(Category::packet_count);
        double dm = static_cast<double>(m);
        CHECK(pc[0] == dm);
        CHECK(pc[1] + pc[2] == dm);

        auto ng = fv.category(Category::ngram);
        std::size_t off = 0;
        for (int n = 2; n <= 6; ++n) {
            std::size_t width = std::size_t{1} << n;
            double expect = m >= static_cast<std::size_t>(n) ? dm - n + 1 : 0.0;
            CHECK(block_sum(ng, off, width) == expect);
            off += width;
        }

        // Histogram mass equals the recorded interval totals per direction.
        auto v2 = fv.category(Category::interval_ii);
        CHECK(block_sum(v2, 0, 300) == v2[600]);
        CHECK(block_sum(v2, 300, 300) == v2[601]);
        auto v3 = fv.category(Category::interval_iii);
        CHECK(block_sum(v3, 0, 293) == v2[600]);
        CHECK(block_sum(v3, 293, 293) == v2[601]);

        auto pd = fv.category(Category::packet_distribution);
        CHECK(block_sum(pd, 0, 200) == pd[224]);
        if (m <= 6000)
            CHECK(pd[224] == pc[1]); // all chunks observed: total = outgoing count

        auto ps = fv.category(Category::per_second);
        double in_first_100s = block_sum(ps, 0, 100);
        CHECK(block_sum(ps, 105, 20) == in_first_100s);
        CHECK(in_first_100s <= dm);

        auto f20 = fv.category(Category::first20);
        std::size_t nonzero = 0;
        for (double v : f20)
            nonzero += v != 0.0;
        CHECK(nonzero == std::min<std::size_t>(20, m));

        auto f30 = fv.category(Category::first30);
        CHECK(f30[0] + f30[1] == static_cast<double>(std::min<std::size_t>(30, m)));

        auto cu = fv.category(Category::cumul);
        CHECK(cu[99] == pc[2] - pc[1]); // final sum = in - out for cell traces
        CHECK(cu[100] == pc[2]);
        CHECK(cu[101] == pc[1]);
    }
}

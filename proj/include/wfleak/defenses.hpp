#pragma once

#include <cmath>
#include <cstdint>
#include <deque>
#include <stdexcept>
#include <vector>

#include "wfleak/trace.hpp"

namespace wfleak {

// Link-padding defense simulators. Both operate on cell-form traces
// (lengths +-1), are store-and-forward (a real cell arriving after its slot
// waits for the next same-direction slot; nothing is dropped), and are pure
// functions of (trace, params).

struct BufloParams {
    double tau = 10.0;       // minimum defended transmission time, seconds
    double rho = 0.02;       // inter-slot interval, seconds
    std::int64_t cell_size = 1; // emitted packet size (cell units by default)

    void validate() const {
        if (!(tau > 0.0) || !(rho > 0.0) || cell_size < 1)
            throw std::invalid_argument("buflo: params must be positive");
    }
};

struct TamarawParams {
    std::size_t L = 100;     // per-direction count padded up to a multiple of L
    double rho_out = 0.04;   // outgoing slot interval, seconds
    double rho_in = 0.012;   // incoming slot interval, seconds

    void validate() const {
        if (L < 1 || !(rho_out > 0.0) || !(rho_in > 0.0))
            throw std::invalid_argument("tamaraw: params must be positive");
    }
};

// Defended trace plus per-output-packet provenance (true = carries a real
// cell). On the wire real and dummy cells are indistinguishable; the mask
// exists so tests and overhead reports can verify scheduling behavior.
struct DefendedTrace {
    Trace trace;
    std::vector<std::uint8_t> carries_real;
};

namespace detail {

inline constexpr double kSlotEpsilon = 1e-9;

inline std::deque<double> direction_arrivals(const Trace& t, bool incoming) {
    std::deque<double> q;
    double t0 = t.packets.front().time;
    for (const Packet& p : t.packets)
        if (p.incoming() == incoming)
            q.push_back(p.time - t0);
    return q;
}

} // namespace detail

// Single fixed-size, fixed-interval stream with strictly alternating
// directions (slot 0 outgoing, slot 1 incoming, ...). Real cells occupy the
// first same-direction slot at or after their arrival, in arrival order;
// every other slot carries a dummy. Transmission runs until the later of
// tau and the last real cell, stopping at the following slot boundary.
inline DefendedTrace apply_buflo_annotated(const Trace& t, const BufloParams& params) {
    params.validate();
    if (t.empty())
        throw std::invalid_argument("apply_buflo: empty trace");

    auto out_q = detail::direction_arrivals(t, false);
    auto in_q = detail::direction_arrivals(t, true);

    DefendedTrace d;
    d.trace.website_id = t.website_id;
    d.trace.visit_id = t.visit_id;
    for (std::uint64_t k = 0;; ++k) {
        double slot_time = static_cast<double>(k) * params.rho;
        bool outgoing_slot = (k % 2 == 0);
        auto& q = outgoing_slot ? out_q : in_q;
        bool real = !q.empty() && q.front() <= slot_time + detail::kSlotEpsilon;
        if (real)
            q.pop_front(); // oldest queued real cell of this direction
        d.trace.packets.push_back(
            {slot_time, outgoing_slot ? -params.cell_size : params.cell_size});
        d.carries_real.push_back(real ? 1 : 0);
        if (slot_time + detail::kSlotEpsilon >= params.tau && out_q.empty() && in_q.empty())
            break;
    }
    return d;
}

inline Trace apply_buflo(const Trace& t, const BufloParams& params) {
    return apply_buflo_annotated(t, params).trace;
}

// Per-direction fixed-rate streams from t = 0; after a direction's real
// cells finish, it keeps sending padding in its slots until its total count
// reaches the next multiple of L (counts already at an exact multiple are
// left unchanged). Directions are merged by time; outgoing wins ties.
inline DefendedTrace apply_tamaraw_annotated(const Trace& t, const TamarawParams& params) {
    params.validate();
    if (t.empty())
        throw std::invalid_argument("apply_tamaraw: empty trace");

    struct Stream {
        std::vector<double> times;
        std::size_t real_count = 0;
    };
    auto schedule = [&](bool incoming, double rho) {
        Stream s;
        auto arrivals = detail::direction_arrivals(t, incoming);
        std::uint64_t next_slot = 0;
        for (double a : arrivals) {
            auto earliest =
                static_cast<std::uint64_t>(std::ceil(a / rho - detail::kSlotEpsilon));
            next_slot = std::max(next_slot, earliest);
            s.times.push_back(static_cast<double>(next_slot) * rho);
            ++next_slot;
        }
        s.real_count = s.times.size();
        std::size_t target = (s.real_count + params.L - 1) / params.L * params.L;
        while (s.times.size() < target) {
            s.times.push_back(static_cast<double>(next_slot) * rho);
            ++next_slot;
        }
        return s;
    };

    Stream out_s = schedule(false, params.rho_out);
    Stream in_s = schedule(true, params.rho_in);

    DefendedTrace d;
    d.trace.website_id = t.website_id;
    d.trace.visit_id = t.visit_id;
    std::size_t oi = 0, ii = 0;
    while (oi < out_s.times.size() || ii < in_s.times.size()) {
        bool take_out = oi < out_s.times.size() &&
                        (ii >= in_s.times.size() || out_s.times[oi] <= in_s.times[ii]);
        if (take_out) {
            d.trace.packets.push_back({out_s.times[oi], -1});
            d.carries_real.push_back(oi < out_s.real_count ? 1 : 0);
            ++oi;
        } else {
            d.trace.packets.push_back({in_s.times[ii], +1});
            d.carries_real.push_back(ii < in_s.real_count ? 1 : 0);
            ++ii;
        }
    }
    return d;
}

inline Trace apply_tamaraw(const Trace& t, const TamarawParams& params) {
    return apply_tamaraw_annotated(t, params).trace;
}

struct DefenseOverhead {
    std::size_t real_cells = 0;
    std::size_t defended_cells = 0;
    double bandwidth_ratio = 0.0;    // defended / real cell count
    double original_duration = 0.0;
    double defended_duration = 0.0;
    double latency_ratio = 0.0;      // defended / original duration; 0 when original is 0
};

inline DefenseOverhead compute_overhead(const Trace& original, const Trace& defended) {
    DefenseOverhead o;
    o.real_cells = original.size();
    o.defended_cells = defended.size();
    o.bandwidth_ratio = o.real_cells > 0
                            ? static_cast<double>(o.defended_cells) /
                                  static_cast<double>(o.real_cells)
                            : 0.0;
    o.original_duration = original.duration();
    o.defended_duration = defended.duration();
    o.latency_ratio =
        o.original_duration > 0.0 ? o.defended_duration / o.original_duration : 0.0;
    return o;
}

} // namespace wfleak

#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>

namespace wfleak {

// splitmix64 finalizer; used to derive well-separated seeds from a master
// seed plus a structural path (class index, sample index, trial, ...) so the
// random stream consumed by one unit of work never depends on scheduling.
constexpr std::uint64_t mix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> path) {
    std::uint64_t s = mix64(master);
    for (std::uint64_t p : path)
        s = mix64(s ^ mix64(p));
    return s;
}

// Deterministic generator wrapper. All randomness in the library flows
// through this class; nothing uses std::random_device or distribution
// objects whose output is implementation-defined.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // Uniform on [0, 1), 53-bit resolution.
    double next_unit() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    // Uniform on [0, n); unbiased via 128-bit multiply-shift rejection.
    std::uint64_t next_below(std::uint64_t n) {
        if (n == 0)
            return 0;
        while (true) {
            std::uint64_t x = engine_();
            __uint128_t m = static_cast<__uint128_t>(x) * n;
            auto lo = static_cast<std::uint64_t>(m);
            if (lo >= n || lo >= (0ULL - n) % n)
                return static_cast<std::uint64_t>(m >> 64);
        }
    }

    // Standard normal via Box-Muller; one variate per call so the stream
    // layout is independent of how callers interleave draws.
    double next_gaussian() {
        double u1 = next_unit();
        double u2 = next_unit();
        double r = std::sqrt(-2.0 * std::log1p(-u1)); // log(1-u1), never log(0)
        return r * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

private:
    std::mt19937_64 engine_;
};

} // namespace wfleak

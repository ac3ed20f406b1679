#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "wfleak/errors.hpp"
#include "wfleak/random.hpp"
#include "wfleak/stats.hpp"
#include "wfleak/version.hpp"

namespace wfleak {

// Per-dimension density regime. A value is "discrete" when it repeats more
// than beta times in the sample (exact equality); a feature whose samples
// are partly repeated and partly unique is "mixed".
enum class NatureTag { continuous, discrete, mixed };

struct FeatureNature {
    NatureTag tag = NatureTag::continuous;
    std::vector<double> discrete_values; // sorted, unique

    bool is_discrete_value(double v) const {
        return std::binary_search(discrete_values.begin(), discrete_values.end(), v);
    }
};

// Bandwidth of the kernels placed on discrete observations. The constant is
// small enough that discrete spikes never blur together; its exact value
// does not influence the measurement because discrete draws return the
// observation exactly.
inline constexpr double kDiscreteBandwidth = 0.001;

inline FeatureNature classify_nature(std::span<const double> samples, std::size_t beta = 10,
                                     std::span<const double> template_values = {}) {
    if (samples.size() < 2)
        throw std::invalid_argument("classify_nature: need at least 2 samples");

    std::map<double, std::size_t> counts;
    for (double v : samples)
        ++counts[v];

    FeatureNature nature;
    for (const auto& [v, c] : counts)
        if (c > beta)
            nature.discrete_values.push_back(v);
    for (double v : template_values)
        nature.discrete_values.push_back(v); // template patterns are discrete by fiat
    std::sort(nature.discrete_values.begin(), nature.discrete_values.end());
    nature.discrete_values.erase(
        std::unique(nature.discrete_values.begin(), nature.discrete_values.end()),
        nature.discrete_values.end());

    std::size_t discrete_obs = 0;
    for (const auto& [v, c] : counts)
        if (nature.is_discrete_value(v))
            discrete_obs += c;

    if (discrete_obs == samples.size())
        nature.tag = NatureTag::discrete;
    else if (discrete_obs == 0)
        nature.tag = NatureTag::continuous;
    else
        nature.tag = NatureTag::mixed;
    return nature;
}

// Closed-form fallback: 1.06 * sigma_hat * m^(-1/5), sample std.
inline double rule_of_thumb_bandwidth(std::span<const double> samples) {
    if (samples.size() < 2)
        throw std::invalid_argument("rule_of_thumb_bandwidth: need at least 2 samples");
    return 1.06 * sample_std(samples) *
           std::pow(static_cast<double>(samples.size()), -0.2);
}

namespace detail {

inline constexpr double kInvSqrt2Pi = 0.3989422804014326779;

// phi^(4) and phi^(6): 4th and 6th derivatives of the standard normal
// density, used by the plug-in functionals.
inline double phi4(double x) {
    double x2 = x * x;
    return (x2 * x2 - 6.0 * x2 + 3.0) * kInvSqrt2Pi * std::exp(-0.5 * x2);
}

inline double phi6(double x) {
    double x2 = x * x;
    return ((x2 * x2 * x2) - 15.0 * x2 * x2 + 45.0 * x2 - 15.0) * kInvSqrt2Pi *
           std::exp(-0.5 * x2);
}

// S(h) = {n(n-1)}^-1 h^-5 sum_{i,j} phi4((xi-xj)/h); diagonal included.
inline double sd_functional(std::span<const double> x, double h) {
    std::size_t n = x.size();
    double sum = static_cast<double>(n) * 3.0 * kInvSqrt2Pi; // phi4(0) terms
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            sum += 2.0 * phi4((x[i] - x[j]) / h);
    double nn = static_cast<double>(n) * static_cast<double>(n - 1);
    return sum / (nn * h * h * h * h * h);
}

// T(h) = -{n(n-1)}^-1 h^-7 sum_{i,j} phi6((xi-xj)/h); diagonal included.
inline double td_functional(std::span<const double> x, double h) {
    std::size_t n = x.size();
    double sum = static_cast<double>(n) * (-15.0) * kInvSqrt2Pi; // phi6(0) terms
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            sum += 2.0 * phi6((x[i] - x[j]) / h);
    double nn = static_cast<double>(n) * static_cast<double>(n - 1);
    return -sum / (nn * h * h * h * h * h * h * h);
}

} // namespace detail

// Sheather-Jones solve-the-equation plug-in bandwidth. Returns nullopt on
// any numerical failure (degenerate scale estimate, negative functionals,
// no bracketed root); callers fall back to the rule of thumb.
inline std::optional<double> sheather_jones_bandwidth(std::span<const double> samples) {
    std::size_t n = samples.size();
    if (n < 2)
        return std::nullopt;

    double sd = sample_std(samples);
    double iqr = quantile_of(samples, 0.75) - quantile_of(samples, 0.25);
    double lambda = std::min(sd, iqr / 1.349);
    if (!(lambda > 0.0) || !std::isfinite(lambda))
        return std::nullopt;

    double nd = static_cast<double>(n);
    double a = 0.920 * lambda * std::pow(nd, -1.0 / 7.0);
    double b = 0.912 * lambda * std::pow(nd, -1.0 / 9.0);

    double td = detail::td_functional(samples, b);
    double sda = detail::sd_functional(samples, a);
    if (!(td > 0.0) || !(sda > 0.0) || !std::isfinite(td) || !std::isfinite(sda))
        return std::nullopt;

    // alpha2(h): pilot bandwidth for the S functional inside the fixed-point
    // equation; 1.357 and the exponents come from the Gaussian-kernel form.
    double ratio = 1.357 * std::pow(sda / td, 1.0 / 7.0);
    auto fixed_point = [&](double h) {
        double alpha2 = ratio * std::pow(h, 5.0 / 7.0);
        double s = detail::sd_functional(samples, alpha2);
        if (!(s > 0.0) || !std::isfinite(s))
            return std::numeric_limits<double>::quiet_NaN();
        // Gaussian kernel: R(K) = 1/(2 sqrt(pi)), kernel variance 1.
        double c1 = 1.0 / (2.0 * std::sqrt(3.14159265358979323846) * nd);
        return std::pow(c1 / s, 0.2) - h;
    };

    double hmax = 1.144 * sd * std::pow(nd, -0.2);
    double lo = 0.1 * hmax, hi = hmax;
    double flo = fixed_point(lo), fhi = fixed_point(hi);
    for (int widen = 0; widen < 40 && (std::isnan(flo) || std::isnan(fhi) || flo * fhi > 0.0);
         ++widen) {
        lo *= 0.5;
        hi *= 1.4;
        flo = fixed_point(lo);
        fhi = fixed_point(hi);
    }
    if (std::isnan(flo) || std::isnan(fhi) || flo * fhi > 0.0)
        return std::nullopt;

    for (int it = 0; it < 80; ++it) {
        double mid = 0.5 * (lo + hi);
        double fmid = fixed_point(mid);
        if (std::isnan(fmid))
            return std::nullopt;
        if ((flo <= 0.0) == (fmid <= 0.0)) {
            lo = mid;
            flo = fmid;
        } else {
            hi = mid;
        }
        if (hi - lo < 1e-9 * hmax)
            break;
    }
    double h = 0.5 * (lo + hi);
    return (h > 0.0 && std::isfinite(h)) ? std::optional<double>(h) : std::nullopt;
}

struct BandwidthResult {
    enum class Method { plug_in, rule_of_thumb, discrete_constant };
    double value = kDiscreteBandwidth;
    Method method = Method::discrete_constant;
    bool degenerate = false; // continuous data with zero spread fell through
};

// Bandwidth for one dimension: plug-in for continuous data, rule of thumb
// when the plug-in fails, the small constant for discrete data. Continuous
// samples with zero spread cannot carry a continuous kernel at all; they
// fall through to discrete handling with the degenerate flag set.
inline BandwidthResult select_bandwidth(std::span<const double> samples,
                                        const FeatureNature& nature) {
    BandwidthResult r;
    if (nature.tag == NatureTag::discrete) {
        return r; // constant 0.001
    }
    if (samples.size() < 2)
        throw std::invalid_argument("select_bandwidth: need at least 2 continuous samples");
    if (auto h = sheather_jones_bandwidth(samples)) {
        r.value = *h;
        r.method = BandwidthResult::Method::plug_in;
        return r;
    }
    double rot = rule_of_thumb_bandwidth(samples);
    if (rot > 0.0 && std::isfinite(rot)) {
        r.value = rot;
        r.method = BandwidthResult::Method::rule_of_thumb;
        return r;
    }
    r.value = kDiscreteBandwidth;
    r.method = BandwidthResult::Method::discrete_constant;
    r.degenerate = true;
    return r;
}

// Product-Gaussian kernel mixture with one kernel per observation and
// per-observation, per-dimension bandwidths. Immutable once built; pdf and
// sample are safe to call concurrently.
struct KernelModel {
    std::size_t dim = 0;
    std::size_t count = 0;
    std::vector<double> observations;       // count x dim, row-major
    std::vector<double> bandwidths;         // count x dim
    std::vector<std::uint8_t> discrete_dim; // count x dim: 1 = exact-return dimension
    std::vector<FeatureNature> natures;     // dim
    std::vector<double> log_norm;           // per observation: sum_j log(h_cj)

    double obs(std::size_t c, std::size_t j) const { return observations[c * dim + j]; }
    double bw(std::size_t c, std::size_t j) const { return bandwidths[c * dim + j]; }

    void rebuild_cache() {
        log_norm.assign(count, 0.0);
        for (std::size_t c = 0; c < count; ++c)
            for (std::size_t j = 0; j < dim; ++j)
                log_norm[c] += std::log(bw(c, j));
    }

    void validate() const {
        if (dim == 0 || count == 0)
            throw std::invalid_argument("kernel model: empty");
        if (observations.size() != count * dim || bandwidths.size() != count * dim ||
            discrete_dim.size() != count * dim || natures.size() != dim)
            throw std::invalid_argument("kernel model: inconsistent shapes");
        for (double h : bandwidths)
            if (!(h > 0.0) || !std::isfinite(h))
                throw std::invalid_argument("kernel model: non-positive bandwidth");
    }

    // Natural-log density via log-sum-exp over observations; underflow-safe.
    double log_pdf(std::span<const double> point) const {
        if (point.size() != dim)
            throw std::invalid_argument("kernel model: point dimension mismatch");
        constexpr double kHalfLog2Pi = 0.91893853320467274178; // log(sqrt(2*pi))
        double best = -std::numeric_limits<double>::infinity();
        std::vector<double> terms(count);
        for (std::size_t c = 0; c < count; ++c) {
            double e = -log_norm[c] - static_cast<double>(dim) * kHalfLog2Pi;
            for (std::size_t j = 0; j < dim; ++j) {
                double z = (point[j] - obs(c, j)) / bw(c, j);
                e -= 0.5 * z * z;
            }
            terms[c] = e;
            best = std::max(best, e);
        }
        if (!std::isfinite(best))
            return -std::numeric_limits<double>::infinity();
        double acc = 0.0;
        for (double e : terms)
            acc += std::exp(e - best);
        return best + std::log(acc) - std::log(static_cast<double>(count));
    }

    double pdf(std::span<const double> point) const { return std::exp(log_pdf(point)); }

    // Draw one point: pick an observation uniformly, add Gaussian noise on
    // continuous dimensions, return discrete dimensions exactly.
    void sample_into(Rng& rng, std::span<double> out_point) const {
        if (out_point.size() != dim)
            throw std::invalid_argument("kernel model: sample dimension mismatch");
        std::size_t c = static_cast<std::size_t>(rng.next_below(count));
        for (std::size_t j = 0; j < dim; ++j) {
            double v = obs(c, j);
            if (!discrete_dim[c * dim + j])
                v += bw(c, j) * rng.next_gaussian();
            out_point[j] = v;
        }
    }

    std::vector<double> sample(Rng& rng) const {
        std::vector<double> p(dim);
        sample_into(rng, p);
        return p;
    }
};

// Fits the two-regime adaptive model: per dimension, observations whose
// value lies in the dimension's discrete set get the constant bandwidth and
// exact-return sampling; the rest share that dimension's continuous
// bandwidth (plug-in, falling back per select_bandwidth).
inline KernelModel fit_akde(const std::vector<std::vector<double>>& rows,
                            std::span<const FeatureNature> natures) {
    if (rows.empty())
        throw std::invalid_argument("fit_akde: empty sample matrix");
    std::size_t d = rows.front().size();
    if (d == 0 || natures.size() != d)
        throw std::invalid_argument("fit_akde: dimension/natures mismatch");
    for (const auto& r : rows)
        if (r.size() != d)
            throw std::invalid_argument("fit_akde: ragged sample matrix");

    KernelModel m;
    m.dim = d;
    m.count = rows.size();
    m.natures.assign(natures.begin(), natures.end());
    m.observations.resize(m.count * d);
    m.bandwidths.assign(m.count * d, kDiscreteBandwidth);
    m.discrete_dim.assign(m.count * d, 1);

    for (std::size_t c = 0; c < m.count; ++c)
        for (std::size_t j = 0; j < d; ++j)
            m.observations[c * d + j] = rows[c][j];

    for (std::size_t j = 0; j < d; ++j) {
        const FeatureNature& nat = natures[j];
        std::vector<double> continuous;
        for (std::size_t c = 0; c < m.count; ++c)
            if (!nat.is_discrete_value(rows[c][j]))
                continuous.push_back(rows[c][j]);
        if (nat.tag == NatureTag::discrete || continuous.empty())
            continue; // whole dimension stays on the discrete constant

        BandwidthResult bw;
        if (continuous.size() < 2) {
            bw.degenerate = true; // single stray value: no continuous scale
        } else {
            FeatureNature as_continuous;
            as_continuous.tag = NatureTag::continuous;
            bw = select_bandwidth(continuous, as_continuous);
        }
        if (bw.degenerate)
            continue;
        for (std::size_t c = 0; c < m.count; ++c) {
            if (!nat.is_discrete_value(rows[c][j])) {
                m.bandwidths[c * d + j] = bw.value;
                m.discrete_dim[c * d + j] = 0;
            }
        }
    }

    m.rebuild_cache();
    m.validate();
    return m;
}

// Convenience for single-feature models.
inline KernelModel fit_akde_1d(std::span<const double> samples, const FeatureNature& nature) {
    std::vector<std::vector<double>> rows;
    rows.reserve(samples.size());
    for (double v : samples)
        rows.push_back({v});
    return fit_akde(rows, std::span<const FeatureNature>(&nature, 1));
}

inline nlohmann::json model_to_json(const KernelModel& m) {
    nlohmann::json natures = nlohmann::json::array();
    for (const auto& n : m.natures) {
        const char* tag = n.tag == NatureTag::continuous ? "continuous"
                          : n.tag == NatureTag::discrete ? "discrete"
                                                         : "mixed";
        natures.push_back({{"tag", tag}, {"discrete_values", n.discrete_values}});
    }
    return {{"model_version", kLayoutVersion},
            {"dim", m.dim},
            {"count", m.count},
            {"observations", m.observations},
            {"bandwidths", m.bandwidths},
            {"discrete_dim", m.discrete_dim},
            {"natures", natures}};
}

inline KernelModel model_from_json(const nlohmann::json& j) {
    KernelModel m;
    try {
        m.dim = j.at("dim").get<std::size_t>();
        m.count = j.at("count").get<std::size_t>();
        m.observations = j.at("observations").get<std::vector<double>>();
        m.bandwidths = j.at("bandwidths").get<std::vector<double>>();
        m.discrete_dim = j.at("discrete_dim").get<std::vector<std::uint8_t>>();
        for (const auto& n : j.at("natures")) {
            FeatureNature nat;
            std::string tag = n.at("tag").get<std::string>();
            nat.tag = tag == "continuous" ? NatureTag::continuous
                      : tag == "discrete" ? NatureTag::discrete
                                          : NatureTag::mixed;
            nat.discrete_values = n.at("discrete_values").get<std::vector<double>>();
            m.natures.push_back(std::move(nat));
        }
    } catch (const nlohmann::json::exception& ex) {
        throw DataError(std::string("kernel model json: ") + ex.what());
    }
    m.rebuild_cache();
    m.validate();
    return m;
}

} // namespace wfleak

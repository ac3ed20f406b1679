#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "wfleak/errors.hpp"

namespace wfleak {

// All entropies and mutual informations are in bits (log base 2), with the
// usual convention 0 * log(0) = 0.
inline double xlog2x(double p) {
    return p > 0.0 ? p * std::log2(p) : 0.0;
}

// Finite probability mass function. Stored fully normalized.
struct DiscreteDistribution {
    std::vector<double> p;

    std::size_t size() const { return p.size(); }
    double operator[](std::size_t i) const { return p[i]; }

    void validate() const {
        if (p.empty())
            throw std::invalid_argument("distribution: empty support");
        double s = 0.0;
        for (double v : p) {
            if (!(v >= 0.0) || !std::isfinite(v))
                throw std::invalid_argument("distribution: negative or non-finite mass");
            s += v;
        }
        if (std::fabs(s - 1.0) > 1e-9)
            throw std::invalid_argument("distribution: mass does not sum to 1");
    }

    static DiscreteDistribution uniform(std::size_t n) {
        if (n == 0)
            throw std::invalid_argument("distribution: empty support");
        DiscreteDistribution d;
        d.p.assign(n, 1.0 / static_cast<double>(n));
        return d;
    }

    // Normalizes arbitrary non-negative weights.
    static DiscreteDistribution from_weights(std::span<const double> w) {
        DiscreteDistribution d;
        d.p.assign(w.begin(), w.end());
        double s = 0.0;
        for (double v : d.p) {
            if (!(v >= 0.0) || !std::isfinite(v))
                throw std::invalid_argument("distribution: negative or non-finite weight");
            s += v;
        }
        if (s <= 0.0)
            throw std::invalid_argument("distribution: zero total weight");
        for (double& v : d.p)
            v /= s;
        return d;
    }

    static DiscreteDistribution from_weights(std::initializer_list<double> w) {
        return from_weights(std::span<const double>(w.begin(), w.size()));
    }
};

inline double entropy_bits(std::span<const double> p) {
    double h = 0.0;
    for (double v : p)
        h -= xlog2x(v);
    return h;
}

inline double entropy_bits(const DiscreteDistribution& d) {
    return entropy_bits(std::span<const double>(d.p));
}

// Joint pmf over (row class, column symbol), row-major.
struct JointDistribution {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> p;

    JointDistribution() = default;
    JointDistribution(std::size_t r, std::size_t c) : rows(r), cols(c), p(r * c, 0.0) {}

    double& at(std::size_t r, std::size_t c) { return p[r * cols + c]; }
    double at(std::size_t r, std::size_t c) const { return p[r * cols + c]; }

    void validate() const {
        if (rows == 0 || cols == 0 || p.size() != rows * cols)
            throw std::invalid_argument("joint: bad shape");
        double s = 0.0;
        for (double v : p) {
            if (!(v >= 0.0) || !std::isfinite(v))
                throw std::invalid_argument("joint: negative or non-finite mass");
            s += v;
        }
        if (std::fabs(s - 1.0) > 1e-9)
            throw std::invalid_argument("joint: mass does not sum to 1");
    }

    DiscreteDistribution row_marginal() const {
        DiscreteDistribution d;
        d.p.assign(rows, 0.0);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c)
                d.p[r] += at(r, c);
        return d;
    }

    DiscreteDistribution col_marginal() const {
        DiscreteDistribution d;
        d.p.assign(cols, 0.0);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c)
                d.p[c] += at(r, c);
        return d;
    }
};

// Exact mutual information of a finite joint pmf:
// I = H(row) - sum_c p(c) H(row | c). Serves as the ground-truth oracle the
// Monte Carlo estimator is checked against.
inline double exact_mi_bits(const JointDistribution& j) {
    j.validate();
    auto rm = j.row_marginal();
    double h_row = entropy_bits(rm);
    double h_cond = 0.0;
    for (std::size_t c = 0; c < j.cols; ++c) {
        double pc = 0.0;
        for (std::size_t r = 0; r < j.rows; ++r)
            pc += j.at(r, c);
        if (pc <= 0.0)
            continue;
        double h = 0.0;
        for (std::size_t r = 0; r < j.rows; ++r)
            h -= xlog2x(j.at(r, c) / pc);
        h_cond += pc * h;
    }
    double mi = h_row - h_cond;
    return mi < 0.0 ? 0.0 : mi; // guard against -0 rounding residue
}

// ---------------------------------------------------------------------------
// Pairwise normalized mutual information between feature sample columns.
// ---------------------------------------------------------------------------

// Rank-based bin labels. With at most `max_bins` distinct values the mapping
// is the identity on distinct values (exact agreement for discrete data);
// otherwise samples are split at empirical quantile boundaries. Labels depend
// only on the ordering of values, so any strictly increasing transform of the
// input yields identical labels.
inline std::vector<int> quantile_bins(std::span<const double> x, std::size_t max_bins) {
    std::size_t m = x.size();
    if (m == 0)
        return {};
    std::size_t bins = std::min<std::size_t>(max_bins,
        static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(m)))));
    if (bins == 0)
        bins = 1;

    std::vector<double> sorted(x.begin(), x.end());
    std::sort(sorted.begin(), sorted.end());
    std::vector<double> distinct(sorted);
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());

    std::vector<int> labels(m);
    if (distinct.size() <= bins) {
        for (std::size_t i = 0; i < m; ++i) {
            auto it = std::lower_bound(distinct.begin(), distinct.end(), x[i]);
            labels[i] = static_cast<int>(it - distinct.begin());
        }
        return labels;
    }

    // Interior quantile cut points; duplicates collapse, which merely merges
    // adjacent bins for heavily tied data.
    std::vector<double> cuts;
    for (std::size_t b = 1; b < bins; ++b) {
        std::size_t idx = (b * m) / bins;
        cuts.push_back(sorted[std::min(idx, m - 1)]);
    }
    cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
    for (std::size_t i = 0; i < m; ++i) {
        auto it = std::upper_bound(cuts.begin(), cuts.end(), x[i]);
        labels[i] = static_cast<int>(it - cuts.begin());
    }
    return labels;
}

struct NmiOptions {
    std::size_t max_bins = 30;
};

struct NmiResult {
    double value = 0.0;
    bool degenerate = false; // a constant column: similarity undefined, reported as 0
};

// Kvalseth's NMI_max = I / max(H(x), H(y)) on already-binned label columns.
inline NmiResult nmi_from_labels(std::span<const int> lx, std::span<const int> ly) {
    if (lx.size() != ly.size())
        throw std::invalid_argument("nmi: label length mismatch");
    if (lx.size() < 2)
        throw std::invalid_argument("nmi: need at least 2 samples");
    int nx = *std::max_element(lx.begin(), lx.end()) + 1;
    int ny = *std::max_element(ly.begin(), ly.end()) + 1;

    JointDistribution j(static_cast<std::size_t>(nx), static_cast<std::size_t>(ny));
    double w = 1.0 / static_cast<double>(lx.size());
    for (std::size_t i = 0; i < lx.size(); ++i)
        j.at(static_cast<std::size_t>(lx[i]), static_cast<std::size_t>(ly[i])) += w;

    double hx = entropy_bits(j.row_marginal());
    double hy = entropy_bits(j.col_marginal());
    if (hx <= 0.0 || hy <= 0.0)
        return {0.0, true};
    double v = exact_mi_bits(j) / std::max(hx, hy);
    return {std::clamp(v, 0.0, 1.0), false};
}

// Kvalseth's NMI_max over raw sample columns, binned by quantile_bins.
inline NmiResult nmi_max(std::span<const double> x, std::span<const double> y,
                         const NmiOptions& opts = {}) {
    if (x.size() != y.size())
        throw std::invalid_argument("nmi_max: length mismatch");
    if (x.size() < 2)
        throw std::invalid_argument("nmi_max: need at least 2 samples");
    auto lx = quantile_bins(x, opts.max_bins);
    auto ly = quantile_bins(y, opts.max_bins);
    return nmi_from_labels(lx, ly);
}

// Symmetric pairwise NMI matrix with per-column degeneracy flags.
struct NmiMatrix {
    std::size_t size = 0;
    std::vector<double> values;       // size x size, row-major, symmetric
    std::vector<std::uint8_t> degenerate; // per column

    double at(std::size_t i, std::size_t k) const { return values[i * size + k]; }
    double distance_at(std::size_t i, std::size_t k) const { return 1.0 - at(i, k); }
};

inline NmiMatrix nmi_matrix(const std::vector<std::vector<double>>& columns,
                            const NmiOptions& opts = {}) {
    NmiMatrix m;
    m.size = columns.size();
    m.values.assign(m.size * m.size, 0.0);
    m.degenerate.assign(m.size, 0);
    for (std::size_t i = 0; i < m.size; ++i) {
        bool constant = true;
        for (double v : columns[i])
            if (v != columns[i].front()) { constant = false; break; }
        m.degenerate[i] = constant ? 1 : 0;
    }
    for (std::size_t i = 0; i < m.size; ++i) {
        m.values[i * m.size + i] = m.degenerate[i] ? 0.0 : 1.0;
        for (std::size_t k = i + 1; k < m.size; ++k) {
            auto r = nmi_max(columns[i], columns[k], opts);
            m.values[i * m.size + k] = r.value;
            m.values[k * m.size + i] = r.value; // computed once: exact symmetry
        }
    }
    return m;
}

} // namespace wfleak

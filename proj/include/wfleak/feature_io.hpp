#pragma once

#include <charconv>
#include <cstdio>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "wfleak/errors.hpp"
#include "wfleak/features.hpp"
#include "wfleak/parallel.hpp"
#include "wfleak/trace.hpp"
#include "wfleak/version.hpp"

namespace wfleak {

// Extracted fingerprints for a whole corpus, grouped per website in the
// same order as the source Dataset.
struct FeatureTable {
    std::vector<std::string> websites;
    std::vector<std::vector<std::string>> visit_ids; // aligned with websites
    std::vector<std::vector<FeatureVector>> rows;    // aligned with websites

    std::size_t site_count() const { return websites.size(); }

    std::size_t total_rows() const {
        std::size_t n = 0;
        for (const auto& v : rows)
            n += v.size();
        return n;
    }

    // One feature's observed values for one website, in visit order.
    std::vector<double> column(std::size_t site, std::size_t feature) const {
        std::vector<double> out;
        out.reserve(rows[site].size());
        for (const auto& fv : rows[site])
            out.push_back(fv.values[feature]);
        return out;
    }

    // One feature's values pooled over every website, site-major order.
    std::vector<double> pooled_column(std::size_t feature) const {
        std::vector<double> out;
        out.reserve(total_rows());
        for (const auto& site_rows : rows)
            for (const auto& fv : site_rows)
                out.push_back(fv.values[feature]);
        return out;
    }
};

// Extracts every visit's fingerprint; visits are independent, so the work
// parallelizes over a flat row index with deterministic placement.
inline FeatureTable extract_table(const Dataset& ds, unsigned threads = 1) {
    FeatureTable t;
    t.websites = ds.websites;
    t.visit_ids.resize(ds.websites.size());
    t.rows.resize(ds.websites.size());

    std::vector<std::pair<std::size_t, std::size_t>> flat;
    for (std::size_t s = 0; s < ds.traces.size(); ++s) {
        t.visit_ids[s].resize(ds.traces[s].size());
        t.rows[s].resize(ds.traces[s].size());
        for (std::size_t v = 0; v < ds.traces[s].size(); ++v)
            flat.emplace_back(s, v);
    }
    parallel_for(flat.size(), threads, [&](std::size_t i) {
        auto [s, v] = flat[i];
        t.visit_ids[s][v] = ds.traces[s][v].visit_id;
        t.rows[s][v] = extract_features(ds.traces[s][v]);
    });
    return t;
}

namespace detail {

// Shortest decimal form that round-trips a double; keeps CSV output stable
// across runs and platforms with the same FP behavior.
inline std::string format_double(double v) {
    char buf[64];
    int n = std::snprintf(buf, sizeof buf, "%.17g", v);
    double back = 0.0;
    for (int prec = 1; prec <= 16; ++prec) {
        int k = std::snprintf(buf, sizeof buf, "%.*g", prec, v);
        std::from_chars(buf, buf + k, back);
        if (back == v)
            return std::string(buf, static_cast<std::size_t>(k));
    }
    n = std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf, static_cast<std::size_t>(n));
}

} // namespace detail

// CSV layout: header "website_id,visit_id,cat1_0,...", one row per visit.
inline void write_feature_csv(const FeatureTable& t, std::ostream& out) {
    out << "website_id,visit_id";
    for (std::size_t f = 0; f < kFeatureCount; ++f)
        out << ',' << feature_name(f);
    out << '\n';
    for (std::size_t s = 0; s < t.site_count(); ++s) {
        for (std::size_t v = 0; v < t.rows[s].size(); ++v) {
            out << t.websites[s] << ',' << t.visit_ids[s][v];
            for (double x : t.rows[s][v].values)
                out << ',' << detail::format_double(x);
            out << '\n';
        }
    }
}

inline FeatureTable read_feature_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line))
        throw DataError("feature csv: empty input");
    // Validate the header shape once; column names are fixed by the layout.
    {
        std::size_t cols = 1;
        for (char c : line)
            if (c == ',')
                ++cols;
        if (cols != kFeatureCount + 2)
            throw DataError("feature csv: header has " + std::to_string(cols) +
                            " columns, expected " + std::to_string(kFeatureCount + 2));
    }

    FeatureTable t;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty())
            continue;
        std::string_view sv(line);
        if (!sv.empty() && sv.back() == '\r')
            sv.remove_suffix(1);

        std::vector<std::string_view> fields;
        std::size_t start = 0;
        for (std::size_t i = 0; i <= sv.size(); ++i) {
            if (i == sv.size() || sv[i] == ',') {
                fields.push_back(sv.substr(start, i - start));
                start = i + 1;
            }
        }
        if (fields.size() != kFeatureCount + 2)
            throw DataError("feature csv: bad field count at line " + std::to_string(line_no));

        std::string site(fields[0]);
        if (t.websites.empty() || t.websites.back() != site) {
            for (const auto& w : t.websites)
                if (w == site)
                    throw DataError("feature csv: website rows not contiguous at line " +
                                    std::to_string(line_no));
            t.websites.push_back(site);
            t.visit_ids.emplace_back();
            t.rows.emplace_back();
        }
        FeatureVector fv;
        fv.values.resize(kFeatureCount);
        for (std::size_t f = 0; f < kFeatureCount; ++f) {
            std::string_view tok = fields[f + 2];
            auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), fv.values[f]);
            if (ec != std::errc{} || ptr != tok.data() + tok.size())
                throw DataError("feature csv: bad number at line " + std::to_string(line_no));
        }
        t.visit_ids.back().emplace_back(fields[1]);
        t.rows.back().push_back(std::move(fv));
    }
    if (t.websites.empty())
        throw DataError("feature csv: no data rows");
    return t;
}

// Sidecar describing the fixed category layout, for consumers of the CSV.
inline nlohmann::json layout_json() {
    nlohmann::json cats = nlohmann::json::array();
    for (const auto& c : category_layout()) {
        cats.push_back({{"index", static_cast<int>(c.id)},
                        {"name", c.name},
                        {"offset", c.offset},
                        {"size", c.size}});
    }
    return {{"layout_version", kLayoutVersion},
            {"total_features", kFeatureCount},
            {"categories", cats}};
}

} // namespace wfleak

#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "wfleak/errors.hpp"

namespace wfleak {

// One transport record. Sign convention: positive length = incoming
// (server -> client), negative = outgoing (client -> server).
struct Packet {
    double time = 0.0;     // seconds from the first packet of the trace
    std::int64_t length = 0; // signed size; never 0

    bool incoming() const { return length > 0; }
    bool outgoing() const { return length < 0; }
};

// One page visit: packets in non-decreasing time order, origin shifted to 0.
struct Trace {
    std::string website_id;
    std::string visit_id;
    std::vector<Packet> packets;

    std::size_t size() const { return packets.size(); }
    bool empty() const { return packets.empty(); }

    double duration() const {
        return packets.empty() ? 0.0 : packets.back().time - packets.front().time;
    }
};

class TraceParseError : public DataError {
public:
    TraceParseError(const std::string& what, std::size_t line)
        : DataError(what + " (line " + std::to_string(line) + ")"), line_(line) {}
    std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r'))
        s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
        s.remove_suffix(1);
    return s;
}

inline double parse_double(std::string_view tok, std::size_t line, const char* what) {
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc{} || ptr != tok.data() + tok.size())
        throw TraceParseError(std::string("trace: bad ") + what + " '" + std::string(tok) + "'", line);
    return v;
}

inline std::int64_t parse_int(std::string_view tok, std::size_t line, const char* what) {
    std::int64_t v = 0;
    auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc{} || ptr != tok.data() + tok.size())
        throw TraceParseError(std::string("trace: bad ") + what + " '" + std::string(tok) + "'", line);
    return v;
}

} // namespace detail

// Parses the on-disk format: one record per line, "<time>\t<signed length>",
// '#' starts a comment line, blank lines ignored. Timestamps must be
// non-negative and non-decreasing; lengths must be non-zero. Times are
// shifted so the first packet is at 0.
inline Trace parse_trace(std::string_view text, std::string website_id = {},
                         std::string visit_id = {}) {
    Trace t;
    t.website_id = std::move(website_id);
    t.visit_id = std::move(visit_id);

    std::size_t line_no = 0;
    double prev_time = -std::numeric_limits<double>::infinity();
    std::size_t pos = 0;
    while (pos <= text.size()) {
        std::size_t eol = text.find('\n', pos);
        std::string_view line = text.substr(pos, eol == std::string_view::npos ? std::string_view::npos
                                                                               : eol - pos);
        pos = eol == std::string_view::npos ? text.size() + 1 : eol + 1;
        ++line_no;

        std::string_view body = detail::trim(line);
        if (body.empty() || body.front() == '#')
            continue;

        std::size_t tab = body.find('\t');
        if (tab == std::string_view::npos)
            throw TraceParseError("trace: missing tab separator", line_no);
        std::string_view time_tok = detail::trim(body.substr(0, tab));
        std::string_view len_tok = detail::trim(body.substr(tab + 1));
        if (len_tok.find('\t') != std::string_view::npos)
            throw TraceParseError("trace: too many fields", line_no);

        Packet p;
        p.time = detail::parse_double(time_tok, line_no, "timestamp");
        p.length = detail::parse_int(len_tok, line_no, "length");
        if (!std::isfinite(p.time))
            throw TraceParseError("trace: non-finite timestamp", line_no);
        if (p.length == 0)
            throw TraceParseError("trace: zero-length record", line_no);
        if (p.time < prev_time)
            throw TraceParseError("trace: decreasing timestamp", line_no);
        prev_time = p.time;
        t.packets.push_back(p);
    }

    if (!t.packets.empty()) {
        double t0 = t.packets.front().time;
        if (t0 != 0.0)
            for (Packet& p : t.packets)
                p.time -= t0;
    }
    return t;
}

inline std::string serialize_trace(const Trace& t) {
    std::ostringstream out;
    out.precision(9);
    out << std::fixed;
    for (const Packet& p : t.packets)
        out << p.time << '\t' << p.length << '\n';
    return out.str();
}

// Collapses byte lengths to Tor-style cell records: each packet becomes
// ceil(|length| / cell_size) unit cells carrying the packet's timestamp and
// direction sign. Traces already in +-1 form pass through unchanged.
inline Trace to_cell_sequence(const Trace& t, std::int64_t cell_size = 512) {
    if (cell_size < 1)
        throw std::invalid_argument("to_cell_sequence: cell_size must be positive");
    Trace out;
    out.website_id = t.website_id;
    out.visit_id = t.visit_id;
    for (const Packet& p : t.packets) {
        std::int64_t mag = p.length < 0 ? -p.length : p.length;
        std::int64_t cells = (mag + cell_size - 1) / cell_size;
        for (std::int64_t c = 0; c < cells; ++c)
            out.packets.push_back({p.time, p.length < 0 ? -1 : 1});
    }
    return out;
}

// A corpus: one entry per website, visits grouped per website.
// Websites are kept sorted by id so every downstream ordering is stable.
struct Dataset {
    std::vector<std::string> websites;
    std::vector<std::vector<Trace>> traces; // aligned with websites

    std::size_t site_count() const { return websites.size(); }

    std::size_t total_traces() const {
        std::size_t n = 0;
        for (const auto& v : traces)
            n += v.size();
        return n;
    }

    std::size_t site_index(std::string_view id) const {
        for (std::size_t i = 0; i < websites.size(); ++i)
            if (websites[i] == id)
                return i;
        throw DataError("dataset: unknown website '" + std::string(id) + "'");
    }
};

struct LoadReport {
    struct Skipped {
        std::filesystem::path file;
        std::string reason;
    };
    std::vector<Skipped> skipped_files;
    std::vector<std::string> excluded_websites; // directories with no valid trace
};

// Layout on disk: <root>/<website_id>/<visit_id>.trace. Unreadable or
// malformed visit files are skipped (recorded in the report); websites left
// with zero valid visits are excluded. An empty corpus is an error.
inline Dataset load_dataset(const std::filesystem::path& root, LoadReport* report = nullptr) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(root))
        throw DataError("dataset: not a directory: " + root.string());

    std::vector<fs::path> site_dirs;
    for (const auto& e : fs::directory_iterator(root))
        if (e.is_directory())
            site_dirs.push_back(e.path());
    std::sort(site_dirs.begin(), site_dirs.end());

    Dataset ds;
    LoadReport local;
    LoadReport& rep = report ? *report : local;

    for (const auto& dir : site_dirs) {
        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(dir))
            if (e.is_regular_file() && e.path().extension() == ".trace")
                files.push_back(e.path());
        std::sort(files.begin(), files.end());

        std::vector<Trace> visits;
        for (const auto& f : files) {
            std::ifstream in(f, std::ios::binary);
            if (!in) {
                rep.skipped_files.push_back({f, "unreadable"});
                continue;
            }
            std::ostringstream buf;
            buf << in.rdbuf();
            try {
                Trace t = parse_trace(buf.str(), dir.filename().string(), f.stem().string());
                if (t.empty()) {
                    rep.skipped_files.push_back({f, "empty trace"});
                    continue;
                }
                visits.push_back(std::move(t));
            } catch (const TraceParseError& ex) {
                rep.skipped_files.push_back({f, ex.what()});
            }
        }
        if (visits.empty()) {
            rep.excluded_websites.push_back(dir.filename().string());
            continue;
        }
        ds.websites.push_back(dir.filename().string());
        ds.traces.push_back(std::move(visits));
    }

    if (ds.websites.empty())
        throw DataError("dataset: no websites with valid traces under " + root.string());
    return ds;
}

// Mirror writer (used by the defense stage): <out>/<website_id>/<visit_id>.trace.
inline void save_dataset(const Dataset& ds, const std::filesystem::path& out_root) {
    namespace fs = std::filesystem;
    fs::create_directories(out_root);
    for (std::size_t s = 0; s < ds.websites.size(); ++s) {
        fs::path dir = out_root / ds.websites[s];
        fs::create_directories(dir);
        for (const Trace& t : ds.traces[s]) {
            std::ofstream f(dir / (t.visit_id + ".trace"), std::ios::binary | std::ios::trunc);
            if (!f)
                throw DataError("dataset: cannot write " + (dir / (t.visit_id + ".trace")).string());
            f << serialize_trace(t);
        }
    }
}

} // namespace wfleak

#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "wfleak/analyzer.hpp"
#include "wfleak/bounds.hpp"
#include "wfleak/defenses.hpp"
#include "wfleak/errors.hpp"
#include "wfleak/feature_io.hpp"
#include "wfleak/quantifier.hpp"
#include "wfleak/trace.hpp"
#include "wfleak/validation.hpp"
#include "wfleak/version.hpp"

namespace wfleak {

// Stage orchestration: each stage reads cached intermediates when its
// manifest (config snapshot + input content hash + versions) matches the
// one on disk, and recomputes otherwise. All stages are deterministic
// under a fixed seed, so cached and fresh outputs are byte-identical.

struct PriorSpec {
    enum class Kind { uniform, zipf, file };
    Kind kind = Kind::uniform;
    std::filesystem::path path;

    static PriorSpec parse(const std::string& text) {
        PriorSpec s;
        if (text == "uniform") {
            s.kind = Kind::uniform;
        } else if (text == "zipf") {
            s.kind = Kind::zipf;
        } else if (text.rfind("file:", 0) == 0) {
            s.kind = Kind::file;
            s.path = text.substr(5);
            if (s.path.empty())
                throw std::invalid_argument("prior: empty file path");
        } else {
            throw std::invalid_argument("prior: expected uniform | zipf | file:<path>");
        }
        return s;
    }

    std::string text() const {
        switch (kind) {
        case Kind::uniform: return "uniform";
        case Kind::zipf: return "zipf";
        case Kind::file: return "file:" + path.generic_string();
        }
        return "uniform";
    }
};

// Open-world prior files address the lumped non-monitored class by this id.
inline constexpr const char* kLumpOutcome = "*";

namespace detail {

inline std::string read_text_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in)
        throw DataError("cannot open '" + p.generic_string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return std::move(ss).str();
}

inline void write_text_file(const std::filesystem::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out)
        throw DataError("cannot write '" + p.generic_string() + "'");
    out << text;
    if (!out)
        throw DataError("write failed for '" + p.generic_string() + "'");
}

// Prior file: one `outcome_id,probability` pair per line, '#' comments.
inline std::map<std::string, double> parse_prior_file(const std::filesystem::path& p) {
    std::map<std::string, double> out;
    std::istringstream in(read_text_file(p));
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto t = trim(line);
        if (t.empty() || t.front() == '#')
            continue;
        auto comma = t.find(',');
        if (comma == std::string_view::npos)
            throw DataError("prior file " + p.generic_string() + " line " +
                            std::to_string(lineno) + ": expected 'id,probability'");
        std::string id(trim(t.substr(0, comma)));
        auto ptok = trim(t.substr(comma + 1));
        double prob = 0.0;
        auto [ptr, ec] = std::from_chars(ptok.data(), ptok.data() + ptok.size(), prob);
        if (ec != std::errc{} || ptr != ptok.data() + ptok.size())
            throw DataError("prior file " + p.generic_string() + " line " +
                            std::to_string(lineno) + ": bad probability '" + std::string(ptok) + "'");
        if (!(prob > 0.0))
            throw DataError("prior file " + p.generic_string() + " line " +
                            std::to_string(lineno) + ": probability must be positive");
        if (!out.emplace(id, prob).second)
            throw DataError("prior file " + p.generic_string() + " line " +
                            std::to_string(lineno) + ": duplicate id '" + id + "'");
    }
    if (out.empty())
        throw DataError("prior file " + p.generic_string() + " has no entries");
    return out;
}

// FNV-1a over file contents; directories hash sorted relative paths plus
// contents so renames and edits both change the key.
inline std::uint64_t fnv1a(std::uint64_t h, const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

inline constexpr std::uint64_t kFnvOffset = 14695981039346656037ull;

inline std::uint64_t hash_stream(std::uint64_t h, const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in)
        throw DataError("cannot open '" + p.generic_string() + "' for hashing");
    char buf[65536];
    while (in.read(buf, sizeof buf) || in.gcount() > 0)
        h = fnv1a(h, buf, static_cast<std::size_t>(in.gcount()));
    return h;
}

inline std::string hash_hex(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

inline std::string content_hash(const std::filesystem::path& p) {
    namespace fs = std::filesystem;
    if (!fs::exists(p))
        throw DataError("no such input: '" + p.generic_string() + "'");
    std::uint64_t h = kFnvOffset;
    if (fs::is_directory(p)) {
        std::vector<fs::path> files;
        for (const auto& e : fs::recursive_directory_iterator(p))
            if (e.is_regular_file())
                files.push_back(e.path());
        std::sort(files.begin(), files.end());
        for (const auto& f : files) {
            std::string rel = fs::relative(f, p).generic_string();
            h = fnv1a(h, rel.data(), rel.size());
            h = fnv1a(h, "\0", 1);
            h = hash_stream(h, f);
            h = fnv1a(h, "\xff", 1);
        }
    } else {
        h = hash_stream(h, p);
    }
    return hash_hex(h);
}

// A stage may be skipped when its manifest on disk equals the one about to
// be written and every output artifact still exists.
inline bool cache_valid(const std::filesystem::path& manifest_path, const std::string& manifest_text,
                        const std::vector<std::filesystem::path>& outputs) {
    namespace fs = std::filesystem;
    if (!fs::exists(manifest_path))
        return false;
    if (read_text_file(manifest_path) != manifest_text)
        return false;
    for (const auto& o : outputs)
        if (!fs::exists(o))
            return false;
    return true;
}

} // namespace detail

// Resolves a prior spec against an ordered outcome list (website ids, plus
// kLumpOutcome as the final entry in open mode). Zipf ranks follow the
// outcome order; file priors are renormalized after lookup.
inline DiscreteDistribution resolve_prior(const PriorSpec& spec,
                                          const std::vector<std::string>& outcomes) {
    if (outcomes.empty())
        throw std::invalid_argument("prior: no outcomes");
    switch (spec.kind) {
    case PriorSpec::Kind::uniform:
        return DiscreteDistribution::uniform(outcomes.size());
    case PriorSpec::Kind::zipf:
        return zipf_prior(outcomes.size());
    case PriorSpec::Kind::file: {
        auto table = detail::parse_prior_file(spec.path);
        std::vector<double> w;
        w.reserve(outcomes.size());
        for (const auto& id : outcomes) {
            auto it = table.find(id);
            if (it == table.end())
                throw DataError("prior file missing outcome '" + id + "'");
            w.push_back(it->second);
        }
        if (table.size() != outcomes.size())
            throw DataError("prior file lists outcomes not present in the world");
        return DiscreteDistribution::from_weights(w);
    }
    }
    throw std::logic_error("prior: unreachable");
}

struct PipelineConfig {
    std::filesystem::path dataset_dir;
    std::filesystem::path output_dir;

    // world
    std::string mode = "closed"; // closed | open
    std::filesystem::path monitored_file; // open mode: one website id per line
    std::string prior = "uniform"; // uniform | zipf | file:<path>

    // trace normalization: >0 splits packets into +/-1 cells of this size
    std::int64_t cell_size = 0;

    // analyzer
    std::size_t top_n = 100;
    double prune_threshold = 0.9;
    double eps = 0.4;
    std::size_t beta = 10;
    std::string nmi_estimator = "binned"; // binned | kde

    // Monte Carlo
    std::size_t mc_samples = 5000;
    std::uint64_t seed = 0;

    // defense
    std::string defense = "tamaraw"; // buflo | tamaraw
    BufloParams buflo;
    TamarawParams tamaraw;

    // validation
    std::string resample = "bootstrap"; // bootstrap | subsample
    std::size_t trials = 20;
    double ci_level = 0.90;
    std::size_t world_size = 0; // subsample only

    // bounds
    std::size_t bounds_n = 100;
    double accuracy = 0.95;
    std::filesystem::path bounds_prior_file;
    std::size_t sweep_steps = 0; // extra alpha grid points for the band CSV

    unsigned threads = 1; // execution detail, never part of manifests

    void validate_common() const {
        if (output_dir.empty())
            throw std::invalid_argument("config: output directory required");
        if (mode != "closed" && mode != "open")
            throw std::invalid_argument("config: mode must be closed or open");
        if (mode == "open" && monitored_file.empty())
            throw std::invalid_argument("config: open mode needs a monitored-site file");
        if (nmi_estimator != "binned" && nmi_estimator != "kde")
            throw std::invalid_argument("config: nmi estimator must be binned or kde");
        PriorSpec::parse(prior);
    }
};

namespace detail {

inline NmiEstimator parse_nmi_estimator(const std::string& s) {
    return s == "kde" ? NmiEstimator::kde : NmiEstimator::binned;
}

inline std::vector<std::string> read_id_list(const std::filesystem::path& p) {
    std::vector<std::string> ids;
    std::istringstream in(read_text_file(p));
    std::string line;
    while (std::getline(in, line)) {
        auto t = trim(line);
        if (!t.empty() && t.front() != '#')
            ids.emplace_back(t);
    }
    if (ids.empty())
        throw DataError("id list '" + p.generic_string() + "' is empty");
    return ids;
}

// World assembly shared by the leakage and validation stages.
inline WorldConfig make_world(const PipelineConfig& cfg, const std::vector<std::string>& websites) {
    WorldConfig world;
    PriorSpec prior_spec = PriorSpec::parse(cfg.prior);
    world.websites = websites;
    if (cfg.mode == "closed") {
        world.mode = WorldConfig::Mode::closed;
        world.prior = resolve_prior(prior_spec, websites);
        return world;
    }
    world.mode = WorldConfig::Mode::open;
    auto monitored = read_id_list(cfg.monitored_file);
    std::set<std::string> mset(monitored.begin(), monitored.end());
    if (mset.size() != monitored.size())
        throw DataError("monitored list contains duplicates");
    for (const auto& id : websites)
        if (!mset.count(id))
            world.non_monitored.push_back(id);
    world.monitored = std::move(monitored);
    for (const auto& id : world.monitored)
        if (std::find(websites.begin(), websites.end(), id) == websites.end())
            throw DataError("monitored site '" + id + "' not in dataset");
    std::vector<std::string> outcomes = world.monitored;
    outcomes.push_back(kLumpOutcome);
    world.prior = resolve_prior(prior_spec, outcomes);
    return world;
}

inline std::string json_text(const nlohmann::json& j) { return j.dump(2) + "\n"; }

inline void write_manifest_and(const std::filesystem::path& manifest_path,
                               const nlohmann::json& manifest) {
    write_text_file(manifest_path, json_text(manifest));
}

inline const CategoryInfo& category_of(std::size_t feature) {
    for (const auto& c : category_layout())
        if (feature >= c.offset && feature < c.offset + c.size)
            return c;
    throw std::out_of_range("feature index out of range");
}

} // namespace detail

// ---- extract ---------------------------------------------------------

// Extracts the feature table from a dataset directory; artifacts:
// features.csv, layout.json, extract_manifest.json.
inline std::filesystem::path stage_extract(const PipelineConfig& cfg) {
    namespace fs = std::filesystem;
    cfg.validate_common();
    if (cfg.dataset_dir.empty())
        throw std::invalid_argument("extract: dataset directory required");
    fs::create_directories(cfg.output_dir);

    fs::path features_path = cfg.output_dir / "features.csv";
    fs::path layout_path = cfg.output_dir / "layout.json";
    fs::path manifest_path = cfg.output_dir / "extract_manifest.json";

    nlohmann::json manifest;
    manifest["stage"] = "extract";
    manifest["tool_version"] = kVersion;
    manifest["layout_version"] = kLayoutVersion;
    manifest["input_hash"] = detail::content_hash(cfg.dataset_dir);
    manifest["config"] = {{"dataset_dir", cfg.dataset_dir.generic_string()},
                          {"cell_size", cfg.cell_size}};
    std::string manifest_text = detail::json_text(manifest);

    if (detail::cache_valid(manifest_path, manifest_text, {features_path, layout_path}))
        return features_path;

    LoadReport report;
    Dataset ds = load_dataset(cfg.dataset_dir, &report);
    if (cfg.cell_size > 0)
        for (auto& site : ds.traces)
            for (auto& t : site)
                t = to_cell_sequence(t, cfg.cell_size);
    FeatureTable table = extract_table(ds, cfg.threads);

    std::ostringstream csv;
    write_feature_csv(table, csv);
    detail::write_text_file(features_path, std::move(csv).str());
    detail::write_text_file(layout_path, detail::json_text(layout_json()));
    detail::write_manifest_and(manifest_path, manifest);
    return features_path;
}

// ---- analyze ---------------------------------------------------------

inline nlohmann::json grouping_report_json(const GroupingResult& result) {
    nlohmann::json kept = nlohmann::json::array();
    for (std::size_t i = 0; i < result.grouping.kept_features.size(); ++i) {
        std::size_t f = result.grouping.kept_features[i];
        const auto& cat = detail::category_of(f);
        kept.push_back({{"feature", f},
                        {"name", feature_name(f)},
                        {"category", cat.name},
                        {"bits", result.grouping.per_feature_bits[i]}});
    }
    nlohmann::json pruned = nlohmann::json::array();
    for (const auto& [dropped, keeper] : result.grouping.pruned_redundant)
        pruned.push_back({{"dropped", dropped}, {"keeper", keeper}});
    nlohmann::json j;
    j["kept"] = std::move(kept);
    j["clusters"] = result.grouping.clusters;
    j["pruned"] = std::move(pruned);
    j["degenerate_skipped"] = result.degenerate_skipped;
    j["underfull"] = result.underfull;
    return j;
}

inline FeatureGrouping grouping_from_json(const nlohmann::json& j) {
    FeatureGrouping g;
    try {
        for (const auto& e : j.at("kept")) {
            g.kept_features.push_back(e.at("feature").get<std::size_t>());
            g.per_feature_bits.push_back(e.at("bits").get<double>());
        }
        g.clusters = j.at("clusters").get<std::vector<std::vector<std::size_t>>>();
        for (const auto& e : j.at("pruned"))
            g.pruned_redundant.emplace_back(e.at("dropped").get<std::size_t>(),
                                            e.at("keeper").get<std::size_t>());
    } catch (const nlohmann::json::exception& ex) {
        throw DataError(std::string("grouping json: ") + ex.what());
    }
    g.validate();
    return g;
}

namespace detail {

inline FeatureTable load_feature_table(const std::filesystem::path& features_path) {
    std::istringstream in(read_text_file(features_path));
    return read_feature_csv(in);
}

inline nlohmann::json analyze_config_json(const PipelineConfig& cfg) {
    return {{"prior", cfg.prior},
            {"top_n", cfg.top_n},
            {"prune_threshold", cfg.prune_threshold},
            {"eps", cfg.eps},
            {"beta", cfg.beta},
            {"nmi_estimator", cfg.nmi_estimator},
            {"mc_samples", cfg.mc_samples},
            {"seed", cfg.seed}};
}

} // namespace detail

// Ranks features, prunes redundancy, clusters; artifacts: grouping.json,
// ranking.csv, analyze_manifest.json. Runs extract first when needed.
inline std::filesystem::path stage_analyze(const PipelineConfig& cfg) {
    namespace fs = std::filesystem;
    cfg.validate_common();
    fs::path features_path = stage_extract(cfg);
    fs::path grouping_path = cfg.output_dir / "grouping.json";
    fs::path ranking_path = cfg.output_dir / "ranking.csv";
    fs::path manifest_path = cfg.output_dir / "analyze_manifest.json";

    nlohmann::json manifest;
    manifest["stage"] = "analyze";
    manifest["tool_version"] = kVersion;
    manifest["layout_version"] = kLayoutVersion;
    manifest["input_hash"] = detail::content_hash(features_path);
    manifest["config"] = detail::analyze_config_json(cfg);
    std::string manifest_text = detail::json_text(manifest);

    if (detail::cache_valid(manifest_path, manifest_text, {grouping_path, ranking_path}))
        return grouping_path;

    FeatureTable table = detail::load_feature_table(features_path);
    DiscreteDistribution prior = resolve_prior(PriorSpec::parse(cfg.prior), table.websites);
    McConfig mc{cfg.mc_samples, cfg.seed};
    BuildOptions opts;
    opts.top_n = cfg.top_n;
    opts.prune_threshold = cfg.prune_threshold;
    opts.eps = cfg.eps;
    opts.beta = cfg.beta;
    opts.nmi_estimator = detail::parse_nmi_estimator(cfg.nmi_estimator);
    opts.threads = cfg.threads;
    GroupingResult result = build_grouping(table, prior, mc, opts);

    detail::write_text_file(grouping_path, detail::json_text(grouping_report_json(result)));

    std::ostringstream csv;
    csv << "rank,feature,name,category,bits,failed\n";
    for (std::size_t r = 0; r < result.ranking.entries.size(); ++r) {
        const auto& e = result.ranking.entries[r];
        csv << r << ',' << e.feature << ',' << feature_name(e.feature) << ','
            << detail::category_of(e.feature).name << ',' << detail::format_double(e.bits)
            << ',' << (e.failed ? 1 : 0) << '\n';
    }
    detail::write_text_file(ranking_path, std::move(csv).str());
    detail::write_manifest_and(manifest_path, manifest);
    return grouping_path;
}

// ---- leakage ---------------------------------------------------------

namespace detail {

inline nlohmann::json leakage_config_json(const PipelineConfig& cfg, bool joint) {
    nlohmann::json j = analyze_config_json(cfg);
    j["mode"] = cfg.mode;
    j["joint"] = joint;
    if (cfg.mode == "open")
        j["monitored_hash"] = content_hash(cfg.monitored_file);
    return j;
}

} // namespace detail

// Joint mode: measures the grouped leakage and per-category breakdown into
// leakage.json. Individual mode: per-feature leakage into
// individual_leakage.csv. Upstream stages run (cached) as needed.
inline std::filesystem::path stage_leakage(const PipelineConfig& cfg, bool joint) {
    namespace fs = std::filesystem;
    cfg.validate_common();
    fs::path features_path = stage_extract(cfg);
    fs::path grouping_path;
    std::string input_hash;
    if (joint) {
        grouping_path = stage_analyze(cfg);
        input_hash = detail::content_hash(features_path) + ":" + detail::content_hash(grouping_path);
    } else {
        input_hash = detail::content_hash(features_path);
    }

    fs::path result_path = cfg.output_dir / (joint ? "leakage.json" : "individual_leakage.csv");
    fs::path manifest_path =
        cfg.output_dir / (joint ? "leakage_manifest.json" : "individual_leakage_manifest.json");

    nlohmann::json manifest;
    manifest["stage"] = joint ? "leakage-joint" : "leakage-individual";
    manifest["tool_version"] = kVersion;
    manifest["layout_version"] = kLayoutVersion;
    manifest["input_hash"] = input_hash;
    manifest["config"] = detail::leakage_config_json(cfg, joint);
    std::string manifest_text = detail::json_text(manifest);

    if (detail::cache_valid(manifest_path, manifest_text, {result_path}))
        return result_path;

    FeatureTable table = detail::load_feature_table(features_path);

    if (!joint) {
        DiscreteDistribution prior = resolve_prior(PriorSpec::parse(cfg.prior), table.websites);
        McConfig mc{cfg.mc_samples, cfg.seed};
        LeakageRanking ranking = rank_features(table, prior, mc, cfg.beta, cfg.threads);
        std::ostringstream csv;
        csv << "rank,feature,name,category,bits,failed\n";
        for (std::size_t r = 0; r < ranking.entries.size(); ++r) {
            const auto& e = ranking.entries[r];
            csv << r << ',' << e.feature << ',' << feature_name(e.feature) << ','
                << detail::category_of(e.feature).name << ',' << detail::format_double(e.bits)
                << ',' << (e.failed ? 1 : 0) << '\n';
        }
        detail::write_text_file(result_path, std::move(csv).str());
        detail::write_manifest_and(manifest_path, manifest);
        return result_path;
    }

    nlohmann::json gj = nlohmann::json::parse(detail::read_text_file(grouping_path));
    FeatureGrouping grouping = grouping_from_json(gj);
    WorldConfig world = detail::make_world(cfg, table.websites);
    McConfig mc{cfg.mc_samples, cfg.seed};
    LeakageEstimate est = joint_leakage(table, grouping, world, mc, cfg.beta, cfg.threads);
    auto per_category = joint_leakage_per_category(table, grouping, world, mc, cfg.beta, cfg.threads);

    nlohmann::json cats = nlohmann::json::array();
    for (const auto& c : per_category)
        cats.push_back({{"category", c.category_index},
                        {"name", c.category_name},
                        {"feature_count", c.feature_count},
                        {"bits", c.estimate.bits},
                        {"stderr", c.estimate.mc_standard_error}});
    nlohmann::json result;
    result["mode"] = cfg.mode;
    result["prior_spec"] = cfg.prior;
    result["k"] = cfg.mc_samples;
    result["seed"] = cfg.seed;
    result["bits"] = est.bits;
    result["stderr"] = est.mc_standard_error;
    result["degenerate_sample_count"] = est.degenerate_samples;
    result["per_category"] = std::move(cats);

    detail::write_text_file(result_path, detail::json_text(result));
    detail::write_manifest_and(manifest_path, manifest);
    return result_path;
}

// ---- defend ----------------------------------------------------------

// Applies the configured defense trace-by-trace; artifacts: defended/
// mirrored dataset, overhead.csv, overhead_summary.json.
inline std::filesystem::path stage_defend(const PipelineConfig& cfg) {
    namespace fs = std::filesystem;
    cfg.validate_common();
    if (cfg.dataset_dir.empty())
        throw std::invalid_argument("defend: dataset directory required");
    if (cfg.defense != "buflo" && cfg.defense != "tamaraw")
        throw std::invalid_argument("defend: defense must be buflo or tamaraw");
    fs::create_directories(cfg.output_dir);

    fs::path defended_dir = cfg.output_dir / "defended";
    fs::path overhead_path = cfg.output_dir / "overhead.csv";
    fs::path summary_path = cfg.output_dir / "overhead_summary.json";
    fs::path manifest_path = cfg.output_dir / "defend_manifest.json";

    nlohmann::json params;
    if (cfg.defense == "buflo") {
        cfg.buflo.validate();
        params = {{"tau", cfg.buflo.tau}, {"rho", cfg.buflo.rho}, {"cell_size", cfg.buflo.cell_size}};
    } else {
        cfg.tamaraw.validate();
        params = {{"L", cfg.tamaraw.L},
                  {"rho_out", cfg.tamaraw.rho_out},
                  {"rho_in", cfg.tamaraw.rho_in}};
    }
    nlohmann::json manifest;
    manifest["stage"] = "defend";
    manifest["tool_version"] = kVersion;
    manifest["layout_version"] = kLayoutVersion;
    manifest["input_hash"] = detail::content_hash(cfg.dataset_dir);
    manifest["config"] = {{"dataset_dir", cfg.dataset_dir.generic_string()},
                          {"cell_size", cfg.cell_size},
                          {"defense", cfg.defense},
                          {"params", params}};
    std::string manifest_text = detail::json_text(manifest);

    if (detail::cache_valid(manifest_path, manifest_text, {defended_dir, overhead_path, summary_path}))
        return overhead_path;

    Dataset ds = load_dataset(cfg.dataset_dir);
    if (cfg.cell_size > 0)
        for (auto& site : ds.traces)
            for (auto& t : site)
                t = to_cell_sequence(t, cfg.cell_size);

    Dataset defended = ds;
    std::ostringstream csv;
    csv << "website_id,visit_id,real_cells,defended_cells,bandwidth_ratio,"
           "original_duration,defended_duration,latency_ratio\n";
    std::size_t total_real = 0, total_defended = 0;
    double total_orig_dur = 0.0, total_def_dur = 0.0;
    for (std::size_t s = 0; s < ds.traces.size(); ++s) {
        for (std::size_t v = 0; v < ds.traces[s].size(); ++v) {
            const Trace& orig = ds.traces[s][v];
            Trace def = cfg.defense == "buflo" ? apply_buflo(orig, cfg.buflo)
                                               : apply_tamaraw(orig, cfg.tamaraw);
            DefenseOverhead oh = compute_overhead(orig, def);
            csv << orig.website_id << ',' << orig.visit_id << ',' << oh.real_cells << ','
                << oh.defended_cells << ',' << detail::format_double(oh.bandwidth_ratio) << ','
                << detail::format_double(oh.original_duration) << ','
                << detail::format_double(oh.defended_duration) << ','
                << detail::format_double(oh.latency_ratio) << '\n';
            total_real += oh.real_cells;
            total_defended += oh.defended_cells;
            total_orig_dur += oh.original_duration;
            total_def_dur += oh.defended_duration;
            defended.traces[s][v] = std::move(def);
        }
    }
    fs::remove_all(defended_dir);
    save_dataset(defended, defended_dir);

    nlohmann::json summary;
    summary["defense"] = cfg.defense;
    summary["params"] = params;
    summary["total_real_cells"] = total_real;
    summary["total_defended_cells"] = total_defended;
    summary["bandwidth_overhead"] =
        total_real > 0 ? static_cast<double>(total_defended) / static_cast<double>(total_real) : 0.0;
    summary["latency_overhead"] = total_orig_dur > 0.0 ? total_def_dur / total_orig_dur : 0.0;

    detail::write_text_file(overhead_path, std::move(csv).str());
    detail::write_text_file(summary_path, detail::json_text(summary));
    detail::write_manifest_and(manifest_path, manifest);
    return overhead_path;
}

// ---- bounds ----------------------------------------------------------

// Closed-form accuracy bounds; artifacts: bounds.csv sweep over alpha,
// bounds_manifest.json. The requested accuracy is always a row.
inline std::filesystem::path stage_bounds(const PipelineConfig& cfg) {
    namespace fs = std::filesystem;
    if (cfg.output_dir.empty())
        throw std::invalid_argument("config: output directory required");
    fs::create_directories(cfg.output_dir);

    fs::path bounds_path = cfg.output_dir / "bounds.csv";
    fs::path manifest_path = cfg.output_dir / "bounds_manifest.json";

    DiscreteDistribution prior;
    std::string prior_desc;
    if (!cfg.bounds_prior_file.empty()) {
        auto table = detail::parse_prior_file(cfg.bounds_prior_file);
        std::vector<double> w;
        for (const auto& [id, p] : table)
            w.push_back(p);
        prior = DiscreteDistribution::from_weights(w);
        prior_desc = "file:" + cfg.bounds_prior_file.generic_string();
    } else {
        if (cfg.bounds_n < 2)
            throw std::invalid_argument("bounds: need n >= 2");
        prior = DiscreteDistribution::uniform(cfg.bounds_n);
        prior_desc = "uniform";
    }
    if (!(cfg.accuracy >= 0.0 && cfg.accuracy <= 1.0))
        throw std::invalid_argument("bounds: accuracy outside [0,1]");

    nlohmann::json manifest;
    manifest["stage"] = "bounds";
    manifest["tool_version"] = kVersion;
    manifest["layout_version"] = kLayoutVersion;
    manifest["input_hash"] = cfg.bounds_prior_file.empty()
                                 ? std::string("none")
                                 : detail::content_hash(cfg.bounds_prior_file);
    manifest["config"] = {{"n", prior.size()},
                          {"prior", prior_desc},
                          {"accuracy", cfg.accuracy},
                          {"sweep_steps", cfg.sweep_steps}};
    std::string manifest_text = detail::json_text(manifest);

    if (detail::cache_valid(manifest_path, manifest_text, {bounds_path}))
        return bounds_path;

    std::vector<double> alphas{cfg.accuracy};
    if (cfg.sweep_steps > 0)
        for (std::size_t i = 0; i <= cfg.sweep_steps; ++i)
            alphas.push_back(static_cast<double>(i) / static_cast<double>(cfg.sweep_steps));
    std::sort(alphas.begin(), alphas.end());
    alphas.erase(std::unique(alphas.begin(), alphas.end()), alphas.end());

    std::ostringstream csv;
    csv << "alpha,range_bits,min_bits,max_bits\n";
    for (double a : alphas) {
        LeakageBand band = leakage_bounds(prior, a);
        csv << detail::format_double(a) << ','
            << detail::format_double(theorem1_range(prior.size(), a)) << ','
            << detail::format_double(band.min_bits) << ','
            << detail::format_double(band.max_bits) << '\n';
    }
    detail::write_text_file(bounds_path, std::move(csv).str());
    detail::write_manifest_and(manifest_path, manifest);
    return bounds_path;
}

// ---- validate --------------------------------------------------------

namespace detail {

// The CLI's resampling estimator: the full closed-world pipeline (extract
// -> grouping -> joint leakage) as a pure function of a dataset.
inline DatasetEstimator make_joint_estimator(const PipelineConfig& cfg) {
    return [cfg](const Dataset& ds) -> double {
        FeatureTable table = extract_table(ds, cfg.threads);
        DiscreteDistribution prior =
            resolve_prior(PriorSpec::parse(cfg.prior), table.websites);
        McConfig mc{cfg.mc_samples, derive_seed(cfg.seed, {0x72616e6bull})};
        BuildOptions opts;
        opts.top_n = cfg.top_n;
        opts.prune_threshold = cfg.prune_threshold;
        opts.eps = cfg.eps;
        opts.beta = cfg.beta;
        opts.nmi_estimator = parse_nmi_estimator(cfg.nmi_estimator);
        opts.threads = cfg.threads;
        GroupingResult g = build_grouping(table, prior, mc, opts);
        WorldConfig world;
        world.mode = WorldConfig::Mode::closed;
        world.websites = table.websites;
        world.prior = prior;
        McConfig joint_mc{cfg.mc_samples, derive_seed(cfg.seed, {0x6a6f696eull})};
        return joint_leakage(table, g.grouping, world, joint_mc, cfg.beta, cfg.threads).bits;
    };
}

} // namespace detail

// Bootstrap or subsample CI of the closed-world joint leakage; artifacts:
// validate.json, validate_trials.csv, validate_manifest.json.
inline std::filesystem::path stage_validate(const PipelineConfig& cfg) {
    namespace fs = std::filesystem;
    cfg.validate_common();
    if (cfg.dataset_dir.empty())
        throw std::invalid_argument("validate: dataset directory required");
    if (cfg.resample != "bootstrap" && cfg.resample != "subsample")
        throw std::invalid_argument("validate: resample must be bootstrap or subsample");
    fs::create_directories(cfg.output_dir);

    fs::path result_path = cfg.output_dir / "validate.json";
    fs::path trials_path = cfg.output_dir / "validate_trials.csv";
    fs::path manifest_path = cfg.output_dir / "validate_manifest.json";

    nlohmann::json manifest;
    manifest["stage"] = "validate";
    manifest["tool_version"] = kVersion;
    manifest["layout_version"] = kLayoutVersion;
    manifest["input_hash"] = detail::content_hash(cfg.dataset_dir);
    nlohmann::json config = detail::analyze_config_json(cfg);
    config["resample"] = cfg.resample;
    config["trials"] = cfg.trials;
    config["ci_level"] = cfg.ci_level;
    config["world_size"] = cfg.world_size;
    config["cell_size"] = cfg.cell_size;
    manifest["config"] = std::move(config);
    std::string manifest_text = detail::json_text(manifest);

    if (detail::cache_valid(manifest_path, manifest_text, {result_path, trials_path}))
        return result_path;

    Dataset ds = load_dataset(cfg.dataset_dir);
    if (cfg.cell_size > 0)
        for (auto& site : ds.traces)
            for (auto& t : site)
                t = to_cell_sequence(t, cfg.cell_size);

    ResampleConfig rc;
    rc.trials = cfg.trials;
    rc.ci_level = cfg.ci_level;
    rc.seed = cfg.seed;
    DatasetEstimator estimator = detail::make_joint_estimator(cfg);

    nlohmann::json result;
    std::vector<double> trial_values;
    if (cfg.resample == "bootstrap") {
        BootstrapResult r = bootstrap_ci(ds, estimator, rc);
        result["mode"] = "bootstrap";
        result["low"] = r.low;
        result["high"] = r.high;
        result["point"] = r.point;
        result["failed_trials"] = r.failed_trials;
        trial_values = std::move(r.trial_values);
    } else {
        SubsampleResult r = subsample_ci(ds, estimator, cfg.world_size, rc);
        result["mode"] = "subsample";
        result["low"] = r.low;
        result["high"] = r.high;
        result["world_size"] = cfg.world_size;
        result["failed_trials"] = r.failed_trials;
        trial_values = std::move(r.trial_values);
    }
    result["trials"] = cfg.trials;
    result["ci_level"] = cfg.ci_level;
    result["seed"] = cfg.seed;
    result["trial_values"] = trial_values;

    std::ostringstream csv;
    csv << "value\n";
    for (double v : trial_values)
        csv << detail::format_double(v) << '\n';
    detail::write_text_file(trials_path, std::move(csv).str());
    detail::write_text_file(result_path, detail::json_text(result));
    detail::write_manifest_and(manifest_path, manifest);
    return result_path;
}

} // namespace wfleak

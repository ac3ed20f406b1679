#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "wfleak/pipeline.hpp"

using namespace wfleak;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;

    TempDir() {
        auto stamp = std::to_string(::getpid()) + "_" +
                     std::to_string(reinterpret_cast<std::uintptr_t>(this));
        path = fs::temp_directory_path() / ("wfleak_pipeline_" + stamp);
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
    fs::path operator/(const std::string& name) const { return path / name; }
};

void write_file(const fs::path& p, const std::string& text) {
    fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary);
    out << text;
}

std::string read_file(const fs::path& p) { return detail::read_text_file(p); }

std::size_t line_count(const std::string& text) {
    std::size_t n = 0;
    for (char c : text)
        if (c == '\n')
            ++n;
    return n;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            fields.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    fields.push_back(cur);
    return fields;
}

// Three clearly separable websites: total packet counts 12/13, 16/17 and
// 20/21 depending on visit parity, with site-specific packet spacing.
Dataset demo_dataset() {
    Dataset ds;
    ds.websites = {"siteA", "siteB", "siteC"};
    for (std::size_t s = 0; s < 3; ++s) {
        std::vector<Trace> visits;
        for (std::size_t v = 0; v < 6; ++v) {
            Trace t;
            t.website_id = ds.websites[s];
            t.visit_id = "v" + std::to_string(v);
            std::size_t m = 12 + 4 * s + v % 2;
            for (std::size_t k = 0; k < m; ++k) {
                Packet p;
                p.time = 0.01 * static_cast<double>(k) * static_cast<double>(s + 1);
                p.length = k % 2 == 0 ? -1 : 1;
                t.packets.push_back(p);
            }
            visits.push_back(std::move(t));
        }
        ds.traces.push_back(std::move(visits));
    }
    return ds;
}

PipelineConfig demo_config(const fs::path& dataset_dir, const fs::path& output_dir) {
    PipelineConfig cfg;
    cfg.dataset_dir = dataset_dir;
    cfg.output_dir = output_dir;
    cfg.top_n = 8;
    cfg.mc_samples = 60;
    cfg.seed = 7;
    return cfg;
}

} // namespace

TEST_CASE("prior specs parse and render", "[pipeline]") {
    auto u = PriorSpec::parse("uniform");
    CHECK(u.kind == PriorSpec::Kind::uniform);
    CHECK(u.text() == "uniform");

    auto z = PriorSpec::parse("zipf");
    CHECK(z.kind == PriorSpec::Kind::zipf);
    CHECK(z.text() == "zipf");

    auto f = PriorSpec::parse("file:/tmp/p.csv");
    CHECK(f.kind == PriorSpec::Kind::file);
    CHECK(f.path == fs::path("/tmp/p.csv"));
    CHECK(f.text() == "file:/tmp/p.csv");

    CHECK_THROWS_AS(PriorSpec::parse("file:"), std::invalid_argument);
    CHECK_THROWS_AS(PriorSpec::parse("gaussian"), std::invalid_argument);
    CHECK_THROWS_AS(PriorSpec::parse(""), std::invalid_argument);
}

TEST_CASE("prior resolution against an outcome list", "[pipeline]") {
    TempDir tmp;
    std::vector<std::string> outcomes{"a", "b", "c"};

    auto u = resolve_prior(PriorSpec::parse("uniform"), outcomes);
    REQUIRE(u.size() == 3);
    CHECK(u.p[0] == Catch::Approx(1.0 / 3.0).margin(1e-15));

    auto z = resolve_prior(PriorSpec::parse("zipf"), outcomes);
    CHECK(z.p[0] == Catch::Approx(6.0 / 11.0).margin(1e-12));
    CHECK(z.p[1] == Catch::Approx(3.0 / 11.0).margin(1e-12));
    CHECK(z.p[2] == Catch::Approx(2.0 / 11.0).margin(1e-12));

    fs::path pf = tmp / "prior.csv";
    write_file(pf, "# weights, renormalized on load\n\n  a , 6\nb,2\nc,2\n");
    auto f = resolve_prior(PriorSpec::parse("file:" + pf.generic_string()), outcomes);
    CHECK(f.p[0] == Catch::Approx(0.6).margin(1e-12));
    CHECK(f.p[1] == Catch::Approx(0.2).margin(1e-12));
    CHECK(f.p[2] == Catch::Approx(0.2).margin(1e-12));

    // Every outcome must be priced, and nothing beyond the outcome list.
    fs::path missing = tmp / "missing.csv";
    write_file(missing, "a,0.5\nb,0.5\n");
    CHECK_THROWS_AS(resolve_prior(PriorSpec::parse("file:" + missing.generic_string()), outcomes),
                    DataError);
    fs::path extra = tmp / "extra.csv";
    write_file(extra, "a,0.4\nb,0.3\nc,0.2\nd,0.1\n");
    CHECK_THROWS_AS(resolve_prior(PriorSpec::parse("file:" + extra.generic_string()), outcomes),
                    DataError);

    CHECK_THROWS_AS(resolve_prior(PriorSpec::parse("uniform"), {}), std::invalid_argument);
}

TEST_CASE("prior file parsing rejects malformed input", "[pipeline]") {
    TempDir tmp;
    auto reject = [&](const std::string& text) {
        fs::path p = tmp / "bad.csv";
        write_file(p, text);
        CHECK_THROWS_AS(detail::parse_prior_file(p), DataError);
    };
    reject("a,0.5\na,0.5\n");      // duplicate id
    reject("a,0\n");               // non-positive
    reject("a,-1\n");              // negative
    reject("a,abc\n");             // not a number
    reject("a 0.5\n");             // no comma
    reject("# comment only\n");    // no entries
    CHECK_THROWS_AS(detail::parse_prior_file(tmp / "does_not_exist.csv"), DataError);

    fs::path good = tmp / "good.csv";
    write_file(good, "b,2\na,1\n");
    auto table = detail::parse_prior_file(good);
    REQUIRE(table.size() == 2);
    CHECK(table.at("a") == 1.0);
    CHECK(table.at("b") == 2.0);
}

TEST_CASE("content hashing is stable and path-sensitive", "[pipeline]") {
    TempDir tmp;

    // FNV-1a 64-bit reference values.
    CHECK(detail::hash_hex(detail::kFnvOffset) == "cbf29ce484222325");
    fs::path one = tmp / "one.txt";
    write_file(one, "a");
    CHECK(detail::content_hash(one) == "af63dc4c8601ec8c");

    // File hashes depend on bytes only, not on the file name.
    fs::path two = tmp / "two.txt";
    write_file(two, "a");
    CHECK(detail::content_hash(two) == detail::content_hash(one));
    write_file(two, "b");
    CHECK(detail::content_hash(two) != detail::content_hash(one));

    // Directory hashes cover relative paths and contents of every file.
    fs::path d1 = tmp / "d1";
    write_file(d1 / "x.txt", "1");
    write_file(d1 / "sub/y.txt", "2");
    fs::path d2 = tmp / "d2";
    write_file(d2 / "x.txt", "1");
    write_file(d2 / "sub/y.txt", "2");
    CHECK(detail::content_hash(d1) == detail::content_hash(d2));

    write_file(d2 / "sub/y.txt", "3");
    CHECK(detail::content_hash(d1) != detail::content_hash(d2));
    write_file(d2 / "sub/y.txt", "2");
    CHECK(detail::content_hash(d1) == detail::content_hash(d2));
    fs::rename(d2 / "sub/y.txt", d2 / "sub/z.txt");
    CHECK(detail::content_hash(d1) != detail::content_hash(d2));

    CHECK_THROWS_AS(detail::content_hash(tmp / "nope"), DataError);
}

TEST_CASE("cache validity requires manifest match and outputs", "[pipeline]") {
    TempDir tmp;
    fs::path manifest = tmp / "m.json";
    fs::path out1 = tmp / "a.csv";
    fs::path out2 = tmp / "b.csv";

    CHECK_FALSE(detail::cache_valid(manifest, "text", {out1}));

    write_file(manifest, "text");
    write_file(out1, "payload");
    write_file(out2, "payload");
    CHECK(detail::cache_valid(manifest, "text", {out1, out2}));
    CHECK_FALSE(detail::cache_valid(manifest, "other text", {out1, out2}));

    fs::remove(out2);
    CHECK_FALSE(detail::cache_valid(manifest, "text", {out1, out2}));
    CHECK(detail::cache_valid(manifest, "text", {out1}));
}

TEST_CASE("world assembly from pipeline config", "[pipeline]") {
    TempDir tmp;
    std::vector<std::string> websites{"siteA", "siteB", "siteC"};

    PipelineConfig cfg;
    cfg.dataset_dir = tmp / "unused";
    cfg.output_dir = tmp / "out";

    WorldConfig closed = detail::make_world(cfg, websites);
    CHECK(closed.mode == WorldConfig::Mode::closed);
    CHECK(closed.websites == websites);
    REQUIRE(closed.prior.size() == 3);
    CHECK_NOTHROW(closed.validate());

    cfg.mode = "open";
    cfg.monitored_file = tmp / "monitored.txt";
    write_file(cfg.monitored_file, "# watched sites\nsiteB\n");
    WorldConfig open = detail::make_world(cfg, websites);
    CHECK(open.mode == WorldConfig::Mode::open);
    CHECK(open.monitored == std::vector<std::string>{"siteB"});
    CHECK(open.non_monitored == std::vector<std::string>{"siteA", "siteC"});
    REQUIRE(open.prior.size() == 2); // monitored outcomes plus the lump
    CHECK_NOTHROW(open.validate());

    write_file(cfg.monitored_file, "siteB\nsiteB\n");
    CHECK_THROWS_AS(detail::make_world(cfg, websites), DataError);
    write_file(cfg.monitored_file, "siteX\n");
    CHECK_THROWS_AS(detail::make_world(cfg, websites), DataError);
    write_file(cfg.monitored_file, "# nothing\n");
    CHECK_THROWS_AS(detail::make_world(cfg, websites), DataError);
}

TEST_CASE("grouping report round-trips through json", "[pipeline]") {
    // Feature 0 separates the two sites, feature 1 duplicates it, feature 2
    // is constant; the grouping must come back exactly as reported.
    FeatureTable table;
    table.websites = {"s0", "s1"};
    for (std::size_t s = 0; s < 2; ++s) {
        table.rows.emplace_back();
        table.visit_ids.emplace_back();
        for (std::size_t v = 0; v < 12; ++v) {
            FeatureVector fv;
            fv.values = {static_cast<double>(s), static_cast<double>(s), 3.0};
            table.rows.back().push_back(std::move(fv));
            table.visit_ids.back().push_back("v" + std::to_string(v));
        }
    }
    McConfig mc{400, 11};
    BuildOptions opts;
    opts.top_n = 4;
    GroupingResult res = build_grouping(table, DiscreteDistribution::uniform(2), mc, opts);
    REQUIRE(res.grouping.kept_features == std::vector<std::size_t>{0});
    REQUIRE(res.grouping.pruned_redundant ==
            std::vector<std::pair<std::size_t, std::size_t>>{{1, 0}});
    REQUIRE(res.degenerate_skipped == std::vector<std::size_t>{2});

    nlohmann::json j = grouping_report_json(res);
    CHECK(j.at("kept").size() == 1);
    CHECK(j.at("kept")[0].at("feature").get<std::size_t>() == 0);
    CHECK(j.at("kept")[0].at("category").get<std::string>() == "packet_count");
    CHECK(j.at("underfull").get<bool>() == true);

    FeatureGrouping g = grouping_from_json(j);
    CHECK(g.kept_features == res.grouping.kept_features);
    CHECK(g.per_feature_bits == res.grouping.per_feature_bits);
    CHECK(g.clusters == res.grouping.clusters);
    CHECK(g.pruned_redundant == res.grouping.pruned_redundant);
    CHECK_NOTHROW(g.validate());

    nlohmann::json broken = j;
    broken.erase("clusters");
    CHECK_THROWS_AS(grouping_from_json(broken), DataError);

    nlohmann::json inconsistent = j;
    inconsistent["clusters"] = std::vector<std::vector<std::size_t>>{{0}, {999}};
    CHECK_THROWS_AS(grouping_from_json(inconsistent), std::invalid_argument);
}

TEST_CASE("extract stage writes artifacts and honors the cache", "[pipeline]") {
    TempDir tmp;
    fs::path data = tmp / "data";
    save_dataset(demo_dataset(), data);
    PipelineConfig cfg = demo_config(data, tmp / "out");

    fs::path features = stage_extract(cfg);
    REQUIRE(fs::exists(features));
    REQUIRE(fs::exists(cfg.output_dir / "layout.json"));
    REQUIRE(fs::exists(cfg.output_dir / "extract_manifest.json"));

    std::istringstream in(read_file(features));
    FeatureTable table = read_feature_csv(in);
    CHECK(table.websites == std::vector<std::string>{"siteA", "siteB", "siteC"});
    CHECK(table.total_rows() == 18);
    REQUIRE(table.rows[0][0].values.size() == kFeatureCount);
    CHECK(table.rows[0][0].values[0] == 12.0); // total packet count of siteA visit v0

    auto layout = nlohmann::json::parse(read_file(cfg.output_dir / "layout.json"));
    CHECK(layout.at("total_features").get<std::size_t>() == kFeatureCount);
    REQUIRE(layout.at("categories").size() == category_layout().size());
    CHECK(layout.at("categories")[0].at("name").get<std::string>() == "packet_count");

    // Unchanged inputs: the stage must skip the write entirely.
    std::string original = read_file(features);
    write_file(features, original + "TAMPERED\n");
    stage_extract(cfg);
    CHECK(read_file(features) == original + "TAMPERED\n");

    // A changed config invalidates the manifest and rewrites the artifact.
    PipelineConfig cell_cfg = cfg;
    cell_cfg.cell_size = 1; // identity on unit-length cells
    stage_extract(cell_cfg);
    CHECK(read_file(features) == original);

    // A changed dataset invalidates the input hash.
    write_file(data / "siteA" / "v9.trace", "0.0\t-1\n0.1\t1\n0.2\t1\n0.3\t-1\n");
    stage_extract(cell_cfg);
    std::istringstream in2(read_file(features));
    CHECK(read_feature_csv(in2).total_rows() == 19);

    PipelineConfig bad = cfg;
    bad.dataset_dir.clear();
    CHECK_THROWS_AS(stage_extract(bad), std::invalid_argument);
}

TEST_CASE("analyze and leakage stages produce coherent artifacts", "[pipeline]") {
    TempDir tmp;
    fs::path data = tmp / "data";
    save_dataset(demo_dataset(), data);
    PipelineConfig cfg = demo_config(data, tmp / "out");

    fs::path grouping_path = stage_analyze(cfg);
    REQUIRE(fs::exists(grouping_path));
    fs::path ranking_path = cfg.output_dir / "ranking.csv";
    REQUIRE(fs::exists(ranking_path));
    REQUIRE(fs::exists(cfg.output_dir / "analyze_manifest.json"));

    std::string ranking = read_file(ranking_path);
    CHECK(line_count(ranking) == kFeatureCount + 1);
    CHECK(ranking.rfind("rank,feature,name,category,bits,failed\n", 0) == 0);
    auto first_row = split_csv_line(ranking.substr(ranking.find('\n') + 1,
                                                   ranking.find('\n', ranking.find('\n') + 1) -
                                                       ranking.find('\n') - 1));
    REQUIRE(first_row.size() == 6);
    CHECK(first_row[0] == "0");
    CHECK(std::stod(first_row[4]) > 1.3); // a clean separator approaches log2(3)
    CHECK(first_row[5] == "0");

    FeatureGrouping grouping = grouping_from_json(nlohmann::json::parse(read_file(grouping_path)));
    CHECK_NOTHROW(grouping.validate());
    CHECK(grouping.kept_features.size() >= 1);
    CHECK(grouping.kept_features.size() <= cfg.top_n);

    // Joint leakage over the grouping, with the per-category breakdown.
    fs::path leakage_path = stage_leakage(cfg, true);
    REQUIRE(fs::exists(leakage_path));
    auto lj = nlohmann::json::parse(read_file(leakage_path));
    CHECK(lj.at("mode").get<std::string>() == "closed");
    CHECK(lj.at("prior_spec").get<std::string>() == "uniform");
    CHECK(lj.at("k").get<std::size_t>() == cfg.mc_samples);
    CHECK(lj.at("seed").get<std::uint64_t>() == cfg.seed);
    CHECK(lj.at("degenerate_sample_count").get<std::size_t>() == 0);
    double bits = lj.at("bits").get<double>();
    CHECK(bits == Catch::Approx(std::log2(3.0)).margin(0.2));
    CHECK(lj.at("stderr").get<double>() >= 0.0);

    auto cats = lj.at("per_category");
    REQUIRE(cats.size() == category_layout().size());
    std::size_t covered = 0;
    for (std::size_t i = 0; i < cats.size(); ++i) {
        CHECK(cats[i].at("name").get<std::string>() == category_layout()[i].name);
        CHECK(cats[i].at("bits").get<double>() >= 0.0);
        covered += cats[i].at("feature_count").get<std::size_t>();
    }
    CHECK(covered == grouping.kept_features.size());

    // Individual mode ranks every feature into its own artifact.
    fs::path individual_path = stage_leakage(cfg, false);
    CHECK(individual_path.filename() == "individual_leakage.csv");
    std::string individual = read_file(individual_path);
    CHECK(line_count(individual) == kFeatureCount + 1);
    REQUIRE(fs::exists(cfg.output_dir / "individual_leakage_manifest.json"));

    // The same inputs and knobs yield byte-identical artifacts in a fresh
    // output directory, regardless of the thread count.
    PipelineConfig cfg2 = cfg;
    cfg2.output_dir = tmp / "out2";
    cfg2.threads = 2;
    stage_leakage(cfg2, true);
    for (const char* name : {"features.csv", "grouping.json", "ranking.csv", "leakage.json"})
        CHECK(read_file(cfg.output_dir / name) == read_file(cfg2.output_dir / name));

    // Cached stages must not rewrite their artifacts...
    write_file(ranking_path, "sentinel-ranking");
    write_file(leakage_path, "sentinel-leakage");
    stage_leakage(cfg, true);
    CHECK(read_file(ranking_path) == "sentinel-ranking");
    CHECK(read_file(leakage_path) == "sentinel-leakage");

    // ...until their own manifest disappears; upstream stages stay cached.
    fs::remove(cfg.output_dir / "leakage_manifest.json");
    stage_leakage(cfg, true);
    CHECK(read_file(leakage_path) == read_file(cfg2.output_dir / "leakage.json"));
    CHECK(read_file(ranking_path) == "sentinel-ranking");

    // Open mode lumps the complement of the monitored list: with only siteB
    // monitored and perfect separation the leakage is the 1-bit prior entropy.
    PipelineConfig open_cfg = cfg2;
    open_cfg.mode = "open";
    open_cfg.monitored_file = tmp / "monitored.txt";
    write_file(open_cfg.monitored_file, "siteB\n");
    auto oj = nlohmann::json::parse(read_file(stage_leakage(open_cfg, true)));
    CHECK(oj.at("mode").get<std::string>() == "open");
    CHECK(oj.at("bits").get<double>() == Catch::Approx(1.0).margin(0.25));
}

TEST_CASE("defend stage rewrites the dataset and reports overhead", "[pipeline]") {
    TempDir tmp;
    fs::path data = tmp / "data";
    save_dataset(demo_dataset(), data);
    PipelineConfig cfg = demo_config(data, tmp / "out");
    cfg.defense = "tamaraw";
    cfg.tamaraw.L = 4;

    fs::path overhead_path = stage_defend(cfg);
    REQUIRE(overhead_path.filename() == "overhead.csv");
    REQUIRE(fs::exists(cfg.output_dir / "defended"));
    REQUIRE(fs::exists(cfg.output_dir / "overhead_summary.json"));

    Dataset defended = load_dataset(cfg.output_dir / "defended");
    REQUIRE(defended.websites == std::vector<std::string>{"siteA", "siteB", "siteC"});
    for (const auto& site : defended.traces) {
        REQUIRE(site.size() == 6);
        for (const auto& t : site) {
            std::size_t in = 0, out = 0;
            for (const auto& p : t.packets) {
                REQUIRE((p.length == 1 || p.length == -1));
                (p.incoming() ? in : out) += 1;
            }
            CHECK(in % 4 == 0);  // padded to a multiple of L per direction
            CHECK(out % 4 == 0);
        }
    }

    std::string overhead = read_file(overhead_path);
    CHECK(line_count(overhead) == 19);
    CHECK(overhead.rfind("website_id,visit_id,real_cells,defended_cells,bandwidth_ratio,"
                         "original_duration,defended_duration,latency_ratio\n",
                         0) == 0);

    auto summary = nlohmann::json::parse(read_file(cfg.output_dir / "overhead_summary.json"));
    CHECK(summary.at("defense").get<std::string>() == "tamaraw");
    CHECK(summary.at("total_real_cells").get<std::size_t>() == 297);
    CHECK(summary.at("total_defended_cells").get<std::size_t>() >= 297);
    CHECK(summary.at("bandwidth_overhead").get<double>() >= 1.0);
    CHECK(summary.at("params").at("L").get<std::size_t>() == 4);

    // Cached rerun leaves artifacts alone.
    write_file(overhead_path, "sentinel");
    stage_defend(cfg);
    CHECK(read_file(overhead_path) == "sentinel");

    // The BuFLO route pads on a fixed clock from the first packet.
    PipelineConfig bcfg = demo_config(data, tmp / "out_buflo");
    bcfg.defense = "buflo";
    bcfg.buflo.tau = 0.3;
    bcfg.buflo.rho = 0.05;
    stage_defend(bcfg);
    Dataset buflo = load_dataset(bcfg.output_dir / "defended");
    for (const auto& t : buflo.traces[0]) {
        CHECK(t.duration() >= bcfg.buflo.tau - 1e-9);
        for (std::size_t i = 0; i < t.packets.size(); ++i)
            CHECK(t.packets[i].time ==
                  Catch::Approx(static_cast<double>(i) * bcfg.buflo.rho).margin(1e-12));
    }
    auto bsummary = nlohmann::json::parse(read_file(bcfg.output_dir / "overhead_summary.json"));
    CHECK(bsummary.at("params").at("tau").get<double>() == 0.3);

    PipelineConfig bad = cfg;
    bad.defense = "quilt";
    CHECK_THROWS_AS(stage_defend(bad), std::invalid_argument);
}

TEST_CASE("bounds stage sweeps the accuracy band", "[pipeline]") {
    TempDir tmp;
    PipelineConfig cfg;
    cfg.output_dir = tmp / "out";
    cfg.bounds_n = 100;
    cfg.accuracy = 0.95;
    cfg.sweep_steps = 4;

    fs::path bounds_path = stage_bounds(cfg);
    std::string csv = read_file(bounds_path);
    REQUIRE(csv.rfind("alpha,range_bits,min_bits,max_bits\n", 0) == 0);
    REQUIRE(line_count(csv) == 7); // header + {0, 0.25, 0.5, 0.75, 0.95, 1}

    std::istringstream in(csv);
    std::string line;
    std::getline(in, line);
    double prev_alpha = -1.0;
    bool saw_accuracy = false;
    while (std::getline(in, line)) {
        auto fields = split_csv_line(line);
        REQUIRE(fields.size() == 4);
        double alpha = std::stod(fields[0]);
        double range = std::stod(fields[1]);
        double lo = std::stod(fields[2]);
        double hi = std::stod(fields[3]);
        CHECK(alpha > prev_alpha);
        prev_alpha = alpha;
        CHECK(hi - lo == Catch::Approx(range).margin(1e-9));
        if (alpha == 0.95) {
            saw_accuracy = true;
            CHECK(range == Catch::Approx(0.3314678310039805).margin(1e-9));
            CHECK(lo == Catch::Approx(6.025991401654802).margin(1e-6));
            CHECK(hi == Catch::Approx(6.357459232658768).margin(1e-6));
        }
        if (alpha == 1.0) { // perfect accuracy pins both bounds at H(prior)
            CHECK(lo == Catch::Approx(std::log2(100.0)).margin(1e-9));
            CHECK(hi == Catch::Approx(std::log2(100.0)).margin(1e-9));
        }
    }
    CHECK(saw_accuracy);

    // Prior file route: three outcomes with entropy 1.5 bits.
    PipelineConfig fcfg;
    fcfg.output_dir = tmp / "out_file";
    fcfg.bounds_prior_file = tmp / "prior.csv";
    write_file(fcfg.bounds_prior_file, "w1,0.5\nw2,0.25\nw3,0.25\n");
    fcfg.accuracy = 1.0;
    std::string fcsv = read_file(stage_bounds(fcfg));
    REQUIRE(line_count(fcsv) == 2);
    auto fields = split_csv_line(fcsv.substr(fcsv.find('\n') + 1,
                                             fcsv.find('\n', fcsv.find('\n') + 1) -
                                                 fcsv.find('\n') - 1));
    CHECK(std::stod(fields[2]) == Catch::Approx(1.5).margin(1e-12));
    CHECK(std::stod(fields[3]) == Catch::Approx(1.5).margin(1e-12));

    PipelineConfig bad = cfg;
    bad.bounds_n = 1;
    CHECK_THROWS_AS(stage_bounds(bad), std::invalid_argument);
    bad = cfg;
    bad.accuracy = 1.5;
    CHECK_THROWS_AS(stage_bounds(bad), std::invalid_argument);
    bad = cfg;
    bad.output_dir.clear();
    CHECK_THROWS_AS(stage_bounds(bad), std::invalid_argument);
}

TEST_CASE("validate stage resamples the joint estimate", "[pipeline]") {
    TempDir tmp;
    fs::path data = tmp / "data";
    save_dataset(demo_dataset(), data);

    PipelineConfig cfg = demo_config(data, tmp / "out");
    cfg.mc_samples = 30;
    cfg.top_n = 2;
    cfg.trials = 3;
    cfg.ci_level = 0.8;
    cfg.seed = 5;

    fs::path result_path = stage_validate(cfg);
    REQUIRE(result_path.filename() == "validate.json");
    auto j = nlohmann::json::parse(read_file(result_path));
    CHECK(j.at("mode").get<std::string>() == "bootstrap");
    CHECK(j.at("trials").get<std::size_t>() == 3);
    CHECK(j.at("ci_level").get<double>() == 0.8);
    CHECK(j.at("seed").get<std::uint64_t>() == 5);
    CHECK(j.at("failed_trials").get<std::size_t>() == 0);
    CHECK(j.contains("point"));
    CHECK_FALSE(j.contains("world_size"));
    double low = j.at("low").get<double>();
    double high = j.at("high").get<double>();
    CHECK(low <= high);
    REQUIRE(j.at("trial_values").size() == 3);
    for (const auto& v : j.at("trial_values"))
        CHECK(std::isfinite(v.get<double>()));
    CHECK(line_count(read_file(cfg.output_dir / "validate_trials.csv")) == 4);

    PipelineConfig scfg = cfg;
    scfg.output_dir = tmp / "out_sub";
    scfg.resample = "subsample";
    scfg.world_size = 2;
    auto sj = nlohmann::json::parse(read_file(stage_validate(scfg)));
    CHECK(sj.at("mode").get<std::string>() == "subsample");
    CHECK(sj.at("world_size").get<std::size_t>() == 2);
    CHECK_FALSE(sj.contains("point"));
    CHECK(sj.at("low").get<double>() <= sj.at("high").get<double>());

    PipelineConfig bad = cfg;
    bad.resample = "jackknife";
    CHECK_THROWS_AS(stage_validate(bad), std::invalid_argument);
}

TEST_CASE("pipeline config validation", "[pipeline]") {
    PipelineConfig cfg;
    cfg.dataset_dir = "/tmp/ds";
    cfg.output_dir = "/tmp/out";
    CHECK_NOTHROW(cfg.validate_common());

    PipelineConfig bad = cfg;
    bad.output_dir.clear();
    CHECK_THROWS_AS(bad.validate_common(), std::invalid_argument);

    bad = cfg;
    bad.mode = "half-open";
    CHECK_THROWS_AS(bad.validate_common(), std::invalid_argument);

    bad = cfg;
    bad.mode = "open"; // open mode without a monitored list
    CHECK_THROWS_AS(bad.validate_common(), std::invalid_argument);

    bad = cfg;
    bad.nmi_estimator = "exact";
    CHECK_THROWS_AS(bad.validate_common(), std::invalid_argument);

    bad = cfg;
    bad.prior = "file:";
    CHECK_THROWS_AS(bad.validate_common(), std::invalid_argument);
}

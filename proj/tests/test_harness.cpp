#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "freeform/errors.hpp"
#include "freeform/harness.hpp"
#include "freeform/random.hpp"
#include "test_util.hpp"

using namespace freeform;
using namespace freeform::harness;
using nlohmann::json;

namespace {

/// Small additive benchmark written to disk, with its oracle score map.
struct Bench {
    std::filesystem::path dir;
    std::filesystem::path csv;
    std::filesystem::path scores;
    SyntheticData synth;
};

Bench make_bench(const std::string& stem, SyntheticSpec spec) {
    Bench b;
    b.dir = test_util::make_temp_dir(stem);
    b.synth = make_synthetic(spec);
    b.csv = b.dir / "data.csv";
    dataset::write_dataset(b.synth.data, b.csv);
    json scores = json::object();
    for (const auto& [name, s] : b.synth.scores) scores[name] = s;
    b.scores = b.dir / "scores.json";
    test_util::write_file(b.scores, scores.dump());
    return b;
}

SyntheticSpec small_spec() {
    SyntheticSpec spec;
    spec.n_samples = 48;
    spec.n_variants = 24;
    spec.n_signals = 4;
    spec.n_classes = 2;
    spec.effect = 2.0;
    spec.seed = 11;
    return spec;
}

/// Fast zero-temperature selection settings sized for small variant pools.
void tune_selection(ExperimentConfig& cfg, std::size_t d_prime) {
    cfg.selection.d_prime = d_prime;
    cfg.selection.intermediate_iters = 1;
    cfg.selection.final_iters = 2;
    cfg.selection.temp_intermediate = 0.0;
    cfg.selection.temp_final = 0.0;
}

ExperimentConfig base_config(const Bench& b) {
    ExperimentConfig cfg = ExperimentConfig::from_json(json::object());
    cfg.dataset_path = b.csv.string();
    cfg.provider_kind = "oracle";
    cfg.oracle_scores_path = b.scores.string();
    cfg.output_dir = (b.dir / "out").string();
    cfg.shot_counts = {8, 16};
    cfg.repeats = 3;
    cfg.seed = 5;
    cfg.workers = 2;
    cfg.cv_k = 3;
    cfg.methods = {"hierarchical", "lasso"};
    tune_selection(cfg, 4);
    cfg.engineering.K = 2;
    cfg.engineering.max_examples = 8;
    return cfg;
}

std::vector<std::string> top_by_score(const SyntheticData& synth, std::size_t n) {
    std::vector<std::pair<std::string, double>> items(synth.scores.begin(), synth.scores.end());
    std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    std::vector<std::string> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(items[i].first);
    return out;
}

int cli(std::initializer_list<std::string> args) {
    std::vector<std::string> storage{"freeform"};
    storage.insert(storage.end(), args.begin(), args.end());
    std::vector<const char*> argv;
    for (const auto& s : storage) argv.push_back(s.c_str());
    return run_cli(static_cast<int>(argv.size()), argv.data());
}

json read_json(const std::filesystem::path& p) { return json::parse(test_util::read_file(p)); }

}  // namespace

// ---------------------------------------------------------------------------
// modes

TEST_CASE("mode names round trip") {
    for (Mode m : {Mode::SelectCompare, Mode::Engineer, Mode::Nominate, Mode::FullPipeline})
        CHECK(mode_from_name(mode_name(m)) == m);
    CHECK(mode_name(Mode::SelectCompare) == "select-compare");
    CHECK(mode_name(Mode::FullPipeline) == "full-pipeline");
    CHECK_THROWS_AS(mode_from_name("bogus"), ConfigError);
}

// ---------------------------------------------------------------------------
// synthetic benchmark

TEST_CASE("synthetic additive data satisfies its invariants") {
    SyntheticSpec spec = small_spec();
    const auto synth = make_synthetic(spec);
    const auto& ds = synth.data;

    CHECK(ds.n_samples() == spec.n_samples);
    CHECK(ds.n_variants() == spec.n_variants);
    for (const auto& row : ds.values)
        for (auto v : row) CHECK(v <= 2);

    REQUIRE(synth.planted.size() == spec.n_signals);
    CHECK(synth.scores.size() == spec.n_variants);

    // planted scores strictly descending, every planted above every decoy
    std::set<std::string> planted(synth.planted.begin(), synth.planted.end());
    for (std::size_t i = 1; i < synth.planted.size(); ++i)
        CHECK(synth.scores.at(synth.planted[i - 1]) > synth.scores.at(synth.planted[i]));
    double max_decoy = -1e300;
    for (const auto& [name, s] : synth.scores)
        if (!planted.count(name)) max_decoy = std::max(max_decoy, s);
    CHECK(synth.scores.at(synth.planted.back()) > max_decoy);

    // all scores distinct
    std::set<double> distinct;
    for (const auto& [name, s] : synth.scores) distinct.insert(s);
    CHECK(distinct.size() == spec.n_variants);

    // both classes realized, class_set in first-appearance order
    REQUIRE(ds.class_set.size() == spec.n_classes);
    CHECK(ds.class_set[0] == ds.labels[0]);
    for (const auto& label : ds.labels)
        CHECK(std::find(ds.class_set.begin(), ds.class_set.end(), label) != ds.class_set.end());
}

TEST_CASE("synthetic generation is deterministic in its parameters") {
    const auto a = make_synthetic(small_spec());
    const auto b = make_synthetic(small_spec());
    CHECK(a.data.values == b.data.values);
    CHECK(a.data.labels == b.data.labels);
    CHECK(a.planted == b.planted);
    CHECK(a.scores == b.scores);

    SyntheticSpec other = small_spec();
    other.seed = 12;
    const auto c = make_synthetic(other);
    CHECK(a.data.values != c.data.values);
}

TEST_CASE("synthetic product labels equal the planted-pair indicator") {
    SyntheticSpec spec = small_spec();
    spec.kind = SyntheticSpec::Kind::Product;
    spec.n_samples = 120;
    const auto synth = make_synthetic(spec);
    const auto& ds = synth.data;

    const auto col = [&](const std::string& name) {
        return static_cast<std::size_t>(
            std::find(ds.variant_names.begin(), ds.variant_names.end(), name) -
            ds.variant_names.begin());
    };
    const std::size_t a = col(synth.planted[0]);
    const std::size_t b = col(synth.planted[1]);
    REQUIRE(a < ds.n_variants());
    REQUIRE(b < ds.n_variants());
    for (std::size_t i = 0; i < ds.n_samples(); ++i) {
        const bool on = ds.values[i][a] * ds.values[i][b] > 0;
        CHECK(ds.labels[i] == (on ? "c1" : "c0"));
    }
}

TEST_CASE("synthetic spec validation") {
    SyntheticSpec spec = small_spec();
    spec.n_classes = 1;
    CHECK_THROWS_AS(make_synthetic(spec), ConfigError);

    spec = small_spec();
    spec.kind = SyntheticSpec::Kind::Product;
    spec.n_signals = 1;
    CHECK_THROWS_AS(make_synthetic(spec), ConfigError);

    spec = small_spec();
    spec.n_variants = 3;  // fewer than n_signals
    CHECK_THROWS_AS(make_synthetic(spec), ConfigError);

    spec = small_spec();
    spec.decoy_high = 2.5;  // overlaps the signal band
    CHECK_THROWS_AS(make_synthetic(spec), ConfigError);

    spec = small_spec();
    spec.signal_high = 1.0;  // inverted band
    CHECK_THROWS_AS(make_synthetic(spec), ConfigError);
}

// ---------------------------------------------------------------------------
// config

TEST_CASE("config defaults and derived sub-seeds") {
    const auto cfg = ExperimentConfig::from_json(json::object());
    CHECK(cfg.mode == Mode::SelectCompare);
    CHECK(cfg.shot_counts == std::vector<std::size_t>{10, 20, 40, 80, 160, 320});
    CHECK(cfg.repeats == 5);
    CHECK(cfg.seed == 1);
    CHECK(cfg.cv_k == 4);
    CHECK(cfg.methods == std::vector<std::string>{"hierarchical", "lasso", "pca", "gini"});
    CHECK(cfg.provider_kind == "replay");
    CHECK(cfg.api_key_env == "OPENAI_API_KEY");
    CHECK(cfg.output_dir == "reports");
    CHECK(cfg.nominate_n == 15);
    CHECK(cfg.selection.seed == rng::derive_seed(1, {0x5e}));
    CHECK(cfg.engineering.seed == rng::derive_seed(1, {0xe9}));
}

TEST_CASE("config sub-seeds follow the master seed unless pinned") {
    const auto derived = ExperimentConfig::from_json(json{{"seed", 42}});
    CHECK(derived.seed == 42);
    CHECK(derived.selection.seed == rng::derive_seed(42, {0x5e}));
    CHECK(derived.engineering.seed == rng::derive_seed(42, {0xe9}));

    const auto pinned = ExperimentConfig::from_json(
        json{{"seed", 42}, {"selection", {{"seed", 7}}}, {"engineering", {{"seed", 8}}}});
    CHECK(pinned.selection.seed == 7);
    CHECK(pinned.engineering.seed == 8);
}

TEST_CASE("config JSON round trip is lossless") {
    ExperimentConfig cfg = ExperimentConfig::from_json(json::object());
    cfg.dataset_path = "d.csv";
    cfg.label_column = "pop";
    cfg.mode = Mode::Engineer;
    cfg.shot_counts = {4, 8};
    cfg.repeats = 2;
    cfg.seed = 99;
    cfg.workers = 3;
    cfg.methods = {"sequential", "pca"};
    cfg.use_filter = true;
    cfg.averaging = models::Averaging::Micro;
    cfg.provider_kind = "oracle";
    cfg.cache_path = "c.jsonl";
    cfg.oracle_scores_path = "s.json";
    cfg.selection.d_prime = 3;
    cfg.selection.temp_final = 0.25;
    cfg.engineering.K = 4;
    cfg.engineering.serialization.style = dataset::SerializationStyle::Genotype;
    cfg.preselected = {"rs1", "rs2"};
    cfg.phenotype = "ancestry";
    cfg.nominate_n = 6;

    const auto round = ExperimentConfig::from_json(cfg.to_json());
    CHECK(round.to_json().dump() == cfg.to_json().dump());
    CHECK(round.mode == Mode::Engineer);
    CHECK(round.averaging == models::Averaging::Micro);
    CHECK(round.engineering.serialization.style == dataset::SerializationStyle::Genotype);
    CHECK(round.preselected == cfg.preselected);
}

TEST_CASE("config validation rejects bad sweeps and wiring") {
    auto cfg = ExperimentConfig::from_json(json::object());
    CHECK_NOTHROW(cfg.validate());

    auto bad = cfg;
    bad.shot_counts = {};
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = cfg;
    bad.shot_counts = {10, 10};
    CHECK_THROWS_WITH_AS(bad.validate(), "shot_counts must be strictly ascending", ConfigError);
    bad = cfg;
    bad.shot_counts = {0, 5};
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = cfg;
    bad.repeats = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = cfg;
    bad.cv_k = 1;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = cfg;
    bad.methods = {};
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = cfg;
    bad.methods = {"hierarchical", "bogus"};
    CHECK_THROWS_WITH_AS(bad.validate(), "unknown selection method: bogus", ConfigError);
    bad = cfg;
    bad.provider_kind = "psychic";
    CHECK_THROWS_WITH_AS(bad.validate(), "unknown provider kind: psychic", ConfigError);
    bad = cfg;
    bad.mode = Mode::Nominate;
    CHECK_THROWS_WITH_AS(bad.validate(), "nominate mode needs a phenotype", ConfigError);
    bad = cfg;
    bad.nominate_n = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = cfg;
    bad.selection.d_prime = 0;  // nested configs validate too
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("config from_json wraps type errors and unknown enums") {
    CHECK_THROWS_AS(ExperimentConfig::from_json(json{{"repeats", "many"}}), ConfigError);
    CHECK_THROWS_AS(ExperimentConfig::from_json(json{{"shot_counts", "all"}}), ConfigError);
    CHECK_THROWS_AS(ExperimentConfig::from_json(json{{"averaging", "harmonic"}}), ConfigError);
    CHECK_THROWS_AS(ExperimentConfig::from_json(json{{"mode", "dream"}}), ConfigError);
    CHECK_THROWS_AS(
        ExperimentConfig::from_json(json{{"engineering", {{"serialization", "yaml"}}}}),
        ConfigError);
}

// ---------------------------------------------------------------------------
// provider wiring

TEST_CASE("load_score_map reads an object of numbers") {
    const auto dir = test_util::make_temp_dir("scores");
    const auto good = dir / "good.json";
    test_util::write_file(good, R"({"rs1": 2.5, "rs2": -1})");
    const auto scores = load_score_map(good.string());
    REQUIRE(scores.size() == 2);
    CHECK(scores.at("rs1") == 2.5);
    CHECK(scores.at("rs2") == -1.0);

    CHECK_THROWS_AS(load_score_map((dir / "absent.json").string()), ConfigError);
    const auto bad = dir / "bad.json";
    test_util::write_file(bad, "{not json");
    CHECK_THROWS_AS(load_score_map(bad.string()), ConfigError);
    const auto arr = dir / "arr.json";
    test_util::write_file(arr, "[1, 2]");
    CHECK_THROWS_AS(load_score_map(arr.string()), ConfigError);
    const auto str = dir / "str.json";
    test_util::write_file(str, R"({"rs1": "high"})");
    CHECK_THROWS_AS(load_score_map(str.string()), ConfigError);
}

TEST_CASE("make_provider validates wiring per kind") {
    auto cfg = ExperimentConfig::from_json(json::object());

    cfg.provider_kind = "oracle";
    cfg.oracle_scores_path = "";
    CHECK_THROWS_WITH_AS(make_provider(cfg), "oracle provider needs provider.oracle_scores",
                         ConfigError);

    cfg.provider_kind = "replay";
    cfg.cache_path = "";
    CHECK_THROWS_WITH_AS(make_provider(cfg), "replay provider needs provider.cache", ConfigError);

    cfg.provider_kind = "record";
    cfg.cache_path = "";
    CHECK_THROWS_WITH_AS(make_provider(cfg), "record provider needs provider.cache", ConfigError);

    // strict replay of a cache that was never recorded
    const auto dir = test_util::make_temp_dir("wiring");
    cfg.provider_kind = "replay";
    cfg.cache_path = (dir / "absent.jsonl").string();
    CHECK_THROWS_AS(make_provider(cfg), CacheMiss);
}

TEST_CASE("oracle provider wiring answers and optionally records") {
    const auto dir = test_util::make_temp_dir("oracle-wiring");
    test_util::write_file(dir / "scores.json", R"({"rs1": 9.0, "rs2": 0.1})");

    auto cfg = ExperimentConfig::from_json(json::object());
    cfg.provider_kind = "oracle";
    cfg.oracle_scores_path = (dir / "scores.json").string();

    llm::PromptRequest req;
    req.user_text = "Candidate variants:\n- rs1\n- rs2\nAnswer Yes or No per variant.";
    req.temperature = 0.0;
    req.tag = llm::Tag::Filter;

    auto plain = make_provider(cfg);
    const auto resp = plain->complete(req);
    CHECK(resp.text.find("rs1: Yes") != std::string::npos);
    CHECK(resp.text.find("rs2: No") != std::string::npos);

    cfg.cache_path = (dir / "cache.jsonl").string();
    auto recording = make_provider(cfg);
    CHECK(recording->complete(req).text == resp.text);
    const auto cached = llm::CacheLog::load(cfg.cache_path);
    REQUIRE(cached.size() == 1);
    CHECK(cached[0].response.text == resp.text);

    // the recorded cache satisfies a strict replay of the same request
    cfg.provider_kind = "replay";
    auto replay = make_provider(cfg);
    const auto replayed = replay->complete(req);
    CHECK(replayed.text == resp.text);
    CHECK(replayed.cached);
}

// ---------------------------------------------------------------------------
// selection comparison runs

TEST_CASE("selection compare sweep covers every cell exactly once") {
    const auto b = make_bench("compare", small_spec());
    const auto cfg = base_config(b);
    auto provider = make_provider(cfg);

    RunReport partial;
    const auto report = run_selection_compare(cfg, b.synth.data, *provider, &partial);

    const std::size_t expected =
        cfg.methods.size() * cfg.shot_counts.size() * cfg.repeats * 2;
    REQUIRE(report.rows.size() == expected);

    // rows laid out method-major, then shots, repeat, classifier
    std::size_t idx = 0;
    std::set<std::tuple<std::string, std::size_t, std::size_t, std::string>> seen;
    for (const auto& method : cfg.methods)
        for (std::size_t shots : cfg.shot_counts)
            for (std::size_t r = 0; r < cfg.repeats; ++r)
                for (const char* cname : {"logistic", "forest"}) {
                    const auto& row = report.rows[idx++];
                    CHECK(row.method == method);
                    CHECK(row.shots == shots);
                    CHECK(row.repeat == r);
                    CHECK(row.classifier == cname);
                    CHECK(row.auroc >= 0.0);
                    CHECK(row.auroc <= 1.0);
                    seen.insert({row.method, row.shots, row.repeat, row.classifier});
                }
    CHECK(seen.size() == expected);

    // partial flushing delivered the same multiset of rows
    REQUIRE(partial.rows.size() == report.rows.size());
    auto key = [](const ReportRow& r) {
        return std::make_tuple(r.method, r.shots, r.repeat, r.classifier, r.auroc);
    };
    std::vector<std::tuple<std::string, std::size_t, std::size_t, std::string, double>> a, c;
    for (const auto& r : report.rows) a.push_back(key(r));
    for (const auto& r : partial.rows) c.push_back(key(r));
    std::sort(a.begin(), a.end());
    std::sort(c.begin(), c.end());
    CHECK(a == c);

    // the zero-temperature oracle selects exactly the top-scored variants
    const auto& sel = report.artifacts.at("llm_selection").at("hierarchical");
    CHECK(sel.at("selected").get<std::vector<std::string>>() ==
          top_by_score(b.synth, cfg.selection.d_prime));
}

TEST_CASE("selection compare aggregates mean and std over repeats") {
    const auto b = make_bench("aggregates", small_spec());
    auto cfg = base_config(b);
    cfg.methods = {"gini"};
    cfg.shot_counts = {8};
    auto provider = make_provider(cfg);

    const auto report = run_selection_compare(cfg, b.synth.data, *provider);
    const auto j = report.to_json();
    REQUIRE(j.at("rows").size() == report.rows.size());
    REQUIRE(j.at("aggregates").size() == 2);  // one method, one shot count, two classifiers

    for (const auto& agg : j.at("aggregates")) {
        CHECK(agg.at("n").get<std::size_t>() == cfg.repeats);
        std::vector<double> values;
        for (const auto& r : report.rows)
            if (r.classifier == agg.at("classifier").get<std::string>() &&
                r.shots == agg.at("shots").get<std::size_t>() &&
                r.method == agg.at("method").get<std::string>())
                values.push_back(r.auroc);
        REQUIRE(values.size() == cfg.repeats);
        double mean = 0.0;
        for (double v : values) mean += v;
        mean /= static_cast<double>(values.size());
        double var = 0.0;
        for (double v : values) var += (v - mean) * (v - mean);
        const double sd = std::sqrt(var / static_cast<double>(values.size() - 1));
        CHECK(agg.at("mean").get<double>() == doctest::Approx(mean).epsilon(1e-12));
        CHECK(agg.at("std").get<double>() == doctest::Approx(sd).epsilon(1e-12));
    }
}

TEST_CASE("selection compare split artifacts record disjoint draws") {
    const auto b = make_bench("splits", small_spec());
    auto cfg = base_config(b);
    cfg.methods = {"pca"};
    auto provider = make_provider(cfg);

    const auto report = run_selection_compare(cfg, b.synth.data, *provider);
    const auto& splits = report.artifacts.at("splits");
    REQUIRE(splits.size() == cfg.shot_counts.size() * cfg.repeats);
    for (const auto& s : splits) {
        const auto shots = s.at("shots").get<std::size_t>();
        const auto train = s.at("train_indices").get<std::vector<std::size_t>>();
        CHECK(train.size() == shots);
        CHECK(std::set<std::size_t>(train.begin(), train.end()).size() == shots);
        for (std::size_t i : train) CHECK(i < b.synth.data.n_samples());
    }

    CHECK(report.provenance.at("mode") == "select-compare");
    CHECK(report.provenance.at("dataset").at("samples") == b.synth.data.n_samples());
    CHECK(report.provenance.at("config").at("seed") == cfg.seed);
}

TEST_CASE("selection compare reports are byte-stable across runs and workers") {
    const auto b = make_bench("determinism", small_spec());
    auto cfg = base_config(b);

    auto p1 = make_provider(cfg);
    const auto r1 = run_selection_compare(cfg, b.synth.data, *p1);
    auto p2 = make_provider(cfg);
    const auto r2 = run_selection_compare(cfg, b.synth.data, *p2);
    CHECK(r1.to_json().dump() == r2.to_json().dump());
    CHECK(r1.to_csv() == r2.to_csv());

    auto serial_cfg = cfg;
    serial_cfg.workers = 1;
    serial_cfg.selection.workers = 1;
    auto p3 = make_provider(serial_cfg);
    const auto r3 = run_selection_compare(serial_cfg, b.synth.data, *p3);
    // worker counts appear in the config snapshot but never in the rows
    CHECK(r1.to_csv() == r3.to_csv());
}

TEST_CASE("selection compare rejects shot counts that exhaust the dataset") {
    const auto b = make_bench("exhaust", small_spec());
    auto cfg = base_config(b);
    cfg.shot_counts = {8, b.synth.data.n_samples()};
    auto provider = make_provider(cfg);
    CHECK_THROWS_AS(run_selection_compare(cfg, b.synth.data, *provider), ConfigError);
}

// ---------------------------------------------------------------------------
// engineering runs

TEST_CASE("engineering sweep with a hopeless generator reduces to the raw model") {
    const auto b = make_bench("eng-garbage", small_spec());
    auto cfg = base_config(b);
    cfg.shot_counts = {8};
    cfg.repeats = 2;
    cfg.preselected = top_by_score(b.synth, 4);

    // never produces a parsable formula, so every FeatureSet is empty and
    // every member trains on exactly the raw columns with the shared seeds
    llm::ScriptedProvider garbage("I cannot help with that.");
    const auto report = run_engineering(cfg, b.synth.data, garbage);

    REQUIRE(report.rows.size() == 3 * cfg.shot_counts.size() * cfg.repeats * 2);
    std::map<std::tuple<std::size_t, std::size_t, std::string>, std::map<std::string, double>>
        cells;
    for (const auto& r : report.rows) cells[{r.shots, r.repeat, r.classifier}][r.method] = r.auroc;
    for (const auto& [cell, by_method] : cells) {
        REQUIRE(by_method.size() == 3);
        CHECK(by_method.at("single") == by_method.at("raw"));
        CHECK(by_method.at("ensemble") == by_method.at("raw"));
    }

    CHECK(report.artifacts.at("selected").get<std::vector<std::string>>() == cfg.preselected);
    for (const auto& s : report.artifacts.at("splits"))
        CHECK(s.at("feature_sets").size() == cfg.engineering.K);
}

TEST_CASE("engineering sweep with K=1 makes single and ensemble coincide") {
    const auto b = make_bench("eng-k1", small_spec());
    auto cfg = base_config(b);
    cfg.shot_counts = {8};
    cfg.repeats = 2;
    cfg.preselected = top_by_score(b.synth, 4);
    cfg.engineering.K = 1;
    auto provider = make_provider(cfg);

    const auto report = run_engineering(cfg, b.synth.data, *provider);
    std::map<std::tuple<std::size_t, std::size_t, std::string>, std::map<std::string, double>>
        cells;
    for (const auto& r : report.rows) cells[{r.shots, r.repeat, r.classifier}][r.method] = r.auroc;
    for (const auto& [cell, by_method] : cells)
        CHECK(by_method.at("single") == by_method.at("ensemble"));
}

TEST_CASE("engineering sweep selects hierarchically when nothing is preselected") {
    const auto b = make_bench("eng-select", small_spec());
    auto cfg = base_config(b);
    cfg.shot_counts = {8};
    cfg.repeats = 1;
    cfg.engineering.K = 1;
    auto provider = make_provider(cfg);

    const auto report = run_engineering(cfg, b.synth.data, *provider);
    CHECK(report.artifacts.contains("selection"));
    CHECK(report.artifacts.at("selected").get<std::vector<std::string>>() ==
          top_by_score(b.synth, cfg.selection.d_prime));
    CHECK(report.provenance.at("mode") == "engineer");
}

// ---------------------------------------------------------------------------
// nomination

TEST_CASE("nominate_features parses, de-duplicates, and partitions") {
    llm::ScriptedProvider provider("unused");
    provider.set_for_tag(llm::Tag::Nominate,
                              "Step 1: consider ancestry markers.\n"
                              "Answer: rs671, rs2814778, rs671");

    const std::vector<std::string> universe = {"rs671", "rs12913832"};
    const auto result = nominate_features("eye color", 3, provider, &universe, 9);

    CHECK(result.suggested == std::vector<std::string>{"rs671", "rs2814778"});
    CHECK(result.short_count);  // asked for 3, got 2 distinct
    CHECK(result.present == std::vector<std::string>{"rs671"});
    CHECK(result.novel == std::vector<std::string>{"rs2814778"});
    CHECK(result.raw_text.find("Answer: rs671") != std::string::npos);

    REQUIRE(provider.requests().size() == 1);
    const auto& req = provider.requests()[0];
    CHECK(req.tag == llm::Tag::Nominate);
    CHECK(req.temperature == 0.7);
    CHECK(req.user_text.find("eye color") != std::string::npos);
    CHECK(req.user_text.find("Suggest 3") != std::string::npos);
    REQUIRE(req.seed_hint.has_value());
    CHECK(*req.seed_hint == rng::derive_seed(9, {0xa0}));
}

TEST_CASE("nominate_features without a universe leaves the partition empty") {
    llm::ScriptedProvider provider("unused");
    provider.set_for_tag(llm::Tag::Nominate, "Answer: rs1, rs2");
    const auto result = nominate_features("height", 2, provider);
    CHECK(result.suggested.size() == 2);
    CHECK_FALSE(result.short_count);
    CHECK(result.present.empty());
    CHECK(result.novel.empty());
}

TEST_CASE("nominate_features failure modes") {
    llm::ScriptedProvider empty("");
    CHECK_THROWS_AS(nominate_features("height", 2, empty), NothingParsed);

    llm::ScriptedProvider provider("unused");
    CHECK_THROWS_AS(nominate_features("", 2, provider), ConfigError);
    CHECK_THROWS_AS(nominate_features("height", 0, provider), ConfigError);
}

// ---------------------------------------------------------------------------
// CLI

TEST_CASE("cli classifies config, data, and provider failures") {
    const auto b = make_bench("cli-errors", small_spec());

    // parse error
    CHECK(cli({"evaluate", "--bogus-flag"}) == 2);
    // config file that is not JSON
    const auto bad_cfg = b.dir / "bad.json";
    test_util::write_file(bad_cfg, "{nope");
    CHECK(cli({"evaluate", "--config", bad_cfg.string()}) == 2);
    // no dataset configured
    CHECK(cli({"evaluate", "--provider", "oracle", "--oracle-scores", b.scores.string()}) == 2);
    // replay without a recorded cache: provider failure
    CHECK(cli({"evaluate", "--dataset", b.csv.string(), "--provider", "replay", "--cache",
               (b.dir / "absent.jsonl").string()}) == 4);
    // dataset file missing: data failure
    CHECK(cli({"evaluate", "--dataset", (b.dir / "absent.csv").string(), "--provider", "oracle",
               "--oracle-scores", b.scores.string()}) == 3);
}

TEST_CASE("cli evaluate writes a complete report pair") {
    const auto b = make_bench("cli-evaluate", small_spec());
    const auto out = b.dir / "out";
    REQUIRE(cli({"evaluate", "--dataset", b.csv.string(), "--oracle-scores", b.scores.string(),
                 "--methods", "hierarchical,gini", "--shots", "6,12", "--repeats", "2",
                 "--d-prime", "3", "--seed", "9", "--workers", "2", "--cv-k", "3",
                 "--output-dir", out.string()}) == 0);

    const auto report = read_json(out / "report.json");
    CHECK(report.at("rows").size() == 2 * 2 * 2 * 2);
    CHECK(report.at("provenance").at("mode") == "select-compare");
    CHECK(report.at("provenance").at("config").at("provider").at("kind") == "oracle");

    const auto csv = test_util::read_file(out / "report.csv");
    CHECK(csv.rfind("method,shots,repeat,classifier,auroc\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + 16);
}

TEST_CASE("cli select writes the strategy report") {
    const auto b = make_bench("cli-select", small_spec());
    const auto out = b.dir / "out";
    REQUIRE(cli({"select", "--dataset", b.csv.string(), "--oracle-scores", b.scores.string(),
                 "--strategy", "hierarchical", "--d-prime", "3", "--output-dir",
                 out.string()}) == 0);

    const auto report = read_json(out / "selection_hierarchical.json");
    CHECK(report.at("strategy") == "hierarchical");
    CHECK(report.at("selected").size() == 3);
    CHECK(report.at("selected").get<std::vector<std::string>>() == top_by_score(b.synth, 3));
}

TEST_CASE("cli engineer writes feature sets for preselected variants") {
    const auto b = make_bench("cli-engineer", small_spec());
    const auto out = b.dir / "out";
    const auto picks = top_by_score(b.synth, 3);
    REQUIRE(cli({"engineer", "--dataset", b.csv.string(), "--oracle-scores", b.scores.string(),
                 "--preselected", picks[0] + "," + picks[1] + "," + picks[2], "--k", "2",
                 "--output-dir", out.string()}) == 0);

    const auto report = read_json(out / "feature_sets.json");
    CHECK(report.at("selected").get<std::vector<std::string>>() == picks);
    REQUIRE(report.at("feature_sets").size() == 2);
    for (const auto& fs : report.at("feature_sets")) CHECK(fs.contains("features"));
}

TEST_CASE("cli nominate writes suggestions partitioned against the dataset") {
    const auto b = make_bench("cli-nominate", small_spec());
    const auto out = b.dir / "out";
    REQUIRE(cli({"nominate", "--phenotype", "caffeine response", "--dataset", b.csv.string(),
                 "--oracle-scores", b.scores.string(), "--n", "4", "--output-dir",
                 out.string()}) == 0);

    const auto report = read_json(out / "nomination.json");
    CHECK(report.at("phenotype") == "caffeine response");
    CHECK(report.at("requested") == 4);
    // the oracle nominates from its score map, all of which are dataset variants
    CHECK(report.at("suggested").size() == 4);
    CHECK(report.at("present").size() == 4);
    CHECK(report.at("novel").empty());
    CHECK(report.at("suggested").get<std::vector<std::string>>() == top_by_score(b.synth, 4));
}

TEST_CASE("cli nominate without a phenotype is a config error") {
    const auto b = make_bench("cli-nominate-bad", small_spec());
    CHECK(cli({"nominate", "--oracle-scores", b.scores.string(), "--provider", "oracle"}) == 2);
}

TEST_CASE("cli record then replay reproduces the evaluation byte for byte") {
    const auto b = make_bench("cli-replay", small_spec());
    const auto cache = b.dir / "cache.jsonl";
    const auto out1 = b.dir / "out1";
    const auto out2 = b.dir / "out2";

    json cfg_json = json{{"dataset", b.csv.string()},
                         {"shot_counts", {6, 12}},
                         {"repeats", 2},
                         {"seed", 9},
                         {"workers", 2},
                         {"cv_k", 3},
                         {"methods", {"hierarchical", "lasso"}},
                         {"selection", {{"d_prime", 3}}},
                         {"provider",
                          {{"kind", "oracle"},
                           {"cache", cache.string()},
                           {"oracle_scores", b.scores.string()}}}};
    const auto cfg_path = b.dir / "experiment.json";
    test_util::write_file(cfg_path, cfg_json.dump());

    REQUIRE(cli({"evaluate", "--config", cfg_path.string(), "--output-dir", out1.string()}) == 0);
    REQUIRE(std::filesystem::exists(cache));
    REQUIRE(cli({"replay", "--config", cfg_path.string(), "--output-dir", out2.string()}) == 0);

    // CSV carries only scored rows, so recording and replaying must agree exactly
    CHECK(test_util::read_file(out1 / "report.csv") == test_util::read_file(out2 / "report.csv"));
    const auto r1 = read_json(out1 / "report.json");
    const auto r2 = read_json(out2 / "report.json");
    CHECK(r1.at("rows").dump() == r2.at("rows").dump());
    CHECK(r1.at("aggregates").dump() == r2.at("aggregates").dump());
    CHECK(r2.at("provenance").at("config").at("provider").at("kind") == "replay");
}

TEST_CASE("cli full pipeline merges comparison and engineering rows") {
    const auto b = make_bench("cli-full", small_spec());
    const auto out = b.dir / "out";
    REQUIRE(cli({"evaluate", "--mode", "full-pipeline", "--dataset", b.csv.string(),
                 "--oracle-scores", b.scores.string(), "--methods", "hierarchical", "--shots",
                 "8", "--repeats", "1", "--d-prime", "3", "--k", "1", "--max-examples", "6",
                 "--seed", "4", "--output-dir", out.string()}) == 0);

    const auto report = read_json(out / "report.json");
    CHECK(report.at("provenance").at("mode") == "full-pipeline");
    REQUIRE(report.at("artifacts").contains("select_compare"));
    REQUIRE(report.at("artifacts").contains("engineering"));
    // 1 method x 1 shot x 1 repeat x 2 classifiers, plus 3 treatments x 2
    CHECK(report.at("rows").size() == 2 + 6);
    // engineering reused the hierarchical selection
    CHECK(report.at("artifacts").at("engineering").at("selected") ==
          report.at("artifacts")
              .at("select_compare")
              .at("llm_selection")
              .at("hierarchical")
              .at("selected"));
}

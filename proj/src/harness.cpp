#include "freeform/harness.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <tuple>
#include <unordered_set>

#include "freeform/errors.hpp"
#include "freeform/parallel.hpp"
#include "freeform/random.hpp"

namespace freeform::harness {

namespace {

std::string fmt_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    (void)ec;
    return std::string(buf, ptr);
}

const std::vector<std::string> kKnownMethods = {"hierarchical", "sequential", "lasso", "pca",
                                                "gini"};

bool known_method(const std::string& m) {
    return std::find(kKnownMethods.begin(), kKnownMethods.end(), m) != kKnownMethods.end();
}

bool llm_method(const std::string& m) { return m == "hierarchical" || m == "sequential"; }

}  // namespace

std::string mode_name(Mode mode) {
    switch (mode) {
        case Mode::SelectCompare: return "select-compare";
        case Mode::Engineer: return "engineer";
        case Mode::Nominate: return "nominate";
        case Mode::FullPipeline: return "full-pipeline";
    }
    return "select-compare";
}

Mode mode_from_name(const std::string& name) {
    if (name == "select-compare") return Mode::SelectCompare;
    if (name == "engineer") return Mode::Engineer;
    if (name == "nominate") return Mode::Nominate;
    if (name == "full-pipeline") return Mode::FullPipeline;
    throw ConfigError("unknown mode: " + name);
}

// ---------------------------------------------------------------------------
// ExperimentConfig

void ExperimentConfig::validate() const {
    if (shot_counts.empty()) throw ConfigError("shot_counts must not be empty");
    for (std::size_t i = 1; i < shot_counts.size(); ++i)
        if (shot_counts[i] <= shot_counts[i - 1])
            throw ConfigError("shot_counts must be strictly ascending");
    if (shot_counts.front() == 0) throw ConfigError("shot counts must be positive");
    if (repeats < 1) throw ConfigError("repeats must be at least 1");
    if (cv_k < 2) throw ConfigError("cv_k must be at least 2");
    if (methods.empty()) throw ConfigError("methods must not be empty");
    for (const auto& m : methods)
        if (!known_method(m)) throw ConfigError("unknown selection method: " + m);
    if (provider_kind != "replay" && provider_kind != "record" && provider_kind != "http" &&
        provider_kind != "oracle")
        throw ConfigError("unknown provider kind: " + provider_kind);
    if (mode == Mode::Nominate && phenotype.empty())
        throw ConfigError("nominate mode needs a phenotype");
    if (nominate_n < 1) throw ConfigError("nominate_n must be at least 1");
    selection.validate();
    engineering.validate();
}

nlohmann::json ExperimentConfig::to_json() const {
    nlohmann::json j;
    j["dataset"] = dataset_path;
    j["label_column"] = label_column;
    j["gene_map"] = gene_map_path;
    j["mode"] = mode_name(mode);
    j["shot_counts"] = shot_counts;
    j["repeats"] = repeats;
    j["seed"] = seed;
    j["workers"] = workers;
    j["cv_k"] = cv_k;
    j["methods"] = methods;
    j["use_filter"] = use_filter;
    j["averaging"] = averaging == models::Averaging::Macro ? "macro" : "micro";
    j["provider"] = {{"kind", provider_kind},
                     {"cache", cache_path},
                     {"oracle_scores", oracle_scores_path},
                     {"oracle_filter_threshold", oracle_filter_threshold},
                     {"api_key_env", api_key_env},
                     {"endpoint", provider.endpoint},
                     {"reasoning_model", provider.reasoning_model},
                     {"routine_model", provider.routine_model},
                     {"timeout_s", provider.timeout_s},
                     {"max_retries", provider.max_retries},
                     {"backoff_base_ms", provider.backoff_base_ms}};
    j["selection"] = {{"d_prime", selection.d_prime},
                      {"bucket_min", selection.bucket_min},
                      {"bucket_max", selection.bucket_max},
                      {"intermediate_iters", selection.intermediate_iters},
                      {"final_iters", selection.final_iters},
                      {"temp_intermediate", selection.temp_intermediate},
                      {"temp_final", selection.temp_final},
                      {"task", selection.task_description},
                      {"seed", selection.seed},
                      {"seq_single_until", selection.seq_single_until},
                      {"seq_mid_until", selection.seq_mid_until},
                      {"seq_rounds_mid", selection.seq_rounds_mid},
                      {"seq_rounds_late", selection.seq_rounds_late},
                      {"seq_max_retries", selection.seq_max_retries},
                      {"filter_batch", selection.filter_batch},
                      {"filter_escalate_rate", selection.filter_escalate_rate},
                      {"workers", selection.workers}};
    j["engineering"] = {
        {"K", engineering.K},
        {"max_examples", engineering.max_examples},
        {"temperature", engineering.temperature},
        {"max_parse_attempts", engineering.max_parse_attempts},
        {"serialization",
         engineering.serialization.style == dataset::SerializationStyle::Simple ? "simple"
                                                                                : "genotype"},
        {"task", engineering.task_description},
        {"seed", engineering.seed},
        {"workers", engineering.workers}};
    j["preselected"] = preselected;
    j["output_dir"] = output_dir;
    j["phenotype"] = phenotype;
    j["nominate_n"] = nominate_n;
    return j;
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
    ExperimentConfig cfg;
    try {
        cfg.dataset_path = j.value("dataset", cfg.dataset_path);
        cfg.label_column = j.value("label_column", cfg.label_column);
        cfg.gene_map_path = j.value("gene_map", cfg.gene_map_path);
        if (j.contains("mode")) cfg.mode = mode_from_name(j.at("mode").get<std::string>());
        if (j.contains("shot_counts"))
            cfg.shot_counts = j.at("shot_counts").get<std::vector<std::size_t>>();
        cfg.repeats = j.value("repeats", cfg.repeats);
        cfg.seed = j.value("seed", cfg.seed);
        cfg.workers = j.value("workers", cfg.workers);
        cfg.cv_k = j.value("cv_k", cfg.cv_k);
        if (j.contains("methods")) cfg.methods = j.at("methods").get<std::vector<std::string>>();
        cfg.use_filter = j.value("use_filter", cfg.use_filter);
        if (j.contains("averaging")) {
            const auto a = j.at("averaging").get<std::string>();
            if (a == "macro") cfg.averaging = models::Averaging::Macro;
            else if (a == "micro") cfg.averaging = models::Averaging::Micro;
            else throw ConfigError("unknown averaging: " + a);
        }
        if (j.contains("provider")) {
            const auto& p = j.at("provider");
            cfg.provider_kind = p.value("kind", cfg.provider_kind);
            cfg.cache_path = p.value("cache", cfg.cache_path);
            cfg.oracle_scores_path = p.value("oracle_scores", cfg.oracle_scores_path);
            cfg.oracle_filter_threshold =
                p.value("oracle_filter_threshold", cfg.oracle_filter_threshold);
            cfg.api_key_env = p.value("api_key_env", cfg.api_key_env);
            cfg.provider.endpoint = p.value("endpoint", cfg.provider.endpoint);
            cfg.provider.reasoning_model = p.value("reasoning_model", cfg.provider.reasoning_model);
            cfg.provider.routine_model = p.value("routine_model", cfg.provider.routine_model);
            cfg.provider.timeout_s = p.value("timeout_s", cfg.provider.timeout_s);
            cfg.provider.max_retries = p.value("max_retries", cfg.provider.max_retries);
            cfg.provider.backoff_base_ms = p.value("backoff_base_ms", cfg.provider.backoff_base_ms);
        }
        if (j.contains("selection")) {
            const auto& s = j.at("selection");
            auto& sc = cfg.selection;
            sc.d_prime = s.value("d_prime", sc.d_prime);
            sc.bucket_min = s.value("bucket_min", sc.bucket_min);
            sc.bucket_max = s.value("bucket_max", sc.bucket_max);
            sc.intermediate_iters = s.value("intermediate_iters", sc.intermediate_iters);
            sc.final_iters = s.value("final_iters", sc.final_iters);
            sc.temp_intermediate = s.value("temp_intermediate", sc.temp_intermediate);
            sc.temp_final = s.value("temp_final", sc.temp_final);
            sc.task_description = s.value("task", sc.task_description);
            sc.seq_single_until = s.value("seq_single_until", sc.seq_single_until);
            sc.seq_mid_until = s.value("seq_mid_until", sc.seq_mid_until);
            sc.seq_rounds_mid = s.value("seq_rounds_mid", sc.seq_rounds_mid);
            sc.seq_rounds_late = s.value("seq_rounds_late", sc.seq_rounds_late);
            sc.seq_max_retries = s.value("seq_max_retries", sc.seq_max_retries);
            sc.filter_batch = s.value("filter_batch", sc.filter_batch);
            sc.filter_escalate_rate = s.value("filter_escalate_rate", sc.filter_escalate_rate);
            sc.workers = s.value("workers", sc.workers);
            if (s.contains("seed")) sc.seed = s.at("seed").get<std::uint64_t>();
            else sc.seed = rng::derive_seed(cfg.seed, {0x5e});
        } else {
            cfg.selection.seed = rng::derive_seed(cfg.seed, {0x5e});
        }
        if (j.contains("engineering")) {
            const auto& e = j.at("engineering");
            auto& ec = cfg.engineering;
            ec.K = e.value("K", ec.K);
            ec.max_examples = e.value("max_examples", ec.max_examples);
            ec.temperature = e.value("temperature", ec.temperature);
            ec.max_parse_attempts = e.value("max_parse_attempts", ec.max_parse_attempts);
            if (e.contains("serialization")) {
                const auto s = e.at("serialization").get<std::string>();
                if (s == "simple") ec.serialization.style = dataset::SerializationStyle::Simple;
                else if (s == "genotype")
                    ec.serialization.style = dataset::SerializationStyle::Genotype;
                else throw ConfigError("unknown serialization style: " + s);
            }
            ec.task_description = e.value("task", ec.task_description);
            ec.workers = e.value("workers", ec.workers);
            if (e.contains("seed")) ec.seed = e.at("seed").get<std::uint64_t>();
            else ec.seed = rng::derive_seed(cfg.seed, {0xe9});
        } else {
            cfg.engineering.seed = rng::derive_seed(cfg.seed, {0xe9});
        }
        if (j.contains("preselected"))
            cfg.preselected = j.at("preselected").get<std::vector<std::string>>();
        cfg.output_dir = j.value("output_dir", cfg.output_dir);
        cfg.phenotype = j.value("phenotype", cfg.phenotype);
        cfg.nominate_n = j.value("nominate_n", cfg.nominate_n);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad config value: ") + e.what());
    }
    return cfg;
}

// ---------------------------------------------------------------------------
// RunReport

nlohmann::json RunReport::to_json() const {
    nlohmann::json j;
    auto rows_json = nlohmann::json::array();
    for (const auto& r : rows)
        rows_json.push_back({{"method", r.method},
                             {"shots", r.shots},
                             {"repeat", r.repeat},
                             {"classifier", r.classifier},
                             {"auroc", r.auroc}});
    j["rows"] = std::move(rows_json);

    std::map<std::tuple<std::string, std::size_t, std::string>, std::vector<double>> groups;
    for (const auto& r : rows) groups[{r.method, r.shots, r.classifier}].push_back(r.auroc);
    auto aggregates = nlohmann::json::array();
    for (const auto& [key, values] : groups) {
        double mean = 0.0;
        for (double v : values) mean += v;
        mean /= static_cast<double>(values.size());
        double var = 0.0;
        for (double v : values) var += (v - mean) * (v - mean);
        const double sd =
            values.size() > 1 ? std::sqrt(var / static_cast<double>(values.size() - 1)) : 0.0;
        aggregates.push_back({{"method", std::get<0>(key)},
                              {"shots", std::get<1>(key)},
                              {"classifier", std::get<2>(key)},
                              {"mean", mean},
                              {"std", sd},
                              {"n", values.size()}});
    }
    j["aggregates"] = std::move(aggregates);
    j["artifacts"] = artifacts;
    j["provenance"] = provenance;
    return j;
}

std::string RunReport::to_csv() const {
    std::string out = "method,shots,repeat,classifier,auroc\n";
    for (const auto& r : rows) {
        out += r.method;
        out += ',';
        out += std::to_string(r.shots);
        out += ',';
        out += std::to_string(r.repeat);
        out += ',';
        out += r.classifier;
        out += ',';
        out += fmt_double(r.auroc);
        out += '\n';
    }
    return out;
}

// ---------------------------------------------------------------------------
// synthetic benchmark

SyntheticData make_synthetic(const SyntheticSpec& spec) {
    if (spec.n_classes < 2) throw ConfigError("synthetic data needs at least 2 classes");
    const std::size_t min_signals = spec.kind == SyntheticSpec::Kind::Product ? 2 : 1;
    if (spec.n_signals < min_signals)
        throw ConfigError("synthetic data needs at least " + std::to_string(min_signals) +
                          " planted signals");
    if (spec.n_variants < spec.n_signals)
        throw ConfigError("n_variants must be at least n_signals");
    if (spec.n_samples < spec.n_classes) throw ConfigError("too few samples for the class count");
    if (!(spec.signal_low > spec.decoy_high))
        throw ConfigError("signal scores must sit strictly above decoy scores");
    if (spec.signal_high < spec.signal_low || spec.decoy_high < spec.decoy_low)
        throw ConfigError("score bands must be ordered");

    rng::Pcg rng(rng::derive_seed(spec.seed, {0x5f2a}));

    SyntheticData out;
    auto& ds = out.data;
    ds.variant_names.reserve(spec.n_variants);
    for (std::size_t j = 0; j < spec.n_variants; ++j)
        ds.variant_names.push_back("rs" + std::to_string(100001 + j));

    // planted columns, spread uniformly
    std::vector<std::size_t> order(spec.n_variants);
    for (std::size_t j = 0; j < spec.n_variants; ++j) order[j] = j;
    rng.shuffle(order);
    std::vector<std::size_t> planted_idx(order.begin(),
                                         order.begin() + static_cast<std::ptrdiff_t>(spec.n_signals));
    std::unordered_set<std::size_t> planted_set(planted_idx.begin(), planted_idx.end());

    // distinct relevance scores: planted equally spaced from high to low,
    // decoys drawn inside their band
    std::set<double> used;
    for (std::size_t i = 0; i < spec.n_signals; ++i) {
        const double t = spec.n_signals > 1
                             ? static_cast<double>(i) / static_cast<double>(spec.n_signals - 1)
                             : 0.0;
        double s = spec.signal_high - t * (spec.signal_high - spec.signal_low);
        while (!used.insert(s).second) s = std::nextafter(s, spec.signal_low);
        out.scores[ds.variant_names[planted_idx[i]]] = s;
        out.planted.push_back(ds.variant_names[planted_idx[i]]);
    }
    for (std::size_t j = 0; j < spec.n_variants; ++j) {
        if (planted_set.count(j)) continue;
        double s = rng.uniform(spec.decoy_low, spec.decoy_high);
        while (!used.insert(s).second) s = rng.uniform(spec.decoy_low, spec.decoy_high);
        out.scores[ds.variant_names[j]] = s;
    }

    // minor-allele frequencies; planted variants kept common so their signal
    // is visible at small sample counts
    std::vector<double> maf(spec.n_variants);
    for (std::size_t j = 0; j < spec.n_variants; ++j)
        maf[j] = planted_set.count(j) ? 0.5 : rng.uniform(0.05, 0.5);

    ds.values.assign(spec.n_samples, std::vector<std::uint8_t>(spec.n_variants, 0));
    for (std::size_t i = 0; i < spec.n_samples; ++i) {
        for (std::size_t j = 0; j < spec.n_variants; ++j) {
            std::uint8_t x = 0;
            if (rng.uniform01() < maf[j]) ++x;
            if (rng.uniform01() < maf[j]) ++x;
            ds.values[i][j] = x;
        }
        ds.sample_ids.push_back("s" + std::to_string(i + 1));
    }

    std::vector<std::string> class_names;
    for (std::size_t c = 0; c < spec.n_classes; ++c)
        class_names.push_back("c" + std::to_string(c));

    ds.labels.reserve(spec.n_samples);
    if (spec.kind == SyntheticSpec::Kind::Additive) {
        std::vector<std::vector<double>> w(spec.n_classes, std::vector<double>(spec.n_signals));
        for (auto& row : w)
            for (auto& v : row) v = rng.normal() * spec.effect;
        for (std::size_t i = 0; i < spec.n_samples; ++i) {
            std::size_t best = 0;
            double best_score = -1e300;
            for (std::size_t c = 0; c < spec.n_classes; ++c) {
                double logit = 0.0;
                for (std::size_t s = 0; s < spec.n_signals; ++s) {
                    const std::size_t j = planted_idx[s];
                    logit += w[c][s] * (static_cast<double>(ds.values[i][j]) - 2.0 * maf[j]);
                }
                logit += rng.gumbel();
                if (logit > best_score) {
                    best_score = logit;
                    best = c;
                }
            }
            ds.labels.push_back(class_names[best]);
        }
    } else {
        const std::size_t a = planted_idx[0];
        const std::size_t b = planted_idx[1];
        for (std::size_t i = 0; i < spec.n_samples; ++i) {
            const int prod = static_cast<int>(ds.values[i][a]) * static_cast<int>(ds.values[i][b]);
            ds.labels.push_back(prod > 0 ? class_names[1] : class_names[0]);
        }
    }

    // class_set in first-appearance order, matching the CSV loader
    std::unordered_set<std::string> seen;
    for (const auto& label : ds.labels)
        if (seen.insert(label).second) ds.class_set.push_back(label);
    if (ds.class_set.size() < spec.n_classes)
        throw ConfigError("synthetic draw produced fewer classes than requested; change the seed");
    return out;
}

// ---------------------------------------------------------------------------
// provider wiring

std::map<std::string, double> load_score_map(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open oracle score file: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("bad oracle score file " + path + ": " + e.what());
    }
    if (!j.is_object()) throw ConfigError("oracle score file must hold a JSON object");
    std::map<std::string, double> scores;
    for (const auto& [name, value] : j.items()) {
        if (!value.is_number()) throw ConfigError("oracle score for " + name + " is not a number");
        scores[name] = value.get<double>();
    }
    return scores;
}

std::shared_ptr<llm::Provider> make_provider(const ExperimentConfig& cfg) {
    if (cfg.provider_kind == "oracle") {
        if (cfg.oracle_scores_path.empty())
            throw ConfigError("oracle provider needs provider.oracle_scores");
        auto oracle = std::make_shared<llm::OracleProvider>(load_score_map(cfg.oracle_scores_path),
                                                            cfg.seed, cfg.oracle_filter_threshold);
        // with a cache configured, the oracle's answers are recorded so the
        // same run can later be replayed without the score map
        if (!cfg.cache_path.empty())
            return std::make_shared<llm::RecordingProvider>(std::move(oracle), cfg.cache_path);
        return oracle;
    }
    if (cfg.provider_kind == "replay") {
        if (cfg.cache_path.empty()) throw ConfigError("replay provider needs provider.cache");
        return std::make_shared<llm::ReplayProvider>(cfg.cache_path, /*strict=*/true);
    }

    llm::ProviderConfig pc = cfg.provider;
    if (pc.api_key.empty() && !cfg.api_key_env.empty()) {
        if (const char* key = std::getenv(cfg.api_key_env.c_str())) pc.api_key = key;
    }
    if (cfg.provider_kind == "record") {
        if (cfg.cache_path.empty()) throw ConfigError("record provider needs provider.cache");
        auto http = std::make_shared<llm::HttpProvider>(pc);
        return std::make_shared<llm::ReplayProvider>(cfg.cache_path, /*strict=*/false,
                                                     std::move(http));
    }
    // "http"
    std::optional<std::filesystem::path> cache;
    if (!cfg.cache_path.empty()) cache = cfg.cache_path;
    return std::make_shared<llm::HttpProvider>(pc, cache);
}

// ---------------------------------------------------------------------------
// shared run plumbing

namespace {

struct Split {
    std::vector<std::size_t> train;
    std::vector<std::size_t> test;
};

/// Few-shot draw plus its complement; the two sides are disjoint by
/// construction and that is asserted before anything trains.
Split make_split(const dataset::GenotypeDataset& ds, std::size_t shots, std::uint64_t seed) {
    if (shots >= ds.n_samples())
        throw ConfigError("shot count " + std::to_string(shots) +
                          " leaves no rows for evaluation (dataset has " +
                          std::to_string(ds.n_samples()) + ")");
    Split split;
    split.train = dataset::sample_few_shot(ds, shots, seed).indices;
    std::vector<char> in_train(ds.n_samples(), 0);
    for (std::size_t i : split.train) {
        if (i >= ds.n_samples() || in_train[i])
            throw Error("few-shot sample is not a set of distinct row indices");
        in_train[i] = 1;
    }
    split.test.reserve(ds.n_samples() - split.train.size());
    for (std::size_t i = 0; i < ds.n_samples(); ++i)
        if (!in_train[i]) split.test.push_back(i);
    return split;
}

models::HyperParams search_or_default(const dataset::DataMatrix& train,
                                      models::ModelFamily family, std::size_t cv_k,
                                      std::uint64_t seed) {
    const auto& grid = family == models::ModelFamily::Logistic ? models::kDefaultLogisticGrid
                                                               : models::kDefaultForestGrid;
    try {
        return models::grid_search_cv(train, family, grid, cv_k, seed);
    } catch (const DegenerateSplit&) {
        return models::HyperParams{};  // default regularization, unbounded forest
    }
}

models::AnyModel fit_family(const dataset::DataMatrix& train, models::ModelFamily family,
                            std::size_t cv_k, std::uint64_t grid_seed, std::uint64_t forest_seed) {
    const auto hp = search_or_default(train, family, cv_k, grid_seed);
    if (family == models::ModelFamily::Logistic) return models::train_logreg(train, hp.l2);
    return models::train_forest(train, hp.n_trees, hp.max_depth, forest_seed);
}

double score_model(const models::AnyModel& model, const dataset::DataMatrix& test,
                   std::size_t n_classes, models::Averaging averaging) {
    std::vector<std::vector<double>> probs;
    probs.reserve(test.n_rows());
    for (const auto& row : test.rows) probs.push_back(models::predict_proba(model, row));
    return models::auroc(probs, test.labels, n_classes, averaging);
}

const char* family_name(models::ModelFamily family) {
    return family == models::ModelFamily::Logistic ? "logistic" : "forest";
}

constexpr models::ModelFamily kFamilies[] = {models::ModelFamily::Logistic,
                                             models::ModelFamily::Forest};

void flush_partial(RunReport* partial, std::mutex& mutex, const std::vector<ReportRow>& rows,
                   std::size_t begin, std::size_t count) {
    if (!partial) return;
    std::lock_guard<std::mutex> lock(mutex);
    for (std::size_t i = begin; i < begin + count; ++i) partial->rows.push_back(rows[i]);
}

nlohmann::json dataset_provenance(const dataset::GenotypeDataset& ds) {
    return {{"samples", ds.n_samples()},
            {"variants", ds.n_variants()},
            {"classes", ds.class_set}};
}

}  // namespace

// ---------------------------------------------------------------------------
// selection comparison

RunReport run_selection_compare(const ExperimentConfig& cfg, const dataset::GenotypeDataset& ds,
                                llm::Provider& provider, RunReport* partial) {
    cfg.validate();
    for (std::size_t s : cfg.shot_counts)
        if (s >= ds.n_samples())
            throw ConfigError("shot count " + std::to_string(s) +
                              " leaves no rows for evaluation (dataset has " +
                              std::to_string(ds.n_samples()) + ")");

    RunReport report;
    report.provenance = {{"mode", "select-compare"},
                         {"seed", cfg.seed},
                         {"config", cfg.to_json()},
                         {"dataset", dataset_provenance(ds)}};

    // LLM selections depend only on variant names and the task, never on the
    // training rows, so they are computed once and reused across every split.
    std::vector<std::string> pool = ds.variant_names;
    nlohmann::json llm_artifacts = nlohmann::json::object();
    if (cfg.use_filter) {
        const auto filtered = selection::relevance_filter(pool, cfg.selection, provider);
        const bool usable = filtered.size() >= cfg.selection.d_prime;
        llm_artifacts["filter"] = {
            {"input", pool.size()}, {"kept", filtered.size()}, {"used", usable}};
        if (usable) pool = filtered;
    }
    std::map<std::string, std::vector<std::string>> llm_selected;
    for (const auto& m : cfg.methods) {
        if (!llm_method(m)) continue;
        const auto result = m == "hierarchical"
                                ? selection::hierarchical_select(pool, cfg.selection, provider)
                                : selection::sequential_forward_select(pool, cfg.selection,
                                                                       provider);
        llm_selected[m] = result.selected;
        llm_artifacts[m] = selection::selection_report(result);
    }
    report.artifacts["llm_selection"] = std::move(llm_artifacts);

    const std::size_t n_shots = cfg.shot_counts.size();
    const std::size_t n_tasks = n_shots * cfg.repeats;
    const std::size_t rows_per_task = cfg.methods.size() * 2;
    report.rows.assign(cfg.methods.size() * n_shots * cfg.repeats * 2, ReportRow{});
    std::vector<nlohmann::json> split_artifacts(n_tasks);
    std::mutex partial_mutex;

    // slot order: method-major, then shots, repeat, classifier
    auto row_index = [&](std::size_t mi, std::size_t si, std::size_t r, std::size_t ci) {
        return ((mi * n_shots + si) * cfg.repeats + r) * 2 + ci;
    };

    parallel_for(n_tasks, cfg.workers, [&](std::size_t task) {
        const std::size_t si = task / cfg.repeats;
        const std::size_t r = task % cfg.repeats;
        const std::size_t shots = cfg.shot_counts[si];

        const auto split = make_split(ds, shots, rng::derive_seed(cfg.seed, {0x5c17, shots, r}));
        const auto train = dataset::subset_rows(ds, split.train);
        const auto test = dataset::subset_rows(ds, split.test);
        const auto train_full = dataset::to_data_matrix(train);

        nlohmann::json baselines_json = nlohmann::json::object();
        const std::uint64_t grid_seed = rng::derive_seed(cfg.seed, {0x9d, shots, r});
        const std::uint64_t forest_seed = rng::derive_seed(cfg.seed, {0x6f, shots, r});

        for (std::size_t mi = 0; mi < cfg.methods.size(); ++mi) {
            const auto& method = cfg.methods[mi];
            std::vector<std::string> selected;
            if (llm_method(method)) {
                selected = llm_selected.at(method);
            } else {
                baselines::BaselineSelection sel;
                if (method == "lasso")
                    sel = baselines::lasso_select(train_full, cfg.selection.d_prime,
                                                  rng::derive_seed(cfg.seed, {0x1a, shots, r}));
                else if (method == "pca")
                    sel = baselines::pca_select(train_full, cfg.selection.d_prime);
                else
                    sel = baselines::gini_select(train_full, cfg.selection.d_prime,
                                                 rng::derive_seed(cfg.seed, {0x91, shots, r}));
                selected = sel.selected;
                baselines_json[method] = {{"selected", sel.selected},
                                          {"fallback_used", sel.fallback_used}};
            }
            const auto train_sel = dataset::to_data_matrix(dataset::restrict_columns(train, selected));
            const auto test_sel = dataset::to_data_matrix(dataset::restrict_columns(test, selected));
            for (std::size_t ci = 0; ci < 2; ++ci) {
                const auto model = fit_family(train_sel, kFamilies[ci], cfg.cv_k, grid_seed,
                                              forest_seed);
                const double auc =
                    score_model(model, test_sel, train_sel.class_order.size(), cfg.averaging);
                report.rows[row_index(mi, si, r, ci)] = {method, shots, r,
                                                         family_name(kFamilies[ci]), auc};
            }
            flush_partial(partial, partial_mutex, report.rows, row_index(mi, si, r, 0), 2);
        }
        split_artifacts[task] = {{"shots", shots},
                                 {"repeat", r},
                                 {"train_indices", split.train},
                                 {"baselines", std::move(baselines_json)}};
    });

    auto splits = nlohmann::json::array();
    for (auto& s : split_artifacts) splits.push_back(std::move(s));
    report.artifacts["splits"] = std::move(splits);
    return report;
}

// ---------------------------------------------------------------------------
// engineering

RunReport run_engineering(const ExperimentConfig& cfg, const dataset::GenotypeDataset& ds,
                          llm::Provider& provider, RunReport* partial) {
    cfg.validate();
    for (std::size_t s : cfg.shot_counts)
        if (s >= ds.n_samples())
            throw ConfigError("shot count " + std::to_string(s) +
                              " leaves no rows for evaluation (dataset has " +
                              std::to_string(ds.n_samples()) + ")");

    RunReport report;
    report.provenance = {{"mode", "engineer"},
                         {"seed", cfg.seed},
                         {"config", cfg.to_json()},
                         {"dataset", dataset_provenance(ds)}};

    std::vector<std::string> selected = cfg.preselected;
    if (selected.empty()) {
        const auto result = selection::hierarchical_select(ds.variant_names, cfg.selection,
                                                           provider);
        selected = result.selected;
        report.artifacts["selection"] = selection::selection_report(result);
    }
    report.artifacts["selected"] = selected;
    const auto restricted = dataset::restrict_columns(ds, selected);

    const std::vector<std::string> treatments = {"raw", "single", "ensemble"};
    const std::size_t n_shots = cfg.shot_counts.size();
    const std::size_t n_tasks = n_shots * cfg.repeats;
    report.rows.assign(treatments.size() * n_shots * cfg.repeats * 2, ReportRow{});
    std::vector<nlohmann::json> split_artifacts(n_tasks);
    std::mutex partial_mutex;

    auto row_index = [&](std::size_t ti, std::size_t si, std::size_t r, std::size_t ci) {
        return ((ti * n_shots + si) * cfg.repeats + r) * 2 + ci;
    };

    parallel_for(n_tasks, cfg.workers, [&](std::size_t task) {
        const std::size_t si = task / cfg.repeats;
        const std::size_t r = task % cfg.repeats;
        const std::size_t shots = cfg.shot_counts[si];

        const auto split =
            make_split(restricted, shots, rng::derive_seed(cfg.seed, {0x5c17, shots, r}));
        const auto train = dataset::subset_rows(restricted, split.train);
        const auto test = dataset::subset_rows(restricted, split.test);
        const auto train_raw = dataset::to_data_matrix(train);
        const auto test_raw = dataset::to_data_matrix(test);
        const std::size_t n_classes = train_raw.class_order.size();

        // identical search/forest seeds for the raw model and every member:
        // a member with no engineered features is then exactly the raw model
        const std::uint64_t grid_seed = rng::derive_seed(cfg.seed, {0x9d, shots, r});
        const std::uint64_t forest_seed = rng::derive_seed(cfg.seed, {0x6f, shots, r});

        engineering::EngineeringConfig ecfg = cfg.engineering;
        ecfg.seed = rng::derive_seed(cfg.engineering.seed, {0xe6, shots, r});
        std::vector<engineering::FeatureSet> fsets(ecfg.K);
        parallel_for(ecfg.K, ecfg.workers,
                     [&](std::size_t k) { fsets[k] = engineering::generate_feature_set(train, ecfg, provider, k); });

        for (std::size_t ci = 0; ci < 2; ++ci) {
            const auto family = kFamilies[ci];
            const auto raw_model = fit_family(train_raw, family, cfg.cv_k, grid_seed, forest_seed);
            const double raw_auc = score_model(raw_model, test_raw, n_classes, cfg.averaging);

            models::EnsembleModel ensemble;
            ensemble.class_order = train_raw.class_order;
            for (const auto& fs : fsets) {
                const auto train_k = engineering::transform_matrix(train_raw, fs);
                models::EnsembleMember member;
                member.features = fs;
                member.model = fit_family(train_k, family, cfg.cv_k, grid_seed, forest_seed);
                ensemble.members.push_back(std::move(member));
            }
            models::EnsembleModel first_only;
            first_only.class_order = ensemble.class_order;
            first_only.members.push_back(ensemble.members.front());

            auto ensemble_auc = [&](const models::EnsembleModel& ens) {
                std::vector<std::vector<double>> probs;
                probs.reserve(test_raw.n_rows());
                for (const auto& row : test_raw.rows)
                    probs.push_back(models::ensemble_predict(ens, row).first);
                return models::auroc(probs, test_raw.labels, n_classes, cfg.averaging);
            };

            const char* cname = family_name(family);
            report.rows[row_index(0, si, r, ci)] = {"raw", shots, r, cname, raw_auc};
            report.rows[row_index(1, si, r, ci)] = {"single", shots, r, cname,
                                                    ensemble_auc(first_only)};
            report.rows[row_index(2, si, r, ci)] = {"ensemble", shots, r, cname,
                                                    ensemble_auc(ensemble)};
            for (std::size_t ti = 0; ti < treatments.size(); ++ti)
                flush_partial(partial, partial_mutex, report.rows, row_index(ti, si, r, ci), 1);
        }

        auto fs_json = nlohmann::json::array();
        for (const auto& fs : fsets) fs_json.push_back(engineering::feature_set_report(fs));
        split_artifacts[task] = {{"shots", shots},
                                 {"repeat", r},
                                 {"train_indices", split.train},
                                 {"feature_sets", std::move(fs_json)}};
    });

    auto splits = nlohmann::json::array();
    for (auto& s : split_artifacts) splits.push_back(std::move(s));
    report.artifacts["splits"] = std::move(splits);
    return report;
}

// ---------------------------------------------------------------------------
// nomination

NominationResult nominate_features(const std::string& phenotype, std::size_t n,
                                   llm::Provider& provider,
                                   const std::vector<std::string>* known_universe,
                                   std::uint64_t seed) {
    if (n < 1) throw ConfigError("nomination count must be at least 1");
    if (phenotype.empty()) throw ConfigError("nomination needs a phenotype");

    llm::PromptRequest req;
    req.system_text =
        "You are an expert geneticist helping identify the genetic variants most informative "
        "for a prediction task.";
    std::ostringstream user;
    user << "Task: nominating genetic variants for predicting " << phenotype << ".\n\n"
         << "Suggest " << n << " SNPs (rsIDs or other standard variant identifiers) most likely "
         << "to be informative for this phenotype, including variants that a standard "
         << "quality-control pipeline might have dropped.\n\n"
         << "Think step by step, then finish with one line in the form:\n"
         << "Answer: rs123, rs456, ...";
    req.user_text = user.str();
    req.temperature = 0.7;
    req.seed_hint = rng::derive_seed(seed, {0xa0});
    req.tag = llm::Tag::Nominate;

    const auto resp = provider.complete(req);

    NominationResult result;
    result.raw_text = resp.text;
    std::unordered_set<std::string> seen;
    for (const auto& item : llm::split_answer_items(llm::answer_line(resp.text)))
        if (!item.empty() && seen.insert(item).second) result.suggested.push_back(item);
    if (result.suggested.empty()) throw NothingParsed("no variant identifiers in the nomination");
    result.short_count = result.suggested.size() < n;

    if (known_universe) {
        const std::unordered_set<std::string> universe(known_universe->begin(),
                                                       known_universe->end());
        for (const auto& name : result.suggested)
            (universe.count(name) ? result.present : result.novel).push_back(name);
    }
    return result;
}

}  // namespace freeform::harness

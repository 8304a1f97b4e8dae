#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "freeform/errors.hpp"
#include "freeform/harness.hpp"
#include "freeform/parallel.hpp"
#include "freeform/random.hpp"

namespace freeform::harness {

namespace {

/// Carries an already-classified exit code out of a pipeline phase.
struct ExitWith {
    int code;
    std::string message;
};

int classify(const Error& e) {
    if (dynamic_cast<const ConfigError*>(&e)) return 2;
    if (dynamic_cast<const Transport*>(&e) || dynamic_cast<const RateLimited*>(&e) ||
        dynamic_cast<const ProviderRejected*>(&e) || dynamic_cast<const CacheMiss*>(&e) ||
        dynamic_cast<const CorruptCache*>(&e) || dynamic_cast<const UnparsableVerdict*>(&e) ||
        dynamic_cast<const AllRoundsUnparsable*>(&e) ||
        dynamic_cast<const SelectionStalled*>(&e) || dynamic_cast<const NothingExtracted*>(&e) ||
        dynamic_cast<const NothingParsed*>(&e))
        return 4;
    if (dynamic_cast<const MalformedCell*>(&e) || dynamic_cast<const MissingLabelColumn*>(&e) ||
        dynamic_cast<const DuplicateVariantName*>(&e) || dynamic_cast<const TooFewShots*>(&e) ||
        dynamic_cast<const UnknownVariant*>(&e) || dynamic_cast<const DegenerateSplit*>(&e) ||
        dynamic_cast<const SingleClassTrainingSet*>(&e) ||
        dynamic_cast<const DegenerateLabels*>(&e) || dynamic_cast<const ZeroVarianceMatrix*>(&e) ||
        dynamic_cast<const ParseError*>(&e) || dynamic_cast<const UnknownAlias*>(&e) ||
        dynamic_cast<const DepthExceeded*>(&e))
        return 3;
    return 1;
}

ExperimentConfig load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config file " + path + " is not valid JSON: " + e.what());
    }
    return ExperimentConfig::from_json(j);
}

dataset::GenotypeDataset load_data(const ExperimentConfig& cfg) {
    if (cfg.dataset_path.empty())
        throw ConfigError("no dataset configured; pass --dataset or set it in the config file");
    try {
        dataset::GenotypeDataset ds = dataset::load_dataset(cfg.dataset_path, cfg.label_column);
        return ds;
    } catch (const Error& e) {
        throw ExitWith{3, e.what()};
    }
}

void load_gene_map_into(ExperimentConfig& cfg) {
    if (cfg.gene_map_path.empty()) return;
    try {
        cfg.engineering.serialization.gene_map = dataset::load_gene_map(cfg.gene_map_path);
        cfg.engineering.serialization.style = dataset::SerializationStyle::Genotype;
    } catch (const Error& e) {
        throw ExitWith{3, e.what()};
    }
}

std::filesystem::path write_text(const std::filesystem::path& dir, const std::string& name,
                                 const std::string& content) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    const auto path = dir / name;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out << content;
    return path;
}

std::string dump(const nlohmann::json& j) { return j.dump(2) + "\n"; }

RunReport run_full_pipeline(const ExperimentConfig& cfg, const dataset::GenotypeDataset& ds,
                            llm::Provider& provider, RunReport* partial) {
    RunReport compare = run_selection_compare(cfg, ds, provider, partial);

    ExperimentConfig engineer_cfg = cfg;
    const auto& llm_sel = compare.artifacts.at("llm_selection");
    for (const auto& method : {"hierarchical", "sequential"}) {
        if (llm_sel.contains(method)) {
            engineer_cfg.preselected =
                llm_sel.at(method).at("selected").get<std::vector<std::string>>();
            break;
        }
    }
    RunReport engineered = run_engineering(engineer_cfg, ds, provider, partial);

    RunReport merged;
    merged.rows = compare.rows;
    merged.rows.insert(merged.rows.end(), engineered.rows.begin(), engineered.rows.end());
    merged.artifacts = {{"select_compare", std::move(compare.artifacts)},
                        {"engineering", std::move(engineered.artifacts)}};
    merged.provenance = std::move(compare.provenance);
    merged.provenance["mode"] = "full-pipeline";
    return merged;
}

int run_evaluation(const ExperimentConfig& cfg) {
    auto provider = make_provider(cfg);
    const auto ds = load_data(cfg);

    RunReport partial;
    RunReport report;
    try {
        switch (cfg.mode) {
            case Mode::SelectCompare:
                report = run_selection_compare(cfg, ds, *provider, &partial);
                break;
            case Mode::Engineer:
                report = run_engineering(cfg, ds, *provider, &partial);
                break;
            case Mode::FullPipeline:
                report = run_full_pipeline(cfg, ds, *provider, &partial);
                break;
            case Mode::Nominate:
                throw ConfigError("evaluate does not run nominate mode; use the nominate command");
        }
    } catch (...) {
        partial.provenance = {{"mode", mode_name(cfg.mode)},
                              {"seed", cfg.seed},
                              {"config", cfg.to_json()},
                              {"incomplete", true}};
        try {
            write_text(cfg.output_dir, "report_partial.json", dump(partial.to_json()));
        } catch (...) {
            // the original failure is the one worth reporting
        }
        throw;
    }

    const auto json_path = write_text(cfg.output_dir, "report.json", dump(report.to_json()));
    const auto csv_path = write_text(cfg.output_dir, "report.csv", report.to_csv());
    std::cout << json_path.string() << '\n' << csv_path.string() << '\n';
    return 0;
}

int run_select(const ExperimentConfig& cfg, const std::string& strategy) {
    auto provider = make_provider(cfg);
    const auto ds = load_data(cfg);

    std::vector<std::string> pool = ds.variant_names;
    nlohmann::json report = nlohmann::json::object();
    if (cfg.use_filter) {
        const auto filtered = selection::relevance_filter(pool, cfg.selection, *provider);
        const bool usable = filtered.size() >= cfg.selection.d_prime;
        report["filter"] = {{"input", pool.size()}, {"kept", filtered.size()}, {"used", usable}};
        if (usable) pool = filtered;
    }
    const auto result = strategy == "hierarchical"
                            ? selection::hierarchical_select(pool, cfg.selection, *provider)
                            : selection::sequential_forward_select(pool, cfg.selection, *provider);
    report.update(selection::selection_report(result));

    const auto path = write_text(cfg.output_dir, "selection_" + strategy + ".json", dump(report));
    std::cout << path.string() << '\n';
    return 0;
}

int run_engineer(const ExperimentConfig& cfg) {
    auto provider = make_provider(cfg);
    const auto ds = load_data(cfg);

    nlohmann::json report = nlohmann::json::object();
    std::vector<std::string> selected = cfg.preselected;
    if (selected.empty()) {
        const auto result = selection::hierarchical_select(ds.variant_names, cfg.selection,
                                                           *provider);
        selected = result.selected;
        report["selection"] = selection::selection_report(result);
    }
    report["selected"] = selected;

    const auto restricted = dataset::restrict_columns(ds, selected);
    std::vector<engineering::FeatureSet> fsets(cfg.engineering.K);
    parallel_for(cfg.engineering.K, cfg.engineering.workers, [&](std::size_t k) {
        fsets[k] = engineering::generate_feature_set(restricted, cfg.engineering, *provider, k);
    });
    auto fs_json = nlohmann::json::array();
    for (const auto& fs : fsets) fs_json.push_back(engineering::feature_set_report(fs));
    report["feature_sets"] = std::move(fs_json);

    const auto path = write_text(cfg.output_dir, "feature_sets.json", dump(report));
    std::cout << path.string() << '\n';
    return 0;
}

int run_nominate(const ExperimentConfig& cfg) {
    auto provider = make_provider(cfg);

    std::optional<std::vector<std::string>> universe;
    if (!cfg.dataset_path.empty()) universe = load_data(cfg).variant_names;

    const auto result = nominate_features(cfg.phenotype, cfg.nominate_n, *provider,
                                          universe ? &*universe : nullptr,
                                          rng::derive_seed(cfg.seed, {0x4e}));

    nlohmann::json report = {{"phenotype", cfg.phenotype},
                             {"requested", cfg.nominate_n},
                             {"suggested", result.suggested},
                             {"short_count", result.short_count},
                             {"response", result.raw_text}};
    if (universe) {
        report["present"] = result.present;
        report["novel"] = result.novel;
    }
    const auto path = write_text(cfg.output_dir, "nomination.json", dump(report));
    for (const auto& name : result.suggested) std::cout << name << '\n';
    std::cerr << path.string() << '\n';
    return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
    CLI::App app{"LLM-driven feature selection and engineering for tabular genotype data"};
    app.fallthrough();
    app.require_subcommand(1);

    std::string config_path;
    auto* o_config = app.add_option("--config", config_path, "JSON config file");

    std::string dataset_path, label_column, gene_map, mode_str, averaging, provider_kind,
        cache_path, oracle_scores, api_key_env, endpoint, task, serialization, output_dir,
        phenotype, strategy = "hierarchical";
    std::vector<std::size_t> shots;
    std::vector<std::string> methods, preselected;
    std::size_t repeats = 0, workers = 0, cv_k = 0, d_prime = 0, big_k = 0, max_examples = 0,
                nominate_n = 0;
    std::uint64_t seed = 0;
    double temperature = 0.0, oracle_threshold = 0.0;
    bool use_filter = false;

    auto* o_dataset = app.add_option("--dataset", dataset_path, "genotype CSV path");
    auto* o_label = app.add_option("--label-column", label_column, "label column name");
    auto* o_gene_map = app.add_option("--gene-map", gene_map, "variant,gene CSV path");
    auto* o_mode = app.add_option("--mode", mode_str, "evaluation mode")
                       ->check(CLI::IsMember(
                           {"select-compare", "engineer", "nominate", "full-pipeline"}));
    auto* o_shots = app.add_option("--shots", shots, "training sample sizes")->delimiter(',');
    auto* o_repeats = app.add_option("--repeats", repeats, "repeats per shot count");
    auto* o_seed = app.add_option("--seed", seed, "master seed");
    auto* o_workers = app.add_option("--workers", workers, "worker threads");
    auto* o_cv_k = app.add_option("--cv-k", cv_k, "hyperparameter search folds");
    auto* o_methods =
        app.add_option("--methods", methods, "selection methods to compare")->delimiter(',');
    auto* o_strategy = app.add_option("--strategy", strategy, "LLM selection strategy")
                           ->check(CLI::IsMember({"hierarchical", "sequential"}));
    auto* o_filter = app.add_flag("--use-filter", use_filter, "run the relevance filter first");
    auto* o_avg = app.add_option("--averaging", averaging, "AUROC averaging")
                      ->check(CLI::IsMember({"macro", "micro"}));
    auto* o_provider = app.add_option("--provider", provider_kind, "provider kind")
                           ->check(CLI::IsMember({"replay", "record", "http", "oracle"}));
    auto* o_cache = app.add_option("--cache", cache_path, "completion cache JSONL path");
    auto* o_oracle = app.add_option("--oracle-scores", oracle_scores,
                                    "JSON score map for the oracle provider");
    auto* o_oracle_t =
        app.add_option("--oracle-filter-threshold", oracle_threshold, "oracle Yes threshold");
    auto* o_key_env = app.add_option("--api-key-env", api_key_env,
                                     "environment variable holding the API key");
    auto* o_endpoint = app.add_option("--endpoint", endpoint, "chat-completions endpoint");
    auto* o_d_prime = app.add_option("--d-prime", d_prime, "variants to select");
    auto* o_task = app.add_option("--task", task, "task description shown to the model");
    auto* o_k = app.add_option("--k", big_k, "ensemble members to generate");
    auto* o_max_ex = app.add_option("--max-examples", max_examples, "example cap per prompt");
    auto* o_temp = app.add_option("--temperature", temperature, "generation temperature");
    auto* o_serial = app.add_option("--serialization", serialization, "example row style")
                         ->check(CLI::IsMember({"simple", "genotype"}));
    auto* o_presel =
        app.add_option("--preselected", preselected, "reuse these selected variants")
            ->delimiter(',');
    auto* o_out = app.add_option("--output-dir", output_dir, "report directory");
    auto* o_pheno = app.add_option("--phenotype", phenotype, "phenotype to nominate for");
    auto* o_n = app.add_option("--n", nominate_n, "variants to nominate");

    auto* sub_select = app.add_subcommand("select", "run one LLM selection strategy");
    auto* sub_engineer = app.add_subcommand("engineer", "generate ensemble feature sets");
    auto* sub_evaluate = app.add_subcommand("evaluate", "run a full evaluation sweep");
    auto* sub_nominate = app.add_subcommand("nominate", "ask for likely-informative variants");
    auto* sub_replay = app.add_subcommand("replay", "re-run an evaluation strictly from cache");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        std::cout << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        std::cout << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n\n" << app.help();
        return 2;
    }

    try {
        ExperimentConfig cfg = o_config->count() ? load_config_file(config_path)
                                                 : ExperimentConfig::from_json(
                                                       nlohmann::json::object());
        if (o_dataset->count()) cfg.dataset_path = dataset_path;
        if (o_label->count()) cfg.label_column = label_column;
        if (o_gene_map->count()) cfg.gene_map_path = gene_map;
        if (o_mode->count()) cfg.mode = mode_from_name(mode_str);
        if (o_shots->count()) cfg.shot_counts = shots;
        if (o_repeats->count()) cfg.repeats = repeats;
        if (o_seed->count()) {
            cfg.seed = seed;
            cfg.selection.seed = rng::derive_seed(seed, {0x5e});
            cfg.engineering.seed = rng::derive_seed(seed, {0xe9});
        }
        if (o_workers->count()) {
            cfg.workers = workers;
            cfg.selection.workers = workers;
            cfg.engineering.workers = workers;
        }
        if (o_cv_k->count()) cfg.cv_k = cv_k;
        if (o_methods->count()) cfg.methods = methods;
        if (o_filter->count()) cfg.use_filter = use_filter;
        if (o_avg->count())
            cfg.averaging =
                averaging == "micro" ? models::Averaging::Micro : models::Averaging::Macro;
        if (o_provider->count()) cfg.provider_kind = provider_kind;
        if (o_cache->count()) cfg.cache_path = cache_path;
        if (o_oracle->count()) {
            cfg.oracle_scores_path = oracle_scores;
            if (!o_provider->count()) cfg.provider_kind = "oracle";
        }
        if (o_oracle_t->count()) cfg.oracle_filter_threshold = oracle_threshold;
        if (o_key_env->count()) cfg.api_key_env = api_key_env;
        if (o_endpoint->count()) cfg.provider.endpoint = endpoint;
        if (o_d_prime->count()) cfg.selection.d_prime = d_prime;
        if (o_task->count()) {
            cfg.selection.task_description = task;
            cfg.engineering.task_description = task;
        }
        if (o_k->count()) cfg.engineering.K = big_k;
        if (o_max_ex->count()) cfg.engineering.max_examples = max_examples;
        if (o_temp->count()) cfg.engineering.temperature = temperature;
        if (o_serial->count())
            cfg.engineering.serialization.style = serialization == "genotype"
                                                      ? dataset::SerializationStyle::Genotype
                                                      : dataset::SerializationStyle::Simple;
        if (o_presel->count()) cfg.preselected = preselected;
        if (o_out->count()) cfg.output_dir = output_dir;
        if (o_pheno->count()) cfg.phenotype = phenotype;
        if (o_n->count()) cfg.nominate_n = nominate_n;

        load_gene_map_into(cfg);

        if (sub_select->parsed()) {
            cfg.validate();
            return run_select(cfg, strategy);
        }
        if (sub_engineer->parsed()) {
            cfg.validate();
            return run_engineer(cfg);
        }
        if (sub_nominate->parsed()) {
            cfg.mode = Mode::Nominate;
            cfg.validate();
            return run_nominate(cfg);
        }
        if (sub_replay->parsed()) {
            cfg.provider_kind = "replay";
            cfg.validate();
            return run_evaluation(cfg);
        }
        if (sub_evaluate->parsed() && cfg.mode == Mode::Nominate) {
            cfg.validate();
            return run_nominate(cfg);
        }
        cfg.validate();
        return run_evaluation(cfg);
    } catch (const ExitWith& e) {
        std::cerr << "error: " << e.message << std::endl;
        return e.code;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << std::endl;
        return classify(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << std::endl;
        return 1;
    }
}

}  // namespace freeform::harness

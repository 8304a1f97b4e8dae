#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "freeform/baselines.hpp"
#include "freeform/dataset.hpp"
#include "freeform/engineering.hpp"
#include "freeform/llm.hpp"
#include "freeform/models.hpp"
#include "freeform/selection.hpp"

namespace freeform::harness {

enum class Mode { SelectCompare, Engineer, Nominate, FullPipeline };

std::string mode_name(Mode mode);
Mode mode_from_name(const std::string& name);  // throws ConfigError

/**
 * One experiment: dataset, provider wiring, the mode to run, and the sweep
 * grid. Loadable from JSON; every field has a CLI override. The JSON snapshot
 * in each report round-trips through from_json, so a run is reproducible from
 * its own report plus the cache file.
 */
struct ExperimentConfig {
    std::string dataset_path;
    std::string label_column;   // empty selects the last CSV column
    std::string gene_map_path;  // optional, enables gene-aware serialization

    Mode mode = Mode::SelectCompare;
    std::vector<std::size_t> shot_counts = {10, 20, 40, 80, 160, 320};
    std::size_t repeats = 5;
    std::uint64_t seed = 1;
    /// (shot count, repeat) tasks fan out on up to this many threads.
    std::size_t workers = 1;
    /// Folds for per-split hyperparameter search.
    std::size_t cv_k = 4;

    /// Selection methods to compare; any of "hierarchical", "sequential",
    /// "lasso", "pca", "gini".
    std::vector<std::string> methods = {"hierarchical", "lasso", "pca", "gini"};
    /// Run the relevance filter before the LLM selection strategies.
    bool use_filter = false;
    models::Averaging averaging = models::Averaging::Macro;

    /// "replay" (strict cache), "record" (cache, HTTP on miss), "http",
    /// or "oracle" (score-driven offline model).
    std::string provider_kind = "replay";
    std::string cache_path;
    std::string oracle_scores_path;  // JSON object: variant -> relevance score
    double oracle_filter_threshold = 0.5;
    /// Name of the environment variable holding the API key; the key itself
    /// never appears in config files or snapshots.
    std::string api_key_env = "OPENAI_API_KEY";
    llm::ProviderConfig provider;

    selection::SelectionConfig selection;
    engineering::EngineeringConfig engineering;

    /// Engineer mode: reuse this selection instead of computing one.
    std::vector<std::string> preselected;

    std::string output_dir = "reports";
    std::string phenotype;
    std::size_t nominate_n = 15;

    void validate() const;  // throws ConfigError
    nlohmann::json to_json() const;
    static ExperimentConfig from_json(const nlohmann::json& j);  // throws ConfigError
};

/// One scored cell of a run: a selection method (or feature treatment), a
/// shot count, a repeat index, and the classifier family that produced it.
struct ReportRow {
    std::string method;
    std::size_t shots = 0;
    std::size_t repeat = 0;
    std::string classifier;  // "logistic" or "forest"
    double auroc = 0.0;
};

/**
 * Result of one run. Rows are ordered by (method, shots, repeat, classifier)
 * independent of worker scheduling, so serialized reports are byte-stable.
 */
struct RunReport {
    std::vector<ReportRow> rows;
    nlohmann::json artifacts = nlohmann::json::object();
    nlohmann::json provenance = nlohmann::json::object();

    /// Rows plus per-(method, shots, classifier) mean and sample standard
    /// deviation, each aggregate over exactly `repeats` values.
    nlohmann::json to_json() const;
    /// Flat plotting table: "method,shots,repeat,classifier,auroc".
    std::string to_csv() const;
};

// ---------------------------------------------------------------------------
// synthetic benchmark

/**
 * Planted-signal generator. Additive: per-class effect weights on the planted
 * variants decide the label through a softmax draw. Product: the label is
 * 1{x_a * x_b > 0} for the two top-scored planted variants (an epistasis
 * proxy no additive model can represent exactly).
 */
struct SyntheticSpec {
    enum class Kind { Additive, Product };

    std::size_t n_samples = 500;
    std::size_t n_variants = 400;
    std::size_t n_signals = 15;
    std::size_t n_classes = 2;
    Kind kind = Kind::Additive;
    /// Scale of the per-signal class effects (additive kind).
    double effect = 1.0;
    /// Relevance-score bands: planted variants land in [signal_low,
    /// signal_high], decoys in [decoy_low, decoy_high]. Kept disjoint so a
    /// temperature-0 oracle ranks every planted variant above every decoy.
    double signal_low = 2.0;
    double signal_high = 3.0;
    double decoy_low = 0.2;
    double decoy_high = 0.4;
    std::uint64_t seed = 7;
};

struct SyntheticData {
    dataset::GenotypeDataset data;
    /// Planted variant names, descending relevance score.
    std::vector<std::string> planted;
    /// Score per variant; all scores distinct, planted above every decoy.
    std::map<std::string, double> scores;
};

SyntheticData make_synthetic(const SyntheticSpec& spec);  // throws ConfigError

// ---------------------------------------------------------------------------
// runs

/// Provider per cfg.provider_kind. API keys come from the configured
/// environment variable. Throws ConfigError on bad wiring, CacheMiss when a
/// strict replay cache does not exist.
std::shared_ptr<llm::Provider> make_provider(const ExperimentConfig& cfg);

/// JSON object file "variant -> score" for the oracle provider.
std::map<std::string, double> load_score_map(const std::string& path);

/**
 * Selection comparison sweep. LLM-driven selections are computed once per
 * dataset (they are data-independent) and reused across every split;
 * data-driven baselines are recomputed per training split. Each (shot count,
 * repeat) split trains both classifier families per method and scores AUROC
 * on the rows not drawn into the training sample.
 *
 * When `partial` is given, completed rows are appended to it as tasks finish
 * so a failing run still leaves its finished cells behind.
 */
RunReport run_selection_compare(const ExperimentConfig& cfg, const dataset::GenotypeDataset& ds,
                                llm::Provider& provider, RunReport* partial = nullptr);

/**
 * Feature-engineering sweep over the selected variants (cfg.preselected, or
 * hierarchical selection when empty). Per split: K generated FeatureSets, K
 * trained members, and rows for the raw-feature model ("raw"), the first
 * member alone ("single"), and the probability-averaging ensemble
 * ("ensemble"), for both classifier families.
 */
RunReport run_engineering(const ExperimentConfig& cfg, const dataset::GenotypeDataset& ds,
                          llm::Provider& provider, RunReport* partial = nullptr);

struct NominationResult {
    std::vector<std::string> suggested;  // de-duplicated, first-mention order
    std::vector<std::string> present;    // suggested within the known universe
    std::vector<std::string> novel;      // suggested outside it
    bool short_count = false;            // fewer distinct suggestions than asked
    std::string raw_text;
};

/**
 * Asks for the n variant identifiers most informative for a phenotype
 * (step-by-step reasoning, one "Answer: ..." line), de-duplicates them, and
 * partitions against the known universe when one is given.
 * Throws NothingParsed when no identifier comes back.
 */
NominationResult nominate_features(const std::string& phenotype, std::size_t n,
                                   llm::Provider& provider,
                                   const std::vector<std::string>* known_universe = nullptr,
                                   std::uint64_t seed = 0);

/// Command-line entry point (subcommands select, engineer, evaluate,
/// nominate, replay). Returns the process exit code: 0 success, 2 config
/// error, 3 data error, 4 provider error.
int run_cli(int argc, const char* const* argv);

}  // namespace freeform::harness

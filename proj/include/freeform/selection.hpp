#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "freeform/llm.hpp"

namespace freeform::selection {

struct SelectionConfig {
    std::size_t d_prime = 15;
    std::size_t bucket_min = 50;
    std::size_t bucket_max = 100;
    std::size_t intermediate_iters = 3;
    std::size_t final_iters = 10;
    double temp_intermediate = 0.3;
    double temp_final = 0.7;
    std::string task_description;
    std::uint64_t seed = 0;

    /// Majority-vote schedule for sequential forward selection: one round for
    /// the first `seq_single_until` picks, `seq_rounds_mid` rounds up to pick
    /// `seq_mid_until`, `seq_rounds_late` rounds after that.
    std::size_t seq_single_until = 3;
    std::size_t seq_mid_until = 8;
    std::size_t seq_rounds_mid = 3;
    std::size_t seq_rounds_late = 5;
    /// Extra rounds granted per pick when a round names an invalid or
    /// already-selected variant.
    std::size_t seq_max_retries = 5;

    std::size_t filter_batch = 20;
    /// Yes-rate above which a filter batch is re-asked with stricter wording.
    double filter_escalate_rate = 0.6;

    /// Bucket selections within one level may run on this many threads.
    std::size_t workers = 1;

    void validate() const;  // throws ConfigError
};

/// One LLM round: what was shown, what came back, what survived validation.
struct RoundRecord {
    std::string stage;  // "filter", "intermediate", "final", "pick", "retry"
    std::size_t level = 0;
    std::vector<std::string> presented;
    std::string raw_text;
    std::vector<std::string> parsed;
};

/// Vote tally over the rounds run on one bucket.
struct BucketTally {
    std::map<std::string, std::size_t> votes;
    std::map<std::string, double> rank_sums;  // 1-based in-round ranks, summed
    std::vector<RoundRecord> rounds;

    /// Names by (votes desc, mean rank asc, name asc).
    std::vector<std::string> ranked() const;
};

struct SelectionResult {
    std::string strategy;
    std::vector<std::string> selected;
    std::map<std::string, std::size_t> votes;
    std::vector<RoundRecord> rounds;
};

/**
 * Keeps the variants the model judges relevant to the task, asked in batches
 * with one "<variant>: Yes/No" verdict line each. A batch whose yes-rate
 * exceeds `filter_escalate_rate` is re-asked once with stricter wording and
 * the second verdicts win. Variants without a usable verdict are retained.
 */
std::vector<std::string> relevance_filter(const std::vector<std::string>& variants,
                                          const SelectionConfig& cfg, llm::Provider& provider,
                                          std::vector<RoundRecord>* transcript = nullptr);

/// Verdict map parsed out of a filter response; names must match a listed
/// variant exactly (matching is on the text before the last colon). Throws
/// UnparsableVerdict when a non-empty batch yields no verdict at all.
std::map<std::string, bool> parse_filter_verdicts(const std::string& response,
                                                  const std::vector<std::string>& variants);

/**
 * Random partition into buckets of size bucket_max. A remainder shorter than
 * max(d_prime, bucket_min/2) is not kept as its own bucket; the whole set is
 * instead split into one more bucket of near-equal sizes. Inputs that fit a
 * single bucket are returned as one (shuffled) bucket.
 */
std::vector<std::vector<std::string>> partition_buckets(const std::vector<std::string>& variants,
                                                        const SelectionConfig& cfg,
                                                        std::uint64_t round_seed);

/**
 * Runs `intermediate_iters` voting rounds on one bucket (or `final_iters`
 * rounds with step-by-step reasoning when `final` is set), shuffling the
 * presentation order every round. Each round asks for the d_prime most
 * relevant variants; parsed names outside the bucket are ignored. Throws
 * AllRoundsUnparsable when no round yields a valid name.
 */
BucketTally select_from_bucket(const std::vector<std::string>& bucket, const SelectionConfig& cfg,
                               llm::Provider& provider, bool final, std::uint64_t bucket_seed);

/**
 * Bucketed tournament: partition, vote per bucket, keep each bucket's top
 * d_prime, merge, repeat until one bucket remains, then run the final
 * reasoning rounds on it. An input of exactly d_prime variants is returned
 * unchanged without any LLM call.
 */
SelectionResult hierarchical_select(const std::vector<std::string>& variants,
                                    const SelectionConfig& cfg, llm::Provider& provider);

/**
 * Greedy forward selection: each pick asks for the single best remaining
 * variant, with majority voting over several rounds per the schedule in the
 * config. Invalid or already-selected answers trigger retry rounds; a pick
 * whose tally stays empty falls back to the highest-tally unselected
 * candidate seen so far, and SelectionStalled is thrown when there is none.
 */
SelectionResult sequential_forward_select(const std::vector<std::string>& variants,
                                          const SelectionConfig& cfg, llm::Provider& provider);

/// Audit report: strategy, selected list, tallies, full round transcripts.
nlohmann::json selection_report(const SelectionResult& result);

}  // namespace freeform::selection

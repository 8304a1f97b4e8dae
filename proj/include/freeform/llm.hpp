#pragma once

#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace freeform::llm {

/// Pipeline stage a request belongs to. Routes the request to the reasoning
/// or routine model tier and tells offline providers how to answer.
enum class Tag { Filter, Select, SelectFinal, Engineer, Parse, FunctionWrite, Nominate };

std::string tag_name(Tag tag);
Tag tag_from_name(const std::string& name);

/// True for stages that need the stronger model (selection, engineering,
/// nomination); false for routine stages (parsing, formula rewriting).
bool is_reasoning_tag(Tag tag);

struct ProviderConfig {
    std::string endpoint = "https://api.openai.com";
    std::string reasoning_model = "gpt-4o-2024-05-13";
    std::string routine_model = "gpt-3.5-turbo";
    std::string api_key;
    double timeout_s = 60.0;
    std::size_t max_retries = 3;
    std::size_t backoff_base_ms = 250;

    void validate() const;  // throws ConfigError
};

struct PromptRequest {
    std::string system_text;
    std::string user_text;
    double temperature = 0.0;
    std::optional<std::uint64_t> seed_hint;
    Tag tag = Tag::Select;
};

struct TokenUsage {
    std::size_t prompt_tokens = 0;
    std::size_t completion_tokens = 0;
};

struct CompletionResponse {
    std::string text;
    TokenUsage usage;
    bool cached = false;
};

/**
 * Canonical form of a prompt text: runs of whitespace outside ```-fenced
 * blocks collapse to a single space; fenced blocks are kept verbatim. Cache
 * keys built on this are stable under prompt-template reflowing while staying
 * sensitive to the serialized examples.
 */
std::string canonicalize_text(const std::string& text);

/// 64-bit request key over (tag, temperature, seed hint, canonical texts).
std::uint64_t request_hash(const PromptRequest& req);
std::string request_hash_hex(const PromptRequest& req);

class Provider {
public:
    virtual ~Provider() = default;
    /// One chat completion round trip. Throws Transport / RateLimited /
    /// ProviderRejected / CacheMiss depending on the provider.
    virtual CompletionResponse complete(const PromptRequest& req) = 0;
};

// ---------------------------------------------------------------------------
// cache log

struct CacheRecord {
    std::string hash;
    PromptRequest request;
    CompletionResponse response;
    std::string timestamp;
};

/// Append-only JSONL log of request/response pairs. Appends are serialized;
/// safe for concurrent writers.
class CacheLog {
public:
    explicit CacheLog(std::filesystem::path path);
    void append(const PromptRequest& req, const CompletionResponse& resp);
    const std::filesystem::path& path() const { return path_; }

    static std::vector<CacheRecord> load(const std::filesystem::path& path);  // throws CorruptCache

private:
    std::filesystem::path path_;
    std::mutex mutex_;
};

// ---------------------------------------------------------------------------
// providers

/// Answers from a fixed script: per-tag queues consumed in order, then
/// per-tag constant responses, then `default_text`.
class ScriptedProvider : public Provider {
public:
    ScriptedProvider() = default;
    explicit ScriptedProvider(std::string default_text) : default_text_(std::move(default_text)) {}

    /// Queue a response for the next request with this tag.
    void enqueue(Tag tag, std::string text);
    /// Respond to every request with this tag (after the queue drains).
    void set_for_tag(Tag tag, std::string text);
    /// Full control; return std::nullopt to fall through to tag rules.
    void set_hook(std::function<std::optional<std::string>(const PromptRequest&)> hook);

    std::size_t call_count() const { return call_count_; }
    const std::vector<PromptRequest>& requests() const { return requests_; }

    CompletionResponse complete(const PromptRequest& req) override;

private:
    std::string default_text_;
    std::map<Tag, std::deque<std::string>> queues_;
    std::map<Tag, std::string> per_tag_;
    std::function<std::optional<std::string>(const PromptRequest&)> hook_;
    std::vector<PromptRequest> requests_;
    std::size_t call_count_ = 0;
    std::mutex mutex_;
};

/**
 * Deterministic stand-in for a knowledgeable model, driven by a per-variant
 * relevance score map.
 *
 *  - Filter: answers "name: Yes" iff score > threshold, line per variant.
 *  - Select/SelectFinal: ranks the presented variants by Plackett-Luce
 *    sampling (Gumbel keys score/T + G); exact score order at temperature 0.
 *  - Engineer: emits templated interaction formulas over the presented
 *    aliases, favouring the highest-scored ones.
 *  - Parse: extracts formula-shaped lines from the embedded text.
 *  - FunctionWrite: best-effort cleanup of a rejected formula.
 *  - Nominate: names its top-scored variants.
 *
 * Responses are pure functions of (request, scores, seed): the per-request
 * noise stream is keyed on the request hash, so calls are thread-safe and
 * independent of execution order.
 */
class OracleProvider : public Provider {
public:
    OracleProvider(std::map<std::string, double> relevance_scores, std::uint64_t seed,
                   double filter_threshold = 0.5);

    CompletionResponse complete(const PromptRequest& req) override;

    /// Presented-variant ranking for a Select-tagged request; exposed for tests.
    std::vector<std::string> rank_variants(std::vector<std::string> variants, double temperature,
                                           std::uint64_t noise_key) const;

private:
    double score_of(const std::string& variant) const;
    std::string answer_filter(const PromptRequest& req) const;
    std::string answer_select(const PromptRequest& req) const;
    std::string answer_engineer(const PromptRequest& req) const;
    std::string answer_parse(const PromptRequest& req) const;
    std::string answer_rewrite(const PromptRequest& req) const;
    std::string answer_nominate(const PromptRequest& req) const;

    std::map<std::string, double> scores_;
    std::uint64_t seed_;
    double threshold_;
};

/**
 * Replays recorded completions by canonical request hash. Identical requests
 * recorded more than once replay in recording order. On a miss: strict mode
 * throws CacheMiss; otherwise the optional fallback provider is consulted and
 * its answer appended to the log (record mode).
 */
class ReplayProvider : public Provider {
public:
    ReplayProvider(const std::filesystem::path& cache_path, bool strict,
                   std::shared_ptr<Provider> fallback = nullptr);

    CompletionResponse complete(const PromptRequest& req) override;

private:
    std::unordered_map<std::uint64_t, std::deque<CompletionResponse>> by_hash_;
    bool strict_;
    std::shared_ptr<Provider> fallback_;
    std::unique_ptr<CacheLog> log_;
    std::mutex mutex_;
};

/// Decorator that appends every completed round trip to a cache log.
class RecordingProvider : public Provider {
public:
    RecordingProvider(std::shared_ptr<Provider> inner, const std::filesystem::path& cache_path);
    CompletionResponse complete(const PromptRequest& req) override;

private:
    std::shared_ptr<Provider> inner_;
    CacheLog log_;
};

/**
 * OpenAI-compatible chat-completions client. Retries transport failures and
 * rate limits with exponential backoff (at most max_retries+1 attempts);
 * other provider rejections are not retried. When a cache path is configured
 * every round trip is appended to it.
 */
class HttpProvider : public Provider {
public:
    explicit HttpProvider(ProviderConfig cfg,
                          std::optional<std::filesystem::path> cache_path = std::nullopt);

    CompletionResponse complete(const PromptRequest& req) override;

    std::size_t last_attempt_count() const { return last_attempts_; }

private:
    ProviderConfig cfg_;
    std::unique_ptr<CacheLog> log_;
    std::size_t last_attempts_ = 0;
};

/// Convenience wrapper matching the operation shape used by callers that own
/// a config rather than a provider instance.
CompletionResponse complete(const ProviderConfig& cfg, const PromptRequest& req);

// ---------------------------------------------------------------------------
// prompt-parsing helpers shared by offline providers and the pipeline

/// Variant names out of the "- name" list block of a prompt.
std::vector<std::string> parse_prompt_variant_list(const std::string& user_text);

/// Alias bindings "x1 = name, x2 = name, ..." out of an engineering prompt.
std::vector<std::pair<std::size_t, std::string>> parse_prompt_aliases(const std::string& user_text);

/// Content of the first ```-fenced block, if any.
std::optional<std::string> fenced_block(const std::string& text);

/// The answer payload of a completion: the text after the last "Answer:"
/// marker, or the last non-empty line when no marker is present.
std::string answer_line(const std::string& completion_text);

/// Comma-separated tokens of an answer line, trimmed of whitespace and
/// trailing punctuation.
std::vector<std::string> split_answer_items(const std::string& line);

}  // namespace freeform::llm

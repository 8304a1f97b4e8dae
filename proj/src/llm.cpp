#include "freeform/llm.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <chrono>
#include <fstream>
#include <regex>
#include <sstream>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "freeform/errors.hpp"
#include "freeform/random.hpp"

namespace freeform::llm {

using nlohmann::json;

std::string tag_name(Tag tag) {
    switch (tag) {
        case Tag::Filter: return "filter";
        case Tag::Select: return "select";
        case Tag::SelectFinal: return "select_final";
        case Tag::Engineer: return "engineer";
        case Tag::Parse: return "parse";
        case Tag::FunctionWrite: return "function_write";
        case Tag::Nominate: return "nominate";
    }
    return "unknown";
}

Tag tag_from_name(const std::string& name) {
    if (name == "filter") return Tag::Filter;
    if (name == "select") return Tag::Select;
    if (name == "select_final") return Tag::SelectFinal;
    if (name == "engineer") return Tag::Engineer;
    if (name == "parse") return Tag::Parse;
    if (name == "function_write") return Tag::FunctionWrite;
    if (name == "nominate") return Tag::Nominate;
    throw CorruptCache("unknown request tag: \"" + name + "\"");
}

bool is_reasoning_tag(Tag tag) {
    return tag != Tag::Parse && tag != Tag::FunctionWrite;
}

void ProviderConfig::validate() const {
    if (timeout_s <= 0) throw ConfigError("provider timeout must be positive");
    if (endpoint.empty()) throw ConfigError("provider endpoint must be non-empty");
}

// ---------------------------------------------------------------------------
// canonicalization and hashing

std::string canonicalize_text(const std::string& text) {
    std::string out;
    out.reserve(text.size());
    bool in_fence = false;
    bool pending_space = false;
    std::size_t i = 0;
    while (i < text.size()) {
        if (text.compare(i, 3, "```") == 0) {
            if (pending_space && !out.empty()) out += ' ';
            pending_space = false;
            in_fence = !in_fence;
            out += "```";
            i += 3;
            continue;
        }
        const char c = text[i];
        if (in_fence) {
            out += c;
        } else if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
            pending_space = true;
        } else {
            if (pending_space && !out.empty()) out += ' ';
            pending_space = false;
            out += c;
        }
        ++i;
    }
    return out;
}

namespace {

std::uint64_t fnv1a(std::uint64_t h, const std::string& s) {
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    h ^= 0xff;
    h *= 0x100000001b3ULL;
    return h;
}

std::string format_double(double v) {
    char buf[32];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

}  // namespace

std::uint64_t request_hash(const PromptRequest& req) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    h = fnv1a(h, tag_name(req.tag));
    h = fnv1a(h, format_double(req.temperature));
    h = fnv1a(h, req.seed_hint ? std::to_string(*req.seed_hint) : "-");
    h = fnv1a(h, canonicalize_text(req.system_text));
    h = fnv1a(h, canonicalize_text(req.user_text));
    return h;
}

std::string request_hash_hex(const PromptRequest& req) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(request_hash(req)));
    return std::string(buf);
}

// ---------------------------------------------------------------------------
// cache log

namespace {

json request_to_json(const PromptRequest& req) {
    json j{{"tag", tag_name(req.tag)},
           {"system", req.system_text},
           {"user", req.user_text},
           {"temperature", req.temperature}};
    if (req.seed_hint) j["seed_hint"] = *req.seed_hint;
    return j;
}

PromptRequest request_from_json(const json& j) {
    PromptRequest req;
    req.tag = tag_from_name(j.at("tag").get<std::string>());
    req.system_text = j.at("system").get<std::string>();
    req.user_text = j.at("user").get<std::string>();
    req.temperature = j.at("temperature").get<double>();
    if (j.contains("seed_hint")) req.seed_hint = j["seed_hint"].get<std::uint64_t>();
    return req;
}

std::string iso_timestamp() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    char buf[32];
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

}  // namespace

CacheLog::CacheLog(std::filesystem::path path) : path_(std::move(path)) {
    if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
}

void CacheLog::append(const PromptRequest& req, const CompletionResponse& resp) {
    json rec{{"hash", request_hash_hex(req)},
             {"request", request_to_json(req)},
             {"response",
              {{"text", resp.text},
               {"prompt_tokens", resp.usage.prompt_tokens},
               {"completion_tokens", resp.usage.completion_tokens}}},
             {"timestamp", iso_timestamp()}};
    std::lock_guard<std::mutex> lock(mutex_);
    std::ofstream out(path_, std::ios::app);
    if (!out) throw Error("cannot open cache log for append: " + path_.string());
    out << rec.dump() << '\n';
}

std::vector<CacheRecord> CacheLog::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw CorruptCache("cannot open cache log: " + path.string());
    std::vector<CacheRecord> records;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
            CacheRecord rec;
            rec.hash = j.at("hash").get<std::string>();
            rec.request = request_from_json(j.at("request"));
            rec.response.text = j.at("response").at("text").get<std::string>();
            rec.response.usage.prompt_tokens = j["response"].value("prompt_tokens", std::size_t{0});
            rec.response.usage.completion_tokens =
                j["response"].value("completion_tokens", std::size_t{0});
            rec.timestamp = j.value("timestamp", "");
            records.push_back(std::move(rec));
        } catch (const json::exception& e) {
            throw CorruptCache("cache log " + path.string() + " line " + std::to_string(line_no) +
                               ": " + e.what());
        }
    }
    return records;
}

// ---------------------------------------------------------------------------
// scripted provider

void ScriptedProvider::enqueue(Tag tag, std::string text) {
    std::lock_guard<std::mutex> lock(mutex_);
    queues_[tag].push_back(std::move(text));
}

void ScriptedProvider::set_for_tag(Tag tag, std::string text) {
    std::lock_guard<std::mutex> lock(mutex_);
    per_tag_[tag] = std::move(text);
}

void ScriptedProvider::set_hook(std::function<std::optional<std::string>(const PromptRequest&)> hook) {
    std::lock_guard<std::mutex> lock(mutex_);
    hook_ = std::move(hook);
}

CompletionResponse ScriptedProvider::complete(const PromptRequest& req) {
    std::lock_guard<std::mutex> lock(mutex_);
    ++call_count_;
    requests_.push_back(req);

    std::string text;
    bool found = false;
    if (hook_) {
        if (auto hooked = hook_(req)) {
            text = *hooked;
            found = true;
        }
    }
    if (!found) {
        auto q = queues_.find(req.tag);
        if (q != queues_.end() && !q->second.empty()) {
            text = std::move(q->second.front());
            q->second.pop_front();
            found = true;
        }
    }
    if (!found) {
        auto t = per_tag_.find(req.tag);
        if (t != per_tag_.end()) {
            text = t->second;
            found = true;
        }
    }
    if (!found) text = default_text_;

    CompletionResponse resp;
    resp.text = std::move(text);
    resp.usage.prompt_tokens = req.user_text.size() / 4;
    resp.usage.completion_tokens = resp.text.size() / 4;
    return resp;
}

// ---------------------------------------------------------------------------
// prompt-parsing helpers

namespace {

std::string trim(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

std::vector<std::string> split_lines(const std::string& text) {
    std::vector<std::string> lines;
    std::string line;
    std::istringstream in(text);
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        lines.push_back(line);
    }
    return lines;
}

}  // namespace

std::vector<std::string> parse_prompt_variant_list(const std::string& user_text) {
    std::vector<std::string> variants;
    for (const auto& raw : split_lines(user_text)) {
        const std::string line = trim(raw);
        if (line.size() > 2 && line[0] == '-' && line[1] == ' ') {
            variants.push_back(trim(line.substr(2)));
        }
    }
    return variants;
}

std::vector<std::pair<std::size_t, std::string>> parse_prompt_aliases(const std::string& user_text) {
    std::vector<std::pair<std::size_t, std::string>> aliases;
    static const std::regex alias_re(R"(x(\d+)\s*=(?!=)\s*([^,\n]+))");
    auto begin = std::sregex_iterator(user_text.begin(), user_text.end(), alias_re);
    for (auto it = begin; it != std::sregex_iterator(); ++it) {
        aliases.emplace_back(static_cast<std::size_t>(std::stoul((*it)[1].str())),
                             trim((*it)[2].str()));
    }
    return aliases;
}

std::optional<std::string> fenced_block(const std::string& text) {
    const auto open = text.find("```");
    if (open == std::string::npos) return std::nullopt;
    auto body_start = text.find('\n', open);
    if (body_start == std::string::npos) return std::nullopt;
    ++body_start;
    const auto close = text.find("```", body_start);
    if (close == std::string::npos) return std::nullopt;
    return text.substr(body_start, close - body_start);
}

std::string answer_line(const std::string& completion_text) {
    static const std::string marker = "Answer:";
    const auto pos = completion_text.rfind(marker);
    if (pos != std::string::npos) {
        auto rest = completion_text.substr(pos + marker.size());
        const auto nl = rest.find('\n');
        if (nl != std::string::npos) rest = rest.substr(0, nl);
        return trim(rest);
    }
    const auto lines = split_lines(completion_text);
    for (auto it = lines.rbegin(); it != lines.rend(); ++it) {
        const std::string t = trim(*it);
        if (!t.empty()) return t;
    }
    return "";
}

std::vector<std::string> split_answer_items(const std::string& line) {
    std::vector<std::string> items;
    std::string item;
    std::istringstream in(line);
    while (std::getline(in, item, ',')) {
        std::string t = trim(item);
        while (!t.empty() && (t.back() == '.' || t.back() == ';')) t.pop_back();
        t = trim(t);
        if (!t.empty()) items.push_back(t);
    }
    return items;
}

// ---------------------------------------------------------------------------
// oracle provider

OracleProvider::OracleProvider(std::map<std::string, double> relevance_scores, std::uint64_t seed,
                               double filter_threshold)
    : scores_(std::move(relevance_scores)), seed_(seed), threshold_(filter_threshold) {
    if (scores_.empty()) throw Error("oracle provider needs a non-empty score map");
}

double OracleProvider::score_of(const std::string& variant) const {
    auto it = scores_.find(variant);
    return it == scores_.end() ? 0.0 : it->second;
}

std::vector<std::string> OracleProvider::rank_variants(std::vector<std::string> variants,
                                                       double temperature,
                                                       std::uint64_t noise_key) const {
    struct Keyed {
        double key;
        std::string name;
    };
    std::vector<Keyed> keyed;
    keyed.reserve(variants.size());
    if (temperature <= 0.0) {
        for (auto& v : variants) keyed.push_back({score_of(v), std::move(v)});
    } else {
        // Plackett-Luce with weights exp(score / T), sampled via Gumbel keys.
        rng::Pcg gen(rng::derive_seed(seed_, {0x09ac1e, noise_key}));
        for (auto& v : variants) {
            const double key = score_of(v) / temperature + gen.gumbel();
            keyed.push_back({key, std::move(v)});
        }
    }
    std::stable_sort(keyed.begin(), keyed.end(), [](const Keyed& a, const Keyed& b) {
        if (a.key != b.key) return a.key > b.key;
        return a.name < b.name;
    });
    std::vector<std::string> out;
    out.reserve(keyed.size());
    for (auto& k : keyed) out.push_back(std::move(k.name));
    return out;
}

std::string OracleProvider::answer_filter(const PromptRequest& req) const {
    std::ostringstream out;
    for (const auto& v : parse_prompt_variant_list(req.user_text)) {
        out << v << ": " << (score_of(v) > threshold_ ? "Yes" : "No") << '\n';
    }
    return out.str();
}

std::string OracleProvider::answer_select(const PromptRequest& req) const {
    auto ranked = rank_variants(parse_prompt_variant_list(req.user_text), req.temperature,
                                request_hash(req));
    std::ostringstream out;
    if (req.tag == Tag::SelectFinal) {
        out << "Considering the task, the candidates rank as follows.\n";
    }
    out << "Answer: ";
    for (std::size_t i = 0; i < ranked.size(); ++i) {
        if (i > 0) out << ", ";
        out << ranked[i];
    }
    return out.str();
}

std::string OracleProvider::answer_engineer(const PromptRequest& req) const {
    const auto aliases = parse_prompt_aliases(req.user_text);
    if (aliases.empty()) return "No features provided.";

    // rank alias indices by the score of the bound variant, with temperature noise
    std::vector<std::string> names;
    std::map<std::string, std::size_t> index_of;
    for (const auto& [idx, name] : aliases) {
        names.push_back(name);
        index_of[name] = idx;
    }
    const auto ranked = rank_variants(names, req.temperature, request_hash(req));

    auto alias = [&](std::size_t rank) { return "x" + std::to_string(index_of.at(ranked[rank])); };

    std::ostringstream out;
    out << "The strongest candidates appear to be " << ranked[0];
    if (ranked.size() > 1) out << " and " << ranked[1];
    out << ", so interactions between them are most promising.\n";
    out << "Engineered features:\n";
    if (ranked.size() >= 2) {
        out << alias(0) << " * " << alias(1) << '\n';
        out << "(" << alias(0) << " > 0) and (" << alias(1) << " > 0)\n";
    } else {
        out << alias(0) << " * " << alias(0) << '\n';
    }
    if (ranked.size() >= 4) out << alias(2) << " + " << alias(3) << '\n';
    return out.str();
}

std::string OracleProvider::answer_parse(const PromptRequest& req) const {
    const auto block = fenced_block(req.user_text);
    const std::string source = block ? *block : req.user_text;
    static const std::regex formula_re(R"(^[\sxX0-9+\-*().><=!andor]*x\d+[\sxX0-9+\-*().><=!andor]*$)");
    std::ostringstream out;
    for (const auto& raw : split_lines(source)) {
        const std::string line = trim(raw);
        if (line.empty()) continue;
        if (std::regex_match(line, formula_re)) out << line << '\n';
    }
    return out.str();
}

std::string OracleProvider::answer_rewrite(const PromptRequest& req) const {
    // pull the offending formula out of the rewrite request
    std::string formula;
    for (const auto& raw : split_lines(req.user_text)) {
        const std::string line = trim(raw);
        if (line.rfind("Formula:", 0) == 0) {
            formula = trim(line.substr(8));
            break;
        }
    }
    // best effort: collapse "**" into "*", drop characters outside the grammar
    std::string fixed;
    for (std::size_t i = 0; i < formula.size(); ++i) {
        if (formula[i] == '*' && i + 1 < formula.size() && formula[i + 1] == '*') {
            fixed += '*';
            ++i;
            continue;
        }
        static const std::string allowed = "xX0123456789+-*()><=! .andor";
        if (allowed.find(formula[i]) != std::string::npos) fixed += formula[i];
    }
    return fixed;
}

std::string OracleProvider::answer_nominate(const PromptRequest& req) const {
    std::size_t n = 15;
    static const std::regex n_re(R"(Suggest\s+(\d+))", std::regex::icase);
    std::smatch m;
    if (std::regex_search(req.user_text, m, n_re)) n = std::stoul(m[1].str());

    std::vector<std::pair<double, std::string>> ranked;
    ranked.reserve(scores_.size());
    for (const auto& [name, score] : scores_) ranked.emplace_back(score, name);
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    std::ostringstream out;
    out << "Several variants are well established for this phenotype.\nAnswer: ";
    const std::size_t count = std::min(n, ranked.size());
    for (std::size_t i = 0; i < count; ++i) {
        if (i > 0) out << ", ";
        out << ranked[i].second;
    }
    return out.str();
}

CompletionResponse OracleProvider::complete(const PromptRequest& req) {
    std::string text;
    switch (req.tag) {
        case Tag::Filter: text = answer_filter(req); break;
        case Tag::Select:
        case Tag::SelectFinal: text = answer_select(req); break;
        case Tag::Engineer: text = answer_engineer(req); break;
        case Tag::Parse: text = answer_parse(req); break;
        case Tag::FunctionWrite: text = answer_rewrite(req); break;
        case Tag::Nominate: text = answer_nominate(req); break;
    }
    CompletionResponse resp;
    resp.text = std::move(text);
    resp.usage.prompt_tokens = req.user_text.size() / 4;
    resp.usage.completion_tokens = resp.text.size() / 4;
    return resp;
}

// ---------------------------------------------------------------------------
// replay / recording providers

ReplayProvider::ReplayProvider(const std::filesystem::path& cache_path, bool strict,
                               std::shared_ptr<Provider> fallback)
    : strict_(strict), fallback_(std::move(fallback)) {
    if (std::filesystem::exists(cache_path)) {
        for (auto& rec : CacheLog::load(cache_path)) {
            by_hash_[request_hash(rec.request)].push_back(rec.response);
        }
    } else if (strict_ && !fallback_) {
        throw CacheMiss("cache log does not exist: " + cache_path.string());
    }
    if (fallback_) log_ = std::make_unique<CacheLog>(cache_path);
}

CompletionResponse ReplayProvider::complete(const PromptRequest& req) {
    const std::uint64_t h = request_hash(req);
    {
        std::lock_guard<std::mutex> lock(mutex_);
        auto it = by_hash_.find(h);
        if (it != by_hash_.end() && !it->second.empty()) {
            CompletionResponse resp = std::move(it->second.front());
            it->second.pop_front();
            resp.cached = true;
            return resp;
        }
    }
    if (fallback_) {
        CompletionResponse resp = fallback_->complete(req);
        log_->append(req, resp);
        return resp;
    }
    if (strict_) {
        throw CacheMiss("no cached completion for request " + request_hash_hex(req) + " (tag " +
                        tag_name(req.tag) + ")");
    }
    throw CacheMiss("no cached completion and no fallback provider configured");
}

RecordingProvider::RecordingProvider(std::shared_ptr<Provider> inner,
                                     const std::filesystem::path& cache_path)
    : inner_(std::move(inner)), log_(cache_path) {}

CompletionResponse RecordingProvider::complete(const PromptRequest& req) {
    CompletionResponse resp = inner_->complete(req);
    log_.append(req, resp);
    return resp;
}

// ---------------------------------------------------------------------------
// http provider

HttpProvider::HttpProvider(ProviderConfig cfg, std::optional<std::filesystem::path> cache_path)
    : cfg_(std::move(cfg)) {
    cfg_.validate();
    if (cache_path) log_ = std::make_unique<CacheLog>(*cache_path);
}

CompletionResponse HttpProvider::complete(const PromptRequest& req) {
    json body{{"model", is_reasoning_tag(req.tag) ? cfg_.reasoning_model : cfg_.routine_model},
              {"temperature", req.temperature}};
    json messages = json::array();
    if (!req.system_text.empty()) {
        messages.push_back({{"role", "system"}, {"content", req.system_text}});
    }
    messages.push_back({{"role", "user"}, {"content", req.user_text}});
    body["messages"] = std::move(messages);
    if (req.seed_hint) body["seed"] = *req.seed_hint;
    const std::string payload = body.dump();

    httplib::Headers headers;
    if (!cfg_.api_key.empty()) headers.emplace("Authorization", "Bearer " + cfg_.api_key);

    std::unique_ptr<httplib::Client> client;
    try {
        client = std::make_unique<httplib::Client>(cfg_.endpoint);
    } catch (const std::invalid_argument& e) {
        throw Transport("endpoint not usable: " + std::string(e.what()));
    }
    client->set_connection_timeout(std::chrono::duration<double>(cfg_.timeout_s));
    client->set_read_timeout(std::chrono::duration<double>(cfg_.timeout_s));
    client->set_write_timeout(std::chrono::duration<double>(cfg_.timeout_s));

    const std::size_t max_attempts = cfg_.max_retries + 1;
    std::string last_error = "request failed";
    bool rate_limited = false;
    for (std::size_t attempt = 1; attempt <= max_attempts; ++attempt) {
        last_attempts_ = attempt;
        if (attempt > 1) {
            const auto delay = cfg_.backoff_base_ms * (std::size_t{1} << (attempt - 2));
            std::this_thread::sleep_for(std::chrono::milliseconds(delay));
        }
        auto res = client->Post("/v1/chat/completions", headers, payload, "application/json");
        if (!res) {
            last_error = "transport failure: " + httplib::to_string(res.error());
            rate_limited = false;
            continue;
        }
        if (res->status == 429) {
            last_error = "rate limited (429)";
            rate_limited = true;
            continue;
        }
        if (res->status >= 500) {
            last_error = "server error (" + std::to_string(res->status) + ")";
            rate_limited = false;
            continue;
        }
        if (res->status != 200) {
            throw ProviderRejected("provider rejected request (status " +
                                   std::to_string(res->status) + "): " + res->body);
        }
        try {
            const json j = json::parse(res->body);
            CompletionResponse resp;
            resp.text = j.at("choices").at(0).at("message").at("content").get<std::string>();
            if (j.contains("usage")) {
                resp.usage.prompt_tokens = j["usage"].value("prompt_tokens", std::size_t{0});
                resp.usage.completion_tokens = j["usage"].value("completion_tokens", std::size_t{0});
            }
            if (log_) log_->append(req, resp);
            return resp;
        } catch (const json::exception& e) {
            last_error = std::string("malformed completion payload: ") + e.what();
            rate_limited = false;
            continue;
        }
    }
    if (rate_limited) throw RateLimited(last_error);
    throw Transport(last_error);
}

CompletionResponse complete(const ProviderConfig& cfg, const PromptRequest& req) {
    HttpProvider provider(cfg);
    return provider.complete(req);
}

}  // namespace freeform::llm

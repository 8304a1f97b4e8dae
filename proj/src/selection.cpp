#include "freeform/selection.hpp"

#include <algorithm>
#include <cctype>
#include <set>
#include <sstream>

#include "freeform/errors.hpp"
#include "freeform/parallel.hpp"
#include "freeform/random.hpp"

namespace freeform::selection {

using nlohmann::json;

void SelectionConfig::validate() const {
    if (d_prime < 1) throw ConfigError("d_prime must be at least 1");
    if (bucket_min > bucket_max) throw ConfigError("bucket_min must not exceed bucket_max");
    if (intermediate_iters < 1 || final_iters < 1) {
        throw ConfigError("iteration counts must be at least 1");
    }
    if (seq_rounds_mid < 1 || seq_rounds_late < 1) {
        throw ConfigError("sequential round counts must be at least 1");
    }
    if (filter_batch < 1) throw ConfigError("filter_batch must be at least 1");
    if (temp_intermediate < 0.0 || temp_final < 0.0) {
        throw ConfigError("temperatures must be non-negative");
    }
}

namespace {

constexpr const char* kSystemText =
    "You are an expert geneticist helping identify the genetic variants most "
    "informative for a prediction task.";

std::string trim(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

std::string variant_block(const std::vector<std::string>& names) {
    std::string out;
    for (const auto& n : names) {
        out += "- ";
        out += n;
        out += '\n';
    }
    return out;
}

std::string filter_prompt(const std::vector<std::string>& batch, const SelectionConfig& cfg,
                          bool escalated) {
    std::ostringstream out;
    out << "Task: " << cfg.task_description << "\n\n"
        << "For each genetic variant below, judge whether it is "
        << (escalated ? "clearly relevant" : "potentially relevant") << " to the task.\n"
        << "Reply with exactly one line per variant, in the form \"<variant>: Yes\" or "
           "\"<variant>: No\".\n\n"
        << "Variants:\n"
        << variant_block(batch);
    return out.str();
}

std::string bucket_prompt(const std::vector<std::string>& presented, const SelectionConfig& cfg,
                          bool final) {
    std::ostringstream out;
    out << "Task: " << cfg.task_description << "\n\n"
        << "From the candidate variants below, choose the " << cfg.d_prime
        << " variants most relevant to the task.\n";
    if (final) {
        out << "Think step by step about how each strong candidate relates to the task "
               "before deciding.\n";
    }
    out << "Finish with exactly one line in the form \"Answer: name1, name2, ...\" listing your "
        << cfg.d_prime << " choices in order of importance.\n\n"
        << "Candidates:\n"
        << variant_block(presented);
    return out.str();
}

std::string sequential_prompt(const std::vector<std::string>& presented,
                              const std::vector<std::string>& already,
                              const SelectionConfig& cfg, const std::string& feedback) {
    std::ostringstream out;
    out << "Task: " << cfg.task_description << "\n\n"
        << "Already selected variants: ";
    if (already.empty()) {
        out << "none.";
    } else {
        for (std::size_t i = 0; i < already.size(); ++i) {
            if (i > 0) out << ", ";
            out << already[i];
        }
    }
    out << "\nFrom the remaining candidates below, identify the single most relevant additional "
           "variant for the task.\n"
        << "Think step by step, then finish with one line in the form \"Answer: <variant>\".\n";
    if (!feedback.empty()) out << feedback << '\n';
    out << "\nCandidates:\n" << variant_block(presented);
    return out.str();
}

/// Parsed names from one voting round: in-answer order, bucket members only,
/// de-duplicated, at most d_prime.
std::vector<std::string> parse_round(const std::string& text, const std::set<std::string>& valid,
                                     std::size_t d_prime) {
    std::vector<std::string> names;
    std::set<std::string> seen;
    for (const auto& item : llm::split_answer_items(llm::answer_line(text))) {
        if (names.size() == d_prime) break;
        if (valid.count(item) && !seen.count(item)) {
            names.push_back(item);
            seen.insert(item);
        }
    }
    return names;
}

}  // namespace

std::vector<std::string> BucketTally::ranked() const {
    struct Entry {
        std::string name;
        std::size_t vote_count;
        double mean_rank;
    };
    std::vector<Entry> entries;
    entries.reserve(votes.size());
    for (const auto& [name, count] : votes) {
        entries.push_back({name, count, rank_sums.at(name) / static_cast<double>(count)});
    }
    std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
        if (a.vote_count != b.vote_count) return a.vote_count > b.vote_count;
        if (a.mean_rank != b.mean_rank) return a.mean_rank < b.mean_rank;
        return a.name < b.name;
    });
    std::vector<std::string> out;
    out.reserve(entries.size());
    for (auto& e : entries) out.push_back(std::move(e.name));
    return out;
}

std::map<std::string, bool> parse_filter_verdicts(const std::string& response,
                                                  const std::vector<std::string>& variants) {
    const std::set<std::string> listed(variants.begin(), variants.end());
    std::map<std::string, bool> verdicts;
    std::istringstream in(response);
    std::string line;
    while (std::getline(in, line)) {
        const auto colon = line.rfind(':');
        if (colon == std::string::npos) continue;
        const std::string name = trim(line.substr(0, colon));
        if (!listed.count(name)) continue;
        std::string token = lower(trim(line.substr(colon + 1)));
        while (!token.empty() && (token.back() == '.' || token.back() == '!')) token.pop_back();
        if (token == "yes") {
            verdicts[name] = true;
        } else if (token == "no") {
            verdicts[name] = false;
        }
    }
    if (verdicts.empty() && !variants.empty()) {
        throw UnparsableVerdict("no verdict line matched any of the " +
                                std::to_string(variants.size()) + " listed variants");
    }
    return verdicts;
}

std::vector<std::string> relevance_filter(const std::vector<std::string>& variants,
                                          const SelectionConfig& cfg, llm::Provider& provider,
                                          std::vector<RoundRecord>* transcript) {
    cfg.validate();
    if (variants.empty()) throw ConfigError("relevance filter needs at least one variant");

    auto ask = [&](const std::vector<std::string>& batch, bool escalated, std::uint64_t salt) {
        llm::PromptRequest req;
        req.system_text = kSystemText;
        req.user_text = filter_prompt(batch, cfg, escalated);
        req.temperature = 0.0;
        req.seed_hint = rng::derive_seed(cfg.seed, {0xf117e2, salt});
        req.tag = llm::Tag::Filter;
        const std::string raw = provider.complete(req).text;

        std::map<std::string, bool> verdicts;
        try {
            verdicts = parse_filter_verdicts(raw, batch);
        } catch (const UnparsableVerdict&) {
            // conservative retention: an unreadable batch keeps everything
        }
        if (transcript) {
            RoundRecord rec;
            rec.stage = escalated ? "filter_escalated" : "filter";
            rec.presented = batch;
            rec.raw_text = raw;
            for (const auto& v : batch) {
                auto it = verdicts.find(v);
                if (it == verdicts.end() || it->second) rec.parsed.push_back(v);
            }
            transcript->push_back(std::move(rec));
        }
        return verdicts;
    };

    std::vector<std::string> kept;
    for (std::size_t start = 0; start < variants.size(); start += cfg.filter_batch) {
        const std::size_t end = std::min(start + cfg.filter_batch, variants.size());
        const std::vector<std::string> batch(variants.begin() + start, variants.begin() + end);

        auto verdicts = ask(batch, false, start);
        std::size_t yes = 0;
        for (const auto& v : batch) {
            auto it = verdicts.find(v);
            if (it == verdicts.end() || it->second) ++yes;
        }
        if (static_cast<double>(yes) / static_cast<double>(batch.size()) >
            cfg.filter_escalate_rate) {
            verdicts = ask(batch, true, start + 1);
        }
        for (const auto& v : batch) {
            auto it = verdicts.find(v);
            if (it == verdicts.end() || it->second) kept.push_back(v);
        }
    }
    return kept;
}

std::vector<std::vector<std::string>> partition_buckets(const std::vector<std::string>& variants,
                                                        const SelectionConfig& cfg,
                                                        std::uint64_t round_seed) {
    cfg.validate();
    if (variants.empty()) throw ConfigError("cannot partition an empty variant list");

    std::vector<std::string> shuffled = variants;
    rng::Pcg gen(rng::derive_seed(round_seed, {0xa1}));
    gen.shuffle(shuffled);

    const std::size_t n = shuffled.size();
    std::vector<std::size_t> sizes;
    if (n <= cfg.bucket_max) {
        sizes.push_back(n);
    } else {
        const std::size_t full = n / cfg.bucket_max;
        const std::size_t rem = n % cfg.bucket_max;
        const std::size_t keep_threshold = std::max(cfg.d_prime, (cfg.bucket_min + 1) / 2);
        if (rem == 0) {
            sizes.assign(full, cfg.bucket_max);
        } else if (rem >= keep_threshold) {
            sizes.assign(full, cfg.bucket_max);
            sizes.push_back(rem);
        } else {
            // remainder too small to stand alone: spread into one extra bucket
            const std::size_t k = full + 1;
            const std::size_t base = n / k;
            const std::size_t extra = n % k;
            for (std::size_t i = 0; i < k; ++i) sizes.push_back(base + (i < extra ? 1 : 0));
        }
    }

    std::vector<std::vector<std::string>> buckets;
    buckets.reserve(sizes.size());
    std::size_t offset = 0;
    for (std::size_t size : sizes) {
        buckets.emplace_back(shuffled.begin() + offset, shuffled.begin() + offset + size);
        offset += size;
    }
    return buckets;
}

BucketTally select_from_bucket(const std::vector<std::string>& bucket, const SelectionConfig& cfg,
                               llm::Provider& provider, bool final, std::uint64_t bucket_seed) {
    cfg.validate();
    if (bucket.size() < cfg.d_prime) {
        throw ConfigError("bucket of " + std::to_string(bucket.size()) +
                          " variants is smaller than d_prime " + std::to_string(cfg.d_prime));
    }
    const std::set<std::string> valid(bucket.begin(), bucket.end());
    const std::size_t iters = final ? cfg.final_iters : cfg.intermediate_iters;
    const double temperature = final ? cfg.temp_final : cfg.temp_intermediate;

    BucketTally tally;
    bool any_parsed = false;
    for (std::size_t iter = 0; iter < iters; ++iter) {
        std::vector<std::string> presented = bucket;
        rng::Pcg gen(rng::derive_seed(bucket_seed, {0xe5, iter}));
        gen.shuffle(presented);

        llm::PromptRequest req;
        req.system_text = kSystemText;
        req.user_text = bucket_prompt(presented, cfg, final);
        req.temperature = temperature;
        req.seed_hint = rng::derive_seed(bucket_seed, {0xf6, iter});
        req.tag = final ? llm::Tag::SelectFinal : llm::Tag::Select;
        const std::string raw = provider.complete(req).text;

        const auto names = parse_round(raw, valid, cfg.d_prime);
        RoundRecord rec;
        rec.stage = final ? "final" : "intermediate";
        rec.presented = std::move(presented);
        rec.raw_text = raw;
        rec.parsed = names;
        tally.rounds.push_back(std::move(rec));

        std::size_t rank = 1;
        for (const auto& name : names) {
            ++tally.votes[name];
            tally.rank_sums[name] += static_cast<double>(rank++);
            any_parsed = true;
        }
    }
    if (!any_parsed) {
        throw AllRoundsUnparsable("no valid variant name parsed in " + std::to_string(iters) +
                                  " rounds over a bucket of " + std::to_string(bucket.size()));
    }
    return tally;
}

SelectionResult hierarchical_select(const std::vector<std::string>& variants,
                                    const SelectionConfig& cfg, llm::Provider& provider) {
    cfg.validate();
    if (variants.size() < cfg.d_prime) {
        throw ConfigError("cannot select " + std::to_string(cfg.d_prime) + " variants from " +
                          std::to_string(variants.size()));
    }
    SelectionResult result;
    result.strategy = "hierarchical";
    if (variants.size() == cfg.d_prime) {
        result.selected = variants;
        return result;
    }

    std::vector<std::string> pool = variants;
    std::size_t level = 0;
    while (pool.size() > cfg.bucket_max) {
        const auto buckets = partition_buckets(pool, cfg, rng::derive_seed(cfg.seed, {0xa1, level}));
        std::vector<BucketTally> tallies(buckets.size());
        parallel_for(buckets.size(), cfg.workers, [&](std::size_t b) {
            tallies[b] = select_from_bucket(buckets[b], cfg, provider, false,
                                            rng::derive_seed(cfg.seed, {0xb2, level, b}));
        });

        std::vector<std::string> merged;
        for (auto& tally : tallies) {
            auto ranked = tally.ranked();
            if (ranked.size() > cfg.d_prime) ranked.resize(cfg.d_prime);
            merged.insert(merged.end(), ranked.begin(), ranked.end());
            for (auto& rec : tally.rounds) {
                rec.level = level;
                result.rounds.push_back(std::move(rec));
            }
        }
        pool = std::move(merged);
        ++level;
        if (pool.size() < cfg.d_prime) {
            throw AllRoundsUnparsable("merged pool shrank to " + std::to_string(pool.size()) +
                                      " variants, below d_prime");
        }
    }

    auto final_tally =
        select_from_bucket(pool, cfg, provider, true, rng::derive_seed(cfg.seed, {0xc3, level}));
    auto ranked = final_tally.ranked();
    if (ranked.size() < cfg.d_prime) {
        throw AllRoundsUnparsable("final rounds named only " + std::to_string(ranked.size()) +
                                  " distinct variants, need " + std::to_string(cfg.d_prime));
    }
    ranked.resize(cfg.d_prime);
    result.selected = std::move(ranked);
    result.votes = std::move(final_tally.votes);
    for (auto& rec : final_tally.rounds) {
        rec.level = level;
        result.rounds.push_back(std::move(rec));
    }
    return result;
}

SelectionResult sequential_forward_select(const std::vector<std::string>& variants,
                                          const SelectionConfig& cfg, llm::Provider& provider) {
    cfg.validate();
    if (variants.size() < cfg.d_prime) {
        throw ConfigError("cannot select " + std::to_string(cfg.d_prime) + " variants from " +
                          std::to_string(variants.size()));
    }
    SelectionResult result;
    result.strategy = "sequential";
    if (variants.size() == cfg.d_prime) {
        result.selected = variants;
        return result;
    }

    std::vector<std::string> remaining = variants;
    std::set<std::string> chosen;

    for (std::size_t pick = 1; pick <= cfg.d_prime; ++pick) {
        const std::size_t rounds = pick <= cfg.seq_single_until ? 1
                                   : pick <= cfg.seq_mid_until  ? cfg.seq_rounds_mid
                                                                : cfg.seq_rounds_late;
        std::map<std::string, std::size_t> pick_votes;
        std::size_t retries_left = cfg.seq_max_retries;
        const std::set<std::string> valid(remaining.begin(), remaining.end());

        for (std::size_t round = 0; round < rounds; ++round) {
            std::string feedback;
            for (std::size_t attempt = 0;; ++attempt) {
                std::vector<std::string> presented = remaining;
                rng::Pcg gen(rng::derive_seed(cfg.seed, {0xd4, pick, round, attempt}));
                gen.shuffle(presented);

                llm::PromptRequest req;
                req.system_text = kSystemText;
                req.user_text = sequential_prompt(presented, result.selected, cfg, feedback);
                req.temperature = cfg.temp_final;
                req.seed_hint = rng::derive_seed(cfg.seed, {0xd5, pick, round, attempt});
                req.tag = llm::Tag::SelectFinal;
                const std::string raw = provider.complete(req).text;

                const auto items = llm::split_answer_items(llm::answer_line(raw));
                const std::string candidate = items.empty() ? "" : items.front();
                const bool accepted = valid.count(candidate) > 0;

                RoundRecord rec;
                rec.stage = attempt == 0 ? "pick" : "retry";
                rec.level = pick;
                rec.presented = std::move(presented);
                rec.raw_text = raw;
                if (accepted) rec.parsed.push_back(candidate);
                result.rounds.push_back(std::move(rec));

                if (accepted) {
                    ++pick_votes[candidate];
                    ++result.votes[candidate];
                    break;
                }
                if (retries_left == 0) break;
                --retries_left;
                feedback = "Note: \"" + candidate +
                           "\" is not a valid choice; name one of the listed candidates that has "
                           "not been selected yet.";
            }
        }

        std::string winner;
        if (!pick_votes.empty()) {
            std::size_t best = 0;
            for (const auto& [name, count] : pick_votes) {
                if (count > best || (count == best && (winner.empty() || name < winner))) {
                    best = count;
                    winner = name;
                }
            }
        } else {
            // fall back on the strongest candidate seen in earlier rounds
            std::size_t best = 0;
            for (const auto& [name, count] : result.votes) {
                if (chosen.count(name)) continue;
                if (count > best || (count == best && (winner.empty() || name < winner))) {
                    best = count;
                    winner = name;
                }
            }
            if (winner.empty()) {
                throw SelectionStalled("pick " + std::to_string(pick) +
                                       " produced no valid candidate and no fallback exists");
            }
        }

        result.selected.push_back(winner);
        chosen.insert(winner);
        remaining.erase(std::find(remaining.begin(), remaining.end(), winner));
    }
    return result;
}

json selection_report(const SelectionResult& result) {
    json rounds = json::array();
    for (const auto& rec : result.rounds) {
        rounds.push_back({{"stage", rec.stage},
                          {"level", rec.level},
                          {"presented", rec.presented},
                          {"response", rec.raw_text},
                          {"parsed", rec.parsed}});
    }
    return json{{"strategy", result.strategy},
                {"selected", result.selected},
                {"votes", result.votes},
                {"rounds", std::move(rounds)}};
}

}  // namespace freeform::selection

#include "freeform/engineering.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <regex>
#include <set>
#include <sstream>

#include "freeform/errors.hpp"
#include "freeform/random.hpp"

namespace freeform::engineering {

using nlohmann::json;

void EngineeringConfig::validate() const {
    if (K < 1) throw ConfigError("K must be at least 1");
    if (max_examples < 1) throw ConfigError("max_examples must be at least 1");
    if (max_parse_attempts < 1) throw ConfigError("max_parse_attempts must be at least 1");
    if (temperature < 0.0) throw ConfigError("temperature must be non-negative");
}

std::string cmp_op_text(CmpOp op) {
    switch (op) {
        case CmpOp::Gt: return ">";
        case CmpOp::Ge: return ">=";
        case CmpOp::Lt: return "<";
        case CmpOp::Le: return "<=";
        case CmpOp::Eq: return "==";
        case CmpOp::Ne: return "!=";
    }
    return "?";
}

ExprPtr make_alias(std::size_t index) {
    auto node = std::make_shared<FeatureExpr>();
    node->kind = FeatureExpr::Kind::Alias;
    node->alias = index;
    return node;
}

ExprPtr make_const(double value) {
    auto node = std::make_shared<FeatureExpr>();
    node->kind = FeatureExpr::Kind::Const;
    node->value = value;
    return node;
}

ExprPtr make_binary(FeatureExpr::Kind kind, ExprPtr lhs, ExprPtr rhs) {
    auto node = std::make_shared<FeatureExpr>();
    node->kind = kind;
    node->lhs = std::move(lhs);
    node->rhs = std::move(rhs);
    return node;
}

ExprPtr make_cmp(CmpOp op, ExprPtr lhs, ExprPtr rhs) {
    auto node = std::make_shared<FeatureExpr>();
    node->kind = FeatureExpr::Kind::Cmp;
    node->op = op;
    node->lhs = std::move(lhs);
    node->rhs = std::move(rhs);
    return node;
}

bool expr_equal(const FeatureExpr& a, const FeatureExpr& b) {
    if (a.kind != b.kind) return false;
    switch (a.kind) {
        case FeatureExpr::Kind::Alias: return a.alias == b.alias;
        case FeatureExpr::Kind::Const: return a.value == b.value;
        case FeatureExpr::Kind::Cmp:
            if (a.op != b.op) return false;
            [[fallthrough]];
        default: return expr_equal(*a.lhs, *b.lhs) && expr_equal(*a.rhs, *b.rhs);
    }
}

bool is_boolean(const FeatureExpr& expr) {
    return expr.kind == FeatureExpr::Kind::Cmp || expr.kind == FeatureExpr::Kind::And ||
           expr.kind == FeatureExpr::Kind::Or;
}

std::size_t expr_depth(const FeatureExpr& expr) {
    if (!expr.lhs) return 1;
    return 1 + std::max(expr_depth(*expr.lhs), expr_depth(*expr.rhs));
}

// ---------------------------------------------------------------------------
// DSL lexer and parser

namespace {

enum class TokKind { Number, Alias, Plus, Minus, Star, LParen, RParen, And, Or, Cmp, End };

struct Token {
    TokKind kind;
    std::size_t offset;
    double number = 0.0;
    std::size_t alias = 0;
    CmpOp op = CmpOp::Gt;
};

std::vector<Token> lex(const std::string& line) {
    std::vector<Token> toks;
    std::size_t i = 0;
    const std::size_t n = line.size();
    while (i < n) {
        const char c = line[i];
        if (c == ' ' || c == '\t') {
            ++i;
            continue;
        }
        const std::size_t start = i;
        if (c == '+') {
            toks.push_back({TokKind::Plus, start});
            ++i;
        } else if (c == '-') {
            toks.push_back({TokKind::Minus, start});
            ++i;
        } else if (c == '*') {
            toks.push_back({TokKind::Star, start});
            ++i;
        } else if (c == '(') {
            toks.push_back({TokKind::LParen, start});
            ++i;
        } else if (c == ')') {
            toks.push_back({TokKind::RParen, start});
            ++i;
        } else if (c == '>' || c == '<') {
            CmpOp op;
            if (i + 1 < n && line[i + 1] == '=') {
                op = c == '>' ? CmpOp::Ge : CmpOp::Le;
                i += 2;
            } else {
                op = c == '>' ? CmpOp::Gt : CmpOp::Lt;
                ++i;
            }
            toks.push_back({TokKind::Cmp, start, 0.0, 0, op});
        } else if (c == '=') {
            if (i + 1 >= n || line[i + 1] != '=') throw ParseError(start, {"'=='"});
            toks.push_back({TokKind::Cmp, start, 0.0, 0, CmpOp::Eq});
            i += 2;
        } else if (c == '!') {
            if (i + 1 >= n || line[i + 1] != '=') throw ParseError(start, {"'!='"});
            toks.push_back({TokKind::Cmp, start, 0.0, 0, CmpOp::Ne});
            i += 2;
        } else if (std::isdigit(static_cast<unsigned char>(c))) {
            std::size_t end = i;
            while (end < n && std::isdigit(static_cast<unsigned char>(line[end]))) ++end;
            if (end < n && line[end] == '.' && end + 1 < n &&
                std::isdigit(static_cast<unsigned char>(line[end + 1]))) {
                ++end;
                while (end < n && std::isdigit(static_cast<unsigned char>(line[end]))) ++end;
            }
            if (end < n && (line[end] == 'e' || line[end] == 'E')) {
                std::size_t exp = end + 1;
                if (exp < n && (line[exp] == '+' || line[exp] == '-')) ++exp;
                if (exp < n && std::isdigit(static_cast<unsigned char>(line[exp]))) {
                    ++exp;
                    while (exp < n && std::isdigit(static_cast<unsigned char>(line[exp]))) ++exp;
                    end = exp;
                }
            }
            double value = 0.0;
            std::from_chars(line.data() + i, line.data() + end, value);
            toks.push_back({TokKind::Number, start, value});
            i = end;
        } else if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
            std::size_t end = i;
            while (end < n && (std::isalnum(static_cast<unsigned char>(line[end])) ||
                               line[end] == '_')) {
                ++end;
            }
            const std::string word = line.substr(i, end - i);
            if (word == "and") {
                toks.push_back({TokKind::And, start});
            } else if (word == "or") {
                toks.push_back({TokKind::Or, start});
            } else if (word.size() > 1 && word[0] == 'x' &&
                       std::all_of(word.begin() + 1, word.end(), [](unsigned char d) {
                           return std::isdigit(d) != 0;
                       })) {
                std::size_t index = 0;
                std::from_chars(word.data() + 1, word.data() + word.size(), index);
                toks.push_back({TokKind::Alias, start, 0.0, index});
            } else {
                throw ParseError(start, {"alias x<digits>", "'and'", "'or'"});
            }
            i = end;
        } else {
            throw ParseError(start, {"number", "alias", "operator", "'('"});
        }
    }
    toks.push_back({TokKind::End, n});
    return toks;
}

class ExprParser {
public:
    ExprParser(std::vector<Token> toks, std::size_t alias_count)
        : toks_(std::move(toks)), alias_count_(alias_count) {}

    ExprPtr parse() {
        ExprPtr expr = parse_or();
        if (peek().kind != TokKind::End) {
            throw ParseError(peek().offset, {"operator", "end of expression"});
        }
        if (expr_depth(*expr) > kMaxExprDepth) throw DepthExceeded(kMaxExprDepth);
        return expr;
    }

private:
    const Token& peek() const { return toks_[pos_]; }
    const Token& advance() { return toks_[pos_++]; }

    static void require_boolean(const ExprPtr& expr, std::size_t offset) {
        if (!is_boolean(*expr)) throw ParseError(offset, {"comparison"});
    }

    ExprPtr parse_or() {
        std::size_t lhs_offset = peek().offset;
        ExprPtr lhs = parse_and();
        while (peek().kind == TokKind::Or) {
            require_boolean(lhs, lhs_offset);
            advance();
            const std::size_t rhs_offset = peek().offset;
            ExprPtr rhs = parse_and();
            require_boolean(rhs, rhs_offset);
            lhs = make_binary(FeatureExpr::Kind::Or, std::move(lhs), std::move(rhs));
        }
        return lhs;
    }

    ExprPtr parse_and() {
        std::size_t lhs_offset = peek().offset;
        ExprPtr lhs = parse_cmp();
        while (peek().kind == TokKind::And) {
            require_boolean(lhs, lhs_offset);
            advance();
            const std::size_t rhs_offset = peek().offset;
            ExprPtr rhs = parse_cmp();
            require_boolean(rhs, rhs_offset);
            lhs = make_binary(FeatureExpr::Kind::And, std::move(lhs), std::move(rhs));
        }
        return lhs;
    }

    ExprPtr parse_cmp() {
        ExprPtr lhs = parse_arith();
        if (peek().kind == TokKind::Cmp) {
            const CmpOp op = advance().op;
            ExprPtr rhs = parse_arith();
            return make_cmp(op, std::move(lhs), std::move(rhs));
        }
        return lhs;
    }

    ExprPtr parse_arith() {
        ExprPtr lhs = parse_term();
        while (peek().kind == TokKind::Plus || peek().kind == TokKind::Minus) {
            const bool add = advance().kind == TokKind::Plus;
            ExprPtr rhs = parse_term();
            lhs = make_binary(add ? FeatureExpr::Kind::Add : FeatureExpr::Kind::Sub,
                              std::move(lhs), std::move(rhs));
        }
        return lhs;
    }

    ExprPtr parse_term() {
        ExprPtr lhs = parse_atom();
        while (peek().kind == TokKind::Star) {
            advance();
            ExprPtr rhs = parse_atom();
            lhs = make_binary(FeatureExpr::Kind::Mul, std::move(lhs), std::move(rhs));
        }
        return lhs;
    }

    ExprPtr parse_atom() {
        const Token& tok = peek();
        switch (tok.kind) {
            case TokKind::Number: return make_const(advance().number);
            case TokKind::Minus: {
                advance();
                if (peek().kind != TokKind::Number) {
                    throw ParseError(peek().offset, {"number"});
                }
                return make_const(-advance().number);
            }
            case TokKind::Alias: {
                const Token& t = advance();
                if (t.alias < 1 || t.alias > alias_count_) {
                    throw UnknownAlias(t.alias, alias_count_);
                }
                return make_alias(t.alias);
            }
            case TokKind::LParen: {
                if (++paren_depth_ > kMaxExprDepth) throw DepthExceeded(kMaxExprDepth);
                advance();
                ExprPtr inner = parse_or();
                if (peek().kind != TokKind::RParen) {
                    throw ParseError(peek().offset, {"')'"});
                }
                advance();
                --paren_depth_;
                return inner;
            }
            default: throw ParseError(tok.offset, {"number", "alias", "'('"});
        }
    }

    std::vector<Token> toks_;
    std::size_t pos_ = 0;
    std::size_t alias_count_;
    std::size_t paren_depth_ = 0;
};

std::string format_number(double v) {
    char buf[32];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

}  // namespace

ExprPtr compile_expression(const std::string& line, std::size_t alias_count) {
    if (line.empty()) throw ParseError(0, {"expression"});
    return ExprParser(lex(line), alias_count).parse();
}

std::string render_expression(const FeatureExpr& expr) {
    switch (expr.kind) {
        case FeatureExpr::Kind::Alias: return "x" + std::to_string(expr.alias);
        case FeatureExpr::Kind::Const: return format_number(expr.value);
        case FeatureExpr::Kind::Add:
            return "(" + render_expression(*expr.lhs) + " + " + render_expression(*expr.rhs) + ")";
        case FeatureExpr::Kind::Sub:
            return "(" + render_expression(*expr.lhs) + " - " + render_expression(*expr.rhs) + ")";
        case FeatureExpr::Kind::Mul:
            return "(" + render_expression(*expr.lhs) + " * " + render_expression(*expr.rhs) + ")";
        case FeatureExpr::Kind::Cmp:
            return "(" + render_expression(*expr.lhs) + " " + cmp_op_text(expr.op) + " " +
                   render_expression(*expr.rhs) + ")";
        case FeatureExpr::Kind::And:
            return "(" + render_expression(*expr.lhs) + " and " + render_expression(*expr.rhs) +
                   ")";
        case FeatureExpr::Kind::Or:
            return "(" + render_expression(*expr.lhs) + " or " + render_expression(*expr.rhs) +
                   ")";
    }
    return "";
}

double evaluate_expression(const FeatureExpr& expr, const std::vector<double>& row) {
    switch (expr.kind) {
        case FeatureExpr::Kind::Alias:
            if (expr.alias < 1 || expr.alias > row.size()) {
                throw UnknownAlias(expr.alias, row.size());
            }
            return row[expr.alias - 1];
        case FeatureExpr::Kind::Const: return expr.value;
        case FeatureExpr::Kind::Add:
            return evaluate_expression(*expr.lhs, row) + evaluate_expression(*expr.rhs, row);
        case FeatureExpr::Kind::Sub:
            return evaluate_expression(*expr.lhs, row) - evaluate_expression(*expr.rhs, row);
        case FeatureExpr::Kind::Mul:
            return evaluate_expression(*expr.lhs, row) * evaluate_expression(*expr.rhs, row);
        case FeatureExpr::Kind::Cmp: {
            const double l = evaluate_expression(*expr.lhs, row);
            const double r = evaluate_expression(*expr.rhs, row);
            bool hit = false;
            switch (expr.op) {
                case CmpOp::Gt: hit = l > r; break;
                case CmpOp::Ge: hit = l >= r; break;
                case CmpOp::Lt: hit = l < r; break;
                case CmpOp::Le: hit = l <= r; break;
                case CmpOp::Eq: hit = l == r; break;
                case CmpOp::Ne: hit = l != r; break;
            }
            return hit ? 1.0 : 0.0;
        }
        case FeatureExpr::Kind::And:
            return evaluate_expression(*expr.lhs, row) != 0.0 &&
                           evaluate_expression(*expr.rhs, row) != 0.0
                       ? 1.0
                       : 0.0;
        case FeatureExpr::Kind::Or:
            return evaluate_expression(*expr.lhs, row) != 0.0 ||
                           evaluate_expression(*expr.rhs, row) != 0.0
                       ? 1.0
                       : 0.0;
    }
    return 0.0;
}

// ---------------------------------------------------------------------------
// prompt assembly and feature-set generation

llm::PromptRequest build_engineering_prompt(const std::vector<std::string>& features,
                                            const std::vector<std::string>& examples,
                                            const EngineeringConfig& cfg) {
    cfg.validate();
    if (features.empty()) throw ConfigError("engineering prompt needs at least one feature");
    if (examples.size() > cfg.max_examples) {
        throw ConfigError("more serialized examples than max_examples allows");
    }

    std::ostringstream user;
    user << "You are constructing new features for a tabular prediction task. Propose "
            "engineered features that combine the available features in informative ways.\n\n";
    user << "Task: " << cfg.task_description << "\n\n";
    user << "Available features, by alias:\n";
    for (std::size_t i = 0; i < features.size(); ++i) {
        user << "x" << (i + 1) << " = " << features[i] << '\n';
    }
    user << '\n';
    if (examples.empty()) {
        user << "No examples available.\n\n";
    } else {
        user << "Example rows:\n```\n";
        for (const auto& ex : examples) user << ex << '\n';
        user << "```\n\n";
    }
    const std::string demo =
        features.size() >= 7 ? "x3 * x7" : "x1 * x" + std::to_string(features.size());
    user << "Build each new feature from the aliases using only: addition (+), subtraction (-), "
            "multiplication (*), comparisons (>, >=, <, <=, ==, !=), and combinations with "
            "\"and\" / \"or\". Comparisons and logical combinations yield 0 or 1. Values are "
            "minor-allele counts in {0, 1, 2}. A useful interaction feature for such a task "
            "could be: "
         << demo << ". List each proposed feature on its own line.\n\n";
    user << "Think step by step about which combinations carry signal for the task, then list "
            "your proposed features.\n";

    llm::PromptRequest req;
    req.system_text = "You are an expert at feature engineering for genomic prediction tasks.";
    req.user_text = user.str();
    req.temperature = cfg.temperature;
    req.tag = llm::Tag::Engineer;
    return req;
}

namespace {

std::string trim_copy(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

}  // namespace

std::vector<std::string> extract_features(const std::string& free_text, llm::Provider& provider,
                                          std::string* raw_response) {
    if (trim_copy(free_text).empty()) throw NothingExtracted();

    llm::PromptRequest req;
    req.system_text = "You extract structured lists from text.";
    req.user_text =
        "Below is a model response proposing engineered features. Extract every proposed "
        "feature formula, one per line, with no numbering and no commentary. Respond with only "
        "the formulas.\n```\n" +
        free_text + "\n```";
    req.temperature = 0.0;
    req.tag = llm::Tag::Parse;
    const std::string resp = provider.complete(req).text;
    if (raw_response) *raw_response = resp;

    static const std::regex alias_re(R"(x\d+)");
    std::vector<std::string> lines;
    std::set<std::string> seen;
    std::istringstream in(resp);
    std::string line;
    while (std::getline(in, line)) {
        const std::string t = trim_copy(line);
        if (t.empty() || t == "```") continue;
        if (!std::regex_search(t, alias_re)) continue;
        if (seen.insert(t).second) lines.push_back(t);
    }
    if (lines.empty()) throw NothingExtracted();
    return lines;
}

FeatureSet generate_feature_set(const dataset::GenotypeDataset& train,
                                const EngineeringConfig& cfg, llm::Provider& provider,
                                std::size_t k_index) {
    cfg.validate();
    if (train.n_samples() == 0) throw ConfigError("cannot engineer features without training rows");
    const std::size_t d = train.n_variants();
    const std::uint64_t kseed = rng::derive_seed(cfg.seed, {0xeb, k_index});

    FeatureSet fs;
    const std::size_t bag_size = std::min(train.n_samples(), cfg.max_examples);
    auto sample = dataset::sample_few_shot(train, bag_size, kseed);
    rng::Pcg order(rng::derive_seed(kseed, {0x0d}));
    order.shuffle(sample.indices);
    fs.example_indices = sample.indices;

    std::vector<std::string> serialized;
    serialized.reserve(sample.indices.size());
    for (std::size_t row : sample.indices) {
        serialized.push_back(
            dataset::serialize_example(train, row, train.variant_names, cfg.serialization, true));
    }

    llm::PromptRequest gen_req = build_engineering_prompt(train.variant_names, serialized, cfg);
    gen_req.seed_hint = rng::derive_seed(kseed, {1});
    const std::string gen_text = provider.complete(gen_req).text;
    fs.source_transcript.push_back(gen_text);

    std::vector<std::string> lines;
    try {
        std::string parse_raw;
        lines = extract_features(gen_text, provider, &parse_raw);
        fs.source_transcript.push_back(parse_raw);
    } catch (const NothingExtracted&) {
        return fs;
    }

    const std::set<std::string> taken(train.variant_names.begin(), train.variant_names.end());
    for (std::string line : lines) {
        ExprPtr expr;
        for (std::size_t attempt = 1; attempt <= cfg.max_parse_attempts; ++attempt) {
            try {
                expr = compile_expression(line, d);
                break;
            } catch (const Error& e) {
                if (attempt == cfg.max_parse_attempts) break;
                llm::PromptRequest fix;
                fix.system_text = "You repair formulas to match a strict grammar.";
                fix.user_text = "A proposed feature formula failed to compile.\nFormula: " + line +
                                "\nError: " + e.what() +
                                "\nRules: use only aliases x1..x" + std::to_string(d) +
                                ", numbers, the operators + - *, comparisons (> >= < <= == !=), "
                                "\"and\"/\"or\", and parentheses.\nRespond with only the "
                                "corrected formula.";
                fix.temperature = 0.0;
                fix.tag = llm::Tag::FunctionWrite;
                const std::string fixed = provider.complete(fix).text;
                fs.source_transcript.push_back(fixed);
                line = trim_copy(llm::answer_line(fixed));
                if (line.empty()) break;
            }
        }
        if (!expr) continue;
        std::string name = "f" + std::to_string(fs.expressions.size() + 1);
        while (taken.count(name)) name += "_";
        fs.expressions.push_back({std::move(name), std::move(expr)});
    }
    return fs;
}

dataset::DataMatrix transform_matrix(const dataset::DataMatrix& base, const FeatureSet& fs) {
    dataset::DataMatrix out = base;
    const std::set<std::string> taken(base.column_names.begin(), base.column_names.end());
    for (const auto& feature : fs.expressions) {
        if (taken.count(feature.name)) {
            throw ConfigError("engineered feature name collides with a column: " + feature.name);
        }
        out.column_names.push_back(feature.name);
    }
    for (auto& row : out.rows) {
        const std::vector<double> alias_values(row.begin(), row.end());
        for (const auto& feature : fs.expressions) {
            row.push_back(evaluate_expression(*feature.expr, alias_values));
        }
    }
    return out;
}

dataset::DataMatrix transform_dataset(const dataset::GenotypeDataset& ds, const FeatureSet& fs) {
    return transform_matrix(dataset::to_data_matrix(ds), fs);
}

json feature_set_report(const FeatureSet& fs) {
    json features = json::array();
    for (const auto& f : fs.expressions) {
        features.push_back({{"name", f.name}, {"expression", render_expression(*f.expr)}});
    }
    return json{{"features", std::move(features)},
                {"example_indices", fs.example_indices},
                {"transcripts", fs.source_transcript}};
}

FeatureSet feature_set_from_report(const json& j, std::size_t alias_count) {
    FeatureSet fs;
    for (const auto& f : j.at("features")) {
        fs.expressions.push_back(
            {f.at("name").get<std::string>(),
             compile_expression(f.at("expression").get<std::string>(), alias_count)});
    }
    if (j.contains("example_indices")) {
        fs.example_indices = j["example_indices"].get<std::vector<std::size_t>>();
    }
    if (j.contains("transcripts")) {
        fs.source_transcript = j["transcripts"].get<std::vector<std::string>>();
    }
    return fs;
}

}  // namespace freeform::engineering

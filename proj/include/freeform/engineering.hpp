#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "freeform/dataset.hpp"
#include "freeform/llm.hpp"

namespace freeform::engineering {

struct EngineeringConfig {
    std::size_t K = 20;
    std::size_t max_examples = 16;
    double temperature = 1.0;
    /// Compile attempts per feature line (the first parse plus rewrites);
    /// a line still failing after the last attempt is dropped.
    std::size_t max_parse_attempts = 3;
    dataset::SerializationTemplate serialization;
    std::string task_description;
    std::uint64_t seed = 0;
    /// Feature-set generations may run on this many threads.
    std::size_t workers = 1;

    void validate() const;  // throws ConfigError
};

enum class CmpOp { Gt, Ge, Lt, Le, Eq, Ne };

std::string cmp_op_text(CmpOp op);

/**
 * Expression over the selected variants, referenced only through their
 * aliases x1..x{d'}. Comparison and logical nodes evaluate to 0.0 or 1.0;
 * arithmetic nodes to reals. Shared subtrees are allowed; nodes are
 * immutable.
 */
struct FeatureExpr {
    enum class Kind { Alias, Const, Add, Sub, Mul, Cmp, And, Or };

    Kind kind;
    std::size_t alias = 0;  // Kind::Alias, 1-based
    double value = 0.0;     // Kind::Const
    CmpOp op = CmpOp::Gt;   // Kind::Cmp
    std::shared_ptr<const FeatureExpr> lhs, rhs;
};

using ExprPtr = std::shared_ptr<const FeatureExpr>;

ExprPtr make_alias(std::size_t index);
ExprPtr make_const(double value);
ExprPtr make_binary(FeatureExpr::Kind kind, ExprPtr lhs, ExprPtr rhs);
ExprPtr make_cmp(CmpOp op, ExprPtr lhs, ExprPtr rhs);

/// Structural equality.
bool expr_equal(const FeatureExpr& a, const FeatureExpr& b);

/// True for nodes guaranteed to evaluate to 0.0 or 1.0.
bool is_boolean(const FeatureExpr& expr);

std::size_t expr_depth(const FeatureExpr& expr);

/// Maximum tree depth accepted by the compiler.
inline constexpr std::size_t kMaxExprDepth = 12;

/**
 * Compiles one feature line against the grammar
 *
 *   expr := and_term ("or" and_term)*
 *   and_term := cmp ("and" cmp)*
 *   cmp := arith (op arith)?          op in { > >= < <= == != }
 *   arith := term (("+"|"-") term)*
 *   term := atom ("*" atom)*
 *   atom := number | x<digits> | "(" expr ")"
 *
 * Operands of "and"/"or" must be comparison-valued. Throws ParseError with
 * the byte offset and expected-token set, UnknownAlias for aliases outside
 * [1, alias_count], DepthExceeded beyond kMaxExprDepth.
 */
ExprPtr compile_expression(const std::string& line, std::size_t alias_count);

/// Canonical text form: compound nodes fully parenthesized, so that
/// compile_expression(render_expression(e)) reproduces e exactly.
std::string render_expression(const FeatureExpr& expr);

/// Evaluates over one row of alias values (row[i] is the value of x{i+1}).
double evaluate_expression(const FeatureExpr& expr, const std::vector<double>& row);

/// Engineered feature: a generated name and its compiled expression.
struct EngineeredFeature {
    std::string name;
    ExprPtr expr;
};

/// One ensemble member's feature set plus the full provenance of how it was
/// produced (example bag, raw generation/parse/rewrite texts).
struct FeatureSet {
    std::vector<EngineeredFeature> expressions;
    std::vector<std::size_t> example_indices;
    std::vector<std::string> source_transcript;
};

/**
 * Assembles the generation prompt from its six sections: instructions, task
 * description, alias list, serialized examples, the operation menu with a
 * worked demonstration, and the step-by-step directive.
 */
llm::PromptRequest build_engineering_prompt(const std::vector<std::string>& features,
                                            const std::vector<std::string>& examples,
                                            const EngineeringConfig& cfg);

/// Routine-tier pass that reduces a free-flow generation to one candidate
/// feature line each, de-duplicated, order preserved. Throws NothingExtracted.
/// `raw_response` (optional) receives the unprocessed extraction reply.
std::vector<std::string> extract_features(const std::string& free_text, llm::Provider& provider,
                                          std::string* raw_response = nullptr);

/**
 * One ensemble member: bags min(N, max_examples) training examples, renders
 * them in shuffled order, runs one free-flow generation, extracts candidate
 * lines, and compiles each with up to max_parse_attempts rewrite round trips
 * before dropping it. Never throws on bad generations; the worst case is an
 * empty FeatureSet.
 */
FeatureSet generate_feature_set(const dataset::GenotypeDataset& train,
                                const EngineeringConfig& cfg, llm::Provider& provider,
                                std::size_t k_index);

/// Appends the engineered columns to a dataset restricted to the selected
/// variants (columns in alias order).
dataset::DataMatrix transform_dataset(const dataset::GenotypeDataset& ds, const FeatureSet& fs);
dataset::DataMatrix transform_matrix(const dataset::DataMatrix& base, const FeatureSet& fs);

/// JSON form that can be re-applied to new data without any LLM call.
nlohmann::json feature_set_report(const FeatureSet& fs);
FeatureSet feature_set_from_report(const nlohmann::json& j, std::size_t alias_count);

}  // namespace freeform::engineering

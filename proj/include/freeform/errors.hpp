#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace freeform {

/// Base class for all domain errors raised by this library.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// ---- dataset ----

class MalformedCell : public Error {
public:
    MalformedCell(std::size_t row, std::size_t column, const std::string& cell)
        : Error("malformed cell at row " + std::to_string(row) + ", column " +
                std::to_string(column) + ": \"" + cell + "\" (expected 0, 1 or 2)"),
          row(row),
          column(column) {}
    std::size_t row;
    std::size_t column;
};

class MissingLabelColumn : public Error {
public:
    explicit MissingLabelColumn(const std::string& name)
        : Error("label column not found: \"" + name + "\"") {}
};

class DuplicateVariantName : public Error {
public:
    explicit DuplicateVariantName(const std::string& name)
        : Error("duplicate variant name: \"" + name + "\"") {}
};

class TooFewShots : public Error {
public:
    TooFewShots(std::size_t requested, std::size_t classes)
        : Error("requested " + std::to_string(requested) +
                " shots but the dataset has " + std::to_string(classes) +
                " classes; need at least one shot per class") {}
};

class UnknownVariant : public Error {
public:
    explicit UnknownVariant(const std::string& name)
        : Error("unknown variant: \"" + name + "\"") {}
};

class DegenerateSplit : public Error {
public:
    explicit DegenerateSplit(const std::string& what) : Error(what) {}
};

// ---- llm ----

class Transport : public Error {
public:
    explicit Transport(const std::string& what) : Error(what) {}
};

class RateLimited : public Error {
public:
    explicit RateLimited(const std::string& what) : Error(what) {}
};

class ProviderRejected : public Error {
public:
    explicit ProviderRejected(const std::string& what) : Error(what) {}
};

class CacheMiss : public Error {
public:
    explicit CacheMiss(const std::string& what) : Error(what) {}
};

class CorruptCache : public Error {
public:
    explicit CorruptCache(const std::string& what) : Error(what) {}
};

// ---- selection ----

class UnparsableVerdict : public Error {
public:
    explicit UnparsableVerdict(const std::string& what) : Error(what) {}
};

class AllRoundsUnparsable : public Error {
public:
    explicit AllRoundsUnparsable(const std::string& what) : Error(what) {}
};

class SelectionStalled : public Error {
public:
    explicit SelectionStalled(const std::string& what) : Error(what) {}
};

// ---- engineering ----

class NothingExtracted : public Error {
public:
    NothingExtracted() : Error("no feature candidates could be extracted") {}
};

/// Raised by the expression compiler; carries the byte offset of the failure
/// and the set of tokens that would have been accepted there.
class ParseError : public Error {
public:
    ParseError(std::size_t offset, std::vector<std::string> expected)
        : Error(format(offset, expected)), offset(offset), expected(std::move(expected)) {}
    std::size_t offset;
    std::vector<std::string> expected;

private:
    static std::string format(std::size_t offset, const std::vector<std::string>& expected) {
        std::string msg = "parse error at offset " + std::to_string(offset);
        if (!expected.empty()) {
            msg += "; expected ";
            for (std::size_t i = 0; i < expected.size(); ++i) {
                if (i > 0) msg += " or ";
                msg += expected[i];
            }
        }
        return msg;
    }
};

class UnknownAlias : public Error {
public:
    UnknownAlias(std::size_t index, std::size_t alias_count)
        : Error("alias x" + std::to_string(index) + " out of range [1, " +
                std::to_string(alias_count) + "]") {}
};

class DepthExceeded : public Error {
public:
    explicit DepthExceeded(std::size_t limit)
        : Error("expression tree exceeds maximum depth " + std::to_string(limit)) {}
};

// ---- models / baselines ----

class SingleClassTrainingSet : public Error {
public:
    SingleClassTrainingSet() : Error("training data contains fewer than two classes") {}
};

class DegenerateLabels : public Error {
public:
    explicit DegenerateLabels(const std::string& what) : Error(what) {}
};

class ZeroVarianceMatrix : public Error {
public:
    ZeroVarianceMatrix() : Error("every column has zero variance; no principal axis exists") {}
};

// ---- harness ----

class NothingParsed : public Error {
public:
    explicit NothingParsed(const std::string& what) : Error(what) {}
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& what) : Error(what) {}
};

}  // namespace freeform

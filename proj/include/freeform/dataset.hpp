#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace freeform::dataset {

/**
 * Immutable tabular genotype data: an N x d table of minor-allele counts in
 * {0, 1, 2}, one row per sample, one column per variant, plus a categorical
 * phenotype label per row. Class order is first-appearance order in the
 * source and fixes the ordering of every probability vector downstream.
 */
struct GenotypeDataset {
    std::vector<std::string> sample_ids;
    std::vector<std::string> variant_names;
    std::vector<std::vector<std::uint8_t>> values;  // N x d
    std::vector<std::string> labels;                // length N
    std::vector<std::string> class_set;             // ordered distinct labels

    std::size_t n_samples() const { return values.size(); }
    std::size_t n_variants() const { return variant_names.size(); }

    /// Index of a label within class_set; throws if the label is unknown.
    std::size_t class_index(const std::string& label) const;
    /// Labels as class indices, in row order.
    std::vector<int> label_indices() const;
    /// Per-class row indices, ordered by class_set.
    std::vector<std::vector<std::size_t>> rows_by_class() const;

    bool operator==(const GenotypeDataset&) const = default;
};

/// How a row is rendered into text for an LLM prompt.
enum class SerializationStyle { Simple, Genotype };

struct SerializationTemplate {
    SerializationStyle style = SerializationStyle::Simple;
    /// Optional variant -> gene-symbol map; when present, variant names render
    /// as "<name> (gene: <symbol>)".
    std::map<std::string, std::string> gene_map;
};

/// A deterministic draw of training rows: one row per class first, remainder
/// uniform without replacement.
struct FewShotSample {
    std::vector<std::size_t> indices;
    std::uint64_t seed = 0;
};

/// One train/validation split. `train` is the complement of `validation`.
struct CvFold {
    std::vector<std::size_t> train;
    std::vector<std::size_t> validation;
};

struct CvFolds {
    std::vector<CvFold> folds;
    std::size_t k_used = 0;
    std::vector<std::string> warnings;  // non-empty iff k was lowered
};

/**
 * Numeric training table handed to classifiers: genotype (and engineered)
 * columns as doubles plus labels as class indices.
 */
struct DataMatrix {
    std::vector<std::string> column_names;
    std::vector<std::vector<double>> rows;  // N x m
    std::vector<int> labels;                // class indices, length N
    std::vector<std::string> class_order;

    std::size_t n_rows() const { return rows.size(); }
    std::size_t n_cols() const { return column_names.size(); }
};

/**
 * Loads a genotype CSV: header row, first column sample id, genotype columns
 * as unquoted integers in {0,1,2}, label column named by `label_column`
 * (defaults to the last column when empty).
 *
 * Throws MalformedCell, MissingLabelColumn, DuplicateVariantName.
 */
GenotypeDataset load_dataset(const std::filesystem::path& path, const std::string& label_column = "");

/// Inverse of load_dataset; writes the same CSV layout (label column last).
void write_dataset(const GenotypeDataset& ds, const std::filesystem::path& path,
                   const std::string& label_column = "label");

/// Loads a two-column "variant,gene" CSV into a gene map.
std::map<std::string, std::string> load_gene_map(const std::filesystem::path& path);

/// Dataset restricted to the named variants, in the given order.
/// Throws UnknownVariant.
GenotypeDataset restrict_columns(const GenotypeDataset& ds, const std::vector<std::string>& variants);

/// Rows `indices` of the dataset, in the given order. The parent's class_set
/// is kept verbatim so probability vectors stay aligned across subsets.
GenotypeDataset subset_rows(const GenotypeDataset& ds, const std::vector<std::size_t>& indices);

/// Whole dataset as a numeric matrix (columns in dataset order).
DataMatrix to_data_matrix(const GenotypeDataset& ds);

/// Rows `indices` of the dataset as a numeric matrix.
DataMatrix to_data_matrix(const GenotypeDataset& ds, const std::vector<std::size_t>& indices);

/**
 * Draws n rows: first one uniformly chosen row per class (class_set order),
 * then the remainder uniformly without replacement. Deterministic per seed.
 * Throws TooFewShots when n < |class_set|.
 */
FewShotSample sample_few_shot(const GenotypeDataset& ds, std::size_t n, std::uint64_t seed);

/**
 * Renders one row as text. Simple style: "<s1> is <x1>. ... Answer: <y>";
 * Genotype style: "The <s1> variant of the person has <x1> minor alleles. ...".
 * The label suffix is present iff include_label. Throws UnknownVariant.
 */
std::string serialize_example(const GenotypeDataset& ds, std::size_t row,
                              const std::vector<std::string>& features,
                              const SerializationTemplate& tmpl, bool include_label);

/**
 * Stratified k-fold splits. When a class has fewer than k members, k is
 * lowered to the largest feasible value and a warning is attached; when even
 * k=2 cannot put every class on every training side, throws DegenerateSplit.
 * Deterministic per seed; folds partition the index set.
 */
CvFolds stratified_cv_folds(const GenotypeDataset& ds, std::size_t k, std::uint64_t seed);

/// Same splitter on bare labels; used by modules that work on DataMatrix.
CvFolds stratified_cv_folds(const std::vector<int>& labels, std::size_t n_classes, std::size_t k,
                            std::uint64_t seed);

}  // namespace freeform::dataset

#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "freeform/dataset.hpp"
#include "freeform/engineering.hpp"

namespace freeform::models {

/**
 * Multinomial logistic classifier. `weights` is C x (m+1); the last entry of
 * each row is the intercept, which the L2 penalty does not touch (so the
 * infinite-regularization limit predicts class priors).
 */
struct LogisticModel {
    std::vector<std::vector<double>> weights;
    std::vector<std::string> class_order;
    double l2_strength = 0.0;
    bool converged = false;
    std::size_t iterations = 0;

    std::vector<double> predict_proba(const std::vector<double>& x) const;
};

struct TreeNode {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0.0;
    std::size_t left = 0;
    std::size_t right = 0;
    std::vector<double> class_counts;  // populated on leaves
};

struct DecisionTree {
    std::vector<TreeNode> nodes;  // nodes[0] is the root

    const TreeNode& leaf_for(const std::vector<double>& x) const;
};

/**
 * Random forest with Gini splits, per-tree bootstrap samples, and per-split
 * feature subsampling of ceil(sqrt(m)) candidates. Subsampling and split
 * tie-breaks are keyed on column names, so the fitted behaviour is invariant
 * under column permutation.
 */
struct ForestModel {
    std::vector<DecisionTree> trees;
    std::vector<std::string> class_order;
    std::vector<std::string> column_names;
    /// Per-column importance: impurity decrease weighted by node share,
    /// summed over all splits, normalized to sum to 1.
    std::vector<double> importance;

    std::vector<double> predict_proba(const std::vector<double>& x) const;
};

using AnyModel = std::variant<LogisticModel, ForestModel>;

std::vector<double> predict_proba(const AnyModel& model, const std::vector<double>& x);

/// One ensemble member: the feature set it was trained under plus the model.
struct EnsembleMember {
    engineering::FeatureSet features;
    AnyModel model;
};

struct EnsembleModel {
    std::vector<EnsembleMember> members;
    std::vector<std::string> class_order;
};

/// Mean cross-entropy plus (l2/2)||W||^2 over non-intercept weights.
double logreg_loss(const dataset::DataMatrix& D, const std::vector<std::vector<double>>& weights,
                   double l2);

/// Analytic gradient of logreg_loss, same shape as the weights.
std::vector<std::vector<double>> logreg_gradient(const dataset::DataMatrix& D,
                                                 const std::vector<std::vector<double>>& weights,
                                                 double l2);

inline constexpr std::size_t kLogregMaxIter = 500;
inline constexpr double kLogregTol = 1e-6;

/**
 * Full-batch gradient descent with backtracking line search; the loss never
 * increases across accepted steps. `converged` records whether the gradient
 * max-norm fell below `tol` within `max_iter` iterations.
 * Throws SingleClassTrainingSet.
 */
LogisticModel train_logreg(const dataset::DataMatrix& D, double l2,
                           std::size_t max_iter = kLogregMaxIter, double tol = kLogregTol);

/// Weighted Gini impurity of a two-way split, from per-class child counts.
double weighted_gini(const std::vector<double>& left_counts,
                     const std::vector<double>& right_counts);

/// Deterministic per seed. `max_depth` 0 means unbounded.
/// Throws SingleClassTrainingSet.
ForestModel train_forest(const dataset::DataMatrix& D, std::size_t n_trees, std::size_t max_depth,
                         std::uint64_t seed);

/**
 * Averages the members' class-probability vectors over the raw selected-
 * variant row (each member applies its own feature set first), then takes
 * the argmax, ties toward the lower class index.
 */
std::pair<std::vector<double>, std::size_t> ensemble_predict(const EnsembleModel& ens,
                                                             const std::vector<double>& x);

enum class Averaging { Macro, Micro };

/// Binary ranking quality of `scores` against 0/1 labels: the Mann-Whitney
/// statistic with half-credit for ties. Throws DegenerateLabels.
double binary_auroc(const std::vector<double>& scores, const std::vector<int>& labels);

/**
 * Multiclass AUROC over per-sample class-score vectors: one-vs-rest per
 * class, macro-averaged over classes with at least one positive (or pooled
 * into a single binary problem with Averaging::Micro).
 * Throws DegenerateLabels when nothing is evaluable.
 */
double auroc(const std::vector<std::vector<double>>& scores, const std::vector<int>& labels,
             std::size_t n_classes, Averaging averaging = Averaging::Macro);

enum class ModelFamily { Logistic, Forest };

/// One grid point; `l2` applies to Logistic, `max_depth`/`n_trees` to Forest.
struct HyperParams {
    double l2 = 1.0;
    std::size_t max_depth = 0;
    std::size_t n_trees = 100;
};

inline const std::vector<HyperParams> kDefaultLogisticGrid = {
    {0.01, 0, 0}, {0.1, 0, 0}, {1.0, 0, 0}, {10.0, 0, 0}};
inline const std::vector<HyperParams> kDefaultForestGrid = {
    {0.0, 3, 100}, {0.0, 5, 100}, {0.0, 0, 100}};

struct GridSearchInfo {
    std::vector<double> mean_scores;  // aligned with the grid
    std::vector<std::string> warnings;
};

/**
 * Mean validation AUROC over stratified k-fold splits, one pass per grid
 * point. Ties prefer stronger regularization (larger l2) and shallower trees
 * (unbounded depth ranks deepest). Propagates DegenerateSplit.
 */
HyperParams grid_search_cv(const dataset::DataMatrix& D, ModelFamily family,
                           const std::vector<HyperParams>& grid, std::size_t k,
                           std::uint64_t seed, GridSearchInfo* info = nullptr);

/// Versioned JSON envelopes.
nlohmann::json model_to_json(const AnyModel& model);
AnyModel model_from_json(const nlohmann::json& j);
nlohmann::json ensemble_to_json(const EnsembleModel& ens);
EnsembleModel ensemble_from_json(const nlohmann::json& j, std::size_t alias_count);

}  // namespace freeform::models

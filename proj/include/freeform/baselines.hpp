#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "freeform/dataset.hpp"

namespace freeform::baselines {

enum class Method { Lasso, PCA, Gini };

std::string method_name(Method method);

struct BaselineSelection {
    Method method = Method::Lasso;
    std::vector<std::string> selected;     // d' names, descending score
    std::map<std::string, double> scores;  // every input variant
    /// Lasso only: the best path point had all-zero coefficients and the
    /// ranking fell back to |correlation with label|.
    bool fallback_used = false;
};

/// Lasso shrinkage step: sign(w) * max(|w| - threshold, 0).
double soft_threshold(double w, double threshold);

/**
 * L1-regularized multinomial logistic regression by proximal gradient over a
 * 30-point geometric lambda path (lambda_max down to lambda_max * 1e-3, warm
 * started). The path point with the best cross-validated AUROC supplies the
 * coefficients; variants rank by maximum |coefficient| across classes. When
 * stratification is infeasible the path point is chosen on training AUROC,
 * and when every coefficient is zero the correlation fallback kicks in.
 * Throws SingleClassTrainingSet.
 */
BaselineSelection lasso_select(const dataset::DataMatrix& D, std::size_t d_prime,
                               std::uint64_t seed);

/**
 * Ranks variants by |loading| on the first principal component of the
 * column-centered matrix, found by power iteration from the uniform unit
 * vector to 1e-8 tolerance. Throws ZeroVarianceMatrix.
 */
BaselineSelection pca_select(const dataset::DataMatrix& D, std::size_t d_prime);

/// Ranks variants by normalized forest impurity decrease.
/// Throws SingleClassTrainingSet.
BaselineSelection gini_select(const dataset::DataMatrix& D, std::size_t d_prime,
                              std::uint64_t seed);

/// Report in the same shape as the LLM selection report.
nlohmann::json baseline_report(const BaselineSelection& sel);

}  // namespace freeform::baselines

#include "freeform/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "freeform/errors.hpp"
#include "freeform/models.hpp"
#include "freeform/random.hpp"

namespace freeform::baselines {

using dataset::DataMatrix;
using nlohmann::json;

std::string method_name(Method method) {
    switch (method) {
        case Method::Lasso: return "lasso";
        case Method::PCA: return "pca";
        case Method::Gini: return "gini";
    }
    return "unknown";
}

double soft_threshold(double w, double threshold) {
    if (w > threshold) return w - threshold;
    if (w < -threshold) return w + threshold;
    return 0.0;
}

namespace {

/// Columns reordered by name so every computation sees a canonical layout;
/// rankings keyed by name are then invariant under input column permutation.
DataMatrix sort_columns_by_name(const DataMatrix& D) {
    std::vector<std::size_t> order(D.n_cols());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return D.column_names[a] < D.column_names[b];
    });
    DataMatrix out;
    out.class_order = D.class_order;
    out.labels = D.labels;
    out.column_names.reserve(order.size());
    for (std::size_t j : order) out.column_names.push_back(D.column_names[j]);
    out.rows.reserve(D.n_rows());
    for (const auto& row : D.rows) {
        std::vector<double> r;
        r.reserve(order.size());
        for (std::size_t j : order) r.push_back(row[j]);
        out.rows.push_back(std::move(r));
    }
    return out;
}

/// Top d' names by (score desc, name asc); scores are column-aligned.
BaselineSelection rank_selection(Method method, const DataMatrix& D,
                                 const std::vector<double>& column_scores, std::size_t d_prime) {
    if (d_prime > D.n_cols()) {
        throw ConfigError("cannot select " + std::to_string(d_prime) + " variants from " +
                          std::to_string(D.n_cols()));
    }
    BaselineSelection sel;
    sel.method = method;
    std::vector<std::size_t> order(D.n_cols());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (column_scores[a] != column_scores[b]) return column_scores[a] > column_scores[b];
        return D.column_names[a] < D.column_names[b];
    });
    for (std::size_t j = 0; j < D.n_cols(); ++j) {
        sel.scores[D.column_names[j]] = column_scores[j];
    }
    for (std::size_t i = 0; i < d_prime; ++i) sel.selected.push_back(D.column_names[order[i]]);
    return sel;
}

std::vector<double> label_correlation_scores(const DataMatrix& D) {
    const std::size_t n = D.n_rows();
    const std::size_t m = D.n_cols();
    const std::size_t C = D.class_order.size();
    std::vector<double> scores(m, 0.0);
    for (std::size_t c = 0; c < C; ++c) {
        std::vector<double> y(n);
        for (std::size_t i = 0; i < n; ++i) y[i] = D.labels[i] == static_cast<int>(c) ? 1.0 : 0.0;
        const double my = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(n);
        double vy = 0.0;
        for (double v : y) vy += (v - my) * (v - my);
        if (vy == 0.0) continue;
        for (std::size_t j = 0; j < m; ++j) {
            double mx = 0.0;
            for (std::size_t i = 0; i < n; ++i) mx += D.rows[i][j];
            mx /= static_cast<double>(n);
            double vx = 0.0, cov = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double dx = D.rows[i][j] - mx;
                vx += dx * dx;
                cov += dx * (y[i] - my);
            }
            if (vx == 0.0) continue;
            scores[j] = std::max(scores[j], std::abs(cov / std::sqrt(vx * vy)));
        }
    }
    return scores;
}

using Weights = std::vector<std::vector<double>>;

/// One proximal-gradient (ISTA) fit of the L1 multinomial model at a fixed
/// lambda, warm started from `W`. The intercept column is not penalized.
void fit_lasso_at(const DataMatrix& D, double lambda, Weights& W, std::size_t max_iter,
                  double tol) {
    const std::size_t C = W.size();
    const std::size_t m = D.n_cols();
    double step = 1.0;
    double loss = models::logreg_loss(D, W, 0.0);
    for (std::size_t iter = 0; iter < max_iter; ++iter) {
        const auto grad = models::logreg_gradient(D, W, 0.0);
        Weights trial(C, std::vector<double>(m + 1));
        double max_change = 0.0;
        while (true) {
            max_change = 0.0;
            for (std::size_t c = 0; c < C; ++c) {
                for (std::size_t j = 0; j < m; ++j) {
                    trial[c][j] = soft_threshold(W[c][j] - step * grad[c][j], step * lambda);
                    max_change = std::max(max_change, std::abs(trial[c][j] - W[c][j]));
                }
                trial[c][m] = W[c][m] - step * grad[c][m];
                max_change = std::max(max_change, std::abs(trial[c][m] - W[c][m]));
            }
            const double trial_loss = models::logreg_loss(D, trial, 0.0);
            double linear = 0.0, quad = 0.0;
            for (std::size_t c = 0; c < C; ++c) {
                for (std::size_t j = 0; j <= m; ++j) {
                    const double d = trial[c][j] - W[c][j];
                    linear += grad[c][j] * d;
                    quad += d * d;
                }
            }
            if (trial_loss <= loss + linear + quad / (2.0 * step) + 1e-12 || step < 1e-12) {
                loss = trial_loss;
                break;
            }
            step *= 0.5;
        }
        W = std::move(trial);
        if (max_change < tol) break;
        step = std::min(step * 1.5, 1e3);
    }
}

std::vector<double> lambda_path(const DataMatrix& D, std::size_t points) {
    const std::size_t n = D.n_rows();
    const std::size_t m = D.n_cols();
    const std::size_t C = D.class_order.size();

    // gradient of the data term at zero coefficients and prior-fitting
    // intercepts; its largest magnitude is the smallest all-zero lambda
    std::vector<double> priors(C, 0.0);
    for (int y : D.labels) priors[static_cast<std::size_t>(y)] += 1.0;
    for (double& p : priors) p = std::max(p / static_cast<double>(n), 1e-12);

    double lambda_max = 0.0;
    for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t j = 0; j < m; ++j) {
            double g = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double delta =
                    priors[c] - (static_cast<std::size_t>(D.labels[i]) == c ? 1.0 : 0.0);
                g += delta * D.rows[i][j];
            }
            lambda_max = std::max(lambda_max, std::abs(g / static_cast<double>(n)));
        }
    }
    if (lambda_max <= 0.0) lambda_max = 1.0;

    std::vector<double> path(points);
    const double ratio = std::pow(1e-3, 1.0 / static_cast<double>(points - 1));
    double lambda = lambda_max;
    for (std::size_t p = 0; p < points; ++p) {
        path[p] = lambda;
        lambda *= ratio;
    }
    return path;
}

Weights zero_weights(std::size_t C, std::size_t m) {
    return Weights(C, std::vector<double>(m + 1, 0.0));
}

double score_weights(const DataMatrix& D, const Weights& W) {
    models::LogisticModel model;
    model.class_order = D.class_order;
    model.weights = W;
    std::vector<std::vector<double>> probs;
    probs.reserve(D.n_rows());
    for (const auto& row : D.rows) probs.push_back(model.predict_proba(row));
    return models::auroc(probs, D.labels, D.class_order.size());
}

constexpr std::size_t kPathPoints = 30;
constexpr std::size_t kLassoIters = 120;
constexpr double kLassoTol = 1e-5;

}  // namespace

BaselineSelection lasso_select(const DataMatrix& D_in, std::size_t d_prime, std::uint64_t seed) {
    const DataMatrix D = sort_columns_by_name(D_in);
    {
        std::vector<int> sorted_labels = D.labels;
        std::sort(sorted_labels.begin(), sorted_labels.end());
        if (sorted_labels.empty() || sorted_labels.front() == sorted_labels.back()) {
            throw SingleClassTrainingSet();
        }
    }
    const std::size_t C = D.class_order.size();
    const std::size_t m = D.n_cols();
    const auto path = lambda_path(D, kPathPoints);

    // per-path-point validation score, cross-validated when feasible
    std::vector<double> path_scores(path.size(), 0.0);
    bool have_cv = true;
    try {
        const auto folds = dataset::stratified_cv_folds(D.labels, C, 3, seed);
        for (const auto& fold : folds.folds) {
            DataMatrix train, val;
            train.column_names = val.column_names = D.column_names;
            train.class_order = val.class_order = D.class_order;
            for (std::size_t r : fold.train) {
                train.rows.push_back(D.rows[r]);
                train.labels.push_back(D.labels[r]);
            }
            for (std::size_t r : fold.validation) {
                val.rows.push_back(D.rows[r]);
                val.labels.push_back(D.labels[r]);
            }
            Weights W = zero_weights(C, m);
            for (std::size_t p = 0; p < path.size(); ++p) {
                fit_lasso_at(train, path[p], W, kLassoIters, kLassoTol);
                path_scores[p] += score_weights(val, W);
            }
        }
        for (double& s : path_scores) s /= static_cast<double>(folds.folds.size());
    } catch (const DegenerateSplit&) {
        have_cv = false;
    }

    // full-data path; keep the coefficients at every point
    std::vector<Weights> full_path;
    full_path.reserve(path.size());
    {
        Weights W = zero_weights(C, m);
        for (double lambda : path) {
            fit_lasso_at(D, lambda, W, kLassoIters, kLassoTol);
            full_path.push_back(W);
        }
    }
    if (!have_cv) {
        for (std::size_t p = 0; p < path.size(); ++p) {
            path_scores[p] = score_weights(D, full_path[p]);
        }
    }

    std::size_t best = 0;
    for (std::size_t p = 1; p < path.size(); ++p) {
        if (path_scores[p] > path_scores[best]) best = p;  // ties keep larger lambda
    }

    std::vector<double> scores(m, 0.0);
    double total = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
        for (std::size_t c = 0; c < C; ++c) {
            scores[j] = std::max(scores[j], std::abs(full_path[best][c][j]));
        }
        total += scores[j];
    }

    bool fallback = false;
    if (total == 0.0) {
        scores = label_correlation_scores(D);
        fallback = true;
    }
    auto sel = rank_selection(Method::Lasso, D, scores, d_prime);
    sel.fallback_used = fallback;
    return sel;
}

BaselineSelection pca_select(const DataMatrix& D_in, std::size_t d_prime) {
    const DataMatrix D = sort_columns_by_name(D_in);
    const std::size_t n = D.n_rows();
    const std::size_t m = D.n_cols();
    if (n == 0 || m == 0) throw ZeroVarianceMatrix();

    // center columns
    std::vector<std::vector<double>> X = D.rows;
    bool any_variance = false;
    for (std::size_t j = 0; j < m; ++j) {
        double mean = 0.0;
        for (std::size_t i = 0; i < n; ++i) mean += X[i][j];
        mean /= static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) {
            X[i][j] -= mean;
            if (X[i][j] != 0.0) any_variance = true;
        }
    }
    if (!any_variance) throw ZeroVarianceMatrix();

    // power iteration on (1/(n-1)) X^T X from the uniform unit vector
    std::vector<double> v(m, 1.0 / std::sqrt(static_cast<double>(m)));
    const double scale = n > 1 ? 1.0 / static_cast<double>(n - 1) : 1.0;
    for (std::size_t iter = 0; iter < 10000; ++iter) {
        std::vector<double> xv(n, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < m; ++j) xv[i] += X[i][j] * v[j];
        }
        std::vector<double> next(m, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < m; ++j) next[j] += X[i][j] * xv[i];
        }
        double norm = 0.0;
        for (std::size_t j = 0; j < m; ++j) {
            next[j] *= scale;
            norm += next[j] * next[j];
        }
        norm = std::sqrt(norm);
        if (norm == 0.0) throw ZeroVarianceMatrix();
        double diff = 0.0;
        for (std::size_t j = 0; j < m; ++j) {
            next[j] /= norm;
            diff = std::max(diff, std::abs(next[j] - v[j]));
        }
        v = std::move(next);
        if (diff < 1e-8) break;
    }

    std::vector<double> scores(m);
    for (std::size_t j = 0; j < m; ++j) scores[j] = std::abs(v[j]);
    return rank_selection(Method::PCA, D, scores, d_prime);
}

BaselineSelection gini_select(const DataMatrix& D_in, std::size_t d_prime, std::uint64_t seed) {
    const DataMatrix D = sort_columns_by_name(D_in);
    const auto forest = models::train_forest(D, 100, 0, rng::derive_seed(seed, {0x61}));
    return rank_selection(Method::Gini, D, forest.importance, d_prime);
}

json baseline_report(const BaselineSelection& sel) {
    return json{{"strategy", method_name(sel.method)},
                {"selected", sel.selected},
                {"scores", sel.scores},
                {"fallback_used", sel.fallback_used}};
}

}  // namespace freeform::baselines

#include "freeform/models.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>

#include "freeform/errors.hpp"
#include "freeform/random.hpp"

namespace freeform::models {

using dataset::DataMatrix;
using nlohmann::json;

namespace {

std::vector<double> softmax(std::vector<double> logits) {
    const double peak = *std::max_element(logits.begin(), logits.end());
    double total = 0.0;
    for (double& v : logits) {
        v = std::exp(v - peak);
        total += v;
    }
    for (double& v : logits) v /= total;
    return logits;
}

std::vector<double> class_logits(const std::vector<std::vector<double>>& weights,
                                 const std::vector<double>& x) {
    std::vector<double> logits(weights.size());
    for (std::size_t c = 0; c < weights.size(); ++c) {
        const auto& w = weights[c];
        double z = w.back();  // intercept
        for (std::size_t j = 0; j < x.size(); ++j) z += w[j] * x[j];
        logits[c] = z;
    }
    return logits;
}

void require_multiclass(const DataMatrix& D) {
    const std::set<int> distinct(D.labels.begin(), D.labels.end());
    if (distinct.size() < 2) throw SingleClassTrainingSet();
}

DataMatrix submatrix(const DataMatrix& D, const std::vector<std::size_t>& rows) {
    DataMatrix out;
    out.column_names = D.column_names;
    out.class_order = D.class_order;
    out.rows.reserve(rows.size());
    out.labels.reserve(rows.size());
    for (std::size_t r : rows) {
        out.rows.push_back(D.rows[r]);
        out.labels.push_back(D.labels[r]);
    }
    return out;
}

}  // namespace

std::vector<double> LogisticModel::predict_proba(const std::vector<double>& x) const {
    return softmax(class_logits(weights, x));
}

double logreg_loss(const DataMatrix& D, const std::vector<std::vector<double>>& weights,
                   double l2) {
    const std::size_t n = D.n_rows();
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const auto probs = softmax(class_logits(weights, D.rows[i]));
        loss -= std::log(std::max(probs[static_cast<std::size_t>(D.labels[i])], 1e-300));
    }
    loss /= static_cast<double>(n);
    double penalty = 0.0;
    for (const auto& w : weights) {
        for (std::size_t j = 0; j + 1 < w.size(); ++j) penalty += w[j] * w[j];
    }
    return loss + 0.5 * l2 * penalty;
}

std::vector<std::vector<double>> logreg_gradient(const DataMatrix& D,
                                                 const std::vector<std::vector<double>>& weights,
                                                 double l2) {
    const std::size_t n = D.n_rows();
    const std::size_t m = D.n_cols();
    std::vector<std::vector<double>> grad(weights.size(), std::vector<double>(m + 1, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
        const auto probs = softmax(class_logits(weights, D.rows[i]));
        for (std::size_t c = 0; c < weights.size(); ++c) {
            const double delta =
                probs[c] - (static_cast<std::size_t>(D.labels[i]) == c ? 1.0 : 0.0);
            auto& g = grad[c];
            for (std::size_t j = 0; j < m; ++j) g[j] += delta * D.rows[i][j];
            g[m] += delta;
        }
    }
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t c = 0; c < grad.size(); ++c) {
        for (std::size_t j = 0; j < m; ++j) {
            grad[c][j] = grad[c][j] * inv_n + l2 * weights[c][j];
        }
        grad[c][m] *= inv_n;
    }
    return grad;
}

LogisticModel train_logreg(const DataMatrix& D, double l2, std::size_t max_iter, double tol) {
    require_multiclass(D);
    const std::size_t C = D.class_order.size();
    const std::size_t m = D.n_cols();

    LogisticModel model;
    model.class_order = D.class_order;
    model.l2_strength = l2;
    model.weights.assign(C, std::vector<double>(m + 1, 0.0));

    double loss = logreg_loss(D, model.weights, l2);
    double step = 1.0;
    for (std::size_t iter = 0; iter < max_iter; ++iter) {
        const auto grad = logreg_gradient(D, model.weights, l2);
        double gmax = 0.0;
        double gnorm2 = 0.0;
        for (const auto& g : grad) {
            for (double v : g) {
                gmax = std::max(gmax, std::abs(v));
                gnorm2 += v * v;
            }
        }
        model.iterations = iter;
        if (gmax < tol) {
            model.converged = true;
            return model;
        }

        // Armijo backtracking: accepted steps strictly decrease the loss.
        std::vector<std::vector<double>> trial = model.weights;
        double trial_loss = 0.0;
        bool accepted = false;
        while (step > 1e-16) {
            for (std::size_t c = 0; c < C; ++c) {
                for (std::size_t j = 0; j <= m; ++j) {
                    trial[c][j] = model.weights[c][j] - step * grad[c][j];
                }
            }
            trial_loss = logreg_loss(D, trial, l2);
            if (trial_loss <= loss - 1e-4 * step * gnorm2) {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) return model;
        model.weights = std::move(trial);
        loss = trial_loss;
        step = std::min(step * 2.0, 1e3);
    }
    model.iterations = max_iter;
    return model;
}

// ---------------------------------------------------------------------------
// random forest

double weighted_gini(const std::vector<double>& left_counts,
                     const std::vector<double>& right_counts) {
    auto side = [](const std::vector<double>& counts, double& total) {
        total = std::accumulate(counts.begin(), counts.end(), 0.0);
        if (total == 0.0) return 0.0;
        double sq = 0.0;
        for (double c : counts) sq += (c / total) * (c / total);
        return 1.0 - sq;
    };
    double nl = 0.0, nr = 0.0;
    const double gl = side(left_counts, nl);
    const double gr = side(right_counts, nr);
    const double n = nl + nr;
    if (n == 0.0) return 0.0;
    return (nl / n) * gl + (nr / n) * gr;
}

namespace {

double node_gini(const std::vector<double>& counts) {
    const double total = std::accumulate(counts.begin(), counts.end(), 0.0);
    if (total == 0.0) return 0.0;
    double sq = 0.0;
    for (double c : counts) sq += (c / total) * (c / total);
    return 1.0 - sq;
}

std::uint64_t fnv_hash(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

class TreeBuilder {
public:
    TreeBuilder(const DataMatrix& D, std::size_t max_depth, std::uint64_t tree_seed,
                std::vector<double>& importance)
        : D_(D), max_depth_(max_depth), tree_seed_(tree_seed), importance_(importance) {
        const std::size_t m = D.n_cols();
        name_hash_.reserve(m);
        for (const auto& name : D.column_names) name_hash_.push_back(fnv_hash(name));
        subsample_ = static_cast<std::size_t>(
            std::ceil(std::sqrt(static_cast<double>(std::max<std::size_t>(m, 1)))));
    }

    DecisionTree build(const std::vector<std::size_t>& rows) {
        DecisionTree tree;
        grow(tree, rows, 1, static_cast<double>(rows.size()));
        return tree;
    }

private:
    std::vector<double> count_classes(const std::vector<std::size_t>& rows) const {
        std::vector<double> counts(D_.class_order.size(), 0.0);
        for (std::size_t r : rows) counts[static_cast<std::size_t>(D_.labels[r])] += 1.0;
        return counts;
    }

    std::size_t make_leaf(DecisionTree& tree, std::vector<double> counts) {
        TreeNode node;
        node.class_counts = std::move(counts);
        tree.nodes.push_back(std::move(node));
        return tree.nodes.size() - 1;
    }

    struct Split {
        bool found = false;
        std::size_t feature = 0;
        double threshold = 0.0;
        double decrease = 0.0;
        double child_impurity = 0.0;
    };

    /// Candidate columns for one split, chosen by name-keyed pseudo-random
    /// priority so the choice is independent of column order.
    std::vector<std::size_t> candidates() {
        const std::uint64_t nonce = rng::derive_seed(tree_seed_, {0x51, split_nonce_++});
        std::vector<std::pair<std::uint64_t, std::size_t>> keyed;
        keyed.reserve(name_hash_.size());
        for (std::size_t j = 0; j < name_hash_.size(); ++j) {
            keyed.emplace_back(rng::splitmix64(name_hash_[j] ^ nonce), j);
        }
        std::sort(keyed.begin(), keyed.end(), [this](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first < b.first;
            return D_.column_names[a.second] < D_.column_names[b.second];
        });
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < std::min(subsample_, keyed.size()); ++i) {
            out.push_back(keyed[i].second);
        }
        return out;
    }

    Split best_split(const std::vector<std::size_t>& rows, const std::vector<double>& counts) {
        const double parent = node_gini(counts);
        Split best;
        for (std::size_t j : candidates()) {
            std::vector<double> values;
            values.reserve(rows.size());
            for (std::size_t r : rows) values.push_back(D_.rows[r][j]);
            std::sort(values.begin(), values.end());
            values.erase(std::unique(values.begin(), values.end()), values.end());
            for (std::size_t v = 0; v + 1 < values.size(); ++v) {
                const double threshold = (values[v] + values[v + 1]) / 2.0;
                std::vector<double> left(counts.size(), 0.0), right(counts.size(), 0.0);
                for (std::size_t r : rows) {
                    auto& side = D_.rows[r][j] <= threshold ? left : right;
                    side[static_cast<std::size_t>(D_.labels[r])] += 1.0;
                }
                const double child = weighted_gini(left, right);
                const double decrease = parent - child;
                bool better = false;
                if (!best.found || decrease > best.decrease + 1e-15) {
                    better = true;
                } else if (std::abs(decrease - best.decrease) <= 1e-15) {
                    const auto& name = D_.column_names[j];
                    const auto& best_name = D_.column_names[best.feature];
                    better = name < best_name ||
                             (name == best_name && threshold < best.threshold);
                }
                if (better) {
                    best = {true, j, threshold, decrease, child};
                }
            }
        }
        return best;
    }

    std::size_t grow(DecisionTree& tree, const std::vector<std::size_t>& rows, std::size_t depth,
                     double n_total) {
        auto counts = count_classes(rows);
        const bool pure = node_gini(counts) == 0.0;
        const bool depth_capped = max_depth_ > 0 && depth > max_depth_;
        if (pure || depth_capped || rows.size() < 2) return make_leaf(tree, std::move(counts));

        const Split split = best_split(rows, counts);
        if (!split.found || split.decrease <= 1e-15) return make_leaf(tree, std::move(counts));

        importance_[split.feature] +=
            (static_cast<double>(rows.size()) / n_total) * split.decrease;

        std::vector<std::size_t> left_rows, right_rows;
        for (std::size_t r : rows) {
            (D_.rows[r][split.feature] <= split.threshold ? left_rows : right_rows).push_back(r);
        }

        TreeNode node;
        node.feature = static_cast<int>(split.feature);
        node.threshold = split.threshold;
        tree.nodes.push_back(std::move(node));
        const std::size_t index = tree.nodes.size() - 1;
        const std::size_t left = grow(tree, left_rows, depth + 1, n_total);
        const std::size_t right = grow(tree, right_rows, depth + 1, n_total);
        tree.nodes[index].left = left;
        tree.nodes[index].right = right;
        return index;
    }

    const DataMatrix& D_;
    std::size_t max_depth_;
    std::uint64_t tree_seed_;
    std::vector<double>& importance_;
    std::vector<std::uint64_t> name_hash_;
    std::size_t subsample_ = 1;
    std::size_t split_nonce_ = 0;
};

}  // namespace

const TreeNode& DecisionTree::leaf_for(const std::vector<double>& x) const {
    std::size_t i = 0;
    while (nodes[i].feature >= 0) {
        i = x[static_cast<std::size_t>(nodes[i].feature)] <= nodes[i].threshold ? nodes[i].left
                                                                                : nodes[i].right;
    }
    return nodes[i];
}

ForestModel train_forest(const DataMatrix& D, std::size_t n_trees, std::size_t max_depth,
                         std::uint64_t seed) {
    require_multiclass(D);
    if (n_trees < 1) throw ConfigError("a forest needs at least one tree");

    ForestModel model;
    model.class_order = D.class_order;
    model.column_names = D.column_names;
    model.importance.assign(D.n_cols(), 0.0);

    const std::size_t n = D.n_rows();
    for (std::size_t t = 0; t < n_trees; ++t) {
        const std::uint64_t tree_seed = rng::derive_seed(seed, {0xb0, t});
        rng::Pcg rows_rng(rng::derive_seed(tree_seed, {0x99}));
        std::vector<std::size_t> rows(n);
        for (auto& r : rows) r = rows_rng.below(n);
        TreeBuilder builder(D, max_depth, tree_seed, model.importance);
        model.trees.push_back(builder.build(rows));
    }

    const double total =
        std::accumulate(model.importance.begin(), model.importance.end(), 0.0);
    if (total > 0.0) {
        for (double& v : model.importance) v /= total;
    }
    return model;
}

std::vector<double> ForestModel::predict_proba(const std::vector<double>& x) const {
    std::vector<double> probs(class_order.size(), 0.0);
    for (const auto& tree : trees) {
        const auto& leaf = tree.leaf_for(x);
        const double total =
            std::accumulate(leaf.class_counts.begin(), leaf.class_counts.end(), 0.0);
        for (std::size_t c = 0; c < probs.size(); ++c) {
            probs[c] += total > 0.0 ? leaf.class_counts[c] / total : 1.0 / probs.size();
        }
    }
    for (double& p : probs) p /= static_cast<double>(trees.size());
    return probs;
}

std::vector<double> predict_proba(const AnyModel& model, const std::vector<double>& x) {
    return std::visit([&](const auto& m) { return m.predict_proba(x); }, model);
}

std::pair<std::vector<double>, std::size_t> ensemble_predict(const EnsembleModel& ens,
                                                             const std::vector<double>& x) {
    const std::size_t C = ens.class_order.size();
    std::vector<double> mean(C, 0.0);
    for (const auto& member : ens.members) {
        std::vector<double> augmented = x;
        for (const auto& feature : member.features.expressions) {
            augmented.push_back(engineering::evaluate_expression(*feature.expr, x));
        }
        const auto probs = predict_proba(member.model, augmented);
        for (std::size_t c = 0; c < C; ++c) mean[c] += probs[c];
    }
    for (double& p : mean) p /= static_cast<double>(ens.members.size());

    std::size_t best = 0;
    for (std::size_t c = 1; c < C; ++c) {
        if (mean[c] > mean[best]) best = c;
    }
    return {std::move(mean), best};
}

// ---------------------------------------------------------------------------
// metrics

double binary_auroc(const std::vector<double>& scores, const std::vector<int>& labels) {
    const std::size_t n = scores.size();
    std::size_t n_pos = 0;
    for (int y : labels) n_pos += y == 1 ? 1 : 0;
    const std::size_t n_neg = n - n_pos;
    if (n_pos == 0 || n_neg == 0) {
        throw DegenerateLabels("binary AUROC needs at least one positive and one negative");
    }

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    double pos_rank_sum = 0.0;
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j < n && scores[order[j]] == scores[order[i]]) ++j;
        const double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
        for (std::size_t k = i; k < j; ++k) {
            if (labels[order[k]] == 1) pos_rank_sum += avg_rank;
        }
        i = j;
    }
    const double np = static_cast<double>(n_pos);
    const double nn = static_cast<double>(n_neg);
    return (pos_rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

double auroc(const std::vector<std::vector<double>>& scores, const std::vector<int>& labels,
             std::size_t n_classes, Averaging averaging) {
    if (scores.size() != labels.size() || scores.empty()) {
        throw DegenerateLabels("AUROC needs aligned, non-empty scores and labels");
    }
    if (averaging == Averaging::Micro) {
        std::vector<double> pooled_scores;
        std::vector<int> pooled_labels;
        pooled_scores.reserve(scores.size() * n_classes);
        pooled_labels.reserve(scores.size() * n_classes);
        for (std::size_t i = 0; i < scores.size(); ++i) {
            for (std::size_t c = 0; c < n_classes; ++c) {
                pooled_scores.push_back(scores[i][c]);
                pooled_labels.push_back(labels[i] == static_cast<int>(c) ? 1 : 0);
            }
        }
        return binary_auroc(pooled_scores, pooled_labels);
    }

    double total = 0.0;
    std::size_t evaluated = 0;
    for (std::size_t c = 0; c < n_classes; ++c) {
        std::size_t n_pos = 0;
        for (int y : labels) n_pos += y == static_cast<int>(c) ? 1 : 0;
        if (n_pos == 0) continue;

        std::vector<double> class_scores;
        std::vector<int> class_labels;
        class_scores.reserve(scores.size());
        class_labels.reserve(scores.size());
        for (std::size_t i = 0; i < scores.size(); ++i) {
            class_scores.push_back(scores[i][c]);
            class_labels.push_back(labels[i] == static_cast<int>(c) ? 1 : 0);
        }
        total += binary_auroc(class_scores, class_labels);
        ++evaluated;
    }
    if (evaluated == 0) throw DegenerateLabels("no class had a positive example");
    return total / static_cast<double>(evaluated);
}

// ---------------------------------------------------------------------------
// hyperparameter search

HyperParams grid_search_cv(const DataMatrix& D, ModelFamily family,
                           const std::vector<HyperParams>& grid, std::size_t k,
                           std::uint64_t seed, GridSearchInfo* info) {
    if (grid.empty()) throw ConfigError("hyperparameter grid is empty");
    const auto folds = dataset::stratified_cv_folds(D.labels, D.class_order.size(), k, seed);
    if (info) info->warnings = folds.warnings;

    auto depth_rank = [](std::size_t depth) {
        return depth == 0 ? std::numeric_limits<std::size_t>::max() : depth;
    };
    auto preferred = [&](const HyperParams& a, const HyperParams& b) {
        if (family == ModelFamily::Logistic) return a.l2 > b.l2;
        return depth_rank(a.max_depth) < depth_rank(b.max_depth);
    };

    HyperParams best{};
    double best_score = -1.0;
    bool have_best = false;
    for (std::size_t g = 0; g < grid.size(); ++g) {
        double mean = 0.0;
        for (std::size_t f = 0; f < folds.folds.size(); ++f) {
            const auto train = submatrix(D, folds.folds[f].train);
            const auto val = submatrix(D, folds.folds[f].validation);
            AnyModel model;
            if (family == ModelFamily::Logistic) {
                model = train_logreg(train, grid[g].l2);
            } else {
                model = train_forest(train, grid[g].n_trees, grid[g].max_depth,
                                     rng::derive_seed(seed, {0x6e, g, f}));
            }
            std::vector<std::vector<double>> probs;
            probs.reserve(val.n_rows());
            for (const auto& row : val.rows) probs.push_back(predict_proba(model, row));
            mean += auroc(probs, val.labels, D.class_order.size());
        }
        mean /= static_cast<double>(folds.folds.size());
        if (info) info->mean_scores.push_back(mean);

        if (!have_best || mean > best_score ||
            (mean == best_score && preferred(grid[g], best))) {
            best = grid[g];
            best_score = mean;
            have_best = true;
        }
    }
    return best;
}

// ---------------------------------------------------------------------------
// serialization

json model_to_json(const AnyModel& model) {
    if (std::holds_alternative<LogisticModel>(model)) {
        const auto& m = std::get<LogisticModel>(model);
        return json{{"schema", "logistic-v1"},
                    {"weights", m.weights},
                    {"classes", m.class_order},
                    {"l2", m.l2_strength},
                    {"converged", m.converged},
                    {"iterations", m.iterations}};
    }
    const auto& m = std::get<ForestModel>(model);
    json trees = json::array();
    for (const auto& tree : m.trees) {
        json nodes = json::array();
        for (const auto& node : tree.nodes) {
            nodes.push_back({{"feature", node.feature},
                             {"threshold", node.threshold},
                             {"left", node.left},
                             {"right", node.right},
                             {"counts", node.class_counts}});
        }
        trees.push_back(std::move(nodes));
    }
    return json{{"schema", "forest-v1"},
                {"classes", m.class_order},
                {"columns", m.column_names},
                {"importance", m.importance},
                {"trees", std::move(trees)}};
}

AnyModel model_from_json(const json& j) try {
    const std::string schema = j.at("schema").get<std::string>();
    if (schema == "logistic-v1") {
        LogisticModel m;
        m.weights = j.at("weights").get<std::vector<std::vector<double>>>();
        m.class_order = j.at("classes").get<std::vector<std::string>>();
        m.l2_strength = j.value("l2", 0.0);
        m.converged = j.value("converged", false);
        m.iterations = j.value("iterations", std::size_t{0});
        return m;
    }
    if (schema == "forest-v1") {
        ForestModel m;
        m.class_order = j.at("classes").get<std::vector<std::string>>();
        m.column_names = j.at("columns").get<std::vector<std::string>>();
        m.importance = j.at("importance").get<std::vector<double>>();
        for (const auto& tree_json : j.at("trees")) {
            DecisionTree tree;
            for (const auto& node_json : tree_json) {
                TreeNode node;
                node.feature = node_json.at("feature").get<int>();
                node.threshold = node_json.at("threshold").get<double>();
                node.left = node_json.at("left").get<std::size_t>();
                node.right = node_json.at("right").get<std::size_t>();
                node.class_counts = node_json.at("counts").get<std::vector<double>>();
                tree.nodes.push_back(std::move(node));
            }
            m.trees.push_back(std::move(tree));
        }
        return m;
    }
    throw ConfigError("unknown model schema: " + schema);
} catch (const json::exception& e) {
    throw ConfigError("malformed model envelope: " + std::string(e.what()));
}

json ensemble_to_json(const EnsembleModel& ens) {
    json members = json::array();
    for (const auto& member : ens.members) {
        members.push_back({{"features", engineering::feature_set_report(member.features)},
                           {"model", model_to_json(member.model)}});
    }
    return json{{"schema", "ensemble-v1"},
                {"classes", ens.class_order},
                {"members", std::move(members)}};
}

EnsembleModel ensemble_from_json(const json& j, std::size_t alias_count) try {
    EnsembleModel ens;
    ens.class_order = j.at("classes").get<std::vector<std::string>>();
    for (const auto& member_json : j.at("members")) {
        EnsembleMember member;
        member.features =
            engineering::feature_set_from_report(member_json.at("features"), alias_count);
        member.model = model_from_json(member_json.at("model"));
        ens.members.push_back(std::move(member));
    }
    return ens;
} catch (const json::exception& e) {
    throw ConfigError("malformed ensemble envelope: " + std::string(e.what()));
}

}  // namespace freeform::models

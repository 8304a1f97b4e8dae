#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "freeform/dataset.hpp"
#include "freeform/errors.hpp"
#include "freeform/models.hpp"
#include "freeform/random.hpp"

using namespace freeform;
using namespace freeform::models;
using freeform::dataset::DataMatrix;

namespace {

DataMatrix random_matrix(std::size_t n, std::size_t m, std::size_t c, std::uint64_t seed) {
    DataMatrix D;
    rng::Pcg gen(seed);
    for (std::size_t j = 0; j < m; ++j) D.column_names.push_back("rs" + std::to_string(j + 1));
    for (std::size_t k = 0; k < c; ++k) D.class_order.push_back("c" + std::to_string(k));
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> row;
        for (std::size_t j = 0; j < m; ++j) row.push_back(double(gen.below(3)));
        D.rows.push_back(std::move(row));
        D.labels.push_back(int(i % c));  // guarantees every class appears
    }
    return D;
}

std::vector<std::vector<double>> random_weights(std::size_t c, std::size_t m, rng::Pcg& gen) {
    std::vector<std::vector<double>> w(c, std::vector<double>(m + 1));
    for (auto& row : w) {
        for (auto& v : row) v = gen.normal() * 0.5;
    }
    return w;
}

/// Single informative column: class = 1 iff column 0 is positive.
DataMatrix step_matrix(std::size_t n, std::uint64_t seed) {
    DataMatrix D;
    rng::Pcg gen(seed);
    D.column_names = {"sig", "noise"};
    D.class_order = {"lo", "hi"};
    for (std::size_t i = 0; i < n; ++i) {
        const double s = i % 2 == 0 ? 0.0 : 2.0;
        D.rows.push_back({s, double(gen.below(3))});
        D.labels.push_back(s > 0.5 ? 1 : 0);
    }
    return D;
}

double accuracy(const AnyModel& model, const DataMatrix& D) {
    std::size_t hits = 0;
    for (std::size_t i = 0; i < D.n_rows(); ++i) {
        const auto p = predict_proba(model, D.rows[i]);
        const std::size_t arg = std::max_element(p.begin(), p.end()) - p.begin();
        if (int(arg) == D.labels[i]) ++hits;
    }
    return double(hits) / double(D.n_rows());
}

}  // namespace

TEST_CASE("logreg analytic gradient matches central finite differences") {
    rng::Pcg gen(31);
    for (int trial = 0; trial < 10; ++trial) {
        auto D = random_matrix(8, 5, 3, gen.next_u64());
        auto W = random_weights(3, 5, gen);
        const double l2 = 0.3;
        auto G = logreg_gradient(D, W, l2);
        const double h = 1e-5;
        double max_rel = 0.0;
        for (std::size_t c = 0; c < W.size(); ++c) {
            for (std::size_t j = 0; j < W[c].size(); ++j) {
                auto Wp = W;
                Wp[c][j] += h;
                auto Wm = W;
                Wm[c][j] -= h;
                const double fd = (logreg_loss(D, Wp, l2) - logreg_loss(D, Wm, l2)) / (2 * h);
                const double rel =
                    std::abs(G[c][j] - fd) / std::max({std::abs(G[c][j]), std::abs(fd), 1e-8});
                max_rel = std::max(max_rel, rel);
            }
        }
        CHECK(max_rel < 1e-4);
    }
}

TEST_CASE("train_logreg separates a separable problem and never increases the loss") {
    auto D = step_matrix(40, 5);
    auto model = train_logreg(D, 0.001);
    CHECK(accuracy(model, D) == 1.0);
    CHECK(model.class_order == D.class_order);
    // the fit is at least as good as the zero initialization it started from
    const std::vector<std::vector<double>> zeros(2, std::vector<double>(3, 0.0));
    CHECK(logreg_loss(D, model.weights, 0.001) <= logreg_loss(D, zeros, 0.001));
    CHECK(model.iterations >= 1);
}

TEST_CASE("overwhelming regularization collapses logreg to class priors") {
    // 30 samples, 2:1 class imbalance
    DataMatrix D;
    D.column_names = {"a"};
    D.class_order = {"x", "y"};
    rng::Pcg gen(7);
    for (int i = 0; i < 30; ++i) {
        D.rows.push_back({double(gen.below(3))});
        D.labels.push_back(i % 3 == 0 ? 1 : 0);
    }
    // strong enough to flatten the feature weights while the unpenalized
    // intercepts still reach the prior log-odds within the iteration budget
    auto model = train_logreg(D, 100.0);
    for (const auto& row : model.weights) {
        for (std::size_t j = 0; j + 1 < row.size(); ++j) CHECK(std::abs(row[j]) < 1e-3);
    }
    const auto p = model.predict_proba({1.0});
    CHECK(p[0] == doctest::Approx(2.0 / 3.0).epsilon(0.01));
    CHECK(p[1] == doctest::Approx(1.0 / 3.0).epsilon(0.01));
}

TEST_CASE("predict_proba outputs a probability simplex") {
    rng::Pcg gen(99);
    auto D = random_matrix(30, 4, 3, 12);
    auto logit = train_logreg(D, 0.1);
    auto forest = train_forest(D, 20, 0, 5);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> x;
        for (int j = 0; j < 4; ++j) x.push_back(double(gen.below(3)));
        for (const auto& p : {logit.predict_proba(x), forest.predict_proba(x)}) {
            REQUIRE(p.size() == 3);
            double sum = 0.0;
            for (double v : p) {
                CHECK(v >= 0.0);
                CHECK(v <= 1.0);
                sum += v;
            }
            CHECK(std::abs(sum - 1.0) < 1e-9);
        }
    }
}

TEST_CASE("train_logreg and train_forest refuse single-class data") {
    DataMatrix D;
    D.column_names = {"a"};
    D.class_order = {"only"};
    D.rows = {{0.0}, {1.0}};
    D.labels = {0, 0};
    CHECK_THROWS_AS(train_logreg(D, 1.0), SingleClassTrainingSet);
    CHECK_THROWS_AS(train_forest(D, 5, 0, 1), SingleClassTrainingSet);
}

TEST_CASE("weighted_gini on the documented split") {
    CHECK(weighted_gini({3.0, 1.0}, {0.0, 4.0}) == 0.1875);
    CHECK(weighted_gini({2.0, 2.0}, {2.0, 2.0}) == 0.5);  // uninformative split
    CHECK(weighted_gini({4.0, 0.0}, {0.0, 4.0}) == 0.0);  // pure split
}

TEST_CASE("a forest nails a single informative feature") {
    auto D = step_matrix(40, 9);
    auto model = train_forest(D, 15, 0, 3);
    CHECK(accuracy(model, D) == 1.0);
    REQUIRE(model.importance.size() == 2);
    CHECK(model.importance[0] > model.importance[1]);
    CHECK(model.importance[0] > 0.9);
    const double sum = std::accumulate(model.importance.begin(), model.importance.end(), 0.0);
    CHECK(std::abs(sum - 1.0) < 1e-9);
}

TEST_CASE("forests are deterministic per seed") {
    auto D = random_matrix(40, 6, 2, 77);
    auto a = train_forest(D, 25, 3, 42);
    auto b = train_forest(D, 25, 3, 42);
    REQUIRE(a.trees.size() == b.trees.size());
    CHECK(a.importance == b.importance);
    rng::Pcg gen(5);
    for (int t = 0; t < 30; ++t) {
        std::vector<double> x;
        for (int j = 0; j < 6; ++j) x.push_back(double(gen.below(3)));
        CHECK(a.predict_proba(x) == b.predict_proba(x));
    }
    auto c = train_forest(D, 25, 3, 43);
    bool any_diff = false;
    rng::Pcg gen2(5);
    for (int t = 0; t < 30; ++t) {
        std::vector<double> x;
        for (int j = 0; j < 6; ++j) x.push_back(double(gen2.below(3)));
        if (a.predict_proba(x) != c.predict_proba(x)) any_diff = true;
    }
    CHECK(any_diff);
}

TEST_CASE("forest behaviour is invariant under column permutation") {
    auto D = random_matrix(50, 5, 2, 31);
    DataMatrix P = D;
    const std::vector<std::size_t> perm{3, 0, 4, 1, 2};
    for (std::size_t j = 0; j < perm.size(); ++j) P.column_names[j] = D.column_names[perm[j]];
    for (std::size_t i = 0; i < D.rows.size(); ++i) {
        for (std::size_t j = 0; j < perm.size(); ++j) P.rows[i][j] = D.rows[i][perm[j]];
    }
    auto a = train_forest(D, 20, 4, 11);
    auto b = train_forest(P, 20, 4, 11);
    // per-name importances match regardless of column order
    for (std::size_t j = 0; j < perm.size(); ++j) {
        CHECK(a.importance[perm[j]] == doctest::Approx(b.importance[j]).epsilon(1e-12));
    }
    // and so do predictions on corresponding rows
    rng::Pcg gen(8);
    for (int t = 0; t < 20; ++t) {
        std::vector<double> x;
        for (int j = 0; j < 5; ++j) x.push_back(double(gen.below(3)));
        std::vector<double> xp(5);
        for (std::size_t j = 0; j < perm.size(); ++j) xp[j] = x[perm[j]];
        CHECK(a.predict_proba(x) == b.predict_proba(xp));
    }
}

TEST_CASE("max_depth caps the tree height") {
    auto D = random_matrix(60, 4, 2, 55);
    auto shallow = train_forest(D, 10, 1, 3);
    for (const auto& tree : shallow.trees) {
        // depth 1: a root split plus leaves at most
        CHECK(tree.nodes.size() <= 3);
    }
}

TEST_CASE("ensemble averaging equals the replicated average-then-argmax computation") {
    rng::Pcg gen(13);
    auto D = random_matrix(40, 3, 3, 21);
    EnsembleModel ens;
    ens.class_order = D.class_order;
    for (int k = 0; k < 5; ++k) {
        EnsembleMember member;
        member.model = k % 2 == 0 ? AnyModel(train_logreg(D, 0.5 + k))
                                  : AnyModel(train_forest(D, 10, 3, 100 + k));
        ens.members.push_back(std::move(member));
    }
    for (int t = 0; t < 40; ++t) {
        std::vector<double> x;
        for (int j = 0; j < 3; ++j) x.push_back(double(gen.below(3)));
        auto [avg, decided] = ensemble_predict(ens, x);
        std::vector<double> expect(3, 0.0);
        for (const auto& member : ens.members) {
            const auto p = predict_proba(member.model, x);
            for (std::size_t c = 0; c < 3; ++c) expect[c] += p[c];
        }
        for (auto& v : expect) v /= double(ens.members.size());
        CHECK(avg == expect);  // bit-exact agreement
        std::size_t arg = 0;
        for (std::size_t c = 1; c < 3; ++c) {
            if (expect[c] > expect[arg]) arg = c;
        }
        CHECK(decided == arg);
    }
}

TEST_CASE("a one-member ensemble is the member") {
    auto D = random_matrix(30, 3, 2, 44);
    EnsembleModel ens;
    ens.class_order = D.class_order;
    EnsembleMember m;
    m.model = train_logreg(D, 1.0);
    ens.members.push_back(m);
    for (const auto& row : D.rows) {
        auto [avg, decided] = ensemble_predict(ens, row);
        const auto direct = predict_proba(ens.members[0].model, row);
        CHECK(avg == direct);
        CHECK(decided == std::size_t(std::max_element(direct.begin(), direct.end()) - direct.begin()));
    }
}

TEST_CASE("identical members average to themselves and ties resolve to the lower class") {
    auto D = random_matrix(30, 3, 2, 45);
    auto base = train_logreg(D, 1.0);
    EnsembleModel ens;
    ens.class_order = D.class_order;
    for (int k = 0; k < 3; ++k) {
        EnsembleMember m;
        m.model = base;
        ens.members.push_back(m);
    }
    auto [avg, _] = ensemble_predict(ens, D.rows[0]);
    CHECK(avg == base.predict_proba(D.rows[0]));

    // hand-built intercept-free symmetric model: both classes get equal mass
    LogisticModel flat;
    flat.weights = {{0.0, 0.0}, {0.0, 0.0}};
    flat.class_order = {"a", "b"};
    EnsembleModel tie;
    tie.class_order = flat.class_order;
    EnsembleMember m;
    m.model = flat;
    tie.members.push_back(m);
    auto [p, decided] = ensemble_predict(tie, {1.0});
    CHECK(p[0] == 0.5);
    CHECK(p[1] == 0.5);
    CHECK(decided == 0);
}

TEST_CASE("binary_auroc on the documented example, perfect and degenerate cases") {
    CHECK(binary_auroc({0.1, 0.4, 0.35, 0.8}, {0, 0, 1, 1}) == 0.75);
    CHECK(binary_auroc({0.1, 0.2, 0.8, 0.9}, {0, 0, 1, 1}) == 1.0);
    CHECK(binary_auroc({0.9, 0.8, 0.2, 0.1}, {0, 0, 1, 1}) == 0.0);
    CHECK(binary_auroc({0.5, 0.5, 0.5, 0.5}, {0, 1, 0, 1}) == 0.5);
    CHECK(binary_auroc({1.0, 1.0}, {0, 1}) == 0.5);  // pure tie takes half credit
    CHECK_THROWS_AS(binary_auroc({0.1, 0.2}, {1, 1}), DegenerateLabels);
    CHECK_THROWS_AS(binary_auroc({}, {}), DegenerateLabels);
}

TEST_CASE("binary_auroc is invariant under order-preserving score transforms") {
    rng::Pcg gen(66);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> scores;
        std::vector<int> labels;
        for (int i = 0; i < 30; ++i) {
            scores.push_back(double(gen.below(10)) / 10.0);  // plenty of ties
            labels.push_back(int(gen.below(2)));
        }
        labels[0] = 0;
        labels[1] = 1;
        auto warped = scores;
        for (auto& s : warped) s = std::exp(3.0 * s) + 7.0;
        CHECK(binary_auroc(scores, labels) == binary_auroc(warped, labels));
        // permutation invariance: shuffle sample order jointly
        std::vector<std::size_t> idx(scores.size());
        std::iota(idx.begin(), idx.end(), 0);
        rng::Pcg(trial).shuffle(idx);
        std::vector<double> s2;
        std::vector<int> l2;
        for (auto i : idx) {
            s2.push_back(scores[i]);
            l2.push_back(labels[i]);
        }
        CHECK(binary_auroc(scores, labels) == binary_auroc(s2, l2));
    }
}

TEST_CASE("multiclass auroc macro and micro on a hand-computed table") {
    const std::vector<std::vector<double>> scores{{0.5, 0.3, 0.2},
                                                  {0.5, 0.4, 0.1},
                                                  {0.2, 0.3, 0.5},
                                                  {0.1, 0.2, 0.7}};
    const std::vector<int> labels{0, 1, 0, 2};
    CHECK(auroc(scores, labels, 3, Averaging::Macro) == doctest::Approx(0.875).epsilon(1e-12));
    CHECK(auroc(scores, labels, 3, Averaging::Micro) == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("multiclass auroc skips classes without positives and throws when nothing remains") {
    // class 2 never appears; macro averages classes 0 and 1 only
    const std::vector<std::vector<double>> scores{{0.9, 0.1, 0.0},
                                                  {0.8, 0.2, 0.0},
                                                  {0.3, 0.7, 0.0}};
    const std::vector<int> labels{0, 0, 1};
    // class 0: pos {0.9, 0.8} vs neg {0.3} -> 1.0; class 1: pos {0.7} vs neg {0.1, 0.2} -> 1.0
    CHECK(auroc(scores, labels, 3) == 1.0);
    CHECK_THROWS_AS(auroc(scores, {0, 0, 0}, 3), DegenerateLabels);
    CHECK_THROWS_AS(auroc({}, {}, 3), DegenerateLabels);
}

TEST_CASE("two-class auroc agrees with binary_auroc on the positive column") {
    rng::Pcg gen(17);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<std::vector<double>> scores;
        std::vector<int> labels;
        for (int i = 0; i < 25; ++i) {
            const double p = double(gen.below(100)) / 100.0;
            scores.push_back({1.0 - p, p});
            labels.push_back(int(gen.below(2)));
        }
        labels[0] = 0;
        labels[1] = 1;
        std::vector<double> pos_col;
        for (const auto& s : scores) pos_col.push_back(s[1]);
        // macro over {class0, class1} equals the binary value because the two
        // one-vs-rest problems mirror each other
        CHECK(auroc(scores, labels, 2) == doctest::Approx(binary_auroc(pos_col, labels)).epsilon(1e-12));
    }
}

TEST_CASE("grid_search_cv returns the single point of a singleton grid") {
    auto D = random_matrix(24, 3, 2, 91);
    const std::vector<HyperParams> grid{{0.7, 0, 0}};
    auto best = grid_search_cv(D, ModelFamily::Logistic, grid, 3, 5);
    CHECK(best.l2 == 0.7);
}

TEST_CASE("grid_search_cv matches an independent re-evaluation of every grid point") {
    auto D = random_matrix(36, 4, 2, 101);
    const std::vector<HyperParams> grid = kDefaultLogisticGrid;
    const std::size_t k = 3;
    const std::uint64_t seed = 9;
    GridSearchInfo info;
    auto best = grid_search_cv(D, ModelFamily::Logistic, grid, k, seed, &info);
    REQUIRE(info.mean_scores.size() == grid.size());

    // replicate: same folds, same fits, same averaging, same tie preference
    const auto folds = dataset::stratified_cv_folds(D.labels, D.class_order.size(), k, seed);
    std::vector<double> means;
    for (const auto& hp : grid) {
        double mean = 0.0;
        for (const auto& fold : folds.folds) {
            DataMatrix train;
            train.column_names = D.column_names;
            train.class_order = D.class_order;
            for (auto i : fold.train) {
                train.rows.push_back(D.rows[i]);
                train.labels.push_back(D.labels[i]);
            }
            auto model = train_logreg(train, hp.l2);
            std::vector<std::vector<double>> probs;
            std::vector<int> labels;
            for (auto i : fold.validation) {
                probs.push_back(model.predict_proba(D.rows[i]));
                labels.push_back(D.labels[i]);
            }
            mean += auroc(probs, labels, D.class_order.size());
        }
        means.push_back(mean / double(folds.folds.size()));
    }
    for (std::size_t g = 0; g < grid.size(); ++g) {
        CHECK(info.mean_scores[g] == doctest::Approx(means[g]).epsilon(1e-12));
    }
    double best_mean = -1.0;
    double best_l2 = 0.0;
    for (std::size_t g = 0; g < grid.size(); ++g) {
        if (means[g] > best_mean || (means[g] == best_mean && grid[g].l2 > best_l2)) {
            best_mean = means[g];
            best_l2 = grid[g].l2;
        }
    }
    CHECK(best.l2 == best_l2);
}

TEST_CASE("grid_search_cv ties prefer stronger regularization and shallower trees") {
    // perfectly separable single feature: every hyperparameter scores 1.0
    auto D = step_matrix(24, 3);
    auto best = grid_search_cv(D, ModelFamily::Logistic, {{0.01, 0, 0}, {10.0, 0, 0}}, 3, 7);
    CHECK(best.l2 == 10.0);
    auto forest_best =
        grid_search_cv(D, ModelFamily::Forest, {{0.0, 0, 50}, {0.0, 3, 50}, {0.0, 5, 50}}, 3, 7);
    CHECK(forest_best.max_depth == 3);
}

TEST_CASE("grid_search_cv surfaces fold warnings and degenerate splits") {
    // class counts {3, 3}: k=4 lowers to 3 with a warning
    DataMatrix D;
    D.column_names = {"a"};
    D.class_order = {"x", "y"};
    for (int i = 0; i < 6; ++i) {
        D.rows.push_back({double(i % 3)});
        D.labels.push_back(i < 3 ? 0 : 1);
    }
    GridSearchInfo info;
    grid_search_cv(D, ModelFamily::Logistic, {{1.0, 0, 0}}, 4, 3, &info);
    CHECK(!info.warnings.empty());

    DataMatrix tiny;
    tiny.column_names = {"a"};
    tiny.class_order = {"x", "y"};
    tiny.rows = {{0.0}, {1.0}};
    tiny.labels = {0, 1};
    CHECK_THROWS_AS(grid_search_cv(tiny, ModelFamily::Logistic, {{1.0, 0, 0}}, 2, 1),
                    DegenerateSplit);
}

TEST_CASE("models round-trip through their JSON envelopes") {
    auto D = random_matrix(30, 4, 3, 71);
    rng::Pcg gen(3);

    auto logit = train_logreg(D, 0.5);
    auto logit_back = model_from_json(model_to_json(AnyModel(logit)));
    auto forest = train_forest(D, 12, 4, 19);
    auto forest_back = model_from_json(model_to_json(AnyModel(forest)));
    for (int t = 0; t < 25; ++t) {
        std::vector<double> x;
        for (int j = 0; j < 4; ++j) x.push_back(double(gen.below(3)));
        CHECK(predict_proba(logit_back, x) == logit.predict_proba(x));
        CHECK(predict_proba(forest_back, x) == forest.predict_proba(x));
    }

    CHECK_THROWS_AS(model_from_json(nlohmann::json{{"kind", "alien"}}), ConfigError);
}

TEST_CASE("ensembles round-trip through JSON including their feature sets") {
    auto D = random_matrix(30, 3, 2, 81);
    EnsembleModel ens;
    ens.class_order = D.class_order;
    {
        EnsembleMember m;
        m.features.expressions.push_back(
            {"f1", engineering::compile_expression("x1 * x2", 3)});
        auto augmented = engineering::transform_matrix(D, m.features);
        m.model = train_logreg(augmented, 1.0);
        ens.members.push_back(std::move(m));
    }
    {
        EnsembleMember m;
        m.model = train_forest(D, 8, 3, 4);
        ens.members.push_back(std::move(m));
    }
    auto back = ensemble_from_json(ensemble_to_json(ens), 3);
    REQUIRE(back.members.size() == 2);
    rng::Pcg gen(6);
    for (int t = 0; t < 25; ++t) {
        std::vector<double> x;
        for (int j = 0; j < 3; ++j) x.push_back(double(gen.below(3)));
        auto [p1, d1] = ensemble_predict(ens, x);
        auto [p2, d2] = ensemble_predict(back, x);
        CHECK(p1 == p2);
        CHECK(d1 == d2);
    }
}

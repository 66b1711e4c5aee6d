#include "helpers.hpp"
#include "oracles.hpp"

#include "twostep/ensemble.hpp"
#include "twostep/random.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace twostep;

namespace {

std::vector<int> pattern(unsigned bits, int L) {
    std::vector<int> c(L);
    for (int l = 0; l < L; ++l) c[l] = (bits >> l) & 1u;
    return c;
}

Roster small_roster(std::uint64_t seed) {
    Roster r;
    for (auto kind : {LearnerKind::LogisticRegression, LearnerKind::Lda, LearnerKind::GaussianNaiveBayes,
                      LearnerKind::Knn}) {
        auto spec = default_spec(kind, mix_seed(seed, static_cast<std::uint64_t>(kind)));
        r.push_back({spec, spec.grid.front()});
    }
    return r;
}

double accuracy_on(const TwoStepModel& m, const Eigen::MatrixXd& x, const std::vector<int>& y, const IndexSet& rows) {
    double ok = 0;
    for (Index i : rows) ok += m.predict(x.row(static_cast<Eigen::Index>(i))).label == y[i];
    return ok / static_cast<double>(rows.size());
}

}  // namespace

TEST_CASE("majority vote") {
    CHECK(majority_vote(std::vector<int>{1, 1, 0}) == 1);
    CHECK(majority_vote(std::vector<int>{1, 0}) == 1);
    CHECK(majority_vote(std::vector<int>{0, 0, 1}) == 0);
    CHECK_KIND(majority_vote(std::vector<int>{}), ErrorKind::EmptyVote);
    for (int L = 1; L <= 5; ++L) {
        for (unsigned b = 0; b < (1u << L); ++b) {
            const auto c = pattern(b, L);
            int sum = 0;
            for (int v : c) sum += v;
            CHECK(majority_vote(c) == (static_cast<double>(sum) / L >= 0.5 ? 1 : 0));
        }
    }
}

TEST_CASE("weighted vote") {
    CHECK(weighted_vote(std::vector<int>{1, 0, 0}, std::vector<double>{1, 0, 0}) == 1);
    CHECK(weighted_vote(std::vector<int>{1, 1, 0}, std::vector<double>{0.6, -0.2, 0.3}) == 0);
    CHECK_KIND(weighted_vote(std::vector<int>{1, 1}, std::vector<double>{1}), ErrorKind::ArityMismatch);
    CHECK_KIND(weighted_vote(std::vector<int>{}, std::vector<double>{}), ErrorKind::EmptyVote);
    CHECK_KIND(weighted_vote(std::vector<int>{1}, std::vector<double>{NAN}), ErrorKind::InvalidConfig);

    std::mt19937_64 g(1);
    std::uniform_real_distribution<double> u(-1.0, 1.5);
    for (int L = 1; L <= 5; ++L) {
        const std::vector<double> uniform(L, 1.0 / L);
        for (unsigned b = 0; b < (1u << L); ++b) {
            const auto c = pattern(b, L);
            CHECK(weighted_vote(c, uniform) == majority_vote(c));
        }
        for (int trial = 0; trial < 20; ++trial) {
            std::vector<double> w(L);
            for (auto& v : w) v = u(g);
            for (unsigned b = 0; b < (1u << L); ++b) {
                const auto c = pattern(b, L);
                double s = 0;
                for (int l = 0; l < L; ++l) s += w[l] * c[l];
                CHECK(weighted_vote(c, w) == (s >= 0.5 ? 1 : 0));
            }
        }
    }
}

TEST_CASE("meta combiner: perfect column") {
    std::mt19937_64 g(4);
    std::uniform_real_distribution<double> u;
    Eigen::MatrixXd z(40, 3);
    std::vector<int> y(40);
    for (int i = 0; i < 40; ++i) {
        y[i] = i % 3 == 0;
        z(i, 0) = u(g);
        z(i, 1) = y[i];
        z(i, 2) = u(g);
    }
    for (auto kind : {MetaKind::RandomForest, MetaKind::LinearLeastSquares}) {
        const auto m = fit_meta(z, y, kind, 5);
        CHECK(m.arity() == 3);
        for (int i = 0; i < 40; ++i) {
            CHECK(m.label(z.row(i)) == y[i]);
            CHECK(m.combine(z.row(i)) >= 0.0);
            CHECK(m.combine(z.row(i)) <= 1.0);
        }
        CHECK_KIND(m.raw(Eigen::RowVectorXd::Zero(2)), ErrorKind::ArityMismatch);
        const auto back = MetaCombiner::from_json(nlohmann::json::parse(m.to_json().dump()));
        for (int i = 0; i < 40; ++i) CHECK(back.raw(z.row(i)) == m.raw(z.row(i)));
    }
    CHECK_KIND(fit_meta(z.topRows(9), std::vector<int>(y.begin(), y.begin() + 9), MetaKind::RandomForest, 1),
               ErrorKind::SampleTooSmall);
    CHECK_KIND(fit_meta(z, std::vector<int>(40, 1), MetaKind::LinearLeastSquares, 1), ErrorKind::DegenerateClass);
    CHECK_KIND(fit_meta(z, std::vector<int>(39, 1), MetaKind::LinearLeastSquares, 1), ErrorKind::LengthMismatch);
}

TEST_CASE("linear combiner solves the normal equations") {
    Eigen::MatrixXd z(20, 2);
    std::vector<int> y;
    const double rows[4][3] = {{1, 0, 1}, {0, 1, 0}, {1, 1, 1}, {0, 0, 0}};
    for (int r = 0; r < 20; ++r) {
        z(r, 0) = rows[r % 4][0];
        z(r, 1) = rows[r % 4][1];
        y.push_back(static_cast<int>(rows[r % 4][2]));
    }
    const auto m = fit_meta(z, y, MetaKind::LinearLeastSquares, 0);
    // (X'X) w = X'y with X'X = 5[[2,1],[1,2]], X'y = 5[2,1]  =>  w = (1, 0)
    CHECK(std::fabs(m.weights()[0] - 1.0) < 1e-12);
    CHECK(std::fabs(m.weights()[1] - 0.0) < 1e-12);
}

TEST_CASE("forest combiner averages its trees") {
    std::mt19937_64 g(8);
    std::uniform_real_distribution<double> u;
    Eigen::MatrixXd z(58, 14);
    std::vector<int> y(58);
    for (int i = 0; i < 58; ++i) {
        y[i] = i % 2;
        for (int j = 0; j < 14; ++j) z(i, j) = std::clamp(u(g) * 0.7 + 0.3 * y[i], 0.0, 1.0);
    }
    const auto m = fit_meta(z, y, MetaKind::RandomForest, 77);
    REQUIRE(m.forest() != nullptr);
    const auto& trees = m.forest()->trees();
    CHECK(trees.size() == 200);
    for (const auto& t : trees) CHECK(t.depth() <= 6);
    for (int i = 0; i < 58; ++i) {
        double s = 0;
        for (const auto& t : trees) s += t.predict(z.row(i));
        CHECK(m.raw(z.row(i)) == doctest::Approx(s / 200.0).epsilon(1e-14));
    }
    const auto again = fit_meta(z, y, MetaKind::RandomForest, 77);
    CHECK(again.to_json() == m.to_json());
}

TEST_CASE("threshold is inclusive for every combiner") {
    const auto half = MetaCombiner::from_weights(Eigen::VectorXd::Constant(2, 0.25));
    CHECK(half.label(Eigen::RowVectorXd::Constant(2, 1.0)) == 1);
    CHECK(half.combine(Eigen::RowVectorXd::Constant(2, 1.0)) == 0.5);

    TwoStepModel m;
    m.second = MetaCombiner::from_weights(Eigen::VectorXd::Constant(1, 0.5));
    FirstStepModel fs;
    fs.combiner = MetaCombiner::from_weights(Eigen::VectorXd::Constant(1, 1.0));
    const auto [x, y] = oracle::separable_2d(40, 2);
    auto spec = default_spec(LearnerKind::DecisionTree);
    // depth 0 is a constant leaf at the positive fraction, here exactly 0.5
    fs.classifiers.push_back(fit(spec, {{"max_depth", 0}, {"min_leaf", 1}}, x, y));
    m.first_steps.push_back(fs);
    // first-step score 0.5 -> second score 0.25 -> label 0; with weight 1 score 0.5 -> label 1
    CHECK(m.predict(x.row(0)).score == 0.25);
    m.second = MetaCombiner::from_weights(Eigen::VectorXd::Constant(1, 1.0));
    CHECK(m.predict(x.row(0)).score == 0.5);
    CHECK(m.predict(x.row(0)).label == 1);
}

TEST_CASE("first-step model with one learner and unit weight follows that learner") {
    const auto [x, y] = oracle::gaussian_task(200, 4, 0.8, 5);
    const auto spec = default_spec(LearnerKind::LogisticRegression, 1);
    FirstStepModel fs;
    fs.classifiers.push_back(fit(spec, spec.grid.front(), x.topRows(150), std::vector<int>(y.begin(), y.begin() + 150)));
    fs.combiner = MetaCombiner::from_weights(Eigen::VectorXd::Ones(1));
    for (Eigen::Index i = 150; i < 200; ++i) CHECK(fs.label(x.row(i)) == fs.classifiers[0].predict_label(x.row(i)));
}

TEST_CASE("one perfect learner among noise keeps the first step near the best") {
    double stack = 0, best = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        std::mt19937_64 g(seed);
        std::normal_distribution<double> nd;
        const int n = 288;
        Eigen::MatrixXd x(n, 3);
        std::vector<int> y(n);
        for (int i = 0; i < n; ++i) {
            y[i] = (i + static_cast<int>(seed)) % 2;
            x(i, 0) = y[i] + 0.01 * nd(g);
            x(i, 1) = nd(g);
            x(i, 2) = nd(g);
        }
        IndexSet train(230), val(58);
        std::iota(train.begin(), train.end(), Index{0});
        std::iota(val.begin(), val.end(), Index{230});
        std::vector<int> shuffled = y;
        Rng(seed).shuffle(shuffled);
        const Eigen::MatrixXd xt = x.topRows(230);
        const std::vector<int> yt(y.begin(), y.begin() + 230), st(shuffled.begin(), shuffled.begin() + 230);
        std::vector<TrainedClassifier> cls;
        cls.push_back(fit(default_spec(LearnerKind::DecisionTree), {{"max_depth", 1}, {"min_leaf", 1}}, xt, yt));
        cls.push_back(fit(default_spec(LearnerKind::Knn), {{"k", 5}}, xt, st));
        cls.push_back(fit(default_spec(LearnerKind::Lda), {{"shrinkage", 0.0}}, xt, st));
        const auto fs = assemble_first_step(cls, x, y, val, 0, seed, {});
        double acc = 0, b = 0;
        for (Index i : val) {
            acc += fs.label(x.row(i)) == y[i];
            b += cls[0].predict_label(x.row(i)) == y[i];
        }
        stack += acc / 58.0 / 20.0;
        best += b / 58.0 / 20.0;
    }
    CHECK(stack >= best - 0.02);
}

TEST_CASE("two-step on the default partition: sizes, leakage and determinism") {
    const auto [x, y] = oracle::gaussian_task(424, 6, 0.6, 21);
    const auto p = make_paper_partition(y, 10, 3);
    const auto roster = small_roster(1);
    AuditLog audit;
    const auto m = fit_two_step(x, y, p, roster, 99, {}, &audit);
    CHECK(m.k() == 10);
    CHECK(m.second.arity() == 10);
    CHECK(m.partition_fingerprint == p.fingerprint());
    for (const auto& fs : m.first_steps) CHECK(fs.combiner.arity() == roster.size());
    int learner_fits = 0, combiner_fits = 0, second = 0;
    for (const auto& e : audit.entries()) {
        if (e.stage.rfind("first step ", 0) == 0) {
            CHECK(e.rows.size() == 230);
            ++learner_fits;
        } else if (e.stage == "first_step_combiner") {
            CHECK(e.rows.size() == 58);
            ++combiner_fits;
        } else if (e.stage == "second_step_combiner") {
            CHECK(e.rows.size() == 72);
            ++second;
        }
    }
    CHECK(learner_fits == 10);
    CHECK(combiner_fits == 10);
    CHECK(second == 1);
    CHECK(audit.violations(p.test) == 0);

    const auto again = fit_two_step(x, y, p, roster, 99);
    CHECK(again.to_json() == m.to_json());

    const auto batch = m.predict_batch(take_rows(x, p.test));
    for (std::size_t i = 0; i < p.test.size(); ++i) {
        const auto one = m.predict(x.row(static_cast<Eigen::Index>(p.test[i])));
        CHECK(batch[i].label == one.label);
        CHECK(batch[i].score == one.score);
        CHECK(one.label == (one.score >= 0.5 ? 1 : 0));
    }
    CHECK_KIND(m.predict(Eigen::RowVectorXd::Zero(5)), ErrorKind::DimensionMismatch);

    const auto back = TwoStepModel::from_json(nlohmann::json::parse(m.to_json().dump()));
    for (Index i : p.test) CHECK(back.predict(x.row(static_cast<Eigen::Index>(i))).score == m.predict(x.row(static_cast<Eigen::Index>(i))).score);

    auto leaky = p;
    leaky.first_step[3].train.push_back(p.test[0]);
    CHECK_KIND(fit_two_step(x, y, leaky, roster, 99), ErrorKind::PartitionLeak);
}

TEST_CASE("K=1 reductions") {
    const auto [x, y] = oracle::gaussian_task(424, 6, 0.6, 22);
    auto p = make_paper_partition(y, 1, 5);
    const auto roster = small_roster(2);
    std::mt19937_64 g(1);
    std::normal_distribution<double> nd;
    Eigen::MatrixXd probe(100, 6);
    for (int i = 0; i < 100; ++i)
        for (int j = 0; j < 6; ++j) probe(i, j) = nd(g) + 0.3;

    SUBCASE("unit second weight reproduces the first step") {
        auto m = fit_two_step(x, y, p, roster, 7);
        m.second = MetaCombiner::from_weights(Eigen::VectorXd::Ones(1));
        for (int i = 0; i < 100; ++i) CHECK(m.predict(probe.row(i)).label == m.first_steps[0].label(probe.row(i)));
    }
    SUBCASE("fitted linear second step over first-step labels") {
        StackOptions opts;
        opts.second_input = MetaInput::Labels;
        opts.combiner = MetaKind::LinearLeastSquares;
        const auto m = fit_two_step(x, y, p, roster, 7, opts);
        REQUIRE(m.second.weights()[0] >= 0.5);
        for (int i = 0; i < 100; ++i) CHECK(m.predict(probe.row(i)).label == m.first_steps[0].label(probe.row(i)));
    }
    SUBCASE("traditional stacking equals the K=1 two-step first step on the same subsets") {
        p.first_step[0] = {p.training_pool, p.validation0};
        const auto two = fit_two_step(x, y, p, roster, 11);
        const auto trad = fit_traditional_stack(x, y, p, roster, 11);
        CHECK(trad.combiner.to_json() == two.first_steps[0].combiner.to_json());
        for (int i = 0; i < 100; ++i) {
            CHECK(trad.score(probe.row(i)) == two.first_steps[0].score(probe.row(i)));
            CHECK(trad.label(probe.row(i)) == two.first_steps[0].label(probe.row(i)));
        }
    }
}

TEST_CASE("weighted voting concentrates on a perfect learner") {
    std::mt19937_64 g(3);
    std::normal_distribution<double> nd;
    Eigen::MatrixXd x(200, 3);
    std::vector<int> y(200), noise(200);
    for (int i = 0; i < 200; ++i) {
        y[i] = i % 2;
        noise[i] = (i / 2) % 2;
        x(i, 0) = y[i] + 0.01 * nd(g);
        x(i, 1) = nd(g);
        x(i, 2) = nd(g);
    }
    std::vector<TrainedClassifier> cls;
    const Eigen::MatrixXd xt = x.topRows(140);
    const std::vector<int> yt(y.begin(), y.begin() + 140);
    std::vector<int> nt(noise.begin(), noise.begin() + 140);
    cls.push_back(fit(default_spec(LearnerKind::Knn), {{"k", 5}}, xt, nt));
    cls.push_back(fit(default_spec(LearnerKind::DecisionTree), {{"max_depth", 1}, {"min_leaf", 1}}, xt, yt));
    cls.push_back(fit(default_spec(LearnerKind::GaussianNaiveBayes), {{"var_smoothing", 1e-9}}, xt, nt));
    IndexSet val(60);
    std::iota(val.begin(), val.end(), Index{140});
    const auto v = assemble_weighted_vote(cls, x, y, val);
    const auto& w = v.combiner.weights();
    Eigen::Index arg;
    w.cwiseAbs().maxCoeff(&arg);
    CHECK(arg == 1);
    for (Index i : val) CHECK(v.label(x.row(i)) == y[i]);
}

TEST_CASE("top_indices ranks with stable ties") {
    const std::vector<double> v{0.7, 0.9, 0.7, 0.8, 0.9};
    CHECK(top_indices(v, 3) == std::vector<Index>{1, 4, 3});
    CHECK(top_indices(v, 10).size() == 5);
}

TEST_CASE("a constant dummy learner degrades two-step accuracy by at most 3 points") {
    double base = 0, dummy = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto [x, y] = oracle::gaussian_task(300, 6, 0.6, 500 + seed);
        const auto p = make_paper_partition(y, 3, seed);
        auto roster = small_roster(seed);
        base += accuracy_on(fit_two_step(x, y, p, roster, seed), x, y, p.test) / 20.0;
        auto spec = default_spec(LearnerKind::DecisionTree, 1);
        roster.push_back({spec, {{"max_depth", 0}, {"min_leaf", 1}}});
        dummy += accuracy_on(fit_two_step(x, y, p, roster, seed), x, y, p.test) / 20.0;
    }
    CHECK(std::fabs(base - dummy) <= 0.03);
}

TEST_CASE("audit log counts forbidden rows") {
    AuditLog log;
    log.record("a", std::vector<Index>{1, 2, 3});
    log.record("b", std::vector<Index>{3, 4});
    CHECK(log.violations(std::vector<Index>{3}) == 2);
    CHECK(log.violations(std::vector<Index>{9}) == 0);
    log.clear();
    CHECK(log.entries().empty());
}

#include "helpers.hpp"
#include "oracles.hpp"

#include "twostep/random.hpp"
#include "twostep/stats.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace twostep;

namespace {

std::vector<double> sample(std::mt19937_64& g, int n, double mean, double sd) {
    std::normal_distribution<double> nd(mean, sd);
    std::vector<double> v(n);
    for (auto& x : v) x = nd(g);
    return v;
}

Eigen::MatrixXd random_block(int n, int m, std::uint64_t seed) {
    std::mt19937_64 g(seed);
    std::normal_distribution<double> nd;
    Eigen::MatrixXd mix(m, m);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j) mix(i, j) = nd(g);
    Eigen::MatrixXd z(n, m);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j) z(i, j) = nd(g);
    Eigen::MatrixXd x = z * mix;
    for (int j = 0; j < m; ++j) x.col(j) = x.col(j) * (1.0 + j) + Eigen::VectorXd::Constant(n, 3.0 * j);
    return x;
}

Eigen::MatrixXd brute_correlation(const Eigen::MatrixXd& x) {
    const auto n = x.rows(), m = x.cols();
    Eigen::MatrixXd c(m, m);
    for (int a = 0; a < m; ++a) {
        for (int b = 0; b < m; ++b) {
            double ma = x.col(a).mean(), mb = x.col(b).mean(), sab = 0, saa = 0, sbb = 0;
            for (int i = 0; i < n; ++i) {
                sab += (x(i, a) - ma) * (x(i, b) - mb);
                saa += (x(i, a) - ma) * (x(i, a) - ma);
                sbb += (x(i, b) - mb) * (x(i, b) - mb);
            }
            c(a, b) = sab / std::sqrt(saa * sbb);
        }
    }
    return c;
}

}  // namespace

TEST_CASE("welch t-test fixed examples") {
    const std::vector<double> a{1, 2, 3, 4, 5}, b{2, 3, 4, 5, 6};
    const auto r = welch_t_test(a, b);
    CHECK(r.statistic == doctest::Approx(-1.0).epsilon(1e-14));
    CHECK(r.degrees_of_freedom == doctest::Approx(8.0).epsilon(1e-14));
    // frozen from the quadrature oracle
    CHECK(std::fabs(r.p_value - 0.34659350708733416) < 1e-9);
    CHECK(std::fabs(r.p_value - oracle::t_two_sided_p(-1.0, 8.0)) < 1e-6);

    const auto same = welch_t_test(a, a);
    CHECK(same.statistic == 0.0);
    CHECK(same.p_value == 1.0);

    CHECK_KIND(welch_t_test(std::vector<double>{1}, b), ErrorKind::SampleTooSmall);
    CHECK_KIND(welch_t_test(std::vector<double>{2, 2, 2}, b), ErrorKind::ZeroVariance);
}

TEST_CASE("welch p-values match the quadrature oracle") {
    std::mt19937_64 g(42);
    std::uniform_int_distribution<int> size(2, 12);
    std::uniform_real_distribution<double> u(0.2, 3.0);
    for (int trial = 0; trial < 50; ++trial) {
        const auto a = sample(g, size(g), u(g), u(g));
        const auto b = sample(g, size(g), u(g), u(g));
        const auto r = welch_t_test(a, b);
        const auto w = oracle::welch(a, b);
        CHECK(r.statistic == doctest::Approx(w.t).epsilon(1e-12));
        CHECK(r.degrees_of_freedom == doctest::Approx(w.df).epsilon(1e-12));
        CHECK(std::fabs(r.p_value - oracle::t_two_sided_p(w.t, w.df)) < 1e-6);
    }
}

TEST_CASE("t-test properties") {
    std::mt19937_64 g(7);
    for (int trial = 0; trial < 20; ++trial) {
        const auto a = sample(g, 15, 0.3 * trial, 1.0);
        const auto b = sample(g, 11, 0.0, 2.0);
        const auto ab = welch_t_test(a, b);
        const auto ba = welch_t_test(b, a);
        CHECK(ab.statistic == doctest::Approx(-ba.statistic));
        CHECK(ab.p_value == doctest::Approx(ba.p_value));
        CHECK(ab.p_value >= 0.0);
        CHECK(ab.p_value <= 1.0);
        CHECK(ab.degrees_of_freedom > 0.0);
        CHECK((ab.statistic > 0) == (ab.mean_case > ab.mean_control));
        const auto pooled = t_test(a, b, TTestKind::Pooled);
        CHECK(pooled.degrees_of_freedom == 24.0);
    }
}

TEST_CASE("student t cdf sanity") {
    CHECK(student_t_cdf(0.0, 3.0) == doctest::Approx(0.5));
    for (double df : {1.0, 2.5, 7.0, 30.0}) {
        for (double t : {-3.0, -0.7, 0.4, 2.2}) {
            CHECK(student_t_cdf(t, df) + student_t_cdf(-t, df) == doctest::Approx(1.0).epsilon(1e-12));
            CHECK(std::fabs(student_t_two_sided_p(t, df) - oracle::t_two_sided_p(t, df)) < 1e-6);
        }
    }
    // Cauchy closed form
    CHECK(student_t_cdf(1.0, 1.0) == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("screening") {
    const auto& d = testing::default_cohort();
    const auto entries = screen_features(d, 0.05);
    REQUIRE(entries.size() == 64);
    for (std::size_t i = 0; i < entries.size(); ++i) {
        CHECK(entries[i].feature == FeatureSchema::standard().name(i));
        CHECK(entries[i].significant == (entries[i].result.p_value <= 0.05));
    }
    const auto csv = screening_csv(entries);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 65);

    // boundary: alpha equal to the p-value counts as significant
    const auto at = screen_features(d, entries[0].result.p_value);
    CHECK(at[0].significant);

    // overwhelming separation
    auto shifted = d;
    for (Index i = 0; i < d.size(); ++i) {
        if (d.labels[i] == 1) {
            for (Index c = 0; c < 64; ++c) shifted.features(i, c) += 10.0 * 100.0;
        }
    }
    for (const auto& e : screen_features(shifted, 0.05)) CHECK(e.significant);
}

TEST_CASE("screening under label permutation is calibrated") {
    const auto& d = testing::default_cohort();
    auto perm = d;
    std::size_t hits = 0, total = 0;
    for (std::uint64_t s = 0; s < 200; ++s) {
        Rng(s).shuffle(perm.labels);
        for (const auto& e : screen_features(perm, 0.05)) {
            hits += e.significant;
            ++total;
        }
    }
    const double rate = static_cast<double>(hits) / static_cast<double>(total);
    // features are correlated, so use a generous band around alpha
    CHECK(rate > 0.03);
    CHECK(rate < 0.07);
}

TEST_CASE("correlation matrix") {
    const auto& d = testing::default_cohort();
    const std::vector<std::string> names{"PSS_17", "PSS_13", "GLPS_Epi", "PSD"};
    const auto c = correlation_matrix(d, names);
    CHECK(c(0, 0) == doctest::Approx(1.0));
    CHECK((c - c.transpose()).cwiseAbs().maxCoeff() < 1e-15);
    CHECK(c.cwiseAbs().maxCoeff() <= 1.0 + 1e-12);

    Eigen::MatrixXd xy(5, 2);
    xy << 1, -1, 2, -2, 3, -3, 4, -4, 7, -7;
    CHECK(correlation_matrix(xy)(0, 1) == doctest::Approx(-1.0));

    Eigen::MatrixXd raw(d.size(), 3);
    for (int j = 0; j < 3; ++j) raw.col(j) = Eigen::Map<const Eigen::VectorXd>(d.column(j).data(), d.size());
    Eigen::MatrixXd affine = raw;
    affine.col(1) = 4.0 * affine.col(1).array() + 9.0;
    CHECK((correlation_matrix(raw) - correlation_matrix(affine)).cwiseAbs().maxCoeff() < 1e-12);

    Eigen::MatrixXd flat = raw;
    flat.col(2).setConstant(1.0);
    CHECK_KIND(correlation_matrix(flat), ErrorKind::ZeroVariance);
}

TEST_CASE("apex and apical PSS correlate more strongly than mid or basal with apex") {
    const auto& d = testing::default_cohort();
    auto mean_abs = [&](std::vector<int> a, std::vector<int> b) {
        double s = 0;
        int n = 0;
        for (int i : a) {
            for (int j : b) {
                if (i == j) continue;
                const std::vector<std::string> f{testing::pss_name(i), testing::pss_name(j)};
                s += std::fabs(correlation_matrix(d, f)(0, 1));
                ++n;
            }
        }
        return s / n;
    };
    const double apical = mean_abs({13, 14, 15, 16, 17}, {13, 14, 15, 16, 17});
    const double other = mean_abs({1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12}, {17});
    CHECK(apical > other);
}

TEST_CASE("PCA matches a Jacobi eigensolver on 5-dimensional blocks") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto x = random_block(60, 5, seed);
        const auto model = fit_pca_matrix(x, Block::PSS);
        const auto [vals, vecs] = oracle::jacobi_eigen(brute_correlation(x));
        for (int k = 0; k < 5; ++k) {
            CHECK(std::fabs(model.eigenvalues[k] - vals[k]) < 1e-8);
            for (int j = 0; j < 5; ++j) CHECK(std::fabs(model.loadings(j, k) - vecs(j, k)) < 1e-8);
        }
    }
}

TEST_CASE("PCA structural invariants on the PSS block") {
    const auto& d = testing::default_cohort();
    const auto m = fit_pca(d, Block::PSS);
    CHECK(m.retained == 3);
    CHECK(m.eigenvalues.sum() == doctest::Approx(17.0).epsilon(1e-10));
    for (int k = 0; k + 1 < 17; ++k) CHECK(m.eigenvalues[k] >= m.eigenvalues[k + 1]);
    const Eigen::MatrixXd gram = m.loadings.transpose() * m.loadings;
    CHECK((gram - Eigen::MatrixXd::Identity(17, 17)).cwiseAbs().maxCoeff() < 1e-10);
    // first component is an overall average: one sign throughout
    CHECK((m.loadings.col(0).array() > 0).all());
    CHECK(fit_pca(d, Block::SSR).retained == 3);
    CHECK(fit_pca(d, Block::TP).retained == 2);
    CHECK_KIND(fit_pca(d, Block::GLPS), ErrorKind::SchemaMismatch);
}

TEST_CASE("PCA rank-one limit") {
    std::mt19937_64 g(3);
    std::normal_distribution<double> nd;
    Eigen::MatrixXd x(200, 17);
    for (int i = 0; i < 200; ++i) {
        const double common = nd(g);
        for (int j = 0; j < 17; ++j) x(i, j) = common + 1e-4 * nd(g);
    }
    const auto m = fit_pca_matrix(x, Block::PSS);
    CHECK(m.eigenvalues[0] == doctest::Approx(17.0).epsilon(1e-4));
    for (int j = 0; j < 17; ++j) CHECK(m.loadings(j, 0) == doctest::Approx(1.0 / std::sqrt(17.0)).epsilon(1e-3));

    Eigen::MatrixXd flat = x;
    flat.col(4).setConstant(2.0);
    CHECK_KIND(fit_pca_matrix(flat, Block::PSS), ErrorKind::RankDeficient);
    CHECK_KIND(fit_pca_matrix(x.topRows(17), Block::PSS), ErrorKind::SampleTooSmall);
}

TEST_CASE("elbow rule") {
    Eigen::VectorXd a(6);
    a << 10, 1, 1, 1, 1, 1;
    CHECK(elbow_count(a) == 1);
    Eigen::VectorXd b(6);
    b << 8, 6, 1, 0.9, 0.8, 0.7;
    CHECK(elbow_count(b) == 2);
    const auto m = fit_pca(testing::default_cohort(), Block::PSS, PcPolicy::Elbow);
    CHECK(m.retained >= 1);
    CHECK(m.retained == elbow_count(m.eigenvalues));
}

TEST_CASE("projection") {
    const auto& d = testing::default_cohort();
    const auto m = fit_pca(d, Block::PSS);
    CHECK(project(m, m.center).cwiseAbs().maxCoeff() < 1e-12);
    const Eigen::VectorXd row = m.center + m.scale.cwiseProduct(m.loadings.col(0));
    const auto s = project(m, row);
    CHECK(s[0] == doctest::Approx(1.0).epsilon(1e-10));
    CHECK(std::fabs(s[1]) < 1e-10);
    CHECK(std::fabs(s[2]) < 1e-10);

    const auto cols = FeatureSchema::standard().columns(Block::PSS);
    for (Index i = 0; i < 10; ++i) {
        Eigen::VectorXd raw(17);
        for (int j = 0; j < 17; ++j) raw[j] = d.features(i, cols[j]);
        const Eigen::VectorXd z = (raw - m.center).cwiseQuotient(m.scale);
        const Eigen::VectorXd back = m.loadings * project_all_components(m, raw);
        CHECK((back - z).cwiseAbs().maxCoeff() < 1e-8);
    }
}

TEST_CASE("projection is invariant to rescaling a segment") {
    const auto& d = testing::default_cohort();
    auto scaled = d;
    const auto col = FeatureSchema::standard().columns(Block::PSS)[4];
    scaled.features.col(col) *= 3.0;
    const auto a = build_model_input(d, fit_block_pca(d, iota_indices(d.size()), PcPolicy::PaperFixed));
    const auto b = build_model_input(scaled, fit_block_pca(scaled, iota_indices(d.size()), PcPolicy::PaperFixed));
    CHECK((a.x.leftCols(8) - b.x.leftCols(8)).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("model input layout") {
    const auto& d = testing::default_cohort();
    const auto pca = fit_block_pca(d, iota_indices(d.size()), PcPolicy::PaperFixed);
    const auto in = build_model_input(d, pca);
    CHECK(in.x.rows() == 424);
    CHECK(in.x.cols() == 28);
    CHECK(in.names.size() == 28);
    CHECK(in.names[8] == "GS_MV_Endo");
    CHECK(in.names[17] == "GLPS_Endo");
    CHECK(in.names[20] == "PSD");
    CHECK(in.names[27] == "family_history");

    // a subject at the block centers maps to zeros in the first 8 entries
    Eigen::VectorXd raw = d.features.row(0).transpose();
    const auto& s = FeatureSchema::standard();
    for (auto [b, m] : {std::pair{Block::PSS, &pca.pss}, {Block::SSR, &pca.ssr}, {Block::TP, &pca.tp}}) {
        const auto cols = s.columns(b);
        for (int j = 0; j < 17; ++j) raw[cols[j]] = m->center[j];
    }
    const auto r = reduce_row(raw, pca, InputKind::Full);
    CHECK(r.head(8).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((reduce_row(d.features.row(5).transpose(), pca, InputKind::Full).transpose() - in.x.row(5))
              .cwiseAbs()
              .maxCoeff() < 1e-12);

    std::vector<Index> rev(d.size());
    for (Index i = 0; i < d.size(); ++i) rev[i] = d.size() - 1 - i;
    const auto permuted = build_model_input(d.subset(rev), pca);
    for (Index i = 0; i < d.size(); ++i) CHECK(permuted.x.row(i) == in.x.row(rev[i]));

    const auto g = build_glps_input(d);
    CHECK(g.x.cols() == 10);
    CHECK(g.names.front() == "GLPS_Endo");
    CHECK(reduce_row(raw, pca, InputKind::GlpsOnly).size() == 10);
}

// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// non-zero when any criterion fails.
//
//   acceptance [--replicates N] [--out DIR]

#include "oracles.hpp"

#include "twostep/ensemble.hpp"
#include "twostep/experiment.hpp"
#include "twostep/metrics.hpp"
#include "twostep/stats.hpp"
#include "twostep/synthgen.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>
#include <string>

namespace ts = twostep;

namespace {

// Pinned tolerances.
constexpr double kWelchTol = 1e-6;
constexpr double kPcaTol = 1e-8;
constexpr double kAucTol = 1e-12;
constexpr double kTwoStepGap = 0.02;
constexpr double kDiversityGap = 0.01;
constexpr double kGlpsGap = 0.10;
constexpr int kCalibrationSeeds = 100;
constexpr int kCalibrationHits = 90;
constexpr double kSmokeTol = 0.05;
constexpr int kPartitionSeeds = 100;
constexpr int kFullReplicates = 50;

int failures = 0;

void report(int id, bool ok, const std::string& title, const std::string& detail) {
    std::printf("%s  %2d  %-34s %s\n", ok ? "PASS" : "FAIL", id, title.c_str(), detail.c_str());
    std::fflush(stdout);
    if (!ok) ++failures;
}

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
    char buf[256];
    std::snprintf(buf, sizeof buf, f, a, b, c, d);
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// 1 ---------------------------------------------------------------------------
void voting() {
    const auto t0 = std::chrono::steady_clock::now();
    std::mt19937_64 g(2024);
    std::uniform_real_distribution<double> u(-1.0, 1.5);
    long mismatches = 0, cases = 0;
    for (int L = 1; L <= 5; ++L) {
        for (int trial = 0; trial < 20; ++trial) {
            std::vector<double> w(L);
            for (auto& v : w) v = u(g);
            for (unsigned b = 0; b < (1u << L); ++b) {
                std::vector<int> c(L);
                double s = 0;
                int ones = 0;
                for (int l = 0; l < L; ++l) {
                    c[l] = (b >> l) & 1u;
                    s += w[l] * c[l];
                    ones += c[l];
                }
                mismatches += ts::weighted_vote(c, w) != (s >= 0.5 ? 1 : 0);
                mismatches += ts::majority_vote(c) != (2 * ones >= L ? 1 : 0);
                cases += 2;
            }
        }
    }
    const double secs = seconds_since(t0);
    report(1, mismatches == 0 && secs < 1.0, "voting oracle equivalence",
           fmt("%.0f/%.0f patterns agree, %.3f s", static_cast<double>(cases - mismatches), static_cast<double>(cases), secs));
}

// 2 ---------------------------------------------------------------------------
void statistics() {
    const auto t0 = std::chrono::steady_clock::now();
    std::mt19937_64 g(99);
    std::uniform_int_distribution<int> size(2, 12);
    std::uniform_real_distribution<double> u(0.2, 3.0);
    double welch_err = 0;
    for (int trial = 0; trial < 50; ++trial) {
        auto draw = [&](int n, double m, double s) {
            std::normal_distribution<double> nd(m, s);
            std::vector<double> v(n);
            for (auto& x : v) x = nd(g);
            return v;
        };
        const auto a = draw(size(g), u(g), u(g));
        const auto b = draw(size(g), u(g), u(g));
        const auto w = oracle::welch(a, b);
        welch_err = std::max(welch_err, std::fabs(ts::welch_t_test(a, b).p_value - oracle::t_two_sided_p(w.t, w.df)));
    }

    double pca_err = 0;
    std::normal_distribution<double> nd;
    for (int trial = 0; trial < 20; ++trial) {
        Eigen::MatrixXd mix(5, 5), z(40, 5);
        for (int i = 0; i < 5; ++i)
            for (int j = 0; j < 5; ++j) mix(i, j) = nd(g);
        for (int i = 0; i < 40; ++i)
            for (int j = 0; j < 5; ++j) z(i, j) = nd(g);
        const Eigen::MatrixXd x = z * mix;
        const auto model = ts::fit_pca_matrix(x, ts::Block::PSS);
        Eigen::MatrixXd c = x.rowwise() - x.colwise().mean();
        Eigen::MatrixXd cov = c.transpose() * c;
        const Eigen::VectorXd sd = cov.diagonal().cwiseSqrt();
        for (int i = 0; i < 5; ++i)
            for (int j = 0; j < 5; ++j) cov(i, j) /= sd[i] * sd[j];
        const auto [vals, vecs] = oracle::jacobi_eigen(cov);
        pca_err = std::max(pca_err, (model.eigenvalues - vals).cwiseAbs().maxCoeff());
        pca_err = std::max(pca_err, (model.loadings - vecs).cwiseAbs().maxCoeff());
    }

    double auc_err = 0;
    std::uniform_int_distribution<int> n_dist(2, 50);
    std::uniform_int_distribution<int> level(0, 5);
    for (int trial = 0; trial < 50; ++trial) {
        const int n = n_dist(g);
        std::vector<double> s(n);
        std::vector<int> y(n);
        for (int i = 0; i < n; ++i) {
            s[i] = trial % 2 ? level(g) : std::uniform_real_distribution<double>()(g);
            y[i] = i % 2;
        }
        auc_err = std::max(auc_err, std::fabs(ts::roc_and_auc(s, y).auc - oracle::concordance_auc(s, y)));
    }
    const double secs = seconds_since(t0);
    const bool ok = welch_err <= kWelchTol && pca_err <= kPcaTol && auc_err <= kAucTol && secs < 10.0;
    report(2, ok, "statistics oracles",
           fmt("max |dp| %.2e, max |dPCA| %.2e, max |dAUC| %.2e, %.2f s", welch_err, pca_err, auc_err, secs));
}

// 3 ---------------------------------------------------------------------------
void reductions() {
    bool uniform_ok = true;
    for (int L = 1; L <= 5; ++L) {
        const std::vector<double> w(L, 1.0 / L);
        for (unsigned b = 0; b < (1u << L); ++b) {
            std::vector<int> c(L);
            for (int l = 0; l < L; ++l) c[l] = (b >> l) & 1u;
            uniform_ok &= ts::weighted_vote(c, w) == ts::majority_vote(c);
        }
    }

    const auto d = ts::generate_cohort(ts::default_calibration());
    auto part = ts::make_paper_partition(d, 1, 17);
    const auto pca = ts::fit_block_pca(d, part.training_pool, ts::PcPolicy::PaperFixed);
    const auto in = ts::build_model_input(d, pca);
    ts::Roster roster;
    for (const auto& spec : ts::default_roster(5)) roster.push_back({spec, spec.grid.front()});

    std::mt19937_64 g(5);
    Eigen::MatrixXd probe(100, in.x.cols());
    for (int i = 0; i < 100; ++i) {
        const auto src = static_cast<Eigen::Index>(part.test[static_cast<std::size_t>(i) % part.test.size()]);
        for (Eigen::Index j = 0; j < in.x.cols(); ++j) {
            probe(i, j) = in.x(src, j) + (j < 21 ? 0.3 * std::normal_distribution<double>()(g) : 0.0);
        }
    }

    ts::StackOptions opts;
    opts.combiner = ts::MetaKind::LinearLeastSquares;
    opts.second_input = ts::MetaInput::Labels;
    const auto k1 = ts::fit_two_step(in.x, d.labels, part, roster, 3, opts);
    int k1_diff = 0;
    for (int i = 0; i < 100; ++i) k1_diff += k1.predict(probe.row(i)).label != k1.first_steps[0].label(probe.row(i));

    part.first_step[0] = {part.training_pool, part.validation0};
    const auto two = ts::fit_two_step(in.x, d.labels, part, roster, 3);
    const auto trad = ts::fit_traditional_stack(in.x, d.labels, part, roster, 3);
    int trad_diff = 0;
    for (int i = 0; i < 100; ++i) {
        trad_diff += trad.score(probe.row(i)) != two.first_steps[0].score(probe.row(i));
        trad_diff += trad.label(probe.row(i)) != two.first_steps[0].label(probe.row(i));
    }
    report(3, uniform_ok && k1_diff == 0 && trad_diff == 0, "structural reductions",
           std::string("uniform=majority ") + (uniform_ok ? "yes" : "no") +
               fmt("; K=1 label diffs %.0f/100; trad vs two-step K=1 diffs %.0f", k1_diff, trad_diff));
}

// 4-7, 9 --------------------------------------------------------------------
struct FullRun {
    ts::EvaluationReport report;
    double seconds = 0.0;
};

FullRun full_run(int replicates, const std::filesystem::path& out) {
    ts::ExperimentConfig cfg;
    cfg.replicates = replicates;
    const auto t0 = std::chrono::steady_clock::now();
    FullRun r{ts::run_experiment(cfg), 0.0};
    r.seconds = seconds_since(t0);
    ts::emit_reports(r.report, out);
    return r;
}

void leakage(const FullRun& run) {
    std::size_t violations = 0;
    for (const auto& r : run.report.replicates) violations += r.audit_violations;
    const bool ok = violations == 0 && run.report.succeeded() == static_cast<int>(run.report.replicates.size());
    report(4, ok, "leakage audit",
           fmt("%.0f violations over %.0f replicates (%.0f succeeded)", static_cast<double>(violations),
               static_cast<double>(run.report.replicates.size()), run.report.succeeded()));
}

void ordering(const FullRun& run) {
    const auto acc = run.report.ensemble_accuracy();
    const auto auc = run.report.ensemble_auc();
    const double ind = run.report.mean_individual_accuracy();
    const double ind_auc = run.report.mean_individual_auc();
    const double a2 = acc.at("two_step_14").mean, at = acc.at("trad_stack_14").mean, aw = acc.at("weighted_vote_14").mean;
    const double u2 = auc.at("two_step_14").mean, ut = auc.at("trad_stack_14").mean, uw = auc.at("weighted_vote_14").mean;
    const bool ok = a2 > at && at > aw && aw > ind && a2 - at >= kTwoStepGap && u2 > ut && ut > uw && uw > ind_auc;
    report(5, ok, "ordering two-step > trad > vote > ind",
           fmt("acc %.3f / %.3f / %.3f / ", a2, at, aw, ind) + fmt("%.3f; ", ind) +
               fmt("auc %.3f / %.3f / %.3f / %.3f", u2, ut, uw, ind_auc) + fmt("; runtime %.0f s", run.seconds));
}

void diversity(const FullRun& run) {
    const auto acc = run.report.ensemble_accuracy();
    const double d2 = acc.at("two_step_14").mean - acc.at("two_step_3").mean;
    const double dt = acc.at("trad_stack_14").mean - acc.at("trad_stack_3").mean;
    report(6, d2 >= kDiversityGap && dt >= kDiversityGap, "diversity 14 vs 3 models",
           fmt("two-step %+.3f, traditional %+.3f (need >= %.2f)", d2, dt, kDiversityGap));
}

void glps_ablation(const FullRun& run) {
    const auto acc = run.report.ensemble_accuracy();
    const double gap = acc.at("two_step_14").mean - acc.at("two_step_glps_only").mean;
    report(7, gap >= kGlpsGap, "GLPS-only ablation",
           fmt("two_step_14 %.3f, glps_only %.3f, gap %.3f (need >= %.2f)", acc.at("two_step_14").mean,
               acc.at("two_step_glps_only").mean, gap, kGlpsGap));
}

// 8 ---------------------------------------------------------------------------
void calibration() {
    auto cfg = ts::default_calibration();
    std::map<std::string, int> sig;
    for (int s = 0; s < kCalibrationSeeds; ++s) {
        cfg.seed = 9000 + static_cast<std::uint64_t>(s);
        for (const auto& e : ts::screen_features(ts::generate_cohort(cfg), 0.05)) sig[e.feature] += e.significant;
    }
    int worst_radial = kCalibrationSeeds;
    for (const auto& name : ts::FeatureSchema::standard().names()) {
        if (name.rfind("GS_", 0) == 0) worst_radial = std::min(worst_radial, kCalibrationSeeds - sig[name]);
    }
    const auto d = ts::generate_cohort(ts::default_calibration());
    const auto col = ts::FeatureSchema::standard().find("smoke");
    double case_n = 0, case_s = 0, ctrl_n = 0, ctrl_s = 0;
    for (ts::Index i = 0; i < d.size(); ++i) {
        (d.labels[i] ? case_n : ctrl_n) += 1;
        (d.labels[i] ? case_s : ctrl_s) += d.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(col));
    }
    const double rc = case_s / case_n, rn = ctrl_s / ctrl_n;
    const bool ok = sig["GLPS_Epi"] >= kCalibrationHits && sig["GLPS_Mid"] >= kCalibrationHits &&
                    worst_radial >= kCalibrationHits && std::fabs(rc - 0.525) <= kSmokeTol &&
                    std::fabs(rn - 0.28) <= kSmokeTol;
    report(8, ok, "calibration pattern",
           fmt("GLPS Epi %.0f/100, Mid %.0f/100 significant; radial worst %.0f/100 non-significant; ", sig["GLPS_Epi"],
               sig["GLPS_Mid"], worst_radial) +
               fmt("smoke %.3f vs %.3f", rc, rn));
}

// 9 ---------------------------------------------------------------------------
void determinism(const std::filesystem::path& out) {
    ts::ExperimentConfig cfg;
    cfg.replicates = 1;
    const auto d = ts::load_or_generate(cfg);
    auto bytes = [&](const std::string& tag) {
        ts::emit_reports(ts::run_experiment(cfg, d), out / tag);
        std::ifstream in(out / tag / "report.json", std::ios::binary);
        std::stringstream ss;
        ss << in.rdbuf();
        return ss.str();
    };
    const bool same_report = bytes("det_a") == bytes("det_b");

    auto train_cfg = cfg;
    train_cfg.ensembles = {"two_step_14"};
    ts::SavedModel model;
    const auto rep = ts::run_replicate(d, train_cfg, 0, &model);
    int diffs = rep.ok ? 0 : 100;
    if (rep.ok) {
        ts::save_model(model, out / "model.json");
        const auto back = ts::load_model(out / "model.json");
        std::mt19937_64 g(1);
        for (int i = 0; i < 100; ++i) {
            Eigen::VectorXd raw = d.features.row(i).transpose();
            for (int j = 0; j < 64; ++j) raw[j] += 0.1 * std::normal_distribution<double>()(g);
            const std::span<const double> row(raw.data(), 71);
            const auto a = ts::score_subject(model, row);
            const auto b = ts::score_subject(back, row);
            diffs += a.label != b.label || a.score != b.score || a.first_step_scores != b.first_step_scores;
        }
    }
    report(9, same_report && diffs == 0, "determinism and persistence",
           std::string(same_report ? "report.json byte-identical" : "report.json differs") +
               fmt("; save/load prediction diffs %.0f/100", diffs));
}

// 10 --------------------------------------------------------------------------
void partitions() {
    const auto d = ts::generate_cohort(ts::default_calibration());
    const double rate = static_cast<double>(d.positives()) / static_cast<double>(d.size());
    int bad = 0;
    auto strat = [&](const ts::IndexSet& s) {
        double pos = 0;
        for (auto i : s) pos += d.labels[i];
        return std::fabs(pos - rate * static_cast<double>(s.size())) <= 1.0 + 1e-12;
    };
    for (int seed = 0; seed < kPartitionSeeds; ++seed) {
        const auto p = ts::make_paper_partition(d, 10, static_cast<std::uint64_t>(seed));
        bool ok = p.test.size() == 64 && p.validation0.size() == 72 && p.training_pool.size() == 288 && p.k() == 10;
        ok &= strat(p.test) && strat(p.validation0) && strat(p.training_pool);
        for (const auto& f : p.first_step) {
            ok &= f.train.size() == 230 && f.validation.size() == 58 && strat(f.train) && strat(f.validation);
        }
        bad += !ok;
    }
    report(10, bad == 0, "partition exactness",
           fmt("%.0f/%.0f seeds with 64/72/288 and ten (230,58) stratified splits",
               static_cast<double>(kPartitionSeeds - bad), static_cast<double>(kPartitionSeeds)));
}

}  // namespace

int main(int argc, char** argv) {
    int replicates = kFullReplicates;
    std::filesystem::path out = "acceptance_output";
    for (int i = 1; i + 1 < argc; i += 2) {
        if (!std::strcmp(argv[i], "--replicates")) replicates = std::atoi(argv[i + 1]);
        if (!std::strcmp(argv[i], "--out")) out = argv[i + 1];
    }
    std::filesystem::create_directories(out);
    try {
        voting();
        statistics();
        reductions();
        const auto run = full_run(replicates, out / "default_run");
        leakage(run);
        ordering(run);
        diversity(run);
        glps_ablation(run);
        calibration();
        determinism(out);
        partitions();
    } catch (const std::exception& e) {
        std::printf("FAIL  acceptance aborted: %s\n", e.what());
        return 2;
    }
    std::printf("%d of 10 criteria failed\n", failures);
    return failures == 0 ? 0 : 1;
}

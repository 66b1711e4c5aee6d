// Command-line front end: generate, screen, train, evaluate, score.

#include "twostep/error.hpp"
#include "twostep/experiment.hpp"

#include <CLI11.hpp>

#include <charconv>
#include <cstdlib>
#include <iomanip>
#include <iostream>
#include <sstream>

namespace ts = twostep;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitReplicates = 4;

int exit_code(ts::ErrorKind kind) {
    switch (kind) {
        case ts::ErrorKind::InvalidConfig:
        case ts::ErrorKind::VersionMismatch: return kExitConfig;
        default: return kExitData;
    }
}

struct Common {
    std::string config;
    std::string out;
    std::string data;
    std::uint64_t seed = 0;
    bool seed_set = false;
    int replicates = 0;
};

ts::ExperimentConfig resolve(const Common& c) {
    ts::ExperimentConfig cfg = c.config.empty() ? ts::ExperimentConfig{} : ts::load_experiment_config(c.config);
    if (c.seed_set) {
        cfg.seed = c.seed;
        cfg.generator.seed = c.seed;
    }
    if (c.replicates > 0) cfg.replicates = c.replicates;
    if (!c.data.empty()) cfg.cohort_path = c.data;
    if (const char* env = std::getenv("TWOSTEP_OUTPUT_DIR"); env && *env) cfg.output_dir = env;
    if (!c.out.empty()) cfg.output_dir = c.out;
    cfg.validate();
    return cfg;
}

std::vector<double> parse_row(const std::string& text) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
        double v = 0.0;
        const auto* b = cell.data();
        while (b < cell.data() + cell.size() && *b == ' ') ++b;
        const auto [p, ec] = std::from_chars(b, cell.data() + cell.size(), v);
        if (ec != std::errc{} || p == b) ts::fail(ts::ErrorKind::NonNumericCell, "row value '" + cell + "'");
        out.push_back(v);
    }
    return out;
}

void print_score(const std::string& id, const ts::SubjectScore& s) {
    std::cout << std::setprecision(6) << id << " label=" << s.label << " score=" << s.score << " first_step=";
    for (std::size_t k = 0; k < s.first_step_scores.size(); ++k) std::cout << (k ? "," : "") << s.first_step_scores[k];
    std::cout << '\n';
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Two-step stacking toolkit"};
    app.require_subcommand(1);
    Common c;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", c.config, "experiment config (JSON)");
        sub->add_option("--out", c.out, "output path or directory");
        sub->add_option("--seed", c.seed, "master seed")->each([&](const std::string&) { c.seed_set = true; });
    };

    auto* gen = app.add_subcommand("generate", "write a synthetic cohort CSV");
    add_common(gen);

    auto* screen = app.add_subcommand("screen", "t-test screening of the numeric features");
    add_common(screen);
    screen->add_option("--data", c.data, "cohort CSV (default: generated)");

    std::string model_path;
    auto* train = app.add_subcommand("train", "fit one two-step model and save it");
    add_common(train);
    train->add_option("--data", c.data, "cohort CSV (default: generated)");

    auto* eval = app.add_subcommand("evaluate", "run the replicate protocol and write reports");
    add_common(eval);
    eval->add_option("--data", c.data, "cohort CSV (default: generated)");
    eval->add_option("--replicates", c.replicates, "replicate count");

    std::string row_text;
    auto* score = app.add_subcommand("score", "score subjects with a saved model");
    score->add_option("--model", model_path, "saved model")->required();
    auto* row_opt = score->add_option("--row", row_text, "71 comma-separated schema values");
    score->add_option("--data", c.data, "cohort CSV to score")->excludes(row_opt);

    CLI11_PARSE(app, argc, argv);

    try {
        if (*gen) {
            const auto cfg = resolve(c);
            const auto d = ts::generate_cohort(cfg.generator);
            const std::filesystem::path out = c.out.empty() ? "cohort.csv" : c.out;
            ts::write_cohort(d, out);
            std::cout << "wrote " << d.size() << " subjects (" << d.positives() << " positive) to " << out << '\n';
        } else if (*screen) {
            const auto cfg = resolve(c);
            const auto d = ts::load_or_generate(cfg);
            const auto entries = ts::screen_features(d, cfg.alpha);
            ts::write_file_atomic(cfg.output_dir / "screening.csv", ts::screening_csv(entries));
            for (const auto& e : entries) {
                if (e.significant) std::cout << e.feature << " p=" << e.result.p_value << '\n';
            }
        } else if (*train) {
            auto cfg = resolve(c);
            cfg.ensembles = {"two_step_14"};
            const auto d = ts::load_or_generate(cfg);
            ts::SavedModel saved;
            const auto rep = ts::run_replicate(d, cfg, 0, &saved);
            if (!rep.ok) {
                std::cerr << "error: training failed: " << rep.error << '\n';
                return kExitData;
            }
            const std::filesystem::path out = c.out.empty() ? cfg.output_dir / "model.json" : std::filesystem::path(c.out);
            ts::save_model(saved, out);
            std::cout << "test accuracy " << rep.ensembles.at("two_step_14").accuracy << "; model saved to " << out << '\n';
        } else if (*eval) {
            const auto cfg = resolve(c);
            const auto report = ts::run_experiment(cfg);
            ts::emit_reports(report, cfg.output_dir);
            std::cout << ts::format_tables(report);
            if (!report.passed(cfg.min_success_fraction)) {
                std::cerr << "replicate success " << report.succeeded() << "/" << report.replicates.size()
                          << ", audit violations " << report.audit_violations() << '\n';
                return kExitReplicates;
            }
        } else if (*score) {
            const auto model = ts::load_model(model_path);
            if (!row_text.empty()) {
                print_score("row", ts::score_subject(model, parse_row(row_text)));
            } else if (!c.data.empty()) {
                const auto d = ts::load_cohort(c.data);
                for (ts::Index i = 0; i < d.size(); ++i) {
                    const Eigen::VectorXd r = d.features.row(static_cast<Eigen::Index>(i)).transpose();
                    print_score(d.subject_ids[i], ts::score_subject(model, std::span<const double>(r.data(), r.size())));
                }
            } else {
                std::cerr << "score needs --row or --data\n";
                return kExitConfig;
            }
        }
    } catch (const ts::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_code(e.kind());
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}

#pragma once

#include "twostep/dataset.hpp"
#include "twostep/ensemble.hpp"
#include "twostep/metrics.hpp"
#include "twostep/stats.hpp"
#include "twostep/synthgen.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace twostep {

inline constexpr const char* kEnsembleNames[] = {
    "two_step_14",      "two_step_3",       "trad_stack_14",      "trad_stack_3",
    "weighted_vote_14", "weighted_vote_3",  "two_step_glps_only",
};

struct ExperimentConfig {
    std::optional<std::filesystem::path> cohort_path;  // otherwise generated
    GeneratorConfig generator = default_calibration();
    std::vector<LearnerSpec> roster = default_roster();
    Index k = 10;
    int replicates = 50;
    std::uint64_t seed = 20240101;
    PcPolicy pc_policy = PcPolicy::PaperFixed;
    double exclusion_threshold = 0.60;
    Index top_count = 3;
    int tune_folds = 5;
    double alpha = 0.05;
    StackOptions stack;
    std::vector<std::string> ensembles{std::begin(kEnsembleNames), std::end(kEnsembleNames)};
    std::filesystem::path output_dir = "results";
    int workers = 1;
    double min_success_fraction = 0.90;

    void validate() const;
    bool wants(const std::string& ensemble) const;
};

nlohmann::json to_json(const ExperimentConfig& cfg);
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

// Loads the configured cohort file or generates the synthetic one.
Dataset load_or_generate(const ExperimentConfig& cfg);

struct ModelScore {
    double accuracy = 0.0;
    double sensitivity = 0.0;
    double specificity = 0.0;
    double auc = 0.0;
};

struct LearnerReplicate {
    std::string name;
    double test_accuracy = 0.0;
    double test_auc = 0.0;
    double validation0_accuracy = 0.0;
    std::optional<double> cv_accuracy;  // tuning CV accuracy of the chosen grid point
    bool converged = true;
};

struct ReplicateResult {
    int index = 0;
    std::uint64_t seed = 0;
    bool ok = false;
    std::string error;
    std::string partition_fingerprint;
    std::size_t audit_violations = 0;
    std::vector<std::string> excluded;
    std::vector<std::string> top;
    std::vector<LearnerReplicate> learners;
    std::map<std::string, ModelScore> ensembles;
    // pooled test outputs for the ROC exports
    std::map<std::string, std::vector<double>> test_scores;
    std::vector<int> test_labels;
};

struct Summary {
    double mean = 0.0;
    double sd = 0.0;
};

Summary summarize(std::span<const double> values);

struct EvaluationReport {
    nlohmann::json config;
    std::vector<ReplicateResult> replicates;
    std::vector<ScreenEntry> screening;
    BlockPca pca;  // full-cohort fit, descriptive only
    std::map<std::string, RocCurve> roc;

    int succeeded() const;
    std::size_t audit_violations() const;
    bool passed(double min_success_fraction) const;

    std::map<std::string, Summary> ensemble_accuracy() const;
    std::map<std::string, Summary> ensemble_auc() const;
    std::map<std::string, Summary> learner_accuracy() const;
    // Mean over learners of their mean test accuracy / AUC.
    double mean_individual_accuracy() const;
    double mean_individual_auc() const;

    nlohmann::json to_json() const;
};

struct SavedModel {
    TwoStepModel model;
    BlockPca pca;
    InputKind input = InputKind::Full;
};

// Runs replicate `index` of the protocol. When `keep` is given, the fitted
// two_step_14 model of this replicate is stored there.
ReplicateResult run_replicate(const Dataset& d, const ExperimentConfig& cfg, int index, SavedModel* keep = nullptr,
                              AuditLog* audit = nullptr);

EvaluationReport run_experiment(const ExperimentConfig& cfg, const Dataset& d);
EvaluationReport run_experiment(const ExperimentConfig& cfg);

std::string format_tables(const EvaluationReport& report);
void emit_reports(const EvaluationReport& report, const std::filesystem::path& dir);

// Atomic text write (temp file then rename).
void write_file_atomic(const std::filesystem::path& path, const std::string& text);

inline constexpr int kManifestVersion = 1;

nlohmann::json model_manifest(const SavedModel& m);
SavedModel model_from_manifest(const nlohmann::json& manifest);
void save_model(const SavedModel& m, const std::filesystem::path& path);
SavedModel load_model(const std::filesystem::path& path);

struct SubjectScore {
    int label = 0;
    double score = 0.0;
    std::vector<double> first_step_scores;
};

// raw: the 71 schema values of one subject.
SubjectScore score_subject(const SavedModel& m, std::span<const double> raw);
SubjectScore score_subject(const std::filesystem::path& model_path, std::span<const double> raw);

}  // namespace twostep

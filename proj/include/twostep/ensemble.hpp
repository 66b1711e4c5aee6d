#pragma once

#include "twostep/dataset.hpp"
#include "twostep/learners.hpp"
#include "twostep/tree.hpp"

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <cstdint>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace twostep {

// 1(mean(labels) >= 0.5)
int majority_vote(std::span<const int> labels);
// 1(sum w_l c_l >= 0.5); weights may be negative.
int weighted_vote(std::span<const int> labels, std::span<const double> weights);

enum class MetaKind { RandomForest, LinearLeastSquares };
enum class MetaInput { Scores, Labels };

const char* to_string(MetaKind kind) noexcept;
MetaKind meta_kind_from_string(std::string_view name);
const char* to_string(MetaInput input) noexcept;
MetaInput meta_input_from_string(std::string_view name);

class MetaCombiner {
public:
    static constexpr int kForestTrees = 200;
    static constexpr int kForestDepth = 6;
    static constexpr Index kMinRows = 10;

    // Linear combiner with fixed weights, no fitting.
    static MetaCombiner from_weights(Eigen::VectorXd weights);

    MetaKind kind() const { return kind_; }
    Index arity() const { return arity_; }
    const Eigen::VectorXd& weights() const { return weights_; }
    const RandomForest* forest() const { return kind_ == MetaKind::RandomForest ? &forest_ : nullptr; }

    // Unclamped output: weighted sum for the linear kind, forest score otherwise.
    double raw(const Eigen::Ref<const Eigen::RowVectorXd>& inputs) const;
    // raw() clamped to [0, 1].
    double combine(const Eigen::Ref<const Eigen::RowVectorXd>& inputs) const;
    int label(const Eigen::Ref<const Eigen::RowVectorXd>& inputs) const { return threshold_label(raw(inputs)); }

    nlohmann::json to_json() const;
    static MetaCombiner from_json(const nlohmann::json& j);

private:
    friend MetaCombiner fit_meta(const Eigen::MatrixXd&, std::span<const int>, MetaKind, std::uint64_t);

    MetaKind kind_ = MetaKind::LinearLeastSquares;
    Index arity_ = 0;
    Eigen::VectorXd weights_;
    RandomForest forest_;
};

// base_outputs: one row per validation subject, one column per base model.
MetaCombiner fit_meta(const Eigen::MatrixXd& base_outputs, std::span<const int> labels, MetaKind kind,
                      std::uint64_t seed);

// Thread-safe record of every row set handed to a fitting routine.
class AuditLog {
public:
    struct Entry {
        std::string stage;
        IndexSet rows;
    };

    void record(std::string stage, std::span<const Index> rows);
    std::vector<Entry> entries() const;
    // Number of (entry, row) pairs that hit `forbidden`.
    std::size_t violations(std::span<const Index> forbidden) const;
    void clear();

private:
    mutable std::mutex mutex_;
    std::vector<Entry> entries_;
};

struct RosterEntry {
    LearnerSpec spec;
    Hyperparams hyperparams;
};

using Roster = std::vector<RosterEntry>;

// Tunes every spec on the given rows.
Roster tune_roster(std::span<const LearnerSpec> specs, const Eigen::MatrixXd& x, std::span<const int> labels,
                   std::span<const Index> rows, int folds, AuditLog* audit = nullptr);

struct StackOptions {
    MetaKind combiner = MetaKind::RandomForest;
    MetaInput first_input = MetaInput::Scores;
    MetaInput second_input = MetaInput::Scores;
};

std::uint64_t first_step_seed(std::uint64_t seed, Index k);
// Depends on the spec seed, not the roster position, so a learner fitted for
// a full roster is identical to the one fitted for any sub-roster.
std::uint64_t learner_seed(std::uint64_t first_step_seed, const LearnerSpec& spec);

Eigen::MatrixXd take_rows(const Eigen::MatrixXd& x, std::span<const Index> rows);
std::vector<int> take(std::span<const int> labels, std::span<const Index> rows);

// Fits every roster entry on `rows`.
std::vector<TrainedClassifier> fit_roster(const Roster& roster, const Eigen::MatrixXd& x, std::span<const int> labels,
                                          std::span<const Index> rows, std::uint64_t seed, AuditLog* audit = nullptr,
                                          const std::string& stage = "learner");

Eigen::RowVectorXd base_outputs(std::span<const TrainedClassifier> classifiers,
                                const Eigen::Ref<const Eigen::RowVectorXd>& row, MetaInput input);
Eigen::MatrixXd base_output_table(std::span<const TrainedClassifier> classifiers, const Eigen::MatrixXd& x,
                             MetaInput input);

struct FirstStepModel {
    std::vector<TrainedClassifier> classifiers;
    MetaCombiner combiner;
    Index split_index = 0;
    MetaInput input = MetaInput::Scores;

    double score(const Eigen::Ref<const Eigen::RowVectorXd>& row) const;
    int label(const Eigen::Ref<const Eigen::RowVectorXd>& row) const { return threshold_label(score(row)); }
};

// Fits the combiner of a first-step model on already trained classifiers.
FirstStepModel assemble_first_step(std::vector<TrainedClassifier> classifiers, const Eigen::MatrixXd& x,
                                   std::span<const int> labels, std::span<const Index> validation, Index k,
                                   std::uint64_t seed, const StackOptions& opts, AuditLog* audit = nullptr);

FirstStepModel fit_first_step(const Eigen::MatrixXd& x, std::span<const int> labels, std::span<const Index> train,
                              std::span<const Index> validation, const Roster& roster, std::uint64_t seed,
                              const StackOptions& opts = {}, AuditLog* audit = nullptr, Index k = 0);

struct TwoStepPrediction {
    int label = 0;
    double score = 0.0;
};

struct TwoStepModel {
    std::vector<FirstStepModel> first_steps;
    MetaCombiner second;
    Roster roster;
    std::string partition_fingerprint;
    std::uint64_t seed = 0;
    MetaInput second_input = MetaInput::Scores;

    Index k() const { return first_steps.size(); }
    Index feature_count() const;
    Eigen::RowVectorXd first_step_scores(const Eigen::Ref<const Eigen::RowVectorXd>& row) const;
    TwoStepPrediction predict(const Eigen::Ref<const Eigen::RowVectorXd>& row) const;
    std::vector<TwoStepPrediction> predict_batch(const Eigen::MatrixXd& x) const;

    nlohmann::json to_json() const;
    static TwoStepModel from_json(const nlohmann::json& j);
};

// Raises PartitionLeak if a test row is inside any fitting subset.
void check_partition(const Partition& p);

TwoStepModel assemble_two_step(std::vector<FirstStepModel> first_steps, const Eigen::MatrixXd& x,
                               std::span<const int> labels, const Partition& partition, const Roster& roster,
                               std::uint64_t seed, const StackOptions& opts, AuditLog* audit = nullptr);

TwoStepModel fit_two_step(const Eigen::MatrixXd& x, std::span<const int> labels, const Partition& partition,
                          const Roster& roster, std::uint64_t seed, const StackOptions& opts = {},
                          AuditLog* audit = nullptr);

// Single-layer stack: learners on the training pool, combiner on validation0.
FirstStepModel fit_traditional_stack(const Eigen::MatrixXd& x, std::span<const int> labels,
                                     const Partition& partition, const Roster& roster, std::uint64_t seed,
                                     const StackOptions& opts = {}, AuditLog* audit = nullptr);

// Linear vote over base labels with least-squares weights.
struct WeightedVoter {
    std::vector<TrainedClassifier> classifiers;
    MetaCombiner combiner;  // linear

    double raw(const Eigen::Ref<const Eigen::RowVectorXd>& row) const;
    int label(const Eigen::Ref<const Eigen::RowVectorXd>& row) const;
};

WeightedVoter assemble_weighted_vote(std::vector<TrainedClassifier> classifiers, const Eigen::MatrixXd& x,
                                     std::span<const int> labels, std::span<const Index> validation,
                                     AuditLog* audit = nullptr);

WeightedVoter fit_weighted_vote_baseline(const Eigen::MatrixXd& x, std::span<const int> labels,
                                         const Partition& partition, const Roster& roster, std::uint64_t seed,
                                         AuditLog* audit = nullptr);

// Indices of the `count` largest values, ties to the lower index, returned in
// descending-value order.
std::vector<Index> top_indices(std::span<const double> values, Index count);

}  // namespace twostep

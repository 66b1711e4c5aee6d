#pragma once

#include "twostep/tree.hpp"

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace twostep {

enum class LearnerKind {
    LogisticRegression,
    PenalizedLogistic,
    Lda,
    GaussianNaiveBayes,
    Knn,
    DecisionTree,
    RandomForest,
    LinearSvm,
    RbfSvmApprox,
    NeuralNet,
    ModelAvgNeuralNet,
    BoostedStumps,
    BayesLinear,
    WeightedKnn,
};

inline constexpr std::size_t kLearnerKinds = 14;

const char* to_string(LearnerKind kind) noexcept;
LearnerKind learner_kind_from_string(std::string_view name);
std::span<const LearnerKind> all_learner_kinds();

using Hyperparams = std::map<std::string, double>;

std::string to_string(const Hyperparams& hp);

struct LearnerSpec {
    LearnerKind kind = LearnerKind::LogisticRegression;
    std::vector<Hyperparams> grid;  // candidate points, tried in order
    std::uint64_t seed = 0;
};

LearnerSpec default_spec(LearnerKind kind, std::uint64_t seed = 0);
std::vector<LearnerSpec> default_roster(std::uint64_t seed = 0);

nlohmann::json to_json(const LearnerSpec& spec);
LearnerSpec learner_spec_from_json(const nlohmann::json& j);

struct FitDiagnostics {
    bool converged = true;
    double gradient_norm = 0.0;
    bool singular_covariance = false;  // LDA fell back to a ridge-regularized covariance
};

namespace detail {

class Model {
public:
    virtual ~Model() = default;
    virtual double score(const Eigen::Ref<const Eigen::RowVectorXd>& row) const = 0;
    virtual nlohmann::json params() const = 0;
};

}  // namespace detail

// A fitted base learner. Immutable; copies share the fitted state.
class TrainedClassifier {
public:
    TrainedClassifier() = default;
    TrainedClassifier(LearnerKind kind, Hyperparams hp, std::uint64_t seed, Index feature_count,
                      FitDiagnostics diag, std::shared_ptr<const detail::Model> model);

    LearnerKind kind() const { return kind_; }
    const Hyperparams& hyperparams() const { return hyperparams_; }
    std::uint64_t seed() const { return seed_; }
    Index feature_count() const { return feature_count_; }
    const FitDiagnostics& diagnostics() const { return diag_; }

    // Positive-class score in [0, 1].
    double predict_score(const Eigen::Ref<const Eigen::RowVectorXd>& row) const;
    int predict_label(const Eigen::Ref<const Eigen::RowVectorXd>& row) const;
    Eigen::VectorXd predict_scores(const Eigen::MatrixXd& x) const;

    // Underlying forest for random_forest learners, nullptr otherwise.
    const RandomForest* forest() const;
    // Underlying tree for decision_tree learners, nullptr otherwise.
    const DecisionTree* tree() const;

    nlohmann::json to_json() const;
    static TrainedClassifier from_json(const nlohmann::json& j);

private:
    LearnerKind kind_ = LearnerKind::LogisticRegression;
    Hyperparams hyperparams_;
    std::uint64_t seed_ = 0;
    Index feature_count_ = 0;
    FitDiagnostics diag_;
    std::shared_ptr<const detail::Model> model_;
};

inline int threshold_label(double score) { return score >= 0.5 ? 1 : 0; }

TrainedClassifier fit(const LearnerSpec& spec, const Hyperparams& hp, const Eigen::MatrixXd& x,
                      std::span<const int> y, std::uint64_t seed);
inline TrainedClassifier fit(const LearnerSpec& spec, const Hyperparams& hp, const Eigen::MatrixXd& x,
                             std::span<const int> y) {
    return fit(spec, hp, x, y, spec.seed);
}

// Stratified k-fold assignment: fold id per row.
std::vector<int> stratified_folds(std::span<const int> y, int folds, std::uint64_t seed);

struct TuneResult {
    Hyperparams chosen;
    std::vector<double> fold_accuracy;  // mean CV accuracy per grid point, grid order
};

// Grid point with the highest mean stratified-CV accuracy; first wins ties.
// A singleton grid is returned without running CV.
TuneResult tune(const LearnerSpec& spec, const Eigen::MatrixXd& x, std::span<const int> y, int folds);

// Exhaustive minimum-weighted-error decision stump, used by boosting.
struct Stump {
    int feature = 0;
    double threshold = 0.0;
    int left_label = 0;  // label for x[feature] <= threshold; right gets the other
};

Stump best_error_stump(const Eigen::MatrixXd& x, std::span<const int> y, std::span<const double> w);

}  // namespace twostep

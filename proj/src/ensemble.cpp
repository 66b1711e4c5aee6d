#include "twostep/ensemble.hpp"

#include "twostep/error.hpp"
#include "twostep/random.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace twostep {

int majority_vote(std::span<const int> labels) {
    if (labels.empty()) fail(ErrorKind::EmptyVote, "majority vote over zero labels");
    const auto ones = std::count(labels.begin(), labels.end(), 1);
    // mean >= 0.5  <=>  2 * ones >= L, kept in integers
    return 2 * static_cast<std::size_t>(ones) >= labels.size() ? 1 : 0;
}

int weighted_vote(std::span<const int> labels, std::span<const double> weights) {
    if (labels.empty()) fail(ErrorKind::EmptyVote, "weighted vote over zero labels");
    if (labels.size() != weights.size()) {
        fail(ErrorKind::ArityMismatch, std::to_string(weights.size()) + " weights for " +
                                           std::to_string(labels.size()) + " labels");
    }
    double s = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (!std::isfinite(weights[i])) fail(ErrorKind::InvalidConfig, "non-finite vote weight");
        s += weights[i] * labels[i];
    }
    return s >= 0.5 ? 1 : 0;
}

const char* to_string(MetaKind kind) noexcept {
    return kind == MetaKind::RandomForest ? "random_forest" : "linear_least_squares";
}

MetaKind meta_kind_from_string(std::string_view name) {
    if (name == "random_forest") return MetaKind::RandomForest;
    if (name == "linear_least_squares") return MetaKind::LinearLeastSquares;
    fail(ErrorKind::InvalidConfig, "unknown combiner kind '" + std::string(name) + "'");
}

const char* to_string(MetaInput input) noexcept { return input == MetaInput::Scores ? "scores" : "labels"; }

MetaInput meta_input_from_string(std::string_view name) {
    if (name == "scores") return MetaInput::Scores;
    if (name == "labels") return MetaInput::Labels;
    fail(ErrorKind::InvalidConfig, "unknown combiner input '" + std::string(name) + "'");
}

// ---------------------------------------------------------------------------

MetaCombiner MetaCombiner::from_weights(Eigen::VectorXd weights) {
    if (weights.size() == 0) fail(ErrorKind::EmptyVote, "combiner without weights");
    MetaCombiner m;
    m.kind_ = MetaKind::LinearLeastSquares;
    m.arity_ = static_cast<Index>(weights.size());
    m.weights_ = std::move(weights);
    return m;
}

double MetaCombiner::raw(const Eigen::Ref<const Eigen::RowVectorXd>& inputs) const {
    if (static_cast<Index>(inputs.size()) != arity_) {
        fail(ErrorKind::ArityMismatch, "combiner expects " + std::to_string(arity_) + " inputs, got " +
                                           std::to_string(inputs.size()));
    }
    return kind_ == MetaKind::RandomForest ? forest_.predict(inputs) : inputs.dot(weights_);
}

double MetaCombiner::combine(const Eigen::Ref<const Eigen::RowVectorXd>& inputs) const {
    return std::clamp(raw(inputs), 0.0, 1.0);
}

nlohmann::json MetaCombiner::to_json() const {
    nlohmann::json j = {{"kind", to_string(kind_)}, {"arity", arity_}};
    if (kind_ == MetaKind::RandomForest) {
        j["forest"] = forest_.to_json();
    } else {
        j["weights"] = std::vector<double>(weights_.data(), weights_.data() + weights_.size());
    }
    return j;
}

MetaCombiner MetaCombiner::from_json(const nlohmann::json& j) {
    try {
        MetaCombiner m;
        m.kind_ = meta_kind_from_string(j.at("kind").get<std::string>());
        m.arity_ = j.at("arity").get<Index>();
        if (m.kind_ == MetaKind::RandomForest) {
            m.forest_ = RandomForest::from_json(j.at("forest"));
        } else {
            const auto w = j.at("weights").get<std::vector<double>>();
            if (w.size() != m.arity_) fail(ErrorKind::CorruptManifest, "combiner weight count differs from arity");
            m.weights_ = Eigen::Map<const Eigen::VectorXd>(w.data(), static_cast<Eigen::Index>(w.size()));
        }
        return m;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::CorruptManifest, std::string("combiner record: ") + e.what());
    }
}

MetaCombiner fit_meta(const Eigen::MatrixXd& base_outputs, std::span<const int> labels, MetaKind kind,
                      std::uint64_t seed) {
    if (static_cast<std::size_t>(base_outputs.rows()) != labels.size()) {
        fail(ErrorKind::LengthMismatch, "combiner inputs and labels differ in length");
    }
    if (base_outputs.cols() == 0) fail(ErrorKind::EmptyVote, "combiner over zero base models");
    if (labels.size() < MetaCombiner::kMinRows) {
        fail(ErrorKind::SampleTooSmall, "combiner needs at least " + std::to_string(MetaCombiner::kMinRows) + " rows");
    }
    const auto pos = std::count(labels.begin(), labels.end(), 1);
    if (pos == 0 || static_cast<std::size_t>(pos) == labels.size()) {
        fail(ErrorKind::DegenerateClass, "combiner training set holds one class");
    }
    MetaCombiner m;
    m.kind_ = kind;
    m.arity_ = static_cast<Index>(base_outputs.cols());
    if (kind == MetaKind::RandomForest) {
        ForestParams fp;
        fp.n_trees = MetaCombiner::kForestTrees;
        fp.tree.max_depth = MetaCombiner::kForestDepth;
        fp.tree.min_leaf_weight = 1.0;
        fp.tree.mtry = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(base_outputs.cols()))));
        fp.bootstrap = true;
        fp.vote = ForestVote::Soft;
        m.forest_ = RandomForest::fit(base_outputs, labels, fp, seed);
    } else {
        Eigen::VectorXd y(static_cast<Eigen::Index>(labels.size()));
        for (std::size_t i = 0; i < labels.size(); ++i) y[static_cast<Eigen::Index>(i)] = labels[i];
        // minimum-norm solution when base outputs are collinear
        m.weights_ = base_outputs.completeOrthogonalDecomposition().solve(y);
    }
    return m;
}

// ---------------------------------------------------------------------------

void AuditLog::record(std::string stage, std::span<const Index> rows) {
    std::lock_guard lock(mutex_);
    entries_.push_back({std::move(stage), IndexSet(rows.begin(), rows.end())});
}

std::vector<AuditLog::Entry> AuditLog::entries() const {
    std::lock_guard lock(mutex_);
    return entries_;
}

std::size_t AuditLog::violations(std::span<const Index> forbidden) const {
    IndexSet f(forbidden.begin(), forbidden.end());
    std::sort(f.begin(), f.end());
    std::lock_guard lock(mutex_);
    std::size_t hits = 0;
    for (const auto& e : entries_) {
        for (Index r : e.rows) {
            if (std::binary_search(f.begin(), f.end(), r)) ++hits;
        }
    }
    return hits;
}

void AuditLog::clear() {
    std::lock_guard lock(mutex_);
    entries_.clear();
}

// ---------------------------------------------------------------------------

Eigen::MatrixXd take_rows(const Eigen::MatrixXd& x, std::span<const Index> rows) {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), x.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        out.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(rows[i]));
    }
    return out;
}

std::vector<int> take(std::span<const int> labels, std::span<const Index> rows) {
    std::vector<int> out;
    out.reserve(rows.size());
    for (Index r : rows) out.push_back(labels[r]);
    return out;
}

Roster tune_roster(std::span<const LearnerSpec> specs, const Eigen::MatrixXd& x, std::span<const int> labels,
                   std::span<const Index> rows, int folds, AuditLog* audit) {
    if (audit) audit->record("tune", rows);
    const Eigen::MatrixXd xs = take_rows(x, rows);
    const auto ys = take(labels, rows);
    Roster roster;
    for (const auto& spec : specs) roster.push_back({spec, tune(spec, xs, ys, folds).chosen});
    return roster;
}

std::uint64_t first_step_seed(std::uint64_t seed, Index k) { return mix_seed(seed, 0x5000 + k); }

std::uint64_t learner_seed(std::uint64_t first_step_seed, const LearnerSpec& spec) {
    return mix_seed(first_step_seed ^ spec.seed, 0x6000 + static_cast<std::uint64_t>(spec.kind));
}

std::vector<TrainedClassifier> fit_roster(const Roster& roster, const Eigen::MatrixXd& x, std::span<const int> labels,
                                          std::span<const Index> rows, std::uint64_t seed, AuditLog* audit,
                                          const std::string& stage) {
    if (audit) audit->record(stage, rows);
    const Eigen::MatrixXd xs = take_rows(x, rows);
    const auto ys = take(labels, rows);
    std::vector<TrainedClassifier> out;
    out.reserve(roster.size());
    for (std::size_t l = 0; l < roster.size(); ++l) {
        try {
            out.push_back(fit(roster[l].spec, roster[l].hyperparams, xs, ys, learner_seed(seed, roster[l].spec)));
        } catch (const Error& e) {
            throw Error(e.kind(), stage + " learner " + std::to_string(l) + " (" + to_string(roster[l].spec.kind) +
                                      "): " + e.what());
        }
    }
    return out;
}

Eigen::RowVectorXd base_outputs(std::span<const TrainedClassifier> classifiers,
                                const Eigen::Ref<const Eigen::RowVectorXd>& row, MetaInput input) {
    Eigen::RowVectorXd out(static_cast<Eigen::Index>(classifiers.size()));
    for (std::size_t l = 0; l < classifiers.size(); ++l) {
        const double s = classifiers[l].predict_score(row);
        out[static_cast<Eigen::Index>(l)] = input == MetaInput::Scores ? s : threshold_label(s);
    }
    return out;
}

Eigen::MatrixXd base_output_table(std::span<const TrainedClassifier> classifiers, const Eigen::MatrixXd& x,
                             MetaInput input) {
    Eigen::MatrixXd out(x.rows(), static_cast<Eigen::Index>(classifiers.size()));
    for (Eigen::Index i = 0; i < x.rows(); ++i) out.row(i) = base_outputs(classifiers, x.row(i), input);
    return out;
}

double FirstStepModel::score(const Eigen::Ref<const Eigen::RowVectorXd>& row) const {
    return combiner.combine(base_outputs(classifiers, row, input));
}

FirstStepModel assemble_first_step(std::vector<TrainedClassifier> classifiers, const Eigen::MatrixXd& x,
                                   std::span<const int> labels, std::span<const Index> validation, Index k,
                                   std::uint64_t seed, const StackOptions& opts, AuditLog* audit) {
    if (audit) audit->record("first_step_combiner", validation);
    FirstStepModel m;
    m.split_index = k;
    m.input = opts.first_input;
    m.classifiers = std::move(classifiers);
    const Eigen::MatrixXd z = base_output_table(m.classifiers, take_rows(x, validation), opts.first_input);
    try {
        m.combiner = fit_meta(z, take(labels, validation), opts.combiner, mix_seed(seed, 0x7000));
    } catch (const Error& e) {
        throw Error(e.kind(), "first step " + std::to_string(k) + " combiner: " + e.what());
    }
    return m;
}

FirstStepModel fit_first_step(const Eigen::MatrixXd& x, std::span<const int> labels, std::span<const Index> train,
                              std::span<const Index> validation, const Roster& roster, std::uint64_t seed,
                              const StackOptions& opts, AuditLog* audit, Index k) {
    auto classifiers = fit_roster(roster, x, labels, train, seed, audit, "first step " + std::to_string(k));
    return assemble_first_step(std::move(classifiers), x, labels, validation, k, seed, opts, audit);
}

// ---------------------------------------------------------------------------

Index TwoStepModel::feature_count() const {
    if (first_steps.empty() || first_steps.front().classifiers.empty()) return 0;
    return first_steps.front().classifiers.front().feature_count();
}

Eigen::RowVectorXd TwoStepModel::first_step_scores(const Eigen::Ref<const Eigen::RowVectorXd>& row) const {
    const Index p = feature_count();
    if (static_cast<Index>(row.size()) != p) {
        fail(ErrorKind::DimensionMismatch,
             "two-step model expects " + std::to_string(p) + " features, got " + std::to_string(row.size()));
    }
    Eigen::RowVectorXd out(static_cast<Eigen::Index>(first_steps.size()));
    for (std::size_t k = 0; k < first_steps.size(); ++k) out[static_cast<Eigen::Index>(k)] = first_steps[k].score(row);
    return out;
}

TwoStepPrediction TwoStepModel::predict(const Eigen::Ref<const Eigen::RowVectorXd>& row) const {
    Eigen::RowVectorXd s = first_step_scores(row);
    if (second_input == MetaInput::Labels) s = s.unaryExpr([](double v) { return double(threshold_label(v)); });
    const double score = second.combine(s);
    return {threshold_label(score), score};
}

std::vector<TwoStepPrediction> TwoStepModel::predict_batch(const Eigen::MatrixXd& x) const {
    std::vector<TwoStepPrediction> out;
    out.reserve(static_cast<std::size_t>(x.rows()));
    for (Eigen::Index i = 0; i < x.rows(); ++i) out.push_back(predict(x.row(i)));
    return out;
}

nlohmann::json TwoStepModel::to_json() const {
    nlohmann::json roster_j = nlohmann::json::array();
    for (const auto& r : roster) roster_j.push_back({{"spec", twostep::to_json(r.spec)}, {"hyperparams", r.hyperparams}});
    nlohmann::json steps = nlohmann::json::array();
    for (const auto& fs : first_steps) {
        nlohmann::json cls = nlohmann::json::array();
        for (const auto& c : fs.classifiers) cls.push_back(c.to_json());
        steps.push_back({{"split_index", fs.split_index},
                         {"input", to_string(fs.input)},
                         {"classifiers", cls},
                         {"combiner", fs.combiner.to_json()}});
    }
    return {{"k", first_steps.size()},
            {"seed", seed},
            {"partition_fingerprint", partition_fingerprint},
            {"second_input", to_string(second_input)},
            {"roster", roster_j},
            {"first_steps", steps},
            {"second", second.to_json()}};
}

TwoStepModel TwoStepModel::from_json(const nlohmann::json& j) {
    try {
        TwoStepModel m;
        m.seed = j.at("seed").get<std::uint64_t>();
        m.partition_fingerprint = j.at("partition_fingerprint").get<std::string>();
        m.second_input = meta_input_from_string(j.at("second_input").get<std::string>());
        for (const auto& r : j.at("roster")) {
            m.roster.push_back({learner_spec_from_json(r.at("spec")), r.at("hyperparams").get<Hyperparams>()});
        }
        for (const auto& s : j.at("first_steps")) {
            FirstStepModel fs;
            fs.split_index = s.at("split_index").get<Index>();
            fs.input = meta_input_from_string(s.at("input").get<std::string>());
            for (const auto& c : s.at("classifiers")) fs.classifiers.push_back(TrainedClassifier::from_json(c));
            fs.combiner = MetaCombiner::from_json(s.at("combiner"));
            if (fs.combiner.arity() != fs.classifiers.size()) {
                fail(ErrorKind::CorruptManifest, "first-step combiner arity differs from classifier count");
            }
            m.first_steps.push_back(std::move(fs));
        }
        m.second = MetaCombiner::from_json(j.at("second"));
        if (m.first_steps.empty() || m.first_steps.size() != j.at("k").get<Index>() ||
            m.second.arity() != m.first_steps.size()) {
            fail(ErrorKind::CorruptManifest, "first-step count disagrees with the second combiner");
        }
        return m;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::CorruptManifest, std::string("two-step record: ") + e.what());
    }
}

void check_partition(const Partition& p) {
    IndexSet test(p.test.begin(), p.test.end());
    std::sort(test.begin(), test.end());
    auto check = [&](const IndexSet& rows, const std::string& what) {
        for (Index r : rows) {
            if (std::binary_search(test.begin(), test.end(), r)) {
                fail(ErrorKind::PartitionLeak, "test row " + std::to_string(r) + " inside " + what);
            }
        }
    };
    check(p.validation0, "validation0");
    check(p.training_pool, "training pool");
    for (std::size_t k = 0; k < p.first_step.size(); ++k) {
        check(p.first_step[k].train, "first-step train " + std::to_string(k));
        check(p.first_step[k].validation, "first-step validation " + std::to_string(k));
    }
}

TwoStepModel assemble_two_step(std::vector<FirstStepModel> first_steps, const Eigen::MatrixXd& x,
                               std::span<const int> labels, const Partition& partition, const Roster& roster,
                               std::uint64_t seed, const StackOptions& opts, AuditLog* audit) {
    if (first_steps.empty()) fail(ErrorKind::InvalidConfig, "two-step model needs K >= 1");
    if (audit) audit->record("second_step_combiner", partition.validation0);
    TwoStepModel m;
    m.roster = roster;
    m.seed = seed;
    m.partition_fingerprint = partition.fingerprint();
    m.second_input = opts.second_input;
    m.first_steps = std::move(first_steps);
    const Eigen::MatrixXd xv = take_rows(x, partition.validation0);
    Eigen::MatrixXd z(xv.rows(), static_cast<Eigen::Index>(m.first_steps.size()));
    for (Eigen::Index i = 0; i < xv.rows(); ++i) {
        for (std::size_t k = 0; k < m.first_steps.size(); ++k) {
            const double s = m.first_steps[k].score(xv.row(i));
            z(i, static_cast<Eigen::Index>(k)) = opts.second_input == MetaInput::Scores ? s : threshold_label(s);
        }
    }
    try {
        m.second = fit_meta(z, take(labels, partition.validation0), opts.combiner, mix_seed(seed, 0x8000));
    } catch (const Error& e) {
        throw Error(e.kind(), std::string("second-step combiner: ") + e.what());
    }
    return m;
}

TwoStepModel fit_two_step(const Eigen::MatrixXd& x, std::span<const int> labels, const Partition& partition,
                          const Roster& roster, std::uint64_t seed, const StackOptions& opts, AuditLog* audit) {
    check_partition(partition);
    std::vector<FirstStepModel> steps;
    for (Index k = 0; k < partition.k(); ++k) {
        const auto& split = partition.first_step[k];
        steps.push_back(fit_first_step(x, labels, split.train, split.validation, roster, first_step_seed(seed, k), opts,
                                       audit, k));
    }
    return assemble_two_step(std::move(steps), x, labels, partition, roster, seed, opts, audit);
}

FirstStepModel fit_traditional_stack(const Eigen::MatrixXd& x, std::span<const int> labels,
                                     const Partition& partition, const Roster& roster, std::uint64_t seed,
                                     const StackOptions& opts, AuditLog* audit) {
    check_partition(partition);
    return fit_first_step(x, labels, partition.training_pool, partition.validation0, roster, first_step_seed(seed, 0),
                          opts, audit, 0);
}

double WeightedVoter::raw(const Eigen::Ref<const Eigen::RowVectorXd>& row) const {
    return combiner.raw(base_outputs(classifiers, row, MetaInput::Labels));
}

int WeightedVoter::label(const Eigen::Ref<const Eigen::RowVectorXd>& row) const { return threshold_label(raw(row)); }

WeightedVoter assemble_weighted_vote(std::vector<TrainedClassifier> classifiers, const Eigen::MatrixXd& x,
                                     std::span<const int> labels, std::span<const Index> validation,
                                     AuditLog* audit) {
    if (audit) audit->record("weighted_vote_weights", validation);
    WeightedVoter v;
    v.classifiers = std::move(classifiers);
    const Eigen::MatrixXd z = base_output_table(v.classifiers, take_rows(x, validation), MetaInput::Labels);
    v.combiner = fit_meta(z, take(labels, validation), MetaKind::LinearLeastSquares, 0);
    return v;
}

WeightedVoter fit_weighted_vote_baseline(const Eigen::MatrixXd& x, std::span<const int> labels,
                                         const Partition& partition, const Roster& roster, std::uint64_t seed,
                                         AuditLog* audit) {
    check_partition(partition);
    auto classifiers = fit_roster(roster, x, labels, partition.training_pool, first_step_seed(seed, 0), audit);
    return assemble_weighted_vote(std::move(classifiers), x, labels, partition.validation0, audit);
}

std::vector<Index> top_indices(std::span<const double> values, Index count) {
    std::vector<Index> idx(values.size());
    std::iota(idx.begin(), idx.end(), Index{0});
    std::stable_sort(idx.begin(), idx.end(), [&](Index a, Index b) { return values[a] > values[b]; });
    idx.resize(std::min(count, idx.size()));
    return idx;
}

}  // namespace twostep

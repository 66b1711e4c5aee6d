#include "twostep/experiment.hpp"

#include "twostep/error.hpp"
#include "twostep/random.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <thread>

namespace twostep {

namespace {

const std::vector<std::string>& known_ensembles() {
    static const std::vector<std::string> names(std::begin(kEnsembleNames), std::end(kEnsembleNames));
    return names;
}

nlohmann::json vec_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Eigen::VectorXd vec_from(const nlohmann::json& j) {
    const auto v = j.get<std::vector<double>>();
    return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

nlohmann::json pca_json(const PcaModel& m) {
    std::vector<double> flat(static_cast<std::size_t>(m.loadings.size()));
    Eigen::Map<Eigen::MatrixXd>(flat.data(), m.loadings.rows(), m.loadings.cols()) = m.loadings;
    return {{"block", to_string(m.block)},
            {"center", vec_json(m.center)},
            {"scale", vec_json(m.scale)},
            {"eigenvalues", vec_json(m.eigenvalues)},
            {"loadings", flat},
            {"retained", m.retained}};
}

PcaModel pca_from(const nlohmann::json& j) {
    PcaModel m;
    m.block = block_from_string(j.at("block").get<std::string>());
    m.center = vec_from(j.at("center"));
    m.scale = vec_from(j.at("scale"));
    m.eigenvalues = vec_from(j.at("eigenvalues"));
    const auto flat = j.at("loadings").get<std::vector<double>>();
    const auto dim = m.center.size();
    if (m.scale.size() != dim || m.eigenvalues.size() != dim || static_cast<Eigen::Index>(flat.size()) != dim * dim) {
        fail(ErrorKind::CorruptManifest, "PCA record dimensions disagree");
    }
    m.loadings = Eigen::Map<const Eigen::MatrixXd>(flat.data(), dim, dim);
    m.retained = j.at("retained").get<int>();
    if (m.retained < 1 || m.retained > dim) fail(ErrorKind::CorruptManifest, "PCA retained count out of range");
    return m;
}

ModelScore score_model(std::span<const int> predicted, std::span<const double> scores, std::span<const int> truth) {
    const auto cm = confusion(predicted, truth);
    return {accuracy(cm), sensitivity(cm), specificity(cm), roc_and_auc(scores, truth).auc};
}

double label_accuracy(const std::vector<TrainedClassifier>& cls, std::size_t l, const Eigen::MatrixXd& x,
                      std::span<const int> y) {
    int correct = 0;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        if (cls[l].predict_label(x.row(i)) == y[static_cast<std::size_t>(i)]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(x.rows());
}

template <class T>
std::vector<T> pick(const std::vector<T>& items, std::span<const Index> idx) {
    std::vector<T> out;
    out.reserve(idx.size());
    for (Index i : idx) out.push_back(items[i]);
    return out;
}

// Roster for one replicate: spec seeds re-keyed by the replicate seed so
// tuning folds and stochastic learners vary between replicates.
std::vector<LearnerSpec> replicate_specs(const std::vector<LearnerSpec>& base, std::uint64_t rep_seed) {
    std::vector<LearnerSpec> out = base;
    for (std::size_t l = 0; l < out.size(); ++l) out[l].seed = mix_seed(rep_seed ^ base[l].seed, 0x100 + l);
    return out;
}

struct Tuned {
    Roster roster;
    std::vector<std::optional<double>> cv;
};

Tuned tune_all(const std::vector<LearnerSpec>& specs, const Eigen::MatrixXd& x, std::span<const int> y,
               std::span<const Index> rows, int folds, AuditLog& log, const std::string& tag) {
    log.record("tune " + tag, rows);
    const Eigen::MatrixXd xs = take_rows(x, rows);
    const auto ys = take(y, rows);
    Tuned t;
    for (const auto& spec : specs) {
        auto res = tune(spec, xs, ys, folds);
        t.roster.push_back({spec, res.chosen});
        if (res.fold_accuracy.empty()) {
            t.cv.emplace_back();
        } else {
            t.cv.emplace_back(*std::max_element(res.fold_accuracy.begin(), res.fold_accuracy.end()));
        }
    }
    return t;
}

// Learners surviving the validation0 exclusion rule; when fewer than
// `minimum` survive, the best `minimum` are kept.
std::vector<Index> survivors(std::span<const double> val0, double threshold, Index minimum) {
    std::vector<Index> keep;
    for (Index l = 0; l < val0.size(); ++l) {
        if (val0[l] >= threshold) keep.push_back(l);
    }
    if (keep.size() < minimum) {
        keep = top_indices(val0, minimum);
        std::sort(keep.begin(), keep.end());
    }
    return keep;
}

}  // namespace

// ---------------------------------------------------------------------------

void ExperimentConfig::validate() const {
    if (replicates < 1) fail(ErrorKind::InvalidConfig, "replicates must be at least 1");
    if (!(exclusion_threshold > 0.0 && exclusion_threshold < 1.0)) {
        fail(ErrorKind::InvalidConfig, "exclusion_threshold must lie in (0,1)");
    }
    if (k < 1) fail(ErrorKind::InvalidConfig, "K must be at least 1");
    if (top_count < 1) fail(ErrorKind::InvalidConfig, "top_count must be at least 1");
    if (tune_folds < 2) fail(ErrorKind::InvalidConfig, "tune_folds must be at least 2");
    if (!(alpha > 0.0 && alpha < 1.0)) fail(ErrorKind::InvalidConfig, "alpha must lie in (0,1)");
    if (workers < 1) fail(ErrorKind::InvalidConfig, "workers must be at least 1");
    if (roster.empty()) fail(ErrorKind::InvalidConfig, "empty roster");
    if (ensembles.empty()) fail(ErrorKind::InvalidConfig, "no ensembles requested");
    for (const auto& e : ensembles) {
        if (std::find(known_ensembles().begin(), known_ensembles().end(), e) == known_ensembles().end()) {
            fail(ErrorKind::InvalidConfig, "unknown ensemble '" + e + "'");
        }
    }
    for (const auto& s : roster) {
        if (s.grid.empty()) fail(ErrorKind::InvalidConfig, std::string("empty grid for ") + to_string(s.kind));
    }
}

bool ExperimentConfig::wants(const std::string& ensemble) const {
    return std::find(ensembles.begin(), ensembles.end(), ensemble) != ensembles.end();
}

nlohmann::json to_json(const ExperimentConfig& cfg) {
    nlohmann::json roster = nlohmann::json::array();
    for (const auto& s : cfg.roster) roster.push_back(to_json(s));
    nlohmann::json data;
    if (cfg.cohort_path) {
        data["path"] = cfg.cohort_path->generic_string();
    } else {
        data["generator"] = to_json(cfg.generator);
    }
    return {{"data", data},
            {"roster", roster},
            {"k", cfg.k},
            {"replicates", cfg.replicates},
            {"seed", cfg.seed},
            {"pc_policy", to_string(cfg.pc_policy)},
            {"exclusion_threshold", cfg.exclusion_threshold},
            {"top_count", cfg.top_count},
            {"tune_folds", cfg.tune_folds},
            {"alpha", cfg.alpha},
            {"combiner", to_string(cfg.stack.combiner)},
            {"first_input", to_string(cfg.stack.first_input)},
            {"second_input", to_string(cfg.stack.second_input)},
            {"ensembles", cfg.ensembles},
            {"output_dir", cfg.output_dir.generic_string()},
            {"workers", cfg.workers},
            {"min_success_fraction", cfg.min_success_fraction}};
}

ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
    try {
        ExperimentConfig cfg;
        if (j.contains("data")) {
            const auto& data = j.at("data");
            if (data.contains("path")) cfg.cohort_path = data.at("path").get<std::string>();
            if (data.contains("generator")) cfg.generator = generator_config_from_json(data.at("generator"));
        }
        if (j.contains("roster")) {
            cfg.roster.clear();
            for (const auto& s : j.at("roster")) cfg.roster.push_back(learner_spec_from_json(s));
        }
        cfg.k = j.value("k", cfg.k);
        cfg.replicates = j.value("replicates", cfg.replicates);
        cfg.seed = j.value("seed", cfg.seed);
        if (j.contains("pc_policy")) cfg.pc_policy = pc_policy_from_string(j.at("pc_policy").get<std::string>());
        cfg.exclusion_threshold = j.value("exclusion_threshold", cfg.exclusion_threshold);
        cfg.top_count = j.value("top_count", cfg.top_count);
        cfg.tune_folds = j.value("tune_folds", cfg.tune_folds);
        cfg.alpha = j.value("alpha", cfg.alpha);
        if (j.contains("combiner")) cfg.stack.combiner = meta_kind_from_string(j.at("combiner").get<std::string>());
        if (j.contains("first_input")) {
            cfg.stack.first_input = meta_input_from_string(j.at("first_input").get<std::string>());
        }
        if (j.contains("second_input")) {
            cfg.stack.second_input = meta_input_from_string(j.at("second_input").get<std::string>());
        }
        if (j.contains("ensembles")) cfg.ensembles = j.at("ensembles").get<std::vector<std::string>>();
        if (j.contains("output_dir")) cfg.output_dir = j.at("output_dir").get<std::string>();
        cfg.workers = j.value("workers", cfg.workers);
        cfg.min_success_fraction = j.value("min_success_fraction", cfg.min_success_fraction);
        cfg.validate();
        return cfg;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::InvalidConfig, std::string("experiment config: ") + e.what());
    }
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::IoFailure, "cannot open " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::InvalidConfig, path.string() + ": " + e.what());
    }
    return experiment_config_from_json(j);
}

Dataset load_or_generate(const ExperimentConfig& cfg) {
    return cfg.cohort_path ? load_cohort(*cfg.cohort_path) : generate_cohort(cfg.generator);
}

// ---------------------------------------------------------------------------

ReplicateResult run_replicate(const Dataset& d, const ExperimentConfig& cfg, int index, SavedModel* keep,
                              AuditLog* audit) {
    ReplicateResult rep;
    rep.index = index;
    rep.seed = mix_seed(cfg.seed, static_cast<std::uint64_t>(index));
    AuditLog local;
    AuditLog& log = audit ? *audit : local;
    try {
        const auto& y = d.labels;
        const Partition part = make_paper_partition(d, cfg.k, mix_seed(rep.seed, 1));
        check_partition(part);
        rep.partition_fingerprint = part.fingerprint();
        const auto& pool = part.training_pool;
        const auto& val0 = part.validation0;
        const auto& test = part.test;
        rep.test_labels = take(y, test);

        log.record("pca", pool);
        const BlockPca pca = fit_block_pca(d, pool, cfg.pc_policy);
        const ModelInput full = build_model_input(d, pca);
        const auto specs = replicate_specs(cfg.roster, rep.seed);

        const Eigen::MatrixXd xv0 = take_rows(full.x, val0);
        const Eigen::MatrixXd xt = take_rows(full.x, test);
        const auto yv0 = take(y, val0);

        const Tuned tuned = tune_all(specs, full.x, y, pool, cfg.tune_folds, log, "full");
        const auto indiv = fit_roster(tuned.roster, full.x, y, pool, first_step_seed(rep.seed, 0), &log, "individual");
        std::vector<double> val0_acc;
        for (std::size_t l = 0; l < indiv.size(); ++l) {
            LearnerReplicate lr;
            lr.name = to_string(specs[l].kind);
            lr.validation0_accuracy = label_accuracy(indiv, l, xv0, yv0);
            lr.test_accuracy = label_accuracy(indiv, l, xt, rep.test_labels);
            const Eigen::VectorXd s = indiv[l].predict_scores(xt);
            lr.test_auc = roc_and_auc(std::span<const double>(s.data(), static_cast<std::size_t>(s.size())),
                                      rep.test_labels)
                              .auc;
            lr.cv_accuracy = tuned.cv[l];
            lr.converged = indiv[l].diagnostics().converged;
            val0_acc.push_back(lr.validation0_accuracy);
            rep.learners.push_back(lr);
        }
        const auto kept = survivors(val0_acc, cfg.exclusion_threshold, cfg.top_count);
        for (Index l = 0; l < specs.size(); ++l) {
            if (!std::binary_search(kept.begin(), kept.end(), l)) rep.excluded.emplace_back(to_string(specs[l].kind));
        }
        const Roster kept_roster = pick(tuned.roster, kept);

        const bool two_step = cfg.wants("two_step_14") || cfg.wants("two_step_3");
        std::vector<std::vector<TrainedClassifier>> first_cls;
        std::vector<Index> top;  // positions within `kept`
        if (two_step) {
            std::vector<double> mean_val(kept.size(), 0.0);
            for (Index k = 0; k < part.k(); ++k) {
                const auto& split = part.first_step[k];
                first_cls.push_back(fit_roster(kept_roster, full.x, y, split.train, first_step_seed(rep.seed, k), &log,
                                               "first step " + std::to_string(k)));
                const Eigen::MatrixXd xvk = take_rows(full.x, split.validation);
                const auto yvk = take(y, split.validation);
                for (std::size_t l = 0; l < kept.size(); ++l) {
                    mean_val[l] += label_accuracy(first_cls.back(), l, xvk, yvk) / static_cast<double>(part.k());
                }
            }
            top = top_indices(mean_val, cfg.top_count);
        } else {
            top = top_indices(pick(val0_acc, kept), cfg.top_count);
        }
        for (Index t : top) rep.top.emplace_back(to_string(specs[kept[t]].kind));

        auto record = [&](const std::string& name, const std::vector<double>& scores, const std::vector<int>& labels) {
            rep.ensembles[name] = score_model(labels, scores, rep.test_labels);
            rep.test_scores[name] = scores;
        };
        auto eval_two_step = [&](const TwoStepModel& m, const Eigen::MatrixXd& x_test, const std::string& name) {
            std::vector<double> s;
            std::vector<int> lab;
            for (const auto& p : m.predict_batch(x_test)) {
                s.push_back(p.score);
                lab.push_back(p.label);
            }
            record(name, s, lab);
        };
        auto eval_stack = [&](const FirstStepModel& m, const std::string& name) {
            std::vector<double> s;
            std::vector<int> lab;
            for (Eigen::Index i = 0; i < xt.rows(); ++i) {
                s.push_back(m.score(xt.row(i)));
                lab.push_back(threshold_label(s.back()));
            }
            record(name, s, lab);
        };
        auto eval_vote = [&](const WeightedVoter& v, const std::string& name) {
            std::vector<double> s;
            std::vector<int> lab;
            for (Eigen::Index i = 0; i < xt.rows(); ++i) {
                s.push_back(v.raw(xt.row(i)));
                lab.push_back(threshold_label(s.back()));
            }
            record(name, s, lab);
        };
        auto two_step_from = [&](std::span<const Index> subset, const Roster& roster) {
            std::vector<FirstStepModel> steps;
            for (Index k = 0; k < part.k(); ++k) {
                steps.push_back(assemble_first_step(pick(first_cls[k], subset), full.x, y, part.first_step[k].validation,
                                                    k, first_step_seed(rep.seed, k), cfg.stack, &log));
            }
            return assemble_two_step(std::move(steps), full.x, y, part, roster, rep.seed, cfg.stack, &log);
        };

        std::vector<Index> all_kept(kept.size());
        std::iota(all_kept.begin(), all_kept.end(), Index{0});
        const auto kept_indiv = pick(indiv, kept);

        if (cfg.wants("two_step_14")) {
            auto m = two_step_from(all_kept, kept_roster);
            eval_two_step(m, xt, "two_step_14");
            if (keep) *keep = SavedModel{std::move(m), pca, InputKind::Full};
        }
        if (cfg.wants("two_step_3")) eval_two_step(two_step_from(top, pick(kept_roster, top)), xt, "two_step_3");
        if (cfg.wants("trad_stack_14")) {
            eval_stack(assemble_first_step(kept_indiv, full.x, y, val0, 0, first_step_seed(rep.seed, 0), cfg.stack, &log),
                       "trad_stack_14");
        }
        if (cfg.wants("trad_stack_3")) {
            eval_stack(assemble_first_step(pick(kept_indiv, top), full.x, y, val0, 0, first_step_seed(rep.seed, 0),
                                           cfg.stack, &log),
                       "trad_stack_3");
        }
        if (cfg.wants("weighted_vote_14")) eval_vote(assemble_weighted_vote(kept_indiv, full.x, y, val0, &log), "weighted_vote_14");
        if (cfg.wants("weighted_vote_3")) {
            eval_vote(assemble_weighted_vote(pick(kept_indiv, top), full.x, y, val0, &log), "weighted_vote_3");
        }
        if (cfg.wants("two_step_glps_only")) {
            const ModelInput g = build_glps_input(d);
            const Tuned tg = tune_all(specs, g.x, y, pool, cfg.tune_folds, log, "glps");
            const auto gi = fit_roster(tg.roster, g.x, y, pool, first_step_seed(rep.seed, 0), &log, "glps individual");
            const Eigen::MatrixXd gv0 = take_rows(g.x, val0);
            std::vector<double> gacc;
            for (std::size_t l = 0; l < gi.size(); ++l) gacc.push_back(label_accuracy(gi, l, gv0, yv0));
            const auto gkept = survivors(gacc, cfg.exclusion_threshold, cfg.top_count);
            auto m = fit_two_step(g.x, y, part, pick(tg.roster, gkept), rep.seed, cfg.stack, &log);
            eval_two_step(m, take_rows(g.x, test), "two_step_glps_only");
        }

        rep.audit_violations = log.violations(test);
        if (rep.audit_violations > 0) {
            fail(ErrorKind::PartitionLeak, std::to_string(rep.audit_violations) + " test rows reached a fit");
        }
        rep.ok = true;
    } catch (const Error& e) {
        rep.ok = false;
        rep.error = e.what();
    }
    return rep;
}

// ---------------------------------------------------------------------------

Summary summarize(std::span<const double> values) {
    Summary s;
    if (values.empty()) return s;
    s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
    if (values.size() > 1) {
        double ss = 0.0;
        for (double v : values) ss += (v - s.mean) * (v - s.mean);
        s.sd = std::sqrt(ss / static_cast<double>(values.size() - 1));
    }
    return s;
}

int EvaluationReport::succeeded() const {
    return static_cast<int>(std::count_if(replicates.begin(), replicates.end(), [](const auto& r) { return r.ok; }));
}

std::size_t EvaluationReport::audit_violations() const {
    std::size_t n = 0;
    for (const auto& r : replicates) n += r.audit_violations;
    return n;
}

bool EvaluationReport::passed(double min_success_fraction) const {
    return !replicates.empty() &&
           static_cast<double>(succeeded()) >= min_success_fraction * static_cast<double>(replicates.size()) - 1e-12 &&
           audit_violations() == 0;
}

namespace {

template <class F>
std::map<std::string, Summary> summarize_ensembles(const std::vector<ReplicateResult>& reps, F field) {
    std::map<std::string, std::vector<double>> values;
    for (const auto& r : reps) {
        if (!r.ok) continue;
        for (const auto& [name, s] : r.ensembles) values[name].push_back(field(s));
    }
    std::map<std::string, Summary> out;
    for (const auto& [name, v] : values) out[name] = summarize(v);
    return out;
}

template <class F>
std::map<std::string, Summary> summarize_learners(const std::vector<ReplicateResult>& reps, F field) {
    std::map<std::string, std::vector<double>> values;
    for (const auto& r : reps) {
        if (!r.ok) continue;
        for (const auto& l : r.learners) {
            if (auto v = field(l)) values[l.name].push_back(*v);
        }
    }
    std::map<std::string, Summary> out;
    for (const auto& [name, v] : values) out[name] = summarize(v);
    return out;
}

double mean_of_means(const std::map<std::string, Summary>& m) {
    if (m.empty()) return 0.0;
    double s = 0.0;
    for (const auto& [_, v] : m) s += v.mean;
    return s / static_cast<double>(m.size());
}

nlohmann::json summary_json(const Summary& s) { return {{"mean", s.mean}, {"sd", s.sd}}; }

}  // namespace

std::map<std::string, Summary> EvaluationReport::ensemble_accuracy() const {
    return summarize_ensembles(replicates, [](const ModelScore& s) { return s.accuracy; });
}

std::map<std::string, Summary> EvaluationReport::ensemble_auc() const {
    return summarize_ensembles(replicates, [](const ModelScore& s) { return s.auc; });
}

std::map<std::string, Summary> EvaluationReport::learner_accuracy() const {
    return summarize_learners(replicates, [](const LearnerReplicate& l) { return std::optional<double>(l.test_accuracy); });
}

double EvaluationReport::mean_individual_accuracy() const { return mean_of_means(learner_accuracy()); }

double EvaluationReport::mean_individual_auc() const {
    return mean_of_means(
        summarize_learners(replicates, [](const LearnerReplicate& l) { return std::optional<double>(l.test_auc); }));
}

nlohmann::json EvaluationReport::to_json() const {
    nlohmann::json ens = nlohmann::json::object();
    const auto acc = ensemble_accuracy();
    const auto auc = ensemble_auc();
    const auto sens = summarize_ensembles(replicates, [](const ModelScore& s) { return s.sensitivity; });
    const auto spec = summarize_ensembles(replicates, [](const ModelScore& s) { return s.specificity; });
    for (const auto& [name, s] : acc) {
        ens[name] = {{"accuracy", summary_json(s)},
                     {"auc", summary_json(auc.at(name))},
                     {"sensitivity", summary_json(sens.at(name))},
                     {"specificity", summary_json(spec.at(name))}};
    }
    nlohmann::json learners = nlohmann::json::object();
    const auto lacc = learner_accuracy();
    const auto lauc =
        summarize_learners(replicates, [](const LearnerReplicate& l) { return std::optional<double>(l.test_auc); });
    const auto lval =
        summarize_learners(replicates, [](const LearnerReplicate& l) { return std::optional<double>(l.validation0_accuracy); });
    const auto lcv = summarize_learners(replicates, [](const LearnerReplicate& l) { return l.cv_accuracy; });
    for (const auto& [name, s] : lacc) {
        learners[name] = {{"test_accuracy", summary_json(s)},
                          {"test_auc", summary_json(lauc.at(name))},
                          {"validation0_accuracy", summary_json(lval.at(name))}};
        if (auto it = lcv.find(name); it != lcv.end()) {
            learners[name]["cv_accuracy"] = summary_json(it->second);
        } else {
            learners[name]["cv_accuracy"] = nullptr;
        }
    }
    nlohmann::json reps = nlohmann::json::array();
    for (const auto& r : replicates) {
        nlohmann::json rj = {{"index", r.index},
                             {"seed", r.seed},
                             {"ok", r.ok},
                             {"partition_fingerprint", r.partition_fingerprint},
                             {"audit_violations", r.audit_violations},
                             {"excluded", r.excluded},
                             {"top", r.top}};
        if (!r.ok) rj["error"] = r.error;
        nlohmann::json e = nlohmann::json::object();
        for (const auto& [name, s] : r.ensembles) {
            e[name] = {{"accuracy", s.accuracy}, {"sensitivity", s.sensitivity}, {"specificity", s.specificity}, {"auc", s.auc}};
        }
        rj["ensembles"] = e;
        nlohmann::json l = nlohmann::json::array();
        for (const auto& lr : r.learners) {
            l.push_back({{"name", lr.name},
                         {"test_accuracy", lr.test_accuracy},
                         {"test_auc", lr.test_auc},
                         {"validation0_accuracy", lr.validation0_accuracy},
                         {"cv_accuracy", lr.cv_accuracy ? nlohmann::json(*lr.cv_accuracy) : nlohmann::json(nullptr)},
                         {"converged", lr.converged}});
        }
        rj["learners"] = l;
        reps.push_back(rj);
    }
    nlohmann::json roc = nlohmann::json::object();
    for (const auto& [name, c] : this->roc) roc[name] = c.auc;
    return {{"config", config},
            {"replicate_count", replicates.size()},
            {"succeeded", succeeded()},
            {"audit_violations", audit_violations()},
            {"ensembles", ens},
            {"learners", learners},
            {"mean_individual", {{"accuracy", mean_individual_accuracy()}, {"auc", mean_individual_auc()}}},
            {"pooled_roc_auc", roc},
            {"replicates", reps}};
}

EvaluationReport run_experiment(const ExperimentConfig& cfg, const Dataset& d) {
    cfg.validate();
    EvaluationReport report;
    report.config = to_json(cfg);
    report.replicates.resize(static_cast<std::size_t>(cfg.replicates));
    std::atomic<int> next{0};
    auto worker = [&] {
        for (int r; (r = next.fetch_add(1)) < cfg.replicates;) {
            report.replicates[static_cast<std::size_t>(r)] = run_replicate(d, cfg, r);
        }
    };
    const int threads = std::min(cfg.workers, cfg.replicates);
    if (threads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    report.screening = screen_features(d, cfg.alpha);
    report.pca = fit_block_pca(d, iota_indices(d.size()), cfg.pc_policy);

    std::map<std::string, std::pair<std::vector<double>, std::vector<int>>> pooled;
    for (const auto& r : report.replicates) {
        if (!r.ok) continue;
        for (const auto& [name, s] : r.test_scores) {
            auto& [scores, labels] = pooled[name];
            scores.insert(scores.end(), s.begin(), s.end());
            labels.insert(labels.end(), r.test_labels.begin(), r.test_labels.end());
        }
    }
    for (const auto& [name, sl] : pooled) report.roc[name] = roc_and_auc(sl.first, sl.second);
    return report;
}

EvaluationReport run_experiment(const ExperimentConfig& cfg) { return run_experiment(cfg, load_or_generate(cfg)); }

// ---------------------------------------------------------------------------

void write_file_atomic(const std::filesystem::path& path, const std::string& text) {
    std::error_code ec;
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) fail(ErrorKind::IoFailure, "cannot write " + tmp.string());
        out << text;
        out.flush();
        if (!out) fail(ErrorKind::IoFailure, "write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path, ec);
    if (ec) fail(ErrorKind::IoFailure, "cannot rename onto " + path.string() + ": " + ec.message());
}

std::string format_tables(const EvaluationReport& report) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(3);
    os << "Replicates: " << report.succeeded() << " of " << report.replicates.size() << " succeeded\n\n";
    os << "Individual learners (test accuracy, sd in brackets; tuning CV accuracy)\n";
    os << std::left << std::setw(24) << "learner" << std::setw(20) << "test_accuracy" << "cv_accuracy\n";
    const auto lcv = summarize_learners(report.replicates, [](const LearnerReplicate& l) { return l.cv_accuracy; });
    for (const auto& [name, s] : report.learner_accuracy()) {
        std::ostringstream cell;
        cell << std::fixed << std::setprecision(3) << s.mean << " (" << s.sd << ")";
        os << std::setw(24) << name << std::setw(20) << cell.str();
        if (auto it = lcv.find(name); it != lcv.end()) {
            os << it->second.mean;
        } else {
            os << "-";
        }
        os << '\n';
    }
    os << std::setw(24) << "mean" << report.mean_individual_accuracy() << "\n\n";

    os << "Ensembles (test accuracy and AUC, sd in brackets)\n";
    os << std::setw(24) << "ensemble" << std::setw(20) << "accuracy" << std::setw(20) << "auc" << std::setw(14)
       << "sensitivity" << "specificity\n";
    const auto acc = report.ensemble_accuracy();
    const auto auc = report.ensemble_auc();
    const auto sens = summarize_ensembles(report.replicates, [](const ModelScore& s) { return s.sensitivity; });
    const auto spec = summarize_ensembles(report.replicates, [](const ModelScore& s) { return s.specificity; });
    for (const char* name : kEnsembleNames) {
        auto it = acc.find(name);
        if (it == acc.end()) continue;
        std::ostringstream a, u;
        a << std::fixed << std::setprecision(3) << it->second.mean << " (" << it->second.sd << ")";
        u << std::fixed << std::setprecision(3) << auc.at(name).mean << " (" << auc.at(name).sd << ")";
        os << std::setw(24) << name << std::setw(20) << a.str() << std::setw(20) << u.str() << std::setw(14)
           << sens.at(name).mean << spec.at(name).mean << '\n';
    }
    return os.str();
}

void emit_reports(const EvaluationReport& report, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) fail(ErrorKind::IoFailure, "cannot create " + dir.string() + ": " + ec.message());
    write_file_atomic(dir / "report.json", report.to_json().dump(2) + "\n");
    write_file_atomic(dir / "config.json", report.config.dump(2) + "\n");
    write_file_atomic(dir / "tables.txt", format_tables(report));
    for (const auto& [name, roc] : report.roc) write_file_atomic(dir / ("roc_" + name + ".csv"), roc_csv(roc));
    write_file_atomic(dir / "screening.csv", screening_csv(report.screening));

    std::ostringstream os;
    os.precision(10);
    os << "block,component,eigenvalue,retained";
    for (Index s = 1; s <= FeatureSchema::kSegments; ++s) os << ",seg_" << (s < 10 ? "0" : "") << s;
    os << '\n';
    for (const PcaModel* m : {&report.pca.pss, &report.pca.ssr, &report.pca.tp}) {
        for (Eigen::Index c = 0; c < m->loadings.cols(); ++c) {
            os << to_string(m->block) << ',' << c + 1 << ',' << m->eigenvalues[c] << ',' << (c < m->retained ? 1 : 0);
            for (Eigen::Index r = 0; r < m->loadings.rows(); ++r) os << ',' << m->loadings(r, c);
            os << '\n';
        }
    }
    write_file_atomic(dir / "pca_loadings.csv", os.str());
}

// ---------------------------------------------------------------------------

nlohmann::json model_manifest(const SavedModel& m) {
    nlohmann::json payload = {{"input", to_string(m.input)},
                              {"pca", {{"pss", pca_json(m.pca.pss)}, {"ssr", pca_json(m.pca.ssr)}, {"tp", pca_json(m.pca.tp)}}},
                              {"model", m.model.to_json()}};
    return {{"format", "twostep-model"},
            {"version", kManifestVersion},
            {"checksum", hex64(fnv1a64(payload.dump()))},
            {"payload", payload}};
}

SavedModel model_from_manifest(const nlohmann::json& manifest) {
    try {
        if (manifest.at("format").get<std::string>() != "twostep-model") {
            fail(ErrorKind::CorruptManifest, "not a model manifest");
        }
        const int version = manifest.at("version").get<int>();
        if (version != kManifestVersion) {
            fail(ErrorKind::VersionMismatch, "manifest version " + std::to_string(version) + ", supported " +
                                                 std::to_string(kManifestVersion));
        }
        const auto& payload = manifest.at("payload");
        if (manifest.at("checksum").get<std::string>() != hex64(fnv1a64(payload.dump()))) {
            fail(ErrorKind::CorruptManifest, "checksum mismatch");
        }
        SavedModel m;
        m.input = input_kind_from_string(payload.at("input").get<std::string>());
        const auto& p = payload.at("pca");
        m.pca = {pca_from(p.at("pss")), pca_from(p.at("ssr")), pca_from(p.at("tp"))};
        m.model = TwoStepModel::from_json(payload.at("model"));
        return m;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::CorruptManifest, std::string("model manifest: ") + e.what());
    }
}

void save_model(const SavedModel& m, const std::filesystem::path& path) {
    write_file_atomic(path, model_manifest(m).dump() + "\n");
}

SavedModel load_model(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::IoFailure, "cannot open " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::CorruptManifest, path.string() + ": " + e.what());
    }
    return model_from_manifest(j);
}

SubjectScore score_subject(const SavedModel& m, std::span<const double> raw) {
    const auto& schema = FeatureSchema::standard();
    if (raw.size() < FeatureSchema::kColumns) {
        fail(ErrorKind::SchemaMismatch, "subject row has " + std::to_string(raw.size()) + " values; missing column '" +
                                            schema.name(raw.size()) + "'");
    }
    if (raw.size() > FeatureSchema::kColumns) {
        fail(ErrorKind::SchemaMismatch, "subject row has " + std::to_string(raw.size()) + " values, expected " +
                                            std::to_string(FeatureSchema::kColumns));
    }
    const Eigen::VectorXd row =
        reduce_row(Eigen::Map<const Eigen::VectorXd>(raw.data(), static_cast<Eigen::Index>(raw.size())), m.pca, m.input);
    const Eigen::RowVectorXd r = row.transpose();
    const auto pred = m.model.predict(r);
    const Eigen::RowVectorXd fs = m.model.first_step_scores(r);
    return {pred.label, pred.score, std::vector<double>(fs.data(), fs.data() + fs.size())};
}

SubjectScore score_subject(const std::filesystem::path& model_path, std::span<const double> raw) {
    return score_subject(load_model(model_path), raw);
}

}  // namespace twostep

#include "twostep/learners.hpp"

#include "twostep/error.hpp"
#include "twostep/random.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

namespace twostep {

namespace {

constexpr std::array<LearnerKind, kLearnerKinds> kAllKinds = {
    LearnerKind::LogisticRegression, LearnerKind::PenalizedLogistic, LearnerKind::Lda,
    LearnerKind::GaussianNaiveBayes, LearnerKind::Knn,               LearnerKind::DecisionTree,
    LearnerKind::RandomForest,       LearnerKind::LinearSvm,         LearnerKind::RbfSvmApprox,
    LearnerKind::NeuralNet,          LearnerKind::ModelAvgNeuralNet, LearnerKind::BoostedStumps,
    LearnerKind::BayesLinear,        LearnerKind::WeightedKnn,
};

double sigmoid(double t) {
    if (t >= 0) return 1.0 / (1.0 + std::exp(-t));
    const double e = std::exp(t);
    return e / (1.0 + e);
}

std::vector<double> to_vec(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }
std::vector<double> to_vec(const Eigen::RowVectorXd& v) { return {v.data(), v.data() + v.size()}; }

Eigen::VectorXd vec_from(const nlohmann::json& j) {
    const auto v = j.get<std::vector<double>>();
    return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

Eigen::RowVectorXd row_from(const nlohmann::json& j) { return vec_from(j).transpose(); }

nlohmann::json mat_to_json(const Eigen::MatrixXd& m) {
    std::vector<double> flat(static_cast<std::size_t>(m.size()));
    Eigen::Map<Eigen::MatrixXd>(flat.data(), m.rows(), m.cols()) = m;
    return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", flat}};
}

Eigen::MatrixXd mat_from(const nlohmann::json& j) {
    const auto rows = j.at("rows").get<Eigen::Index>();
    const auto cols = j.at("cols").get<Eigen::Index>();
    const auto flat = j.at("data").get<std::vector<double>>();
    if (static_cast<Eigen::Index>(flat.size()) != rows * cols) fail(ErrorKind::CorruptManifest, "matrix size mismatch");
    return Eigen::Map<const Eigen::MatrixXd>(flat.data(), rows, cols);
}

double hp_get(const Hyperparams& hp, const std::string& key) {
    const auto it = hp.find(key);
    if (it == hp.end()) fail(ErrorKind::InvalidConfig, "missing hyperparameter '" + key + "'");
    return it->second;
}

// ---------------------------------------------------------------------------
// Feature standardization shared by the distance- and gradient-based learners.

struct Standardizer {
    Eigen::RowVectorXd mean;
    Eigen::RowVectorXd inv_sd;

    static Standardizer fit(const Eigen::MatrixXd& x) {
        Standardizer s;
        s.mean = x.colwise().mean();
        const Eigen::MatrixXd c = x.rowwise() - s.mean;
        const double denom = std::max<double>(1.0, static_cast<double>(x.rows() - 1));
        Eigen::RowVectorXd sd = (c.colwise().squaredNorm() / denom).cwiseSqrt();
        s.inv_sd = sd.unaryExpr([](double v) { return v > 1e-12 ? 1.0 / v : 1.0; });
        return s;
    }

    Eigen::MatrixXd apply(const Eigen::MatrixXd& x) const {
        return (x.rowwise() - mean).array().rowwise() * inv_sd.array();
    }

    Eigen::RowVectorXd apply(const Eigen::Ref<const Eigen::RowVectorXd>& row) const {
        return (row - mean).cwiseProduct(inv_sd);
    }

    nlohmann::json to_json() const { return {{"mean", to_vec(mean)}, {"inv_sd", to_vec(inv_sd)}}; }

    static Standardizer from_json(const nlohmann::json& j) {
        Standardizer s;
        s.mean = row_from(j.at("mean"));
        s.inv_sd = row_from(j.at("inv_sd"));
        return s;
    }
};

// ---------------------------------------------------------------------------
// Ridge-penalized logistic regression by damped Newton iterations. The
// intercept carries `intercept_penalty` instead of `lambda`.

struct LogisticFit {
    Eigen::VectorXd beta;  // [intercept, weights...]
    Eigen::MatrixXd hessian;
    double gradient_norm = 0.0;
    bool converged = false;
};

LogisticFit newton_logistic(const Eigen::MatrixXd& z, std::span<const int> y, double lambda,
                            double intercept_penalty = 0.0) {
    const auto n = z.rows();
    const auto p = z.cols();
    Eigen::MatrixXd a(n, p + 1);
    a.col(0).setOnes();
    a.rightCols(p) = z;
    Eigen::VectorXd yy(n);
    for (Eigen::Index i = 0; i < n; ++i) yy[i] = y[static_cast<std::size_t>(i)];
    Eigen::VectorXd pen = Eigen::VectorXd::Constant(p + 1, lambda);
    pen[0] = intercept_penalty;

    auto loss = [&](const Eigen::VectorXd& beta) {
        const Eigen::VectorXd eta = a * beta;
        double l = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            const double e = eta[i];
            // log(1 + exp(e)) - y e, stable
            l += (e > 0 ? e + std::log1p(std::exp(-e)) : std::log1p(std::exp(e))) - yy[i] * e;
        }
        return l + 0.5 * beta.cwiseProduct(pen).dot(beta);
    };

    LogisticFit out;
    out.beta = Eigen::VectorXd::Zero(p + 1);
    double current = loss(out.beta);
    for (int iter = 0; iter < 100; ++iter) {
        const Eigen::VectorXd eta = a * out.beta;
        Eigen::VectorXd prob(n), curv(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            prob[i] = sigmoid(eta[i]);
            curv[i] = std::max(prob[i] * (1.0 - prob[i]), 1e-12);
        }
        const Eigen::VectorXd grad = a.transpose() * (prob - yy) + pen.cwiseProduct(out.beta);
        out.hessian = a.transpose() * curv.asDiagonal() * a;
        out.hessian.diagonal() += pen + Eigen::VectorXd::Constant(p + 1, 1e-9);
        out.gradient_norm = grad.norm();
        if (out.gradient_norm < 1e-7 * std::max<double>(1.0, static_cast<double>(n))) {
            out.converged = true;
            break;
        }
        const Eigen::VectorXd step = out.hessian.ldlt().solve(grad);
        double t = 1.0;
        Eigen::VectorXd trial = out.beta - step;
        double trial_loss = loss(trial);
        while (trial_loss > current && t > 1e-8) {
            t *= 0.5;
            trial = out.beta - t * step;
            trial_loss = loss(trial);
        }
        if (!(trial_loss <= current)) break;
        out.beta = trial;
        current = trial_loss;
    }
    return out;
}

// ---------------------------------------------------------------------------

class LogisticModel final : public detail::Model {
public:
    Standardizer std_;
    Eigen::VectorXd beta_;

    double score(const Eigen::Ref<const Eigen::RowVectorXd>& row) const override {
        const Eigen::RowVectorXd z = std_.apply(row);
        return sigmoid(beta_[0] + z.dot(beta_.tail(beta_.size() - 1)));
    }
    nlohmann::json params() const override { return {{"std", std_.to_json()}, {"beta", to_vec(beta_)}}; }
    static std::shared_ptr<LogisticModel> from(const nlohmann::json& j) {
        auto m = std::make_shared<LogisticModel>();
        m->std_ = Standardizer::from_json(j.at("std"));
        m->beta_ = vec_from(j.at("beta"));
        return m;
    }
};

// Laplace-approximate Bayesian logistic regression with an isotropic Gaussian
// prior; the predictive score is the probit-moderated posterior mean.
class BayesLinearModel final : public detail::Model {
public:
    Standardizer std_;
    Eigen::VectorXd beta_;
    Eigen::MatrixXd cov_;

    double score(const Eigen::Ref<const Eigen::RowVectorXd>& row) const override {
        Eigen::VectorXd a(beta_.size());
        a[0] = 1.0;
        a.tail(beta_.size() - 1) = std_.apply(row).transpose();
        const double mu = a.dot(beta_);
        const double s2 = std::max(0.0, a.dot(cov_ * a));
        return sigmoid(mu / std::sqrt(1.0 + std::numbers::pi * s2 / 8.0));
    }
    nlohmann::json params() const override {
        return {{"std", std_.to_json()}, {"beta", to_vec(beta_)}, {"cov", mat_to_json(cov_)}};
    }
    static std::shared_ptr<BayesLinearModel> from(const nlohmann::json& j) {
        auto m = std::make_shared<BayesLinearModel>();
        m->std_ = Standardizer::from_json(j.at("std"));
        m->beta_ = vec_from(j.at("beta"));
        m->cov_ = mat_from(j.at("cov"));
        return m;
    }
};

class LdaModel final : public detail::Model {
public:
    Standardizer std_;
    Eigen::VectorXd w_;
    double b_ = 0.0;

    double score(const Eigen::Ref<const Eigen::RowVectorXd>& row) const override {
        return sigmoid(std_.apply(row).dot(w_) + b_);
    }
    nlohmann::json params() const override { return {{"std", std_.to_json()}, {"w", to_vec(w_)}, {"b", b_}}; }
    static std::shared_ptr<LdaModel> from(const nlohmann::json& j) {
        auto m = std::make_shared<LdaModel>();
        m->std_ = Standardizer::from_json(j.at("std"));
        m->w_ = vec_from(j.at("w"));
        m->b_ = j.at("b").get<double>();
        return m;
    }
};

class NaiveBayesModel final : public detail::Model {
public:
    Eigen::RowVectorXd mean0_, mean1_, var0_, var1_;
    double log_prior_ratio_ = 0.0;

    double score(const Eigen::Ref<const Eigen::RowVectorXd>& row) const override {
        double d = log_prior_ratio_;
        for (Eigen::Index j = 0; j < row.size(); ++j) {
            const double a = row[j] - mean1_[j];
            const double b = row[j] - mean0_[j];
            d += -0.5 * std::log(var1_[j]) - 0.5 * a * a / var1_[j] + 0.5 * std::log(var0_[j]) + 0.5 * b * b / var0_[j];
        }
        return sigmoid(d);
    }
    nlohmann::json params() const override {
        return {{"mean0", to_vec(mean0_)}, {"mean1", to_vec(mean1_)}, {"var0", to_vec(var0_)},
                {"var1", to_vec(var1_)},   {"log_prior_ratio", log_prior_ratio_}};
    }
    static std::shared_ptr<NaiveBayesModel> from(const nlohmann::json& j) {
        auto m = std::make_shared<NaiveBayesModel>();
        m->mean0_ = row_from(j.at("mean0"));
        m->mean1_ = row_from(j.at("mean1"));
        m->var0_ = row_from(j.at("var0"));
        m->var1_ = row_from(j.at("var1"));
        m->log_prior_ratio_ = j.at("log_prior_ratio").get<double>();
        return m;
    }
};

class KnnModel final : public detail::Model {
public:
    Standardizer std_;
    Eigen::MatrixXd points_;
    std::vector<int> labels_;
    int k_ = 5;
    bool distance_weighted_ = false;

    double score(const Eigen::Ref<const Eigen::RowVectorXd>& row) const override {
        const Eigen::RowVectorXd z = std_.apply(row);
        const auto n = points_.rows();
        std::vector<std::pair<double, Eigen::Index>> dist(static_cast<std::size_t>(n));
        for (Eigen::Index i = 0; i < n; ++i) dist[static_cast<std::size_t>(i)] = {(points_.row(i) - z).squaredNorm(), i};
        const auto k = static_cast<std::size_t>(std::min<Eigen::Index>(k_, n));
        std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k), dist.end());
        double num = 0.0, den = 0.0;
        for (std::size_t i = 0; i < k; ++i) {
            const double w = distance_weighted_ ? 1.0 / (std::sqrt(dist[i].first) + 1e-6) : 1.0;
            den += w;
            if (labels_[static_cast<std::size_t>(dist[i].second)] == 1) num += w;
        }
        return num / den;
    }
    nlohmann::json params() const override {
        return {{"std", std_.to_json()}, {"points", mat_to_json(points_)}, {"labels", labels_},
                {"k", k_},               {"distance_weighted", distance_weighted_}};
    }
    static std::shared_ptr<KnnModel> from(const nlohmann::json& j) {
        auto m = std::make_shared<KnnModel>();
        m->std_ = Standardizer::from_json(j.at("std"));
        m->points_ = mat_from(j.at("points"));
        m->labels_ = j.at("labels").get<std::vector<int>>();
        m->k_ = j.at("k").get<int>();
        m->distance_weighted_ = j.at("distance_weighted").get<bool>();
        return m;
    }
};

class TreeModel final : public detail::Model {
public:
    twostep::DecisionTree tree_;

    double score(const Eigen::Ref<const Eigen::RowVectorXd>& row) const override { return tree_.predict(row); }
    nlohmann::json params() const override { return {{"tree", tree_.to_json()}}; }
    static std::shared_ptr<TreeModel> from(const nlohmann::json& j) {
        auto m = std::make_shared<TreeModel>();
        m->tree_ = twostep::DecisionTree::from_json(j.at("tree"));
        return m;
    }
};

class ForestModel final : public detail::Model {
public:
    twostep::RandomForest forest_;

    double score(const Eigen::Ref<const Eigen::RowVectorXd>& row) const override { return forest_.predict(row); }
    nlohmann::json params() const override { return {{"forest", forest_.to_json()}}; }
    static std::shared_ptr<ForestModel> from(const nlohmann::json& j) {
        auto m = std::make_shared<ForestModel>();
        m->forest_ = twostep::RandomForest::from_json(j.at("forest"));
        return m;
    }
};

// Linear margin on standardized (optionally random-Fourier-mapped) inputs,
// squashed through a logistic with a fitted slope.
class SvmModel final : public detail::Model {
public:
    Standardizer std_;
    Eigen::MatrixXd omega_;  // p x D, empty for the linear kernel
    Eigen::RowVectorXd phase_;
    Eigen::VectorXd w_;
    double b_ = 0.0;
    double slope_ = 1.0;

    Eigen::RowVectorXd features(const Eigen::Ref<const Eigen::RowVectorXd>& row) const {
        const Eigen::RowVectorXd z = std_.apply(row);
        if (omega_.size() == 0) return z;
        const double scale = std::sqrt(2.0 / static_cast<double>(omega_.cols()));
        return ((z * omega_ + phase_).array().cos() * scale).matrix();
    }
    double margin(const Eigen::Ref<const Eigen::RowVectorXd>& row) const { return features(row).dot(w_) + b_; }
    double score(const Eigen::Ref<const Eigen::RowVectorXd>& row) const override { return sigmoid(slope_ * margin(row)); }
    nlohmann::json params() const override {
        return {{"std", std_.to_json()}, {"omega", mat_to_json(omega_)}, {"phase", to_vec(phase_)},
                {"w", to_vec(w_)},       {"b", b_},                      {"slope", slope_}};
    }
    static std::shared_ptr<SvmModel> from(const nlohmann::json& j) {
        auto m = std::make_shared<SvmModel>();
        m->std_ = Standardizer::from_json(j.at("std"));
        m->omega_ = mat_from(j.at("omega"));
        m->phase_ = row_from(j.at("phase"));
        m->w_ = vec_from(j.at("w"));
        m->b_ = j.at("b").get<double>();
        m->slope_ = j.at("slope").get<double>();
        return m;
    }
};

struct Net {
    Eigen::MatrixXd w1;  // p x h
    Eigen::RowVectorXd b1;
    Eigen::VectorXd w2;  // h
    double b2 = 0.0;

    double forward(const Eigen::RowVectorXd& z) const {
        const Eigen::RowVectorXd hidden = (z * w1 + b1).unaryExpr([](double t) { return sigmoid(t); });
        return sigmoid(hidden.dot(w2) + b2);
    }
    nlohmann::json to_json() const {
        return {{"w1", mat_to_json(w1)}, {"b1", to_vec(b1)}, {"w2", to_vec(w2)}, {"b2", b2}};
    }
    static Net from_json(const nlohmann::json& j) {
        return {mat_from(j.at("w1")), row_from(j.at("b1")), vec_from(j.at("w2")), j.at("b2").get<double>()};
    }
};

class NetEnsembleModel final : public detail::Model {
public:
    Standardizer std_;
    std::vector<Net> nets_;

    double score(const Eigen::Ref<const Eigen::RowVectorXd>& row) const override {
        const Eigen::RowVectorXd z = std_.apply(row);
        double s = 0.0;
        for (const auto& n : nets_) s += n.forward(z);
        return s / static_cast<double>(nets_.size());
    }
    nlohmann::json params() const override {
        nlohmann::json nets = nlohmann::json::array();
        for (const auto& n : nets_) nets.push_back(n.to_json());
        return {{"std", std_.to_json()}, {"nets", nets}};
    }
    static std::shared_ptr<NetEnsembleModel> from(const nlohmann::json& j) {
        auto m = std::make_shared<NetEnsembleModel>();
        m->std_ = Standardizer::from_json(j.at("std"));
        for (const auto& n : j.at("nets")) m->nets_.push_back(Net::from_json(n));
        if (m->nets_.empty()) fail(ErrorKind::CorruptManifest, "network ensemble is empty");
        return m;
    }
};

struct WeightedStump {
    Stump stump;
    double alpha = 0.0;
};

class BoostModel final : public detail::Model {
public:
    std::vector<WeightedStump> stumps_;

    double margin(const Eigen::Ref<const Eigen::RowVectorXd>& row) const {
        double f = 0.0;
        for (const auto& s : stumps_) {
            const int label = row[s.stump.feature] <= s.stump.threshold ? s.stump.left_label : 1 - s.stump.left_label;
            f += s.alpha * (label == 1 ? 1.0 : -1.0);
        }
        return f;
    }
    double score(const Eigen::Ref<const Eigen::RowVectorXd>& row) const override { return sigmoid(2.0 * margin(row)); }
    nlohmann::json params() const override {
        nlohmann::json arr = nlohmann::json::array();
        for (const auto& s : stumps_) {
            arr.push_back({{"feature", s.stump.feature},
                           {"threshold", s.stump.threshold},
                           {"left_label", s.stump.left_label},
                           {"alpha", s.alpha}});
        }
        return {{"stumps", arr}};
    }
    static std::shared_ptr<BoostModel> from(const nlohmann::json& j) {
        auto m = std::make_shared<BoostModel>();
        for (const auto& s : j.at("stumps")) {
            m->stumps_.push_back({{s.at("feature").get<int>(), s.at("threshold").get<double>(),
                                   s.at("left_label").get<int>()},
                                  s.at("alpha").get<double>()});
        }
        return m;
    }
};

// ---------------------------------------------------------------------------
// Fitting routines.

std::shared_ptr<detail::Model> fit_logistic(const Eigen::MatrixXd& x, std::span<const int> y, double lambda,
                                            FitDiagnostics& diag) {
    auto m = std::make_shared<LogisticModel>();
    m->std_ = Standardizer::fit(x);
    auto res = newton_logistic(m->std_.apply(x), y, lambda);
    m->beta_ = res.beta;
    diag.converged = res.converged;
    diag.gradient_norm = res.gradient_norm;
    return m;
}

std::shared_ptr<detail::Model> fit_bayes_linear(const Eigen::MatrixXd& x, std::span<const int> y, double prior_var,
                                                FitDiagnostics& diag) {
    auto m = std::make_shared<BayesLinearModel>();
    m->std_ = Standardizer::fit(x);
    auto res = newton_logistic(m->std_.apply(x), y, 1.0 / prior_var, 1e-4);
    m->beta_ = res.beta;
    m->cov_ = res.hessian.ldlt().solve(Eigen::MatrixXd::Identity(res.hessian.rows(), res.hessian.cols()));
    diag.converged = res.converged;
    diag.gradient_norm = res.gradient_norm;
    return m;
}

std::shared_ptr<detail::Model> fit_lda(const Eigen::MatrixXd& x, std::span<const int> y, double shrinkage,
                                       FitDiagnostics& diag) {
    auto m = std::make_shared<LdaModel>();
    m->std_ = Standardizer::fit(x);
    const Eigen::MatrixXd z = m->std_.apply(x);
    const auto p = z.cols();
    Eigen::RowVectorXd mu0 = Eigen::RowVectorXd::Zero(p), mu1 = Eigen::RowVectorXd::Zero(p);
    double n0 = 0, n1 = 0;
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
        if (y[static_cast<std::size_t>(i)] == 1) {
            mu1 += z.row(i);
            n1 += 1;
        } else {
            mu0 += z.row(i);
            n0 += 1;
        }
    }
    mu0 /= n0;
    mu1 /= n1;
    Eigen::MatrixXd s = Eigen::MatrixXd::Zero(p, p);
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
        const Eigen::RowVectorXd d = z.row(i) - (y[static_cast<std::size_t>(i)] == 1 ? mu1 : mu0);
        s.noalias() += d.transpose() * d;
    }
    s /= std::max(1.0, n0 + n1 - 2.0);
    const double avg_var = s.trace() / static_cast<double>(p);
    s = (1.0 - shrinkage) * s;
    s.diagonal().array() += shrinkage * avg_var;

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(s);
    const double max_ev = eig.eigenvalues().maxCoeff();
    if (eig.eigenvalues().minCoeff() <= 1e-10 * std::max(max_ev, 1e-300)) {
        diag.singular_covariance = true;
        s.diagonal().array() += 1e-3 * std::max(avg_var, 1e-12);
    }
    m->w_ = s.ldlt().solve((mu1 - mu0).transpose());
    m->b_ = -0.5 * (mu1 + mu0).dot(m->w_) + std::log(n1 / n0);
    return m;
}

std::shared_ptr<detail::Model> fit_naive_bayes(const Eigen::MatrixXd& x, std::span<const int> y, double smoothing) {
    auto m = std::make_shared<NaiveBayesModel>();
    const auto p = x.cols();
    Eigen::RowVectorXd s0 = Eigen::RowVectorXd::Zero(p), s1 = s0, q0 = s0, q1 = s0;
    double n0 = 0, n1 = 0;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        if (y[static_cast<std::size_t>(i)] == 1) {
            s1 += x.row(i);
            n1 += 1;
        } else {
            s0 += x.row(i);
            n0 += 1;
        }
    }
    m->mean0_ = s0 / n0;
    m->mean1_ = s1 / n1;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        if (y[static_cast<std::size_t>(i)] == 1) {
            q1 += (x.row(i) - m->mean1_).cwiseAbs2();
        } else {
            q0 += (x.row(i) - m->mean0_).cwiseAbs2();
        }
    }
    m->var0_ = q0 / n0;
    m->var1_ = q1 / n1;
    const double total_var_max =
        ((x.rowwise() - x.colwise().mean()).colwise().squaredNorm() / static_cast<double>(x.rows())).maxCoeff();
    const double eps = smoothing * std::max(total_var_max, 1e-300);
    m->var0_.array() += eps;
    m->var1_.array() += eps;
    m->log_prior_ratio_ = std::log(n1 / n0);
    return m;
}

std::shared_ptr<detail::Model> fit_knn(const Eigen::MatrixXd& x, std::span<const int> y, int k, bool weighted) {
    auto m = std::make_shared<KnnModel>();
    m->std_ = Standardizer::fit(x);
    m->points_ = m->std_.apply(x);
    m->labels_.assign(y.begin(), y.end());
    m->k_ = k;
    m->distance_weighted_ = weighted;
    return m;
}

// Full-batch subgradient descent on the L2-regularized hinge loss (Pegasos
// step schedule with projection), averaged over the second half of the run.
void fit_hinge(const Eigen::MatrixXd& f, std::span<const int> y, double lambda, int iterations, Eigen::VectorXd& w,
               double& b) {
    const auto n = f.rows();
    const auto d = f.cols();
    Eigen::VectorXd s(n);
    for (Eigen::Index i = 0; i < n; ++i) s[i] = y[static_cast<std::size_t>(i)] == 1 ? 1.0 : -1.0;
    Eigen::VectorXd cur = Eigen::VectorXd::Zero(d);
    double cur_b = 0.0;
    Eigen::VectorXd avg = Eigen::VectorXd::Zero(d);
    double avg_b = 0.0;
    int averaged = 0;
    const double radius = 1.0 / std::sqrt(lambda);
    for (int t = 1; t <= iterations; ++t) {
        const double eta = 1.0 / (lambda * (t + 10.0));
        const Eigen::VectorXd margin = ((f * cur).array() + cur_b).matrix().cwiseProduct(s);
        Eigen::VectorXd g = lambda * cur;
        double gb = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            if (margin[i] < 1.0) {
                g.noalias() -= (s[i] / static_cast<double>(n)) * f.row(i).transpose();
                gb -= s[i] / static_cast<double>(n);
            }
        }
        cur -= eta * g;
        cur_b -= eta * gb * lambda * 10.0;
        const double norm = cur.norm();
        if (norm > radius) cur *= radius / norm;
        if (t > iterations / 2) {
            avg += cur;
            avg_b += cur_b;
            ++averaged;
        }
    }
    w = avg / averaged;
    b = avg_b / averaged;
}

// 1-D maximum likelihood for the slope a > 0 in P(y=1) = sigmoid(a m).
double fit_slope(const Eigen::VectorXd& margin, std::span<const int> y) {
    double a = 1.0;
    for (int iter = 0; iter < 50; ++iter) {
        double g = 0.0, h = 0.0;
        for (Eigen::Index i = 0; i < margin.size(); ++i) {
            const double p = sigmoid(a * margin[i]);
            g += (p - y[static_cast<std::size_t>(i)]) * margin[i];
            h += p * (1.0 - p) * margin[i] * margin[i];
        }
        if (h <= 1e-12) break;
        const double next = std::clamp(a - g / h, 1e-3, 1e3);
        if (std::abs(next - a) < 1e-10) {
            a = next;
            break;
        }
        a = next;
    }
    return a;
}

std::shared_ptr<detail::Model> fit_svm(const Eigen::MatrixXd& x, std::span<const int> y, double lambda, double gamma,
                                       int features, Rng& rng) {
    auto m = std::make_shared<SvmModel>();
    m->std_ = Standardizer::fit(x);
    const Eigen::MatrixXd z = m->std_.apply(x);
    Eigen::MatrixXd f = z;
    if (gamma > 0) {
        m->omega_.resize(z.cols(), features);
        const double sd = std::sqrt(2.0 * gamma);
        for (Eigen::Index c = 0; c < m->omega_.cols(); ++c) {
            for (Eigen::Index r = 0; r < m->omega_.rows(); ++r) m->omega_(r, c) = sd * rng.normal();
        }
        m->phase_.resize(features);
        for (Eigen::Index c = 0; c < features; ++c) m->phase_[c] = rng.uniform(0.0, 2.0 * std::numbers::pi);
        const double scale = std::sqrt(2.0 / static_cast<double>(features));
        f = (((z * m->omega_).rowwise() + m->phase_).array().cos() * scale).matrix();
    } else {
        m->phase_.resize(0);
    }
    fit_hinge(f, y, lambda, 200, m->w_, m->b_);
    const Eigen::VectorXd margin = (f * m->w_).array() + m->b_;
    m->slope_ = fit_slope(margin, y);
    return m;
}

Net train_net(const Eigen::MatrixXd& z, std::span<const int> y, int width, double decay, int iterations, Rng& rng) {
    const auto n = z.rows();
    const auto p = z.cols();
    Net net;
    net.w1.resize(p, width);
    for (Eigen::Index c = 0; c < width; ++c) {
        for (Eigen::Index r = 0; r < p; ++r) net.w1(r, c) = rng.normal() / std::sqrt(static_cast<double>(p));
    }
    net.b1 = Eigen::RowVectorXd::Zero(width);
    net.w2.resize(width);
    for (Eigen::Index c = 0; c < width; ++c) net.w2[c] = rng.normal() / std::sqrt(static_cast<double>(width));
    Eigen::VectorXd yy(n);
    for (Eigen::Index i = 0; i < n; ++i) yy[i] = y[static_cast<std::size_t>(i)];

    Eigen::MatrixXd v1 = Eigen::MatrixXd::Zero(p, width);
    Eigen::RowVectorXd vb1 = Eigen::RowVectorXd::Zero(width);
    Eigen::VectorXd v2 = Eigen::VectorXd::Zero(width);
    double vb2 = 0.0;
    constexpr double kRate = 0.3;
    constexpr double kMomentum = 0.9;
    const double inv_n = 1.0 / static_cast<double>(n);
    Eigen::MatrixXd hidden(n, width);
    for (int it = 0; it < iterations; ++it) {
        hidden.noalias() = z * net.w1;
        hidden.rowwise() += net.b1;
        hidden = hidden.unaryExpr([](double t) { return sigmoid(t); });
        Eigen::VectorXd out = (hidden * net.w2).array() + net.b2;
        out = out.unaryExpr([](double t) { return sigmoid(t); });
        const Eigen::VectorXd delta = (out - yy) * inv_n;
        const Eigen::VectorXd g2 = hidden.transpose() * delta + decay * net.w2;
        const double gb2 = delta.sum();
        const Eigen::MatrixXd dh =
            (delta * net.w2.transpose()).array() * hidden.array() * (1.0 - hidden.array());
        const Eigen::MatrixXd g1 = z.transpose() * dh + decay * net.w1;
        const Eigen::RowVectorXd gb1 = dh.colwise().sum();
        v1 = kMomentum * v1 - kRate * g1;
        vb1 = kMomentum * vb1 - kRate * gb1;
        v2 = kMomentum * v2 - kRate * g2;
        vb2 = kMomentum * vb2 - kRate * gb2;
        net.w1 += v1;
        net.b1 += vb1;
        net.w2 += v2;
        net.b2 += vb2;
    }
    return net;
}

std::shared_ptr<detail::Model> fit_nets(const Eigen::MatrixXd& x, std::span<const int> y, int width, double decay,
                                        int members, std::uint64_t seed) {
    auto m = std::make_shared<NetEnsembleModel>();
    m->std_ = Standardizer::fit(x);
    const Eigen::MatrixXd z = m->std_.apply(x);
    for (int i = 0; i < members; ++i) {
        Rng rng(mix_seed(seed, static_cast<std::uint64_t>(i)));
        m->nets_.push_back(train_net(z, y, width, decay, 250, rng));
    }
    return m;
}

std::shared_ptr<detail::Model> fit_boost(const Eigen::MatrixXd& x, std::span<const int> y, int rounds) {
    auto m = std::make_shared<BoostModel>();
    const auto n = y.size();
    std::vector<double> w(n, 1.0 / static_cast<double>(n));
    for (int r = 0; r < rounds; ++r) {
        const Stump s = best_error_stump(x, y, w);
        double err = 0.0, total = 0.0;
        std::vector<int> pred(n);
        for (std::size_t i = 0; i < n; ++i) {
            const double v = x(static_cast<Eigen::Index>(i), s.feature);
            pred[i] = v <= s.threshold ? s.left_label : 1 - s.left_label;
            total += w[i];
            if (pred[i] != y[i]) err += w[i];
        }
        err = std::clamp(err / total, 1e-10, 1.0);
        if (err >= 0.5) {
            if (m->stumps_.empty()) m->stumps_.push_back({s, 0.0});
            break;
        }
        const double alpha = 0.5 * std::log((1.0 - err) / err);
        m->stumps_.push_back({s, alpha});
        double norm = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            w[i] *= std::exp(pred[i] == y[i] ? -alpha : alpha);
            norm += w[i];
        }
        for (auto& v : w) v /= norm;
    }
    return m;
}

}  // namespace

// ---------------------------------------------------------------------------

const char* to_string(LearnerKind kind) noexcept {
    switch (kind) {
        case LearnerKind::LogisticRegression: return "logistic_regression";
        case LearnerKind::PenalizedLogistic: return "penalized_logistic";
        case LearnerKind::Lda: return "lda";
        case LearnerKind::GaussianNaiveBayes: return "gaussian_naive_bayes";
        case LearnerKind::Knn: return "knn";
        case LearnerKind::DecisionTree: return "decision_tree";
        case LearnerKind::RandomForest: return "random_forest";
        case LearnerKind::LinearSvm: return "linear_svm";
        case LearnerKind::RbfSvmApprox: return "rbf_svm_approx";
        case LearnerKind::NeuralNet: return "neural_net_1h";
        case LearnerKind::ModelAvgNeuralNet: return "model_avg_neural_net";
        case LearnerKind::BoostedStumps: return "boosted_stumps";
        case LearnerKind::BayesLinear: return "bayes_linear";
        case LearnerKind::WeightedKnn: return "weighted_knn";
    }
    return "?";
}

LearnerKind learner_kind_from_string(std::string_view name) {
    for (LearnerKind k : kAllKinds) {
        if (name == to_string(k)) return k;
    }
    fail(ErrorKind::InvalidConfig, "unknown learner kind '" + std::string(name) + "'");
}

std::span<const LearnerKind> all_learner_kinds() { return kAllKinds; }

std::string to_string(const Hyperparams& hp) {
    std::ostringstream os;
    bool first = true;
    for (const auto& [k, v] : hp) {
        if (!first) os << ' ';
        os << k << '=' << v;
        first = false;
    }
    return os.str();
}

LearnerSpec default_spec(LearnerKind kind, std::uint64_t seed) {
    LearnerSpec s;
    s.kind = kind;
    s.seed = seed;
    auto grid1 = [&](const std::string& key, std::initializer_list<double> values) {
        for (double v : values) s.grid.push_back({{key, v}});
    };
    switch (kind) {
        case LearnerKind::LogisticRegression: grid1("lambda", {1e-3}); break;
        case LearnerKind::PenalizedLogistic: grid1("lambda", {0.1, 1.0, 10.0, 100.0}); break;
        case LearnerKind::Lda: grid1("shrinkage", {0.0, 0.2}); break;
        case LearnerKind::GaussianNaiveBayes: grid1("var_smoothing", {1e-9}); break;
        case LearnerKind::Knn: grid1("k", {5, 11, 21}); break;
        case LearnerKind::DecisionTree:
            for (double d : {2.0, 3.0, 5.0}) s.grid.push_back({{"max_depth", d}, {"min_leaf", 5}});
            break;
        case LearnerKind::RandomForest:
            for (double f : {0.2, 0.35}) {
                s.grid.push_back({{"n_trees", 100}, {"mtry_fraction", f}, {"max_depth", 10}, {"bootstrap", 1}});
            }
            break;
        case LearnerKind::LinearSvm: grid1("lambda", {1e-3, 1e-2, 1e-1}); break;
        case LearnerKind::RbfSvmApprox:
            for (double g : {0.005, 0.02, 0.08}) s.grid.push_back({{"gamma", g}, {"lambda", 1e-2}, {"features", 100}});
            break;
        case LearnerKind::NeuralNet:
            for (double w : {4.0, 8.0, 16.0}) s.grid.push_back({{"width", w}, {"decay", 1e-2}});
            break;
        case LearnerKind::ModelAvgNeuralNet:
            for (double w : {4.0, 8.0, 16.0}) s.grid.push_back({{"width", w}, {"decay", 1e-2}, {"members", 5}});
            break;
        case LearnerKind::BoostedStumps: grid1("rounds", {10, 30, 100}); break;
        case LearnerKind::BayesLinear: grid1("prior_var", {0.1, 1.0, 10.0}); break;
        case LearnerKind::WeightedKnn: grid1("k", {9, 19, 35}); break;
    }
    return s;
}

std::vector<LearnerSpec> default_roster(std::uint64_t seed) {
    std::vector<LearnerSpec> out;
    for (std::size_t i = 0; i < kAllKinds.size(); ++i) out.push_back(default_spec(kAllKinds[i], mix_seed(seed, i)));
    return out;
}

nlohmann::json to_json(const LearnerSpec& spec) {
    nlohmann::json grid = nlohmann::json::array();
    for (const auto& hp : spec.grid) grid.push_back(hp);
    return {{"kind", to_string(spec.kind)}, {"grid", grid}, {"seed", spec.seed}};
}

LearnerSpec learner_spec_from_json(const nlohmann::json& j) {
    LearnerSpec s;
    s.kind = learner_kind_from_string(j.at("kind").get<std::string>());
    if (j.contains("grid")) {
        for (const auto& hp : j.at("grid")) s.grid.push_back(hp.get<Hyperparams>());
    } else {
        s.grid = default_spec(s.kind).grid;
    }
    s.seed = j.value("seed", std::uint64_t{0});
    if (s.grid.empty()) fail(ErrorKind::InvalidConfig, std::string("empty grid for ") + to_string(s.kind));
    return s;
}

TrainedClassifier::TrainedClassifier(LearnerKind kind, Hyperparams hp, std::uint64_t seed, Index feature_count,
                                     FitDiagnostics diag, std::shared_ptr<const detail::Model> model)
    : kind_(kind),
      hyperparams_(std::move(hp)),
      seed_(seed),
      feature_count_(feature_count),
      diag_(diag),
      model_(std::move(model)) {}

double TrainedClassifier::predict_score(const Eigen::Ref<const Eigen::RowVectorXd>& row) const {
    if (static_cast<Index>(row.size()) != feature_count_) {
        fail(ErrorKind::DimensionMismatch, std::string(to_string(kind_)) + ": expected " +
                                               std::to_string(feature_count_) + " features, got " +
                                               std::to_string(row.size()));
    }
    return std::clamp(model_->score(row), 0.0, 1.0);
}

int TrainedClassifier::predict_label(const Eigen::Ref<const Eigen::RowVectorXd>& row) const {
    return threshold_label(predict_score(row));
}

Eigen::VectorXd TrainedClassifier::predict_scores(const Eigen::MatrixXd& x) const {
    Eigen::VectorXd out(x.rows());
    for (Eigen::Index i = 0; i < x.rows(); ++i) out[i] = predict_score(x.row(i));
    return out;
}

const RandomForest* TrainedClassifier::forest() const {
    const auto* m = dynamic_cast<const ForestModel*>(model_.get());
    return m ? &m->forest_ : nullptr;
}

const DecisionTree* TrainedClassifier::tree() const {
    const auto* m = dynamic_cast<const TreeModel*>(model_.get());
    return m ? &m->tree_ : nullptr;
}

nlohmann::json TrainedClassifier::to_json() const {
    return {{"kind", to_string(kind_)},
            {"hyperparams", hyperparams_},
            {"seed", seed_},
            {"feature_count", feature_count_},
            {"diagnostics",
             {{"converged", diag_.converged},
              {"gradient_norm", diag_.gradient_norm},
              {"singular_covariance", diag_.singular_covariance}}},
            {"params", model_->params()}};
}

TrainedClassifier TrainedClassifier::from_json(const nlohmann::json& j) {
    try {
        const auto kind = learner_kind_from_string(j.at("kind").get<std::string>());
        const auto& p = j.at("params");
        std::shared_ptr<const detail::Model> model;
        switch (kind) {
            case LearnerKind::LogisticRegression:
            case LearnerKind::PenalizedLogistic: model = LogisticModel::from(p); break;
            case LearnerKind::BayesLinear: model = BayesLinearModel::from(p); break;
            case LearnerKind::Lda: model = LdaModel::from(p); break;
            case LearnerKind::GaussianNaiveBayes: model = NaiveBayesModel::from(p); break;
            case LearnerKind::Knn:
            case LearnerKind::WeightedKnn: model = KnnModel::from(p); break;
            case LearnerKind::DecisionTree: model = TreeModel::from(p); break;
            case LearnerKind::RandomForest: model = ForestModel::from(p); break;
            case LearnerKind::LinearSvm:
            case LearnerKind::RbfSvmApprox: model = SvmModel::from(p); break;
            case LearnerKind::NeuralNet:
            case LearnerKind::ModelAvgNeuralNet: model = NetEnsembleModel::from(p); break;
            case LearnerKind::BoostedStumps: model = BoostModel::from(p); break;
        }
        FitDiagnostics diag;
        const auto& d = j.at("diagnostics");
        diag.converged = d.at("converged").get<bool>();
        diag.gradient_norm = d.at("gradient_norm").get<double>();
        diag.singular_covariance = d.at("singular_covariance").get<bool>();
        return TrainedClassifier(kind, j.at("hyperparams").get<Hyperparams>(), j.at("seed").get<std::uint64_t>(),
                                 j.at("feature_count").get<Index>(), diag, std::move(model));
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::CorruptManifest, std::string("classifier record: ") + e.what());
    }
}

TrainedClassifier fit(const LearnerSpec& spec, const Hyperparams& hp, const Eigen::MatrixXd& x,
                      std::span<const int> y, std::uint64_t seed) {
    if (static_cast<std::size_t>(x.rows()) != y.size()) fail(ErrorKind::LengthMismatch, "rows and labels differ");
    const auto pos = static_cast<std::size_t>(std::count(y.begin(), y.end(), 1));
    if (pos < 2 || y.size() - pos < 2) {
        fail(ErrorKind::DegenerateClass, std::string(to_string(spec.kind)) + ": training data needs at least 2 rows per class");
    }
    FitDiagnostics diag;
    Rng rng(seed);
    std::shared_ptr<const detail::Model> model;
    const auto p = static_cast<double>(x.cols());
    switch (spec.kind) {
        case LearnerKind::LogisticRegression:
        case LearnerKind::PenalizedLogistic: model = fit_logistic(x, y, hp_get(hp, "lambda"), diag); break;
        case LearnerKind::BayesLinear: model = fit_bayes_linear(x, y, hp_get(hp, "prior_var"), diag); break;
        case LearnerKind::Lda: model = fit_lda(x, y, hp_get(hp, "shrinkage"), diag); break;
        case LearnerKind::GaussianNaiveBayes: model = fit_naive_bayes(x, y, hp_get(hp, "var_smoothing")); break;
        case LearnerKind::Knn: model = fit_knn(x, y, static_cast<int>(hp_get(hp, "k")), false); break;
        case LearnerKind::WeightedKnn: model = fit_knn(x, y, static_cast<int>(hp_get(hp, "k")), true); break;
        case LearnerKind::DecisionTree: {
            auto m = std::make_shared<TreeModel>();
            const std::vector<double> w(y.size(), 1.0);
            TreeParams tp{static_cast<int>(hp_get(hp, "max_depth")), hp_get(hp, "min_leaf"), 0};
            m->tree_ = DecisionTree::grow(x, y, w, tp, &rng);
            model = m;
            break;
        }
        case LearnerKind::RandomForest: {
            auto m = std::make_shared<ForestModel>();
            ForestParams fp;
            fp.n_trees = static_cast<int>(hp_get(hp, "n_trees"));
            fp.tree.max_depth = static_cast<int>(hp_get(hp, "max_depth"));
            fp.tree.min_leaf_weight = 1.0;
            fp.tree.mtry = std::max(1, static_cast<int>(std::ceil(hp_get(hp, "mtry_fraction") * p - 1e-9)));
            fp.bootstrap = hp_get(hp, "bootstrap") != 0.0;
            fp.vote = ForestVote::Hard;
            m->forest_ = RandomForest::fit(x, y, fp, rng.next());
            model = m;
            break;
        }
        case LearnerKind::LinearSvm: model = fit_svm(x, y, hp_get(hp, "lambda"), 0.0, 0, rng); break;
        case LearnerKind::RbfSvmApprox:
            model = fit_svm(x, y, hp_get(hp, "lambda"), hp_get(hp, "gamma"), static_cast<int>(hp_get(hp, "features")), rng);
            break;
        case LearnerKind::NeuralNet:
            model = fit_nets(x, y, static_cast<int>(hp_get(hp, "width")), hp_get(hp, "decay"), 1, rng.next());
            break;
        case LearnerKind::ModelAvgNeuralNet:
            model = fit_nets(x, y, static_cast<int>(hp_get(hp, "width")), hp_get(hp, "decay"),
                             static_cast<int>(hp_get(hp, "members")), rng.next());
            break;
        case LearnerKind::BoostedStumps: model = fit_boost(x, y, static_cast<int>(hp_get(hp, "rounds"))); break;
    }
    return TrainedClassifier(spec.kind, hp, seed, static_cast<Index>(x.cols()), diag, std::move(model));
}

std::vector<int> stratified_folds(std::span<const int> y, int folds, std::uint64_t seed) {
    std::vector<Index> pos, neg;
    for (Index i = 0; i < y.size(); ++i) (y[i] == 1 ? pos : neg).push_back(i);
    Rng rng(seed);
    rng.shuffle(pos);
    rng.shuffle(neg);
    std::vector<int> fold(y.size());
    // Deal positives then negatives round-robin, continuing the rotation so
    // fold sizes differ by at most one.
    int next = 0;
    for (Index i : pos) {
        fold[i] = next;
        next = (next + 1) % folds;
    }
    for (Index i : neg) {
        fold[i] = next;
        next = (next + 1) % folds;
    }
    return fold;
}

TuneResult tune(const LearnerSpec& spec, const Eigen::MatrixXd& x, std::span<const int> y, int folds) {
    if (spec.grid.empty()) fail(ErrorKind::InvalidConfig, std::string("empty grid for ") + to_string(spec.kind));
    TuneResult res;
    if (spec.grid.size() == 1) {
        res.chosen = spec.grid.front();
        return res;
    }
    if (folds < 2) fail(ErrorKind::InvalidConfig, "tuning needs at least 2 folds");
    const auto fold = stratified_folds(y, folds, mix_seed(spec.seed, 0x70));
    struct FoldData {
        Eigen::MatrixXd xtr, xte;
        std::vector<int> ytr, yte;
    };
    std::vector<FoldData> data(static_cast<std::size_t>(folds));
    for (int f = 0; f < folds; ++f) {
        std::vector<Index> tr, te;
        for (Index i = 0; i < y.size(); ++i) (fold[i] == f ? te : tr).push_back(i);
        auto& fd = data[static_cast<std::size_t>(f)];
        fd.xtr.resize(static_cast<Eigen::Index>(tr.size()), x.cols());
        fd.xte.resize(static_cast<Eigen::Index>(te.size()), x.cols());
        for (std::size_t i = 0; i < tr.size(); ++i) {
            fd.xtr.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(tr[i]));
            fd.ytr.push_back(y[tr[i]]);
        }
        for (std::size_t i = 0; i < te.size(); ++i) {
            fd.xte.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(te[i]));
            fd.yte.push_back(y[te[i]]);
        }
        const auto tr_pos = std::count(fd.ytr.begin(), fd.ytr.end(), 1);
        const auto te_pos = std::count(fd.yte.begin(), fd.yte.end(), 1);
        if (tr_pos < 2 || static_cast<std::size_t>(tr_pos) + 2 > fd.ytr.size() || te_pos == 0 ||
            static_cast<std::size_t>(te_pos) == fd.yte.size()) {
            fail(ErrorKind::DegenerateFold, std::string(to_string(spec.kind)) + ": fold " + std::to_string(f) +
                                                " lacks a class");
        }
    }
    double best = -1.0;
    for (std::size_t g = 0; g < spec.grid.size(); ++g) {
        double acc = 0.0;
        for (int f = 0; f < folds; ++f) {
            const auto& fd = data[static_cast<std::size_t>(f)];
            const auto model = fit(spec, spec.grid[g], fd.xtr, fd.ytr, mix_seed(spec.seed, 0x100 + static_cast<std::uint64_t>(f)));
            int correct = 0;
            for (Eigen::Index i = 0; i < fd.xte.rows(); ++i) {
                if (model.predict_label(fd.xte.row(i)) == fd.yte[static_cast<std::size_t>(i)]) ++correct;
            }
            acc += static_cast<double>(correct) / static_cast<double>(fd.xte.rows());
        }
        acc /= folds;
        res.fold_accuracy.push_back(acc);
        if (acc > best) {
            best = acc;
            res.chosen = spec.grid[g];
        }
    }
    return res;
}

Stump best_error_stump(const Eigen::MatrixXd& x, std::span<const int> y, std::span<const double> w) {
    const auto n = y.size();
    double total = 0.0, total_pos = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        total += w[i];
        if (y[i] == 1) total_pos += w[i];
    }
    Stump best;
    best.feature = 0;
    best.threshold = std::numeric_limits<double>::infinity();
    best.left_label = total_pos >= total - total_pos ? 1 : 0;
    double best_err = std::min(total_pos, total - total_pos);
    std::vector<std::pair<double, std::size_t>> order(n);
    for (Eigen::Index f = 0; f < x.cols(); ++f) {
        for (std::size_t i = 0; i < n; ++i) order[i] = {x(static_cast<Eigen::Index>(i), f), i};
        std::sort(order.begin(), order.end());
        double lpos = 0.0, lneg = 0.0;
        for (std::size_t i = 0; i + 1 < n; ++i) {
            const auto r = order[i].second;
            (y[r] == 1 ? lpos : lneg) += w[r];
            if (order[i].first == order[i + 1].first) continue;
            const double rpos = total_pos - lpos;
            const double rneg = (total - total_pos) - lneg;
            const double err_left_pos = lneg + rpos;
            const double err_left_neg = lpos + rneg;
            const double thr = 0.5 * (order[i].first + order[i + 1].first);
            if (err_left_pos < best_err - 1e-15) {
                best_err = err_left_pos;
                best = {static_cast<int>(f), thr, 1};
            }
            if (err_left_neg < best_err - 1e-15) {
                best_err = err_left_neg;
                best = {static_cast<int>(f), thr, 0};
            }
        }
    }
    return best;
}

}  // namespace twostep

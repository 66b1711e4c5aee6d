#include "twostep/stats.hpp"

#include "twostep/error.hpp"
#include "twostep/random.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace twostep {

namespace {

// Modified Lentz evaluation of the continued fraction for I_x(a, b).
double beta_continued_fraction(double a, double b, double x) {
    constexpr int kMaxIter = 10000;
    constexpr double kEps = 1e-16;
    constexpr double kTiny = 1e-300;
    const double qab = a + b;
    const double qap = a + 1.0;
    const double qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::abs(d) < kTiny) d = kTiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= kMaxIter; ++m) {
        const double m2 = 2.0 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < kEps) break;
    }
    return h;
}

}  // namespace

double incomplete_beta(double a, double b, double x) {
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    const double log_front =
        std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
    const double front = std::exp(log_front);
    if (x < (a + 1.0) / (a + b + 2.0)) {
        return front * beta_continued_fraction(a, b, x) / a;
    }
    return 1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b;
}

double student_t_two_sided_p(double t, double df) {
    if (!std::isfinite(t)) return 0.0;
    const double x = df / (df + t * t);
    return std::clamp(incomplete_beta(0.5 * df, 0.5, x), 0.0, 1.0);
}

double student_t_cdf(double t, double df) {
    const double tail = 0.5 * student_t_two_sided_p(t, df);
    return t > 0 ? 1.0 - tail : tail;
}

namespace {

struct Moments {
    double mean = 0.0;
    double var = 0.0;  // unbiased
    double n = 0.0;
};

Moments moments(std::span<const double> xs) {
    Moments m;
    m.n = static_cast<double>(xs.size());
    m.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / m.n;
    double ss = 0.0;
    for (double x : xs) ss += (x - m.mean) * (x - m.mean);
    m.var = ss / (m.n - 1.0);
    return m;
}

}  // namespace

TestResult t_test(std::span<const double> case_sample, std::span<const double> control_sample, TTestKind kind) {
    if (case_sample.size() < 2 || control_sample.size() < 2) {
        fail(ErrorKind::SampleTooSmall, "each sample needs at least 2 values");
    }
    const auto a = moments(case_sample);
    const auto b = moments(control_sample);
    if (!(a.var > 0.0) || !(b.var > 0.0)) fail(ErrorKind::ZeroVariance, "sample variance is zero");

    TestResult r;
    r.mean_case = a.mean;
    r.mean_control = b.mean;
    const double diff = a.mean - b.mean;
    if (kind == TTestKind::Welch) {
        const double va = a.var / a.n;
        const double vb = b.var / b.n;
        r.statistic = diff / std::sqrt(va + vb);
        r.degrees_of_freedom = (va + vb) * (va + vb) / (va * va / (a.n - 1.0) + vb * vb / (b.n - 1.0));
    } else {
        const double df = a.n + b.n - 2.0;
        const double pooled = ((a.n - 1.0) * a.var + (b.n - 1.0) * b.var) / df;
        r.statistic = diff / std::sqrt(pooled * (1.0 / a.n + 1.0 / b.n));
        r.degrees_of_freedom = df;
    }
    r.p_value = student_t_two_sided_p(r.statistic, r.degrees_of_freedom);
    return r;
}

std::vector<ScreenEntry> screen_features(const Dataset& d, double alpha, TTestKind kind) {
    const auto& schema = FeatureSchema::standard();
    IndexSet cases, controls;
    for (Index i = 0; i < d.size(); ++i) (d.labels[i] == 1 ? cases : controls).push_back(i);
    if (cases.empty() || controls.empty()) fail(ErrorKind::DegenerateClass, "screening needs both classes");

    std::vector<ScreenEntry> out;
    out.reserve(FeatureSchema::kNumeric);
    for (Index c = 0; c < FeatureSchema::kNumeric; ++c) {
        const auto xa = d.column(c, cases);
        const auto xb = d.column(c, controls);
        ScreenEntry e;
        e.feature = schema.name(c);
        try {
            e.result = t_test(xa, xb, kind);
        } catch (const Error& err) {
            throw Error(err.kind(), "feature " + e.feature + ": " + err.what());
        }
        e.significant = e.result.p_value <= alpha;
        out.push_back(std::move(e));
    }
    return out;
}

std::string screening_csv(std::span<const ScreenEntry> entries) {
    std::ostringstream os;
    os.precision(10);
    os << "feature,statistic,df,p_value,mean_case,mean_control,significant\n";
    for (const auto& e : entries) {
        os << e.feature << ',' << e.result.statistic << ',' << e.result.degrees_of_freedom << ','
           << e.result.p_value << ',' << e.result.mean_case << ',' << e.result.mean_control << ','
           << (e.significant ? 1 : 0) << '\n';
    }
    return os.str();
}

namespace {

// Column-standardized copy (mean 0, unbiased sd 1); records centers/scales.
Eigen::MatrixXd standardize_columns(const Eigen::MatrixXd& x, Eigen::VectorXd& center, Eigen::VectorXd& scale,
                                    const std::vector<std::string>* names) {
    const auto n = x.rows();
    center = x.colwise().mean().transpose();
    Eigen::MatrixXd z = x.rowwise() - center.transpose();
    scale = (z.colwise().squaredNorm() / static_cast<double>(n - 1)).cwiseSqrt().transpose();
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
        if (!(scale[j] > 0.0)) {
            const std::string label = names ? (*names)[static_cast<std::size_t>(j)] : "column " + std::to_string(j);
            fail(ErrorKind::ZeroVariance, label);
        }
        z.col(j) /= scale[j];
    }
    return z;
}

}  // namespace

Eigen::MatrixXd correlation_matrix(const Eigen::MatrixXd& columns) {
    if (columns.rows() < 2) fail(ErrorKind::SampleTooSmall, "correlation needs at least 2 rows");
    Eigen::VectorXd center, scale;
    const Eigen::MatrixXd z = standardize_columns(columns, center, scale, nullptr);
    Eigen::MatrixXd r = (z.transpose() * z) / static_cast<double>(columns.rows() - 1);
    for (Eigen::Index i = 0; i < r.rows(); ++i) {
        r(i, i) = 1.0;
        for (Eigen::Index j = 0; j < i; ++j) {
            const double v = std::clamp(0.5 * (r(i, j) + r(j, i)), -1.0, 1.0);
            r(i, j) = v;
            r(j, i) = v;
        }
    }
    return r;
}

Eigen::MatrixXd correlation_matrix(const Dataset& d, std::span<const std::string> features) {
    const auto& schema = FeatureSchema::standard();
    Eigen::MatrixXd cols(static_cast<Eigen::Index>(d.size()), static_cast<Eigen::Index>(features.size()));
    for (std::size_t j = 0; j < features.size(); ++j) {
        const Index c = schema.find(features[j]);
        if (c == FeatureSchema::kColumns || !schema.is_numeric(c)) {
            fail(ErrorKind::SchemaMismatch, "not a numeric feature: " + features[j]);
        }
        cols.col(static_cast<Eigen::Index>(j)) = d.features.col(static_cast<Eigen::Index>(c));
    }
    try {
        return correlation_matrix(cols);
    } catch (const Error& e) {
        if (e.kind() != ErrorKind::ZeroVariance) throw;
        // name the offending feature rather than its position
        for (std::size_t j = 0; j < features.size(); ++j) {
            const auto col = cols.col(static_cast<Eigen::Index>(j));
            if ((col.array() == col[0]).all()) fail(ErrorKind::ZeroVariance, features[j]);
        }
        throw;
    }
}

const char* to_string(PcPolicy policy) noexcept {
    return policy == PcPolicy::PaperFixed ? "paper_fixed" : "elbow";
}

PcPolicy pc_policy_from_string(std::string_view name) {
    if (name == "paper_fixed") return PcPolicy::PaperFixed;
    if (name == "elbow") return PcPolicy::Elbow;
    fail(ErrorKind::InvalidConfig, "unknown pc policy '" + std::string(name) + "'");
}

PcaModel fit_pca_matrix(const Eigen::MatrixXd& data, Block block) {
    const auto m = data.cols();
    if (data.rows() <= m) {
        fail(ErrorKind::SampleTooSmall, "PCA needs more rows than dimensions (" + std::to_string(data.rows()) +
                                            " rows, " + std::to_string(m) + " dimensions)");
    }
    PcaModel model;
    model.block = block;
    Eigen::MatrixXd z;
    try {
        z = standardize_columns(data, model.center, model.scale, nullptr);
    } catch (const Error& e) {
        fail(ErrorKind::RankDeficient, std::string(to_string(block)) + ": zero-variance segment (" + e.what() + ")");
    }
    const Eigen::MatrixXd corr = (z.transpose() * z) / static_cast<double>(data.rows() - 1);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(corr);
    if (solver.info() != Eigen::Success) fail(ErrorKind::RankDeficient, "eigendecomposition failed");

    model.eigenvalues.resize(m);
    model.loadings.resize(m, m);
    for (Eigen::Index k = 0; k < m; ++k) {
        const Eigen::Index src = m - 1 - k;  // solver sorts ascending
        model.eigenvalues[k] = std::max(0.0, solver.eigenvalues()[src]);
        Eigen::VectorXd v = solver.eigenvectors().col(src);
        Eigen::Index arg = 0;
        v.cwiseAbs().maxCoeff(&arg);
        if (v[arg] < 0) v = -v;
        model.loadings.col(k) = v;
    }
    model.retained = 1;
    return model;
}

PcaModel fit_pca(const Dataset& d, Block block, std::span<const Index> rows, PcPolicy policy) {
    if (block != Block::PSS && block != Block::SSR && block != Block::TP) {
        fail(ErrorKind::SchemaMismatch, "PCA applies to the PSS, SSR and TP blocks only");
    }
    const auto cols = FeatureSchema::standard().columns(block);
    Eigen::MatrixXd data(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t j = 0; j < cols.size(); ++j) {
            data(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                d.features(static_cast<Eigen::Index>(rows[i]), static_cast<Eigen::Index>(cols[j]));
        }
    }
    auto model = fit_pca_matrix(data, block);
    model.retained = select_pcs(model, policy);
    return model;
}

PcaModel fit_pca(const Dataset& d, Block block, PcPolicy policy) {
    const auto rows = iota_indices(d.size());
    return fit_pca(d, block, rows, policy);
}

int elbow_count(const Eigen::VectorXd& ev) {
    const auto m = ev.size();
    if (m < 3) return 1;
    Eigen::Index best = 1;
    double best_curv = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 1; j + 1 < m; ++j) {
        const double curv = ev[j - 1] - 2.0 * ev[j] + ev[j + 1];
        if (curv > best_curv) {
            best_curv = curv;
            best = j;
        }
    }
    return std::max<int>(1, static_cast<int>(best));
}

int select_pcs(const PcaModel& model, PcPolicy policy) {
    if (policy == PcPolicy::PaperFixed) {
        switch (model.block) {
            case Block::PSS: return 3;
            case Block::SSR: return 3;
            case Block::TP: return 2;
            default: break;
        }
    }
    return elbow_count(model.eigenvalues);
}

Eigen::VectorXd project_all_components(const PcaModel& model, const Eigen::VectorXd& row) {
    if (row.size() != model.center.size()) fail(ErrorKind::DimensionMismatch, "row length differs from PCA dimension");
    const Eigen::VectorXd z = (row - model.center).cwiseQuotient(model.scale);
    return model.loadings.transpose() * z;
}

Eigen::VectorXd project(const PcaModel& model, const Eigen::VectorXd& row) {
    if (row.size() != model.center.size()) fail(ErrorKind::DimensionMismatch, "row length differs from PCA dimension");
    const Eigen::VectorXd z = (row - model.center).cwiseQuotient(model.scale);
    return model.loadings.leftCols(model.retained).transpose() * z;
}

BlockPca fit_block_pca(const Dataset& d, std::span<const Index> rows, PcPolicy policy) {
    return {fit_pca(d, Block::PSS, rows, policy), fit_pca(d, Block::SSR, rows, policy),
            fit_pca(d, Block::TP, rows, policy)};
}

const char* to_string(InputKind kind) noexcept { return kind == InputKind::Full ? "full" : "glps_only"; }

InputKind input_kind_from_string(std::string_view name) {
    if (name == "full") return InputKind::Full;
    if (name == "glps_only") return InputKind::GlpsOnly;
    fail(ErrorKind::InvalidConfig, "unknown input kind '" + std::string(name) + "'");
}

namespace {

void check_block_model(const PcaModel& m, Block expected) {
    if (m.block != expected || m.dimension() != FeatureSchema::kSegments || m.retained < 1 ||
        m.retained > static_cast<int>(FeatureSchema::kSegments)) {
        fail(ErrorKind::SchemaMismatch, std::string("PCA model does not fit the ") + to_string(expected) + " block");
    }
}

const Block kPassThrough[] = {Block::GSRadial, Block::GLPS, Block::PSD, Block::Clinical};

std::vector<std::string> reduced_names(const BlockPca& pca, InputKind kind) {
    const auto& schema = FeatureSchema::standard();
    std::vector<std::string> names;
    if (kind == InputKind::Full) {
        for (const PcaModel* m : {&pca.pss, &pca.ssr, &pca.tp}) {
            for (int k = 1; k <= m->retained; ++k) names.push_back(std::string(to_string(m->block)) + "_PC" + std::to_string(k));
        }
        for (Block b : kPassThrough) {
            for (Index c : schema.columns(b)) names.push_back(schema.name(c));
        }
    } else {
        for (Block b : {Block::GLPS, Block::Clinical}) {
            for (Index c : schema.columns(b)) names.push_back(schema.name(c));
        }
    }
    return names;
}

}  // namespace

Eigen::VectorXd reduce_row(const Eigen::VectorXd& raw, const BlockPca& pca, InputKind kind) {
    const auto& schema = FeatureSchema::standard();
    if (raw.size() != static_cast<Eigen::Index>(FeatureSchema::kColumns)) {
        fail(ErrorKind::SchemaMismatch, "subject row has " + std::to_string(raw.size()) + " values, expected 71");
    }
    std::vector<double> out;
    if (kind == InputKind::Full) {
        for (const PcaModel* m : {&pca.pss, &pca.ssr, &pca.tp}) {
            const auto& r = schema.range(m->block);
            const Eigen::VectorXd scores = project(*m, raw.segment(static_cast<Eigen::Index>(r.first), static_cast<Eigen::Index>(r.size)));
            out.insert(out.end(), scores.data(), scores.data() + scores.size());
        }
        for (Block b : kPassThrough) {
            for (Index c : schema.columns(b)) out.push_back(raw[static_cast<Eigen::Index>(c)]);
        }
    } else {
        for (Block b : {Block::GLPS, Block::Clinical}) {
            for (Index c : schema.columns(b)) out.push_back(raw[static_cast<Eigen::Index>(c)]);
        }
    }
    return Eigen::Map<const Eigen::VectorXd>(out.data(), static_cast<Eigen::Index>(out.size()));
}

ModelInput build_model_input(const Dataset& d, const PcaModel& pss, const PcaModel& ssr, const PcaModel& tp) {
    check_block_model(pss, Block::PSS);
    check_block_model(ssr, Block::SSR);
    check_block_model(tp, Block::TP);
    if (d.features.cols() != static_cast<Eigen::Index>(FeatureSchema::kColumns)) {
        fail(ErrorKind::SchemaMismatch, "dataset does not have 71 columns");
    }
    const BlockPca pca{pss, ssr, tp};
    ModelInput in;
    in.names = reduced_names(pca, InputKind::Full);
    in.x.resize(static_cast<Eigen::Index>(d.size()), static_cast<Eigen::Index>(in.names.size()));
    for (Index i = 0; i < d.size(); ++i) {
        in.x.row(static_cast<Eigen::Index>(i)) =
            reduce_row(d.features.row(static_cast<Eigen::Index>(i)).transpose(), pca, InputKind::Full).transpose();
    }
    return in;
}

ModelInput build_model_input(const Dataset& d, const BlockPca& pca) {
    return build_model_input(d, pca.pss, pca.ssr, pca.tp);
}

ModelInput build_glps_input(const Dataset& d) {
    ModelInput in;
    in.names = reduced_names(BlockPca{}, InputKind::GlpsOnly);
    in.x.resize(static_cast<Eigen::Index>(d.size()), static_cast<Eigen::Index>(in.names.size()));
    const BlockPca none;
    for (Index i = 0; i < d.size(); ++i) {
        in.x.row(static_cast<Eigen::Index>(i)) =
            reduce_row(d.features.row(static_cast<Eigen::Index>(i)).transpose(), none, InputKind::GlpsOnly).transpose();
    }
    return in;
}

}  // namespace twostep

#pragma once

#include "twostep/dataset.hpp"

#include <Eigen/Dense>

#include <span>
#include <string>
#include <vector>

namespace twostep {

// Regularized incomplete beta I_x(a, b), continued-fraction evaluation.
double incomplete_beta(double a, double b, double x);

// Student t distribution with (possibly fractional) degrees of freedom.
double student_t_cdf(double t, double df);
double student_t_two_sided_p(double t, double df);

enum class TTestKind { Welch, Pooled };

struct TestResult {
    double statistic = 0.0;
    double degrees_of_freedom = 0.0;
    double p_value = 1.0;
    double mean_case = 0.0;
    double mean_control = 0.0;
};

// Two-sample t-test, two-sided. Welch (unequal variances, Welch-Satterthwaite
// df) unless Pooled is requested.
TestResult t_test(std::span<const double> case_sample, std::span<const double> control_sample,
                  TTestKind kind = TTestKind::Welch);

inline TestResult welch_t_test(std::span<const double> case_sample, std::span<const double> control_sample) {
    return t_test(case_sample, control_sample, TTestKind::Welch);
}

struct ScreenEntry {
    std::string feature;
    TestResult result;
    bool significant = false;
};

// One t-test per numeric feature, schema order. significant <=> p <= alpha.
std::vector<ScreenEntry> screen_features(const Dataset& d, double alpha, TTestKind kind = TTestKind::Welch);
std::string screening_csv(std::span<const ScreenEntry> entries);

Eigen::MatrixXd correlation_matrix(const Eigen::MatrixXd& columns);
Eigen::MatrixXd correlation_matrix(const Dataset& d, std::span<const std::string> features);

enum class PcPolicy { PaperFixed, Elbow };

const char* to_string(PcPolicy policy) noexcept;
PcPolicy pc_policy_from_string(std::string_view name);

struct PcaModel {
    Block block = Block::PSS;
    Eigen::VectorXd center;       // per-segment mean
    Eigen::VectorXd scale;        // per-segment sample sd
    Eigen::MatrixXd loadings;     // columns are PCs, descending eigenvalue
    Eigen::VectorXd eigenvalues;  // of the correlation matrix, non-increasing
    int retained = 1;

    Index dimension() const { return static_cast<Index>(center.size()); }
};

// Correlation-matrix PCA of one 17-segment block over the given rows. Each PC
// is sign-fixed so its largest-magnitude loading is positive.
PcaModel fit_pca(const Dataset& d, Block block, std::span<const Index> rows,
                 PcPolicy policy = PcPolicy::PaperFixed);
PcaModel fit_pca(const Dataset& d, Block block, PcPolicy policy = PcPolicy::PaperFixed);

// Generic correlation PCA on an n x m matrix; block tag is informational.
PcaModel fit_pca_matrix(const Eigen::MatrixXd& data, Block block);

int select_pcs(const PcaModel& model, PcPolicy policy);
int elbow_count(const Eigen::VectorXd& eigenvalues);

Eigen::VectorXd project(const PcaModel& model, const Eigen::VectorXd& row);
Eigen::VectorXd project_all_components(const PcaModel& model, const Eigen::VectorXd& row);

struct BlockPca {
    PcaModel pss, ssr, tp;
};

BlockPca fit_block_pca(const Dataset& d, std::span<const Index> rows, PcPolicy policy);

enum class InputKind { Full, GlpsOnly };

const char* to_string(InputKind kind) noexcept;
InputKind input_kind_from_string(std::string_view name);

struct ModelInput {
    Eigen::MatrixXd x;  // one row per subject
    std::vector<std::string> names;
};

// Reduced predictor table: PSS/SSR/TP scores, then GS radial (9), GLPS (3),
// PSD (1), clinical (7). 28 columns with the default 3/3/2 retention.
ModelInput build_model_input(const Dataset& d, const PcaModel& pss, const PcaModel& ssr, const PcaModel& tp);
ModelInput build_model_input(const Dataset& d, const BlockPca& pca);

// GLPS layers plus clinical features only (10 columns).
ModelInput build_glps_input(const Dataset& d);

// Maps one raw 71-value subject row to the reduced vector.
Eigen::VectorXd reduce_row(const Eigen::VectorXd& raw, const BlockPca& pca, InputKind kind);

}  // namespace twostep

#pragma once

#include "twostep/dataset.hpp"

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace twostep {

// Target correlations between AHA levels of one 17-segment block.
struct LevelCorrelations {
    double basal = 0.5;         // within basal
    double mid = 0.55;          // within mid-cavity
    double apical = 0.7;        // within apical
    double apex_apical = 0.75;
    double apex_mid = 0.3;
    double apex_basal = 0.15;
    double apical_mid = 0.35;
    double apical_basal = 0.2;
    double mid_basal = 0.35;
};

struct BlockCorrelations {
    LevelCorrelations levels;
    double pss_ssr = 0.6;   // same-segment coupling, scaled by the within-block pattern
    double pss_tp = 0.2;
    double ssr_tp = 0.2;
    double radial = 0.4;    // among the 9 radial features
    double glps = 0.85;     // among the 3 GLPS layers
    double glps_pss = 0.3;  // GLPS layer vs each PSS segment
};

struct FeatureMoments {
    double mean = 0.0;
    double sd = 1.0;
};

// A coronary territory: positives assigned to it get an extra standardized
// shift on its segments in the PSS and SSR blocks.
struct Territory {
    std::string name;
    std::vector<int> segments;  // 1-based AHA indices
    double probability = 0.0;
    double shift = 0.0;
};

// Correlation between two numeric features among positives only; controls
// keep the shared target.
struct CaseCorrelation {
    std::string a;
    std::string b;
    double value = 0.0;
};

struct ClinicalRates {
    double control = 0.0;
    double cases = 0.0;
};

struct GeneratorConfig {
    Index n = 424;
    Index positive_count = 217;
    std::uint64_t seed = 1;

    BlockCorrelations correlations;
    // Per-block physical scale; keys are block names (PSS, SSR, TP, GS, GLPS, PSD).
    std::map<std::string, FeatureMoments> block_moments;
    // Standardized case-minus-control mean shift per feature name. Block-wide
    // entries are written as "PSS_*" etc. and apply to every column of the block.
    std::map<std::string, double> effect_sizes;
    // Case-to-control standard-deviation ratio per feature (same key rules).
    std::map<std::string, double> sd_ratios;
    std::vector<Territory> territories;
    std::vector<CaseCorrelation> case_correlations;
    double signal_multiplier = 1.0;  // scales effect_sizes and territory shifts

    std::map<std::string, ClinicalRates> clinical_rates;
    FeatureMoments age_control{64.11, 9.52};
    FeatureMoments age_cases{64.39, 9.79};

    double repair_floor = 1e-6;      // eigenvalue clip when repairing the correlation target
    double repair_tolerance = 0.5;   // max Frobenius change tolerated by the repair

    // Throws InvalidConfig / NotPositiveDefinite.
    void validate() const;
};

nlohmann::json to_json(const GeneratorConfig& cfg);
GeneratorConfig generator_config_from_json(const nlohmann::json& j);
GeneratorConfig load_generator_config(const std::filesystem::path& path);

GeneratorConfig default_calibration();

// 64 x 64 correlation target of the numeric features in schema order, before
// repair, for controls (cases = false) or positives.
Eigen::MatrixXd target_correlation(const GeneratorConfig& cfg, bool cases = false);

struct RepairResult {
    Eigen::MatrixXd matrix;
    double frobenius_change = 0.0;
    bool clipped = false;
};

// Nearest positive-definite correlation matrix by eigenvalue clipping and
// rediagonalisation to a unit diagonal.
RepairResult repair_correlation(const Eigen::MatrixXd& target, double floor);

Dataset generate_cohort(const GeneratorConfig& cfg);

}  // namespace twostep

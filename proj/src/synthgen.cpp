#include "twostep/synthgen.hpp"

#include "twostep/error.hpp"
#include "twostep/random.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace twostep {

namespace {

constexpr Index kSeg = FeatureSchema::kSegments;

double level_corr(const LevelCorrelations& c, SegmentLevel a, SegmentLevel b) {
    using L = SegmentLevel;
    if (a > b) std::swap(a, b);
    if (a == b) {
        switch (a) {
            case L::Basal: return c.basal;
            case L::Mid: return c.mid;
            case L::Apical: return c.apical;
            case L::Apex: return 1.0;
        }
    }
    if (a == L::Basal && b == L::Mid) return c.mid_basal;
    if (a == L::Basal && b == L::Apical) return c.apical_basal;
    if (a == L::Basal && b == L::Apex) return c.apex_basal;
    if (a == L::Mid && b == L::Apical) return c.apical_mid;
    if (a == L::Mid && b == L::Apex) return c.apex_mid;
    return c.apex_apical;
}

// Lookup with block-wide fallback: "PSS_03" then "PSS_*".
double keyed(const std::map<std::string, double>& m, const std::string& name, Block block, double fallback) {
    if (auto it = m.find(name); it != m.end()) return it->second;
    if (auto it = m.find(std::string(to_string(block)) + "_*"); it != m.end()) return it->second;
    return fallback;
}

void check_finite(double v, const std::string& what) {
    if (!std::isfinite(v)) fail(ErrorKind::InvalidConfig, what + " is not finite");
}

}  // namespace

void GeneratorConfig::validate() const {
    if (n < 4) fail(ErrorKind::InvalidConfig, "cohort size below 4");
    if (positive_count < 2 || positive_count + 2 > n) fail(ErrorKind::InvalidConfig, "each class needs 2 subjects");
    for (const auto& [k, v] : effect_sizes) check_finite(v, "effect size " + k);
    for (const auto& [k, v] : sd_ratios) {
        check_finite(v, "sd ratio " + k);
        if (v <= 0) fail(ErrorKind::InvalidConfig, "sd ratio " + k + " must be positive");
    }
    for (const auto& [k, v] : block_moments) {
        check_finite(v.mean, "mean of " + k);
        if (!(v.sd > 0)) fail(ErrorKind::InvalidConfig, "sd of " + k + " must be positive");
    }
    for (const auto& [k, r] : clinical_rates) {
        const auto col = FeatureSchema::standard().find(k);
        if (col == FeatureSchema::kColumns || !FeatureSchema::standard().is_binary(col)) {
            fail(ErrorKind::InvalidConfig, "clinical rate for unknown binary feature '" + k + "'");
        }
        for (double p : {r.control, r.cases}) {
            if (!(p >= 0.0 && p <= 1.0)) fail(ErrorKind::InvalidConfig, "rate for " + k + " outside [0,1]");
        }
    }
    double total = 0.0;
    for (const auto& t : territories) {
        check_finite(t.shift, "territory shift");
        if (t.probability < 0) fail(ErrorKind::InvalidConfig, "negative territory probability");
        total += t.probability;
        for (int s : t.segments) {
            if (s < 1 || s > static_cast<int>(kSeg)) fail(ErrorKind::InvalidConfig, "territory segment out of range");
        }
    }
    if (total > 1.0 + 1e-9) fail(ErrorKind::InvalidConfig, "territory probabilities exceed 1");
    check_finite(signal_multiplier, "signal multiplier");
    if (!(age_control.sd > 0 && age_cases.sd > 0)) fail(ErrorKind::InvalidConfig, "age sd must be positive");

    for (const auto& cc : case_correlations) {
        for (const auto* name : {&cc.a, &cc.b}) {
            const auto col = FeatureSchema::standard().find(*name);
            if (col >= FeatureSchema::kNumeric) fail(ErrorKind::InvalidConfig, "case correlation on non-numeric '" + *name + "'");
        }
        if (cc.a == cc.b || !(cc.value > -1.0 && cc.value < 1.0)) {
            fail(ErrorKind::InvalidConfig, "case correlation " + cc.a + "/" + cc.b + " must join two features within (-1,1)");
        }
    }
    for (bool cases : {false, true}) {
        const auto repaired = repair_correlation(target_correlation(*this, cases), repair_floor);
        if (repaired.frobenius_change > repair_tolerance) {
            fail(ErrorKind::NotPositiveDefinite, "correlation target needs a repair of size " +
                                                     std::to_string(repaired.frobenius_change));
        }
    }
}

Eigen::MatrixXd target_correlation(const GeneratorConfig& cfg, bool cases) {
    const auto& schema = FeatureSchema::standard();
    const auto& c = cfg.correlations;
    Eigen::MatrixXd r = Eigen::MatrixXd::Identity(FeatureSchema::kNumeric, FeatureSchema::kNumeric);

    Eigen::MatrixXd seg(kSeg, kSeg);
    for (Index i = 0; i < kSeg; ++i) {
        for (Index j = 0; j < kSeg; ++j) {
            seg(i, j) = i == j ? 1.0
                               : level_corr(c.levels, segment_level(static_cast<int>(i + 1)),
                                            segment_level(static_cast<int>(j + 1)));
        }
    }
    const auto pss = schema.range(Block::PSS).first;
    const auto ssr = schema.range(Block::SSR).first;
    const auto tp = schema.range(Block::TP).first;
    const auto pairs = {std::pair{pss, pss}, {ssr, ssr}, {tp, tp}};
    for (auto [a, b] : pairs) r.block(a, b, kSeg, kSeg) = seg;
    auto couple = [&](Index a, Index b, double w) {
        r.block(a, b, kSeg, kSeg) = w * seg;
        r.block(b, a, kSeg, kSeg) = w * seg;
    };
    couple(pss, ssr, c.pss_ssr);
    couple(pss, tp, c.pss_tp);
    couple(ssr, tp, c.ssr_tp);

    const auto rad = schema.range(Block::GSRadial);
    for (Index i = 0; i < rad.size; ++i) {
        for (Index j = 0; j < rad.size; ++j) {
            if (i != j) r(rad.first + i, rad.first + j) = c.radial;
        }
    }
    const auto glps = schema.range(Block::GLPS);
    for (Index i = 0; i < glps.size; ++i) {
        for (Index j = 0; j < glps.size; ++j) {
            if (i != j) r(glps.first + i, glps.first + j) = c.glps;
        }
        for (Index s = 0; s < kSeg; ++s) {
            r(glps.first + i, pss + s) = c.glps_pss;
            r(pss + s, glps.first + i) = c.glps_pss;
        }
    }
    if (cases) {
        for (const auto& cc : cfg.case_correlations) {
            const auto a = schema.find(cc.a);
            const auto b = schema.find(cc.b);
            r(a, b) = cc.value;
            r(b, a) = cc.value;
        }
    }
    return r;
}

RepairResult repair_correlation(const Eigen::MatrixXd& target, double floor) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(target);
    RepairResult out;
    Eigen::VectorXd ev = eig.eigenvalues();
    out.clipped = ev.minCoeff() < floor;
    if (!out.clipped) {
        out.matrix = target;
        return out;
    }
    ev = ev.cwiseMax(floor);
    Eigen::MatrixXd m = eig.eigenvectors() * ev.asDiagonal() * eig.eigenvectors().transpose();
    const Eigen::VectorXd d = m.diagonal().cwiseSqrt().cwiseInverse();
    m = d.asDiagonal() * m * d.asDiagonal();
    m = 0.5 * (m + m.transpose());
    out.frobenius_change = (m - target).norm();
    out.matrix = std::move(m);
    return out;
}

Dataset generate_cohort(const GeneratorConfig& cfg) {
    cfg.validate();
    const auto& schema = FeatureSchema::standard();
    auto factor = [&](bool cases) {
        const auto repaired = repair_correlation(target_correlation(cfg, cases), cfg.repair_floor);
        Eigen::LLT<Eigen::MatrixXd> llt(repaired.matrix);
        if (llt.info() != Eigen::Success) fail(ErrorKind::NotPositiveDefinite, "repaired correlation has no Cholesky factor");
        return Eigen::MatrixXd(llt.matrixL());
    };
    const Eigen::MatrixXd chol_control = factor(false);
    const Eigen::MatrixXd chol_case = factor(true);

    const Index p = FeatureSchema::kNumeric;
    Eigen::VectorXd mean(p), sd(p), shift(p), ratio(p);
    std::vector<Block> block_of(p);
    for (const auto& br : schema.blocks()) {
        if (br.block == Block::Clinical) continue;
        const auto it = cfg.block_moments.find(to_string(br.block));
        const FeatureMoments fm = it == cfg.block_moments.end() ? FeatureMoments{} : it->second;
        for (Index j = br.first; j < br.first + br.size; ++j) {
            block_of[j] = br.block;
            mean[static_cast<Eigen::Index>(j)] = fm.mean;
            sd[static_cast<Eigen::Index>(j)] = fm.sd;
            shift[static_cast<Eigen::Index>(j)] =
                cfg.signal_multiplier * keyed(cfg.effect_sizes, schema.name(j), br.block, 0.0);
            ratio[static_cast<Eigen::Index>(j)] = keyed(cfg.sd_ratios, schema.name(j), br.block, 1.0);
        }
    }

    Rng rng(cfg.seed);
    Dataset d;
    d.features.resize(static_cast<Eigen::Index>(cfg.n), static_cast<Eigen::Index>(FeatureSchema::kColumns));
    d.labels.assign(cfg.n, 0);
    std::fill(d.labels.begin(), d.labels.begin() + static_cast<std::ptrdiff_t>(cfg.positive_count), 1);
    rng.shuffle(d.labels);

    const auto pss = schema.range(Block::PSS).first;
    const auto ssr = schema.range(Block::SSR).first;
    const Index age_col = schema.find("age");
    Eigen::VectorXd z(p);
    for (Index i = 0; i < cfg.n; ++i) {
        const bool pos = d.labels[i] == 1;
        for (Index j = 0; j < p; ++j) z[static_cast<Eigen::Index>(j)] = rng.normal();
        Eigen::VectorXd v = (pos ? chol_case : chol_control) * z;
        if (pos) {
            v = v.cwiseProduct(ratio) + shift;
            // territory draw is made for every positive so the stream layout
            // does not depend on the configured probabilities
            const double u = rng.uniform();
            double acc = 0.0;
            for (const auto& t : cfg.territories) {
                acc += t.probability;
                if (u < acc) {
                    for (int s : t.segments) {
                        v[static_cast<Eigen::Index>(pss + static_cast<Index>(s - 1))] += cfg.signal_multiplier * t.shift;
                        v[static_cast<Eigen::Index>(ssr + static_cast<Index>(s - 1))] += cfg.signal_multiplier * t.shift;
                    }
                    break;
                }
            }
        }
        const auto row = static_cast<Eigen::Index>(i);
        d.features.row(row).head(p) = (mean + sd.cwiseProduct(v)).transpose();

        const FeatureMoments& am = pos ? cfg.age_cases : cfg.age_control;
        d.features(row, static_cast<Eigen::Index>(age_col)) = std::max(0.0, std::round(am.mean + am.sd * rng.normal()));
        char id[32];
        std::snprintf(id, sizeof id, "S%05zu", static_cast<std::size_t>(i + 1));
        d.subject_ids.emplace_back(id);
    }
    // binary clinical columns carry exactly round(rate * class size) ones per class
    Rng flags(mix_seed(cfg.seed, 0xC11));
    for (int cls : {0, 1}) {
        std::vector<Index> rows;
        for (Index i = 0; i < cfg.n; ++i)
            if (d.labels[i] == cls) rows.push_back(i);
        for (Index c = age_col + 1; c < FeatureSchema::kColumns; ++c) {
            const auto it = cfg.clinical_rates.find(schema.name(c));
            const double rate = it == cfg.clinical_rates.end() ? 0.5 : (cls ? it->second.cases : it->second.control);
            const auto ones = static_cast<std::size_t>(std::floor(rate * static_cast<double>(rows.size()) + 0.5));
            std::vector<double> col(rows.size(), 0.0);
            std::fill(col.begin(), col.begin() + static_cast<std::ptrdiff_t>(ones), 1.0);
            flags.shuffle(col);
            for (std::size_t r = 0; r < rows.size(); ++r)
                d.features(static_cast<Eigen::Index>(rows[r]), static_cast<Eigen::Index>(c)) = col[r];
        }
    }
    d.validate();
    return d;
}

// ---------------------------------------------------------------------------

nlohmann::json to_json(const GeneratorConfig& cfg) {
    const auto& lv = cfg.correlations.levels;
    nlohmann::json moments = nlohmann::json::object();
    for (const auto& [k, m] : cfg.block_moments) moments[k] = {{"mean", m.mean}, {"sd", m.sd}};
    nlohmann::json territories = nlohmann::json::array();
    for (const auto& t : cfg.territories) {
        territories.push_back({{"name", t.name}, {"segments", t.segments}, {"probability", t.probability}, {"shift", t.shift}});
    }
    nlohmann::json case_corr = nlohmann::json::array();
    for (const auto& cc : cfg.case_correlations) case_corr.push_back({{"a", cc.a}, {"b", cc.b}, {"value", cc.value}});
    nlohmann::json clinical = nlohmann::json::object();
    for (const auto& [k, r] : cfg.clinical_rates) clinical[k] = {{"control", r.control}, {"case", r.cases}};
    return {
        {"n", cfg.n},
        {"positive_count", cfg.positive_count},
        {"seed", cfg.seed},
        {"correlations",
         {{"levels",
           {{"basal", lv.basal},
            {"mid", lv.mid},
            {"apical", lv.apical},
            {"apex_apical", lv.apex_apical},
            {"apex_mid", lv.apex_mid},
            {"apex_basal", lv.apex_basal},
            {"apical_mid", lv.apical_mid},
            {"apical_basal", lv.apical_basal},
            {"mid_basal", lv.mid_basal}}},
          {"pss_ssr", cfg.correlations.pss_ssr},
          {"pss_tp", cfg.correlations.pss_tp},
          {"ssr_tp", cfg.correlations.ssr_tp},
          {"radial", cfg.correlations.radial},
          {"glps", cfg.correlations.glps},
          {"glps_pss", cfg.correlations.glps_pss}}},
        {"block_moments", moments},
        {"effect_sizes", cfg.effect_sizes},
        {"sd_ratios", cfg.sd_ratios},
        {"territories", territories},
        {"case_correlations", case_corr},
        {"signal_multiplier", cfg.signal_multiplier},
        {"clinical_rates", clinical},
        {"age", {{"control", {{"mean", cfg.age_control.mean}, {"sd", cfg.age_control.sd}}},
                 {"case", {{"mean", cfg.age_cases.mean}, {"sd", cfg.age_cases.sd}}}}},
        {"repair_floor", cfg.repair_floor},
        {"repair_tolerance", cfg.repair_tolerance},
    };
}

// Keys absent from `j` keep their default-calibration values.
GeneratorConfig generator_config_from_json(const nlohmann::json& j) {
    try {
        GeneratorConfig cfg = default_calibration();
        cfg.n = j.value("n", cfg.n);
        cfg.positive_count = j.value("positive_count", cfg.positive_count);
        cfg.seed = j.value("seed", cfg.seed);
        if (j.contains("correlations")) {
            const auto& c = j.at("correlations");
            auto& bc = cfg.correlations;
            if (c.contains("levels")) {
                const auto& l = c.at("levels");
                auto& lv = bc.levels;
                lv.basal = l.value("basal", lv.basal);
                lv.mid = l.value("mid", lv.mid);
                lv.apical = l.value("apical", lv.apical);
                lv.apex_apical = l.value("apex_apical", lv.apex_apical);
                lv.apex_mid = l.value("apex_mid", lv.apex_mid);
                lv.apex_basal = l.value("apex_basal", lv.apex_basal);
                lv.apical_mid = l.value("apical_mid", lv.apical_mid);
                lv.apical_basal = l.value("apical_basal", lv.apical_basal);
                lv.mid_basal = l.value("mid_basal", lv.mid_basal);
            }
            bc.pss_ssr = c.value("pss_ssr", bc.pss_ssr);
            bc.pss_tp = c.value("pss_tp", bc.pss_tp);
            bc.ssr_tp = c.value("ssr_tp", bc.ssr_tp);
            bc.radial = c.value("radial", bc.radial);
            bc.glps = c.value("glps", bc.glps);
            bc.glps_pss = c.value("glps_pss", bc.glps_pss);
        }
        if (j.contains("block_moments")) {
            for (const auto& [k, m] : j.at("block_moments").items()) {
                cfg.block_moments[k] = {m.at("mean").get<double>(), m.at("sd").get<double>()};
            }
        }
        if (j.contains("effect_sizes")) cfg.effect_sizes = j.at("effect_sizes").get<std::map<std::string, double>>();
        if (j.contains("sd_ratios")) cfg.sd_ratios = j.at("sd_ratios").get<std::map<std::string, double>>();
        if (j.contains("territories")) {
            cfg.territories.clear();
            for (const auto& t : j.at("territories")) {
                cfg.territories.push_back({t.at("name").get<std::string>(), t.at("segments").get<std::vector<int>>(),
                                           t.at("probability").get<double>(), t.at("shift").get<double>()});
            }
        }
        if (j.contains("case_correlations")) {
            cfg.case_correlations.clear();
            for (const auto& cc : j.at("case_correlations")) {
                cfg.case_correlations.push_back(
                    {cc.at("a").get<std::string>(), cc.at("b").get<std::string>(), cc.at("value").get<double>()});
            }
        }
        cfg.signal_multiplier = j.value("signal_multiplier", cfg.signal_multiplier);
        if (j.contains("clinical_rates")) {
            for (const auto& [k, r] : j.at("clinical_rates").items()) {
                cfg.clinical_rates[k] = {r.at("control").get<double>(), r.at("case").get<double>()};
            }
        }
        if (j.contains("age")) {
            const auto& a = j.at("age");
            cfg.age_control = {a.at("control").at("mean").get<double>(), a.at("control").at("sd").get<double>()};
            cfg.age_cases = {a.at("case").at("mean").get<double>(), a.at("case").at("sd").get<double>()};
        }
        cfg.repair_floor = j.value("repair_floor", cfg.repair_floor);
        cfg.repair_tolerance = j.value("repair_tolerance", cfg.repair_tolerance);
        cfg.validate();
        return cfg;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::InvalidConfig, std::string("generator config: ") + e.what());
    }
}

GeneratorConfig load_generator_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::IoFailure, "cannot open " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::InvalidConfig, path.string() + ": " + e.what());
    }
    return generator_config_from_json(j);
}

GeneratorConfig default_calibration() {
    GeneratorConfig cfg;
    cfg.block_moments = {
        {"PSS", {-18.0, 4.5}}, {"SSR", {-1.1, 0.3}}, {"TP", {360.0, 45.0}},
        {"GS", {32.0, 11.0}},  {"GLPS", {-19.0, 3.6}}, {"PSD", {45.0, 18.0}},
    };
    // Positive shifts move strain toward zero (less deformation).
    cfg.effect_sizes = {
        {"GLPS_Epi", 0.40}, {"GLPS_Mid", 0.38}, {"GLPS_Endo", 0.25},
        {"PSS_*", 0.15},    {"SSR_*", 0.12},    {"TP_*", 0.05},
    };
    cfg.sd_ratios = {{"GS_*", 1.6}};
    cfg.territories = {
        {"LAD", {1, 2, 7, 8, 13, 14, 17}, 0.45, 0.45},
        {"RCA", {3, 4, 9, 10, 15}, 0.30, 0.45},
        {"LCX", {5, 6, 11, 12, 16}, 0.25, 0.45},
    };
    cfg.clinical_rates = {
        {"gender", {0.7432, 0.765}},      {"hypertension", {0.678, 0.662}}, {"diabetes", {0.4174, 0.30}},
        {"hyperlipemia", {0.686, 0.726}}, {"smoke", {0.28, 0.525}},         {"family_history", {0.325, 0.361}},
    };
    return cfg;
}

}  // namespace twostep

#include "twostep/error.hpp"
#include "twostep/experiment.hpp"
#include "twostep/metrics.hpp"
#include "twostep/stats.hpp"
#include "twostep/synthgen.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

namespace py = pybind11;
namespace tw = twostep;

namespace {

tw::ExperimentConfig config_from(const std::string& json_text) {
    return tw::experiment_config_from_json(json_text.empty() ? nlohmann::json::object() : nlohmann::json::parse(json_text));
}

std::span<const double> as_row(const Eigen::VectorXd& v) { return {v.data(), static_cast<std::size_t>(v.size())}; }

}  // namespace

PYBIND11_MODULE(_twostep, m) {
    m.doc() = "Two-step stacked ensemble for case/control strain cohorts";

    static py::handle error = PyErr_NewException("twostep._twostep.TwostepError", PyExc_RuntimeError, nullptr);
    m.attr("TwostepError") = py::reinterpret_borrow<py::object>(error);
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const tw::Error& e) {
            py::object inst = error(e.what());
            inst.attr("kind") = tw::to_string(e.kind());
            PyErr_SetObject(error.ptr(), inst.ptr());
        } catch (const nlohmann::json::exception& e) {
            py::object inst = error(e.what());
            inst.attr("kind") = "InvalidConfig";
            PyErr_SetObject(error.ptr(), inst.ptr());
        }
    });

    py::class_<tw::Dataset>(m, "Cohort")
        .def_property_readonly("features", [](const tw::Dataset& d) { return d.features; })
        .def_property_readonly("labels", [](const tw::Dataset& d) { return d.labels; })
        .def_property_readonly("subject_ids", [](const tw::Dataset& d) { return d.subject_ids; })
        .def_property_readonly("positives", &tw::Dataset::positives)
        .def("__len__", &tw::Dataset::size)
        .def("to_csv", [](const tw::Dataset& d) { return tw::format_cohort(d); })
        .def("write", [](const tw::Dataset& d, const std::filesystem::path& p) { tw::write_cohort(d, p); });

    m.def("columns", [] { return tw::FeatureSchema::standard().names(); });
    m.def("default_calibration_json", [] { return tw::to_json(tw::default_calibration()).dump(); });
    m.def("default_experiment_json", [] { return tw::to_json(tw::ExperimentConfig{}).dump(); });

    m.def("generate_cohort", [](const std::string& json_text) {
        return tw::generate_cohort(tw::generator_config_from_json(nlohmann::json::parse(json_text)));
    });
    m.def("load_cohort", [](const std::filesystem::path& p) { return tw::load_cohort(p); });
    m.def("parse_cohort", [](const std::string& text) { return tw::parse_cohort(text); });

    m.def("screen", [](const tw::Dataset& d, double alpha) {
        py::list out;
        for (const auto& e : tw::screen_features(d, alpha)) {
            py::dict row;
            row["feature"] = e.feature;
            row["t"] = e.result.statistic;
            row["df"] = e.result.degrees_of_freedom;
            row["p"] = e.result.p_value;
            row["significant"] = e.significant;
            out.append(row);
        }
        return out;
    }, py::arg("cohort"), py::arg("alpha") = 0.05);

    m.def("welch_t_test", [](const std::vector<double>& cases, const std::vector<double>& controls) {
        const auto r = tw::welch_t_test(cases, controls);
        return py::make_tuple(r.statistic, r.degrees_of_freedom, r.p_value);
    });
    m.def("auc", [](const std::vector<double>& scores, const std::vector<int>& truth) {
        return tw::roc_and_auc(scores, truth).auc;
    });
    m.def("partition_sizes", [](tw::Index n) {
        const auto s = tw::partition_sizes(n);
        return py::make_tuple(s.test, s.validation0, s.training_pool, s.first_train, s.first_validation);
    });

    m.def("run_experiment", [](const std::string& config_json, const tw::Dataset* cohort) {
        const auto cfg = config_from(config_json);
        tw::EvaluationReport r;
        {
            py::gil_scoped_release nogil;
            r = cohort ? tw::run_experiment(cfg, *cohort) : tw::run_experiment(cfg);
        }
        return r.to_json().dump();
    }, py::arg("config_json") = "", py::arg("cohort") = nullptr);

    py::class_<tw::SavedModel>(m, "Model")
        .def("save", [](const tw::SavedModel& s, const std::filesystem::path& p) { tw::save_model(s, p); })
        .def("manifest_json", [](const tw::SavedModel& s) { return tw::model_manifest(s).dump(); })
        .def("score", [](const tw::SavedModel& s, const Eigen::VectorXd& raw) {
            const auto r = tw::score_subject(s, as_row(raw));
            return py::make_tuple(r.label, r.score, r.first_step_scores);
        });

    m.def("train", [](const std::string& config_json, const tw::Dataset* cohort) {
        auto cfg = config_from(config_json);
        cfg.ensembles = {"two_step_14"};
        const auto d = cohort ? *cohort : tw::load_or_generate(cfg);
        tw::SavedModel saved;
        tw::ReplicateResult rep;
        {
            py::gil_scoped_release nogil;
            rep = tw::run_replicate(d, cfg, 0, &saved);
        }
        if (!rep.ok) {
            py::object inst = error("training failed: " + rep.error);
            inst.attr("kind") = rep.error.substr(0, rep.error.find(':'));
            PyErr_SetObject(error.ptr(), inst.ptr());
            throw py::error_already_set();
        }
        return py::make_tuple(saved, rep.ensembles.at("two_step_14").accuracy);
    }, py::arg("config_json") = "", py::arg("cohort") = nullptr);
    m.def("load_model", [](const std::filesystem::path& p) { return tw::load_model(p); });
}

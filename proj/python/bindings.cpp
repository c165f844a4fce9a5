// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
// http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// ------------------------------------------------------------------------

#include <memory>

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "umimo/det_equiv.hpp"
#include "umimo/experiment.hpp"
#include "umimo/io.hpp"
#include "umimo/power_control.hpp"

namespace py = pybind11;
using namespace umimo;

namespace {

struct DropModel {
    NetworkScenario scenario;
    CovarianceSet cov;
    PowerAllocation power;
    std::unique_ptr<EstimationModel> est;

    explicit DropModel(const NetworkScenario& s)
        : scenario(s), cov(build_covariance_set(s, drop_users(s))), power(PowerAllocation::full(s.dims(), s.max_power_mw)) {
        est = std::make_unique<EstimationModel>(cov, power.pilot);
    }
};

RVec sinr_of_drop(const NetworkScenario& s, const std::string& receiver, const std::string& lsfp) {
    const Receiver rx = receiver_from_string(receiver);
    const LsfpMode mode = lsfp_mode_from_string(lsfp);
    const DropModel m(s);
    std::vector<CMat> gamma;
    if (rx == Receiver::ZF) gamma = zf_gamma(*m.est, m.power.data);
    const SlowFadingSummaries sum = build_summaries(*m.est, m.power.data, gamma);
    if (mode == LsfpMode::Optimal) return optimal_sinr(sum, m.power, rx);
    const LsfpConvention conv = rx == Receiver::MF ? LsfpConvention::PilotScaled : LsfpConvention::Raw;
    return closed_form_sinr(sum, LsfpSet::none(s.dims(), conv, m.power.pilot), m.power, rx);
}

py::dict maxmin_of_drop(const NetworkScenario& s, const std::string& receiver, const std::string& lsfp, double eps) {
    const Receiver rx = receiver_from_string(receiver);
    const LsfpMode mode = lsfp_mode_from_string(lsfp);
    const DropModel m(s);
    auto kernel = std::make_shared<SummaryKernel>(*m.est);
    SinrEvaluator eval;
    if (rx == Receiver::MF) {
        eval = mf_evaluator(kernel, m.power.pilot, s.max_power_mw, mode);
    } else {
        eval = zf_evaluator(kernel, std::make_shared<GammaBasis>(*m.est), m.power.pilot, s.max_power_mw, mode);
    }
    BisectionOptions opt;
    opt.eps = eps;
    const PowerOptResult r = bisection_maxmin(eval, static_cast<int>(s.dims().num_users()),
                                              initial_gamma_max(*kernel, s.max_power_mw, s.max_power_mw),
                                              s.max_power_mw, opt);
    py::dict out;
    out["gamma_star"] = r.gamma_star;
    out["q_star"] = r.q_star;
    out["iterations"] = r.iterations;
    out["sinr"] = eval(r.q_star);
    return out;
}

py::dict run_from_json(const std::string& text) {
    const ExperimentSpec spec = experiment_from_json(nlohmann::json::parse(text));
    ResultBundle b;
    {
        py::gil_scoped_release release;
        b = run_experiment(spec);
    }
    py::dict out;
    for (const auto& c : b.configs) {
        RVec sinr(static_cast<Eigen::Index>(c.records.size()));
        for (std::size_t i = 0; i < c.records.size(); ++i) sinr(static_cast<Eigen::Index>(i)) = c.records[i].sinr;
        py::dict entry;
        entry["sinr"] = sinr;
        entry["outage5_db"] = c.outage5_db;
        entry["sinr_q05_db"] = c.records.empty() ? std::nan("") : c.sinr_db_cdf.q05;
        out[py::str(c.config.label)] = entry;
    }
    py::list failures;
    for (const auto& f : b.failures) failures.append(py::make_tuple(f.drop, f.message));
    out["failures"] = failures;
    return out;
}

}  // namespace

PYBIND11_MODULE(_umimo, m) {
    m.doc() = "Multi-cell massive MIMO uplink with large-scale fading postcoding";

    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<DomainError>(m, "DomainError", PyExc_ValueError);
    py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

    py::class_<NetworkScenario>(m, "NetworkScenario")
        .def(py::init<>())
        .def_readwrite("L", &NetworkScenario::L)
        .def_readwrite("K", &NetworkScenario::K)
        .def_readwrite("M", &NetworkScenario::M)
        .def_readwrite("cell_radius_km", &NetworkScenario::cell_radius_km)
        .def_readwrite("scattering_radius_m", &NetworkScenario::scattering_radius_m)
        .def_readwrite("antenna_spacing", &NetworkScenario::antenna_spacing)
        .def_readwrite("shadowing_std_db", &NetworkScenario::shadowing_std_db)
        .def_readwrite("max_power_mw", &NetworkScenario::max_power_mw)
        .def_readwrite("bandwidth_hz", &NetworkScenario::bandwidth_hz)
        .def_readwrite("noise_figure_db", &NetworkScenario::noise_figure_db)
        .def_readwrite("antenna_gain_db", &NetworkScenario::antenna_gain_db)
        .def_readwrite("seed", &NetworkScenario::seed)
        .def_property(
            "correlation", [](const NetworkScenario& s) { return to_string(s.correlation); },
            [](NetworkScenario& s, const std::string& v) { s.correlation = correlation_from_string(v); })
        .def("validate", &NetworkScenario::validate)
        .def("to_json", [](const NetworkScenario& s) { return scenario_to_json(s).dump(); })
        .def_static("from_json", [](const std::string& text) { return scenario_from_json(nlohmann::json::parse(text)); });

    m.def("covariances", [](const NetworkScenario& s) { return build_covariance_set(s, drop_users(s)).R; },
          "One-ring or scaled-identity covariances per (j, k, l) -> (j K + k) L + l");
    m.def("noise_power_dbm", &noise_power_dbm);
    m.def("angular_spread", &angular_spread);
    m.def("sinr", &sinr_of_drop, py::arg("scenario"), py::arg("receiver") = "MF", py::arg("lsfp") = "none",
          "Closed-form SINR per user (k, l) -> k L + l at full power");
    m.def("maxmin", &maxmin_of_drop, py::arg("scenario"), py::arg("receiver") = "MF", py::arg("lsfp") = "optimal",
          py::arg("eps") = 0.01);
    m.def("run_experiment", &run_from_json, py::arg("spec_json"));
    m.def(
        "compute_cdf",
        [](std::vector<double> v) {
            const CdfResult c = compute_cdf(std::move(v));
            return py::make_tuple(c.x, c.F, c.q05, c.median);
        },
        "Empirical CDF: (x, F, 5% quantile, median)");
    m.def("version", &library_version);
}

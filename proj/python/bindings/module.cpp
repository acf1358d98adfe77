// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// =============================================================================

#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "efobda/bounds.hpp"
#include "efobda/errors.hpp"
#include "efobda/experiment.hpp"
#include "efobda/numerics.hpp"
#include "efobda/power_control.hpp"
#include "efobda/schemes.hpp"

namespace py = pybind11;
using namespace efobda;

namespace {

py::dict row_dict(const MetricsRow& r) {
  py::dict d;
  d["round"] = r.round;
  d["train_loss"] = r.train_loss;
  d["test_accuracy"] = r.test_accuracy;
  d["grad_norm_sq"] = r.grad_norm_sq;
  d["phi"] = r.phi;
  d["misalignment_mse"] = r.misalignment_mse;
  d["power_ok"] = r.power_ok;
  d["wall_ms"] = r.wall_ms;
  return d;
}

py::dict run_dict(const RunOutput& o) {
  py::dict d;
  py::list rows;
  for (const MetricsRow& r : o.rows) rows.append(row_dict(r));
  d["name"] = o.config.name;
  d["rows"] = rows;
  d["initial_loss"] = o.initial_loss;
  d["initial_accuracy"] = o.initial_accuracy;
  d["summary"] = o.summary;
  d["csv_path"] = o.csv_path;
  d["json_path"] = o.json_path;
  d["power_ok_all_rounds"] = o.power_ok_all_rounds;
  return d;
}

ChannelKind parse_kind(const std::string& s) {
  if (s == "fading") return ChannelKind::kFading;
  if (s == "awgn") return ChannelKind::kAwgn;
  throw InvalidInput("kind must be 'fading' or 'awgn'");
}

}  // namespace

PYBIND11_MODULE(_efobda, m) {
  m.doc() = "Error-feedback one-bit over-the-air aggregation core";

  static py::exception<Error> base(m, "Error");
  py::register_exception<InvalidInput>(m, "InvalidInput", base.ptr());
  py::register_exception<ParseError>(m, "ParseError", base.ptr());
  py::register_exception<DomainError>(m, "DomainError", base.ptr());
  py::register_exception<SolverFailure>(m, "SolverFailure", base.ptr());
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());

  // numerics
  m.def("sign_vec", [](const Vec& v) { return sign_vec(v); });
  m.def("scaled_sign", [](const Vec& v) { return scaled_sign(v); });
  m.def("scaled_sign_delta", [](const Vec& v) { return scaled_sign_delta(v); });
  m.def("top_k", [](const Vec& v, std::size_t k) { return top_k(v, k); });
  m.def("contraction_residual", [](const Vec& a, const Vec& c) {
    return contraction_residual(a, c);
  });

  // schemes
  m.def(
      "efobda_transmit",
      [](const Vec& g, const Vec& e, double beta) {
        EfTransmit t = efobda_transmit(g, e, beta);
        return py::make_tuple(t.corrected, t.symbols, t.error);
      },
      py::arg("gradient"), py::arg("error"), py::arg("beta"),
      "Returns (u, sign(u), u - sign(u)).");

  // power control
  py::class_<ObjectiveParams>(m, "ObjectiveParams")
      .def(py::init<>())
      .def_readwrite("rho", &ObjectiveParams::rho)
      .def_readwrite("eta", &ObjectiveParams::eta)
      .def_readwrite("L", &ObjectiveParams::L)
      .def_readwrite("q", &ObjectiveParams::q)
      .def_readwrite("K", &ObjectiveParams::K)
      .def_readwrite("T", &ObjectiveParams::T)
      .def_readwrite("sigma1_sq", &ObjectiveParams::sigma1_sq);

  py::class_<PowerAllocation>(m, "PowerAllocation")
      .def_readonly("p", &PowerAllocation::p)
      .def_readonly("lam", &PowerAllocation::lambda)
      .def_readonly("excluded", &PowerAllocation::excluded)
      .def_readonly("degenerate", &PowerAllocation::degenerate);

  py::class_<KktReport>(m, "KktReport")
      .def_property_readonly("passed", &KktReport::pass)
      .def_readonly("max_primal_violation", &KktReport::max_primal_violation)
      .def_readonly("max_dual_violation", &KktReport::max_dual_violation)
      .def_readonly("max_slackness", &KktReport::max_slackness)
      .def_readonly("max_stationarity", &KktReport::max_stationarity)
      .def("__repr__", &KktReport::summary);

  m.def("phi_round",
        [](const Vec& p, const Vec& h, const ObjectiveParams& params) {
          return phi_round(p, h, params);
        });
  m.def(
      "solve_power",
      [](const Vec& h, const ObjectiveParams& params, double P0, double M,
         bool numeric) {
        return numeric ? solve_round_numeric(h, params, P0, M)
                       : solve_round_closed_form(h, params, P0, M);
      },
      py::arg("h"), py::arg("params"), py::arg("P0"), py::arg("M"),
      py::arg("numeric") = false);
  m.def("kkt_check",
        [](const PowerAllocation& a, const Vec& h, const ObjectiveParams& params,
           double P0, double M, double tol) {
          return kkt_check(a, h, params, P0, M, tol);
        },
        py::arg("alloc"), py::arg("h"), py::arg("params"), py::arg("P0"),
        py::arg("M"), py::arg("tol") = 1e-8);

  // bounds
  py::class_<HyperParams>(m, "HyperParams")
      .def(py::init<>())
      .def_readwrite("eta", &HyperParams::eta)
      .def_readwrite("beta", &HyperParams::beta)
      .def_readwrite("delta", &HyperParams::delta)
      .def_readwrite("rho", &HyperParams::rho)
      .def_readwrite("L", &HyperParams::L)
      .def_readwrite("G", &HyperParams::G)
      .def_readwrite("sigma_sq", &HyperParams::sigma_sq)
      .def_readwrite("sigma1_sq", &HyperParams::sigma1_sq)
      .def_readwrite("sigma_z_sq", &HyperParams::sigma_z_sq)
      .def_readwrite("K", &HyperParams::K)
      .def_readwrite("q", &HyperParams::q)
      .def_readwrite("T", &HyperParams::T)
      .def_readwrite("F0_minus_Fstar", &HyperParams::F0_minus_Fstar);

  py::class_<BoundValue>(m, "BoundValue")
      .def_readonly("value", &BoundValue::value)
      .def_readonly("B", &BoundValue::B)
      .def_readonly("C", &BoundValue::C)
      .def_readonly("D", &BoundValue::D)
      .def_readonly("A", &BoundValue::A)
      .def_readonly("descent_condition", &BoundValue::descent_condition)
      .def_readonly("eta_used", &BoundValue::eta_used)
      .def_readonly("warnings", &BoundValue::warnings);

  m.def(
      "convergence_bound",
      [](const std::string& variant, const HyperParams& hp,
         const std::vector<std::pair<Vec, Vec>>& gains_and_powers) {
        std::vector<AlignmentStep> traj;
        for (const auto& [h, p] : gains_and_powers) {
          traj.push_back(make_alignment(h, p));
        }
        return convergence_bound(parse_bound_variant(variant), hp, traj);
      },
      py::arg("variant"), py::arg("hyper"),
      py::arg("trajectory") = std::vector<std::pair<Vec, Vec>>{},
      "trajectory: per-round (h, p) pairs.");
  m.def(
      "beta_admissible_range",
      [](const std::string& kind, double eta, double G, double rho,
         std::size_t q) {
        const BetaRange r = beta_admissible_range(parse_kind(kind), eta, G, rho, q);
        return py::make_tuple(r.lower, r.upper, r.empty);
      },
      py::arg("kind"), py::arg("eta"), py::arg("G"), py::arg("rho"),
      py::arg("q"));
  m.def("quantization_error_bound", &quantization_error_bound, py::arg("eta"),
        py::arg("delta"), py::arg("G"), py::arg("beta"));
  m.def("misalignment_mse",
        [](const Vec& h, const Vec& p, std::size_t q, double sigma1_sq) {
          return misalignment_mse(h, p, h.size(), q, sigma1_sq);
        });
  m.def("misalignment_bias_sq_bound", [](const Vec& h, const Vec& p,
                                         std::size_t q) {
    return misalignment_bias_sq_bound(h, p, h.size(), q);
  });

  // experiments
  m.def("preset_names", &preset_names);
  m.def(
      "preset_configs",
      [](const std::string& name, std::uint64_t seed) {
        std::vector<std::string> out;
        for (const ExperimentConfig& c : preset(name, seed)) {
          out.push_back(config_to_json(c));
        }
        return out;
      },
      py::arg("name"), py::arg("seed") = 1, "Resolved JSON configs.");
  m.def(
      "resolve_config",
      [](const std::string& text) {
        return config_to_json(parse_config_text(text));
      },
      "Validate a JSON config and return it with defaults filled in.");
  m.def(
      "simulate",
      [](const std::string& text) {
        const ExperimentConfig c = parse_config_text(text);
        RunOutput o;
        {
          py::gil_scoped_release release;
          o = simulate(c);
        }
        return run_dict(o);
      },
      py::arg("config_json"), "Run in memory; returns rows and summary.");
  m.def(
      "run_experiment",
      [](const std::string& text) {
        const ExperimentConfig c = parse_config_text(text);
        RunOutput o;
        {
          py::gil_scoped_release release;
          o = run_experiment(c);
        }
        return run_dict(o);
      },
      py::arg("config_json"), "Run and write <output>/<name>.csv and .json.");
  m.def(
      "compare_runs",
      [](const std::vector<std::string>& files, const std::string& metric,
         const std::string& mode) {
        const CompareReport r = compare_runs(files, metric, parse_compare_mode(mode));
        py::list out;
        for (const RankedRun& x : r.ranking) {
          out.append(py::make_tuple(x.file, x.value, x.rank));
        }
        return out;
      },
      py::arg("files"), py::arg("metric") = "train_loss",
      py::arg("mode") = "final");
  m.attr("METRICS_VERSION") = kMetricsVersion;
}

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

#include "efobda/power_control.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "efobda/errors.hpp"
#include "json.hpp"

namespace efobda {
namespace {

using nlohmann::json;

double sum_alignment(std::span<const double> p, std::span<const double> h) {
  double s = 0.0;
  for (std::size_t k = 0; k < h.size(); ++k) s += h[k] * p[k];
  return s;
}

double bias_weight(const ObjectiveParams& params) {
  const double r = params.rho;
  const double e = params.eta;
  return r * r + r * r * e + e * e * (r * params.L + 1.0);
}

void check_gains(std::span<const double> h, const ObjectiveCoefficients& c,
                 const char* who) {
  if (h.size() != c.K) {
    throw InvalidInput(std::string(who) + ": expected K = " +
                       std::to_string(c.K) + " gains, got " +
                       std::to_string(h.size()));
  }
  for (double g : h) {
    if (!(g >= 0.0) || !std::isfinite(g)) {
      throw InvalidInput(std::string(who) + ": gains must be finite and >= 0");
    }
  }
  if (!(c.variance > 0.0) || !(c.bias >= 0.0)) {
    throw InvalidInput(std::string(who) +
                       ": need variance weight > 0 and bias weight >= 0");
  }
}

double box_cap(double P0, double M, const char* who) {
  if (!(P0 > 0.0) || !(M >= 1.0)) {
    throw InvalidInput(std::string(who) + ": need P0 > 0 and M >= 1");
  }
  return std::sqrt(P0 / M);
}

}  // namespace

void ObjectiveParams::validate() const {
  if (!(rho > 0.0)) throw InvalidInput("ObjectiveParams: rho must be > 0");
  if (!(eta > 0.0)) throw InvalidInput("ObjectiveParams: eta must be > 0");
  if (!(L > 0.0)) throw InvalidInput("ObjectiveParams: L must be > 0");
  if (q == 0 || K == 0 || T == 0) {
    throw InvalidInput("ObjectiveParams: q, K and T must be >= 1");
  }
  if (!(sigma1_sq > 0.0) || sigma1_sq > 4.0 * static_cast<double>(q)) {
    throw InvalidInput("ObjectiveParams: sigma1_sq must lie in (0, 4q]");
  }
}

ObjectiveCoefficients quantized_objective(const ObjectiveParams& params) {
  params.validate();
  const double TK2 = static_cast<double>(params.T) * params.K * params.K;
  ObjectiveCoefficients c;
  c.bias = bias_weight(params) * static_cast<double>(params.q) /
           (2.0 * params.rho * TK2);
  c.variance = params.eta * params.eta * params.L * params.sigma1_sq /
               (2.0 * TK2);
  c.lagrangian_scale = TK2;
  c.K = params.K;
  return c;
}

ObjectiveCoefficients analog_objective(double eta, double L, double G_sq,
                                       double sigma_sq, std::size_t K,
                                       std::size_t T) {
  if (!(eta > 0.0) || !(L > 0.0) || !(G_sq >= 0.0) || !(sigma_sq > 0.0) ||
      K == 0 || T == 0) {
    throw InvalidInput("analog_objective: parameters out of range");
  }
  const double TK2 = static_cast<double>(T) * K * K;
  ObjectiveCoefficients c;
  c.bias = ((1.0 + eta * eta * L * L) * G_sq + eta * eta * L * G_sq) /
           (2.0 * TK2);
  c.variance = eta * eta * L * sigma_sq / (2.0 * TK2);
  c.lagrangian_scale = TK2;
  c.K = K;
  return c;
}

double phi_round(std::span<const double> p, std::span<const double> h,
                 const ObjectiveCoefficients& coeffs) {
  if (p.size() != h.size() || h.size() != coeffs.K) {
    throw InvalidInput("phi_round: dimension mismatch");
  }
  const double bias = sum_alignment(p, h) - static_cast<double>(coeffs.K);
  double spread = 0.0;
  for (std::size_t k = 0; k < h.size(); ++k) {
    const double d = h[k] * p[k] - 1.0;
    spread += d * d;
  }
  return coeffs.bias * bias * bias + coeffs.variance * spread;
}

double phi_round(std::span<const double> p, std::span<const double> h,
                 const ObjectiveParams& params) {
  return phi_round(p, h, quantized_objective(params));
}

double regularized_inversion_scale(std::span<const double> h,
                                   std::span<const double> lambda,
                                   const ObjectiveParams& params) {
  params.validate();
  if (h.size() != params.K || lambda.size() != params.K) {
    throw InvalidInput("regularized_inversion_scale: dimension mismatch");
  }
  const double s1 = params.eta * params.eta * params.L * params.sigma1_sq;
  const double wq = bias_weight(params) * static_cast<double>(params.q);
  double sum = 0.0;
  for (std::size_t j = 0; j < h.size(); ++j) {
    if (h[j] == 0.0) continue;
    const double B = s1 * h[j] + 2.0 * lambda[j] / h[j];
    sum += h[j] / B;
  }
  return (params.rho * s1 + wq * static_cast<double>(params.K)) /
         (s1 * (params.rho + wq * sum));
}

Vec regularized_inversion(std::span<const double> h,
                          std::span<const double> lambda,
                          const ObjectiveParams& params) {
  const double A = regularized_inversion_scale(h, lambda, params);
  const double s1 = params.eta * params.eta * params.L * params.sigma1_sq;
  Vec p(h.size(), 0.0);
  for (std::size_t k = 0; k < h.size(); ++k) {
    if (h[k] == 0.0) continue;
    p[k] = A * h[k] / (h[k] * h[k] + 2.0 * lambda[k] / s1);
  }
  return p;
}

PowerAllocation solve_round_closed_form(std::span<const double> h,
                                        const ObjectiveCoefficients& coeffs,
                                        double P0, double M) {
  check_gains(h, coeffs, "solve_round_closed_form");
  const double cap = box_cap(P0, M, "solve_round_closed_form");
  const std::size_t K = h.size();
  const double gamma = coeffs.bias / coeffs.variance;

  PowerAllocation out = PowerAllocation::uniform(K, 0.0);
  std::vector<bool> clamped(K, false);
  std::size_t active = 0;
  for (std::size_t k = 0; k < K; ++k) {
    out.excluded[k] = h[k] == 0.0;
    if (!out.excluded[k]) ++active;
  }
  if (active == 0) {
    out.degenerate = true;
    return out;
  }

  // Free devices satisfy h_k p_k = A with A = 1 - gamma (S - K). Clamping a
  // device only lowers S, which raises A, so once a device violates the cap
  // it stays clamped and at most K passes are needed.
  double A = 0.0;
  bool settled = false;
  for (std::size_t pass = 0; pass <= K; ++pass) {
    double clamped_sum = 0.0;
    std::size_t free = 0;
    for (std::size_t k = 0; k < K; ++k) {
      if (out.excluded[k]) continue;
      if (clamped[k]) {
        clamped_sum += h[k] * cap;
      } else {
        ++free;
      }
    }
    A = (1.0 + gamma * (static_cast<double>(K) - clamped_sum)) /
        (1.0 + gamma * static_cast<double>(free));
    bool changed = false;
    for (std::size_t k = 0; k < K; ++k) {
      if (out.excluded[k] || clamped[k]) continue;
      if (A > h[k] * cap) {
        clamped[k] = true;
        changed = true;
      }
    }
    if (!changed) {
      settled = true;
      break;
    }
  }
  if (!settled) {
    throw SolverFailure("solve_round_closed_form: active set did not settle");
  }

  for (std::size_t k = 0; k < K; ++k) {
    if (out.excluded[k]) continue;
    if (clamped[k]) {
      out.p[k] = cap;
      // Regularizer r_k solves cap = A h_k / (h_k^2 + r_k).
      const double reg = std::max(0.0, A * h[k] / cap - h[k] * h[k]);
      out.lambda[k] = reg * coeffs.lagrangian_scale * coeffs.variance;
    } else {
      out.p[k] = A / h[k];
    }
  }
  return out;
}

PowerAllocation solve_round_closed_form(std::span<const double> h,
                                        const ObjectiveParams& params,
                                        double P0, double M) {
  return solve_round_closed_form(h, quantized_objective(params), P0, M);
}

PowerAllocation solve_round_numeric(std::span<const double> h,
                                    const ObjectiveCoefficients& coeffs,
                                    double P0, double M, double tol) {
  check_gains(h, coeffs, "solve_round_numeric");
  const double cap = box_cap(P0, M, "solve_round_numeric");
  if (!(tol > 0.0)) throw InvalidInput("solve_round_numeric: tol must be > 0");
  const std::size_t K = h.size();
  constexpr std::size_t kMaxIterations = 5'000'000;

  // Normalized objective f = a (h.p - K)^2 + b sum (h_k p_k - 1)^2, a + b = 1.
  const double a = coeffs.bias / (coeffs.bias + coeffs.variance);
  const double b = coeffs.variance / (coeffs.bias + coeffs.variance);
  double h_sq = 0.0;
  double h_max_sq = 0.0;
  for (double g : h) {
    h_sq += g * g;
    h_max_sq = std::max(h_max_sq, g * g);
  }

  PowerAllocation out = PowerAllocation::uniform(K, 0.0);
  for (std::size_t k = 0; k < K; ++k) out.excluded[k] = h[k] == 0.0;
  if (std::all_of(out.excluded.begin(), out.excluded.end(),
                  [](bool e) { return e; })) {
    out.degenerate = true;
    return out;
  }
  const double lip = 2.0 * a * h_sq + 2.0 * b * h_max_sq;

  auto gradient = [&](const Vec& p, Vec& g) {
    const double s = sum_alignment(p, h) - static_cast<double>(K);
    for (std::size_t k = 0; k < K; ++k) {
      g[k] = 2.0 * a * s * h[k] + 2.0 * b * (h[k] * p[k] - 1.0) * h[k];
    }
  };
  auto project = [&](double v, std::size_t k) {
    return out.excluded[k] ? 0.0 : std::clamp(v, 0.0, cap);
  };

  Vec x(K), x_prev(K), y(K), g(K);
  for (std::size_t k = 0; k < K; ++k) x[k] = project(0.5 * cap, k);
  x_prev = x;
  y = x;
  double t = 1.0;
  bool converged = false;
  for (std::size_t it = 0; it < kMaxIterations; ++it) {
    // Projected-gradient residual at the current iterate.
    gradient(x, g);
    double residual = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      residual = std::max(residual,
                          std::abs(x[k] - project(x[k] - g[k] / lip, k)) * lip);
    }
    if (residual < tol) {
      converged = true;
      break;
    }

    gradient(y, g);
    x_prev = x;
    for (std::size_t k = 0; k < K; ++k) x[k] = project(y[k] - g[k] / lip, k);
    // Restart momentum whenever the step opposes the extrapolation.
    double direction = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      direction += (y[k] - x[k]) * (x[k] - x_prev[k]);
    }
    if (direction > 0.0) t = 1.0;
    const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    for (std::size_t k = 0; k < K; ++k) {
      y[k] = x[k] + ((t - 1.0) / t_next) * (x[k] - x_prev[k]);
    }
    t = t_next;
  }
  if (!converged) {
    throw SolverFailure("solve_round_numeric: iteration cap exceeded");
  }

  out.p = x;
  // Multipliers of the upper bounds from stationarity of the full Lagrangian.
  gradient(x, g);
  const double to_lagrangian =
      coeffs.lagrangian_scale * (coeffs.bias + coeffs.variance);
  for (std::size_t k = 0; k < K; ++k) {
    if (out.excluded[k] || x[k] < cap) continue;
    out.lambda[k] = std::max(0.0, -to_lagrangian * g[k] / (2.0 * cap));
  }
  return out;
}

PowerAllocation solve_round_numeric(std::span<const double> h,
                                    const ObjectiveParams& params, double P0,
                                    double M, double tol) {
  return solve_round_numeric(h, quantized_objective(params), P0, M, tol);
}

std::string KktReport::summary() const {
  std::ostringstream os;
  os << "primal " << (primal_feasible ? "ok" : "FAIL") << " ("
     << max_primal_violation << "), dual " << (dual_feasible ? "ok" : "FAIL")
     << " (" << max_dual_violation << "), slackness "
     << (complementary_slackness ? "ok" : "FAIL") << " (" << max_slackness
     << "), stationarity " << (stationarity ? "ok" : "FAIL") << " ("
     << max_stationarity << ")";
  return os.str();
}

KktReport kkt_check(const PowerAllocation& alloc, std::span<const double> h,
                    const ObjectiveCoefficients& coeffs, double P0, double M,
                    double tol) {
  check_gains(h, coeffs, "kkt_check");
  const double cap_sq = P0 / M;
  box_cap(P0, M, "kkt_check");
  const std::size_t K = h.size();
  if (alloc.p.size() != K || alloc.lambda.size() != K) {
    throw InvalidInput("kkt_check: allocation size does not match K");
  }
  KktReport r;
  const double s = sum_alignment(alloc.p, h) - static_cast<double>(K);
  const double scale = coeffs.lagrangian_scale;
  const double norm = std::max(1.0, cap_sq);
  for (std::size_t k = 0; k < K; ++k) {
    const double p = alloc.p[k];
    const double lam = alloc.lambda[k];

    const double primal = std::max({p * p - cap_sq, -p, 0.0}) / norm;
    r.max_primal_violation = std::max(r.max_primal_violation, primal);

    r.max_dual_violation = std::max(r.max_dual_violation, std::max(0.0, -lam));

    const double slack =
        std::abs(lam * (p * p - cap_sq)) / (norm * std::max(1.0, lam));
    r.max_slackness = std::max(r.max_slackness, slack);

    const double t_bias = scale * 2.0 * coeffs.bias * s * h[k];
    const double t_var = scale * 2.0 * coeffs.variance * (h[k] * p - 1.0) * h[k];
    const double t_dual = 2.0 * lam * p;
    double grad = t_bias + t_var + t_dual;
    // At the lower bound p = 0 the box multiplier absorbs a positive gradient.
    if (p <= tol && grad > 0.0) grad = 0.0;
    const double stat = std::abs(grad) /
                        (1.0 + std::abs(t_bias) + std::abs(t_var) + std::abs(t_dual));
    r.max_stationarity = std::max(r.max_stationarity, stat);
  }
  r.primal_feasible = r.max_primal_violation <= tol;
  r.dual_feasible = r.max_dual_violation <= tol;
  r.complementary_slackness = r.max_slackness <= tol;
  r.stationarity = r.max_stationarity <= tol;
  return r;
}

KktReport kkt_check(const PowerAllocation& alloc, std::span<const double> h,
                    const ObjectiveParams& params, double P0, double M,
                    double tol) {
  return kkt_check(alloc, h, quantized_objective(params), P0, M, tol);
}

std::string export_instance(const PowerInstance& instance) {
  const ObjectiveParams& p = instance.params;
  json j = {{"h", instance.h},
            {"params",
             {{"rho", p.rho},
              {"eta", p.eta},
              {"L", p.L},
              {"q", p.q},
              {"K", p.K},
              {"T", p.T},
              {"sigma1_sq", p.sigma1_sq}}},
            {"P0", instance.P0},
            {"M", instance.M}};
  return j.dump(2);
}

PowerInstance import_instance(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("power instance: ") + e.what(), e.byte);
  }
  PowerInstance out;
  try {
    out.h = j.at("h").get<Vec>();
    const json& p = j.at("params");
    out.params.rho = p.at("rho").get<double>();
    out.params.eta = p.at("eta").get<double>();
    out.params.L = p.at("L").get<double>();
    out.params.q = p.at("q").get<std::size_t>();
    out.params.K = p.value("K", out.h.size());
    out.params.T = p.value("T", std::size_t{1});
    out.params.sigma1_sq = p.at("sigma1_sq").get<double>();
    out.P0 = j.at("P0").get<double>();
    out.M = j.at("M").get<double>();
  } catch (const json::exception& e) {
    throw InvalidInput(std::string("power instance: ") + e.what());
  }
  if (out.params.K != out.h.size()) {
    throw InvalidInput("power instance: K does not match the length of h");
  }
  out.params.validate();
  return out;
}

std::string export_allocation(const PowerAllocation& alloc) {
  json j = {{"p", alloc.p},
            {"lambda", alloc.lambda},
            {"round", alloc.round},
            {"excluded", alloc.excluded},
            {"degenerate", alloc.degenerate}};
  return j.dump(2);
}

}  // namespace efobda

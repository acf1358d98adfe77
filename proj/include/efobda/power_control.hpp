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

// Per-round transmit power optimization.
//
// Each round solves
//
//   min_p  c_bias (sum_k h_k p_k - K)^2 + c_var sum_k (h_k p_k - 1)^2
//   s.t.   0 <= p_k <= sqrt(P0 / M)
//
// For the one-bit schemes the coefficients are
//
//   c_bias = (rho^2 + rho^2 eta + eta^2 (rho L + 1)) q / (2 rho T K^2)
//   c_var  = eta^2 L ||sigma_1||^2 / (2 T K^2).
//
// Multipliers are reported for the Lagrangian
//
//   T K^2 Phi(p) + sum_k lambda_k (p_k^2 - P0/M),
//
// which is the normalization under which the optimum reads
//
//   p_k = A h_k / (h_k^2 + 2 lambda_k / (eta^2 L ||sigma_1||^2)).

#ifndef EFOBDA_POWER_CONTROL_HPP_
#define EFOBDA_POWER_CONTROL_HPP_

#include <cstddef>
#include <span>
#include <string>

#include "efobda/channel.hpp"
#include "efobda/numerics.hpp"

namespace efobda {

struct ObjectiveParams {
  double rho = 0.1;
  double eta = 0.1;
  double L = 1.0;
  std::size_t q = 1;
  std::size_t K = 1;
  std::size_t T = 1;
  // ||sigma_1||^2 = sum_i Var[sign(u_k[i])]; at most 4q.
  double sigma1_sq = 1.0;

  // Throws InvalidInput when a field is out of range.
  void validate() const;
};

struct ObjectiveCoefficients {
  double bias = 0.0;
  double variance = 0.0;
  // Factor applied to Phi in the Lagrangian (T K^2).
  double lagrangian_scale = 1.0;
  std::size_t K = 1;
};

ObjectiveCoefficients quantized_objective(const ObjectiveParams& params);

// Misalignment weights for unquantized analog transmission, read off the
// fading-channel bound without quantization:
//   c_bias = ((1 + eta^2 L^2) G^2 + eta^2 L G^2) / (2 T K^2)
//   c_var  = eta^2 L ||sigma||^2 / (2 T K^2).
ObjectiveCoefficients analog_objective(double eta, double L, double G_sq,
                                       double sigma_sq, std::size_t K,
                                       std::size_t T);

double phi_round(std::span<const double> p, std::span<const double> h,
                 const ObjectiveCoefficients& coeffs);
double phi_round(std::span<const double> p, std::span<const double> h,
                 const ObjectiveParams& params);

// Common scale A of the regularized channel inversion for given multipliers.
double regularized_inversion_scale(std::span<const double> h,
                                   std::span<const double> lambda,
                                   const ObjectiveParams& params);
// p_k = A h_k / (h_k^2 + 2 lambda_k / (eta^2 L ||sigma_1||^2)).
Vec regularized_inversion(std::span<const double> h,
                          std::span<const double> lambda,
                          const ObjectiveParams& params);

// Exact minimizer via an active-set pass over the KKT system. Devices with
// h_k = 0 are excluded (p_k = 0) and keep counting towards K.
PowerAllocation solve_round_closed_form(std::span<const double> h,
                                        const ObjectiveCoefficients& coeffs,
                                        double P0, double M);
PowerAllocation solve_round_closed_form(std::span<const double> h,
                                        const ObjectiveParams& params,
                                        double P0, double M);

// Accelerated projected gradient descent over the box, stopped when the
// projected-gradient residual of the normalized objective drops below tol.
// Independent of the closed-form path; used as its oracle.
PowerAllocation solve_round_numeric(std::span<const double> h,
                                    const ObjectiveCoefficients& coeffs,
                                    double P0, double M, double tol = 1e-12);
PowerAllocation solve_round_numeric(std::span<const double> h,
                                    const ObjectiveParams& params, double P0,
                                    double M, double tol = 1e-12);

struct KktReport {
  bool primal_feasible = true;
  bool dual_feasible = true;
  bool complementary_slackness = true;
  bool stationarity = true;
  double max_primal_violation = 0.0;
  double max_dual_violation = 0.0;
  double max_slackness = 0.0;
  double max_stationarity = 0.0;

  bool pass() const {
    return primal_feasible && dual_feasible && complementary_slackness &&
           stationarity;
  }
  std::string summary() const;
};

KktReport kkt_check(const PowerAllocation& alloc, std::span<const double> h,
                    const ObjectiveCoefficients& coeffs, double P0, double M,
                    double tol);
KktReport kkt_check(const PowerAllocation& alloc, std::span<const double> h,
                    const ObjectiveParams& params, double P0, double M,
                    double tol);

// One round's problem, exchanged as JSON:
//   {"h": [...], "params": {"rho","eta","L","q","K","T","sigma1_sq"},
//    "P0": x, "M": m}
struct PowerInstance {
  Vec h;
  ObjectiveParams params;
  double P0 = 1.0;
  double M = 1.0;
};

std::string export_instance(const PowerInstance& instance);
PowerInstance import_instance(const std::string& text);
std::string export_allocation(const PowerAllocation& alloc);

}  // namespace efobda

#endif  // EFOBDA_POWER_CONTROL_HPP_

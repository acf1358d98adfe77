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

// Closed-form convergence and error bounds for error-feedback one-bit
// over-the-air aggregation, plus exact per-round error decompositions used to
// check them against simulated traces.

#ifndef EFOBDA_BOUNDS_HPP_
#define EFOBDA_BOUNDS_HPP_

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "efobda/numerics.hpp"
#include "efobda/schemes.hpp"

namespace efobda {

struct HyperParams {
  double eta = 0.1;
  double beta = 1.0;
  // Contraction constant of the compressor (Assumption on C), in (0, 1].
  double delta = 0.5;
  double rho = 0.1;
  double L = 1.0;
  double G = 1.0;
  // ||sigma||^2, the summed per-coordinate gradient variance bound.
  double sigma_sq = 0.0;
  // ||sigma_1||^2, the summed variance of the transmitted signs.
  double sigma1_sq = 0.0;
  double sigma_z_sq = 0.0;
  std::size_t K = 1;
  std::size_t q = 1;
  std::size_t T = 1;
  double F0_minus_Fstar = 1.0;

  void validate() const;
};

// Misalignment of one round: sum_k h_k p_k - K and each h_k p_k - 1.
struct AlignmentStep {
  double sum_offset = 0.0;
  Vec device_offsets;
};

AlignmentStep make_alignment(std::span<const double> h,
                             std::span<const double> p);

// (sum_k h_k p_k - K)^2 q.
double misalignment_bias_sq_bound(std::span<const double> h,
                                  std::span<const double> p, std::size_t K,
                                  std::size_t q);

// (sum_k h_k p_k - K)^2 q + sum_k (h_k p_k - 1)^2 ||sigma_1||^2.
double misalignment_mse(std::span<const double> h, std::span<const double> p,
                        std::size_t K, std::size_t q, double sigma1_sq);

// Exact second moment before bounding ||E sign(u)||^2 by q:
// (sum_k h_k p_k - K)^2 mean_sign_sq + sum_k (h_k p_k - 1)^2 ||sigma_1||^2.
double misalignment_mse_given_mean(std::span<const double> h,
                                   std::span<const double> p, std::size_t K,
                                   double mean_sign_sq, double sigma1_sq);

// 2 (1 + eta) (1 - delta) G^2 / (eta delta beta^2).
double quantization_error_bound(double eta, double delta, double G,
                                double beta);

enum class BoundVariant {
  kTheorem1,       // EFOBDA, fading
  kProposition1,   // analog, fading
  kCorollary1,     // EFOBDA, AWGN
  kCorollary1Decayed,  // EFOBDA, AWGN, eta = 1 / sqrt(L T)
  kCorollary2,     // analog, AWGN
};

std::string to_string(BoundVariant variant);
BoundVariant parse_bound_variant(const std::string& text);

struct BoundValue {
  BoundVariant variant = BoundVariant::kTheorem1;
  double value = 0.0;
  // Scaling factors defined with the bound; NaN where not applicable.
  double B = 0.0;
  double C = 0.0;
  double D = 0.0;
  // Coefficient of ||g||^2 in the per-round descent inequality of the fading
  // analysis, and whether it satisfies A < -eta / beta.
  double A = 0.0;
  bool descent_condition = true;
  double eta_used = 0.0;
  std::vector<std::string> warnings;
};

// Right-hand side of the selected bound. The trajectory supplies one
// AlignmentStep per round for the fading variants; an empty trajectory means
// perfect alignment. Sums over the trajectory are divided by T.
// Throws DomainError outside a variant's parameter regime.
BoundValue convergence_bound(BoundVariant variant, const HyperParams& hyper,
                             std::span<const AlignmentStep> trajectory = {});

enum class ChannelKind { kFading, kAwgn };

struct BetaRange {
  double lower = 0.0;
  double upper = 0.0;
  bool empty = false;
  std::string note;
};

// Open interval of beta over which EFOBDA beats unquantized aggregation in the
// small-eta limit. fading: (0, min(1, eta G^2 / (rho q (eta + 1)))).
// awgn: ((1 - sqrt(1 - 2 rho)) / 2, (1 + sqrt(1 - 2 rho)) / 2), empty for
// rho >= 1/2.
BetaRange beta_admissible_range(ChannelKind kind, double eta, double G,
                                double rho, std::size_t q);

// Decomposition of the gradient error xi = sum_k u_k - y of one round.
struct ErrorDecomposition {
  Vec xi;
  // sum_k (u_k - x_k); equals sum_k e_k^{(t+1)} for EFOBDA.
  Vec quantization;
  Vec error_memory_sum;
  // sum_k (h_k p_k - 1) x_k.
  Vec misalignment;
  Vec noise;
  // xi - (quantization - misalignment - noise).
  Vec residual;
  double max_abs_residual = 0.0;
  // Residual of the aggregation term: (sum_k x_k - y) - (sum_k (1 - h_k p_k)
  // x_k - z).
  double max_abs_aggregation_residual = 0.0;
};

ErrorDecomposition trace_error_report(const RoundTrace& trace);

// w - (eta / K) sum_k e_k.
Vec virtual_iterate(std::span<const double> w, std::span<const Vec> errors,
                    double eta);

// Max |w_hat^{(t+1)} - (w_hat^{(t)} - eta/(beta K) sum g - eta/K eps - eta/K z)|
// over coordinates, evaluated on one round's trace.
double virtual_iterate_residual(const RoundTrace& trace);

}  // namespace efobda

#endif  // EFOBDA_BOUNDS_HPP_

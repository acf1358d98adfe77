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

#include "efobda/bounds.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "efobda/errors.hpp"

namespace efobda {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double sum_hp_offset(std::span<const double> h, std::span<const double> p,
                     std::size_t K) {
  if (h.size() != p.size() || h.size() != K) {
    throw InvalidInput("misalignment: h, p and K disagree");
  }
  double s = 0.0;
  for (std::size_t k = 0; k < K; ++k) s += h[k] * p[k];
  return s - static_cast<double>(K);
}

double spread(std::span<const double> h, std::span<const double> p) {
  double s = 0.0;
  for (std::size_t k = 0; k < h.size(); ++k) {
    const double d = h[k] * p[k] - 1.0;
    s += d * d;
  }
  return s;
}

struct TrajectorySums {
  double bias_sq = 0.0;       // sum_t (sum_k h p - K)^2
  double device_sq = 0.0;     // sum_t sum_k (h p - 1)^2
};

TrajectorySums summarize(std::span<const AlignmentStep> trajectory,
                         std::size_t K) {
  TrajectorySums out;
  for (const AlignmentStep& step : trajectory) {
    if (step.device_offsets.size() != K) {
      throw InvalidInput("convergence_bound: trajectory step has " +
                         std::to_string(step.device_offsets.size()) +
                         " device offsets, expected K = " + std::to_string(K));
    }
    out.bias_sq += step.sum_offset * step.sum_offset;
    for (double d : step.device_offsets) out.device_sq += d * d;
  }
  return out;
}

}  // namespace

void HyperParams::validate() const {
  if (!(eta > 0.0)) throw InvalidInput("HyperParams: eta must be > 0");
  if (!(beta > 0.0)) throw InvalidInput("HyperParams: beta must be > 0");
  if (!(delta > 0.0 && delta <= 1.0)) {
    throw InvalidInput("HyperParams: delta must lie in (0, 1]");
  }
  if (!(rho > 0.0)) throw InvalidInput("HyperParams: rho must be > 0");
  if (!(L > 0.0)) throw InvalidInput("HyperParams: L must be > 0");
  if (!(G >= 0.0)) throw InvalidInput("HyperParams: G must be >= 0");
  if (!(sigma_sq >= 0.0) || !(sigma1_sq >= 0.0) || !(sigma_z_sq >= 0.0)) {
    throw InvalidInput("HyperParams: variances must be >= 0");
  }
  if (K == 0 || q == 0 || T == 0) {
    throw InvalidInput("HyperParams: K, q and T must be >= 1");
  }
  if (sigma1_sq > 4.0 * static_cast<double>(q)) {
    throw InvalidInput("HyperParams: sigma1_sq must not exceed 4q");
  }
  if (!(F0_minus_Fstar >= 0.0)) {
    throw InvalidInput("HyperParams: F0 - F* must be >= 0");
  }
}

AlignmentStep make_alignment(std::span<const double> h,
                             std::span<const double> p) {
  AlignmentStep out;
  out.sum_offset = sum_hp_offset(h, p, h.size());
  out.device_offsets.resize(h.size());
  for (std::size_t k = 0; k < h.size(); ++k) {
    out.device_offsets[k] = h[k] * p[k] - 1.0;
  }
  return out;
}

double misalignment_bias_sq_bound(std::span<const double> h,
                                  std::span<const double> p, std::size_t K,
                                  std::size_t q) {
  const double s = sum_hp_offset(h, p, K);
  return s * s * static_cast<double>(q);
}

double misalignment_mse(std::span<const double> h, std::span<const double> p,
                        std::size_t K, std::size_t q, double sigma1_sq) {
  return misalignment_bias_sq_bound(h, p, K, q) + spread(h, p) * sigma1_sq;
}

double misalignment_mse_given_mean(std::span<const double> h,
                                   std::span<const double> p, std::size_t K,
                                   double mean_sign_sq, double sigma1_sq) {
  const double s = sum_hp_offset(h, p, K);
  return s * s * mean_sign_sq + spread(h, p) * sigma1_sq;
}

double quantization_error_bound(double eta, double delta, double G,
                                double beta) {
  if (!(eta > 0.0) || !(beta > 0.0)) {
    throw InvalidInput("quantization_error_bound: eta and beta must be > 0");
  }
  if (!(delta > 0.0)) {
    throw DomainError("quantization_error_bound: delta = 0 makes the bound "
                      "diverge");
  }
  if (delta > 1.0) {
    throw InvalidInput("quantization_error_bound: delta must not exceed 1");
  }
  return 2.0 * (1.0 + eta) * (1.0 - delta) * G * G /
         (eta * delta * beta * beta);
}

std::string to_string(BoundVariant variant) {
  switch (variant) {
    case BoundVariant::kTheorem1:
      return "theorem1";
    case BoundVariant::kProposition1:
      return "proposition1";
    case BoundVariant::kCorollary1:
      return "corollary1";
    case BoundVariant::kCorollary1Decayed:
      return "corollary1-decayed";
    case BoundVariant::kCorollary2:
      return "corollary2";
  }
  return "unknown";
}

BoundVariant parse_bound_variant(const std::string& text) {
  if (text == "theorem1") return BoundVariant::kTheorem1;
  if (text == "proposition1") return BoundVariant::kProposition1;
  if (text == "corollary1") return BoundVariant::kCorollary1;
  if (text == "corollary1-decayed") return BoundVariant::kCorollary1Decayed;
  if (text == "corollary2") return BoundVariant::kCorollary2;
  throw InvalidInput("unknown bound variant '" + text + "'");
}

BoundValue convergence_bound(BoundVariant variant, const HyperParams& hp,
                             std::span<const AlignmentStep> trajectory) {
  hp.validate();
  BoundValue out;
  out.variant = variant;
  out.B = out.C = out.D = out.A = kNaN;
  out.eta_used = hp.eta;

  const double eta = hp.eta;
  const double beta = hp.beta;
  const double delta = hp.delta;
  const double rho = hp.rho;
  const double L = hp.L;
  const double G2 = hp.G * hp.G;
  const double K2 = static_cast<double>(hp.K) * hp.K;
  const double T = static_cast<double>(hp.T);
  const double q = static_cast<double>(hp.q);
  const double noise_term = eta * eta * L * hp.sigma_z_sq / (2.0 * K2);

  switch (variant) {
    case BoundVariant::kTheorem1: {
      const TrajectorySums sums = summarize(trajectory, hp.K);
      out.B = (L * (1.0 + eta) * (1.0 - delta) + delta / 2.0) / (rho * delta);
      out.C = (eta * eta + rho * rho * eta + rho * rho) / (2.0 * rho);
      out.A = eta * rho * (eta * L * L + eta + 1.0) / (2.0 * beta * beta) +
              rho / 2.0 - (rho * L + 1.0) * eta / beta;
      out.descent_condition = out.A < -eta / beta;
      if (!out.descent_condition) {
        out.warnings.push_back(
            "descent coefficient A >= -eta/beta; the bound's derivation does "
            "not cover these parameters");
      }
      const double bias_total = sums.bias_sq * q;
      const double mse_total = sums.bias_sq * q + sums.device_sq * hp.sigma1_sq;
      out.value = beta / eta *
                  (hp.F0_minus_Fstar / T + eta * eta * L * out.B * G2 /
                                               (beta * beta) +
                   noise_term + out.C / (K2 * T) * bias_total +
                   eta * eta * L / (2.0 * K2 * T) * mse_total);
      break;
    }
    case BoundVariant::kProposition1: {
      if (!(eta < 1.0)) {
        throw DomainError("proposition1 requires eta < 1 (prefactor "
                          "1/(eta (1 - eta)))");
      }
      const TrajectorySums sums = summarize(trajectory, hp.K);
      const double mse_total = sums.bias_sq * G2 + sums.device_sq * hp.sigma_sq;
      out.value = 1.0 / (eta * (1.0 - eta)) *
                  (hp.F0_minus_Fstar / T + eta * eta * L * G2 / 2.0 +
                   (1.0 + eta * eta * L * L) * G2 / (2.0 * T * K2) *
                       sums.bias_sq +
                   noise_term + eta * eta * L / (2.0 * K2 * T) * mse_total);
      break;
    }
    case BoundVariant::kCorollary1: {
      if (!(rho < 2.0 * beta)) {
        throw DomainError("corollary1 requires rho < 2 beta");
      }
      out.D = (2.0 * L * (1.0 + eta) * (1.0 - delta) + rho * delta) /
              (2.0 * rho * delta);
      out.value = beta / (eta * (1.0 - rho / (2.0 * beta))) *
                  (hp.F0_minus_Fstar / T +
                   eta * eta * L * out.D * G2 / (beta * beta) + noise_term);
      break;
    }
    case BoundVariant::kCorollary1Decayed: {
      if (!(rho < 2.0 * beta)) {
        throw DomainError("corollary1-decayed requires rho < 2 beta");
      }
      const double eta_t = 1.0 / std::sqrt(L * T);
      out.eta_used = eta_t;
      out.D = (2.0 * L * (1.0 + eta_t) * (1.0 - delta) + rho * delta) /
              (2.0 * rho * delta);
      const double sqrtT = std::sqrt(T);
      out.value = beta * std::sqrt(L) / (sqrtT * (1.0 - rho / (2.0 * beta))) *
                  (hp.F0_minus_Fstar + out.D * G2 / (beta * beta * sqrtT) +
                   hp.sigma_z_sq / (2.0 * sqrtT * K2));
      break;
    }
    case BoundVariant::kCorollary2: {
      out.value = 1.0 / eta *
                  (hp.F0_minus_Fstar / T + eta * eta * L * G2 / 2.0 +
                   noise_term);
      break;
    }
  }
  return out;
}

BetaRange beta_admissible_range(ChannelKind kind, double eta, double G,
                                double rho, std::size_t q) {
  BetaRange out;
  if (kind == ChannelKind::kFading) {
    if (!(eta > 0.0) || !(G > 0.0) || !(rho > 0.0) || q == 0) {
      throw InvalidInput("beta_admissible_range: fading needs eta, G, rho, q "
                         "> 0");
    }
    out.lower = 0.0;
    out.upper = std::min(1.0, eta * G * G /
                                  (rho * static_cast<double>(q) * (eta + 1.0)));
    out.empty = !(out.upper > out.lower);
    return out;
  }
  if (!(rho > 0.0)) {
    throw InvalidInput("beta_admissible_range: awgn needs rho > 0");
  }
  if (!(rho < 0.5)) {
    out.empty = true;
    out.lower = out.upper = 0.5;
    out.note = rho == 0.5 ? "rho = 1/2 collapses the interval to the point 1/2"
                          : "rho > 1/2 leaves no admissible beta";
    return out;
  }
  const double root = std::sqrt(1.0 - 2.0 * rho);
  out.lower = (1.0 - root) / 2.0;
  out.upper = (1.0 + root) / 2.0;
  out.empty = !(out.upper > out.lower);
  return out;
}

ErrorDecomposition trace_error_report(const RoundTrace& trace) {
  const std::size_t K = trace.corrected.size();
  if (K == 0) throw InvalidInput("trace_error_report: trace has no devices");
  const std::size_t q = trace.aggregate.size();
  if (trace.symbols.size() != K || trace.error_after.size() != K ||
      trace.power.p.size() != K || trace.noise.size() != q ||
      trace.channel.num_devices != K || trace.channel.dim != q) {
    throw InvalidInput("trace_error_report: incomplete trace");
  }
  for (std::size_t k = 0; k < K; ++k) {
    if (trace.corrected[k].size() != q || trace.symbols[k].size() != q ||
        trace.error_after[k].size() != q) {
      throw InvalidInput("trace_error_report: incomplete trace");
    }
  }

  ErrorDecomposition out;
  out.xi.assign(q, 0.0);
  out.quantization.assign(q, 0.0);
  out.error_memory_sum.assign(q, 0.0);
  out.misalignment.assign(q, 0.0);
  out.noise = trace.noise;
  out.residual.assign(q, 0.0);
  Vec symbol_sum(q, 0.0);
  Vec aligned_gap(q, 0.0);
  for (std::size_t k = 0; k < K; ++k) {
    const double p = trace.power.p[k];
    for (std::size_t i = 0; i < q; ++i) {
      const double u = trace.corrected[k][i];
      const double x = trace.symbols[k][i];
      const double hp = trace.channel.gain(k, i) * p;
      out.xi[i] += u;
      out.quantization[i] += u - x;
      out.error_memory_sum[i] += trace.error_after[k][i];
      out.misalignment[i] += (hp - 1.0) * x;
      symbol_sum[i] += x;
      aligned_gap[i] += (1.0 - hp) * x;
    }
  }
  for (std::size_t i = 0; i < q; ++i) {
    out.xi[i] -= trace.aggregate[i];
    out.residual[i] = out.xi[i] - (out.quantization[i] - out.misalignment[i] -
                                   out.noise[i]);
    out.max_abs_residual =
        std::max(out.max_abs_residual, std::abs(out.residual[i]));
    const double agg = symbol_sum[i] - trace.aggregate[i];
    out.max_abs_aggregation_residual =
        std::max(out.max_abs_aggregation_residual,
                 std::abs(agg - (aligned_gap[i] - out.noise[i])));
  }
  return out;
}

Vec virtual_iterate(std::span<const double> w, std::span<const Vec> errors,
                    double eta) {
  if (errors.empty()) throw InvalidInput("virtual_iterate: no devices");
  Vec out(w.begin(), w.end());
  const double scale = eta / static_cast<double>(errors.size());
  for (const Vec& e : errors) {
    if (e.size() != w.size()) {
      throw InvalidInput("virtual_iterate: error length mismatch");
    }
    for (std::size_t i = 0; i < w.size(); ++i) out[i] -= scale * e[i];
  }
  return out;
}

double virtual_iterate_residual(const RoundTrace& trace) {
  const std::size_t K = trace.gradients.size();
  const std::size_t q = trace.model_before.size();
  if (K == 0 || trace.error_before.size() != K ||
      trace.error_after.size() != K || trace.model_after.size() != q ||
      trace.misalignment.size() != q || trace.noise.size() != q) {
    throw InvalidInput("virtual_iterate_residual: incomplete trace");
  }
  const Vec before = virtual_iterate(trace.model_before, trace.error_before,
                                     trace.eta);
  const Vec after = virtual_iterate(trace.model_after, trace.error_after,
                                    trace.eta);
  const double Kd = static_cast<double>(K);
  double worst = 0.0;
  for (std::size_t i = 0; i < q; ++i) {
    double g_sum = 0.0;
    for (const Vec& g : trace.gradients) g_sum += g[i];
    const double predicted = before[i] -
                             trace.eta / (trace.beta * Kd) * g_sum -
                             trace.eta / Kd * trace.misalignment[i] -
                             trace.eta / Kd * trace.noise[i];
    worst = std::max(worst, std::abs(after[i] - predicted));
  }
  return worst;
}

}  // namespace efobda

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

#ifndef EFOBDA_SCHEMES_HPP_
#define EFOBDA_SCHEMES_HPP_

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "efobda/channel.hpp"
#include "efobda/learning.hpp"
#include "efobda/numerics.hpp"
#include "efobda/power_control.hpp"

namespace efobda {

enum class Scheme { kEfobda, kObda, kObdaOpc, kBaa, kBaaOpc };

std::string to_string(Scheme scheme);
Scheme parse_scheme(const std::string& text);
bool is_digital(Scheme scheme);

enum class PowerPolicy {
  kSchemeDefault,
  kOptimized,
  kTruncatedInversion,
  kChannelInversion,
  kUnit,
};

std::string to_string(PowerPolicy policy);
PowerPolicy parse_power_policy(const std::string& text);
// The policy a scheme uses when none is forced: optimized for efobda and the
// -opc variants, truncated inversion for obda, capped inversion for baa.
PowerPolicy resolve_policy(Scheme scheme, PowerPolicy requested);

struct DeviceState {
  std::size_t index = 0;
  // Error memory e_k, zero before the first round.
  Vec error;
  std::shared_ptr<const Dataset> dataset;
  // Mini-batch sampling stream owned by this device.
  RngStream batch_rng{0, 0};
};

std::vector<DeviceState> make_devices(std::vector<Dataset> datasets,
                                      std::size_t param_dim,
                                      std::uint64_t batch_seed);

struct EfTransmit {
  Vec corrected;  // u = g / beta + e
  Vec symbols;    // sign(u)
  Vec error;      // u - sign(u)
};

EfTransmit efobda_transmit(std::span<const double> gradient,
                           std::span<const double> error, double beta);
// Same, updating the device's error memory in place.
Vec efobda_transmit(std::span<const double> gradient, DeviceState& state,
                    double beta);

// y / K.
Vec efobda_receive(std::span<const double> y, std::size_t K);

Vec obda_transmit(std::span<const double> gradient);
Vec baa_transmit(std::span<const double> gradient);

// p_k = c / h_k for devices with h_k^2 >= threshold, 0 otherwise, where
// c = sqrt(P0/M) * min over active h_k so every active device meets the cap.
PowerAllocation truncated_inversion_policy(const ChannelRealization& channel,
                                           double P0, double M,
                                           double threshold);

// p_k = min(1 / h_k, sqrt(P0/M)); silent when h_k = 0.
PowerAllocation channel_inversion_policy(const ChannelRealization& channel,
                                         double P0, double M);

// sum_i Var_k[x_k[i]] over the devices of one round, clamped to
// [floor, 4q]. Used as the running estimate of ||sigma_1||^2.
double estimate_symbol_variance(std::span<const Vec> symbols, double floor);

struct RoundSettings {
  Scheme scheme = Scheme::kEfobda;
  PowerPolicy power_policy = PowerPolicy::kSchemeDefault;
  double eta = 0.05;
  double beta = 1.0;
  std::size_t batch_size = 16;
  double P0 = 1.0;
  double M = 1.0;
  double truncation_threshold = 0.2;
  // Decode with sign(y) instead of y / K (digital schemes only).
  bool sign_decoder = false;
  // Optimized-policy inputs.
  double rho = 0.1;
  double smoothness = 1.0;
  std::size_t horizon = 1;
  double sigma1_sq = 1.0;
  // Analog optimized policy: G^2 and ||sigma||^2.
  double grad_bound_sq = 1.0;
  double grad_variance = 1.0;
};

// Everything realized in one round.
struct RoundTrace {
  std::size_t round = 0;
  Scheme scheme = Scheme::kEfobda;
  double eta = 0.0;
  double beta = 1.0;
  std::vector<Vec> gradients;
  std::vector<Vec> corrected;
  std::vector<Vec> symbols;
  std::vector<Vec> error_before;
  std::vector<Vec> error_after;
  ChannelRealization channel;
  PowerAllocation power;
  Vec noise;
  Vec aggregate;
  Vec decoded;
  // sum_k (h_k p_k - 1) x_k; the noise is stored as added to y.
  Vec misalignment;
  Vec model_before;
  Vec model_after;
  // Objective coefficients the optimized policy used (zero otherwise).
  ObjectiveCoefficients objective;
};

struct RoundResult {
  ModelState model;
  RoundTrace trace;
};

// One communication round: local gradients, transmission, over-the-air
// aggregation, decoding and the global update.
RoundResult run_round(const RoundSettings& settings, const ModelState& model,
                      std::vector<DeviceState>& devices, const Loss& loss,
                      const ChannelRealization& channel,
                      const NoiseModel& noise, RngStream& noise_rng);

// The power allocation a scheme would use for a channel realization.
PowerAllocation select_power(const RoundSettings& settings,
                             const ChannelRealization& channel,
                             ObjectiveCoefficients* used = nullptr);

}  // namespace efobda

#endif  // EFOBDA_SCHEMES_HPP_

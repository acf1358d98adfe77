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

#ifndef EFOBDA_CHANNEL_HPP_
#define EFOBDA_CHANNEL_HPP_

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "efobda/numerics.hpp"

namespace efobda {

// The multiple-access channel is modelled with real effective gains: a gain is
// the magnitude of a unit-variance circular complex coefficient, i.e. the
// phase is assumed pre-compensated with perfect CSI.
enum class ChannelMode { kAwgn, kRayleighFlat, kRayleighSubchannel };

std::string to_string(ChannelMode mode);
ChannelMode parse_channel_mode(const std::string& text);

// Gains h_k[i] for one round, K x q row-major. Constant within the round.
struct ChannelRealization {
  std::size_t num_devices = 0;
  std::size_t dim = 0;
  std::size_t round = 0;
  ChannelMode mode = ChannelMode::kAwgn;
  std::vector<double> gains;

  double gain(std::size_t k, std::size_t i) const { return gains[k * dim + i]; }
  std::span<const double> device(std::size_t k) const {
    return {gains.data() + k * dim, dim};
  }
  // The per-device scalar the power policies operate on: the gain itself in
  // flat modes, the RMS over entries for per-sub-channel gains.
  Vec device_gains() const;
};

struct NoiseModel {
  // sigma_z^2, in the same units as the received signal power.
  double variance = 0.0;
  // Take only the real part of circular complex noise, halving the variance.
  bool real_part_only = false;

  double effective_variance() const {
    return real_part_only ? variance / 2.0 : variance;
  }
};

// Real transmit scalars p_k >= 0 and the KKT multipliers that accompany an
// optimized allocation (zero for heuristic policies).
struct PowerAllocation {
  std::vector<double> p;
  std::vector<double> lambda;
  std::size_t round = 0;
  // Devices left silent because their gain is zero (optimizer) or below the
  // truncation threshold (truncated inversion).
  std::vector<bool> excluded;
  // Set when every device was excluded and the allocation is all-zero.
  bool degenerate = false;

  static PowerAllocation uniform(std::size_t K, double value);
};

ChannelRealization draw_channels(RngStream& rng, std::size_t K, std::size_t q,
                                 ChannelMode mode, std::size_t round = 0);

struct AirOutput {
  Vec y;
  // The noise realization exactly as it was added to y.
  Vec z;
};

// y[i] = sum_k h_k[i] p_k x_k[i] + z[i], z[i] ~ N(0, effective variance).
// One normal draw is consumed per entry even when the variance is zero.
AirOutput air_aggregate(std::span<const Vec> symbols,
                        const ChannelRealization& channel,
                        const PowerAllocation& power, const NoiseModel& noise,
                        RngStream& rng);

struct PowerCheck {
  bool pass = true;
  // P0/M - p_k^2 per device; violated when negative beyond rounding.
  std::vector<double> margin;
  std::vector<std::size_t> violators;
};

PowerCheck check_power(const PowerAllocation& power, double P0, double M);

// sigma_z^2 = signal_power / 10^(snr_db / 10).
NoiseModel snr_to_noise(double snr_db, double signal_power);

}  // namespace efobda

#endif  // EFOBDA_CHANNEL_HPP_

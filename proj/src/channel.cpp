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

#include "efobda/channel.hpp"

#include <cmath>
#include <limits>

#include "efobda/errors.hpp"

namespace efobda {
namespace {

// |CN(0, 1)|: both quadratures carry variance 1/2.
double rayleigh_gain(RngStream& rng) {
  const double re = rng.normal() * std::sqrt(0.5);
  const double im = rng.normal() * std::sqrt(0.5);
  return std::hypot(re, im);
}

}  // namespace

std::string to_string(ChannelMode mode) {
  switch (mode) {
    case ChannelMode::kAwgn:
      return "awgn";
    case ChannelMode::kRayleighFlat:
      return "rayleigh-flat";
    case ChannelMode::kRayleighSubchannel:
      return "rayleigh-subchannel";
  }
  return "unknown";
}

ChannelMode parse_channel_mode(const std::string& text) {
  if (text == "awgn") return ChannelMode::kAwgn;
  if (text == "rayleigh-flat" || text == "rayleigh" || text == "fading") {
    return ChannelMode::kRayleighFlat;
  }
  if (text == "rayleigh-subchannel") return ChannelMode::kRayleighSubchannel;
  throw InvalidInput("unknown channel mode '" + text + "'");
}

Vec ChannelRealization::device_gains() const {
  Vec out(num_devices);
  for (std::size_t k = 0; k < num_devices; ++k) {
    if (mode == ChannelMode::kRayleighSubchannel) {
      out[k] = std::sqrt(norm_sq(device(k)) / static_cast<double>(dim));
    } else {
      out[k] = gain(k, 0);
    }
  }
  return out;
}

PowerAllocation PowerAllocation::uniform(std::size_t K, double value) {
  PowerAllocation out;
  out.p.assign(K, value);
  out.lambda.assign(K, 0.0);
  out.excluded.assign(K, false);
  return out;
}

ChannelRealization draw_channels(RngStream& rng, std::size_t K, std::size_t q,
                                 ChannelMode mode, std::size_t round) {
  if (K == 0 || q == 0) throw InvalidInput("draw_channels: K, q must be >= 1");
  ChannelRealization out;
  out.num_devices = K;
  out.dim = q;
  out.round = round;
  out.mode = mode;
  out.gains.assign(K * q, 1.0);
  switch (mode) {
    case ChannelMode::kAwgn:
      break;
    case ChannelMode::kRayleighFlat:
      for (std::size_t k = 0; k < K; ++k) {
        const double h = rayleigh_gain(rng);
        for (std::size_t i = 0; i < q; ++i) out.gains[k * q + i] = h;
      }
      break;
    case ChannelMode::kRayleighSubchannel:
      for (double& h : out.gains) h = rayleigh_gain(rng);
      break;
  }
  return out;
}

AirOutput air_aggregate(std::span<const Vec> symbols,
                        const ChannelRealization& channel,
                        const PowerAllocation& power, const NoiseModel& noise,
                        RngStream& rng) {
  const std::size_t K = channel.num_devices;
  const std::size_t q = channel.dim;
  if (symbols.size() != K || power.p.size() != K) {
    throw InvalidInput("air_aggregate: device count mismatch");
  }
  for (const Vec& x : symbols) {
    if (x.size() != q) throw InvalidInput("air_aggregate: symbol length != q");
    if (!all_finite(x)) throw InvalidInput("air_aggregate: non-finite symbol");
  }
  if (!(noise.variance >= 0.0)) {
    throw InvalidInput("air_aggregate: noise variance must be >= 0");
  }
  AirOutput out{Vec(q, 0.0), Vec(q, 0.0)};
  for (std::size_t k = 0; k < K; ++k) {
    const double p = power.p[k];
    for (std::size_t i = 0; i < q; ++i) {
      out.y[i] += channel.gain(k, i) * p * symbols[k][i];
    }
  }
  const double sd = std::sqrt(noise.effective_variance());
  for (std::size_t i = 0; i < q; ++i) {
    out.z[i] = sd * rng.normal();
    out.y[i] += out.z[i];
  }
  return out;
}

PowerCheck check_power(const PowerAllocation& power, double P0, double M) {
  if (!(P0 > 0.0) || !(M >= 1.0)) {
    throw InvalidInput("check_power: need P0 > 0 and M >= 1");
  }
  PowerCheck out;
  const double cap = P0 / M;
  // p = sqrt(P0/M) squares back to P0/M only up to rounding.
  const double slack = 8.0 * std::numeric_limits<double>::epsilon() * cap;
  out.margin.resize(power.p.size());
  for (std::size_t k = 0; k < power.p.size(); ++k) {
    out.margin[k] = cap - power.p[k] * power.p[k];
    if (out.margin[k] < -slack) {
      out.pass = false;
      out.violators.push_back(k);
    }
  }
  return out;
}

NoiseModel snr_to_noise(double snr_db, double signal_power) {
  if (!(signal_power > 0.0)) {
    throw InvalidInput("snr_to_noise: signal power must be > 0");
  }
  return NoiseModel{signal_power / std::pow(10.0, snr_db / 10.0), false};
}

}  // namespace efobda

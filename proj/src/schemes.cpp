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

#include "efobda/schemes.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "efobda/errors.hpp"

namespace efobda {

std::string to_string(Scheme scheme) {
  switch (scheme) {
    case Scheme::kEfobda:
      return "efobda";
    case Scheme::kObda:
      return "obda";
    case Scheme::kObdaOpc:
      return "obda-opc";
    case Scheme::kBaa:
      return "baa";
    case Scheme::kBaaOpc:
      return "baa-opc";
  }
  return "unknown";
}

Scheme parse_scheme(const std::string& text) {
  if (text == "efobda") return Scheme::kEfobda;
  if (text == "obda") return Scheme::kObda;
  if (text == "obda-opc") return Scheme::kObdaOpc;
  if (text == "baa") return Scheme::kBaa;
  if (text == "baa-opc") return Scheme::kBaaOpc;
  throw InvalidInput("unknown scheme '" + text + "'");
}

bool is_digital(Scheme scheme) {
  return scheme == Scheme::kEfobda || scheme == Scheme::kObda ||
         scheme == Scheme::kObdaOpc;
}

std::string to_string(PowerPolicy policy) {
  switch (policy) {
    case PowerPolicy::kSchemeDefault:
      return "default";
    case PowerPolicy::kOptimized:
      return "opc";
    case PowerPolicy::kTruncatedInversion:
      return "truncated-inversion";
    case PowerPolicy::kChannelInversion:
      return "channel-inversion";
    case PowerPolicy::kUnit:
      return "unit";
  }
  return "unknown";
}

PowerPolicy parse_power_policy(const std::string& text) {
  if (text == "default") return PowerPolicy::kSchemeDefault;
  if (text == "opc" || text == "optimized") return PowerPolicy::kOptimized;
  if (text == "truncated-inversion") return PowerPolicy::kTruncatedInversion;
  if (text == "channel-inversion") return PowerPolicy::kChannelInversion;
  if (text == "unit") return PowerPolicy::kUnit;
  throw InvalidInput("unknown power policy '" + text + "'");
}

PowerPolicy resolve_policy(Scheme scheme, PowerPolicy requested) {
  if (requested != PowerPolicy::kSchemeDefault) return requested;
  switch (scheme) {
    case Scheme::kEfobda:
    case Scheme::kObdaOpc:
    case Scheme::kBaaOpc:
      return PowerPolicy::kOptimized;
    case Scheme::kObda:
      return PowerPolicy::kTruncatedInversion;
    case Scheme::kBaa:
      return PowerPolicy::kChannelInversion;
  }
  return PowerPolicy::kOptimized;
}

std::vector<DeviceState> make_devices(std::vector<Dataset> datasets,
                                      std::size_t param_dim,
                                      std::uint64_t batch_seed) {
  std::vector<DeviceState> out;
  out.reserve(datasets.size());
  for (std::size_t k = 0; k < datasets.size(); ++k) {
    DeviceState d;
    d.index = k;
    d.error.assign(param_dim, 0.0);
    d.dataset = std::make_shared<const Dataset>(std::move(datasets[k]));
    d.batch_rng = RngStream(batch_seed, substream(StreamId::kBatch, k));
    out.push_back(std::move(d));
  }
  return out;
}

EfTransmit efobda_transmit(std::span<const double> gradient,
                           std::span<const double> error, double beta) {
  if (!(beta > 0.0)) throw InvalidInput("efobda_transmit: beta must be > 0");
  if (gradient.size() != error.size()) {
    throw InvalidInput("efobda_transmit: gradient/error length mismatch");
  }
  if (!all_finite(gradient)) {
    throw InvalidInput("efobda_transmit: non-finite gradient");
  }
  EfTransmit out;
  out.corrected.resize(gradient.size());
  for (std::size_t i = 0; i < gradient.size(); ++i) {
    out.corrected[i] = gradient[i] / beta + error[i];
  }
  out.symbols = sign_vec(out.corrected);
  out.error.resize(gradient.size());
  for (std::size_t i = 0; i < gradient.size(); ++i) {
    out.error[i] = out.corrected[i] - out.symbols[i];
  }
  return out;
}

Vec efobda_transmit(std::span<const double> gradient, DeviceState& state,
                    double beta) {
  EfTransmit t = efobda_transmit(gradient, state.error, beta);
  state.error = std::move(t.error);
  return std::move(t.symbols);
}

Vec efobda_receive(std::span<const double> y, std::size_t K) {
  if (K == 0) throw InvalidInput("efobda_receive: K must be >= 1");
  Vec out(y.begin(), y.end());
  for (double& v : out) v /= static_cast<double>(K);
  return out;
}

Vec obda_transmit(std::span<const double> gradient) {
  return sign_vec(gradient);
}

Vec baa_transmit(std::span<const double> gradient) {
  if (!all_finite(gradient)) {
    throw InvalidInput("baa_transmit: non-finite gradient");
  }
  return Vec(gradient.begin(), gradient.end());
}

PowerAllocation truncated_inversion_policy(const ChannelRealization& channel,
                                           double P0, double M,
                                           double threshold) {
  if (!(threshold >= 0.0)) {
    throw InvalidInput("truncated_inversion_policy: threshold must be >= 0");
  }
  if (!(P0 > 0.0) || !(M >= 1.0)) {
    throw InvalidInput("truncated_inversion_policy: need P0 > 0 and M >= 1");
  }
  const Vec h = channel.device_gains();
  PowerAllocation out = PowerAllocation::uniform(h.size(), 0.0);
  out.round = channel.round;
  double h_min = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < h.size(); ++k) {
    out.excluded[k] = !(h[k] * h[k] >= threshold) || h[k] == 0.0;
    if (!out.excluded[k]) h_min = std::min(h_min, h[k]);
  }
  if (!std::isfinite(h_min)) {
    out.degenerate = true;
    return out;
  }
  const double c = std::sqrt(P0 / M) * h_min;
  for (std::size_t k = 0; k < h.size(); ++k) {
    if (!out.excluded[k]) out.p[k] = c / h[k];
  }
  return out;
}

PowerAllocation channel_inversion_policy(const ChannelRealization& channel,
                                         double P0, double M) {
  if (!(P0 > 0.0) || !(M >= 1.0)) {
    throw InvalidInput("channel_inversion_policy: need P0 > 0 and M >= 1");
  }
  const Vec h = channel.device_gains();
  const double cap = std::sqrt(P0 / M);
  PowerAllocation out = PowerAllocation::uniform(h.size(), 0.0);
  out.round = channel.round;
  for (std::size_t k = 0; k < h.size(); ++k) {
    if (h[k] == 0.0) {
      out.excluded[k] = true;
      continue;
    }
    out.p[k] = std::min(1.0 / h[k], cap);
  }
  return out;
}

double estimate_symbol_variance(std::span<const Vec> symbols, double floor) {
  if (symbols.empty()) throw InvalidInput("estimate_symbol_variance: empty");
  const std::size_t q = symbols.front().size();
  const double K = static_cast<double>(symbols.size());
  double total = 0.0;
  for (std::size_t i = 0; i < q; ++i) {
    double mean = 0.0;
    for (const Vec& x : symbols) mean += x[i];
    mean /= K;
    double var = 0.0;
    for (const Vec& x : symbols) var += (x[i] - mean) * (x[i] - mean);
    total += var / K;
  }
  return std::clamp(total, floor, 4.0 * static_cast<double>(q));
}

PowerAllocation select_power(const RoundSettings& settings,
                             const ChannelRealization& channel,
                             ObjectiveCoefficients* used) {
  const PowerPolicy policy =
      resolve_policy(settings.scheme, settings.power_policy);
  PowerAllocation out;
  switch (policy) {
    case PowerPolicy::kOptimized: {
      const Vec h = channel.device_gains();
      ObjectiveCoefficients coeffs;
      if (is_digital(settings.scheme)) {
        ObjectiveParams params;
        params.rho = settings.rho;
        params.eta = settings.eta;
        params.L = settings.smoothness;
        params.q = channel.dim;
        params.K = channel.num_devices;
        params.T = settings.horizon;
        params.sigma1_sq = settings.sigma1_sq;
        coeffs = quantized_objective(params);
      } else {
        coeffs = analog_objective(settings.eta, settings.smoothness,
                                  settings.grad_bound_sq,
                                  settings.grad_variance, channel.num_devices,
                                  settings.horizon);
      }
      out = solve_round_closed_form(h, coeffs, settings.P0, settings.M);
      if (used != nullptr) *used = coeffs;
      break;
    }
    case PowerPolicy::kTruncatedInversion:
      out = truncated_inversion_policy(channel, settings.P0, settings.M,
                                       settings.truncation_threshold);
      break;
    case PowerPolicy::kChannelInversion:
      out = channel_inversion_policy(channel, settings.P0, settings.M);
      break;
    case PowerPolicy::kUnit:
    case PowerPolicy::kSchemeDefault:
      out = PowerAllocation::uniform(
          channel.num_devices,
          std::min(1.0, std::sqrt(settings.P0 / settings.M)));
      break;
  }
  out.round = channel.round;
  return out;
}

RoundResult run_round(const RoundSettings& settings, const ModelState& model,
                      std::vector<DeviceState>& devices, const Loss& loss,
                      const ChannelRealization& channel,
                      const NoiseModel& noise, RngStream& noise_rng) {
  const std::size_t K = devices.size();
  const std::size_t q = model.w.size();
  if (K == 0) throw InvalidInput("run_round: no devices");
  if (channel.num_devices != K || channel.dim != q) {
    throw InvalidInput("run_round: channel dimensions do not match");
  }
  if (loss.param_dim() != q) {
    throw InvalidInput("run_round: loss dimension does not match model");
  }

  RoundTrace trace;
  trace.round = model.round;
  trace.scheme = settings.scheme;
  trace.eta = settings.eta;
  trace.beta = settings.beta;
  trace.channel = channel;
  trace.model_before = model.w;
  trace.gradients.reserve(K);
  for (DeviceState& d : devices) {
    if (d.error.size() != q) {
      throw InvalidInput("run_round: error memory has the wrong length");
    }
    trace.gradients.push_back(local_gradient(loss, model.w, *d.dataset,
                                             settings.batch_size, d.batch_rng));
    trace.error_before.push_back(d.error);
  }

  for (std::size_t k = 0; k < K; ++k) {
    const Vec& g = trace.gradients[k];
    switch (settings.scheme) {
      case Scheme::kEfobda: {
        EfTransmit t = efobda_transmit(g, devices[k].error, settings.beta);
        devices[k].error = t.error;
        trace.corrected.push_back(std::move(t.corrected));
        trace.symbols.push_back(std::move(t.symbols));
        break;
      }
      case Scheme::kObda:
      case Scheme::kObdaOpc:
        trace.corrected.push_back(g);
        trace.symbols.push_back(obda_transmit(g));
        break;
      case Scheme::kBaa:
      case Scheme::kBaaOpc:
        trace.corrected.push_back(g);
        trace.symbols.push_back(baa_transmit(g));
        break;
    }
    trace.error_after.push_back(devices[k].error);
  }

  trace.power = select_power(settings, channel, &trace.objective);
  AirOutput air =
      air_aggregate(trace.symbols, channel, trace.power, noise, noise_rng);
  trace.aggregate = std::move(air.y);
  trace.noise = std::move(air.z);

  trace.misalignment.assign(q, 0.0);
  for (std::size_t k = 0; k < K; ++k) {
    const double p = trace.power.p[k];
    for (std::size_t i = 0; i < q; ++i) {
      trace.misalignment[i] +=
          (channel.gain(k, i) * p - 1.0) * trace.symbols[k][i];
    }
  }

  if (settings.sign_decoder && is_digital(settings.scheme)) {
    trace.decoded = sign_vec(trace.aggregate);
  } else {
    trace.decoded = efobda_receive(trace.aggregate, K);
  }

  RoundResult result{global_update(model, trace.decoded, settings.eta), {}};
  trace.model_after = result.model.w;
  result.trace = std::move(trace);
  return result;
}

}  // namespace efobda

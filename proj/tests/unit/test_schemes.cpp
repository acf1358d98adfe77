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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "efobda/bounds.hpp"
#include "efobda/errors.hpp"
#include "efobda/schemes.hpp"

using namespace efobda;

namespace {

struct Fixture {
  LogisticLoss loss{6, 0.01};
  std::vector<DeviceState> devices;
  ModelState model{Vec(6, 0.0), 0};

  Fixture(std::size_t K, std::uint64_t seed, std::size_t D = 40) {
    RngStream rng(seed, 0);
    devices = make_devices(synth_dataset(rng, K, D, 6, 0.3), 6, seed + 100);
    for (double& w : model.w) w = 0.3 * rng.normal();
  }
};

RoundSettings settings_for(Scheme s) {
  RoundSettings r;
  r.scheme = s;
  r.eta = 0.1;
  r.beta = 0.8;
  r.batch_size = 8;
  r.P0 = 6.0;
  r.M = 6.0;
  r.smoothness = 0.5;
  r.horizon = 20;
  r.sigma1_sq = 3.0;
  return r;
}

}  // namespace

TEST_CASE("efobda_transmit examples") {
  const EfTransmit a = efobda_transmit(Vec{2, -3}, Vec{0, 0}, 1.0);
  CHECK(a.corrected == Vec{2, -3});
  CHECK(a.symbols == Vec{1, -1});
  CHECK(a.error == Vec{1, -2});

  const EfTransmit b = efobda_transmit(Vec{1, 0}, Vec{0.2, -0.1}, 0.5);
  CHECK(b.corrected[0] == doctest::Approx(2.2));
  CHECK(b.corrected[1] == doctest::Approx(-0.1));
  CHECK(b.symbols == Vec{1, -1});
  CHECK(b.error[0] == doctest::Approx(1.2));
  CHECK(b.error[1] == doctest::Approx(0.9));

  // Very strong feedback drives u to zero (here it underflows) and the
  // tie-break to +1.
  const EfTransmit c = efobda_transmit(Vec{-1e-30, 2e-30}, Vec{0, 0}, 1e300);
  CHECK(c.symbols == Vec{1, 1});

  CHECK_THROWS_AS(efobda_transmit(Vec{1}, Vec{0}, 0.0), InvalidInput);
  CHECK_THROWS_AS(efobda_transmit(Vec{NAN}, Vec{0}, 1.0), InvalidInput);
  CHECK_THROWS_AS(efobda_transmit(Vec{1, 2}, Vec{0}, 1.0), InvalidInput);
}

TEST_CASE("efobda_transmit updates device memory") {
  DeviceState d;
  d.error = {0.0, 0.0};
  CHECK(efobda_transmit(Vec{2, -3}, d, 1.0) == Vec{1, -1});
  CHECK(d.error == Vec{1, -2});
  CHECK(efobda_transmit(Vec{0, 0}, d, 1.0) == Vec{1, -1});
  CHECK(d.error == Vec{0, -1});
}

TEST_CASE("receiver and baseline transmitters") {
  CHECK(efobda_receive(Vec{2, 0}, 2) == Vec{1, 0});
  CHECK(efobda_receive(Vec{0, 0, 0}, 7) == Vec{0, 0, 0});
  CHECK_THROWS_AS(efobda_receive(Vec{1}, 0), InvalidInput);

  CHECK(obda_transmit(Vec{0.5, -0.3}) == Vec{1, -1});
  const Vec g{0.7, -1.2, 3.0};
  CHECK(obda_transmit(g) == efobda_transmit(g, Vec(3, 0.0), 1.0).symbols);
  CHECK(obda_transmit(g) == obda_transmit(g));

  CHECK(baa_transmit(g) == g);
  CHECK(baa_transmit(Vec{0, 0}) == Vec{0, 0});
}

TEST_CASE("truncated inversion policy") {
  RngStream rng(1, 0);
  ChannelRealization c = draw_channels(rng, 3, 2, ChannelMode::kAwgn);
  const PowerAllocation a = truncated_inversion_policy(c, 8.0, 2.0, 0.0);
  for (double p : a.p) CHECK(p == doctest::Approx(2.0));

  ChannelRealization two = draw_channels(rng, 2, 1, ChannelMode::kAwgn);
  two.gains = {1.0, 0.1};
  const PowerAllocation b = truncated_inversion_policy(two, 4.0, 1.0, 0.5);
  CHECK(b.p[0] == doctest::Approx(2.0));
  CHECK(b.p[1] == 0.0);
  CHECK(b.excluded == std::vector<bool>{false, true});

  two.gains = {0.1, 0.2};
  const PowerAllocation d = truncated_inversion_policy(two, 4.0, 1.0, 0.5);
  CHECK(d.degenerate);
  CHECK(d.p == Vec{0.0, 0.0});

  for (int i = 0; i < 1000; ++i) {
    const std::size_t K = 1 + rng.below(20);
    const ChannelRealization r =
        draw_channels(rng, K, 3, ChannelMode::kRayleighFlat);
    const double P0 = 0.1 + 10.0 * rng.uniform();
    const double M = 1.0 + rng.below(8);
    const PowerAllocation t =
        truncated_inversion_policy(r, P0, M, rng.uniform());
    REQUIRE(check_power(t, P0, M).pass);
    REQUIRE(check_power(channel_inversion_policy(r, P0, M), P0, M).pass);
  }
  CHECK_THROWS_AS(truncated_inversion_policy(c, 1.0, 1.0, -1.0), InvalidInput);
}

TEST_CASE("channel inversion is capped") {
  RngStream rng(2, 0);
  ChannelRealization c = draw_channels(rng, 3, 1, ChannelMode::kAwgn);
  c.gains = {2.0, 0.5, 0.0};
  const PowerAllocation a = channel_inversion_policy(c, 1.0, 1.0);
  CHECK(a.p == Vec{0.5, 1.0, 0.0});
  CHECK(a.excluded[2]);
}

TEST_CASE("policy resolution per scheme") {
  CHECK(resolve_policy(Scheme::kEfobda, PowerPolicy::kSchemeDefault) ==
        PowerPolicy::kOptimized);
  CHECK(resolve_policy(Scheme::kObda, PowerPolicy::kSchemeDefault) ==
        PowerPolicy::kTruncatedInversion);
  CHECK(resolve_policy(Scheme::kBaa, PowerPolicy::kSchemeDefault) ==
        PowerPolicy::kChannelInversion);
  CHECK(resolve_policy(Scheme::kObdaOpc, PowerPolicy::kSchemeDefault) ==
        PowerPolicy::kOptimized);
  CHECK(resolve_policy(Scheme::kBaaOpc, PowerPolicy::kSchemeDefault) ==
        PowerPolicy::kOptimized);
  CHECK(resolve_policy(Scheme::kObda, PowerPolicy::kUnit) == PowerPolicy::kUnit);
  for (Scheme s : {Scheme::kEfobda, Scheme::kObda, Scheme::kObdaOpc,
                   Scheme::kBaa, Scheme::kBaaOpc}) {
    CHECK(parse_scheme(to_string(s)) == s);
  }
  CHECK_THROWS_AS(parse_scheme("qam"), InvalidInput);
  CHECK_THROWS_AS(parse_power_policy("max"), InvalidInput);
}

TEST_CASE("single device efobda round reduces to a signed step") {
  Fixture f(1, 3);
  RoundSettings s = settings_for(Scheme::kEfobda);
  s.beta = 1.0;
  s.P0 = 6.0;
  s.M = 6.0;
  s.batch_size = 40;
  RngStream crng(1, 0), nrng(2, 0);
  const ChannelRealization c = draw_channels(crng, 1, 6, ChannelMode::kAwgn);
  const Vec g = full_gradient(f.loss, f.model.w, *f.devices[0].dataset);
  const RoundResult r =
      run_round(s, f.model, f.devices, f.loss, c, NoiseModel{0.0, false}, nrng);
  const Vec sg = sign_vec(g);
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(r.model.w[i] == doctest::Approx(f.model.w[i] - 0.1 * sg[i]));
  }
  CHECK(r.model.round == 1);
  CHECK(r.trace.power.p[0] == doctest::Approx(1.0));
}

TEST_CASE("baa with unit channel reproduces the centralized step") {
  Fixture f(4, 4);
  RoundSettings s = settings_for(Scheme::kBaa);
  s.batch_size = 40;
  RngStream crng(1, 0), nrng(2, 0);
  const ChannelRealization c = draw_channels(crng, 4, 6, ChannelMode::kAwgn);
  std::vector<Dataset> data;
  for (const DeviceState& d : f.devices) data.push_back(*d.dataset);
  const Vec g = global_gradient(f.loss, f.model.w, data);
  const RoundResult r =
      run_round(s, f.model, f.devices, f.loss, c, NoiseModel{0.0, false}, nrng);
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(r.model.w[i] == doctest::Approx(f.model.w[i] - 0.1 * g[i]).epsilon(1e-12));
  }
}

TEST_CASE("run_round is deterministic") {
  for (Scheme sc : {Scheme::kEfobda, Scheme::kObda, Scheme::kObdaOpc,
                    Scheme::kBaa, Scheme::kBaaOpc}) {
    Fixture a(5, 6), b(5, 6);
    const RoundSettings s = settings_for(sc);
    RngStream c1(9, 1), c2(9, 1), n1(9, 2), n2(9, 2);
    ModelState ma = a.model, mb = b.model;
    for (int t = 0; t < 5; ++t) {
      const ChannelRealization ch1 =
          draw_channels(c1, 5, 6, ChannelMode::kRayleighFlat, t);
      const ChannelRealization ch2 =
          draw_channels(c2, 5, 6, ChannelMode::kRayleighFlat, t);
      const RoundResult ra =
          run_round(s, ma, a.devices, a.loss, ch1, NoiseModel{0.1, false}, n1);
      const RoundResult rb =
          run_round(s, mb, b.devices, b.loss, ch2, NoiseModel{0.1, false}, n2);
      CHECK(ra.trace.aggregate == rb.trace.aggregate);
      CHECK(ra.trace.noise == rb.trace.noise);
      CHECK(ra.trace.power.p == rb.trace.power.p);
      CHECK(ra.trace.symbols == rb.trace.symbols);
      CHECK(ra.model.w == rb.model.w);
      ma = ra.model;
      mb = rb.model;
    }
  }
}

TEST_CASE("error memory telescopes over rounds") {
  Fixture f(4, 7);
  const RoundSettings s = settings_for(Scheme::kEfobda);
  RngStream crng(3, 1), nrng(3, 2);
  Vec expected(6, 0.0);
  ModelState m = f.model;
  for (std::size_t t = 0; t < 50; ++t) {
    const ChannelRealization c =
        draw_channels(crng, 4, 6, ChannelMode::kRayleighFlat, t);
    const RoundResult r =
        run_round(s, m, f.devices, f.loss, c, NoiseModel{0.05, false}, nrng);
    for (std::size_t k = 0; k < 4; ++k) {
      for (std::size_t i = 0; i < 6; ++i) {
        expected[i] += r.trace.gradients[k][i] / s.beta - r.trace.symbols[k][i];
      }
    }
    m = r.model;
  }
  for (std::size_t i = 0; i < 6; ++i) {
    double sum = 0.0;
    for (const DeviceState& d : f.devices) sum += d.error[i];
    CHECK(sum == doctest::Approx(expected[i]).epsilon(1e-10).scale(1.0));
  }
}

TEST_CASE("round traces satisfy the error decomposition and virtual iterate") {
  Fixture f(6, 8);
  const RoundSettings s = settings_for(Scheme::kEfobda);
  RngStream crng(4, 1), nrng(4, 2);
  ModelState m = f.model;
  for (std::size_t t = 0; t < 30; ++t) {
    const ChannelRealization c =
        draw_channels(crng, 6, 6, ChannelMode::kRayleighFlat, t);
    const RoundResult r =
        run_round(s, m, f.devices, f.loss, c, NoiseModel{0.2, false}, nrng);
    const ErrorDecomposition e = trace_error_report(r.trace);
    CHECK(e.max_abs_residual <= 1e-10);
    CHECK(e.max_abs_aggregation_residual <= 1e-10);
    for (std::size_t i = 0; i < 6; ++i) {
      CHECK(e.quantization[i] ==
            doctest::Approx(e.error_memory_sum[i]).epsilon(1e-12).scale(1.0));
      CHECK(e.misalignment[i] == doctest::Approx(r.trace.misalignment[i]));
    }
    CHECK(virtual_iterate_residual(r.trace) <= 1e-10);
    m = r.model;
  }
}

TEST_CASE("sign decoder option") {
  Fixture f(3, 9);
  RoundSettings s = settings_for(Scheme::kObda);
  s.sign_decoder = true;
  RngStream crng(5, 1), nrng(5, 2);
  const ChannelRealization c = draw_channels(crng, 3, 6, ChannelMode::kAwgn);
  const RoundResult r =
      run_round(s, f.model, f.devices, f.loss, c, NoiseModel{0.0, false}, nrng);
  CHECK(r.trace.decoded == sign_vec(r.trace.aggregate));
}

TEST_CASE("select_power respects the budget for every scheme") {
  RngStream rng(10, 0);
  for (Scheme sc : {Scheme::kEfobda, Scheme::kObda, Scheme::kObdaOpc,
                    Scheme::kBaa, Scheme::kBaaOpc}) {
    RoundSettings s = settings_for(sc);
    s.P0 = 3.0;
    for (int i = 0; i < 100; ++i) {
      const ChannelRealization c =
          draw_channels(rng, 8, 6, ChannelMode::kRayleighFlat);
      REQUIRE(check_power(select_power(s, c), s.P0, s.M).pass);
    }
  }
}

TEST_CASE("symbol variance estimate") {
  const std::vector<Vec> same{{1, -1}, {1, -1}};
  CHECK(estimate_symbol_variance(same, 0.01) == 0.01);
  const std::vector<Vec> split{{1, 1}, {-1, -1}};
  CHECK(estimate_symbol_variance(split, 0.0) == doctest::Approx(2.0));
}

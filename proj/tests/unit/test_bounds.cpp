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

#include "../support/ef_sim.hpp"
#include "efobda/bounds.hpp"
#include "efobda/errors.hpp"

using namespace efobda;

namespace {

HyperParams spot_case() {
  HyperParams hp;
  hp.eta = 0.1;
  hp.L = 1.0;
  hp.beta = 0.8;
  hp.delta = 0.5;
  hp.rho = 0.1;
  hp.G = 1.0;
  hp.T = 100;
  hp.F0_minus_Fstar = 1.0;
  hp.K = 2;
  hp.q = 3;
  hp.sigma1_sq = 2.0;
  return hp;
}

std::vector<AlignmentStep> aligned(std::size_t T, std::size_t K) {
  return std::vector<AlignmentStep>(T, AlignmentStep{0.0, Vec(K, 0.0)});
}

}  // namespace

TEST_CASE("misalignment examples") {
  const Vec ones{1.0, 1.0};
  CHECK(misalignment_bias_sq_bound(Vec{0.5, 2.0}, Vec{2.0, 0.5}, 2, 4) == 0.0);
  CHECK(misalignment_bias_sq_bound(ones, Vec{2.0, 0.0}, 2, 1) == 0.0);
  CHECK(misalignment_bias_sq_bound(ones, Vec{2.0, 2.0}, 2, 3) == 12.0);
  CHECK(misalignment_mse(ones, ones, 2, 5, 3.0) == 0.0);
  CHECK(misalignment_mse(ones, Vec{2.0, 0.0}, 2, 1, 2.0) == 4.0);
  CHECK_THROWS_AS(misalignment_mse(ones, Vec{1.0}, 2, 1, 1.0), InvalidInput);
}

TEST_CASE("misalignment mse is bias plus variance") {
  RngStream rng(1, 0);
  for (int i = 0; i < 100; ++i) {
    const std::size_t K = 1 + rng.below(8);
    Vec h(K), p(K);
    double spread = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      h[k] = rng.uniform() * 2.0;
      p[k] = rng.uniform() * 2.0;
      spread += (h[k] * p[k] - 1.0) * (h[k] * p[k] - 1.0);
    }
    const double s1 = 4.0 * rng.uniform();
    CHECK(misalignment_mse(h, p, K, 7, s1) ==
          misalignment_bias_sq_bound(h, p, K, 7) + spread * s1);
    CHECK(misalignment_mse_given_mean(h, p, K, 7.0, s1) ==
          doctest::Approx(misalignment_mse(h, p, K, 7, s1)));
  }
}

TEST_CASE("quantization error bound examples") {
  CHECK(quantization_error_bound(0.1, 0.5, 1.0, 1.0) == doctest::Approx(22.0));
  CHECK(quantization_error_bound(0.1, 1.0, 3.0, 0.5) == 0.0);
  CHECK_THROWS_AS(quantization_error_bound(0.1, 0.0, 1.0, 1.0), DomainError);
  CHECK_THROWS_AS(quantization_error_bound(0.1, 1.5, 1.0, 1.0), InvalidInput);
  CHECK_THROWS_AS(quantization_error_bound(0.0, 0.5, 1.0, 1.0), InvalidInput);
}

TEST_CASE("fading bound spot value") {
  HyperParams hp = spot_case();
  const auto traj = aligned(100, 2);
  const BoundValue v = convergence_bound(BoundVariant::kTheorem1, hp, traj);
  CHECK(v.B == doctest::Approx(16.0).epsilon(1e-14));
  CHECK(std::abs(v.value - 2.08) <= 1e-12);
  CHECK(v.C == doctest::Approx((0.01 + 0.001 + 0.01) / 0.2));
  CHECK(std::isnan(v.D));
}

TEST_CASE("fading bound grows with misalignment, noise and G") {
  const HyperParams hp = spot_case();
  const auto traj = aligned(100, 2);
  const double base = convergence_bound(BoundVariant::kTheorem1, hp, traj).value;

  auto off = traj;
  off[5] = make_alignment(Vec{1.0, 1.0}, Vec{1.2, 0.9});
  CHECK(convergence_bound(BoundVariant::kTheorem1, hp, off).value > base);

  HyperParams noisy = hp;
  noisy.sigma_z_sq = 0.5;
  CHECK(convergence_bound(BoundVariant::kTheorem1, noisy, traj).value > base);

  HyperParams big = hp;
  big.G = 2.0;
  CHECK(convergence_bound(BoundVariant::kTheorem1, big, traj).value > base);

  // Monotone in each |sum h p - K| and non-increasing in T at fixed per-round
  // error.
  double prev = base;
  for (double s : {0.1, 0.2, 0.5, 1.0}) {
    auto t2 = traj;
    for (AlignmentStep& a : t2) a.sum_offset = s;
    const double v = convergence_bound(BoundVariant::kTheorem1, hp, t2).value;
    CHECK(v >= prev);
    prev = v;
  }
  prev = INFINITY;
  for (std::size_t T : {10, 50, 100, 400}) {
    HyperParams h2 = hp;
    h2.T = T;
    std::vector<AlignmentStep> t2(T, AlignmentStep{0.3, Vec{0.2, 0.1}});
    const double v = convergence_bound(BoundVariant::kTheorem1, h2, t2).value;
    CHECK(v <= prev);
    prev = v;
  }

  std::vector<AlignmentStep> wrong(3, AlignmentStep{0.0, Vec(5, 0.0)});
  CHECK_THROWS_AS(convergence_bound(BoundVariant::kTheorem1, hp, wrong),
                  InvalidInput);
}

TEST_CASE("fading bound warns when the descent condition fails") {
  HyperParams hp = spot_case();
  hp.beta = 0.01;
  const BoundValue v =
      convergence_bound(BoundVariant::kTheorem1, hp, aligned(100, 2));
  CHECK_FALSE(v.descent_condition);
  CHECK(v.warnings.size() == 1);
}

TEST_CASE("rate bound and its decayed form") {
  HyperParams hp = spot_case();
  const BoundValue c = convergence_bound(BoundVariant::kCorollary1, hp);
  CHECK(c.D == doctest::Approx((2.0 * 1.1 * 0.5 + 0.05) / 0.1));
  CHECK(std::isfinite(c.value));

  hp.G = 0.0;
  hp.T = 100;
  const double v100 = convergence_bound(BoundVariant::kCorollary1Decayed, hp).value;
  hp.T = 400;
  const BoundValue d400 = convergence_bound(BoundVariant::kCorollary1Decayed, hp);
  CHECK(d400.value / v100 == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(d400.eta_used == doctest::Approx(0.05));

  HyperParams bad = spot_case();
  bad.rho = 2.0;
  bad.beta = 0.9;
  CHECK_THROWS_AS(convergence_bound(BoundVariant::kCorollary1, bad), DomainError);
  CHECK_THROWS_AS(convergence_bound(BoundVariant::kCorollary1Decayed, bad),
                  DomainError);
}

TEST_CASE("rate bound is continuous in rho") {
  HyperParams hp = spot_case();
  hp.beta = 1.0;
  for (double rho : {1e-3, 1e-2, 0.1, 0.5}) {
    hp.rho = rho;
    const double a = convergence_bound(BoundVariant::kCorollary1, hp).value;
    hp.rho = rho * (1.0 + 1e-9);
    const double b = convergence_bound(BoundVariant::kCorollary1, hp).value;
    CHECK(std::abs(a - b) / a < 1e-7);
  }
}

TEST_CASE("analog variants") {
  HyperParams hp = spot_case();
  hp.sigma_sq = 0.5;
  const double c2 = convergence_bound(BoundVariant::kCorollary2, hp).value;
  CHECK(c2 == doctest::Approx(10.0 * (0.01 + 0.005)));
  const double p1 =
      convergence_bound(BoundVariant::kProposition1, hp, aligned(100, 2)).value;
  CHECK(p1 == doctest::Approx(1.0 / (0.1 * 0.9) * (0.01 + 0.005)));
  hp.eta = 1.0;
  CHECK_THROWS_AS(
      convergence_bound(BoundVariant::kProposition1, hp, aligned(100, 2)),
      DomainError);
}

TEST_CASE("hyperparameter validation") {
  HyperParams hp = spot_case();
  hp.delta = 0.0;
  CHECK_THROWS_AS(hp.validate(), InvalidInput);
  hp = spot_case();
  hp.sigma1_sq = 13.0;
  CHECK_THROWS_AS(hp.validate(), InvalidInput);
  hp = spot_case();
  hp.T = 0;
  CHECK_THROWS_AS(convergence_bound(BoundVariant::kCorollary2, hp), InvalidInput);
  for (BoundVariant v : {BoundVariant::kTheorem1, BoundVariant::kProposition1,
                         BoundVariant::kCorollary1,
                         BoundVariant::kCorollary1Decayed,
                         BoundVariant::kCorollary2}) {
    CHECK(parse_bound_variant(to_string(v)) == v);
  }
  CHECK_THROWS_AS(parse_bound_variant("lemma9"), InvalidInput);
}

TEST_CASE("beta admissible ranges") {
  const BetaRange f = beta_admissible_range(ChannelKind::kFading, 0.1, 1.0, 0.01, 10);
  CHECK(f.lower == 0.0);
  CHECK(std::abs(f.upper - 0.1 / (0.1 * 1.1)) <= 1e-9);
  CHECK(std::abs(f.upper - 0.9090909090909) <= 1e-9);
  CHECK_FALSE(f.empty);

  const BetaRange a = beta_admissible_range(ChannelKind::kAwgn, 0.1, 1.0, 0.18, 10);
  CHECK(std::abs(a.lower - 0.1) <= 1e-9);
  CHECK(std::abs(a.upper - 0.9) <= 1e-9);

  const BetaRange e = beta_admissible_range(ChannelKind::kAwgn, 0.1, 1.0, 0.5, 10);
  CHECK(e.empty);
  CHECK_FALSE(e.note.empty());
  CHECK(beta_admissible_range(ChannelKind::kAwgn, 0.1, 1.0, 0.7, 10).empty);

  // Capped at one.
  CHECK(beta_admissible_range(ChannelKind::kFading, 0.1, 100.0, 0.01, 10).upper == 1.0);
  CHECK_THROWS_AS(beta_admissible_range(ChannelKind::kFading, 0.1, 1.0, 0.0, 10),
                  InvalidInput);
}

TEST_CASE("trace decomposition examples") {
  // One device, unit channel, no noise, beta = 1, g = [0.4].
  RoundTrace t;
  RngStream rng(1, 0);
  t.channel = draw_channels(rng, 1, 1, ChannelMode::kAwgn);
  t.gradients = {{0.4}};
  const EfTransmit x = efobda_transmit(Vec{0.4}, Vec{0.0}, 1.0);
  t.corrected = {x.corrected};
  t.symbols = {x.symbols};
  t.error_before = {{0.0}};
  t.error_after = {x.error};
  t.power = PowerAllocation::uniform(1, 1.0);
  t.noise = {0.0};
  t.aggregate = {1.0};
  const ErrorDecomposition d = trace_error_report(t);
  CHECK(d.xi[0] == doctest::Approx(-0.6));
  CHECK(d.xi[0] == doctest::Approx(d.error_memory_sum[0]));
  CHECK(d.misalignment[0] == 0.0);
  CHECK(d.max_abs_residual <= 1e-15);

  RoundTrace empty;
  CHECK_THROWS_AS(trace_error_report(empty), InvalidInput);
  RoundTrace partial = t;
  partial.noise.clear();
  CHECK_THROWS_AS(trace_error_report(partial), InvalidInput);
}

TEST_CASE("virtual iterate helper") {
  const Vec w{1.0, 2.0};
  const std::vector<Vec> e{{1.0, 0.0}, {3.0, 2.0}};
  const Vec v = virtual_iterate(w, e, 0.5);
  CHECK(v[0] == doctest::Approx(0.0));
  CHECK(v[1] == doctest::Approx(1.5));
  CHECK_THROWS_AS(virtual_iterate(w, std::vector<Vec>{}, 0.5), InvalidInput);
}

TEST_CASE("error memory bound dominates simulated loops") {
  RngStream rng(77, 0);
  for (int cfg = 0; cfg < 50; ++cfg) {
    testing::EfSimConfig c = testing::random_ef_config(rng, 500 + cfg);
    c.rounds = 300;
    c.replicas = 4;
    for (testing::Compressor comp :
         {testing::Compressor::kScaledSign, testing::Compressor::kTopK}) {
      c.compressor = comp;
      const testing::EfSimResult r = testing::simulate_error_feedback(c);
      const double bound = quantization_error_bound(c.eta, r.delta, r.G, c.beta);
      const double worst =
          *std::max_element(r.mean_error_sq.begin(), r.mean_error_sq.end());
      CHECK(worst <= bound);
    }
  }
}

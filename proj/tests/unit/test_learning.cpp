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
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "efobda/errors.hpp"
#include "efobda/learning.hpp"

using namespace efobda;

namespace {

// Central finite difference of the summed loss over a dataset.
Vec fd_gradient(const Loss& loss, const Vec& w, const Dataset& d, double h) {
  Vec g(w.size());
  Vec wp = w;
  for (std::size_t j = 0; j < w.size(); ++j) {
    wp[j] = w[j] + h;
    const double up = local_loss(loss, wp, d);
    wp[j] = w[j] - h;
    const double dn = local_loss(loss, wp, d);
    wp[j] = w[j];
    g[j] = (up - dn) / (2.0 * h);
  }
  return g;
}

double rel_err(const Vec& a, const Vec& b) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    den += b[i] * b[i];
  }
  return std::sqrt(num) / std::max(std::sqrt(den), 1e-12);
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("efobda_" + name)).string();
}

void write_bytes(const std::string& path, const std::vector<unsigned char>& b) {
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(b.data()),
            static_cast<std::streamsize>(b.size()));
}

}  // namespace

TEST_CASE("logistic gradient matches central differences") {
  RngStream rng(3, 0);
  const LogisticLoss loss(6, 0.01);
  const auto data = synth_dataset(rng, 1, 30, 6, 0.0);
  for (int p = 0; p < 20; ++p) {
    Vec w(6);
    for (double& x : w) x = rng.normal();
    CHECK(rel_err(full_gradient(loss, w, data[0]),
                  fd_gradient(loss, w, data[0], 1e-5)) < 1e-5);
  }
}

TEST_CASE("mlp gradient matches central differences") {
  RngStream rng(4, 0);
  const SoftplusMlpLoss loss(5, 4, 0.01);
  const auto data = synth_dataset(rng, 1, 20, 5, 0.0);
  for (int p = 0; p < 20; ++p) {
    Vec w = loss.initial_params(rng);
    for (double& x : w) x += 0.5 * rng.normal();
    CHECK(rel_err(full_gradient(loss, w, data[0]),
                  fd_gradient(loss, w, data[0], 1e-5)) < 1e-5);
  }
}

TEST_CASE("synth_dataset determinism and skew") {
  RngStream a(7, 0), b(7, 0);
  const auto d1 = synth_dataset(a, 2, 10, 4, 0.0);
  const auto d2 = synth_dataset(b, 2, 10, 4, 0.0);
  REQUIRE(d1.size() == 2);
  for (std::size_t k = 0; k < 2; ++k) {
    CHECK(d1[k].features == d2[k].features);
    CHECK(d1[k].labels == d2[k].labels);
    CHECK(d1[k].size() == 10);
    CHECK(d1[k].owner == k);
  }

  RngStream c(8, 0);
  const auto skewed = synth_dataset(c, 2, 50, 4, 1.0);
  for (std::size_t k = 0; k < 2; ++k) {
    for (int l : skewed[k].labels) CHECK(l == static_cast<int>(k % 2));
  }
}

TEST_CASE("iid partition label proportions stay within 3 sigma of one half") {
  const std::size_t D = 200;
  const double sigma = std::sqrt(0.25 / D);
  int outside = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    RngStream rng(seed, 0);
    const auto data = synth_dataset(rng, 3, D, 3, 0.0);
    for (const Dataset& d : data) {
      double ones = 0;
      for (int l : d.labels) ones += l;
      if (std::abs(ones / D - 0.5) > 3.0 * sigma) ++outside;
    }
  }
  // 300 partitions; a 3-sigma excursion has probability about 0.3%.
  CHECK(outside <= 4);
}

TEST_CASE("full batch local_gradient equals the full gradient") {
  RngStream rng(9, 0);
  const LogisticLoss loss(4, 0.0);
  const auto data = synth_dataset(rng, 1, 25, 4, 0.0);
  const Vec w{0.1, -0.2, 0.3, 0.0};
  RngStream batch(1, 1);
  CHECK(local_gradient(loss, w, data[0], 25, batch) ==
        full_gradient(loss, w, data[0]));
  CHECK_THROWS_AS(local_gradient(loss, w, data[0], 26, batch), InvalidInput);
  CHECK_THROWS_AS(local_gradient(loss, w, Dataset{0, 4, {}, {}}, 1, batch),
                  InvalidInput);
}

TEST_CASE("mini-batch gradient is unbiased") {
  RngStream rng(10, 0);
  const LogisticLoss loss(3, 0.01);
  const auto data = synth_dataset(rng, 1, 40, 3, 0.0);
  const Vec w{0.3, -0.1, 0.2};
  const Vec full = full_gradient(loss, w, data[0]);
  RngStream batch(2, 2);
  const int n = 10000;
  Vec mean(3, 0.0), sq(3, 0.0);
  for (int i = 0; i < n; ++i) {
    const Vec g = local_gradient(loss, w, data[0], 5, batch);
    for (std::size_t j = 0; j < 3; ++j) {
      mean[j] += g[j];
      sq[j] += g[j] * g[j];
    }
  }
  for (std::size_t j = 0; j < 3; ++j) {
    const double m = mean[j] / n;
    const double se = std::sqrt((sq[j] / n - m * m) / n);
    CHECK(std::abs(m - full[j]) <= 3.0 * se);
  }
}

TEST_CASE("gradient vanishes at the regularized optimum of a separable toy set") {
  Dataset d;
  d.feature_dim = 2;
  d.push_back(Vec{1.0, 0.5}, 1);
  d.push_back(Vec{2.0, 1.0}, 1);
  d.push_back(Vec{-1.0, -0.2}, 0);
  d.push_back(Vec{-1.5, -1.0}, 0);
  const LogisticLoss loss(2, 0.1);
  ModelState s{{0.0, 0.0}, 0};
  double prev = local_loss(loss, s.w, d);
  for (int t = 0; t < 5000; ++t) {
    s = global_update(s, full_gradient(loss, s.w, d), 0.5);
    const double cur = local_loss(loss, s.w, d);
    REQUIRE(cur <= prev + 1e-15);
    prev = cur;
  }
  CHECK(std::sqrt(norm_sq(full_gradient(loss, s.w, d))) < 1e-10);
  CHECK(accuracy(loss, s.w, d) == 1.0);
}

TEST_CASE("global_update contract") {
  const ModelState s{{1.0, 1.0}, 3};
  const ModelState a = global_update(s, Vec{1.0, -1.0}, 0.5);
  CHECK(a.w == Vec{0.5, 1.5});
  CHECK(a.round == 4);
  CHECK(global_update(s, Vec{0.0, 0.0}, 0.1).w == s.w);
  CHECK_THROWS_AS(global_update(s, Vec{1.0, 1.0}, 0.0), InvalidInput);

  // Averaged device gradients with no channel give the centralized step.
  RngStream rng(12, 0);
  const LogisticLoss loss(3, 0.0);
  const auto data = synth_dataset(rng, 3, 10, 3, 0.0);
  const Vec w{0.2, 0.1, -0.3};
  Vec avg(3, 0.0);
  for (const Dataset& d : data) {
    const Vec g = full_gradient(loss, w, d);
    for (std::size_t j = 0; j < 3; ++j) avg[j] += g[j] / 3.0;
  }
  const Vec gg = global_gradient(loss, w, data);
  for (std::size_t j = 0; j < 3; ++j) CHECK(gg[j] == doctest::Approx(avg[j]));
}

TEST_CASE("global_loss averaging") {
  RngStream rng(13, 0);
  const LogisticLoss loss(3, 0.0);
  const auto data = synth_dataset(rng, 1, 10, 3, 0.0);
  const Vec w{0.5, -0.5, 0.25};
  CHECK(global_loss(loss, w, data) == local_loss(loss, w, data[0]));
  const std::vector<Dataset> twice{data[0], data[0]};
  CHECK(global_loss(loss, w, twice) ==
        doctest::Approx(local_loss(loss, w, data[0])).epsilon(1e-15));
  CHECK_THROWS_AS(global_loss(loss, w, std::vector<Dataset>{}), InvalidInput);
}

TEST_CASE("global_loss decreases under small-step full-batch descent") {
  RngStream rng(14, 0);
  const LogisticLoss loss(5, 0.01);
  const auto data = synth_dataset(rng, 4, 30, 5, 0.5);
  const double L = estimate_smoothness(loss, data, Vec(5, 0.0));
  ModelState s{Vec(5, 0.0), 0};
  double prev = global_loss(loss, s.w, data);
  for (int t = 0; t < 200; ++t) {
    s = global_update(s, global_gradient(loss, s.w, data), 0.5 / L);
    const double cur = global_loss(loss, s.w, data);
    REQUIRE(cur <= prev);
    prev = cur;
  }
}

TEST_CASE("logistic smoothness estimate bounds the curvature") {
  RngStream rng(15, 0);
  const LogisticLoss loss(4, 0.05);
  const auto data = synth_dataset(rng, 2, 40, 4, 0.0);
  const double L = estimate_smoothness(loss, data, Vec(4, 0.0));
  CHECK(L > 0.05);
  // Gradient Lipschitz check on random pairs. Power iteration approaches the
  // top eigenvalue from below, hence the 1% slack.
  for (int i = 0; i < 50; ++i) {
    Vec a(4), b(4);
    for (double& x : a) x = rng.normal();
    for (double& x : b) x = rng.normal();
    const Vec ga = global_gradient(loss, a, data);
    const Vec gb = global_gradient(loss, b, data);
    double dg = 0.0, dw = 0.0;
    for (std::size_t j = 0; j < 4; ++j) {
      dg += (ga[j] - gb[j]) * (ga[j] - gb[j]);
      dw += (a[j] - b[j]) * (a[j] - b[j]);
    }
    CHECK(std::sqrt(dg) <= L * std::sqrt(dw) * 1.01);
  }
}

TEST_CASE("labels outside {0, 1} are rejected") {
  const LogisticLoss loss(1, 0.0);
  CHECK_THROWS_AS(loss.value(Vec{0.0}, Vec{1.0}, 2), InvalidInput);
}

// --- IDX --------------------------------------------------------------------

TEST_CASE("IDX round trip and header checks") {
  IdxTensor t{{2, 2, 3}, {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 255}};
  const auto bytes = encode_idx(t);
  CHECK(bytes[0] == 0);
  CHECK(bytes[1] == 0);
  CHECK(bytes[2] == 0x08);
  CHECK(bytes[3] == 0x03);
  const IdxTensor back = parse_idx(bytes);
  CHECK(back.dims == t.dims);
  CHECK(back.data == t.data);
}

TEST_CASE("IDX parse errors carry byte offsets") {
  IdxTensor t{{3}, {1, 2, 3}};
  const auto good = encode_idx(t);

  auto bad_magic = good;
  bad_magic[0] = 1;
  try {
    parse_idx(bad_magic);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.offset() == 0);
  }

  auto bad_type = good;
  bad_type[2] = 0x0D;
  try {
    parse_idx(bad_type);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.offset() == 2);
  }

  const std::vector<unsigned char> short_header{0, 0, 8};
  try {
    parse_idx(short_header);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.offset() == 3);
  }

  auto truncated = good;
  truncated.pop_back();
  try {
    parse_idx(truncated);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.offset() == truncated.size());
  }

  auto trailing = good;
  trailing.push_back(9);
  try {
    parse_idx(trailing);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.offset() == good.size());
  }

  // Dimension product far beyond the payload must not overflow.
  std::vector<unsigned char> huge{0, 0, 8, 2, 0xFF, 0xFF, 0xFF, 0xFF,
                                  0xFF, 0xFF, 0xFF, 0xFF};
  CHECK_THROWS_AS(parse_idx(huge), ParseError);
}

TEST_CASE("load_idx_subset selects, normalizes and counts") {
  // 6 images of 2x2 with labels 0,1,2,0,1,0.
  IdxTensor images{{6, 2, 2}, {}};
  for (int i = 0; i < 24; ++i) images.data.push_back(static_cast<unsigned char>(i * 10));
  const IdxTensor labels{{6}, {0, 1, 2, 0, 1, 0}};
  const std::string ip = temp_path("images.idx"), lp = temp_path("labels.idx");
  write_idx(ip, images);
  write_idx(lp, labels);

  const Dataset d = load_idx_subset(ip, lp, {0, 1}, 2);
  CHECK(d.size() == 4);
  CHECK(d.feature_dim == 4);
  CHECK(d.labels == std::vector<int>{0, 1, 0, 1});
  CHECK(d.row(1)[0] == doctest::Approx(40.0 / 255.0));
  for (double x : d.features) {
    CHECK(x >= 0.0);
    CHECK(x <= 1.0);
  }
  CHECK_THROWS_AS(load_idx_subset(ip, lp, {0, 1}, 3), InvalidInput);

  // Image file passed as labels.
  CHECK_THROWS_AS(load_idx_subset(ip, ip, {0, 1}, 1), ParseError);

  auto bytes = encode_idx(images);
  bytes[1] = 7;
  write_bytes(ip, bytes);
  CHECK_THROWS_AS(load_idx_subset(ip, lp, {0, 1}, 1), ParseError);
  std::remove(ip.c_str());
  std::remove(lp.c_str());
}

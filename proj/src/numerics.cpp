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

#include "efobda/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

#include "efobda/errors.hpp"

namespace efobda {
namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

RngStream::RngStream(std::uint64_t seed, std::uint64_t stream)
    : seed_(seed),
      stream_(stream),
      engine_(splitmix64(seed ^ splitmix64(stream + 0x632be59bd9b4e019ULL))) {}

double RngStream::uniform() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double RngStream::uniform_open() {
  return (static_cast<double>(engine_() >> 12) + 0.5) * 0x1.0p-52;
}

std::uint64_t RngStream::below(std::uint64_t n) {
  if (n == 0) throw InvalidInput("RngStream::below: n must be positive");
  // Rejection sampling on the largest multiple of n.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t x = engine_();
  while (x >= limit) x = engine_();
  return x % n;
}

double RngStream::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  const double u1 = uniform_open();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw InvalidInput("dot: dimension mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm_sq(std::span<const double> a) { return dot(a, a); }

double norm_l1(std::span<const double> a) {
  double s = 0.0;
  for (double x : a) s += std::abs(x);
  return s;
}

bool all_finite(std::span<const double> a) {
  return std::all_of(a.begin(), a.end(),
                     [](double x) { return std::isfinite(x); });
}

Vec sign_vec(std::span<const double> v) {
  Vec out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i])) {
      throw InvalidInput("sign_vec: non-finite entry at index " +
                         std::to_string(i));
    }
    out[i] = v[i] >= 0.0 ? 1.0 : -1.0;
  }
  return out;
}

Vec scaled_sign(std::span<const double> v) {
  Vec out = sign_vec(v);
  if (v.empty()) return out;
  const double scale = norm_l1(v) / static_cast<double>(v.size());
  // A zero vector has scale 0, which maps every +1 to 0 as required.
  for (double& x : out) x *= scale;
  return out;
}

double scaled_sign_delta(std::span<const double> a) {
  const double sq = norm_sq(a);
  if (!(sq > 0.0)) {
    throw InvalidInput("scaled_sign_delta: undefined for the zero vector");
  }
  const double l1 = norm_l1(a);
  return l1 * l1 / (static_cast<double>(a.size()) * sq);
}

Vec top_k(std::span<const double> v, std::size_t k) {
  if (k < 1 || k > v.size()) {
    throw InvalidInput("top_k: k must lie in [1, q]");
  }
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) {
                     return std::abs(v[a]) > std::abs(v[b]);
                   });
  Vec out(v.size(), 0.0);
  for (std::size_t j = 0; j < k; ++j) out[order[j]] = v[order[j]];
  return out;
}

double contraction_residual(std::span<const double> original,
                            std::span<const double> compressed) {
  if (original.size() != compressed.size()) {
    throw InvalidInput("contraction_residual: dimension mismatch");
  }
  const double denom = norm_sq(original);
  if (!(denom > 0.0)) {
    throw InvalidInput("contraction_residual: original vector is zero");
  }
  double num = 0.0;
  for (std::size_t i = 0; i < original.size(); ++i) {
    const double d = compressed[i] - original[i];
    num += d * d;
  }
  return num / denom;
}

}  // namespace efobda

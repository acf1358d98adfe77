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

#ifndef EFOBDA_NUMERICS_HPP_
#define EFOBDA_NUMERICS_HPP_

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace efobda {

// Dense real vector of model dimension q. Model, gradients, error memory and
// transmitted symbols all use this representation.
using Vec = std::vector<double>;

// Deterministic random stream keyed by (seed, stream id).
//
// The engine is mt19937_64, whose output sequence is fixed by the standard.
// Distribution sampling is implemented here rather than through <random>
// distributions, whose algorithms are implementation-defined, so a given
// (seed, id) yields the same draws on every conforming toolchain.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::uint64_t stream);

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream() const noexcept { return stream_; }

  std::uint64_t next_u64() { return engine_(); }
  // Uniform on [0, 1) with 53 random bits.
  double uniform();
  // Uniform on (0, 1).
  double uniform_open();
  // Uniform integer on [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n);
  // Standard normal via Box-Muller; the second variate of each pair is cached.
  double normal();

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// Named sources. Every random draw in an experiment comes from one of these
// so each source can be frozen independently of the others.
enum class StreamId : std::uint64_t {
  kData = 1,
  kChannel = 2,
  kNoise = 3,
  kBatch = 4,
  kTest = 5,
  kInit = 6,
};

// Device-specific sub-stream of a named source.
inline std::uint64_t substream(StreamId id, std::size_t index) {
  return (static_cast<std::uint64_t>(id) << 32) + index;
}

double dot(std::span<const double> a, std::span<const double> b);
double norm_sq(std::span<const double> a);
double norm_l1(std::span<const double> a);
bool all_finite(std::span<const double> a);

// Output entries are +1 for v[i] >= 0 and -1 otherwise. Throws InvalidInput on
// a non-finite entry.
Vec sign_vec(std::span<const double> v);

// (||v||_1 / q) * sign(v). A zero vector maps to the zero vector.
Vec scaled_sign(std::span<const double> v);

// ||a||_1^2 / (q ||a||^2), the contraction constant scaled_sign achieves on a.
// Throws InvalidInput for the zero vector, where it is undefined.
double scaled_sign_delta(std::span<const double> a);

// Keeps the k largest-magnitude entries. Ties in magnitude go to the lower
// index.
Vec top_k(std::span<const double> v, std::size_t k);

// ||compressed - original||^2 / ||original||^2.
double contraction_residual(std::span<const double> original,
                            std::span<const double> compressed);

}  // namespace efobda

#endif  // EFOBDA_NUMERICS_HPP_

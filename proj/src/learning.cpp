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

#include "efobda/learning.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "efobda/errors.hpp"

namespace efobda {
namespace {

double softplus(double z) {
  return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

void check_label(int label) {
  if (label != 0 && label != 1) {
    throw InvalidInput("binary losses expect labels in {0, 1}, got " +
                       std::to_string(label));
  }
}

}  // namespace

void Dataset::push_back(std::span<const double> x, int label) {
  if (feature_dim == 0 && labels.empty()) feature_dim = x.size();
  if (x.size() != feature_dim) {
    throw InvalidInput("Dataset::push_back: feature dimension mismatch");
  }
  features.insert(features.end(), x.begin(), x.end());
  labels.push_back(label);
}

// --- logistic regression ----------------------------------------------------

LogisticLoss::LogisticLoss(std::size_t feature_dim, double l2)
    : dim_(feature_dim), l2_(l2) {
  if (feature_dim == 0) throw InvalidInput("LogisticLoss: zero dimension");
  if (!(l2 >= 0.0)) throw InvalidInput("LogisticLoss: l2 must be >= 0");
}

double LogisticLoss::value(std::span<const double> w,
                           std::span<const double> x, int label) const {
  check_label(label);
  const double z = dot(w, x);
  return softplus(z) - label * z + 0.5 * l2_ * norm_sq(w);
}

void LogisticLoss::accumulate_gradient(std::span<const double> w,
                                       std::span<const double> x, int label,
                                       double scale,
                                       std::span<double> out) const {
  check_label(label);
  const double d = scale * (sigmoid(dot(w, x)) - label);
  for (std::size_t i = 0; i < dim_; ++i) out[i] += d * x[i] + scale * l2_ * w[i];
}

int LogisticLoss::predict(std::span<const double> w,
                          std::span<const double> x) const {
  return dot(w, x) >= 0.0 ? 1 : 0;
}

Vec LogisticLoss::initial_params(RngStream&) const { return Vec(dim_, 0.0); }

// --- softplus perceptron ----------------------------------------------------

SoftplusMlpLoss::SoftplusMlpLoss(std::size_t feature_dim, std::size_t hidden,
                                 double l2)
    : dim_(feature_dim), hidden_(hidden), l2_(l2) {
  if (feature_dim == 0 || hidden == 0) {
    throw InvalidInput("SoftplusMlpLoss: zero dimension");
  }
  if (!(l2 >= 0.0)) throw InvalidInput("SoftplusMlpLoss: l2 must be >= 0");
}

double SoftplusMlpLoss::logit(std::span<const double> w,
                              std::span<const double> x,
                              std::vector<double>* pre) const {
  const double* W = w.data();
  const double* b = W + hidden_ * dim_;
  const double* v = b + hidden_;
  double out = 0.0;
  for (std::size_t j = 0; j < hidden_; ++j) {
    const double a = dot({W + j * dim_, dim_}, x) + b[j];
    if (pre != nullptr) (*pre)[j] = a;
    out += v[j] * softplus(a);
  }
  return out;
}

double SoftplusMlpLoss::value(std::span<const double> w,
                              std::span<const double> x, int label) const {
  check_label(label);
  const double z = logit(w, x, nullptr);
  return softplus(z) - label * z + 0.5 * l2_ * norm_sq(w);
}

void SoftplusMlpLoss::accumulate_gradient(std::span<const double> w,
                                          std::span<const double> x,
                                          int label, double scale,
                                          std::span<double> out) const {
  check_label(label);
  std::vector<double> pre(hidden_);
  const double z = logit(w, x, &pre);
  const double d = scale * (sigmoid(z) - label);
  const double* v = w.data() + hidden_ * (dim_ + 1);
  double* gW = out.data();
  double* gb = gW + hidden_ * dim_;
  double* gv = gb + hidden_;
  for (std::size_t j = 0; j < hidden_; ++j) {
    gv[j] += d * softplus(pre[j]);
    const double dpre = d * v[j] * sigmoid(pre[j]);
    gb[j] += dpre;
    for (std::size_t i = 0; i < dim_; ++i) gW[j * dim_ + i] += dpre * x[i];
  }
  for (std::size_t i = 0; i < w.size(); ++i) out[i] += scale * l2_ * w[i];
}

int SoftplusMlpLoss::predict(std::span<const double> w,
                             std::span<const double> x) const {
  return logit(w, x, nullptr) >= 0.0 ? 1 : 0;
}

Vec SoftplusMlpLoss::initial_params(RngStream& rng) const {
  Vec w(param_dim(), 0.0);
  const double w_scale = 1.0 / std::sqrt(static_cast<double>(dim_));
  const double v_scale = 1.0 / std::sqrt(static_cast<double>(hidden_));
  for (std::size_t i = 0; i < hidden_ * dim_; ++i) w[i] = w_scale * rng.normal();
  for (std::size_t j = 0; j < hidden_; ++j) {
    w[hidden_ * (dim_ + 1) + j] = v_scale * rng.normal();
  }
  return w;
}

// --- synthetic data ---------------------------------------------------------

GaussianMixture::GaussianMixture(Vec mean, double noise_std)
    : mean_(std::move(mean)), noise_std_(noise_std) {
  if (mean_.empty()) throw InvalidInput("GaussianMixture: zero dimension");
  if (!(noise_std >= 0.0)) {
    throw InvalidInput("GaussianMixture: noise_std must be >= 0");
  }
}

GaussianMixture GaussianMixture::random(RngStream& rng, std::size_t dim,
                                        double separation, double noise_std) {
  if (dim == 0) throw InvalidInput("GaussianMixture: zero dimension");
  Vec mean(dim);
  double n2 = 0.0;
  while (!(n2 > 0.0)) {
    for (double& m : mean) m = rng.normal();
    n2 = norm_sq(mean);
  }
  const double scale = separation / std::sqrt(n2);
  for (double& m : mean) m *= scale;
  return GaussianMixture(std::move(mean), noise_std);
}

Dataset GaussianMixture::sample(RngStream& rng, std::size_t n, double p_label1,
                                std::size_t owner) const {
  Dataset out;
  out.owner = owner;
  out.feature_dim = dim();
  out.features.reserve(n * dim());
  out.labels.reserve(n);
  Vec x(dim());
  for (std::size_t s = 0; s < n; ++s) {
    const int label = rng.uniform() < p_label1 ? 1 : 0;
    const double sign = label == 1 ? 1.0 : -1.0;
    for (std::size_t i = 0; i < dim(); ++i) {
      x[i] = sign * mean_[i] + noise_std_ * rng.normal();
    }
    out.push_back(x, label);
  }
  return out;
}

std::vector<Dataset> GaussianMixture::partition(std::uint64_t seed,
                                                std::size_t K, std::size_t D,
                                                double skew) const {
  if (K == 0 || D == 0) throw InvalidInput("partition: K and D must be >= 1");
  if (!(skew >= 0.0 && skew <= 1.0)) {
    throw InvalidInput("partition: skew must lie in [0, 1]");
  }
  std::vector<Dataset> out;
  out.reserve(K);
  for (std::size_t k = 0; k < K; ++k) {
    RngStream rng(seed, substream(StreamId::kData, k));
    const double majority = (1.0 + skew) / 2.0;
    const double p1 = (k % 2 == 1) ? majority : 1.0 - majority;
    out.push_back(sample(rng, D, p1, k));
  }
  return out;
}

std::vector<Dataset> synth_dataset(RngStream& rng, std::size_t K,
                                   std::size_t D, std::size_t dim,
                                   double skew) {
  if (K == 0 || D == 0 || dim == 0) {
    throw InvalidInput("synth_dataset: K, D and dim must be >= 1");
  }
  const GaussianMixture mixture = GaussianMixture::random(rng, dim, 1.5);
  return mixture.partition(rng.next_u64(), K, D, skew);
}

// --- gradients and losses ---------------------------------------------------

Vec local_gradient(const Loss& loss, std::span<const double> w,
                   const Dataset& data, std::size_t batch_size,
                   RngStream& rng) {
  if (data.empty()) throw InvalidInput("local_gradient: empty dataset");
  if (batch_size == 0 || batch_size > data.size()) {
    throw InvalidInput("local_gradient: batch size must lie in [1, D]");
  }
  if (w.size() != loss.param_dim()) {
    throw InvalidInput("local_gradient: parameter dimension mismatch");
  }
  if (batch_size == data.size()) return full_gradient(loss, w, data);

  // Partial Fisher-Yates over the index set.
  std::vector<std::size_t> idx(data.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Vec g(w.size(), 0.0);
  const double scale = 1.0 / static_cast<double>(batch_size);
  for (std::size_t j = 0; j < batch_size; ++j) {
    const std::size_t pick = j + rng.below(idx.size() - j);
    std::swap(idx[j], idx[pick]);
    loss.accumulate_gradient(w, data.row(idx[j]), data.labels[idx[j]], scale,
                             g);
  }
  return g;
}

Vec full_gradient(const Loss& loss, std::span<const double> w,
                  const Dataset& data) {
  if (data.empty()) throw InvalidInput("full_gradient: empty dataset");
  Vec g(w.size(), 0.0);
  const double scale = 1.0 / static_cast<double>(data.size());
  for (std::size_t s = 0; s < data.size(); ++s) {
    loss.accumulate_gradient(w, data.row(s), data.labels[s], scale, g);
  }
  return g;
}

double local_loss(const Loss& loss, std::span<const double> w,
                  const Dataset& data) {
  if (data.empty()) throw InvalidInput("local_loss: empty dataset");
  double total = 0.0;
  for (std::size_t s = 0; s < data.size(); ++s) {
    total += loss.value(w, data.row(s), data.labels[s]);
  }
  return total / static_cast<double>(data.size());
}

double global_loss(const Loss& loss, std::span<const double> w,
                   std::span<const Dataset> datasets) {
  if (datasets.empty()) throw InvalidInput("global_loss: no datasets");
  double total = 0.0;
  for (const Dataset& d : datasets) total += local_loss(loss, w, d);
  return total / static_cast<double>(datasets.size());
}

Vec global_gradient(const Loss& loss, std::span<const double> w,
                    std::span<const Dataset> datasets) {
  if (datasets.empty()) throw InvalidInput("global_gradient: no datasets");
  Vec g(w.size(), 0.0);
  for (const Dataset& d : datasets) {
    const Vec gk = full_gradient(loss, w, d);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += gk[i];
  }
  for (double& x : g) x /= static_cast<double>(datasets.size());
  return g;
}

double accuracy(const Loss& loss, std::span<const double> w,
                const Dataset& data) {
  if (data.empty()) throw InvalidInput("accuracy: empty dataset");
  std::size_t hits = 0;
  for (std::size_t s = 0; s < data.size(); ++s) {
    if (loss.predict(w, data.row(s)) == data.labels[s]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

ModelState global_update(const ModelState& state,
                         std::span<const double> aggregate, double eta) {
  if (!(eta > 0.0)) throw InvalidInput("global_update: eta must be > 0");
  if (aggregate.size() != state.w.size()) {
    throw InvalidInput("global_update: dimension mismatch");
  }
  ModelState next{state.w, state.round + 1};
  for (std::size_t i = 0; i < next.w.size(); ++i) {
    next.w[i] -= eta * aggregate[i];
  }
  return next;
}

double estimate_smoothness(const Loss& loss, std::span<const Dataset> datasets,
                           std::span<const double> w) {
  if (datasets.empty()) throw InvalidInput("estimate_smoothness: no datasets");
  const std::size_t q = loss.param_dim();
  constexpr int kIterations = 200;

  if (const auto* logistic = dynamic_cast<const LogisticLoss*>(&loss)) {
    // Each device carries the same weight in F, so weight its rows by 1/(K D_k).
    Vec v(q, 1.0 / std::sqrt(static_cast<double>(q)));
    double eig = 0.0;
    for (int it = 0; it < kIterations; ++it) {
      Vec next(q, 0.0);
      for (const Dataset& d : datasets) {
        const double weight =
            1.0 / (static_cast<double>(datasets.size()) * d.size());
        for (std::size_t s = 0; s < d.size(); ++s) {
          const auto x = d.row(s);
          const double c = weight * dot(x, v);
          for (std::size_t i = 0; i < q; ++i) next[i] += c * x[i];
        }
      }
      eig = std::sqrt(norm_sq(next));
      if (!(eig > 0.0)) break;
      for (std::size_t i = 0; i < q; ++i) v[i] = next[i] / eig;
    }
    return eig / 4.0 + logistic->l2();
  }

  if (w.size() != q) throw InvalidInput("estimate_smoothness: bad w");
  constexpr double kStep = 1e-5;
  Vec v(q, 1.0 / std::sqrt(static_cast<double>(q)));
  double eig = 0.0;
  for (int it = 0; it < 50; ++it) {
    Vec wp(w.begin(), w.end());
    Vec wm(w.begin(), w.end());
    for (std::size_t i = 0; i < q; ++i) {
      wp[i] += kStep * v[i];
      wm[i] -= kStep * v[i];
    }
    const Vec gp = global_gradient(loss, wp, datasets);
    const Vec gm = global_gradient(loss, wm, datasets);
    Vec hv(q);
    for (std::size_t i = 0; i < q; ++i) hv[i] = (gp[i] - gm[i]) / (2 * kStep);
    eig = std::sqrt(norm_sq(hv));
    if (!(eig > 0.0)) break;
    for (std::size_t i = 0; i < q; ++i) v[i] = hv[i] / eig;
  }
  return eig;
}

}  // namespace efobda

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

#ifndef EFOBDA_LEARNING_HPP_
#define EFOBDA_LEARNING_HPP_

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "efobda/numerics.hpp"

namespace efobda {

// Samples held by one device, stored as a row-major feature matrix.
struct Dataset {
  std::size_t owner = 0;
  std::size_t feature_dim = 0;
  std::vector<double> features;
  std::vector<int> labels;

  std::size_t size() const noexcept { return labels.size(); }
  bool empty() const noexcept { return labels.empty(); }
  std::span<const double> row(std::size_t i) const {
    return {features.data() + i * feature_dim, feature_dim};
  }
  void push_back(std::span<const double> x, int label);
};

struct ModelState {
  Vec w;
  std::size_t round = 0;
};

// Per-sample loss f(w, s, l) with an analytic gradient. Values and gradients
// include the l2 penalty, so F_k is the plain sample mean.
class Loss {
 public:
  virtual ~Loss() = default;

  virtual std::string name() const = 0;
  virtual std::size_t feature_dim() const = 0;
  // Model dimension q.
  virtual std::size_t param_dim() const = 0;
  virtual double value(std::span<const double> w, std::span<const double> x,
                       int label) const = 0;
  // out += scale * grad f(w, x, label).
  virtual void accumulate_gradient(std::span<const double> w,
                                   std::span<const double> x, int label,
                                   double scale,
                                   std::span<double> out) const = 0;
  virtual int predict(std::span<const double> w,
                      std::span<const double> x) const = 0;
  virtual Vec initial_params(RngStream& rng) const = 0;
};

// Binary logistic regression on labels {0, 1} with penalty (l2/2)||w||^2.
class LogisticLoss final : public Loss {
 public:
  LogisticLoss(std::size_t feature_dim, double l2);

  std::string name() const override { return "logistic"; }
  std::size_t feature_dim() const override { return dim_; }
  std::size_t param_dim() const override { return dim_; }
  double value(std::span<const double> w, std::span<const double> x,
               int label) const override;
  void accumulate_gradient(std::span<const double> w,
                           std::span<const double> x, int label, double scale,
                           std::span<double> out) const override;
  int predict(std::span<const double> w,
              std::span<const double> x) const override;
  Vec initial_params(RngStream& rng) const override;

  double l2() const noexcept { return l2_; }

 private:
  std::size_t dim_;
  double l2_;
};

// One hidden layer of softplus units feeding a logistic output:
//   logit = v . softplus(W s + b).
// Parameters are packed as [W (hidden x dim, row-major), b (hidden), v].
class SoftplusMlpLoss final : public Loss {
 public:
  SoftplusMlpLoss(std::size_t feature_dim, std::size_t hidden, double l2);

  std::string name() const override { return "mlp"; }
  std::size_t feature_dim() const override { return dim_; }
  std::size_t param_dim() const override { return hidden_ * (dim_ + 2); }
  double value(std::span<const double> w, std::span<const double> x,
               int label) const override;
  void accumulate_gradient(std::span<const double> w,
                           std::span<const double> x, int label, double scale,
                           std::span<double> out) const override;
  int predict(std::span<const double> w,
              std::span<const double> x) const override;
  Vec initial_params(RngStream& rng) const override;

 private:
  double logit(std::span<const double> w, std::span<const double> x,
               std::vector<double>* pre) const;

  std::size_t dim_;
  std::size_t hidden_;
  double l2_;
};

// Two-class Gaussian mixture: class 1 centred at +mean, class 0 at -mean,
// isotropic noise of standard deviation `noise_std`.
class GaussianMixture {
 public:
  GaussianMixture(Vec mean, double noise_std);

  // Mean direction drawn uniformly on the sphere, scaled to `separation`.
  static GaussianMixture random(RngStream& rng, std::size_t dim,
                                double separation, double noise_std = 1.0);

  std::size_t dim() const noexcept { return mean_.size(); }
  const Vec& mean() const noexcept { return mean_; }

  // n samples with P(label = 1) = p_label1.
  Dataset sample(RngStream& rng, std::size_t n, double p_label1,
                 std::size_t owner = 0) const;
  // K devices of D samples each. With skew s, device k's label distribution
  // puts probability (1 + s)/2 on label (k mod 2). Device k draws from its
  // own sub-stream of `seed`, so the first K datasets do not depend on the
  // total device count.
  std::vector<Dataset> partition(std::uint64_t seed, std::size_t K,
                                 std::size_t D, double skew) const;

 private:
  Vec mean_;
  double noise_std_;
};

// K datasets of D samples from a freshly drawn mixture (separation 1.5).
// skew = 0 gives i.i.d. partitions, skew = 1 single-class devices.
std::vector<Dataset> synth_dataset(RngStream& rng, std::size_t K,
                                   std::size_t D, std::size_t dim,
                                   double skew);

// (1/n_b) * sum of per-sample gradients over a mini-batch drawn uniformly
// without replacement. n_b == D uses every sample in order and consumes no
// randomness.
Vec local_gradient(const Loss& loss, std::span<const double> w,
                   const Dataset& data, std::size_t batch_size,
                   RngStream& rng);

// Gradient of F_k, the mean loss over the full dataset.
Vec full_gradient(const Loss& loss, std::span<const double> w,
                  const Dataset& data);

double local_loss(const Loss& loss, std::span<const double> w,
                  const Dataset& data);

// (1/K) sum_k F_k(w).
double global_loss(const Loss& loss, std::span<const double> w,
                   std::span<const Dataset> datasets);

Vec global_gradient(const Loss& loss, std::span<const double> w,
                    std::span<const Dataset> datasets);

double accuracy(const Loss& loss, std::span<const double> w,
                const Dataset& data);

// w <- w - eta * aggregate, round <- round + 1.
ModelState global_update(const ModelState& state,
                         std::span<const double> aggregate, double eta);

// Upper estimate of the gradient Lipschitz constant of the global loss.
// Logistic: lambda_max(X^T X / n) / 4 + l2 by power iteration over the pooled
// data. Other losses: power iteration on finite-difference Hessian-vector
// products at `w`, which is a local estimate only.
double estimate_smoothness(const Loss& loss, std::span<const Dataset> datasets,
                           std::span<const double> w);

// Samples of the requested classes read from an IDX image/label file pair.
// Features are flattened and divided by 255; labels become the position of
// the class in `classes`. The first `per_class` samples of each class are
// kept, in file order.
Dataset load_idx_subset(const std::string& images_path,
                        const std::string& labels_path,
                        const std::vector<int>& classes,
                        std::size_t per_class);

struct IdxTensor {
  std::vector<std::size_t> dims;
  std::vector<unsigned char> data;
};

// Unsigned-byte IDX tensors only (type code 0x08).
IdxTensor parse_idx(std::span<const unsigned char> bytes);
IdxTensor read_idx(const std::string& path);
std::vector<unsigned char> encode_idx(const IdxTensor& tensor);
void write_idx(const std::string& path, const IdxTensor& tensor);

}  // namespace efobda

#endif  // EFOBDA_LEARNING_HPP_

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

#ifndef EFOBDA_EXPERIMENT_HPP_
#define EFOBDA_EXPERIMENT_HPP_

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "efobda/channel.hpp"
#include "efobda/schemes.hpp"

namespace efobda {

struct DatasetSpec {
  // "synthetic" (two-component Gaussian mixture) or "idx".
  std::string kind = "synthetic";
  std::size_t samples_per_device = 200;
  std::size_t test_samples = 2000;
  double separation = 1.5;
  double noise_std = 1.0;
  // Label skew across devices, 0 = iid, 1 = each device holds one label.
  double skew = 0.0;
  // idx only. Two classes mapped to labels 0 and 1.
  std::string images;
  std::string labels;
  std::string test_images;
  std::string test_labels;
  std::vector<int> classes{0, 1};
};

struct ModelSpec {
  // "logistic" or "mlp".
  std::string kind = "logistic";
  std::size_t hidden = 8;
  double l2 = 1e-3;
};

struct SeedSpec {
  std::uint64_t data = 1;
  std::uint64_t channel = 2;
  std::uint64_t noise = 3;
  std::uint64_t batch = 4;
};

struct ExperimentConfig {
  std::string name = "run";
  Scheme scheme = Scheme::kEfobda;
  ChannelMode channel = ChannelMode::kRayleighFlat;
  std::size_t K = 10;
  // Feature dimension of the data. Equals the model dimension for logistic
  // regression; the MLP has hidden * (q + 2) parameters.
  std::size_t q = 50;
  std::size_t T = 200;
  double eta = 0.2;
  double beta = 0.8;
  double snr_db = 10.0;
  // Defaults: M = model dimension, P0 = M.
  double P0 = 0.0;
  double M = 0.0;
  PowerPolicy power_policy = PowerPolicy::kSchemeDefault;
  double truncation_threshold = 0.2;
  double rho = 0.1;
  // Fixed ||sigma_1||^2 for the optimized policy; 0 estimates it online from
  // the previous round's symbols.
  double sigma1_sq = 0.0;
  std::size_t batch_size = 16;
  bool sign_decoder = false;
  bool noise_real_part = false;
  DatasetSpec dataset;
  ModelSpec model;
  SeedSpec seeds;
  // Directory for <name>.csv and <name>.json.
  std::string output = "out";
  bool record_wall_time = false;
  bool bounds = true;

  std::size_t model_dim() const;
  // Throws ConfigError naming the offending key.
  void validate() const;
};

// Parses a JSON config. Missing keys take the defaults above; unknown keys and
// out-of-range values raise ConfigError.
ExperimentConfig parse_config_text(const std::string& text);
ExperimentConfig parse_config(const std::string& path);
std::string config_to_json(const ExperimentConfig& config);

// Named run sets. `seed` offsets every seed so repeated seeds give
// independent replicas with common random numbers across the runs of a set.
std::vector<std::string> preset_names();
std::vector<ExperimentConfig> preset(const std::string& name,
                                     std::uint64_t seed = 1);

struct MetricsRow {
  std::size_t round = 0;
  double train_loss = 0.0;
  double test_accuracy = 0.0;
  double grad_norm_sq = 0.0;
  double phi = 0.0;
  double misalignment_mse = 0.0;
  bool power_ok = true;
  double wall_ms = 0.0;
};

inline constexpr const char* kMetricsVersion = "efobda-metrics v1";
std::vector<std::string> metric_columns();

struct RunOutput {
  ExperimentConfig config;
  std::vector<MetricsRow> rows;
  double initial_loss = 0.0;
  double initial_accuracy = 0.0;
  // JSON text of the summary.
  std::string summary;
  std::string csv_path;
  std::string json_path;
  bool power_ok_all_rounds = true;
};

// Called with the full trace of every round.
using RoundObserver = std::function<void(const RoundTrace&)>;

// Runs T rounds in memory. Failures inside a round are rethrown with the same
// category and the round index prefixed.
RunOutput simulate(const ExperimentConfig& config,
                   const RoundObserver& observer = {});

std::string format_metrics_csv(const std::vector<MetricsRow>& rows);
std::vector<MetricsRow> parse_metrics_csv(const std::string& text);

// simulate() and write <output>/<name>.csv and .json.
RunOutput run_experiment(const ExperimentConfig& config);

// Runs independent configs on up to `threads` workers. Results keep the
// input order.
std::vector<RunOutput> run_sweep(const std::vector<ExperimentConfig>& configs,
                                 std::size_t threads, bool write_files = true);

enum class CompareMode { kFinal, kAuc };
CompareMode parse_compare_mode(const std::string& text);

struct RankedRun {
  std::string file;
  double value = 0.0;
  // 1-based; tied runs share a rank.
  std::size_t rank = 0;
};

struct CompareReport {
  std::string metric;
  CompareMode mode = CompareMode::kFinal;
  bool higher_is_better = false;
  std::vector<RankedRun> ranking;
  bool has_ties = false;
  std::string to_text() const;
};

// Trapezoid area of a metric over rounds.
double metric_auc(const std::vector<MetricsRow>& rows,
                  const std::string& metric);
double metric_value(const MetricsRow& row, const std::string& metric);

CompareReport compare_runs(const std::vector<std::string>& files,
                           const std::string& metric, CompareMode mode);

}  // namespace efobda

#endif  // EFOBDA_EXPERIMENT_HPP_

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

// efobda: run experiments, solve single power-control instances, evaluate
// convergence bounds and rank metrics files.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "efobda/bounds.hpp"
#include "efobda/errors.hpp"
#include "efobda/experiment.hpp"
#include "efobda/power_control.hpp"

namespace {

using namespace efobda;

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Flags that override fields of a loaded config or preset.
struct Overrides {
  std::optional<std::string> scheme, channel, power_policy, output, name;
  std::optional<std::size_t> K, q, T, batch_size;
  std::optional<double> eta, beta, snr_db, P0, M, rho, threshold, skew;
  std::optional<std::uint64_t> seed_data, seed_channel, seed_noise,
      seed_batch;
  bool wall_time = false;

  void apply(ExperimentConfig& c) const {
    if (name) c.name = *name;
    if (scheme) c.scheme = parse_scheme(*scheme);
    if (channel) c.channel = parse_channel_mode(*channel);
    if (power_policy) c.power_policy = parse_power_policy(*power_policy);
    if (output) c.output = *output;
    if (K) c.K = *K;
    if (q) c.q = *q;
    if (T) c.T = *T;
    if (batch_size) c.batch_size = *batch_size;
    if (eta) c.eta = *eta;
    if (beta) c.beta = *beta;
    if (snr_db) c.snr_db = *snr_db;
    if (P0) c.P0 = *P0;
    if (M) c.M = *M;
    if (rho) c.rho = *rho;
    if (threshold) c.truncation_threshold = *threshold;
    if (skew) c.dataset.skew = *skew;
    if (seed_data) c.seeds.data = *seed_data;
    if (seed_channel) c.seeds.channel = *seed_channel;
    if (seed_noise) c.seeds.noise = *seed_noise;
    if (seed_batch) c.seeds.batch = *seed_batch;
    if (wall_time) c.record_wall_time = true;
  }
};

void add_overrides(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--name", o.name, "Run name (output file stem)");
  cmd->add_option("--scheme", o.scheme, "efobda|obda|obda-opc|baa|baa-opc");
  cmd->add_option("--channel", o.channel,
                  "awgn|rayleigh-flat|rayleigh-subchannel");
  cmd->add_option("--power-policy", o.power_policy,
                  "default|opc|truncated-inversion|channel-inversion|unit");
  cmd->add_option("--output", o.output, "Output directory");
  cmd->add_option("--K", o.K, "Number of devices");
  cmd->add_option("--q", o.q, "Feature dimension");
  cmd->add_option("--T", o.T, "Rounds");
  cmd->add_option("--batch-size", o.batch_size, "Mini-batch size");
  cmd->add_option("--eta", o.eta, "Learning rate");
  cmd->add_option("--beta", o.beta, "Error feedback strength");
  cmd->add_option("--snr-db", o.snr_db, "Receive SNR in dB");
  cmd->add_option("--P0", o.P0, "Total power budget");
  cmd->add_option("--M", o.M, "Number of sub-channels");
  cmd->add_option("--rho", o.rho, "Young's inequality constant");
  cmd->add_option("--truncation-threshold", o.threshold,
                  "Gain threshold of truncated inversion (on h^2)");
  cmd->add_option("--skew", o.skew, "Label skew across devices");
  cmd->add_option("--seed-data", o.seed_data);
  cmd->add_option("--seed-channel", o.seed_channel);
  cmd->add_option("--seed-noise", o.seed_noise);
  cmd->add_option("--seed-batch", o.seed_batch);
  cmd->add_flag("--wall-time", o.wall_time, "Record per-round wall time");
}

int exit_code(const Error& e) { return static_cast<int>(e.category()); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Error-feedback one-bit over-the-air aggregation toolkit"};
  app.require_subcommand(1);

  // run
  CLI::App* run = app.add_subcommand("run", "Run an experiment or preset");
  std::string config_path, preset_name;
  std::uint64_t preset_seed = 1;
  std::size_t threads = std::max(1u, std::thread::hardware_concurrency());
  bool print_config = false;
  Overrides overrides;
  run->add_option("--config", config_path, "JSON config file");
  run->add_option("--preset", preset_name, "Named preset")
      ->check(CLI::IsMember(preset_names()));
  run->add_option("--seed", preset_seed, "Preset replica seed");
  run->add_option("--threads", threads, "Concurrent runs in a sweep");
  run->add_flag("--print-config", print_config,
                "Print the resolved config(s) instead of running");
  add_overrides(run, overrides);

  // solve-power
  CLI::App* solve = app.add_subcommand(
      "solve-power", "Solve one per-round power-control instance");
  std::string instance_path, export_path;
  std::vector<double> gains;
  PowerInstance inst;
  bool numeric = false;
  solve->add_option("--instance", instance_path, "Instance JSON file");
  solve->add_option("--gains", gains, "Channel gains")->delimiter(',');
  solve->add_option("--rho", inst.params.rho);
  solve->add_option("--eta", inst.params.eta);
  solve->add_option("--L", inst.params.L);
  solve->add_option("--q", inst.params.q);
  solve->add_option("--T", inst.params.T);
  solve->add_option("--sigma1-sq", inst.params.sigma1_sq);
  solve->add_option("--P0", inst.P0);
  solve->add_option("--M", inst.M);
  solve->add_flag("--numeric", numeric, "Use the projected-gradient oracle");
  solve->add_option("--export-instance", export_path,
                    "Write the instance as JSON");

  // bounds
  CLI::App* bnd = app.add_subcommand("bounds", "Evaluate a convergence bound");
  std::string variant = "theorem1";
  HyperParams hp;
  bool beta_range = false;
  std::string range_kind = "fading";
  bnd->add_option("--variant", variant,
                  "theorem1|proposition1|corollary1|corollary1-decayed|"
                  "corollary2");
  bnd->add_option("--eta", hp.eta);
  bnd->add_option("--beta", hp.beta);
  bnd->add_option("--delta", hp.delta);
  bnd->add_option("--rho", hp.rho);
  bnd->add_option("--L", hp.L);
  bnd->add_option("--G", hp.G);
  bnd->add_option("--sigma-sq", hp.sigma_sq);
  bnd->add_option("--sigma1-sq", hp.sigma1_sq);
  bnd->add_option("--sigma-z-sq", hp.sigma_z_sq);
  bnd->add_option("--K", hp.K);
  bnd->add_option("--q", hp.q);
  bnd->add_option("--T", hp.T);
  bnd->add_option("--F0-minus-Fstar", hp.F0_minus_Fstar);
  bnd->add_flag("--beta-range", beta_range,
                "Print the admissible beta interval instead");
  bnd->add_option("--kind", range_kind, "fading|awgn (with --beta-range)");

  // compare
  CLI::App* cmp = app.add_subcommand("compare", "Rank metrics files");
  std::vector<std::string> files;
  std::string metric = "train_loss", mode = "final";
  cmp->add_option("files", files, "Metrics CSV files")->required();
  cmp->add_option("--metric", metric);
  cmp->add_option("--mode", mode, "final|auc");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(ErrorCategory::kConfig);
  }

  try {
    if (*run) {
      std::vector<ExperimentConfig> configs;
      if (!config_path.empty() && !preset_name.empty()) {
        throw ConfigError("preset", "give either --config or --preset");
      }
      if (!preset_name.empty()) {
        configs = preset(preset_name, preset_seed);
      } else if (!config_path.empty()) {
        configs.push_back(parse_config(config_path));
      } else {
        configs.emplace_back();
      }
      for (ExperimentConfig& c : configs) {
        overrides.apply(c);
        c.validate();
      }
      if (print_config) {
        for (const ExperimentConfig& c : configs) std::cout << config_to_json(c);
        return 0;
      }
      const std::vector<RunOutput> outs = run_sweep(configs, threads);
      for (const RunOutput& o : outs) {
        const MetricsRow& last = o.rows.back();
        std::printf("%s\tloss %.6g\tacc %.4f\t%s\n", o.config.name.c_str(),
                    last.train_loss, last.test_accuracy, o.csv_path.c_str());
      }
      return 0;
    }
    if (*solve) {
      if (!instance_path.empty()) {
        inst = import_instance(slurp(instance_path));
      } else {
        if (gains.empty()) throw InvalidInput("solve-power: give --gains or --instance");
        inst.h = gains;
        inst.params.K = gains.size();
      }
      if (!export_path.empty()) {
        std::ofstream out(export_path, std::ios::binary);
        out << export_instance(inst);
      }
      const PowerAllocation a =
          numeric ? solve_round_numeric(inst.h, inst.params, inst.P0, inst.M)
                  : solve_round_closed_form(inst.h, inst.params, inst.P0,
                                            inst.M);
      std::cout << export_allocation(a);
      const KktReport k = kkt_check(a, inst.h, inst.params, inst.P0, inst.M,
                                    1e-8);
      std::cerr << "phi " << phi_round(a.p, inst.h, inst.params) << "\n"
                << k.summary() << "\n";
      return 0;
    }
    if (*bnd) {
      if (beta_range) {
        ChannelKind kind;
        if (range_kind == "fading") {
          kind = ChannelKind::kFading;
        } else if (range_kind == "awgn") {
          kind = ChannelKind::kAwgn;
        } else {
          throw InvalidInput("--kind must be fading or awgn");
        }
        const BetaRange r =
            beta_admissible_range(kind, hp.eta, hp.G, hp.rho, hp.q);
        std::printf("beta_range kind=%s lower=%.17g upper=%.17g empty=%d%s%s\n",
                    range_kind.c_str(), r.lower, r.upper, r.empty ? 1 : 0,
                    r.note.empty() ? "" : " note=", r.note.c_str());
        return 0;
      }
      const BoundValue v = convergence_bound(parse_bound_variant(variant), hp);
      std::printf("bound variant=%s T=%zu value=%.17g B=%.17g C=%.17g "
                  "D=%.17g A=%.17g descent=%d\n",
                  to_string(v.variant).c_str(), hp.T, v.value, v.B, v.C, v.D,
                  v.A, v.descent_condition ? 1 : 0);
      for (const std::string& w : v.warnings) {
        std::fprintf(stderr, "warning: %s\n", w.c_str());
      }
      return 0;
    }
    if (*cmp) {
      std::cout << compare_runs(files, metric, parse_compare_mode(mode))
                       .to_text();
      return 0;
    }
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_code(e);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}

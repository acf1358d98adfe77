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

#include "efobda/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <memory>
#include <set>
#include <sstream>
#include <thread>

#include "efobda/bounds.hpp"
#include "efobda/errors.hpp"
#include "json.hpp"

namespace efobda {
namespace {

using json = nlohmann::ordered_json;

// --- config parsing ----------------------------------------------------------

// Reads keys of one JSON object and remembers which were consumed so the rest
// can be rejected as unknown.
class ObjectReader {
 public:
  ObjectReader(const json& obj, std::string prefix)
      : obj_(obj), prefix_(std::move(prefix)) {
    if (!obj_.is_object()) {
      throw ConfigError(prefix_.empty() ? "<root>" : prefix_.substr(0, prefix_.size() - 1),
                        "must be a JSON object");
    }
  }

  std::string key(const std::string& k) const { return prefix_ + k; }

  const json* find(const std::string& k) {
    seen_.insert(k);
    auto it = obj_.find(k);
    return it == obj_.end() ? nullptr : &*it;
  }

  void number(const std::string& k, double& out) {
    if (const json* v = find(k)) {
      if (!v->is_number()) throw ConfigError(key(k), "must be a number");
      out = v->get<double>();
      if (!std::isfinite(out)) throw ConfigError(key(k), "must be finite");
    }
  }

  void count(const std::string& k, std::size_t& out) {
    if (const json* v = find(k)) {
      if (!v->is_number_integer() || v->get<long long>() < 0) {
        throw ConfigError(key(k), "must be a non-negative integer");
      }
      out = v->get<std::size_t>();
    }
  }

  void seed(const std::string& k, std::uint64_t& out) {
    if (const json* v = find(k)) {
      if (!v->is_number_unsigned() &&
          !(v->is_number_integer() && v->get<long long>() >= 0)) {
        throw ConfigError(key(k), "must be a non-negative integer");
      }
      out = v->get<std::uint64_t>();
    }
  }

  void flag(const std::string& k, bool& out) {
    if (const json* v = find(k)) {
      if (!v->is_boolean()) throw ConfigError(key(k), "must be true or false");
      out = v->get<bool>();
    }
  }

  bool text(const std::string& k, std::string& out) {
    if (const json* v = find(k)) {
      if (!v->is_string()) throw ConfigError(key(k), "must be a string");
      out = v->get<std::string>();
      return true;
    }
    return false;
  }

  void finish() const {
    for (auto it = obj_.begin(); it != obj_.end(); ++it) {
      if (seen_.count(it.key()) == 0) {
        throw ConfigError(key(it.key()), "unknown key");
      }
    }
  }

 private:
  const json& obj_;
  std::string prefix_;
  std::set<std::string> seen_;
};

template <typename F>
auto convert(const std::string& key, const std::string& value, F parse) {
  try {
    return parse(value);
  } catch (const Error& e) {
    throw ConfigError(key, e.what());
  }
}

double resolved_M(const ExperimentConfig& c) {
  return c.M > 0.0 ? c.M : static_cast<double>(c.model_dim());
}

double resolved_P0(const ExperimentConfig& c) {
  return c.P0 > 0.0 ? c.P0 : resolved_M(c);
}

json config_json(const ExperimentConfig& c) {
  json j;
  j["name"] = c.name;
  j["scheme"] = to_string(c.scheme);
  j["channel"] = to_string(c.channel);
  j["K"] = c.K;
  j["q"] = c.q;
  j["T"] = c.T;
  j["eta"] = c.eta;
  j["beta"] = c.beta;
  j["snr_db"] = c.snr_db;
  j["P0"] = resolved_P0(c);
  j["M"] = resolved_M(c);
  j["power_policy"] = to_string(c.power_policy);
  j["truncation_threshold"] = c.truncation_threshold;
  j["rho"] = c.rho;
  j["sigma1_sq"] = c.sigma1_sq;
  j["batch_size"] = c.batch_size;
  j["sign_decoder"] = c.sign_decoder;
  j["noise_real_part"] = c.noise_real_part;
  json d;
  d["kind"] = c.dataset.kind;
  d["samples_per_device"] = c.dataset.samples_per_device;
  d["test_samples"] = c.dataset.test_samples;
  d["separation"] = c.dataset.separation;
  d["noise_std"] = c.dataset.noise_std;
  d["skew"] = c.dataset.skew;
  if (c.dataset.kind == "idx") {
    d["images"] = c.dataset.images;
    d["labels"] = c.dataset.labels;
    d["test_images"] = c.dataset.test_images;
    d["test_labels"] = c.dataset.test_labels;
    d["classes"] = c.dataset.classes;
  }
  j["dataset"] = d;
  j["model"] = {{"kind", c.model.kind},
                {"hidden", c.model.hidden},
                {"l2", c.model.l2}};
  j["seeds"] = {{"data", c.seeds.data},
                {"channel", c.seeds.channel},
                {"noise", c.seeds.noise},
                {"batch", c.seeds.batch}};
  j["output"] = c.output;
  j["record_wall_time"] = c.record_wall_time;
  j["bounds"] = c.bounds;
  return j;
}

// --- formatting ---------------------------------------------------------------

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InvalidInput("cannot open '" + path + "' for writing");
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw InvalidInput("failed writing '" + path + "'");
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

[[noreturn]] void rethrow_with_round(const Error& e, std::size_t round) {
  const std::string msg = "round " + std::to_string(round) + ": " + e.what();
  switch (e.category()) {
    case ErrorCategory::kInvalidInput:
      throw InvalidInput(msg);
    case ErrorCategory::kParse:
      throw ParseError(msg, static_cast<const ParseError&>(e).offset());
    case ErrorCategory::kDomain:
      throw DomainError(msg);
    case ErrorCategory::kSolver:
      throw SolverFailure(msg);
    case ErrorCategory::kConfig:
      throw ConfigError(static_cast<const ConfigError&>(e).key(), msg);
  }
  throw Error(e.category(), msg);
}

// --- data ----------------------------------------------------------------------

std::unique_ptr<Loss> make_loss(const ExperimentConfig& c) {
  if (c.model.kind == "logistic") {
    return std::make_unique<LogisticLoss>(c.q, c.model.l2);
  }
  return std::make_unique<SoftplusMlpLoss>(c.q, c.model.hidden, c.model.l2);
}

// Splits labelled pools across devices with the same skew rule the synthetic
// partition uses.
std::vector<Dataset> split_pools(const Dataset& all, std::size_t K,
                                 std::size_t D, double skew, RngStream& rng) {
  std::vector<std::vector<std::size_t>> pools(2);
  for (std::size_t i = 0; i < all.size(); ++i) {
    pools[static_cast<std::size_t>(all.labels[i] == 1)].push_back(i);
  }
  for (auto& pool : pools) {
    for (std::size_t i = pool.size(); i > 1; --i) {
      std::swap(pool[i - 1], pool[rng.below(i)]);
    }
  }
  std::vector<Dataset> out(K);
  const double majority = (1.0 + skew) / 2.0;
  for (std::size_t k = 0; k < K; ++k) {
    out[k].owner = k;
    out[k].feature_dim = all.feature_dim;
    for (std::size_t n = 0; n < D; ++n) {
      const bool pick_major = rng.uniform() < majority;
      const std::size_t label = (k % 2 == 1) == pick_major ? 1 : 0;
      if (pools[label].empty()) {
        throw ConfigError("dataset.samples_per_device",
                          "idx file holds too few samples of label " +
                              std::to_string(label));
      }
      const std::size_t idx = pools[label].back();
      pools[label].pop_back();
      out[k].push_back(all.row(idx), all.labels[idx]);
    }
  }
  return out;
}

struct DataBundle {
  std::vector<Dataset> train;
  Dataset test;
};

DataBundle make_data(const ExperimentConfig& c) {
  DataBundle out;
  const DatasetSpec& ds = c.dataset;
  if (ds.kind == "synthetic") {
    RngStream mean_rng(c.seeds.data, 0);
    const GaussianMixture mixture = GaussianMixture::random(
        mean_rng, c.q, ds.separation, ds.noise_std);
    out.train = mixture.partition(c.seeds.data, c.K, ds.samples_per_device,
                                  ds.skew);
    RngStream test_rng(c.seeds.data, substream(StreamId::kTest, 0));
    out.test = mixture.sample(test_rng, ds.test_samples, 0.5);
    return out;
  }
  const std::size_t need = c.K * ds.samples_per_device;
  const Dataset all =
      load_idx_subset(ds.images, ds.labels, ds.classes, need);
  if (all.feature_dim != c.q) {
    throw ConfigError("q", "must equal the idx image size " +
                               std::to_string(all.feature_dim));
  }
  RngStream split_rng(c.seeds.data, substream(StreamId::kData, 0));
  out.train = split_pools(all, c.K, ds.samples_per_device, ds.skew, split_rng);
  const std::size_t per_class = (ds.test_samples + 1) / 2;
  out.test = load_idx_subset(ds.test_images.empty() ? ds.images : ds.test_images,
                             ds.test_labels.empty() ? ds.labels : ds.test_labels,
                             ds.classes, per_class);
  return out;
}

// Summed per-coordinate mini-batch variance at w, max over devices, for
// sampling without replacement.
double minibatch_variance(const Loss& loss, std::span<const double> w,
                          std::span<const Dataset> data, std::size_t b) {
  double worst = 0.0;
  const std::size_t q = w.size();
  for (const Dataset& d : data) {
    const Vec mean = full_gradient(loss, w, d);
    double spread = 0.0;
    Vec g(q);
    for (std::size_t i = 0; i < d.size(); ++i) {
      std::fill(g.begin(), g.end(), 0.0);
      loss.accumulate_gradient(w, d.row(i), d.labels[i], 1.0, g);
      for (std::size_t j = 0; j < q; ++j) {
        spread += (g[j] - mean[j]) * (g[j] - mean[j]);
      }
    }
    const double n = static_cast<double>(d.size());
    double v = spread / n / static_cast<double>(b);
    if (d.size() > 1) v *= (n - static_cast<double>(b)) / (n - 1.0);
    worst = std::max(worst, v);
  }
  return worst;
}

json bound_json(const BoundValue& v) {
  json j;
  j["variant"] = to_string(v.variant);
  j["value"] = v.value;
  auto opt = [](double x) { return std::isnan(x) ? json(nullptr) : json(x); };
  j["B"] = opt(v.B);
  j["C"] = opt(v.C);
  j["D"] = opt(v.D);
  j["A"] = opt(v.A);
  j["descent_condition"] = v.descent_condition;
  j["eta"] = v.eta_used;
  j["warnings"] = v.warnings;
  return j;
}

// --- metrics tables -------------------------------------------------------------

struct MetricsTable {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> values;
};

std::vector<std::string> split_commas(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

MetricsTable parse_table(const std::string& text) {
  MetricsTable t;
  std::size_t pos = 0;
  bool header = false;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    std::string line = text.substr(pos, end - pos);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::size_t line_start = pos;
    pos = end + 1;
    if (line.empty()) continue;
    if (line[0] == '#') {
      const std::string tag = "# efobda-metrics ";
      if (line.rfind(tag, 0) == 0 && line != std::string("# ") + kMetricsVersion) {
        throw ParseError("unsupported metrics version '" +
                             line.substr(tag.size()) + "'",
                         line_start);
      }
      continue;
    }
    const std::vector<std::string> cells = split_commas(line);
    if (!header) {
      t.columns = cells;
      header = true;
      continue;
    }
    if (cells.size() != t.columns.size()) {
      throw ParseError("metrics row has " + std::to_string(cells.size()) +
                           " cells, header has " +
                           std::to_string(t.columns.size()),
                       line_start);
    }
    std::vector<double> row;
    row.reserve(cells.size());
    for (const std::string& cell : cells) {
      char* stop = nullptr;
      const double v = std::strtod(cell.c_str(), &stop);
      if (cell.empty() || stop != cell.c_str() + cell.size()) {
        throw ParseError("bad number '" + cell + "' in metrics row",
                         line_start);
      }
      row.push_back(v);
    }
    t.values.push_back(std::move(row));
  }
  if (!header) throw ParseError("metrics file has no header row", text.size());
  return t;
}

bool higher_is_better(const std::string& metric) {
  return metric == "test_accuracy" || metric == "power_ok";
}

}  // namespace

// --- ExperimentConfig -------------------------------------------------------------

std::size_t ExperimentConfig::model_dim() const {
  if (model.kind == "mlp") return model.hidden * (q + 2);
  return q;
}

void ExperimentConfig::validate() const {
  if (name.empty() ||
      !std::all_of(name.begin(), name.end(), [](char ch) {
        return std::isalnum(static_cast<unsigned char>(ch)) || ch == '-' ||
               ch == '_' || ch == '.';
      })) {
    throw ConfigError("name", "must be non-empty and use [A-Za-z0-9._-]");
  }
  if (K < 1) throw ConfigError("K", "must be >= 1");
  if (q < 1) throw ConfigError("q", "must be >= 1");
  if (T < 1) throw ConfigError("T", "must be >= 1");
  if (!(eta > 0.0)) throw ConfigError("eta", "must satisfy eta > 0");
  if (!(beta > 0.0)) throw ConfigError("beta", "must satisfy beta > 0");
  if (!std::isfinite(snr_db)) throw ConfigError("snr_db", "must be finite");
  if (P0 < 0.0) throw ConfigError("P0", "must satisfy P0 > 0");
  if (M != 0.0 && !(M >= 1.0)) throw ConfigError("M", "must satisfy M >= 1");
  if (!(truncation_threshold >= 0.0)) {
    throw ConfigError("truncation_threshold", "must be >= 0");
  }
  if (!(rho > 0.0)) throw ConfigError("rho", "must satisfy rho > 0");
  if (!(sigma1_sq >= 0.0) ||
      sigma1_sq > 4.0 * static_cast<double>(model_dim())) {
    throw ConfigError("sigma1_sq", "must lie in [0, 4 * model dimension]");
  }
  if (dataset.kind != "synthetic" && dataset.kind != "idx") {
    throw ConfigError("dataset.kind", "must be 'synthetic' or 'idx'");
  }
  if (dataset.samples_per_device < 1) {
    throw ConfigError("dataset.samples_per_device", "must be >= 1");
  }
  if (batch_size < 1 || batch_size > dataset.samples_per_device) {
    throw ConfigError("batch_size",
                      "must lie in [1, dataset.samples_per_device]");
  }
  if (dataset.test_samples < 1) {
    throw ConfigError("dataset.test_samples", "must be >= 1");
  }
  if (!(dataset.separation >= 0.0)) {
    throw ConfigError("dataset.separation", "must be >= 0");
  }
  if (!(dataset.noise_std > 0.0)) {
    throw ConfigError("dataset.noise_std", "must be > 0");
  }
  if (!(dataset.skew >= 0.0 && dataset.skew <= 1.0)) {
    throw ConfigError("dataset.skew", "must lie in [0, 1]");
  }
  if (dataset.kind == "idx") {
    if (dataset.images.empty()) {
      throw ConfigError("dataset.images", "required for idx data");
    }
    if (dataset.labels.empty()) {
      throw ConfigError("dataset.labels", "required for idx data");
    }
    if (dataset.classes.size() != 2 ||
        dataset.classes[0] == dataset.classes[1]) {
      throw ConfigError("dataset.classes", "must list two distinct classes");
    }
  }
  if (model.kind != "logistic" && model.kind != "mlp") {
    throw ConfigError("model.kind", "must be 'logistic' or 'mlp'");
  }
  if (model.hidden < 1) throw ConfigError("model.hidden", "must be >= 1");
  if (!(model.l2 >= 0.0)) throw ConfigError("model.l2", "must be >= 0");
  if (output.empty()) throw ConfigError("output", "must be non-empty");
}

ExperimentConfig parse_config_text(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("config is not valid JSON: ") + e.what(),
                     e.byte);
  }
  ExperimentConfig c;
  ObjectReader r(root, "");
  r.text("name", c.name);
  std::string s;
  if (r.text("scheme", s)) c.scheme = convert("scheme", s, parse_scheme);
  if (r.text("channel", s)) {
    c.channel = convert("channel", s, parse_channel_mode);
  }
  r.count("K", c.K);
  r.count("q", c.q);
  r.count("T", c.T);
  r.number("eta", c.eta);
  r.number("beta", c.beta);
  r.number("snr_db", c.snr_db);
  double P0 = -1.0, M = -1.0;
  r.number("P0", P0);
  r.number("M", M);
  if (r.find("P0") != nullptr && !(P0 > 0.0)) {
    throw ConfigError("P0", "must satisfy P0 > 0");
  }
  if (r.find("M") != nullptr && !(M >= 1.0)) {
    throw ConfigError("M", "must satisfy M >= 1");
  }
  if (P0 > 0.0) c.P0 = P0;
  if (M > 0.0) c.M = M;
  if (r.text("power_policy", s)) {
    c.power_policy = convert("power_policy", s, parse_power_policy);
  }
  r.number("truncation_threshold", c.truncation_threshold);
  r.number("rho", c.rho);
  r.number("sigma1_sq", c.sigma1_sq);
  r.count("batch_size", c.batch_size);
  r.flag("sign_decoder", c.sign_decoder);
  r.flag("noise_real_part", c.noise_real_part);
  if (const json* d = r.find("dataset")) {
    ObjectReader dr(*d, "dataset.");
    dr.text("kind", c.dataset.kind);
    dr.count("samples_per_device", c.dataset.samples_per_device);
    dr.count("test_samples", c.dataset.test_samples);
    dr.number("separation", c.dataset.separation);
    dr.number("noise_std", c.dataset.noise_std);
    dr.number("skew", c.dataset.skew);
    dr.text("images", c.dataset.images);
    dr.text("labels", c.dataset.labels);
    dr.text("test_images", c.dataset.test_images);
    dr.text("test_labels", c.dataset.test_labels);
    if (const json* cl = dr.find("classes")) {
      if (!cl->is_array()) {
        throw ConfigError("dataset.classes", "must be an array of integers");
      }
      c.dataset.classes.clear();
      for (const json& v : *cl) {
        if (!v.is_number_integer()) {
          throw ConfigError("dataset.classes", "must be an array of integers");
        }
        c.dataset.classes.push_back(v.get<int>());
      }
    }
    dr.finish();
  }
  if (const json* m = r.find("model")) {
    ObjectReader mr(*m, "model.");
    mr.text("kind", c.model.kind);
    mr.count("hidden", c.model.hidden);
    mr.number("l2", c.model.l2);
    mr.finish();
  }
  if (const json* sd = r.find("seeds")) {
    ObjectReader sr(*sd, "seeds.");
    sr.seed("data", c.seeds.data);
    sr.seed("channel", c.seeds.channel);
    sr.seed("noise", c.seeds.noise);
    sr.seed("batch", c.seeds.batch);
    sr.finish();
  }
  r.text("output", c.output);
  r.flag("record_wall_time", c.record_wall_time);
  r.flag("bounds", c.bounds);
  r.finish();
  c.validate();
  return c;
}

ExperimentConfig parse_config(const std::string& path) {
  return parse_config_text(read_file(path));
}

std::string config_to_json(const ExperimentConfig& config) {
  return config_json(config).dump(2) + "\n";
}

// --- presets ------------------------------------------------------------------

std::vector<std::string> preset_names() {
  return {"fig2a-desk", "fig2b-desk", "fig3-desk",
          "fig4-desk",  "fig5-desk",  "fig6-desk"};
}

std::vector<ExperimentConfig> preset(const std::string& name,
                                     std::uint64_t seed) {
  ExperimentConfig base;
  base.K = 10;
  base.q = 50;
  base.T = 200;
  base.snr_db = 10.0;
  base.eta = 0.2;
  base.beta = 0.8;
  base.batch_size = 16;
  base.dataset.samples_per_device = 200;
  base.dataset.test_samples = 2000;
  base.dataset.separation = 1.5;
  base.dataset.skew = 0.6;
  base.seeds = {seed, 1000 + seed, 2000 + seed, 3000 + seed};
  base.output = "out/" + name;

  std::vector<ExperimentConfig> runs;
  const std::string suffix = "-s" + std::to_string(seed);
  auto add = [&](ExperimentConfig c, const std::string& tag) {
    c.name = name + "-" + tag + suffix;
    // Per-symbol budget P0/M = 4 so inversion can reach devices in fades.
    c.M = static_cast<double>(c.model_dim());
    c.P0 = 4.0 * c.M;
    runs.push_back(std::move(c));
  };

  if (name == "fig2a-desk" || name == "fig2b-desk" || name == "fig3-desk") {
    ExperimentConfig c = base;
    if (name == "fig2a-desk") {
      c.channel = ChannelMode::kAwgn;
    } else {
      c.channel = ChannelMode::kRayleighFlat;
    }
    if (name == "fig3-desk") {
      c.model.kind = "mlp";
      c.model.hidden = 8;
      c.q = 20;
    }
    const bool fading = c.channel != ChannelMode::kAwgn;
    std::vector<Scheme> schemes{Scheme::kEfobda, Scheme::kObda, Scheme::kBaa};
    if (fading) {
      schemes.push_back(Scheme::kObdaOpc);
      schemes.push_back(Scheme::kBaaOpc);
    }
    for (Scheme s : schemes) {
      c.scheme = s;
      add(c, to_string(s));
    }
  } else if (name == "fig4-desk") {
    ExperimentConfig c = base;
    c.channel = ChannelMode::kAwgn;
    for (double b : {0.01, 0.1, 0.8, 1.0}) {
      c.beta = b;
      char tag[32];
      std::snprintf(tag, sizeof tag, "beta%g", b);
      add(c, tag);
    }
  } else if (name == "fig5-desk") {
    ExperimentConfig c = base;
    for (std::size_t K : {2u, 5u, 10u, 20u}) {
      c.K = K;
      add(c, "K" + std::to_string(K));
    }
  } else if (name == "fig6-desk") {
    ExperimentConfig c = base;
    for (double snr : {0.0, 5.0, 10.0, 20.0}) {
      c.snr_db = snr;
      char tag[32];
      std::snprintf(tag, sizeof tag, "snr%g", snr);
      add(c, tag);
    }
  } else {
    throw ConfigError("preset", "unknown preset '" + name + "'");
  }
  return runs;
}

// --- simulation -----------------------------------------------------------------

std::vector<std::string> metric_columns() {
  return {"round",  "train_loss",       "test_accuracy", "grad_norm_sq",
          "phi",    "misalignment_mse", "power_ok",      "wall_ms"};
}

RunOutput simulate(const ExperimentConfig& config,
                   const RoundObserver& observer) {
  config.validate();
  RunOutput out;
  out.config = config;
  ExperimentConfig& c = out.config;
  c.M = resolved_M(c);
  c.P0 = resolved_P0(c);

  const std::unique_ptr<Loss> loss = make_loss(c);
  const std::size_t dim = loss->param_dim();
  DataBundle data = make_data(c);
  const std::span<const Dataset> train(data.train);

  RngStream init_rng(c.seeds.data, substream(StreamId::kInit, 0));
  ModelState model{loss->initial_params(init_rng), 0};
  std::vector<DeviceState> devices = make_devices(data.train, dim, c.seeds.batch);

  // Problem constants measured at the initial model.
  const double L = estimate_smoothness(*loss, train, model.w);
  double g_pilot = 0.0;
  for (const Dataset& d : data.train) {
    g_pilot = std::max(g_pilot, std::sqrt(norm_sq(full_gradient(*loss, model.w, d))));
  }
  g_pilot *= 1.2;
  const double grad_var =
      minibatch_variance(*loss, model.w, train, c.batch_size);

  const double signal_power = c.P0 / c.M;
  NoiseModel noise = snr_to_noise(c.snr_db, signal_power);
  noise.real_part_only = c.noise_real_part;

  RoundSettings settings;
  settings.scheme = c.scheme;
  settings.power_policy = c.power_policy;
  settings.eta = c.eta;
  settings.beta = c.beta;
  settings.batch_size = c.batch_size;
  settings.P0 = c.P0;
  settings.M = c.M;
  settings.truncation_threshold = c.truncation_threshold;
  settings.sign_decoder = c.sign_decoder;
  settings.rho = c.rho;
  settings.smoothness = L;
  settings.horizon = c.T;
  const bool sigma1_fixed = c.sigma1_sq > 0.0;
  settings.sigma1_sq = sigma1_fixed ? c.sigma1_sq : static_cast<double>(dim);
  settings.grad_bound_sq = g_pilot * g_pilot;
  settings.grad_variance = grad_var;
  const double sigma1_floor = 1e-3 * static_cast<double>(dim);

  RngStream channel_rng(c.seeds.channel, substream(StreamId::kChannel, 0));
  RngStream noise_rng(c.seeds.noise, substream(StreamId::kNoise, 0));

  out.initial_loss = global_loss(*loss, model.w, train);
  out.initial_accuracy = accuracy(*loss, model.w, data.test);
  double best_loss = out.initial_loss;
  double g_max = 0.0;
  double delta_min = 1.0;
  double sigma1_sum = 0.0;
  std::vector<AlignmentStep> trajectory;
  trajectory.reserve(c.T);

  out.rows.reserve(c.T);
  for (std::size_t t = 0; t < c.T; ++t) {
    const auto start = std::chrono::steady_clock::now();
    MetricsRow row;
    row.round = t + 1;
    try {
      const ChannelRealization channel =
          draw_channels(channel_rng, c.K, dim, c.channel, t);
      const double sigma1_used = settings.sigma1_sq;
      RoundResult result =
          run_round(settings, model, devices, *loss, channel, noise, noise_rng);
      model = std::move(result.model);
      const RoundTrace& tr = result.trace;
      if (observer) observer(tr);

      if (is_digital(c.scheme) && !sigma1_fixed) {
        settings.sigma1_sq = estimate_symbol_variance(tr.symbols, sigma1_floor);
      }
      sigma1_sum += sigma1_used;
      for (std::size_t k = 0; k < c.K; ++k) {
        g_max = std::max(g_max, std::sqrt(norm_sq(tr.gradients[k])));
        const double u2 = norm_sq(tr.corrected[k]);
        if (is_digital(c.scheme) && u2 > 0.0) {
          const double l1 = norm_l1(tr.corrected[k]);
          delta_min = std::min(delta_min,
                               l1 * l1 / (static_cast<double>(dim) * u2));
        }
      }

      const Vec h = channel.device_gains();
      ObjectiveCoefficients coeffs;
      if (is_digital(c.scheme)) {
        ObjectiveParams op;
        op.rho = c.rho;
        op.eta = c.eta;
        op.L = L;
        op.q = dim;
        op.K = c.K;
        op.T = c.T;
        op.sigma1_sq = sigma1_used;
        coeffs = quantized_objective(op);
      } else {
        coeffs = analog_objective(c.eta, L, settings.grad_bound_sq, grad_var,
                                  c.K, c.T);
      }
      row.phi = phi_round(tr.power.p, h, coeffs);
      row.misalignment_mse = norm_sq(tr.misalignment);
      row.power_ok = check_power(tr.power, c.P0, c.M).pass;
      trajectory.push_back(make_alignment(h, tr.power.p));

      row.train_loss = global_loss(*loss, model.w, train);
      if (!std::isfinite(row.train_loss)) {
        throw InvalidInput("training loss is not finite");
      }
      row.test_accuracy = accuracy(*loss, model.w, data.test);
      row.grad_norm_sq = norm_sq(global_gradient(*loss, model.w, train));
    } catch (const Error& e) {
      rethrow_with_round(e, t + 1);
    }
    if (c.record_wall_time) {
      row.wall_ms = std::chrono::duration<double, std::milli>(
                        std::chrono::steady_clock::now() - start)
                        .count();
    }
    best_loss = std::min(best_loss, row.train_loss);
    out.power_ok_all_rounds = out.power_ok_all_rounds && row.power_ok;
    out.rows.push_back(row);
  }

  // Summary.
  json s;
  s["format"] = "efobda-summary v1";
  s["name"] = c.name;
  s["config"] = config_json(c);
  s["initial"] = {{"train_loss", out.initial_loss},
                  {"test_accuracy", out.initial_accuracy}};
  const MetricsRow& last = out.rows.back();
  s["final"] = {{"round", last.round},
                {"train_loss", last.train_loss},
                {"test_accuracy", last.test_accuracy},
                {"grad_norm_sq", last.grad_norm_sq}};
  const double G = 1.2 * g_max;
  const double sigma1_mean = sigma1_sum / static_cast<double>(c.T);
  s["estimates"] = {{"L", L},
                    {"G", G},
                    {"G_pilot", g_pilot},
                    {"grad_variance", grad_var},
                    {"sigma1_sq_mean", sigma1_mean},
                    {"delta_scaled_sign", delta_min},
                    {"F_star", best_loss},
                    {"F0_minus_Fstar", out.initial_loss - best_loss},
                    {"sigma_z_sq", noise.effective_variance()}};
  s["power_ok_all_rounds"] = out.power_ok_all_rounds;

  json bounds = json::array();
  if (c.bounds) {
    HyperParams hp;
    hp.eta = c.eta;
    hp.beta = c.beta;
    hp.delta = std::clamp(delta_min, 1e-12, 1.0);
    hp.rho = c.rho;
    hp.L = L;
    hp.G = G;
    hp.sigma_sq = grad_var;
    hp.sigma1_sq = std::min(sigma1_mean, 4.0 * static_cast<double>(dim));
    hp.sigma_z_sq = noise.effective_variance();
    hp.K = c.K;
    hp.q = dim;
    hp.T = c.T;
    hp.F0_minus_Fstar = out.initial_loss - best_loss;
    std::vector<BoundVariant> variants;
    const bool awgn = c.channel == ChannelMode::kAwgn;
    if (c.scheme == Scheme::kEfobda) {
      if (awgn) {
        variants = {BoundVariant::kCorollary1, BoundVariant::kCorollary1Decayed};
      } else {
        variants = {BoundVariant::kTheorem1};
      }
    } else if (!is_digital(c.scheme)) {
      variants = {awgn ? BoundVariant::kCorollary2 : BoundVariant::kProposition1};
    }
    for (BoundVariant v : variants) {
      try {
        bounds.push_back(bound_json(convergence_bound(v, hp, trajectory)));
      } catch (const Error& e) {
        bounds.push_back({{"variant", to_string(v)}, {"error", e.what()}});
      }
    }
  }
  s["bounds"] = bounds;
  out.summary = s.dump(2) + "\n";
  return out;
}

std::string format_metrics_csv(const std::vector<MetricsRow>& rows) {
  std::string out = std::string("# ") + kMetricsVersion + "\n";
  const std::vector<std::string> cols = metric_columns();
  for (std::size_t i = 0; i < cols.size(); ++i) {
    out += (i ? "," : "") + cols[i];
  }
  out += "\n";
  for (const MetricsRow& r : rows) {
    out += std::to_string(r.round) + "," + fmt_double(r.train_loss) + "," +
           fmt_double(r.test_accuracy) + "," + fmt_double(r.grad_norm_sq) +
           "," + fmt_double(r.phi) + "," + fmt_double(r.misalignment_mse) +
           "," + (r.power_ok ? "1" : "0") + "," + fmt_double(r.wall_ms) + "\n";
  }
  return out;
}

std::vector<MetricsRow> parse_metrics_csv(const std::string& text) {
  const MetricsTable t = parse_table(text);
  const std::vector<std::string> cols = metric_columns();
  std::vector<std::size_t> idx;
  for (const std::string& name : cols) {
    const auto it = std::find(t.columns.begin(), t.columns.end(), name);
    if (it == t.columns.end()) {
      throw ParseError("metrics file lacks column '" + name + "'", 0);
    }
    idx.push_back(static_cast<std::size_t>(it - t.columns.begin()));
  }
  std::vector<MetricsRow> rows;
  for (const auto& v : t.values) {
    MetricsRow r;
    r.round = static_cast<std::size_t>(v[idx[0]]);
    r.train_loss = v[idx[1]];
    r.test_accuracy = v[idx[2]];
    r.grad_norm_sq = v[idx[3]];
    r.phi = v[idx[4]];
    r.misalignment_mse = v[idx[5]];
    r.power_ok = v[idx[6]] != 0.0;
    r.wall_ms = v[idx[7]];
    rows.push_back(r);
  }
  return rows;
}

RunOutput run_experiment(const ExperimentConfig& config) {
  RunOutput out = simulate(config);
  std::filesystem::create_directories(out.config.output);
  const std::filesystem::path base =
      std::filesystem::path(out.config.output) / out.config.name;
  out.csv_path = base.string() + ".csv";
  out.json_path = base.string() + ".json";
  write_file(out.csv_path, format_metrics_csv(out.rows));
  write_file(out.json_path, out.summary);
  return out;
}

std::vector<RunOutput> run_sweep(const std::vector<ExperimentConfig>& configs,
                                 std::size_t threads, bool write_files) {
  std::vector<RunOutput> results(configs.size());
  std::vector<std::exception_ptr> errors(configs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (std::size_t i = next++; i < configs.size(); i = next++) {
      try {
        results[i] = write_files ? run_experiment(configs[i])
                                 : simulate(configs[i]);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  threads = std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(1, configs.size()));
  std::vector<std::thread> pool;
  for (std::size_t i = 1; i < threads; ++i) pool.emplace_back(worker);
  worker();
  for (std::thread& th : pool) th.join();
  for (const std::exception_ptr& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return results;
}

// --- comparison ---------------------------------------------------------------------

CompareMode parse_compare_mode(const std::string& text) {
  if (text == "final") return CompareMode::kFinal;
  if (text == "auc") return CompareMode::kAuc;
  throw InvalidInput("compare mode must be 'final' or 'auc', got '" + text +
                     "'");
}

double metric_value(const MetricsRow& row, const std::string& metric) {
  if (metric == "round") return static_cast<double>(row.round);
  if (metric == "train_loss") return row.train_loss;
  if (metric == "test_accuracy") return row.test_accuracy;
  if (metric == "grad_norm_sq") return row.grad_norm_sq;
  if (metric == "phi") return row.phi;
  if (metric == "misalignment_mse") return row.misalignment_mse;
  if (metric == "power_ok") return row.power_ok ? 1.0 : 0.0;
  if (metric == "wall_ms") return row.wall_ms;
  throw InvalidInput("unknown metric '" + metric + "'");
}

double metric_auc(const std::vector<MetricsRow>& rows,
                  const std::string& metric) {
  double area = 0.0;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const double dt = static_cast<double>(rows[i].round) -
                      static_cast<double>(rows[i - 1].round);
    area += 0.5 * dt *
            (metric_value(rows[i], metric) + metric_value(rows[i - 1], metric));
  }
  return area;
}

CompareReport compare_runs(const std::vector<std::string>& files,
                           const std::string& metric, CompareMode mode) {
  if (files.size() < 2) {
    throw InvalidInput("compare_runs: need at least two files");
  }
  if (metric == "round") {
    throw InvalidInput("compare_runs: 'round' is not a comparable metric");
  }
  CompareReport report;
  report.metric = metric;
  report.mode = mode;
  report.higher_is_better = higher_is_better(metric);
  for (const std::string& f : files) {
    const MetricsTable t = parse_table(read_file(f));
    const auto it = std::find(t.columns.begin(), t.columns.end(), metric);
    if (it == t.columns.end()) {
      throw InvalidInput("compare_runs: metric '" + metric +
                         "' not found in '" + f + "'");
    }
    const auto col = static_cast<std::size_t>(it - t.columns.begin());
    const auto rcol = static_cast<std::size_t>(
        std::find(t.columns.begin(), t.columns.end(), "round") -
        t.columns.begin());
    if (t.values.empty()) {
      throw InvalidInput("compare_runs: '" + f + "' has no rows");
    }
    double v = 0.0;
    if (mode == CompareMode::kFinal) {
      v = t.values.back()[col];
    } else {
      for (std::size_t i = 1; i < t.values.size(); ++i) {
        const double dt = rcol < t.columns.size()
                              ? t.values[i][rcol] - t.values[i - 1][rcol]
                              : 1.0;
        v += 0.5 * dt * (t.values[i][col] + t.values[i - 1][col]);
      }
    }
    report.ranking.push_back({f, v, 0});
  }
  const bool up = report.higher_is_better;
  std::stable_sort(report.ranking.begin(), report.ranking.end(),
                   [up](const RankedRun& a, const RankedRun& b) {
                     return up ? a.value > b.value : a.value < b.value;
                   });
  for (std::size_t i = 0; i < report.ranking.size(); ++i) {
    if (i > 0 && report.ranking[i].value == report.ranking[i - 1].value) {
      report.ranking[i].rank = report.ranking[i - 1].rank;
      report.has_ties = true;
    } else {
      report.ranking[i].rank = i + 1;
    }
  }
  return report;
}

std::string CompareReport::to_text() const {
  std::string out = "metric " + metric + " mode " +
                    (mode == CompareMode::kFinal ? "final" : "auc") + " (" +
                    (higher_is_better ? "higher" : "lower") + " is better)\n";
  for (std::size_t i = 0; i < ranking.size(); ++i) {
    const RankedRun& r = ranking[i];
    const bool tied =
        (i > 0 && ranking[i - 1].rank == r.rank) ||
        (i + 1 < ranking.size() && ranking[i + 1].rank == r.rank);
    out += std::to_string(r.rank) + "\t" + fmt_double(r.value) + "\t" +
           r.file + (tied ? "\ttie" : "") + "\n";
  }
  return out;
}

}  // namespace efobda

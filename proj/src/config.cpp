/* Copyright 2026 The dllmsim Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include "dllmsim/config.h"

#include <yaml-cpp/yaml.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <optional>
#include <sstream>

namespace dllmsim {
namespace {

const std::vector<ConfigKeyDoc> kDocs = {
    {"seed", "int", "1", "Base RNG seed for the scenario."},
    {"seeds", "list<int>", "[seed]", "Seeds per sweep cell or capacity probe."},
    {"load.mode", "closed_loop|open_loop|trace", "closed_loop",
     "Fixed concurrency, Poisson arrivals, or an explicit trace file."},
    {"load.concurrency", "int", "1", "Closed loop: requests kept in flight."},
    {"load.total_requests", "int", "0",
     "Closed loop: stop after this many completions (0 = max(200, 8*concurrency))."},
    {"load.stagger", "bool", "true",
     "Closed loop: initial requests start at random whole-block offsets."},
    {"load.arrival_rate", "float (req/s)", "1.0", "Open loop: Poisson arrival rate."},
    {"load.n_requests", "int", "1000", "Open loop: requests in the generated trace."},
    {"load.duration_s", "float (s)", "unset", "Open loop: drop arrivals after this time."},
    {"load.exclude_fraction", "float", "0.1",
     "Open loop: fraction of requests at each end left out of TPOT statistics."},
    {"load.trace_file", "path", "", "Trace mode: JSON-lines request trace."},
    {"block_size", "int", "32", "Diffusion block size."},
    {"window_rule", "in_block|out_block", "in_block",
     "Whether the masked window may cross block boundaries."},
    {"reorganize", "bool", "true",
     "Streaming chunk reorganization; false gives naive fixed segments."},
    {"policy", "policy", "elastic",
     "elastic, fixed_chunk:<c>, fixed_block:<B>, block_level:<B> or ar."},
    {"policies", "list<policy>", "[policy]", "Policies compared by sweep and capacity."},
    {"elastic.candidates", "list<int>", "2,4,..,block_size", "Elastic chunk sizes."},
    {"elastic.hysteresis_eps", "float", "0.05",
     "Relative gain needed to leave the previous chunk size."},
    {"dataset", "name", "sharegpt",
     "Preset: sharegpt, lmsys, longbench, gsm8k, humaneval, mbpp, ifeval."},
    {"model", "sdar-8b|llada2-16b", "sdar-8b", "Model variant for tokens-per-step moments."},
    {"dataset_override.prompt_mean", "float", "preset", "Prompt length mean."},
    {"dataset_override.prompt_std", "float", "preset", "Prompt length std."},
    {"dataset_override.output_mean", "float", "preset", "Output length mean."},
    {"dataset_override.output_std", "float", "preset", "Output length std."},
    {"dataset_override.tokens_per_step_mean", "float", "preset",
     "Block-32 tokens per step mean for the selected model."},
    {"dataset_override.tokens_per_step_std", "float", "preset",
     "Block-32 tokens per step std for the selected model."},
    {"dataset_override.tpot_slo_ms", "float (ms)", "preset", "Dataset TPOT SLO."},
    {"commit.q", "float", "calibrated", "Geometric commit decay; overrides calibration."},
    {"commit.rate_jitter_sigma", "float", "calibrated",
     "Lognormal sigma of the per-request rate factor."},
    {"commit.replay_file", "path", "", "JSON-lines commit trace to replay."},
    {"commit.replay_mode", "verbatim|cumulative", "verbatim", "Replay semantics."},
    {"cost_model.file", "path", "", "Cost model JSON written by calibrate."},
    {"cost_model.intercept_ms", "float (ms)", "35", "Latency at zero tokens."},
    {"cost_model.slopes_us", "list<float> (us/token)", "[10, 30, 100]",
     "Per-regime slopes."},
    {"cost_model.breakpoints", "list<float> (tokens)", "[128, 512]", "Regime boundaries."},
    {"cost_model.context_surcharge_us", "float (us/token)", "0",
     "Extra latency per context token in the batch."},
    {"max_batch", "int", "256", "Decode batch capacity."},
    {"warmup_iterations", "int", "32",
     "Elastic: request steps decoded at the largest chunk before selection starts."},
    {"estimator.alpha", "float", "0.95", "EWMA retention of the commit estimator."},
    {"estimator.min_observations", "int", "8",
     "Observations before the estimator replaces its prior."},
    {"estimator.prior_q", "float", "commit q", "Geometric prior of the estimator."},
    {"include_prefill", "bool", "true", "Run a prefill iteration per request."},
    {"check_invariants", "bool", "false", "Verify per-step state invariants."},
    {"sweep.axis", "batch|rate", "batch", "Sweep axis."},
    {"sweep.values", "list<float>", "[]", "Sweep axis values."},
    {"capacity.slo_ms", "float (ms)", "dataset SLO", "P90 TPOT objective."},
    {"capacity.rate_low", "float (req/s)", "0.1", "Lower arrival-rate bound."},
    {"capacity.rate_high", "float (req/s)", "64", "Upper arrival-rate bound."},
    {"capacity.grid_points", "int", "8", "Coarse geometric grid size."},
    {"capacity.tolerance", "float", "0.02", "Relative bisection width."},
    {"output.dir", "path", "out", "Output directory."},
    {"output.record_steps", "bool", "false", "Write a per-request step trace."},
};

template <typename T>
std::string_view type_name() {
  if constexpr (std::is_same_v<T, bool>) {
    return "a boolean";
  } else if constexpr (std::is_integral_v<T>) {
    return "an integer";
  } else if constexpr (std::is_floating_point_v<T>) {
    return "a number";
  } else {
    return "a string";
  }
}

class Parser {
 public:
  Parser(std::string source, std::string base_dir)
      : source_(std::move(source)), base_dir_(std::move(base_dir)) {}

  ExperimentConfig parse(std::string_view text) {
    YAML::Node root;
    try {
      root = YAML::Load(std::string(text));
    } catch (const YAML::ParserException& e) {
      fail(e.mark, e.msg);
    }
    if (root.IsNull()) root = YAML::Node(YAML::NodeType::Map);
    if (!root.IsMap()) fail(root.Mark(), "top level must be a mapping");
    check_keys(root, "");
    root_ = root;

    ExperimentConfig cfg;
    Scenario& s = cfg.scenario;
    s.seed = get<uint64_t>("seed", 1);
    s.block_size = get<int>("block_size", 32);
    if (s.block_size < 2) fail_key("block_size", "block_size must be >= 2");

    const auto rule = get<std::string>("window_rule", "in_block");
    if (rule == "in_block") {
      s.window_rule = WindowRule::kInBlock;
    } else if (rule == "out_block") {
      s.window_rule = WindowRule::kOutBlock;
    } else {
      fail_key("window_rule", "window_rule must be in_block or out_block");
    }
    s.reorganize = get<bool>("reorganize", true);

    std::vector<int> candidates = get_list<int>("elastic.candidates", {});
    const double eps = get<double>("elastic.hysteresis_eps", 0.05);
    auto policy_from = [&](const std::string& text, const std::string& key) {
      SchedulerPolicy p;
      try {
        p = parse_policy(text, s.block_size);
        if (auto* e = std::get_if<ElasticChunked>(&p)) {
          if (!candidates.empty()) e->candidates = candidates;
          e->hysteresis_eps = eps;
          validate(p, s.block_size);
        }
      } catch (const SimError& e) {
        fail_key(key, key + ": " + e.what());
      }
      return p;
    };
    s.policy = policy_from(get<std::string>("policy", "elastic"), "policy");
    for (const auto& text : get_list<std::string>("policies", {})) {
      cfg.policies.push_back(policy_from(text, "policies"));
    }
    if (cfg.policies.empty()) cfg.policies.push_back(s.policy);

    parse_dataset(s);
    parse_commit(s);
    parse_cost(s);
    parse_load(s);

    s.max_batch = get<int>("max_batch", 256);
    s.warmup_iterations = get<int>("warmup_iterations", 32);
    s.estimator_alpha = get<double>("estimator.alpha", 0.95);
    s.estimator_min_observations = get<int>("estimator.min_observations", 8);
    if (has("estimator.prior_q")) s.prior_q = get<double>("estimator.prior_q", 0.0);
    s.include_prefill = get<bool>("include_prefill", true);
    s.check_invariants = get<bool>("check_invariants", false);
    s.record_steps = get<bool>("output.record_steps", false);

    for (const auto seed : get_list<uint64_t>("seeds", {})) cfg.seeds.push_back(seed);
    if (cfg.seeds.empty()) cfg.seeds.push_back(s.seed);

    const auto axis = get<std::string>("sweep.axis", "batch");
    if (axis == "batch") {
      cfg.axis = SweepAxis::kBatch;
    } else if (axis == "rate") {
      cfg.axis = SweepAxis::kRate;
    } else {
      fail_key("sweep.axis", "sweep.axis must be batch or rate");
    }
    cfg.values = get_list<double>("sweep.values", {});
    for (const double v : cfg.values) {
      if (!(v > 0.0)) fail_key("sweep.values", "sweep.values must be positive");
    }

    cfg.slo_s = get<double>("capacity.slo_ms", s.dataset.tpot_slo_s * 1e3) / 1e3;
    if (!(cfg.slo_s > 0.0)) fail_key("capacity.slo_ms", "capacity.slo_ms must be > 0");
    cfg.rate_bounds.low = get<double>("capacity.rate_low", 0.1);
    cfg.rate_bounds.high = get<double>("capacity.rate_high", 64.0);
    if (!(cfg.rate_bounds.low > 0.0 && cfg.rate_bounds.high > cfg.rate_bounds.low)) {
      fail_key("capacity.rate_high", "capacity rate bounds need 0 < rate_low < rate_high");
    }
    cfg.grid_points = get<int>("capacity.grid_points", 8);
    if (cfg.grid_points < 2) fail_key("capacity.grid_points", "capacity.grid_points must be >= 2");
    cfg.tolerance = get<double>("capacity.tolerance", 0.02);
    if (!(cfg.tolerance > 0.0)) fail_key("capacity.tolerance", "capacity.tolerance must be > 0");
    cfg.out_dir = get<std::string>("output.dir", "out");

    try {
      s.validate();
    } catch (const SimError& e) {
      const std::string msg = e.what();
      const auto colon = msg.find(": ");
      const std::string detail = colon == std::string::npos ? msg : msg.substr(colon + 2);
      const auto key_end = detail.find(' ');
      const std::string key = detail.substr(0, key_end);
      if (marks_.count(key) != 0) fail(marks_.at(key), detail);
      throw SimError(ErrorCode::kConfig, source_ + ": " + detail);
    }
    return cfg;
  }

 private:
  [[noreturn]] void fail(const YAML::Mark& mark, const std::string& msg) const {
    if (mark.is_null()) throw SimError(ErrorCode::kConfig, source_ + ": " + msg);
    throw SimError(ErrorCode::kConfig, source_ + ":" + std::to_string(mark.line + 1) +
                                           ":" + std::to_string(mark.column + 1) +
                                           ": " + msg);
  }

  [[noreturn]] void fail_key(const std::string& key, const std::string& msg) const {
    const auto it = marks_.find(key);
    fail(it == marks_.end() ? YAML::Mark::null_mark() : it->second, msg);
  }

  void check_keys(const YAML::Node& map, const std::string& prefix) {
    for (const auto& kv : map) {
      const std::string key = prefix + kv.first.as<std::string>();
      bool exact = false;
      bool section = false;
      for (const auto& doc : kDocs) {
        exact = exact || doc.key == key;
        section = section || doc.key.rfind(key + ".", 0) == 0;
      }
      if (exact) {
        marks_[key] = kv.second.Mark();
      } else if (section) {
        if (!kv.second.IsMap()) fail(kv.second.Mark(), "'" + key + "' must be a mapping");
        check_keys(kv.second, key + ".");
      } else {
        fail(kv.first.Mark(), "unknown key '" + key + "'");
      }
    }
  }

  std::optional<YAML::Node> node(const std::string& key) const {
    YAML::Node cur;
    cur.reset(root_);
    size_t start = 0;
    while (true) {
      const auto dot = key.find('.', start);
      const std::string part = key.substr(start, dot - start);
      const YAML::Node& view = cur;
      if (!view.IsMap() || !view[part]) return std::nullopt;
      cur.reset(view[part]);
      if (dot == std::string::npos) return cur;
      start = dot + 1;
    }
  }

  bool has(const std::string& key) const {
    const auto n = node(key);
    return n && !n->IsNull();
  }

  template <typename T>
  T get(const std::string& key, T fallback) const {
    const auto found = node(key);
    if (!found || found->IsNull()) return fallback;
    const YAML::Node& n = *found;
    if (!n.IsScalar()) fail(n.Mark(), "'" + key + "' must be " + std::string(type_name<T>()));
    try {
      return n.as<T>();
    } catch (const YAML::Exception&) {
      fail(n.Mark(), "'" + key + "' must be " + std::string(type_name<T>()));
    }
  }

  template <typename T>
  std::vector<T> get_list(const std::string& key, std::vector<T> fallback) const {
    const auto found = node(key);
    if (!found || found->IsNull()) return fallback;
    const YAML::Node& n = *found;
    if (!n.IsSequence()) fail(n.Mark(), "'" + key + "' must be a list");
    std::vector<T> out;
    for (const auto& item : n) {
      try {
        out.push_back(item.as<T>());
      } catch (const YAML::Exception&) {
        fail(item.Mark(),
             "'" + key + "' entries must be " + std::string(type_name<T>()));
      }
    }
    return out;
  }

  std::string resolve(const std::string& path) const {
    const std::filesystem::path p(path);
    return p.is_absolute() ? path : (std::filesystem::path(base_dir_) / p).string();
  }

  std::ifstream open(const std::string& key) const {
    const std::string path = resolve(get<std::string>(key, ""));
    std::ifstream in(path);
    if (!in) fail_key(key, "cannot open '" + path + "'");
    return in;
  }

  void parse_dataset(Scenario& s) {
    try {
      s.dataset = dataset_preset(get<std::string>("dataset", "sharegpt"));
      s.model = parse_model_variant(get<std::string>("model", "sdar-8b"));
    } catch (const SimError& e) {
      fail_key(has("model") ? "model" : "dataset", e.what());
    }
    auto& d = s.dataset;
    const auto idx = static_cast<size_t>(s.model);
    d.prompt_mean = get<double>("dataset_override.prompt_mean", d.prompt_mean);
    d.prompt_std = get<double>("dataset_override.prompt_std", d.prompt_std);
    d.output_mean = get<double>("dataset_override.output_mean", d.output_mean);
    d.output_std = get<double>("dataset_override.output_std", d.output_std);
    d.tokens_per_step_mean[idx] = get<double>("dataset_override.tokens_per_step_mean",
                                              d.tokens_per_step_mean[idx]);
    d.tokens_per_step_std[idx] = get<double>("dataset_override.tokens_per_step_std",
                                             d.tokens_per_step_std[idx]);
    d.tpot_slo_s = get<double>("dataset_override.tpot_slo_ms", d.tpot_slo_s * 1e3) / 1e3;
    try {
      d.validate();
    } catch (const SimError& e) {
      fail_key("dataset", e.what());
    }
  }

  void parse_commit(Scenario& s) {
    if (has("commit.q") || has("commit.rate_jitter_sigma")) {
      CommitProfile p = effective_commit_profile(s);
      p.q = get<double>("commit.q", p.q);
      p.rate_jitter_sigma = get<double>("commit.rate_jitter_sigma", p.rate_jitter_sigma);
      p.calibration_note = "configured";
      try {
        p.validate();
      } catch (const SimError& e) {
        fail_key(has("commit.q") ? "commit.q" : "commit.rate_jitter_sigma", e.what());
      }
      s.commit_profile = p;
    }
    if (has("commit.replay_file")) {
      auto in = open("commit.replay_file");
      try {
        s.replay = read_commit_trace(in);
      } catch (const std::exception& e) {
        fail_key("commit.replay_file", e.what());
      }
    }
    const auto mode = get<std::string>("commit.replay_mode", "verbatim");
    if (mode == "verbatim") {
      s.replay_mode = ReplayOracle::Mode::kVerbatim;
    } else if (mode == "cumulative") {
      s.replay_mode = ReplayOracle::Mode::kCumulative;
    } else {
      fail_key("commit.replay_mode", "commit.replay_mode must be verbatim or cumulative");
    }
  }

  void parse_cost(Scenario& s) {
    const bool inline_model = has("cost_model.intercept_ms") ||
                              has("cost_model.slopes_us") ||
                              has("cost_model.breakpoints");
    if (has("cost_model.file")) {
      if (inline_model) {
        fail_key("cost_model.file", "cost_model.file excludes inline cost_model keys");
      }
      auto in = open("cost_model.file");
      try {
        s.cost = cost_model_from_json(nlohmann::json::parse(in));
      } catch (const std::exception& e) {
        fail_key("cost_model.file", e.what());
      }
    } else if (inline_model) {
      const auto slopes = get_list<double>("cost_model.slopes_us", {10.0, 30.0, 100.0});
      const auto bps = get_list<double>("cost_model.breakpoints", {128.0, 512.0});
      if (slopes.size() != 3) fail_key("cost_model.slopes_us", "cost_model.slopes_us needs 3 values");
      if (bps.size() != 2) fail_key("cost_model.breakpoints", "cost_model.breakpoints needs 2 values");
      try {
        s.cost = make_cost_model(get<double>("cost_model.intercept_ms", 35.0) / 1e3,
                                 {slopes[0] * 1e-6, slopes[1] * 1e-6, slopes[2] * 1e-6},
                                 bps[0], bps[1]);
      } catch (const SimError& e) {
        fail_key("cost_model.slopes_us", e.what());
      }
    }
    s.cost.context_surcharge =
        get<double>("cost_model.context_surcharge_us", s.cost.context_surcharge * 1e6) * 1e-6;
  }

  void parse_load(Scenario& s) {
    const auto mode = get<std::string>("load.mode", "closed_loop");
    if (mode == "closed_loop") {
      ClosedLoop c;
      c.concurrency = get<int>("load.concurrency", 1);
      c.total_requests = get<int>("load.total_requests", 0);
      c.stagger = get<bool>("load.stagger", true);
      s.load = c;
    } else if (mode == "open_loop") {
      OpenLoop o;
      o.arrival_rate = get<double>("load.arrival_rate", 1.0);
      o.n_requests = get<int>("load.n_requests", 1000);
      if (has("load.duration_s")) o.duration_s = get<double>("load.duration_s", 0.0);
      o.exclude_fraction = get<double>("load.exclude_fraction", 0.1);
      s.load = o;
    } else if (mode == "trace") {
      if (!has("load.trace_file")) fail_key("load.mode", "trace mode needs load.trace_file");
      auto in = open("load.trace_file");
      FixedTrace t;
      try {
        t.requests = read_trace(in);
      } catch (const std::exception& e) {
        fail_key("load.trace_file", e.what());
      }
      s.load = t;
    } else {
      fail_key("load.mode", "load.mode must be closed_loop, open_loop or trace");
    }
  }

  std::string source_;
  std::string base_dir_;
  YAML::Node root_;
  std::map<std::string, YAML::Mark> marks_;
};

}  // namespace

const std::vector<ConfigKeyDoc>& config_key_docs() { return kDocs; }

std::string config_help_text() {
  std::ostringstream out;
  out << "Config keys (YAML; nested keys shown with dots):\n";
  for (const auto& d : kDocs) {
    out << "  " << d.key << " <" << d.type << ">  default: "
        << (d.default_value.empty() ? "none" : d.default_value) << "\n      "
        << d.description << "\n";
  }
  return out.str();
}

ExperimentConfig parse_config(std::string_view yaml_text, std::string_view source_name,
                              const std::string& base_dir) {
  Parser parser{std::string(source_name), base_dir};
  return parser.parse(yaml_text);
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw SimError(ErrorCode::kConfig, "cannot open config '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  const auto dir = std::filesystem::path(path).parent_path();
  return parse_config(buf.str(), path, dir.empty() ? "." : dir.string());
}

}  // namespace dllmsim

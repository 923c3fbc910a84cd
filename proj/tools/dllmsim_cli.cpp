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

// Command-line front end: run, sweep, calibrate, capacity.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "dllmsim/config.h"
#include "dllmsim/cost_model.h"
#include "dllmsim/metrics.h"
#include "dllmsim/sim_engine.h"
#include "dllmsim/slo_capacity.h"

namespace fs = std::filesystem;
using namespace dllmsim;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitConfig = 2;

// Writes through a temporary file so readers never see a partial file.
void write_atomic(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw SimError(ErrorCode::kInvalidArgument, "cannot write " + tmp.string());
    out << content;
    if (!out.flush()) throw SimError(ErrorCode::kInvalidArgument, "write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string sanitize(std::string text) {
  for (char& c : text) {
    if (c == ':' || c == '/' || c == ' ') c = '_';
  }
  return text;
}

std::string format_value(double v) {
  std::ostringstream out;
  out << v;
  return out.str();
}

struct CommonOptions {
  std::string config;
  std::optional<uint64_t> seed;
  std::optional<std::string> out_dir;
  int jobs = 1;
};

ExperimentConfig load(const CommonOptions& opts) {
  ExperimentConfig cfg = load_config(opts.config);
  if (opts.seed) {
    cfg.scenario.seed = *opts.seed;
    const size_t n = cfg.seeds.size();
    cfg.seeds.clear();
    for (size_t i = 0; i < n; ++i) cfg.seeds.push_back(*opts.seed + i);
  }
  if (opts.out_dir) cfg.out_dir = *opts.out_dir;
  return cfg;
}

int cmd_run(const CommonOptions& opts) {
  const ExperimentConfig cfg = load(opts);
  const RunResult result = run(cfg.scenario);
  const RunSummary summary = summarize(result);

  nlohmann::json j = to_json(summary);
  j["policy"] = policy_name(cfg.scenario.policy);
  j["seed"] = cfg.scenario.seed;
  j["iterations"] = result.iterations.size();
  const fs::path dir(cfg.out_dir);
  write_atomic(dir / "summary.json", j.dump(2) + "\n");

  std::string csv(kIterationCsvHeader);
  csv += "\n";
  for (const auto& rec : result.iterations) csv += to_csv_row(rec) + "\n";
  write_atomic(dir / "iterations.csv", csv);
  if (cfg.scenario.record_steps) {
    std::string lines;
    for (const auto& line : result.step_trace) lines += line + "\n";
    write_atomic(dir / "steps.jsonl", lines);
  }
  std::cout << j.dump(2) << "\n";
  return 0;
}

int cmd_sweep(const CommonOptions& opts, const std::string& axis_text,
              const std::vector<double>& values_flag, bool resume) {
  ExperimentConfig cfg = load(opts);
  if (!axis_text.empty()) {
    if (axis_text == "batch") {
      cfg.axis = SweepAxis::kBatch;
    } else if (axis_text == "rate") {
      cfg.axis = SweepAxis::kRate;
    } else {
      throw SimError(ErrorCode::kConfig, "--axis must be batch or rate");
    }
  }
  if (!values_flag.empty()) cfg.values = values_flag;
  if (cfg.values.empty()) {
    throw SimError(ErrorCode::kConfig, "no sweep values (sweep.values or --values)");
  }
  for (const double v : cfg.values) {
    if (!(v > 0.0)) throw SimError(ErrorCode::kConfig, "sweep values must be positive");
  }
  const std::string axis(to_string(cfg.axis));
  const fs::path dir(cfg.out_dir);
  const size_t n_seeds = cfg.seeds.size();
  const size_t n_values = cfg.values.size();
  const size_t cells = cfg.policies.size() * n_values * n_seeds;

  auto cell_path = [&](size_t i) {
    const auto& policy = cfg.policies[i / (n_values * n_seeds)];
    const double value = cfg.values[(i / n_seeds) % n_values];
    const uint64_t seed = cfg.seeds[i % n_seeds];
    return dir / "cells" /
           (sanitize(policy_name(policy)) + "_" + axis + "_" + format_value(value) +
            "_" + std::to_string(seed) + ".csv");
  };

  std::vector<std::string> rows(cells);
  parallel_for(static_cast<int>(cells), opts.jobs, [&](int i) {
    const auto idx = static_cast<size_t>(i);
    const fs::path path = cell_path(idx);
    if (resume && fs::exists(path)) {
      std::ifstream in(path);
      std::string header;
      std::getline(in, header);
      std::getline(in, rows[idx]);
      if (header == kSweepCsvHeader && !rows[idx].empty()) return;
    }
    const auto& policy = cfg.policies[idx / (n_values * n_seeds)];
    const double value = cfg.values[(idx / n_seeds) % n_values];
    const uint64_t seed = cfg.seeds[idx % n_seeds];
    SweepRow row;
    row.policy = policy_name(policy);
    row.axis_value = value;
    row.seed = seed;
    row.summary = summarize(run(cell_scenario(cfg.scenario, cfg.axis, value, policy, seed)));
    rows[idx] = to_csv_row(row, cfg.axis);
    write_atomic(path, std::string(kSweepCsvHeader) + "\n" + rows[idx] + "\n");
  });

  std::string all = std::string(kSweepCsvHeader) + "\n";
  for (size_t p = 0; p < cfg.policies.size(); ++p) {
    std::string table = std::string(kSweepCsvHeader) + "\n";
    for (size_t k = 0; k < n_values * n_seeds; ++k) {
      table += rows[p * n_values * n_seeds + k] + "\n";
    }
    write_atomic(dir / ("sweep_" + axis + "_" + sanitize(policy_name(cfg.policies[p])) + ".csv"),
                 table);
    all += table.substr(kSweepCsvHeader.size() + 1);
  }
  write_atomic(dir / ("sweep_" + axis + ".csv"), all);
  std::cout << all;
  return 0;
}

int cmd_calibrate(const std::string& profile_csv, const std::string& out_path) {
  std::ifstream in(profile_csv);
  if (!in) throw SimError(ErrorCode::kConfig, "cannot open '" + profile_csv + "'");
  const auto samples = read_profile_csv(in);
  const CostModel model = fit(samples);
  for (size_t i = 0; i < model.segments.size(); ++i) {
    const auto& seg = model.segments[i];
    std::printf("%-13s x >= %-8g slope %.6g us/token  intercept %.6g ms\n",
                std::string(kRegimeLabels[i]).c_str(), seg.x_start, seg.slope * 1e6,
                seg.intercept * 1e3);
  }
  write_atomic(out_path, to_json(model).dump(2) + "\n");
  std::cout << "wrote " << out_path << "\n";
  return 0;
}

int cmd_capacity(const CommonOptions& opts, std::optional<double> slo_ms) {
  ExperimentConfig cfg = load(opts);
  const double slo = slo_ms ? *slo_ms / 1e3 : cfg.slo_s;
  if (!(slo > 0.0)) throw SimError(ErrorCode::kConfig, "--slo must be > 0");
  CapacityOptions options;
  options.seeds = cfg.seeds;
  options.grid_points = cfg.grid_points;
  options.tolerance = cfg.tolerance;
  options.jobs = opts.jobs;

  std::string csv = "policy,slo_s,capacity_rps,probes\n";
  for (const auto& policy : cfg.policies) {
    Scenario s = cfg.scenario;
    s.policy = policy;
    const CapacityResult r = slo_capacity(s, slo, cfg.rate_bounds, options);
    std::printf("%-16s capacity %.4g req/s (SLO %.4g ms, %zu probes)\n",
                policy_name(policy).c_str(), r.capacity, slo * 1e3, r.probes.size());
    csv += policy_name(policy) + "," + format_value(slo) + "," + format_value(r.capacity) +
           "," + std::to_string(r.probes.size()) + "\n";
  }
  write_atomic(fs::path(cfg.out_dir) / "capacity.csv", csv);
  return 0;
}

void add_common(CLI::App* cmd, CommonOptions& opts) {
  cmd->add_option("-c,--config", opts.config, "YAML experiment config")
      ->required()
      ->check(CLI::ExistingFile);
  cmd->add_option("--seed", opts.seed, "Override the scenario seed");
  cmd->add_option("--out-dir", opts.out_dir, "Override output.dir");
  cmd->add_option("-j,--jobs", opts.jobs, "Parallel simulations")
      ->check(CLI::PositiveNumber);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Discrete-event simulator for diffusion LLM serving schedules"};
  app.require_subcommand(1);
  app.footer(config_help_text());

  CommonOptions run_opts;
  auto* run_cmd = app.add_subcommand("run", "Run one simulation");
  add_common(run_cmd, run_opts);

  CommonOptions sweep_opts;
  std::string axis;
  std::vector<double> values;
  bool resume = false;
  auto* sweep_cmd = app.add_subcommand("sweep", "Sweep batch size or arrival rate");
  add_common(sweep_cmd, sweep_opts);
  sweep_cmd->add_option("--axis", axis, "batch or rate")
      ->check(CLI::IsMember({"batch", "rate"}));
  sweep_cmd->add_option("--values", values, "Axis values")->delimiter(',');
  sweep_cmd->add_flag("--resume", resume, "Skip cells whose output already exists");

  std::string profile_csv;
  std::string model_out = "cost_model.json";
  auto* cal_cmd = app.add_subcommand("calibrate", "Fit a cost model to a latency profile");
  cal_cmd->add_option("profile_csv", profile_csv, "CSV with header x,latency_ms")
      ->required();
  cal_cmd->add_option("-o,--out", model_out, "Model JSON path");

  CommonOptions cap_opts;
  std::optional<double> slo_ms;
  auto* cap_cmd = app.add_subcommand("capacity", "SLO capacity per policy");
  add_common(cap_cmd, cap_opts);
  cap_cmd->add_option("--slo", slo_ms, "P90 TPOT objective in ms");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*run_cmd) return cmd_run(run_opts);
    if (*sweep_cmd) return cmd_sweep(sweep_opts, axis, values, resume);
    if (*cal_cmd) return cmd_calibrate(profile_csv, model_out);
    if (*cap_cmd) return cmd_capacity(cap_opts, slo_ms);
  } catch (const SimError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.code() == ErrorCode::kConfig ? kExitConfig : kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitConfig;
}

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

#include "dllmsim/workload.h"

#include <cmath>
#include <istream>
#include <map>
#include <mutex>
#include <nlohmann/json.hpp>
#include <ostream>
#include <tuple>

namespace dllmsim {

std::string_view to_string(ModelVariant variant) {
  return variant == ModelVariant::kSdar8B ? "sdar-8b" : "llada2-16b";
}

ModelVariant parse_model_variant(std::string_view text) {
  if (text == "sdar-8b") return ModelVariant::kSdar8B;
  if (text == "llada2-16b") return ModelVariant::kLlada16B;
  throw SimError(ErrorCode::kConfig, "unknown model variant '" +
                                         std::string(text) +
                                         "' (expected sdar-8b or llada2-16b)");
}

void DatasetProfile::validate() const {
  const bool ok = prompt_mean >= 1.0 && output_mean >= 1.0 &&
                  prompt_std >= 0.0 && output_std >= 0.0 && tpot_slo_s > 0.0 &&
                  tokens_per_step_mean[0] >= 1.0 &&
                  tokens_per_step_mean[1] >= 1.0 &&
                  tokens_per_step_std[0] >= 0.0 && tokens_per_step_std[1] >= 0.0;
  if (!ok) {
    throw SimError(ErrorCode::kConfig, "dataset profile '" + name +
                                           "' has means < 1 or negative stds");
  }
}

const std::vector<DatasetProfile>& dataset_presets() {
  // Input, output and BD32 tokens/step (SDAR-8B, LLaDA2.0-16B) moments.
  static const std::vector<DatasetProfile> presets = {
      {"sharegpt", 213, 508, 321, 214, {5.29, 2.51}, {9.44, 4.19}, 0.05},
      {"lmsys", 89, 133, 183, 163, {4.81, 2.52}, {8.80, 4.84}, 0.05},
      {"longbench", 4015, 2057, 116, 138, {6.06, 1.63}, {10.74, 1.90}, 0.10},
      {"gsm8k", 89, 22, 175, 67, {3.20, 2.61}, {5.68, 4.07}, 0.05},
      {"humaneval", 172, 65, 103, 62, {3.75, 6.01}, {5.96, 8.51}, 0.05},
      {"mbpp", 155, 77, 49, 28, {1.96, 3.34}, {3.33, 4.81}, 0.05},
      {"ifeval", 58, 24, 281, 264, {1.88, 1.28}, {3.90, 1.74}, 0.05},
  };
  return presets;
}

const DatasetProfile& dataset_preset(std::string_view name) {
  for (const auto& p : dataset_presets()) {
    if (p.name == name) return p;
  }
  throw SimError(ErrorCode::kConfig,
                 "unknown dataset preset '" + std::string(name) + "'");
}

CommitProfile commit_profile_for(const DatasetProfile& dataset,
                                 ModelVariant variant, int block_size) {
  const auto idx = static_cast<size_t>(variant);
  // Calibration is a grid search; sweeps ask for the same profile repeatedly.
  using Key = std::tuple<std::string, int, int, double, double>;
  static std::mutex mutex;
  static std::map<Key, CommitProfile> cache;
  const Key key{dataset.name, static_cast<int>(idx), block_size,
                dataset.tokens_per_step_mean[idx], dataset.tokens_per_step_std[idx]};
  const std::lock_guard lock(mutex);
  if (const auto it = cache.find(key); it != cache.end()) return it->second;
  CommitProfile profile =
      calibrate_profile(block_size, dataset.tokens_per_step_mean[idx],
                        dataset.tokens_per_step_std[idx]);
  profile.calibration_note =
      dataset.name + "/" + std::string(to_string(variant)) + ": " +
      profile.calibration_note;
  cache.emplace(key, profile);
  return profile;
}

int sample_length(double mean, double stddev, Rng& rng) {
  if (!(mean >= 1.0) || stddev < 0.0) {
    throw SimError(ErrorCode::kInvalidArgument,
                   "length mean must be >= 1 and std >= 0");
  }
  if (stddev == 0.0) return std::max(1, static_cast<int>(std::lround(mean)));
  const double cv = stddev / mean;
  const double sigma2 = std::log1p(cv * cv);
  const double mu = std::log(mean) - 0.5 * sigma2;
  std::lognormal_distribution<double> dist(mu, std::sqrt(sigma2));
  return std::max(1, static_cast<int>(std::lround(dist(rng))));
}

std::vector<TraceEntry> generate_trace(const DatasetProfile& dataset,
                                       double rate, int n_requests,
                                       uint64_t seed) {
  if (!(rate > 0.0) || n_requests < 1) {
    throw SimError(ErrorCode::kInvalidArgument,
                   "trace needs rate > 0 and at least one request");
  }
  Rng arrivals = make_stream(seed, 0, /*tag=*/2);
  Rng lengths = make_stream(seed, 0, /*tag=*/3);
  std::exponential_distribution<double> unit_exp(1.0);
  std::vector<TraceEntry> trace;
  trace.reserve(static_cast<size_t>(n_requests));
  double clock = 0.0;
  for (int i = 0; i < n_requests; ++i) {
    double gap = 0.0;
    while (gap <= 0.0) gap = unit_exp(arrivals);
    clock += gap / rate;
    TraceEntry e;
    e.id = i;
    e.arrival_s = clock;
    e.prompt_tokens = sample_length(dataset.prompt_mean, dataset.prompt_std, lengths);
    e.output_tokens = sample_length(dataset.output_mean, dataset.output_std, lengths);
    trace.push_back(e);
  }
  return trace;
}

void write_trace(std::ostream& out, std::span<const TraceEntry> trace) {
  for (const auto& e : trace) {
    const nlohmann::json row = {{"id", e.id},
                                {"arrival_s", e.arrival_s},
                                {"prompt_tokens", e.prompt_tokens},
                                {"output_tokens", e.output_tokens}};
    out << row.dump() << '\n';
  }
}

std::vector<TraceEntry> read_trace(std::istream& in) {
  std::vector<TraceEntry> trace;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto row = nlohmann::json::parse(line);
      TraceEntry e;
      e.id = row.at("id").get<int64_t>();
      e.arrival_s = row.at("arrival_s").get<double>();
      e.prompt_tokens = row.at("prompt_tokens").get<int>();
      e.output_tokens = row.at("output_tokens").get<int>();
      if (e.prompt_tokens < 1 || e.output_tokens < 1 || e.arrival_s < 0.0) {
        throw SimError(ErrorCode::kConfig, "trace line " + std::to_string(line_no) +
                                               ": lengths must be >= 1");
      }
      trace.push_back(e);
    } catch (const nlohmann::json::exception& ex) {
      throw SimError(ErrorCode::kConfig,
                     "trace line " + std::to_string(line_no) + ": " + ex.what());
    }
  }
  return trace;
}

}  // namespace dllmsim

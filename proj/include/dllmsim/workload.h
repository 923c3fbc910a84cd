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

#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dllmsim/commit_model.h"
#include "dllmsim/core_types.h"

namespace dllmsim {

enum class ModelVariant { kSdar8B = 0, kLlada16B = 1 };

std::string_view to_string(ModelVariant variant);
ModelVariant parse_model_variant(std::string_view text);

// Published length and tokens-per-step moments of one dataset.
struct DatasetProfile {
  std::string name;
  double prompt_mean = 1.0;
  double prompt_std = 0.0;
  double output_mean = 1.0;
  double output_std = 0.0;
  // Indexed by ModelVariant; measured at block size 32.
  std::array<double, 2> tokens_per_step_mean{1.0, 1.0};
  std::array<double, 2> tokens_per_step_std{0.0, 0.0};
  double tpot_slo_s = 0.05;

  void validate() const;
};

const std::vector<DatasetProfile>& dataset_presets();
// Throws SimError(kConfig) for unknown names.
const DatasetProfile& dataset_preset(std::string_view name);

// Commit oracle parameters fit to the dataset's tokens-per-step moments.
CommitProfile commit_profile_for(const DatasetProfile& dataset,
                                 ModelVariant variant, int block_size = 32);

// Moment-matched lognormal length, rounded and clamped to >= 1.
int sample_length(double mean, double stddev, Rng& rng);

struct TraceEntry {
  int64_t id = 0;
  double arrival_s = 0.0;
  int prompt_tokens = 1;
  int output_tokens = 1;

  bool operator==(const TraceEntry&) const = default;
};

// Poisson arrivals at the given rate. Interarrivals are unit exponentials
// divided by the rate, so traces at different rates with the same seed are
// time-rescaled copies with identical lengths.
std::vector<TraceEntry> generate_trace(const DatasetProfile& dataset,
                                       double rate, int n_requests,
                                       uint64_t seed);

void write_trace(std::ostream& out, std::span<const TraceEntry> trace);
std::vector<TraceEntry> read_trace(std::istream& in);

}  // namespace dllmsim

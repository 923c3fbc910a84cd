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

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "dllmsim/sim_engine.h"
#include "dllmsim/slo_capacity.h"

namespace dllmsim {

// Everything a CLI command needs: the scenario plus experiment-level knobs.
struct ExperimentConfig {
  Scenario scenario;
  // Policies compared by sweep and capacity; defaults to {scenario.policy}.
  std::vector<SchedulerPolicy> policies;
  // Seeds per sweep cell / capacity probe; defaults to {scenario.seed}.
  std::vector<uint64_t> seeds;
  SweepAxis axis = SweepAxis::kBatch;
  std::vector<double> values;
  double slo_s = 0.05;
  RateBounds rate_bounds;
  int grid_points = 8;
  double tolerance = 0.02;
  std::string out_dir = "out";
};

struct ConfigKeyDoc {
  std::string_view key;
  std::string_view type;
  std::string_view default_value;
  std::string_view description;
};

// Every accepted key, in documentation order. Nested keys use dots.
const std::vector<ConfigKeyDoc>& config_key_docs();
std::string config_help_text();

// Parses YAML text. Errors (unknown keys, bad types, invalid values) throw
// SimError(kConfig) with "source:line:column: message" when a location is
// known. Relative file paths inside the config resolve against base_dir.
ExperimentConfig parse_config(std::string_view yaml_text,
                              std::string_view source_name = "<config>",
                              const std::string& base_dir = ".");
ExperimentConfig load_config(const std::string& path);

}  // namespace dllmsim

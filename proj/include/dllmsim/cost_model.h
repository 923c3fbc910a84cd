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
#include <iosfwd>
#include <nlohmann/json_fwd.hpp>
#include <span>
#include <string_view>
#include <vector>

namespace dllmsim {

// One affine regime: latency = intercept + slope * x for x >= x_start.
struct CostSegment {
  double x_start = 0.0;    // tokens
  double slope = 0.0;      // seconds per token
  double intercept = 0.0;  // seconds
};

inline constexpr std::array<std::string_view, 3> kRegimeLabels = {
    "memory_bound", "transition", "compute_bound"};

// Piecewise-affine iteration latency over total computed tokens.
struct CostModel {
  std::array<CostSegment, 3> segments;
  // Optional surcharge per token of context (prompt + generated) summed over
  // the batch. Zero unless a profile calls for it.
  double context_surcharge = 0.0;

  // Throws SimError(kInvalidArgument) when continuity, monotonicity or slope
  // ordering is violated.
  void validate() const;
  // Returns a copy with every latency multiplied by factor.
  CostModel scaled(double factor) const;
};

// Builds a continuous model from the origin intercept, three slopes and the
// two breakpoints.
CostModel make_cost_model(double intercept_s, std::array<double, 3> slopes_s,
                          double breakpoint1, double breakpoint2);

// 35 ms fixed overhead, {10, 30, 100} us/token, knees at 128 and 512 tokens.
CostModel default_cost_model();

double latency(const CostModel& model, double computed_tokens);

struct ProfileSample {
  double x = 0.0;
  double latency_s = 0.0;
};

inline constexpr size_t kMinProfileSamples = 9;

// Least-squares fit of a continuous, nondecreasing, convex three-segment
// model. Breakpoints are searched over the sample x values.
CostModel fit(std::span<const ProfileSample> samples);

// CSV with header x,latency_ms.
std::vector<ProfileSample> read_profile_csv(std::istream& in);
void write_profile_csv(std::ostream& out, std::span<const ProfileSample> samples);

nlohmann::json to_json(const CostModel& model);
CostModel cost_model_from_json(const nlohmann::json& j);

}  // namespace dllmsim

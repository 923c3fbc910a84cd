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

#include <nlohmann/json_fwd.hpp>
#include <span>
#include <vector>

#include "dllmsim/core_types.h"

namespace dllmsim {

struct RunSummary {
  double decode_throughput = 0.0;  // committed tokens per decode second
  double tpot_p50 = 0.0;
  double tpot_p90 = 0.0;
  double tpot_p99 = 0.0;
  double mean_tu = 0.0;
  double mean_batch = 0.0;
  double mean_chunk = 0.0;
  double median_chunk = 0.0;
  int min_chunk = 0;
  int completed = 0;
  int tpot_eligible = 0;
  int64_t decode_iterations = 0;
};

// (finish - first token) / (committed - 1). Throws SingleToken when the
// request produced fewer than two tokens.
double tpot(const RequestSummary& request);

// Nearest-rank percentile, p in (0, 100].
double percentile_nearest_rank(std::vector<double> values, double p);

// Throughput and TU over Decode records; TPOT percentiles over requests with
// at least two tokens. Throws EmptyRun if no request is TPOT-eligible.
RunSummary summarize(std::span<const IterationRecord> iterations,
                     std::span<const RequestSummary> requests);

// Committed tokens over decode time, summed per request instead of per
// record. Equals summarize().decode_throughput when every commit in the
// records belongs to a logged request.
double per_request_throughput(std::span<const IterationRecord> iterations,
                              std::span<const RequestSummary> requests);

nlohmann::json to_json(const RunSummary& summary);

}  // namespace dllmsim

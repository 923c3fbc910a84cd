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

#include "dllmsim/metrics.h"

#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>

namespace dllmsim {

double tpot(const RequestSummary& request) {
  if (request.committed < 2) {
    throw SimError(ErrorCode::kSingleToken,
                   "TPOT undefined for request " + std::to_string(request.id));
  }
  return (request.finish_time - request.first_token_time) /
         static_cast<double>(request.committed - 1);
}

double percentile_nearest_rank(std::vector<double> values, double p) {
  if (values.empty() || !(p > 0.0 && p <= 100.0)) {
    throw SimError(ErrorCode::kInvalidArgument,
                   "percentile needs values and p in (0, 100]");
  }
  const auto n = values.size();
  auto rank = static_cast<size_t>(std::ceil(p / 100.0 * static_cast<double>(n)));
  rank = std::clamp<size_t>(rank, 1, n);
  std::nth_element(values.begin(), values.begin() + static_cast<long>(rank - 1),
                   values.end());
  return values[rank - 1];
}

RunSummary summarize(std::span<const IterationRecord> iterations,
                     std::span<const RequestSummary> requests) {
  RunSummary out;
  double decode_time = 0.0;
  int64_t committed = 0;
  int64_t computed = 0;
  double batch_total = 0.0;
  std::vector<double> chunks;
  for (const auto& r : iterations) {
    if (r.kind != IterationKind::kDecode) continue;
    decode_time += r.latency;
    committed += r.committed_tokens;
    computed += r.computed_tokens;
    batch_total += r.batch_size;
    chunks.push_back(r.chunk_size);
  }
  out.decode_iterations = static_cast<int64_t>(chunks.size());
  if (decode_time > 0.0) out.decode_throughput = committed / decode_time;
  if (computed > 0) {
    out.mean_tu = static_cast<double>(committed) / static_cast<double>(computed);
  }
  if (!chunks.empty()) {
    out.mean_batch = batch_total / static_cast<double>(chunks.size());
    double chunk_total = 0.0;
    for (const double c : chunks) chunk_total += c;
    out.mean_chunk = chunk_total / static_cast<double>(chunks.size());
    out.min_chunk = static_cast<int>(*std::min_element(chunks.begin(), chunks.end()));
    out.median_chunk = percentile_nearest_rank(chunks, 50.0);
  }

  std::vector<double> tpots;
  for (const auto& req : requests) {
    ++out.completed;
    if (req.committed >= 2) tpots.push_back(tpot(req));
  }
  out.tpot_eligible = static_cast<int>(tpots.size());
  if (tpots.empty()) {
    throw SimError(ErrorCode::kEmptyRun, "no request produced two or more tokens");
  }
  out.tpot_p50 = percentile_nearest_rank(tpots, 50.0);
  out.tpot_p90 = percentile_nearest_rank(tpots, 90.0);
  out.tpot_p99 = percentile_nearest_rank(tpots, 99.0);
  return out;
}

double per_request_throughput(std::span<const IterationRecord> iterations,
                              std::span<const RequestSummary> requests) {
  double decode_time = 0.0;
  for (const auto& r : iterations) {
    if (r.kind == IterationKind::kDecode) decode_time += r.latency;
  }
  int64_t committed = 0;
  for (const auto& req : requests) committed += req.committed;
  return decode_time > 0.0 ? committed / decode_time : 0.0;
}

nlohmann::json to_json(const RunSummary& s) {
  return {{"decode_throughput", s.decode_throughput},
          {"tpot_p50", s.tpot_p50},
          {"tpot_p90", s.tpot_p90},
          {"tpot_p99", s.tpot_p99},
          {"mean_tu", s.mean_tu},
          {"mean_batch", s.mean_batch},
          {"mean_chunk", s.mean_chunk},
          {"median_chunk", s.median_chunk},
          {"min_chunk", s.min_chunk},
          {"completed", s.completed},
          {"tpot_eligible", s.tpot_eligible},
          {"decode_iterations", s.decode_iterations}};
}

}  // namespace dllmsim

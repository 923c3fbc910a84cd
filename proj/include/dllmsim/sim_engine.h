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
#include <functional>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "dllmsim/commit_model.h"
#include "dllmsim/core_types.h"
#include "dllmsim/cost_model.h"
#include "dllmsim/metrics.h"
#include "dllmsim/scheduler.h"
#include "dllmsim/workload.h"

namespace dllmsim {

struct OpenLoop {
  double arrival_rate = 1.0;  // requests per second
  int n_requests = 1000;
  // Arrivals after this time are dropped; in-flight work still drains.
  std::optional<double> duration_s;
  // Fraction of requests (by id) excluded at each end of the trace.
  double exclude_fraction = 0.1;
};

struct ClosedLoop {
  int concurrency = 1;
  // 0 picks max(200, 8 * concurrency).
  int total_requests = 0;
  bool stagger = true;
};

struct FixedTrace {
  std::vector<TraceEntry> requests;
};

using LoadMode = std::variant<OpenLoop, ClosedLoop, FixedTrace>;

struct Scenario {
  LoadMode load = ClosedLoop{};
  int block_size = 32;
  WindowRule window_rule = WindowRule::kInBlock;
  bool reorganize = true;
  SchedulerPolicy policy = ElasticChunked{default_candidates(32), 0.05};
  DatasetProfile dataset = dataset_preset("sharegpt");
  ModelVariant model = ModelVariant::kSdar8B;
  // Defaults to the dataset's calibrated profile.
  std::optional<CommitProfile> commit_profile;
  // When set, commits are replayed instead of sampled.
  std::optional<CommitTrace> replay;
  ReplayOracle::Mode replay_mode = ReplayOracle::Mode::kVerbatim;
  CostModel cost = default_cost_model();
  uint64_t seed = 1;
  int max_batch = 256;
  // Elastic warm-up length in request steps observed by the estimator; the
  // largest candidate chunk is used until then.
  int warmup_iterations = 32;
  double estimator_alpha = 0.95;
  int estimator_min_observations = 8;
  // Defaults to the commit profile's q.
  std::optional<double> prior_q;
  bool include_prefill = true;
  bool check_invariants = false;
  bool record_steps = false;

  // Throws SimError(kConfig) naming the offending field.
  void validate() const;
};

struct RunResult {
  std::vector<IterationRecord> iterations;
  // Completed requests in completion order.
  std::vector<RequestSummary> request_log;
  // Requests still running when a closed-loop run stopped.
  std::vector<RequestSummary> in_flight;
  // Request ids in [measure_first, measure_last] enter TPOT statistics.
  int64_t measure_first = 0;
  int64_t measure_last = INT64_MAX;
  // One JSON line per request step when Scenario::record_steps is set.
  std::vector<std::string> step_trace;
};

// Scenario::commit_profile, else the dataset preset fitted at window 32.
CommitProfile effective_commit_profile(const Scenario& scenario);

RunResult run(const Scenario& scenario);

// Completed requests inside the measurement window.
std::vector<RequestSummary> measured_requests(const RunResult& result);

RunSummary summarize(const RunResult& result);

struct SweepRow {
  std::string policy;
  double axis_value = 0.0;
  uint64_t seed = 0;
  RunSummary summary;
};

enum class SweepAxis { kBatch, kRate };

std::string_view to_string(SweepAxis axis);

// One scenario per (policy, value, seed) cell with the load replaced by the
// axis value. Cells run on up to `jobs` threads; rows come back in
// (policy, value, seed) order regardless of scheduling.
std::vector<SweepRow> sweep(const Scenario& base, SweepAxis axis,
                            const std::vector<double>& values,
                            const std::vector<SchedulerPolicy>& policies,
                            const std::vector<uint64_t>& seeds, int jobs = 1);

std::vector<SweepRow> sweep_closed_loop(
    const Scenario& base, const std::vector<int>& batch_sizes,
    const std::vector<SchedulerPolicy>& policies, int jobs = 1);

std::vector<SweepRow> sweep_open_loop(const Scenario& base,
                                      const std::vector<double>& rates,
                                      const std::vector<SchedulerPolicy>& policies,
                                      int jobs = 1);

// Scenario for one sweep cell.
Scenario cell_scenario(const Scenario& base, SweepAxis axis, double value,
                       const SchedulerPolicy& policy, uint64_t seed);

inline constexpr std::string_view kSweepCsvHeader =
    "policy,axis,value,seed,decode_throughput,tpot_p50,tpot_p90,tpot_p99,"
    "mean_tu,mean_batch,mean_chunk,median_chunk,min_chunk,completed";

std::string to_csv_row(const SweepRow& row, SweepAxis axis);

// Runs fn(i) for i in [0, n) on up to `jobs` threads. The first exception
// is rethrown after all workers stop.
void parallel_for(int n, int jobs, const std::function<void(int)>& fn);

}  // namespace dllmsim

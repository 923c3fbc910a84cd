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

#include <gtest/gtest.h>

#include <algorithm>
#include <map>

#include "dllmsim/metrics.h"
#include "dllmsim/sim_engine.h"

namespace dllmsim {
namespace {

TraceEntry entry(int64_t id, double arrival, int output, int prompt = 1) {
  return TraceEntry{id, arrival, prompt, output};
}

// Every request commits `per_step` earliest positions per step.
CommitTrace earliest_trace(const std::vector<TraceEntry>& reqs, int per_step, int block) {
  CommitTrace t;
  for (const auto& r : reqs) {
    const int padded = (r.output_tokens + block - 1) / block * block;
    for (int s = 0; s * per_step < padded; ++s) {
      std::vector<Position> pos;
      for (int p = s * per_step; p < std::min(padded, (s + 1) * per_step); ++p) pos.push_back(p);
      t.set(r.id, s, pos);
    }
  }
  return t;
}

std::map<int64_t, double> finish_times(const RunResult& r) {
  std::map<int64_t, double> out;
  for (const auto& q : r.request_log) out[q.id] = q.finish_time;
  return out;
}

TEST(SimEngine, ArSoloTotalTime) {
  Scenario s;
  s.policy = AutoregressivePolicy{};
  s.load = ClosedLoop{1, 10, false};
  s.include_prefill = false;
  s.dataset.output_mean = 50;
  s.dataset.output_std = 0;
  const RunResult r = run(s);
  ASSERT_EQ(r.request_log.size(), 10u);
  EXPECT_NEAR(r.request_log.back().finish_time, 500 * latency(s.cost, 1), 1e-9);
  EXPECT_EQ(r.iterations.size(), 500u);
}

// Two requests (16 and 8 tokens) under a 16-token capacity cost model where
// one step takes max(1, x / 16) seconds and each step commits the four
// earliest masked positions. Hand-derived completion times per schedule.
class ToySchedule : public ::testing::Test {
 protected:
  Scenario toy(const SchedulerPolicy& policy) {
    const std::vector<TraceEntry> reqs{entry(0, 0.0, 16), entry(1, 0.0, 8)};
    Scenario s;
    s.block_size = 16;
    s.policy = policy;
    s.load = FixedTrace{reqs};
    s.cost = make_cost_model(1.0, {0.0, 1.0 / 16, 1.0 / 16}, 16, 512);
    s.replay = earliest_trace(reqs, 4, 16);
    s.replay_mode = ReplayOracle::Mode::kVerbatim;
    s.include_prefill = false;
    s.warmup_iterations = 0;
    s.prior_q = 0.8;
    s.check_invariants = true;
    return s;
  }
};

TEST_F(ToySchedule, Autoregressive) {
  const auto t = finish_times(run(toy(AutoregressivePolicy{})));
  EXPECT_NEAR(t.at(1), 8.0, 1e-12);
  EXPECT_NEAR(t.at(0), 16.0, 1e-12);
}

TEST_F(ToySchedule, BlockDiffusion) {
  const auto t = finish_times(run(toy(FixedBlock{16})));
  EXPECT_NEAR(t.at(1), 4.0, 1e-12);
  EXPECT_NEAR(t.at(0), 6.0, 1e-12);
}

TEST_F(ToySchedule, Elastic) {
  const auto t = finish_times(run(toy(ElasticChunked{default_candidates(16), 0.05})));
  EXPECT_NEAR(t.at(1), 2.0, 1e-12);
  EXPECT_NEAR(t.at(0), 4.0, 1e-12);
}

TEST(SimEngine, ElasticUsesFullBlockAtVanishingLoad) {
  Scenario s;
  s.load = OpenLoop{0.01, 30, std::nullopt, 0.1};
  const RunSummary sum = summarize(run(s));
  EXPECT_EQ(sum.min_chunk, 32);
  EXPECT_EQ(sum.mean_batch, 1.0);
}

TEST(SimEngine, Deterministic) {
  Scenario s;
  s.load = OpenLoop{4.0, 120, std::nullopt, 0.1};
  s.seed = 7;
  const RunResult a = run(s);
  const RunResult b = run(s);
  EXPECT_EQ(a.iterations, b.iterations);
  EXPECT_EQ(a.request_log, b.request_log);
  s.seed = 8;
  EXPECT_NE(run(s).iterations, a.iterations);
}

TEST(SimEngine, TokenConservationClosedLoop) {
  for (const auto& policy : {SchedulerPolicy{AutoregressivePolicy{}}, SchedulerPolicy{FixedChunk{8}},
                             SchedulerPolicy{BlockLevelBatch{32}},
                             SchedulerPolicy{ElasticChunked{default_candidates(32), 0.05}}}) {
    Scenario s;
    s.policy = policy;
    s.load = ClosedLoop{12, 60, true};
    s.check_invariants = true;
    const RunResult r = run(s);
    int64_t recorded = 0;
    for (const auto& it : r.iterations) recorded += it.committed_tokens;
    int64_t logged = 0;
    for (const auto& q : r.request_log) {
      EXPECT_EQ(q.committed, q.output_tokens);
      logged += q.committed;
    }
    for (const auto& q : r.in_flight) logged += q.committed;
    EXPECT_EQ(recorded, logged) << policy_name(policy);
    EXPECT_GE(r.request_log.size(), 60u);
  }
}

TEST(SimEngine, OpenLoopCompletesEveryRequest) {
  Scenario s;
  s.load = OpenLoop{6.0, 200, std::nullopt, 0.1};
  const RunResult r = run(s);
  EXPECT_EQ(r.request_log.size(), 200u);
  EXPECT_TRUE(r.in_flight.empty());
  EXPECT_EQ(r.measure_first, 20);
  EXPECT_EQ(r.measure_last, 179);
  EXPECT_EQ(measured_requests(r).size(), 160u);
}

TEST(SimEngine, ClockMonotone) {
  Scenario s;
  s.load = OpenLoop{2.0, 100, std::nullopt, 0.1};
  const RunResult r = run(s);
  for (size_t i = 1; i < r.iterations.size(); ++i) {
    const auto& prev = r.iterations[i - 1];
    ASSERT_GE(r.iterations[i].clock_start, prev.clock_start + prev.latency - 1e-9);
  }
  for (const auto& q : r.request_log) {
    EXPECT_LE(q.arrival_time, q.prefill_done_time);
    EXPECT_LE(q.prefill_done_time, q.first_token_time);
    EXPECT_LE(q.first_token_time, q.finish_time);
  }
}

TEST(SimEngine, PrefillRunsBeforeNextDecode) {
  Scenario s;
  s.policy = FixedChunk{8};
  s.load = FixedTrace{{entry(0, 0.0, 400, 64), entry(1, 0.5, 50, 200)}};
  const RunResult r = run(s);
  auto it = std::find_if(r.iterations.begin(), r.iterations.end(),
                         [](const IterationRecord& x) { return x.clock_start >= 0.5; });
  ASSERT_NE(it, r.iterations.end());
  EXPECT_EQ(it->kind, IterationKind::kPrefill);
  EXPECT_EQ(it->computed_tokens, 200);
  EXPECT_EQ(it->latency, latency(s.cost, 200));
  ASSERT_NE(it + 1, r.iterations.end());
  EXPECT_EQ((it + 1)->batch_size, 2);
}

TEST(SimEngine, BlockLevelBatchFreezesMembership) {
  const std::vector<TraceEntry> reqs{entry(0, 0.0, 64), entry(1, 0.001, 32)};
  Scenario s;
  s.load = FixedTrace{reqs};
  s.replay = earliest_trace(reqs, 1, 32);
  s.include_prefill = false;
  s.policy = BlockLevelBatch{32};
  const auto frozen = run(s);
  const double block_time = 32 * latency(s.cost, 32);
  for (const auto& q : frozen.request_log) {
    if (q.id == 1) EXPECT_GT(q.first_token_time, block_time - 1e-9);
  }
  s.policy = FixedBlock{32};
  for (const auto& q : run(s).request_log) {
    if (q.id == 1) EXPECT_LT(q.first_token_time, block_time);
  }
}

TEST(SimEngine, BlockLevelIdleMembersWait) {
  // Request 1 finishes its block in 4 steps; request 0 needs 32. Request 0's
  // second block must not start before the epoch ends, and the idle member
  // still counts toward the batch.
  const std::vector<TraceEntry> reqs{entry(0, 0.0, 64), entry(1, 0.0, 64)};
  CommitTrace t = earliest_trace({reqs[0]}, 1, 32);
  const CommitTrace fast = earliest_trace({reqs[1]}, 8, 32);
  t.steps[1] = fast.steps.at(1);
  Scenario s;
  s.load = FixedTrace{reqs};
  s.replay = t;
  s.include_prefill = false;
  s.policy = BlockLevelBatch{32};
  s.check_invariants = true;
  const RunResult r = run(s);
  ASSERT_GE(r.iterations.size(), 32u);
  for (int i = 0; i < 32; ++i) EXPECT_EQ(r.iterations[static_cast<size_t>(i)].batch_size, 2);
  for (int i = 4; i < 32; ++i) {
    EXPECT_EQ(r.iterations[static_cast<size_t>(i)].computed_tokens, 32) << i;
  }
}

TEST(SimEngine, EmptyReplayIsNonTerminating) {
  Scenario s;
  s.load = FixedTrace{{entry(0, 0.0, 10)}};
  CommitTrace stalled;
  for (int step = 0; step < 100; ++step) stalled.set(0, step, {});
  s.replay = stalled;
  s.policy = FixedBlock{32};
  try {
    run(s);
    FAIL();
  } catch (const SimError& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNonTerminating);
  }
}

TEST(SimEngine, ValidationNamesKey) {
  Scenario s;
  s.load = OpenLoop{0.0, 10, std::nullopt, 0.1};
  try {
    run(s);
    FAIL();
  } catch (const SimError& e) {
    EXPECT_EQ(e.code(), ErrorCode::kConfig);
    EXPECT_NE(std::string(e.what()).find("load.arrival_rate"), std::string::npos);
  }
  s.load = ClosedLoop{0, 0, true};
  EXPECT_THROW(run(s), SimError);
  s.load = ClosedLoop{};
  s.max_batch = 0;
  EXPECT_THROW(run(s), SimError);
}

TEST(SimEngine, RecordStepsEmitsOneLinePerRequestStep) {
  Scenario s;
  s.load = FixedTrace{{entry(0, 0.0, 40), entry(1, 0.0, 20)}};
  s.record_steps = true;
  const RunResult r = run(s);
  int64_t steps = 0;
  for (const auto& q : r.request_log) steps += q.decode_steps;
  EXPECT_EQ(static_cast<int64_t>(r.step_trace.size()), steps);
}

TEST(Sweep, OrderingAndParallelEquality) {
  Scenario base;
  base.dataset.output_mean = 64;
  const std::vector<SchedulerPolicy> policies{AutoregressivePolicy{}, FixedChunk{8}};
  const std::vector<double> values{1, 4, 16};
  const auto serial = sweep(base, SweepAxis::kBatch, values, policies, {1, 2}, 1);
  const auto parallel = sweep(base, SweepAxis::kBatch, values, policies, {1, 2}, 4);
  ASSERT_EQ(serial.size(), 12u);
  ASSERT_EQ(parallel.size(), 12u);
  for (size_t i = 0; i < serial.size(); ++i) {
    EXPECT_EQ(to_csv_row(serial[i], SweepAxis::kBatch), to_csv_row(parallel[i], SweepAxis::kBatch));
    EXPECT_EQ(serial[i].policy, i < 6 ? "ar" : "fixed_chunk:8");
    EXPECT_EQ(serial[i].axis_value, values[(i / 2) % 3]);
    EXPECT_EQ(serial[i].seed, i % 2 + 1);
  }
  EXPECT_EQ(kSweepCsvHeader.substr(0, 17), "policy,axis,value");
}

TEST(Sweep, TpotNondecreasingInRate) {
  Scenario base;
  base.load = OpenLoop{1.0, 300, std::nullopt, 0.1};
  const std::vector<SchedulerPolicy> policies{FixedBlock{32},
                                              ElasticChunked{default_candidates(32), 0.05}};
  for (const uint64_t seed : {1u, 2u}) {
    const auto rows = sweep(base, SweepAxis::kRate, {1, 3, 6, 10}, policies, {seed}, 4);
    for (size_t i = 1; i < rows.size(); ++i) {
      if (rows[i].policy != rows[i - 1].policy) continue;
      EXPECT_GE(rows[i].summary.tpot_p90, rows[i - 1].summary.tpot_p90)
          << rows[i].policy << " rate " << rows[i].axis_value << " seed " << seed;
    }
  }
}

TEST(Sweep, ParallelForPropagatesErrors) {
  EXPECT_THROW(parallel_for(16, 4,
                            [](int i) {
                              if (i == 7) throw SimError(ErrorCode::kConfig, "boom");
                            }),
               SimError);
}

}  // namespace
}  // namespace dllmsim

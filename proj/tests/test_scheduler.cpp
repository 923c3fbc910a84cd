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

#include <numeric>

#include "dllmsim/commit_model.h"
#include "dllmsim/decode_engine.h"
#include "dllmsim/scheduler.h"
#include "dllmsim/workload.h"
#include "oracles.h"

namespace dllmsim {
namespace {

CommitEstimator zero_estimator(int n, double alpha = 0.95) {
  CommitEstimator est;
  est.hist.assign(static_cast<size_t>(n), 0.0);
  est.alpha = alpha;
  est.min_observations = 0;
  return est;
}

double sharegpt_q() { return commit_profile_for(dataset_preset("sharegpt"), ModelVariant::kSdar8B).q; }

TEST(Observe, EwmaArithmetic) {
  CommitEstimator est = zero_estimator(4);
  const std::vector<int> ranks{0, 1};
  observe(est, 4, ranks);
  EXPECT_NEAR(est.hist[0], 0.05, 1e-15);
  EXPECT_NEAR(est.hist[1], 0.05, 1e-15);
  EXPECT_EQ(est.hist[2], 0.0);
  EXPECT_EQ(est.hist[3], 0.0);
  EXPECT_EQ(est.observations, 1);
}

TEST(Observe, RankZeroConvergesGeometrically) {
  CommitEstimator est = zero_estimator(4);
  const std::vector<int> ranks{0};
  for (int n = 1; n <= 100; ++n) {
    observe(est, 1, ranks);
    ASSERT_NEAR(est.hist[0], 1.0 - std::pow(0.95, n), 1e-12);
  }
  EXPECT_EQ(est.hist[1], 0.0);
}

TEST(Observe, RanksOutsideWindowUntouched) {
  CommitEstimator est = zero_estimator(8);
  est.hist[5] = 0.7;
  const std::vector<int> ranks{0, 1, 2};
  observe(est, 3, ranks);
  EXPECT_EQ(est.hist[5], 0.7);
}

TEST(Observe, MatchesCalibratedOracle) {
  const CommitProfile profile = commit_profile_for(dataset_preset("sharegpt"), ModelVariant::kSdar8B);
  CommitEstimator est = CommitEstimator::with_geometric_prior(32, 0.5);
  Rng rng = make_stream(8, 0);
  std::vector<Position> window(32);
  std::iota(window.begin(), window.end(), 0);
  double sum_f = 0.0;
  int counted = 0;
  for (int step = 0; step < 10000; ++step) {
    const double m = sample_rate_multiplier(profile, rng);
    const auto commits = commit_step(profile, m, window, rng);
    std::vector<int> ranks(commits.begin(), commits.end());
    observe(est, 32, ranks);
    if (step >= 1000) {
      sum_f += est.prefix(32);
      ++counted;
    }
    for (const double h : est.hist) ASSERT_TRUE(h >= 0.0 && h <= 1.0);
  }
  EXPECT_NEAR(sum_f / counted / 5.29, 1.0, 0.10);
  EXPECT_GT(est.hist[0], 0.99);
}

TEST(Estimator, PrefixMonotone) {
  const CommitEstimator est = CommitEstimator::with_geometric_prior(32, 0.8);
  for (int w = 1; w <= 32; ++w) EXPECT_GE(est.prefix(w), est.prefix(w - 1));
  EXPECT_NEAR(est.prefix(32), oracle::geometric_sum(0.8, 32), 1e-12);
}

TEST(ExpectedCommits, ChunkTwoFloor) {
  CommitEstimator est = zero_estimator(32);
  est.hist[0] = 1.0;
  EXPECT_NEAR(expected_commits(est, 2), 1.0, 1e-12);
}

TEST(ExpectedCommits, DegenerateHistogram) {
  CommitEstimator est = zero_estimator(32);
  est.hist[0] = 1.0;
  for (int c = 2; c <= 32; ++c) EXPECT_NEAR(expected_commits(est, c), 1.0, 1e-12);
}

TEST(ExpectedCommits, MatchesScanOracleAndBounds) {
  for (const double q : {0.3, 0.6, 0.75, sharegpt_q(), 0.9}) {
    const auto est = CommitEstimator::with_geometric_prior(32, q);
    for (int c = 2; c <= 32; c += 2) {
      const double n = expected_commits(est, c);
      const double ref = oracle::fixed_point_by_scan(
          [&](int w) { return oracle::geometric_sum(q, w); }, c);
      if (std::isnan(ref)) {
        // No integer-consistent rounding: the result must sit between the
        // prefixes of its two neighbouring roundings.
        EXPECT_GE(n, est.prefix(c - static_cast<int>(std::ceil(n))) - 1e-9) << q << " " << c;
        EXPECT_LE(n, est.prefix(c - static_cast<int>(std::floor(n))) + 1e-9) << q << " " << c;
      } else {
        EXPECT_NEAR(n, ref, 0.01 * ref) << q << " " << c;
      }
      EXPECT_LE(n, c - 1.0);
      EXPECT_LE(n, est.prefix(c) + 1e-12);
    }
  }
}

// Long-run chunked decoding at a fixed chunk (window not cut by blocks)
// should commit about expected_commits per step.
TEST(ExpectedCommits, SteadyStateSimulation) {
  const double q = sharegpt_q();
  const auto est = CommitEstimator::with_geometric_prior(32, q);
  StochasticOracle oracle(CommitProfile{q, 0.0, ""});
  for (const int c : {8, 16, 32}) {
    Request r = make_request(0, 0.0, 1, 20000, 32, make_stream(4, static_cast<uint64_t>(c)));
    const ChunkedStreaming mode{32, WindowRule::kOutBlock, true};
    int64_t steps = 0;
    while (!r.finished()) {
      chunked_step(r, c, mode, oracle);
      ++steps;
    }
    const double per_step = 20000.0 / static_cast<double>(steps);
    EXPECT_NEAR(per_step / expected_commits(est, c), 1.0, 0.10) << c;
  }
}

TEST(ExpectedCommits, RejectsTinyChunk) {
  const auto est = CommitEstimator::with_geometric_prior(32, 0.8);
  try {
    expected_commits(est, 1);
    FAIL();
  } catch (const SimError& e) {
    EXPECT_EQ(e.code(), ErrorCode::kChunkTooSmall);
  }
}

TEST(Estimator, PriorUntilWarm) {
  auto est = CommitEstimator::with_geometric_prior(8, 0.5, 0.95, 3);
  EXPECT_FALSE(est.warm());
  const std::vector<int> all{0, 1, 2, 3, 4, 5, 6, 7};
  observe(est, 8, all);
  observe(est, 8, all);
  EXPECT_NEAR(est.prefix(8), oracle::geometric_sum(0.5, 8), 1e-12);
  observe(est, 8, all);
  EXPECT_TRUE(est.warm());
  EXPECT_GT(est.prefix(8), oracle::geometric_sum(0.5, 8));
}

ElasticChunked elastic() { return ElasticChunked{default_candidates(32), 0.05}; }

int brute_force_best(const CommitEstimator& est, const CostModel& cost, int b,
                     const std::vector<int>& candidates) {
  int best = candidates.front();
  double best_score = -1.0;
  for (const int c : candidates) {
    const double s = expected_commits(est, c) * b / latency(cost, double(b) * c);
    if (s > best_score) {
      best_score = s;
      best = c;
    }
  }
  return best;
}

TEST(SelectChunk, HeavyLoadPicksSmallest) {
  const auto est = CommitEstimator::with_geometric_prior(32, sharegpt_q());
  const CostModel cost = default_cost_model();
  const auto choice = select_chunk(est, cost, 256, elastic(), std::nullopt);
  EXPECT_EQ(choice.chunk, brute_force_best(est, cost, 256, default_candidates(32)));
  EXPECT_EQ(choice.chunk, 2);
  EXPECT_EQ(choice.table.size(), 16u);
}

TEST(SelectChunk, LightLoadPicksLargest) {
  const auto est = CommitEstimator::with_geometric_prior(32, sharegpt_q());
  EXPECT_EQ(select_chunk(est, default_cost_model(), 1, elastic(), std::nullopt).chunk, 32);
}

TEST(SelectChunk, TiesGoToSmaller) {
  CommitEstimator est = zero_estimator(32);
  est.hist[0] = 1.0;
  const CostModel flat = make_cost_model(0.01, {0.0, 0.0, 0.0}, 128, 512);
  EXPECT_EQ(select_chunk(est, flat, 4, elastic(), std::nullopt).chunk, 2);
  const ElasticChunked two{{6, 10}, 0.0};
  EXPECT_EQ(select_chunk(est, flat, 4, two, std::nullopt).chunk, 6);
}

TEST(SelectChunk, Errors) {
  const auto est = CommitEstimator::with_geometric_prior(32, 0.8);
  try {
    select_chunk(est, default_cost_model(), 4, ElasticChunked{{}, 0.05}, std::nullopt);
    FAIL();
  } catch (const SimError& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNoCandidates);
  }
  EXPECT_THROW(select_chunk(est, default_cost_model(), 0, elastic(), std::nullopt), SimError);
}

TEST(SelectChunk, HysteresisKeepsNearOptimalPrevious) {
  const auto est = CommitEstimator::with_geometric_prior(32, sharegpt_q());
  const CostModel cost = default_cost_model();
  for (int b = 1; b <= 256; ++b) {
    const auto free = select_chunk(est, cost, b, elastic(), std::nullopt);
    for (const auto& row : free.table) {
      const auto held = select_chunk(est, cost, b, elastic(), row.chunk);
      const double best = free.table[static_cast<size_t>(free.chunk / 2 - 1)].score;
      if (best > row.score * 1.05) {
        EXPECT_EQ(held.chunk, free.chunk);
      } else {
        EXPECT_EQ(held.chunk, row.chunk);
      }
    }
  }
}

TEST(SelectChunk, NoThrashing) {
  const auto est = CommitEstimator::with_geometric_prior(32, sharegpt_q());
  const CostModel cost = default_cost_model();
  for (int b = 1; b <= 256; ++b) {
    std::optional<int> prev;
    std::vector<int> seq;
    for (int i = 0; i < 6; ++i) {
      prev = select_chunk(est, cost, b, elastic(), prev).chunk;
      seq.push_back(*prev);
    }
    for (size_t i = 1; i < seq.size(); ++i) EXPECT_EQ(seq[i], seq[0]);
  }
}

TEST(SelectChunk, InvariantToCostScaling) {
  const auto est = CommitEstimator::with_geometric_prior(32, sharegpt_q());
  const CostModel cost = default_cost_model();
  for (const double k : {0.1, 3.0, 1000.0}) {
    const CostModel scaled = cost.scaled(k);
    for (int b = 1; b <= 256; b += 5) {
      EXPECT_EQ(select_chunk(est, cost, b, elastic(), std::nullopt).chunk,
                select_chunk(est, scaled, b, elastic(), std::nullopt).chunk);
    }
  }
}

TEST(SelectChunk, NonincreasingInBatch) {
  const auto est = CommitEstimator::with_geometric_prior(32, sharegpt_q());
  int prev = 1 << 30;
  for (int b = 1; b <= 256; ++b) {
    const int c = select_chunk(est, default_cost_model(), b, elastic(), std::nullopt).chunk;
    EXPECT_LE(c, prev) << b;
    prev = c;
  }
}

TEST(FormBatch, IterationLevelKeepsRunning) {
  std::deque<int64_t> queue;
  std::vector<int64_t> running{1, 2, 3};
  const auto admitted = form_batch(queue, running, SchedulerPolicy{FixedChunk{8}}, 256, false);
  EXPECT_TRUE(admitted.empty());
  EXPECT_EQ(running.size(), 3u);
}

TEST(FormBatch, FcfsUpToCapacity) {
  std::deque<int64_t> queue{4, 5, 6};
  std::vector<int64_t> running{1};
  const auto admitted = form_batch(queue, running, SchedulerPolicy{AutoregressivePolicy{}}, 3, false);
  EXPECT_EQ(admitted, (std::vector<int64_t>{4, 5}));
  EXPECT_EQ(running, (std::vector<int64_t>{1, 4, 5}));
  EXPECT_EQ(queue, (std::deque<int64_t>{6}));
}

TEST(FormBatch, BlockLevelWaitsForBoundary) {
  std::deque<int64_t> queue{9};
  std::vector<int64_t> running{1, 2, 3, 4};
  const SchedulerPolicy policy{BlockLevelBatch{32}};
  EXPECT_TRUE(freezes_membership(policy));
  EXPECT_TRUE(form_batch(queue, running, policy, 256, false).empty());
  EXPECT_EQ(running.size(), 4u);
  EXPECT_EQ(form_batch(queue, running, policy, 256, true), (std::vector<int64_t>{9}));
}

TEST(Policies, ParseAndName) {
  EXPECT_EQ(policy_name(parse_policy("elastic", 32)), "elastic");
  EXPECT_EQ(std::get<ElasticChunked>(parse_policy("elastic", 16)).candidates,
            (std::vector<int>{2, 4, 6, 8, 10, 12, 14, 16}));
  EXPECT_EQ(policy_name(parse_policy("fixed_chunk:8", 32)), "fixed_chunk:8");
  EXPECT_EQ(policy_name(parse_policy("fixed_block", 32)), "fixed_block:32");
  EXPECT_EQ(policy_name(parse_policy("block_level:16", 32)), "block_level:16");
  EXPECT_EQ(policy_name(parse_policy("ar", 32)), "ar");
  for (const char* bad : {"", "fast", "fixed_chunk", "fixed_chunk:x", "fixed_chunk:1",
                          "fixed_chunk:64", "ar:2"}) {
    EXPECT_THROW(parse_policy(bad, 32), SimError) << bad;
  }
}

TEST(Policies, CandidateValidation) {
  EXPECT_THROW(validate(SchedulerPolicy{ElasticChunked{{3, 4}, 0.05}}, 32), SimError);
  EXPECT_THROW(validate(SchedulerPolicy{ElasticChunked{{4, 2}, 0.05}}, 32), SimError);
  EXPECT_THROW(validate(SchedulerPolicy{ElasticChunked{{2, 34}, 0.05}}, 32), SimError);
  EXPECT_NO_THROW(validate(SchedulerPolicy{ElasticChunked{{6, 22}, 0.05}}, 32));
}

TEST(Policies, DecodeModes) {
  EXPECT_TRUE(std::holds_alternative<Autoregressive>(
      decode_mode_for(AutoregressivePolicy{}, 32, WindowRule::kInBlock)));
  const auto bd = std::get<BlockDiffusion>(decode_mode_for(FixedBlock{16}, 32, WindowRule::kInBlock));
  EXPECT_EQ(bd.block_size, 16);
  const auto cs = std::get<ChunkedStreaming>(decode_mode_for(FixedChunk{8}, 32, WindowRule::kOutBlock));
  EXPECT_EQ(cs.block_size, 32);
  EXPECT_EQ(cs.window_rule, WindowRule::kOutBlock);
}

}  // namespace
}  // namespace dllmsim

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
#include <cmath>
#include <numeric>
#include <sstream>

#include "dllmsim/commit_model.h"
#include "oracles.h"

namespace dllmsim {
namespace {

std::vector<Position> iota_window(int n, Position start = 0) {
  std::vector<Position> w(static_cast<size_t>(n));
  std::iota(w.begin(), w.end(), start);
  return w;
}

double mc_mean(const CommitProfile& p, double m, int window, int trials, uint64_t seed) {
  Rng rng = make_stream(seed, 0);
  const auto w = iota_window(window);
  double total = 0.0;
  for (int i = 0; i < trials; ++i) total += static_cast<double>(commit_step(p, m, w, rng).size());
  return total / trials;
}

TEST(CommitStep, SingletonWindowAlwaysCommits) {
  CommitProfile p{0.3, 0.0, ""};
  Rng rng = make_stream(1, 0);
  const std::vector<Position> w{5};
  for (int i = 0; i < 100; ++i) EXPECT_EQ(commit_step(p, 1.0, w, rng), w);
}

TEST(CommitStep, CalibratedMeanMatchesClosedForm) {
  const CommitProfile p{0.8108, 0.0, ""};
  const double expected = oracle::geometric_sum(0.8108, 32);
  EXPECT_NEAR(expected, 5.29, 0.015);
  const double mean = mc_mean(p, 1.0, 32, 100000, 11);
  EXPECT_NEAR(mean / expected, 1.0, 0.02);
  EXPECT_NEAR(expected_window_commits(0.8108, 1.0, 32), expected, 1e-12);
}

TEST(CommitStep, VanishingDecayCommitsOnlyEarliest) {
  const CommitProfile p{1e-300, 0.0, ""};
  Rng rng = make_stream(2, 0);
  const auto w = iota_window(16, 40);
  for (int i = 0; i < 200; ++i) {
    EXPECT_EQ(commit_step(p, 1.0, w, rng), std::vector<Position>{40});
  }
}

TEST(CommitStep, EmptyWindowIsAnError) {
  const CommitProfile p{0.5, 0.0, ""};
  Rng rng = make_stream(3, 0);
  try {
    commit_step(p, 1.0, {}, rng);
    FAIL();
  } catch (const SimError& e) {
    EXPECT_EQ(e.code(), ErrorCode::kEmptyWindow);
  }
}

TEST(CommitStep, RejectsUnorderedWindow) {
  const CommitProfile p{0.5, 0.0, ""};
  Rng rng = make_stream(3, 0);
  const std::vector<Position> w{3, 2};
  EXPECT_THROW(commit_step(p, 1.0, w, rng), SimError);
}

TEST(CommitStep, ProgressSubsetAndDeterminism) {
  const CommitProfile p{0.85, 0.0, ""};
  const std::vector<Position> w{1, 4, 5, 9, 12, 13, 20};
  Rng a = make_stream(9, 1);
  Rng b = make_stream(9, 1);
  for (int i = 0; i < 500; ++i) {
    const auto ca = commit_step(p, 1.7, w, a);
    const auto cb = commit_step(p, 1.7, w, b);
    ASSERT_EQ(ca, cb);
    ASSERT_FALSE(ca.empty());
    EXPECT_EQ(ca.front(), w.front());
    EXPECT_TRUE(std::is_sorted(ca.begin(), ca.end()));
    for (const Position x : ca) EXPECT_TRUE(std::binary_search(w.begin(), w.end(), x));
  }
}

TEST(CommitStep, ConsumesOneDrawPerNonLeadingRank) {
  const CommitProfile p{0.5, 0.0, ""};
  Rng used = make_stream(4, 0);
  Rng ref = make_stream(4, 0);
  commit_step(p, 1.0, iota_window(6), used);
  ref.discard(5);
  EXPECT_TRUE(used == ref);
}

TEST(CommitStep, WindowCurveIncreasingAndConcave) {
  const CommitProfile p{0.8108, 0.0, ""};
  constexpr int kTrials = 40000;
  std::vector<double> means;
  std::vector<double> se;
  for (const int w : {4, 12, 20, 28}) {
    Rng rng = make_stream(77, static_cast<uint64_t>(w));
    const auto window = iota_window(w);
    double s = 0.0;
    double s2 = 0.0;
    for (int i = 0; i < kTrials; ++i) {
      const double k = static_cast<double>(commit_step(p, 1.0, window, rng).size());
      s += k;
      s2 += k * k;
    }
    const double mean = s / kTrials;
    means.push_back(mean);
    se.push_back(std::sqrt((s2 / kTrials - mean * mean) / kTrials));
  }
  for (size_t i = 0; i + 1 < means.size(); ++i) EXPECT_LT(means[i], means[i + 1]);
  for (size_t i = 0; i + 2 < means.size(); ++i) {
    const double eps = 3.0 * (se[i] + 2 * se[i + 1] + se[i + 2]);
    EXPECT_GE(means[i + 1] - means[i], means[i + 2] - means[i + 1] - eps);
  }
}

TEST(CalibrateQ, UnitTargetGivesZero) { EXPECT_EQ(calibrate_q(32, 1.0), 0.0); }

TEST(CalibrateQ, ShareGptTargets) {
  const double q_sdar = calibrate_q(32, 5.29);
  EXPECT_NEAR(q_sdar, 0.8108, 5e-4);
  EXPECT_NEAR(oracle::geometric_sum(q_sdar, 32), 5.29, 1e-9);
  const double q_llada = calibrate_q(32, 2.51);
  EXPECT_NEAR(q_llada, 0.6016, 5e-4);
  EXPECT_NEAR(oracle::geometric_sum(q_llada, 32), 2.51, 1e-9);
}

TEST(CalibrateQ, FullBlockClampsBelowOne) {
  EXPECT_DOUBLE_EQ(calibrate_q(32, 32.0), 1.0 - 1e-9);
}

TEST(CalibrateQ, InfeasibleTargets) {
  for (const double t : {0.5, 33.0, std::nan("")}) {
    try {
      calibrate_q(32, t);
      FAIL() << t;
    } catch (const SimError& e) {
      EXPECT_EQ(e.code(), ErrorCode::kInfeasibleTarget);
    }
  }
}

TEST(RateMultiplier, ZeroSigmaIsOne) {
  CommitProfile p{0.5, 0.0, ""};
  Rng rng = make_stream(1, 1);
  for (int i = 0; i < 10; ++i) EXPECT_EQ(sample_rate_multiplier(p, rng), 1.0);
}

TEST(RateMultiplier, MedianOneAndClamped) {
  CommitProfile p{0.5, 0.6, ""};
  Rng rng = make_stream(5, 1);
  std::vector<double> draws(100000);
  for (auto& d : draws) d = sample_rate_multiplier(p, rng);
  std::nth_element(draws.begin(), draws.begin() + 50000, draws.end());
  EXPECT_GE(draws[50000], 0.97);
  EXPECT_LE(draws[50000], 1.03);
  CommitProfile wide{0.5, 3.0, ""};
  for (int i = 0; i < 10000; ++i) {
    const double m = sample_rate_multiplier(wide, rng);
    ASSERT_GE(m, kMinRateMultiplier);
    ASSERT_LE(m, kMaxRateMultiplier);
  }
}

TEST(WindowMoments, ZeroSigmaMatchesPoissonBinomial) {
  const auto pmf = oracle::commit_count_pmf(0.7, 20);
  double mean = 0.0;
  double m2 = 0.0;
  for (size_t k = 0; k < pmf.size(); ++k) {
    mean += k * pmf[k];
    m2 += k * k * pmf[k];
  }
  const auto m = window_commit_moments(0.7, 0.0, 20);
  EXPECT_NEAR(m.mean, mean, 1e-9);
  EXPECT_NEAR(m.stddev, std::sqrt(m2 - mean * mean), 1e-9);
}

TEST(WindowMoments, MixtureMatchesMonteCarlo) {
  const CommitProfile p{0.75, 0.8, ""};
  const auto m = window_commit_moments(p.q, p.rate_jitter_sigma, 32);
  Rng rng = make_stream(21, 0);
  const auto w = iota_window(32);
  double s = 0.0;
  double s2 = 0.0;
  constexpr int kTrials = 100000;
  for (int i = 0; i < kTrials; ++i) {
    const double mult = sample_rate_multiplier(p, rng);
    const double k = static_cast<double>(commit_step(p, mult, w, rng).size());
    s += k;
    s2 += k * k;
  }
  const double mean = s / kTrials;
  EXPECT_NEAR(m.mean / mean, 1.0, 0.02);
  EXPECT_NEAR(m.stddev / std::sqrt(s2 / kTrials - mean * mean), 1.0, 0.05);
}

TEST(CalibrateProfile, HitsTargetMean) {
  const auto p = calibrate_profile(32, 5.29, 9.44);
  EXPECT_GT(p.q, 0.0);
  EXPECT_LT(p.q, 1.0);
  EXPECT_GE(p.rate_jitter_sigma, 0.0);
  EXPECT_NEAR(window_commit_moments(p.q, p.rate_jitter_sigma, 32).mean, 5.29, 1e-6);
  EXPECT_FALSE(p.calibration_note.empty());
  const auto flat = calibrate_profile(32, 5.29, 0.0);
  EXPECT_EQ(flat.rate_jitter_sigma, 0.0);
  EXPECT_NEAR(flat.q, calibrate_q(32, 5.29), 1e-9);
}

TEST(ReplayOracleFn, Intersections) {
  CommitTrace t;
  t.set(1, 0, {3, 4});
  t.set(1, 1, {});
  t.set(1, 2, {7});
  EXPECT_EQ(replay_oracle(t, 1, 0, std::vector<Position>{3, 4, 5}), (std::vector<Position>{3, 4}));
  EXPECT_TRUE(replay_oracle(t, 1, 1, std::vector<Position>{0, 1, 2}).empty());
  EXPECT_TRUE(replay_oracle(t, 1, 2, std::vector<Position>{3, 4}).empty());
  try {
    replay_oracle(t, 1, 3, std::vector<Position>{3});
    FAIL();
  } catch (const SimError& e) {
    EXPECT_EQ(e.code(), ErrorCode::kTraceExhausted);
  }
  EXPECT_THROW(replay_oracle(t, 2, 0, std::vector<Position>{3}), SimError);
}

TEST(ReplayOracleClass, CumulativeKeepsDeferredPositions) {
  CommitTrace t;
  t.set(0, 0, {0, 1, 5});
  t.set(0, 1, {2});
  Request r = make_request(0, 0.0, 1, 8, 8, make_stream(1, 0));
  ReplayOracle cumulative(t, ReplayOracle::Mode::kCumulative);
  ReplayOracle verbatim(t, ReplayOracle::Mode::kVerbatim);
  const std::vector<Position> narrow{0, 1, 2};
  EXPECT_EQ(verbatim.decide(r, narrow), (std::vector<Position>{0, 1}));
  r.steps = 1;
  const std::vector<Position> later{2, 3, 4, 5};
  EXPECT_EQ(verbatim.decide(r, later), (std::vector<Position>{2}));
  EXPECT_EQ(cumulative.decide(r, later), (std::vector<Position>{2, 5}));
}

TEST(CommitTraceIo, RoundTrip) {
  CommitTrace t;
  t.set(3, 0, {0, 2});
  t.set(3, 1, {1});
  t.set(9, 0, {});
  t.set(9, 1, {0, 1, 2, 3});
  std::stringstream buf;
  write_commit_trace(buf, t);
  const CommitTrace back = read_commit_trace(buf);
  EXPECT_EQ(back, t);
  EXPECT_EQ(back.step_count(9), 2);
}

TEST(CommitTraceIo, MalformedLine) {
  std::stringstream buf("{\"request_id\": 1, \"step\": 0}\n");
  EXPECT_THROW(read_commit_trace(buf), SimError);
}

TEST(CommitProfileTest, Validation) {
  EXPECT_THROW((CommitProfile{1.0, 0.0, ""}.validate()), SimError);
  EXPECT_THROW((CommitProfile{-0.1, 0.0, ""}.validate()), SimError);
  EXPECT_THROW((CommitProfile{0.5, -1.0, ""}.validate()), SimError);
  EXPECT_NO_THROW((CommitProfile{0.5, 0.2, ""}.validate()));
}

}  // namespace
}  // namespace dllmsim

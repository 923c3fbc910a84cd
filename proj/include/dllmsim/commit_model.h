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
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "dllmsim/core_types.h"

namespace dllmsim {

// Parameters of the stochastic stand-in for confidence-threshold commitment.
// Window rank j >= 1 commits independently with probability min(1, m * q^j);
// rank 0 always commits.
struct CommitProfile {
  double q = 0.8;
  double rate_jitter_sigma = 0.0;
  std::string calibration_note;

  void validate() const;
};

// Stochastic commit decision for one request step over an ordered window of
// masked positions. Consumes exactly window.size() - 1 uniforms from rng.
std::vector<Position> commit_step(const CommitProfile& profile,
                                  double rate_multiplier,
                                  std::span<const Position> window, Rng& rng);

// Expected commit count of commit_step for a window of the given size.
double expected_window_commits(double q, double rate_multiplier, int window);

// Solves (1 - q^B) / (1 - q) = target for q by bisection.
double calibrate_q(int block_size, double target_mean_commits);

// Lognormal per-request rate factor, median 1, clamped to [0.25, 4].
double sample_rate_multiplier(const CommitProfile& profile, Rng& rng);

inline constexpr double kMinRateMultiplier = 0.25;
inline constexpr double kMaxRateMultiplier = 4.0;

struct CommitMoments {
  double mean = 0.0;
  double stddev = 0.0;
};

// Exact mean/std of the per-step commit count at a fixed window, mixed over
// the clamped lognormal rate factor (deterministic quantile quadrature).
CommitMoments window_commit_moments(double q, double sigma, int window);

// Joint fit of (q, sigma): for each sigma on a coarse grid, q is bisected so
// the mixed mean hits target_mean; the sigma whose std is closest to
// target_std wins.
CommitProfile calibrate_profile(int block_size, double target_mean,
                                double target_std);

// Per-request list of per-step committed positions.
struct CommitTrace {
  std::map<int64_t, std::vector<std::vector<Position>>> steps;

  void set(int64_t request_id, int step, std::vector<Position> positions);
  const std::vector<Position>* find(int64_t request_id, int step) const;
  int step_count(int64_t request_id) const;

  bool operator==(const CommitTrace&) const = default;
};

// Verbatim replay: the trace entry intersected with the window.
std::vector<Position> replay_oracle(const CommitTrace& trace, int64_t request_id,
                                    int step_index,
                                    std::span<const Position> window);

void write_commit_trace(std::ostream& out, const CommitTrace& trace);
CommitTrace read_commit_trace(std::istream& in);

// Decides which window positions commit on one request step.
class CommitOracle {
 public:
  virtual ~CommitOracle() = default;
  virtual std::vector<Position> decide(Request& request,
                                       std::span<const Position> window) = 0;
};

class StochasticOracle final : public CommitOracle {
 public:
  explicit StochasticOracle(CommitProfile profile);
  std::vector<Position> decide(Request& request,
                               std::span<const Position> window) override;
  const CommitProfile& profile() const { return profile_; }

 private:
  CommitProfile profile_;
};

// Replays a CommitTrace keyed by (request id, request step). In cumulative
// mode every position listed at or before the current step stays
// committable, so commits deferred by a narrower window are not lost.
class ReplayOracle final : public CommitOracle {
 public:
  enum class Mode { kVerbatim, kCumulative };

  explicit ReplayOracle(CommitTrace trace, Mode mode = Mode::kVerbatim);
  std::vector<Position> decide(Request& request,
                               std::span<const Position> window) override;

 private:
  CommitTrace trace_;
  Mode mode_;
};

}  // namespace dllmsim

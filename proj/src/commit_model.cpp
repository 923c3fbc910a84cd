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

#include "dllmsim/commit_model.h"

#include <algorithm>
#include <boost/math/distributions/normal.hpp>
#include <cmath>
#include <istream>
#include <limits>
#include <nlohmann/json.hpp>
#include <ostream>

namespace dllmsim {
namespace {

void check_window(std::span<const Position> window) {
  if (window.empty()) {
    throw SimError(ErrorCode::kEmptyWindow, "commit window is empty");
  }
  for (size_t i = 1; i < window.size(); ++i) {
    if (window[i] <= window[i - 1]) {
      throw SimError(ErrorCode::kInvalidArgument,
                     "window positions must be strictly increasing");
    }
  }
}

double geometric_window_sum(double q, int window) {
  if (window <= 0) return 0.0;
  if (q <= 0.0) return 1.0;
  return (1.0 - std::pow(q, window)) / (1.0 - q);
}

// Quantile midpoints of the clamped lognormal rate factor.
std::vector<double> multiplier_nodes(double sigma) {
  if (sigma <= 0.0) return {1.0};
  constexpr int kNodes = 400;
  const boost::math::normal_distribution<double> unit;
  std::vector<double> nodes;
  nodes.reserve(kNodes);
  for (int i = 0; i < kNodes; ++i) {
    const double z = boost::math::quantile(unit, (i + 0.5) / kNodes);
    nodes.push_back(
        std::clamp(std::exp(sigma * z), kMinRateMultiplier, kMaxRateMultiplier));
  }
  return nodes;
}

CommitMoments mixed_moments(double q, std::span<const double> nodes, int window) {
  double mean = 0.0;
  double second = 0.0;
  for (const double m : nodes) {
    double mu = window > 0 ? 1.0 : 0.0;
    double var = 0.0;
    double qj = 1.0;
    for (int j = 1; j < window; ++j) {
      qj *= q;
      const double p = std::min(1.0, m * qj);
      mu += p;
      var += p * (1.0 - p);
    }
    mean += mu;
    second += var + mu * mu;
  }
  mean /= static_cast<double>(nodes.size());
  second /= static_cast<double>(nodes.size());
  return {mean, std::sqrt(std::max(0.0, second - mean * mean))};
}

}  // namespace

void CommitProfile::validate() const {
  if (!(q >= 0.0 && q < 1.0)) {
    throw SimError(ErrorCode::kInvalidArgument, "commit q must lie in [0, 1)");
  }
  if (!(rate_jitter_sigma >= 0.0)) {
    throw SimError(ErrorCode::kInvalidArgument,
                   "rate_jitter_sigma must be nonnegative");
  }
}

std::vector<Position> commit_step(const CommitProfile& profile,
                                  double rate_multiplier,
                                  std::span<const Position> window, Rng& rng) {
  check_window(window);
  if (!(rate_multiplier > 0.0)) {
    throw SimError(ErrorCode::kInvalidArgument, "rate multiplier must be > 0");
  }
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  std::vector<Position> out{window.front()};
  double qj = 1.0;
  for (size_t j = 1; j < window.size(); ++j) {
    qj *= profile.q;
    const double p = std::min(1.0, rate_multiplier * qj);
    if (uniform(rng) < p) out.push_back(window[j]);
  }
  return out;
}

double expected_window_commits(double q, double rate_multiplier, int window) {
  if (window <= 0) return 0.0;
  double total = 1.0;
  double qj = 1.0;
  for (int j = 1; j < window; ++j) {
    qj *= q;
    total += std::min(1.0, rate_multiplier * qj);
  }
  return total;
}

double calibrate_q(int block_size, double target_mean_commits) {
  if (block_size < 1 || !(target_mean_commits >= 1.0) ||
      target_mean_commits > block_size) {
    throw SimError(ErrorCode::kInfeasibleTarget,
                   "target mean commits must lie in [1, block_size]");
  }
  constexpr double kUpper = 1.0 - 1e-9;
  if (target_mean_commits == 1.0) return 0.0;
  if (target_mean_commits >= geometric_window_sum(kUpper, block_size)) {
    return kUpper;
  }
  double lo = 0.0;
  double hi = kUpper;
  for (int i = 0; i < 200 && hi - lo > 1e-15; ++i) {
    const double mid = 0.5 * (lo + hi);
    const double value = geometric_window_sum(mid, block_size);
    if (std::abs(value - target_mean_commits) < 1e-12) return mid;
    (value < target_mean_commits ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

double sample_rate_multiplier(const CommitProfile& profile, Rng& rng) {
  if (profile.rate_jitter_sigma <= 0.0) return 1.0;
  std::normal_distribution<double> normal(0.0, profile.rate_jitter_sigma);
  return std::clamp(std::exp(normal(rng)), kMinRateMultiplier,
                    kMaxRateMultiplier);
}

CommitMoments window_commit_moments(double q, double sigma, int window) {
  const auto nodes = multiplier_nodes(sigma);
  return mixed_moments(q, nodes, window);
}

CommitProfile calibrate_profile(int block_size, double target_mean,
                                double target_std) {
  if (block_size < 2 || !(target_mean >= 1.0) || target_mean > block_size ||
      target_std < 0.0) {
    throw SimError(ErrorCode::kInfeasibleTarget,
                   "commit profile target outside feasible range");
  }
  CommitProfile best;
  double best_gap = std::numeric_limits<double>::infinity();
  for (int step = 0; step <= 10; ++step) {
    const double sigma = 0.1 * step;
    const auto nodes = multiplier_nodes(sigma);
    double lo = 0.0;
    double hi = 1.0 - 1e-9;
    if (mixed_moments(lo, nodes, block_size).mean > target_mean) continue;
    if (mixed_moments(hi, nodes, block_size).mean < target_mean) continue;
    for (int i = 0; i < 60; ++i) {
      const double mid = 0.5 * (lo + hi);
      (mixed_moments(mid, nodes, block_size).mean < target_mean ? lo : hi) = mid;
    }
    const double q = 0.5 * (lo + hi);
    const double gap =
        std::abs(mixed_moments(q, nodes, block_size).stddev - target_std);
    if (gap < best_gap - 1e-12) {
      best_gap = gap;
      best.q = q;
      best.rate_jitter_sigma = sigma;
    }
  }
  if (!std::isfinite(best_gap)) {
    throw SimError(ErrorCode::kInfeasibleTarget,
                   "no jitter level reaches the target mean");
  }
  const auto fitted = window_commit_moments(best.q, best.rate_jitter_sigma,
                                            block_size);
  best.calibration_note = "fit to mean " + std::to_string(target_mean) +
                          " std " + std::to_string(target_std) +
                          " at window " + std::to_string(block_size) +
                          "; achieved std " + std::to_string(fitted.stddev);
  return best;
}

void CommitTrace::set(int64_t request_id, int step,
                      std::vector<Position> positions) {
  auto& per_request = steps[request_id];
  if (static_cast<int>(per_request.size()) <= step) {
    per_request.resize(static_cast<size_t>(step) + 1);
  }
  std::sort(positions.begin(), positions.end());
  positions.erase(std::unique(positions.begin(), positions.end()),
                  positions.end());
  per_request[static_cast<size_t>(step)] = std::move(positions);
}

const std::vector<Position>* CommitTrace::find(int64_t request_id,
                                               int step) const {
  const auto it = steps.find(request_id);
  if (it == steps.end() || step < 0 ||
      step >= static_cast<int>(it->second.size())) {
    return nullptr;
  }
  return &it->second[static_cast<size_t>(step)];
}

int CommitTrace::step_count(int64_t request_id) const {
  const auto it = steps.find(request_id);
  return it == steps.end() ? 0 : static_cast<int>(it->second.size());
}

std::vector<Position> replay_oracle(const CommitTrace& trace, int64_t request_id,
                                    int step_index,
                                    std::span<const Position> window) {
  const auto* entry = trace.find(request_id, step_index);
  if (entry == nullptr) {
    throw SimError(ErrorCode::kTraceExhausted,
                   "no trace entry for request " + std::to_string(request_id) +
                       " step " + std::to_string(step_index));
  }
  std::vector<Position> out;
  for (const Position p : window) {
    if (std::binary_search(entry->begin(), entry->end(), p)) out.push_back(p);
  }
  return out;
}

void write_commit_trace(std::ostream& out, const CommitTrace& trace) {
  for (const auto& [id, per_step] : trace.steps) {
    for (size_t step = 0; step < per_step.size(); ++step) {
      nlohmann::json row = {{"request_id", id},
                            {"step", step},
                            {"positions", per_step[step]}};
      out << row.dump() << '\n';
    }
  }
}

CommitTrace read_commit_trace(std::istream& in) {
  CommitTrace trace;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto row = nlohmann::json::parse(line);
      trace.set(row.at("request_id").get<int64_t>(), row.at("step").get<int>(),
                row.at("positions").get<std::vector<Position>>());
    } catch (const nlohmann::json::exception& e) {
      throw SimError(ErrorCode::kConfig, "commit trace line " +
                                             std::to_string(line_no) + ": " +
                                             e.what());
    }
  }
  return trace;
}

StochasticOracle::StochasticOracle(CommitProfile profile)
    : profile_(std::move(profile)) {
  profile_.validate();
}

std::vector<Position> StochasticOracle::decide(Request& request,
                                               std::span<const Position> window) {
  return commit_step(profile_, request.rate_multiplier, window, request.rng);
}

ReplayOracle::ReplayOracle(CommitTrace trace, Mode mode)
    : trace_(std::move(trace)), mode_(mode) {}

std::vector<Position> ReplayOracle::decide(Request& request,
                                           std::span<const Position> window) {
  if (mode_ == Mode::kVerbatim) {
    return replay_oracle(trace_, request.id, request.steps, window);
  }
  const int available =
      std::min(request.steps + 1, trace_.step_count(request.id));
  std::vector<Position> out;
  for (const Position p : window) {
    for (int s = 0; s < available; ++s) {
      const auto* entry = trace_.find(request.id, s);
      if (std::binary_search(entry->begin(), entry->end(), p)) {
        out.push_back(p);
        break;
      }
    }
  }
  return out;
}

}  // namespace dllmsim

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

#include "dllmsim/scheduler.h"

#include <algorithm>
#include <cmath>
#include <charconv>

namespace dllmsim {
namespace {

int parse_int(std::string_view text, std::string_view what) {
  int value = 0;
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) {
    throw SimError(ErrorCode::kConfig,
                   "invalid " + std::string(what) + " '" + std::string(text) + "'");
  }
  return value;
}

}  // namespace

CommitEstimator CommitEstimator::with_geometric_prior(int block_size,
                                                      double prior_q,
                                                      double alpha,
                                                      int64_t min_observations) {
  if (block_size < 1 || !(alpha > 0.0 && alpha < 1.0)) {
    throw SimError(ErrorCode::kInvalidArgument,
                   "estimator needs block_size >= 1 and alpha in (0, 1)");
  }
  CommitEstimator est;
  est.alpha = alpha;
  est.min_observations = min_observations;
  est.prior.resize(static_cast<size_t>(block_size));
  double qj = 1.0;
  for (auto& p : est.prior) {
    p = qj;
    qj *= prior_q;
  }
  // Ranks never observed (small chunks only see low ranks) keep the prior.
  est.hist = est.prior;
  return est;
}

double CommitEstimator::prefix(int window) const {
  const auto& h = warm() || prior.empty() ? hist : prior;
  const int n = std::clamp(window, 0, static_cast<int>(h.size()));
  double total = 0.0;
  for (int j = 0; j < n; ++j) total += h[static_cast<size_t>(j)];
  return total;
}

void observe(CommitEstimator& est, int window_size,
             std::span<const int> committed_ranks) {
  const int n = std::min(window_size, static_cast<int>(est.hist.size()));
  std::vector<char> hit(static_cast<size_t>(std::max(n, 0)), 0);
  for (const int r : committed_ranks) {
    if (r >= 0 && r < n) hit[static_cast<size_t>(r)] = 1;
  }
  for (int j = 0; j < n; ++j) {
    auto& h = est.hist[static_cast<size_t>(j)];
    h = est.alpha * h + (1.0 - est.alpha) * (hit[static_cast<size_t>(j)] ? 1.0 : 0.0);
  }
  ++est.observations;
}

double expected_commits(const CommitEstimator& est, int chunk_size) {
  if (chunk_size < 2) {
    throw SimError(ErrorCode::kChunkTooSmall, "chunk size must be >= 2");
  }
  const double cap = chunk_size - 1.0;
  double n = std::clamp(est.prefix(chunk_size), 0.0, cap);
  for (int it = 0; it < 10; ++it) {
    const int window = chunk_size - static_cast<int>(std::lround(n));
    const double next = 0.5 * n + 0.5 * est.prefix(window);
    if (std::abs(next - n) < 1e-12) {
      n = next;
      break;
    }
    n = next;
  }
  return std::clamp(n, 0.0, cap);
}

std::vector<int> default_candidates(int block_size) {
  std::vector<int> out;
  for (int c = 2; c <= block_size; c += 2) out.push_back(c);
  return out;
}

void validate(const SchedulerPolicy& policy, int block_size) {
  auto fail = [](const std::string& msg) {
    throw SimError(ErrorCode::kConfig, msg);
  };
  if (const auto* e = std::get_if<ElasticChunked>(&policy)) {
    if (e->candidates.empty()) {
      throw SimError(ErrorCode::kNoCandidates, "elastic policy has no candidates");
    }
    for (size_t i = 0; i < e->candidates.size(); ++i) {
      const int c = e->candidates[i];
      if (c < 2 || c > block_size || c % 2 != 0) {
        fail("elastic candidates must be even integers in [2, block_size]");
      }
      if (i > 0 && c <= e->candidates[i - 1]) {
        fail("elastic candidates must be strictly increasing");
      }
    }
    if (!(e->hysteresis_eps >= 0.0)) fail("hysteresis_eps must be >= 0");
  } else if (const auto* f = std::get_if<FixedChunk>(&policy)) {
    if (f->chunk < 2 || f->chunk > block_size) {
      fail("fixed chunk must lie in [2, block_size]");
    }
  } else if (const auto* b = std::get_if<FixedBlock>(&policy)) {
    if (b->block < 2) fail("fixed block size must be >= 2");
  } else if (const auto* l = std::get_if<BlockLevelBatch>(&policy)) {
    if (l->block < 2) fail("block-level batch size must be >= 2");
  }
}

std::string policy_name(const SchedulerPolicy& policy) {
  return std::visit(
      [](const auto& p) -> std::string {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, ElasticChunked>) {
          return "elastic";
        } else if constexpr (std::is_same_v<T, FixedChunk>) {
          return "fixed_chunk:" + std::to_string(p.chunk);
        } else if constexpr (std::is_same_v<T, FixedBlock>) {
          return "fixed_block:" + std::to_string(p.block);
        } else if constexpr (std::is_same_v<T, BlockLevelBatch>) {
          return "block_level:" + std::to_string(p.block);
        } else {
          return "ar";
        }
      },
      policy);
}

SchedulerPolicy parse_policy(std::string_view text, int block_size) {
  const auto colon = text.find(':');
  const std::string_view kind = text.substr(0, colon);
  const std::string_view arg =
      colon == std::string_view::npos ? std::string_view{} : text.substr(colon + 1);
  SchedulerPolicy policy;
  if (kind == "elastic" && arg.empty()) {
    policy = ElasticChunked{default_candidates(block_size), 0.05};
  } else if (kind == "ar" && arg.empty()) {
    policy = AutoregressivePolicy{};
  } else if (kind == "fixed_chunk") {
    policy = FixedChunk{parse_int(arg, "chunk size")};
  } else if (kind == "fixed_block") {
    policy = FixedBlock{arg.empty() ? block_size : parse_int(arg, "block size")};
  } else if (kind == "block_level") {
    policy = BlockLevelBatch{arg.empty() ? block_size : parse_int(arg, "block size")};
  } else {
    throw SimError(ErrorCode::kConfig, "unknown policy '" + std::string(text) +
                                           "' (expected elastic, fixed_chunk:<c>, "
                                           "fixed_block:<B>, block_level:<B>, ar)");
  }
  validate(policy, block_size);
  return policy;
}

DecodeMode decode_mode_for(const SchedulerPolicy& policy, int block_size,
                           WindowRule window_rule) {
  if (std::holds_alternative<AutoregressivePolicy>(policy)) {
    return Autoregressive{};
  }
  if (const auto* b = std::get_if<FixedBlock>(&policy)) {
    return BlockDiffusion{b->block, false};
  }
  if (const auto* l = std::get_if<BlockLevelBatch>(&policy)) {
    return BlockDiffusion{l->block, false};
  }
  return ChunkedStreaming{block_size, window_rule, true};
}

ChunkChoice select_chunk(const CommitEstimator& est, const CostModel& cost,
                         int batch_size, const ElasticChunked& policy,
                         std::optional<int> previous_chunk) {
  if (policy.candidates.empty()) {
    throw SimError(ErrorCode::kNoCandidates, "no candidate chunk sizes");
  }
  if (batch_size < 1) {
    throw SimError(ErrorCode::kInvalidArgument, "batch size must be >= 1");
  }
  ChunkChoice choice;
  const ChunkScore* best = nullptr;
  const ChunkScore* previous = nullptr;
  choice.table.reserve(policy.candidates.size());
  for (const int c : policy.candidates) {
    ChunkScore s;
    s.chunk = c;
    s.expected_commits = expected_commits(est, c);
    s.latency = latency(cost, static_cast<double>(batch_size) * c);
    s.score = s.latency > 0.0 ? s.expected_commits * batch_size / s.latency
                              : s.expected_commits * batch_size;
    choice.table.push_back(s);
  }
  for (const auto& s : choice.table) {
    if (best == nullptr || s.score > best->score) best = &s;
    if (previous_chunk && s.chunk == *previous_chunk) previous = &s;
  }
  choice.chunk = best->chunk;
  if (previous != nullptr &&
      !(best->score > previous->score * (1.0 + policy.hysteresis_eps))) {
    choice.chunk = previous->chunk;
  }
  return choice;
}

bool freezes_membership(const SchedulerPolicy& policy) {
  return std::holds_alternative<BlockLevelBatch>(policy);
}

std::vector<int64_t> form_batch(std::deque<int64_t>& queue,
                                std::vector<int64_t>& running,
                                const SchedulerPolicy& policy, int max_batch,
                                bool at_block_boundary) {
  std::vector<int64_t> admitted;
  if (freezes_membership(policy) && !at_block_boundary) return admitted;
  while (!queue.empty() && static_cast<int>(running.size()) < max_batch) {
    running.push_back(queue.front());
    admitted.push_back(queue.front());
    queue.pop_front();
  }
  return admitted;
}

}  // namespace dllmsim

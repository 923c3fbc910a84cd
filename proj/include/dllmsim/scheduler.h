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
#include <deque>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "dllmsim/core_types.h"
#include "dllmsim/cost_model.h"

namespace dllmsim {

// Online mapping from window rank to commit probability. hist[j] is an EWMA
// of "window rank j committed" over observed request steps.
struct CommitEstimator {
  std::vector<double> hist;
  std::vector<double> prior;
  double alpha = 0.95;
  int64_t observations = 0;
  int64_t min_observations = 8;

  // Prior hist[j] = q^j, the closed form of the geometric commit model.
  static CommitEstimator with_geometric_prior(int block_size, double prior_q,
                                              double alpha = 0.95,
                                              int64_t min_observations = 8);

  bool warm() const { return observations >= min_observations; }
  // F(w): expected commits over the first w window ranks.
  double prefix(int window) const;
};

void observe(CommitEstimator& est, int window_size,
             std::span<const int> committed_ranks);

// Steady-state commits per request step at chunk size c, where last step's
// commits occupy this step's KV slots: N = F(c - round(N)).
double expected_commits(const CommitEstimator& est, int chunk_size);

struct ElasticChunked {
  std::vector<int> candidates;
  double hysteresis_eps = 0.05;
};
struct FixedChunk {
  int chunk = 8;
};
// Iteration-level batching over whole-block diffusion steps.
struct FixedBlock {
  int block = 32;
};
// Membership frozen until every member finishes its current block.
struct BlockLevelBatch {
  int block = 32;
};
struct AutoregressivePolicy {};

using SchedulerPolicy = std::variant<ElasticChunked, FixedChunk, FixedBlock,
                                     BlockLevelBatch, AutoregressivePolicy>;

// Even sizes 2..block_size.
std::vector<int> default_candidates(int block_size);

void validate(const SchedulerPolicy& policy, int block_size);
std::string policy_name(const SchedulerPolicy& policy);
// Accepts elastic, fixed_chunk:<c>, fixed_block:<B>, block_level:<B>, ar.
SchedulerPolicy parse_policy(std::string_view text, int block_size);
DecodeMode decode_mode_for(const SchedulerPolicy& policy, int block_size,
                           WindowRule window_rule);

struct ChunkScore {
  int chunk = 0;
  double expected_commits = 0.0;
  double latency = 0.0;
  double score = 0.0;
};

struct ChunkChoice {
  int chunk = 0;
  std::vector<ChunkScore> table;
};

// argmax_c N(c) * b / latency(b * c) with hysteresis around previous_chunk;
// ties go to the smaller chunk.
ChunkChoice select_chunk(const CommitEstimator& est, const CostModel& cost,
                         int batch_size, const ElasticChunked& policy,
                         std::optional<int> previous_chunk);

bool freezes_membership(const SchedulerPolicy& policy);

// FCFS admission from the head of queue into running while capacity allows.
// Block-level batching only admits at a block boundary. Returns the admitted
// ids; the caller schedules their prefill before the next decode iteration.
std::vector<int64_t> form_batch(std::deque<int64_t>& queue,
                                std::vector<int64_t>& running,
                                const SchedulerPolicy& policy, int max_batch,
                                bool at_block_boundary);

}  // namespace dllmsim

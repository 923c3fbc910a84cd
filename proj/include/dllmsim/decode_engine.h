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

#include <span>
#include <string>
#include <vector>

#include "dllmsim/commit_model.h"
#include "dllmsim/core_types.h"

namespace dllmsim {

// Token set computed for one request in one chunked iteration.
struct ChunkPlan {
  int64_t request_id = 0;
  std::vector<Position> kv_update_positions;
  std::vector<Position> masked_positions;

  int total_tokens() const {
    return static_cast<int>(kv_update_positions.size() +
                            masked_positions.size());
  }
};

struct StepSummary {
  int computed = 0;
  int committed = 0;
};

// What one request did in one decode step, for accounting and trace dumps.
struct StepResult {
  StepSummary summary;
  std::vector<Position> kv_positions;
  std::vector<Position> window;
  std::vector<Position> commits;
};

ChunkPlan plan_chunk(const Request& request, int chunk_size,
                     const ChunkedStreaming& mode);

// Applies a plan: KV slots become cached, commits become uncached. Commits
// past the last output position are discarded.
StepSummary apply_step(Request& request, const ChunkPlan& plan,
                       std::span<const Position> commits);

// plan_chunk + oracle + apply_step.
StepResult chunked_step(Request& request, int chunk_size,
                        const ChunkedStreaming& mode, CommitOracle& oracle);

// Reference block-wise diffusion: every step recomputes the whole block.
StepResult block_diffusion_step(Request& request, CommitOracle& oracle,
                                int block_size);

// Block-wise diffusion that skips decoded tokens of the current block.
StepResult prefix_cached_step(Request& request, CommitOracle& oracle,
                              int block_size);

StepResult ar_step(Request& request);

// Dispatches on the decode mode; chunk_size is only used by chunked modes.
StepResult decode_step(Request& request, const DecodeMode& mode,
                       int chunk_size, CommitOracle& oracle);

struct StepCounts {
  int streaming_steps = 0;
  int blockwise_steps = 0;
};

// Runs streaming chunked decoding (chunk = block) and block-wise decoding on
// the same replay trace (cumulative readiness) and reports both step counts.
StepCounts step_count_equivalence(const Request& request_template,
                                  const CommitTrace& trace, int block_size);

// Positions of the block containing the earliest uncommitted output token.
int block_begin(const Request& request, int block_size);
int count_state(const Request& request, TokenState state);

std::string step_trace_line(int64_t request_id, int step,
                            const StepResult& result);

}  // namespace dllmsim

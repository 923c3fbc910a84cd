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

#include "dllmsim/decode_engine.h"

#include <algorithm>
#include <nlohmann/json.hpp>

namespace dllmsim {
namespace {

void require_active(const Request& request) {
  if (request.finished()) {
    throw SimError(ErrorCode::kRequestComplete,
                   "request " + std::to_string(request.id) + " is complete");
  }
}

int num_blocks(const Request& request, int block_size) {
  return request.padded_length() / block_size;
}

// A block is complete once every real output position in it is committed.
bool block_complete(const Request& request, int block, int block_size) {
  const int begin = block * block_size;
  const int end = std::min((block + 1) * block_size, request.output_tokens);
  for (int p = begin; p < end; ++p) {
    if (request.states[static_cast<size_t>(p)] == TokenState::kMasked) {
      return false;
    }
  }
  return true;
}

void advance_block(Request& request, int block_size) {
  const int blocks = num_blocks(request, block_size);
  while (request.block_index < blocks - 1 &&
         block_complete(request, request.block_index, block_size)) {
    ++request.block_index;
  }
}

// Marks commits as decoded. Returns the number of real (pre-EOS) commits.
int commit_positions(Request& request, std::span<const Position> commits,
                     TokenState target, bool track_uncached) {
  int real = 0;
  for (const Position p : commits) {
    if (p >= request.output_tokens) continue;
    request.states[static_cast<size_t>(p)] = target;
    if (track_uncached) request.uncached.push_back(p);
    ++real;
  }
  request.committed += real;
  return real;
}

void check_subset(std::span<const Position> commits,
                  std::span<const Position> window) {
  for (const Position p : commits) {
    if (!std::binary_search(window.begin(), window.end(), p)) {
      throw SimError(ErrorCode::kIllegalCommit,
                     "position " + std::to_string(p) + " is not in the window");
    }
  }
}

std::vector<Position> masked_in_block(const Request& request, int block_size) {
  std::vector<Position> window;
  const int begin = request.block_index * block_size;
  for (int p = begin; p < begin + block_size; ++p) {
    if (request.states[static_cast<size_t>(p)] == TokenState::kMasked) {
      window.push_back(p);
    }
  }
  return window;
}

// Moves the whole uncached backlog to the cache; returns how many moved.
std::vector<Position> flush_backlog(Request& request) {
  std::vector<Position> flushed(request.uncached.begin(),
                                request.uncached.end());
  for (const Position p : flushed) {
    request.states[static_cast<size_t>(p)] = TokenState::kDecodedCached;
  }
  request.uncached.clear();
  return flushed;
}

StepResult block_step(Request& request, CommitOracle& oracle, int block_size,
                      bool prefix_cache) {
  require_active(request);
  if (block_size < 2 || block_size != request.block_size) {
    throw SimError(ErrorCode::kInvalidArgument,
                   "block size does not match the request layout");
  }
  StepResult result;
  result.kv_positions = flush_backlog(request);
  result.window = masked_in_block(request, block_size);
  result.commits = oracle.decide(request, result.window);
  check_subset(result.commits, result.window);

  const int carried = static_cast<int>(result.kv_positions.size());
  result.summary.computed =
      prefix_cache ? static_cast<int>(result.window.size()) + carried
                   : block_size + carried;
  result.summary.committed = commit_positions(
      request, result.commits,
      prefix_cache ? TokenState::kDecodedCached : TokenState::kDecodedUncached,
      /*track_uncached=*/false);
  ++request.steps;

  const int block = request.block_index;
  if (block_complete(request, block, block_size)) {
    for (int p = block * block_size; p < (block + 1) * block_size; ++p) {
      auto& state = request.states[static_cast<size_t>(p)];
      if (state == TokenState::kDecodedUncached) {
        state = TokenState::kDecodedCached;
      }
    }
  }
  advance_block(request, block_size);
  return result;
}

}  // namespace

int block_begin(const Request& request, int block_size) {
  return request.block_index * block_size;
}

int count_state(const Request& request, TokenState state) {
  return static_cast<int>(
      std::count(request.states.begin(), request.states.end(), state));
}

ChunkPlan plan_chunk(const Request& request, int chunk_size,
                     const ChunkedStreaming& mode) {
  require_active(request);
  if (chunk_size < 2) {
    throw SimError(ErrorCode::kChunkTooSmall, "chunk size must be >= 2");
  }
  const int block_size = mode.block_size;
  if (block_size < 2 || block_size != request.block_size) {
    throw SimError(ErrorCode::kInvalidArgument,
                   "block size does not match the request layout");
  }
  ChunkPlan plan;
  plan.request_id = request.id;
  const size_t kv = std::min(request.uncached.size(),
                             static_cast<size_t>(chunk_size));
  plan.kv_update_positions.assign(request.uncached.begin(),
                                  request.uncached.begin() + kv);
  std::sort(plan.kv_update_positions.begin(), plan.kv_update_positions.end());

  int capacity = chunk_size - static_cast<int>(kv);
  int begin = block_begin(request, block_size);
  int end = begin + block_size;
  if (!mode.reorganize) {
    // Naive chunking: the first fixed segment that still holds a real
    // uncommitted token is the only place new tokens may be decoded.
    for (int seg = begin; seg < end; seg += chunk_size) {
      const int seg_end = std::min(seg + chunk_size, end);
      bool open = false;
      for (int p = seg; p < std::min(seg_end, request.output_tokens); ++p) {
        open = open ||
               request.states[static_cast<size_t>(p)] == TokenState::kMasked;
      }
      if (open) {
        begin = seg;
        end = seg_end;
        break;
      }
    }
  } else if (mode.window_rule == WindowRule::kOutBlock) {
    end = request.padded_length();
    capacity = std::min(capacity, block_size);
  }
  for (int p = begin; p < end && capacity > 0; ++p) {
    if (request.states[static_cast<size_t>(p)] == TokenState::kMasked) {
      plan.masked_positions.push_back(p);
      --capacity;
    }
  }
  return plan;
}

StepSummary apply_step(Request& request, const ChunkPlan& plan,
                       std::span<const Position> commits) {
  require_active(request);
  check_subset(commits, plan.masked_positions);
  for (const Position p : plan.kv_update_positions) {
    auto& state = request.states[static_cast<size_t>(p)];
    if (state != TokenState::kDecodedUncached) {
      throw SimError(ErrorCode::kIllegalCommit,
                     "KV update for a position that is not uncached");
    }
    state = TokenState::kDecodedCached;
    const auto it =
        std::find(request.uncached.begin(), request.uncached.end(), p);
    request.uncached.erase(it);
  }
  StepSummary summary;
  summary.computed = plan.total_tokens();
  summary.committed = commit_positions(request, commits,
                                       TokenState::kDecodedUncached,
                                       /*track_uncached=*/true);
  ++request.steps;
  advance_block(request, request.block_size);
  return summary;
}

StepResult chunked_step(Request& request, int chunk_size,
                        const ChunkedStreaming& mode, CommitOracle& oracle) {
  StepResult result;
  const ChunkPlan plan = plan_chunk(request, chunk_size, mode);
  result.kv_positions = plan.kv_update_positions;
  result.window = plan.masked_positions;
  if (!plan.masked_positions.empty()) {
    result.commits = oracle.decide(request, plan.masked_positions);
  }
  result.summary = apply_step(request, plan, result.commits);
  return result;
}

StepResult block_diffusion_step(Request& request, CommitOracle& oracle,
                                int block_size) {
  return block_step(request, oracle, block_size, /*prefix_cache=*/false);
}

StepResult prefix_cached_step(Request& request, CommitOracle& oracle,
                              int block_size) {
  return block_step(request, oracle, block_size, /*prefix_cache=*/true);
}

StepResult ar_step(Request& request) {
  require_active(request);
  StepResult result;
  const Position p = request.committed;
  result.window = {p};
  result.commits = {p};
  request.states[static_cast<size_t>(p)] = TokenState::kDecodedCached;
  ++request.committed;
  ++request.steps;
  result.summary = {1, 1};
  return result;
}

StepResult decode_step(Request& request, const DecodeMode& mode,
                       int chunk_size, CommitOracle& oracle) {
  if (std::holds_alternative<Autoregressive>(mode)) return ar_step(request);
  if (const auto* bd = std::get_if<BlockDiffusion>(&mode)) {
    return bd->prefix_cache ? prefix_cached_step(request, oracle, bd->block_size)
                            : block_diffusion_step(request, oracle,
                                                   bd->block_size);
  }
  return chunked_step(request, chunk_size, std::get<ChunkedStreaming>(mode),
                      oracle);
}

StepCounts step_count_equivalence(const Request& request_template,
                                  const CommitTrace& trace, int block_size) {
  const int limit = 4 * request_template.padded_length() +
                    trace.step_count(request_template.id) + 8;
  auto run = [&](auto&& step) {
    Request request = request_template;
    ReplayOracle oracle(trace, ReplayOracle::Mode::kCumulative);
    while (!request.finished()) {
      if (request.steps > limit) {
        throw SimError(ErrorCode::kNonTerminating,
                       "replay trace never completes request " +
                           std::to_string(request.id));
      }
      step(request, oracle);
    }
    return request.steps;
  };
  const ChunkedStreaming streaming{block_size, WindowRule::kInBlock, true};
  StepCounts counts;
  counts.streaming_steps = run([&](Request& r, CommitOracle& o) {
    chunked_step(r, block_size, streaming, o);
  });
  counts.blockwise_steps = run([&](Request& r, CommitOracle& o) {
    block_diffusion_step(r, o, block_size);
  });
  return counts;
}

std::string step_trace_line(int64_t request_id, int step,
                            const StepResult& result) {
  const nlohmann::json row = {{"request_id", request_id},
                              {"step", step},
                              {"kv_positions", result.kv_positions},
                              {"masked_positions", result.window},
                              {"commits", result.commits}};
  return row.dump();
}

}  // namespace dllmsim

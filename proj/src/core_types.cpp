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

#include "dllmsim/core_types.h"

#include <cstdio>

namespace dllmsim {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kDegenerateIteration: return "DegenerateIteration";
    case ErrorCode::kEmptyWindow: return "EmptyWindow";
    case ErrorCode::kInfeasibleTarget: return "InfeasibleTarget";
    case ErrorCode::kTraceExhausted: return "TraceExhausted";
    case ErrorCode::kRequestComplete: return "RequestComplete";
    case ErrorCode::kIllegalCommit: return "IllegalCommit";
    case ErrorCode::kInsufficientProfile: return "InsufficientProfile";
    case ErrorCode::kChunkTooSmall: return "ChunkTooSmall";
    case ErrorCode::kNoCandidates: return "NoCandidates";
    case ErrorCode::kEmptyRun: return "EmptyRun";
    case ErrorCode::kSingleToken: return "SingleToken";
    case ErrorCode::kSloInfeasible: return "SloInfeasible";
    case ErrorCode::kNonTerminating: return "NonTerminating";
    case ErrorCode::kConfig: return "Config";
    case ErrorCode::kInvariantViolation: return "InvariantViolation";
  }
  return "Unknown";
}

SimError::SimError(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(to_string(code)) + ": " + message),
      code_(code) {}

int block_size_of(const DecodeMode& mode) {
  if (const auto* bd = std::get_if<BlockDiffusion>(&mode)) {
    return bd->block_size;
  }
  if (const auto* cs = std::get_if<ChunkedStreaming>(&mode)) {
    return cs->block_size;
  }
  return 1;
}

bool is_diffusion(const DecodeMode& mode) {
  return !std::holds_alternative<Autoregressive>(mode);
}

void validate(const DecodeMode& mode) {
  if (is_diffusion(mode) && block_size_of(mode) < 2) {
    throw SimError(ErrorCode::kInvalidArgument,
                   "block_size must be >= 2 for diffusion modes");
  }
}

std::string describe(const DecodeMode& mode) {
  if (std::holds_alternative<Autoregressive>(mode)) return "ar";
  if (const auto* bd = std::get_if<BlockDiffusion>(&mode)) {
    return (bd->prefix_cache ? "bd_prefix_cached" : "bd") +
           std::to_string(bd->block_size);
  }
  const auto& cs = std::get<ChunkedStreaming>(mode);
  std::string name = cs.reorganize ? "streaming" : "naive_chunked";
  name += std::to_string(cs.block_size);
  if (cs.window_rule == WindowRule::kOutBlock) name += "_obs";
  return name;
}

Rng make_stream(uint64_t seed, uint64_t stream_id, uint64_t tag) {
  std::seed_seq seq{static_cast<uint32_t>(seed), static_cast<uint32_t>(seed >> 32),
                    static_cast<uint32_t>(stream_id),
                    static_cast<uint32_t>(stream_id >> 32),
                    static_cast<uint32_t>(tag)};
  return Rng(seq);
}

Request make_request(int64_t id, double arrival_time, int prompt_tokens,
                     int output_tokens, int block_size, Rng rng) {
  if (prompt_tokens < 1 || output_tokens < 1 || block_size < 1) {
    throw SimError(ErrorCode::kInvalidArgument,
                   "request lengths and block size must be >= 1");
  }
  Request r;
  r.id = id;
  r.arrival_time = arrival_time;
  r.prompt_tokens = prompt_tokens;
  r.output_tokens = output_tokens;
  r.block_size = block_size;
  const int blocks = (output_tokens + block_size - 1) / block_size;
  r.states.assign(static_cast<size_t>(blocks) * block_size, TokenState::kMasked);
  r.rng = std::move(rng);
  return r;
}

std::string to_csv_row(const IterationRecord& record) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%d,%d,%lld,%lld,%s",
                record.clock_start, record.latency, record.batch_size,
                record.chunk_size,
                static_cast<long long>(record.computed_tokens),
                static_cast<long long>(record.committed_tokens),
                record.kind == IterationKind::kPrefill ? "prefill" : "decode");
  return buf;
}

double token_utilization(const IterationRecord& record) {
  if (record.computed_tokens < 1) {
    throw SimError(ErrorCode::kDegenerateIteration,
                   "iteration computed no tokens");
  }
  return static_cast<double>(record.committed_tokens) /
         static_cast<double>(record.computed_tokens);
}

int64_t effective_workload(int64_t batch_size, int64_t chunk_size) {
  if (batch_size < 1 || chunk_size < 1) {
    throw SimError(ErrorCode::kInvalidArgument,
                   "batch and chunk size must be >= 1");
  }
  return batch_size * chunk_size;
}

}  // namespace dllmsim

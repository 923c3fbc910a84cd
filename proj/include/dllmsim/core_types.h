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
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace dllmsim {

enum class ErrorCode {
  kInvalidArgument,
  kDegenerateIteration,
  kEmptyWindow,
  kInfeasibleTarget,
  kTraceExhausted,
  kRequestComplete,
  kIllegalCommit,
  kInsufficientProfile,
  kChunkTooSmall,
  kNoCandidates,
  kEmptyRun,
  kSingleToken,
  kSloInfeasible,
  kNonTerminating,
  kConfig,
  kInvariantViolation,
};

std::string_view to_string(ErrorCode code);

// All recoverable failures in the library surface as SimError; the code is
// what callers (and the CLI exit-code mapping) branch on.
class SimError : public std::runtime_error {
 public:
  SimError(ErrorCode code, const std::string& message);
  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

// Commitment is monotone: Masked -> DecodedUncached -> DecodedCached.
enum class TokenState : uint8_t { kMasked, kDecodedUncached, kDecodedCached };

enum class WindowRule { kInBlock, kOutBlock };

struct Autoregressive {};

struct BlockDiffusion {
  int block_size = 32;
  // Reuse KV of decoded tokens inside the block instead of recomputing them.
  bool prefix_cache = false;
};

struct ChunkedStreaming {
  int block_size = 32;
  WindowRule window_rule = WindowRule::kInBlock;
  // false = naive chunking: fixed contiguous segments, no reorganization.
  bool reorganize = true;
};

using DecodeMode = std::variant<Autoregressive, BlockDiffusion, ChunkedStreaming>;

// Block size of a diffusion mode; 1 for autoregressive decoding.
int block_size_of(const DecodeMode& mode);
bool is_diffusion(const DecodeMode& mode);
void validate(const DecodeMode& mode);
std::string describe(const DecodeMode& mode);

using Position = int32_t;
using Rng = std::mt19937_64;

// Deterministic per-entity stream derived from a scenario seed.
Rng make_stream(uint64_t seed, uint64_t stream_id, uint64_t tag = 0);

struct Request {
  int64_t id = 0;
  double arrival_time = 0.0;
  int prompt_tokens = 1;
  int output_tokens = 1;
  int block_size = 1;
  int committed = 0;
  int block_index = 0;
  // Request-relative output positions, padded to a whole number of blocks in
  // diffusion modes. Padding past output_tokens models tokens after EOS.
  std::vector<TokenState> states;
  std::optional<double> prefill_done_time;
  std::optional<double> first_token_time;
  std::optional<double> finish_time;
  Rng rng;
  double rate_multiplier = 1.0;
  int steps = 0;
  // DecodedUncached positions in commit order (oldest first).
  std::deque<Position> uncached;

  bool finished() const { return committed >= output_tokens; }
  int padded_length() const { return static_cast<int>(states.size()); }
};

// Builds a fresh request whose state array covers whole blocks.
Request make_request(int64_t id, double arrival_time, int prompt_tokens,
                     int output_tokens, int block_size, Rng rng);

enum class IterationKind { kPrefill, kDecode };

struct IterationRecord {
  double clock_start = 0.0;
  double latency = 0.0;
  int batch_size = 0;
  int chunk_size = 0;
  int64_t computed_tokens = 0;
  int64_t committed_tokens = 0;
  IterationKind kind = IterationKind::kDecode;

  bool operator==(const IterationRecord&) const = default;
};

inline constexpr std::string_view kIterationCsvHeader =
    "clock_start,latency,batch_size,chunk_size,computed_tokens,"
    "committed_tokens,kind";

std::string to_csv_row(const IterationRecord& record);

// Completed-request outcome kept in the run log.
struct RequestSummary {
  int64_t id = 0;
  double arrival_time = 0.0;
  int prompt_tokens = 0;
  int output_tokens = 0;
  int committed = 0;
  int decode_steps = 0;
  double prefill_done_time = 0.0;
  double first_token_time = 0.0;
  double finish_time = 0.0;

  bool operator==(const RequestSummary&) const = default;
};

// Fraction of computed tokens that were committed.
double token_utilization(const IterationRecord& record);

// batch_size x chunk_size: the parallel-work proxy that drives saturation.
int64_t effective_workload(int64_t batch_size, int64_t chunk_size);

}  // namespace dllmsim

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

#include "dllmsim/sim_engine.h"

#include <algorithm>
#include <atomic>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <exception>
#include <map>
#include <mutex>
#include <thread>

#include "dllmsim/decode_engine.h"

namespace dllmsim {
namespace {

constexpr uint64_t kCommitStreamTag = 1;
constexpr uint64_t kClosedLoopLengthTag = 4;
constexpr uint64_t kStaggerTag = 5;

void config_error(const std::string& msg) { throw SimError(ErrorCode::kConfig, msg); }

struct Live {
  Request request;
  bool prefilled = false;
  int epoch_block = 0;
};

RequestSummary summary_of(const Request& r) {
  RequestSummary s;
  s.id = r.id;
  s.arrival_time = r.arrival_time;
  s.prompt_tokens = r.prompt_tokens;
  s.output_tokens = r.output_tokens;
  s.committed = r.committed;
  s.decode_steps = r.steps;
  s.prefill_done_time = r.prefill_done_time.value_or(r.arrival_time);
  s.first_token_time = r.first_token_time.value_or(0.0);
  s.finish_time = r.finish_time.value_or(0.0);
  return s;
}

void check_request(const Request& r, const std::vector<TokenState>& before,
                   bool chunked) {
  auto fail = [&](const std::string& what) {
    throw SimError(ErrorCode::kInvariantViolation,
                   "request " + std::to_string(r.id) + ": " + what);
  };
  int decoded = 0;
  int uncached = 0;
  for (size_t p = 0; p < r.states.size(); ++p) {
    if (r.states[p] < before[p]) fail("token state moved backwards");
    if (r.states[p] != TokenState::kMasked) {
      if (static_cast<int>(p) >= r.output_tokens) fail("padding position decoded");
      ++decoded;
    }
    if (r.states[p] == TokenState::kDecodedUncached) ++uncached;
  }
  if (decoded != r.committed) fail("committed count disagrees with states");
  if (r.committed > r.output_tokens) fail("committed more than output_tokens");
  if (chunked && uncached != static_cast<int>(r.uncached.size())) {
    fail("uncached backlog disagrees with states");
  }
}

std::vector<int> window_ranks(const StepResult& step) {
  std::vector<int> ranks;
  ranks.reserve(step.commits.size());
  for (const Position p : step.commits) {
    const auto it = std::lower_bound(step.window.begin(), step.window.end(), p);
    ranks.push_back(static_cast<int>(it - step.window.begin()));
  }
  return ranks;
}

class Simulation {
 public:
  explicit Simulation(const Scenario& s)
      : s_(s),
        mode_(decode_mode_for(s.policy, s.block_size, s.window_rule)),
        profile_(effective_commit_profile(s)),
        frozen_(freezes_membership(s.policy)) {
    if (auto* cs = std::get_if<ChunkedStreaming>(&mode_)) cs->reorganize = s.reorganize;
    layout_block_ = block_size_of(mode_);
    if (s.replay) {
      oracle_ = std::make_unique<ReplayOracle>(*s.replay, s.replay_mode);
    } else {
      oracle_ = std::make_unique<StochasticOracle>(profile_);
    }
    estimator_ = CommitEstimator::with_geometric_prior(
        s.block_size, s.prior_q.value_or(profile_.q), s.estimator_alpha,
        s.estimator_min_observations);
    setup_load();
  }

  RunResult run() {
    while (true) {
      inject_arrivals();
      const bool boundary = !frozen_ || epoch_over();
      if (frozen_ && boundary) start_epoch();
      const auto admitted =
          form_batch(queue_, running_, s_.policy, s_.max_batch, boundary);
      for (const int64_t id : admitted) {
        auto& live = live_.at(id);
        live.epoch_block = live.request.block_index;
        if (!s_.include_prefill) {
          live.prefilled = true;
          live.request.prefill_done_time = clock_;
        }
      }
      if (run_prefill()) continue;
      if (stop_) break;

      std::vector<int64_t> members;
      int occupied = 0;
      for (const int64_t id : running_) {
        const auto& live = live_.at(id);
        if (live.prefilled) ++occupied;
        if (!live.prefilled || live.request.finished()) continue;
        if (frozen_ && live.request.block_index != live.epoch_block) continue;
        members.push_back(id);
      }
      if (members.empty()) {
        if (!running_.empty()) {
          throw SimError(ErrorCode::kNonTerminating,
                         "running requests but nothing to decode");
        }
        if (next_arrival_ < arrivals_.size()) {
          clock_ = std::max(clock_, arrivals_[next_arrival_].arrival_s);
          continue;
        }
        if (queue_.empty()) break;
        throw SimError(ErrorCode::kNonTerminating, "queued requests cannot be admitted");
      }
      // Idle members of a frozen batch keep their slot.
      decode_iteration(members, frozen_ ? occupied : static_cast<int>(members.size()));
      if (stop_) break;
    }
    for (const int64_t id : running_) {
      const auto& r = live_.at(id).request;
      if (!r.finished()) result_.in_flight.push_back(summary_of(r));
    }
    return std::move(result_);
  }

 private:
  void setup_load() {
    if (const auto* open = std::get_if<OpenLoop>(&s_.load)) {
      arrivals_ = generate_trace(s_.dataset, open->arrival_rate, open->n_requests,
                                 s_.seed);
      if (open->duration_s) {
        std::erase_if(arrivals_, [&](const TraceEntry& e) {
          return e.arrival_s > *open->duration_s;
        });
      }
      const auto n = static_cast<int64_t>(arrivals_.size());
      const auto k = static_cast<int64_t>(std::floor(open->exclude_fraction *
                                                     static_cast<double>(n)));
      if (n - 2 * k >= 1) {
        result_.measure_first = k;
        result_.measure_last = n - 1 - k;
      }
    } else if (const auto* fixed = std::get_if<FixedTrace>(&s_.load)) {
      arrivals_ = fixed->requests;
      std::stable_sort(arrivals_.begin(), arrivals_.end(),
                       [](const TraceEntry& a, const TraceEntry& b) {
                         return a.arrival_s < b.arrival_s;
                       });
    } else {
      const auto& closed = std::get<ClosedLoop>(s_.load);
      closed_total_ = closed.total_requests > 0
                          ? closed.total_requests
                          : std::max(200, 8 * closed.concurrency);
      for (int i = 0; i < closed.concurrency; ++i) {
        TraceEntry e = closed_loop_entry(0.0);
        if (closed.stagger) {
          // Drop a uniform number of whole blocks so members start at
          // different points of their requests.
          const int blocks = (e.output_tokens + s_.block_size - 1) / s_.block_size;
          Rng rng = make_stream(s_.seed, static_cast<uint64_t>(e.id), kStaggerTag);
          std::uniform_int_distribution<int> skip(0, blocks - 1);
          e.output_tokens = std::max(1, e.output_tokens - skip(rng) * s_.block_size);
        }
        arrivals_.push_back(e);
      }
    }
  }

  TraceEntry closed_loop_entry(double arrival) {
    TraceEntry e;
    e.id = next_id_++;
    e.arrival_s = arrival;
    Rng rng = make_stream(s_.seed, static_cast<uint64_t>(e.id), kClosedLoopLengthTag);
    e.prompt_tokens = sample_length(s_.dataset.prompt_mean, s_.dataset.prompt_std, rng);
    e.output_tokens = sample_length(s_.dataset.output_mean, s_.dataset.output_std, rng);
    return e;
  }

  void inject_arrivals() {
    while (next_arrival_ < arrivals_.size() &&
           arrivals_[next_arrival_].arrival_s <= clock_) {
      const auto& e = arrivals_[next_arrival_++];
      Request r = make_request(e.id, e.arrival_s, e.prompt_tokens, e.output_tokens,
                               layout_block_,
                               make_stream(s_.seed, static_cast<uint64_t>(e.id),
                                           kCommitStreamTag));
      if (!s_.replay) r.rate_multiplier = sample_rate_multiplier(profile_, r.rng);
      live_.emplace(e.id, Live{std::move(r), false, 0});
      queue_.push_back(e.id);
    }
  }

  bool epoch_over() const {
    return std::all_of(running_.begin(), running_.end(), [&](int64_t id) {
      const auto& live = live_.at(id);
      return live.prefilled && (live.request.finished() ||
                                live.request.block_index != live.epoch_block);
    });
  }

  void start_epoch() {
    std::erase_if(running_, [&](int64_t id) {
      if (!live_.at(id).request.finished()) return false;
      live_.erase(id);
      return true;
    });
    for (const int64_t id : running_) {
      auto& live = live_.at(id);
      live.epoch_block = live.request.block_index;
    }
  }

  bool run_prefill() {
    for (const int64_t id : running_) {
      auto& live = live_.at(id);
      if (live.prefilled) continue;
      IterationRecord rec;
      rec.kind = IterationKind::kPrefill;
      rec.clock_start = clock_;
      rec.latency = latency(s_.cost, live.request.prompt_tokens) +
                    s_.cost.context_surcharge * live.request.prompt_tokens;
      rec.batch_size = 1;
      rec.chunk_size = 0;
      rec.computed_tokens = live.request.prompt_tokens;
      rec.committed_tokens = 0;
      clock_ += rec.latency;
      result_.iterations.push_back(rec);
      live.prefilled = true;
      live.request.prefill_done_time = clock_;
      return true;
    }
    return false;
  }

  int choose_chunk(int batch) {
    return std::visit(
        [&](const auto& p) -> int {
          using T = std::decay_t<decltype(p)>;
          if constexpr (std::is_same_v<T, ElasticChunked>) {
            int c = p.candidates.back();
            if (estimator_.observations >= s_.warmup_iterations) {
              c = select_chunk(estimator_, s_.cost, batch, p, previous_chunk_).chunk;
            }
            previous_chunk_ = c;
            return c;
          } else if constexpr (std::is_same_v<T, FixedChunk>) {
            return p.chunk;
          } else if constexpr (std::is_same_v<T, AutoregressivePolicy>) {
            return 1;
          } else {
            return p.block;
          }
        },
        s_.policy);
  }

  void decode_iteration(const std::vector<int64_t>& members, int batch) {
    const int chunk = choose_chunk(batch);
    const bool chunked = std::holds_alternative<ChunkedStreaming>(mode_);
    const bool diffusion = is_diffusion(mode_);

    IterationRecord rec;
    rec.kind = IterationKind::kDecode;
    rec.clock_start = clock_;
    rec.batch_size = batch;
    rec.chunk_size = chunk;
    int64_t backlog_before = 0;
    int64_t backlog_after = 0;
    double context = 0.0;
    std::vector<TokenState> before;
    for (const int64_t id : members) {
      Request& r = live_.at(id).request;
      backlog_before += static_cast<int64_t>(r.uncached.size());
      if (s_.check_invariants) before = r.states;
      context += r.prompt_tokens + r.committed;
      const StepResult step = decode_step(r, mode_, chunk, *oracle_);
      if (s_.check_invariants) check_request(r, before, chunked);
      if (s_.record_steps) {
        result_.step_trace.push_back(step_trace_line(id, r.steps - 1, step));
      }
      if (diffusion && !step.window.empty()) {
        const auto ranks = window_ranks(step);
        observe(estimator_, static_cast<int>(step.window.size()), ranks);
      }
      rec.computed_tokens += step.summary.computed;
      rec.committed_tokens += step.summary.committed;
      backlog_after += static_cast<int64_t>(r.uncached.size());
    }
    if (rec.committed_tokens == 0 && backlog_after >= backlog_before) {
      throw SimError(ErrorCode::kNonTerminating,
                     "decode iteration at t=" + std::to_string(clock_) +
                         " made no progress (policy " + policy_name(s_.policy) + ")");
    }
    rec.latency = latency(s_.cost, static_cast<double>(rec.computed_tokens)) +
                  s_.cost.context_surcharge * context;
    if (s_.check_invariants && !(rec.latency > 0.0)) {
      throw SimError(ErrorCode::kInvariantViolation, "nonpositive iteration latency");
    }
    const double end = clock_ + rec.latency;
    result_.iterations.push_back(rec);
    clock_ = end;
    ++decode_iterations_;

    for (const int64_t id : members) {
      Request& r = live_.at(id).request;
      if (r.committed > 0 && !r.first_token_time) r.first_token_time = end;
      if (!r.finished() || r.finish_time) continue;
      r.finish_time = end;
      result_.request_log.push_back(summary_of(r));
      if (!frozen_) {
        std::erase(running_, id);
        live_.erase(id);
      }
      if (std::holds_alternative<ClosedLoop>(s_.load)) {
        if (static_cast<int>(result_.request_log.size()) >= closed_total_) {
          stop_ = true;
        } else {
          arrivals_.push_back(closed_loop_entry(end));
        }
      }
    }
  }

  const Scenario& s_;
  DecodeMode mode_;
  CommitProfile profile_;
  bool frozen_ = false;
  int layout_block_ = 1;
  std::unique_ptr<CommitOracle> oracle_;
  CommitEstimator estimator_;

  std::vector<TraceEntry> arrivals_;
  size_t next_arrival_ = 0;
  int64_t next_id_ = 0;
  int closed_total_ = 0;
  std::map<int64_t, Live> live_;
  std::deque<int64_t> queue_;
  std::vector<int64_t> running_;
  double clock_ = 0.0;
  int64_t decode_iterations_ = 0;
  std::optional<int> previous_chunk_;
  bool stop_ = false;
  RunResult result_;
};

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void Scenario::validate() const {
  if (const auto* open = std::get_if<OpenLoop>(&load)) {
    if (!(open->arrival_rate > 0.0) || !std::isfinite(open->arrival_rate)) {
      config_error("load.arrival_rate must be > 0");
    }
    if (open->n_requests < 1) config_error("load.n_requests must be >= 1");
    if (open->duration_s && !(*open->duration_s > 0.0)) {
      config_error("load.duration_s must be > 0");
    }
    if (!(open->exclude_fraction >= 0.0 && open->exclude_fraction < 0.5)) {
      config_error("load.exclude_fraction must lie in [0, 0.5)");
    }
  } else if (const auto* closed = std::get_if<ClosedLoop>(&load)) {
    if (closed->concurrency < 1) config_error("load.concurrency must be >= 1");
    if (closed->total_requests < 0) config_error("load.total_requests must be >= 0");
  } else {
    const auto& fixed = std::get<FixedTrace>(load);
    if (fixed.requests.empty()) config_error("load.trace is empty");
    for (const auto& e : fixed.requests) {
      if (e.output_tokens < 1 || e.prompt_tokens < 1 || e.arrival_s < 0.0) {
        config_error("load.trace entry " + std::to_string(e.id) + " is invalid");
      }
    }
  }
  if (block_size < 2) config_error("block_size must be >= 2");
  if (max_batch < 1) config_error("max_batch must be >= 1");
  if (warmup_iterations < 0) config_error("warmup_iterations must be >= 0");
  if (!(estimator_alpha > 0.0 && estimator_alpha < 1.0)) {
    config_error("estimator.alpha must lie in (0, 1)");
  }
  if (estimator_min_observations < 0) {
    config_error("estimator.min_observations must be >= 0");
  }
  if (prior_q && !(*prior_q >= 0.0 && *prior_q <= 1.0)) {
    config_error("estimator.prior_q must lie in [0, 1]");
  }
  dllmsim::validate(policy, block_size);
  try {
    dataset.validate();
    cost.validate();
    if (commit_profile) commit_profile->validate();
  } catch (const SimError& e) {
    config_error(e.what());
  }
}

CommitProfile effective_commit_profile(const Scenario& scenario) {
  if (scenario.commit_profile) return *scenario.commit_profile;
  // The presets are measured over a 32-token window; the fitted per-rank
  // decay carries over to other block sizes unchanged.
  return commit_profile_for(scenario.dataset, scenario.model);
}

RunResult run(const Scenario& scenario) {
  scenario.validate();
  Simulation sim(scenario);
  return sim.run();
}

std::vector<RequestSummary> measured_requests(const RunResult& result) {
  std::vector<RequestSummary> out;
  for (const auto& r : result.request_log) {
    if (r.id >= result.measure_first && r.id <= result.measure_last) out.push_back(r);
  }
  return out;
}

RunSummary summarize(const RunResult& result) {
  const auto measured = measured_requests(result);
  return summarize(result.iterations, measured);
}

std::string_view to_string(SweepAxis axis) {
  return axis == SweepAxis::kBatch ? "batch" : "rate";
}

Scenario cell_scenario(const Scenario& base, SweepAxis axis, double value,
                       const SchedulerPolicy& policy, uint64_t seed) {
  Scenario s = base;
  s.policy = policy;
  s.seed = seed;
  if (axis == SweepAxis::kBatch) {
    ClosedLoop closed;
    if (const auto* c = std::get_if<ClosedLoop>(&base.load)) closed = *c;
    closed.concurrency = static_cast<int>(std::lround(value));
    s.load = closed;
  } else {
    OpenLoop open;
    if (const auto* o = std::get_if<OpenLoop>(&base.load)) open = *o;
    open.arrival_rate = value;
    s.load = open;
  }
  return s;
}

void parallel_for(int n, int jobs, const std::function<void(int)>& fn) {
  const int workers = std::clamp(jobs, 1, std::max(n, 1));
  if (workers == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> threads;
  threads.reserve(static_cast<size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    threads.emplace_back([&] {
      for (int i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          const std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
          next = n;
        }
      }
    });
  }
  for (auto& t : threads) t.join();
  if (error) std::rethrow_exception(error);
}

std::vector<SweepRow> sweep(const Scenario& base, SweepAxis axis,
                            const std::vector<double>& values,
                            const std::vector<SchedulerPolicy>& policies,
                            const std::vector<uint64_t>& seeds, int jobs) {
  const size_t cells = policies.size() * values.size() * seeds.size();
  std::vector<SweepRow> rows(cells);
  parallel_for(static_cast<int>(cells), jobs, [&](int i) {
    const auto idx = static_cast<size_t>(i);
    const auto seed_i = idx % seeds.size();
    const auto value_i = (idx / seeds.size()) % values.size();
    const auto policy_i = idx / (seeds.size() * values.size());
    const Scenario s = cell_scenario(base, axis, values[value_i],
                                     policies[policy_i], seeds[seed_i]);
    SweepRow& row = rows[idx];
    row.policy = policy_name(policies[policy_i]);
    row.axis_value = values[value_i];
    row.seed = seeds[seed_i];
    row.summary = summarize(run(s));
  });
  return rows;
}

std::vector<SweepRow> sweep_closed_loop(const Scenario& base,
                                        const std::vector<int>& batch_sizes,
                                        const std::vector<SchedulerPolicy>& policies,
                                        int jobs) {
  const std::vector<double> values(batch_sizes.begin(), batch_sizes.end());
  return sweep(base, SweepAxis::kBatch, values, policies, {base.seed}, jobs);
}

std::vector<SweepRow> sweep_open_loop(const Scenario& base,
                                      const std::vector<double>& rates,
                                      const std::vector<SchedulerPolicy>& policies,
                                      int jobs) {
  return sweep(base, SweepAxis::kRate, rates, policies, {base.seed}, jobs);
}

std::string to_csv_row(const SweepRow& row, SweepAxis axis) {
  const auto& s = row.summary;
  std::string out = row.policy + "," + std::string(to_string(axis)) + "," +
                    fmt_double(row.axis_value) + "," + std::to_string(row.seed);
  for (const double v : {s.decode_throughput, s.tpot_p50, s.tpot_p90, s.tpot_p99,
                         s.mean_tu, s.mean_batch, s.mean_chunk, s.median_chunk}) {
    out += "," + fmt_double(v);
  }
  out += "," + std::to_string(s.min_chunk) + "," + std::to_string(s.completed);
  return out;
}

}  // namespace dllmsim

/*
 * Copyright 2026 The nomad-mf Authors. All Rights Reserved.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef NOMAD_ENGINE_HPP
#define NOMAD_ENGINE_HPP

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nomad/core.hpp"
#include "nomad/eval.hpp"
#include "nomad/random.hpp"
#include "nomad/transport.hpp"

namespace nomad {

enum class Balancing { uniform, two_choice };

std::string to_string(Balancing b);
Balancing parse_balancing(const std::string& s);

/// Whichever limit is reached first ends the run. An unset field is no limit.
struct Budget {
  std::optional<double> seconds;
  std::optional<double> epochs;       // total updates >= epochs * |train|
  std::optional<double> target_rmse;  // checked at checkpoints

  bool empty() const { return !seconds && !epochs && !target_rmse; }
};

/// Stop flag and limits shared between a run and its caller. The flag is
/// never cleared once raised.
class RunControl {
 public:
  RunControl() = default;
  explicit RunControl(Budget budget) : budget(budget) {}

  Budget budget;
  /// Checkpoint spacing; both may be set, whichever fires first.
  std::optional<double> checkpoint_seconds;
  std::optional<double> checkpoint_epochs = 1.0;
  /// A worker that cannot reach the checkpoint barrier within this time
  /// aborts the run.
  double barrier_timeout_sec = 30.0;

  void request_stop() { stop_.store(true, std::memory_order_release); }
  bool stop_requested() const { return stop_.load(std::memory_order_acquire); }

 private:
  std::atomic<bool> stop_{false};
};

/// Uniform(0, 1/sqrt(k)) entries from a counter-based generator keyed by
/// (seed, matrix, row, column), independent of worker count.
std::pair<FactorMatrix, FactorMatrix> init_factors(std::size_t m, std::size_t n, int k,
                                                   std::uint64_t seed);

/// Picks the worker that receives a parcel next. `queue_estimates` holds the
/// last known queue length of every worker (the caller's own slot should be
/// exact). Uniform mode may return `self`; two_choice draws two distinct
/// candidates and keeps the one with the smaller estimate, ties to the lower id.
int select_recipient(int self, std::span<const std::uint32_t> queue_estimates,
                     Balancing mode, Rng& rng, bool exclude_self = false);

struct TraceRecord {
  enum class Event : std::uint8_t { process, update };
  Event event = Event::update;
  int worker = 0;
  std::uint32_t item = 0;
  std::uint64_t version = 0;
  std::int64_t user = -1;          // -1 on process events
  std::uint32_t update_count = 0;  // after the update
  double step = 0.0;               // step size used (update events)
  std::uint64_t visit = 0;         // machine-visit id on hybrid process events
};

/// Newline-delimited `event,worker,item,version,user,update_count`.
void write_trace(std::span<const TraceRecord> trace, const std::filesystem::path& path);
std::vector<TraceRecord> read_trace(const std::filesystem::path& path);

struct CheckpointStats {
  double elapsed_sec = 0.0;
  std::uint64_t total_updates = 0;
  std::size_t parcels_seen = 0;
  bool conserved = false;  // the held items were exactly {0, ..., n-1}
  std::vector<std::size_t> queue_lengths;
};

struct NomadOptions {
  int workers = 1;
  Balancing balancing = Balancing::uniform;
  bool exclude_self = false;
  bool trace = false;
  /// Per-worker slowdown factors (>= 1); empty means all 1.
  std::vector<double> slowdown;
};

struct RunResult {
  FactorMatrix W;
  FactorMatrix H;
  ConvergenceLog log;
  std::vector<TraceRecord> trace;
  std::vector<CheckpointStats> checkpoints;
  std::uint64_t total_updates = 0;
  std::vector<std::size_t> final_queue_lengths;
  std::vector<std::uint64_t> updates_per_worker;
};

/// Applies one processing event: SGD over every rating of `shard` in the
/// parcel's column, in storage order, with per-rating step sizes. Returns the
/// number of ratings updated.
std::size_t process_parcel(Shard& shard, FactorMatrix& W, ColumnParcel& parcel,
                           const HyperParams& params, int worker,
                           std::vector<TraceRecord>* trace);

/// Runs the asynchronous nomadic-column SGD on `options.workers` threads that
/// communicate only through per-worker queues. `data` must be sharded for
/// that many workers. `test` feeds the RMSE column of the log and may be empty.
RunResult run_nomad(ShardedRatings data, const HyperParams& params,
                    const NomadOptions& options, RunControl& control,
                    std::uint64_t seed, std::span<const RatingEntry> test = {});

struct HybridOptions {
  int rank = 0;
  std::vector<Endpoint> endpoints;  // one per machine
  int threads_per_machine = 1;
  Balancing balancing = Balancing::uniform;
  std::size_t batch_capacity = kDefaultBatchCapacity;
  std::chrono::nanoseconds max_delay = kDefaultMaxDelay;
  bool trace = false;
  std::chrono::milliseconds connect_timeout{20000};
};

/// Raised when a multi-process run loses a peer; carries the log up to the
/// last completed checkpoint.
class RunAborted : public TransportError {
 public:
  RunAborted(const std::string& what, ConvergenceLog partial)
      : TransportError(what), partial_log(std::move(partial)) {}
  ConvergenceLog partial_log;
};

/// Multi-process run: every process holds the full dataset and owns the user
/// block of its machine. Parcels arriving at a machine visit each local worker
/// once in a random order before going back on the network. Rank 0 drives
/// checkpoints and returns the assembled model and log; other ranks return
/// their local statistics with empty factors.
RunResult run_hybrid(const std::vector<RatingEntry>& train, std::size_t m, std::size_t n,
                     const HyperParams& params, const HybridOptions& options,
                     RunControl& control, std::uint64_t seed,
                     std::span<const RatingEntry> test = {});

/// Full-trace audit used by tests and the CLI.
struct AuditReport {
  std::size_t version_gaps = 0;          // columns whose versions are not 1..V exactly once
  std::size_t ownership_violations = 0;  // updates by a worker not owning the user row
  std::size_t step_mismatches = 0;       // step != step_size(update_count - 1)
  std::size_t count_gaps = 0;            // per-pair counts not consecutive
  std::size_t updates = 0;
  std::size_t processing_events = 0;
};

AuditReport audit_trace(std::span<const TraceRecord> trace, const Partition& partition,
                        const HyperParams& params, std::size_t n_items);

/// Groups hybrid process events by machine visit and counts visits that
/// repeat a worker or span two machines. Events without a visit id are ignored.
std::size_t audit_circulation(std::span<const TraceRecord> trace, int threads_per_machine);

}  // namespace nomad

#endif  // NOMAD_ENGINE_HPP

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

#include "nomad/engine.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <exception>
#include <mutex>
#include <thread>

#include "nomad/kernels.hpp"
#include "pause_gate.hpp"

namespace nomad {

std::string to_string(Balancing b) { return b == Balancing::uniform ? "uniform" : "two_choice"; }

Balancing parse_balancing(const std::string& s) {
  if (s == "uniform") return Balancing::uniform;
  if (s == "two_choice" || s == "two-choice") return Balancing::two_choice;
  throw Error("unknown balancing mode '" + s + "'");
}

std::pair<FactorMatrix, FactorMatrix> init_factors(std::size_t m, std::size_t n, int k,
                                                   std::uint64_t seed) {
  if (k < 1) throw Error("k must be at least 1");
  FactorMatrix W(m, k), H(n, k);
  const double scale = 1.0 / std::sqrt(static_cast<double>(k));
  for (std::size_t i = 0; i < m; ++i)
    for (int l = 0; l < k; ++l)
      W(i, l) = static_cast<Real>(scale * open_unit(mix_key(seed, 0, i, static_cast<std::uint64_t>(l))));
  for (std::size_t j = 0; j < n; ++j)
    for (int l = 0; l < k; ++l)
      H(j, l) = static_cast<Real>(scale * open_unit(mix_key(seed, 1, j, static_cast<std::uint64_t>(l))));
  return {std::move(W), std::move(H)};
}

int select_recipient(int self, std::span<const std::uint32_t> queue_estimates,
                     Balancing mode, Rng& rng, bool exclude_self) {
  const int p = static_cast<int>(queue_estimates.size());
  if (p <= 1) return self;
  // Candidate pool: all workers, or all but self.
  const int pool = exclude_self ? p - 1 : p;
  auto from_pool = [&](int x) { return exclude_self && x >= self ? x + 1 : x; };
  if (mode == Balancing::uniform || pool == 1) {
    std::uniform_int_distribution<int> pick(0, pool - 1);
    return from_pool(pick(rng));
  }
  std::uniform_int_distribution<int> first(0, pool - 1);
  std::uniform_int_distribution<int> second(0, pool - 2);
  const int a = first(rng);
  int b = second(rng);
  if (b >= a) ++b;
  const int qa = from_pool(a), qb = from_pool(b);
  const auto ea = queue_estimates[static_cast<std::size_t>(qa)];
  const auto eb = queue_estimates[static_cast<std::size_t>(qb)];
  if (ea != eb) return ea < eb ? qa : qb;
  return std::min(qa, qb);
}

std::size_t process_parcel(Shard& shard, FactorMatrix& W, ColumnParcel& parcel,
                           const HyperParams& params, int worker,
                           std::vector<TraceRecord>* trace) {
  auto slice = shard.item_slice(parcel.item);
  ++parcel.version;
  if (trace)
    trace->push_back({TraceRecord::Event::process, worker, parcel.item, parcel.version, -1, 0, 0.0, 0});
  std::span<Real> h(parcel.h);
  for (auto& e : slice) {
    const double s = step_size(params, e.update_count);
    sgd_update_pair(W.row(e.user), h, e.value, params.lambda, s);
    ++e.update_count;
    if (trace)
      trace->push_back({TraceRecord::Event::update, worker, parcel.item, parcel.version,
                        static_cast<std::int64_t>(e.user), e.update_count, s, 0});
  }
  return slice.size();
}

namespace {

using Clock = std::chrono::steady_clock;
using detail::PauseGate;

struct alignas(64) WorkerSlot {
  std::atomic<std::uint64_t> updates{0};
  std::vector<std::uint32_t> estimates;
  Rng rng;
  std::vector<TraceRecord> trace;
  double slowdown = 1.0;
};

class Engine {
 public:
  Engine(ShardedRatings data, const HyperParams& params, const NomadOptions& options,
         RunControl& control, std::uint64_t seed, std::span<const RatingEntry> test)
      : data_(std::move(data)),
        params_(params),
        options_(options),
        control_(control),
        test_(test),
        p_(options.workers),
        transport_(options.workers),
        slots_(static_cast<std::size_t>(options.workers)) {
    params_.validate();
    if (p_ < 1) throw Error("need at least one worker");
    if (static_cast<int>(data_.shards.size()) != p_ || data_.partition.p != p_)
      throw Error("data is sharded for " + std::to_string(data_.shards.size()) +
                  " workers but the run uses " + std::to_string(p_));
    if (!options.slowdown.empty() && options.slowdown.size() != static_cast<std::size_t>(p_))
      throw Error("slowdown needs one factor per worker");

    auto [W, H] = init_factors(data_.m, data_.n, params_.k, seed);
    W_ = std::move(W);
    Rng placement = make_rng(seed, 0x91ace);
    std::uniform_int_distribution<int> pick(0, p_ - 1);
    for (std::size_t j = 0; j < data_.n; ++j) {
      ColumnParcel parcel{static_cast<std::uint32_t>(j), 0,
                          std::vector<Real>(H.row(j).begin(), H.row(j).end())};
      const int q = pick(placement);
      transport_.send(q, std::move(parcel), q, 0);
    }
    for (int q = 0; q < p_; ++q) {
      auto& slot = slots_[static_cast<std::size_t>(q)];
      slot.estimates.assign(static_cast<std::size_t>(p_), 0);
      slot.rng = make_rng(seed, 1000 + static_cast<std::uint64_t>(q));
      if (!options.slowdown.empty()) slot.slowdown = std::max(1.0, options.slowdown[static_cast<std::size_t>(q)]);
    }

    const double nnz = static_cast<double>(data_.nnz());
    if (control_.budget.epochs)
      update_budget_ = static_cast<std::uint64_t>(std::ceil(*control_.budget.epochs * nnz));
    if (control_.checkpoint_epochs && *control_.checkpoint_epochs > 0 && nnz > 0)
      checkpoint_every_ = std::max<std::uint64_t>(
          1, static_cast<std::uint64_t>(std::llround(*control_.checkpoint_epochs * nnz)));
    next_checkpoint_.store(checkpoint_every_ ? checkpoint_every_ : UINT64_MAX);
  }

  RunResult run() {
    RunResult result;
    result.log.set_meta("solver", "nomad");
    result.log.set_meta("workers", std::to_string(p_));
    result.log.set_meta("balancing", to_string(options_.balancing));

    start_ = Clock::now();
    checkpoint(result, /*final=*/false);
    if (update_budget_ && *update_budget_ == 0) control_.request_stop();

    std::vector<std::thread> threads;
    threads.reserve(static_cast<std::size_t>(p_));
    for (int q = 0; q < p_; ++q) threads.emplace_back([this, q] { worker_main(q); });

    std::exception_ptr failure;
    try {
      coordinate(result);
    } catch (...) {
      failure = std::current_exception();
      control_.request_stop();
    }
    gate_.release();
    transport_.wake_all();
    for (auto& t : threads) t.join();
    if (!failure && worker_error_) failure = worker_error_;
    if (failure) std::rethrow_exception(failure);

    checkpoint(result, /*final=*/true);

    for (auto& slot : slots_) {
      result.trace.insert(result.trace.end(), std::make_move_iterator(slot.trace.begin()),
                          std::make_move_iterator(slot.trace.end()));
      result.updates_per_worker.push_back(slot.updates.load());
    }
    for (int q = 0; q < p_; ++q) result.final_queue_lengths.push_back(transport_.inbox(q).size());
    result.total_updates = total_updates_.load();
    return result;
  }

 private:
  double active_seconds() const {
    return std::chrono::duration<double>(Clock::now() - start_ - paused_).count();
  }

  void coordinate(RunResult& result) {
    auto last_timed = active_seconds();
    while (!control_.stop_requested()) {
      {
        std::unique_lock lock(coord_mu_);
        coord_cv_.wait_for(lock, std::chrono::milliseconds(2), [&] {
          return control_.stop_requested() || gate_.requested();
        });
      }
      const double now = active_seconds();
      if (control_.budget.seconds && now >= *control_.budget.seconds) control_.request_stop();
      if (control_.stop_requested()) break;
      const bool timed = control_.checkpoint_seconds && now - last_timed >= *control_.checkpoint_seconds;
      if (gate_.requested() || timed) {
        checkpoint(result, /*final=*/false);
        last_timed = active_seconds();
      }
    }
  }

  void checkpoint(RunResult& result, bool final) {
    const bool running = !final && started_;
    if (running) {
      gate_.request();
      transport_.wake_all();
      const auto timeout = std::chrono::duration<double>(control_.barrier_timeout_sec);
      if (!gate_.wait_quiescent(p_, std::chrono::duration_cast<std::chrono::nanoseconds>(timeout))) {
        control_.request_stop();
        gate_.release();
        throw Error("checkpoint barrier timed out: a worker did not reach a parcel boundary");
      }
    }
    const auto pause_begin = Clock::now();
    const double elapsed = std::chrono::duration<double>(pause_begin - start_ - paused_).count();

    FactorMatrix H(data_.n, params_.k);
    std::vector<char> seen(data_.n, 0);
    CheckpointStats stats;
    stats.elapsed_sec = elapsed;
    stats.total_updates = total_updates_.load();
    bool conserved = true;
    for (int q = 0; q < p_; ++q) {
      const auto& box = transport_.inbox(q);
      stats.queue_lengths.push_back(box.size());
      box.for_each([&](const Envelope& env) {
        const auto j = env.parcel.item;
        ++stats.parcels_seen;
        if (j >= data_.n || seen[j]) {
          conserved = false;
          return;
        }
        seen[j] = 1;
        std::copy(env.parcel.h.begin(), env.parcel.h.end(), H.row(j).begin());
      });
    }
    stats.conserved = conserved && stats.parcels_seen == data_.n;
    if (!stats.conserved) {
      control_.request_stop();
      if (running) gate_.release();
      throw Error("parcel conservation violated: " + std::to_string(stats.parcels_seen) +
                  " parcels held for " + std::to_string(data_.n) + " items");
    }

    const bool progressed = result.log.empty() || stats.total_updates > result.log.back().total_updates;
    if (progressed) {
      const double obj = objective(W_, H, data_, params_);
      const double rmse = test_.empty() ? std::nan("") : test_rmse(W_, H, test_);
      const double t = result.log.empty()
                           ? 0.0
                           : std::max(elapsed, std::nextafter(result.log.back().elapsed_sec, 1e300));
      result.log.append({t, stats.total_updates, obj, rmse});
      if (control_.budget.target_rmse && !test_.empty() && rmse <= *control_.budget.target_rmse)
        control_.request_stop();
    }
    result.checkpoints.push_back(stats);
    result.W = W_;
    result.H = std::move(H);

    if (checkpoint_every_) {
      const auto total = stats.total_updates;
      next_checkpoint_.store((total / checkpoint_every_ + 1) * checkpoint_every_);
    }
    paused_ += Clock::now() - pause_begin;
    if (running) gate_.release();
    started_ = true;
  }

  void worker_main(int q) {
    try {
      worker_loop(q);
    } catch (...) {
      {
        std::lock_guard lock(coord_mu_);
        if (!worker_error_) worker_error_ = std::current_exception();
      }
      control_.request_stop();
      transport_.wake_all();
      coord_cv_.notify_all();
    }
    gate_.worker_exited();
  }

  void worker_loop(int q) {
    auto& slot = slots_[static_cast<std::size_t>(q)];
    auto& shard = data_.shards[static_cast<std::size_t>(q)];
    auto& inbox = transport_.inbox(q);
    std::vector<TraceRecord>* trace = options_.trace ? &slot.trace : nullptr;
    std::chrono::nanoseconds debt{0};

    while (true) {
      if (gate_.requested()) gate_.park(control_);
      if (control_.stop_requested()) break;
      auto env = inbox.pop_for(std::chrono::milliseconds(1));
      if (!env) continue;
      slot.estimates[static_cast<std::size_t>(env->sender)] = env->sender_queue_len;

      const auto t0 = slot.slowdown > 1.0 ? Clock::now() : Clock::time_point{};
      const std::size_t count = process_parcel(shard, W_, env->parcel, params_, q, trace);
      if (slot.slowdown > 1.0) {
        debt += std::chrono::duration_cast<std::chrono::nanoseconds>(
            (Clock::now() - t0) * (slot.slowdown - 1.0));
        if (debt > std::chrono::microseconds(200)) {
          const auto s0 = Clock::now();
          std::this_thread::sleep_for(debt);
          debt -= std::chrono::duration_cast<std::chrono::nanoseconds>(Clock::now() - s0);
        }
      }

      const auto own_len = static_cast<std::uint32_t>(inbox.size());
      slot.estimates[static_cast<std::size_t>(q)] = own_len;
      const int dest = select_recipient(q, slot.estimates, options_.balancing, slot.rng,
                                        options_.exclude_self);
      transport_.send(dest, std::move(env->parcel), q, own_len);

      slot.updates.fetch_add(count, std::memory_order_relaxed);
      const auto total = total_updates_.fetch_add(count, std::memory_order_acq_rel) + count;
      if (update_budget_ && total >= *update_budget_) {
        control_.request_stop();
        coord_cv_.notify_all();
      } else if (total >= next_checkpoint_.load(std::memory_order_acquire)) {
        gate_.request();
        coord_cv_.notify_all();
      }
    }
  }

  ShardedRatings data_;
  HyperParams params_;
  NomadOptions options_;
  RunControl& control_;
  std::span<const RatingEntry> test_;
  int p_;
  InProcessTransport transport_;
  std::vector<WorkerSlot> slots_;
  FactorMatrix W_;

  PauseGate gate_;
  std::mutex coord_mu_;
  std::condition_variable coord_cv_;
  std::exception_ptr worker_error_;

  std::atomic<std::uint64_t> total_updates_{0};
  std::optional<std::uint64_t> update_budget_;
  std::uint64_t checkpoint_every_ = 0;
  std::atomic<std::uint64_t> next_checkpoint_{UINT64_MAX};

  Clock::time_point start_;
  Clock::duration paused_{0};
  bool started_ = false;
};

}  // namespace

RunResult run_nomad(ShardedRatings data, const HyperParams& params,
                    const NomadOptions& options, RunControl& control, std::uint64_t seed,
                    std::span<const RatingEntry> test) {
  if (control.budget.empty()) throw Error("run_nomad needs a stop budget");
  Engine engine(std::move(data), params, options, control, seed, test);
  return engine.run();
}

}  // namespace nomad

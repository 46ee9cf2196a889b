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

#include <poll.h>
#include <sys/socket.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cerrno>
#include <cmath>
#include <condition_variable>
#include <map>
#include <mutex>
#include <numeric>
#include <thread>

#include "nomad/data.hpp"
#include "nomad/engine.hpp"
#include "pause_gate.hpp"

namespace nomad {

namespace {

using Clock = std::chrono::steady_clock;
using detail::PauseGate;

/// A parcel on its way through this machine's workers.
struct Visit {
  ColumnParcel parcel;
  std::vector<int> route;  // local thread ids
  std::uint64_t id = 0;    // unique per machine visit
  std::size_t next = 0;
};

struct Outgoing {
  enum class Kind { parcel, frame, shutdown } kind = Kind::parcel;
  int dest = -1;  // -1 broadcasts a frame to every peer
  ColumnParcel parcel;
  ParcelBatch frame;

  static Outgoing make(Kind kind, int dest, ColumnParcel parcel = {}) {
    Outgoing out;
    out.kind = kind;
    out.dest = dest;
    out.parcel = std::move(parcel);
    return out;
  }
};

struct alignas(64) LocalWorker {
  std::atomic<std::uint64_t> updates{0};
  std::uint64_t quota = UINT64_MAX;
  std::atomic<bool> quota_met{false};
  Rng rng;
  std::vector<TraceRecord> trace;
};

class HybridMachine {
 public:
  HybridMachine(const std::vector<RatingEntry>& train, std::size_t m, std::size_t n,
                const HyperParams& params, const HybridOptions& options, RunControl& control,
                std::uint64_t seed, std::span<const RatingEntry> test)
      : params_(params),
        opts_(options),
        control_(control),
        test_(test),
        rank_(options.rank),
        M_(static_cast<int>(options.endpoints.size())),
        T_(options.threads_per_machine),
        inbox_(static_cast<std::size_t>(options.threads_per_machine)),
        workers_(static_cast<std::size_t>(options.threads_per_machine)),
        estimates_(static_cast<std::size_t>(options.endpoints.size())) {
    params_.validate();
    if (M_ < 1) throw Error("need at least one endpoint");
    if (rank_ < 0 || rank_ >= M_) throw Error("rank out of range");
    if (T_ < 1) throw Error("threads_per_machine must be >= 1");
    data_ = shard(train, m, n, partition_rows(m, M_ * T_));

    auto [W, H] = init_factors(m, n, params_.k, seed);
    W_ = std::move(W);
    H0_ = std::move(H);
    for (auto& e : estimates_) e.store(0);

    Rng placement = make_rng(seed, 0x91ace);
    std::uniform_int_distribution<int> pick(0, M_ * T_ - 1);
    Rng route_rng = make_rng(seed, 0x40075 + static_cast<std::uint64_t>(rank_));
    for (std::size_t j = 0; j < n; ++j) {
      const int g = pick(placement);
      if (g / T_ != rank_) continue;
      Visit v;
      v.parcel = ColumnParcel{static_cast<std::uint32_t>(j), 0,
                              std::vector<Real>(H0_.row(j).begin(), H0_.row(j).end())};
      v.route = route_starting_at(g % T_, route_rng);
      v.id = new_visit_id();
      v.next = 1;
      inbox_[static_cast<std::size_t>(v.route[0])].push(std::move(v));
    }
    recv_rng_ = make_rng(seed, 0x4ec7 + static_cast<std::uint64_t>(rank_));

    for (int t = 0; t < T_; ++t) {
      const int g = global(t);
      workers_[static_cast<std::size_t>(t)].rng = make_rng(seed, 1000 + static_cast<std::uint64_t>(g));
      local_nnz_ += data_.shards[static_cast<std::size_t>(g)].entries.size();
    }
    if (rank_ == 0) epochs_ = control_.budget.epochs;
    if (rank_ == 0 && control_.checkpoint_epochs && *control_.checkpoint_epochs > 0 && local_nnz_ > 0) {
      mark_step_ = std::max<std::uint64_t>(
          1, static_cast<std::uint64_t>(std::llround(*control_.checkpoint_epochs *
                                                     static_cast<double>(local_nnz_))));
      next_mark_.store(mark_step_);
    }

    Hello hello{static_cast<std::uint32_t>(rank_), static_cast<std::uint32_t>(params_.k),
                static_cast<std::uint32_t>(M_), n};
    mesh_ = std::make_unique<SocketMesh>(rank_, opts_.endpoints, hello, opts_.connect_timeout);
  }

  RunResult run() {
    RunResult result;
    result.log.set_meta("solver", "nomad-hybrid");
    result.log.set_meta("machines", std::to_string(M_));
    result.log.set_meta("threads_per_machine", std::to_string(T_));
    result.log.set_meta("balancing", to_string(opts_.balancing));

    start_ = Clock::now();
    if (rank_ == 0) {
      const double obj = objective(W_, H0_, data_, params_);
      const double rmse = test_.empty() ? std::nan("") : test_rmse(W_, H0_, test_);
      result.log.append({0.0, 0, obj, rmse});
    }

    std::thread sender([this] { sender_main(); });
    std::thread receiver([this] { receiver_main(); });
    std::vector<std::thread> threads;

    std::exception_ptr failure;
    try {
      if (rank_ == 0) {
        post_frame(-1, ControlOp::start, epochs_ ? std::bit_cast<std::uint64_t>(*epochs_) : 0);
      } else {
        wait_for([&] { return start_received_; }, "the start frame");
      }
      set_quotas();
      for (int t = 0; t < T_; ++t) threads.emplace_back([this, t] { worker_main(t); });
      if (rank_ == 0)
        coordinate(result);
      else
        follow();
    } catch (...) {
      failure = std::current_exception();
    }

    control_.request_stop();
    gate_.release();
    for (auto& box : inbox_) box.wake_all();
    for (auto& t : threads) t.join();
    outbox_.push(Outgoing::make(Outgoing::Kind::shutdown, -1));
    sender.join();
    shutdown_.store(true);
    receiver.join();
    mesh_->close_all();

    if (!failure) {
      std::lock_guard lock(ctrl_mu_);
      if (error_) failure = error_;
    }
    if (failure) {
      try {
        std::rethrow_exception(failure);
      } catch (const std::exception& e) {
        throw RunAborted(e.what(), result.log);
      }
    }

    for (auto& w : workers_) {
      result.trace.insert(result.trace.end(), std::make_move_iterator(w.trace.begin()),
                          std::make_move_iterator(w.trace.end()));
      result.updates_per_worker.push_back(w.updates.load());
    }
    for (auto& box : inbox_) result.final_queue_lengths.push_back(box.size());
    if (rank_ != 0) result.total_updates = local_updates();
    return result;
  }

 private:
  int global(int t) const { return rank_ * T_ + t; }

  std::vector<int> route_starting_at(int first, Rng& rng) const {
    std::vector<int> route;
    route.push_back(first);
    for (int t = 0; t < T_; ++t)
      if (t != first) route.push_back(t);
    std::shuffle(route.begin() + 1, route.end(), rng);
    return route;
  }

  std::vector<int> fresh_route(Rng& rng) const {
    std::vector<int> route(static_cast<std::size_t>(T_));
    std::iota(route.begin(), route.end(), 0);
    std::shuffle(route.begin(), route.end(), rng);
    return route;
  }

  void set_quotas() {
    for (int t = 0; t < T_; ++t) {
      auto& w = workers_[static_cast<std::size_t>(t)];
      if (epochs_) {
        const auto nnz = data_.shards[static_cast<std::size_t>(global(t))].entries.size();
        w.quota = static_cast<std::uint64_t>(std::ceil(*epochs_ * static_cast<double>(nnz)));
      }
      if (w.quota == 0) w.quota_met = true;
    }
  }

  std::uint32_t local_queue_len() const {
    std::size_t total = 0;
    for (const auto& box : inbox_) total += box.size();
    return static_cast<std::uint32_t>(total);
  }

  std::uint64_t local_updates() const { return local_total_.load(std::memory_order_acquire); }

  bool local_quota_met() const {
    return std::all_of(workers_.begin(), workers_.end(),
                       [](const LocalWorker& w) { return w.quota_met.load(); });
  }

  std::uint64_t new_visit_id() {
    return (static_cast<std::uint64_t>(rank_ + 1) << 40) | ++visit_seq_;
  }

  void fail(std::exception_ptr e) {
    {
      std::lock_guard lock(ctrl_mu_);
      if (!error_) error_ = e;
    }
    ctrl_cv_.notify_all();
  }

  bool failed() {
    std::lock_guard lock(ctrl_mu_);
    return static_cast<bool>(error_);
  }

  void post_frame(int dest, ControlOp op, std::uint64_t arg,
                  std::vector<ColumnParcel> parcels = {}) {
    auto out = Outgoing::make(Outgoing::Kind::frame, dest);
    out.frame.type = MessageType::control;
    out.frame.op = op;
    out.frame.arg = arg;
    out.frame.parcels = std::move(parcels);
    outbox_.push(std::move(out));
  }

  void post_stop() {
    auto out = Outgoing::make(Outgoing::Kind::frame, -1);
    out.frame.type = MessageType::stop;
    outbox_.push(std::move(out));
  }

  // ---- workers ---------------------------------------------------------

  void worker_main(int t) {
    try {
      worker_loop(t);
    } catch (...) {
      fail(std::current_exception());
      control_.request_stop();
      for (auto& box : inbox_) box.wake_all();
    }
    gate_.worker_exited();
  }

  void worker_loop(int t) {
    auto& w = workers_[static_cast<std::size_t>(t)];
    const int g = global(t);
    auto& shard_g = data_.shards[static_cast<std::size_t>(g)];
    auto& inbox = inbox_[static_cast<std::size_t>(t)];
    std::vector<TraceRecord>* trace = opts_.trace ? &w.trace : nullptr;
    std::vector<std::uint32_t> est(static_cast<std::size_t>(M_));

    while (true) {
      if (gate_.requested()) gate_.park(control_);
      if (control_.stop_requested()) break;
      auto visit = inbox.pop_for(std::chrono::milliseconds(1));
      if (!visit) continue;

      if (!w.quota_met.load(std::memory_order_relaxed)) {
        const std::size_t mark = trace ? trace->size() : 0;
        const auto count = process_parcel(shard_g, W_, visit->parcel, params_, g, trace);
        if (trace) (*trace)[mark].visit = visit->id;
        const auto total = w.updates.fetch_add(count, std::memory_order_relaxed) + count;
        const auto local = local_total_.fetch_add(count, std::memory_order_acq_rel) + count;
        if (total >= w.quota) {
          w.quota_met.store(true);
          ctrl_cv_.notify_all();
        }
        if (local >= next_mark_.load(std::memory_order_acquire)) {
          gate_.request();
          ctrl_cv_.notify_all();
        }
      }

      if (visit->next < visit->route.size()) {
        const int to = visit->route[visit->next++];
        inbox_[static_cast<std::size_t>(to)].push(std::move(*visit));
        continue;
      }
      for (int r = 0; r < M_; ++r) est[static_cast<std::size_t>(r)] = estimates_[static_cast<std::size_t>(r)].load();
      est[static_cast<std::size_t>(rank_)] = local_queue_len();
      const int dest = M_ == 1 ? rank_ : select_recipient(rank_, est, opts_.balancing, w.rng);
      if (dest == rank_) {
        visit->route = fresh_route(w.rng);
        visit->id = new_visit_id();
        visit->next = 1;
        inbox_[static_cast<std::size_t>(visit->route[0])].push(std::move(*visit));
      } else {
        outbox_.push(Outgoing::make(Outgoing::Kind::parcel, dest, std::move(visit->parcel)));
      }
    }
  }

  // ---- network ---------------------------------------------------------

  void sender_main() {
    const auto Mz = static_cast<std::size_t>(M_);
    std::vector<std::vector<ColumnParcel>> pending(Mz);
    std::vector<Clock::time_point> first(Mz);
    std::vector<std::uint8_t> bytes;
    bool broken = false;

    auto send = [&](int d, const ParcelBatch& batch) {
      if (broken) return;
      bytes.clear();
      encode_batch_into(batch, params_.k, bytes);
      try {
        mesh_->send_frame(d, bytes);
      } catch (...) {
        broken = true;
        fail(std::current_exception());
      }
    };
    auto flush = [&](int d) {
      auto& p = pending[static_cast<std::size_t>(d)];
      if (p.empty()) return;
      ParcelBatch batch;
      batch.sender_queue_len = local_queue_len();
      batch.parcels = std::move(p);
      p.clear();
      send(d, batch);
    };
    auto send_frame = [&](int d, ParcelBatch frame) {
      flush(d);
      frame.sender_queue_len = local_queue_len();
      send(d, frame);
    };

    while (true) {
      auto item = outbox_.pop_for(std::chrono::microseconds(500));
      if (item) {
        switch (item->kind) {
          case Outgoing::Kind::parcel: {
            auto& p = pending[static_cast<std::size_t>(item->dest)];
            if (p.empty()) first[static_cast<std::size_t>(item->dest)] = Clock::now();
            p.push_back(std::move(item->parcel));
            break;
          }
          case Outgoing::Kind::frame:
            if (item->dest >= 0) {
              send_frame(item->dest, std::move(item->frame));
            } else {
              for (int d = 0; d < M_; ++d)
                if (d != rank_) send_frame(d, item->frame);
            }
            break;
          case Outgoing::Kind::shutdown:
            for (int d = 0; d < M_; ++d) flush(d);
            return;
        }
      }
      const auto now = Clock::now();
      for (int d = 0; d < M_; ++d) {
        const auto& p = pending[static_cast<std::size_t>(d)];
        if (flush_policy(p.size(), now - first[static_cast<std::size_t>(d)], opts_.batch_capacity,
                         opts_.max_delay))
          flush(d);
      }
    }
  }

  void receiver_main() {
    const auto Mz = static_cast<std::size_t>(M_);
    std::vector<FrameReader> readers(Mz);
    std::vector<bool> open(Mz, false);
    for (int r = 0; r < M_; ++r) open[static_cast<std::size_t>(r)] = r != rank_;
    std::array<std::uint8_t, 1 << 16> buf{};

    while (!shutdown_.load()) {
      std::vector<pollfd> fds;
      std::vector<int> peers;
      for (int r = 0; r < M_; ++r) {
        if (!open[static_cast<std::size_t>(r)]) continue;
        fds.push_back(pollfd{mesh_->fd(r), POLLIN, 0});
        peers.push_back(r);
      }
      if (fds.empty()) {
        std::this_thread::sleep_for(std::chrono::milliseconds(2));
        continue;
      }
      const int ready = ::poll(fds.data(), fds.size(), 5);
      if (ready < 0) {
        if (errno == EINTR) continue;
        fail(std::make_exception_ptr(TransportError("poll failed")));
        return;
      }
      for (std::size_t x = 0; x < fds.size(); ++x) {
        if (!(fds[x].revents & (POLLIN | POLLHUP | POLLERR))) continue;
        const int r = peers[x];
        const auto got = ::recv(fds[x].fd, buf.data(), buf.size(), 0);
        if (got <= 0) {
          if (got < 0 && (errno == EINTR || errno == EAGAIN)) continue;
          open[static_cast<std::size_t>(r)] = false;
          if (!stopping_.load())
            fail(std::make_exception_ptr(
                TransportError("peer " + std::to_string(r) + " disconnected")));
          continue;
        }
        auto& reader = readers[static_cast<std::size_t>(r)];
        try {
          reader.feed(std::span<const std::uint8_t>(buf.data(), static_cast<std::size_t>(got)));
          while (auto frame = reader.next()) handle(r, decode_batch(*frame, params_.k));
        } catch (...) {
          open[static_cast<std::size_t>(r)] = false;
          fail(std::current_exception());
        }
      }
    }
  }

  void handle(int peer, ParcelBatch batch) {
    estimates_[static_cast<std::size_t>(peer)].store(batch.sender_queue_len);
    if (batch.type == MessageType::parcels) {
      for (auto& parcel : batch.parcels) {
        Visit v;
        v.parcel = std::move(parcel);
        v.route = fresh_route(recv_rng_);
        v.id = new_visit_id();
        v.next = 1;
        inbox_[static_cast<std::size_t>(v.route[0])].push(std::move(v));
      }
      return;
    }
    std::unique_lock lock(ctrl_mu_);
    if (batch.type == MessageType::stop) {
      stop_received_ = true;
      stopping_.store(true);
    } else if (batch.type == MessageType::control) {
      switch (batch.op) {
        case ControlOp::pause: pause_seq_ = batch.arg; break;
        case ControlOp::marker: ++markers_[batch.arg]; break;
        case ControlOp::resume: resume_seq_ = batch.arg; break;
        case ControlOp::quota_done: ++quota_done_peers_; break;
        case ControlOp::start:
          if (batch.arg) epochs_ = std::bit_cast<double>(batch.arg);
          start_received_ = true;
          break;
        case ControlOp::snapshot_w:
          for (const auto& p : batch.parcels) {
            if (p.item >= data_.m) throw FramingError("snapshot row out of range");
            std::copy(p.h.begin(), p.h.end(), stage_W_.row(p.item).begin());
          }
          break;
        case ControlOp::snapshot_h:
          for (const auto& p : batch.parcels) {
            ++stage_parcels_;
            if (p.item >= data_.n || stage_seen_[p.item]) {
              stage_conflict_ = true;
              continue;
            }
            stage_seen_[p.item] = 1;
            std::copy(p.h.begin(), p.h.end(), stage_H_.row(p.item).begin());
          }
          break;
        case ControlOp::snapshot_done:
          ++snapshots_done_;
          stage_updates_ += batch.arg;
          break;
        case ControlOp::none: throw FramingError("control frame without opcode");
      }
    } else {
      throw FramingError("unexpected frame type after handshake");
    }
    lock.unlock();
    ctrl_cv_.notify_all();
  }

  // ---- checkpoint protocol ----------------------------------------------

  std::chrono::nanoseconds barrier_timeout() const {
    return std::chrono::duration_cast<std::chrono::nanoseconds>(
        std::chrono::duration<double>(control_.barrier_timeout_sec));
  }

  template <typename Pred>
  void wait_for(Pred pred, const char* what) {
    std::unique_lock lock(ctrl_mu_);
    const bool ok = ctrl_cv_.wait_for(lock, barrier_timeout(), [&] { return error_ || pred(); });
    if (error_) std::rethrow_exception(error_);
    if (!ok) throw TransportError(std::string("checkpoint timed out waiting for ") + what);
  }

  /// Parks local workers, then exchanges markers so that every parcel sent
  /// before the pause has arrived in some inbox.
  void quiesce(std::uint64_t seq) {
    gate_.request();
    for (auto& box : inbox_) box.wake_all();
    if (!gate_.wait_quiescent(T_, barrier_timeout()))
      throw Error("checkpoint barrier timed out: a worker did not reach a parcel boundary");
    if (failed()) wait_for([] { return true; }, "workers");
    post_frame(-1, ControlOp::marker, seq);
    wait_for([&] { return markers_[seq] >= M_ - 1; }, "markers");
  }

  std::vector<ColumnParcel> held_parcels() const {
    std::vector<ColumnParcel> held;
    for (const auto& box : inbox_) box.for_each([&](const Visit& v) { held.push_back(v.parcel); });
    return held;
  }

  std::vector<ColumnParcel> owned_rows() const {
    std::vector<ColumnParcel> rows;
    for (std::size_t i = 0; i < data_.m; ++i) {
      if (data_.partition.assignment[i] / T_ != rank_) continue;
      rows.push_back(ColumnParcel{static_cast<std::uint32_t>(i), 0,
                                  std::vector<Real>(W_.row(i).begin(), W_.row(i).end())});
    }
    return rows;
  }

  double active_seconds() const {
    return std::chrono::duration<double>(Clock::now() - start_ - paused_).count();
  }

  void follow() {
    std::uint64_t handled = 0;
    bool quota_sent = false;
    while (true) {
      {
        std::unique_lock lock(ctrl_mu_);
        ctrl_cv_.wait_for(lock, std::chrono::milliseconds(2), [&] {
          return error_ || stop_received_ || pause_seq_ > handled;
        });
        if (error_) std::rethrow_exception(error_);
        if (stop_received_) return;
      }
      if (!quota_sent && epochs_ && local_quota_met()) {
        post_frame(0, ControlOp::quota_done, 0);
        quota_sent = true;
      }
      std::uint64_t seq;
      {
        std::lock_guard lock(ctrl_mu_);
        seq = pause_seq_;
      }
      if (seq <= handled) continue;
      handled = seq;
      quiesce(seq);
      post_frame(0, ControlOp::snapshot_w, seq, owned_rows());
      post_frame(0, ControlOp::snapshot_h, seq, held_parcels());
      post_frame(0, ControlOp::snapshot_done, local_updates());
      wait_for([&] { return stop_received_ || resume_seq_ >= seq; }, "resume");
      {
        std::lock_guard lock(ctrl_mu_);
        markers_.erase(seq);
        if (stop_received_) return;
      }
      gate_.release();
    }
  }

  void coordinate(RunResult& result) {
    bool local_quota_counted = false;
    double last_timed = 0.0;
    while (true) {
      {
        std::unique_lock lock(ctrl_mu_);
        ctrl_cv_.wait_for(lock, std::chrono::milliseconds(2),
                          [&] { return static_cast<bool>(error_) || gate_.requested(); });
        if (error_) std::rethrow_exception(error_);
      }
      if (!local_quota_counted && epochs_ && local_quota_met()) {
        local_quota_counted = true;
        std::lock_guard lock(ctrl_mu_);
        ++quota_done_peers_;
      }
      const double now = active_seconds();
      bool final = control_.stop_requested();
      if (control_.budget.seconds && now >= *control_.budget.seconds) final = true;
      {
        std::lock_guard lock(ctrl_mu_);
        if (epochs_ && quota_done_peers_ >= M_) final = true;
      }
      const bool due = gate_.requested() ||
                       (control_.checkpoint_seconds && now - last_timed >= *control_.checkpoint_seconds);
      if (!final && !due) continue;
      if (global_checkpoint(result, final)) return;
      last_timed = active_seconds();
    }
  }

  /// Returns true when the run is over.
  bool global_checkpoint(RunResult& result, bool final) {
    const std::uint64_t seq = ++seq_;
    {
      std::lock_guard lock(ctrl_mu_);
      stage_W_ = W_;
      stage_H_ = FactorMatrix(data_.n, params_.k);
      stage_seen_.assign(data_.n, 0);
      stage_parcels_ = 0;
      stage_updates_ = 0;
      stage_conflict_ = false;
      snapshots_done_ = 0;
    }
    const auto pause_begin = Clock::now();
    post_frame(-1, ControlOp::pause, seq);
    quiesce(seq);
    const double elapsed = std::chrono::duration<double>(pause_begin - start_ - paused_).count();
    wait_for([&] { return snapshots_done_ >= M_ - 1; }, "snapshots");

    CheckpointStats stats;
    stats.elapsed_sec = elapsed;
    FactorMatrix W, H;
    {
      std::lock_guard lock(ctrl_mu_);
      for (const auto& p : held_parcels()) {
        ++stage_parcels_;
        if (p.item >= data_.n || stage_seen_[p.item]) {
          stage_conflict_ = true;
          continue;
        }
        stage_seen_[p.item] = 1;
        std::copy(p.h.begin(), p.h.end(), stage_H_.row(p.item).begin());
      }
      for (std::size_t i = 0; i < data_.m; ++i)
        if (data_.partition.assignment[i] / T_ == rank_)
          std::copy(W_.row(i).begin(), W_.row(i).end(), stage_W_.row(i).begin());
      stats.parcels_seen = stage_parcels_;
      stats.conserved = !stage_conflict_ && stage_parcels_ == data_.n;
      stats.total_updates = stage_updates_ + local_updates();
      W = stage_W_;
      H = stage_H_;
    }
    for (const auto& box : inbox_) stats.queue_lengths.push_back(box.size());
    if (!stats.conserved)
      throw Error("parcel conservation violated: " + std::to_string(stats.parcels_seen) +
                  " parcels held for " + std::to_string(data_.n) + " items");

    bool done = final;
    if (stats.total_updates > result.log.back().total_updates) {
      const double obj = objective(W, H, data_, params_);
      const double rmse = test_.empty() ? std::nan("") : test_rmse(W, H, test_);
      const double t = std::max(elapsed, std::nextafter(result.log.back().elapsed_sec, 1e300));
      result.log.append({t, stats.total_updates, obj, rmse});
      if (control_.budget.target_rmse && !test_.empty() && rmse <= *control_.budget.target_rmse)
        done = true;
    }
    result.checkpoints.push_back(stats);
    result.total_updates = stats.total_updates;
    if (mark_step_) next_mark_.store((local_updates() / mark_step_ + 1) * mark_step_);
    result.W = std::move(W);
    result.H = std::move(H);

    if (done) {
      stopping_.store(true);
      post_stop();
      return true;
    }
    post_frame(-1, ControlOp::resume, seq);
    {
      std::lock_guard lock(ctrl_mu_);
      markers_.erase(seq);
    }
    paused_ += Clock::now() - pause_begin;
    gate_.release();
    return false;
  }

  ShardedRatings data_;
  HyperParams params_;
  HybridOptions opts_;
  RunControl& control_;
  std::span<const RatingEntry> test_;
  int rank_, M_, T_;
  FactorMatrix W_, H0_;
  std::size_t local_nnz_ = 0;
  std::atomic<std::uint64_t> local_total_{0};
  std::uint64_t mark_step_ = 0;
  std::atomic<std::uint64_t> next_mark_{UINT64_MAX};

  std::deque<ConcurrentQueue<Visit>> inbox_;
  std::vector<LocalWorker> workers_;
  std::vector<std::atomic<std::uint32_t>> estimates_;
  ConcurrentQueue<Outgoing> outbox_;
  std::unique_ptr<SocketMesh> mesh_;
  Rng recv_rng_;
  PauseGate gate_;
  std::atomic<bool> shutdown_{false};
  std::atomic<std::uint64_t> visit_seq_{0};
  std::atomic<bool> stopping_{false};

  std::mutex ctrl_mu_;
  std::condition_variable ctrl_cv_;
  std::exception_ptr error_;
  std::uint64_t pause_seq_ = 0;
  std::uint64_t resume_seq_ = 0;
  std::map<std::uint64_t, int> markers_;
  bool stop_received_ = false;
  bool start_received_ = false;
  std::optional<double> epochs_;
  int quota_done_peers_ = 0;
  int snapshots_done_ = 0;
  std::uint64_t seq_ = 0;

  FactorMatrix stage_W_, stage_H_;
  std::vector<char> stage_seen_;
  std::size_t stage_parcels_ = 0;
  std::uint64_t stage_updates_ = 0;
  bool stage_conflict_ = false;

  Clock::time_point start_;
  Clock::duration paused_{0};
};

}  // namespace

RunResult run_hybrid(const std::vector<RatingEntry>& train, std::size_t m, std::size_t n,
                     const HyperParams& params, const HybridOptions& options,
                     RunControl& control, std::uint64_t seed, std::span<const RatingEntry> test) {
  if (options.rank == 0 && control.budget.empty())
    throw Error("run_hybrid needs a stop budget on rank 0");
  HybridMachine machine(train, m, n, params, options, control, seed, test);
  return machine.run();
}

}  // namespace nomad

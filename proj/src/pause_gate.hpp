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

#ifndef NOMAD_SRC_PAUSE_GATE_HPP
#define NOMAD_SRC_PAUSE_GATE_HPP

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <mutex>

#include "nomad/engine.hpp"

namespace nomad::detail {

/// Barrier that parks workers between parcels while a checkpoint runs.
class PauseGate {
 public:
  bool requested() const { return requested_.load(std::memory_order_acquire); }
  void request() { requested_.store(true, std::memory_order_release); }

  /// Blocks until the next release(), or until a stop is requested.
  void park(const RunControl& control) {
    std::unique_lock lock(mu_);
    ++parked_;
    coord_cv_.notify_all();
    const auto gen = generation_;
    worker_cv_.wait(lock, [&] { return generation_ != gen || control.stop_requested(); });
    --parked_;
  }

  void worker_exited() {
    std::lock_guard lock(mu_);
    ++exited_;
    coord_cv_.notify_all();
  }

  /// True once every worker is parked or gone.
  bool wait_quiescent(int workers, std::chrono::nanoseconds timeout) {
    std::unique_lock lock(mu_);
    return coord_cv_.wait_for(lock, timeout, [&] { return parked_ + exited_ == workers; });
  }

  void release() {
    {
      std::lock_guard lock(mu_);
      requested_.store(false, std::memory_order_release);
      ++generation_;
    }
    worker_cv_.notify_all();
  }

 private:
  std::atomic<bool> requested_{false};
  std::mutex mu_;
  std::condition_variable worker_cv_, coord_cv_;
  int parked_ = 0;
  int exited_ = 0;
  std::uint64_t generation_ = 0;
};

}  // namespace nomad::detail

#endif  // NOMAD_SRC_PAUSE_GATE_HPP

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

#ifndef NOMAD_TRANSPORT_HPP
#define NOMAD_TRANSPORT_HPP

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nomad/core.hpp"

namespace nomad {

class TransportError : public Error {
 public:
  using Error::Error;
};

class FramingError : public TransportError {
 public:
  using TransportError::TransportError;
};

class HandshakeError : public TransportError {
 public:
  using TransportError::TransportError;
};

/// The nomadic unit: an item column h_j, owned by whoever holds the parcel.
struct ColumnParcel {
  std::uint32_t item = 0;
  std::uint64_t version = 0;  // processing events applied so far
  std::vector<Real> h;

  friend bool operator==(const ColumnParcel&, const ColumnParcel&) = default;
};

enum class MessageType : std::uint8_t { parcels = 1, control = 2, stop = 3, hello = 4, hello_ack = 5 };

/// Control-frame opcodes used by the multi-process checkpoint protocol.
enum class ControlOp : std::uint8_t {
  none = 0,
  pause = 1,          // coordinator -> all: park workers at parcel boundaries
  marker = 2,         // peer -> peer: no parcels follow on this channel until resume
  snapshot_w = 3,     // peer -> coordinator: owned W rows (parcel.item = user)
  snapshot_h = 4,     // peer -> coordinator: columns currently held
  snapshot_done = 5,  // peer -> coordinator: arg = local update count
  resume = 6,         // coordinator -> all
  quota_done = 7,     // peer -> coordinator: every local worker met its update quota
  start = 8,          // coordinator -> all: arg = epoch budget as f64 bits, 0 for none
};

struct ParcelBatch {
  MessageType type = MessageType::parcels;
  std::uint32_t sender_queue_len = 0;
  ControlOp op = ControlOp::none;  // control frames only
  std::uint64_t arg = 0;           // control frames only
  std::vector<ColumnParcel> parcels;

  friend bool operator==(const ParcelBatch&, const ParcelBatch&) = default;
};

/// Frame layout, little-endian:
///   u32 frame length (excluding itself), u8 type, u32 sender_queue_len, then
///   type 1 (parcels): u32 count, count x (u32 item, u64 version, k x f64)
///   type 2 (control): u8 op, u64 arg, u32 count, count x parcel as above
///   type 3 (stop):    nothing further
std::vector<std::uint8_t> encode_batch(const ParcelBatch& batch, int k);
void encode_batch_into(const ParcelBatch& batch, int k, std::vector<std::uint8_t>& out);

/// Decodes exactly one frame (length prefix included). Rejects truncation,
/// trailing bytes, unknown types, vectors whose length is not k and
/// non-finite components.
ParcelBatch decode_batch(std::span<const std::uint8_t> frame, int k);

struct Hello {
  std::uint32_t rank = 0;
  std::uint32_t k = 0;
  std::uint32_t machines = 0;
  std::uint64_t n_items = 0;

  friend bool operator==(const Hello&, const Hello&) = default;
};

std::vector<std::uint8_t> encode_hello(const Hello& hello);
Hello decode_hello(std::span<const std::uint8_t> frame);
std::vector<std::uint8_t> encode_hello_ack(bool accepted);
bool decode_hello_ack(std::span<const std::uint8_t> frame);

constexpr std::size_t kDefaultBatchCapacity = 100;
constexpr std::chrono::milliseconds kDefaultMaxDelay{10};

/// True when a pending batch should go on the wire now.
bool flush_policy(std::size_t pending, std::chrono::nanoseconds elapsed_since_first,
                  std::size_t batch_capacity = kDefaultBatchCapacity,
                  std::chrono::nanoseconds max_delay = kDefaultMaxDelay);

/// Splits a byte stream into length-prefixed frames.
class FrameReader {
 public:
  explicit FrameReader(std::size_t max_frame = std::size_t{1} << 28) : max_frame_(max_frame) {}

  void feed(std::span<const std::uint8_t> bytes);
  /// Next complete frame including its length prefix, if one is buffered.
  std::optional<std::vector<std::uint8_t>> next();
  std::size_t buffered() const { return buf_.size() - head_; }

 private:
  std::vector<std::uint8_t> buf_;
  std::size_t head_ = 0;
  std::size_t max_frame_;
};

/// Linearizable multi-producer queue guarded by one mutex. size() is a
/// lock-free read of a counter maintained under the lock.
template <typename T>
class ConcurrentQueue {
 public:
  void push(T value) {
    {
      std::lock_guard lock(mu_);
      items_.push_back(std::move(value));
      size_.store(items_.size(), std::memory_order_release);
    }
    cv_.notify_one();
  }

  std::optional<T> try_pop() {
    std::lock_guard lock(mu_);
    return pop_locked();
  }

  /// Waits up to `timeout` for an item; returns early without one after wake_all().
  std::optional<T> pop_for(std::chrono::nanoseconds timeout) {
    std::unique_lock lock(mu_);
    if (items_.empty()) {
      const auto gen = wake_gen_;
      cv_.wait_for(lock, timeout, [&] { return !items_.empty() || wake_gen_ != gen; });
    }
    return pop_locked();
  }

  void wake_all() {
    {
      std::lock_guard lock(mu_);
      ++wake_gen_;
    }
    cv_.notify_all();
  }

  std::size_t size() const { return size_.load(std::memory_order_acquire); }

  template <typename F>
  void for_each(F&& f) const {
    std::lock_guard lock(mu_);
    for (const auto& item : items_) f(item);
  }

  std::vector<T> drain() {
    std::lock_guard lock(mu_);
    std::vector<T> out(std::make_move_iterator(items_.begin()),
                       std::make_move_iterator(items_.end()));
    items_.clear();
    size_.store(0, std::memory_order_release);
    return out;
  }

 private:
  std::optional<T> pop_locked() {
    if (items_.empty()) return std::nullopt;
    T v = std::move(items_.front());
    items_.pop_front();
    size_.store(items_.size(), std::memory_order_release);
    return v;
  }

  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::deque<T> items_;
  std::atomic<std::size_t> size_{0};
  std::uint64_t wake_gen_ = 0;
};

/// What travels through an in-process channel: the parcel plus the sender's
/// queue length at send time.
struct Envelope {
  ColumnParcel parcel;
  int sender = 0;
  std::uint32_t sender_queue_len = 0;
};

/// In-process transport: one FIFO inbox per worker.
class InProcessTransport {
 public:
  explicit InProcessTransport(int endpoints)
      : inboxes_(static_cast<std::size_t>(endpoints)) {}

  int size() const { return static_cast<int>(inboxes_.size()); }

  void send(int dest, ColumnParcel parcel, int sender, std::uint32_t sender_queue_len) {
    inbox(dest).push(Envelope{std::move(parcel), sender, sender_queue_len});
  }

  ConcurrentQueue<Envelope>& inbox(int q) { return inboxes_[static_cast<std::size_t>(q)]; }
  const ConcurrentQueue<Envelope>& inbox(int q) const {
    return inboxes_[static_cast<std::size_t>(q)];
  }

  void wake_all() {
    for (auto& box : inboxes_) box.wake_all();
  }

 private:
  std::deque<ConcurrentQueue<Envelope>> inboxes_;
};

struct Endpoint {
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;
};

/// Parses "host:port" entries.
Endpoint parse_endpoint(const std::string& text);

/// Fully connected TCP mesh among `endpoints.size()` processes. Every rank
/// listens on its own endpoint, connects to all lower ranks with a hello
/// frame, and accepts hellos from all higher ranks. A hello whose k, item
/// count or machine count disagrees with the local run is rejected.
class SocketMesh {
 public:
  SocketMesh(int rank, std::vector<Endpoint> endpoints, const Hello& local,
             std::chrono::milliseconds timeout = std::chrono::milliseconds(20000));
  ~SocketMesh();
  SocketMesh(const SocketMesh&) = delete;
  SocketMesh& operator=(const SocketMesh&) = delete;

  int rank() const { return rank_; }
  int size() const { return static_cast<int>(fds_.size()); }
  int fd(int peer) const { return fds_[static_cast<std::size_t>(peer)]; }

  /// Writes a whole frame; safe from one thread per peer at a time.
  void send_frame(int peer, std::span<const std::uint8_t> frame);
  void close_all();

 private:
  int rank_;
  std::vector<int> fds_;  // -1 for self
};

}  // namespace nomad

#endif  // NOMAD_TRANSPORT_HPP

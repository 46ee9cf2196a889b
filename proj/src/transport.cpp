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

#include "nomad/transport.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cmath>
#include <cstring>
#include <thread>

#include "nomad/bytes.hpp"

namespace nomad {

namespace {

constexpr std::size_t kParcelHeaderBytes = 4 + 8;

void encode_parcels(const std::vector<ColumnParcel>& parcels, int k, ByteWriter& w) {
  w.u32(static_cast<std::uint32_t>(parcels.size()));
  for (const auto& p : parcels) {
    if (p.h.size() != static_cast<std::size_t>(k))
      throw FramingError("parcel for item " + std::to_string(p.item) + " has length " +
                         std::to_string(p.h.size()) + ", expected k = " + std::to_string(k));
    w.u32(p.item);
    w.u64(p.version);
    for (Real x : p.h) w.f64(static_cast<double>(x));
  }
}

std::vector<ColumnParcel> decode_parcels(ByteReader& r, int k) {
  const std::uint32_t count = r.u32();
  const std::size_t per = kParcelHeaderBytes + 8 * static_cast<std::size_t>(k);
  if (count == 0) {
    if (!r.done())
      throw FramingError("length mismatch: " + std::to_string(r.remaining()) +
                         " trailing bytes after an empty parcel list");
    return {};
  }
  if (r.remaining() != count * per) {
    const std::size_t each = r.remaining() / count;
    const bool even = r.remaining() % count == 0 && each >= kParcelHeaderBytes &&
                      (each - kParcelHeaderBytes) % 8 == 0;
    if (even)
      throw FramingError("vector length mismatch: expected k = " + std::to_string(k) +
                         ", frame carries " +
                         std::to_string((each - kParcelHeaderBytes) / 8) + " components");
    throw FramingError("length mismatch: " + std::to_string(count) + " parcels need " +
                       std::to_string(count * per) + " bytes, frame has " +
                       std::to_string(r.remaining()));
  }
  std::vector<ColumnParcel> parcels(count);
  for (auto& p : parcels) {
    p.item = r.u32();
    p.version = r.u64();
    p.h.resize(static_cast<std::size_t>(k));
    for (auto& x : p.h) {
      const double v = r.f64();
      if (!std::isfinite(v))
        throw FramingError("non-finite component in parcel for item " + std::to_string(p.item));
      x = static_cast<Real>(v);
    }
  }
  return parcels;
}

/// Validates the length prefix and returns a reader over the body.
ByteReader open_frame(std::span<const std::uint8_t> frame) {
  if (frame.size() < 5) throw FramingError("truncated frame: " + std::to_string(frame.size()) + " bytes");
  ByteReader prefix(frame.first(4));
  const std::uint32_t len = prefix.u32();
  if (frame.size() - 4 < len)
    throw FramingError("truncated frame: header declares " + std::to_string(len) +
                       " bytes, " + std::to_string(frame.size() - 4) + " present");
  if (frame.size() - 4 > len)
    throw FramingError("length mismatch: " + std::to_string(frame.size() - 4 - len) +
                       " bytes beyond the declared frame");
  return ByteReader(frame.subspan(4));
}

}  // namespace

void encode_batch_into(const ParcelBatch& batch, int k, std::vector<std::uint8_t>& out) {
  if (k < 1) throw FramingError("k must be >= 1");
  const std::size_t start = out.size();
  ByteWriter w(out);
  w.u32(0);
  w.u8(static_cast<std::uint8_t>(batch.type));
  w.u32(batch.sender_queue_len);
  switch (batch.type) {
    case MessageType::parcels:
      if (batch.parcels.empty()) throw FramingError("parcel frame must carry at least one parcel");
      encode_parcels(batch.parcels, k, w);
      break;
    case MessageType::control:
      w.u8(static_cast<std::uint8_t>(batch.op));
      w.u64(batch.arg);
      encode_parcels(batch.parcels, k, w);
      break;
    case MessageType::stop:
      if (!batch.parcels.empty()) throw FramingError("stop frame carries no parcels");
      break;
    default:
      throw FramingError("cannot encode message type " +
                         std::to_string(static_cast<int>(batch.type)) + " as a batch");
  }
  const std::size_t body = out.size() - start - 4;
  if (body > 0xffffffffu) throw FramingError("frame exceeds 4 GiB");
  w.patch_u32(start, static_cast<std::uint32_t>(body));
}

std::vector<std::uint8_t> encode_batch(const ParcelBatch& batch, int k) {
  std::vector<std::uint8_t> out;
  out.reserve(17 + batch.parcels.size() * (kParcelHeaderBytes + 8 * static_cast<std::size_t>(k)));
  encode_batch_into(batch, k, out);
  return out;
}

ParcelBatch decode_batch(std::span<const std::uint8_t> frame, int k) {
  if (k < 1) throw FramingError("k must be >= 1");
  ByteReader r = open_frame(frame);
  ParcelBatch b;
  const std::uint8_t type = r.u8();
  try {
    b.sender_queue_len = r.u32();
    switch (type) {
      case 1:
        b.type = MessageType::parcels;
        b.parcels = decode_parcels(r, k);
        if (b.parcels.empty()) throw FramingError("parcel frame with zero parcels");
        break;
      case 2: {
        b.type = MessageType::control;
        const std::uint8_t op = r.u8();
        if (op == 0 || op > static_cast<std::uint8_t>(ControlOp::start))
          throw FramingError("unknown control opcode " + std::to_string(op));
        b.op = static_cast<ControlOp>(op);
        b.arg = r.u64();
        b.parcels = decode_parcels(r, k);
        break;
      }
      case 3:
        b.type = MessageType::stop;
        if (!r.done()) throw FramingError("length mismatch: stop frame has trailing bytes");
        break;
      default:
        throw FramingError("unknown message type " + std::to_string(type));
    }
  } catch (const TruncatedError& e) {
    throw FramingError(std::string("truncated frame body: ") + e.what());
  }
  return b;
}

std::vector<std::uint8_t> encode_hello(const Hello& hello) {
  std::vector<std::uint8_t> out;
  ByteWriter w(out);
  w.u32(1 + 4 + 4 + 4 + 8);
  w.u8(static_cast<std::uint8_t>(MessageType::hello));
  w.u32(hello.rank);
  w.u32(hello.k);
  w.u32(hello.machines);
  w.u64(hello.n_items);
  return out;
}

Hello decode_hello(std::span<const std::uint8_t> frame) {
  ByteReader r = open_frame(frame);
  try {
    if (r.u8() != static_cast<std::uint8_t>(MessageType::hello))
      throw HandshakeError("expected a hello frame");
    Hello h;
    h.rank = r.u32();
    h.k = r.u32();
    h.machines = r.u32();
    h.n_items = r.u64();
    if (!r.done()) throw HandshakeError("hello frame has trailing bytes");
    return h;
  } catch (const TruncatedError& e) {
    throw HandshakeError(std::string("truncated hello: ") + e.what());
  }
}

std::vector<std::uint8_t> encode_hello_ack(bool accepted) {
  std::vector<std::uint8_t> out;
  ByteWriter w(out);
  w.u32(2);
  w.u8(static_cast<std::uint8_t>(MessageType::hello_ack));
  w.u8(accepted ? 0 : 1);
  return out;
}

bool decode_hello_ack(std::span<const std::uint8_t> frame) {
  ByteReader r = open_frame(frame);
  try {
    if (r.u8() != static_cast<std::uint8_t>(MessageType::hello_ack))
      throw HandshakeError("expected a hello acknowledgement");
    const bool ok = r.u8() == 0;
    if (!r.done()) throw HandshakeError("hello acknowledgement has trailing bytes");
    return ok;
  } catch (const TruncatedError& e) {
    throw HandshakeError(std::string("truncated hello acknowledgement: ") + e.what());
  }
}

bool flush_policy(std::size_t pending, std::chrono::nanoseconds elapsed_since_first,
                  std::size_t batch_capacity, std::chrono::nanoseconds max_delay) {
  if (pending == 0) return false;
  return pending >= batch_capacity || elapsed_since_first >= max_delay;
}

void FrameReader::feed(std::span<const std::uint8_t> bytes) {
  if (head_ > 0 && head_ == buf_.size()) {
    buf_.clear();
    head_ = 0;
  }
  buf_.insert(buf_.end(), bytes.begin(), bytes.end());
}

std::optional<std::vector<std::uint8_t>> FrameReader::next() {
  if (buffered() < 4) return std::nullopt;
  ByteReader r(std::span<const std::uint8_t>(buf_).subspan(head_, 4));
  const std::size_t len = r.u32();
  if (len > max_frame_) throw FramingError("frame of " + std::to_string(len) + " bytes exceeds limit");
  if (buffered() < 4 + len) return std::nullopt;
  std::vector<std::uint8_t> frame(buf_.begin() + static_cast<std::ptrdiff_t>(head_),
                                  buf_.begin() + static_cast<std::ptrdiff_t>(head_ + 4 + len));
  head_ += 4 + len;
  if (head_ > (1u << 20) && head_ * 2 > buf_.size()) {
    buf_.erase(buf_.begin(), buf_.begin() + static_cast<std::ptrdiff_t>(head_));
    head_ = 0;
  }
  return frame;
}

Endpoint parse_endpoint(const std::string& text) {
  const auto colon = text.rfind(':');
  if (colon == std::string::npos || colon + 1 == text.size())
    throw TransportError("endpoint '" + text + "' is not host:port");
  Endpoint ep;
  ep.host = colon == 0 ? "127.0.0.1" : text.substr(0, colon);
  const int port = std::stoi(text.substr(colon + 1));
  if (port <= 0 || port > 65535) throw TransportError("bad port in '" + text + "'");
  ep.port = static_cast<std::uint16_t>(port);
  return ep;
}

namespace {

using Clock = std::chrono::steady_clock;

[[noreturn]] void throw_errno(const std::string& what) {
  throw TransportError(what + ": " + std::strerror(errno));
}

void write_all(int fd, std::span<const std::uint8_t> bytes) {
  std::size_t off = 0;
  while (off < bytes.size()) {
    const ssize_t w = ::send(fd, bytes.data() + off, bytes.size() - off, MSG_NOSIGNAL);
    if (w < 0) {
      if (errno == EINTR) continue;
      throw_errno("send");
    }
    off += static_cast<std::size_t>(w);
  }
}

/// Reads exactly `count` bytes, waiting at most until `deadline`.
void read_exact(int fd, std::uint8_t* out, std::size_t count, Clock::time_point deadline) {
  std::size_t have = 0;
  while (have < count) {
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now());
    if (left.count() <= 0) throw HandshakeError("timed out waiting for handshake");
    pollfd pfd{fd, POLLIN, 0};
    const int rc = ::poll(&pfd, 1, static_cast<int>(left.count()));
    if (rc < 0 && errno != EINTR) throw_errno("poll");
    if (rc <= 0) continue;
    const ssize_t got = ::recv(fd, out + have, count - have, 0);
    if (got == 0) throw HandshakeError("peer closed the connection during handshake");
    if (got < 0) {
      if (errno == EINTR) continue;
      throw_errno("recv");
    }
    have += static_cast<std::size_t>(got);
  }
}

/// Reads one whole frame and nothing beyond it, so bytes that follow the
/// handshake stay in the socket for the run.
std::vector<std::uint8_t> read_frame(int fd, Clock::time_point deadline) {
  std::vector<std::uint8_t> frame(4);
  read_exact(fd, frame.data(), 4, deadline);
  const std::uint32_t len = static_cast<std::uint32_t>(frame[0]) | (static_cast<std::uint32_t>(frame[1]) << 8) |
                            (static_cast<std::uint32_t>(frame[2]) << 16) |
                            (static_cast<std::uint32_t>(frame[3]) << 24);
  if (len > (1u << 16)) throw HandshakeError("oversized handshake frame");
  frame.resize(4 + len);
  read_exact(fd, frame.data() + 4, len, deadline);
  return frame;
}

sockaddr_in resolve(const Endpoint& ep) {
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (::getaddrinfo(ep.host.c_str(), nullptr, &hints, &res) != 0 || res == nullptr)
    throw TransportError("cannot resolve host '" + ep.host + "'");
  sockaddr_in addr = *reinterpret_cast<sockaddr_in*>(res->ai_addr);
  ::freeaddrinfo(res);
  addr.sin_port = htons(ep.port);
  return addr;
}

void tune(int fd) {
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
}

}  // namespace

SocketMesh::SocketMesh(int rank, std::vector<Endpoint> endpoints, const Hello& local,
                       std::chrono::milliseconds timeout)
    : rank_(rank), fds_(endpoints.size(), -1) {
  const int size = static_cast<int>(endpoints.size());
  if (rank < 0 || rank >= size) throw TransportError("rank outside the endpoint list");
  const auto deadline = Clock::now() + timeout;

  int listener = -1;
  try {
    if (rank + 1 < size) {
      listener = ::socket(AF_INET, SOCK_STREAM, 0);
      if (listener < 0) throw_errno("socket");
      int one = 1;
      ::setsockopt(listener, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
      sockaddr_in addr{};
      addr.sin_family = AF_INET;
      addr.sin_addr.s_addr = htonl(INADDR_ANY);
      addr.sin_port = htons(endpoints[static_cast<std::size_t>(rank)].port);
      if (::bind(listener, reinterpret_cast<sockaddr*>(&addr), sizeof addr) < 0)
        throw_errno("bind port " + std::to_string(endpoints[static_cast<std::size_t>(rank)].port));
      if (::listen(listener, size) < 0) throw_errno("listen");
    }

    for (int peer = 0; peer < rank; ++peer) {
      const auto addr = resolve(endpoints[static_cast<std::size_t>(peer)]);
      int fd = -1;
      while (true) {
        fd = ::socket(AF_INET, SOCK_STREAM, 0);
        if (fd < 0) throw_errno("socket");
        if (::connect(fd, reinterpret_cast<const sockaddr*>(&addr), sizeof addr) == 0) break;
        ::close(fd);
        if (Clock::now() > deadline)
          throw TransportError("could not connect to rank " + std::to_string(peer));
        std::this_thread::sleep_for(std::chrono::milliseconds(20));
      }
      fds_[static_cast<std::size_t>(peer)] = fd;
      tune(fd);
      Hello mine = local;
      mine.rank = static_cast<std::uint32_t>(rank);
      write_all(fd, encode_hello(mine));
      if (!decode_hello_ack(read_frame(fd, deadline)))
        throw HandshakeError("rank " + std::to_string(peer) + " rejected our hello");
    }

    for (int accepted = rank + 1; accepted < size; ++accepted) {
      while (true) {
        const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now());
        if (left.count() <= 0) throw TransportError("timed out waiting for peers to connect");
        pollfd pfd{listener, POLLIN, 0};
        if (::poll(&pfd, 1, static_cast<int>(left.count())) > 0) break;
      }
      const int fd = ::accept(listener, nullptr, nullptr);
      if (fd < 0) throw_errno("accept");
      tune(fd);
      Hello theirs;
      try {
        theirs = decode_hello(read_frame(fd, deadline));
      } catch (...) {
        ::close(fd);
        throw;
      }
      std::string why;
      if (theirs.rank <= static_cast<std::uint32_t>(rank) || theirs.rank >= static_cast<std::uint32_t>(size))
        why = "unexpected rank " + std::to_string(theirs.rank);
      else if (fds_[theirs.rank] != -1)
        why = "duplicate rank " + std::to_string(theirs.rank);
      else if (theirs.k != local.k)
        why = "k mismatch: local " + std::to_string(local.k) + ", peer " + std::to_string(theirs.k);
      else if (theirs.machines != local.machines)
        why = "machine count mismatch";
      else if (theirs.n_items != local.n_items)
        why = "item count mismatch";
      write_all(fd, encode_hello_ack(why.empty()));
      if (!why.empty()) {
        ::close(fd);
        throw HandshakeError("rejected hello from rank " + std::to_string(theirs.rank) + ": " + why);
      }
      fds_[theirs.rank] = fd;
    }
  } catch (...) {
    if (listener >= 0) ::close(listener);
    close_all();
    throw;
  }
  if (listener >= 0) ::close(listener);
}

SocketMesh::~SocketMesh() { close_all(); }

void SocketMesh::send_frame(int peer, std::span<const std::uint8_t> frame) {
  const int fd = fds_[static_cast<std::size_t>(peer)];
  if (fd < 0) throw TransportError("no connection to rank " + std::to_string(peer));
  write_all(fd, frame);
}

void SocketMesh::close_all() {
  for (auto& fd : fds_) {
    if (fd >= 0) {
      ::shutdown(fd, SHUT_RDWR);
      ::close(fd);
    }
    fd = -1;
  }
}

}  // namespace nomad

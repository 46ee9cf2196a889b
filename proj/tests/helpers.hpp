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

#ifndef NOMAD_TESTS_HELPERS_HPP
#define NOMAD_TESTS_HELPERS_HPP

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <vector>

#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include "nomad/core.hpp"
#include "nomad/data.hpp"

namespace nomad::test {

/// Random sparse instance with distinct (i, j) pairs and values in [-2, 2].
inline std::vector<RatingEntry> random_entries(std::size_t m, std::size_t n, double density,
                                               std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> coin(0.0, 1.0), val(-2.0, 2.0);
  std::vector<RatingEntry> out;
  for (std::uint32_t i = 0; i < m; ++i)
    for (std::uint32_t j = 0; j < n; ++j)
      if (coin(rng) < density) out.push_back({i, j, val(rng), 0});
  if (out.empty()) out.push_back({0, 0, 1.0, 0});
  return out;
}

/// Asks the kernel for an unused loopback port.
inline std::uint16_t free_port() {
  const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  addr.sin_port = 0;
  ::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr);
  socklen_t len = sizeof addr;
  ::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len);
  ::close(fd);
  return ntohs(addr.sin_port);
}

inline FactorMatrix random_factors(std::size_t rows, int k, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, scale);
  FactorMatrix F(rows, k);
  for (auto& x : F.data()) x = static_cast<Real>(g(rng));
  return F;
}

/// Objective evaluated straight from the definition, with no shared code.
inline double oracle_objective(const FactorMatrix& W, const FactorMatrix& H,
                               const std::vector<RatingEntry>& entries, double lambda,
                               bool weighted = true) {
  std::vector<double> du(W.rows(), 0.0), di(H.rows(), 0.0);
  long double data = 0.0;
  for (const auto& e : entries) {
    long double dot = 0.0;
    for (int l = 0; l < W.k(); ++l) dot += static_cast<long double>(W(e.user, l)) * H(e.item, l);
    const long double r = e.value - dot;
    data += r * r;
    du[e.user] += 1.0;
    di[e.item] += 1.0;
  }
  long double reg = 0.0;
  for (std::size_t i = 0; i < W.rows(); ++i) {
    long double s = 0.0;
    for (int l = 0; l < W.k(); ++l) s += static_cast<long double>(W(i, l)) * W(i, l);
    reg += (weighted ? du[i] : 1.0) * s;
  }
  for (std::size_t j = 0; j < H.rows(); ++j) {
    long double s = 0.0;
    for (int l = 0; l < H.k(); ++l) s += static_cast<long double>(H(j, l)) * H(j, l);
    reg += (weighted ? di[j] : 1.0) * s;
  }
  return static_cast<double>(0.5L * data + 0.5L * lambda * reg);
}

inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({1e-12, std::abs(a), std::abs(b)});
}

}  // namespace nomad::test

#endif  // NOMAD_TESTS_HELPERS_HPP

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

#include <algorithm>
#include <numeric>
#include <random>
#include <set>

#include "doctest.h"
#include "helpers.hpp"
#include "nomad/core.hpp"
#include "nomad/data.hpp"

using namespace nomad;
using nomad::test::oracle_objective;
using nomad::test::random_entries;
using nomad::test::random_factors;

namespace {

HyperParams params_with(double lambda, int k = 2) {
  HyperParams p;
  p.k = k;
  p.lambda = lambda;
  return p;
}

ShardedRatings single_entry(double a) {
  return shard(std::vector<RatingEntry>{{0, 0, a, 0}}, 1, 1, 1);
}

}  // namespace

TEST_SUITE("core") {

TEST_CASE("step_size closed form") {
  HyperParams p;
  p.alpha = 0.012;
  p.beta = 0.05;
  CHECK(step_size(p, 0) == 0.012);
  CHECK(step_size(p, 4) == doctest::Approx(0.00857142857).epsilon(1e-10));
  CHECK(step_size(p, 4) == 0.012 / 1.4);
  p.alpha = 1.0;
  p.beta = 0.0;
  for (std::uint64_t t : {0ULL, 1ULL, 17ULL, 1000000ULL}) CHECK(step_size(p, t) == 1.0);
}

TEST_CASE("step_size is positive and non-increasing") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> a(1e-4, 1.0), b(0.0, 2.0);
  for (int trial = 0; trial < 50; ++trial) {
    HyperParams p;
    p.alpha = a(rng);
    p.beta = b(rng);
    CHECK(step_size(p, 0) == p.alpha);
    double prev = step_size(p, 0);
    for (std::uint64_t t = 1; t < 200; ++t) {
      const double s = step_size(p, t);
      CHECK(s > 0.0);
      CHECK(s <= prev);
      prev = s;
    }
  }
}

TEST_CASE("hyperparameter validation") {
  HyperParams p;
  CHECK_NOTHROW(p.validate());
  p.k = 0;
  CHECK_THROWS_AS(p.validate(), Error);
  p = HyperParams{};
  p.lambda = -1e-9;
  CHECK_THROWS_AS(p.validate(), Error);
  p = HyperParams{};
  p.alpha = 0.0;
  CHECK_THROWS_AS(p.validate(), Error);
  p = HyperParams{};
  p.beta = -0.1;
  CHECK_THROWS_AS(p.validate(), Error);
}

TEST_CASE("predict") {
  std::vector<Real> a{1, 0}, b{0, 1}, c{1, 1}, d{0.5, 0.5}, e{1, 0};
  CHECK(predict(a, b) == 0.0);
  CHECK(predict(c, c) == 2.0);
  CHECK(predict(d, e) == 0.5);
  std::vector<Real> three{1, 2, 3};
  CHECK_THROWS_AS(predict(a, three), DimensionError);
}

TEST_CASE("objective examples") {
  SUBCASE("zero factors leave half the sum of squares") {
    auto entries = random_entries(6, 5, 0.5, 11);
    auto data = shard(entries, 6, 5, 2);
    FactorMatrix W(6, 3), H(5, 3);
    double ss = 0.0;
    for (const auto& e : entries) ss += e.value * e.value;
    for (double lambda : {0.0, 0.3, 7.0})
      CHECK(objective(W, H, data, params_with(lambda, 3)) == doctest::Approx(0.5 * ss).epsilon(1e-14));
  }
  SUBCASE("single entry") {
    auto data = single_entry(2.0);
    FactorMatrix W(1, 2), H(1, 2);
    W(0, 0) = 1;
    H(0, 0) = 1;
    CHECK(objective(W, H, data, params_with(0.0)) == 0.5);
    CHECK(objective(W, H, data, params_with(1.0)) == 1.5);
  }
  SUBCASE("dimension mismatch") {
    auto data = single_entry(2.0);
    FactorMatrix W(2, 2), H(1, 2);
    CHECK_THROWS_AS(objective(W, H, data, params_with(0.0)), DimensionError);
    FactorMatrix W1(1, 3);
    CHECK_THROWS_AS(objective(W1, H, data, params_with(0.0)), DimensionError);
  }
}

TEST_CASE("objective matches the definition") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const std::size_t m = 3 + seed % 7, n = 2 + seed % 5;
    const int k = 1 + static_cast<int>(seed % 4);
    auto entries = random_entries(m, n, 0.6, seed);
    auto W = random_factors(m, k, seed * 3);
    auto H = random_factors(n, k, seed * 5);
    for (int p : {1, 2}) {
      if (static_cast<std::size_t>(p) > m) continue;
      auto data = shard(entries, m, n, p);
      auto hp = params_with(0.37, k);
      CHECK(test::rel_err(objective(W, H, data, hp), oracle_objective(W, H, entries, 0.37)) < 1e-12);
      hp.reg_mode = RegMode::plain;
      CHECK(test::rel_err(objective(W, H, data, hp), oracle_objective(W, H, entries, 0.37, false)) <
            1e-12);
    }
  }
}

TEST_CASE("objective is invariant under entry permutation and deterministic") {
  auto entries = random_entries(9, 7, 0.5, 5);
  auto W = random_factors(9, 3, 1);
  auto H = random_factors(7, 3, 2);
  const auto hp = params_with(0.1, 3);
  const double base = objective(W, H, shard(entries, 9, 7, 3), hp);
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 10; ++trial) {
    std::shuffle(entries.begin(), entries.end(), rng);
    CHECK(objective(W, H, shard(entries, 9, 7, 3), hp) == base);
  }
}

TEST_CASE("objective is non-negative and zero exactly at a perfect unregularized fit") {
  auto W = random_factors(4, 2, 1);
  auto H = random_factors(3, 2, 2);
  std::vector<RatingEntry> entries;
  for (std::uint32_t i = 0; i < 4; ++i)
    for (std::uint32_t j = 0; j < 3; ++j)
      if ((i + j) % 2 == 0) entries.push_back({i, j, static_cast<double>(predict(W.row(i), H.row(j))), 0});
  auto data = shard(entries, 4, 3, 1);
  CHECK(objective(W, H, data, params_with(0.0)) == doctest::Approx(0.0).epsilon(1e-28));
  CHECK(objective(W, H, data, params_with(0.5)) > 0.0);
  auto noisy = random_entries(4, 3, 0.7, 3);
  CHECK(objective(W, H, shard(noisy, 4, 3, 2), params_with(0.2)) >= 0.0);
}

TEST_CASE("analytic gradient agrees with central differences") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const std::size_t m = 2 + seed % 9, n = 2 + seed % 7;
    const int k = 1 + static_cast<int>(seed % 4);
    auto entries = random_entries(m, n, 0.6, 100 + seed);
    auto data = shard(entries, m, n, 1);
    auto W = random_factors(m, k, 200 + seed);
    auto H = random_factors(n, k, 300 + seed);
    const auto hp = params_with(0.05 * static_cast<double>(seed % 5), k);
    const auto g = objective_gradient(W, H, data, hp);
    const double h = 1e-5;
    auto check = [&](FactorMatrix& F, const FactorMatrix& G) {
      for (std::size_t r = 0; r < F.rows(); ++r) {
        for (int l = 0; l < k; ++l) {
          const Real keep = F(r, l);
          F(r, l) = keep + h;
          const double up = oracle_objective(W, H, entries, hp.lambda);
          F(r, l) = keep - h;
          const double down = oracle_objective(W, H, entries, hp.lambda);
          F(r, l) = keep;
          const double fd = (up - down) / (2 * h);
          const double err = std::abs(fd - G(r, l)) / std::max(1.0, std::abs(fd));
          CHECK(err <= 1e-5);
        }
      }
    };
    check(W, g.dW);
    check(H, g.dH);
  }
}

TEST_CASE("partition_rows examples") {
  auto sizes = [](const Partition& p) {
    std::vector<std::size_t> s;
    for (const auto& b : p.blocks) s.push_back(b.size());
    return s;
  };
  CHECK(sizes(partition_rows(10, 3)) == std::vector<std::size_t>{4, 3, 3});
  CHECK(sizes(partition_rows(4, 4)) == std::vector<std::size_t>{1, 1, 1, 1});
  CHECK(sizes(partition_rows(5, 1)) == std::vector<std::size_t>{5});
  CHECK_THROWS_AS(partition_rows(5, 0), Error);
  CHECK_THROWS_AS(partition_rows(3, 4), Error);
}

TEST_CASE("partition blocks are disjoint and cover every row") {
  for (std::size_t m : {1u, 2u, 7u, 100u, 1001u}) {
    for (int p : {1, 2, 3, 8}) {
      if (static_cast<std::size_t>(p) > m) continue;
      std::vector<std::size_t> deg(m);
      std::mt19937_64 rng(m * 31 + static_cast<std::size_t>(p));
      for (auto& d : deg) d = rng() % 50;
      for (auto strategy : {PartitionStrategy::contiguous, PartitionStrategy::balanced_ratings}) {
        const auto part = partition_rows(m, p, strategy, deg);
        std::set<std::uint32_t> seen;
        std::size_t total = 0, lo = m, hi = 0;
        for (int q = 0; q < p; ++q) {
          const auto& block = part.blocks[static_cast<std::size_t>(q)];
          CHECK(!block.empty());
          lo = std::min(lo, block.size());
          hi = std::max(hi, block.size());
          for (auto i : block) {
            CHECK(part.assignment[i] == q);
            seen.insert(i);
          }
          total += block.size();
        }
        CHECK(total == m);
        CHECK(seen.size() == m);
        if (strategy == PartitionStrategy::contiguous) CHECK(hi - lo <= 1);
      }
    }
  }
}

TEST_CASE("balanced strategy evens out rating counts") {
  std::vector<std::size_t> deg(100, 1);
  for (std::size_t i = 0; i < 10; ++i) deg[i] = 100;
  const auto part = partition_rows(100, 4, PartitionStrategy::balanced_ratings, deg);
  std::vector<std::size_t> load(4, 0);
  for (std::size_t i = 0; i < 100; ++i) load[static_cast<std::size_t>(part.assignment[i])] += deg[i];
  const auto [mn, mx] = std::minmax_element(load.begin(), load.end());
  const auto contiguous = partition_rows(100, 4);
  std::vector<std::size_t> cload(4, 0);
  for (std::size_t i = 0; i < 100; ++i) cload[static_cast<std::size_t>(contiguous.assignment[i])] += deg[i];
  CHECK(*mx - *mn < *std::max_element(cload.begin(), cload.end()) -
                        *std::min_element(cload.begin(), cload.end()));
}

TEST_CASE("shards partition the ratings exactly") {
  auto entries = random_entries(23, 11, 0.4, 9);
  for (int p : {1, 2, 5}) {
    auto data = shard(entries, 23, 11, p);
    std::multiset<std::pair<std::uint32_t, std::uint32_t>> all, got;
    for (const auto& e : entries) all.insert({e.user, e.item});
    std::vector<std::size_t> per_item(11, 0);
    for (int q = 0; q < p; ++q) {
      const auto& s = data.shards[static_cast<std::size_t>(q)];
      for (std::uint32_t j = 0; j < 11; ++j) {
        const auto slice = s.item_slice(j);
        per_item[j] += slice.size();
        for (std::size_t x = 0; x < slice.size(); ++x) {
          CHECK(slice[x].item == j);
          CHECK(data.partition.owns(q, slice[x].user));
          if (x) CHECK(slice[x - 1].user < slice[x].user);
          got.insert({slice[x].user, slice[x].item});
        }
      }
    }
    CHECK(got == all);
    for (std::uint32_t j = 0; j < 11; ++j) CHECK(per_item[j] == data.item_degree(j));
  }
}

TEST_CASE("rating index views agree") {
  auto entries = random_entries(13, 9, 0.5, 4);
  const auto idx = RatingIndex::build(13, 9, entries);
  CHECK(idx.row_item.size() == entries.size());
  for (std::size_t j = 0; j < 9; ++j) {
    for (std::size_t s = idx.col_ptr[j]; s < idx.col_ptr[j + 1]; ++s) {
      const auto r = idx.col_to_row[s];
      CHECK(idx.row_item[r] == j);
      CHECK(idx.row_value[r] == idx.col_value[s]);
      CHECK(r >= idx.row_ptr[idx.col_user[s]]);
      CHECK(r < idx.row_ptr[idx.col_user[s] + 1]);
    }
  }
  std::vector<RatingEntry> bad{{13, 0, 1.0, 0}};
  CHECK_THROWS_AS(RatingIndex::build(13, 9, bad), DimensionError);
}

TEST_CASE("factor matrix finiteness") {
  FactorMatrix F(3, 2);
  CHECK(F.all_finite());
  F(1, 1) = std::numeric_limits<Real>::infinity();
  CHECK_FALSE(F.all_finite());
}

TEST_CASE("reg mode names") {
  CHECK(parse_reg_mode("plain") == RegMode::plain);
  CHECK(parse_reg_mode(to_string(RegMode::weighted)) == RegMode::weighted);
  CHECK_THROWS_AS(parse_reg_mode("ridge"), Error);
}

}

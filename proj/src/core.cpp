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

#include "nomad/core.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace nomad {

void HyperParams::validate() const {
  if (k < 1) throw Error("k must be at least 1, got " + std::to_string(k));
  if (!(lambda >= 0.0) || !std::isfinite(lambda))
    throw Error("lambda must be finite and >= 0");
  if (!(alpha > 0.0) || !std::isfinite(alpha))
    throw Error("alpha must be finite and > 0");
  if (!(beta >= 0.0) || !std::isfinite(beta))
    throw Error("beta must be finite and >= 0");
}

FactorMatrix::FactorMatrix(std::size_t rows, int k)
    : rows_(rows), k_(k), data_(rows * static_cast<std::size_t>(k), Real{0}) {
  if (k < 1) throw DimensionError("factor dimension must be >= 1");
}

bool FactorMatrix::all_finite() const {
  return std::all_of(data_.begin(), data_.end(),
                     [](Real x) { return std::isfinite(x); });
}

RatingIndex RatingIndex::build(std::size_t m, std::size_t n,
                               std::span<const RatingEntry> entries) {
  RatingIndex idx;
  idx.row_ptr.assign(m + 1, 0);
  idx.col_ptr.assign(n + 1, 0);
  for (const auto& e : entries) {
    if (e.user >= m || e.item >= n)
      throw DimensionError("rating (" + std::to_string(e.user) + ", " +
                           std::to_string(e.item) + ") outside " +
                           std::to_string(m) + " x " + std::to_string(n));
    ++idx.row_ptr[e.user + 1];
    ++idx.col_ptr[e.item + 1];
  }
  std::partial_sum(idx.row_ptr.begin(), idx.row_ptr.end(), idx.row_ptr.begin());
  std::partial_sum(idx.col_ptr.begin(), idx.col_ptr.end(), idx.col_ptr.begin());

  // Row view sorted by (user, item) so the layout does not depend on the
  // order of the input list.
  std::vector<std::size_t> order(entries.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto& x = entries[a];
    const auto& y = entries[b];
    return x.user != y.user ? x.user < y.user : x.item < y.item;
  });
  const std::size_t nnz = entries.size();
  idx.row_item.resize(nnz);
  idx.row_value.resize(nnz);
  for (std::size_t r = 0; r < nnz; ++r) {
    idx.row_item[r] = entries[order[r]].item;
    idx.row_value[r] = entries[order[r]].value;
  }

  // Walking rows in user order fills each column in ascending user order.
  idx.col_user.resize(nnz);
  idx.col_value.resize(nnz);
  idx.col_to_row.resize(nnz);
  std::vector<std::size_t> fill(idx.col_ptr.begin(), idx.col_ptr.end() - 1);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t r = idx.row_ptr[i]; r < idx.row_ptr[i + 1]; ++r) {
      const std::size_t slot = fill[idx.row_item[r]]++;
      idx.col_user[slot] = static_cast<std::uint32_t>(i);
      idx.col_value[slot] = idx.row_value[r];
      idx.col_to_row[slot] = r;
    }
  }
  return idx;
}

double step_size(const HyperParams& params, std::uint64_t t) {
  const double td = static_cast<double>(t);
  return params.alpha / (1.0 + params.beta * td * std::sqrt(td));
}

Real predict(std::span<const Real> w, std::span<const Real> h) {
  if (w.size() != h.size())
    throw DimensionError("predict: length mismatch " + std::to_string(w.size()) +
                         " vs " + std::to_string(h.size()));
  Real acc{0};
  for (std::size_t l = 0; l < w.size(); ++l) acc += w[l] * h[l];
  return acc;
}

namespace {

void check_dims(const FactorMatrix& W, const FactorMatrix& H,
                const ShardedRatings& data) {
  if (W.rows() != data.m || H.rows() != data.n || W.k() != H.k())
    throw DimensionError("factor shapes " + std::to_string(W.rows()) + "x" +
                         std::to_string(W.k()) + " / " + std::to_string(H.rows()) +
                         "x" + std::to_string(H.k()) + " do not match data " +
                         std::to_string(data.m) + "x" + std::to_string(data.n));
}

double squared_norm(std::span<const Real> v) {
  double acc = 0.0;
  for (Real x : v) acc += static_cast<double>(x) * static_cast<double>(x);
  return acc;
}

double row_weight(const HyperParams& params, std::size_t degree) {
  return params.reg_mode == RegMode::weighted ? static_cast<double>(degree) : 1.0;
}

}  // namespace

double squared_error_term(const FactorMatrix& W, const FactorMatrix& H,
                          std::span<const RatingEntry> entries) {
  double acc = 0.0;
  for (const auto& e : entries) {
    const double r = e.value - static_cast<double>(predict(W.row(e.user), H.row(e.item)));
    acc += r * r;
  }
  return 0.5 * acc;
}

double objective(const FactorMatrix& W, const FactorMatrix& H,
                 const ShardedRatings& data, const HyperParams& params) {
  check_dims(W, H, data);
  double loss = 0.0;
  for (const auto& shard : data.shards) loss += squared_error_term(W, H, shard.entries);

  double reg = 0.0;
  for (std::size_t i = 0; i < data.m; ++i)
    reg += row_weight(params, data.user_degree(i)) * squared_norm(W.row(i));
  for (std::size_t j = 0; j < data.n; ++j)
    reg += row_weight(params, data.item_degree(j)) * squared_norm(H.row(j));
  return loss + 0.5 * params.lambda * reg;
}

Gradient objective_gradient(const FactorMatrix& W, const FactorMatrix& H,
                            const ShardedRatings& data, const HyperParams& params) {
  check_dims(W, H, data);
  const int k = W.k();
  Gradient g{FactorMatrix(W.rows(), k), FactorMatrix(H.rows(), k)};
  for (const auto& shard : data.shards) {
    for (const auto& e : shard.entries) {
      const auto w = W.row(e.user);
      const auto h = H.row(e.item);
      const Real r = static_cast<Real>(e.value) - predict(w, h);
      auto gw = g.dW.row(e.user);
      auto gh = g.dH.row(e.item);
      for (int l = 0; l < k; ++l) {
        gw[l] -= r * h[l];
        gh[l] -= r * w[l];
      }
    }
  }
  const auto lambda = static_cast<Real>(params.lambda);
  for (std::size_t i = 0; i < data.m; ++i) {
    const auto c = static_cast<Real>(row_weight(params, data.user_degree(i)));
    for (int l = 0; l < k; ++l) g.dW(i, l) += lambda * c * W(i, l);
  }
  for (std::size_t j = 0; j < data.n; ++j) {
    const auto c = static_cast<Real>(row_weight(params, data.item_degree(j)));
    for (int l = 0; l < k; ++l) g.dH(j, l) += lambda * c * H(j, l);
  }
  return g;
}

Partition partition_rows(std::size_t m, int p, PartitionStrategy strategy,
                         std::span<const std::size_t> row_degrees) {
  if (p < 1 || static_cast<std::size_t>(p) > m)
    throw Error("cannot split " + std::to_string(m) + " rows across " +
                std::to_string(p) + " workers");
  Partition part;
  part.p = p;
  part.assignment.assign(m, 0);
  part.blocks.assign(static_cast<std::size_t>(p), {});

  if (strategy == PartitionStrategy::contiguous) {
    const std::size_t base = m / static_cast<std::size_t>(p);
    const std::size_t extra = m % static_cast<std::size_t>(p);
    std::size_t row = 0;
    for (int q = 0; q < p; ++q) {
      const std::size_t size = base + (static_cast<std::size_t>(q) < extra ? 1 : 0);
      for (std::size_t s = 0; s < size; ++s, ++row) {
        part.assignment[row] = q;
        part.blocks[static_cast<std::size_t>(q)].push_back(static_cast<std::uint32_t>(row));
      }
    }
    return part;
  }

  if (row_degrees.size() != m)
    throw DimensionError("balanced partition needs one degree per row");
  // Contiguous blocks cut where the running rating count crosses q/p of the
  // total, keeping at least one row per block.
  const double total = std::accumulate(row_degrees.begin(), row_degrees.end(), 0.0);
  std::size_t row = 0;
  double running = 0.0;
  for (int q = 0; q < p; ++q) {
    const std::size_t blocks_after = static_cast<std::size_t>(p - q - 1);
    const double target = total * static_cast<double>(q + 1) / p;
    auto& block = part.blocks[static_cast<std::size_t>(q)];
    while (row < m) {
      if (!block.empty()) {
        if (m - row <= blocks_after) break;
        if (q != p - 1 && running + static_cast<double>(row_degrees[row]) > target) break;
      }
      running += static_cast<double>(row_degrees[row]);
      part.assignment[row] = q;
      block.push_back(static_cast<std::uint32_t>(row));
      ++row;
    }
  }
  return part;
}

std::string to_string(RegMode mode) {
  return mode == RegMode::weighted ? "weighted" : "plain";
}

RegMode parse_reg_mode(const std::string& s) {
  if (s == "weighted") return RegMode::weighted;
  if (s == "plain") return RegMode::plain;
  throw Error("unknown regularization mode '" + s + "'");
}

}  // namespace nomad

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

#ifndef NOMAD_CORE_HPP
#define NOMAD_CORE_HPP

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace nomad {

#ifdef NOMAD_SINGLE_PRECISION
using Real = float;
#else
using Real = double;
#endif

/// Base class for all errors raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

/// One observed rating A_ij plus the number of SGD updates applied to it.
struct RatingEntry {
  std::uint32_t user = 0;
  std::uint32_t item = 0;
  double value = 0.0;
  std::uint32_t update_count = 0;

  friend bool operator==(const RatingEntry&, const RatingEntry&) = default;
};

enum class RegMode { weighted, plain };

struct HyperParams {
  int k = 10;
  double lambda = 0.05;
  double alpha = 0.012;
  double beta = 0.05;
  RegMode reg_mode = RegMode::weighted;

  /// Throws Error unless k >= 1, lambda >= 0, alpha > 0 and beta >= 0.
  void validate() const;
};

/// Dense row-major block of k-vectors (W or H). Distinct rows may be written
/// concurrently by distinct threads; a single row never is.
class FactorMatrix {
 public:
  FactorMatrix() = default;
  FactorMatrix(std::size_t rows, int k);

  std::size_t rows() const { return rows_; }
  int k() const { return k_; }

  std::span<Real> row(std::size_t i) {
    return {data_.data() + i * static_cast<std::size_t>(k_),
            static_cast<std::size_t>(k_)};
  }
  std::span<const Real> row(std::size_t i) const {
    return {data_.data() + i * static_cast<std::size_t>(k_),
            static_cast<std::size_t>(k_)};
  }

  Real& operator()(std::size_t i, int l) {
    return data_[i * static_cast<std::size_t>(k_) + static_cast<std::size_t>(l)];
  }
  Real operator()(std::size_t i, int l) const {
    return data_[i * static_cast<std::size_t>(k_) + static_cast<std::size_t>(l)];
  }

  std::span<Real> data() { return data_; }
  std::span<const Real> data() const { return data_; }

  bool all_finite() const;

  friend bool operator==(const FactorMatrix&, const FactorMatrix&) = default;

 private:
  std::size_t rows_ = 0;
  int k_ = 0;
  std::vector<Real> data_;
};

/// Compressed row and column views of a rating set. The column view stores,
/// for every slot, the position of the same rating in the row view so that
/// per-rating state (residuals) can be kept in one array.
struct RatingIndex {
  // by user
  std::vector<std::size_t> row_ptr;
  std::vector<std::uint32_t> row_item;
  std::vector<double> row_value;
  // by item
  std::vector<std::size_t> col_ptr;
  std::vector<std::uint32_t> col_user;
  std::vector<double> col_value;
  std::vector<std::size_t> col_to_row;

  std::size_t user_degree(std::size_t i) const { return row_ptr[i + 1] - row_ptr[i]; }
  std::size_t item_degree(std::size_t j) const { return col_ptr[j + 1] - col_ptr[j]; }

  static RatingIndex build(std::size_t m, std::size_t n,
                           std::span<const RatingEntry> entries);
};

/// One worker's slice of the ratings: entries grouped by item, sorted by user
/// within each item. `item_ptr` has n + 1 offsets into `entries`.
struct Shard {
  std::vector<std::size_t> item_ptr;
  std::vector<RatingEntry> entries;

  std::span<RatingEntry> item_slice(std::size_t j) {
    return {entries.data() + item_ptr[j], item_ptr[j + 1] - item_ptr[j]};
  }
  std::span<const RatingEntry> item_slice(std::size_t j) const {
    return {entries.data() + item_ptr[j], item_ptr[j + 1] - item_ptr[j]};
  }
};

struct Partition {
  int p = 1;
  std::vector<int> assignment;                       // row -> worker
  std::vector<std::vector<std::uint32_t>> blocks;    // worker -> sorted rows

  bool owns(int worker, std::uint32_t row) const { return assignment[row] == worker; }
};

enum class PartitionStrategy { contiguous, balanced_ratings };

struct ShardedRatings {
  std::size_t m = 0;
  std::size_t n = 0;
  Partition partition;
  std::vector<Shard> shards;
  RatingIndex index;

  std::size_t nnz() const { return index.row_item.size(); }
  std::size_t user_degree(std::size_t i) const { return index.user_degree(i); }
  std::size_t item_degree(std::size_t j) const { return index.item_degree(j); }
};

struct NormalEquation {
  int k = 0;
  std::vector<double> M;  // k*k row-major, symmetric
  std::vector<double> b;

  double m(int r, int c) const { return M[static_cast<std::size_t>(r * k + c)]; }
};

/// s_t = alpha / (1 + beta * t^1.5)
double step_size(const HyperParams& params, std::uint64_t t);

Real predict(std::span<const Real> w, std::span<const Real> h);

/// Regularized squared-error objective. Under RegMode::weighted each row norm
/// is weighted by its rating count; under RegMode::plain every row counts once.
double objective(const FactorMatrix& W, const FactorMatrix& H,
                 const ShardedRatings& data, const HyperParams& params);

/// Data term only: 0.5 * sum of squared residuals over `entries`.
double squared_error_term(const FactorMatrix& W, const FactorMatrix& H,
                          std::span<const RatingEntry> entries);

struct Gradient {
  FactorMatrix dW;
  FactorMatrix dH;
};

/// Analytic gradient of objective() with respect to every entry of W and H.
Gradient objective_gradient(const FactorMatrix& W, const FactorMatrix& H,
                            const ShardedRatings& data, const HyperParams& params);

/// Splits rows 0..m-1 into p disjoint blocks. `row_degrees` is only consulted
/// by the balanced_ratings strategy.
Partition partition_rows(std::size_t m, int p,
                         PartitionStrategy strategy = PartitionStrategy::contiguous,
                         std::span<const std::size_t> row_degrees = {});

std::string to_string(RegMode mode);
RegMode parse_reg_mode(const std::string& s);

}  // namespace nomad

#endif  // NOMAD_CORE_HPP

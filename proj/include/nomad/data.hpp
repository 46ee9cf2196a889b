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

#ifndef NOMAD_DATA_HPP
#define NOMAD_DATA_HPP

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "nomad/core.hpp"

namespace nomad {

class FormatError : public Error {
 public:
  using Error::Error;
};

struct DatasetMeta {
  std::string name;
  std::uint64_t m = 0;
  std::uint64_t n = 0;
  std::uint64_t nnz = 0;
  std::string source_format;

  friend bool operator==(const DatasetMeta&, const DatasetMeta&) = default;
};

struct Dataset {
  DatasetMeta meta;
  std::vector<RatingEntry> entries;
};

/// Parses `user item rating` lines. Blank lines and lines starting with '#'
/// are skipped; a `%%meta m n nnz` line declares the shape. Fields may be
/// separated by whitespace, commas, tabs or `::`.
Dataset parse_text(std::istream& in, int index_base = 1, const std::string& name = "");
Dataset read_text(const std::filesystem::path& path, int index_base = 1);
void write_text(const Dataset& data, const std::filesystem::path& path, int index_base = 1);

/// Little-endian: "NMDB", u32 version = 1, u64 m, u64 n, u64 nnz, then
/// nnz records of (u32 user, u32 item, f64 value).
void write_binary(const Dataset& data, const std::filesystem::path& path);
Dataset read_binary(const std::filesystem::path& path);
std::vector<std::uint8_t> encode_dataset(const Dataset& data);
Dataset decode_dataset(const std::vector<std::uint8_t>& bytes);

/// Reads a dataset by extension: `.bin` -> binary, anything else -> text.
Dataset load_dataset(const std::filesystem::path& path, int index_base = 1);

struct TrainTestSplit {
  std::vector<RatingEntry> train;
  std::vector<RatingEntry> test;
};

/// Uniform random split by entry. A follow-up pass swaps test entries back
/// into train so that every user and item with at least two ratings keeps at
/// least one of them in train.
TrainTestSplit split_train_test(std::vector<RatingEntry> entries, double test_fraction,
                                std::uint64_t seed);

struct PowerLawDegrees {
  double exponent = 2.5;  // Pareto tail index of the degree weights
};

struct SyntheticSpec {
  std::size_t n_users = 2000;
  std::size_t n_items = 500;
  int k_true = 10;
  double noise_sd = 0.1;
  std::size_t target_nnz = 100000;
  std::size_t min_user_degree = 1;
  std::size_t min_item_degree = 1;
  /// `degree count` histogram; empty means the parametric power-law model.
  std::optional<std::filesystem::path> user_degree_file;
  std::optional<std::filesystem::path> item_degree_file;
  PowerLawDegrees power_law;
  std::uint64_t seed = 1;

  void validate() const;
};

struct SyntheticData {
  Dataset dataset;
  FactorMatrix W_true;
  FactorMatrix H_true;
};

SyntheticData generate_synthetic(const SyntheticSpec& spec);

/// `degree count` lines, '#' comments allowed.
std::vector<std::pair<std::size_t, std::size_t>> read_degree_histogram(
    const std::filesystem::path& path);

/// Groups each worker's ratings by item, sorted by user within an item.
ShardedRatings shard(const std::vector<RatingEntry>& entries, std::size_t m,
                     std::size_t n, const Partition& partition);

/// Convenience: contiguous partition over p workers and sharding in one call.
ShardedRatings shard(const std::vector<RatingEntry>& entries, std::size_t m,
                     std::size_t n, int p,
                     PartitionStrategy strategy = PartitionStrategy::contiguous);

/// Model file: "NMDM", u32 version = 1, u64 m, u64 n, u64 k, then W and H as
/// row-major f64.
void write_model(const FactorMatrix& W, const FactorMatrix& H,
                 const std::filesystem::path& path);
std::pair<FactorMatrix, FactorMatrix> read_model(const std::filesystem::path& path);

}  // namespace nomad

#endif  // NOMAD_DATA_HPP

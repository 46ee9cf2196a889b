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

#ifndef NOMAD_EVAL_HPP
#define NOMAD_EVAL_HPP

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "nomad/core.hpp"

namespace nomad {

struct LogRecord {
  double elapsed_sec = 0.0;
  std::uint64_t total_updates = 0;
  double train_objective = 0.0;
  double test_rmse = 0.0;

  friend bool operator==(const LogRecord&, const LogRecord&) = default;
};

/// Checkpoint records of one run plus ordered `key=value` metadata.
class ConvergenceLog {
 public:
  /// Throws unless elapsed_sec and total_updates both strictly increase.
  void append(const LogRecord& record);

  void set_meta(const std::string& key, const std::string& value);
  std::string meta(const std::string& key, const std::string& fallback = "") const;

  const std::vector<LogRecord>& records() const { return records_; }
  const std::vector<std::pair<std::string, std::string>>& metadata() const { return meta_; }
  bool empty() const { return records_.empty(); }
  const LogRecord& back() const { return records_.back(); }

  friend bool operator==(const ConvergenceLog&, const ConvergenceLog&) = default;

 private:
  std::vector<LogRecord> records_;
  std::vector<std::pair<std::string, std::string>> meta_;
};

/// Root mean squared prediction error over `test`. Predictions are not clipped.
double test_rmse(const FactorMatrix& W, const FactorMatrix& H,
                 std::span<const RatingEntry> test);

/// Updates per worker per second between the first and last records.
double throughput(const ConvergenceLog& log, int workers);

void write_csv(const ConvergenceLog& log, const std::filesystem::path& path);
ConvergenceLog read_csv(const std::filesystem::path& path);
std::string to_csv(const ConvergenceLog& log);
ConvergenceLog parse_csv(const std::string& text);

}  // namespace nomad

#endif  // NOMAD_EVAL_HPP

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

#ifndef NOMAD_CONFIG_HPP
#define NOMAD_CONFIG_HPP

#include <filesystem>
#include <istream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "nomad/baselines.hpp"
#include "nomad/core.hpp"
#include "nomad/engine.hpp"

namespace nomad {

class ConfigError : public Error {
 public:
  using Error::Error;
};

enum class Solver { nomad, serial_sgd, dsgd, ccdpp, als };

std::string to_string(Solver s);
Solver parse_solver(const std::string& s);

struct Preset {
  std::string name;
  HyperParams params;
};

/// synthetic (default), netflix, yahoo, hugewiki.
const Preset& find_preset(const std::string& name);
std::vector<std::string> preset_names();

struct RunConfig {
  Solver solver = Solver::nomad;
  std::string preset = "synthetic";

  std::filesystem::path train;
  std::filesystem::path test;
  std::filesystem::path data;  // single file, split by test_fraction
  double test_fraction = 0.1;

  HyperParams params;

  int threads = 1;
  std::vector<Endpoint> machines;
  int rank = 0;
  Balancing balancing = Balancing::uniform;
  bool exclude_self = false;
  std::size_t batch_capacity = kDefaultBatchCapacity;
  double max_delay_ms = 10.0;
  SamplingOrder sampling = SamplingOrder::epoch_permutation;
  int inner_iters = 1;
  std::vector<double> slowdown;

  std::optional<double> checkpoint_seconds;
  std::optional<double> checkpoint_epochs = 1.0;
  Budget budget;
  std::uint64_t seed = 1;

  std::filesystem::path log;
  std::filesystem::path model;
  std::filesystem::path trace;

  RunConfig();

  /// Applies one `key = value` setting. Keys use underscores; a leading
  /// `--` and dashes are accepted too. Setting `preset` resets the
  /// hyperparameters to that preset.
  void set(const std::string& key, const std::string& value);

  /// Reads `key = value` lines; `#` starts a comment.
  void load(std::istream& in);
  void load_file(const std::filesystem::path& path);

  /// Exactly one data source and a nonempty budget.
  void validate() const;

  /// Effective settings, as `key -> value` strings that set() accepts.
  std::map<std::string, std::string> effective() const;

  static const std::vector<std::string>& keys();
};

/// Output directory from NOMAD_LOG_DIR, or the current directory.
std::filesystem::path default_output_dir();

}  // namespace nomad

#endif  // NOMAD_CONFIG_HPP

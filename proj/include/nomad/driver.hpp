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

#ifndef NOMAD_DRIVER_HPP
#define NOMAD_DRIVER_HPP

#include <optional>
#include <vector>

#include "nomad/config.hpp"
#include "nomad/data.hpp"
#include "nomad/engine.hpp"

namespace nomad {

struct RunData {
  std::size_t m = 0;
  std::size_t n = 0;
  std::vector<RatingEntry> train;
  std::vector<RatingEntry> test;
};

/// Loads train/test files, or one file split with the configured fraction and seed.
RunData load_run_data(const RunConfig& config);

struct TrainOutcome {
  RunResult result;
  int workers = 1;
  double final_rmse = 0.0;
  double throughput = 0.0;
};

/// Runs the configured solver. The effective config goes into the log metadata.
TrainOutcome train_model(const RunConfig& config, const RunData& data);

/// Elapsed seconds of the first record at or below `target`, if any.
std::optional<double> time_to_rmse(const ConvergenceLog& log, double target);

}  // namespace nomad

#endif  // NOMAD_DRIVER_HPP

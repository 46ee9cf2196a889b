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

#ifndef NOMAD_BASELINES_HPP
#define NOMAD_BASELINES_HPP

#include <cstdint>
#include <span>
#include <vector>

#include "nomad/core.hpp"
#include "nomad/engine.hpp"
#include "nomad/kernels.hpp"

namespace nomad {

enum class SamplingOrder {
  uniform,            // i.i.d. draws from all ratings
  epoch_permutation,  // a fresh shuffle of all ratings per epoch
  column_cyclic,      // columns 0..n-1 in turn, each column in user order
};

std::string to_string(SamplingOrder order);
SamplingOrder parse_sampling_order(const std::string& s);

/// Single-threaded SGD with the per-rating step schedule. With
/// SamplingOrder::column_cyclic it visits columns exactly as a one-worker
/// NOMAD run does and reproduces its factors bit for bit.
RunResult run_serial_sgd(const ShardedRatings& data, const HyperParams& params,
                         SamplingOrder order, RunControl& control, std::uint64_t seed,
                         std::span<const RatingEntry> test = {});

struct BoldDriver {
  double current_step = 0.01;
  double increase_factor = 1.05;
  double decrease_factor = 0.5;
  double last_objective = std::numeric_limits<double>::infinity();
};

/// Grows the step after a strict objective decrease, cuts it otherwise.
double bold_driver_step(BoldDriver& driver, double new_objective);

/// p strata per epoch; strata[s][q] is the item block worker q sweeps in
/// sub-epoch s. Worker q always owns user block q.
struct StratumPlan {
  int p = 1;
  std::vector<std::vector<int>> strata;

  /// Diagonal rotation starting at `offset`.
  static StratumPlan diagonal(int p, int offset);
  /// True when every stratum is a bijection and every cell appears once.
  bool valid() const;
};

struct DsgdOptions {
  int workers = 1;
  double increase_factor = 1.05;
  double decrease_factor = 0.5;
  bool trace = false;  // TraceRecord.version = global sub-epoch index
};

/// Block-synchronous stratified SGD, simulated with logical workers that run
/// one after another inside each sub-epoch. The step is a global value
/// adapted once per epoch by the bold driver, starting from params.alpha.
RunResult run_dsgd(const ShardedRatings& data, const HyperParams& params,
                   const DsgdOptions& options, RunControl& control, std::uint64_t seed,
                   std::span<const RatingEntry> test = {});

/// Counts sub-epochs in which a user row or item column was touched by two
/// different logical workers.
std::size_t audit_strata(std::span<const TraceRecord> trace);

RunResult run_ccdpp(const ShardedRatings& data, const HyperParams& params, RunControl& control,
                    std::uint64_t seed, std::span<const RatingEntry> test = {},
                    int inner_iters = 1);
RunResult run_ccdpp(const ShardedRatings& data, const HyperParams& params, int epochs,
                    std::uint64_t seed, std::span<const RatingEntry> test = {});

/// Exact least-squares solve of every user row (ascending), then every item row.
void als_sweep_users(FactorMatrix& W, const FactorMatrix& H, const ShardedRatings& data,
                     const HyperParams& params);
void als_sweep_items(const FactorMatrix& W, FactorMatrix& H, const ShardedRatings& data,
                     const HyperParams& params);

RunResult run_als(const ShardedRatings& data, const HyperParams& params, RunControl& control,
                  std::uint64_t seed, std::span<const RatingEntry> test = {});
RunResult run_als(const ShardedRatings& data, const HyperParams& params, int epochs,
                  std::uint64_t seed, std::span<const RatingEntry> test = {});

}  // namespace nomad

#endif  // NOMAD_BASELINES_HPP

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

#include "nomad/driver.hpp"

#include <algorithm>
#include <cmath>

#include "nomad/baselines.hpp"

namespace nomad {

namespace {

void widen(RunData& d, const Dataset& ds) {
  d.m = std::max<std::size_t>(d.m, ds.meta.m);
  d.n = std::max<std::size_t>(d.n, ds.meta.n);
}

}  // namespace

RunData load_run_data(const RunConfig& config) {
  RunData d;
  if (!config.data.empty()) {
    auto all = load_dataset(config.data);
    widen(d, all);
    auto split = split_train_test(std::move(all.entries), config.test_fraction, config.seed);
    d.train = std::move(split.train);
    d.test = std::move(split.test);
    return d;
  }
  auto train = load_dataset(config.train);
  widen(d, train);
  d.train = std::move(train.entries);
  if (!config.test.empty()) {
    auto test = load_dataset(config.test);
    widen(d, test);
    d.test = std::move(test.entries);
  }
  return d;
}

TrainOutcome train_model(const RunConfig& config, const RunData& data) {
  config.validate();
  RunControl control(config.budget);
  control.checkpoint_seconds = config.checkpoint_seconds;
  control.checkpoint_epochs = config.checkpoint_epochs;
  const auto& p = config.params;
  TrainOutcome out;
  out.workers = config.threads;

  switch (config.solver) {
    case Solver::nomad:
      if (config.machines.size() > 1) {
        HybridOptions opts;
        opts.rank = config.rank;
        opts.endpoints = config.machines;
        opts.threads_per_machine = config.threads;
        opts.balancing = config.balancing;
        opts.batch_capacity = config.batch_capacity;
        opts.max_delay = std::chrono::nanoseconds(
            static_cast<std::int64_t>(std::llround(config.max_delay_ms * 1e6)));
        opts.trace = !config.trace.empty();
        out.workers = config.threads * static_cast<int>(config.machines.size());
        out.result = run_hybrid(data.train, data.m, data.n, p, opts, control, config.seed, data.test);
      } else {
        NomadOptions opts;
        opts.workers = config.threads;
        opts.balancing = config.balancing;
        opts.exclude_self = config.exclude_self;
        opts.trace = !config.trace.empty();
        opts.slowdown = config.slowdown;
        out.result = run_nomad(shard(data.train, data.m, data.n, config.threads), p, opts, control,
                               config.seed, data.test);
      }
      break;
    case Solver::serial_sgd:
      out.workers = 1;
      out.result = run_serial_sgd(shard(data.train, data.m, data.n, 1), p, config.sampling, control,
                                  config.seed, data.test);
      break;
    case Solver::dsgd: {
      DsgdOptions opts;
      opts.workers = config.threads;
      opts.trace = !config.trace.empty();
      out.result = run_dsgd(shard(data.train, data.m, data.n, config.threads), p, opts, control,
                            config.seed, data.test);
      break;
    }
    case Solver::ccdpp:
      out.workers = 1;
      out.result = run_ccdpp(shard(data.train, data.m, data.n, 1), p, control, config.seed, data.test,
                             config.inner_iters);
      break;
    case Solver::als:
      out.workers = 1;
      out.result = run_als(shard(data.train, data.m, data.n, 1), p, control, config.seed, data.test);
      break;
  }

  for (const auto& [key, value] : config.effective()) out.result.log.set_meta(key, value);
  const auto& log = out.result.log;
  out.final_rmse = log.empty() ? std::nan("") : log.back().test_rmse;
  out.throughput = log.records().size() >= 2 ? throughput(log, out.workers) : 0.0;
  return out;
}

std::optional<double> time_to_rmse(const ConvergenceLog& log, double target) {
  for (const auto& r : log.records())
    if (r.test_rmse <= target) return r.elapsed_sec;
  return std::nullopt;
}

}  // namespace nomad

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

#include "nomad/baselines.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <unordered_map>

namespace nomad {

std::string to_string(SamplingOrder order) {
  switch (order) {
    case SamplingOrder::uniform: return "uniform";
    case SamplingOrder::epoch_permutation: return "permutation";
    case SamplingOrder::column_cyclic: return "column_cyclic";
  }
  return "?";
}

SamplingOrder parse_sampling_order(const std::string& s) {
  if (s == "uniform") return SamplingOrder::uniform;
  if (s == "permutation" || s == "epoch_permutation") return SamplingOrder::epoch_permutation;
  if (s == "column_cyclic" || s == "cyclic") return SamplingOrder::column_cyclic;
  throw Error("unknown sampling order '" + s + "'");
}

namespace {

using Clock = std::chrono::steady_clock;

/// Budget, checkpoint and log bookkeeping shared by the single-threaded solvers.
/// Wall time spent evaluating checkpoints is excluded from elapsed_sec.
class SerialRun {
 public:
  SerialRun(const ShardedRatings& data, const HyperParams& params, RunControl& control,
            std::span<const RatingEntry> test, const std::string& solver,
            std::uint64_t updates_per_epoch)
      : data_(data), params_(params), control_(control), test_(test),
        per_epoch_(updates_per_epoch) {
    params_.validate();
    if (control_.budget.empty()) throw Error(solver + " needs a stop budget");
    log.set_meta("solver", solver);
    if (control_.budget.epochs)
      budget_ = static_cast<std::uint64_t>(std::ceil(*control_.budget.epochs * static_cast<double>(per_epoch_)));
    if (control_.checkpoint_epochs && *control_.checkpoint_epochs > 0 && per_epoch_ > 0)
      every_ = std::max<std::uint64_t>(
          1, static_cast<std::uint64_t>(std::llround(*control_.checkpoint_epochs * static_cast<double>(per_epoch_))));
    next_ = every_ ? every_ : UINT64_MAX;
    start_ = Clock::now();
    last_timed_ = 0.0;
  }

  bool done(std::uint64_t total) {
    if (control_.stop_requested()) return true;
    if (budget_ && total >= *budget_) return true;
    if (control_.budget.seconds && active() >= *control_.budget.seconds) return true;
    return false;
  }

  bool checkpoint_due(std::uint64_t total) const {
    if (total >= next_) return true;
    return control_.checkpoint_seconds && active() - last_timed_ >= *control_.checkpoint_seconds;
  }

  void checkpoint(const FactorMatrix& W, const FactorMatrix& H, std::uint64_t total) {
    const auto begin = Clock::now();
    const double elapsed = std::chrono::duration<double>(begin - start_ - paused_).count();
    if (log.empty() || total > log.back().total_updates) {
      const double obj = objective(W, H, data_, params_);
      const double rmse = test_.empty() ? std::nan("") : test_rmse(W, H, test_);
      const double t = log.empty() ? 0.0 : std::max(elapsed, std::nextafter(log.back().elapsed_sec, 1e300));
      log.append({t, total, obj, rmse});
      if (control_.budget.target_rmse && !test_.empty() && rmse <= *control_.budget.target_rmse)
        control_.request_stop();
    }
    if (every_) next_ = (total / every_ + 1) * every_;
    paused_ += Clock::now() - begin;
    last_timed_ = active();
  }

  double active() const {
    return std::chrono::duration<double>(Clock::now() - start_ - paused_).count();
  }

  ConvergenceLog log;

 private:
  const ShardedRatings& data_;
  HyperParams params_;
  RunControl& control_;
  std::span<const RatingEntry> test_;
  std::uint64_t per_epoch_;
  std::optional<std::uint64_t> budget_;
  std::uint64_t every_ = 0;
  std::uint64_t next_ = UINT64_MAX;
  Clock::time_point start_;
  Clock::duration paused_{0};
  double last_timed_;
};

RunResult finish(SerialRun& run, FactorMatrix W, FactorMatrix H, std::uint64_t total) {
  run.checkpoint(W, H, total);
  RunResult r;
  r.W = std::move(W);
  r.H = std::move(H);
  r.log = std::move(run.log);
  r.total_updates = total;
  r.updates_per_worker = {total};
  return r;
}

}  // namespace

RunResult run_serial_sgd(const ShardedRatings& data, const HyperParams& params,
                         SamplingOrder order, RunControl& control, std::uint64_t seed,
                         std::span<const RatingEntry> test) {
  const auto& idx = data.index;
  const std::size_t nnz = data.nnz();
  SerialRun run(data, params, control, test, "serial_sgd", nnz);
  run.log.set_meta("sampling", to_string(order));
  auto [W, H] = init_factors(data.m, data.n, params.k, seed);
  std::vector<std::uint32_t> counts(nnz, 0);  // per rating, row-view positions
  Rng rng = make_rng(seed, 0x5e41a1);
  std::uint64_t total = 0;
  run.checkpoint(W, H, total);

  auto update = [&](std::size_t row_pos, std::uint32_t user, std::uint32_t item) {
    const double s = step_size(params, counts[row_pos]);
    sgd_update_pair(W.row(user), H.row(item), idx.row_value[row_pos], params.lambda, s);
    ++counts[row_pos];
    ++total;
  };
  // Row-view position -> user, for the sampling orders that index ratings directly.
  std::vector<std::uint32_t> row_user(nnz);
  for (std::size_t i = 0; i < data.m; ++i)
    std::fill(row_user.begin() + static_cast<std::ptrdiff_t>(idx.row_ptr[i]),
              row_user.begin() + static_cast<std::ptrdiff_t>(idx.row_ptr[i + 1]),
              static_cast<std::uint32_t>(i));

  if (nnz > 0 && data.n > 0) {
    if (order == SamplingOrder::column_cyclic) {
      std::size_t j = 0;
      while (!run.done(total)) {
        for (std::size_t c = idx.col_ptr[j]; c < idx.col_ptr[j + 1]; ++c)
          update(idx.col_to_row[c], idx.col_user[c], static_cast<std::uint32_t>(j));
        j = (j + 1) % data.n;
        if (run.checkpoint_due(total)) run.checkpoint(W, H, total);
      }
    } else {
      std::vector<std::size_t> perm(nnz);
      std::iota(perm.begin(), perm.end(), std::size_t{0});
      std::uniform_int_distribution<std::size_t> draw(0, nnz - 1);
      while (!run.done(total)) {
        if (order == SamplingOrder::epoch_permutation) std::shuffle(perm.begin(), perm.end(), rng);
        for (std::size_t x = 0; x < nnz && !run.done(total); ++x) {
          const std::size_t r = order == SamplingOrder::uniform ? draw(rng) : perm[x];
          update(r, row_user[r], idx.row_item[r]);
          if (run.checkpoint_due(total)) run.checkpoint(W, H, total);
        }
      }
    }
  }
  return finish(run, std::move(W), std::move(H), total);
}

double bold_driver_step(BoldDriver& driver, double new_objective) {
  if (!std::isfinite(new_objective)) throw Error("bold driver needs a finite objective");
  if (new_objective < driver.last_objective)
    driver.current_step *= driver.increase_factor;
  else
    driver.current_step *= driver.decrease_factor;
  // Repeated cuts may underflow; keep the step strictly positive.
  driver.current_step = std::max(driver.current_step, std::numeric_limits<double>::min());
  driver.last_objective = new_objective;
  return driver.current_step;
}

StratumPlan StratumPlan::diagonal(int p, int offset) {
  if (p < 1) throw Error("stratum plan needs p >= 1");
  StratumPlan plan;
  plan.p = p;
  plan.strata.assign(static_cast<std::size_t>(p), std::vector<int>(static_cast<std::size_t>(p)));
  for (int s = 0; s < p; ++s)
    for (int q = 0; q < p; ++q)
      plan.strata[static_cast<std::size_t>(s)][static_cast<std::size_t>(q)] = ((q + offset + s) % p + p) % p;
  return plan;
}

bool StratumPlan::valid() const {
  if (static_cast<int>(strata.size()) != p) return false;
  std::vector<char> cell(static_cast<std::size_t>(p * p), 0);
  for (const auto& stratum : strata) {
    if (static_cast<int>(stratum.size()) != p) return false;
    std::vector<char> used(static_cast<std::size_t>(p), 0);
    for (int q = 0; q < p; ++q) {
      const int b = stratum[static_cast<std::size_t>(q)];
      if (b < 0 || b >= p || used[static_cast<std::size_t>(b)]) return false;
      used[static_cast<std::size_t>(b)] = 1;
      auto& c = cell[static_cast<std::size_t>(q * p + b)];
      if (c) return false;
      c = 1;
    }
  }
  return true;
}

RunResult run_dsgd(const ShardedRatings& data, const HyperParams& params,
                   const DsgdOptions& options, RunControl& control, std::uint64_t seed,
                   std::span<const RatingEntry> test) {
  const int p = options.workers;
  if (p < 1) throw Error("DSGD needs at least one worker");
  const auto& idx = data.index;
  const std::size_t nnz = data.nnz();
  SerialRun run(data, params, control, test, "dsgd", nnz);
  run.log.set_meta("workers", std::to_string(p));

  // Contiguous user and item blocks; cells[q * p + b] lists row-view positions.
  const Partition users = partition_rows(std::max<std::size_t>(data.m, static_cast<std::size_t>(p)), p);
  const Partition items = partition_rows(std::max<std::size_t>(data.n, static_cast<std::size_t>(p)), p);
  std::vector<std::vector<std::size_t>> cells(static_cast<std::size_t>(p * p));
  std::vector<std::uint32_t> row_user(nnz);
  for (std::size_t i = 0; i < data.m; ++i) {
    for (std::size_t r = idx.row_ptr[i]; r < idx.row_ptr[i + 1]; ++r) {
      row_user[r] = static_cast<std::uint32_t>(i);
      const int ub = users.assignment[i];
      const int ib = items.assignment[idx.row_item[r]];
      cells[static_cast<std::size_t>(ub * p + ib)].push_back(r);
    }
  }

  auto [W, H] = init_factors(data.m, data.n, params.k, seed);
  BoldDriver driver{params.alpha, options.increase_factor, options.decrease_factor,
                    objective(W, H, data, params)};
  Rng rng = make_rng(seed, 0xd56d);
  std::vector<std::uint32_t> counts(nnz, 0);
  std::vector<TraceRecord> trace;
  std::uint64_t total = 0, sub_epoch = 0;
  run.checkpoint(W, H, total);

  while (nnz > 0 && !run.done(total)) {
    const int offset = std::uniform_int_distribution<int>(0, p - 1)(rng);
    const auto plan = StratumPlan::diagonal(p, offset);
    for (int s = 0; s < p && !run.done(total); ++s, ++sub_epoch) {
      for (int q = 0; q < p; ++q) {
        auto& cell = cells[static_cast<std::size_t>(q * p + plan.strata[static_cast<std::size_t>(s)][static_cast<std::size_t>(q)])];
        std::shuffle(cell.begin(), cell.end(), rng);
        for (const std::size_t r : cell) {
          const auto user = row_user[r];
          const auto item = idx.row_item[r];
          sgd_update_pair(W.row(user), H.row(item), idx.row_value[r], params.lambda,
                          driver.current_step);
          ++counts[r];
          ++total;
          if (options.trace)
            trace.push_back({TraceRecord::Event::update, q, item, sub_epoch,
                             static_cast<std::int64_t>(user), counts[r], driver.current_step, 0});
        }
      }
      if (run.checkpoint_due(total)) run.checkpoint(W, H, total);
    }
    bold_driver_step(driver, objective(W, H, data, params));
  }
  auto result = finish(run, std::move(W), std::move(H), total);
  result.trace = std::move(trace);
  return result;
}

std::size_t audit_strata(std::span<const TraceRecord> trace) {
  std::size_t violations = 0;
  std::unordered_map<std::uint64_t, int> user_owner, item_owner;
  std::uint64_t current = UINT64_MAX;
  bool flagged = false;
  for (const auto& r : trace) {
    if (r.version != current) {
      current = r.version;
      user_owner.clear();
      item_owner.clear();
      flagged = false;
    }
    const auto [u, u_new] = user_owner.emplace(static_cast<std::uint64_t>(r.user), r.worker);
    const auto [it, i_new] = item_owner.emplace(r.item, r.worker);
    if (!flagged && ((!u_new && u->second != r.worker) || (!i_new && it->second != r.worker))) {
      ++violations;
      flagged = true;
    }
  }
  return violations;
}

RunResult run_ccdpp(const ShardedRatings& data, const HyperParams& params, RunControl& control,
                    std::uint64_t seed, std::span<const RatingEntry> test, int inner_iters) {
  if (inner_iters < 1) throw Error("CCD++ needs at least one inner iteration");
  const std::uint64_t per_epoch =
      static_cast<std::uint64_t>(params.k) * static_cast<std::uint64_t>(inner_iters) * (data.m + data.n);
  SerialRun run(data, params, control, test, "ccdpp", per_epoch);
  auto [W, H] = init_factors(data.m, data.n, params.k, seed);
  auto residual = ResidualMatrix::compute(W, H, data.index);
  std::uint64_t total = 0;
  run.checkpoint(W, H, total);
  while (per_epoch > 0 && !run.done(total)) {
    total += ccdpp_epoch(W, H, data, residual, params, inner_iters);
    if (run.checkpoint_due(total)) run.checkpoint(W, H, total);
  }
  return finish(run, std::move(W), std::move(H), total);
}

RunResult run_ccdpp(const ShardedRatings& data, const HyperParams& params, int epochs,
                    std::uint64_t seed, std::span<const RatingEntry> test) {
  RunControl control(Budget{std::nullopt, static_cast<double>(epochs), std::nullopt});
  return run_ccdpp(data, params, control, seed, test, 1);
}

namespace {

std::vector<IndexedRating> gather(std::span<const std::uint32_t> index,
                                  std::span<const double> value, std::size_t begin,
                                  std::size_t end) {
  std::vector<IndexedRating> out;
  out.reserve(end - begin);
  for (std::size_t x = begin; x < end; ++x) out.push_back({index[x], value[x]});
  return out;
}

void store(std::span<Real> row, const std::vector<double>& x) {
  for (std::size_t l = 0; l < x.size(); ++l) row[l] = static_cast<Real>(x[l]);
}

}  // namespace

void als_sweep_users(FactorMatrix& W, const FactorMatrix& H, const ShardedRatings& data,
                     const HyperParams& params) {
  const auto& idx = data.index;
  for (std::size_t i = 0; i < data.m; ++i) {
    const auto ratings = gather(idx.row_item, idx.row_value, idx.row_ptr[i], idx.row_ptr[i + 1]);
    try {
      store(W.row(i), als_solve_row(build_normal_equation(H, ratings, params.lambda, params.reg_mode)));
    } catch (const SingularSystemError& e) {
      throw SingularSystemError("ALS: singular system for user " + std::to_string(i) + " (" +
                                std::to_string(ratings.size()) + " ratings): " + e.what());
    }
  }
}

void als_sweep_items(const FactorMatrix& W, FactorMatrix& H, const ShardedRatings& data,
                     const HyperParams& params) {
  const auto& idx = data.index;
  for (std::size_t j = 0; j < data.n; ++j) {
    const auto ratings = gather(idx.col_user, idx.col_value, idx.col_ptr[j], idx.col_ptr[j + 1]);
    try {
      store(H.row(j), als_solve_row(build_normal_equation(W, ratings, params.lambda, params.reg_mode)));
    } catch (const SingularSystemError& e) {
      throw SingularSystemError("ALS: singular system for item (column) " + std::to_string(j) +
                                " (" + std::to_string(ratings.size()) + " ratings): " + e.what());
    }
  }
}

RunResult run_als(const ShardedRatings& data, const HyperParams& params, RunControl& control,
                  std::uint64_t seed, std::span<const RatingEntry> test) {
  const std::uint64_t per_epoch = data.m + data.n;
  SerialRun run(data, params, control, test, "als", per_epoch);
  auto [W, H] = init_factors(data.m, data.n, params.k, seed);
  std::uint64_t total = 0;
  run.checkpoint(W, H, total);
  while (per_epoch > 0 && !run.done(total)) {
    als_sweep_users(W, H, data, params);
    als_sweep_items(W, H, data, params);
    total += per_epoch;
    if (run.checkpoint_due(total)) run.checkpoint(W, H, total);
  }
  return finish(run, std::move(W), std::move(H), total);
}

RunResult run_als(const ShardedRatings& data, const HyperParams& params, int epochs,
                  std::uint64_t seed, std::span<const RatingEntry> test) {
  RunControl control(Budget{std::nullopt, static_cast<double>(epochs), std::nullopt});
  return run_als(data, params, control, seed, test);
}

}  // namespace nomad

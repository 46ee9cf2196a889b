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

// Acceptance suite: one pass/fail line per criterion.
//   acceptance              run every criterion
//   acceptance --criterion N

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <random>
#include <sstream>
#include <string>

#include "helpers.hpp"
#include "nomad/baselines.hpp"
#include "nomad/config.hpp"
#include "nomad/data.hpp"
#include "nomad/engine.hpp"
#include "nomad/eval.hpp"
#include "nomad/kernels.hpp"
#include "nomad/transport.hpp"

using namespace nomad;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  const char* title;
  double limit_sec;  // 0 for no runtime bound
  std::function<Outcome()> run;
};

std::string fmt(double x, int prec = 4) {
  std::ostringstream os;
  os.precision(prec);
  os << x;
  return os.str();
}

void set_epochs(RunControl& c, double e, double checkpoint_epochs = 1.0) {
  c.budget.epochs = e;
  c.checkpoint_epochs = checkpoint_epochs;
}

struct Preset {
  SyntheticData syn;
  TrainTestSplit split;
};

const Preset& synthetic_preset() {
  static const Preset p = [] {
    SyntheticSpec spec;
    spec.seed = 7;
    Preset out{generate_synthetic(spec), {}};
    out.split = split_train_test(out.syn.dataset.entries, 0.1, 7);
    return out;
  }();
  return p;
}

HyperParams synthetic_params() { return find_preset("synthetic").params; }

// ---- 1 ------------------------------------------------------------------

Outcome gradient_oracle() {
  std::mt19937_64 rng(101);
  double worst = 0.0;
  for (int inst = 0; inst < 20; ++inst) {
    const std::size_t m = 2 + rng() % 9, n = 2 + rng() % 7;
    const int k = 1 + static_cast<int>(rng() % 4);
    const auto entries = test::random_entries(m, n, 0.5, rng());
    const auto data = shard(entries, m, n, 1);
    HyperParams p;
    p.k = k;
    p.lambda = 0.05 + 0.5 * static_cast<double>(rng() % 10) / 10.0;
    p.reg_mode = inst % 2 ? RegMode::plain : RegMode::weighted;
    auto W = test::random_factors(m, k, rng());
    auto H = test::random_factors(n, k, rng());
    const auto g = objective_gradient(W, H, data, p);
    const double h = 1e-5;
    auto probe = [&](FactorMatrix& X, const FactorMatrix& G) {
      for (std::size_t r = 0; r < X.rows(); ++r)
        for (int l = 0; l < k; ++l) {
          const Real keep = X(r, l);
          X(r, l) = keep + h;
          const double up = objective(W, H, data, p);
          X(r, l) = keep - h;
          const double down = objective(W, H, data, p);
          X(r, l) = keep;
          const double fd = (up - down) / (2 * h);
          worst = std::max(worst, std::abs(G(r, l) - fd) / std::max(1.0, std::abs(fd)));
        }
    };
    probe(W, g.dW);
    probe(H, g.dH);
  }
  return {worst <= 1e-5, "max relative error " + fmt(worst, 3) + " (tol 1e-5) over 20 instances"};
}

// ---- 2 ------------------------------------------------------------------

Outcome serial_equivalence() {
  int identical = 0, total = 0;
  for (auto [m, n] : {std::pair<std::size_t, std::size_t>{60, 40}, {300, 120}}) {
    const auto entries = test::random_entries(m, n, 0.1, m * 7 + n);
    for (std::uint64_t seed : {1, 2, 3}) {
      RunControl c1, c2;
      set_epochs(c1, 3);
      set_epochs(c2, 3);
      const auto a = run_nomad(shard(entries, m, n, 1), synthetic_params(), NomadOptions{}, c1, seed);
      const auto b = run_serial_sgd(shard(entries, m, n, 1), synthetic_params(),
                                    SamplingOrder::column_cyclic, c2, seed);
      ++total;
      if (a.W == b.W && a.H == b.H && a.total_updates == b.total_updates) ++identical;
    }
  }
  return {identical == total, std::to_string(identical) + "/" + std::to_string(total) +
                                  " runs bitwise identical (3 seeds x 2 sizes)"};
}

// ---- 3 ------------------------------------------------------------------

Outcome serializability() {
  const auto& pre = synthetic_preset();
  const auto& meta = pre.syn.dataset.meta;
  std::ostringstream detail;
  bool ok = true;
  for (int p : {2, 4, 8}) {
    RunControl control;
    set_epochs(control, 3, 0.5);
    NomadOptions opt;
    opt.workers = p;
    opt.trace = true;
    auto data = shard(pre.split.train, meta.m, meta.n, p);
    const auto partition = data.partition;
    const auto r = run_nomad(std::move(data), synthetic_params(), opt, control, 11);
    const auto audit = audit_trace(r.trace, partition, synthetic_params(), meta.n);
    std::size_t broken = 0;
    for (const auto& c : r.checkpoints)
      if (!c.conserved || c.parcels_seen != meta.n) ++broken;
    const bool good = audit.version_gaps == 0 && audit.ownership_violations == 0 && broken == 0 &&
                      !r.checkpoints.empty() && audit.updates == r.total_updates;
    ok = ok && good;
    detail << "p=" << p << ": gaps " << audit.version_gaps << ", ownership "
           << audit.ownership_violations << ", conservation failures " << broken << "/"
           << r.checkpoints.size() << "; ";
  }
  return {ok, detail.str()};
}

// ---- 4 ------------------------------------------------------------------

Outcome convergence_band() {
  const auto& pre = synthetic_preset();
  const auto& meta = pre.syn.dataset.meta;
  const auto params = synthetic_params();
  const auto& train = pre.split.train;
  const auto& test = pre.split.test;
  std::map<std::string, double> rmse;

  {
    RunControl c;
    set_epochs(c, 30);
    NomadOptions opt;
    opt.workers = 4;
    rmse["nomad4"] = run_nomad(shard(train, meta.m, meta.n, 4), params, opt, c, 3, test).log.back().test_rmse;
  }
  {
    RunControl c;
    set_epochs(c, 30);
    rmse["serial_sgd"] = run_serial_sgd(shard(train, meta.m, meta.n, 1), params,
                                        SamplingOrder::epoch_permutation, c, 3, test)
                             .log.back()
                             .test_rmse;
  }
  {
    RunControl c;
    set_epochs(c, 30);
    DsgdOptions opt;
    opt.workers = 4;
    rmse["dsgd4"] = run_dsgd(shard(train, meta.m, meta.n, 4), params, opt, c, 3, test).log.back().test_rmse;
  }
  const auto single = shard(train, meta.m, meta.n, 1);
  rmse["ccdpp"] = run_ccdpp(single, params, 30, 3, test).log.back().test_rmse;
  rmse["als"] = run_als(single, params, 30, 3, test).log.back().test_rmse;

  const double floor = test_rmse(pre.syn.W_true, pre.syn.H_true, test);
  bool ok = std::abs(floor - 0.1) <= 0.01;
  std::ostringstream detail;
  detail << "noise floor " << fmt(floor) << "; ";
  for (const auto& [name, r] : rmse) {
    detail << name << " " << fmt(r) << "; ";
    ok = ok && r <= 0.12;
  }
  detail << "bound 0.12";
  return {ok, detail.str()};
}

// ---- 5 ------------------------------------------------------------------

Outcome monotonicity() {
  std::size_t violations = 0, sweeps = 0;
  double worst = 0.0;
  for (std::uint64_t inst = 0; inst < 5; ++inst) {
    const std::size_t m = 30 + 10 * inst, n = 20 + 5 * inst;
    const auto entries = test::random_entries(m, n, 0.2, 500 + inst);
    const auto data = shard(entries, m, n, 1);
    HyperParams p;
    p.k = 2 + static_cast<int>(inst);
    p.lambda = 0.05;
    auto note = [&](double before, double after) {
      ++sweeps;
      const double rise = (after - before) / std::max(1e-300, std::abs(before));
      worst = std::max(worst, rise);
      if (rise > 1e-9) ++violations;
    };
    auto [W, H] = init_factors(m, n, p.k, inst);
    double last = objective(W, H, data, p);
    for (int s = 0; s < 50; ++s) {
      als_sweep_users(W, H, data, p);
      const double mid = objective(W, H, data, p);
      note(last, mid);
      als_sweep_items(W, H, data, p);
      last = objective(W, H, data, p);
      note(mid, last);
    }
    auto [W2, H2] = init_factors(m, n, p.k, inst);
    auto residual = ResidualMatrix::compute(W2, H2, data.index);
    last = objective(W2, H2, data, p);
    for (int s = 0; s < 50; ++s) {
      ccdpp_epoch(W2, H2, data, residual, p);
      const double now = objective(W2, H2, data, p);
      note(last, now);
      last = now;
    }
  }
  return {violations == 0, std::to_string(violations) + " increases in " + std::to_string(sweeps) +
                               " sweeps; largest relative rise " + fmt(worst, 3) + " (slack 1e-9)"};
}

// ---- 6 ------------------------------------------------------------------

ParcelBatch random_batch(std::mt19937_64& rng, int k) {
  std::uniform_real_distribution<double> val(-1e3, 1e3);
  ParcelBatch b;
  b.sender_queue_len = static_cast<std::uint32_t>(rng());
  switch (rng() % 3) {
    case 0: break;
    case 1:
      b.type = MessageType::control;
      b.op = static_cast<ControlOp>(1 + rng() % 8);
      b.arg = rng();
      break;
    default: b.type = MessageType::stop; return b;
  }
  const std::size_t count = (b.type == MessageType::parcels ? 1 : 0) + rng() % 100;
  for (std::size_t i = 0; i < count; ++i) {
    ColumnParcel p;
    p.item = static_cast<std::uint32_t>(rng());
    p.version = rng();
    p.h.resize(static_cast<std::size_t>(k));
    for (auto& x : p.h) x = val(rng);
    b.parcels.push_back(std::move(p));
  }
  return b;
}

Outcome wire_protocol() {
  std::mt19937_64 rng(606);
  std::size_t mismatches = 0;
  for (int i = 0; i < 10000; ++i) {
    const int k = 1 + static_cast<int>(rng() % 16);
    const auto b = random_batch(rng, k);
    if (!(decode_batch(encode_batch(b, k), k) == b)) ++mismatches;
  }
  std::size_t rejected = 0, accepted = 0;
  for (int i = 0; i < 1000; ++i) {
    const int k = 2 + static_cast<int>(rng() % 8);
    ParcelBatch b = random_batch(rng, k);
    if (b.parcels.empty()) b.parcels.push_back(ColumnParcel{1, 1, std::vector<Real>(static_cast<std::size_t>(k), 0.5)});
    if (b.type == MessageType::stop) b.type = MessageType::parcels;
    auto bytes = encode_batch(b, k);
    int decode_k = k;
    switch (i % 5) {
      case 0: bytes.resize(rng() % bytes.size()); break;  // truncation
      case 1: bytes.push_back(static_cast<std::uint8_t>(rng())); break;  // trailing byte
      case 2: bytes[4] = static_cast<std::uint8_t>(6 + rng() % 250); break;  // unknown type
      case 3: {  // non-finite component in the last parcel
        const double bad = i % 2 ? std::numeric_limits<double>::quiet_NaN()
                                 : std::numeric_limits<double>::infinity();
        std::memcpy(bytes.data() + bytes.size() - 8, &bad, 8);
        break;
      }
      default: decode_k = k + 1; break;  // vector length mismatch
    }
    try {
      decode_batch(bytes, decode_k);
      ++accepted;
    } catch (const FramingError&) {
      ++rejected;
    }
  }
  return {mismatches == 0 && rejected == 1000,
          std::to_string(mismatches) + " mismatches in 10000 round trips; " + std::to_string(rejected) +
              "/1000 damaged frames rejected"};
}

// ---- 7 ------------------------------------------------------------------

/// Runs rank 1 in a forked child and rank 0 here; returns rank 0's final RMSE.
double two_process_rmse(const Preset& pre, std::uint64_t seed, double epochs) {
  const auto& meta = pre.syn.dataset.meta;
  const std::vector<Endpoint> eps{{"127.0.0.1", test::free_port()}, {"127.0.0.1", test::free_port()}};
  HybridOptions opt;
  opt.endpoints = eps;
  opt.threads_per_machine = 2;
  opt.max_delay = std::chrono::milliseconds(1);
  std::fflush(nullptr);
  const pid_t child = ::fork();
  if (child < 0) throw Error("fork failed");
  if (child == 0) {
    int code = 0;
    try {
      HybridOptions peer = opt;
      peer.rank = 1;
      RunControl control;
      run_hybrid(pre.split.train, meta.m, meta.n, synthetic_params(), peer, control, seed);
    } catch (const std::exception& e) {
      std::fprintf(stderr, "rank 1: %s\n", e.what());
      code = 1;
    }
    std::fflush(nullptr);
    ::_exit(code);
  }
  double rmse = std::nan("");
  std::string failure;
  try {
    RunControl control;
    set_epochs(control, epochs);
    rmse = run_hybrid(pre.split.train, meta.m, meta.n, synthetic_params(), opt, control, seed,
                      pre.split.test)
               .log.back()
               .test_rmse;
  } catch (const std::exception& e) {
    failure = e.what();
  }
  int status = 0;
  ::waitpid(child, &status, 0);
  if (!failure.empty()) throw Error("rank 0: " + failure);
  if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) throw Error("rank 1 process failed");
  return rmse;
}

// Large enough that one epoch outlasts a scheduler time slice.
const Preset& transport_preset() {
  static const Preset p = [] {
    SyntheticSpec spec;
    spec.n_users = 20000;
    spec.n_items = 5000;
    spec.target_nnz = 1000000;
    spec.seed = 7;
    Preset out{generate_synthetic(spec), {}};
    out.split = split_train_test(out.syn.dataset.entries, 0.1, 7);
    return out;
  }();
  return p;
}

Outcome transport_equivalence() {
  const auto& pre = transport_preset();
  const auto& meta = pre.syn.dataset.meta;
  constexpr double kEpochs = 30;
  bool ok = true;
  std::ostringstream detail;
  for (std::uint64_t seed : {1, 2, 3}) {
    const double hybrid = two_process_rmse(pre, seed, kEpochs);
    RunControl control;
    set_epochs(control, kEpochs);
    NomadOptions opt;
    opt.workers = 4;
    const double single = run_nomad(shard(pre.split.train, meta.m, meta.n, 4), synthetic_params(),
                                    opt, control, seed, pre.split.test)
                              .log.back()
                              .test_rmse;
    const double diff = std::abs(hybrid - single);
    ok = ok && diff <= 0.01;
    detail << "seed " << seed << ": 2x2 " << fmt(hybrid) << " vs 4 threads " << fmt(single) << " (diff "
           << fmt(diff, 2) << "); ";
  }
  detail << "tol 0.01";
  return {ok, detail.str()};
}

// ---- 8 ------------------------------------------------------------------

Outcome load_balancing() {
  const auto& pre = synthetic_preset();
  const auto& meta = pre.syn.dataset.meta;
  std::map<Balancing, std::pair<std::size_t, std::uint64_t>> out;
  for (auto mode : {Balancing::uniform, Balancing::two_choice}) {
    Budget b;
    b.seconds = 8.0;
    RunControl control(b);
    control.checkpoint_epochs.reset();
    control.checkpoint_seconds = 4.0;
    NomadOptions opt;
    opt.workers = 4;
    opt.balancing = mode;
    opt.slowdown = {10.0, 1.0, 1.0, 1.0};
    const auto r = run_nomad(shard(pre.split.train, meta.m, meta.n, 4), synthetic_params(), opt,
                             control, 5);
    out[mode] = {r.final_queue_lengths.at(0), r.total_updates};
  }
  const auto [uq, uu] = out[Balancing::uniform];
  const auto [tq, tu] = out[Balancing::two_choice];
  const bool ok = 2 * tq <= uq && static_cast<double>(tu) >= 1.1 * static_cast<double>(uu);
  return {ok, "slow-worker queue uniform " + std::to_string(uq) + " vs two_choice " + std::to_string(tq) +
                  "; updates uniform " + std::to_string(uu) + " vs two_choice " + std::to_string(tu) +
                  " (ratio " + fmt(static_cast<double>(tu) / static_cast<double>(std::max<std::uint64_t>(uu, 1)), 3) +
                  ", need >= 1.1)"};
}

// ---- 9 ------------------------------------------------------------------

Outcome throughput_sanity() {
  const auto& pre = synthetic_preset();
  const auto& meta = pre.syn.dataset.meta;
  std::map<int, double> per_worker;
  for (int p : {1, 4}) {
    RunControl control;
    set_epochs(control, 10, 5.0);
    NomadOptions opt;
    opt.workers = p;
    const auto r = run_nomad(shard(pre.split.train, meta.m, meta.n, p), synthetic_params(), opt, control, 9);
    per_worker[p] = throughput(r.log, p);
  }
  const double ratio = per_worker[4] / per_worker[1];
  return {ratio >= 0.5, "updates/worker/s 1 thread " + fmt(per_worker[1], 6) + ", 4 threads " +
                            fmt(per_worker[4], 6) + " (ratio " + fmt(ratio, 3) + ", need >= 0.5; " +
                            std::to_string(std::thread::hardware_concurrency()) + " hardware threads)"};
}

// ---- 10 -----------------------------------------------------------------

Outcome step_schedule() {
  const auto& pre = synthetic_preset();
  const auto& meta = pre.syn.dataset.meta;
  auto params = find_preset("netflix").params;
  params.k = 10;
  RunControl control;
    set_epochs(control, 6);
  NomadOptions opt;
  opt.workers = 2;
  opt.trace = true;
  auto data = shard(pre.split.train, meta.m, meta.n, 2);
  const auto partition = data.partition;
  const auto r = run_nomad(std::move(data), params, opt, control, 4);
  const auto audit = audit_trace(r.trace, partition, params, meta.n);
  const double s0 = 0.012, s4 = 0.012 / 1.4;
  std::size_t first = 0, fifth = 0, bad = 0;
  for (const auto& t : r.trace) {
    if (t.event != TraceRecord::Event::update) continue;
    if (t.update_count == 1) {
      ++first;
      if (t.step != s0) ++bad;
    } else if (t.update_count == 5) {
      ++fifth;
      if (std::abs(t.step - s4) > 1e-16 * s4) ++bad;
    }
  }
  const bool ok = audit.step_mismatches == 0 && bad == 0 && first > 0 && fifth > 0;
  return {ok, std::to_string(audit.step_mismatches) + " schedule mismatches in " +
                  std::to_string(audit.updates) + " updates; s_0 checked on " + std::to_string(first) +
                  ", s_4 = alpha/1.4 on " + std::to_string(fifth) + " (" + std::to_string(bad) + " off)"};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all = {
      {1, "gradient oracle", 5, gradient_oracle},
      {2, "serial equivalence", 30, serial_equivalence},
      {3, "serializability audit", 120, serializability},
      {4, "convergence band", 180, convergence_band},
      {5, "monotonicity", 60, monotonicity},
      {6, "wire protocol", 30, wire_protocol},
      {7, "transport equivalence", 180, transport_equivalence},
      {8, "load balancing", 120, load_balancing},
      {9, "throughput sanity", 0, throughput_sanity},
      {10, "step schedule", 0, step_schedule},
  };
  int only = 0;
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--criterion") == 0 && i + 1 < argc) {
      only = std::atoi(argv[++i]);
    } else {
      std::cerr << "usage: acceptance [--criterion N]\n";
      return 2;
    }
  }
  int failed = 0, ran = 0;
  for (const auto& c : all) {
    if (only && c.id != only) continue;
    ++ran;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double sec = std::chrono::duration<double>(Clock::now() - t0).count();
    const bool in_time = c.limit_sec == 0 || sec <= c.limit_sec;
    const bool pass = o.pass && in_time;
    if (!pass) ++failed;
    std::cout << (pass ? "PASS" : "FAIL") << " criterion " << c.id << " " << c.title << ": "
              << o.detail << " [" << fmt(sec, 3) << " s";
    if (c.limit_sec > 0) std::cout << ", limit " << c.limit_sec << " s";
    std::cout << "]" << std::endl;
  }
  if (ran == 0) {
    std::cerr << "no such criterion\n";
    return 2;
  }
  return failed ? 1 : 0;
}

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

#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "nomad/config.hpp"
#include "nomad/data.hpp"
#include "nomad/driver.hpp"
#include "nomad/eval.hpp"

namespace fs = std::filesystem;
using namespace nomad;

namespace {

std::string dashed(std::string key) {
  std::replace(key.begin(), key.end(), '_', '-');
  return "--" + key;
}

/// Registers one string option per config key; parsed values are applied
/// over the config file in a second pass.
struct ConfigFlags {
  std::string config_file;
  std::map<std::string, std::string> values;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config_file, "key = value file; flags override it");
    for (const auto& key : RunConfig::keys()) cmd->add_option(dashed(key), values[key]);
  }

  RunConfig resolve(CLI::App* cmd) const {
    RunConfig cfg;
    if (!config_file.empty()) cfg.load_file(config_file);
    // The preset goes first so explicit hyperparameters override it.
    if (cmd->count("--preset")) cfg.set("preset", values.at("preset"));
    for (const auto& key : RunConfig::keys())
      if (key != "preset" && cmd->count(dashed(key))) cfg.set(key, values.at(key));
    return cfg;
  }
};

fs::path default_path(const fs::path& chosen, const std::string& name) {
  return chosen.empty() ? default_output_dir() / name : chosen;
}

void write_plot_script(const fs::path& script, const std::vector<fs::path>& logs) {
  std::ofstream out(script);
  if (!out) throw Error("cannot write " + script.string());
  out << "set datafile separator ','\nset key autotitle columnhead\n"
      << "set xlabel 'seconds'\nset ylabel 'test RMSE'\nplot ";
  for (std::size_t x = 0; x < logs.size(); ++x)
    out << (x ? ", " : "") << "'" << logs[x].string() << "' using 1:4 with lines title '"
        << logs[x].stem().string() << "'";
  out << "\n";
}

std::string fmt_opt(const std::optional<double>& v) {
  if (!v) return "";
  std::ostringstream s;
  s << std::setprecision(9) << *v;
  return s.str();
}

int cmd_generate(const SyntheticSpec& spec, const fs::path& out_prefix, double split) {
  const auto data = generate_synthetic(spec);
  const fs::path prefix = out_prefix.empty() ? default_output_dir() / "synthetic" : out_prefix;
  if (prefix.has_parent_path()) fs::create_directories(prefix.parent_path());
  const auto base = prefix.string();
  write_binary(data.dataset, base + ".bin");
  write_model(data.W_true, data.H_true, base + ".truth.model");
  if (split > 0.0) {
    auto s = split_train_test(data.dataset.entries, split, spec.seed);
    Dataset train{data.dataset.meta, std::move(s.train)};
    Dataset test{data.dataset.meta, std::move(s.test)};
    train.meta.nnz = train.entries.size();
    test.meta.nnz = test.entries.size();
    write_binary(train, base + ".train.bin");
    write_binary(test, base + ".test.bin");
  }
  std::ofstream meta(base + ".meta");
  meta << "name=" << data.dataset.meta.name << "\nm=" << data.dataset.meta.m
       << "\nn=" << data.dataset.meta.n << "\nnnz=" << data.dataset.meta.nnz
       << "\nk_true=" << spec.k_true << "\nnoise_sd=" << spec.noise_sd << "\nseed=" << spec.seed
       << "\n";
  if (!meta) throw Error("cannot write " + base + ".meta");
  std::cout << "wrote " << base << ".bin (" << data.dataset.meta.m << " x "
            << data.dataset.meta.n << ", " << data.dataset.meta.nnz << " ratings)\n";
  return 0;
}

int cmd_convert(const fs::path& in, const fs::path& out, int index_base) {
  auto data = load_dataset(in, index_base);
  if (out.extension() == ".bin")
    write_binary(data, out);
  else
    write_text(data, out, index_base);
  std::cout << "wrote " << out.string() << " (" << data.meta.nnz << " ratings)\n";
  return 0;
}

void write_outputs(const RunConfig& cfg, const TrainOutcome& outcome, const std::string& stem) {
  const auto log_path = default_path(cfg.log, stem + ".csv");
  if (log_path.has_parent_path()) fs::create_directories(log_path.parent_path());
  write_csv(outcome.result.log, log_path);
  if (outcome.result.W.rows() > 0) {
    const auto model_path = default_path(cfg.model, stem + ".model");
    if (model_path.has_parent_path()) fs::create_directories(model_path.parent_path());
    write_model(outcome.result.W, outcome.result.H, model_path);
  }
  if (!cfg.trace.empty()) write_trace(outcome.result.trace, cfg.trace);
}

void report(const TrainOutcome& outcome) {
  std::cout << std::setprecision(6) << "final test RMSE " << outcome.final_rmse
            << "\nupdates " << outcome.result.total_updates << "\nthroughput "
            << outcome.throughput << " updates/worker/sec\n";
}

int cmd_train(const RunConfig& cfg, const fs::path& plot) {
  const auto data = load_run_data(cfg);
  const auto outcome = train_model(cfg, data);
  write_outputs(cfg, outcome, to_string(cfg.solver));
  if (!plot.empty()) write_plot_script(plot, {default_path(cfg.log, to_string(cfg.solver) + ".csv")});
  report(outcome);
  return 0;
}

int cmd_serve_peer(const RunConfig& cfg) {
  if (cfg.machines.empty()) throw ConfigError("serve-peer needs --machines");
  if (cfg.solver != Solver::nomad) throw ConfigError("serve-peer runs the nomad solver only");
  const auto data = load_run_data(cfg);
  const auto outcome = train_model(cfg, data);
  if (cfg.rank == 0) {
    write_outputs(cfg, outcome, "nomad-hybrid");
    report(outcome);
  } else {
    if (!cfg.trace.empty()) write_trace(outcome.result.trace, cfg.trace);
    std::cout << "rank " << cfg.rank << " done, local updates " << outcome.result.total_updates
              << "\n";
  }
  return 0;
}

int cmd_bench(RunConfig base, const std::vector<std::string>& solvers,
              const std::vector<int>& threads, std::optional<double> target,
              const fs::path& out_dir, const fs::path& plot) {
  if (!target) target = base.budget.target_rmse;
  const fs::path dir = out_dir.empty() ? default_output_dir() : out_dir;
  fs::create_directories(dir);
  const auto data = load_run_data(base);
  std::ofstream summary(dir / "summary.csv");
  summary << "solver,threads,status,final_rmse,total_updates,throughput,time_to_target,log\n";
  std::vector<fs::path> logs;
  int failures = 0;
  for (const auto& solver : solvers) {
    for (int t : threads) {
      RunConfig cfg = base;
      const std::string stem = solver + "_t" + std::to_string(t);
      std::string status = "ok", rmse, updates, tput, ttt;
      const fs::path log_path = dir / (stem + ".csv");
      try {
        cfg.set("solver", solver);
        cfg.threads = t;
        cfg.log = log_path;
        cfg.model = dir / (stem + ".model");
        cfg.trace.clear();
        const auto outcome = train_model(cfg, data);
        write_outputs(cfg, outcome, stem);
        std::ostringstream a, b;
        a << std::setprecision(9) << outcome.final_rmse;
        b << std::setprecision(9) << outcome.throughput;
        rmse = a.str();
        tput = b.str();
        updates = std::to_string(outcome.result.total_updates);
        if (target) ttt = fmt_opt(time_to_rmse(outcome.result.log, *target));
        logs.push_back(log_path);
        std::cout << stem << ": rmse " << rmse << ", throughput " << tput << "\n";
      } catch (const std::exception& e) {
        status = "failed";
        ++failures;
        std::cerr << stem << ": " << e.what() << "\n";
      }
      summary << solver << ',' << t << ',' << status << ',' << rmse << ',' << updates << ','
              << tput << ',' << ttt << ',' << (status == "ok" ? log_path.string() : "") << '\n';
    }
  }
  if (!plot.empty()) write_plot_script(plot, logs);
  return failures ? 1 : 0;
}

int cmd_eval(const fs::path& model, const fs::path& test) {
  const auto [W, H] = read_model(model);
  const auto data = load_dataset(test);
  std::cout << std::setprecision(9) << "test RMSE " << test_rmse(W, H, data.entries) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Asynchronous nomadic-column matrix completion"};
  app.require_subcommand(1);

  SyntheticSpec spec;
  fs::path gen_out;
  double gen_split = 0.0;
  std::string user_deg, item_deg;
  auto* gen = app.add_subcommand("generate", "Write a synthetic low-rank dataset");
  gen->add_option("--users", spec.n_users);
  gen->add_option("--items", spec.n_items);
  gen->add_option("--rank", spec.k_true);
  gen->add_option("--noise", spec.noise_sd);
  gen->add_option("--nnz", spec.target_nnz);
  gen->add_option("--seed", spec.seed)->required();
  gen->add_option("--min-user-degree", spec.min_user_degree);
  gen->add_option("--min-item-degree", spec.min_item_degree);
  gen->add_option("--exponent", spec.power_law.exponent);
  gen->add_option("--user-degrees", user_deg, "degree histogram file");
  gen->add_option("--item-degrees", item_deg, "degree histogram file");
  gen->add_option("--out", gen_out, "output prefix");
  gen->add_option("--split", gen_split, "also write .train.bin/.test.bin with this test fraction");

  fs::path conv_in, conv_out;
  int index_base = 1;
  auto* conv = app.add_subcommand("convert", "Convert between text and binary datasets");
  conv->add_option("--in", conv_in)->required();
  conv->add_option("--out", conv_out)->required();
  conv->add_option("--index-base", index_base);

  ConfigFlags train_flags, peer_flags, bench_flags;
  fs::path train_plot, bench_plot, bench_dir;
  auto* train = app.add_subcommand("train", "Train one model");
  train_flags.attach(train);
  train->add_option("--plot", train_plot, "gnuplot script to write");

  auto* peer = app.add_subcommand("serve-peer", "Join a multi-process run as one machine");
  peer_flags.attach(peer);

  std::vector<std::string> bench_solvers{"nomad"};
  std::vector<int> bench_threads{1, 2, 4};
  std::optional<double> bench_target;
  auto* bench = app.add_subcommand("bench", "Sweep solvers x thread counts");
  bench_flags.attach(bench);
  bench->add_option("--solvers", bench_solvers)->delimiter(',');
  bench->add_option("--threads-list", bench_threads)->delimiter(',');
  bench->add_option("--report-rmse", bench_target, "RMSE for the time-to-target column");
  bench->add_option("--out-dir", bench_dir);
  bench->add_option("--plot", bench_plot);

  fs::path eval_model, eval_test;
  auto* eval = app.add_subcommand("eval", "Test RMSE of a model file");
  eval->add_option("--model", eval_model)->required();
  eval->add_option("--test", eval_test)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      if (!user_deg.empty()) spec.user_degree_file = user_deg;
      if (!item_deg.empty()) spec.item_degree_file = item_deg;
      return cmd_generate(spec, gen_out, gen_split);
    }
    if (conv->parsed()) return cmd_convert(conv_in, conv_out, index_base);
    if (train->parsed()) return cmd_train(train_flags.resolve(train), train_plot);
    if (peer->parsed()) return cmd_serve_peer(peer_flags.resolve(peer));
    if (bench->parsed())
      return cmd_bench(bench_flags.resolve(bench), bench_solvers, bench_threads, bench_target,
                       bench_dir, bench_plot);
    if (eval->parsed()) return cmd_eval(eval_model, eval_test);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

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

#include "nomad/config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace nomad {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string normalize_key(std::string key) {
  key = trim(key);
  while (!key.empty() && key.front() == '-') key.erase(key.begin());
  std::replace(key.begin(), key.end(), '-', '_');
  return key;
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto* end = v.data() + v.size();
  const auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end) throw ConfigError(key + ": not a number: '" + v + "'");
  return out;
}

long long to_int(const std::string& key, const std::string& v) {
  long long out = 0;
  const auto* end = v.data() + v.size();
  const auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end) throw ConfigError(key + ": not an integer: '" + v + "'");
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  throw ConfigError(key + ": not a boolean: '" + v + "'");
}

std::optional<double> to_optional(const std::string& key, const std::string& v) {
  if (v.empty() || v == "none") return std::nullopt;
  return to_double(key, v);
}

std::string fmt(double x) {
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, ptr);
}

std::string fmt(const std::optional<double>& x) { return x ? fmt(*x) : "none"; }

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  for (std::string item; std::getline(ss, item, ',');)
    if (!trim(item).empty()) out.push_back(trim(item));
  return out;
}

HyperParams hp(int k, double lambda, double alpha, double beta) {
  HyperParams p;
  p.k = k;
  p.lambda = lambda;
  p.alpha = alpha;
  p.beta = beta;
  return p;
}

const std::vector<Preset>& presets() {
  static const std::vector<Preset> all = {
      {"synthetic", hp(10, 0.01, 0.05, 0.01)},
      {"netflix", hp(100, 0.05, 0.012, 0.05)},
      {"yahoo", hp(100, 1.00, 0.00075, 0.01)},
      {"hugewiki", hp(100, 0.01, 0.001, 0.0)},
  };
  return all;
}

}  // namespace

std::string to_string(Solver s) {
  switch (s) {
    case Solver::nomad: return "nomad";
    case Solver::serial_sgd: return "serial_sgd";
    case Solver::dsgd: return "dsgd";
    case Solver::ccdpp: return "ccdpp";
    case Solver::als: return "als";
  }
  return "?";
}

Solver parse_solver(const std::string& s) {
  for (auto v : {Solver::nomad, Solver::serial_sgd, Solver::dsgd, Solver::ccdpp, Solver::als})
    if (to_string(v) == s) return v;
  if (s == "sgd") return Solver::serial_sgd;
  if (s == "ccd++") return Solver::ccdpp;
  throw ConfigError("unknown solver '" + s + "'");
}

const Preset& find_preset(const std::string& name) {
  for (const auto& p : presets())
    if (p.name == name) return p;
  throw ConfigError("unknown preset '" + name + "'");
}

std::vector<std::string> preset_names() {
  std::vector<std::string> names;
  for (const auto& p : presets()) names.push_back(p.name);
  return names;
}

RunConfig::RunConfig() : params(find_preset("synthetic").params) {}

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> all = {
      "solver", "preset", "train", "test", "data", "test_fraction", "k", "lambda", "alpha",
      "beta", "reg_mode", "threads", "machines", "rank", "balancing", "exclude_self",
      "batch_capacity", "max_delay_ms", "sampling", "inner_iters", "slowdown",
      "checkpoint_seconds", "checkpoint_epochs", "epochs", "seconds", "target_rmse", "seed",
      "log", "model", "trace"};
  return all;
}

void RunConfig::set(const std::string& raw_key, const std::string& raw_value) {
  const auto key = normalize_key(raw_key);
  const auto v = trim(raw_value);
  if (key == "solver") solver = parse_solver(v);
  else if (key == "preset") {
    params = find_preset(v).params;
    preset = v;
  } else if (key == "train") train = v;
  else if (key == "test") test = v;
  else if (key == "data") data = v;
  else if (key == "test_fraction") test_fraction = to_double(key, v);
  else if (key == "k") params.k = static_cast<int>(to_int(key, v));
  else if (key == "lambda") params.lambda = to_double(key, v);
  else if (key == "alpha") params.alpha = to_double(key, v);
  else if (key == "beta") params.beta = to_double(key, v);
  else if (key == "reg_mode") params.reg_mode = parse_reg_mode(v);
  else if (key == "threads") threads = static_cast<int>(to_int(key, v));
  else if (key == "machines") {
    machines.clear();
    for (const auto& e : split_list(v)) machines.push_back(parse_endpoint(e));
  } else if (key == "rank") rank = static_cast<int>(to_int(key, v));
  else if (key == "balancing") balancing = parse_balancing(v);
  else if (key == "exclude_self") exclude_self = to_bool(key, v);
  else if (key == "batch_capacity") batch_capacity = static_cast<std::size_t>(to_int(key, v));
  else if (key == "max_delay_ms") max_delay_ms = to_double(key, v);
  else if (key == "sampling") sampling = parse_sampling_order(v);
  else if (key == "inner_iters") inner_iters = static_cast<int>(to_int(key, v));
  else if (key == "slowdown") {
    slowdown.clear();
    for (const auto& s : split_list(v)) slowdown.push_back(to_double(key, s));
  } else if (key == "checkpoint_seconds") checkpoint_seconds = to_optional(key, v);
  else if (key == "checkpoint_epochs") checkpoint_epochs = to_optional(key, v);
  else if (key == "epochs") budget.epochs = to_optional(key, v);
  else if (key == "seconds") budget.seconds = to_optional(key, v);
  else if (key == "target_rmse") budget.target_rmse = to_optional(key, v);
  else if (key == "seed") seed = static_cast<std::uint64_t>(to_int(key, v));
  else if (key == "log") log = v;
  else if (key == "model") model = v;
  else if (key == "trace") trace = v;
  else throw ConfigError("unknown config key '" + key + "'");
}

void RunConfig::load(std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    try {
      set(line.substr(0, eq), line.substr(eq + 1));
    } catch (const Error& e) {
      throw ConfigError("config line " + std::to_string(line_no) + ": " + e.what());
    }
  }
}

void RunConfig::load_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  load(in);
}

void RunConfig::validate() const {
  const bool pair = !train.empty();
  const bool single = !data.empty();
  if (pair == single) throw ConfigError("give exactly one data source: train (+ test) or data");
  if (single && !test.empty()) throw ConfigError("test cannot be combined with data");
  if (single && !(test_fraction >= 0.0 && test_fraction < 1.0))
    throw ConfigError("test_fraction must be in [0, 1)");
  const bool peer = machines.size() > 1 && rank != 0;
  if (budget.empty() && !peer)
    throw ConfigError("budget is empty: set epochs, seconds or target_rmse");
  if (threads < 1) throw ConfigError("threads must be >= 1");
  if (!machines.empty() && (rank < 0 || rank >= static_cast<int>(machines.size())))
    throw ConfigError("rank out of range for the machine list");
  if (batch_capacity < 1) throw ConfigError("batch_capacity must be >= 1");
  if (inner_iters < 1) throw ConfigError("inner_iters must be >= 1");
  params.validate();
}

std::map<std::string, std::string> RunConfig::effective() const {
  std::map<std::string, std::string> out;
  out["solver"] = to_string(solver);
  out["preset"] = preset;
  out["train"] = train.string();
  out["test"] = test.string();
  out["data"] = data.string();
  out["test_fraction"] = fmt(test_fraction);
  out["k"] = std::to_string(params.k);
  out["lambda"] = fmt(params.lambda);
  out["alpha"] = fmt(params.alpha);
  out["beta"] = fmt(params.beta);
  out["reg_mode"] = to_string(params.reg_mode);
  out["threads"] = std::to_string(threads);
  std::string m;
  for (const auto& e : machines) m += (m.empty() ? "" : ",") + e.host + ":" + std::to_string(e.port);
  out["machines"] = m;
  out["rank"] = std::to_string(rank);
  out["balancing"] = to_string(balancing);
  out["exclude_self"] = exclude_self ? "true" : "false";
  out["batch_capacity"] = std::to_string(batch_capacity);
  out["max_delay_ms"] = fmt(max_delay_ms);
  out["sampling"] = to_string(sampling);
  out["inner_iters"] = std::to_string(inner_iters);
  std::string s;
  for (double x : slowdown) s += (s.empty() ? "" : ",") + fmt(x);
  out["slowdown"] = s;
  out["checkpoint_seconds"] = fmt(checkpoint_seconds);
  out["checkpoint_epochs"] = fmt(checkpoint_epochs);
  out["epochs"] = fmt(budget.epochs);
  out["seconds"] = fmt(budget.seconds);
  out["target_rmse"] = fmt(budget.target_rmse);
  out["seed"] = std::to_string(seed);
  out["log"] = log.string();
  out["model"] = model.string();
  out["trace"] = trace.string();
  return out;
}

std::filesystem::path default_output_dir() {
  if (const char* dir = std::getenv("NOMAD_LOG_DIR"); dir && *dir) return dir;
  return std::filesystem::current_path();
}

}  // namespace nomad

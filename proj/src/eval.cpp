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

#include "nomad/eval.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "nomad/data.hpp"

namespace nomad {

namespace {

constexpr const char* kHeader = "elapsed_sec,total_updates,train_objective,test_rmse";

std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return {buf, res.ptr};
}

template <typename T>
T parse_field(const std::string& s, std::size_t line_no) {
  T v{};
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw FormatError("log line " + std::to_string(line_no) + ": bad field '" + s + "'");
  return v;
}

}  // namespace

void ConvergenceLog::append(const LogRecord& record) {
  if (!records_.empty()) {
    const auto& last = records_.back();
    if (!(record.elapsed_sec > last.elapsed_sec) || !(record.total_updates > last.total_updates))
      throw Error("convergence log records must strictly increase in time and updates");
  }
  records_.push_back(record);
}

void ConvergenceLog::set_meta(const std::string& key, const std::string& value) {
  if (key.find_first_of("=\n") != std::string::npos || value.find('\n') != std::string::npos)
    throw Error("metadata key/value may not contain '=' (key) or newlines");
  for (auto& kv : meta_) {
    if (kv.first == key) {
      kv.second = value;
      return;
    }
  }
  meta_.emplace_back(key, value);
}

std::string ConvergenceLog::meta(const std::string& key, const std::string& fallback) const {
  for (const auto& kv : meta_)
    if (kv.first == key) return kv.second;
  return fallback;
}

double test_rmse(const FactorMatrix& W, const FactorMatrix& H,
                 std::span<const RatingEntry> test) {
  if (test.empty()) throw Error("test_rmse: empty test set");
  double acc = 0.0;
  for (const auto& e : test) {
    if (e.user >= W.rows() || e.item >= H.rows())
      throw DimensionError("test rating outside the factor shapes");
    const double r = e.value - static_cast<double>(predict(W.row(e.user), H.row(e.item)));
    acc += r * r;
  }
  return std::sqrt(acc / static_cast<double>(test.size()));
}

double throughput(const ConvergenceLog& log, int workers) {
  if (log.records().size() < 2) throw Error("throughput needs at least two log records");
  if (workers < 1) throw Error("throughput needs at least one worker");
  const auto& a = log.records().front();
  const auto& b = log.records().back();
  const double dt = b.elapsed_sec - a.elapsed_sec;
  if (!(dt > 0.0)) throw Error("throughput: zero elapsed time");
  return static_cast<double>(b.total_updates - a.total_updates) / dt / workers;
}

std::string to_csv(const ConvergenceLog& log) {
  std::ostringstream out;
  for (const auto& [k, v] : log.metadata()) out << '#' << k << '=' << v << '\n';
  out << kHeader << '\n';
  for (const auto& r : log.records())
    out << format_double(r.elapsed_sec) << ',' << r.total_updates << ','
        << format_double(r.train_objective) << ',' << format_double(r.test_rmse) << '\n';
  return out.str();
}

ConvergenceLog parse_csv(const std::string& text) {
  ConvergenceLog log;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw FormatError("log line " + std::to_string(line_no) + ": metadata needs key=value");
      log.set_meta(line.substr(1, eq - 1), line.substr(eq + 1));
      continue;
    }
    if (!header) {
      if (line != kHeader)
        throw FormatError("log line " + std::to_string(line_no) + ": unexpected header");
      header = true;
      continue;
    }
    std::vector<std::string> f;
    std::istringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    if (f.size() != 4)
      throw FormatError("log line " + std::to_string(line_no) + ": expected 4 fields");
    log.append({parse_field<double>(f[0], line_no), parse_field<std::uint64_t>(f[1], line_no),
                parse_field<double>(f[2], line_no), parse_field<double>(f[3], line_no)});
  }
  if (!header) throw FormatError("log has no header line");
  return log;
}

void write_csv(const ConvergenceLog& log, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out << to_csv(log);
  if (!out) throw FormatError("write failed for " + path.string());
}

ConvergenceLog read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_csv(ss.str());
}

}  // namespace nomad

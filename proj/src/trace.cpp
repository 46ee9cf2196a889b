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

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <unordered_map>

#include "nomad/data.hpp"
#include "nomad/engine.hpp"

namespace nomad {

void write_trace(std::span<const TraceRecord> trace, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  for (const auto& r : trace) {
    if (r.event == TraceRecord::Event::process)
      out << "process," << r.worker << ',' << r.item << ',' << r.version << ",,\n";
    else
      out << "update," << r.worker << ',' << r.item << ',' << r.version << ',' << r.user << ','
          << r.update_count << '\n';
  }
  if (!out) throw FormatError("write failed for " + path.string());
}

std::vector<TraceRecord> read_trace(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  std::vector<TraceRecord> trace;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::istringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    while (f.size() < 6) f.emplace_back();
    TraceRecord r;
    r.step = std::nan("");  // not part of the file format
    try {
      if (f[0] == "process") {
        r.event = TraceRecord::Event::process;
      } else if (f[0] == "update") {
        r.event = TraceRecord::Event::update;
        r.user = std::stoll(f[4]);
        r.update_count = static_cast<std::uint32_t>(std::stoul(f[5]));
      } else {
        throw FormatError("unknown event");
      }
      r.worker = std::stoi(f[1]);
      r.item = static_cast<std::uint32_t>(std::stoul(f[2]));
      r.version = std::stoull(f[3]);
    } catch (const std::exception&) {
      throw FormatError("trace line " + std::to_string(line_no) + ": malformed record");
    }
    trace.push_back(r);
  }
  return trace;
}

AuditReport audit_trace(std::span<const TraceRecord> trace, const Partition& partition,
                        const HyperParams& params, std::size_t n_items) {
  AuditReport report;
  std::vector<std::vector<std::uint64_t>> versions(n_items);
  std::unordered_map<std::uint64_t, std::uint32_t> last_count;
  for (const auto& r : trace) {
    if (r.item >= n_items) {
      ++report.version_gaps;
      continue;
    }
    if (r.event == TraceRecord::Event::process) {
      ++report.processing_events;
      versions[r.item].push_back(r.version);
      continue;
    }
    ++report.updates;
    const auto user = static_cast<std::uint64_t>(r.user);
    if (r.user < 0 || user >= partition.assignment.size() ||
        partition.assignment[user] != r.worker)
      ++report.ownership_violations;
    if (r.update_count == 0 ||
        (!std::isnan(r.step) && r.step != step_size(params, r.update_count - 1)))
      ++report.step_mismatches;
    auto& last = last_count[(user << 32) | r.item];
    if (r.update_count != last + 1) ++report.count_gaps;
    last = r.update_count;
  }
  for (auto& v : versions) {
    std::sort(v.begin(), v.end());
    for (std::size_t x = 0; x < v.size(); ++x) {
      if (v[x] != x + 1) {
        ++report.version_gaps;
        break;
      }
    }
  }
  return report;
}

std::size_t audit_circulation(std::span<const TraceRecord> trace, int threads_per_machine) {
  if (threads_per_machine < 1) throw Error("threads_per_machine must be >= 1");
  std::map<std::uint64_t, std::vector<int>> visits;
  for (const auto& r : trace)
    if (r.event == TraceRecord::Event::process && r.visit != 0) visits[r.visit].push_back(r.worker);
  std::size_t bad = 0;
  for (auto& [id, workers] : visits) {
    std::sort(workers.begin(), workers.end());
    const bool repeat = std::adjacent_find(workers.begin(), workers.end()) != workers.end();
    const bool split = workers.front() / threads_per_machine != workers.back() / threads_per_machine;
    if (repeat || split) ++bad;
  }
  return bad;
}

}  // namespace nomad

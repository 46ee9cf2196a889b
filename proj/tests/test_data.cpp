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
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "doctest.h"
#include "helpers.hpp"
#include "nomad/baselines.hpp"
#include "nomad/data.hpp"
#include "nomad/eval.hpp"

using namespace nomad;
namespace fs = std::filesystem;

namespace {

fs::path temp_path(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "nomad_mf_tests";
  fs::create_directories(dir);
  return dir / name;
}

std::multiset<std::tuple<std::uint32_t, std::uint32_t, double>> as_set(
    const std::vector<RatingEntry>& entries) {
  std::multiset<std::tuple<std::uint32_t, std::uint32_t, double>> s;
  for (const auto& e : entries) s.insert({e.user, e.item, e.value});
  return s;
}

}  // namespace

TEST_SUITE("data") {

TEST_CASE("parse_text shifts one-based indices") {
  std::istringstream in("1 1 5.0\n");
  const auto ds = parse_text(in, 1);
  REQUIRE(ds.entries.size() == 1);
  CHECK(ds.entries[0] == RatingEntry{0, 0, 5.0, 0});
  CHECK(ds.meta.m == 1);
  CHECK(ds.meta.n == 1);
  CHECK(ds.meta.nnz == 1);
}

TEST_CASE("parse_text accepts mixed delimiters and comments") {
  std::istringstream in("# header\n\n0,2,1.5\n1\t0\t-2\n3::1::4e-1\n  2 2 7  \n");
  const auto ds = parse_text(in, 0);
  CHECK(ds.entries.size() == 4);
  CHECK(ds.meta.m == 4);
  CHECK(ds.meta.n == 3);
  CHECK(ds.entries[2] == RatingEntry{3, 1, 0.4, 0});
}

TEST_CASE("parse_text rejects duplicates naming the line") {
  std::istringstream in("1 1 2.0\n2 3 1.0\n2 3 1.0\n");
  try {
    parse_text(in, 1);
    FAIL("expected an error");
  } catch (const FormatError& e) {
    const std::string what = e.what();
    CHECK(what.find("line 3") != std::string::npos);
    CHECK(what.find("line 2") != std::string::npos);
  }
}

TEST_CASE("parse_text error contract") {
  std::istringstream bad("1 1\n");
  CHECK_THROWS_WITH_AS(parse_text(bad, 1), doctest::Contains("line 1"), FormatError);
  std::istringstream under("0 1 3\n");
  CHECK_THROWS_AS(parse_text(under, 1), FormatError);
  std::istringstream junk("1 x 3\n");
  CHECK_THROWS_AS(parse_text(junk, 1), FormatError);
  std::istringstream nan("1 1 nan\n");
  CHECK_THROWS_AS(parse_text(nan, 1), FormatError);
}

TEST_CASE("meta header with the Netflix shape is echoed") {
  std::istringstream in("%%meta 2649429 17770 99072112\n");
  const auto ds = parse_text(in, 1, "netflix");
  CHECK(ds.meta.m == 2649429);
  CHECK(ds.meta.n == 17770);
  CHECK(ds.meta.nnz == 99072112);
  CHECK(ds.meta.name == "netflix");
  std::istringstream over("%%meta 2 2 1\n3 1 1.0\n");
  CHECK_THROWS_AS(parse_text(over, 1), FormatError);
}

TEST_CASE("binary codec round-trips random datasets") {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t m = 1 + rng() % 30, n = 1 + rng() % 30;
    Dataset ds;
    ds.meta.m = m;
    ds.meta.n = n;
    ds.entries = trial % 50 == 0 ? std::vector<RatingEntry>{}
                                 : test::random_entries(m, n, 0.2, rng());
    ds.meta.nnz = ds.entries.size();
    const auto back = decode_dataset(encode_dataset(ds));
    CHECK(back.meta.m == m);
    CHECK(back.meta.n == n);
    CHECK(back.meta.nnz == ds.entries.size());
    CHECK(back.entries == ds.entries);
  }
}

TEST_CASE("binary layout is bit exact") {
  Dataset ds;
  ds.meta = {"", 2, 3, 1, ""};
  ds.entries = {{1, 2, 0.5, 0}};
  const auto bytes = encode_dataset(ds);
  REQUIRE(bytes.size() == 4 + 4 + 24 + 16);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "NMDB");
  CHECK(bytes[4] == 1);
  CHECK(bytes[8] == 2);
  CHECK(bytes[16] == 3);
  CHECK(bytes[24] == 1);
  CHECK(bytes[32] == 1);
  CHECK(bytes[36] == 2);
  double v;
  std::memcpy(&v, bytes.data() + 40, 8);
  CHECK(v == 0.5);
}

TEST_CASE("binary decoder rejects damage") {
  Dataset ds;
  ds.meta = {"", 3, 3, 2, ""};
  ds.entries = {{0, 1, 1.0, 0}, {2, 2, 2.0, 0}};
  auto bytes = encode_dataset(ds);
  for (std::size_t cut = 0; cut < bytes.size(); ++cut) {
    std::vector<std::uint8_t> part(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(cut));
    CHECK_THROWS_AS(decode_dataset(part), Error);
  }
  auto magic = bytes;
  magic[0] = 'X';
  CHECK_THROWS_AS(decode_dataset(magic), FormatError);
  auto version = bytes;
  version[4] = 2;
  CHECK_THROWS_AS(decode_dataset(version), FormatError);
  auto extra = bytes;
  extra.push_back(0);
  CHECK_THROWS_AS(decode_dataset(extra), FormatError);
  auto range = bytes;
  range[32] = 9;  // user 9 >= m
  CHECK_THROWS_AS(decode_dataset(range), FormatError);
}

TEST_CASE("text -> binary -> shard preserves the entry multiset") {
  const auto entries = test::random_entries(17, 12, 0.3, 3);
  Dataset ds;
  ds.meta = {"r", 17, 12, entries.size(), "text"};
  ds.entries = entries;
  const auto txt = temp_path("roundtrip.txt");
  const auto bin = temp_path("roundtrip.bin");
  write_text(ds, txt, 1);
  auto parsed = read_text(txt, 1);
  write_binary(parsed, bin);
  auto back = load_dataset(bin);
  CHECK(back.meta.m == 17);
  CHECK(back.meta.n == 12);
  auto sharded = shard(back.entries, back.meta.m, back.meta.n, 3);
  std::vector<RatingEntry> flat;
  for (const auto& s : sharded.shards) flat.insert(flat.end(), s.entries.begin(), s.entries.end());
  CHECK(as_set(flat) == as_set(entries));
}

TEST_CASE("split_train_test") {
  SUBCASE("fraction zero") {
    auto s = split_train_test(test::random_entries(10, 10, 0.5, 1), 0.0, 1);
    CHECK(s.test.empty());
  }
  SUBCASE("size concentration and partition") {
    auto entries = test::random_entries(400, 250, 1.0, 2);
    REQUIRE(entries.size() == 100000);
    auto s = split_train_test(entries, 0.2, 9);
    CHECK(std::abs(static_cast<double>(s.test.size()) - 20000.0) <= 200.0);
    auto joined = s.train;
    joined.insert(joined.end(), s.test.begin(), s.test.end());
    CHECK(as_set(joined) == as_set(entries));
  }
  SUBCASE("no orphaned users or items") {
    auto entries = test::random_entries(300, 100, 0.03, 5);
    auto s = split_train_test(entries, 0.5, 4);
    std::map<std::uint32_t, int> du, di, tu, ti;
    for (const auto& e : entries) ++du[e.user], ++di[e.item];
    for (const auto& e : s.train) ++tu[e.user], ++ti[e.item];
    for (auto [u, d] : du)
      if (d >= 2) CHECK(tu[u] >= 1);
    for (auto [i, d] : di)
      if (d >= 2) CHECK(ti[i] >= 1);
  }
  SUBCASE("deterministic per seed") {
    auto entries = test::random_entries(50, 40, 0.2, 6);
    CHECK(split_train_test(entries, 0.3, 1).test == split_train_test(entries, 0.3, 1).test);
    CHECK(split_train_test(entries, 0.3, 1).test != split_train_test(entries, 0.3, 2).test);
  }
  SUBCASE("bad fraction") {
    CHECK_THROWS_AS(split_train_test({}, 1.0, 1), Error);
    CHECK_THROWS_AS(split_train_test({}, -0.1, 1), Error);
  }
}

TEST_CASE("synthetic generator is deterministic and well formed") {
  SyntheticSpec spec;
  spec.n_users = 300;
  spec.n_items = 80;
  spec.target_nnz = 6000;
  spec.seed = 5;
  const auto a = generate_synthetic(spec);
  const auto b = generate_synthetic(spec);
  CHECK(a.dataset.entries == b.dataset.entries);
  CHECK(a.W_true == b.W_true);
  CHECK(a.dataset.meta.m == 300);
  CHECK(a.dataset.meta.n == 80);
  CHECK(a.dataset.meta.nnz == a.dataset.entries.size());
  CHECK(std::abs(static_cast<double>(a.dataset.entries.size()) - 6000.0) <= 600.0);
  std::set<std::pair<std::uint32_t, std::uint32_t>> pairs;
  for (const auto& e : a.dataset.entries) pairs.insert({e.user, e.item});
  CHECK(pairs.size() == a.dataset.entries.size());
  spec.seed = 6;
  CHECK(generate_synthetic(spec).dataset.entries != a.dataset.entries);
}

TEST_CASE("noiseless synthetic data is exactly low rank") {
  SyntheticSpec spec;
  spec.n_users = 60;
  spec.n_items = 30;
  spec.k_true = 2;
  spec.noise_sd = 0.0;
  spec.target_nnz = 900;
  spec.seed = 3;
  const auto syn = generate_synthetic(spec);
  for (const auto& e : syn.dataset.entries)
    CHECK(e.value == doctest::Approx(predict(syn.W_true.row(e.user), syn.H_true.row(e.item))).epsilon(1e-12));
  auto data = shard(syn.dataset.entries, 60, 30, 1);
  HyperParams hp;
  hp.k = 2;
  hp.lambda = 0.0;
  const auto r = run_als(data, hp, 200, 1);
  CHECK(r.log.back().train_objective < 1e-6);
}

TEST_CASE("synthetic ratings follow the planted model") {
  SyntheticSpec spec;
  spec.seed = 11;
  const auto syn = generate_synthetic(spec);
  const auto& entries = syn.dataset.entries;
  double sum_noise = 0.0, sum_sq = 0.0;
  for (const auto& e : entries) {
    const double r = e.value - predict(syn.W_true.row(e.user), syn.H_true.row(e.item));
    sum_noise += r;
    sum_sq += r * r;
  }
  const double nn = static_cast<double>(entries.size());
  const double mean = sum_noise / nn;
  const double sd = std::sqrt(sum_sq / nn - mean * mean);
  CHECK(std::abs(mean) <= 3.0 * 0.1 / std::sqrt(nn));
  CHECK(sd == doctest::Approx(0.1).epsilon(0.02));
  CHECK(std::sqrt(sum_sq / nn) == doctest::Approx(0.1).epsilon(0.02));
}

TEST_CASE("degree histogram model is honoured") {
  const auto upath = temp_path("udeg.txt");
  const auto ipath = temp_path("ideg.txt");
  {
    std::ofstream out(upath);
    out << "# degree count\n5 40\n10 40\n20 20\n";
    std::ofstream items(ipath);
    items << "60 1\n";
  }
  CHECK(read_degree_histogram(upath).size() == 3);
  SyntheticSpec spec;
  spec.n_users = 2000;
  spec.n_items = 500;
  spec.user_degree_file = upath;
  spec.item_degree_file = ipath;
  spec.seed = 2;
  const auto syn = generate_synthetic(spec);
  std::vector<std::size_t> deg(spec.n_users, 0);
  for (const auto& e : syn.dataset.entries) ++deg[e.user];
  std::map<std::size_t, double> freq;
  for (auto d : deg) freq[d] += 1.0 / static_cast<double>(spec.n_users);
  // Three-bucket chi-square against the requested proportions.
  const std::map<std::size_t, double> want{{5, 0.4}, {10, 0.4}, {20, 0.2}};
  double chi2 = 0.0, covered = 0.0;
  for (auto [d, p] : want) {
    const double o = freq[d] * static_cast<double>(spec.n_users), x = p * static_cast<double>(spec.n_users);
    chi2 += (o - x) * (o - x) / x;
    covered += freq[d];
  }
  CHECK(covered >= 0.99);
  CHECK(chi2 < 13.8);  // 0.1% quantile, 2 degrees of freedom
}

TEST_CASE("power-law degrees are skewed") {
  SyntheticSpec spec;
  spec.seed = 4;
  const auto syn = generate_synthetic(spec);
  std::vector<std::size_t> deg(spec.n_users, 0);
  for (const auto& e : syn.dataset.entries) ++deg[e.user];
  std::sort(deg.begin(), deg.end());
  const double median = static_cast<double>(deg[deg.size() / 2]);
  CHECK(static_cast<double>(deg.back()) > 4.0 * median);
  CHECK(deg.front() >= spec.min_user_degree);
}

TEST_CASE("synthetic spec validation") {
  SyntheticSpec spec;
  spec.noise_sd = -1;
  CHECK_THROWS_AS(generate_synthetic(spec), Error);
  spec = SyntheticSpec{};
  spec.n_users = 0;
  CHECK_THROWS_AS(generate_synthetic(spec), Error);
  spec = SyntheticSpec{};
  spec.n_users = 3;
  spec.n_items = 3;
  spec.target_nnz = 100;
  CHECK_THROWS_AS(generate_synthetic(spec), Error);
}

TEST_CASE("shard rejects a mismatched partition") {
  auto entries = test::random_entries(10, 5, 0.5, 1);
  CHECK_THROWS_AS(shard(entries, 10, 5, partition_rows(9, 2)), Error);
}

TEST_CASE("model file round-trip") {
  auto W = test::random_factors(7, 3, 1);
  auto H = test::random_factors(4, 3, 2);
  const auto path = temp_path("m.model");
  write_model(W, H, path);
  const auto [W2, H2] = read_model(path);
  CHECK(W2 == W);
  CHECK(H2 == H);
}

}

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

#include "nomad/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "nomad/bytes.hpp"
#include "nomad/random.hpp"

namespace nomad {

namespace {

constexpr char kDatasetMagic[4] = {'N', 'M', 'D', 'B'};
constexpr char kModelMagic[4] = {'N', 'M', 'D', 'M'};
constexpr std::uint32_t kFormatVersion = 1;

std::uint64_t pair_key(std::uint64_t i, std::uint64_t j) { return (i << 32) | j; }

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_fields(std::string line) {
  for (std::size_t pos = line.find("::"); pos != std::string::npos; pos = line.find("::"))
    line.replace(pos, 2, " ");
  std::replace(line.begin(), line.end(), ',', ' ');
  std::replace(line.begin(), line.end(), '\t', ' ');
  std::istringstream ss(line);
  return {std::istream_iterator<std::string>(ss), std::istream_iterator<std::string>()};
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("write failed for " + path.string());
}

void check_magic(ByteReader& r, const char (&magic)[4], const std::string& what) {
  for (char c : magic)
    if (r.u8() != static_cast<std::uint8_t>(c)) throw FormatError("bad magic in " + what);
  const auto version = r.u32();
  if (version != kFormatVersion)
    throw FormatError("unsupported " + what + " version " + std::to_string(version));
}

}  // namespace

Dataset parse_text(std::istream& in, int index_base, const std::string& name) {
  if (index_base != 0 && index_base != 1) throw Error("index base must be 0 or 1");
  Dataset ds;
  ds.meta.name = name;
  ds.meta.source_format = "text";
  std::optional<std::array<std::uint64_t, 3>> declared;
  std::unordered_map<std::uint64_t, std::size_t> seen;
  std::uint64_t max_user = 0, max_item = 0;

  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty()) continue;
    if (t.rfind("%%meta", 0) == 0) {
      std::istringstream ss(t.substr(6));
      std::array<std::uint64_t, 3> v{};
      if (!(ss >> v[0] >> v[1] >> v[2]))
        throw FormatError("line " + std::to_string(line_no) + ": malformed %%meta header");
      declared = v;
      continue;
    }
    if (t[0] == '#' || t[0] == '%') continue;

    const auto f = split_fields(t);
    if (f.size() < 3)
      throw FormatError("line " + std::to_string(line_no) + ": expected 'user item rating'");
    long long user = 0, item = 0;
    double value = 0.0;
    try {
      std::size_t used = 0;
      user = std::stoll(f[0], &used);
      if (used != f[0].size()) throw std::invalid_argument("user");
      item = std::stoll(f[1], &used);
      if (used != f[1].size()) throw std::invalid_argument("item");
      value = std::stod(f[2], &used);
      if (used != f[2].size()) throw std::invalid_argument("rating");
    } catch (const std::exception&) {
      throw FormatError("line " + std::to_string(line_no) + ": cannot parse '" + t + "'");
    }
    if (!std::isfinite(value))
      throw FormatError("line " + std::to_string(line_no) + ": non-finite rating");
    user -= index_base;
    item -= index_base;
    if (user < 0 || item < 0)
      throw FormatError("line " + std::to_string(line_no) + ": index below base " +
                        std::to_string(index_base));
    if (user > 0xffffffffLL || item > 0xffffffffLL)
      throw FormatError("line " + std::to_string(line_no) + ": index exceeds 32 bits");
    const auto key = pair_key(static_cast<std::uint64_t>(user), static_cast<std::uint64_t>(item));
    const auto [it, inserted] = seen.emplace(key, line_no);
    if (!inserted)
      throw FormatError("line " + std::to_string(line_no) + ": duplicate rating for (" +
                        f[0] + ", " + f[1] + "), first seen on line " +
                        std::to_string(it->second));
    ds.entries.push_back({static_cast<std::uint32_t>(user), static_cast<std::uint32_t>(item),
                          value, 0});
    max_user = std::max<std::uint64_t>(max_user, static_cast<std::uint64_t>(user) + 1);
    max_item = std::max<std::uint64_t>(max_item, static_cast<std::uint64_t>(item) + 1);
  }

  if (declared) {
    const auto [m, n, nnz] = *declared;
    if (max_user > m || max_item > n)
      throw FormatError("ratings exceed declared shape " + std::to_string(m) + " x " +
                        std::to_string(n));
    if (!ds.entries.empty() && nnz != ds.entries.size())
      throw FormatError("declared nnz " + std::to_string(nnz) + " but read " +
                        std::to_string(ds.entries.size()));
    ds.meta.m = m;
    ds.meta.n = n;
    ds.meta.nnz = ds.entries.empty() ? nnz : ds.entries.size();
  } else {
    ds.meta.m = max_user;
    ds.meta.n = max_item;
    ds.meta.nnz = ds.entries.size();
  }
  return ds;
}

Dataset read_text(const std::filesystem::path& path, int index_base) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  return parse_text(in, index_base, path.stem().string());
}

void write_text(const Dataset& data, const std::filesystem::path& path, int index_base) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out << "%%meta " << data.meta.m << ' ' << data.meta.n << ' ' << data.entries.size() << '\n';
  out.precision(17);
  for (const auto& e : data.entries)
    out << e.user + static_cast<std::uint32_t>(index_base) << ' '
        << e.item + static_cast<std::uint32_t>(index_base) << ' ' << e.value << '\n';
  if (!out) throw FormatError("write failed for " + path.string());
}

std::vector<std::uint8_t> encode_dataset(const Dataset& data) {
  std::vector<std::uint8_t> bytes;
  bytes.reserve(32 + data.entries.size() * 16);
  ByteWriter w(bytes);
  for (char c : kDatasetMagic) w.u8(static_cast<std::uint8_t>(c));
  w.u32(kFormatVersion);
  w.u64(data.meta.m);
  w.u64(data.meta.n);
  w.u64(data.entries.size());
  for (const auto& e : data.entries) {
    w.u32(e.user);
    w.u32(e.item);
    w.f64(e.value);
  }
  return bytes;
}

Dataset decode_dataset(const std::vector<std::uint8_t>& bytes) {
  ByteReader r(bytes);
  Dataset ds;
  check_magic(r, kDatasetMagic, "dataset");
  ds.meta.m = r.u64();
  ds.meta.n = r.u64();
  ds.meta.nnz = r.u64();
  ds.meta.source_format = "binary";
  if (ds.meta.nnz > r.remaining() / 16)
    throw TruncatedError("dataset declares " + std::to_string(ds.meta.nnz) +
                         " ratings but only " + std::to_string(r.remaining()) +
                         " bytes follow");
  ds.entries.resize(ds.meta.nnz);
  for (auto& e : ds.entries) {
    e.user = r.u32();
    e.item = r.u32();
    e.value = r.f64();
    if (e.user >= ds.meta.m || e.item >= ds.meta.n)
      throw FormatError("rating index outside declared shape");
  }
  if (!r.done())
    throw FormatError("nnz mismatch: " + std::to_string(r.remaining()) +
                      " trailing bytes after " + std::to_string(ds.meta.nnz) + " ratings");
  return ds;
}

void write_binary(const Dataset& data, const std::filesystem::path& path) {
  write_file(path, encode_dataset(data));
}

Dataset read_binary(const std::filesystem::path& path) {
  auto ds = decode_dataset(read_file(path));
  ds.meta.name = path.stem().string();
  return ds;
}

Dataset load_dataset(const std::filesystem::path& path, int index_base) {
  if (path.extension() == ".bin") return read_binary(path);
  return read_text(path, index_base);
}

TrainTestSplit split_train_test(std::vector<RatingEntry> entries, double test_fraction,
                                std::uint64_t seed) {
  if (!(test_fraction >= 0.0 && test_fraction < 1.0))
    throw Error("test fraction must lie in [0, 1)");
  Rng rng = make_rng(seed, 0x5b11);
  std::shuffle(entries.begin(), entries.end(), rng);
  const auto n_test = static_cast<std::size_t>(
      std::llround(test_fraction * static_cast<double>(entries.size())));

  std::uint32_t max_user = 0, max_item = 0;
  for (const auto& e : entries) {
    max_user = std::max(max_user, e.user + 1);
    max_item = std::max(max_item, e.item + 1);
  }
  std::vector<std::size_t> user_train(max_user, 0), item_train(max_item, 0);
  std::vector<char> in_test(entries.size(), 0);
  for (std::size_t x = 0; x < entries.size(); ++x) {
    if (x < n_test) {
      in_test[x] = 1;
    } else {
      ++user_train[entries[x].user];
      ++item_train[entries[x].item];
    }
  }

  // Rescue test entries whose user or item has nothing left in train, swapping
  // in a train entry that can be spared on both axes.
  std::size_t donor = n_test;
  for (std::size_t x = 0; x < n_test; ++x) {
    const auto& e = entries[x];
    if (user_train[e.user] > 0 && item_train[e.item] > 0) continue;
    while (donor < entries.size()) {
      const auto& d = entries[donor];
      if (!in_test[donor] && user_train[d.user] >= 2 && item_train[d.item] >= 2 &&
          d.user != e.user && d.item != e.item)
        break;
      ++donor;
    }
    if (donor == entries.size()) break;
    in_test[x] = 0;
    ++user_train[e.user];
    ++item_train[e.item];
    in_test[donor] = 1;
    --user_train[entries[donor].user];
    --item_train[entries[donor].item];
    ++donor;
  }

  TrainTestSplit out;
  out.test.reserve(n_test);
  out.train.reserve(entries.size() - n_test);
  for (std::size_t x = 0; x < entries.size(); ++x)
    (in_test[x] ? out.test : out.train).push_back(entries[x]);
  auto by_user_item = [](const RatingEntry& a, const RatingEntry& b) {
    return a.user != b.user ? a.user < b.user : a.item < b.item;
  };
  std::sort(out.train.begin(), out.train.end(), by_user_item);
  std::sort(out.test.begin(), out.test.end(), by_user_item);
  return out;
}

void SyntheticSpec::validate() const {
  if (n_users < 1 || n_items < 1) throw Error("synthetic spec needs at least one user and item");
  if (k_true < 1) throw Error("synthetic rank must be >= 1");
  if (!(noise_sd >= 0.0)) throw Error("noise standard deviation must be >= 0");
  if (min_user_degree > n_items || min_item_degree > n_users)
    throw Error("minimum degree exceeds the opposite dimension");
  if (!user_degree_file && target_nnz > n_users * n_items)
    throw Error("target nnz " + std::to_string(target_nnz) + " exceeds " +
                std::to_string(n_users) + " x " + std::to_string(n_items) + " cells");
  if (!(power_law.exponent > 1.0)) throw Error("power-law exponent must exceed 1");
}

std::vector<std::pair<std::size_t, std::size_t>> read_degree_histogram(
    const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  std::vector<std::pair<std::size_t, std::size_t>> hist;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    std::istringstream ss(t);
    std::size_t degree = 0, count = 0;
    if (!(ss >> degree >> count))
      throw FormatError(path.string() + ":" + std::to_string(line_no) +
                        ": expected 'degree count'");
    if (count > 0) hist.emplace_back(degree, count);
  }
  if (hist.empty()) throw FormatError(path.string() + ": empty degree histogram");
  return hist;
}

namespace {

std::vector<std::size_t> sample_from_histogram(
    const std::vector<std::pair<std::size_t, std::size_t>>& hist, std::size_t count,
    std::size_t lo, std::size_t hi, Rng& rng) {
  std::vector<double> weights;
  for (const auto& [d, c] : hist) weights.push_back(static_cast<double>(c));
  std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());
  std::vector<std::size_t> deg(count);
  for (auto& d : deg) d = std::clamp(hist[pick(rng)].first, lo, hi);
  return deg;
}

std::vector<std::size_t> sample_power_law(std::size_t count, std::size_t target_total,
                                          double exponent, std::size_t lo,
                                          std::size_t hi, Rng& rng) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<double> weight(count);
  for (auto& x : weight) x = std::pow(1.0 - unif(rng), -1.0 / exponent);
  const double total = std::accumulate(weight.begin(), weight.end(), 0.0);
  std::vector<std::size_t> deg(count);
  for (std::size_t i = 0; i < count; ++i) {
    const double d = std::round(static_cast<double>(target_total) * weight[i] / total);
    deg[i] = std::clamp(static_cast<std::size_t>(d), lo, hi);
  }
  return deg;
}

/// Lowers randomly chosen degrees (never below `lo`) until they sum to `total`.
void trim_to(std::vector<std::size_t>& deg, std::size_t total, std::size_t lo, Rng& rng) {
  std::size_t sum = std::accumulate(deg.begin(), deg.end(), std::size_t{0});
  std::uniform_int_distribution<std::size_t> pick(0, deg.size() - 1);
  std::size_t spare = 0;
  for (auto d : deg) spare += d > lo ? d - lo : 0;
  if (sum - total > spare) throw Error("infeasible degree sequence: cannot trim to match");
  while (sum > total) {
    auto& d = deg[pick(rng)];
    if (d > lo) {
      --d;
      --sum;
    }
  }
}

}  // namespace

SyntheticData generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng = make_rng(spec.seed, 0xda7a);

  const std::size_t m = spec.n_users, n = spec.n_items;
  std::vector<std::size_t> udeg, ideg;
  if (spec.user_degree_file)
    udeg = sample_from_histogram(read_degree_histogram(*spec.user_degree_file), m,
                                 spec.min_user_degree, n, rng);
  else
    udeg = sample_power_law(m, spec.target_nnz, spec.power_law.exponent,
                            spec.min_user_degree, n, rng);
  if (spec.item_degree_file)
    ideg = sample_from_histogram(read_degree_histogram(*spec.item_degree_file), n,
                                 spec.min_item_degree, m, rng);
  else
    ideg = sample_power_law(n, spec.target_nnz, spec.power_law.exponent,
                            spec.min_item_degree, m, rng);

  const std::size_t usum = std::accumulate(udeg.begin(), udeg.end(), std::size_t{0});
  const std::size_t isum = std::accumulate(ideg.begin(), ideg.end(), std::size_t{0});
  if (usum > isum)
    trim_to(udeg, isum, spec.min_user_degree, rng);
  else if (isum > usum)
    trim_to(ideg, usum, spec.min_item_degree, rng);

  // Configuration-model pairing of user stubs with shuffled item stubs;
  // duplicate cells are re-paired for a few rounds and then dropped.
  std::vector<std::uint32_t> ustubs, istubs;
  for (std::size_t i = 0; i < m; ++i) ustubs.insert(ustubs.end(), udeg[i], static_cast<std::uint32_t>(i));
  for (std::size_t j = 0; j < n; ++j) istubs.insert(istubs.end(), ideg[j], static_cast<std::uint32_t>(j));
  std::unordered_set<std::uint64_t> cells;
  cells.reserve(ustubs.size() * 2);
  std::vector<RatingEntry> entries;
  entries.reserve(ustubs.size());
  for (int round = 0; round < 50 && !ustubs.empty(); ++round) {
    std::shuffle(istubs.begin(), istubs.end(), rng);
    std::vector<std::uint32_t> ufail, ifail;
    for (std::size_t s = 0; s < ustubs.size(); ++s) {
      if (cells.insert(pair_key(ustubs[s], istubs[s])).second) {
        entries.push_back({ustubs[s], istubs[s], 0.0, 0});
      } else {
        ufail.push_back(ustubs[s]);
        ifail.push_back(istubs[s]);
      }
    }
    ustubs.swap(ufail);
    istubs.swap(ifail);
  }
  std::sort(entries.begin(), entries.end(), [](const RatingEntry& a, const RatingEntry& b) {
    return a.user != b.user ? a.user < b.user : a.item < b.item;
  });

  SyntheticData out{{}, FactorMatrix(m, spec.k_true), FactorMatrix(n, spec.k_true)};
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (auto& x : out.W_true.data()) x = static_cast<Real>(gauss(rng));
  for (auto& x : out.H_true.data()) x = static_cast<Real>(gauss(rng));
  std::normal_distribution<double> noise(0.0, spec.noise_sd > 0 ? spec.noise_sd : 1.0);
  for (auto& e : entries) {
    double v = 0.0;
    for (int l = 0; l < spec.k_true; ++l)
      v += static_cast<double>(out.W_true(e.user, l)) * static_cast<double>(out.H_true(e.item, l));
    e.value = v + (spec.noise_sd > 0 ? noise(rng) : 0.0);
  }
  out.dataset.meta = {"synthetic", m, n, entries.size(), "synthetic"};
  out.dataset.entries = std::move(entries);
  return out;
}

ShardedRatings shard(const std::vector<RatingEntry>& entries, std::size_t m, std::size_t n,
                     const Partition& partition) {
  if (partition.assignment.size() != m)
    throw DimensionError("partition covers " + std::to_string(partition.assignment.size()) +
                         " rows but data has " + std::to_string(m));
  ShardedRatings out;
  out.m = m;
  out.n = n;
  out.partition = partition;
  out.index = RatingIndex::build(m, n, entries);
  out.shards.resize(static_cast<std::size_t>(partition.p));
  for (auto& s : out.shards) s.item_ptr.assign(n + 1, 0);
  for (const auto& e : entries) {
    auto& s = out.shards[static_cast<std::size_t>(partition.assignment[e.user])];
    ++s.item_ptr[e.item + 1];
  }
  for (auto& s : out.shards) {
    std::partial_sum(s.item_ptr.begin(), s.item_ptr.end(), s.item_ptr.begin());
    s.entries.resize(s.item_ptr[n]);
  }
  // Walk the item-major view of the index so each slice comes out sorted by user.
  std::vector<std::vector<std::size_t>> fill(out.shards.size());
  for (std::size_t q = 0; q < out.shards.size(); ++q)
    fill[q].assign(out.shards[q].item_ptr.begin(), out.shards[q].item_ptr.end() - 1);
  const auto& idx = out.index;
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t c = idx.col_ptr[j]; c < idx.col_ptr[j + 1]; ++c) {
      const auto user = idx.col_user[c];
      const auto q = static_cast<std::size_t>(partition.assignment[user]);
      out.shards[q].entries[fill[q][j]++] = {user, static_cast<std::uint32_t>(j),
                                             idx.col_value[c], 0};
    }
  }
  return out;
}

ShardedRatings shard(const std::vector<RatingEntry>& entries, std::size_t m, std::size_t n,
                     int p, PartitionStrategy strategy) {
  std::vector<std::size_t> degrees(m, 0);
  for (const auto& e : entries)
    if (e.user < m) ++degrees[e.user];
  return shard(entries, m, n, partition_rows(m, p, strategy, degrees));
}

void write_model(const FactorMatrix& W, const FactorMatrix& H,
                 const std::filesystem::path& path) {
  if (W.k() != H.k()) throw DimensionError("W and H disagree on k");
  std::vector<std::uint8_t> bytes;
  ByteWriter w(bytes);
  for (char c : kModelMagic) w.u8(static_cast<std::uint8_t>(c));
  w.u32(kFormatVersion);
  w.u64(W.rows());
  w.u64(H.rows());
  w.u64(static_cast<std::uint64_t>(W.k()));
  for (Real x : W.data()) w.f64(x);
  for (Real x : H.data()) w.f64(x);
  write_file(path, bytes);
}

std::pair<FactorMatrix, FactorMatrix> read_model(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  ByteReader r(bytes);
  check_magic(r, kModelMagic, "model");
  const auto m = r.u64(), n = r.u64(), k = r.u64();
  if (k == 0 || k > 1u << 20 || (m + n) * k * 8 != r.remaining())
    throw FormatError("model payload does not match its header");
  FactorMatrix W(m, static_cast<int>(k)), H(n, static_cast<int>(k));
  for (auto& x : W.data()) x = static_cast<Real>(r.f64());
  for (auto& x : H.data()) x = static_cast<Real>(r.f64());
  return {std::move(W), std::move(H)};
}

}  // namespace nomad

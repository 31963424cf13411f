#pragma once

/// File formats and dataset plumbing. Everything here is plain text and
/// bit-exact:
///
///  - COO tensors: a required header line `dims m1 m2 ... mk`, then one
///    `i1 i2 ... ik value` entry per line (1-based, whitespace-separated).
///    Lines starting with `#` are comments. Values are written with 17
///    significant digits, so write-then-read round-trips doubles bitwise.
///  - Factor matrices: header `factors k R`, a `dims ...` line, then the
///    factors in order, one row per line.
///  - Iteration history CSV: t,objective,train_rmse,test_rmse,grad_norm,
///    stepsize,seconds (test_rmse empty when no test set was given).
///  - Manifest/summary JSON for generated instances and finished runs.
///
/// Plus the ratings-file ingester (UserID::MovieID::Rating::Timestamp, `::`
/// separated), the seeded train/test splitter, and the Gaussian factor
/// initializer.

#include "cptc/optim.hpp"
#include "cptc/synth.hpp"
#include "cptc/tensor_core.hpp"

#include "json.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace cptc {

namespace detail {

inline std::string g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  return out;
}

inline std::ifstream open_in(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open for reading: " + path);
  return in;
}

inline std::runtime_error parse_error(const std::string& path, std::int64_t line,
                                      const std::string& what) {
  return std::runtime_error(path + ":" + std::to_string(line) + ": " + what);
}

/// Whitespace-splits a line into tokens.
inline std::vector<std::string_view> tokens(std::string_view sv) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < sv.size()) {
    while (i < sv.size() && (sv[i] == ' ' || sv[i] == '\t' || sv[i] == '\r')) ++i;
    std::size_t j = i;
    while (j < sv.size() && sv[j] != ' ' && sv[j] != '\t' && sv[j] != '\r') ++j;
    if (j > i) out.push_back(sv.substr(i, j - i));
    i = j;
  }
  return out;
}

template <class T>
inline bool parse_number(std::string_view sv, T& out) {
  const char* first = sv.data();
  const char* last = sv.data() + sv.size();
  auto [p, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && p == last;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// COO tensors
// ---------------------------------------------------------------------------

inline void write_coo(const std::string& path, const ObservedTensor& data) {
  std::ofstream out = detail::open_out(path);
  out << "dims";
  for (int m : data.dims().sizes()) out << ' ' << m;
  out << '\n';
  const int k = data.order();
  std::string line;
  for (std::int64_t p = 0; p < data.nnz(); ++p) {
    line.clear();
    const auto idx = data.index0(p);
    for (int j = 0; j < k; ++j) {
      line += std::to_string(idx[j] + 1);
      line += ' ';
    }
    line += detail::g17(data.value(p));
    line += '\n';
    out << line;
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

inline ObservedTensor read_coo(const std::string& path) {
  std::ifstream in = detail::open_in(path);
  std::string line;
  std::int64_t lineno = 0;
  std::optional<Dims> dims;
  std::vector<std::int32_t> idx;
  std::vector<double> val;
  while (std::getline(in, line)) {
    ++lineno;
    const auto t = detail::tokens(line);
    if (t.empty() || t[0][0] == '#') continue;
    if (!dims) {
      if (t[0] != "dims" || t.size() < 3)
        throw detail::parse_error(path, lineno, "expected header line 'dims m1 m2 ...'");
      std::vector<int> sizes;
      for (std::size_t j = 1; j < t.size(); ++j) {
        int m;
        if (!detail::parse_number(t[j], m) || m < 1)
          throw detail::parse_error(path, lineno, "bad mode size in header");
        sizes.push_back(m);
      }
      dims = Dims(sizes);
      continue;
    }
    const int k = dims->order();
    if (static_cast<int>(t.size()) != k + 1)
      throw detail::parse_error(path, lineno, "expected " + std::to_string(k) + " indices and a value");
    for (int j = 0; j < k; ++j) {
      std::int32_t v;
      if (!detail::parse_number(t[static_cast<std::size_t>(j)], v))
        throw detail::parse_error(path, lineno, "bad index");
      idx.push_back(v);
    }
    double v;
    if (!detail::parse_number(t.back(), v))
      throw detail::parse_error(path, lineno, "bad value");
    val.push_back(v);
  }
  if (!dims) throw detail::parse_error(path, lineno, "missing 'dims' header line");
  try {
    return ObservedTensor(*dims, std::move(idx), std::move(val));
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Factor matrices
// ---------------------------------------------------------------------------

inline void write_factors(const std::string& path, const FactorSet& U) {
  std::ofstream out = detail::open_out(path);
  out << "factors " << U.order() << ' ' << U.rank() << '\n';
  out << "dims";
  for (int m : U.dims().sizes()) out << ' ' << m;
  out << '\n';
  for (int i = 0; i < U.order(); ++i) {
    const RowMat& f = U.factor(i);
    for (Eigen::Index r = 0; r < f.rows(); ++r) {
      std::string line;
      for (Eigen::Index c = 0; c < f.cols(); ++c) {
        if (c) line += ' ';
        line += detail::g17(f(r, c));
      }
      line += '\n';
      out << line;
    }
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

inline FactorSet read_factors(const std::string& path) {
  std::ifstream in = detail::open_in(path);
  std::string line;
  std::int64_t lineno = 0;
  const auto next_tokens = [&](const char* what) {
    while (std::getline(in, line)) {
      ++lineno;
      const auto t = detail::tokens(line);
      if (t.empty() || t[0][0] == '#') continue;
      return t;
    }
    throw detail::parse_error(path, lineno, std::string("unexpected end of file, expected ") + what);
  };

  auto t = next_tokens("'factors k R' header");
  int k, R;
  if (t.size() != 3 || t[0] != "factors" || !detail::parse_number(t[1], k) ||
      !detail::parse_number(t[2], R) || k < 2 || R < 1)
    throw detail::parse_error(path, lineno, "expected header line 'factors k R'");
  t = next_tokens("'dims ...' line");
  if (t.size() != static_cast<std::size_t>(k) + 1 || t[0] != "dims")
    throw detail::parse_error(path, lineno, "expected 'dims m1 ... mk'");
  std::vector<int> sizes(static_cast<std::size_t>(k));
  for (int j = 0; j < k; ++j)
    if (!detail::parse_number(t[static_cast<std::size_t>(j) + 1], sizes[static_cast<std::size_t>(j)]))
      throw detail::parse_error(path, lineno, "bad mode size");

  const Dims dims(sizes);
  std::vector<RowMat> factors;
  for (int i = 0; i < k; ++i) {
    RowMat f(dims[i], R);
    for (int r = 0; r < dims[i]; ++r) {
      t = next_tokens("factor row");
      if (static_cast<int>(t.size()) != R)
        throw detail::parse_error(path, lineno, "expected " + std::to_string(R) + " values");
      for (int c = 0; c < R; ++c)
        if (!detail::parse_number(t[static_cast<std::size_t>(c)], f(r, c)))
          throw detail::parse_error(path, lineno, "bad value");
    }
    factors.push_back(std::move(f));
  }
  return FactorSet(dims, std::move(factors));
}

// ---------------------------------------------------------------------------
// Ratings ingestion
// ---------------------------------------------------------------------------

struct RatingsData {
  ObservedTensor tensor;      // dims (6040, 3952, 150): user x movie x week
  std::int64_t week_epoch = 0;  // minimum timestamp; week 1 starts here
};

/// Parses `UserID::MovieID::Rating::Timestamp` lines into a (user, movie,
/// week) tensor. Week = 1 + floor((ts - min_ts)/604800), clamped to [1, 150];
/// later duplicates of the same (user, movie, week) cell win.
inline RatingsData parse_ratings(const std::string& path) {
  constexpr int kUsers = 6040, kMovies = 3952, kWeeks = 150;
  constexpr std::int64_t kWeekSeconds = 604800;
  std::ifstream in = detail::open_in(path);

  struct Row {
    std::int32_t user, movie;
    double rating;
    std::int64_t ts;
  };
  std::vector<Row> rows;
  std::string line;
  std::int64_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string_view sv(line);
    if (!sv.empty() && sv.back() == '\r') sv.remove_suffix(1);
    if (sv.empty()) continue;
    std::array<std::string_view, 4> f;
    std::size_t pos = 0;
    for (int i = 0; i < 3; ++i) {
      const std::size_t sep = sv.find("::", pos);
      if (sep == std::string_view::npos)
        throw detail::parse_error(path, lineno, "expected UserID::MovieID::Rating::Timestamp");
      f[static_cast<std::size_t>(i)] = sv.substr(pos, sep - pos);
      pos = sep + 2;
    }
    f[3] = sv.substr(pos);
    Row r;
    if (!detail::parse_number(f[0], r.user) || r.user < 1 || r.user > kUsers)
      throw detail::parse_error(path, lineno, "bad user id");
    if (!detail::parse_number(f[1], r.movie) || r.movie < 1 || r.movie > kMovies)
      throw detail::parse_error(path, lineno, "bad movie id");
    if (!detail::parse_number(f[2], r.rating))
      throw detail::parse_error(path, lineno, "bad rating");
    if (!detail::parse_number(f[3], r.ts) || r.ts < 0)
      throw detail::parse_error(path, lineno, "bad timestamp");
    rows.push_back(r);
  }
  if (rows.empty()) throw std::invalid_argument("ratings file has no entries: " + path);

  std::int64_t min_ts = rows.front().ts;
  for (const Row& r : rows) min_ts = std::min(min_ts, r.ts);

  std::unordered_map<std::int64_t, double> last;
  last.reserve(rows.size() * 2);
  for (const Row& r : rows) {
    const std::int64_t week = std::min<std::int64_t>(1 + (r.ts - min_ts) / kWeekSeconds, kWeeks);
    const std::int64_t key =
        ((static_cast<std::int64_t>(r.user) - 1) * kMovies + (r.movie - 1)) * kWeeks + (week - 1);
    last[key] = r.rating;
  }

  std::vector<std::int32_t> idx;
  std::vector<double> val;
  idx.reserve(last.size() * 3);
  val.reserve(last.size());
  for (const auto& [key, rating] : last) {
    const std::int32_t week = static_cast<std::int32_t>(key % kWeeks) + 1;
    const std::int64_t um = key / kWeeks;
    idx.push_back(static_cast<std::int32_t>(um / kMovies) + 1);
    idx.push_back(static_cast<std::int32_t>(um % kMovies) + 1);
    idx.push_back(week);
    val.push_back(rating);
  }
  return RatingsData{ObservedTensor(Dims({kUsers, kMovies, kWeeks}), std::move(idx), std::move(val)),
                     min_ts};
}

// ---------------------------------------------------------------------------
// Splitting and initialization
// ---------------------------------------------------------------------------

/// Seeded uniform partition into round(ratio * nnz) train entries and the
/// rest. Disjoint by construction; the union is the input.
inline std::pair<ObservedTensor, ObservedTensor> split_train_test(const ObservedTensor& data,
                                                                  double ratio, std::uint64_t seed) {
  if (!(ratio > 0 && ratio < 1)) throw std::invalid_argument("split_train_test: ratio must be in (0,1)");
  const std::int64_t n = data.nnz();
  const int k = data.order();
  std::vector<std::int64_t> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), std::int64_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(perm.begin(), perm.end(), rng);
  const std::int64_t n_train = std::llround(ratio * static_cast<double>(n));

  const auto gather = [&](std::int64_t lo, std::int64_t hi) {
    std::vector<std::int32_t> idx;
    std::vector<double> val;
    idx.reserve(static_cast<std::size_t>(hi - lo) * static_cast<std::size_t>(k));
    val.reserve(static_cast<std::size_t>(hi - lo));
    for (std::int64_t q = lo; q < hi; ++q) {
      const auto s = data.index0(perm[static_cast<std::size_t>(q)]);
      for (int j = 0; j < k; ++j) idx.push_back(s[j] + 1);
      val.push_back(data.value(perm[static_cast<std::size_t>(q)]));
    }
    return ObservedTensor(data.dims(), std::move(idx), std::move(val));
  };
  return {gather(0, n_train), gather(n_train, n)};
}

/// Factor matrices with iid standard Gaussian entries, filled factor by
/// factor in row-major entry order.
inline FactorSet init_factors(const Dims& dims, int rank, std::uint64_t seed) {
  if (rank < 1) throw std::invalid_argument("init_factors: rank must be >= 1");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  FactorSet U(dims, rank);
  for (int i = 0; i < dims.order(); ++i) {
    double* d = U.factor(i).data();
    const std::int64_t n = static_cast<std::int64_t>(dims[i]) * rank;
    for (std::int64_t j = 0; j < n; ++j) d[j] = gauss(rng);
  }
  return U;
}

// ---------------------------------------------------------------------------
// Run and manifest emission
// ---------------------------------------------------------------------------

inline void write_history_csv(const std::string& path, const std::vector<IterationRecord>& history) {
  std::ofstream out = detail::open_out(path);
  out << "t,objective,train_rmse,test_rmse,grad_norm,stepsize,seconds\n";
  for (const IterationRecord& r : history) {
    out << r.t << ',' << detail::g17(r.objective) << ',' << detail::g17(r.train_rmse) << ',';
    if (!std::isnan(r.test_rmse)) out << detail::g17(r.test_rmse);
    out << ',' << detail::g17(r.grad_norm) << ',' << detail::g17(r.stepsize) << ','
        << detail::g17(r.seconds) << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

inline void write_manifest(const std::string& path, const SynthConfig& cfg, double sigma_n) {
  nlohmann::ordered_json j;
  j["dims"] = cfg.dims.sizes();
  j["tucker_rank"] = cfg.tucker_rank;
  j["sampling_rate"] = cfg.sampling_rate;
  if (cfg.snr_db)
    j["snr_db"] = *cfg.snr_db;
  else
    j["snr_db"] = nullptr;
  j["scale"] = cfg.scale;
  j["seed"] = cfg.seed;
  if (cfg.test_subsample)
    j["test_subsample"] = *cfg.test_subsample;
  else
    j["test_subsample"] = nullptr;
  j["sigma_n"] = sigma_n;
  std::ofstream out = detail::open_out(path);
  out << j.dump(2) << '\n';
  if (!out) throw std::runtime_error("write failed: " + path);
}

inline void write_summary_json(const std::string& path, const OptimizerConfig& cfg, int rank,
                               const RunResult& res,
                               std::optional<std::int64_t> week_epoch = std::nullopt) {
  nlohmann::ordered_json j;
  j["method"] = method_name(cfg.method);
  j["rule"] = step_rule_name(cfg.rule);
  j["rank"] = rank;
  j["lambda"] = cfg.lambda;
  j["delta"] = res.delta;
  j["iters"] = res.history.empty() ? 0 : res.history.back().t;
  j["stop_reason"] = stop_reason_name(res.stop_reason);
  if (res.history.empty()) {
    j["final_objective"] = nullptr;
    j["final_train_rmse"] = nullptr;
    j["final_test_rmse"] = nullptr;
    j["final_grad_norm"] = nullptr;
    j["seconds"] = nullptr;
  } else {
    const IterationRecord& r = res.history.back();
    j["final_objective"] = r.objective;
    j["final_train_rmse"] = r.train_rmse;
    if (std::isnan(r.test_rmse))
      j["final_test_rmse"] = nullptr;
    else
      j["final_test_rmse"] = r.test_rmse;
    j["final_grad_norm"] = r.grad_norm;
    j["seconds"] = r.seconds;
  }
  if (week_epoch) j["week_epoch"] = *week_epoch;
  j["warnings"] = res.warnings;
  std::ofstream out = detail::open_out(path);
  out << j.dump(2) << '\n';
  if (!out) throw std::runtime_error("write failed: " + path);
}

}  // namespace cptc

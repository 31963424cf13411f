#pragma once

/// Synthetic experiment generator: a dense iid Gaussian tensor truncated to
/// low multilinear rank (HOSVD init + HOOI sweeps), optional SNR-calibrated
/// Gaussian noise, an optional global rescale, and entrywise Bernoulli(p)
/// sampling of the observation set. The unobserved complement becomes the
/// test set.
///
/// Generation is pure, single-threaded, and deterministic per seed. One
/// generator stream drives everything, in a fixed draw order: tensor
/// entries, then noise entries (only when snr_db is set), then sampling
/// coins, then the test subsample shuffle (only when it triggers).

#include "cptc/tensor_core.hpp"

#include <Eigen/SVD>

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace cptc {

struct SynthConfig {
  Dims dims;
  std::vector<int> tucker_rank;          // r*, one per mode
  double sampling_rate = 0.3;            // Bernoulli p for Omega
  std::optional<double> snr_db;          // absent = noiseless
  double scale = 1.0;                    // multiplies the emitted tensor
  std::uint64_t seed = 0;
  std::optional<std::int64_t> test_subsample;  // max test entries kept
};

struct SynthResult {
  DenseTensor ground_truth;  // scaled noiseless truncation
  ObservedTensor train;      // values include the noise when snr_db is set
  ObservedTensor test;       // complement of Omega, optionally subsampled
  double sigma_n = 0;        // noise standard deviation of the emitted instance
};

/// Mode-i product: replaces mode i of T by M * unfold(T, i). M has
/// dims[i-1] columns; the result's mode-i size is M.rows().
inline DenseTensor mode_multiply(const DenseTensor& T, const Eigen::MatrixXd& M, int mode) {
  const Dims& dims = T.dims();
  if (mode < 1 || mode > dims.order()) throw std::invalid_argument("mode_multiply: mode out of range");
  if (M.cols() != dims[mode - 1])
    throw std::invalid_argument("mode_multiply: matrix columns do not match the mode size");
  std::vector<int> out_sizes = dims.sizes();
  out_sizes[static_cast<std::size_t>(mode - 1)] = static_cast<int>(M.rows());
  return fold(M * unfold(T, mode), Dims(out_sizes), mode);
}

/// Best-effort Tucker rank-r approximation: truncated HOSVD (leading r_i
/// left singular vectors of each matricization) refined by HOOI sweeps until
/// the fit changes by at most 1e-10 or 50 sweeps pass. When `fit_history` is
/// given, the fit |core|/|T| after each sweep is appended (non-decreasing).
inline DenseTensor hooi_truncate(const DenseTensor& T, const std::vector<int>& r,
                                 std::vector<double>* fit_history = nullptr) {
  const Dims& dims = T.dims();
  const int k = dims.order();
  if (static_cast<int>(r.size()) != k) throw std::invalid_argument("hooi_truncate: rank tuple order mismatch");
  for (int i = 0; i < k; ++i)
    if (r[static_cast<std::size_t>(i)] < 1 || r[static_cast<std::size_t>(i)] > dims[i])
      throw std::invalid_argument("hooi_truncate: rank must satisfy 1 <= r_i <= m_i");

  const double norm_t = std::sqrt(T.squared_norm());
  if (norm_t == 0) return DenseTensor(dims);

  const auto leading_left = [](const Eigen::MatrixXd& Z, int cols) {
    Eigen::BDCSVD<Eigen::MatrixXd> svd(Z, Eigen::ComputeThinU);
    return Eigen::MatrixXd(svd.matrixU().leftCols(cols));
  };

  std::vector<Eigen::MatrixXd> U(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i)
    U[static_cast<std::size_t>(i)] = leading_left(unfold(T, i + 1), r[static_cast<std::size_t>(i)]);

  const auto project_others = [&](int skip) {
    DenseTensor Y = T;
    for (int j = 0; j < k; ++j)
      if (j != skip) Y = mode_multiply(Y, U[static_cast<std::size_t>(j)].transpose(), j + 1);
    return Y;
  };

  DenseTensor core;
  double prev_fit = -1;
  for (int sweep = 0; sweep < 50; ++sweep) {
    for (int i = 0; i < k; ++i)
      U[static_cast<std::size_t>(i)] =
          leading_left(unfold(project_others(i), i + 1), r[static_cast<std::size_t>(i)]);
    core = mode_multiply(project_others(k - 1), U[static_cast<std::size_t>(k - 1)].transpose(), k);
    const double fit = std::sqrt(core.squared_norm()) / norm_t;
    if (fit_history) fit_history->push_back(fit);
    if (prev_fit >= 0 && std::abs(fit - prev_fit) <= 1e-10) break;
    prev_fit = fit;
  }

  DenseTensor out = core;
  for (int i = 0; i < k; ++i) out = mode_multiply(out, U[static_cast<std::size_t>(i)], i + 1);
  return out;
}

/// One synthetic instance. The observed-value tensor is
/// scale * (trunc(T) + E) with E iid N(0, sigma^2) and
/// sigma^2 = (mean square of the truncated entries) / 10^(snr_db/10);
/// the reported sigma_n is scale * sigma, the noise level of the emitted
/// values. Omega is drawn entrywise Bernoulli(p) in lexicographic index
/// order; an empty Omega is a domain error.
inline SynthResult generate(const SynthConfig& cfg) {
  const Dims& dims = cfg.dims;
  const int k = dims.order();
  if (!(cfg.sampling_rate > 0 && cfg.sampling_rate < 1))
    throw std::invalid_argument("generate: sampling rate must be in (0,1)");
  if (!(cfg.scale > 0)) throw std::invalid_argument("generate: scale must be positive");
  if (cfg.test_subsample && *cfg.test_subsample < 0)
    throw std::invalid_argument("generate: test subsample must be nonnegative");

  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);

  DenseTensor T(dims);
  for (std::int64_t i = 0; i < T.size(); ++i) T[i] = gauss(rng);

  DenseTensor trunc = hooi_truncate(T, cfg.tucker_rank);

  double sigma_draw = 0;
  DenseTensor observed = trunc;
  if (cfg.snr_db) {
    const double mean_square = trunc.squared_norm() / static_cast<double>(dims.total());
    sigma_draw = std::sqrt(mean_square / std::pow(10.0, *cfg.snr_db / 10.0));
    for (std::int64_t i = 0; i < observed.size(); ++i) observed[i] += sigma_draw * gauss(rng);
  }
  if (cfg.scale != 1.0) {
    for (std::int64_t i = 0; i < trunc.size(); ++i) trunc[i] *= cfg.scale;
    for (std::int64_t i = 0; i < observed.size(); ++i) observed[i] *= cfg.scale;
  }

  std::bernoulli_distribution coin(cfg.sampling_rate);
  std::vector<std::int32_t> train_idx, test_idx;
  std::vector<double> train_val, test_val;
  std::vector<int> idx(static_cast<std::size_t>(k), 1);
  const std::int64_t n = dims.total();
  for (std::int64_t cell = 0; cell < n; ++cell) {
    const double v = observed.at(std::span<const int>(idx));
    if (coin(rng)) {
      for (int j = 0; j < k; ++j) train_idx.push_back(idx[static_cast<std::size_t>(j)]);
      train_val.push_back(v);
    } else {
      for (int j = 0; j < k; ++j) test_idx.push_back(idx[static_cast<std::size_t>(j)]);
      test_val.push_back(v);
    }
    // lexicographic odometer: last index fastest
    for (int j = k - 1; j >= 0; --j) {
      if (++idx[static_cast<std::size_t>(j)] <= dims[j]) break;
      idx[static_cast<std::size_t>(j)] = 1;
    }
  }
  if (train_val.empty()) throw std::invalid_argument("generate: Omega came out empty; increase p");

  if (cfg.test_subsample && *cfg.test_subsample < static_cast<std::int64_t>(test_val.size())) {
    const std::int64_t keep = *cfg.test_subsample;
    const std::int64_t total = static_cast<std::int64_t>(test_val.size());
    std::vector<std::int64_t> pos(static_cast<std::size_t>(total));
    std::iota(pos.begin(), pos.end(), std::int64_t{0});
    for (std::int64_t i = 0; i < keep; ++i) {
      std::uniform_int_distribution<std::int64_t> pick(i, total - 1);
      std::swap(pos[static_cast<std::size_t>(i)], pos[static_cast<std::size_t>(pick(rng))]);
    }
    std::vector<std::int32_t> sub_idx;
    std::vector<double> sub_val;
    sub_idx.reserve(static_cast<std::size_t>(keep) * static_cast<std::size_t>(k));
    sub_val.reserve(static_cast<std::size_t>(keep));
    for (std::int64_t i = 0; i < keep; ++i) {
      const std::int64_t p = pos[static_cast<std::size_t>(i)];
      for (int j = 0; j < k; ++j)
        sub_idx.push_back(test_idx[static_cast<std::size_t>(p * k + j)]);
      sub_val.push_back(test_val[static_cast<std::size_t>(p)]);
    }
    test_idx = std::move(sub_idx);
    test_val = std::move(sub_val);
  }

  SynthResult out;
  out.ground_truth = std::move(trunc);
  out.train = ObservedTensor(dims, std::move(train_idx), std::move(train_val));
  out.test = ObservedTensor(dims, std::move(test_idx), std::move(test_val));
  out.sigma_n = sigma_draw * cfg.scale;
  return out;
}

}  // namespace cptc

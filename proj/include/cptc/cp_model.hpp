#pragma once

/// The regularized completion objective over CP factors and its Euclidean
/// gradient:
///
///   f(U) = 1/(2p) * |P_Omega(cp(U) - T*)|_F^2 + lambda/2 * sum_i |U(i)|_F^2
///
/// where p is the observed fraction. The mode-i partial gradient is
/// (1/p) * S_(i) KR_i + lambda U(i), computed via the sparse MTTKRP.

#include "cptc/kernels.hpp"
#include "cptc/tensor_core.hpp"

#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

namespace cptc {

struct ProblemConfig {
  int rank = 0;
  double lambda = 0.0;         // regularization weight, as used in f
  double sampling_rate = 0.0;  // p = |Omega| / prod(dims)
};

inline ProblemConfig make_problem_config(const ObservedTensor& data, int rank, double lambda) {
  if (rank < 1) throw std::invalid_argument("make_problem_config: rank must be positive");
  if (lambda < 0) throw std::invalid_argument("make_problem_config: lambda must be nonnegative");
  if (data.nnz() == 0) throw std::invalid_argument("make_problem_config: empty observation set");
  return ProblemConfig{rank, lambda, data.sampling_rate()};
}

inline double objective_from_residual(std::span<const double> resid, const FactorSet& U,
                                      const ProblemConfig& cfg) {
  double ss = 0;
  for (double r : resid) ss += r * r;
  return ss / (2.0 * cfg.sampling_rate) + 0.5 * cfg.lambda * U.squared_norm();
}

inline double objective(const FactorSet& U, const ObservedTensor& data, const ProblemConfig& cfg,
                        int threads = 0) {
  const std::vector<double> resid = residual_at_observed(U, data, threads);
  return objective_from_residual(resid, U, cfg);
}

/// Partial gradients of f, stacked as a FactorSet.
inline FactorSet euclidean_gradient_from_residual(std::span<const double> resid,
                                                  const ObservedTensor& data, const FactorSet& U,
                                                  const ProblemConfig& cfg, int threads = 0) {
  FactorSet D(U.dims(), U.rank());
  const double inv_p = 1.0 / cfg.sampling_rate;
  for (int i = 0; i < U.order(); ++i) {
    D.factor(i) = inv_p * sparse_mttkrp(resid, data, U, i + 1, threads);
    if (cfg.lambda != 0) D.factor(i) += cfg.lambda * U.factor(i);
  }
  return D;
}

inline FactorSet euclidean_gradient(const FactorSet& U, const ObservedTensor& data,
                                    const ProblemConfig& cfg, int threads = 0) {
  const std::vector<double> resid = residual_at_observed(U, data, threads);
  return euclidean_gradient_from_residual(resid, data, U, cfg, threads);
}

inline double rmse_from_residual(std::span<const double> resid) {
  if (resid.empty()) throw std::invalid_argument("rmse: empty evaluation set");
  double ss = 0;
  for (double r : resid) ss += r * r;
  return std::sqrt(ss / static_cast<double>(resid.size()));
}

/// Root mean square error of cp(U) against the stored entries of `data`.
inline double rmse(const FactorSet& U, const ObservedTensor& data, int threads = 0) {
  const std::vector<double> resid = residual_at_observed(U, data, threads);
  return rmse_from_residual(resid);
}

}  // namespace cptc

#pragma once

/// Block-diagonal preconditioned metric on the product space of factor
/// matrices. The mode-i block is H_i = hadamard_{j != i}(U(j)^T U(j)) + delta I,
/// the Gram of the mode-i Khatri-Rao product shifted to stay positive
/// definite. Under this metric
///
///   g_U(xi, eta) = sum_i tr(xi_i H_i eta_i^T)
///
/// and the Riemannian gradient is the Euclidean partial gradient with H_i^{-1}
/// applied from the right. With H_i = I the same code path reduces to plain
/// Euclidean gradient descent.

#include "cptc/kernels.hpp"
#include "cptc/tensor_core.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace cptc {

struct Preconditioner {
  std::vector<Eigen::MatrixXd> H;                // per mode, R x R, includes the delta shift
  std::vector<Eigen::LLT<Eigen::MatrixXd>> chol; // Cholesky of each H
  double delta = 0.0;

  int order() const { return static_cast<int>(H.size()); }
};

/// Scale-aware default shift: 1e-8 times the mean over modes of
/// trace(H_i without shift)/R, floored at 1e-12. Computed once at
/// initialization and held constant for the whole run.
inline double default_delta(const FactorSet& U) {
  double mean_trace = 0;
  for (int i = 0; i < U.order(); ++i)
    mean_trace += gram_hadamard(U, i + 1).trace() / static_cast<double>(U.rank());
  mean_trace /= static_cast<double>(U.order());
  return std::max(1e-8 * mean_trace, 1e-12);
}

inline Preconditioner build_preconditioner(const FactorSet& U, double delta) {
  if (!(delta > 0)) throw std::invalid_argument("build_preconditioner: delta must be positive");
  Preconditioner P;
  P.delta = delta;
  const int R = U.rank();
  P.H.reserve(static_cast<std::size_t>(U.order()));
  P.chol.reserve(static_cast<std::size_t>(U.order()));
  for (int i = 0; i < U.order(); ++i) {
    Eigen::MatrixXd H = gram_hadamard(U, i + 1);
    H.diagonal().array() += delta;
    P.chol.emplace_back(H);
    if (P.chol.back().info() != Eigen::Success)
      throw std::runtime_error("build_preconditioner: Cholesky factorization failed");
    P.H.push_back(std::move(H));
  }
  return P;
}

/// H_i = I for every mode: the Euclidean methods run through the identical
/// code path with this preconditioner.
inline Preconditioner identity_preconditioner(int order, int rank) {
  Preconditioner P;
  P.delta = 1.0;
  for (int i = 0; i < order; ++i) {
    P.H.push_back(Eigen::MatrixXd::Identity(rank, rank));
    P.chol.emplace_back(P.H.back());
  }
  return P;
}

inline double metric_inner(const Preconditioner& P, const FactorSet& xi, const FactorSet& eta) {
  if (xi.dims() != eta.dims() || xi.rank() != eta.rank() || xi.order() != P.order() ||
      (P.order() > 0 && P.H.front().rows() != xi.rank()))
    throw std::invalid_argument("metric_inner: shape mismatch");
  double g = 0;
  for (int i = 0; i < xi.order(); ++i)
    g += ((xi.factor(i) * P.H[static_cast<std::size_t>(i)]).cwiseProduct(eta.factor(i))).sum();
  return g;
}

inline double metric_norm(const Preconditioner& P, const FactorSet& xi) {
  return std::sqrt(std::max(0.0, metric_inner(P, xi, xi)));
}

/// grad f = D H^{-1} blockwise, via the cached Cholesky factors.
inline FactorSet riemannian_gradient(const Preconditioner& P, const FactorSet& D) {
  FactorSet G(D.dims(), D.rank());
  for (int i = 0; i < D.order(); ++i)
    G.factor(i) = P.chol[static_cast<std::size_t>(i)]
                      .solve(D.factor(i).transpose())
                      .transpose();
  return G;
}

}  // namespace cptc

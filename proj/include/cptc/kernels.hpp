#pragma once

/// Performance-critical sparse kernels: the residual at observed entries,
/// the sparse MTTKRP, and the Gram-Hadamard preconditioner assembly, plus
/// the deliberately naive matricize-then-multiply reference path used for
/// oracle tests and benchmarks.
///
/// Parallelization contract (all fast kernels): Omega is split into
/// contiguous chunks, each worker accumulates into a private buffer, and the
/// buffers are summed in chunk order at the end. Accumulation order within a
/// chunk follows the stored (sorted) Omega order.

#include "cptc/parallel.hpp"
#include "cptc/tensor_core.hpp"

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace cptc {

namespace detail {

inline void check_dims_match(const FactorSet& U, const ObservedTensor& data, const char* where) {
  if (U.dims() != data.dims())
    throw std::invalid_argument(std::string(where) + ": factor dims do not match data dims");
}

}  // namespace detail

/// Values of P_Omega(cp(U) - T*), aligned with data's stored entry order.
/// 2|Omega|R flops.
inline std::vector<double> residual_at_observed(const FactorSet& U, const ObservedTensor& data,
                                                int threads = 0) {
  detail::check_dims_match(U, data, "residual_at_observed");
  const int k = data.order();
  const int R = U.rank();
  const std::int64_t n = data.nnz();
  std::vector<double> out(static_cast<std::size_t>(n));
  const std::int32_t* idx = data.raw_indices0().data();
  const double* val = data.values().data();

  if (k == 3) {
    const double* u1 = U.factor(0).data();
    const double* u2 = U.factor(1).data();
    const double* u3 = U.factor(2).data();
    detail::parallel_chunks(n, threads, [&](int, std::int64_t b, std::int64_t e) {
      for (std::int64_t p = b; p < e; ++p) {
        const double* r1 = u1 + static_cast<std::int64_t>(idx[3 * p]) * R;
        const double* r2 = u2 + static_cast<std::int64_t>(idx[3 * p + 1]) * R;
        const double* r3 = u3 + static_cast<std::int64_t>(idx[3 * p + 2]) * R;
        double s = 0;
        for (int l = 0; l < R; ++l) s += r1[l] * r2[l] * r3[l];
        out[static_cast<std::size_t>(p)] = s - val[p];
      }
    });
    return out;
  }

  detail::parallel_chunks(n, threads, [&](int, std::int64_t b, std::int64_t e) {
    std::vector<const double*> rows(static_cast<std::size_t>(k));
    for (std::int64_t p = b; p < e; ++p) {
      for (int j = 0; j < k; ++j)
        rows[static_cast<std::size_t>(j)] =
            U.factor(j).data() + static_cast<std::int64_t>(idx[p * k + j]) * R;
      double s = 0;
      for (int l = 0; l < R; ++l) {
        double term = rows[0][l];
        for (int j = 1; j < k; ++j) term *= rows[static_cast<std::size_t>(j)][l];
        s += term;
      }
      out[static_cast<std::size_t>(p)] = s - val[p];
    }
  });
  return out;
}

/// Sparse MTTKRP: D~[i_p, l] += S_p * prod_{j != i} U(j)[idx_p[j], l],
/// entry-outer and l-inner, without forming the matricization S_(i) or any
/// Khatri-Rao product. `mode` is 1-based.
inline RowMat sparse_mttkrp(std::span<const double> svals, const ObservedTensor& data,
                            const FactorSet& U, int mode, int threads = 0) {
  detail::check_dims_match(U, data, "sparse_mttkrp");
  const int k = data.order();
  if (mode < 1 || mode > k) throw std::invalid_argument("sparse_mttkrp: mode out of range");
  if (static_cast<std::int64_t>(svals.size()) != data.nnz())
    throw std::invalid_argument("sparse_mttkrp: value array not aligned with Omega");
  const int mi = mode - 1;
  const int R = U.rank();
  const std::int64_t n = data.nnz();
  const std::int32_t* idx = data.raw_indices0().data();
  const double* sv = svals.data();

  const int workers = detail::chunk_workers(n, threads);
  std::vector<RowMat> buf(static_cast<std::size_t>(workers));
  for (auto& b : buf) b = RowMat::Zero(U.dims()[mi], R);

  if (k == 3) {
    const int o1 = mi == 0 ? 1 : 0;
    const int o2 = mi == 2 ? 1 : 2;
    const double* ua = U.factor(o1).data();
    const double* ub = U.factor(o2).data();
    detail::parallel_chunks(n, threads, [&](int w, std::int64_t b, std::int64_t e) {
      double* out = buf[static_cast<std::size_t>(w)].data();
      for (std::int64_t p = b; p < e; ++p) {
        const double s = sv[p];
        const double* ra = ua + static_cast<std::int64_t>(idx[3 * p + o1]) * R;
        const double* rb = ub + static_cast<std::int64_t>(idx[3 * p + o2]) * R;
        double* d = out + static_cast<std::int64_t>(idx[3 * p + mi]) * R;
        for (int l = 0; l < R; ++l) d[l] += s * ra[l] * rb[l];
      }
    });
  } else {
    detail::parallel_chunks(n, threads, [&](int w, std::int64_t b, std::int64_t e) {
      double* out = buf[static_cast<std::size_t>(w)].data();
      std::vector<const double*> rows(static_cast<std::size_t>(k));
      for (std::int64_t p = b; p < e; ++p) {
        const double s = sv[p];
        for (int j = 0; j < k; ++j)
          rows[static_cast<std::size_t>(j)] =
              U.factor(j).data() + static_cast<std::int64_t>(idx[p * k + j]) * R;
        double* d = out + static_cast<std::int64_t>(idx[p * k + mi]) * R;
        for (int l = 0; l < R; ++l) {
          double term = s;
          for (int j = 0; j < k; ++j)
            if (j != mi) term *= rows[static_cast<std::size_t>(j)][l];
          d[l] += term;
        }
      }
    });
  }

  RowMat out = std::move(buf[0]);
  for (int w = 1; w < workers; ++w) out += buf[static_cast<std::size_t>(w)];
  return out;
}

/// Gram of the mode-i Khatri-Rao product via the Hadamard identity:
/// hadamard_{j != i} (U(j)^T U(j)). Symmetric PSD, R x R.
inline Eigen::MatrixXd gram_hadamard(const FactorSet& U, int mode) {
  const int k = U.order();
  if (mode < 1 || mode > k) throw std::invalid_argument("gram_hadamard: mode out of range");
  const int R = U.rank();
  Eigen::MatrixXd H = Eigen::MatrixXd::Ones(R, R);
  for (int j = 0; j < k; ++j) {
    if (j == mode - 1) continue;
    H = H.cwiseProduct(Eigen::MatrixXd(U.factor(j).transpose() * U.factor(j)));
  }
  return H;
}

namespace detail {

/// CSR matricization of the values over Omega for one mode (naive path only).
struct SparseMatricization {
  std::vector<std::int64_t> row_start;  // size m_i + 1
  std::vector<std::int64_t> col;
  std::vector<double> val;
};

inline SparseMatricization build_sparse_matricization(std::span<const double> svals,
                                                      const ObservedTensor& data, int mode) {
  const int k = data.order();
  const int mi = mode - 1;
  const Dims& dims = data.dims();
  const std::int64_t n = data.nnz();
  const std::int32_t* idx = data.raw_indices0().data();

  std::vector<std::int64_t> strides(static_cast<std::size_t>(k), 0);
  std::int64_t stride = 1;
  for (int j = 0; j < k; ++j) {
    if (j == mi) continue;
    strides[static_cast<std::size_t>(j)] = stride;
    stride *= dims[j];
  }

  SparseMatricization S;
  S.row_start.assign(static_cast<std::size_t>(dims[mi]) + 1, 0);
  for (std::int64_t p = 0; p < n; ++p) ++S.row_start[static_cast<std::size_t>(idx[p * k + mi]) + 1];
  for (std::size_t r = 1; r < S.row_start.size(); ++r) S.row_start[r] += S.row_start[r - 1];

  S.col.resize(static_cast<std::size_t>(n));
  S.val.resize(static_cast<std::size_t>(n));
  std::vector<std::int64_t> fill(S.row_start.begin(), S.row_start.end() - 1);
  for (std::int64_t p = 0; p < n; ++p) {
    std::int64_t c = 0;
    for (int j = 0; j < k; ++j)
      if (j != mi) c += static_cast<std::int64_t>(idx[p * k + j]) * strides[static_cast<std::size_t>(j)];
    const std::int64_t slot = fill[static_cast<std::size_t>(idx[p * k + mi])]++;
    S.col[static_cast<std::size_t>(slot)] = c;
    S.val[static_cast<std::size_t>(slot)] = svals[static_cast<std::size_t>(p)];
  }
  return S;
}

inline RowMat naive_mttkrp_with_kr(std::span<const double> svals, const ObservedTensor& data,
                                   const RowMat& kr, int mode) {
  const SparseMatricization S = build_sparse_matricization(svals, data, mode);
  const int mi = mode - 1;
  RowMat out = RowMat::Zero(data.dims()[mi], kr.cols());
  for (int r = 0; r < data.dims()[mi]; ++r)
    for (std::int64_t q = S.row_start[static_cast<std::size_t>(r)];
         q < S.row_start[static_cast<std::size_t>(r) + 1]; ++q)
      out.row(r) += S.val[static_cast<std::size_t>(q)] *
                    kr.row(static_cast<Eigen::Index>(S.col[static_cast<std::size_t>(q)]));
  return out;
}

inline std::int64_t kr_rows_for_mode(const Dims& dims, int mode) {
  std::int64_t rows = 1;
  for (int j = 0; j < dims.order(); ++j)
    if (j != mode - 1) rows *= dims[j];
  return rows;
}

}  // namespace detail

/// Reference MTTKRP that materializes the mode-i Khatri-Rao product and the
/// sparse matricization of the values, then multiplies. Oracle and benchmark
/// use only.
inline RowMat naive_mttkrp(std::span<const double> svals, const ObservedTensor& data,
                           const FactorSet& U, int mode, std::int64_t max_kr_rows = 1'000'000) {
  detail::check_dims_match(U, data, "naive_mttkrp");
  if (static_cast<std::int64_t>(svals.size()) != data.nnz())
    throw std::invalid_argument("naive_mttkrp: value array not aligned with Omega");
  if (detail::kr_rows_for_mode(data.dims(), mode) > max_kr_rows)
    throw std::runtime_error("naive_mttkrp: Khatri-Rao materialization exceeds the cap of " +
                             std::to_string(max_kr_rows) + " rows");
  const RowMat kr = khatri_rao_for_mode(U, mode);
  return detail::naive_mttkrp_with_kr(svals, data, kr, mode);
}

struct NaiveGradientParts {
  std::vector<RowMat> mttkrp;            // per mode, m_i x R
  std::vector<Eigen::MatrixXd> gram;     // per mode, R x R
};

/// The six-step naive gradient pipeline: residual, explicit Khatri-Rao
/// products, sparse matricizations, matricized products, and dense Grams.
/// Numerically identical to residual_at_observed + sparse_mttkrp +
/// gram_hadamard; kept as the benchmark baseline.
inline NaiveGradientParts naive_gradient_path(const FactorSet& U, const ObservedTensor& data,
                                              std::int64_t max_kr_rows = 1'000'000) {
  detail::check_dims_match(U, data, "naive_gradient_path");
  const int k = data.order();
  for (int i = 1; i <= k; ++i)
    if (detail::kr_rows_for_mode(data.dims(), i) > max_kr_rows)
      throw std::runtime_error("naive_gradient_path: Khatri-Rao materialization exceeds the cap of " +
                               std::to_string(max_kr_rows) + " rows");
  const std::vector<double> resid = residual_at_observed(U, data, 1);
  NaiveGradientParts parts;
  parts.mttkrp.reserve(static_cast<std::size_t>(k));
  parts.gram.reserve(static_cast<std::size_t>(k));
  for (int i = 1; i <= k; ++i) {
    const RowMat kr = khatri_rao_for_mode(U, i);
    parts.mttkrp.push_back(detail::naive_mttkrp_with_kr(resid, data, kr, i));
    parts.gram.emplace_back(kr.transpose() * kr);
  }
  return parts;
}

}  // namespace cptc

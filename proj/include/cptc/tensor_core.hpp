#pragma once

/// Core tensor data structures and the exact dense oracles used by every
/// other module and by the property tests.
///
/// Conventions, fixed once for the whole library:
///  - index tuples and mode arguments are 1-based at every public API and
///    file-format boundary; storage is 0-based internally (the conversion
///    happens at exactly one choke point, ObservedTensor's constructor and
///    the *_index helpers here);
///  - dense entries are stored column-major (first index fastest), matching
///    the matricization index map r_i = 1 + sum_{n != i} (l_n - 1) I_n with
///    I_n = prod_{j < n, j != i} m_j;
///  - the Khatri-Rao factor list for mode i is always ordered
///    U(k), ..., U(i+1), U(i-1), ..., U(1).

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <atomic>
#include <cstdint>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace cptc {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

namespace stats {
/// Counts every Khatri-Rao materialization. The fast gradient path must
/// never move this counter; the structural acceptance check relies on it.
inline std::atomic<std::uint64_t>& khatri_rao_calls() {
  static std::atomic<std::uint64_t> calls{0};
  return calls;
}
}  // namespace stats

/// Mode sizes (m_1, ..., m_k), k >= 2. Order 3 is the optimized path.
class Dims {
 public:
  Dims() = default;

  explicit Dims(std::vector<int> sizes) : sizes_(std::move(sizes)) {
    if (sizes_.size() < 2) throw std::invalid_argument("Dims: order must be >= 2");
    for (int m : sizes_)
      if (m < 1) throw std::invalid_argument("Dims: every mode size must be >= 1");
  }

  int order() const { return static_cast<int>(sizes_.size()); }
  int operator[](int i) const { return sizes_[static_cast<std::size_t>(i)]; }
  const std::vector<int>& sizes() const { return sizes_; }

  std::int64_t total() const {
    std::int64_t n = 1;
    for (int m : sizes_) n *= m;
    return n;
  }

  friend bool operator==(const Dims& a, const Dims& b) { return a.sizes_ == b.sizes_; }
  friend bool operator!=(const Dims& a, const Dims& b) { return !(a == b); }

 private:
  std::vector<int> sizes_;
};

/// (row, col) of entry `idx` in the mode-i matricization, both 1-based.
inline std::pair<int, std::int64_t> matricize_index(std::span<const int> idx, int mode,
                                                    const Dims& dims) {
  const int k = dims.order();
  if (mode < 1 || mode > k) throw std::invalid_argument("matricize_index: mode out of range");
  if (static_cast<int>(idx.size()) != k)
    throw std::invalid_argument("matricize_index: index order mismatch");
  std::int64_t col = 1, stride = 1;
  for (int n = 0; n < k; ++n) {
    if (idx[n] < 1 || idx[n] > dims[n])
      throw std::invalid_argument("matricize_index: index out of range");
    if (n == mode - 1) continue;
    col += static_cast<std::int64_t>(idx[n] - 1) * stride;
    stride *= dims[n];
  }
  return {idx[mode - 1], col};
}

/// Partially observed tensor: sorted COO indices over Omega plus the
/// observed values of T*. Indices are validated, sorted lexicographically,
/// and duplicates rejected at construction. Immutable afterwards.
class ObservedTensor {
 public:
  ObservedTensor() = default;

  /// `indices1` holds |Omega| k-tuples, flattened, 1-based.
  ObservedTensor(Dims dims, std::vector<std::int32_t> indices1, std::vector<double> values)
      : dims_(std::move(dims)), idx_(std::move(indices1)), val_(std::move(values)) {
    const int k = dims_.order();
    if (idx_.size() != val_.size() * static_cast<std::size_t>(k))
      throw std::invalid_argument("ObservedTensor: index/value length mismatch");
    const std::int64_t n = static_cast<std::int64_t>(val_.size());
    for (std::int64_t p = 0; p < n; ++p)
      for (int j = 0; j < k; ++j) {
        const std::int32_t v = idx_[p * k + j];
        if (v < 1 || v > dims_[j])
          throw std::invalid_argument("ObservedTensor: index out of range at entry " +
                                      std::to_string(p + 1));
        idx_[p * k + j] = v - 1;  // the 1-based -> 0-based choke point
      }
    sort_entries();
  }

  const Dims& dims() const { return dims_; }
  int order() const { return dims_.order(); }
  std::int64_t nnz() const { return static_cast<std::int64_t>(val_.size()); }
  double sampling_rate() const { return static_cast<double>(nnz()) / static_cast<double>(dims_.total()); }

  /// 0-based index tuple of entry p.
  std::span<const std::int32_t> index0(std::int64_t p) const {
    return {idx_.data() + p * order(), static_cast<std::size_t>(order())};
  }
  /// 1-based index tuple of entry p (convenience, allocates).
  std::vector<int> index1(std::int64_t p) const {
    std::vector<int> out(order());
    const auto s = index0(p);
    for (int j = 0; j < order(); ++j) out[j] = s[j] + 1;
    return out;
  }

  std::span<const std::int32_t> raw_indices0() const { return idx_; }
  std::span<const double> values() const { return val_; }
  double value(std::int64_t p) const { return val_[static_cast<std::size_t>(p)]; }

  /// Position of a 1-based index tuple, or -1. Binary search over the
  /// sorted entries.
  std::int64_t find(std::span<const int> idx1) const {
    const int k = order();
    if (static_cast<int>(idx1.size()) != k)
      throw std::invalid_argument("ObservedTensor::find: index order mismatch");
    std::int64_t lo = 0, hi = nnz();
    while (lo < hi) {
      const std::int64_t mid = (lo + hi) / 2;
      if (less_than(mid, idx1))
        lo = mid + 1;
      else
        hi = mid;
    }
    if (lo == nnz()) return -1;
    const auto s = index0(lo);
    for (int j = 0; j < k; ++j)
      if (s[j] + 1 != idx1[j]) return -1;
    return lo;
  }

 private:
  bool less_than(std::int64_t p, std::span<const int> idx1) const {
    const auto s = index0(p);
    for (int j = 0; j < order(); ++j) {
      if (s[j] + 1 != idx1[j]) return s[j] + 1 < idx1[j];
    }
    return false;
  }

  void sort_entries() {
    const int k = order();
    const std::int64_t n = nnz();
    std::vector<std::int64_t> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), std::int64_t{0});
    const std::int32_t* base = idx_.data();
    auto tuple_less = [&](std::int64_t a, std::int64_t b) {
      return std::lexicographical_compare(base + a * k, base + (a + 1) * k, base + b * k,
                                          base + (b + 1) * k);
    };
    std::sort(perm.begin(), perm.end(), tuple_less);
    for (std::int64_t p = 0; p + 1 < n; ++p)
      if (!tuple_less(perm[p], perm[p + 1]))
        throw std::invalid_argument("ObservedTensor: duplicate index tuple");
    std::vector<std::int32_t> sidx(idx_.size());
    std::vector<double> sval(val_.size());
    for (std::int64_t p = 0; p < n; ++p) {
      std::copy(base + perm[p] * k, base + (perm[p] + 1) * k, sidx.begin() + p * k);
      sval[static_cast<std::size_t>(p)] = val_[static_cast<std::size_t>(perm[p])];
    }
    idx_ = std::move(sidx);
    val_ = std::move(sval);
  }

  Dims dims_;
  std::vector<std::int32_t> idx_;
  std::vector<double> val_;
};

/// Dense tensor in column-major layout. Oracle and generator scale only.
class DenseTensor {
 public:
  static constexpr std::int64_t kDefaultCap = 10'000'000;

  DenseTensor() = default;

  explicit DenseTensor(Dims dims, std::int64_t max_entries = kDefaultCap) : dims_(std::move(dims)) {
    const std::int64_t n = dims_.total();
    if (n > max_entries)
      throw std::runtime_error("DenseTensor: " + std::to_string(n) +
                               " entries exceed the cap of " + std::to_string(max_entries));
    data_.assign(static_cast<std::size_t>(n), 0.0);
  }

  const Dims& dims() const { return dims_; }
  std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }
  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  double operator[](std::int64_t linear0) const { return data_[static_cast<std::size_t>(linear0)]; }
  double& operator[](std::int64_t linear0) { return data_[static_cast<std::size_t>(linear0)]; }

  /// Column-major offset of a 1-based index tuple.
  std::int64_t linear_index(std::span<const int> idx1) const {
    const int k = dims_.order();
    if (static_cast<int>(idx1.size()) != k)
      throw std::invalid_argument("DenseTensor: index order mismatch");
    std::int64_t off = 0, stride = 1;
    for (int j = 0; j < k; ++j) {
      if (idx1[j] < 1 || idx1[j] > dims_[j])
        throw std::invalid_argument("DenseTensor: index out of range");
      off += static_cast<std::int64_t>(idx1[j] - 1) * stride;
      stride *= dims_[j];
    }
    return off;
  }

  double at(std::span<const int> idx1) const { return data_[static_cast<std::size_t>(linear_index(idx1))]; }
  double& at(std::span<const int> idx1) { return data_[static_cast<std::size_t>(linear_index(idx1))]; }

  template <class... I>
  double at(I... i) const {
    const std::array<int, sizeof...(I)> a{static_cast<int>(i)...};
    return at(std::span<const int>(a));
  }
  template <class... I>
  double& at(I... i) {
    std::array<int, sizeof...(I)> a{static_cast<int>(i)...};
    return at(std::span<const int>(a));
  }

  double squared_norm() const {
    double s = 0;
    for (double v : data_) s += v * v;
    return s;
  }

 private:
  Dims dims_;
  std::vector<double> data_;
};

/// The CP variable U = (U(1), ..., U(k)), factor i of shape m_i x R.
/// Tangent vectors share this type.
class FactorSet {
 public:
  FactorSet() = default;

  FactorSet(Dims dims, int rank) : dims_(std::move(dims)), rank_(rank) {
    if (rank < 1) throw std::invalid_argument("FactorSet: rank must be >= 1");
    factors_.reserve(static_cast<std::size_t>(dims_.order()));
    for (int i = 0; i < dims_.order(); ++i) factors_.emplace_back(RowMat::Zero(dims_[i], rank));
  }

  FactorSet(Dims dims, std::vector<RowMat> factors)
      : dims_(std::move(dims)), factors_(std::move(factors)) {
    if (static_cast<int>(factors_.size()) != dims_.order())
      throw std::invalid_argument("FactorSet: factor count != order");
    rank_ = static_cast<int>(factors_.front().cols());
    if (rank_ < 1) throw std::invalid_argument("FactorSet: rank must be >= 1");
    for (int i = 0; i < dims_.order(); ++i) {
      if (factors_[static_cast<std::size_t>(i)].rows() != dims_[i] ||
          factors_[static_cast<std::size_t>(i)].cols() != rank_)
        throw std::invalid_argument("FactorSet: factor " + std::to_string(i + 1) + " has wrong shape");
      if (!factors_[static_cast<std::size_t>(i)].allFinite())
        throw std::invalid_argument("FactorSet: non-finite entries in factor " + std::to_string(i + 1));
    }
  }

  const Dims& dims() const { return dims_; }
  int order() const { return dims_.order(); }
  int rank() const { return rank_; }

  RowMat& factor(int i) { return factors_[static_cast<std::size_t>(i)]; }            // 0-based
  const RowMat& factor(int i) const { return factors_[static_cast<std::size_t>(i)]; }

  void set_zero() {
    for (auto& f : factors_) f.setZero();
  }

  /// this += s * other
  FactorSet& add_scaled(const FactorSet& other, double s) {
    check_same_shape(other);
    for (int i = 0; i < order(); ++i) factor(i) += s * other.factor(i);
    return *this;
  }

  FactorSet scaled(double s) const {
    FactorSet out = *this;
    for (auto& f : out.factors_) f *= s;
    return out;
  }

  double dot(const FactorSet& other) const {
    check_same_shape(other);
    double s = 0;
    for (int i = 0; i < order(); ++i) s += factor(i).cwiseProduct(other.factor(i)).sum();
    return s;
  }

  double squared_norm() const {
    double s = 0;
    for (const auto& f : factors_) s += f.squaredNorm();
    return s;
  }

  bool all_finite() const {
    for (const auto& f : factors_)
      if (!f.allFinite()) return false;
    return true;
  }

  friend FactorSet operator-(const FactorSet& a, const FactorSet& b) {
    FactorSet out = a;
    out.add_scaled(b, -1.0);
    return out;
  }

  friend FactorSet operator+(const FactorSet& a, const FactorSet& b) {
    FactorSet out = a;
    out.add_scaled(b, 1.0);
    return out;
  }

 private:
  void check_same_shape(const FactorSet& other) const {
    if (dims_ != other.dims_ || rank_ != other.rank_)
      throw std::invalid_argument("FactorSet: shape mismatch");
  }

  Dims dims_;
  int rank_ = 0;
  std::vector<RowMat> factors_;
};

/// Khatri-Rao (column-wise Kronecker) product. Oracle only: the fast
/// gradient path never materializes one. Rows of the result follow the
/// matricization column order: row of (A kr B) for rows (ia, ib) is ia*mB+ib.
inline RowMat khatri_rao(const Eigen::Ref<const RowMat>& A, const Eigen::Ref<const RowMat>& B) {
  if (A.cols() != B.cols()) throw std::invalid_argument("khatri_rao: column counts differ");
  stats::khatri_rao_calls().fetch_add(1, std::memory_order_relaxed);
  RowMat out(A.rows() * B.rows(), A.cols());
  for (Eigen::Index ia = 0; ia < A.rows(); ++ia)
    for (Eigen::Index ib = 0; ib < B.rows(); ++ib)
      out.row(ia * B.rows() + ib) = A.row(ia).cwiseProduct(B.row(ib));
  return out;
}

/// The canonical factor list for mode i: U(k), ..., U(i+1), U(i-1), ..., U(1).
/// Every module derives its Khatri-Rao ordering from this helper.
inline std::vector<const RowMat*> khatri_rao_factors(const FactorSet& U, int mode) {
  const int k = U.order();
  if (mode < 1 || mode > k) throw std::invalid_argument("khatri_rao_factors: mode out of range");
  std::vector<const RowMat*> list;
  list.reserve(static_cast<std::size_t>(k - 1));
  for (int j = k; j >= 1; --j)
    if (j != mode) list.push_back(&U.factor(j - 1));
  return list;
}

/// Materialized Khatri-Rao product of the mode-i factor list (oracle only).
inline RowMat khatri_rao_for_mode(const FactorSet& U, int mode) {
  const auto list = khatri_rao_factors(U, mode);
  RowMat acc = *list.front();
  for (std::size_t j = 1; j < list.size(); ++j) acc = khatri_rao(acc, *list[j]);
  return acc;
}

/// Assemble the full CP tensor sum_r U(1)_{:,r} o ... o U(k)_{:,r}.
/// Oracle scale only.
inline DenseTensor dense_cp_assemble(const FactorSet& U, std::int64_t max_entries = 1'000'000) {
  const Dims& dims = U.dims();
  const int k = dims.order();
  if (dims.total() > max_entries)
    throw std::runtime_error("dense_cp_assemble: tensor exceeds the cap of " +
                             std::to_string(max_entries) + " entries");
  DenseTensor out(dims, max_entries);
  std::vector<int> idx(static_cast<std::size_t>(k), 1);
  const std::int64_t n = dims.total();
  for (std::int64_t cell = 0; cell < n; ++cell) {
    double v = 0;
    for (int r = 0; r < U.rank(); ++r) {
      double term = 1;
      for (int j = 0; j < k; ++j) term *= U.factor(j)(idx[static_cast<std::size_t>(j)] - 1, r);
      v += term;
    }
    out[cell] = v;  // column-major walk matches the odometer below
    for (int j = 0; j < k; ++j) {
      if (++idx[static_cast<std::size_t>(j)] <= dims[j]) break;
      idx[static_cast<std::size_t>(j)] = 1;
    }
  }
  return out;
}

/// Inner product of two value arrays aligned on the same Omega (in the same
/// order). The Frobenius norm on Omega is sqrt(sparse_inner(a, a)).
inline double sparse_inner(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("sparse_inner: misaligned value arrays");
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

/// Mode-i matricization of a dense tensor (oracle utility).
inline Eigen::MatrixXd unfold(const DenseTensor& T, int mode) {
  const Dims& dims = T.dims();
  const int k = dims.order();
  if (mode < 1 || mode > k) throw std::invalid_argument("unfold: mode out of range");
  const std::int64_t rows = dims[mode - 1];
  const std::int64_t cols = dims.total() / rows;
  Eigen::MatrixXd Z(rows, cols);
  std::vector<int> idx(static_cast<std::size_t>(k), 1);
  const std::int64_t n = dims.total();
  for (std::int64_t cell = 0; cell < n; ++cell) {
    const auto [r, c] = matricize_index(idx, mode, dims);
    Z(r - 1, c - 1) = T[cell];
    for (int j = 0; j < k; ++j) {
      if (++idx[static_cast<std::size_t>(j)] <= dims[j]) break;
      idx[static_cast<std::size_t>(j)] = 1;
    }
  }
  return Z;
}

/// Inverse of unfold.
inline DenseTensor fold(const Eigen::MatrixXd& Z, const Dims& dims, int mode,
                        std::int64_t max_entries = DenseTensor::kDefaultCap) {
  const int k = dims.order();
  if (mode < 1 || mode > k) throw std::invalid_argument("fold: mode out of range");
  if (Z.rows() != dims[mode - 1] || Z.cols() != dims.total() / dims[mode - 1])
    throw std::invalid_argument("fold: matrix shape does not match dims/mode");
  DenseTensor T(dims, max_entries);
  std::vector<int> idx(static_cast<std::size_t>(k), 1);
  const std::int64_t n = dims.total();
  for (std::int64_t cell = 0; cell < n; ++cell) {
    const auto [r, c] = matricize_index(idx, mode, dims);
    T[cell] = Z(r - 1, c - 1);
    for (int j = 0; j < k; ++j) {
      if (++idx[static_cast<std::size_t>(j)] <= dims[j]) break;
      idx[static_cast<std::size_t>(j)] = 1;
    }
  }
  return T;
}

}  // namespace cptc

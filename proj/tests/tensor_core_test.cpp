#include "test_util.hpp"

#include <algorithm>
#include <map>
#include <numeric>

using namespace cptc;

namespace {

// Independent matricization oracle: rank the non-mode index tuples in the
// order where lower-numbered modes vary fastest. Built by sorting, not by
// the stride formula under test.
std::map<std::vector<int>, std::int64_t> column_ranks(const Dims& dims, int mode) {
  std::vector<std::vector<int>> keys;
  std::vector<int> idx(static_cast<std::size_t>(dims.order()), 1);
  for (std::int64_t cell = 0; cell < dims.total(); ++cell) {
    std::vector<int> key;
    for (int j = 0; j < dims.order(); ++j)
      if (j != mode - 1) key.push_back(idx[static_cast<std::size_t>(j)]);
    keys.push_back(std::move(key));
    for (int j = 0; j < dims.order(); ++j) {
      if (++idx[static_cast<std::size_t>(j)] <= dims[j]) break;
      idx[static_cast<std::size_t>(j)] = 1;
    }
  }
  auto colex = [](const std::vector<int>& a, const std::vector<int>& b) {
    return std::lexicographical_compare(a.rbegin(), a.rend(), b.rbegin(), b.rend());
  };
  std::sort(keys.begin(), keys.end(), colex);
  keys.erase(std::unique(keys.begin(), keys.end()), keys.end());
  std::map<std::vector<int>, std::int64_t> rank;
  for (std::size_t q = 0; q < keys.size(); ++q) rank[keys[q]] = static_cast<std::int64_t>(q) + 1;
  return rank;
}

}  // namespace

TEST(MatricizeIndex, DocumentedExamples) {
  const Dims dims({2, 3, 4});
  const std::vector<int> ones{1, 1, 1};
  EXPECT_EQ(matricize_index(ones, 1, dims), (std::pair<int, std::int64_t>{1, 1}));
  const std::vector<int> corner{2, 3, 4};
  EXPECT_EQ(matricize_index(corner, 1, dims), (std::pair<int, std::int64_t>{2, 12}));
  EXPECT_EQ(matricize_index(corner, 2, dims), (std::pair<int, std::int64_t>{3, 8}));
}

TEST(MatricizeIndex, AgreesWithSortOracleAndIsBijective) {
  for (const Dims& dims : {Dims({3, 4, 5}), Dims({2, 3, 4, 5}), Dims({7, 1, 9})}) {
    for (int mode = 1; mode <= dims.order(); ++mode) {
      const auto rank = column_ranks(dims, mode);
      std::set<std::pair<int, std::int64_t>> seen;
      std::vector<int> idx(static_cast<std::size_t>(dims.order()), 1);
      for (std::int64_t cell = 0; cell < dims.total(); ++cell) {
        const auto rc = matricize_index(idx, mode, dims);
        EXPECT_EQ(rc.first, idx[static_cast<std::size_t>(mode - 1)]);
        std::vector<int> key;
        for (int j = 0; j < dims.order(); ++j)
          if (j != mode - 1) key.push_back(idx[static_cast<std::size_t>(j)]);
        EXPECT_EQ(rc.second, rank.at(key));
        EXPECT_TRUE(seen.insert(rc).second) << "collision at mode " << mode;
        for (int j = 0; j < dims.order(); ++j) {
          if (++idx[static_cast<std::size_t>(j)] <= dims[j]) break;
          idx[static_cast<std::size_t>(j)] = 1;
        }
      }
      EXPECT_EQ(static_cast<std::int64_t>(seen.size()), dims.total());
    }
  }
}

TEST(MatricizeIndex, RejectsBadInput) {
  const Dims dims({2, 3, 4});
  const std::vector<int> idx{1, 1, 1};
  EXPECT_THROW(matricize_index(idx, 0, dims), std::invalid_argument);
  EXPECT_THROW(matricize_index(idx, 4, dims), std::invalid_argument);
  const std::vector<int> oob{3, 1, 1};
  EXPECT_THROW(matricize_index(oob, 1, dims), std::invalid_argument);
  const std::vector<int> zero{1, 0, 1};
  EXPECT_THROW(matricize_index(zero, 2, dims), std::invalid_argument);
}

TEST(KhatriRao, DocumentedExamples) {
  RowMat A(2, 1), B(2, 1);
  A << 1, 0;
  B << 1, 1;
  RowMat P = khatri_rao(A, B);
  ASSERT_EQ(P.rows(), 4);
  ASSERT_EQ(P.cols(), 1);
  EXPECT_EQ(P(0, 0), 1);
  EXPECT_EQ(P(1, 0), 1);
  EXPECT_EQ(P(2, 0), 0);
  EXPECT_EQ(P(3, 0), 0);

  RowMat I2 = RowMat::Identity(2, 2);
  RowMat Q = khatri_rao(I2, I2);
  RowMat expect = RowMat::Zero(4, 2);
  expect(0, 0) = 1;
  expect(3, 1) = 1;
  EXPECT_EQ(Q, expect);

  RowMat C(1, 2), D(1, 2);
  C << 2, 1;
  D << 3, 5;
  RowMat E = khatri_rao(C, D);
  EXPECT_EQ(E(0, 0), 6);
  EXPECT_EQ(E(0, 1), 5);
}

TEST(KhatriRao, ColumnNormProduct) {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> gauss;
  RowMat A(5, 4), B(6, 4);
  for (int i = 0; i < A.size(); ++i) A.data()[i] = gauss(rng);
  for (int i = 0; i < B.size(); ++i) B.data()[i] = gauss(rng);
  RowMat P = khatri_rao(A, B);
  for (int r = 0; r < 4; ++r)
    EXPECT_NEAR(P.col(r).norm(), A.col(r).norm() * B.col(r).norm(), 1e-12);
}

TEST(KhatriRao, RowLayoutAndErrors) {
  // Row of kron(A, B) for (ia, ib) lands at ia*rows(B)+ib (0-based).
  RowMat A(3, 2), B(4, 2);
  std::mt19937_64 rng(11);
  std::normal_distribution<double> gauss;
  for (int i = 0; i < A.size(); ++i) A.data()[i] = gauss(rng);
  for (int i = 0; i < B.size(); ++i) B.data()[i] = gauss(rng);
  RowMat P = khatri_rao(A, B);
  for (int ia = 0; ia < 3; ++ia)
    for (int ib = 0; ib < 4; ++ib)
      for (int r = 0; r < 2; ++r)
        EXPECT_DOUBLE_EQ(P(ia * 4 + ib, r), A(ia, r) * B(ib, r));
  RowMat bad(2, 3);
  EXPECT_THROW(khatri_rao(A, bad), std::invalid_argument);
}

TEST(KhatriRao, CanonicalOrderingForMode) {
  // k=3: mode 1 -> kr(U3, U2), mode 2 -> kr(U3, U1), mode 3 -> kr(U2, U1).
  const Dims dims({2, 3, 4});
  FactorSet U = tu::random_factors(dims, 2, 21);
  EXPECT_LT(tu::rel_err_mat(khatri_rao_for_mode(U, 1), khatri_rao(U.factor(2), U.factor(1))),
            1e-15);
  EXPECT_LT(tu::rel_err_mat(khatri_rao_for_mode(U, 2), khatri_rao(U.factor(2), U.factor(0))),
            1e-15);
  EXPECT_LT(tu::rel_err_mat(khatri_rao_for_mode(U, 3), khatri_rao(U.factor(1), U.factor(0))),
            1e-15);

  // k=4, mode 2 -> kr(kr(U4, U3), U1), nesting left-to-right.
  const Dims dims4({2, 3, 2, 3});
  FactorSet V = tu::random_factors(dims4, 2, 22);
  RowMat expect = khatri_rao(khatri_rao(V.factor(3), V.factor(2)), V.factor(0));
  EXPECT_LT(tu::rel_err_mat(khatri_rao_for_mode(V, 2), expect), 1e-15);
}

TEST(KhatriRao, CallCounterIncrements) {
  RowMat A = RowMat::Ones(2, 1), B = RowMat::Ones(2, 1);
  const std::uint64_t before = stats::khatri_rao_calls().load();
  (void)khatri_rao(A, B);
  EXPECT_EQ(stats::khatri_rao_calls().load(), before + 1);
}

TEST(DenseCpAssemble, DocumentedExamples) {
  {
    FactorSet U(Dims({2, 3, 2}), 1);
    U.factor(0)(0, 0) = 1;
    U.factor(1)(0, 0) = 1;
    U.factor(2)(0, 0) = 1;
    DenseTensor T = dense_cp_assemble(U);
    EXPECT_DOUBLE_EQ(T.at(1, 1, 1), 1.0);
    EXPECT_DOUBLE_EQ(T.squared_norm(), 1.0);
  }
  {
    FactorSet U(Dims({2, 1, 1}), 1);
    U.factor(0)(0, 0) = 2;
    U.factor(0)(1, 0) = 0;
    U.factor(1)(0, 0) = 3;
    U.factor(2)(0, 0) = 5;
    DenseTensor T = dense_cp_assemble(U);
    EXPECT_DOUBLE_EQ(T.at(1, 1, 1), 30.0);
    EXPECT_DOUBLE_EQ(T.at(2, 1, 1), 0.0);
  }
}

TEST(DenseCpAssemble, RankTwoIsSumOfRankOnes) {
  const Dims dims({3, 4, 2});
  FactorSet U = tu::random_factors(dims, 2, 31);
  FactorSet U1(dims, 1), U2(dims, 1);
  for (int i = 0; i < 3; ++i) {
    U1.factor(i) = U.factor(i).col(0);
    U2.factor(i) = U.factor(i).col(1);
  }
  DenseTensor T = dense_cp_assemble(U);
  DenseTensor T1 = dense_cp_assemble(U1);
  DenseTensor T2 = dense_cp_assemble(U2);
  for (std::int64_t c = 0; c < dims.total(); ++c) EXPECT_NEAR(T[c], T1[c] + T2[c], 1e-14);
}

TEST(DenseCpAssemble, MatricizationIdentity) {
  // unfold(assemble(U), i) == U_i * KR(other factors, canonical order)^T
  const Dims dims({3, 4, 5});
  FactorSet U = tu::random_factors(dims, 3, 41);
  DenseTensor T = dense_cp_assemble(U);
  for (int mode = 1; mode <= 3; ++mode) {
    Eigen::MatrixXd lhs = unfold(T, mode);
    Eigen::MatrixXd rhs = U.factor(mode - 1) * khatri_rao_for_mode(U, mode).transpose();
    EXPECT_LT(tu::rel_err_mat(lhs, rhs), 1e-12) << "mode " << mode;
  }
}

TEST(DenseCpAssemble, CapIsEnforced) {
  FactorSet U(Dims({101, 101, 101}), 1);
  EXPECT_THROW(dense_cp_assemble(U), std::runtime_error);
  // A raised cap admits the same shape.
  EXPECT_NO_THROW(dense_cp_assemble(U, 2'000'000));
}

TEST(SparseInner, ExamplesAndDenseOracle) {
  const std::vector<double> a{1, 2, 2};
  EXPECT_DOUBLE_EQ(sparse_inner(a, a), 9.0);
  const std::vector<double> b{1, 0}, c{0, 1};
  EXPECT_DOUBLE_EQ(sparse_inner(b, c), 0.0);
  const std::vector<double> bad{1, 2, 3, 4};
  EXPECT_THROW(sparse_inner(a, bad), std::invalid_argument);

  const Dims dims({4, 5, 6});
  ObservedTensor obs = tu::random_observed(dims, 40, 51);
  DenseTensor embed(dims);
  for (std::int64_t p = 0; p < obs.nnz(); ++p) {
    const auto idx = obs.index1(p);
    embed.at(std::span<const int>(idx)) = obs.value(p);
  }
  EXPECT_NEAR(sparse_inner(obs.values(), obs.values()), embed.squared_norm(), 1e-12);
}

TEST(ObservedTensor, SortsLexicographicallyAndFinds) {
  const Dims dims({3, 3, 3});
  std::vector<std::int32_t> idx{3, 3, 3, 1, 1, 1, 2, 1, 1, 1, 2, 1};
  std::vector<double> val{4.0, 1.0, 2.0, 3.0};
  ObservedTensor obs(dims, std::move(idx), std::move(val));
  ASSERT_EQ(obs.nnz(), 4);
  EXPECT_EQ(obs.index1(0), (std::vector<int>{1, 1, 1}));
  EXPECT_EQ(obs.index1(1), (std::vector<int>{1, 2, 1}));
  EXPECT_EQ(obs.index1(2), (std::vector<int>{2, 1, 1}));
  EXPECT_EQ(obs.index1(3), (std::vector<int>{3, 3, 3}));
  EXPECT_DOUBLE_EQ(obs.value(0), 1.0);
  EXPECT_DOUBLE_EQ(obs.value(3), 4.0);
  const std::vector<int> probe{2, 1, 1};
  EXPECT_EQ(obs.find(probe), 2);
  const std::vector<int> missing{3, 3, 2};
  EXPECT_EQ(obs.find(missing), -1);
  EXPECT_DOUBLE_EQ(obs.sampling_rate(), 4.0 / 27.0);
}

TEST(ObservedTensor, RejectsDuplicatesAndBadIndices) {
  const Dims dims({2, 2, 2});
  EXPECT_THROW(ObservedTensor(dims, {1, 1, 1, 1, 1, 1}, {1.0, 2.0}), std::invalid_argument);
  EXPECT_THROW(ObservedTensor(dims, {0, 1, 1}, {1.0}), std::invalid_argument);
  EXPECT_THROW(ObservedTensor(dims, {3, 1, 1}, {1.0}), std::invalid_argument);
  EXPECT_THROW(ObservedTensor(dims, {1, 1}, {1.0}), std::invalid_argument);
}

TEST(DenseTensor, ColumnMajorLayoutAndCap) {
  const Dims dims({2, 3, 4});
  DenseTensor T(dims);
  double v = 0;
  for (std::int64_t c = 0; c < dims.total(); ++c) T[c] = v++;
  // First index fastest: (2,1,1) is linear cell 1, (1,2,1) is cell 2.
  EXPECT_DOUBLE_EQ(T.at(2, 1, 1), 1.0);
  EXPECT_DOUBLE_EQ(T.at(1, 2, 1), 2.0);
  EXPECT_DOUBLE_EQ(T.at(1, 1, 2), 6.0);
  EXPECT_DOUBLE_EQ(T.at(2, 3, 4), 23.0);
  EXPECT_THROW(T.at(3, 1, 1), std::invalid_argument);
  EXPECT_THROW(DenseTensor(Dims({3000, 2000, 2000})), std::runtime_error);
}

TEST(FactorSet, AlgebraAndValidation) {
  const Dims dims({3, 4, 2});
  FactorSet A = tu::random_factors(dims, 2, 61);
  FactorSet B = tu::random_factors(dims, 2, 62);

  FactorSet sum = A + B;
  FactorSet diff = A - B;
  for (int i = 0; i < 3; ++i) {
    EXPECT_LT(tu::rel_err_mat(sum.factor(i), RowMat(A.factor(i) + B.factor(i))), 1e-15);
    EXPECT_LT(tu::rel_err_mat(diff.factor(i), RowMat(A.factor(i) - B.factor(i))), 1e-15);
  }

  FactorSet C = A;
  C.add_scaled(B, -2.5);
  double dot_expect = 0, a_sq = 0;
  for (int i = 0; i < 3; ++i) {
    EXPECT_LT(tu::rel_err_mat(C.factor(i), RowMat(A.factor(i) - 2.5 * B.factor(i))), 1e-15);
    dot_expect += (A.factor(i).array() * B.factor(i).array()).sum();
    a_sq += A.factor(i).squaredNorm();
  }
  EXPECT_NEAR(A.dot(B), dot_expect, 1e-12 * std::abs(dot_expect) + 1e-14);
  EXPECT_NEAR(A.squared_norm(), a_sq, 1e-12 * a_sq);
  EXPECT_LT(tu::rel_err_mat(A.scaled(3.0).factor(1), RowMat(3.0 * A.factor(1))), 1e-15);

  FactorSet Z(dims, 2);
  EXPECT_DOUBLE_EQ(Z.squared_norm(), 0.0);
  EXPECT_TRUE(Z.all_finite());
  Z.factor(0)(0, 0) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_FALSE(Z.all_finite());

  EXPECT_THROW(FactorSet(dims, 0), std::invalid_argument);
  std::vector<RowMat> wrong{RowMat::Zero(3, 2), RowMat::Zero(4, 2), RowMat::Zero(3, 2)};
  EXPECT_THROW(FactorSet(dims, std::move(wrong)), std::invalid_argument);
  std::vector<RowMat> nonfinite{RowMat::Zero(3, 2), RowMat::Zero(4, 2), RowMat::Zero(2, 2)};
  nonfinite[2](0, 0) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(FactorSet(dims, std::move(nonfinite)), std::invalid_argument);
}

TEST(UnfoldFold, RoundTripAllModes) {
  const Dims dims({3, 4, 5});
  std::mt19937_64 rng(71);
  std::normal_distribution<double> gauss;
  DenseTensor T(dims);
  for (std::int64_t c = 0; c < dims.total(); ++c) T[c] = gauss(rng);
  for (int mode = 1; mode <= 3; ++mode) {
    DenseTensor back = fold(unfold(T, mode), dims, mode);
    for (std::int64_t c = 0; c < dims.total(); ++c) EXPECT_DOUBLE_EQ(back[c], T[c]);
  }
  EXPECT_THROW(fold(Eigen::MatrixXd::Zero(2, 2), dims, 1), std::invalid_argument);
}

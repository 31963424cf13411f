#include "test_util.hpp"

using namespace cptc;

TEST(ProblemConfig, FieldsAndValidation) {
  const Dims dims({4, 5, 5});
  ObservedTensor data = tu::random_observed(dims, 25, 201);
  ProblemConfig cfg = make_problem_config(data, 3, 0.5);
  EXPECT_EQ(cfg.rank, 3);
  EXPECT_DOUBLE_EQ(cfg.lambda, 0.5);
  EXPECT_DOUBLE_EQ(cfg.sampling_rate, 25.0 / 100.0);
  EXPECT_THROW(make_problem_config(data, 0, 0.0), std::invalid_argument);
  EXPECT_THROW(make_problem_config(data, 2, -1.0), std::invalid_argument);
  ObservedTensor empty(dims, {}, {});
  EXPECT_THROW(make_problem_config(empty, 2, 0.0), std::invalid_argument);
}

TEST(Objective, ExactFactorsGiveZero) {
  const Dims dims({4, 5, 6});
  FactorSet U = tu::random_factors(dims, 3, 202);
  ObservedTensor data = tu::observe_all(dense_cp_assemble(U));
  ProblemConfig cfg = make_problem_config(data, 3, 0.0);
  EXPECT_NEAR(objective(U, data, cfg), 0.0, 1e-18);
}

TEST(Objective, SingleEntryResidualFiveGivesTwelvePointFive) {
  // p = 1 (fully observed 1x1x1), residual 30 - 25 = 5, lambda = 0.
  const Dims dims({1, 1, 1});
  ObservedTensor data(dims, {1, 1, 1}, {25.0});
  FactorSet U(dims, 1);
  U.factor(0)(0, 0) = 2;
  U.factor(1)(0, 0) = 3;
  U.factor(2)(0, 0) = 5;
  ProblemConfig cfg = make_problem_config(data, 1, 0.0);
  EXPECT_DOUBLE_EQ(cfg.sampling_rate, 1.0);
  EXPECT_DOUBLE_EQ(objective(U, data, cfg), 12.5);
}

TEST(Objective, ZeroFactorsZeroDataZeroObjective) {
  const Dims dims({3, 3, 3});
  ObservedTensor data(dims, {1, 1, 1, 2, 2, 2}, {0.0, 0.0});
  FactorSet U(dims, 2);
  ProblemConfig cfg = make_problem_config(data, 2, 7.5);
  EXPECT_DOUBLE_EQ(objective(U, data, cfg), 0.0);
}

TEST(Objective, RegularizerTermMatchesFormula) {
  const Dims dims({4, 4, 4});
  FactorSet U = tu::random_factors(dims, 2, 203);
  ObservedTensor data = tu::observe_all(dense_cp_assemble(U));
  const double lambda = 0.3;
  ProblemConfig cfg = make_problem_config(data, 2, lambda);
  EXPECT_NEAR(objective(U, data, cfg), 0.5 * lambda * U.squared_norm(), 1e-12);
  EXPECT_GE(objective(tu::random_factors(dims, 2, 204), data, cfg), 0.0);
}

TEST(EuclideanGradient, ZeroAtExactFactorsWithoutRegularizer) {
  const Dims dims({4, 5, 6});
  FactorSet U = tu::random_factors(dims, 2, 205);
  ObservedTensor data = tu::observe_all(dense_cp_assemble(U));
  ProblemConfig cfg = make_problem_config(data, 2, 0.0);
  EXPECT_NEAR(std::sqrt(euclidean_gradient(U, data, cfg).squared_norm()), 0.0, 1e-10);
}

TEST(EuclideanGradient, RegularizerOnlyGivesLambdaU) {
  // Zero residual instance: gradient reduces to lambda * U.
  const Dims dims({3, 4, 5});
  FactorSet U = tu::random_factors(dims, 2, 206);
  ObservedTensor data = tu::observe_all(dense_cp_assemble(U));
  const double lambda = 0.7;
  ProblemConfig cfg = make_problem_config(data, 2, lambda);
  FactorSet g = euclidean_gradient(U, data, cfg);
  for (int i = 0; i < 3; ++i)
    EXPECT_LT(tu::rel_err_mat(g.factor(i), RowMat(lambda * U.factor(i))), 1e-10);
}

TEST(EuclideanGradient, MatchesCentralFiniteDifferences) {
  const Dims dims({5, 6, 7});
  FactorSet U = tu::random_factors(dims, 3, 207);
  ObservedTensor data = tu::random_observed(dims, 80, 208);
  ProblemConfig cfg = make_problem_config(data, 3, 0.25);
  FactorSet g = euclidean_gradient(U, data, cfg);
  const double t = 1e-6;
  for (int trial = 0; trial < 20; ++trial) {
    FactorSet xi = tu::random_factors(dims, 3, 500 + static_cast<std::uint64_t>(trial));
    FactorSet up = U;
    up.add_scaled(xi, t);
    FactorSet dn = U;
    dn.add_scaled(xi, -t);
    const double fd = (objective(up, data, cfg) - objective(dn, data, cfg)) / (2 * t);
    const double an = g.dot(xi);
    EXPECT_LE(tu::rel_err(fd, an), 1e-5) << "direction " << trial;
  }
}

TEST(EuclideanGradient, DataTermVanishesIffResidualZero) {
  const Dims dims({6, 7, 8});
  FactorSet U = tu::random_factors(dims, 3, 209);
  ObservedTensor data = tu::random_observed(dims, 120, 210);
  ProblemConfig cfg = make_problem_config(data, 3, 0.0);
  // Random full-column-rank factors, nonzero residual: gradient must not vanish.
  const auto resid = residual_at_observed(U, data);
  double resid_norm = std::sqrt(sparse_inner(resid, resid));
  ASSERT_GT(resid_norm, 1e-3);
  EXPECT_GT(std::sqrt(euclidean_gradient(U, data, cfg).squared_norm()), 1e-10);
  // And the converse: zero residual gives a zero data-term gradient.
  ObservedTensor exact = tu::observe_all(dense_cp_assemble(U));
  ProblemConfig cfg2 = make_problem_config(exact, 3, 0.0);
  EXPECT_NEAR(std::sqrt(euclidean_gradient(U, exact, cfg2).squared_norm()), 0.0, 1e-10);
}

TEST(Rmse, Examples) {
  const Dims dims({2, 2, 2});
  {
    FactorSet U = tu::random_factors(dims, 2, 211);
    ObservedTensor data = tu::observe_all(dense_cp_assemble(U));
    EXPECT_NEAR(rmse(U, data), 0.0, 1e-12);
  }
  {
    // One observed entry, prediction off by exactly 3.
    ObservedTensor data(dims, {1, 1, 1}, {-3.0});
    FactorSet U(dims, 1);  // predicts 0 everywhere
    EXPECT_DOUBLE_EQ(rmse(U, data), 3.0);
  }
}

TEST(Rmse, MatchesDenseOracle) {
  const Dims dims({4, 5, 6});
  FactorSet U = tu::random_factors(dims, 3, 212);
  ObservedTensor data = tu::random_observed(dims, 60, 213);
  DenseTensor T = dense_cp_assemble(U);
  double ss = 0;
  for (std::int64_t p = 0; p < data.nnz(); ++p) {
    const auto idx = data.index1(p);
    const double d = T.at(std::span<const int>(idx)) - data.value(p);
    ss += d * d;
  }
  EXPECT_NEAR(rmse(U, data), std::sqrt(ss / static_cast<double>(data.nnz())), 1e-12);
}

TEST(Rmse, EmptySetIsDomainError) {
  const Dims dims({2, 2, 2});
  ObservedTensor empty(dims, {}, {});
  FactorSet U(dims, 1);
  EXPECT_THROW(rmse(U, empty), std::invalid_argument);
}

#pragma once

/// First-order optimizers on the product space of factor matrices under the
/// preconditioned metric: gradient descent and Hestenes-Stiefel+ conjugate
/// gradient, with identity retraction x_{t+1} = x_t + s_t eta_t and identity
/// vector transport. Three stepsize rules:
///
///   linemin  exact minimization of the degree-6 polynomial f(x + s eta)
///   armijo   backtracking with the classical adaptive trial stepsize
///   rbb1/2   Riemannian Barzilai-Borwein, long and short variants
///
/// The Euclidean variants (euclid_gd, euclid_cg) run the identical code path
/// with the identity preconditioner.
///
/// Stopping, checked in priority order each iteration: metric gradient norm
/// <= grad_tol; relative change of the train RMSE <= relchg_tol; iteration
/// count; wall-clock budget. A non-finite objective aborts the run and
/// reports the last finite iterate.

#include "cptc/cp_model.hpp"
#include "cptc/kernels.hpp"
#include "cptc/metric.hpp"
#include "cptc/parallel.hpp"
#include "cptc/tensor_core.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace cptc {

enum class Method { rgd, rcg, euclid_gd, euclid_cg };
enum class StepRule { linemin, armijo, rbb1, rbb2 };
enum class StopReason { grad_tol, relchg, max_iters, time_budget, diverged };

inline const char* method_name(Method m) {
  switch (m) {
    case Method::rgd: return "rgd";
    case Method::rcg: return "rcg";
    case Method::euclid_gd: return "euclid_gd";
    case Method::euclid_cg: return "euclid_cg";
  }
  return "?";
}

inline const char* step_rule_name(StepRule r) {
  switch (r) {
    case StepRule::linemin: return "linemin";
    case StepRule::armijo: return "armijo";
    case StepRule::rbb1: return "rbb1";
    case StepRule::rbb2: return "rbb2";
  }
  return "?";
}

inline const char* stop_reason_name(StopReason s) {
  switch (s) {
    case StopReason::grad_tol: return "grad_tol";
    case StopReason::relchg: return "relchg";
    case StopReason::max_iters: return "max_iters";
    case StopReason::time_budget: return "time_budget";
    case StopReason::diverged: return "diverged";
  }
  return "?";
}

inline Method parse_method(const std::string& s) {
  if (s == "rgd") return Method::rgd;
  if (s == "rcg") return Method::rcg;
  if (s == "euclid_gd") return Method::euclid_gd;
  if (s == "euclid_cg") return Method::euclid_cg;
  throw std::invalid_argument("unknown method '" + s + "' (expected rgd, rcg, euclid_gd, euclid_cg)");
}

inline StepRule parse_step_rule(const std::string& s) {
  if (s == "linemin") return StepRule::linemin;
  if (s == "armijo") return StepRule::armijo;
  if (s == "rbb1") return StepRule::rbb1;
  if (s == "rbb2") return StepRule::rbb2;
  throw std::invalid_argument("unknown stepsize rule '" + s + "' (expected linemin, armijo, rbb1, rbb2)");
}

struct ArmijoParams {
  double sigma = 1e-4;
  double beta = 0.5;
  double s_min = 1e-12;
  double s_max = 1e8;
  int max_backtracks = 50;
};

struct OptimizerConfig {
  Method method = Method::rgd;
  StepRule rule = StepRule::linemin;
  double lambda = 0.0;
  double grad_tol = 1e-7;
  double relchg_tol = 1e-6;
  int max_iters = 1000;
  double time_budget_seconds = std::numeric_limits<double>::infinity();
  ArmijoParams armijo;
  // NaN = scale-aware default, computed once from the initial iterate.
  double delta = std::numeric_limits<double>::quiet_NaN();
  bool rbb_safeguard = false;  // wrap RBB as the Armijo trial stepsize
  std::uint64_t seed = 0;      // used by callers that draw the initial point
  int threads = 0;
};

inline void validate_optimizer_config(const OptimizerConfig& cfg) {
  if (!(cfg.grad_tol > 0)) throw std::invalid_argument("grad_tol must be > 0");
  if (!(cfg.relchg_tol > 0)) throw std::invalid_argument("relchg_tol must be > 0");
  if (cfg.max_iters < 0) throw std::invalid_argument("max_iters must be >= 0");
  if (!(cfg.time_budget_seconds > 0)) throw std::invalid_argument("time budget must be > 0");
  if (!(cfg.armijo.sigma > 0 && cfg.armijo.sigma < 1)) throw std::invalid_argument("armijo sigma must be in (0,1)");
  if (!(cfg.armijo.beta > 0 && cfg.armijo.beta < 1)) throw std::invalid_argument("armijo beta must be in (0,1)");
  if (!(cfg.armijo.s_min > 0)) throw std::invalid_argument("armijo s_min must be > 0");
  if (!(cfg.armijo.s_max >= cfg.armijo.s_min)) throw std::invalid_argument("armijo s_max must be >= s_min");
  if (cfg.armijo.max_backtracks < 0) throw std::invalid_argument("armijo backtrack cap must be >= 0");
  if (cfg.lambda < 0) throw std::invalid_argument("lambda must be nonnegative");
  if (!std::isnan(cfg.delta) && !(cfg.delta > 0)) throw std::invalid_argument("delta must be > 0");
}

struct IterationRecord {
  int t = 0;
  double objective = 0;
  double train_rmse = 0;
  double test_rmse = std::numeric_limits<double>::quiet_NaN();  // NaN when no test set
  double grad_norm = 0;
  double stepsize = 0;  // step taken from this iterate; 0 on the stopping record
  double seconds = 0;   // cumulative wall clock at evaluation of this iterate
};

struct RunResult {
  FactorSet factors;
  std::vector<IterationRecord> history;
  StopReason stop_reason = StopReason::max_iters;
  std::vector<std::string> warnings;
  double delta = 0;  // preconditioner shift actually used
};

// ---------------------------------------------------------------------------
// Line objective polynomial
// ---------------------------------------------------------------------------

/// h(s) = f(U + s eta) as explicit coefficients, h(s) = sum_j c[j] s^j.
struct LinePolynomial {
  std::array<double, 7> c{};

  double value(double s) const {
    double v = c[6];
    for (int j = 5; j >= 0; --j) v = v * s + c[static_cast<std::size_t>(j)];
    return v;
  }
  double slope(double s) const {
    double v = 6 * c[6];
    for (int j = 5; j >= 1; --j) v = v * s + j * c[static_cast<std::size_t>(j)];
    return v;
  }
};

/// Expands the data term through the three splitting contributions (linear,
/// quadratic, and cubic in s), each evaluated only at the observed entries in
/// one fused pass, then adds the quadratic regularizer. 3-way tensors only.
inline LinePolynomial line_objective_polynomial(const FactorSet& U, const FactorSet& eta,
                                                const ObservedTensor& data, const ProblemConfig& cfg,
                                                int threads = 0) {
  detail::check_dims_match(U, data, "line_objective_polynomial");
  if (data.order() != 3)
    throw std::invalid_argument("line_objective_polynomial: only 3-way tensors are supported");
  if (eta.dims() != U.dims() || eta.rank() != U.rank())
    throw std::invalid_argument("line_objective_polynomial: direction shape mismatch");

  const int R = U.rank();
  const std::int64_t n = data.nnz();
  const std::int32_t* idx = data.raw_indices0().data();
  const double* val = data.values().data();
  const double* a1 = U.factor(0).data();
  const double* a2 = U.factor(1).data();
  const double* a3 = U.factor(2).data();
  const double* b1 = eta.factor(0).data();
  const double* b2 = eta.factor(1).data();
  const double* b3 = eta.factor(2).data();

  const int workers = detail::chunk_workers(n, threads);
  std::vector<std::array<double, 7>> part(static_cast<std::size_t>(workers));
  for (auto& q : part) q.fill(0.0);

  detail::parallel_chunks(n, threads, [&](int w, std::int64_t b, std::int64_t e) {
    std::array<double, 7>& q = part[static_cast<std::size_t>(w)];
    for (std::int64_t p = b; p < e; ++p) {
      const std::int64_t i1 = static_cast<std::int64_t>(idx[3 * p]) * R;
      const std::int64_t i2 = static_cast<std::int64_t>(idx[3 * p + 1]) * R;
      const std::int64_t i3 = static_cast<std::int64_t>(idx[3 * p + 2]) * R;
      double e0 = 0, e1 = 0, e2 = 0, e3 = 0;
      for (int l = 0; l < R; ++l) {
        const double u1 = a1[i1 + l], u2 = a2[i2 + l], u3 = a3[i3 + l];
        const double v1 = b1[i1 + l], v2 = b2[i2 + l], v3 = b3[i3 + l];
        const double aa = u1 * u2;
        const double ab = u1 * v2 + v1 * u2;
        const double bb = v1 * v2;
        e0 += aa * u3;
        e1 += ab * u3 + aa * v3;
        e2 += bb * u3 + ab * v3;
        e3 += bb * v3;
      }
      e0 -= val[p];
      q[0] += e0 * e0;
      q[1] += 2 * e0 * e1;
      q[2] += 2 * e0 * e2 + e1 * e1;
      q[3] += 2 * (e0 * e3 + e1 * e2);
      q[4] += 2 * e1 * e3 + e2 * e2;
      q[5] += 2 * e2 * e3;
      q[6] += e3 * e3;
    }
  });

  LinePolynomial h;
  const double half_inv_p = 1.0 / (2.0 * cfg.sampling_rate);
  for (int j = 0; j < 7; ++j) {
    double s = 0;
    for (int w = 0; w < workers; ++w) s += part[static_cast<std::size_t>(w)][static_cast<std::size_t>(j)];
    h.c[static_cast<std::size_t>(j)] = half_inv_p * s;
  }
  if (cfg.lambda != 0) {
    h.c[0] += 0.5 * cfg.lambda * U.squared_norm();
    h.c[1] += cfg.lambda * U.dot(eta);
    h.c[2] += 0.5 * cfg.lambda * eta.squared_norm();
  }
  return h;
}

namespace detail {

/// Real roots of sum_j c[j] x^j via companion-matrix eigenvalues. Roots whose
/// imaginary part exceeds 1e-8 * (1 + |real|) are discarded.
inline std::vector<double> real_roots(std::vector<double> c) {
  while (!c.empty() && (c.back() == 0.0 || std::abs(c.back()) < 1e-300)) c.pop_back();
  std::vector<double> roots;
  if (c.size() <= 1) return roots;
  const int deg = static_cast<int>(c.size()) - 1;
  if (deg == 1) {
    roots.push_back(-c[0] / c[1]);
    return roots;
  }
  Eigen::MatrixXd comp = Eigen::MatrixXd::Zero(deg, deg);
  for (int i = 1; i < deg; ++i) comp(i, i - 1) = 1.0;
  for (int i = 0; i < deg; ++i)
    comp(i, deg - 1) = -c[static_cast<std::size_t>(i)] / c[static_cast<std::size_t>(deg)];
  Eigen::EigenSolver<Eigen::MatrixXd> es(comp, /*computeEigenvectors=*/false);
  for (int i = 0; i < deg; ++i) {
    const std::complex<double> z = es.eigenvalues()(i);
    if (std::abs(z.imag()) <= 1e-8 * (1.0 + std::abs(z.real()))) roots.push_back(z.real());
  }
  return roots;
}

}  // namespace detail

/// Global minimizer of h over the candidate set {positive real critical
/// points} union {s_min}; ties broken toward the smallest s.
inline double minimize_line_polynomial(const LinePolynomial& h, double s_min) {
  std::vector<double> dc(6);
  for (int j = 0; j < 6; ++j) dc[static_cast<std::size_t>(j)] = (j + 1) * h.c[static_cast<std::size_t>(j) + 1];
  std::vector<double> candidates = detail::real_roots(std::move(dc));
  std::erase_if(candidates, [](double s) { return !(s > 0) || !std::isfinite(s); });
  candidates.push_back(s_min);
  double best_s = candidates.front();
  double best_v = h.value(best_s);
  for (std::size_t i = 1; i < candidates.size(); ++i) {
    const double v = h.value(candidates[i]);
    if (v < best_v || (v == best_v && candidates[i] < best_s)) {
      best_v = v;
      best_s = candidates[i];
    }
  }
  return best_s;
}

inline double stepsize_linemin(const FactorSet& U, const FactorSet& eta, const ObservedTensor& data,
                               const ProblemConfig& cfg, double s_min, int threads = 0) {
  return minimize_line_polynomial(line_objective_polynomial(U, eta, data, cfg, threads), s_min);
}

// ---------------------------------------------------------------------------
// Armijo backtracking
// ---------------------------------------------------------------------------

struct ArmijoResult {
  double s = 0;
  int backtracks = 0;
  bool exhausted = false;
};

/// Finds the smallest l >= 0 with f0 - f(s0 b^l) >= sigma * s * descent,
/// where descent = g(-grad, eta) > 0 and s = max(s0 b^l, s_min). Returns
/// s_min with the exhausted flag if the backtrack cap runs out.
inline ArmijoResult armijo_backtrack(const std::function<double(double)>& f_along, double f0,
                                     double descent, double trial, const ArmijoParams& p) {
  const double s0 = std::clamp(trial, p.s_min, p.s_max);
  double s = s0;
  for (int l = 0; l <= p.max_backtracks; ++l) {
    s = std::max(s0 * std::pow(p.beta, l), p.s_min);
    if (f0 - f_along(s) >= p.sigma * s * descent) return {s, l, false};
    if (s <= p.s_min) break;
  }
  return {p.s_min, p.max_backtracks, true};
}

// ---------------------------------------------------------------------------
// Barzilai-Borwein stepsizes
// ---------------------------------------------------------------------------

/// z = x_t - x_{t-1}, y = grad_t - grad_{t-1} under identity transport, with
/// every inner product taken in the metric at x_t. Variant 1 is the long
/// stepsize |z|^2/|g(z,y)|, variant 2 the short one |g(z,y)|/|y|^2. The
/// result is clamped to [1e-10, 1e10]; a degenerate denominator falls back to
/// the previous stepsize.
inline double rbb_stepsize(const Preconditioner& P, const FactorSet& z, const FactorSet& y,
                           int variant, double prev_stepsize) {
  const double zy = std::abs(metric_inner(P, z, y));
  double num, den;
  if (variant == 1) {
    num = metric_inner(P, z, z);
    den = zy;
  } else if (variant == 2) {
    num = zy;
    den = metric_inner(P, y, y);
  } else {
    throw std::invalid_argument("rbb_stepsize: variant must be 1 or 2");
  }
  if (den < 1e-300) return prev_stepsize;
  return std::clamp(num / den, 1e-10, 1e10);
}

// ---------------------------------------------------------------------------
// Conjugate direction
// ---------------------------------------------------------------------------

struct ConjugateDirection {
  FactorSet dir;
  double beta = 0;
  bool reset = false;  // true when the direction fell back to steepest descent
};

/// Modified Hestenes-Stiefel rule with nonnegativity clamp:
/// beta = max(0, g(xi_t - xi_prev, xi_t) / g(xi_t - xi_prev, eta_prev)),
/// eta = -xi_t + beta * eta_prev, reset to -xi_t if not a descent direction.
inline ConjugateDirection conjugate_direction(const Preconditioner& P, const FactorSet& xi,
                                              const FactorSet& xi_prev, const FactorSet& eta_prev) {
  const FactorSet diff = xi - xi_prev;
  const double den = metric_inner(P, diff, eta_prev);
  double beta = 0;
  if (den != 0) beta = std::max(0.0, metric_inner(P, diff, xi) / den);

  ConjugateDirection out;
  out.beta = beta;
  out.dir = eta_prev.scaled(beta);
  out.dir.add_scaled(xi, -1.0);
  if (metric_inner(P, out.dir, xi) >= 0) {
    out.dir = xi.scaled(-1.0);
    out.beta = 0;
    out.reset = true;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Stopping logic
// ---------------------------------------------------------------------------

/// Checks the stopping criteria against the newest record, in priority order:
/// gradient tolerance, relative train-RMSE change, iteration cap, time
/// budget. A zero previous train RMSE counts as converged.
inline std::optional<StopReason> check_stop(const std::vector<IterationRecord>& records,
                                            const OptimizerConfig& cfg) {
  if (records.empty()) throw std::invalid_argument("check_stop: no records");
  const IterationRecord& r = records.back();
  if (r.grad_norm <= cfg.grad_tol) return StopReason::grad_tol;
  if (records.size() >= 2) {
    const double e_prev = records[records.size() - 2].train_rmse;
    if (e_prev == 0) return StopReason::relchg;
    if (std::abs(r.train_rmse - e_prev) / std::abs(e_prev) <= cfg.relchg_tol)
      return StopReason::relchg;
  }
  if (r.t >= cfg.max_iters) return StopReason::max_iters;
  if (r.seconds >= cfg.time_budget_seconds) return StopReason::time_budget;
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Main loop
// ---------------------------------------------------------------------------

/// Runs the configured method from `init`. When `test` is given, its RMSE is
/// evaluated at every iterate and logged (it never influences the
/// optimization). The first iteration of a run that needs history (conjugate
/// direction, RBB stepsize) is plain steepest descent; RBB additionally
/// bootstraps with an Armijo search at trial stepsize 1.
inline RunResult run(const ObservedTensor& data, const OptimizerConfig& cfg, const FactorSet& init,
                     const ObservedTensor* test = nullptr) {
  validate_optimizer_config(cfg);
  if (init.dims() != data.dims()) throw std::invalid_argument("run: init dims do not match data");
  if (cfg.rule == StepRule::linemin && data.order() != 3)
    throw std::invalid_argument("run: the linemin rule supports 3-way tensors only");

  const bool euclid = cfg.method == Method::euclid_gd || cfg.method == Method::euclid_cg;
  const bool cg = cfg.method == Method::rcg || cfg.method == Method::euclid_cg;
  const bool rbb = cfg.rule == StepRule::rbb1 || cfg.rule == StepRule::rbb2;
  const int threads = cfg.threads;

  const ProblemConfig pc = make_problem_config(data, init.rank(), cfg.lambda);

  RunResult res;
  res.factors = init;
  res.delta = euclid ? 1.0 : (std::isnan(cfg.delta) ? default_delta(init) : cfg.delta);
  const Preconditioner P_id =
      euclid ? identity_preconditioner(init.order(), init.rank()) : Preconditioner{};

  FactorSet x = init;
  std::vector<double> resid = residual_at_observed(x, data, threads);
  double f = objective_from_residual(resid, x, pc);
  if (!std::isfinite(f)) {
    res.warnings.push_back("objective not finite at the initial point");
    res.stop_reason = StopReason::diverged;
    return res;
  }

  FactorSet xi_prev, eta_prev;
  double s_prev = 0;
  double prev_slope = 0;  // g_{x_{t-1}}(eta_{t-1}, xi_{t-1})
  double fm1 = 0, fm2 = 0;  // f(x_{t-1}), f(x_{t-2})

  const auto t_start = std::chrono::steady_clock::now();
  const auto elapsed = [&t_start]() {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  };

  for (int t = 0;; ++t) {
    const FactorSet D = euclidean_gradient_from_residual(resid, data, x, pc, threads);
    const Preconditioner P = euclid ? P_id : build_preconditioner(x, res.delta);
    FactorSet xi = riemannian_gradient(P, D);

    IterationRecord rec;
    rec.t = t;
    rec.objective = f;
    rec.train_rmse = rmse_from_residual(resid);
    if (test) rec.test_rmse = rmse(x, *test, threads);
    rec.grad_norm = metric_norm(P, xi);
    rec.seconds = elapsed();
    res.history.push_back(rec);

    if (auto stop = check_stop(res.history, cfg)) {
      res.stop_reason = *stop;
      break;
    }

    FactorSet eta;
    if (cg && t >= 1) {
      eta = conjugate_direction(P, xi, xi_prev, eta_prev).dir;
    } else {
      eta = xi.scaled(-1.0);
    }
    const double slope = metric_inner(P, eta, xi);  // < 0 on descent directions

    double s;
    const bool armijo_step =
        cfg.rule == StepRule::armijo || (rbb && (t == 0 || cfg.rbb_safeguard));
    if (cfg.rule == StepRule::linemin) {
      s = stepsize_linemin(x, eta, data, pc, cfg.armijo.s_min, threads);
    } else if (armijo_step) {
      double trial = 1.0;
      if (rbb && t >= 1) {
        FactorSet z = eta_prev.scaled(s_prev);
        const FactorSet y = xi - xi_prev;
        trial = rbb_stepsize(P, z, y, cfg.rule == StepRule::rbb1 ? 1 : 2, s_prev);
      } else if (t >= 2) {
        trial = std::clamp(2.0 * (fm1 - fm2) / prev_slope, cfg.armijo.s_min, cfg.armijo.s_max);
      }
      const auto f_along = [&](double step) {
        FactorSet trial_x = x;
        trial_x.add_scaled(eta, step);
        return objective(trial_x, data, pc, threads);
      };
      const ArmijoResult ar = armijo_backtrack(f_along, f, -slope, trial, cfg.armijo);
      if (ar.exhausted)
        res.warnings.push_back("armijo backtracking exhausted at iteration " + std::to_string(t) +
                               "; using s_min");
      s = ar.s;
    } else {  // unguarded RBB, t >= 1
      FactorSet z = eta_prev.scaled(s_prev);
      const FactorSet y = xi - xi_prev;
      s = rbb_stepsize(P, z, y, cfg.rule == StepRule::rbb1 ? 1 : 2, s_prev);
    }

    FactorSet x_next = x;
    x_next.add_scaled(eta, s);
    std::vector<double> resid_next = residual_at_observed(x_next, data, threads);
    const double f_next = objective_from_residual(resid_next, x_next, pc);
    res.history.back().stepsize = s;

    if (!std::isfinite(f_next) || !x_next.all_finite()) {
      res.warnings.push_back("objective diverged at iteration " + std::to_string(t) +
                             "; returning the last finite iterate");
      res.stop_reason = StopReason::diverged;
      break;
    }

    fm2 = fm1;
    fm1 = f;
    prev_slope = slope;
    xi_prev = std::move(xi);
    eta_prev = std::move(eta);
    s_prev = s;
    x = std::move(x_next);
    resid = std::move(resid_next);
    f = f_next;
  }

  res.factors = x;
  return res;
}

}  // namespace cptc

// Copyright 2026 The sicnav-sim Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef SICNAV__NLP_HPP_
#define SICNAV__NLP_HPP_

#include "sicnav/qp.hpp"

#include <algorithm>
#include <functional>
#include <string>
#include <utility>
#include <vector>

namespace sicnav
{

/// Smooth nonlinear program
///   minimize f(z)  subject to  c(z) = 0,  g(z) <= 0,  lb <= z <= ub,
/// with analytic first derivatives supplied by the caller. Jacobian
/// callbacks must fill a fixed sparsity pattern; `eq_pattern` and
/// `ineq_pattern` declare a superset of the nonzeros.
struct NlpProblem
{
  int n_vars = 0;
  std::function<double(const VecXd &)> cost;
  std::function<void(const VecXd &, VecXd &)> cost_grad;
  /// optional positive-semidefinite Hessian model (Gauss-Newton); when
  /// absent the solver falls back to damped BFGS
  std::function<void(const VecXd &, SpMat &)> cost_hess;
  int n_eq = 0;
  std::function<void(const VecXd &, VecXd &)> eq;
  std::function<void(const VecXd &, SpMat &)> eq_jac;
  int n_ineq = 0;
  std::function<void(const VecXd &, VecXd &)> ineq;
  std::function<void(const VecXd &, SpMat &)> ineq_jac;
  VecXd lb, ub;  ///< sized n_vars; +-inf entries mean unbounded
  std::vector<std::pair<int, int>> eq_pattern, ineq_pattern;
};

enum class SolveStatus { converged, max_iter, infeasible, numerical_failure };

struct KktResiduals
{
  double stationarity = 0.0;
  double eq_violation = 0.0;
  double ineq_violation = 0.0;
  double complementarity = 0.0;

  double max() const
  {
    return std::max(std::max(stationarity, eq_violation),
      std::max(ineq_violation, complementarity));
  }
};

/// Multiplier conventions: stationarity is
///   grad f + J_eq' nu + J_ineq' lambda - beta_lo + beta_up = 0
/// with lambda, beta_lo, beta_up >= 0.
struct NlpSolution
{
  VecXd z;
  VecXd duals_eq, duals_ineq, duals_lb, duals_ub;
  SolveStatus status = SolveStatus::numerical_failure;
  KktResiduals kkt;
  int iterations = 0;
  double wall_time_s = 0.0;
};

struct SolverConfig
{
  int max_iterations = 60;
  double kkt_tolerance = 1e-6;
  double max_wall_time_s = 0.2;  ///< 0 disables the cap
  double merit_penalty_init = 10.0;
  double regularization = 1e-8;  ///< Levenberg floor added to the Hessian
  QpSettings qp;
  /// optional per-iteration trace (iteration, merit, residuals) as text lines
  std::function<void(const std::string &)> trace;
};

/// Line-search SQP: Gauss-Newton or damped-BFGS Hessian, L1 exact-penalty
/// merit, elastic (slack-relaxed) retry of infeasible QP subproblems, and a
/// wall-time cap that returns the best iterate found so far.
class SqpSolver
{
public:
  explicit SqpSolver(SolverConfig cfg = {});

  NlpSolution solve(const NlpProblem & p, const VecXd & z0);

  const SolverConfig & config() const { return cfg_; }
  void set_config(const SolverConfig & cfg)
  {
    cfg_ = cfg;
    qp_.set_settings(cfg.qp);
    qp_elastic_.set_settings(cfg.qp);
    qp_soc_.set_settings(soc_settings(cfg.qp));
  }

private:
  static QpSettings soc_settings(QpSettings s)
  {
    // the correction step is opportunistic: a capped-effort solve is enough
    // because the merit test judges whatever it returns
    s.max_iter = std::min(s.max_iter, 400);
    return s;
  }

  SolverConfig cfg_;
  BoxQpSolver qp_;
  BoxQpSolver qp_elastic_;
  BoxQpSolver qp_soc_;
};

struct DerivativeReport
{
  double max_rel_err_cost = 0.0;
  double max_rel_err_eq = 0.0;
  double max_rel_err_ineq = 0.0;
  int worst_eq_row = -1, worst_eq_col = -1;
  int worst_ineq_row = -1, worst_ineq_col = -1;
  bool sparsity_ok = true;  ///< analytic nonzeros inside the declared pattern
  bool pass = false;
};

/// Validates analytic derivatives against central finite differences at
/// n_points random points sampled within `radius` of z_ref (clipped to the
/// bounds). Deterministic for a fixed seed.
DerivativeReport check_derivatives(
  const NlpProblem & p, const VecXd & z_ref, int n_points, unsigned seed, double tol,
  double radius = 0.1);

}  // namespace sicnav

#endif  // SICNAV__NLP_HPP_

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

#include "sicnav/nlp.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <random>
#include <stdexcept>
#include <unordered_set>

namespace sicnav
{

namespace
{

constexpr double kInf = std::numeric_limits<double>::infinity();
/// iterates at most this far from feasibility compete on objective value
constexpr double kFeasTol = 1e-6;

double inf_norm(const VecXd & v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }

double l1_violation(const VecXd & c, const VecXd & g)
{
  double s = 0.0;
  for (int i = 0; i < c.size(); ++i) s += std::abs(c(i));
  for (int i = 0; i < g.size(); ++i) s += std::max(g(i), 0.0);
  return s;
}

struct Evals
{
  double f = 0.0;
  VecXd grad, c, g;
  SpMat Je, Ji;
};

void evaluate(const NlpProblem & p, const VecXd & z, Evals & e, bool with_jac)
{
  e.f = p.cost(z);
  p.cost_grad(z, e.grad);
  if (p.n_eq > 0) {
    p.eq(z, e.c);
    if (with_jac) p.eq_jac(z, e.Je);
  } else {
    e.c.resize(0);
    e.Je.resize(0, p.n_vars);
  }
  if (p.n_ineq > 0) {
    p.ineq(z, e.g);
    if (with_jac) p.ineq_jac(z, e.Ji);
  } else {
    e.g.resize(0);
    e.Ji.resize(0, p.n_vars);
  }
}

}  // namespace

SqpSolver::SqpSolver(SolverConfig cfg)
: cfg_(cfg), qp_(cfg.qp), qp_elastic_(cfg.qp), qp_soc_(soc_settings(cfg.qp))
{
}

NlpSolution SqpSolver::solve(const NlpProblem & p, const VecXd & z0)
{
  const auto t_start = std::chrono::steady_clock::now();
  const auto elapsed = [&]() {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  };

  const int n = p.n_vars;
  if (z0.size() != n || !p.cost || !p.cost_grad) {
    throw std::invalid_argument("SqpSolver: bad problem or start point");
  }
  const VecXd lb = p.lb.size() == n ? p.lb : VecXd::Constant(n, -kInf);
  const VecXd ub = p.ub.size() == n ? p.ub : VecXd::Constant(n, kInf);

  VecXd z = z0.cwiseMax(lb).cwiseMin(ub);
  Evals e;
  evaluate(p, z, e, true);

  const bool use_gn = static_cast<bool>(p.cost_hess);
  Eigen::MatrixXd B;
  if (!use_gn) B = Eigen::MatrixXd::Identity(n, n);
  SpMat H(n, n);

  double penalty = cfg_.merit_penalty_init;
  double reg = cfg_.regularization;

  NlpSolution best;
  best.z = z;
  best.duals_eq = VecXd::Zero(p.n_eq);
  best.duals_ineq = VecXd::Zero(p.n_ineq);
  best.duals_lb = VecXd::Zero(n);
  best.duals_ub = VecXd::Zero(n);
  double best_feas = kInf, best_kkt = kInf, best_f = kInf;
  bool have_best = false;

  int consecutive_ls_failures = 0;
  int elastic_streak = 0;
  int stall = 0;
  SolveStatus final_status = SolveStatus::max_iter;

  int it = 0;
  for (; it < cfg_.max_iterations; ++it) {
    if (cfg_.max_wall_time_s > 0.0 && elapsed() > cfg_.max_wall_time_s) break;

    if (use_gn) {
      p.cost_hess(z, H);
    } else {
      H = B.sparseView(1e-14, 1.0);
    }

    // QP in the step d:  min 0.5 d'(H + reg I)d + grad'd
    //   s.t. Je d = -c,  Ji d <= -g,  lb - z <= d <= ub - z
    BoxQp qp;
    {
      std::vector<Eigen::Triplet<double>> tp;
      tp.reserve(H.nonZeros() + n);
      for (int j = 0; j < n; ++j) {
        for (SpMat::InnerIterator itH(H, j); itH; ++itH) {
          tp.emplace_back(static_cast<int>(itH.row()), j, itH.value());
        }
      }
      for (int j = 0; j < n; ++j) tp.emplace_back(j, j, reg);
      qp.P.resize(n, n);
      qp.P.setFromTriplets(tp.begin(), tp.end());
    }
    qp.q = e.grad;
    const int m_rows = p.n_eq + p.n_ineq + n;
    {
      std::vector<Eigen::Triplet<double>> ta;
      ta.reserve(e.Je.nonZeros() + e.Ji.nonZeros() + n);
      for (int j = 0; j < n; ++j) {
        for (SpMat::InnerIterator itJ(e.Je, j); itJ; ++itJ) {
          ta.emplace_back(static_cast<int>(itJ.row()), j, itJ.value());
        }
        for (SpMat::InnerIterator itJ(e.Ji, j); itJ; ++itJ) {
          ta.emplace_back(p.n_eq + static_cast<int>(itJ.row()), j, itJ.value());
        }
      }
      for (int j = 0; j < n; ++j) ta.emplace_back(p.n_eq + p.n_ineq + j, j, 1.0);
      qp.A.resize(m_rows, n);
      qp.A.setFromTriplets(ta.begin(), ta.end());
    }
    qp.l.resize(m_rows);
    qp.u.resize(m_rows);
    qp.l.head(p.n_eq) = -e.c;
    qp.u.head(p.n_eq) = -e.c;
    qp.l.segment(p.n_eq, p.n_ineq).setConstant(-kInf);
    qp.u.segment(p.n_eq, p.n_ineq) = -e.g;
    qp.l.tail(n) = lb - z;
    qp.u.tail(n) = ub - z;

    QpResult qr = qp_.solve(qp);
    int qp_its = qr.iterations, soc_its = -1, el_its = -1;
    bool used_elastic = false;
    if (qr.status == QpStatus::primal_infeasible ||
        (qr.status == QpStatus::max_iter && qr.primal_residual > 1e-4)) {
      // elastic relaxation: per-row slacks with a large linear penalty keep
      // the subproblem feasible instead of aborting
      used_elastic = true;
      const int ms = p.n_eq + p.n_ineq;
      const int ne = n + 2 * ms;
      BoxQp eqp;
      {
        std::vector<Eigen::Triplet<double>> tp;
        for (int j = 0; j < n; ++j) {
          for (SpMat::InnerIterator itP(qp.P, j); itP; ++itP) {
            tp.emplace_back(static_cast<int>(itP.row()), j, itP.value());
          }
        }
        for (int j = n; j < ne; ++j) tp.emplace_back(j, j, 1e-8);
        eqp.P.resize(ne, ne);
        eqp.P.setFromTriplets(tp.begin(), tp.end());
      }
      const double w_el = std::max(10.0 * penalty, 1e4);
      eqp.q.resize(ne);
      eqp.q.head(n) = e.grad;
      eqp.q.tail(2 * ms).setConstant(w_el);
      {
        std::vector<Eigen::Triplet<double>> ta;
        for (int j = 0; j < n; ++j) {
          for (SpMat::InnerIterator itJ(e.Je, j); itJ; ++itJ) {
            ta.emplace_back(static_cast<int>(itJ.row()), j, itJ.value());
          }
          for (SpMat::InnerIterator itJ(e.Ji, j); itJ; ++itJ) {
            ta.emplace_back(p.n_eq + static_cast<int>(itJ.row()), j, itJ.value());
          }
        }
        for (int i = 0; i < ms; ++i) {
          ta.emplace_back(i, n + 2 * i, 1.0);
          ta.emplace_back(i, n + 2 * i + 1, -1.0);
        }
        // bound rows for every column: the slacks carry a linear cost, so
        // without their nonnegativity the relaxation is unbounded below
        for (int j = 0; j < ne; ++j) ta.emplace_back(ms + j, j, 1.0);
        eqp.A.resize(ms + ne, ne);
        eqp.A.setFromTriplets(ta.begin(), ta.end());
      }
      eqp.l.resize(ms + ne);
      eqp.u.resize(ms + ne);
      eqp.l.head(p.n_eq) = -e.c;
      eqp.u.head(p.n_eq) = -e.c;
      eqp.l.segment(p.n_eq, p.n_ineq).setConstant(-kInf);
      eqp.u.segment(p.n_eq, p.n_ineq) = -e.g;
      eqp.l.segment(ms, n) = lb - z;
      eqp.u.segment(ms, n) = ub - z;
      eqp.l.tail(2 * ms).setZero();
      eqp.u.tail(2 * ms).setConstant(kInf);
      QpResult er = qp_elastic_.solve(eqp);
      el_its = er.iterations;
      qr.x = er.x.head(n);
      qr.y.resize(m_rows);
      qr.y.head(ms) = er.y.head(ms);
      qr.y.tail(n) = er.y.segment(ms, n);
      qr.status = er.status;
    }
    elastic_streak = used_elastic ? elastic_streak + 1 : 0;

    const VecXd d = qr.x;
    VecXd nu = qr.y.head(p.n_eq);
    VecXd lam = qr.y.segment(p.n_eq, p.n_ineq).cwiseMax(0.0);
    VecXd ybnd = qr.y.tail(n);

    // KKT residuals at the current point with the fresh multipliers
    KktResiduals kkt;
    {
      VecXd st = e.grad + ybnd;
      if (p.n_eq > 0) st += e.Je.transpose() * nu;
      if (p.n_ineq > 0) st += e.Ji.transpose() * lam;
      kkt.stationarity = inf_norm(st);
      kkt.eq_violation = inf_norm(e.c);
      kkt.ineq_violation = e.g.size() ? std::max(e.g.maxCoeff(), 0.0) : 0.0;
      double comp = 0.0;
      for (int i = 0; i < p.n_ineq; ++i) comp = std::max(comp, std::abs(lam(i) * e.g(i)));
      for (int j = 0; j < n; ++j) {
        if (ybnd(j) > 0.0 && std::isfinite(ub(j))) {
          comp = std::max(comp, ybnd(j) * (ub(j) - z(j)));
        } else if (ybnd(j) < 0.0 && std::isfinite(lb(j))) {
          comp = std::max(comp, -ybnd(j) * (z(j) - lb(j)));
        }
      }
      kkt.complementarity = comp;
    }

    // among iterates feasible at tolerance the objective ranks them (an
    // accepted plan must be useful, not merely feasible); otherwise least
    // violation wins with the KKT residual as tie-break
    const double feas = std::max(kkt.eq_violation, kkt.ineq_violation);
    const bool z_ok = feas <= kFeasTol;
    const bool best_ok = have_best && best_feas <= kFeasTol;
    const bool take = !have_best ||
      (z_ok && (!best_ok || e.f < best_f)) ||
      (!z_ok && !best_ok &&
        (feas < best_feas - 1e-12 ||
         (feas <= best_feas + 1e-12 && kkt.max() < best_kkt)));
    if (take) {
      have_best = true;
      best_feas = feas;
      best_kkt = kkt.max();
      best_f = e.f;
      best.z = z;
      best.duals_eq = nu;
      best.duals_ineq = lam;
      best.duals_lb = (-ybnd).cwiseMax(0.0);
      best.duals_ub = ybnd.cwiseMax(0.0);
      best.kkt = kkt;
    }

    if (kkt.max() <= cfg_.kkt_tolerance) {
      final_status = SolveStatus::converged;
      ++it;
      break;
    }

    // exact-penalty weight must dominate the constraint multipliers; bound
    // rows are enforced exactly by the subproblem and never enter the merit
    // violation, so their duals do not constrain the weight; elastic duals
    // are artifacts of the relaxation weight and must not ratchet it either
    if (!used_elastic) {
      const double dual_scale = std::max(inf_norm(nu), inf_norm(lam));
      penalty = std::max(penalty, 1.5 * dual_scale + 1.0);
    }

    const double viol0 = l1_violation(e.c, e.g);
    const double merit0 = e.f + penalty * viol0;
    const double descent = e.grad.dot(d) - penalty * viol0;

    if (inf_norm(d) < 1e-14) {
      // no step left at this linearisation
      if (feas > 1e-4 && elastic_streak >= 2) final_status = SolveStatus::infeasible;
      ++it;
      break;
    }

    double alpha = 1.0;
    bool accepted = false;
    Evals et;
    VecXd zt;
    // trial of `step` scaled by `al`: fills (zt, et) and applies the Armijo
    // test against the directional derivative `dsc` of the merit
    const auto trial_ok = [&](const VecXd & step, double al, double dsc) {
      zt = (z + al * step).cwiseMax(lb).cwiseMin(ub);
      evaluate(p, zt, et, false);
      const double merit_t = et.f + penalty * l1_violation(et.c, et.g);
      return std::isfinite(merit_t) &&
        merit_t <= merit0 + 1e-4 * al * std::min(dsc, 0.0);
    };
    if (trial_ok(d, 1.0, descent)) {
      accepted = true;
    } else if (!used_elastic &&
      l1_violation(et.c, et.g) > std::max(10.0 * viol0, 1e-8)) {
      // second-order correction: the full step failed because constraint
      // curvature grew the violation materially, so re-solve the subproblem
      // with the constraint residue evaluated at the trial point and retry at
      // full length; this keeps the merit monotone without creeping step
      // sizes. Noise-level growth is excluded: there the failure is driven
      // by the objective and a correction cannot help.
      VecXd soc_eq, soc_in;
      if (p.n_eq > 0) soc_eq = e.Je * d - et.c;
      if (p.n_ineq > 0) soc_in = e.Ji * d - et.g;
      qp.l.head(p.n_eq) = soc_eq;
      qp.u.head(p.n_eq) = soc_eq;
      qp.u.segment(p.n_eq, p.n_ineq) = soc_in;
      qp_soc_.warm_start(d, qr.y);
      const QpResult qs = qp_soc_.solve(qp);
      soc_its = qs.iterations;
      if ((qs.status == QpStatus::solved ||
           (qs.status == QpStatus::max_iter && qs.primal_residual <= 1e-4)) &&
          trial_ok(qs.x, 1.0, descent)) {
        accepted = true;
        qr.y = qs.y;  // fresher multipliers for the next warm start
      }
    }
    if (!accepted) {
      for (int ls = 1; ls < 30; ++ls) {
        alpha *= 0.5;
        if (trial_ok(d, alpha, descent)) {
          accepted = true;
          break;
        }
      }
    }
    if (accepted) {
      // BFGS curvature pair uses Lagrangian gradients at fixed multipliers
      if (!use_gn) {
        VecXd gL_old = e.grad;
        if (p.n_eq > 0) gL_old += e.Je.transpose() * nu;
        if (p.n_ineq > 0) gL_old += e.Ji.transpose() * lam;
        evaluate(p, zt, et, true);
        VecXd gL_new = et.grad;
        if (p.n_eq > 0) gL_new += et.Je.transpose() * nu;
        if (p.n_ineq > 0) gL_new += et.Ji.transpose() * lam;
        const VecXd s = zt - z;
        const VecXd yv = gL_new - gL_old;
        const double sBs = s.dot(B * s);
        const double sy = s.dot(yv);
        if (s.norm() > 1e-14 && sBs > 1e-16) {
          VecXd yt = yv;
          if (sy < 0.2 * sBs) {
            const double theta = 0.8 * sBs / (sBs - sy);
            yt = theta * yv + (1.0 - theta) * (B * s);
          }
          const double syt = s.dot(yt);
          if (syt > 1e-12) {
            const VecXd Bs = B * s;
            B -= (Bs * Bs.transpose()) / sBs;
            B += (yt * yt.transpose()) / syt;
          }
        }
      } else {
        evaluate(p, zt, et, true);
      }
      z = zt;
      e = et;
    }

    if (cfg_.trace) {
      // merit_new is evaluated under the same penalty weight as merit0, so
      // accepted steps must satisfy merit_new <= merit0
      const double merit_new =
        accepted ? e.f + penalty * l1_violation(e.c, e.g) : merit0;
      char buf[320];
      std::snprintf(buf, sizeof(buf),
        "it=%d f=%.6e merit=%.9e merit_new=%.9e stat=%.3e eq=%.3e ineq=%.3e comp=%.3e "
        "alpha=%.3e reg=%.1e qp=%d soc=%d el=%d%s",
        it, e.f, merit0, merit_new, kkt.stationarity, kkt.eq_violation, kkt.ineq_violation,
        kkt.complementarity, accepted ? alpha : 0.0, reg, qp_its, soc_its, el_its,
        used_elastic ? " elastic" : "");
      cfg_.trace(buf);
    }

    if (accepted) {
      consecutive_ls_failures = 0;
      reg = std::max(cfg_.regularization, reg * 0.2);
      qp_.warm_start(VecXd::Zero(n), qr.y);
      // once a feasible iterate is banked, a run of accepted steps with
      // negligible merit progress while the KKT residual sits far from
      // tolerance is zigzag polish; stop on an iteration count, never on
      // wall time, so results stay reproducible. Near tolerance the run is
      // left to finish, because convergence is a few cheap steps away.
      const double merit_acc = e.f + penalty * l1_violation(e.c, e.g);
      const bool stalled = have_best && best_feas <= kFeasTol &&
        merit0 - merit_acc <= 1e-7 * std::max(1.0, std::abs(merit0)) &&
        kkt.max() > 10.0 * cfg_.kkt_tolerance;
      stall = stalled ? stall + 1 : 0;
      if (stall >= 6) {
        ++it;
        break;
      }
    } else {
      ++consecutive_ls_failures;
      reg = std::min(reg * 10.0 + 1e-8, 1e6);
      if (consecutive_ls_failures >= 3) {
        if (feas > 1e-4 && elastic_streak >= 2) {
          final_status = SolveStatus::infeasible;
        } else {
          final_status = SolveStatus::numerical_failure;
        }
        ++it;
        break;
      }
    }
  }

  NlpSolution out = best;
  out.status = final_status;
  out.iterations = it;
  out.wall_time_s = elapsed();
  if (!have_best) {
    out.z = z;
    out.duals_eq = VecXd::Zero(p.n_eq);
    out.duals_ineq = VecXd::Zero(p.n_ineq);
    out.duals_lb = VecXd::Zero(n);
    out.duals_ub = VecXd::Zero(n);
    KktResiduals kkt;
    kkt.stationarity = inf_norm(e.grad);
    kkt.eq_violation = inf_norm(e.c);
    kkt.ineq_violation = e.g.size() ? std::max(e.g.maxCoeff(), 0.0) : 0.0;
    out.kkt = kkt;
    out.status = SolveStatus::numerical_failure;
  }
  return out;
}

DerivativeReport check_derivatives(
  const NlpProblem & p, const VecXd & z_ref, int n_points, unsigned seed, double tol,
  double radius)
{
  DerivativeReport rep;
  const int n = p.n_vars;
  const VecXd lb = p.lb.size() == n ? p.lb : VecXd::Constant(n, -kInf);
  const VecXd ub = p.ub.size() == n ? p.ub : VecXd::Constant(n, kInf);

  std::unordered_set<long long> eq_pat, ineq_pat;
  for (const auto & [r, c] : p.eq_pattern) eq_pat.insert(1000000LL * r + c);
  for (const auto & [r, c] : p.ineq_pattern) ineq_pat.insert(1000000LL * r + c);

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(-radius, radius);

  const auto rel_err = [](double a, double b) {
    return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
  };

  for (int k = 0; k < n_points; ++k) {
    VecXd z = z_ref;
    for (int j = 0; j < n; ++j) z(j) += unif(rng);
    z = z.cwiseMax(lb).cwiseMin(ub);

    VecXd grad;
    p.cost_grad(z, grad);
    SpMat Je(p.n_eq, n), Ji(p.n_ineq, n);
    if (p.n_eq > 0) p.eq_jac(z, Je);
    if (p.n_ineq > 0) p.ineq_jac(z, Ji);

    if (!eq_pat.empty() || p.n_eq == 0) {
      for (int j = 0; j < n; ++j) {
        for (SpMat::InnerIterator itJ(Je, j); itJ; ++itJ) {
          if (itJ.value() != 0.0 && !eq_pat.count(1000000LL * itJ.row() + j)) {
            rep.sparsity_ok = false;
          }
        }
      }
    }
    if (!ineq_pat.empty() || p.n_ineq == 0) {
      for (int j = 0; j < n; ++j) {
        for (SpMat::InnerIterator itJ(Ji, j); itJ; ++itJ) {
          if (itJ.value() != 0.0 && !ineq_pat.count(1000000LL * itJ.row() + j)) {
            rep.sparsity_ok = false;
          }
        }
      }
    }

    VecXd cp, cm, gp, gm;
    for (int j = 0; j < n; ++j) {
      const double h = 1e-6 * std::max(1.0, std::abs(z(j)));
      VecXd zp = z, zm = z;
      zp(j) += h;
      zm(j) -= h;
      const double fd_cost = (p.cost(zp) - p.cost(zm)) / (2.0 * h);
      rep.max_rel_err_cost = std::max(rep.max_rel_err_cost, rel_err(fd_cost, grad(j)));
      if (p.n_eq > 0) {
        p.eq(zp, cp);
        p.eq(zm, cm);
        for (int i = 0; i < p.n_eq; ++i) {
          const double fd = (cp(i) - cm(i)) / (2.0 * h);
          const double err = rel_err(fd, Je.coeff(i, j));
          if (err > rep.max_rel_err_eq) {
            rep.max_rel_err_eq = err;
            rep.worst_eq_row = i;
            rep.worst_eq_col = j;
          }
        }
      }
      if (p.n_ineq > 0) {
        p.ineq(zp, gp);
        p.ineq(zm, gm);
        for (int i = 0; i < p.n_ineq; ++i) {
          const double fd = (gp(i) - gm(i)) / (2.0 * h);
          const double err = rel_err(fd, Ji.coeff(i, j));
          if (err > rep.max_rel_err_ineq) {
            rep.max_rel_err_ineq = err;
            rep.worst_ineq_row = i;
            rep.worst_ineq_col = j;
          }
        }
      }
    }
  }
  rep.pass = rep.sparsity_ok && rep.max_rel_err_cost <= tol && rep.max_rel_err_eq <= tol &&
    rep.max_rel_err_ineq <= tol;
  return rep;
}

}  // namespace sicnav

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

#include "sicnav/qp.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <limits>
#include <stdexcept>
#include <tuple>
#include <utility>
#include <vector>

namespace sicnav
{

namespace
{

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kRhoMin = 1e-6;
constexpr double kRhoMax = 1e6;

VecXd clamp_rows(const VecXd & v, const VecXd & l, const VecXd & u)
{
  return v.cwiseMax(l).cwiseMin(u);
}

double inf_norm(const VecXd & v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }

// Ruiz equilibration of the constraint matrix plus a scalar cost scaling.
struct Scaling
{
  VecXd D, E;
  double c = 1.0;
};

Scaling ruiz(const SpMat & P, const VecXd & q, const SpMat & A)
{
  const int n = static_cast<int>(P.rows());
  const int m = static_cast<int>(A.rows());
  Scaling s;
  s.D = VecXd::Ones(n);
  s.E = VecXd::Ones(m);
  VecXd cn(n), rn(m);
  for (int pass = 0; pass < 6; ++pass) {
    cn.setZero();
    rn.setZero();
    for (int j = 0; j < n; ++j) {
      for (SpMat::InnerIterator it(P, j); it; ++it) {
        const double v = std::abs(it.value()) * s.D(it.row()) * s.D(j);
        cn(j) = std::max(cn(j), v);
        cn(it.row()) = std::max(cn(it.row()), v);
      }
    }
    for (int j = 0; j < n; ++j) {
      for (SpMat::InnerIterator it(A, j); it; ++it) {
        const double v = std::abs(it.value()) * s.E(it.row()) * s.D(j);
        cn(j) = std::max(cn(j), v);
        rn(it.row()) = std::max(rn(it.row()), v);
      }
    }
    for (int j = 0; j < n; ++j) {
      if (cn(j) > 1e-12) s.D(j) /= std::sqrt(cn(j));
    }
    for (int i = 0; i < m; ++i) {
      if (rn(i) > 1e-12) s.E(i) /= std::sqrt(rn(i));
    }
  }
  // cost scaling keeps the scaled Hessian and gradient near unit size
  double pmax = 0.0;
  for (int j = 0; j < n; ++j) {
    for (SpMat::InnerIterator it(P, j); it; ++it) {
      pmax = std::max(pmax, std::abs(it.value()) * s.D(it.row()) * s.D(j));
    }
  }
  const double qmax = inf_norm(q.cwiseProduct(s.D));
  const double denom = std::max({1.0, pmax, qmax});
  s.c = 1.0 / denom;
  return s;
}

}  // namespace

BoxQpSolver::BoxQpSolver(QpSettings settings) : st_(settings) {}

void BoxQpSolver::warm_start(const VecXd & x, const VecXd & y)
{
  warm_x_ = x;
  warm_y_ = y;
}

QpResult BoxQpSolver::solve(const BoxQp & qp)
{
  const int n = static_cast<int>(qp.P.rows());
  const int m = static_cast<int>(qp.A.rows());
  if (qp.P.cols() != n || qp.A.cols() != n || qp.q.size() != n || qp.l.size() != m ||
      qp.u.size() != m) {
    throw std::invalid_argument("BoxQpSolver: inconsistent dimensions");
  }

  SpMat P = qp.P.selfadjointView<Eigen::Upper>();
  SpMat A = qp.A;

  Scaling sc;
  if (st_.scaling) {
    sc = ruiz(P, qp.q, A);
  } else {
    sc.D = VecXd::Ones(n);
    sc.E = VecXd::Ones(m);
  }
  P = sc.c * sc.D.asDiagonal() * P * sc.D.asDiagonal();
  A = sc.E.asDiagonal() * A * sc.D.asDiagonal();
  VecXd q = sc.c * qp.q.cwiseProduct(sc.D);
  VecXd l(m), u(m);
  for (int i = 0; i < m; ++i) {
    l(i) = std::isfinite(qp.l(i)) ? qp.l(i) * sc.E(i) : qp.l(i);
    u(i) = std::isfinite(qp.u(i)) ? qp.u(i) * sc.E(i) : qp.u(i);
  }

  VecXd x = VecXd::Zero(n), y = VecXd::Zero(m), z = VecXd::Zero(m);
  if (warm_x_.size() == n && warm_y_.size() == m) {
    x = warm_x_.cwiseQuotient(sc.D);
    y = sc.c * warm_y_.cwiseQuotient(sc.E);
    z = clamp_rows(A * x, l, u);
  }
  warm_x_.resize(0);
  warm_y_.resize(0);

  QpResult res;

  const auto resid_pair = [&](const VecXd & xv, const VecXd & yv) {
    const VecXd axv = A * xv;
    const double rp = inf_norm(axv - clamp_rows(axv, l, u));
    const double rd = inf_norm(P.selfadjointView<Eigen::Upper>() * xv + q +
      A.transpose() * yv);
    return std::pair<double, double>(rp, rd);
  };

  // polish: solve the equality KKT on the active set detected from the
  // current (y, z) exactly, refining against the unregularised system, then
  // iterate on the set itself: a wrong-signed multiplier marks a row that
  // was wrongly pinned (often a redundant member of a dependent group) and
  // is dropped, while a violated unpinned row is one the splitting iterate
  // had not clamped yet and is added. With clean signs and no violations
  // the candidate satisfies the full KKT conditions, which for a convex
  // program certifies it as the solution.
  VecXd cand_x, cand_y;
  double cand_rp = kInf, cand_rd = kInf;
  std::vector<int> cand_rows;
  std::vector<signed char> cand_side;
  std::vector<int> act;
  std::vector<double> act_b;
  std::vector<bool> act_two_sided;
  const auto detect_active = [&]() {
    act.clear();
    act_b.clear();
    act_two_sided.clear();
    for (int i = 0; i < m; ++i) {
      const bool at_l = std::isfinite(l(i)) && (y(i) < -1e-10 || z(i) - l(i) < 1e-10);
      const bool at_u = std::isfinite(u(i)) && (y(i) > 1e-10 || u(i) - z(i) < 1e-10);
      if (at_l && at_u) {
        act.push_back(i);
        act_b.push_back(y(i) >= 0.0 ? u(i) : l(i));
        act_two_sided.push_back(true);
      } else if (at_l) {
        act.push_back(i);
        act_b.push_back(l(i));
        act_two_sided.push_back(false);
      } else if (at_u) {
        act.push_back(i);
        act_b.push_back(u(i));
        act_two_sided.push_back(false);
      }
    }
    VecXd psol;
    std::vector<Eigen::Triplet<double>> tp;
    std::vector<char> in_act(m, 0);
    for (const int i : act) in_act[i] = 1;
    double score_hist[8];
    for (int round = 0; round < 8; ++round) {
      const int ma = static_cast<int>(act.size());
      const double delta = 1e-7;
      tp.clear();
      for (int j = 0; j < n; ++j) {
        for (SpMat::InnerIterator itP(P, j); itP; ++itP) {
          tp.emplace_back(static_cast<int>(itP.row()), j, itP.value());
        }
      }
      for (int j = 0; j < n; ++j) tp.emplace_back(j, j, delta);
      // gather active rows of A by column iteration
      for (int j = 0; j < n; ++j) {
        for (SpMat::InnerIterator itA(A, j); itA; ++itA) {
          const auto pos =
            std::lower_bound(act.begin(), act.end(), static_cast<int>(itA.row()));
          if (pos != act.end() && *pos == static_cast<int>(itA.row())) {
            const int k = static_cast<int>(pos - act.begin());
            tp.emplace_back(n + k, j, itA.value());
            tp.emplace_back(j, n + k, itA.value());
          }
        }
      }
      for (int k = 0; k < ma; ++k) tp.emplace_back(n + k, n + k, -delta);
      SpMat kp(n + ma, n + ma);
      kp.setFromTriplets(tp.begin(), tp.end());
      Eigen::SimplicialLDLT<SpMat> pol;
      pol.compute(kp);
      if (pol.info() != Eigen::Success) {
        // zero pivots from near-dependent active rows; retry stiffer
        for (int j = 0; j < n; ++j) kp.coeffRef(j, j) += 1e-4;
        for (int k = 0; k < ma; ++k) kp.coeffRef(n + k, n + k) -= 1e-4;
        pol.compute(kp);
      }
      if (pol.info() != Eigen::Success) return false;
      VecXd prhs(n + ma);
      prhs.head(n) = -q;
      for (int k = 0; k < ma; ++k) prhs(n + k) = act_b[k];
      psol = pol.solve(prhs);
      // iterative refinement against the unregularised system recovers the
      // accuracy lost to the pivot regularisation
      for (int r = 0; r < 3; ++r) {
        VecXd resid(n + ma);
        const VecXd xv = psol.head(n);
        VecXd yv = psol.tail(ma);
        VecXd atyv = VecXd::Zero(n);
        VecXd axv = VecXd::Zero(ma);
        for (int j = 0; j < n; ++j) {
          for (SpMat::InnerIterator itA(A, j); itA; ++itA) {
            const auto pos =
              std::lower_bound(act.begin(), act.end(), static_cast<int>(itA.row()));
            if (pos != act.end() && *pos == static_cast<int>(itA.row())) {
              const int k = static_cast<int>(pos - act.begin());
              atyv(j) += itA.value() * yv(k);
              axv(k) += itA.value() * xv(j);
            }
          }
        }
        resid.head(n) = -q - (P.selfadjointView<Eigen::Upper>() * xv) - atyv;
        for (int k = 0; k < ma; ++k) resid(n + k) = act_b[k] - axv(k);
        psol += pol.solve(resid);
      }
      // a near-singular pinned set produces a useless solve; stop iterating
      // on it and fall back to the best round seen so far
      if (!psol.allFinite() || psol.lpNorm<Eigen::Infinity>() > 1e12) break;
      // score this round's candidate by the full KKT residuals after
      // clearing wrong-signed dual noise on degenerate rows; the best round
      // wins, because a set change can make a later round worse
      VecXd rx = psol.head(n);
      VecXd ry = VecXd::Zero(m);
      for (int k = 0; k < ma; ++k) {
        double yk = psol(n + k);
        if (!act_two_sided[k]) {
          const bool upper = act_b[k] == u(act[k]);
          if ((upper && yk < 0.0) || (!upper && yk > 0.0)) yk = 0.0;
        }
        ry(act[k]) = yk;
      }
      const auto [rrp, rrd] = resid_pair(rx, ry);
      if (std::max(rrp, rrd) < std::max(cand_rp, cand_rd)) {
        cand_x = std::move(rx);
        cand_y = std::move(ry);
        cand_rp = rrp;
        cand_rd = rrd;
      }
      score_hist[round] = std::max(rrp, rrd);
      // a cycling set shuffles the same rows without improving the KKT
      // residuals; each re-solve costs a factorisation, so demand clear
      // progress over a two-round window
      if (round >= 2 && score_hist[round] > 0.5 * score_hist[round - 2]) break;
      std::vector<char> keep(ma, 1);
      bool changed = false;
      for (int k = 0; k < ma; ++k) {
        if (act_two_sided[k]) continue;
        const bool upper = act_b[k] == u(act[k]);
        const double yk = psol(n + k);
        if ((upper && yk < -1e-11) || (!upper && yk > 1e-11)) {
          keep[k] = 0;
          changed = true;
        }
      }
      // rows the splitting iterate had not clamped yet but the candidate
      // violates must join the set pinned at the violated side
      const VecXd ax_all = A * psol.head(n);
      std::vector<int> add;
      std::vector<double> add_b;
      for (int i = 0; i < m; ++i) {
        if (in_act[i]) continue;
        if (std::isfinite(u(i)) && ax_all(i) - u(i) > 1e-10) {
          add.push_back(i);
          add_b.push_back(u(i));
          changed = true;
        } else if (std::isfinite(l(i)) && l(i) - ax_all(i) > 1e-10) {
          add.push_back(i);
          add_b.push_back(l(i));
          changed = true;
        }
      }
      if (!changed || round == 7) break;
      int w = 0;
      for (int k = 0; k < ma; ++k) {
        if (!keep[k]) {
          in_act[act[k]] = 0;
          continue;
        }
        act[w] = act[k];
        act_b[w] = act_b[k];
        act_two_sided[w] = act_two_sided[k];
        ++w;
      }
      act.resize(w);
      act_b.resize(w);
      act_two_sided.resize(w);
      // merge the additions in row order so the lower_bound scans stay valid
      for (std::size_t a = 0; a < add.size(); ++a) {
        const auto pos = std::lower_bound(act.begin(), act.end(), add[a]);
        const auto k = pos - act.begin();
        act.insert(pos, add[a]);
        act_b.insert(act_b.begin() + k, add_b[a]);
        act_two_sided.insert(act_two_sided.begin() + k, false);
        in_act[add[a]] = 1;
      }
    }
    return cand_rp < kInf;
  };

  int it = 0;
  bool solved = false;
  bool polished = false;
  int polish_gap = st_.check_interval * 5;
  int next_polish = polish_gap;
  for (; it < st_.max_iter; ++it) {
    rhs.head(n) = st_.sigma * x - q;
    rhs.tail(m) = z - y.cwiseQuotient(rho);
    sol = ldlt_.solve(rhs);
    const VecXd x_t = sol.head(n);
    const VecXd nu = sol.tail(m);
    const VecXd z_t = z + (nu - y).cwiseQuotient(rho);
    const VecXd x_next = st_.alpha * x_t + (1.0 - st_.alpha) * x;
    const VecXd z_mix = st_.alpha * z_t + (1.0 - st_.alpha) * z;
    const VecXd z_next = clamp_rows(z_mix + y.cwiseQuotient(rho), l, u);
    y_prev = y;
    y = y + rho.cwiseProduct(z_mix - z_next);
    x = x_next;
    z = z_next;

    if ((it + 1) % st_.check_interval == 0 || it + 1 == st_.max_iter) {
      ax = A * x;
      px = P.selfadjointView<Eigen::Upper>() * x;
      aty = A.transpose() * y;
      const double rp = inf_norm(ax - z);
      const double rd = inf_norm(px + q + aty);
      const double eps_p =
        st_.eps_abs + st_.eps_rel * std::max(inf_norm(ax), inf_norm(z));
      const double eps_d = st_.eps_abs + st_.eps_rel * std::max({inf_norm(px), inf_norm(q),
        inf_norm(aty)});
      if (rp <= eps_p && rd <= eps_d) {
        solved = true;
        ++it;
        break;
      }
      // early polish: once the iterate has identified the active set one
      // equality solve finishes the job, skipping the slow splitting tail.
      // A candidate is only taken when it satisfies the full KKT system at
      // tolerance (its duals are sign-clean by construction), which for a
      // convex program certifies it as a solution however it was produced.
      if (st_.polish && it + 1 >= next_polish) {
        const bool got = try_polish();
        if (std::getenv("QPDBG")) {
          std::fprintf(stderr,
            "  [qp] it=%d rp=%.2e rd=%.2e polish got=%d crp=%.2e crd=%.2e "
            "(eps_p=%.2e eps_d=%.2e)\n",
            it + 1, rp, rd, got ? 1 : 0, cand_rp, cand_rd, eps_p, eps_d);
        }
        if (got && cand_rp <= eps_p && cand_rd <= eps_d) {
          solved = true;
          polished = true;
          ++it;
          break;
        }
        polish_gap *= 2;
        next_polish = it + 1 + polish_gap;
      }
      // infeasibility certificates from the dual direction
      const VecXd dy = y - y_prev;
      const double dy_norm = inf_norm(dy);
      if (dy_norm > 1e-12) {
        double support = 0.0;
        bool bounded = true;
        for (int i = 0; i < m; ++i) {
          if (dy(i) > 0.0) {
            if (!std::isfinite(u(i))) { bounded = false; break; }
            support += u(i) * dy(i);
          } else if (dy(i) < 0.0) {
            if (!std::isfinite(l(i))) { bounded = false; break; }
            support += l(i) * dy(i);
          }
        }
        if (bounded && inf_norm(A.transpose() * dy) <= 1e-10 * dy_norm &&
            support < -1e-10 * dy_norm) {
          res.status = QpStatus::primal_infeasible;
          break;
        }
      }
      if (st_.adaptive_rho && (it + 1) % (st_.check_interval * 2) == 0) {
        const double np = rp / std::max({inf_norm(ax), inf_norm(z), 1e-12});
        const double nd = rd / std::max({inf_norm(px), inf_norm(q), inf_norm(aty), 1e-12});
        const double ratio = std::sqrt(np / std::max(nd, 1e-16));
        if (ratio > 5.0 || ratio < 0.2) {
          rho_base = std::clamp(rho_base * ratio, kRhoMin, kRhoMax);
          set_rho(rho_base);
          assemble(kkt);
          ldlt_.factorize(kkt);
        }
      }
    }
  }
  res.iterations = it;

  VecXd xp = x, yp = y;
  if (polished) {
    xp = cand_x;
    yp = cand_y;
  } else if (st_.polish && res.status != QpStatus::primal_infeasible) {
    // final polish attempt; accept when no worse than the iterate
    if (try_polish()) {
      const auto [rp0, rd0] = resid_pair(x, y);
      if (std::max(cand_rp, cand_rd) <= std::max(rp0, rd0) * (1.0 + 1e-9) + 1e-14) {
        xp = cand_x;
        yp = cand_y;
        polished = true;
      }
    }
  }

  res.x = xp.cwiseProduct(sc.D);
  res.y = yp.cwiseProduct(sc.E) / sc.c;
  res.polished = polished;
  {
    const VecXd axu = qp.A * res.x;
    res.primal_residual = inf_norm(axu - clamp_rows(axu, qp.l, qp.u));
    SpMat Pfull = qp.P.selfadjointView<Eigen::Upper>();
    res.dual_residual = inf_norm(Pfull * res.x + qp.q + qp.A.transpose() * res.y);
  }
  if (res.status != QpStatus::primal_infeasible) {
    res.status = solved || (res.primal_residual <= st_.eps_abs * 10 &&
      res.dual_residual <= st_.eps_abs * 10) ? QpStatus::solved : QpStatus::max_iter;
  }
  return res;
}

}  // namespace sicnav

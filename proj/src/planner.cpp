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

#include "sicnav/planner.hpp"

#include "detail/orca_diff.hpp"
#include "detail/unicycle.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>
#include <set>
#include <stdexcept>
#include <utility>
#include <vector>

namespace sicnav
{

namespace
{

using detail::HalfPlaneJac;
using detail::IntentJac;
using detail::Mat2;
using detail::RowVec2;
using detail::SegmentHalfPlaneJac;

constexpr double kInf = std::numeric_limits<double>::infinity();

double clampd(double v, double lo, double hi) { return std::min(std::max(v, lo), hi); }

/// Half-plane construction that survives degenerate intermediate iterates
/// (coincident centers, zero relative velocity on the cutoff axis) by
/// deterministic pre-separation nudges instead of throwing.
HalfPlaneJac safe_agent_halfplane(
  DiscAgent self, DiscAgent other, double tau, double resp, double collision_dt,
  bool want_jac)
{
  if ((other.p - self.p).squaredNorm() < 1e-12) {
    other.p += Vec2(1e-6, -2e-6);
  }
  for (int attempt = 0;; ++attempt) {
    try {
      return detail::agent_halfplane_jac(self, other, tau, resp, collision_dt, want_jac);
    } catch (const std::domain_error &) {
      if (attempt >= 2) throw;
      self.v += Vec2(3e-7, 1e-7);
      other.p += Vec2(1e-7, -2e-7);
    }
  }
}

SegmentHalfPlaneJac safe_segment_halfplane(
  Vec2 p, double radius, const Segment & seg, double tau, bool want_jac)
{
  const Vec2 cp = closest_point_on_segment(p, seg);
  if ((p - cp).squaredNorm() < 1e-18) {
    const Vec2 d = seg.b - seg.a;
    const Vec2 off = d.squaredNorm() > 1e-24 ? Vec2(-d.y(), d.x()).normalized() : Vec2(1.0, 0.0);
    p += 1e-6 * off;
  }
  return detail::segment_halfplane_jac(p, radius, seg, tau, want_jac);
}

/// One chained derivative block: d(n)/d(z[c0], z[c1]) and d(b)/d(same).
struct Dep
{
  int c0 = -1, c1 = -1;
  Mat2 dn = Mat2::Zero();
  RowVec2 db = RowVec2::Zero();
};

struct LineRec
{
  Vec2 n = Vec2::UnitX();
  double b = 0.0;
  std::vector<Dep> deps;
};

struct HumanStep
{
  Vec2 p = Vec2::Zero();   ///< position at step t (affine in utilde)
  Vec2 v = Vec2::Zero();   ///< velocity observed at step t (= utilde_{t-1})
  Vec2 ut = Vec2::Zero();  ///< utilde_t value at the current iterate
  Vec2 vint = Vec2::Zero();
  Mat2 dvint_dp = Mat2::Zero();
  std::vector<LineRec> lines;  ///< robot, other embedded, discs, segments
};

struct RobotStep
{
  Vec2 p = Vec2::Zero();
  double th = 0.0, v = 0.0, om = 0.0;
  Vec2 vel = Vec2::Zero();
};

/// Shared evaluation state of one assembled horizon program. Geometry is
/// cached per iterate; the derivative-chain structure never depends on z.
struct Workspace
{
  BuildInputs in;
  MpcIndex idx;
  std::vector<Vec2> goals;  ///< fixed per-human goal estimates

  VecXd zc;
  bool valid = false, jac_ok = false;

  std::vector<RobotStep> rs;               ///< [0..T]
  std::vector<detail::ArcStep> arcs;       ///< [0..T-1] at (theta_t, u_t)
  std::vector<std::vector<Vec2>> hp;       ///< [0..T][K] embedded positions
  std::vector<std::vector<HumanStep>> hs;  ///< [0..T-1][K]

  void refresh(const VecXd & z, bool want_jac);
};

void Workspace::refresh(const VecXd & z, bool want_jac)
{
  if (valid && (jac_ok || !want_jac) && zc.size() == z.size() &&
      (zc.array() == z.array()).all())
  {
    return;
  }
  const int T = idx.T, K = idx.K;
  const double dt = in.cfg.dt;

  rs.assign(T + 1, RobotStep{});
  rs[0].p = in.x0.position();
  rs[0].th = in.x0.theta;
  rs[0].v = in.x0.v;
  rs[0].om = in.x0.omega;
  rs[0].vel = in.x0.velocity();
  for (int t = 1; t <= T; ++t) {
    const int xb = idx.x(t);
    rs[t].p = Vec2(z(xb), z(xb + 1));
    rs[t].th = z(xb + 2);
    rs[t].v = z(xb + 3);
    rs[t].om = z(xb + 4);
    rs[t].vel = rs[t].v * Vec2(std::cos(rs[t].th), std::sin(rs[t].th));
  }
  arcs.resize(T);
  for (int t = 0; t < T; ++t) {
    arcs[t] = detail::arc_step(rs[t].th, z(idx.u(t)), z(idx.u(t) + 1), dt);
  }

  hp.assign(T + 1, std::vector<Vec2>(K, Vec2::Zero()));
  for (int k = 0; k < K; ++k) hp[0][k] = in.orca[k].state.p;
  for (int t = 1; t <= T; ++t) {
    for (int k = 0; k < K; ++k) {
      hp[t][k] = hp[t - 1][k] + dt * Vec2(z.segment<2>(idx.hu(t - 1, k)));
    }
  }

  hs.assign(T, std::vector<HumanStep>(K));
  for (int t = 0; t < T; ++t) {
    for (int k = 0; k < K; ++k) {
      HumanStep & H = hs[t][k];
      const AgentParams & prm = in.orca[k].params;
      H.p = hp[t][k];
      H.v = t == 0 ? in.orca[k].state.v : Vec2(z.segment<2>(idx.hu(t - 1, k)));
      H.ut = z.segment<2>(idx.hu(t, k));
      const IntentJac ij =
        detail::intent_jacobian(H.p, goals[k], prm.intent_horizon, prm.max_speed);
      H.vint = ij.v;
      H.dvint_dp = ij.dv_dp;
      H.lines.assign(idx.m_ll, LineRec{});

      int li = 0;
      // other_kind: 0 robot, 1 embedded human, 2 fixed disc
      const auto add_agent_line = [&](const DiscAgent & other, double resp, int other_kind,
          int other_idx) {
        LineRec & L = H.lines[li++];
        const DiscAgent self{H.p, H.v, prm.radius};
        const HalfPlaneJac hj = safe_agent_halfplane(self, other, prm.tau, resp, dt, want_jac);
        L.n = hj.n;
        L.b = hj.b;
        if (!want_jac) return;
        L.deps.clear();
        for (int s = 0; s < t; ++s) {
          L.deps.push_back({idx.hu(s, k), idx.hu(s, k) + 1, dt * hj.dn_dps, dt * hj.db_dps});
        }
        if (t >= 1) {
          L.deps.push_back({idx.hu(t - 1, k), idx.hu(t - 1, k) + 1, hj.dn_dvs, hj.db_dvs});
        }
        if (other_kind == 0 && t >= 1) {
          const int xb = idx.x(t);
          L.deps.push_back({xb, xb + 1, hj.dn_dpo, hj.db_dpo});
          Mat2 M;
          const double c = std::cos(rs[t].th), s = std::sin(rs[t].th);
          M << -rs[t].v * s, c, rs[t].v * c, s;
          L.deps.push_back({xb + 2, xb + 3, Mat2(hj.dn_dvo * M), RowVec2(hj.db_dvo * M)});
        } else if (other_kind == 1) {
          const int j = other_idx;
          for (int s = 0; s < t; ++s) {
            L.deps.push_back({idx.hu(s, j), idx.hu(s, j) + 1, dt * hj.dn_dpo, dt * hj.db_dpo});
          }
          if (t >= 1) {
            L.deps.push_back({idx.hu(t - 1, j), idx.hu(t - 1, j) + 1, hj.dn_dvo, hj.db_dvo});
          }
        }
      };

      add_agent_line({rs[t].p, rs[t].vel, in.cfg.robot_radius}, 0.5, 0, -1);
      for (int j = 0; j < K; ++j) {
        if (j == k) continue;
        const Vec2 vj = t == 0 ? in.orca[j].state.v : Vec2(z.segment<2>(idx.hu(t - 1, j)));
        add_agent_line({hp[t][j], vj, in.orca[j].params.radius}, 0.5, 1, j);
      }
      for (const auto & d : in.discs) {
        add_agent_line({d.positions[t], Vec2::Zero(), d.radius}, 1.0, 2, -1);
      }
      for (const auto & sg : in.segments) {
        LineRec & L = H.lines[li++];
        const SegmentHalfPlaneJac sj =
          safe_segment_halfplane(H.p, prm.radius, sg, prm.tau, want_jac);
        L.n = sj.n;
        L.b = sj.b;
        if (want_jac) {
          L.deps.clear();
          for (int s = 0; s < t; ++s) {
            L.deps.push_back({idx.hu(s, k), idx.hu(s, k) + 1, dt * sj.dn_dp, dt * sj.db_dp});
          }
        }
      }
    }
  }

  zc = z;
  valid = true;
  jac_ok = want_jac;
}

MpcIndex make_index(const MpcConfig & cfg, int K, int P, int S)
{
  MpcIndex ix;
  ix.T = cfg.horizon_steps;
  ix.K = K;
  ix.P = P;
  ix.S = S;
  ix.m_ll = K > 0 ? K + P + S : 0;  // robot + (K-1) others + P discs + S segments
  ix.n_pairs = K + P + S;
  ix.block = 2 + 2 * K + K * (ix.m_ll + 1) + 7 + ix.n_pairs;
  ix.n_vars = ix.T * ix.block;
  ix.eq_step = 7 + 2 * K;
  ix.ineq_step = 4 + 2 * K * (ix.m_ll + 1) + ix.n_pairs;
  ix.n_eq = ix.T * ix.eq_step;
  ix.n_ineq = ix.T * ix.ineq_step;
  return ix;
}

double cost_value(const Workspace & w, const VecXd & z)
{
  const MpcWeights & W = w.in.cfg.weights;
  const int T = w.idx.T;
  double f = 0.0;
  for (int t = 1; t <= T; ++t) {
    const int xb = w.idx.x(t);
    const Vec2 p(z(xb), z(xb + 1));
    const double wp = W.goal * (t == T ? W.terminal : 1.0);
    f += wp * (p - w.in.goal).squaredNorm();
    if (W.align > 0.0) {
      const double th = z(xb + 2), v = z(xb + 3);
      const Vec2 d = w.in.goal - p;
      const double rho = std::sqrt(d.squaredNorm() + 1e-6);
      const double cr = (d.x() * std::sin(th) - d.y() * std::cos(th)) / rho;
      f += W.align * v * v * cr * cr;
    }
  }
  for (int t = 0; t < T; ++t) {
    const int ub = w.idx.u(t);
    const double uv = z(ub), uo = z(ub + 1);
    const double pv = t == 0 ? w.in.u_prev.v_cmd : z(w.idx.u(t - 1));
    const double po = t == 0 ? w.in.u_prev.omega_cmd : z(w.idx.u(t - 1) + 1);
    f += W.effort_v * uv * uv + W.effort_omega * uo * uo;
    f += W.rate_v * (uv - pv) * (uv - pv) + W.rate_omega * (uo - po) * (uo - po);
    for (int j = 0; j < w.idx.n_pairs; ++j) f += W.slack * z(w.idx.slack(t + 1, j));
  }
  return f;
}

/// Gradient pieces of the alignment residual cr = cross(heading, goal dir).
struct AlignGrad
{
  double cr, d_x, d_y, d_th;
};

AlignGrad align_grad(const Vec2 & goal, const Vec2 & p, double th)
{
  const Vec2 d = goal - p;
  const double rho = std::sqrt(d.squaredNorm() + 1e-6);
  const double sth = std::sin(th), cth = std::cos(th);
  const double num = d.x() * sth - d.y() * cth;
  AlignGrad g;
  g.cr = num / rho;
  const double rho3 = rho * rho * rho;
  g.d_x = -sth / rho + num * d.x() / rho3;
  g.d_y = cth / rho + num * d.y() / rho3;
  g.d_th = (d.x() * cth + d.y() * sth) / rho;
  return g;
}

void cost_grad_impl(const Workspace & w, const VecXd & z, VecXd & g)
{
  const MpcWeights & W = w.in.cfg.weights;
  const int T = w.idx.T;
  g.resize(w.idx.n_vars);
  g.setZero();
  for (int t = 1; t <= T; ++t) {
    const int xb = w.idx.x(t);
    const Vec2 p(z(xb), z(xb + 1));
    const double wp = W.goal * (t == T ? W.terminal : 1.0);
    g.segment<2>(xb) += 2.0 * wp * (p - w.in.goal);
    if (W.align > 0.0) {
      const double th = z(xb + 2), v = z(xb + 3);
      const AlignGrad a = align_grad(w.in.goal, p, th);
      const double s = 2.0 * W.align * v * a.cr;
      g(xb) += s * v * a.d_x;
      g(xb + 1) += s * v * a.d_y;
      g(xb + 2) += s * v * a.d_th;
      g(xb + 3) += s * a.cr;
    }
  }
  for (int t = 0; t < T; ++t) {
    const int ub = w.idx.u(t);
    const double uv = z(ub), uo = z(ub + 1);
    const double pv = t == 0 ? w.in.u_prev.v_cmd : z(w.idx.u(t - 1));
    const double po = t == 0 ? w.in.u_prev.omega_cmd : z(w.idx.u(t - 1) + 1);
    g(ub) += 2.0 * W.effort_v * uv + 2.0 * W.rate_v * (uv - pv);
    g(ub + 1) += 2.0 * W.effort_omega * uo + 2.0 * W.rate_omega * (uo - po);
    if (t >= 1) {
      g(w.idx.u(t - 1)) -= 2.0 * W.rate_v * (uv - pv);
      g(w.idx.u(t - 1) + 1) -= 2.0 * W.rate_omega * (uo - po);
    }
    for (int j = 0; j < w.idx.n_pairs; ++j) g(w.idx.slack(t + 1, j)) += W.slack;
  }
}

/// Gauss-Newton cost model; exact for the quadratic terms. Upper triangle.
void cost_hess_impl(const Workspace & w, const VecXd & z, SpMat & H)
{
  const MpcWeights & W = w.in.cfg.weights;
  const int T = w.idx.T;
  std::vector<Eigen::Triplet<double>> tp;
  tp.reserve(static_cast<size_t>(T) * 24);
  for (int t = 1; t <= T; ++t) {
    const int xb = w.idx.x(t);
    const double wp = W.goal * (t == T ? W.terminal : 1.0);
    tp.emplace_back(xb, xb, 2.0 * wp);
    tp.emplace_back(xb + 1, xb + 1, 2.0 * wp);
    if (W.align > 0.0) {
      const double th = z(xb + 2), v = z(xb + 3);
      const AlignGrad a = align_grad(w.in.goal, Vec2(z(xb), z(xb + 1)), th);
      const double r[4] = {v * a.d_x, v * a.d_y, v * a.d_th, a.cr};
      for (int i = 0; i < 4; ++i) {
        for (int j = i; j < 4; ++j) {
          tp.emplace_back(xb + i, xb + j, 2.0 * W.align * r[i] * r[j]);
        }
      }
    }
  }
  for (int t = 0; t < T; ++t) {
    const int ub = w.idx.u(t);
    tp.emplace_back(ub, ub, 2.0 * (W.effort_v + W.rate_v));
    tp.emplace_back(ub + 1, ub + 1, 2.0 * (W.effort_omega + W.rate_omega));
    if (t >= 1) {
      const int pb = w.idx.u(t - 1);
      tp.emplace_back(pb, pb, 2.0 * W.rate_v);
      tp.emplace_back(pb + 1, pb + 1, 2.0 * W.rate_omega);
      tp.emplace_back(pb, ub, -2.0 * W.rate_v);
      tp.emplace_back(pb + 1, ub + 1, -2.0 * W.rate_omega);
    }
  }
  H.resize(w.idx.n_vars, w.idx.n_vars);
  H.setFromTriplets(tp.begin(), tp.end());
}

void eq_value(Workspace & w, const VecXd & z, VecXd & c)
{
  w.refresh(z, false);
  const int T = w.idx.T, K = w.idx.K;
  const double dt = w.in.cfg.dt;
  c.resize(w.idx.n_eq);
  for (int t = 0; t < T; ++t) {
    const int r = w.idx.eq_dyn(t);
    const int xb1 = w.idx.x(t + 1);
    const double uv = z(w.idx.u(t)), uo = z(w.idx.u(t) + 1);
    c(r) = z(xb1) - (w.rs[t].p.x() + w.arcs[t].dx);
    c(r + 1) = z(xb1 + 1) - (w.rs[t].p.y() + w.arcs[t].dy);
    c(r + 2) = z(xb1 + 2) - (w.rs[t].th + uo * dt);
    c(r + 3) = z(xb1 + 3) - uv;
    c(r + 4) = z(xb1 + 4) - uo;
    c(r + 5) = z(xb1 + 5) - (uv - w.rs[t].v) / dt;
    c(r + 6) = z(xb1 + 6) - (uo - w.rs[t].om) / dt;
    for (int k = 0; k < K; ++k) {
      const int rk = w.idx.eq_stat(t, k);
      const HumanStep & H = w.hs[t][k];
      const double mu = z(w.idx.mu(t, k));
      Vec2 F = 2.0 * (1.0 + mu) * H.ut - 2.0 * H.vint;
      for (int i = 0; i < w.idx.m_ll; ++i) F -= z(w.idx.lam(t, k, i)) * H.lines[i].n;
      c(rk) = F.x();
      c(rk + 1) = F.y();
    }
  }
}

template <class Sink>
void emit_eq_jac(Workspace & w, const VecXd & z, Sink && put)
{
  const int T = w.idx.T, K = w.idx.K;
  const double dt = w.in.cfg.dt;
  for (int t = 0; t < T; ++t) {
    const int r = w.idx.eq_dyn(t);
    const int xb1 = w.idx.x(t + 1);
    const int ub = w.idx.u(t);
    for (int i = 0; i < 7; ++i) put(r + i, xb1 + i, 1.0);
    put(r, ub, -w.arcs[t].dx_dv);
    put(r, ub + 1, -w.arcs[t].dx_domega);
    put(r + 1, ub, -w.arcs[t].dy_dv);
    put(r + 1, ub + 1, -w.arcs[t].dy_domega);
    put(r + 2, ub + 1, -dt);
    put(r + 3, ub, -1.0);
    put(r + 4, ub + 1, -1.0);
    put(r + 5, ub, -1.0 / dt);
    put(r + 6, ub + 1, -1.0 / dt);
    if (t >= 1) {
      const int xb = w.idx.x(t);
      put(r, xb, -1.0);
      put(r + 1, xb + 1, -1.0);
      put(r, xb + 2, -w.arcs[t].dx_dtheta);
      put(r + 1, xb + 2, -w.arcs[t].dy_dtheta);
      put(r + 2, xb + 2, -1.0);
      put(r + 5, xb + 3, 1.0 / dt);
      put(r + 6, xb + 4, 1.0 / dt);
    }
    for (int k = 0; k < K; ++k) {
      const int rk = w.idx.eq_stat(t, k);
      const HumanStep & H = w.hs[t][k];
      const int hu = w.idx.hu(t, k);
      const double mu = z(w.idx.mu(t, k));
      put(rk, hu, 2.0 * (1.0 + mu));
      put(rk + 1, hu + 1, 2.0 * (1.0 + mu));
      put(rk, w.idx.mu(t, k), 2.0 * H.ut.x());
      put(rk + 1, w.idx.mu(t, k), 2.0 * H.ut.y());
      for (int i = 0; i < w.idx.m_ll; ++i) {
        const LineRec & L = H.lines[i];
        const double lam = z(w.idx.lam(t, k, i));
        put(rk, w.idx.lam(t, k, i), -L.n.x());
        put(rk + 1, w.idx.lam(t, k, i), -L.n.y());
        for (const Dep & d : L.deps) {
          put(rk, d.c0, -lam * d.dn(0, 0));
          put(rk, d.c1, -lam * d.dn(0, 1));
          put(rk + 1, d.c0, -lam * d.dn(1, 0));
          put(rk + 1, d.c1, -lam * d.dn(1, 1));
        }
      }
      for (int s = 0; s < t; ++s) {
        const int cb = w.idx.hu(s, k);
        const Mat2 G = -2.0 * dt * H.dvint_dp;
        put(rk, cb, G(0, 0));
        put(rk, cb + 1, G(0, 1));
        put(rk + 1, cb, G(1, 0));
        put(rk + 1, cb + 1, G(1, 1));
      }
    }
  }
}

void ineq_value(Workspace & w, const VecXd & z, VecXd & g)
{
  w.refresh(z, false);
  const MpcConfig & cfg = w.in.cfg;
  const ControlBounds & B = cfg.bounds;
  const int T = w.idx.T, K = w.idx.K;
  g.resize(w.idx.n_ineq);
  for (int t = 0; t < T; ++t) {
    const int r = w.idx.ineq_rate(t);
    const double uv = z(w.idx.u(t)), uo = z(w.idx.u(t) + 1);
    const double pv = t == 0 ? w.in.u_prev.v_cmd : z(w.idx.u(t - 1));
    const double po = t == 0 ? w.in.u_prev.omega_cmd : z(w.idx.u(t - 1) + 1);
    g(r) = (uv - pv) - B.dv_max;
    g(r + 1) = -(uv - pv) - B.dv_max;
    g(r + 2) = (uo - po) - B.domega_max;
    g(r + 3) = -(uo - po) - B.domega_max;
    for (int k = 0; k < K; ++k) {
      const HumanStep & H = w.hs[t][k];
      const double vmax = w.in.orca[k].params.max_speed;
      const int rp = w.idx.ineq_primal(t, k);
      const int rc = w.idx.ineq_compl(t, k);
      for (int i = 0; i < w.idx.m_ll; ++i) {
        const LineRec & L = H.lines[i];
        const double resid = L.n.dot(H.ut) - L.b;
        g(rp + i) = -resid;
        g(rc + i) = z(w.idx.lam(t, k, i)) * resid - w.in.eps;
      }
      g(rp + w.idx.m_ll) = H.ut.squaredNorm() - vmax * vmax;
      g(rc + w.idx.m_ll) =
        z(w.idx.mu(t, k)) * (vmax * vmax - H.ut.squaredNorm()) - w.in.eps;
    }
    const int tt = t + 1;
    const Vec2 pr = w.rs[tt].p;
    int j = 0;
    for (int k = 0; k < K; ++k, ++j) {
      const double dl = cfg.robot_radius + w.in.orca[k].params.radius + cfg.margin_human;
      g(w.idx.ineq_coll(tt, j)) =
        dl * dl - (pr - w.hp[tt][k]).squaredNorm() - z(w.idx.slack(tt, j));
    }
    for (const auto & d : w.in.discs) {
      const double dl = cfg.robot_radius + d.radius + cfg.margin_human;
      g(w.idx.ineq_coll(tt, j)) =
        dl * dl - (pr - d.positions[tt]).squaredNorm() - z(w.idx.slack(tt, j));
      ++j;
    }
    for (const auto & sg : w.in.segments) {
      const Vec2 cp = closest_point_on_segment(pr, sg);
      const double ds = cfg.robot_radius + cfg.margin_segment;
      g(w.idx.ineq_coll(tt, j)) =
        ds * ds - (pr - cp).squaredNorm() - z(w.idx.slack(tt, j));
      ++j;
    }
  }
}

template <class Sink>
void emit_ineq_jac(Workspace & w, const VecXd & z, Sink && put)
{
  const int T = w.idx.T, K = w.idx.K;
  const double dt = w.in.cfg.dt;
  for (int t = 0; t < T; ++t) {
    const int r = w.idx.ineq_rate(t);
    const int ub = w.idx.u(t);
    put(r, ub, 1.0);
    put(r + 1, ub, -1.0);
    put(r + 2, ub + 1, 1.0);
    put(r + 3, ub + 1, -1.0);
    if (t >= 1) {
      const int pb = w.idx.u(t - 1);
      put(r, pb, -1.0);
      put(r + 1, pb, 1.0);
      put(r + 2, pb + 1, -1.0);
      put(r + 3, pb + 1, 1.0);
    }
    for (int k = 0; k < K; ++k) {
      const HumanStep & H = w.hs[t][k];
      const double vmax = w.in.orca[k].params.max_speed;
      const int rp = w.idx.ineq_primal(t, k);
      const int rc = w.idx.ineq_compl(t, k);
      const int hu = w.idx.hu(t, k);
      const double mu = z(w.idx.mu(t, k));
      for (int i = 0; i < w.idx.m_ll; ++i) {
        const LineRec & L = H.lines[i];
        const double lam = z(w.idx.lam(t, k, i));
        put(rp + i, hu, -L.n.x());
        put(rp + i, hu + 1, -L.n.y());
        put(rc + i, w.idx.lam(t, k, i), L.n.dot(H.ut) - L.b);
        put(rc + i, hu, lam * L.n.x());
        put(rc + i, hu + 1, lam * L.n.y());
        for (const Dep & d : L.deps) {
          const RowVec2 gp = d.db - H.ut.transpose() * d.dn;
          put(rp + i, d.c0, gp(0));
          put(rp + i, d.c1, gp(1));
          put(rc + i, d.c0, -lam * gp(0));
          put(rc + i, d.c1, -lam * gp(1));
        }
      }
      put(rp + w.idx.m_ll, hu, 2.0 * H.ut.x());
      put(rp + w.idx.m_ll, hu + 1, 2.0 * H.ut.y());
      put(rc + w.idx.m_ll, w.idx.mu(t, k), vmax * vmax - H.ut.squaredNorm());
      put(rc + w.idx.m_ll, hu, -2.0 * mu * H.ut.x());
      put(rc + w.idx.m_ll, hu + 1, -2.0 * mu * H.ut.y());
    }
    const int tt = t + 1;
    const int xb = w.idx.x(tt);
    const Vec2 pr = w.rs[tt].p;
    int j = 0;
    for (int k = 0; k < K; ++k, ++j) {
      const int row = w.idx.ineq_coll(tt, j);
      const Vec2 dv = pr - w.hp[tt][k];
      put(row, xb, -2.0 * dv.x());
      put(row, xb + 1, -2.0 * dv.y());
      for (int s = 0; s < tt; ++s) {
        const int cb = w.idx.hu(s, k);
        put(row, cb, 2.0 * dt * dv.x());
        put(row, cb + 1, 2.0 * dt * dv.y());
      }
      put(row, w.idx.slack(tt, j), -1.0);
    }
    for (const auto & d : w.in.discs) {
      const int row = w.idx.ineq_coll(tt, j);
      const Vec2 dv = pr - d.positions[tt];
      put(row, xb, -2.0 * dv.x());
      put(row, xb + 1, -2.0 * dv.y());
      put(row, w.idx.slack(tt, j), -1.0);
      ++j;
    }
    for (const auto & sg : w.in.segments) {
      const int row = w.idx.ineq_coll(tt, j);
      const Vec2 dv = pr - closest_point_on_segment(pr, sg);
      put(row, xb, -2.0 * dv.x());
      put(row, xb + 1, -2.0 * dv.y());
      put(row, w.idx.slack(tt, j), -1.0);
      ++j;
    }
  }
}

void validate_build_inputs(const BuildInputs & in)
{
  const int T = in.cfg.horizon_steps;
  if (T < 1 || !(in.cfg.dt > 0.0)) {
    throw std::invalid_argument("build_mpc_nlp: horizon_steps < 1 or dt <= 0");
  }
  if (!in.goal.allFinite() || !std::isfinite(in.x0.x) || !std::isfinite(in.x0.y) ||
      !std::isfinite(in.x0.theta) || !std::isfinite(in.x0.v) || !std::isfinite(in.x0.omega))
  {
    throw std::invalid_argument("build_mpc_nlp: non-finite start or goal");
  }
  for (const auto & h : in.orca) {
    if (!h.state.p.allFinite() || !h.state.v.allFinite() || !(h.params.radius > 0.0) ||
        !(h.params.max_speed > 0.0) || !(h.params.tau > 0.0))
    {
      throw std::invalid_argument("build_mpc_nlp: bad embedded human");
    }
  }
  for (const auto & d : in.discs) {
    if (static_cast<int>(d.positions.size()) != T + 1) {
      throw std::invalid_argument("build_mpc_nlp: disc needs positions for steps 0..T");
    }
    for (const auto & p : d.positions) {
      if (!p.allFinite()) throw std::invalid_argument("build_mpc_nlp: non-finite disc");
    }
  }
}

}  // namespace

SolverConfig default_mpc_solver()
{
  SolverConfig c;
  c.max_iterations = 40;
  c.kkt_tolerance = 1e-6;
  c.max_wall_time_s = 0.0;  // iteration-capped: repeated runs are bit-identical
  return c;
}

BuiltNlp build_mpc_nlp(const BuildInputs & in)
{
  validate_build_inputs(in);
  const int K = static_cast<int>(in.orca.size());
  const int P = static_cast<int>(in.discs.size());
  const int S = static_cast<int>(in.segments.size());
  const MpcIndex idx = make_index(in.cfg, K, P, S);

  auto ws = std::make_shared<Workspace>();
  ws->in = in;
  ws->idx = idx;
  ws->goals.resize(K);
  for (int k = 0; k < K; ++k) {
    ws->goals[k] =
      in.orca[k].state.p + in.orca[k].state.v * in.orca[k].params.intent_horizon;
  }

  NlpProblem p;
  p.n_vars = idx.n_vars;
  p.n_eq = idx.n_eq;
  p.n_ineq = idx.n_ineq;
  p.cost = [ws](const VecXd & z) { return cost_value(*ws, z); };
  p.cost_grad = [ws](const VecXd & z, VecXd & g) { cost_grad_impl(*ws, z, g); };
  p.cost_hess = [ws](const VecXd & z, SpMat & H) { cost_hess_impl(*ws, z, H); };
  p.eq = [ws](const VecXd & z, VecXd & c) { eq_value(*ws, z, c); };
  p.eq_jac = [ws](const VecXd & z, SpMat & J) {
    ws->refresh(z, true);
    std::vector<Eigen::Triplet<double>> tp;
    emit_eq_jac(*ws, z, [&tp](int r, int c, double v) { tp.emplace_back(r, c, v); });
    J.resize(ws->idx.n_eq, ws->idx.n_vars);
    J.setFromTriplets(tp.begin(), tp.end());
  };
  p.ineq = [ws](const VecXd & z, VecXd & g) { ineq_value(*ws, z, g); };
  p.ineq_jac = [ws](const VecXd & z, SpMat & J) {
    ws->refresh(z, true);
    std::vector<Eigen::Triplet<double>> tp;
    emit_ineq_jac(*ws, z, [&tp](int r, int c, double v) { tp.emplace_back(r, c, v); });
    J.resize(ws->idx.n_ineq, ws->idx.n_vars);
    J.setFromTriplets(tp.begin(), tp.end());
  };

  p.lb = VecXd::Constant(idx.n_vars, -kInf);
  p.ub = VecXd::Constant(idx.n_vars, kInf);
  const ControlBounds & B = in.cfg.bounds;
  for (int t = 0; t < idx.T; ++t) {
    p.lb(idx.u(t)) = B.v_min;
    p.ub(idx.u(t)) = B.v_max;
    p.lb(idx.u(t) + 1) = -B.omega_max;
    p.ub(idx.u(t) + 1) = B.omega_max;
    for (int k = 0; k < K; ++k) {
      const double cap = in.orca[k].params.max_speed + 1.0;
      p.lb(idx.hu(t, k)) = -cap;
      p.ub(idx.hu(t, k)) = cap;
      p.lb(idx.hu(t, k) + 1) = -cap;
      p.ub(idx.hu(t, k) + 1) = cap;
      for (int i = 0; i <= idx.m_ll; ++i) p.lb(idx.lam(t, k, i)) = 0.0;
    }
    for (int j = 0; j < idx.n_pairs; ++j) p.lb(idx.slack(t + 1, j)) = 0.0;
  }

  // The emission structure is iterate-independent, so one pass at any finite
  // point yields the (fixed) sparsity superset.
  {
    const VecXd zp = VecXd::Zero(idx.n_vars);
    ws->refresh(zp, true);
    std::set<std::pair<int, int>> se, si;
    emit_eq_jac(*ws, zp, [&se](int r, int c, double) { se.emplace(r, c); });
    emit_ineq_jac(*ws, zp, [&si](int r, int c, double) { si.emplace(r, c); });
    p.eq_pattern.assign(se.begin(), se.end());
    p.ineq_pattern.assign(si.begin(), si.end());
    ws->valid = false;
  }

  return {std::move(p), idx};
}

VecXd initial_guess(
  const BuildInputs & in, const MpcIndex & idx, const std::vector<Control> & controls)
{
  if (static_cast<int>(controls.size()) != idx.T) {
    throw std::invalid_argument("initial_guess: need one control per step");
  }
  const int T = idx.T, K = idx.K;
  const double dt = in.cfg.dt;
  const ControlBounds & B = in.cfg.bounds;
  VecXd z = VecXd::Zero(idx.n_vars);

  double px = in.x0.x, py = in.x0.y, th = in.x0.theta;
  double cv = in.x0.v, co = in.x0.omega;
  std::vector<Vec2> hpos(K), hvel(K), goals(K);
  for (int k = 0; k < K; ++k) {
    hpos[k] = in.orca[k].state.p;
    hvel[k] = in.orca[k].state.v;
    goals[k] = in.orca[k].state.p + in.orca[k].state.v * in.orca[k].params.intent_horizon;
  }

  for (int t = 0; t < T; ++t) {
    const double uv = clampd(controls[t].v_cmd, B.v_min, B.v_max);
    const double uo = clampd(controls[t].omega_cmd, -B.omega_max, B.omega_max);
    z(idx.u(t)) = uv;
    z(idx.u(t) + 1) = uo;

    const Vec2 pr(px, py);
    const Vec2 vr = cv * Vec2(std::cos(th), std::sin(th));
    std::vector<Vec2> ut(K);
    for (int k = 0; k < K; ++k) {
      const AgentParams & prm = in.orca[k].params;
      OrcaProblem pb;
      pb.max_speed = prm.max_speed;
      pb.v_intent = intended_velocity_to_goal(hpos[k], goals[k], prm.intent_horizon,
        prm.max_speed);
      const DiscAgent self{hpos[k], hvel[k], prm.radius};
      const auto push = [&pb](const HalfPlaneJac & hj) {
        pb.lines.push_back({hj.n, hj.b});
      };
      push(safe_agent_halfplane(self, {pr, vr, in.cfg.robot_radius}, prm.tau, 0.5, dt, false));
      for (int j = 0; j < K; ++j) {
        if (j == k) continue;
        push(safe_agent_halfplane(self, {hpos[j], hvel[j], in.orca[j].params.radius},
          prm.tau, 0.5, dt, false));
      }
      for (const auto & d : in.discs) {
        push(safe_agent_halfplane(self, {d.positions[t], Vec2::Zero(), d.radius},
          prm.tau, 1.0, dt, false));
      }
      for (const auto & sg : in.segments) {
        const SegmentHalfPlaneJac sj = safe_segment_halfplane(hpos[k], prm.radius, sg,
          prm.tau, false);
        pb.lines.push_back({sj.n, sj.b});
      }
      const OrcaSolution os = solve_orca(pb);
      z.segment<2>(idx.hu(t, k)) = os.v_star;
      for (int i = 0; i < idx.m_ll; ++i) z(idx.lam(t, k, i)) = std::max(0.0, os.lambda[i]);
      z(idx.mu(t, k)) = std::max(0.0, os.mu);
      ut[k] = os.v_star;
    }

    const detail::ArcStep a = detail::arc_step(th, uv, uo, dt);
    const int xb = idx.x(t + 1);
    z(xb) = px + a.dx;
    z(xb + 1) = py + a.dy;
    z(xb + 2) = th + uo * dt;
    z(xb + 3) = uv;
    z(xb + 4) = uo;
    z(xb + 5) = (uv - cv) / dt;
    z(xb + 6) = (uo - co) / dt;
    px = z(xb);
    py = z(xb + 1);
    th = z(xb + 2);
    cv = uv;
    co = uo;
    for (int k = 0; k < K; ++k) {
      hpos[k] += dt * ut[k];
      hvel[k] = ut[k];
    }

    const Vec2 prn(px, py);
    int j = 0;
    for (int k = 0; k < K; ++k, ++j) {
      const double dl = in.cfg.robot_radius + in.orca[k].params.radius + in.cfg.margin_human;
      z(idx.slack(t + 1, j)) = std::max(0.0, dl * dl - (prn - hpos[k]).squaredNorm());
    }
    for (const auto & d : in.discs) {
      const double dl = in.cfg.robot_radius + d.radius + in.cfg.margin_human;
      z(idx.slack(t + 1, j)) =
        std::max(0.0, dl * dl - (prn - d.positions[t + 1]).squaredNorm());
      ++j;
    }
    for (const auto & sg : in.segments) {
      const Vec2 cp = closest_point_on_segment(prn, sg);
      const double ds = in.cfg.robot_radius + in.cfg.margin_segment;
      z(idx.slack(t + 1, j)) = std::max(0.0, ds * ds - (prn - cp).squaredNorm());
      ++j;
    }
  }
  return z;
}

std::vector<int> select_orca_humans(
  const RobotState & robot, const std::vector<HumanState> & humans,
  const std::vector<AgentParams> & params, double robot_radius, int k)
{
  if (humans.size() != params.size()) {
    throw std::invalid_argument("select_orca_humans: humans/params size mismatch");
  }
  const int n = static_cast<int>(humans.size());
  std::vector<double> ttc(n), dist(n);
  for (int i = 0; i < n; ++i) {
    dist[i] = (humans[i].p - robot.position()).norm();
    ttc[i] = time_to_collision(robot.position(), robot.velocity(), humans[i].p,
      humans[i].v, robot_radius + params[i].radius);
  }
  std::vector<int> ord(n);
  std::iota(ord.begin(), ord.end(), 0);
  std::sort(ord.begin(), ord.end(), [&](int a, int b) {
    if (ttc[a] != ttc[b]) return ttc[a] < ttc[b];
    if (dist[a] != dist[b]) return dist[a] < dist[b];
    return a < b;
  });
  ord.resize(std::max(0, std::min(k, n)));
  return ord;
}

OrcaProblem lower_level_problem(
  const BuildInputs & in, const MpcSolution & sol, int t, int k)
{
  const int T = in.cfg.horizon_steps;
  const int K = static_cast<int>(in.orca.size());
  if (t < 0 || t >= T || k < 0 || k >= K) {
    throw std::invalid_argument("lower_level_problem: step or human out of range");
  }
  const AgentParams & prm = in.orca[k].params;
  const auto hstate = [&](int kk) -> const HumanState & {
    return sol.states[t].humans[in.orca[kk].index];
  };
  OrcaProblem pb;
  pb.max_speed = prm.max_speed;
  const Vec2 goal_k = in.orca[k].state.p + in.orca[k].state.v * prm.intent_horizon;
  pb.v_intent = intended_velocity_to_goal(hstate(k).p, goal_k, prm.intent_horizon,
    prm.max_speed);
  const DiscAgent self{hstate(k).p, hstate(k).v, prm.radius};
  const RobotState & R = sol.states[t].robot;
  const auto push = [&pb](const HalfPlaneJac & hj) { pb.lines.push_back({hj.n, hj.b}); };
  push(safe_agent_halfplane(self, {R.position(), R.velocity(), in.cfg.robot_radius},
    prm.tau, 0.5, in.cfg.dt, false));
  for (int j = 0; j < K; ++j) {
    if (j == k) continue;
    push(safe_agent_halfplane(self, {hstate(j).p, hstate(j).v, in.orca[j].params.radius},
      prm.tau, 0.5, in.cfg.dt, false));
  }
  for (const auto & d : in.discs) {
    push(safe_agent_halfplane(self, {d.positions[t], Vec2::Zero(), d.radius}, prm.tau,
      1.0, in.cfg.dt, false));
  }
  for (const auto & sg : in.segments) {
    const SegmentHalfPlaneJac sj =
      safe_segment_halfplane(hstate(k).p, prm.radius, sg, prm.tau, false);
    pb.lines.push_back({sj.n, sj.b});
  }
  return pb;
}

std::vector<std::vector<LowerKkt>> kkt_residuals_lower(
  const BuildInputs & in, const MpcSolution & sol)
{
  const int T = in.cfg.horizon_steps;
  const int K = static_cast<int>(in.orca.size());
  std::vector<std::vector<LowerKkt>> out(T, std::vector<LowerKkt>(K));
  for (int t = 0; t < T; ++t) {
    for (int k = 0; k < K; ++k) {
      const OrcaProblem pb = lower_level_problem(in, sol, t, k);
      const int m = static_cast<int>(pb.lines.size());
      const Vec2 ut = sol.human_vel[t][k];
      const VecXd & d = sol.duals[t][k];
      LowerKkt r;
      Vec2 st = 2.0 * (ut - pb.v_intent) + 2.0 * d(m) * ut;
      r.primal = ut.squaredNorm() - pb.max_speed * pb.max_speed;
      r.dual = -d(m);
      r.complementarity = std::abs(d(m) * (pb.max_speed * pb.max_speed - ut.squaredNorm()));
      for (int i = 0; i < m; ++i) {
        st -= d(i) * pb.lines[i].n;
        const double resid = pb.lines[i].n.dot(ut) - pb.lines[i].b;
        r.primal = std::max(r.primal, -resid);
        r.dual = std::max(r.dual, -d(i));
        r.complementarity = std::max(r.complementarity, std::abs(d(i) * resid));
      }
      r.stationarity = st.norm();
      r.primal = std::max(0.0, r.primal);
      r.dual = std::max(0.0, r.dual);
      out[t][k] = r;
    }
  }
  return out;
}

std::vector<std::vector<Vec2>> refine_lower_level(
  const BuildInputs & in, const MpcSolution & sol, double eps_target)
{
  const int T = in.cfg.horizon_steps;
  const int K = static_cast<int>(in.orca.size());
  std::vector<std::vector<Vec2>> out(T, std::vector<Vec2>(K, Vec2::Zero()));

  SolverConfig scfg;
  scfg.max_iterations = 100;
  scfg.kkt_tolerance = 1e-9;
  scfg.max_wall_time_s = 0.0;

  for (int t = 0; t < T; ++t) {
    for (int k = 0; k < K; ++k) {
      const OrcaProblem pb = lower_level_problem(in, sol, t, k);
      const int m = static_cast<int>(pb.lines.size());
      const int n = 2 + m + 1;
      const Vec2 anchor = sol.human_vel[t][k];
      const auto eps_cur = std::make_shared<double>(std::max(sol.eps, eps_target));

      NlpProblem np;
      np.n_vars = n;
      np.cost = [anchor](const VecXd & w) {
        return (Vec2(w.head<2>()) - anchor).squaredNorm();
      };
      np.cost_grad = [anchor, n](const VecXd & w, VecXd & g) {
        g.resize(n);
        g.setZero();
        g.head<2>() = 2.0 * (Vec2(w.head<2>()) - anchor);
      };
      np.cost_hess = [n](const VecXd &, SpMat & H) {
        std::vector<Eigen::Triplet<double>> tp{{0, 0, 2.0}, {1, 1, 2.0}};
        H.resize(n, n);
        H.setFromTriplets(tp.begin(), tp.end());
      };
      np.n_eq = 2;
      np.eq = [pb, m](const VecXd & w, VecXd & c) {
        const Vec2 ut = w.head<2>();
        Vec2 F = 2.0 * (1.0 + w(2 + m)) * ut - 2.0 * pb.v_intent;
        for (int i = 0; i < m; ++i) F -= w(2 + i) * pb.lines[i].n;
        c.resize(2);
        c << F.x(), F.y();
      };
      np.eq_jac = [pb, m, n](const VecXd & w, SpMat & J) {
        std::vector<Eigen::Triplet<double>> tp;
        const double mu = w(2 + m);
        tp.emplace_back(0, 0, 2.0 * (1.0 + mu));
        tp.emplace_back(1, 1, 2.0 * (1.0 + mu));
        for (int i = 0; i < m; ++i) {
          tp.emplace_back(0, 2 + i, -pb.lines[i].n.x());
          tp.emplace_back(1, 2 + i, -pb.lines[i].n.y());
        }
        tp.emplace_back(0, 2 + m, 2.0 * w(0));
        tp.emplace_back(1, 2 + m, 2.0 * w(1));
        J.resize(2, n);
        J.setFromTriplets(tp.begin(), tp.end());
      };
      np.n_ineq = 2 * (m + 1);
      np.ineq = [pb, m, eps_cur](const VecXd & w, VecXd & g) {
        const Vec2 ut = w.head<2>();
        g.resize(2 * (m + 1));
        for (int i = 0; i < m; ++i) {
          const double resid = pb.lines[i].n.dot(ut) - pb.lines[i].b;
          g(i) = -resid;
          g(m + 1 + i) = w(2 + i) * resid - *eps_cur;
        }
        const double sp = pb.max_speed * pb.max_speed - ut.squaredNorm();
        g(m) = -sp;
        g(2 * m + 1) = w(2 + m) * sp - *eps_cur;
      };
      np.ineq_jac = [pb, m, n](const VecXd & w, SpMat & J) {
        const Vec2 ut = w.head<2>();
        std::vector<Eigen::Triplet<double>> tp;
        for (int i = 0; i < m; ++i) {
          tp.emplace_back(i, 0, -pb.lines[i].n.x());
          tp.emplace_back(i, 1, -pb.lines[i].n.y());
          const double resid = pb.lines[i].n.dot(ut) - pb.lines[i].b;
          tp.emplace_back(m + 1 + i, 2 + i, resid);
          tp.emplace_back(m + 1 + i, 0, w(2 + i) * pb.lines[i].n.x());
          tp.emplace_back(m + 1 + i, 1, w(2 + i) * pb.lines[i].n.y());
        }
        tp.emplace_back(m, 0, 2.0 * ut.x());
        tp.emplace_back(m, 1, 2.0 * ut.y());
        const double sp = pb.max_speed * pb.max_speed - ut.squaredNorm();
        tp.emplace_back(2 * m + 1, 2 + m, sp);
        tp.emplace_back(2 * m + 1, 0, -2.0 * w(2 + m) * ut.x());
        tp.emplace_back(2 * m + 1, 1, -2.0 * w(2 + m) * ut.y());
        J.resize(2 * (m + 1), n);
        J.setFromTriplets(tp.begin(), tp.end());
      };
      np.lb = VecXd::Constant(n, 0.0);
      np.ub = VecXd::Constant(n, kInf);
      np.lb.head<2>().setConstant(-(pb.max_speed + 1.0));
      np.ub.head<2>().setConstant(pb.max_speed + 1.0);

      VecXd w0(n);
      w0.head<2>() = anchor;
      for (int i = 0; i <= m; ++i) w0(2 + i) = std::max(0.0, sol.duals[t][k](i));

      SqpSolver solver(scfg);
      for (;;) {
        const NlpSolution ns = solver.solve(np, w0);
        w0 = ns.z;
        if (*eps_cur <= eps_target) break;
        *eps_cur = std::max(eps_target, 0.1 * *eps_cur);
      }
      out[t][k] = w0.head<2>();
    }
  }
  return out;
}

std::vector<MovingDisc> predict_cvmm(
  const std::vector<HumanState> & humans, const std::vector<AgentParams> & params,
  double dt, int steps)
{
  if (humans.size() != params.size()) {
    throw std::invalid_argument("predict_cvmm: humans/params size mismatch");
  }
  std::vector<MovingDisc> out(humans.size());
  for (size_t i = 0; i < humans.size(); ++i) {
    out[i].radius = params[i].radius;
    out[i].index = static_cast<int>(i);
    out[i].positions.resize(steps + 1);
    for (int t = 0; t <= steps; ++t) {
      out[i].positions[t] = humans[i].p + (t * dt) * humans[i].v;
    }
  }
  return out;
}

namespace
{

void validate_plan_inputs(
  const JointState & obs, const std::vector<AgentParams> & params, const Vec2 & goal)
{
  if (obs.humans.size() != params.size()) {
    throw std::invalid_argument("plan: humans/params size mismatch");
  }
  const RobotState & r = obs.robot;
  if (!std::isfinite(r.x) || !std::isfinite(r.y) || !std::isfinite(r.theta) ||
      !std::isfinite(r.v) || !std::isfinite(r.omega) || !goal.allFinite())
  {
    throw std::invalid_argument("plan: non-finite robot state or goal");
  }
  for (const auto & h : obs.humans) {
    if (!h.p.allFinite() || !h.v.allFinite()) {
      throw std::invalid_argument("plan: non-finite human state");
    }
  }
}

/// Warm path: shift the previous plan one step. Cold path: a rate-respecting
/// pursuit rollout toward the goal. Both feed a dynamically rolled guess, so
/// the first iterate is already a usable plan rather than a standstill.
std::vector<Control> guess_controls(const std::vector<Control> & warm, const BuildInputs & in)
{
  const MpcConfig & cfg = in.cfg;
  const int T = cfg.horizon_steps;
  std::vector<Control> c(T);
  if (static_cast<int>(warm.size()) == T) {
    for (int t = 0; t < T; ++t) c[t] = warm[std::min(t + 1, T - 1)];
    return c;
  }
  const ControlBounds & B = cfg.bounds;
  const double dt = cfg.dt;
  double px = in.x0.x, py = in.x0.y, th = in.x0.theta;
  double pv = clampd(in.u_prev.v_cmd, B.v_min, B.v_max);
  double po = clampd(in.u_prev.omega_cmd, -B.omega_max, B.omega_max);
  for (int t = 0; t < T; ++t) {
    const Vec2 to_goal = in.goal - Vec2(px, py);
    const double dist = to_goal.norm();
    double v_des = 0.0, o_des = 0.0;
    if (dist > 1e-9) {
      const double err = wrap_angle(std::atan2(to_goal.y(), to_goal.x()) - th);
      o_des = clampd(1.5 * err, -B.omega_max, B.omega_max);
      // braking envelope: never faster than what still stops at the goal
      // under the per-step rate bound
      const double v_stop = std::sqrt(2.0 * (B.dv_max / dt) * dist);
      v_des = clampd(std::max(0.0, std::cos(err)) * std::min(B.v_max, v_stop),
        B.v_min, B.v_max);
    }
    const double uv = clampd(v_des, pv - B.dv_max, pv + B.dv_max);
    const double uo = clampd(o_des, po - B.domega_max, po + B.domega_max);
    c[t] = {uv, uo};
    const detail::ArcStep a = detail::arc_step(th, uv, uo, dt);
    px += a.dx;
    py += a.dy;
    th += uo * dt;
    pv = uv;
    po = uo;
  }
  return c;
}

/// Retry guess after a failed solve: decelerate to rest at the rate bounds.
/// A near-standstill rollout keeps the embedded agent programs well posed
/// when a goal-seeking rollout would thread the robot through the crowd.
std::vector<Control> braking_controls(const BuildInputs & in)
{
  const ControlBounds & B = in.cfg.bounds;
  std::vector<Control> c(in.cfg.horizon_steps);
  double pv = clampd(in.u_prev.v_cmd, B.v_min, B.v_max);
  double po = clampd(in.u_prev.omega_cmd, -B.omega_max, B.omega_max);
  for (Control & ct : c) {
    pv = clampd(0.0, pv - B.dv_max, pv + B.dv_max);
    po = clampd(0.0, po - B.domega_max, po + B.domega_max);
    ct = {pv, po};
  }
  return c;
}

MpcSolution extract_solution(
  const BuildInputs & in, const MpcIndex & idx, const VecXd & z, const JointState & obs)
{
  const int T = idx.T, K = idx.K;
  const double dt = in.cfg.dt;
  const ControlBounds & B = in.cfg.bounds;
  MpcSolution out;
  out.controls.resize(T);
  for (int t = 0; t < T; ++t) {
    out.controls[t] = {clampd(z(idx.u(t)), B.v_min, B.v_max),
      clampd(z(idx.u(t) + 1), -B.omega_max, B.omega_max)};
  }
  out.human_vel.assign(T, std::vector<Vec2>(K, Vec2::Zero()));
  out.duals.assign(T, std::vector<VecXd>(K));
  for (int t = 0; t < T; ++t) {
    for (int k = 0; k < K; ++k) {
      out.human_vel[t][k] = z.segment<2>(idx.hu(t, k));
      VecXd d(idx.m_ll + 1);
      for (int i = 0; i <= idx.m_ll; ++i) d(i) = z(idx.lam(t, k, i));
      out.duals[t][k] = d;
    }
  }
  for (int k = 0; k < K; ++k) out.orca_indices.push_back(in.orca[k].index);

  out.states.resize(T + 1);
  out.states[0] = obs;
  for (int t = 0; t < T; ++t) {
    out.states[t + 1].robot = robot_step(out.states[t].robot, out.controls[t], dt);
    out.states[t + 1].humans = out.states[t].humans;
    for (int k = 0; k < K; ++k) {
      HumanState & H = out.states[t + 1].humans[in.orca[k].index];
      H.p = out.states[t].humans[in.orca[k].index].p + dt * out.human_vel[t][k];
      H.v = out.human_vel[t][k];
    }
    for (const auto & d : in.discs) {
      HumanState & H = out.states[t + 1].humans[d.index];
      H.p = d.positions[t + 1];
      H.v = (d.positions[t + 1] - d.positions[t]) / dt;
    }
  }
  return out;
}

MpcSolution fallback_plan(const BuildInputs & in, const JointState & obs)
{
  const MpcConfig & cfg = in.cfg;
  const ControlBounds & B = cfg.bounds;
  const int T = cfg.horizon_steps;
  const int K = static_cast<int>(in.orca.size());
  const double dt = cfg.dt;
  const auto toward_zero = [](double v, double step) {
    return v > 0.0 ? std::max(0.0, v - step) : std::min(0.0, v + step);
  };
  MpcSolution out;
  out.status = PlanStatus::fallback;
  out.controls.resize(T);
  double v = clampd(in.u_prev.v_cmd, B.v_min, B.v_max);
  double o = clampd(in.u_prev.omega_cmd, -B.omega_max, B.omega_max);
  for (int t = 0; t < T; ++t) {
    v = toward_zero(v, B.dv_max);
    o = toward_zero(o, B.domega_max);
    out.controls[t] = {v, o};
  }
  out.human_vel.assign(T, std::vector<Vec2>(K, Vec2::Zero()));
  out.duals.assign(T, std::vector<VecXd>(K));
  const int m_ll = K > 0 ? K + static_cast<int>(in.discs.size()) +
    static_cast<int>(in.segments.size()) : 0;
  for (int t = 0; t < T; ++t) {
    for (int k = 0; k < K; ++k) {
      out.human_vel[t][k] = in.orca[k].state.v;
      out.duals[t][k] = VecXd::Zero(m_ll + 1);
    }
  }
  for (int k = 0; k < K; ++k) out.orca_indices.push_back(in.orca[k].index);
  out.states.resize(T + 1);
  out.states[0] = obs;
  for (int t = 0; t < T; ++t) {
    out.states[t + 1].robot = robot_step(out.states[t].robot, out.controls[t], dt);
    out.states[t + 1].humans = out.states[t].humans;
    for (int k = 0; k < K; ++k) {
      HumanState & H = out.states[t + 1].humans[in.orca[k].index];
      H.p = out.states[t].humans[in.orca[k].index].p + dt * in.orca[k].state.v;
      H.v = in.orca[k].state.v;
    }
    for (const auto & d : in.discs) {
      HumanState & H = out.states[t + 1].humans[d.index];
      H.p = d.positions[t + 1];
      H.v = (d.positions[t + 1] - d.positions[t]) / dt;
    }
  }
  return out;
}

/// True when the observation already violates hard separation (margins
/// excluded). Planning from a collided state is refused: the contract is a
/// straight-line deceleration until the state is clear again.
bool observation_collided(
  const JointState & obs, const std::vector<AgentParams> & params, const MpcConfig & cfg,
  const std::vector<Segment> & segments)
{
  for (size_t i = 0; i < obs.humans.size(); ++i) {
    const double d = cfg.robot_radius + params[i].radius;
    if ((obs.robot.position() - obs.humans[i].p).squaredNorm() < d * d) return true;
  }
  for (const auto & s : segments) {
    if (point_segment_distance(obs.robot.position(), s) < cfg.robot_radius) return true;
  }
  return false;
}

MpcSolution plan_impl(
  SqpSolver & solver, const MpcConfig & cfg, bool reactive, double eps,
  std::vector<Control> & warm, BuildInputs & last_in, const JointState & obs,
  const std::vector<AgentParams> & params, const Vec2 & goal,
  const std::vector<Segment> & segments)
{
  const auto t_start = std::chrono::steady_clock::now();
  validate_plan_inputs(obs, params, goal);
  const int T = cfg.horizon_steps;

  BuildInputs in;
  in.x0 = obs.robot;
  in.goal = goal;
  in.u_prev = {obs.robot.v, obs.robot.omega};
  in.segments = segments;
  in.cfg = cfg;
  in.eps = eps;
  if (reactive) {
    const auto sel =
      select_orca_humans(obs.robot, obs.humans, params, cfg.robot_radius, cfg.n_orca_humans);
    std::vector<char> picked(obs.humans.size(), 0);
    for (int i : sel) {
      in.orca.push_back({obs.humans[i], params[i], i});
      picked[i] = 1;
    }
    for (int i = 0; i < static_cast<int>(obs.humans.size()); ++i) {
      if (picked[i]) continue;
      MovingDisc d;
      d.radius = params[i].radius;
      d.index = i;
      d.positions.assign(T + 1, obs.humans[i].p);
      in.discs.push_back(std::move(d));
    }
  } else {
    in.discs = predict_cvmm(obs.humans, params, cfg.dt, T);
  }
  last_in = in;

  MpcSolution out;
  bool accepted = false;
  if (!observation_collided(obs, params, cfg, segments)) {
    try {
      BuiltNlp built = build_mpc_nlp(in);
      // two guess attempts: the shifted warm plan or a goal pursuit first,
      // then a braking rollout. When traffic makes the first rollout thread
      // through the crowd its embedded programs start far from consistency,
      // while braking stays where the surrounding agents expect the robot.
      for (int attempt = 0; attempt < 2 && !accepted; ++attempt) {
        const std::vector<Control> g =
          attempt == 0 ? guess_controls(warm, in) : braking_controls(in);
        const VecXd z0 = initial_guess(in, built.idx, g);
        const NlpSolution ns = solver.solve(built.problem, z0);
        const bool ok = ns.status == SolveStatus::converged ||
          (ns.kkt.eq_violation <= 1e-6 && ns.kkt.ineq_violation <= 1e-6);
        out.solver_status = ns.status;
        out.kkt = ns.kkt;
        out.iterations = ns.iterations;
        if (ok) {
          const MpcSolution ex = extract_solution(in, built.idx, ns.z, obs);
          out.controls = ex.controls;
          out.states = ex.states;
          out.human_vel = ex.human_vel;
          out.duals = ex.duals;
          out.orca_indices = ex.orca_indices;
          out.objective = built.problem.cost(ns.z);
          out.status = PlanStatus::ok;
          accepted = true;
        }
      }
    } catch (const std::invalid_argument &) {
      throw;
    } catch (const std::exception &) {
      out.solver_status = SolveStatus::numerical_failure;
    }
  } else {
    out.solver_status = SolveStatus::infeasible;
  }

  if (!accepted) {
    const MpcSolution fb = fallback_plan(in, obs);
    out.controls = fb.controls;
    out.states = fb.states;
    out.human_vel = fb.human_vel;
    out.duals = fb.duals;
    out.orca_indices = fb.orca_indices;
    out.status = PlanStatus::fallback;
    warm.clear();
  } else {
    warm = out.controls;
  }
  out.eps = reactive ? eps : 0.0;
  out.solve_time_s =
    std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return out;
}

}  // namespace

SicnavPlanner::SicnavPlanner(const MpcConfig & cfg)
: cfg_(cfg), solver_(cfg.solver), eps_(cfg.eps_init)
{
}

MpcSolution SicnavPlanner::plan(
  const JointState & obs, const std::vector<AgentParams> & human_params, const Vec2 & goal,
  const std::vector<Segment> & segments)
{
  MpcSolution out =
    plan_impl(solver_, cfg_, true, eps_, warm_, last_in_, obs, human_params, goal, segments);
  if (out.status == PlanStatus::ok) {
    eps_ = std::max(cfg_.eps_final, eps_ * cfg_.eps_decay);
  } else {
    eps_ = cfg_.eps_init;  // restart the schedule together with the warm start
  }
  return out;
}

void SicnavPlanner::reset()
{
  warm_.clear();
  eps_ = cfg_.eps_init;
}

CvmmPlanner::CvmmPlanner(const MpcConfig & cfg) : cfg_(cfg), solver_(cfg.solver) {}

MpcSolution CvmmPlanner::plan(
  const JointState & obs, const std::vector<AgentParams> & human_params, const Vec2 & goal,
  const std::vector<Segment> & segments)
{
  return plan_impl(solver_, cfg_, false, cfg_.eps_final, warm_, last_in_, obs, human_params,
    goal, segments);
}

void CvmmPlanner::reset() { warm_.clear(); }

}  // namespace sicnav

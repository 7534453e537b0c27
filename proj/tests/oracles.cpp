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

#include "oracles.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <vector>

namespace sicnav::oracles
{

namespace
{
constexpr double kInf = std::numeric_limits<double>::infinity();
}

FlatPose euler_unicycle(FlatPose s, double v, double omega, double T, double dt_fine)
{
  const long n = std::lround(T / dt_fine);
  for (long i = 0; i < n; ++i) {
    s.x += v * std::cos(s.theta) * dt_fine;
    s.y += v * std::sin(s.theta) * dt_fine;
    s.theta += omega * dt_fine;
  }
  return s;
}

double ttc_scan(
  const Vec2 & pa, const Vec2 & va, const Vec2 & pb, const Vec2 & vb, double R, double t_max,
  double dt)
{
  const auto dist = [&](double t) { return ((pb - pa) + t * (vb - va)).norm() - R; };
  if (dist(0.0) <= 0.0) return 0.0;
  double prev = 0.0;
  for (double t = dt; t <= t_max + 0.5 * dt; t += dt) {
    if (dist(t) <= 0.0) {
      double lo = prev, hi = t;
      for (int i = 0; i < 80; ++i) {
        const double mid = 0.5 * (lo + hi);
        (dist(mid) <= 0.0 ? hi : lo) = mid;
      }
      return 0.5 * (lo + hi);
    }
    prev = t;
  }
  return kInf;
}

double min_pair_distance_scan(
  const Vec2 & pa, const Vec2 & va, const Vec2 & pb, const Vec2 & vb, double T, double dt)
{
  double best = kInf;
  for (double t = 0.0; t <= T + 0.5 * dt; t += dt) {
    best = std::min(best, ((pb - pa) + t * (vb - va)).norm());
  }
  return best;
}

GridBest orca_grid(const OrcaProblem & p, double h)
{
  const double R = p.max_speed;
  const auto feasible = [&](const Vec2 & v) {
    if (v.squaredNorm() > R * R + 1e-12) return false;
    for (const auto & hp : p.lines) {
      if (hp.n.dot(v) < hp.b - 1e-12) return false;
    }
    return true;
  };
  GridBest best;
  const auto consider = [&](const Vec2 & v) {
    if (!feasible(v)) return;
    const double obj = (v - p.v_intent).squaredNorm();
    if (!best.feasible || obj < best.objective) {
      best.feasible = true;
      best.objective = obj;
      best.v = v;
    }
  };

  const int k = static_cast<int>(std::ceil(R / h));
  for (int i = -k; i <= k; ++i) {
    for (int j = -k; j <= k; ++j) consider(Vec2(i * h, j * h));
  }
  const int s = std::max(8, static_cast<int>(std::ceil(2.0 * M_PI * R / h)));
  for (int i = 0; i < s; ++i) {
    const double a = 2.0 * M_PI * i / s;
    consider(R * Vec2(std::cos(a), std::sin(a)));
  }
  const int nl = static_cast<int>(p.lines.size());
  for (int i = 0; i < nl; ++i) {
    const Vec2 n = p.lines[i].n;
    const double b = p.lines[i].b;
    const Vec2 t(-n.y(), n.x());
    const Vec2 base = b * n;
    for (double u = -R; u <= R + 0.5 * h; u += h) consider(base + u * t);
    consider(p.v_intent + (b - n.dot(p.v_intent)) * n);
    const double t2 = R * R - b * b;
    if (t2 >= 0.0) {
      consider(base + std::sqrt(t2) * t);
      consider(base - std::sqrt(t2) * t);
    }
    for (int j = i + 1; j < nl; ++j) {
      const Vec2 m = p.lines[j].n;
      const double det = n.x() * m.y() - n.y() * m.x();
      if (std::abs(det) > 1e-12) {
        consider(Vec2(
          (p.lines[i].b * m.y() - p.lines[j].b * n.y()) / det,
          (n.x() * p.lines[j].b - m.x() * p.lines[i].b) / det));
      }
    }
  }
  consider(p.v_intent);
  if (p.v_intent.norm() > R) consider(p.v_intent * (R / p.v_intent.norm()));
  return best;
}

GridMinimax orca_grid_minimax(const OrcaProblem & p, double h)
{
  const double R = p.max_speed;
  const auto worst_violation = [&](const Vec2 & v) {
    double w = std::max(v.norm() - R, 0.0);
    for (const auto & hp : p.lines) w = std::max(w, hp.b - hp.n.dot(v));
    return w;
  };
  GridMinimax best;
  best.worst = kInf;
  const auto consider = [&](const Vec2 & v) {
    const double w = worst_violation(v);
    if (w < best.worst) {
      best.worst = w;
      best.v = v;
    }
  };
  const int k = static_cast<int>(std::ceil(R / h));
  for (int i = -k; i <= k; ++i) {
    for (int j = -k; j <= k; ++j) consider(Vec2(i * h, j * h));
  }
  const Vec2 center = best.v;
  const double hf = h / 50.0;
  for (int i = -60; i <= 60; ++i) {
    for (int j = -60; j <= 60; ++j) consider(center + Vec2(i * hf, j * hf));
  }
  return best;
}

QpRef qp_enumerate(const BoxQp & qp)
{
  const int n = static_cast<int>(qp.q.size());
  const int m = static_cast<int>(qp.l.size());
  const Eigen::MatrixXd P =
    Eigen::MatrixXd(qp.P).selfadjointView<Eigen::Upper>();
  const Eigen::MatrixXd A = Eigen::MatrixXd(qp.A);

  QpRef best;
  // per-row states: 0 free, 1 at lower, 2 at upper
  std::vector<int> state(m, 0);
  long total = 1;
  for (int i = 0; i < m; ++i) total *= 3;
  for (long code = 0; code < total; ++code) {
    long c = code;
    bool skip = false;
    for (int i = 0; i < m; ++i) {
      state[i] = static_cast<int>(c % 3);
      c /= 3;
      const bool is_eq = qp.u(i) - qp.l(i) < 1e-14;
      if (state[i] == 0 && is_eq) skip = true;  // equality rows are never free
      if (state[i] == 2 && is_eq) skip = true;  // and enumerate once, at l
      if (state[i] == 1 && !std::isfinite(qp.l(i))) skip = true;
      if (state[i] == 2 && !std::isfinite(qp.u(i))) skip = true;
    }
    if (skip) continue;

    std::vector<int> act;
    for (int i = 0; i < m; ++i) {
      if (state[i] != 0) act.push_back(i);
    }
    const int na = static_cast<int>(act.size());
    Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(n + na, n + na);
    kkt.topLeftCorner(n, n) = P;
    Eigen::VectorXd rhs(n + na);
    rhs.head(n) = -qp.q;
    for (int a = 0; a < na; ++a) {
      kkt.block(n + a, 0, 1, n) = A.row(act[a]);
      kkt.block(0, n + a, n, 1) = A.row(act[a]).transpose();
      rhs(n + a) = state[act[a]] == 1 ? qp.l(act[a]) : qp.u(act[a]);
    }
    Eigen::FullPivLU<Eigen::MatrixXd> lu(kkt);
    if (!lu.isInvertible()) continue;
    const Eigen::VectorXd sol = lu.solve(rhs);
    const Eigen::VectorXd x = sol.head(n);
    const Eigen::VectorXd nu = sol.tail(na);

    bool ok = true;
    const Eigen::VectorXd ax = A * x;
    for (int i = 0; i < m && ok; ++i) {
      if (state[i] == 0 && (ax(i) < qp.l(i) - 1e-8 || ax(i) > qp.u(i) + 1e-8)) ok = false;
    }
    // stationarity P x + q + A' nu = 0 holds by construction; dual signs:
    // y <= 0 at lower bounds, y >= 0 at upper bounds, free sign at equalities
    for (int a = 0; a < na && ok; ++a) {
      const bool is_eq = qp.u(act[a]) - qp.l(act[a]) < 1e-14;
      if (is_eq) continue;
      if (state[act[a]] == 1 && nu(a) > 1e-8) ok = false;
      if (state[act[a]] == 2 && nu(a) < -1e-8) ok = false;
    }
    if (!ok) continue;
    const double obj = 0.5 * x.dot(P * x) + qp.q.dot(x);
    if (!best.ok || obj < best.objective) {
      best.ok = true;
      best.x = x;
      best.objective = obj;
    }
  }
  return best;
}

}  // namespace sicnav::oracles

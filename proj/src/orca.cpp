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

#include "sicnav/orca.hpp"

#include "detail/orca_diff.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <utility>

namespace sicnav
{

namespace
{

constexpr double kFeasTol = 1e-9;
constexpr double kDualTol = -1e-9;

double det2(const Vec2 & a, const Vec2 & b) { return a.x() * b.y() - a.y() * b.x(); }

struct Candidate
{
  Vec2 v;
  // sparse active duals: (line index, lambda); index -1 is the speed circle
  std::array<std::pair<int, double>, 2> active{{{-2, 0.0}, {-2, 0.0}}};
};

double worst_violation(const OrcaProblem & pb, const Vec2 & v)
{
  double worst = v.norm() - pb.max_speed;
  for (const auto & ln : pb.lines) {
    worst = std::max(worst, ln.b - ln.n.dot(v));
  }
  return worst;
}

// Least-infeasibility point: minimizes the maximum violation, where each
// half-plane violates by b - n.v and the circle by |v| - s. The optimum is
// attained with at most three active terms, so enumerating stationary points
// of the small active subsets and scoring each by its global violation is
// exact. All constructions assume unit normals.
Vec2 least_infeasible(const OrcaProblem & pb)
{
  const double s = pb.max_speed;
  const int m = static_cast<int>(pb.lines.size());
  std::vector<Vec2> cands;
  cands.emplace_back(Vec2::Zero());
  if (pb.v_intent.norm() > s && pb.v_intent.norm() > 0.0) {
    cands.emplace_back(pb.v_intent * (s / pb.v_intent.norm()));
  } else {
    cands.emplace_back(pb.v_intent);
  }
  for (int i = 0; i < m; ++i) {
    const auto & li = pb.lines[i];
    // line i balanced against the circle along the shared normal
    cands.emplace_back(0.5 * (li.b + s) * li.n);
    for (int j = i + 1; j < m; ++j) {
      const auto & lj = pb.lines[j];
      const double dt = det2(li.n, lj.n);
      if (std::abs(dt) < 1e-9) {
        if (li.n.dot(lj.n) < 0.0) {
          // antipodal pair: equal-violation line, least-norm point on it
          cands.emplace_back(0.5 * (li.b - lj.b) * li.n);
        }
        continue;
      }
      Eigen::Matrix2d N;
      N << li.n.transpose(), lj.n.transpose();
      const Eigen::Matrix2d Ninv = N.inverse();
      const Vec2 v0 = Ninv * Vec2(li.b, lj.b);
      const Vec2 d = Ninv * Vec2(1.0, 1.0);
      // pair + circle: |v0 - t d| = s + t
      const double qa = d.squaredNorm() - 1.0;
      const double qb = -2.0 * (v0.dot(d) + s);
      const double qc = v0.squaredNorm() - s * s;
      const double disc = qb * qb - 4.0 * qa * qc;
      if (disc >= 0.0) {
        const double root = std::sqrt(disc);
        for (const double t : {std::abs(qa) > 1e-14 ? (-qb - root) / (2.0 * qa) : -qc / qb,
                               std::abs(qa) > 1e-14 ? (-qb + root) / (2.0 * qa) : -qc / qb}) {
          if (t >= 0.0 && std::isfinite(t)) cands.emplace_back(v0 - t * d);
        }
      }
      for (int k = j + 1; k < m; ++k) {
        const auto & lk = pb.lines[k];
        Eigen::Matrix3d M;
        M << li.n.x(), li.n.y(), 1.0, lj.n.x(), lj.n.y(), 1.0, lk.n.x(), lk.n.y(), 1.0;
        if (std::abs(M.determinant()) < 1e-12) continue;
        const Eigen::Vector3d vt = M.inverse() * Eigen::Vector3d(li.b, lj.b, lk.b);
        cands.emplace_back(vt.x(), vt.y());
      }
    }
  }
  Vec2 best = cands.front();
  double best_viol = worst_violation(pb, best);
  for (const auto & v : cands) {
    const double w = worst_violation(pb, v);
    if (w < best_viol) {
      best_viol = w;
      best = v;
    }
  }
  return best;
}

}  // namespace

Vec2 intended_velocity_to_goal(
  const Vec2 & p, const Vec2 & goal, double intent_horizon, double max_speed)
{
  const Vec2 e = goal - p;
  const double d = e.norm();
  if (d < 1e-6) return Vec2::Zero();
  return std::min(max_speed, d / intent_horizon) * (e / d);
}

Vec2 intended_velocity(const HumanState & h, const AgentParams & params, bool use_scenario_goal)
{
  const Vec2 g = use_scenario_goal ? params.goal : Vec2(h.p + params.intent_horizon * h.v);
  return intended_velocity_to_goal(h.p, g, params.intent_horizon, params.max_speed);
}

HalfPlane agent_halfplane(
  const DiscAgent & self, const DiscAgent & other, double tau, double responsibility,
  double collision_dt)
{
  const auto full =
    detail::agent_halfplane_jac(self, other, tau, responsibility, collision_dt, false);
  return {full.n, full.b};
}

HalfPlane segment_halfplane(const Vec2 & p, double radius, const Segment & seg, double tau)
{
  const auto full = detail::segment_halfplane_jac(p, radius, seg, tau, false);
  return {full.n, full.b};
}

OrcaSolution solve_orca(const OrcaProblem & pb)
{
  if (!(pb.max_speed > 0.0) || !std::isfinite(pb.max_speed) || !pb.v_intent.allFinite()) {
    throw std::invalid_argument("solve_orca: invalid intent or max_speed");
  }
  for (const auto & ln : pb.lines) {
    if (!ln.n.allFinite() || !std::isfinite(ln.b) || ln.n.norm() < 1e-12) {
      throw std::invalid_argument("solve_orca: invalid half-plane");
    }
  }

  const Vec2 c = pb.v_intent;
  const double s = pb.max_speed;
  const int m = static_cast<int>(pb.lines.size());

  OrcaSolution sol;
  sol.lambda.assign(m, 0.0);

  std::vector<Candidate> cands;
  cands.reserve(4 + m * (m + 3));

  // interior (the intent itself)
  cands.push_back({c, {{{-2, 0.0}, {-2, 0.0}}}});
  // speed circle alone
  if (c.norm() > 1e-15) {
    const double mu = (c.norm() - s) / s;
    if (mu >= kDualTol) {
      cands.push_back({s * c.normalized(), {{{-1, mu}, {-2, 0.0}}}});
    }
  }
  for (int i = 0; i < m; ++i) {
    const auto & li = pb.lines[i];
    const double nn = li.n.squaredNorm();
    // single line: projection of c onto its boundary
    const double lam = 2.0 * (li.b - li.n.dot(c)) / nn;
    if (lam >= kDualTol) {
      cands.push_back({c + 0.5 * lam * li.n, {{{i, lam}, {-2, 0.0}}}});
    }
    // line + circle intersections
    const Vec2 v0 = (li.b / nn) * li.n;
    const double t2 = s * s - v0.squaredNorm();
    if (t2 >= 0.0) {
      const Vec2 tang = Vec2(-li.n.y(), li.n.x()) / std::sqrt(nn);
      for (const double t : {std::sqrt(t2), -std::sqrt(t2)}) {
        const Vec2 v = v0 + t * tang;
        const double dt = -2.0 * det2(li.n, v);
        if (std::abs(dt) < 1e-12) continue;
        // solve [n, -2v] [lambda; mu] = 2 (v - c)
        const Vec2 rhs = 2.0 * (v - c);
        const double lam_i = (rhs.x() * (-2.0 * v.y()) - (-2.0 * v.x()) * rhs.y()) / dt;
        const double mu_i = (li.n.x() * rhs.y() - li.n.y() * rhs.x()) / dt;
        if (lam_i >= kDualTol && mu_i >= kDualTol) {
          cands.push_back({v, {{{i, lam_i}, {-1, mu_i}}}});
        }
      }
    }
    // line pairs
    for (int j = i + 1; j < m; ++j) {
      const auto & lj = pb.lines[j];
      const double dt = det2(li.n, lj.n);
      if (std::abs(dt) < 1e-12) continue;
      Eigen::Matrix2d N;
      N << li.n.transpose(), lj.n.transpose();
      const Vec2 v = N.inverse() * Vec2(li.b, lj.b);
      const Vec2 rhs = 2.0 * (v - c);
      // solve lambda_i n_i + lambda_j n_j = rhs
      const double lam_i = det2(rhs, lj.n) / dt;
      const double lam_j = det2(li.n, rhs) / dt;
      if (lam_i >= kDualTol && lam_j >= kDualTol) {
        cands.push_back({v, {{{i, lam_i}, {j, lam_j}}}});
      }
    }
  }

  const Candidate * best = nullptr;
  double best_obj = std::numeric_limits<double>::infinity();
  for (const auto & cand : cands) {
    if (worst_violation(pb, cand.v) > kFeasTol) continue;
    const double obj = (cand.v - c).squaredNorm();
    if (obj < best_obj) {
      best_obj = obj;
      best = &cand;
    }
  }

  if (best == nullptr) {
    sol.feasible = false;
    sol.v_star = least_infeasible(pb);
    return sol;
  }

  sol.v_star = best->v;
  for (const auto & [idx, val] : best->active) {
    if (idx == -1) {
      sol.mu = std::max(val, 0.0);
    } else if (idx >= 0) {
      sol.lambda[idx] = std::max(val, 0.0);
    }
  }
  Vec2 st = 2.0 * (sol.v_star - c) + 2.0 * sol.mu * sol.v_star;
  for (int i = 0; i < m; ++i) st -= sol.lambda[i] * pb.lines[i].n;
  sol.stationarity_residual = st.norm();
  return sol;
}

}  // namespace sicnav

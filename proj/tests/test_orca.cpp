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

#include "doctest.h"
#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <random>

using namespace sicnav;

namespace
{

// Exact minimum center distance of ||r - t v|| over t in [0, T].
double min_dist_interval(const Vec2 & r, const Vec2 & v, double T)
{
  const double a = v.squaredNorm();
  double best = std::min(r.norm(), (r - T * v).norm());
  if (a > 1e-18) {
    const double t = std::clamp(r.dot(v) / a, 0.0, T);
    best = std::min(best, (r - t * v).norm());
  }
  return best;
}

// Displacement from the current velocity to the constraint boundary along n;
// every construction keeps u parallel to n, so it is recoverable from (n, b).
Vec2 boundary_correction(const HalfPlane & hp, const Vec2 & v, double responsibility)
{
  return ((hp.b - hp.n.dot(v)) / responsibility) * hp.n;
}

double worst_violation(const OrcaProblem & p, const Vec2 & v)
{
  double w = std::max(v.norm() - p.max_speed, 0.0);
  for (const auto & hp : p.lines) w = std::max(w, hp.b - hp.n.dot(v));
  return w;
}

double stationarity_norm(const OrcaProblem & p, const OrcaSolution & s)
{
  Vec2 st = 2.0 * (s.v_star - p.v_intent) + 2.0 * s.mu * s.v_star;
  for (size_t i = 0; i < p.lines.size(); ++i) st -= s.lambda[i] * p.lines[i].n;
  return st.norm();
}

}  // namespace

TEST_CASE("intended_velocity examples")
{
  AgentParams params;
  params.intent_horizon = 2.0;
  params.max_speed = 1.0;

  // consistent projection returns the current velocity
  HumanState h{{0.0, 0.0}, {1.0, 0.0}};
  Vec2 v = intended_velocity(h, params, false);
  CHECK((v - Vec2(1.0, 0.0)).norm() <= 1e-12);

  // at the goal
  params.goal = Vec2(0.0, 0.0);
  h.v = Vec2::Zero();
  v = intended_velocity(h, params, true);
  CHECK(v.norm() == 0.0);

  // scenario goal mode clips the speed
  params.goal = Vec2(10.0, 0.0);
  v = intended_velocity(h, params, true);
  CHECK((v - Vec2(1.0, 0.0)).norm() <= 1e-12);
}

TEST_CASE("agent_halfplane hand example: symmetric stationary pair")
{
  const DiscAgent self{{0.0, 0.0}, {0.0, 0.0}, 0.5};
  const DiscAgent other{{5.0, 0.0}, {0.0, 0.0}, 0.5};
  const HalfPlane hp = agent_halfplane(self, other, 2.0, 0.5, 0.25);
  // cutoff disc center (2.5, 0) radius 0.5; with responsibility 1/2: v_x <= 1
  CHECK(hp.n.x() == doctest::Approx(-1.0).epsilon(1e-12));
  CHECK(hp.n.y() == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(hp.b == doctest::Approx(-1.0).epsilon(1e-12));
}

TEST_CASE("agent_halfplane is non-binding for a far-away agent")
{
  const DiscAgent self{{0.0, 0.0}, {0.2, 0.1}, 0.3};
  const DiscAgent other{{100.0, 0.0}, {0.0, 0.0}, 0.3};
  const HalfPlane hp = agent_halfplane(self, other, 2.0, 0.5, 0.25);
  // every v with ||v|| <= 1 satisfies n.v >= b iff b <= -1
  CHECK(hp.b <= -1.0);
}

TEST_CASE("agent_halfplane throws on degenerate geometry")
{
  const DiscAgent a{{0.0, 0.0}, {0.0, 0.0}, 0.3};
  CHECK_THROWS_AS(agent_halfplane(a, a, 2.0, 0.5, 0.25), std::domain_error);
}

// Reflecting the configuration through the origin (agents swap positions,
// velocities negate) reflects the half-plane: n -> -n, b unchanged.
TEST_CASE("agent_halfplane mirror symmetry")
{
  std::mt19937 rng(23);
  std::uniform_real_distribution<double> up(-3.0, 3.0), uv(-1.2, 1.2);
  int checked = 0;
  while (checked < 200) {
    const DiscAgent self{{up(rng), up(rng)}, {uv(rng), uv(rng)}, 0.3};
    const DiscAgent other{{up(rng), up(rng)}, {uv(rng), uv(rng)}, 0.35};
    if ((self.p - other.p).norm() < 0.05) continue;
    HalfPlane a, b;
    try {
      a = agent_halfplane(self, other, 2.0, 0.5, 0.25);
      const DiscAgent self_m{other.p, -self.v, self.radius};
      const DiscAgent other_m{self.p, -other.v, other.radius};
      b = agent_halfplane(self_m, other_m, 2.0, 0.5, 0.25);
    } catch (const std::domain_error &) {
      continue;  // degenerate cutoff; not part of this property
    }
    CHECK((a.n + b.n).norm() <= 1e-9);
    CHECK(a.b == doctest::Approx(b.b).epsilon(1e-9));
    ++checked;
  }
}

// Geometric oracle: whenever both agents pick velocities inside their
// reciprocal half-planes, their discs stay clear for the full horizon.
TEST_CASE("agent_halfplane guarantees tau-horizon clearance")
{
  const double tau = 2.0;
  std::mt19937 rng(29);
  std::uniform_real_distribution<double> up(-3.0, 3.0), uv(-1.2, 1.2), us(0.0, 1.5),
    ut(-1.5, 1.5);
  int checked = 0;
  while (checked < 150) {
    const DiscAgent a{{up(rng), up(rng)}, {uv(rng), uv(rng)}, 0.3};
    const DiscAgent b{{up(rng), up(rng)}, {uv(rng), uv(rng)}, 0.35};
    const double R = a.radius + b.radius;
    if ((a.p - b.p).norm() <= R + 0.05) continue;
    HalfPlane ha, hb;
    try {
      ha = agent_halfplane(a, b, tau, 0.5, 0.25);
      hb = agent_halfplane(b, a, tau, 0.5, 0.25);
    } catch (const std::domain_error &) {
      continue;
    }
    // boundary velocities graze at exactly the combined radius
    const Vec2 va_boundary = a.v + 0.5 * boundary_correction(ha, a.v, 0.5);
    const Vec2 vb_boundary = b.v + 0.5 * boundary_correction(hb, b.v, 0.5);
    const Vec2 r = b.p - a.p;
    const double graze = min_dist_interval(r, va_boundary - vb_boundary, tau);
    CHECK(graze >= R - 1e-7);

    // arbitrary feasible velocities never collide within tau
    for (int k = 0; k < 5; ++k) {
      const Vec2 pa = Vec2(ut(rng), ut(rng));
      const Vec2 va = va_boundary + us(rng) * ha.n + (pa - pa.dot(ha.n) * ha.n);
      const Vec2 pb2 = Vec2(ut(rng), ut(rng));
      const Vec2 vb = vb_boundary + us(rng) * hb.n + (pb2 - pb2.dot(hb.n) * hb.n);
      CHECK(ha.n.dot(va) >= ha.b - 1e-12);
      CHECK(hb.n.dot(vb) >= hb.b - 1e-12);
      CHECK(min_dist_interval(r, va - vb, tau) >= R - 1e-7);
    }
    ++checked;
  }
}

// Overlapping discs: the escape construction restores separation >= R after
// one collision_dt for any pair of feasible velocities.
TEST_CASE("agent_halfplane separates overlapping discs within one step")
{
  const double dt = 0.25;
  std::mt19937 rng(31);
  std::uniform_real_distribution<double> up(-0.4, 0.4), uv(-1.0, 1.0), us(0.0, 1.0),
    ut(-1.0, 1.0);
  int checked = 0;
  while (checked < 100) {
    const DiscAgent a{{up(rng), up(rng)}, {uv(rng), uv(rng)}, 0.3};
    const DiscAgent b{{up(rng), up(rng)}, {uv(rng), uv(rng)}, 0.35};
    const double R = a.radius + b.radius;
    const double d = (a.p - b.p).norm();
    if (d >= R || d < 0.02) continue;
    HalfPlane ha, hb;
    try {
      ha = agent_halfplane(a, b, 2.0, 0.5, dt);
      hb = agent_halfplane(b, a, 2.0, 0.5, dt);
    } catch (const std::domain_error &) {
      continue;
    }
    const Vec2 va0 = a.v + 0.5 * boundary_correction(ha, a.v, 0.5);
    const Vec2 vb0 = b.v + 0.5 * boundary_correction(hb, b.v, 0.5);
    const Vec2 r = b.p - a.p;
    CHECK((r - dt * (va0 - vb0)).norm() >= R - 1e-9);
    for (int k = 0; k < 5; ++k) {
      const Vec2 va = va0 + us(rng) * ha.n + ut(rng) * Vec2(-ha.n.y(), ha.n.x());
      const Vec2 vb = vb0 + us(rng) * hb.n + ut(rng) * Vec2(-hb.n.y(), hb.n.x());
      CHECK((r - dt * (va - vb)).norm() >= R - 1e-9);
    }
    ++checked;
  }
}

TEST_CASE("segment_halfplane hand example")
{
  const Segment seg{{-1.0, 0.0}, {1.0, 0.0}};
  const HalfPlane hp = segment_halfplane(Vec2(0.0, 1.0), 0.3, seg, 2.0);
  CHECK(hp.n.x() == doctest::Approx(0.0));
  CHECK(hp.n.y() == doctest::Approx(1.0));
  CHECK(hp.b == doctest::Approx(-0.35).epsilon(1e-12));
  // moving at the bound for the full horizon leaves the surface just touched
  const double y_end = 1.0 + hp.b * 2.0;
  CHECK(y_end - 0.3 >= -1e-12);

  // touching the inflated segment forbids any approach
  const HalfPlane touch = segment_halfplane(Vec2(0.0, 0.3), 0.3, seg, 2.0);
  CHECK(touch.b == doctest::Approx(0.0));

  // far away: non-binding for any speed <= 1
  const HalfPlane far = segment_halfplane(Vec2(0.0, 50.0), 0.3, seg, 2.0);
  CHECK(far.b <= -1.0);

  CHECK_THROWS_AS(segment_halfplane(Vec2(0.5, 0.0), 0.3, seg, 2.0), std::domain_error);
}

TEST_CASE("solve_orca unconstrained and clipped cases")
{
  OrcaProblem p;
  p.max_speed = 3.0;
  p.v_intent = Vec2(1.0, -2.0);
  OrcaSolution s = solve_orca(p);
  CHECK(s.feasible);
  CHECK(s.v_star == p.v_intent);  // exact, not approximate
  CHECK(s.mu == 0.0);
  CHECK(s.stationarity_residual <= 1e-12);

  p.v_intent = Vec2(5.0, 0.0);
  s = solve_orca(p);
  CHECK((s.v_star - Vec2(3.0, 0.0)).norm() <= 1e-12);
  CHECK(s.mu == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("solve_orca single active line with hand-computed dual")
{
  OrcaProblem p;
  p.max_speed = 3.0;
  p.v_intent = Vec2(2.0, 0.0);
  p.lines.push_back(HalfPlane{Vec2(-1.0, 0.0), -1.0});  // v_x <= 1
  const OrcaSolution s = solve_orca(p);
  CHECK(s.feasible);
  CHECK((s.v_star - Vec2(1.0, 0.0)).norm() <= 1e-12);
  CHECK(s.lambda[0] == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(s.mu == 0.0);
  CHECK(s.stationarity_residual <= 1e-10);
  // brute-force cross-check
  const auto grid = oracles::orca_grid(p, 1e-3);
  CHECK(grid.feasible);
  CHECK(std::abs((s.v_star - p.v_intent).squaredNorm() - grid.objective) <= 1e-3);
}

TEST_CASE("solve_orca symmetric head-on agents")
{
  const double tau = 2.0;
  const DiscAgent a{{0.0, 0.0}, {1.0, 0.0}, 0.5};
  const DiscAgent b{{3.0, 0.0}, {-1.0, 0.0}, 0.5};
  OrcaProblem pa, pb;
  pa.v_intent = a.v;
  pb.v_intent = b.v;
  pa.max_speed = pb.max_speed = 1.5;
  pa.lines.push_back(agent_halfplane(a, b, tau, 0.5, 0.25));
  pb.lines.push_back(agent_halfplane(b, a, tau, 0.5, 0.25));
  const OrcaSolution sa = solve_orca(pa);
  const OrcaSolution sb = solve_orca(pb);
  CHECK(sa.feasible);
  CHECK(sb.feasible);
  // reflection symmetry of the configuration
  CHECK((sa.v_star + sb.v_star).norm() <= 1e-9);
  // each solution satisfies its own constraint from the other agent
  CHECK(pa.lines[0].n.dot(sa.v_star) >= pa.lines[0].b - 1e-9);
  CHECK(pb.lines[0].n.dot(sb.v_star) >= pb.lines[0].b - 1e-9);
  // and jointly the discs never touch within tau
  const double clearance = min_dist_interval(b.p - a.p, sa.v_star - sb.v_star, tau);
  CHECK(clearance >= 1.0 - 1e-7);
  // optimal against the brute-force reference
  const auto grid = oracles::orca_grid(pa, 1e-2);
  CHECK(std::abs((sa.v_star - pa.v_intent).squaredNorm() - grid.objective) <= 1e-3);
}

TEST_CASE("solve_orca feasible intent is returned exactly")
{
  std::mt19937 rng(37);
  std::uniform_real_distribution<double> uv(-1.0, 1.0), ub(0.0, 1.5), ua(-M_PI, M_PI);
  for (int trial = 0; trial < 100; ++trial) {
    OrcaProblem p;
    p.max_speed = 1.6;
    p.v_intent = Vec2(uv(rng), uv(rng));
    const int m = 1 + trial % 4;
    for (int i = 0; i < m; ++i) {
      const double th = ua(rng);
      const Vec2 n(std::cos(th), std::sin(th));
      p.lines.push_back(HalfPlane{n, n.dot(p.v_intent) - ub(rng)});
    }
    const OrcaSolution s = solve_orca(p);
    CHECK(s.feasible);
    CHECK(s.v_star == p.v_intent);
    CHECK(s.mu == 0.0);
    for (double l : s.lambda) CHECK(l == 0.0);
  }
}

TEST_CASE("solve_orca randomized instances: KKT and oracle equivalence")
{
  std::mt19937 rng(41);
  std::uniform_real_distribution<double> up(-4.0, 4.0), uv(-1.3, 1.3), ua(-M_PI, M_PI),
    uo(-1.0, 1.0);
  int feasible_seen = 0, infeasible_seen = 0;
  for (int trial = 0; trial < 80; ++trial) {
    OrcaProblem p;
    p.max_speed = 1.0 + 0.5 * (trial % 3);
    p.v_intent = Vec2(uv(rng), uv(rng));
    const int m = 2 + trial % 5;
    for (int i = 0; i < m; ++i) {
      const double th = ua(rng);
      p.lines.push_back(HalfPlane{Vec2(std::cos(th), std::sin(th)), uo(rng)});
    }
    const OrcaSolution s = solve_orca(p);
    if (s.feasible) {
      ++feasible_seen;
      CHECK(worst_violation(p, s.v_star) <= 1e-8);
      CHECK(stationarity_norm(p, s) <= 1e-8);
      CHECK(s.stationarity_residual <= 1e-8);
      for (size_t i = 0; i < p.lines.size(); ++i) {
        CHECK(s.lambda[i] >= 0.0);
        CHECK(s.lambda[i] * (p.lines[i].n.dot(s.v_star) - p.lines[i].b) <= 1e-8);
      }
      CHECK(s.mu >= 0.0);
      CHECK(
        s.mu * (p.max_speed * p.max_speed - s.v_star.squaredNorm()) <= 1e-8);
      const auto grid = oracles::orca_grid(p, 1e-2);
      CHECK(grid.feasible);
      const double obj = (s.v_star - p.v_intent).squaredNorm();
      CHECK(std::abs(obj - grid.objective) <= 1e-3);
      CHECK(obj <= grid.objective + 1e-9);  // oracle dominance
    } else {
      ++infeasible_seen;
      const auto mm = oracles::orca_grid_minimax(p, 1e-2);
      CHECK(worst_violation(p, s.v_star) <= mm.worst + 1e-3);
    }
  }
  CHECK(feasible_seen > 20);  // the mix actually exercises both paths
  CHECK(infeasible_seen > 5);
}

TEST_CASE("solve_orca rotational equivariance")
{
  std::mt19937 rng(43);
  std::uniform_real_distribution<double> uv(-1.3, 1.3), ua(-M_PI, M_PI), uo(-1.0, 1.0);
  for (int trial = 0; trial < 60; ++trial) {
    OrcaProblem p;
    p.max_speed = 1.4;
    p.v_intent = Vec2(uv(rng), uv(rng));
    for (int i = 0; i < 3; ++i) {
      const double th = ua(rng);
      p.lines.push_back(HalfPlane{Vec2(std::cos(th), std::sin(th)), uo(rng)});
    }
    const OrcaSolution s0 = solve_orca(p);
    const double phi = ua(rng);
    Eigen::Matrix2d rot;
    rot << std::cos(phi), -std::sin(phi), std::sin(phi), std::cos(phi);
    OrcaProblem q = p;
    q.v_intent = rot * p.v_intent;
    for (size_t i = 0; i < p.lines.size(); ++i) q.lines[i].n = rot * p.lines[i].n;
    const OrcaSolution s1 = solve_orca(q);
    CHECK(s0.feasible == s1.feasible);
    if (s0.feasible) {
      CHECK((rot * s0.v_star - s1.v_star).norm() <= 1e-8);
    }
  }
}

TEST_CASE("solve_orca infeasible instance returns the minimax point")
{
  OrcaProblem p;
  p.max_speed = 1.0;
  p.v_intent = Vec2(0.2, 0.1);
  p.lines.push_back(HalfPlane{Vec2(1.0, 0.0), 0.5});    // v_x >= 0.5
  p.lines.push_back(HalfPlane{Vec2(-1.0, 0.0), 0.5});   // v_x <= -0.5
  const OrcaSolution s = solve_orca(p);
  CHECK_FALSE(s.feasible);
  CHECK(s.mu == 0.0);
  for (double l : s.lambda) CHECK(l == 0.0);
  CHECK(worst_violation(p, s.v_star) == doctest::Approx(0.5).epsilon(1e-9));
  const auto mm = oracles::orca_grid_minimax(p, 1e-2);
  CHECK(worst_violation(p, s.v_star) <= mm.worst + 1e-6);
}

TEST_CASE("solve_orca rejects invalid input")
{
  OrcaProblem p;
  p.max_speed = 0.0;
  CHECK_THROWS_AS(solve_orca(p), std::invalid_argument);
  p.max_speed = 1.0;
  p.lines.push_back(HalfPlane{Vec2(0.0, 0.0), 0.0});
  CHECK_THROWS_AS(solve_orca(p), std::invalid_argument);
}

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

#include "sicnav/core_model.hpp"

#include "detail/unicycle.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace sicnav
{

namespace
{

constexpr double kPi = 3.14159265358979323846;

bool all_finite(std::initializer_list<double> xs)
{
  for (double x : xs) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

}  // namespace

double wrap_angle(double a)
{
  double w = std::fmod(a + kPi, 2.0 * kPi);
  if (w <= 0.0) w += 2.0 * kPi;
  return w - kPi;
}

RobotState robot_step(const RobotState & s, const Control & u, double dt)
{
  if (!all_finite({s.x, s.y, s.theta, s.v, s.omega, u.v_cmd, u.omega_cmd, dt}) || dt <= 0.0) {
    throw std::invalid_argument("robot_step: non-finite state/control or dt <= 0");
  }
  const detail::ArcStep arc = detail::arc_step(s.theta, u.v_cmd, u.omega_cmd, dt);
  RobotState n;
  n.x = s.x + arc.dx;
  n.y = s.y + arc.dy;
  n.theta = wrap_angle(s.theta + u.omega_cmd * dt);
  n.v = u.v_cmd;
  n.omega = u.omega_cmd;
  n.v_dot = (u.v_cmd - s.v) / dt;
  n.omega_dot = (u.omega_cmd - s.omega) / dt;
  return n;
}

HumanState human_step(const HumanState & h, const Vec2 & vel, double dt)
{
  if (!all_finite({h.p.x(), h.p.y(), vel.x(), vel.y(), dt}) || dt <= 0.0) {
    throw std::invalid_argument("human_step: non-finite state/velocity or dt <= 0");
  }
  HumanState n;
  n.p = h.p + vel * dt;
  n.v = vel;
  return n;
}

Vec2 closest_point_on_segment(const Vec2 & p, const Segment & seg)
{
  const Vec2 d = seg.b - seg.a;
  const double len2 = d.squaredNorm();
  if (len2 <= 0.0) return seg.a;
  const double t = std::clamp((p - seg.a).dot(d) / len2, 0.0, 1.0);
  return seg.a + t * d;
}

double point_segment_distance(const Vec2 & p, const Segment & seg)
{
  return (p - closest_point_on_segment(p, seg)).norm();
}

double time_to_collision(
  const Vec2 & p_a, const Vec2 & v_a, const Vec2 & p_b, const Vec2 & v_b, double R)
{
  constexpr double inf = std::numeric_limits<double>::infinity();
  const Vec2 r = p_b - p_a;
  const Vec2 w = v_b - v_a;
  const double c = r.squaredNorm() - R * R;
  if (c <= 0.0) return 0.0;  // already overlapping
  const double a = w.squaredNorm();
  const double b = 2.0 * r.dot(w);
  if (a <= 0.0) return inf;  // no relative motion
  const double disc = b * b - 4.0 * a * c;
  if (disc < 0.0) return inf;  // paths never close below R
  const double t = (-b - std::sqrt(disc)) / (2.0 * a);
  return t >= 0.0 ? t : inf;
}

}  // namespace sicnav

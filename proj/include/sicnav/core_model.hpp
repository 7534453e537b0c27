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

#ifndef SICNAV__CORE_MODEL_HPP_
#define SICNAV__CORE_MODEL_HPP_

#include "sicnav/types.hpp"

namespace sicnav
{

/// Wraps an angle to (-pi, pi].
double wrap_angle(double a);

/// Advances the unicycle one step holding (v_cmd, omega_cmd) constant over
/// dt, i.e. along the exact circular arc (straight line for omega_cmd == 0).
/// The returned accelerations are (cmd - previous)/dt.
/// Throws std::invalid_argument on non-finite input or dt <= 0.
RobotState robot_step(const RobotState & s, const Control & u, double dt);

/// Integrator step: position advances by vel * dt, velocity becomes vel.
/// Throws std::invalid_argument on non-finite input or dt <= 0.
HumanState human_step(const HumanState & h, const Vec2 & vel, double dt);

/// Euclidean distance from a point to a segment (0 on the segment).
double point_segment_distance(const Vec2 & p, const Segment & seg);

/// Closest point of a segment to p.
Vec2 closest_point_on_segment(const Vec2 & p, const Segment & seg);

/// First time t >= 0 at which two constant-velocity discs with combined
/// radius R touch; 0 if already overlapping, +inf if they never do.
double time_to_collision(
  const Vec2 & p_a, const Vec2 & v_a, const Vec2 & p_b, const Vec2 & v_b, double R);

}  // namespace sicnav

#endif  // SICNAV__CORE_MODEL_HPP_

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

#ifndef SICNAV__TYPES_HPP_
#define SICNAV__TYPES_HPP_

#include <Eigen/Core>

#include <vector>

namespace sicnav
{

using Vec2 = Eigen::Vector2d;

/// Unicycle robot state. theta is kept in (-pi, pi]; v_dot and omega_dot are
/// bookkeeping accelerations of the last applied step, not integrated state.
struct RobotState
{
  double x = 0.0;          ///< [m]
  double y = 0.0;          ///< [m]
  double theta = 0.0;      ///< heading [rad], wrapped to (-pi, pi]
  double v = 0.0;          ///< longitudinal speed of the last step [m/s]
  double omega = 0.0;      ///< angular rate of the last step [rad/s]
  double v_dot = 0.0;      ///< [m/s^2]
  double omega_dot = 0.0;  ///< [rad/s^2]

  Vec2 position() const { return {x, y}; }
  /// Planar velocity vector implied by (v, theta).
  Vec2 velocity() const { return {v * std::cos(theta), v * std::sin(theta)}; }
};

/// Kinematic integrator agent: position advances by the commanded velocity.
struct HumanState
{
  Vec2 p = Vec2::Zero();  ///< [m]
  Vec2 v = Vec2::Zero();  ///< velocity realised over the last step [m/s]
};

struct Control
{
  double v_cmd = 0.0;      ///< [m/s]
  double omega_cmd = 0.0;  ///< [rad/s]
};

/// Static obstacle: a wall segment between two endpoints.
struct Segment
{
  Vec2 a = Vec2::Zero();
  Vec2 b = Vec2::Zero();
};

/// Per-agent parameters used by the velocity-obstacle model.
struct AgentParams
{
  double radius = 0.3;          ///< disc radius [m]
  double max_speed = 1.0;       ///< [m/s]
  double tau = 2.0;             ///< collision-avoidance horizon [s]
  double intent_horizon = 2.0;  ///< goal-projection horizon [s]
  Vec2 goal = Vec2::Zero();     ///< scenario goal, used in ground-truth mode
};

struct JointState
{
  RobotState robot;
  std::vector<HumanState> humans;
};

}  // namespace sicnav

#endif  // SICNAV__TYPES_HPP_

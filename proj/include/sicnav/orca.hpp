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

#ifndef SICNAV__ORCA_HPP_
#define SICNAV__ORCA_HPP_

#include "sicnav/types.hpp"

#include <vector>

namespace sicnav
{

/// Linear velocity constraint with feasible side { v : n.dot(v) >= b }.
/// Constructions below always return unit n.
struct HalfPlane
{
  Vec2 n = Vec2::UnitX();
  double b = 0.0;
};

/// One agent's velocity selection problem:
///   minimize ||v - v_intent||^2
///   subject to n_i . v >= b_i for every line, ||v|| <= max_speed.
struct OrcaProblem
{
  Vec2 v_intent = Vec2::Zero();
  double max_speed = 1.0;
  std::vector<HalfPlane> lines;
};

/// Exact solution with multipliers for
///   2 (v - v_intent) - sum_i lambda_i n_i + 2 mu v = 0.
/// When the constraint set is empty, feasible is false, v_star minimizes the
/// maximum constraint violation, and the multipliers are zero.
struct OrcaSolution
{
  Vec2 v_star = Vec2::Zero();
  std::vector<double> lambda;  ///< one per line, 0 when inactive
  double mu = 0.0;             ///< speed-circle multiplier
  bool feasible = true;
  double stationarity_residual = 0.0;  ///< norm of the stationarity equation
};

/// Disc agent snapshot used for half-plane construction.
struct DiscAgent
{
  Vec2 p = Vec2::Zero();
  Vec2 v = Vec2::Zero();
  double radius = 0.3;
};

/// Preferred velocity toward a goal: magnitude min(max_speed, dist/horizon),
/// zero when closer than 1e-6.
Vec2 intended_velocity_to_goal(
  const Vec2 & p, const Vec2 & goal, double intent_horizon, double max_speed);

/// Preferred velocity of a human. With use_scenario_goal the goal is
/// params.goal; otherwise it is the current velocity projected forward by
/// params.intent_horizon (which reduces to the speed-clipped current velocity).
Vec2 intended_velocity(const HumanState & h, const AgentParams & params, bool use_scenario_goal);

/// Velocity half-plane keeping `self` clear of `other` for at least tau
/// seconds, taking `responsibility` (in [0, 1]) of the needed correction.
/// Overlapping discs fall back to an escape constraint over collision_dt.
/// Throws std::domain_error when the centers coincide.
HalfPlane agent_halfplane(
  const DiscAgent & self, const DiscAgent & other, double tau, double responsibility,
  double collision_dt);

/// Velocity half-plane keeping a disc of the given radius at p clear of a
/// wall segment for tau seconds: n . v >= -max(dist - radius, 0) / tau with n
/// the outward segment normal at p. Throws std::domain_error when p lies on
/// the segment.
HalfPlane segment_halfplane(const Vec2 & p, double radius, const Segment & seg, double tau);

/// Solves the velocity QCQP by enumerating candidate active sets (interior,
/// speed circle, single lines, line pairs, line/circle pairs); exact duals
/// come from stationarity. With no lines the result is the speed-clipped
/// v_intent. Deterministic for identical inputs.
OrcaSolution solve_orca(const OrcaProblem & problem);

}  // namespace sicnav

#endif  // SICNAV__ORCA_HPP_

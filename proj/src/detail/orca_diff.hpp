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

#ifndef DETAIL__ORCA_DIFF_HPP_
#define DETAIL__ORCA_DIFF_HPP_

#include "sicnav/orca.hpp"

#include <Eigen/Dense>

namespace sicnav::detail
{

using Mat2 = Eigen::Matrix2d;
using RowVec2 = Eigen::RowVector2d;

enum class VoCase { cutoff, left_leg, right_leg, collision };

/// Agent-agent velocity half-plane together with its partial derivatives
/// with respect to both agents' positions and velocities. Derivatives are
/// valid away from the (measure-zero) projection-case boundaries.
struct HalfPlaneJac
{
  Vec2 n = Vec2::UnitX();
  double b = 0.0;
  VoCase vo_case = VoCase::cutoff;
  Mat2 dn_dps = Mat2::Zero();  ///< d n / d p_self
  Mat2 dn_dvs = Mat2::Zero();
  Mat2 dn_dpo = Mat2::Zero();
  Mat2 dn_dvo = Mat2::Zero();
  RowVec2 db_dps = RowVec2::Zero();
  RowVec2 db_dvs = RowVec2::Zero();
  RowVec2 db_dpo = RowVec2::Zero();
  RowVec2 db_dvo = RowVec2::Zero();
};

HalfPlaneJac agent_halfplane_jac(
  const DiscAgent & self, const DiscAgent & other, double tau, double responsibility,
  double collision_dt, bool want_jac);

struct SegmentHalfPlaneJac
{
  Vec2 n = Vec2::UnitX();
  double b = 0.0;
  Mat2 dn_dp = Mat2::Zero();
  RowVec2 db_dp = RowVec2::Zero();
};

SegmentHalfPlaneJac segment_halfplane_jac(
  const Vec2 & p, double radius, const Segment & seg, double tau, bool want_jac);

/// Goal-directed preferred velocity and its derivative in the position.
struct IntentJac
{
  Vec2 v = Vec2::Zero();
  Mat2 dv_dp = Mat2::Zero();
};

IntentJac intent_jacobian(const Vec2 & p, const Vec2 & goal, double intent_horizon,
  double max_speed);

}  // namespace sicnav::detail

#endif  // DETAIL__ORCA_DIFF_HPP_

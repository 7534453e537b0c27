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

#include "detail/orca_diff.hpp"

#include "sicnav/core_model.hpp"

#include <cmath>
#include <stdexcept>

namespace sicnav::detail
{

namespace
{

double det2(const Vec2 & a, const Vec2 & b) { return a.x() * b.y() - a.y() * b.x(); }

}  // namespace

HalfPlaneJac agent_halfplane_jac(
  const DiscAgent & self, const DiscAgent & other, double tau, double responsibility,
  double collision_dt, bool want_jac)
{
  const Vec2 r = other.p - self.p;
  const Vec2 v_rel = self.v - other.v;
  const double R = self.radius + other.radius;
  const double dist2 = r.squaredNorm();
  const double eta = responsibility;

  if (dist2 < 1e-24) {
    throw std::domain_error("agent_halfplane: coincident agent centers");
  }
  if (tau <= 0.0 || collision_dt <= 0.0) {
    throw std::invalid_argument("agent_halfplane: non-positive horizon");
  }

  HalfPlaneJac out;

  // Projection onto the truncation disc of the velocity obstacle, shared by
  // the tau cutoff and the in-collision escape (which swaps tau for dt).
  const auto cutoff_branch = [&](double inv, VoCase tag) {
    const Vec2 w = v_rel - inv * r;
    const double len = w.norm();
    if (len < 1e-12) {
      throw std::domain_error("agent_halfplane: degenerate cutoff geometry");
    }
    const Vec2 wn = w / len;
    out.n = wn;
    out.b = wn.dot(self.v) + eta * (R * inv - len);
    out.vo_case = tag;
    if (!want_jac) return;
    const Mat2 M = (Mat2::Identity() - wn * wn.transpose()) / len;
    // dn/dr = -inv M, dn/dv_rel = M
    out.dn_dps = inv * M;
    out.dn_dpo = -inv * M;
    out.dn_dvs = M;
    out.dn_dvo = -M;
    const RowVec2 vsM = self.v.transpose() * M;
    const RowVec2 wn_t = wn.transpose();
    // db/dr = -inv (v_s^T M) + eta inv w^T, db/dv_rel = v_s^T M - eta w^T
    out.db_dps = inv * vsM - eta * inv * wn_t;
    out.db_dpo = -inv * vsM + eta * inv * wn_t;
    out.db_dvs = vsM - eta * wn_t + wn_t;
    out.db_dvo = -(vsM - eta * wn_t);
  };

  if (dist2 <= R * R) {
    cutoff_branch(1.0 / collision_dt, VoCase::collision);
    return out;
  }

  const Vec2 w = v_rel - r / tau;
  const double c1 = w.dot(r);
  if (c1 < 0.0 && c1 * c1 > R * R * w.squaredNorm()) {
    cutoff_branch(1.0 / tau, VoCase::cutoff);
    return out;
  }

  // Projection onto one of the tangent legs of the cone.
  const double D = dist2;
  const double L = std::sqrt(D - R * R);
  const bool left = det2(r, w) > 0.0;
  Vec2 A;
  Mat2 dA;  // dA(i, j) = d A_i / d r_j
  if (left) {
    A = {r.x() * L - r.y() * R, r.x() * R + r.y() * L};
    if (want_jac) {
      dA << L + r.x() * r.x() / L, r.x() * r.y() / L - R,
            R + r.x() * r.y() / L, L + r.y() * r.y() / L;
    }
  } else {
    A = {-r.x() * L - r.y() * R, r.x() * R - r.y() * L};
    if (want_jac) {
      dA << -L - r.x() * r.x() / L, -r.x() * r.y() / L - R,
            R - r.x() * r.y() / L, -L - r.y() * r.y() / L;
    }
  }
  const Vec2 dir = A / D;  // unit by construction
  const Vec2 n(-dir.y(), dir.x());
  out.n = n;
  out.b = n.dot(self.v) - eta * n.dot(v_rel);
  out.vo_case = left ? VoCase::left_leg : VoCase::right_leg;
  if (!want_jac) return out;

  const Mat2 ddir = dA / D - (2.0 / D) * dir * r.transpose();
  Mat2 dn_dr;
  dn_dr.row(0) = -ddir.row(1);
  dn_dr.row(1) = ddir.row(0);
  const RowVec2 g = (self.v - eta * v_rel).transpose() * dn_dr;
  out.dn_dps = -dn_dr;
  out.dn_dpo = dn_dr;
  out.db_dps = -g;
  out.db_dpo = g;
  out.db_dvs = (1.0 - eta) * n.transpose();
  out.db_dvo = eta * n.transpose();
  return out;
}

SegmentHalfPlaneJac segment_halfplane_jac(
  const Vec2 & p, double radius, const Segment & seg, double tau, bool want_jac)
{
  if (tau <= 0.0) {
    throw std::invalid_argument("segment_halfplane: non-positive horizon");
  }
  const Vec2 cp = closest_point_on_segment(p, seg);
  const Vec2 e = p - cp;
  const double d = e.norm();
  if (d < 1e-12) {
    throw std::domain_error("segment_halfplane: center on the segment");
  }
  SegmentHalfPlaneJac out;
  out.n = e / d;
  out.b = -std::max(d - radius, 0.0) / tau;
  if (!want_jac) return out;

  // For an interior projection the offset e is constant along the segment,
  // so n is locally constant; at an endpoint the gradient curves around it.
  const Vec2 seg_d = seg.b - seg.a;
  const double len2 = seg_d.squaredNorm();
  bool interior = false;
  if (len2 > 0.0) {
    const double t = (p - seg.a).dot(seg_d) / len2;
    interior = t > 0.0 && t < 1.0;
  }
  if (!interior) {
    out.dn_dp = (Mat2::Identity() - out.n * out.n.transpose()) / d;
  }
  if (d > radius) {
    out.db_dp = -out.n.transpose() / tau;
  }
  return out;
}

IntentJac intent_jacobian(
  const Vec2 & p, const Vec2 & goal, double intent_horizon, double max_speed)
{
  IntentJac out;
  const Vec2 e = goal - p;
  const double d = e.norm();
  if (d < 1e-6) return out;
  if (d / intent_horizon <= max_speed) {
    out.v = e / intent_horizon;
    out.dv_dp = -Mat2::Identity() / intent_horizon;
  } else {
    const Vec2 eh = e / d;
    out.v = max_speed * eh;
    out.dv_dp = -(max_speed / d) * (Mat2::Identity() - eh * eh.transpose());
  }
  return out;
}

}  // namespace sicnav::detail

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

#ifndef DETAIL__UNICYCLE_HPP_
#define DETAIL__UNICYCLE_HPP_

#include <cmath>

namespace sicnav::detail
{

// sin(u)/u, series-switched so the value and derivative stay smooth at 0.
inline double sinc(double u)
{
  if (std::abs(u) < 1e-4) {
    const double u2 = u * u;
    return 1.0 - u2 / 6.0 + u2 * u2 / 120.0;
  }
  return std::sin(u) / u;
}

inline double dsinc(double u)
{
  if (std::abs(u) < 1e-4) {
    const double u2 = u * u;
    return u * (-1.0 / 3.0 + u2 / 30.0);
  }
  return (u * std::cos(u) - std::sin(u)) / (u * u);
}

// Exact-arc displacement of a unicycle holding (v, omega) for dt:
//   dx = v dt sinc(omega dt / 2) cos(theta + omega dt / 2)
//   dy = v dt sinc(omega dt / 2) sin(theta + omega dt / 2)
// This equals the closed-form arc for omega != 0 and v dt (cos, sin) at 0.
struct ArcStep
{
  double dx, dy;
  // partials with respect to theta, v, omega
  double dx_dtheta, dx_dv, dx_domega;
  double dy_dtheta, dy_dv, dy_domega;
};

inline ArcStep arc_step(double theta, double v, double omega, double dt)
{
  const double u = 0.5 * omega * dt;
  const double phi = theta + u;
  const double s = sinc(u);
  const double ds = dsinc(u);
  const double c_phi = std::cos(phi);
  const double s_phi = std::sin(phi);
  ArcStep out;
  out.dx = v * dt * s * c_phi;
  out.dy = v * dt * s * s_phi;
  out.dx_dtheta = -v * dt * s * s_phi;
  out.dy_dtheta = v * dt * s * c_phi;
  out.dx_dv = dt * s * c_phi;
  out.dy_dv = dt * s * s_phi;
  const double du = 0.5 * dt;
  out.dx_domega = v * dt * du * (ds * c_phi - s * s_phi);
  out.dy_domega = v * dt * du * (ds * s_phi + s * c_phi);
  return out;
}

}  // namespace sicnav::detail

#endif  // DETAIL__UNICYCLE_HPP_

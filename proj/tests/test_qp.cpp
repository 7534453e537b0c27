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

#include "sicnav/qp.hpp"

#include "doctest.h"
#include "oracles.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <random>

using namespace sicnav;

namespace
{

constexpr double kInf = std::numeric_limits<double>::infinity();

SpMat dense_to_sparse(const Eigen::MatrixXd & m)
{
  return m.sparseView(1e-300, 1.0);
}

// Random strictly convex box QP with a mix of equality, inequality, and
// two-sided rows.
BoxQp random_qp(std::mt19937 & rng, int n, int m)
{
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Eigen::MatrixXd M(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) M(i, j) = u(rng);
  }
  Eigen::MatrixXd P = M.transpose() * M + 0.1 * Eigen::MatrixXd::Identity(n, n);
  Eigen::MatrixXd A(m, n);
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) A(i, j) = u(rng);
  }
  BoxQp qp;
  qp.P = dense_to_sparse(P);
  qp.A = dense_to_sparse(A);
  qp.q.resize(n);
  for (int j = 0; j < n; ++j) qp.q(j) = u(rng);
  qp.l.resize(m);
  qp.u.resize(m);
  std::uniform_int_distribution<int> kind(0, 3);
  for (int i = 0; i < m; ++i) {
    const double c = u(rng);
    switch (kind(rng)) {
      case 0:  // equality
        qp.l(i) = qp.u(i) = c;
        break;
      case 1:  // upper only
        qp.l(i) = -kInf;
        qp.u(i) = c + 0.5;
        break;
      case 2:  // lower only
        qp.l(i) = c - 0.5;
        qp.u(i) = kInf;
        break;
      default:  // two-sided
        qp.l(i) = c - 0.8;
        qp.u(i) = c + 0.8;
        break;
    }
  }
  return qp;
}

double objective(const BoxQp & qp, const VecXd & x)
{
  const Eigen::MatrixXd P = Eigen::MatrixXd(qp.P).selfadjointView<Eigen::Upper>();
  return 0.5 * x.dot(P * x) + qp.q.dot(x);
}

}  // namespace

TEST_CASE("box qp: unconstrained quadratic")
{
  BoxQp qp;
  Eigen::MatrixXd P(2, 2);
  P << 2, 0, 0, 2;
  qp.P = dense_to_sparse(P);
  qp.q = -2.0 * Eigen::Vector2d(1.0, -3.0);
  qp.A = SpMat(0, 2);
  qp.l.resize(0);
  qp.u.resize(0);
  BoxQpSolver solver;
  const QpResult r = solver.solve(qp);
  CHECK(r.status == QpStatus::solved);
  CHECK((r.x - Eigen::Vector2d(1.0, -3.0)).norm() <= 1e-7);
}

TEST_CASE("box qp: equality-constrained projection")
{
  // min ||x||^2 s.t. x1 + x2 = 2 -> (1, 1), dual -2 under P x + q + A'y = 0
  BoxQp qp;
  Eigen::MatrixXd P(2, 2);
  P << 2, 0, 0, 2;
  qp.P = dense_to_sparse(P);
  qp.q = Eigen::Vector2d::Zero();
  Eigen::MatrixXd A(1, 2);
  A << 1, 1;
  qp.A = dense_to_sparse(A);
  qp.l = VecXd::Constant(1, 2.0);
  qp.u = VecXd::Constant(1, 2.0);
  BoxQpSolver solver;
  const QpResult r = solver.solve(qp);
  CHECK(r.status == QpStatus::solved);
  CHECK((r.x - Eigen::Vector2d(1.0, 1.0)).norm() <= 1e-7);
  CHECK(r.y(0) == doctest::Approx(-2.0).epsilon(1e-6));
}

TEST_CASE("box qp: randomized instances against exhaustive enumeration")
{
  std::mt19937 rng(101);
  for (int trial = 0; trial < 60; ++trial) {
    const int n = 2 + trial % 4;
    const int m = 1 + trial % 5;
    const BoxQp qp = random_qp(rng, n, m);
    const auto ref = oracles::qp_enumerate(qp);
    BoxQpSolver solver;
    const QpResult r = solver.solve(qp);
    if (!ref.ok) {
      CHECK(r.status != QpStatus::solved);
      continue;
    }
    REQUIRE(r.status == QpStatus::solved);
    CHECK(objective(qp, r.x) <= ref.objective + 1e-6);
    CHECK(objective(qp, r.x) >= ref.objective - 1e-6);
    CHECK((r.x - ref.x).norm() <= 1e-4);
    // stationarity from the returned duals
    const Eigen::MatrixXd P = Eigen::MatrixXd(qp.P).selfadjointView<Eigen::Upper>();
    const Eigen::MatrixXd A = Eigen::MatrixXd(qp.A);
    const VecXd st = P * r.x + qp.q + A.transpose() * r.y;
    CHECK(st.cwiseAbs().maxCoeff() <= 1e-6);
    // dual signs and complementarity
    const VecXd ax = A * r.x;
    for (int i = 0; i < m; ++i) {
      if (qp.u(i) - qp.l(i) < 1e-14) continue;
      if (r.y(i) > 1e-7) CHECK(std::abs(ax(i) - qp.u(i)) <= 1e-5);
      if (r.y(i) < -1e-7) CHECK(std::abs(ax(i) - qp.l(i)) <= 1e-5);
    }
  }
}

TEST_CASE("box qp: primal infeasibility is certified")
{
  // x >= 1 and x <= -1
  BoxQp qp;
  Eigen::MatrixXd P(1, 1);
  P << 1;
  qp.P = dense_to_sparse(P);
  qp.q = VecXd::Zero(1);
  Eigen::MatrixXd A(2, 1);
  A << 1, 1;
  qp.A = dense_to_sparse(A);
  qp.l.resize(2);
  qp.u.resize(2);
  qp.l << 1.0, -kInf;
  qp.u << kInf, -1.0;
  BoxQpSolver solver;
  const QpResult r = solver.solve(qp);
  CHECK(r.status == QpStatus::primal_infeasible);
}

TEST_CASE("box qp: polish reaches tight residuals")
{
  std::mt19937 rng(103);
  const BoxQp qp = random_qp(rng, 5, 4);
  const auto ref = oracles::qp_enumerate(qp);
  if (ref.ok) {
    BoxQpSolver solver;
    const QpResult r = solver.solve(qp);
    REQUIRE(r.status == QpStatus::solved);
    CHECK(r.primal_residual <= 1e-7);
    CHECK(r.dual_residual <= 1e-7);
  }
}

TEST_CASE("box qp: warm start accelerates repeated solves")
{
  std::mt19937 rng(107);
  const BoxQp qp = random_qp(rng, 6, 5);
  const auto ref = oracles::qp_enumerate(qp);
  if (!ref.ok) return;
  BoxQpSolver solver;
  const QpResult cold = solver.solve(qp);
  REQUIRE(cold.status == QpStatus::solved);
  solver.warm_start(cold.x, cold.y);
  const QpResult warm = solver.solve(qp);
  REQUIRE(warm.status == QpStatus::solved);
  CHECK(warm.iterations <= cold.iterations);
  CHECK((warm.x - ref.x).norm() <= 1e-4);
}

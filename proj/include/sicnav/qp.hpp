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

#ifndef SICNAV__QP_HPP_
#define SICNAV__QP_HPP_

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include <vector>

namespace sicnav
{

using SpMat = Eigen::SparseMatrix<double>;
using VecXd = Eigen::VectorXd;

/// Convex QP in box form:
///   minimize 0.5 x' P x + q' x   subject to  l <= A x <= u.
/// Equalities are rows with l == u; variable bounds are identity rows.
struct BoxQp
{
  SpMat P;  ///< upper-triangular part is read, symmetrised internally
  VecXd q;
  SpMat A;
  VecXd l, u;
};

enum class QpStatus { solved, max_iter, primal_infeasible, dual_infeasible };

struct QpResult
{
  VecXd x;
  VecXd y;  ///< row multipliers: P x + q + A' y = 0, y < 0 at l, y > 0 at u
  QpStatus status = QpStatus::max_iter;
  int iterations = 0;
  double primal_residual = 0.0;
  double dual_residual = 0.0;
  bool polished = false;
};

struct QpSettings
{
  double rho = 0.1;            ///< base step for inequality rows
  double rho_eq_scale = 1e3;   ///< equality rows use rho * this
  double sigma = 1e-6;         ///< x regularisation
  double alpha = 1.6;          ///< relaxation
  double eps_abs = 1e-6;
  double eps_rel = 1e-6;
  int max_iter = 4000;
  int check_interval = 20;
  /// attempt an exact active-set solve at periodic checkpoints and accept
  /// it as the answer once it meets the tolerances; the splitting iteration
  /// then only needs to identify the active set, not converge tightly
  bool polish = true;
  bool adaptive_rho = true;
  bool scaling = true;         ///< Ruiz equilibration of A (and cost)
};

/// Operator-splitting solver with an active-set polish. The KKT sparsity is
/// analysed once per instance, so repeated solves with an identical pattern
/// (as in SQP iterations) reuse the symbolic factorisation. Warm starting
/// keeps the previous (x, y) when the dimensions match.
class BoxQpSolver
{
public:
  explicit BoxQpSolver(QpSettings settings = {});

  QpResult solve(const BoxQp & qp);

  /// Seeds the next solve; cleared automatically when sizes change.
  void warm_start(const VecXd & x, const VecXd & y);

  /// Replaces the settings and drops the cached pattern, warm start and
  /// active-set seed.
  void set_settings(const QpSettings & settings)
  {
    st_ = settings;
    pattern_ready_ = false;
    warm_x_.resize(0);
    warm_y_.resize(0);
    seed_rows_.clear();
    seed_side_.clear();
  }

private:
  QpSettings st_;
  Eigen::SimplicialLDLT<SpMat> ldlt_;
  bool pattern_ready_ = false;
  int pat_n_ = -1, pat_m_ = -1, pat_nnz_ = -1;
  VecXd warm_x_, warm_y_;
  // active set certified by the previous solve; -1 lower, +1 upper,
  // 2 two-sided. Seeds a direct attempt before any splitting iterations.
  std::vector<int> seed_rows_;
  std::vector<signed char> seed_side_;
  int seed_n_ = -1, seed_m_ = -1;
};

}  // namespace sicnav

#endif  // SICNAV__QP_HPP_

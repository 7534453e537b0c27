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

#ifndef SICNAV__PLANNER_HPP_
#define SICNAV__PLANNER_HPP_

#include "sicnav/core_model.hpp"
#include "sicnav/nlp.hpp"
#include "sicnav/orca.hpp"
#include "sicnav/types.hpp"

#include <vector>

namespace sicnav
{

/// Stage-cost weights of the horizon program.
struct MpcWeights
{
  double goal = 1.0;           ///< squared distance to goal, steps 1..T
  double align = 0.1;          ///< squared cross product of velocity and goal bearing
  double effort_v = 0.02;      ///< squared commanded speed
  double effort_omega = 0.02;  ///< squared commanded turn rate
  double rate_v = 0.1;         ///< squared per-step speed change
  double rate_omega = 0.05;    ///< squared per-step turn-rate change
  double terminal = 5.0;       ///< extra goal weight factor at the last step
  double slack = 500.0;        ///< L1 penalty on collision slack
};

/// Hard actuator limits; rates are per planning step.
struct ControlBounds
{
  double v_min = -0.5;
  double v_max = 1.5;
  double omega_max = 1.5;
  double dv_max = 0.5;
  double domega_max = 1.0;
};

/// Inner solver settings tuned for the horizon program: iteration-capped
/// (no wall clock) so repeated runs are bit-identical.
SolverConfig default_mpc_solver();

struct MpcConfig
{
  double dt = 0.25;
  int horizon_steps = 8;
  int n_orca_humans = 2;  ///< humans embedded with reactive predictions
  ControlBounds bounds;
  MpcWeights weights;
  double robot_radius = 0.38;
  double margin_human = 0.05;    ///< clearance added to the radii sum
  double margin_segment = 0.05;  ///< clearance added to the robot radius
  double eps_init = 1e-2;        ///< complementarity relaxation, first solve
  double eps_final = 1e-4;       ///< relaxation floor across replans
  double eps_decay = 0.6;        ///< geometric per-replan decay
  SolverConfig solver = default_mpc_solver();
};

/// Index map of the stacked horizon program. Decision blocks per step
/// t = 0..T-1: [u_t, utilde_{.,t}, (lambda, mu)_{.,t}, x_{t+1}, s_{t+1}];
/// the robot state block has 7 entries (x, y, theta, v, omega, v_dot,
/// omega_dot). Embedded human positions are affine in utilde and carry no
/// variables of their own.
struct MpcIndex
{
  int T = 0;        ///< horizon steps
  int K = 0;        ///< embedded (reactive) humans
  int P = 0;        ///< constant-position or externally predicted discs
  int S = 0;        ///< wall segments
  int m_ll = 0;     ///< half-planes per embedded velocity program
  int n_pairs = 0;  ///< robot collision pairs per step
  int block = 0;
  int n_vars = 0, n_eq = 0, n_ineq = 0;
  int eq_step = 0, ineq_step = 0;

  int u(int t) const { return t * block; }
  int hu(int t, int k) const { return t * block + 2 + 2 * k; }
  int lam(int t, int k, int i) const { return t * block + 2 + 2 * K + k * (m_ll + 1) + i; }
  int mu(int t, int k) const { return lam(t, k, m_ll); }
  /// robot state block, valid for t = 1..T
  int x(int t) const { return (t - 1) * block + 2 + 2 * K + K * (m_ll + 1); }
  /// collision slack j of step t, valid for t = 1..T
  int slack(int t, int j) const { return x(t) + 7 + j; }

  int eq_dyn(int t) const { return t * eq_step; }
  int eq_stat(int t, int k) const { return t * eq_step + 7 + 2 * k; }
  int ineq_rate(int t) const { return t * ineq_step; }
  int ineq_primal(int t, int k) const { return t * ineq_step + 4 + k * (m_ll + 1); }
  int ineq_compl(int t, int k) const
  {
    return t * ineq_step + 4 + (K + k) * (m_ll + 1);
  }
  /// collision row j of step t, valid for t = 1..T
  int ineq_coll(int t, int j) const
  {
    return (t - 1) * ineq_step + 4 + 2 * K * (m_ll + 1) + j;
  }
};

/// Human embedded with a reactive velocity program; index refers to the
/// original observation order.
struct OrcaHumanInput
{
  HumanState state;
  AgentParams params;
  int index = -1;
};

/// Disc obstacle with externally supplied positions for steps 0..T.
struct MovingDisc
{
  std::vector<Vec2> positions;
  double radius = 0.3;
  int index = -1;
};

/// Fully specified horizon program instance.
struct BuildInputs
{
  RobotState x0;
  Vec2 goal = Vec2::Zero();
  Control u_prev;  ///< applied on the previous tick; anchors rate limits
  std::vector<OrcaHumanInput> orca;
  std::vector<MovingDisc> discs;
  std::vector<Segment> segments;
  MpcConfig cfg;
  double eps = 1e-2;  ///< complementarity relaxation
};

struct BuiltNlp
{
  NlpProblem problem;
  MpcIndex idx;
};

/// Assembles the stacked horizon NLP: unicycle dynamics equalities, control
/// and rate limits, slack-relaxed collision separation, and per-human
/// stationarity / primal-feasibility / relaxed-complementarity blocks of the
/// embedded velocity programs. Half-plane order per program: robot, other
/// embedded humans (ascending), discs, segments.
BuiltNlp build_mpc_nlp(const BuildInputs & in);

/// Start point for the horizon program: robot states rolled out under
/// `controls` (bound-clamped), embedded velocities and duals from solve_orca
/// cascaded along the rollout, slacks set to the exact initial violations.
/// The embedded blocks therefore start exactly satisfied.
VecXd initial_guess(
  const BuildInputs & in, const MpcIndex & idx, const std::vector<Control> & controls);

enum class PlanStatus { ok, fallback };

struct MpcSolution
{
  std::vector<Control> controls;             ///< u_0..u_{T-1}, within bounds
  std::vector<JointState> states;            ///< x_0..x_T under `controls`
  std::vector<std::vector<Vec2>> human_vel;  ///< [t][k] embedded velocities
  std::vector<std::vector<VecXd>> duals;     ///< [t][k]: lambda per line, then mu
  std::vector<int> orca_indices;             ///< humans embedded reactively
  PlanStatus status = PlanStatus::ok;
  SolveStatus solver_status = SolveStatus::converged;
  KktResiduals kkt;
  double eps = 0.0;          ///< relaxation used by this solve
  double objective = 0.0;
  double solve_time_s = 0.0;
  int iterations = 0;
};

/// Ranks humans by time-to-collision against the robot's current velocity,
/// then by current distance, then by index, and returns the first k indices
/// (collision-free humans compare by distance).
std::vector<int> select_orca_humans(
  const RobotState & robot, const std::vector<HumanState> & humans,
  const std::vector<AgentParams> & params, double robot_radius, int k);

/// Embedded velocity program of human k at step t, reconstructed on the
/// frozen plan trajectory with the same geometry and line order as the
/// stacked program.
OrcaProblem lower_level_problem(
  const BuildInputs & in, const MpcSolution & sol, int t, int k);

struct LowerKkt
{
  double stationarity = 0.0;
  double primal = 0.0;           ///< worst half-plane / speed violation
  double dual = 0.0;             ///< most negative multiplier, as a magnitude
  double complementarity = 0.0;  ///< largest |multiplier * residual| product
};

/// Recomputes the embedded KKT residuals of a plan from its trajectory and
/// duals, independently of the solver's bookkeeping. Indexed [t][k].
std::vector<std::vector<LowerKkt>> kkt_residuals_lower(
  const BuildInputs & in, const MpcSolution & sol);

/// Re-solves every embedded (step, human) KKT system on the frozen plan
/// trajectory, annealing the relaxation from sol.eps down to eps_target in
/// decade steps. Returns refined velocities indexed like human_vel.
std::vector<std::vector<Vec2>> refine_lower_level(
  const BuildInputs & in, const MpcSolution & sol, double eps_target);

/// Constant-velocity disc predictions for steps 0..T, one per human.
std::vector<MovingDisc> predict_cvmm(
  const std::vector<HumanState> & humans, const std::vector<AgentParams> & params,
  double dt, int steps);

/// Receding-horizon planner that embeds nearby humans' velocity programs as
/// relaxed KKT systems, so their predictions react to the robot's plan.
/// Humans beyond the embedding budget are frozen in place.
class SicnavPlanner
{
public:
  explicit SicnavPlanner(const MpcConfig & cfg = MpcConfig{});

  /// One receding-horizon solve. Warm-started from the previous plan shifted
  /// by one step (last step duplicated) with fresh embedded initialization;
  /// falls back to a maximum-rate stop plan when the solve fails or lands
  /// outside feasibility tolerance.
  MpcSolution plan(
    const JointState & obs, const std::vector<AgentParams> & human_params,
    const Vec2 & goal, const std::vector<Segment> & segments);

  /// Drops the warm start and restarts the relaxation schedule.
  void reset();

  const MpcConfig & config() const { return cfg_; }
  double eps() const { return eps_; }
  /// Inputs assembled for the most recent plan (diagnostics, refinement).
  const BuildInputs & last_inputs() const { return last_in_; }

private:
  MpcConfig cfg_;
  SqpSolver solver_;
  double eps_;
  std::vector<Control> warm_;
  BuildInputs last_in_;
};

/// Identical horizon program without embedded reactions: every human is a
/// constant-velocity disc.
class CvmmPlanner
{
public:
  explicit CvmmPlanner(const MpcConfig & cfg = MpcConfig{});

  MpcSolution plan(
    const JointState & obs, const std::vector<AgentParams> & human_params,
    const Vec2 & goal, const std::vector<Segment> & segments);

  void reset();

  const MpcConfig & config() const { return cfg_; }
  const BuildInputs & last_inputs() const { return last_in_; }

private:
  MpcConfig cfg_;
  SqpSolver solver_;
  std::vector<Control> warm_;
  BuildInputs last_in_;
};

}  // namespace sicnav

#endif  // SICNAV__PLANNER_HPP_

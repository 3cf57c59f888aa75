#pragma once

// SAV time steppers: the auxiliary-trajectory scheme that propagates v, its
// multistage variant that restarts v from u each step, the four-tableau
// variant with the lookahead stage w and scalar channel r, and the
// prediction-correction iteration. All stage systems are linearly implicit:
// fields are solved mode by mode through the diagonal symbols, and the
// (u, q) coupling is eliminated down to a small dense system in the q values.

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "sav/model.hpp"
#include "sav/spectral.hpp"
#include "sav/tableau.hpp"

namespace sav {

struct SAVState {
  RealField u;
  double q = 0.0;
  double t = 0.0;
  // Auxiliary trajectory, carried across steps by step_sav_ark only. The
  // other steppers ignore it.
  std::optional<RealField> v;
};

// Consistent initial data: q = sqrt(radicand(u0)).
SAVState make_state(const GradientFlowModel& model, const RealField& u0, double t0 = 0.0);

struct EnergyPair {
  double modified = 0.0;
  double original = 0.0;
};

EnergyPair energies(const GradientFlowModel& model, const SAVState& state);

struct StepOptions {
  // Manufactured forcing; enters the u velocity at the implicit abscissae
  // and the nonlinear v velocity at the explicit abscissae.
  const SourceTerm* source = nullptr;
  // Recompute every stage equation after the solve and fill the residual
  // fields of the report. Costs extra transforms.
  bool diagnostics = false;
  // step_sav_markII only: drive the nonlinear v channel with the stage q
  // instead of the r channel. With a_tilde = a_main and a_bar = a_hat this
  // reduces the scheme to step_sav_mark stage by stage.
  bool tie_r_to_q = false;
};

struct StepReport {
  double modified_energy_before = 0.0;
  double modified_energy_after = 0.0;
  double q_after = 0.0;
  std::vector<double> stage_residuals;  // filled when diagnostics are on
  double max_stage_residual = 0.0;
  int sweeps_used = 0;  // step_sav_rkpc only
  double wall_seconds = 0.0;
};

// Per-stage arrays of one step. Entries for stages inside an implicit group
// are written together when the group is solved.
struct StageWorkspace {
  int s = 0;
  std::vector<RealField> v, f, u, vdotL, vdotN, udot;
  std::vector<RealField> gf;  // mobility applied to f, reused by vdotN
  std::vector<double> q, qdot;
};

StageWorkspace make_workspace(const GradientFlowModel& model, int s);

// Diagonally implicit stage i of the v channel: with
// rhs = v_base + tau*sum_{j<i}(a_ij vdotL_j + ahat_ij vdotN_j), solves
// (I - tau a_ii G L) v_i = rhs and stores v_i and vdotL_i = G L v_i.
// Raises SolverError when the tableau couples stage i to a later stage.
void explicit_stage_v(const GradientFlowModel& model, const ARKPair& pair, const RealField& v_base,
                      double tau, StageWorkspace& ws, int i);

// Diagonally implicit stage i of the coupled (u, q) system. Requires f_i in
// the workspace. Splits udot into a q-independent part plus q times a
// response field, reduces the stage to one scalar equation for q_i, and
// back-substitutes u_i, udot_i, qdot_i. A scalar denominator below 1e-13
// raises SolverError.
void coupled_uq_stage(const GradientFlowModel& model, const ARKPair& pair, const RealField& u_base,
                      double q_base, double tau, StageWorkspace& ws, int i,
                      const RealField* source = nullptr);

// One step of the scheme that restarts the auxiliary trajectory from u^n
// every step (no v update between steps).
StepReport step_sav_mark(const GradientFlowModel& model, const ARKPair& pair, SAVState& state,
                         double tau, const StepOptions& opts = {});

// One step of the scheme that propagates v across steps; state.v is created
// from state.u when absent and updated with the b-weighted combination.
StepReport step_sav_ark(const GradientFlowModel& model, const ARKPair& pair, SAVState& state,
                        double tau, const StepOptions& opts = {});

// One step of the four-tableau scheme with the lookahead stage w and the
// scalar channel r (reinitialized to q^n each step). Stages whose w inputs
// come from later stages are deferred until those inputs exist.
StepReport step_sav_markII(const GradientFlowModel& model, const MarkIITableaux& tabs,
                           SAVState& state, double tau, const StepOptions& opts = {});

struct RKPCOptions {
  int sweeps = 4;     // prediction sweep count M >= 1
  double tol = 1e-14; // early exit when stage iterates stall in max norm
};

// One step of the prediction-correction iteration on a single base tableau:
// sweeps with lagged nonlinear data, then a corrected (u, q) solve with the
// predicted stages frozen inside the nonlinear terms.
StepReport step_sav_rkpc(const GradientFlowModel& model, const ButcherTableau& base,
                         const RKPCOptions& rkpc, SAVState& state, double tau,
                         const StepOptions& opts = {});

using StepFn = std::function<StepReport(SAVState&, double)>;
using StepObserver = std::function<void(int step_index, const SAVState&, const StepReport&)>;

// Drives state from state.t to t_final: floor((t_final - t)/tau) full steps
// plus one shorter remainder step when the span does not divide evenly.
// The observer runs after every step. Solver failures are rethrown with the
// step index. Returns the number of steps taken.
int integrate(SAVState& state, double t_final, double tau, const StepFn& step,
              const StepObserver& observer = {});

}  // namespace sav

#pragma once

// Experiment driver behind the savark CLI: INI configuration ingestion, the
// named initial-condition registry, run directories with energy series and
// field snapshots, temporal refinement sweeps against manufactured or
// fine-step references, the tableau audit report, and the
// prediction-correction equivalence probe.

#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "sav/integrator.hpp"
#include "sav/model.hpp"
#include "sav/tableau.hpp"

namespace sav {

// Flat "section.key" view of an INI file with sections [model] [scheme]
// [grid] [time] [output] and lowercase snake_case keys.  Full-line comments
// start with '#' or ';'.  Keys are validated when a plan is built, not here.
using ConfigMap = std::map<std::string, std::string>;

ConfigMap parse_config_text(const std::string& text);
ConfigMap load_config(const std::string& path);

// Named initial data.  Each name fixes its own domain box; manufactured
// entries also carry the exact solution phi(x, y, t).
struct InitialCondition {
  std::string name;
  double x_left = 0.0, x_right = 1.0;
  double y_left = 0.0, y_right = 1.0;
  std::function<double(double, double)> value;
  std::function<double(double, double, double)> exact;  // null unless manufactured
};

const InitialCondition& initial_condition(const std::string& name);
const std::vector<std::string>& initial_condition_names();

// A fully resolved run: every default filled in and echoed back through
// `resolved`, the model and stepper bound and ready to integrate.
struct RunPlan {
  ConfigMap resolved;
  std::shared_ptr<Spectral> sp;
  GradientFlowModel model;
  RealField u0;
  std::shared_ptr<SourceTerm> source;                       // manufactured forcing
  std::function<double(double, double, double)> exact;      // null unless manufactured
  std::string scheme_label;
  StepFn stepper;
  double dt = 0.0;
  double t_final = 0.0;
  std::vector<double> snapshot_times;  // sorted, deduplicated, includes 0 and t_final
  std::string out_dir;
  std::string format;  // "savf" or "csv"
};

// Validates every key against the schema (unknown keys are ConfigErrors) and
// resolves defaults.  The returned plan owns copies of everything it needs.
RunPlan plan_run(const ConfigMap& cfg);

struct RunResult {
  std::string dir;
  int steps = 0;
  std::string status;  // "ok" or "solver_error"
  std::string error;   // empty when ok
  std::vector<std::string> outputs;  // file names relative to dir
};

// Integrates the configured problem, writing energy.csv, snapshots at the
// requested times, and manifest.json.  Solver failures are recorded in the
// manifest rather than thrown; reruns produce byte-identical files.
RunResult run(const ConfigMap& cfg);

// Output directory a config resolves to: [output] dir, default "out".
std::string output_dir(const ConfigMap& cfg);

// Snapshot container: magic "SAVF", u32 version = 1, u64 nx, u64 ny,
// f64 time, then nx*ny f64 values with the x index outer; all little endian.
void write_field_savf(const std::string& path, const RealField& u, double time);
RealField read_field_savf(const std::string& path, double* time = nullptr);
// Plain matrix CSV: nx rows of ny comma-separated values.
void write_field_csv(const std::string& path, const RealField& u);

struct ConvergenceRow {
  std::string scheme;
  double dt = 0.0;
  double l2_error = 0.0;
  double linf_error = 0.0;
  std::optional<double> rate_l2;   // empty on the first row or for zero errors
  std::optional<double> rate_linf;
};

// Target field at t_final on the plan's grid.  `reference` is either
// "manufactured" (requires an initial condition with an exact solution) or
// "fine:TAU" (a run of scheme.reference at step TAU; when that name matches
// the plan's own scheme the plan's stepper is reused verbatim).
RealField reference_solution(const RunPlan& plan, const std::string& reference);

// Refinement sweep: one integration per dt, errors at t_final against the
// reference, rates log(e_prev/e_cur)/log(dt_prev/dt_cur) from the second row
// onward.
std::vector<ConvergenceRow> converge(const ConfigMap& cfg, const std::vector<double>& dts,
                                     const std::string& reference);
std::vector<ConvergenceRow> converge_against(const RunPlan& plan, const std::vector<double>& dts,
                                             const RealField& target);
void write_convergence_csv(std::ostream& out, const std::vector<ConvergenceRow>& rows);

struct AuditRow {
  std::string name;
  int claimed_order = 0;
  std::vector<std::string> violations;  // structural problems, empty when well formed
  TableauKind implicit_kind = TableauKind::general;
  TableauKind explicit_kind = TableauKind::general;
  StabilityReport stability;  // of the implicit tableau
  OrderReport order;          // conditions up to min(claimed, 3)
  std::string note;
};

std::vector<AuditRow> audit_tableaux();
void write_audit_text(std::ostream& out, const std::vector<AuditRow>& rows);
void write_audit_csv(std::ostream& out, const std::vector<AuditRow>& rows);

// Steps the prediction-correction driver and its expanded four-tableau
// rewrite side by side on a small stock problem ("ac", "ch", or "mbe") and
// returns the largest relative deviation in the field or the scalar.
double equivalence_check(const std::string& base, int sweeps, const std::string& model_kind,
                         int steps);

}  // namespace sav

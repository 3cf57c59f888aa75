#pragma once

// Butcher tableaux for additive Runge-Kutta pairs: structural validation,
// classification, algebraic stability, order conditions up to order three,
// the built-in method catalogue, and the Kronecker-block construction that
// rewrites M prediction sweeps plus one correction as a single pair of
// four coupled tableaux.

#include <iosfwd>
#include <string>
#include <vector>

namespace sav {

struct ButcherTableau {
  int s = 0;                // stage count
  std::vector<double> A;    // s*s, row major
  std::vector<double> b;    // s
  std::vector<double> c;    // s, row sums of A for every built-in method

  double a(int i, int j) const { return A[static_cast<size_t>(i) * s + j]; }
  double& a(int i, int j) { return A[static_cast<size_t>(i) * s + j]; }
};

// Zero-filled tableau with s stages.
ButcherTableau zero_tableau(int s);

enum class TableauKind { explicit_rk, diagonally_implicit, general };

std::string to_string(TableauKind kind);

// Structural violations: dimension mismatches, non-finite entries, and
// |c_i - sum_j a_ij| > tol.  Empty result means the tableau is well formed.
std::vector<std::string> validate(const ButcherTableau& t, double tol = 1e-12);

// explicit_rk: strictly lower triangular.  diagonally_implicit: lower
// triangular with at least one nonzero diagonal entry.  Anything else is
// general.
TableauKind classify(const ButcherTableau& t);

struct StabilityReport {
  std::vector<double> m_eigenvalues;  // eigenvalues of M, descending
  double b_min = 0.0;
  bool algebraically_stable = false;
};

// M_ij = b_i a_ij + b_j a_ji - b_i b_j.  Algebraically stable when
// min b_i >= -1e-12 and min eigenvalue of M >= -1e-10.
StabilityReport algebraic_stability(const ButcherTableau& t);

// R(z) = 1 + z b^T (I - zA)^{-1} 1.
double stability_function(const ButcherTableau& t, double z);

struct ARKPair {
  std::string name;
  ButcherTableau implicit_part;  // weights the linear stage terms
  ButcherTableau explicit_part;  // weights the nonlinear stage terms
  int claimed_order = 0;
};

struct OrderCondition {
  std::string id;
  int order = 0;
  double residual = 0.0;
  bool satisfied = false;  // |residual| <= 1e-10
};

struct OrderReport {
  std::vector<OrderCondition> conditions;
  int achieved_order = 0;  // highest p with every condition of order <= p satisfied
};

// Evaluates every stand-alone and coupling condition of order <= target.
// Conditions above order three are not tabulated; target > 3 is an error.
OrderReport check_ark_order(const ARKPair& pair, int target_order);

// Two-stage pair with free implicit diagonal gamma; second order for any
// gamma, algebraically stable iff gamma >= 1/4.
ARKPair make_diark_2_2_2(double gamma);

// Catalogue: DIARK(2,2,2) (default gamma (3+sqrt 3)/6), DIARK(2,3,3),
// DIARK(3,4,3), DIARK(5,6,4), GARK(4,5,4).  Unknown names raise ConfigError
// listing the catalogue.
ARKPair builtin_ark(const std::string& name);
const std::vector<std::string>& builtin_ark_names();

// Single tableaux used as prediction-correction bases: "implicit_euler"
// and "gauss2" (the two-stage Gauss-Legendre method).
ButcherTableau base_tableau(const std::string& name);

// Four coupled tableaux sharing one weight vector b.  a_main weights the
// linear v channel and the u, q recursions; a_hat the nonlinear v channel;
// a_tilde / a_bar the linear / nonlinear channels of the lookahead stage w.
struct MarkIITableaux {
  std::string name;
  ButcherTableau a_main;
  ButcherTableau a_hat;
  ButcherTableau a_tilde;
  ButcherTableau a_bar;
};

// Kronecker-block tableaux with (sweeps+1)*s stages: block 0 holds the
// initialization sweep, blocks 1..sweeps the prediction sweeps, and b is
// supported on the last block, which plays the correction.
MarkIITableaux build_rkpc_markii(const ButcherTableau& base, int sweeps);

// Text format: sections [implicit] and [explicit], each with "A =" followed
// by s rows of s decimals and a "b = ..." line; c is always derived as row
// sums and never read.  '#' starts a comment.
ARKPair parse_ark_pair(std::istream& in, const std::string& name = "custom");
ARKPair load_ark_pair(const std::string& path);
void write_ark_pair(std::ostream& out, const ARKPair& pair);

}  // namespace sav

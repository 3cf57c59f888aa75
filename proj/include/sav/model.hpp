#pragma once

// Gradient-flow model descriptions: the mobility and linear symbols, the
// auxiliary-variable radicand, the nonlinear stage term
// f[v] = dW/du[v] - div(dW/dgrad u)[v], and both energy evaluators, for the
// Allen-Cahn, Cahn-Hilliard, and molecular-beam-epitaxy equations.

#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "sav/spectral.hpp"

namespace sav {

// Optional forcing h(x, y, t) used by manufactured-solution tests. The stage
// velocity of u picks it up at the implicit abscissae t_n + c_i*tau and the
// explicit velocity channel at t_n + chat_i*tau.
struct SourceTerm {
  std::function<double(double, double, double)> h;
};

struct GradientFlowModel {
  std::string name;
  std::shared_ptr<Spectral> sp;
  double kappa = 0.0;
  double C = 1.0;
  bool conserves_mass = false;
  bool dealias = false;  // two-thirds filter on the nonlinear stage term

  // Resolved parameters in declaration order, recorded in run manifests.
  std::vector<std::pair<std::string, double>> params;

  Symbol mobility;  // symbol of G (negative semi-definite)
  Symbol linear;    // symbol of L including the kappa stabilization
  Symbol stage;     // product symbol of G*L driving the implicit stage solves

  // Fast path when G is a constant multiple of the identity.
  bool mobility_is_constant = false;
  double mobility_value = 0.0;

  // f[v]; empty for linear test models (nonlinearity disabled).
  std::function<RealField(const RealField&)> f;
  // (W-integrand(v), 1)_N plus the model's C convention; q = sqrt(radicand).
  std::function<double(const RealField&)> radicand;
  std::function<double(const RealField&)> original_energy_fn;
  // modified energy = 1/2 (u, L u)_N + q^2 - energy_shift
  double energy_shift = 0.0;

  bool has_nonlinearity() const { return static_cast<bool>(f); }
};

// u_t = eps^2 Lap u + u - u^3. Mobility -1; linear symbol eps^2|k|^2 + kappa
// with F_kappa(u) = (u^2-1)^2/4 - (kappa/2)u^2; radicand (F_kappa(v),1)_N + C.
GradientFlowModel make_ac(std::shared_ptr<Spectral> sp, double eps, double kappa = 1.0,
                          double C = 1.0);

// u_t = lambda Lap(-eps^2 Lap u + u^3 - u). Mobility -lambda|k|^2; linear
// symbol eps^2|k|^2 + kappa; radicand ((v^2-1-kappa)^2,1)_N/4 + C|Omega|.
GradientFlowModel make_ch(std::shared_ptr<Spectral> sp, double lambda, double eps,
                          double kappa = 0.0, double C = 1.0);

// u_t = -lambda(delta Lap^2 u - div f(grad u)). Mobility -lambda. With slope
// selection: linear symbol delta|k|^4 + kappa|k|^2 and radicand
// ((|grad v|^2-1-kappa)^2,1)_N/4 + C|Omega|. Without: linear symbol
// delta|k|^4 and radicand ((kappa/2)|grad v|^2 - ln(1+|grad v|^2)/2, 1)_N
// + C|Omega|, requiring kappa >= 1/8.
GradientFlowModel make_mbe(std::shared_ptr<Spectral> sp, double lambda, double delta,
                           double kappa = 0.0, double C = 1.0, bool slope_selection = true);

// Test model u_t = G L u with the nonlinearity removed: f is empty, q stays
// constant. sigma_g and sigma_l are symbols in (kx^2, ky^2).
GradientFlowModel make_linear_model(std::shared_ptr<Spectral> sp,
                                    const std::function<double(double, double)>& sigma_g,
                                    const std::function<double(double, double)>& sigma_l);

// q(0) = sqrt(radicand(u0)); throws ConfigError when the radicand is not
// positive (C too small).
double q_init(const GradientFlowModel& model, const RealField& u0);

double modified_energy(const GradientFlowModel& model, const RealField& u, double q);
double original_energy(const GradientFlowModel& model, const RealField& u);
double mass(const GradientFlowModel& model, const RealField& u);

// Applies the mobility G to a field (constant fast path or symbol).
RealField apply_mobility(const GradientFlowModel& model, const RealField& w);

}  // namespace sav

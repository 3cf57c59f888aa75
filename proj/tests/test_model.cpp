#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <memory>
#include <random>

#include "doctest.h"
#include "sav/errors.hpp"
#include "sav/model.hpp"
#include "sav/spectral.hpp"

using namespace sav;

namespace {

const double kTwoPi = 2.0 * M_PI;

std::shared_ptr<Spectral> unit_square(int n) {
  return std::make_shared<Spectral>(make_grid(n, n, 0.0, 1.0, 0.0, 1.0));
}

std::shared_ptr<Spectral> torus(int n) {
  return std::make_shared<Spectral>(make_grid(n, n, 0.0, kTwoPi, 0.0, kTwoPi));
}

RealField constant_field(const Grid2D& g, double c) {
  RealField u = make_field(g);
  for (double& x : u.v) x = c;
  return u;
}

// Random trig polynomial with modes up to 3 in each direction: periodic on
// any box, band limited on every grid used here, derivatives exact.
RealField random_trig(const Grid2D& g, std::mt19937& rng, double amp) {
  std::uniform_real_distribution<double> coef(-amp, amp);
  std::uniform_real_distribution<double> phase(0.0, kTwoPi);
  std::uniform_int_distribution<int> mode(-3, 3);
  struct Wave {
    double a, ph;
    int j, k;
  };
  std::vector<Wave> waves(6);
  for (Wave& w : waves) w = {coef(rng), phase(rng), mode(rng), mode(rng)};
  const double ax = kTwoPi / g.lx();
  const double ay = kTwoPi / g.ly();
  return sample(g, [&](double x, double y) {
    double s = 0.0;
    for (const Wave& w : waves) s += w.a * std::cos(w.j * ax * x + w.k * ay * y + w.ph);
    return s;
  });
}

RealField axpy(const RealField& u, double eta, const RealField& phi) {
  RealField w = u;
  for (size_t i = 0; i < w.v.size(); ++i) w.v[i] += eta * phi.v[i];
  return w;
}

// Central difference of q(u) = sqrt(radicand(u)) along phi against the
// pairing (f(u), phi)_N.
void check_variational_consistency(const GradientFlowModel& m, unsigned seed, double amp) {
  const Grid2D& g = m.sp->grid();
  std::mt19937 rng(seed);
  for (int trial = 0; trial < 20; ++trial) {
    const RealField u = random_trig(g, rng, amp);
    const RealField phi = random_trig(g, rng, amp);
    const double eta = 1e-5;
    const double qp = std::sqrt(m.radicand(axpy(u, eta, phi)));
    const double qm = std::sqrt(m.radicand(axpy(u, -eta, phi)));
    const double fd = (qp - qm) / (2.0 * eta);
    const double pairing = inner(g, m.f(u), phi);
    CAPTURE(trial);
    CHECK(std::abs(fd - pairing) < 1e-6);
  }
}

void check_energy_identity(const GradientFlowModel& m, const RealField& u) {
  const double q = q_init(m, u);
  const double e_mod = modified_energy(m, u, q);
  const double e_orig = original_energy(m, u);
  CHECK(std::abs(e_mod - e_orig) <= 1e-12 * std::max(1.0, std::abs(e_orig)));
}

}  // namespace

TEST_CASE("allen-cahn auxiliary variable at the zero state") {
  auto sp = unit_square(32);
  const GradientFlowModel m = make_ac(sp, 0.01, 1.0, 1.0);
  const RealField u0 = constant_field(sp->grid(), 0.0);
  CHECK(q_init(m, u0) == doctest::Approx(1.118033988749895).epsilon(1e-13));
}

TEST_CASE("allen-cahn nonlinear term at the constant one state") {
  auto sp = unit_square(32);
  const GradientFlowModel m = make_ac(sp, 0.1, 1.0, 1.0);
  const RealField u1 = constant_field(sp->grid(), 1.0);
  const RealField fu = m.f(u1);
  for (int j = 0; j < 32; j += 7) {
    for (int k = 0; k < 32; k += 5) {
      CHECK(fu.at(j, k) == doctest::Approx(-0.7071067811865475).epsilon(1e-13));
    }
  }
}

TEST_CASE("cahn-hilliard auxiliary variable at reference states") {
  auto sp = torus(32);
  const GradientFlowModel m = make_ch(sp, 1.0, 0.01, 0.0, 1.0);
  CHECK(q_init(m, constant_field(sp->grid(), 0.0)) ==
        doctest::Approx(7.024814731040727).epsilon(1e-13));
  CHECK(q_init(m, constant_field(sp->grid(), 1.0)) ==
        doctest::Approx(6.283185307179586).epsilon(1e-13));
}

TEST_CASE("mbe auxiliary variable at constant states") {
  auto sp = torus(32);
  const GradientFlowModel flat = make_mbe(sp, 1.0, 0.1, 0.0, 1.0);
  CHECK(q_init(flat, constant_field(sp->grid(), 0.0)) ==
        doctest::Approx(7.024814731040727).epsilon(1e-13));
  const GradientFlowModel stab = make_mbe(sp, 1.0, 0.1, 0.5, 1.0);
  CHECK(q_init(stab, constant_field(sp->grid(), 0.3)) ==
        doctest::Approx(7.853981633974483).epsilon(1e-13));
}

TEST_CASE("variational consistency of the nonlinear stage term") {
  SUBCASE("allen-cahn") {
    auto sp = unit_square(32);
    check_variational_consistency(make_ac(sp, 0.1, 1.0, 1.0), 11u, 0.3);
  }
  SUBCASE("cahn-hilliard") {
    auto sp = torus(32);
    check_variational_consistency(make_ch(sp, 1.0, 0.1, 0.0, 1.0), 12u, 0.3);
  }
  SUBCASE("cahn-hilliard stabilized") {
    auto sp = torus(32);
    check_variational_consistency(make_ch(sp, 0.5, 0.1, 2.0, 1.0), 13u, 0.3);
  }
  SUBCASE("mbe with slope selection") {
    auto sp = torus(32);
    check_variational_consistency(make_mbe(sp, 1.0, 0.1, 0.0, 1.0), 14u, 0.2);
  }
  SUBCASE("mbe without slope selection") {
    auto sp = torus(32);
    check_variational_consistency(make_mbe(sp, 1.0, 0.1, 0.5, 1.0, false), 15u, 0.2);
  }
}

TEST_CASE("mbe divergence-form pairing equals the gradient-form pairing") {
  auto sp = torus(32);
  const Grid2D& g = sp->grid();
  const GradientFlowModel m = make_mbe(sp, 1.0, 0.1, 0.3, 1.0);
  std::mt19937 rng(21u);
  for (int trial = 0; trial < 5; ++trial) {
    const RealField u = random_trig(g, rng, 0.3);
    const RealField phi = random_trig(g, rng, 0.3);
    const double div_form = inner(g, m.f(u), phi);

    const double q = std::sqrt(m.radicand(u));
    RealField ux, uy, px, py;
    sp->gradient(u, ux, uy);
    sp->gradient(phi, px, py);
    double grad_form = 0.0;
    for (size_t i = 0; i < ux.v.size(); ++i) {
      const double w = ux.v[i] * ux.v[i] + uy.v[i] * uy.v[i] - 1.0 - m.kappa;
      grad_form += w * (ux.v[i] * px.v[i] + uy.v[i] * py.v[i]);
    }
    grad_form *= g.cell_area() / (2.0 * q);

    CAPTURE(trial);
    CHECK(std::abs(div_form - grad_form) <= 1e-12 * std::max(1.0, std::abs(grad_form)));
  }
}

TEST_CASE("modified energy equals the original energy at q = q_init") {
  std::mt19937 rng(31u);
  SUBCASE("allen-cahn, arbitrary field") {
    auto sp = unit_square(32);
    std::uniform_real_distribution<double> dist(-0.5, 0.5);
    RealField u = make_field(sp->grid());
    for (double& x : u.v) x = dist(rng);
    check_energy_identity(make_ac(sp, 0.05, 1.0, 1.0), u);
  }
  SUBCASE("cahn-hilliard, arbitrary field") {
    auto sp = torus(32);
    std::uniform_real_distribution<double> dist(-0.5, 0.5);
    RealField u = make_field(sp->grid());
    for (double& x : u.v) x = dist(rng);
    check_energy_identity(make_ch(sp, 1.0, 0.1, 0.7, 1.0), u);
  }
  SUBCASE("mbe with slope selection, kappa zero, arbitrary field") {
    auto sp = torus(32);
    std::uniform_real_distribution<double> dist(-0.3, 0.3);
    RealField u = make_field(sp->grid());
    for (double& x : u.v) x = dist(rng);
    check_energy_identity(make_mbe(sp, 1.0, 0.1, 0.0, 1.0), u);
  }
  SUBCASE("mbe with slope selection, stabilized, band-limited field") {
    auto sp = torus(32);
    check_energy_identity(make_mbe(sp, 1.0, 0.1, 0.5, 1.0), random_trig(sp->grid(), rng, 0.3));
  }
  SUBCASE("mbe without slope selection, arbitrary field") {
    auto sp = torus(32);
    std::uniform_real_distribution<double> dist(-0.3, 0.3);
    RealField u = make_field(sp->grid());
    for (double& x : u.v) x = dist(rng);
    check_energy_identity(make_mbe(sp, 1.0, 0.1, 0.5, 1.0, false), u);
  }
}

TEST_CASE("allen-cahn original energy of a single mode") {
  auto sp = unit_square(32);
  const GradientFlowModel m = make_ac(sp, 0.01, 1.0, 1.0);
  const RealField u = sample(sp->grid(), [](double x, double y) {
    return 0.1 * std::sin(kTwoPi * x) * std::sin(kTwoPi * y);
  });
  CHECK(original_energy(m, u) == doctest::Approx(0.24876338522940108).epsilon(1e-12));
}

TEST_CASE("cahn-hilliard modified energy at the zero state") {
  auto sp = torus(32);
  const GradientFlowModel m = make_ch(sp, 1.0, 0.01, 0.0, 1.0);
  const RealField u0 = constant_field(sp->grid(), 0.0);
  const double q = q_init(m, u0);
  CHECK(modified_energy(m, u0, q) == doctest::Approx(9.869604401089358).epsilon(1e-13));
}

TEST_CASE("symbol signs and the zero-mode product") {
  auto sp = torus(32);
  std::vector<GradientFlowModel> models;
  models.push_back(make_ac(sp, 0.1, 1.0, 1.0));
  models.push_back(make_ch(sp, 1.0, 0.1, 0.0, 1.0));
  models.push_back(make_ch(sp, 1.0, 0.1, 0.5, 1.0));
  models.push_back(make_mbe(sp, 1.0, 0.1, 0.0, 1.0));
  models.push_back(make_mbe(sp, 1.0, 0.1, 0.5, 1.0, false));

  for (const GradientFlowModel& m : models) {
    CAPTURE(m.name);
    bool g_nonpos = true, l_nonneg = true, l_pos_away = true, stage_nonpos = true;
    for (size_t i = 0; i < m.mobility.v.size(); ++i) {
      g_nonpos = g_nonpos && m.mobility.v[i] <= 0.0;
      l_nonneg = l_nonneg && m.linear.v[i] >= 0.0;
      if (i != 0) l_pos_away = l_pos_away && m.linear.v[i] > 0.0;
      stage_nonpos = stage_nonpos && m.stage.v[i] <= 0.0;
    }
    CHECK(g_nonpos);
    CHECK(l_nonneg);
    CHECK(l_pos_away);
    CHECK(stage_nonpos);
  }

  // Mass conservation hinges on an exactly vanishing zero mode.
  CHECK(models[1].mobility.v[0] == 0.0);
  CHECK(models[2].mobility.v[0] == 0.0);
  CHECK(models[3].linear.v[0] == 0.0);
  CHECK(models[4].linear.v[0] == 0.0);
  CHECK(models[1].mobility.v[0] * models[1].linear.v[0] == 0.0);
  CHECK(models[3].mobility.v[0] * models[3].linear.v[0] == 0.0);
}

TEST_CASE("stage velocity has zero mean for conservative models") {
  auto sp = torus(32);
  std::mt19937 rng(41u);
  std::vector<GradientFlowModel> models;
  models.push_back(make_ch(sp, 1.0, 0.1, 0.0, 1.0));
  models.push_back(make_ch(sp, 2.0, 0.1, 1.0, 1.0));
  models.push_back(make_mbe(sp, 1.0, 0.1, 0.0, 1.0));
  models.push_back(make_mbe(sp, 1.0, 0.1, 0.5, 1.0, false));

  for (GradientFlowModel& m : models) {
    CAPTURE(m.name);
    CHECK(m.conserves_mass);
    const RealField u = random_trig(sp->grid(), rng, 0.2);
    const double q = q_init(m, u);
    RealField w = m.sp->apply(m.linear, u);
    const RealField fu = m.f(u);
    for (size_t i = 0; i < w.v.size(); ++i) w.v[i] += 2.0 * q * fu.v[i];
    const RealField udot = apply_mobility(m, w);
    CHECK(std::abs(integral(sp->grid(), udot)) <= 1e-12);
  }
}

TEST_CASE("constant mobility fast path matches the symbol path") {
  auto sp = torus(32);
  GradientFlowModel m = make_mbe(sp, 1.7, 0.1, 0.0, 1.0);
  std::mt19937 rng(51u);
  const RealField w = random_trig(sp->grid(), rng, 0.4);
  CHECK(m.mobility_is_constant);
  CHECK(m.mobility_value == doctest::Approx(-1.7).epsilon(1e-15));
  const RealField fast = apply_mobility(m, w);
  const RealField slow = sp->apply(m.mobility, w);
  double diff = 0.0;
  for (size_t i = 0; i < fast.v.size(); ++i)
    diff = std::max(diff, std::abs(fast.v[i] - slow.v[i]));
  CHECK(diff <= 1e-12);
}

TEST_CASE("parameter validation") {
  auto sp = torus(16);
  CHECK_THROWS_AS(make_ac(sp, 0.0, 1.0, 1.0), ConfigError);
  CHECK_THROWS_AS(make_ac(sp, 0.1, 0.0, 1.0), ConfigError);
  CHECK_THROWS_AS(make_ac(sp, 0.1, -1.0, 1.0), ConfigError);
  CHECK_THROWS_AS(make_ac(sp, 0.1, 1.0, 0.0), ConfigError);
  CHECK_THROWS_AS(make_ch(sp, 0.0, 0.1, 0.0, 1.0), ConfigError);
  CHECK_THROWS_AS(make_ch(sp, 1.0, -0.1, 0.0, 1.0), ConfigError);
  CHECK_THROWS_AS(make_ch(sp, 1.0, 0.1, -0.5, 1.0), ConfigError);
  CHECK_THROWS_AS(make_mbe(sp, 1.0, 0.0, 0.0, 1.0), ConfigError);
  CHECK_THROWS_AS(make_mbe(sp, 1.0, 0.1, 0.1, 1.0, false), ConfigError);
  CHECK_NOTHROW(make_mbe(sp, 1.0, 0.1, 0.125, 1.0, false));
  CHECK_NOTHROW(make_ch(sp, 1.0, 0.1, 0.0, 1.0));
}

TEST_CASE("nonpositive radicand is rejected") {
  auto sp = unit_square(16);
  const GradientFlowModel m = make_ac(sp, 0.1, 4.0, 1.0);
  const RealField u1 = constant_field(sp->grid(), 1.0);
  // (F_kappa(1), 1) + C = -kappa/2 + 1 = -1 at kappa = 4.
  CHECK_THROWS_AS(q_init(m, u1), ConfigError);
  CHECK_THROWS_AS(m.f(u1), SolverError);
}

TEST_CASE("linear test model disables the nonlinearity") {
  auto sp = torus(16);
  const GradientFlowModel m = make_linear_model(
      sp, [](double, double) { return -1.0; },
      [](double kx2, double ky2) { return kx2 + ky2 + 1.0; });
  CHECK_FALSE(m.has_nonlinearity());
  CHECK(m.mobility_is_constant);
  CHECK(m.mobility_value == -1.0);
  const RealField u0 = constant_field(sp->grid(), 0.5);
  CHECK(q_init(m, u0) == 1.0);
  CHECK(modified_energy(m, u0, 1.0) ==
        doctest::Approx(original_energy(m, u0)).epsilon(1e-13));

  const GradientFlowModel varying = make_linear_model(
      sp, [](double kx2, double ky2) { return -(kx2 + ky2); },
      [](double, double) { return 1.0; });
  CHECK_FALSE(varying.mobility_is_constant);
}

TEST_CASE("mass is the discrete integral") {
  auto sp = torus(16);
  const GradientFlowModel m = make_ch(sp, 1.0, 0.1, 0.0, 1.0);
  const RealField u = constant_field(sp->grid(), 0.25);
  CHECK(mass(m, u) == doctest::Approx(0.25 * sp->grid().area()).epsilon(1e-14));
  CHECK_FALSE(make_ac(sp, 0.1, 1.0, 1.0).conserves_mass);
}

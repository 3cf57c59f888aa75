#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstring>
#include <random>

#include "doctest.h"
#include "sav/errors.hpp"
#include "sav/spectral.hpp"

using namespace sav;

namespace {

const double kTwoPi = 2.0 * M_PI;

Grid2D square(int n) { return make_grid(n, n, 0.0, kTwoPi, 0.0, kTwoPi); }

RealField random_field(const Grid2D& g, unsigned seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  RealField f = make_field(g);
  for (double& x : f.v) x = dist(rng);
  return f;
}

// Trig polynomial with modes up to 3 in each direction, so that derivatives
// are exact on any grid with nx, ny >= 8 and no Nyquist content is present.
RealField band_limited(const Grid2D& g) {
  return sample(g, [](double x, double y) {
    return 0.7 * std::sin(x) * std::cos(2.0 * y) + 0.3 * std::cos(3.0 * x) -
           0.5 * std::sin(2.0 * x + y) + 0.2 * std::cos(x - 3.0 * y);
  });
}

double max_abs_diff(const RealField& a, const RealField& b) {
  double m = 0.0;
  for (size_t i = 0; i < a.v.size(); ++i) m = std::max(m, std::abs(a.v[i] - b.v[i]));
  return m;
}

}  // namespace

TEST_CASE("make_grid rejects invalid extents and bounds") {
  CHECK_THROWS_AS(make_grid(7, 8, 0, 1, 0, 1), ConfigError);
  CHECK_THROWS_AS(make_grid(8, 10, 0, 1, 1, 1), ConfigError);
  CHECK_THROWS_AS(make_grid(0, 8, 0, 1, 0, 1), ConfigError);
  CHECK_THROWS_AS(make_grid(-8, 8, 0, 1, 0, 1), ConfigError);
  CHECK_NOTHROW(make_grid(2, 4, -1.0, 1.0, 0.0, 0.5));
}

TEST_CASE("wavenumbers follow DFT ordering with positive Nyquist") {
  Grid2D g = make_grid(8, 6, 0.0, kTwoPi, 0.0, 3.0);
  CHECK(g.kx[0] == 0.0);
  CHECK(g.kx[1] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(g.kx[4] == doctest::Approx(4.0).epsilon(1e-15));   // Nyquist, positive
  CHECK(g.kx[7] == doctest::Approx(-1.0).epsilon(1e-15));  // highest negative
  const double base = kTwoPi / 3.0;
  CHECK(g.ky[3] == doctest::Approx(3.0 * base).epsilon(1e-15));
  CHECK(g.ky[5] == doctest::Approx(-base).epsilon(1e-15));
}

TEST_CASE("transform round trip reproduces the field") {
  Grid2D g = make_grid(32, 16, 0.0, kTwoPi, -1.0, 3.0);
  Spectral sp(g);
  RealField u = random_field(g, 12345);
  CField hat;
  sp.forward(u, hat);
  RealField back;
  sp.inverse(hat, back);
  CHECK(max_abs_diff(u, back) < 1e-13);
}

TEST_CASE("derivatives are exact on resolved trigonometric modes") {
  Grid2D g = square(16);
  Spectral sp(g);
  RealField u = sample(g, [](double x, double y) { return std::sin(3.0 * x) * std::cos(2.0 * y); });

  RealField dx, dy;
  sp.gradient(u, dx, dy);
  RealField dx_exact =
      sample(g, [](double x, double y) { return 3.0 * std::cos(3.0 * x) * std::cos(2.0 * y); });
  RealField dy_exact =
      sample(g, [](double x, double y) { return -2.0 * std::sin(3.0 * x) * std::sin(2.0 * y); });
  CHECK(max_abs_diff(dx, dx_exact) < 1e-11);
  CHECK(max_abs_diff(dy, dy_exact) < 1e-11);

  RealField lap = sp.laplacian(u);
  RealField lap_exact = u;
  for (double& x : lap_exact.v) x *= -13.0;
  CHECK(max_abs_diff(lap, lap_exact) < 1e-11);
}

TEST_CASE("derivatives honor rectangular domains") {
  Grid2D g = make_grid(16, 8, 0.0, 3.0, 0.0, 1.0);
  Spectral sp(g);
  const double ax = kTwoPi / 3.0;
  RealField u = sample(g, [ax](double x, double) { return std::sin(ax * x); });
  RealField dx, dy;
  sp.gradient(u, dx, dy);
  RealField dx_exact = sample(g, [ax](double x, double) { return ax * std::cos(ax * x); });
  CHECK(max_abs_diff(dx, dx_exact) < 1e-12);
  CHECK(norm_linf(dy) < 1e-12);
}

TEST_CASE("divergence is the negative adjoint of the gradient") {
  Grid2D g = make_grid(16, 12, 0.0, kTwoPi, 0.0, 4.0);
  Spectral sp(g);
  RealField u = random_field(g, 7);
  RealField px = random_field(g, 8);
  RealField py = random_field(g, 9);

  RealField dx, dy;
  sp.gradient(u, dx, dy);
  RealField div = sp.divergence(px, py);

  const double lhs = inner(g, div, u);
  const double rhs = -(inner(g, px, dx) + inner(g, py, dy));
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
}

TEST_CASE("divergence of gradient matches the Laplacian on band limited fields") {
  Grid2D g = square(16);
  Spectral sp(g);
  RealField u = band_limited(g);
  RealField dx, dy;
  sp.gradient(u, dx, dy);
  RealField div = sp.divergence(dx, dy);
  RealField lap = sp.laplacian(u);
  CHECK(max_abs_diff(div, lap) < 1e-11);
}

TEST_CASE("quadrature reproduces exact integrals of resolved modes") {
  Grid2D g = square(8);
  RealField s = sample(g, [](double x, double) { return std::sin(x); });
  CHECK(inner(g, s, s) == doctest::Approx(2.0 * M_PI * M_PI).epsilon(1e-14));
  CHECK(norm_l2(g, s) == doctest::Approx(M_PI * std::sqrt(2.0)).epsilon(1e-14));

  RealField ones = sample(g, [](double, double) { return 1.0; });
  CHECK(integral(g, ones) == doctest::Approx(g.area()).epsilon(1e-14));
  CHECK(std::abs(integral(g, s)) < 1e-13);

  RealField t = s;
  t.at(3, 5) = -4.5;
  CHECK(norm_linf(t) == doctest::Approx(4.5));
}

TEST_CASE("apply with a constant symbol scales the field") {
  Grid2D g = square(8);
  Spectral sp(g);
  Symbol two = sp.make_symbol([](double, double) { return 2.0; });
  RealField u = random_field(g, 99);
  RealField w = sp.apply(two, u);
  RealField expect = u;
  for (double& x : expect.v) x *= 2.0;
  CHECK(max_abs_diff(w, expect) < 1e-13);
}

TEST_CASE("solve_shifted inverts I - alpha*sigma") {
  Grid2D g = make_grid(24, 16, 0.0, kTwoPi, 0.0, kTwoPi);
  Spectral sp(g);
  Symbol sigma = sp.make_symbol([](double kx2, double ky2) { return -(1.0 + kx2 + ky2); });
  RealField rhs = random_field(g, 31);
  const double alpha = 0.37;
  RealField w = sp.solve_shifted(sigma, alpha, rhs);

  RealField sw = sp.apply(sigma, w);
  RealField residual = w;
  for (size_t i = 0; i < residual.v.size(); ++i) residual.v[i] -= alpha * sw.v[i] + rhs.v[i];
  CHECK(norm_linf(residual) < 1e-11);
}

TEST_CASE("solve_shifted detects a singular shift") {
  Grid2D g = square(8);
  Spectral sp(g);
  Symbol two = sp.make_symbol([](double, double) { return 2.0; });
  RealField rhs = random_field(g, 5);
  CHECK_THROWS_AS(sp.solve_shifted(two, 0.5, rhs), SolverError);
  CHECK_NOTHROW(sp.solve_shifted(two, 0.25, rhs));
}

TEST_CASE("repeated transforms are bitwise deterministic") {
  Grid2D g = square(32);
  RealField u = random_field(g, 2024);
  Symbol sigma;
  RealField a, b;
  {
    Spectral sp(g);
    sigma = sp.make_symbol([](double kx2, double ky2) { return -(kx2 + ky2) * 0.01; });
    a = sp.solve_shifted(sigma, 0.5, u);
  }
  {
    Spectral sp(g);
    b = sp.solve_shifted(sigma, 0.5, u);
  }
  REQUIRE(a.v.size() == b.v.size());
  CHECK(std::memcmp(a.v.data(), b.v.data(), a.v.size() * sizeof(double)) == 0);
}

TEST_CASE("dealias zeroes modes beyond the two-thirds cutoff") {
  Grid2D g = square(12);  // cutoff index 4
  Spectral sp(g);

  RealField keep = sample(g, [](double x, double y) { return std::cos(4.0 * x + 2.0 * y); });
  RealField kept = keep;
  sp.dealias(kept);
  CHECK(max_abs_diff(kept, keep) < 1e-13);

  RealField drop = sample(g, [](double x, double y) { return std::sin(5.0 * x) + std::cos(5.0 * y); });

  // Mixed content: only the resolved part survives.
  RealField mixed = make_field(g);
  for (size_t i = 0; i < mixed.v.size(); ++i) mixed.v[i] = keep.v[i] + drop.v[i];
  sp.dealias(mixed);
  CHECK(max_abs_diff(mixed, keep) < 1e-12);

  sp.dealias(drop);
  CHECK(norm_linf(drop) < 1e-13);
}

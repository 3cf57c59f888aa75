#include "sav/model.hpp"

#include <cmath>
#include <cstddef>
#include <string>

#include "sav/errors.hpp"

namespace sav {

namespace {

void require(bool ok, const char* msg) {
  if (!ok) throw ConfigError(msg);
}

Symbol product(const Symbol& a, const Symbol& b) {
  Symbol p = a;
  for (size_t i = 0; i < p.v.size(); ++i) p.v[i] *= b.v[i];
  return p;
}

double check_radicand(double rad, const char* model) {
  if (!(rad > 0.0)) {
    throw SolverError(std::string(model) +
                      ": auxiliary radicand is not positive; increase C or kappa");
  }
  return rad;
}

// (u^2-1)^2/4 summed against the trapezoidal weights.
double double_well(const Grid2D& g, const RealField& u) {
  double s = 0.0;
  for (double x : u.v) {
    const double w = x * x - 1.0;
    s += w * w;
  }
  return 0.25 * g.cell_area() * s;
}

double grad_seminorm_sq(Spectral& sp, const RealField& u) {
  const RealField lap = sp.laplacian(u);
  return -inner(sp.grid(), u, lap);
}

}  // namespace

GradientFlowModel make_ac(std::shared_ptr<Spectral> sp, double eps, double kappa, double C) {
  require(static_cast<bool>(sp), "allen-cahn: spectral workspace is null");
  require(eps > 0.0, "allen-cahn: epsilon must be positive");
  require(kappa > 0.0, "allen-cahn: kappa must be positive");
  require(C > 0.0, "allen-cahn: C must be positive");

  GradientFlowModel m;
  m.name = "ac";
  m.sp = sp;
  m.kappa = kappa;
  m.C = C;
  m.conserves_mass = false;
  m.params = {{"epsilon", eps}, {"kappa", kappa}, {"C", C}};

  m.mobility = sp->make_symbol([](double, double) { return -1.0; });
  m.linear = sp->make_symbol(
      [e2 = eps * eps, kappa](double kx2, double ky2) { return e2 * (kx2 + ky2) + kappa; });
  m.stage = product(m.mobility, m.linear);
  m.mobility_is_constant = true;
  m.mobility_value = -1.0;

  const Grid2D& grid = sp->grid();
  const double cell = grid.cell_area();

  m.radicand = [cell, kappa, C](const RealField& v) {
    double s = 0.0;
    for (double x : v.v) {
      const double w = x * x - 1.0;
      s += 0.25 * w * w - 0.5 * kappa * x * x;
    }
    return cell * s + C;
  };

  m.f = [rad = m.radicand, kappa](const RealField& v) {
    const double scale = 0.5 / std::sqrt(check_radicand(rad(v), "allen-cahn"));
    RealField out = v;
    for (double& x : out.v) x = scale * (x * x * x - (1.0 + kappa) * x);
    return out;
  };

  m.original_energy_fn = [sp, eps](const RealField& u) {
    return 0.5 * eps * eps * grad_seminorm_sq(*sp, u) + double_well(sp->grid(), u);
  };
  m.energy_shift = C;
  return m;
}

GradientFlowModel make_ch(std::shared_ptr<Spectral> sp, double lambda, double eps, double kappa,
                          double C) {
  require(static_cast<bool>(sp), "cahn-hilliard: spectral workspace is null");
  require(lambda > 0.0, "cahn-hilliard: lambda must be positive");
  require(eps > 0.0, "cahn-hilliard: epsilon must be positive");
  require(kappa >= 0.0, "cahn-hilliard: kappa must be nonnegative");
  require(C > 0.0, "cahn-hilliard: C must be positive");

  GradientFlowModel m;
  m.name = "ch";
  m.sp = sp;
  m.kappa = kappa;
  m.C = C;
  m.conserves_mass = true;
  m.params = {{"lambda", lambda}, {"epsilon", eps}, {"kappa", kappa}, {"C", C}};

  m.mobility =
      sp->make_symbol([lambda](double kx2, double ky2) { return -lambda * (kx2 + ky2); });
  m.linear = sp->make_symbol(
      [e2 = eps * eps, kappa](double kx2, double ky2) { return e2 * (kx2 + ky2) + kappa; });
  m.stage = product(m.mobility, m.linear);

  const Grid2D& grid = sp->grid();
  const double cell = grid.cell_area();
  const double area = grid.area();

  m.radicand = [cell, area, kappa, C](const RealField& v) {
    double s = 0.0;
    for (double x : v.v) {
      const double w = x * x - 1.0 - kappa;
      s += w * w;
    }
    return 0.25 * cell * s + C * area;
  };

  m.f = [rad = m.radicand, kappa](const RealField& v) {
    const double scale = 0.5 / std::sqrt(check_radicand(rad(v), "cahn-hilliard"));
    RealField out = v;
    for (double& x : out.v) x = scale * (x * x - 1.0 - kappa) * x;
    return out;
  };

  m.original_energy_fn = [sp, eps](const RealField& u) {
    return 0.5 * eps * eps * grad_seminorm_sq(*sp, u) + double_well(sp->grid(), u);
  };
  m.energy_shift = 0.25 * (kappa * kappa + 2.0 * kappa + 4.0 * C) * area;
  return m;
}

GradientFlowModel make_mbe(std::shared_ptr<Spectral> sp, double lambda, double delta, double kappa,
                           double C, bool slope_selection) {
  require(static_cast<bool>(sp), "mbe: spectral workspace is null");
  require(lambda > 0.0, "mbe: lambda must be positive");
  require(delta > 0.0, "mbe: delta must be positive");
  require(C > 0.0, "mbe: C must be positive");
  if (slope_selection) {
    require(kappa >= 0.0, "mbe: kappa must be nonnegative");
  } else {
    require(kappa >= 0.125, "mbe: kappa must be at least 1/8 without slope selection");
  }

  GradientFlowModel m;
  m.name = "mbe";
  m.sp = sp;
  m.kappa = kappa;
  m.C = C;
  m.conserves_mass = true;
  m.params = {{"lambda", lambda},
              {"delta", delta},
              {"kappa", kappa},
              {"C", C},
              {"slope_selection", slope_selection ? 1.0 : 0.0}};

  m.mobility = sp->make_symbol([lambda](double, double) { return -lambda; });
  m.mobility_is_constant = true;
  m.mobility_value = -lambda;
  if (slope_selection) {
    m.linear = sp->make_symbol([delta, kappa](double kx2, double ky2) {
      const double k2 = kx2 + ky2;
      return delta * k2 * k2 + kappa * k2;
    });
  } else {
    m.linear = sp->make_symbol([delta](double kx2, double ky2) {
      const double k2 = kx2 + ky2;
      return delta * k2 * k2;
    });
  }
  m.stage = product(m.mobility, m.linear);

  const Grid2D& grid = sp->grid();
  const double cell = grid.cell_area();
  const double area = grid.area();

  if (slope_selection) {
    m.radicand = [sp, cell, area, kappa, C](const RealField& v) {
      RealField dx, dy;
      sp->gradient(v, dx, dy);
      double s = 0.0;
      for (size_t i = 0; i < dx.v.size(); ++i) {
        const double w = dx.v[i] * dx.v[i] + dy.v[i] * dy.v[i] - 1.0 - kappa;
        s += w * w;
      }
      return 0.25 * cell * s + C * area;
    };

    m.f = [sp, rad = m.radicand, kappa](const RealField& v) {
      const double scale = -0.5 / std::sqrt(check_radicand(rad(v), "mbe"));
      RealField dx, dy;
      sp->gradient(v, dx, dy);
      for (size_t i = 0; i < dx.v.size(); ++i) {
        const double w = dx.v[i] * dx.v[i] + dy.v[i] * dy.v[i] - 1.0 - kappa;
        dx.v[i] *= w;
        dy.v[i] *= w;
      }
      RealField out = sp->divergence(dx, dy);
      for (double& x : out.v) x *= scale;
      return out;
    };

    m.original_energy_fn = [sp, delta, cell](const RealField& u) {
      const RealField lap = sp->laplacian(u);
      RealField dx, dy;
      sp->gradient(u, dx, dy);
      double s = 0.0;
      for (size_t i = 0; i < dx.v.size(); ++i) {
        const double w = dx.v[i] * dx.v[i] + dy.v[i] * dy.v[i] - 1.0;
        s += w * w;
      }
      return 0.5 * delta * inner(sp->grid(), lap, lap) + 0.25 * cell * s;
    };
    m.energy_shift = 0.25 * (kappa * kappa + 2.0 * kappa + 4.0 * C) * area;
  } else {
    m.radicand = [sp, cell, area, kappa, C](const RealField& v) {
      RealField dx, dy;
      sp->gradient(v, dx, dy);
      double s = 0.0;
      for (size_t i = 0; i < dx.v.size(); ++i) {
        const double g2 = dx.v[i] * dx.v[i] + dy.v[i] * dy.v[i];
        s += 0.5 * kappa * g2 - 0.5 * std::log1p(g2);
      }
      return cell * s + C * area;
    };

    m.f = [sp, rad = m.radicand, kappa](const RealField& v) {
      const double scale = -0.5 / std::sqrt(check_radicand(rad(v), "mbe"));
      RealField dx, dy;
      sp->gradient(v, dx, dy);
      for (size_t i = 0; i < dx.v.size(); ++i) {
        const double g2 = dx.v[i] * dx.v[i] + dy.v[i] * dy.v[i];
        const double w = kappa - 1.0 / (1.0 + g2);
        dx.v[i] *= w;
        dy.v[i] *= w;
      }
      RealField out = sp->divergence(dx, dy);
      for (double& x : out.v) x *= scale;
      return out;
    };

    // The dissipated quantity is the kappa-regularized energy: the
    // logarithmic well plus the (kappa/2)|grad u|^2 stabilizer.
    m.original_energy_fn = [sp, delta, cell, kappa](const RealField& u) {
      const RealField lap = sp->laplacian(u);
      RealField dx, dy;
      sp->gradient(u, dx, dy);
      double s = 0.0;
      for (size_t i = 0; i < dx.v.size(); ++i) {
        const double g2 = dx.v[i] * dx.v[i] + dy.v[i] * dy.v[i];
        s += 0.5 * kappa * g2 - 0.5 * std::log1p(g2);
      }
      return 0.5 * delta * inner(sp->grid(), lap, lap) + cell * s;
    };
    m.energy_shift = C * area;
  }
  return m;
}

GradientFlowModel make_linear_model(std::shared_ptr<Spectral> sp,
                                    const std::function<double(double, double)>& sigma_g,
                                    const std::function<double(double, double)>& sigma_l) {
  require(static_cast<bool>(sp), "linear model: spectral workspace is null");
  GradientFlowModel m;
  m.name = "linear";
  m.sp = sp;
  m.mobility = sp->make_symbol(sigma_g);
  m.linear = sp->make_symbol(sigma_l);
  m.stage = product(m.mobility, m.linear);

  m.mobility_is_constant = true;
  m.mobility_value = m.mobility.v.empty() ? 0.0 : m.mobility.v[0];
  for (double g : m.mobility.v) {
    if (g != m.mobility_value) {
      m.mobility_is_constant = false;
      m.mobility_value = 0.0;
      break;
    }
  }

  // No nonlinearity: f stays empty, q is constant at 1, and the modified
  // energy reduces to the quadratic form.
  m.radicand = [](const RealField&) { return 1.0; };
  m.original_energy_fn = [sp, l = m.linear](const RealField& u) {
    return 0.5 * inner(sp->grid(), u, sp->apply(l, u));
  };
  m.energy_shift = 1.0;
  return m;
}

double q_init(const GradientFlowModel& model, const RealField& u0) {
  const double rad = model.radicand(u0);
  if (!(rad > 0.0)) {
    throw ConfigError(model.name +
                      ": initial radicand is not positive; increase C or kappa");
  }
  return std::sqrt(rad);
}

double modified_energy(const GradientFlowModel& model, const RealField& u, double q) {
  const RealField lu = model.sp->apply(model.linear, u);
  return 0.5 * inner(model.sp->grid(), u, lu) + q * q - model.energy_shift;
}

double original_energy(const GradientFlowModel& model, const RealField& u) {
  return model.original_energy_fn(u);
}

double mass(const GradientFlowModel& model, const RealField& u) {
  return integral(model.sp->grid(), u);
}

RealField apply_mobility(const GradientFlowModel& model, const RealField& w) {
  if (model.mobility_is_constant) {
    RealField out = w;
    for (double& x : out.v) x *= model.mobility_value;
    return out;
  }
  return model.sp->apply(model.mobility, w);
}

}  // namespace sav

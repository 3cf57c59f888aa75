#include "sav/spectral.hpp"

#include <fftw3.h>

#include <cmath>
#include <cstring>
#include <string>

#include "sav/errors.hpp"

namespace sav {

namespace {

std::vector<double> wavenumbers(int n, double length) {
  std::vector<double> k(n);
  const double base = 2.0 * M_PI / length;
  for (int j = 0; j < n; ++j) {
    const int m = (j <= n / 2) ? j : j - n;
    k[j] = base * m;
  }
  return k;
}

}  // namespace

Grid2D make_grid(int nx, int ny, double x_left, double x_right, double y_left, double y_right) {
  if (nx <= 0 || ny <= 0 || nx % 2 != 0 || ny % 2 != 0) {
    throw ConfigError("grid extents must be positive even integers, got " + std::to_string(nx) +
                      " x " + std::to_string(ny));
  }
  if (!(x_right > x_left) || !(y_right > y_left) || !std::isfinite(x_left) ||
      !std::isfinite(x_right) || !std::isfinite(y_left) || !std::isfinite(y_right)) {
    throw ConfigError("grid bounds must be finite with right > left");
  }
  Grid2D g;
  g.nx = nx;
  g.ny = ny;
  g.x_left = x_left;
  g.x_right = x_right;
  g.y_left = y_left;
  g.y_right = y_right;
  g.kx = wavenumbers(nx, g.lx());
  g.ky = wavenumbers(ny, g.ly());
  return g;
}

RealField make_field(const Grid2D& grid) {
  RealField f;
  f.nx = grid.nx;
  f.ny = grid.ny;
  f.v.assign(grid.size(), 0.0);
  return f;
}

RealField sample(const Grid2D& grid, const std::function<double(double, double)>& f) {
  RealField out = make_field(grid);
  for (int j = 0; j < grid.nx; ++j) {
    const double xj = grid.x(j);
    for (int k = 0; k < grid.ny; ++k) {
      out.at(j, k) = f(xj, grid.y(k));
    }
  }
  return out;
}

double inner(const Grid2D& grid, const RealField& u, const RealField& w) {
  double s = 0.0;
  for (size_t i = 0; i < u.v.size(); ++i) s += u.v[i] * w.v[i];
  return grid.cell_area() * s;
}

double norm_l2(const Grid2D& grid, const RealField& u) { return std::sqrt(inner(grid, u, u)); }

double norm_linf(const RealField& u) {
  double m = 0.0;
  for (double x : u.v) m = std::max(m, std::abs(x));
  return m;
}

double integral(const Grid2D& grid, const RealField& u) {
  double s = 0.0;
  for (double x : u.v) s += x;
  return grid.cell_area() * s;
}

Spectral::Spectral(const Grid2D& grid) : grid_(grid), nx_(grid.nx), ny_(grid.ny) {
  nyh_ = ny_ / 2 + 1;
  rbuf_ = fftw_alloc_real(static_cast<size_t>(nx_) * ny_);
  fftw_complex* cb = fftw_alloc_complex(static_cast<size_t>(nx_) * nyh_);
  cbuf_ = cb;
  // FFTW_ESTIMATE keeps plan creation deterministic and leaves the buffers
  // untouched during planning.
  plan_fwd_ = fftw_plan_dft_r2c_2d(nx_, ny_, rbuf_, cb, FFTW_ESTIMATE);
  plan_inv_ = fftw_plan_dft_c2r_2d(nx_, ny_, cb, rbuf_, FFTW_ESTIMATE);
  if (plan_fwd_ == nullptr || plan_inv_ == nullptr) {
    throw SolverError("failed to create FFTW plans for grid " + std::to_string(nx_) + " x " +
                      std::to_string(ny_));
  }
}

Spectral::~Spectral() {
  if (plan_fwd_ != nullptr) fftw_destroy_plan(static_cast<fftw_plan>(plan_fwd_));
  if (plan_inv_ != nullptr) fftw_destroy_plan(static_cast<fftw_plan>(plan_inv_));
  fftw_free(rbuf_);
  fftw_free(static_cast<fftw_complex*>(cbuf_));
}

void Spectral::run_forward(const double* in) {
  std::memcpy(rbuf_, in, sizeof(double) * grid_.size());
  fftw_execute(static_cast<fftw_plan>(plan_fwd_));
}

void Spectral::run_inverse(double* out) {
  fftw_execute(static_cast<fftw_plan>(plan_inv_));
  const double scale = 1.0 / (static_cast<double>(nx_) * ny_);
  const size_t n = grid_.size();
  for (size_t i = 0; i < n; ++i) out[i] = rbuf_[i] * scale;
}

void Spectral::forward(const RealField& in, CField& out) {
  run_forward(in.v.data());
  const fftw_complex* cb = static_cast<fftw_complex*>(cbuf_);
  out.resize(static_cast<size_t>(modes()));
  for (int m = 0; m < modes(); ++m) out[m] = {cb[m][0], cb[m][1]};
}

void Spectral::inverse(const CField& in, RealField& out) {
  fftw_complex* cb = static_cast<fftw_complex*>(cbuf_);
  for (int m = 0; m < modes(); ++m) {
    cb[m][0] = in[m].real();
    cb[m][1] = in[m].imag();
  }
  out.nx = nx_;
  out.ny = ny_;
  out.v.resize(grid_.size());
  run_inverse(out.v.data());
}

Symbol Spectral::make_symbol(const std::function<double(double, double)>& sigma) const {
  Symbol s;
  s.nx = nx_;
  s.ny = ny_;
  s.v.resize(static_cast<size_t>(nx_) * nyh_);
  for (int j = 0; j < nx_; ++j) {
    const double kx2 = grid_.kx[j] * grid_.kx[j];
    for (int k = 0; k < nyh_; ++k) {
      const double ky2 = grid_.ky[k] * grid_.ky[k];
      s.v[static_cast<size_t>(j) * nyh_ + k] = sigma(kx2, ky2);
    }
  }
  return s;
}

void Spectral::apply(const Symbol& sigma, const RealField& in, RealField& out) {
  run_forward(in.v.data());
  fftw_complex* cb = static_cast<fftw_complex*>(cbuf_);
  const int n = modes();
  for (int m = 0; m < n; ++m) {
    cb[m][0] *= sigma.v[m];
    cb[m][1] *= sigma.v[m];
  }
  out.nx = nx_;
  out.ny = ny_;
  out.v.resize(grid_.size());
  run_inverse(out.v.data());
}

RealField Spectral::apply(const Symbol& sigma, const RealField& in) {
  RealField out;
  apply(sigma, in, out);
  return out;
}

void Spectral::solve_shifted(const Symbol& sigma, double alpha, const RealField& rhs,
                             RealField& out) {
  run_forward(rhs.v.data());
  fftw_complex* cb = static_cast<fftw_complex*>(cbuf_);
  const int n = modes();
  for (int m = 0; m < n; ++m) {
    const double den = 1.0 - alpha * sigma.v[m];
    if (std::abs(den) < 1e-14) {
      throw SolverError("shifted solve is singular: |1 - alpha*sigma| < 1e-14 at mode " +
                        std::to_string(m));
    }
    cb[m][0] /= den;
    cb[m][1] /= den;
  }
  out.nx = nx_;
  out.ny = ny_;
  out.v.resize(grid_.size());
  run_inverse(out.v.data());
}

RealField Spectral::solve_shifted(const Symbol& sigma, double alpha, const RealField& rhs) {
  RealField out;
  solve_shifted(sigma, alpha, rhs, out);
  return out;
}

void Spectral::gradient(const RealField& in, RealField& dx, RealField& dy) {
  run_forward(in.v.data());
  fftw_complex* cb = static_cast<fftw_complex*>(cbuf_);
  const int n = modes();
  CField hat(n);
  for (int m = 0; m < n; ++m) hat[m] = {cb[m][0], cb[m][1]};

  dx.nx = dy.nx = nx_;
  dx.ny = dy.ny = ny_;
  dx.v.resize(grid_.size());
  dy.v.resize(grid_.size());

  for (int j = 0; j < nx_; ++j) {
    const double kx = (j == nx_ / 2) ? 0.0 : grid_.kx[j];
    for (int k = 0; k < nyh_; ++k) {
      const std::complex<double> d = std::complex<double>(0.0, kx) * hat[j * nyh_ + k];
      cb[j * nyh_ + k][0] = d.real();
      cb[j * nyh_ + k][1] = d.imag();
    }
  }
  run_inverse(dx.v.data());

  for (int j = 0; j < nx_; ++j) {
    for (int k = 0; k < nyh_; ++k) {
      const double ky = (k == ny_ / 2) ? 0.0 : grid_.ky[k];
      const std::complex<double> d = std::complex<double>(0.0, ky) * hat[j * nyh_ + k];
      cb[j * nyh_ + k][0] = d.real();
      cb[j * nyh_ + k][1] = d.imag();
    }
  }
  run_inverse(dy.v.data());
}

RealField Spectral::divergence(const RealField& px, const RealField& py) {
  const int n = modes();
  CField acc(n);

  run_forward(px.v.data());
  fftw_complex* cb = static_cast<fftw_complex*>(cbuf_);
  for (int j = 0; j < nx_; ++j) {
    const double kx = (j == nx_ / 2) ? 0.0 : grid_.kx[j];
    for (int k = 0; k < nyh_; ++k) {
      acc[j * nyh_ + k] = std::complex<double>(0.0, kx) *
                          std::complex<double>(cb[j * nyh_ + k][0], cb[j * nyh_ + k][1]);
    }
  }

  run_forward(py.v.data());
  for (int j = 0; j < nx_; ++j) {
    for (int k = 0; k < nyh_; ++k) {
      const double ky = (k == ny_ / 2) ? 0.0 : grid_.ky[k];
      acc[j * nyh_ + k] += std::complex<double>(0.0, ky) *
                           std::complex<double>(cb[j * nyh_ + k][0], cb[j * nyh_ + k][1]);
    }
  }

  RealField out;
  inverse(acc, out);
  return out;
}

RealField Spectral::laplacian(const RealField& in) {
  Symbol lap = make_symbol([](double kx2, double ky2) { return -(kx2 + ky2); });
  return apply(lap, in);
}

void Spectral::dealias(RealField& u) {
  run_forward(u.v.data());
  fftw_complex* cb = static_cast<fftw_complex*>(cbuf_);
  const int jcut = nx_ / 3;
  const int kcut = ny_ / 3;
  for (int j = 0; j < nx_; ++j) {
    const int jm = (j <= nx_ / 2) ? j : nx_ - j;
    for (int k = 0; k < nyh_; ++k) {
      if (jm > jcut || k > kcut) {
        cb[j * nyh_ + k][0] = 0.0;
        cb[j * nyh_ + k][1] = 0.0;
      }
    }
  }
  run_inverse(u.v.data());
}

}  // namespace sav

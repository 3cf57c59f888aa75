#pragma once

// Periodic 2D Fourier pseudo-spectral toolbox: uniform grids, real fields,
// FFTW-backed transforms, diagonal symbol application, shifted inverses,
// first and second derivative operators, and trapezoidal quadrature.

#include <complex>
#include <functional>
#include <memory>
#include <vector>

namespace sav {

struct Grid2D {
  int nx = 0, ny = 0;
  double x_left = 0.0, x_right = 1.0;
  double y_left = 0.0, y_right = 1.0;
  std::vector<double> kx, ky;  // wavenumbers in DFT order, Nyquist positive

  double lx() const { return x_right - x_left; }
  double ly() const { return y_right - y_left; }
  double hx() const { return lx() / nx; }
  double hy() const { return ly() / ny; }
  double cell_area() const { return hx() * hy(); }
  double area() const { return lx() * ly(); }
  double x(int j) const { return x_left + j * hx(); }
  double y(int k) const { return y_left + k * hy(); }
  size_t size() const { return static_cast<size_t>(nx) * ny; }
};

// Validates: even positive extents, finite ordered bounds.
Grid2D make_grid(int nx, int ny, double x_left, double x_right, double y_left, double y_right);

// Row-major real grid function, x outer and y inner.
struct RealField {
  int nx = 0, ny = 0;
  std::vector<double> v;

  double at(int j, int k) const { return v[static_cast<size_t>(j) * ny + k]; }
  double& at(int j, int k) { return v[static_cast<size_t>(j) * ny + k]; }
};

RealField make_field(const Grid2D& grid);
RealField sample(const Grid2D& grid, const std::function<double(double, double)>& f);

// Discrete L2 inner product h_x h_y sum_jk u v and the induced norms.
double inner(const Grid2D& grid, const RealField& u, const RealField& w);
double norm_l2(const Grid2D& grid, const RealField& u);
double norm_linf(const RealField& u);
// h_x h_y sum_jk u, the discrete mass.
double integral(const Grid2D& grid, const RealField& u);

// Real diagonal multiplier sigma(kx^2, ky^2) stored over the Hermitian
// half-spectrum (nx rows, ny/2+1 columns).
struct Symbol {
  int nx = 0, ny = 0;
  std::vector<double> v;
};

using CField = std::vector<std::complex<double>>;

// FFT workspace bound to one grid: owns aligned buffers and FFTW plans.
// Transforms are single threaded and deterministic.
class Spectral {
 public:
  explicit Spectral(const Grid2D& grid);
  ~Spectral();
  Spectral(const Spectral&) = delete;
  Spectral& operator=(const Spectral&) = delete;

  const Grid2D& grid() const { return grid_; }
  int modes() const { return nx_ * (ny_ / 2 + 1); }

  // Unnormalized forward transform; the inverse divides by nx*ny so that
  // inverse(forward(u)) == u to roundoff.
  void forward(const RealField& in, CField& out);
  void inverse(const CField& in, RealField& out);

  Symbol make_symbol(const std::function<double(double, double)>& sigma) const;

  // out = F^{-1}[ sigma * F[in] ]
  void apply(const Symbol& sigma, const RealField& in, RealField& out);
  RealField apply(const Symbol& sigma, const RealField& in);

  // Solves (I - alpha*sigma) w = rhs mode by mode; raises SolverError when
  // any |1 - alpha*sigma| falls below 1e-14.
  void solve_shifted(const Symbol& sigma, double alpha, const RealField& rhs, RealField& out);
  RealField solve_shifted(const Symbol& sigma, double alpha, const RealField& rhs);

  // First derivatives zero the Nyquist modes; the Laplacian retains them.
  void gradient(const RealField& in, RealField& dx, RealField& dy);
  RealField divergence(const RealField& px, const RealField& py);
  RealField laplacian(const RealField& in);

  // Two-thirds rule: zeroes every mode with |j| > nx/3 or |k| > ny/3.
  void dealias(RealField& u);

 private:
  Grid2D grid_;
  int nx_, ny_, nyh_;
  double* rbuf_ = nullptr;
  void* cbuf_ = nullptr;  // fftw_complex*
  void* plan_fwd_ = nullptr;
  void* plan_inv_ = nullptr;

  void run_forward(const double* in);
  void run_inverse(double* out);
};

}  // namespace sav

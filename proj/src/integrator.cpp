#include "sav/integrator.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <complex>
#include <cstddef>
#include <string>
#include <utility>

#include "sav/errors.hpp"

namespace sav {

namespace {

constexpr double kScalarSingular = 1e-13;
constexpr double kModeSingular = 1e-14;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

void axpy(RealField& y, double a, const RealField& x) {
  for (size_t i = 0; i < y.v.size(); ++i) y.v[i] += a * x.v[i];
}

// Parseval form of the discrete inner product over the Hermitian
// half-spectrum: interior columns represent conjugate mode pairs.
double spectral_inner(const Grid2D& g, const CField& a, const CField& b) {
  const int nx = g.nx, nyh = g.ny / 2 + 1;
  double s = 0.0;
  for (int j = 0; j < nx; ++j) {
    for (int k = 0; k < nyh; ++k) {
      const size_t idx = static_cast<size_t>(j) * nyh + k;
      const double w = (k == 0 || k == nyh - 1) ? 1.0 : 2.0;
      s += w * (a[idx].real() * b[idx].real() + a[idx].imag() * b[idx].imag());
    }
  }
  return s * g.cell_area() / (static_cast<double>(g.nx) * g.ny);
}

RealField sample_source(const GradientFlowModel& model, const SourceTerm& src, double t) {
  return sample(model.sp->grid(), [&](double x, double y) { return src.h(x, y, t); });
}

RealField eval_f(const GradientFlowModel& model, const RealField& u) {
  if (!model.has_nonlinearity()) return make_field(model.sp->grid());
  RealField f = model.f(u);
  if (model.dealias) model.sp->dealias(f);
  return f;
}

// Consecutive stages that must be solved together: a group absorbs every
// stage its rows couple to through the implicit tableau.
struct Group {
  int begin = 0;
  int end = 0;  // exclusive
};

std::vector<Group> stage_groups(const ButcherTableau& A) {
  std::vector<Group> out;
  const int s = A.s;
  int start = 0;
  while (start < s) {
    int last = start;
    bool grew = true;
    while (grew) {
      grew = false;
      for (int i = start; i <= last; ++i) {
        for (int j = last + 1; j < s; ++j) {
          if (A.a(i, j) != 0.0) {
            last = j;
            grew = true;
          }
        }
      }
    }
    out.push_back({start, last + 1});
    start = last + 1;
  }
  return out;
}

// Nonlinear velocities of stages inside or beyond the group do not exist
// when the group is solved, so the explicit tableau must not reach them.
void check_explicit_coupling(const ButcherTableau& ahat, const Group& grp) {
  for (int i = grp.begin; i < grp.end; ++i) {
    for (int j = grp.begin; j < ahat.s; ++j) {
      if (ahat.a(i, j) != 0.0) {
        throw SolverError("explicit tableau couples stage " + std::to_string(i) + " to stage " +
                          std::to_string(j) + " inside or beyond its implicit group");
      }
    }
  }
}

// Solves (I - tau*sigma(k)*A_GG) x(k) = rhs(k) at every mode. Each system is
// an array of m coefficient fields, overwritten with its solution.
void solve_group_modes(const Symbol& sigma, const ButcherTableau& A, int g0, int m, double tau,
                       const std::vector<std::vector<CField>*>& systems) {
  const size_t n = sigma.v.size();
  if (m == 1) {
    const double a = A.a(g0, g0);
    for (size_t idx = 0; idx < n; ++idx) {
      const double den = 1.0 - tau * a * sigma.v[idx];
      if (std::abs(den) < kModeSingular)
        throw SolverError("singular implicit stage solve at a Fourier mode");
      for (auto* sys : systems) (*sys)[0][idx] /= den;
    }
    return;
  }
  if (m == 2) {
    const double a00 = A.a(g0, g0), a01 = A.a(g0, g0 + 1);
    const double a10 = A.a(g0 + 1, g0), a11 = A.a(g0 + 1, g0 + 1);
    for (size_t idx = 0; idx < n; ++idx) {
      const double z = tau * sigma.v[idx];
      const double m00 = 1.0 - z * a00, m01 = -z * a01;
      const double m10 = -z * a10, m11 = 1.0 - z * a11;
      const double det = m00 * m11 - m01 * m10;
      if (std::abs(det) < kModeSingular)
        throw SolverError("singular implicit stage solve at a Fourier mode");
      for (auto* sys : systems) {
        const std::complex<double> r0 = (*sys)[0][idx], r1 = (*sys)[1][idx];
        (*sys)[0][idx] = (m11 * r0 - m01 * r1) / det;
        (*sys)[1][idx] = (m00 * r1 - m10 * r0) / det;
      }
    }
    return;
  }
  Eigen::MatrixXd M(m, m);
  Eigen::PartialPivLU<Eigen::MatrixXd> lu(m);
  Eigen::VectorXd re(m), im(m);
  for (size_t idx = 0; idx < n; ++idx) {
    const double z = tau * sigma.v[idx];
    for (int r = 0; r < m; ++r)
      for (int c = 0; c < m; ++c) M(r, c) = (r == c ? 1.0 : 0.0) - z * A.a(g0 + r, g0 + c);
    lu.compute(M);
    if (std::abs(lu.determinant()) < kModeSingular)
      throw SolverError("singular implicit stage solve at a Fourier mode");
    for (auto* sys : systems) {
      for (int r = 0; r < m; ++r) {
        re(r) = (*sys)[r][idx].real();
        im(r) = (*sys)[r][idx].imag();
      }
      const Eigen::VectorXd xr = lu.solve(re);
      const Eigen::VectorXd xi = lu.solve(im);
      for (int r = 0; r < m; ++r) (*sys)[r][idx] = {xr(r), xi(r)};
    }
  }
}

// On entry ws.v holds the explicit right-hand sides of the group; on exit it
// holds stage values, with the linear velocities in ws.vdotL.
void solve_v_group(Spectral& sp, const Symbol& stage_sym, const ButcherTableau& A,
                   const Group& grp, double tau, StageWorkspace& ws) {
  const int m = grp.end - grp.begin;
  if (m == 1) {
    const int i = grp.begin;
    const double a = A.a(i, i);
    if (a == 0.0) {
      sp.apply(stage_sym, ws.v[i], ws.vdotL[i]);
      return;
    }
    const RealField rhs = ws.v[i];
    sp.solve_shifted(stage_sym, tau * a, rhs, ws.v[i]);
    RealField& vd = ws.vdotL[i];
    for (size_t p = 0; p < vd.v.size(); ++p) vd.v[p] = (ws.v[i].v[p] - rhs.v[p]) / (tau * a);
    return;
  }
  std::vector<CField> vhat(m);
  for (int r = 0; r < m; ++r) sp.forward(ws.v[grp.begin + r], vhat[r]);
  const std::vector<std::vector<CField>*> systems{&vhat};
  solve_group_modes(stage_sym, A, grp.begin, m, tau, systems);
  CField dot(vhat[0].size());
  for (int r = 0; r < m; ++r) {
    for (size_t idx = 0; idx < dot.size(); ++idx) dot[idx] = stage_sym.v[idx] * vhat[r][idx];
    sp.inverse(vhat[r], ws.v[grp.begin + r]);
    sp.inverse(dot, ws.vdotL[grp.begin + r]);
  }
}

// Coupled (u, q) solve of one group. The field unknowns split into a
// q-independent part plus responses to each in-group q, which reduces the
// stage system to a dense m-by-m problem in the q values.
void solve_uq_group(const GradientFlowModel& model, const ButcherTableau& A, const Group& grp,
                    double tau, std::vector<RealField>& rhs_u, const std::vector<double>& rq,
                    const std::vector<const RealField*>& src, StageWorkspace& ws) {
  Spectral& sp = *model.sp;
  const Grid2D& g = sp.grid();
  const int g0 = grp.begin, m = grp.end - grp.begin;
  const size_t modes = model.stage.v.size();

  std::vector<CField> base(m);
  CField shat;
  for (int r = 0; r < m; ++r) {
    sp.forward(rhs_u[r], base[r]);
    for (size_t idx = 0; idx < modes; ++idx) base[r][idx] *= model.stage.v[idx];
    if (src[r]) {
      sp.forward(*src[r], shat);
      for (size_t idx = 0; idx < modes; ++idx) base[r][idx] += shat[idx];
    }
  }

  std::vector<CField> fhat(m);
  for (int r = 0; r < m; ++r) sp.forward(ws.f[g0 + r], fhat[r]);
  std::vector<std::vector<CField>> resp(m);
  const CField zeroc(modes, std::complex<double>(0.0, 0.0));
  for (int J = 0; J < m; ++J) {
    resp[J].assign(m, zeroc);
    CField& row = resp[J][J];
    if (model.mobility_is_constant) {
      for (size_t idx = 0; idx < modes; ++idx)
        row[idx] = 2.0 * model.mobility_value * fhat[J][idx];
    } else {
      for (size_t idx = 0; idx < modes; ++idx)
        row[idx] = 2.0 * model.mobility.v[idx] * fhat[J][idx];
    }
  }

  std::vector<std::vector<CField>*> systems{&base};
  for (int J = 0; J < m; ++J) systems.push_back(&resp[J]);
  solve_group_modes(model.stage, A, g0, m, tau, systems);

  std::vector<double> d(m), E(static_cast<size_t>(m) * m);
  for (int I = 0; I < m; ++I) {
    d[I] = spectral_inner(g, fhat[I], base[I]);
    for (int J = 0; J < m; ++J) E[static_cast<size_t>(I) * m + J] = spectral_inner(g, fhat[I], resp[J][I]);
  }

  std::vector<double> qv(m);
  if (m == 1) {
    const double aii = A.a(g0, g0);
    const double den = 1.0 - tau * aii * E[0];
    if (std::abs(den) < kScalarSingular) throw SolverError("stage-singular scalar denominator");
    qv[0] = (rq[0] + tau * aii * d[0]) / den;
  } else {
    Eigen::MatrixXd B(m, m);
    Eigen::VectorXd rv(m);
    for (int I = 0; I < m; ++I) {
      rv(I) = rq[I];
      for (int J = 0; J < m; ++J) {
        double aE = 0.0;
        for (int K = 0; K < m; ++K) aE += A.a(g0 + I, g0 + K) * E[static_cast<size_t>(K) * m + J];
        B(I, J) = (I == J ? 1.0 : 0.0) - tau * aE;
        rv(I) += tau * A.a(g0 + I, g0 + J) * d[J];
      }
    }
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(B);
    if (std::abs(lu.determinant()) < kScalarSingular)
      throw SolverError("stage-singular scalar system");
    const Eigen::VectorXd x = lu.solve(rv);
    for (int I = 0; I < m; ++I) qv[I] = x(I);
  }

  for (int I = 0; I < m; ++I) {
    ws.q[g0 + I] = qv[I];
    double qd = d[I];
    for (int J = 0; J < m; ++J) qd += E[static_cast<size_t>(I) * m + J] * qv[J];
    ws.qdot[g0 + I] = qd;
    for (size_t idx = 0; idx < modes; ++idx) {
      std::complex<double> acc = base[I][idx];
      for (int J = 0; J < m; ++J) acc += qv[J] * resp[J][I][idx];
      base[I][idx] = acc;
    }
    sp.inverse(base[I], ws.udot[g0 + I]);
  }
  for (int I = 0; I < m; ++I) {
    RealField& u = ws.u[g0 + I];
    u = rhs_u[I];
    for (int J = 0; J < m; ++J) axpy(u, tau * A.a(g0 + I, g0 + J), ws.udot[g0 + J]);
    if (model.mobility_is_constant) {
      ws.gf[g0 + I] = ws.f[g0 + I];
      for (double& x : ws.gf[g0 + I].v) x *= model.mobility_value;
    } else {
      CField tmp = fhat[I];
      for (size_t idx = 0; idx < modes; ++idx) tmp[idx] *= model.mobility.v[idx];
      sp.inverse(tmp, ws.gf[g0 + I]);
    }
  }
}

// Residuals of the stage equations, recomputed through fresh transforms.
void fill_stage_diagnostics(const GradientFlowModel& model, const ButcherTableau& A,
                            const ButcherTableau& Ah, const RealField& v_base,
                            const RealField& u_base, double q_base, double tn, double tau,
                            const StepOptions& opts, StageWorkspace& ws, StepReport& rep) {
  Spectral& sp = *model.sp;
  const Grid2D& g = sp.grid();
  const int S = A.s;
  rep.stage_residuals.assign(S, 0.0);
  for (int i = 0; i < S; ++i) {
    RealField resid = ws.v[i];
    axpy(resid, -1.0, v_base);
    for (int j = 0; j < S; ++j) {
      if (A.a(i, j) != 0.0) {
        const RealField lv = sp.apply(model.stage, ws.v[j]);
        axpy(resid, -tau * A.a(i, j), lv);
      }
      if (Ah.a(i, j) != 0.0) axpy(resid, -tau * Ah.a(i, j), ws.vdotN[j]);
    }
    double r = norm_linf(resid) / std::max(1.0, norm_linf(ws.v[i]));

    RealField pde = sp.apply(model.stage, ws.u[i]);
    axpy(pde, 2.0 * ws.q[i], ws.gf[i]);
    if (opts.source) {
      const RealField sh = sample_source(model, *opts.source, tn + A.c[i] * tau);
      axpy(pde, 1.0, sh);
    }
    axpy(pde, -1.0, ws.udot[i]);
    r = std::max(r, norm_linf(pde) / std::max(1.0, norm_linf(ws.udot[i])));

    const double qd = inner(g, ws.f[i], ws.udot[i]);
    r = std::max(r, std::abs(ws.qdot[i] - qd) / std::max(1.0, std::abs(qd)));

    RealField ueq = ws.u[i];
    axpy(ueq, -1.0, u_base);
    double qeq = ws.q[i] - q_base;
    for (int j = 0; j < S; ++j) {
      if (A.a(i, j) != 0.0) {
        axpy(ueq, -tau * A.a(i, j), ws.udot[j]);
        qeq -= tau * A.a(i, j) * ws.qdot[j];
      }
    }
    r = std::max(r, norm_linf(ueq) / std::max(1.0, norm_linf(ws.u[i])));
    r = std::max(r, std::abs(qeq) / std::max(1.0, std::abs(ws.q[i])));

    rep.stage_residuals[i] = r;
    rep.max_stage_residual = std::max(rep.max_stage_residual, r);
  }
}

StepReport step_mark_ark_impl(const GradientFlowModel& model, const ARKPair& pair, SAVState& state,
                              double tau, const StepOptions& opts, bool propagate_v) {
  const auto t_start = Clock::now();
  if (!(tau > 0.0)) throw ConfigError("time step must be positive");
  const ButcherTableau& A = pair.implicit_part;
  const ButcherTableau& Ah = pair.explicit_part;
  if (A.s != Ah.s) throw ConfigError("implicit and explicit tableaux disagree on stage count");
  const int S = A.s;
  Spectral& sp = *model.sp;

  StepReport rep;
  rep.modified_energy_before = modified_energy(model, state.u, state.q);

  if (propagate_v && !state.v) state.v = state.u;
  const RealField& v_base = propagate_v ? *state.v : state.u;
  const RealField& un = state.u;
  const double qn = state.q, tn = state.t;

  StageWorkspace ws = make_workspace(model, S);
  for (const Group& grp : stage_groups(A)) {
    check_explicit_coupling(Ah, grp);
    const int m = grp.end - grp.begin;
    for (int i = grp.begin; i < grp.end; ++i) {
      RealField& rhs = ws.v[i];
      rhs = v_base;
      for (int j = 0; j < grp.begin; ++j) {
        if (A.a(i, j) != 0.0) axpy(rhs, tau * A.a(i, j), ws.vdotL[j]);
        if (Ah.a(i, j) != 0.0) axpy(rhs, tau * Ah.a(i, j), ws.vdotN[j]);
      }
    }
    solve_v_group(sp, model.stage, A, grp, tau, ws);
    for (int i = grp.begin; i < grp.end; ++i) ws.f[i] = eval_f(model, ws.v[i]);

    std::vector<RealField> rhs_u(m);
    std::vector<double> rq(m);
    std::vector<RealField> src_store;
    std::vector<const RealField*> src(m, nullptr);
    src_store.reserve(m);
    for (int i = grp.begin; i < grp.end; ++i) {
      const int r = i - grp.begin;
      rhs_u[r] = un;
      rq[r] = qn;
      for (int j = 0; j < grp.begin; ++j) {
        if (A.a(i, j) != 0.0) {
          axpy(rhs_u[r], tau * A.a(i, j), ws.udot[j]);
          rq[r] += tau * A.a(i, j) * ws.qdot[j];
        }
      }
      if (opts.source) {
        src_store.push_back(sample_source(model, *opts.source, tn + A.c[i] * tau));
        src[r] = &src_store.back();
      }
    }
    solve_uq_group(model, A, grp, tau, rhs_u, rq, src, ws);

    for (int i = grp.begin; i < grp.end; ++i) {
      ws.vdotN[i] = ws.gf[i];
      for (double& x : ws.vdotN[i].v) x *= 2.0 * ws.q[i];
      if (opts.source)
        axpy(ws.vdotN[i], 1.0, sample_source(model, *opts.source, tn + Ah.c[i] * tau));
    }
  }

  if (opts.diagnostics)
    fill_stage_diagnostics(model, A, Ah, v_base, un, qn, tn, tau, opts, ws, rep);

  RealField unew = un;
  double qnew = qn;
  for (int i = 0; i < S; ++i) {
    if (A.b[i] != 0.0) axpy(unew, tau * A.b[i], ws.udot[i]);
    qnew += tau * A.b[i] * ws.qdot[i];
  }
  if (propagate_v) {
    RealField vnew = *state.v;
    for (int i = 0; i < S; ++i) {
      if (A.b[i] != 0.0) {
        axpy(vnew, tau * A.b[i], ws.vdotL[i]);
        axpy(vnew, tau * A.b[i], ws.vdotN[i]);
      }
    }
    *state.v = std::move(vnew);
  }
  state.u = std::move(unew);
  state.q = qnew;
  state.t = tn + tau;

  rep.q_after = state.q;
  rep.modified_energy_after = modified_energy(model, state.u, state.q);
  rep.wall_seconds = seconds_since(t_start);
  return rep;
}

}  // namespace

SAVState make_state(const GradientFlowModel& model, const RealField& u0, double t0) {
  SAVState st;
  st.u = u0;
  st.q = q_init(model, u0);
  st.t = t0;
  return st;
}

EnergyPair energies(const GradientFlowModel& model, const SAVState& state) {
  return {modified_energy(model, state.u, state.q), original_energy(model, state.u)};
}

StageWorkspace make_workspace(const GradientFlowModel& model, int s) {
  StageWorkspace ws;
  ws.s = s;
  const RealField zero = make_field(model.sp->grid());
  ws.v.assign(s, zero);
  ws.f.assign(s, zero);
  ws.u.assign(s, zero);
  ws.vdotL.assign(s, zero);
  ws.vdotN.assign(s, zero);
  ws.udot.assign(s, zero);
  ws.gf.assign(s, zero);
  ws.q.assign(s, 0.0);
  ws.qdot.assign(s, 0.0);
  return ws;
}

void explicit_stage_v(const GradientFlowModel& model, const ARKPair& pair, const RealField& v_base,
                      double tau, StageWorkspace& ws, int i) {
  const ButcherTableau& A = pair.implicit_part;
  const ButcherTableau& Ah = pair.explicit_part;
  for (int j = i + 1; j < A.s; ++j) {
    if (A.a(i, j) != 0.0)
      throw SolverError("implicit tableau is not diagonally implicit at stage " + std::to_string(i));
  }
  for (int j = i; j < Ah.s; ++j) {
    if (Ah.a(i, j) != 0.0)
      throw SolverError("explicit tableau is not strictly lower triangular at stage " +
                        std::to_string(i));
  }
  RealField& rhs = ws.v[i];
  rhs = v_base;
  for (int j = 0; j < i; ++j) {
    if (A.a(i, j) != 0.0) axpy(rhs, tau * A.a(i, j), ws.vdotL[j]);
    if (Ah.a(i, j) != 0.0) axpy(rhs, tau * Ah.a(i, j), ws.vdotN[j]);
  }
  solve_v_group(*model.sp, model.stage, A, Group{i, i + 1}, tau, ws);
}

void coupled_uq_stage(const GradientFlowModel& model, const ARKPair& pair, const RealField& u_base,
                      double q_base, double tau, StageWorkspace& ws, int i,
                      const RealField* source) {
  const ButcherTableau& A = pair.implicit_part;
  for (int j = i + 1; j < A.s; ++j) {
    if (A.a(i, j) != 0.0)
      throw SolverError("implicit tableau is not diagonally implicit at stage " + std::to_string(i));
  }
  std::vector<RealField> rhs_u(1, u_base);
  std::vector<double> rq(1, q_base);
  for (int j = 0; j < i; ++j) {
    if (A.a(i, j) != 0.0) {
      axpy(rhs_u[0], tau * A.a(i, j), ws.udot[j]);
      rq[0] += tau * A.a(i, j) * ws.qdot[j];
    }
  }
  const std::vector<const RealField*> src{source};
  solve_uq_group(model, A, Group{i, i + 1}, tau, rhs_u, rq, src, ws);
}

StepReport step_sav_mark(const GradientFlowModel& model, const ARKPair& pair, SAVState& state,
                         double tau, const StepOptions& opts) {
  return step_mark_ark_impl(model, pair, state, tau, opts, false);
}

StepReport step_sav_ark(const GradientFlowModel& model, const ARKPair& pair, SAVState& state,
                        double tau, const StepOptions& opts) {
  return step_mark_ark_impl(model, pair, state, tau, opts, true);
}

StepReport step_sav_markII(const GradientFlowModel& model, const MarkIITableaux& tabs,
                           SAVState& state, double tau, const StepOptions& opts) {
  const auto t_start = Clock::now();
  if (!(tau > 0.0)) throw ConfigError("time step must be positive");
  const ButcherTableau& A = tabs.a_main;
  const ButcherTableau& Ah = tabs.a_hat;
  const ButcherTableau& At = tabs.a_tilde;
  const ButcherTableau& Ab = tabs.a_bar;
  const int S = A.s;
  if (Ah.s != S || At.s != S || Ab.s != S)
    throw ConfigError("coupled tableaux disagree on stage count");
  Spectral& sp = *model.sp;
  const Grid2D& g = sp.grid();

  StepReport rep;
  rep.modified_energy_before = modified_energy(model, state.u, state.q);
  const RealField& un = state.u;
  const double qn = state.q, tn = state.t;

  StageWorkspace ws = make_workspace(model, S);
  std::vector<RealField> w(S);
  std::vector<double> r(S, 0.0), rdotL(S, 0.0), rdotN(S, 0.0);
  std::vector<char> vL_done(S, 0), vN_done(S, 0), w_done(S, 0), rN_done(S, 0);

  // Lookahead stages whose coefficients reach later stages are materialized
  // as soon as every referenced velocity exists.
  auto scan_deferred = [&]() {
    if (opts.tie_r_to_q) return;
    for (int i = 0; i < S; ++i) {
      if (!w_done[i]) {
        bool ready = true;
        for (int j = 0; j < S && ready; ++j) {
          if (At.a(i, j) != 0.0 && !vL_done[j]) ready = false;
          if (Ab.a(i, j) != 0.0 && !vN_done[j]) ready = false;
        }
        if (ready) {
          w[i] = un;
          for (int j = 0; j < S; ++j) {
            if (At.a(i, j) != 0.0) axpy(w[i], tau * At.a(i, j), ws.vdotL[j]);
            if (Ab.a(i, j) != 0.0) axpy(w[i], tau * Ab.a(i, j), ws.vdotN[j]);
          }
          w_done[i] = 1;
        }
      }
      if (w_done[i] && vN_done[i] && !rN_done[i]) {
        if (model.has_nonlinearity()) {
          const RealField fw = eval_f(model, w[i]);
          rdotN[i] = inner(g, fw, ws.vdotN[i]);
        }
        rN_done[i] = 1;
      }
    }
  };

  for (const Group& grp : stage_groups(A)) {
    check_explicit_coupling(Ah, grp);
    const int m = grp.end - grp.begin;
    for (int i = grp.begin; i < grp.end; ++i) {
      RealField& rhs = ws.v[i];
      rhs = un;
      for (int j = 0; j < grp.begin; ++j) {
        if (A.a(i, j) != 0.0) axpy(rhs, tau * A.a(i, j), ws.vdotL[j]);
        if (Ah.a(i, j) != 0.0) axpy(rhs, tau * Ah.a(i, j), ws.vdotN[j]);
      }
    }
    solve_v_group(sp, model.stage, A, grp, tau, ws);
    for (int i = grp.begin; i < grp.end; ++i) {
      vL_done[i] = 1;
      ws.f[i] = eval_f(model, ws.v[i]);
    }
    scan_deferred();

    if (!opts.tie_r_to_q) {
      for (int i = grp.begin; i < grp.end; ++i) rdotL[i] = inner(g, ws.f[i], ws.vdotL[i]);
      for (int i = grp.begin; i < grp.end; ++i) {
        r[i] = qn;
        for (int j = 0; j < S; ++j) {
          if (A.a(i, j) != 0.0) {
            if (!vL_done[j]) throw SolverError("scalar channel references an unsolved stage");
            r[i] += tau * A.a(i, j) * rdotL[j];
          }
          if (Ah.a(i, j) != 0.0) {
            if (!rN_done[j])
              throw SolverError("scalar channel references a lookahead stage that is not ready");
            r[i] += tau * Ah.a(i, j) * rdotN[j];
          }
        }
      }
      for (int i = grp.begin; i < grp.end; ++i) {
        ws.gf[i] = apply_mobility(model, ws.f[i]);
        ws.vdotN[i] = ws.gf[i];
        for (double& x : ws.vdotN[i].v) x *= 2.0 * r[i];
        if (opts.source)
          axpy(ws.vdotN[i], 1.0, sample_source(model, *opts.source, tn + Ah.c[i] * tau));
        vN_done[i] = 1;
      }
      scan_deferred();
    }

    std::vector<RealField> rhs_u(m);
    std::vector<double> rqv(m);
    std::vector<RealField> src_store;
    std::vector<const RealField*> src(m, nullptr);
    src_store.reserve(m);
    for (int i = grp.begin; i < grp.end; ++i) {
      const int rr = i - grp.begin;
      rhs_u[rr] = un;
      rqv[rr] = qn;
      for (int j = 0; j < grp.begin; ++j) {
        if (A.a(i, j) != 0.0) {
          axpy(rhs_u[rr], tau * A.a(i, j), ws.udot[j]);
          rqv[rr] += tau * A.a(i, j) * ws.qdot[j];
        }
      }
      if (opts.source) {
        src_store.push_back(sample_source(model, *opts.source, tn + A.c[i] * tau));
        src[rr] = &src_store.back();
      }
    }
    solve_uq_group(model, A, grp, tau, rhs_u, rqv, src, ws);

    if (opts.tie_r_to_q) {
      for (int i = grp.begin; i < grp.end; ++i) {
        r[i] = ws.q[i];
        ws.vdotN[i] = ws.gf[i];
        for (double& x : ws.vdotN[i].v) x *= 2.0 * ws.q[i];
        if (opts.source)
          axpy(ws.vdotN[i], 1.0, sample_source(model, *opts.source, tn + Ah.c[i] * tau));
        vN_done[i] = 1;
      }
    }
  }
  scan_deferred();

  if (opts.diagnostics) fill_stage_diagnostics(model, A, Ah, un, un, qn, tn, tau, opts, ws, rep);

  RealField unew = un;
  double qnew = qn;
  for (int i = 0; i < S; ++i) {
    if (A.b[i] != 0.0) axpy(unew, tau * A.b[i], ws.udot[i]);
    qnew += tau * A.b[i] * ws.qdot[i];
  }
  state.u = std::move(unew);
  state.q = qnew;
  state.t = tn + tau;

  rep.q_after = state.q;
  rep.modified_energy_after = modified_energy(model, state.u, state.q);
  rep.wall_seconds = seconds_since(t_start);
  return rep;
}

StepReport step_sav_rkpc(const GradientFlowModel& model, const ButcherTableau& base,
                         const RKPCOptions& rkpc, SAVState& state, double tau,
                         const StepOptions& opts) {
  const auto t_start = Clock::now();
  if (!(tau > 0.0)) throw ConfigError("time step must be positive");
  if (rkpc.sweeps < 1) throw ConfigError("prediction sweep count must be at least 1");
  const int s = base.s;
  Spectral& sp = *model.sp;
  const Grid2D& g = sp.grid();

  StepReport rep;
  rep.modified_energy_before = modified_energy(model, state.u, state.q);
  const RealField& un = state.u;
  const double qn = state.q, tn = state.t;

  std::vector<RealField> src_store;
  std::vector<const RealField*> src(s, nullptr);
  std::vector<CField> srchat(s);
  if (opts.source) {
    src_store.reserve(s);
    for (int i = 0; i < s; ++i) {
      src_store.push_back(sample_source(model, *opts.source, tn + base.c[i] * tau));
      src[i] = &src_store.back();
      sp.forward(src_store.back(), srchat[i]);
    }
  }

  CField unhat;
  sp.forward(un, unhat);
  const size_t modes = unhat.size();

  std::vector<RealField> ucur(s, un), fcur(s), udot(s);
  std::vector<double> qcur(s, qn), qdot(s, 0.0);
  for (int i = 0; i < s; ++i) fcur[i] = eval_f(model, ucur[i]);

  int used = 0;
  for (int m = 0; m < rkpc.sweeps; ++m) {
    std::vector<CField> sys(s);
    CField nhat;
    for (int i = 0; i < s; ++i) {
      RealField drive = fcur[i];
      for (double& x : drive.v) x *= 2.0 * qcur[i];
      sp.forward(drive, nhat);
      sys[i].resize(modes);
      if (model.mobility_is_constant) {
        for (size_t idx = 0; idx < modes; ++idx)
          sys[i][idx] = model.stage.v[idx] * unhat[idx] + model.mobility_value * nhat[idx];
      } else {
        for (size_t idx = 0; idx < modes; ++idx)
          sys[i][idx] = model.stage.v[idx] * unhat[idx] + model.mobility.v[idx] * nhat[idx];
      }
      if (opts.source)
        for (size_t idx = 0; idx < modes; ++idx) sys[i][idx] += srchat[i][idx];
    }
    const std::vector<std::vector<CField>*> systems{&sys};
    solve_group_modes(model.stage, base, 0, s, tau, systems);

    for (int i = 0; i < s; ++i) sp.inverse(sys[i], udot[i]);
    double delta = 0.0;
    std::vector<RealField> unext(s);
    for (int i = 0; i < s; ++i) {
      unext[i] = un;
      for (int j = 0; j < s; ++j)
        if (base.a(i, j) != 0.0) axpy(unext[i], tau * base.a(i, j), udot[j]);
      double di = 0.0;
      for (size_t p = 0; p < unext[i].v.size(); ++p)
        di = std::max(di, std::abs(unext[i].v[p] - ucur[i].v[p]));
      delta = std::max(delta, di);
    }
    ucur = std::move(unext);
    for (int i = 0; i < s; ++i) fcur[i] = eval_f(model, ucur[i]);
    for (int i = 0; i < s; ++i) qdot[i] = inner(g, fcur[i], udot[i]);
    for (int i = 0; i < s; ++i) {
      qcur[i] = qn;
      for (int j = 0; j < s; ++j) qcur[i] += tau * base.a(i, j) * qdot[j];
    }
    used = m + 1;
    if (delta <= rkpc.tol) break;
  }
  rep.sweeps_used = used;

  // Correction: coupled (u, q) stages with the predicted nonlinear data.
  StageWorkspace ws = make_workspace(model, s);
  for (int i = 0; i < s; ++i) ws.f[i] = fcur[i];
  for (const Group& grp : stage_groups(base)) {
    const int m = grp.end - grp.begin;
    std::vector<RealField> rhs_u(m);
    std::vector<double> rqv(m);
    std::vector<const RealField*> gsrc(m, nullptr);
    for (int i = grp.begin; i < grp.end; ++i) {
      const int rr = i - grp.begin;
      rhs_u[rr] = un;
      rqv[rr] = qn;
      for (int j = 0; j < grp.begin; ++j) {
        if (base.a(i, j) != 0.0) {
          axpy(rhs_u[rr], tau * base.a(i, j), ws.udot[j]);
          rqv[rr] += tau * base.a(i, j) * ws.qdot[j];
        }
      }
      gsrc[rr] = src[i];
    }
    solve_uq_group(model, base, grp, tau, rhs_u, rqv, gsrc, ws);
  }

  if (opts.diagnostics) {
    rep.stage_residuals.assign(s, 0.0);
    for (int i = 0; i < s; ++i) {
      RealField pde = sp.apply(model.stage, ws.u[i]);
      axpy(pde, 2.0 * ws.q[i], ws.gf[i]);
      if (src[i]) axpy(pde, 1.0, *src[i]);
      axpy(pde, -1.0, ws.udot[i]);
      double rres = norm_linf(pde) / std::max(1.0, norm_linf(ws.udot[i]));
      const double qd = inner(g, ws.f[i], ws.udot[i]);
      rres = std::max(rres, std::abs(ws.qdot[i] - qd) / std::max(1.0, std::abs(qd)));
      RealField ueq = ws.u[i];
      axpy(ueq, -1.0, un);
      double qeq = ws.q[i] - qn;
      for (int j = 0; j < s; ++j) {
        if (base.a(i, j) != 0.0) {
          axpy(ueq, -tau * base.a(i, j), ws.udot[j]);
          qeq -= tau * base.a(i, j) * ws.qdot[j];
        }
      }
      rres = std::max(rres, norm_linf(ueq) / std::max(1.0, norm_linf(ws.u[i])));
      rres = std::max(rres, std::abs(qeq) / std::max(1.0, std::abs(ws.q[i])));
      rep.stage_residuals[i] = rres;
      rep.max_stage_residual = std::max(rep.max_stage_residual, rres);
    }
  }

  RealField unew = un;
  double qnew = qn;
  for (int i = 0; i < s; ++i) {
    if (base.b[i] != 0.0) axpy(unew, tau * base.b[i], ws.udot[i]);
    qnew += tau * base.b[i] * ws.qdot[i];
  }
  state.u = std::move(unew);
  state.q = qnew;
  state.t = tn + tau;

  rep.q_after = state.q;
  rep.modified_energy_after = modified_energy(model, state.u, state.q);
  rep.wall_seconds = seconds_since(t_start);
  return rep;
}

int integrate(SAVState& state, double t_final, double tau, const StepFn& step,
              const StepObserver& observer) {
  if (!(tau > 0.0)) throw ConfigError("time step must be positive");
  const double t0 = state.t;
  const double span = t_final - t0;
  if (span < 0.0) throw ConfigError("final time precedes the current state time");
  if (span == 0.0) return 0;

  const long long n = static_cast<long long>(std::floor(span / tau + 1e-9));
  const double rem = span - static_cast<double>(n) * tau;
  const bool has_rem = rem > 1e-9 * tau;

  int taken = 0;
  auto advance = [&](double h, double t_target) {
    try {
      const StepReport rep = step(state, h);
      ++taken;
      state.t = t_target;
      if (observer) observer(taken, state, rep);
    } catch (const SolverError& e) {
      throw SolverError("step " + std::to_string(taken + 1) + ": " + e.what());
    }
  };
  for (long long i = 1; i <= n; ++i) {
    const double target = (!has_rem && i == n) ? t_final : t0 + static_cast<double>(i) * tau;
    advance(tau, target);
  }
  if (has_rem) advance(rem, t_final);
  if (taken == 0) state.t = t_final;
  return taken;
}

}  // namespace sav

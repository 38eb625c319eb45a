#pragma once

#include <Eigen/LU>

#include "deforge/equation.hpp"
#include "deforge/spectral.hpp"

namespace deforge {

// Which derivative discretization a residual check uses. Generation always
// uses the spectral path for fields and fourth-order stencils for series, so
// same_operator closes to roundoff while cross_operator re-derives everything
// through an unrelated stencil family.
enum class CheckMode { same_operator, cross_operator };

template <class Scalar = double>
constexpr Scalar check_tolerance(CheckMode mode) {
  return mode == CheckMode::same_operator ? Scalar(1e-10) : Scalar(1e-3);
}

template <class Scalar = double>
struct ResidualReportT {
  std::map<std::string, Scalar> equations;   // name -> max relative residual
  std::map<std::string, Scalar> term_norms;  // "equation.term" -> linf magnitude
  Scalar max_rel = Scalar(0);
  std::string max_equation;
  Index max_index = Index(-1);  // flat position of the worst residual entry
  Scalar tolerance = Scalar(0);

  void add(const std::string& name, Scalar value, Index where = Index(-1)) {
    const bool first = equations.empty();
    equations[name] = value;
    if (first || value > max_rel) {
      max_rel = value;
      max_equation = name;
      max_index = where;
    }
  }

  bool pass() const { return max_rel < tolerance; }
};

using ResidualReport = ResidualReportT<double>;

namespace detail {

template <class Scalar>
FieldT<Scalar> spatial_derivative(const FieldT<Scalar>& f, int dim, int order, bool spectral) {
  return spectral ? spectral_derivative(f, dim, order) : fd_derivative(f, dim, order, 2);
}

template <class Scalar>
Scalar rel_linf(const ArrayX<Scalar>& resid, std::initializer_list<Scalar> term_scales) {
  Scalar d = Scalar(0);
  for (Scalar s : term_scales) d = std::max(d, s);
  return resid.abs().maxCoeff() / (d + Scalar(1e-30));
}

// Normalizes a residual by the largest participating term, records every term
// magnitude under "name.term", and notes where the peak sits.
template <class Scalar>
void add_equation(ResidualReportT<Scalar>& rep, const std::string& name,
                  const ArrayX<Scalar>& resid,
                  std::initializer_list<std::pair<const char*, Scalar>> terms) {
  Scalar scale = Scalar(0);
  for (const auto& t : terms) {
    rep.term_norms[name + "." + t.first] = t.second;
    scale = std::max(scale, t.second);
  }
  Index where = 0;
  const Scalar peak = resid.size() > 0 ? resid.abs().maxCoeff(&where) : Scalar(0);
  rep.add(name, peak / (scale + Scalar(1e-30)), where);
}

// Cubic Lagrange interpolation of evenly spaced channel data at time t; the
// four-node window is clamped at the ends. At interval midpoints this equals
// the Catmull-Rom value (-1, 9, 9, -1) / 16.
template <class Scalar>
ArrayX<Scalar> interp_cubic(const ArrayXX<Scalar>& values, Scalar dt, Scalar t) {
  const Index n = values.rows();
  if (n < 4) throw std::invalid_argument("interp_cubic: need at least 4 samples");
  Scalar pos = t / dt;
  pos = std::min(std::max(pos, Scalar(0)), Scalar(n - 1));
  Index j0 = Index(std::floor(pos)) - 1;
  j0 = std::min(std::max(j0, Index(0)), n - 4);
  ArrayX<Scalar> out = ArrayX<Scalar>::Zero(values.cols());
  for (Index a = 0; a < 4; ++a) {
    Scalar w = Scalar(1);
    for (Index b = 0; b < 4; ++b) {
      if (a == b) continue;
      w *= (pos - Scalar(j0 + b)) / Scalar(a - b);
    }
    out += w * values.row(j0 + a).transpose();
  }
  return out;
}

template <class Scalar>
void require_periodic(const GridT<Scalar>& g, const char* who) {
  for (int j = 0; j < g.dims; ++j)
    if (!g.periodic[j]) throw std::invalid_argument(std::string(who) + ": axis not periodic");
}

}  // namespace detail

// Navier-Stokes ---------------------------------------------------------------

namespace detail {

template <class Scalar>
struct NsTermsT {
  FieldT<Scalar> ut, conv, gradp, visc;
};

template <class Scalar>
NsTermsT<Scalar> ns_terms(const FieldT<Scalar>& u, const FieldT<Scalar>& p, Scalar reynolds,
                          bool spectral) {
  const auto& g = u.grid;
  NsTermsT<Scalar> t;
  t.ut = fd_time_derivative(u, 1, 2);
  t.conv = FieldT<Scalar>::zeros(g, u.components, "convection");
  t.visc = FieldT<Scalar>::zeros(g, u.components, "viscous");
  for (int j = 0; j < g.dims; ++j) {
    auto dj = spatial_derivative(u, j, 1, spectral);
    auto djj = spatial_derivative(u, j, 2, spectral);
    for (int i = 0; i < u.components; ++i)
      for (Index ts = 0; ts < time_slabs(g); ++ts) {
        t.conv.slab(i, ts) += u.slab(j, ts) * dj.slab(i, ts);
        t.visc.slab(i, ts) += djj.slab(i, ts) / reynolds;
      }
  }
  t.gradp = FieldT<Scalar>::zeros(g, u.components, "pressure_gradient");
  for (int i = 0; i < g.dims; ++i) {
    auto dp = spatial_derivative(p, i, 1, spectral);
    for (Index ts = 0; ts < time_slabs(g); ++ts) t.gradp.slab(i, ts) = dp.slab(0, ts);
  }
  return t;
}

template <class Scalar>
FieldT<Scalar> static_snapshot(const FieldT<Scalar>& f, Index t, std::string quantity) {
  auto g = f.grid;
  g.time_points = 0;
  g.duration = Scalar(0);
  auto out = FieldT<Scalar>::zeros(g, f.components, std::move(quantity));
  for (int c = 0; c < f.components; ++c) out.slab(c, 0) = f.slab(c, t);
  return out;
}

}  // namespace detail

// Balances f = du/dt + (u . grad) u + grad p - (1/Re) lap u around a
// divergence-free velocity. The input is Helmholtz-projected first (the
// removed magnitude lands in params["projection"]) and p is the zero-mean
// pressure from lap p = -div((u . grad) u), which keeps f solenoidal.
template <class Scalar>
SampleT<Scalar> balance_ns(FieldT<Scalar> u, const NsParamsT<Scalar>& p) {
  u.grid.validate();
  detail::require_periodic(u.grid, "balance_ns");
  if (u.components != u.grid.dims)
    throw std::invalid_argument("balance_ns: need one velocity component per dim");
  if (u.grid.time_points < 3)
    throw std::invalid_argument("balance_ns: need at least 3 time points");
  if (!(p.reynolds > Scalar(0))) throw std::invalid_argument("balance_ns: reynolds must be > 0");
  if (p.dealias) {
    auto s = dft_forward(u);
    dealias_23(s);
    u = dft_inverse(s);
  }
  auto solenoidal = helmholtz_project(u);
  const Scalar removed = (u.data - solenoidal.data).abs().maxCoeff();
  u = std::move(solenoidal);
  u.quantity = "velocity";

  const auto& g = u.grid;
  auto conv = FieldT<Scalar>::zeros(g, g.dims, "convection");
  for (int j = 0; j < g.dims; ++j) {
    auto dj = spectral_derivative(u, j, 1);
    for (int i = 0; i < g.dims; ++i)
      for (Index t = 0; t < time_slabs(g); ++t) conv.slab(i, t) += u.slab(j, t) * dj.slab(i, t);
  }
  auto rhs = FieldT<Scalar>::zeros(g, 1, "pressure_rhs");
  for (int i = 0; i < g.dims; ++i) {
    auto di = spectral_derivative(conv, i, 1);
    for (Index t = 0; t < time_slabs(g); ++t) rhs.slab(0, t) -= di.slab(i, t);
  }
  auto pressure = poisson_solve(rhs);
  pressure.quantity = "pressure";

  auto terms = detail::ns_terms(u, pressure, p.reynolds, true);
  auto f = FieldT<Scalar>::zeros(g, g.dims, "forcing");
  f.data = terms.ut.data + terms.conv.data + terms.gradp.data - terms.visc.data;

  SampleT<Scalar> s;
  s.family = family_name(Family::navier_stokes);
  s.boundaries["g"] = boundary_trace(u);
  s.fields["u0"] = detail::static_snapshot(u, 0, "velocity");
  s.fields["u"] = std::move(u);
  s.fields["p"] = std::move(pressure);
  s.fields["f"] = std::move(f);
  s.params["re"] = p.reynolds;
  s.params["dealias"] = p.dealias ? Scalar(1) : Scalar(0);
  s.params["projection"] = removed;
  return s;
}

// Navier-Cauchy (static plane stress) -------------------------------------------

namespace detail {

// f_x = -E/(1-nu^2) (u_x,xx + (1-nu)/2 u_x,yy + (1+nu)/2 u_y,xy) and the
// mirrored expression for f_y. The mixed derivative applies dim 0 first.
template <class Scalar>
FieldT<Scalar> snc_forcing(const FieldT<Scalar>& u, Scalar young, Scalar poisson, bool spectral) {
  const Scalar c = young / (Scalar(1) - poisson * poisson);
  const Scalar hm = (Scalar(1) - poisson) / Scalar(2);
  const Scalar hp = (Scalar(1) + poisson) / Scalar(2);
  auto dxx = spatial_derivative(u, 0, 2, spectral);
  auto dyy = spatial_derivative(u, 1, 2, spectral);
  auto dxy = spatial_derivative(spatial_derivative(u, 0, 1, spectral), 1, 1, spectral);
  auto f = FieldT<Scalar>::zeros(u.grid, 2, "forcing");
  f.slab(0) = -c * (dxx.slab(0) + hm * dyy.slab(0) + hp * dxy.slab(1));
  f.slab(1) = -c * (dyy.slab(1) + hm * dxx.slab(1) + hp * dxy.slab(0));
  return f;
}

}  // namespace detail

// Balances the static plane-stress displacement equations around u.
template <class Scalar>
SampleT<Scalar> balance_snc(FieldT<Scalar> u, const SncParamsT<Scalar>& p) {
  u.grid.validate();
  detail::require_periodic(u.grid, "balance_snc");
  if (u.grid.dims != 2 || u.components != 2)
    throw std::invalid_argument("balance_snc: need a two-component planar field");
  if (u.grid.time_points != 0) throw std::invalid_argument("balance_snc: field must be static");
  if (!(p.young > Scalar(0))) throw std::invalid_argument("balance_snc: young must be > 0");
  if (!(p.poisson > Scalar(0) && p.poisson < Scalar(0.5)))
    throw std::invalid_argument("balance_snc: poisson must lie in (0, 0.5)");
  u.quantity = "displacement";

  auto f = detail::snc_forcing(u, p.young, p.poisson, true);

  SampleT<Scalar> s;
  s.family = family_name(Family::navier_cauchy);
  s.boundaries["g"] = boundary_trace(u);
  s.fields["u"] = std::move(u);
  s.fields["f"] = std::move(f);
  s.params["E"] = p.young;
  s.params["nu"] = p.poisson;
  return s;
}

// Elastic wave ------------------------------------------------------------------

namespace detail {

// Material coefficients sampled at every spatial node.
template <class Scalar>
struct WaveCoeffsT {
  ArrayX<Scalar> rho, lambda, mu;
};

template <class Scalar>
ArrayX<Scalar> coeff_array(const FieldT<Scalar>& field, Scalar constant, const GridT<Scalar>& g,
                           const char* name) {
  if (field.data.size() == 0) return ArrayX<Scalar>::Constant(spatial_size(g), constant);
  if (field.components != 1 || field.grid.time_points != 0)
    throw std::invalid_argument(std::string("balance_wave: ") + name +
                                " must be a static scalar field");
  if (field.grid.dims != g.dims)
    throw std::invalid_argument(std::string("balance_wave: ") + name + " grid mismatch");
  for (int j = 0; j < g.dims; ++j)
    if (field.grid.points[j] != g.points[j] || field.grid.extents[j] != g.extents[j])
      throw std::invalid_argument(std::string("balance_wave: ") + name + " grid mismatch");
  return field.slab(0, 0);
}

template <class Scalar>
WaveCoeffsT<Scalar> wave_coeffs(const SampleT<Scalar>& s, const GridT<Scalar>& g) {
  auto pick = [&](const char* name) {
    auto it = s.fields.find(name);
    if (it != s.fields.end()) return coeff_array(it->second, Scalar(0), g, name);
    return ArrayX<Scalar>::Constant(spatial_size(g), s.param(name)).eval();
  };
  return {pick("rho"), pick("lambda"), pick("mu")};
}

template <class Scalar>
struct WaveTermsT {
  FieldT<Scalar> inertia, stress;
};

// Inertia rho u_tt and the stress divergence grad(lambda div u) +
// div(mu (grad u + grad u^T)), with coefficients inside the outer derivative.
template <class Scalar>
WaveTermsT<Scalar> wave_terms(const FieldT<Scalar>& u, const WaveCoeffsT<Scalar>& c,
                              bool spectral) {
  const auto& g = u.grid;
  auto utt = fd_time_derivative(u, 2, 2);
  WaveTermsT<Scalar> w;
  w.inertia = FieldT<Scalar>::zeros(g, g.dims, "inertia");
  for (int i = 0; i < g.dims; ++i)
    for (Index t = 0; t < time_slabs(g); ++t) w.inertia.slab(i, t) = c.rho * utt.slab(i, t);

  std::vector<FieldT<Scalar>> d;
  d.reserve(size_t(g.dims));
  for (int j = 0; j < g.dims; ++j) d.push_back(spatial_derivative(u, j, 1, spectral));

  auto ldiv = FieldT<Scalar>::zeros(g, 1, "lambda_dilatation");
  for (Index t = 0; t < time_slabs(g); ++t) {
    ArrayX<Scalar> div = ArrayX<Scalar>::Zero(spatial_size(g));
    for (int j = 0; j < g.dims; ++j) div += d[size_t(j)].slab(j, t);
    ldiv.slab(0, t) = c.lambda * div;
  }
  w.stress = FieldT<Scalar>::zeros(g, g.dims, "stress_divergence");
  for (int i = 0; i < g.dims; ++i) {
    auto gi = spatial_derivative(ldiv, i, 1, spectral);
    for (Index t = 0; t < time_slabs(g); ++t) w.stress.slab(i, t) = gi.slab(0, t);
    for (int j = 0; j < g.dims; ++j) {
      auto flux = FieldT<Scalar>::zeros(g, 1, "shear_flux");
      for (Index t = 0; t < time_slabs(g); ++t)
        flux.slab(0, t) = c.mu * (d[size_t(j)].slab(i, t) + d[size_t(i)].slab(j, t));
      auto dj = spatial_derivative(flux, j, 1, spectral);
      for (Index t = 0; t < time_slabs(g); ++t) w.stress.slab(i, t) += dj.slab(0, t);
    }
  }
  return w;
}

}  // namespace detail

// Balances f_i = rho u_i,tt - (lambda u_j,j),i - (mu (u_i,j + u_j,i)),j with
// uniform or spatially varying coefficients.
template <class Scalar>
SampleT<Scalar> balance_wave(FieldT<Scalar> u, const WaveParamsT<Scalar>& p) {
  u.grid.validate();
  detail::require_periodic(u.grid, "balance_wave");
  if (u.components != u.grid.dims)
    throw std::invalid_argument("balance_wave: need one displacement component per dim");
  if (u.grid.time_points < 3)
    throw std::invalid_argument("balance_wave: need at least 3 time points");

  detail::WaveCoeffsT<Scalar> c{detail::coeff_array(p.rho_field, p.rho, u.grid, "rho"),
                                detail::coeff_array(p.lambda_field, p.lambda, u.grid, "lambda"),
                                detail::coeff_array(p.mu_field, p.mu, u.grid, "mu")};
  if (!(c.rho.minCoeff() > Scalar(0)))
    throw std::invalid_argument("balance_wave: rho must be positive everywhere");
  u.quantity = "displacement";

  auto terms = detail::wave_terms(u, c, true);
  auto f = FieldT<Scalar>::zeros(u.grid, u.grid.dims, "forcing");
  f.data = terms.inertia.data - terms.stress.data;

  auto v = fd_time_derivative(u, 1, 2);
  SampleT<Scalar> s;
  s.family = family_name(Family::elastic_wave);
  s.boundaries["g"] = boundary_trace(u);
  s.fields["u0"] = detail::static_snapshot(u, 0, "displacement");
  s.fields["v0"] = detail::static_snapshot(v, 0, "velocity");
  auto coeff_field = [&](const FieldT<Scalar>& field, const char* name) {
    if (field.data.size() == 0) return;
    auto stored = field;
    stored.quantity = name;
    s.fields[name] = std::move(stored);
  };
  coeff_field(p.rho_field, "rho");
  coeff_field(p.lambda_field, "lambda");
  coeff_field(p.mu_field, "mu");
  s.fields["u"] = std::move(u);
  s.fields["f"] = std::move(f);
  if (p.rho_field.data.size() == 0) s.params["rho"] = p.rho;
  if (p.lambda_field.data.size() == 0) s.params["lambda"] = p.lambda;
  if (p.mu_field.data.size() == 0) s.params["mu"] = p.mu;
  return s;
}

// Bouc-Wen ----------------------------------------------------------------------

// Integrates dz/dt = a du - beta |du| |z|^(n-1) z - gamma du |z|^n per degree
// of freedom with z(0) = 0, using classical RK4; the velocity at half steps
// comes from cubic interpolation of the sampled series, so the evolution is a
// pure function of the stored samples.
template <class Scalar>
ArrayXX<Scalar> boucwen_evolve(const ArrayXX<Scalar>& du, Scalar dt,
                               const BoucWenParamsT<Scalar>& p) {
  const Index steps = du.rows();
  const int ndof = int(du.cols());
  if (steps < 4) throw std::invalid_argument("boucwen_evolve: need at least 4 samples");
  auto rhs = [&](const ArrayX<Scalar>& v, const ArrayX<Scalar>& z) -> ArrayX<Scalar> {
    ArrayX<Scalar> zn1 = z.abs().pow(p.n - Scalar(1));
    return p.a * v - p.beta * v.abs() * zn1 * z - p.gamma * v * zn1 * z.abs();
  };
  ArrayXX<Scalar> z = ArrayXX<Scalar>::Zero(steps, ndof);
  ArrayX<Scalar> zi = ArrayX<Scalar>::Zero(ndof);
  for (Index i = 0; i + 1 < steps; ++i) {
    const ArrayX<Scalar> v0 = du.row(i).transpose();
    const ArrayX<Scalar> v1 = du.row(i + 1).transpose();
    const ArrayX<Scalar> vh = detail::interp_cubic(du, dt, (Scalar(i) + Scalar(0.5)) * dt);
    const ArrayX<Scalar> k1 = rhs(v0, zi);
    const ArrayX<Scalar> k2 = rhs(vh, (zi + dt / Scalar(2) * k1).eval());
    const ArrayX<Scalar> k3 = rhs(vh, (zi + dt / Scalar(2) * k2).eval());
    const ArrayX<Scalar> k4 = rhs(v1, (zi + dt * k3).eval());
    zi += dt / Scalar(6) * (k1 + Scalar(2) * k2 + Scalar(2) * k3 + k4);
    z.row(i + 1) = zi.transpose();
  }
  return z;
}

namespace detail {

template <class Scalar>
ArrayXX<Scalar> boucwen_force(const ArrayXX<Scalar>& u, const ArrayXX<Scalar>& du,
                              const ArrayXX<Scalar>& ddu, const ArrayXX<Scalar>& z,
                              const BoucWenParamsT<Scalar>& p) {
  MatrixX<Scalar> out = ddu.matrix() * p.mass.transpose() + du.matrix() * p.damping.transpose() +
                        u.matrix() * (p.alpha * p.stiffness).matrix().asDiagonal() +
                        z.matrix() * ((Scalar(1) - p.alpha) * p.stiffness).matrix().asDiagonal();
  return out.array();
}

}  // namespace detail

// Balances P = M ddu + C du + alpha k u + (1 - alpha) k z around a sampled
// displacement trajectory; velocities and accelerations come from fourth-order
// differences of u and z from the RK4 evolution above.
template <class Scalar>
SampleT<Scalar> balance_boucwen(const TimeSeriesT<Scalar>& u, const BoucWenParamsT<Scalar>& p) {
  const int ndof = u.channels();
  const Index steps = u.steps();
  if (ndof < 1) throw std::invalid_argument("balance_boucwen: need at least one channel");
  if (steps < 5) throw std::invalid_argument("balance_boucwen: need at least 5 samples");
  if (p.mass.rows() != ndof || p.mass.cols() != ndof || p.damping.rows() != ndof ||
      p.damping.cols() != ndof || p.stiffness.size() != ndof)
    throw std::invalid_argument("balance_boucwen: parameter shapes disagree with channels");
  if (!(p.beta + p.gamma > Scalar(0)) || !(p.n >= Scalar(1)))
    throw std::invalid_argument("balance_boucwen: need beta + gamma > 0 and n >= 1");
  if (!Eigen::FullPivLU<MatrixX<Scalar>>(p.mass).isInvertible())
    throw std::invalid_argument("balance_boucwen: mass matrix is singular");

  auto du = TimeSeriesT<Scalar>::zeros(steps, ndof, u.dt);
  auto ddu = TimeSeriesT<Scalar>::zeros(steps, ndof, u.dt);
  for (int c = 0; c < ndof; ++c) {
    const ArrayX<Scalar> uc = u.channel(c);
    du.channel(c) = fd_series(uc, u.dt, 1, 4);
    ddu.channel(c) = fd_series(uc, u.dt, 2, 4);
  }
  if (!(p.a * du.values.abs().maxCoeff() * u.dt < Scalar(0.1)))
    throw std::invalid_argument("balance_boucwen: sampling too coarse for the hysteresis rate");

  auto z = TimeSeriesT<Scalar>::zeros(steps, ndof, u.dt);
  z.values = boucwen_evolve(du.values, u.dt, p);
  auto force = TimeSeriesT<Scalar>::zeros(steps, ndof, u.dt);
  force.values = detail::boucwen_force(u.values, du.values, ddu.values, z.values, p);

  SampleT<Scalar> s;
  s.family = family_name(Family::bouc_wen);
  s.series["u"] = u;
  s.series["du"] = std::move(du);
  s.series["ddu"] = std::move(ddu);
  s.series["z"] = std::move(z);
  s.series["p"] = std::move(force);
  s.params["alpha"] = p.alpha;
  s.params["a"] = p.a;
  s.params["beta"] = p.beta;
  s.params["gamma"] = p.gamma;
  s.params["n"] = p.n;
  s.params["ndof"] = Scalar(ndof);
  for (int i = 0; i < ndof; ++i) {
    s.params["k" + std::to_string(i)] = p.stiffness[i];
    for (int j = 0; j < ndof; ++j) {
      const std::string ij = std::to_string(i) + "_" + std::to_string(j);
      s.params["m" + ij] = p.mass(i, j);
      s.params["c" + ij] = p.damping(i, j);
    }
  }
  return s;
}

// Lorenz -------------------------------------------------------------------------

// Chain-solves the forced Lorenz system around a prescribed x(t) with |x|
// bounded away from zero: y from the x equation, z from the y equation, f
// from the z equation, all with fourth-order differences on the samples.
template <class Scalar>
SampleT<Scalar> balance_lorenz(const TimeSeriesT<Scalar>& x, const LorenzParamsT<Scalar>& p) {
  if (x.channels() != 1) throw std::invalid_argument("balance_lorenz: x must be one channel");
  if (x.steps() < 6) throw std::invalid_argument("balance_lorenz: need at least 6 samples");
  if (!(p.x_floor > Scalar(0)))
    throw std::invalid_argument("balance_lorenz: x_floor must be > 0");
  const ArrayX<Scalar> xv = x.channel(0);
  if (!(xv.abs().minCoeff() >= p.x_floor))
    throw std::invalid_argument("balance_lorenz: |x| must stay above the floor");

  const Scalar dt = x.dt;
  const ArrayX<Scalar> dx = fd_series(xv, dt, 1, 4);
  const ArrayX<Scalar> yv = xv + dx / p.sigma;
  const ArrayX<Scalar> dy = fd_series(yv, dt, 1, 4);
  const ArrayX<Scalar> zv = (p.rho * xv - yv - dy) / xv;
  const ArrayX<Scalar> dz = fd_series(zv, dt, 1, 4);
  const ArrayX<Scalar> fv = xv * yv - p.beta * zv - dz;

  SampleT<Scalar> s;
  s.family = family_name(Family::lorenz);
  s.series["x"] = x;
  auto mk = [&](const ArrayX<Scalar>& v) {
    auto t = TimeSeriesT<Scalar>::zeros(x.steps(), 1, dt);
    t.channel(0) = v;
    return t;
  };
  s.series["y"] = mk(yv);
  s.series["z"] = mk(zv);
  s.series["f"] = mk(fv);
  s.params["sigma"] = p.sigma;
  s.params["rho"] = p.rho;
  s.params["beta"] = p.beta;
  return s;
}

// Residual verification -----------------------------------------------------------

namespace detail {

template <class Scalar>
void check_trace(const SampleT<Scalar>& s, const FieldT<Scalar>& u,
                 ResidualReportT<Scalar>& rep) {
  auto it = s.boundaries.find("g");
  if (it == s.boundaries.end()) throw std::invalid_argument("sample: missing boundary g");
  auto want = boundary_trace(u);
  if (want.faces.size() != it->second.faces.size())
    throw std::invalid_argument("sample: boundary face count mismatch");
  Scalar worst = Scalar(0);
  Index where = Index(-1);
  Scalar scale = Scalar(0);
  for (size_t i = 0; i < want.faces.size(); ++i) {
    const auto& a = want.faces[i].data;
    const auto& b = it->second.faces[i].data;
    if (a.size() != b.size()) throw std::invalid_argument("sample: boundary face shape mismatch");
    scale = std::max(scale, a.abs().maxCoeff());
    Index loc = 0;
    const Scalar peak = (a - b).abs().maxCoeff(&loc);
    if (peak > worst) {
      worst = peak;
      where = loc;
    }
  }
  rep.term_norms["boundary.trace"] = scale;
  rep.add("boundary", worst / (scale + Scalar(1e-30)), where);
}

template <class Scalar>
void check_snapshot(const FieldT<Scalar>& stored, const FieldT<Scalar>& field, Index t,
                    const std::string& name, ResidualReportT<Scalar>& rep) {
  Scalar worst = Scalar(0);
  Index where = Index(-1);
  Scalar scale = Scalar(0);
  for (int c = 0; c < field.components; ++c) {
    scale = std::max(scale, field.slab(c, t).abs().maxCoeff());
    Index loc = 0;
    const Scalar peak = (stored.slab(c, 0) - field.slab(c, t)).abs().maxCoeff(&loc);
    if (peak > worst) {
      worst = peak;
      where = loc;
    }
  }
  rep.term_norms[name + ".state"] = scale;
  rep.add(name, worst / (scale + Scalar(1e-30)), where);
}

template <class Scalar>
ResidualReportT<Scalar> verify_ns(const SampleT<Scalar>& s, CheckMode mode) {
  const bool spectral = mode == CheckMode::same_operator;
  const auto& u = s.field("u");
  const auto& p = s.field("p");
  const auto& f = s.field("f");
  const Scalar re = s.param("re");
  auto t = ns_terms(u, p, re, spectral);

  ResidualReportT<Scalar> rep;
  const ArrayX<Scalar> resid = t.ut.data + t.conv.data + t.gradp.data - t.visc.data - f.data;
  add_equation(rep, "momentum", resid,
               {{"du_dt", norm(t.ut, NormKind::linf)},
                {"convection", norm(t.conv, NormKind::linf)},
                {"pressure_gradient", norm(t.gradp, NormKind::linf)},
                {"viscous", norm(t.visc, NormKind::linf)},
                {"f", norm(f, NormKind::linf)}});

  auto div = FieldT<Scalar>::zeros(u.grid, 1, "divergence");
  Scalar part_scale = Scalar(0);
  for (int j = 0; j < u.grid.dims; ++j) {
    auto dj = spatial_derivative(u, j, 1, spectral);
    for (Index ts = 0; ts < time_slabs(u.grid); ++ts) {
      div.slab(0, ts) += dj.slab(j, ts);
      part_scale = std::max(part_scale, dj.slab(j, ts).abs().maxCoeff());
    }
  }
  add_equation(rep, "continuity", div.data, {{"velocity_gradient", part_scale}});

  check_snapshot(s.field("u0"), u, 0, "initial_condition", rep);
  check_trace(s, u, rep);
  return rep;
}

template <class Scalar>
ResidualReportT<Scalar> verify_snc(const SampleT<Scalar>& s, CheckMode mode) {
  const bool spectral = mode == CheckMode::same_operator;
  const auto& u = s.field("u");
  const auto& f = s.field("f");
  auto f_re = snc_forcing(u, s.param("E"), s.param("nu"), spectral);

  ResidualReportT<Scalar> rep;
  add_equation(rep, "equilibrium", (f_re.data - f.data).eval(),
               {{"operator", norm(f_re, NormKind::linf)}, {"f", norm(f, NormKind::linf)}});
  check_trace(s, u, rep);
  return rep;
}

template <class Scalar>
ResidualReportT<Scalar> verify_wave(const SampleT<Scalar>& s, CheckMode mode) {
  const bool spectral = mode == CheckMode::same_operator;
  const auto& u = s.field("u");
  const auto& f = s.field("f");
  const auto c = wave_coeffs(s, u.grid);
  auto t = wave_terms(u, c, spectral);

  ResidualReportT<Scalar> rep;
  add_equation(rep, "momentum", (t.inertia.data - t.stress.data - f.data).eval(),
               {{"inertia", norm(t.inertia, NormKind::linf)},
                {"stress", norm(t.stress, NormKind::linf)},
                {"f", norm(f, NormKind::linf)}});
  check_snapshot(s.field("u0"), u, 0, "initial_condition", rep);
  auto v = fd_time_derivative(u, 1, 2);
  check_snapshot(s.field("v0"), v, 0, "initial_velocity", rep);
  check_trace(s, u, rep);
  return rep;
}

template <class Scalar>
BoucWenParamsT<Scalar> boucwen_params_of(const SampleT<Scalar>& s) {
  BoucWenParamsT<Scalar> p;
  const int ndof = int(s.param("ndof"));
  p.alpha = s.param("alpha");
  p.a = s.param("a");
  p.beta = s.param("beta");
  p.gamma = s.param("gamma");
  p.n = s.param("n");
  p.mass.resize(ndof, ndof);
  p.damping.resize(ndof, ndof);
  p.stiffness.resize(ndof);
  for (int i = 0; i < ndof; ++i) {
    p.stiffness[i] = s.param("k" + std::to_string(i));
    for (int j = 0; j < ndof; ++j) {
      const std::string ij = std::to_string(i) + "_" + std::to_string(j);
      p.mass(i, j) = s.param("m" + ij);
      p.damping(i, j) = s.param("c" + ij);
    }
  }
  return p;
}

template <class Scalar>
ResidualReportT<Scalar> verify_boucwen(const SampleT<Scalar>& s, CheckMode mode) {
  const auto& u = s.channel_set("u");
  const auto& du = s.channel_set("du");
  const auto& ddu = s.channel_set("ddu");
  const auto& z = s.channel_set("z");
  const auto& force = s.channel_set("p");
  const auto p = boucwen_params_of(s);
  const Scalar dt = u.dt;
  const int ndof = u.channels();
  const Index steps = u.steps();
  if (du.channels() != ndof || ddu.channels() != ndof || z.channels() != ndof ||
      force.channels() != ndof || du.steps() != steps || ddu.steps() != steps ||
      z.steps() != steps || force.steps() != steps)
    throw std::invalid_argument("verify: series shapes disagree");

  const int acc = mode == CheckMode::same_operator ? 4 : 2;
  ArrayXX<Scalar> du_re(steps, ndof), ddu_re(steps, ndof);
  for (int c = 0; c < ndof; ++c) {
    const ArrayX<Scalar> uc = u.channel(c);
    du_re.col(c) = fd_series(uc, dt, 1, acc);
    ddu_re.col(c) = fd_series(uc, dt, 2, acc);
  }

  ResidualReportT<Scalar> rep;
  add_equation(rep, "velocity", ArrayX<Scalar>((du_re - du.values).reshaped()),
               {{"du", du.values.abs().maxCoeff()}});
  add_equation(rep, "acceleration", ArrayX<Scalar>((ddu_re - ddu.values).reshaped()),
               {{"ddu", ddu.values.abs().maxCoeff()}});

  auto rhs = [&](const ArrayX<Scalar>& v, const ArrayX<Scalar>& zz) -> ArrayX<Scalar> {
    ArrayX<Scalar> zn1 = zz.abs().pow(p.n - Scalar(1));
    return p.a * v - p.beta * v.abs() * zn1 * zz - p.gamma * v * zn1 * zz.abs();
  };
  if (mode == CheckMode::same_operator) {
    const ArrayXX<Scalar> z_re = boucwen_evolve(du_re, dt, p);
    add_equation(rep, "evolution", ArrayX<Scalar>((z_re - z.values).reshaped()),
                 {{"z", z.values.abs().maxCoeff()}});
    const ArrayXX<Scalar> p_re = boucwen_force(u.values, du_re, ddu_re, z_re, p);
    add_equation(rep, "motion", ArrayX<Scalar>((p_re - force.values).reshaped()),
                 {{"assembled", p_re.abs().maxCoeff()},
                  {"p", force.values.abs().maxCoeff()}});
  } else {
    ArrayXX<Scalar> defect = ArrayXX<Scalar>::Zero(std::max<Index>(steps - 1, 1), ndof);
    Scalar increment = Scalar(0);
    for (Index i = 0; i + 1 < steps; ++i) {
      const ArrayX<Scalar> v0 = du.values.row(i).transpose();
      const ArrayX<Scalar> v1 = du.values.row(i + 1).transpose();
      const ArrayX<Scalar> z0 = z.values.row(i).transpose();
      const ArrayX<Scalar> g1 = rhs(v0, z0);
      const ArrayX<Scalar> g2 = rhs(v1, (z0 + dt * g1).eval());
      const ArrayX<Scalar> step = dt / Scalar(2) * (g1 + g2);
      defect.row(i) = z.values.row(i + 1) - (z0 + step).transpose();
      increment = std::max(increment, step.abs().maxCoeff());
    }
    add_equation(rep, "evolution", ArrayX<Scalar>(defect.reshaped()),
                 {{"z", z.values.abs().maxCoeff()}, {"increment", increment}});
    const ArrayXX<Scalar> p_re = boucwen_force(u.values, du_re, ddu_re, z.values, p);
    add_equation(rep, "motion", ArrayX<Scalar>((p_re - force.values).reshaped()),
                 {{"assembled", p_re.abs().maxCoeff()},
                  {"p", force.values.abs().maxCoeff()}});
  }
  return rep;
}

template <class Scalar>
ResidualReportT<Scalar> verify_lorenz(const SampleT<Scalar>& s, CheckMode mode) {
  const int acc = mode == CheckMode::same_operator ? 4 : 2;
  const ArrayX<Scalar> x = s.channel_set("x").channel(0);
  const ArrayX<Scalar> y = s.channel_set("y").channel(0);
  const ArrayX<Scalar> z = s.channel_set("z").channel(0);
  const ArrayX<Scalar> f = s.channel_set("f").channel(0);
  const Scalar sigma = s.param("sigma");
  const Scalar rho = s.param("rho");
  const Scalar beta = s.param("beta");
  const Scalar dt = s.channel_set("x").dt;

  const ArrayX<Scalar> dx = fd_series(x, dt, 1, acc);
  const ArrayX<Scalar> dy = fd_series(y, dt, 1, acc);
  const ArrayX<Scalar> dz = fd_series(z, dt, 1, acc);

  ResidualReportT<Scalar> rep;
  add_equation(rep, "evolution_x", (dx - sigma * (y - x)).eval(),
               {{"dx", dx.abs().maxCoeff()}, {"coupling", (sigma * (y - x)).abs().maxCoeff()}});
  add_equation(rep, "evolution_y", (dy - (x * (rho - z) - y)).eval(),
               {{"dy", dy.abs().maxCoeff()},
                {"drive", (rho * x).abs().maxCoeff()},
                {"xz", (x * z).abs().maxCoeff()},
                {"y", y.abs().maxCoeff()}});
  add_equation(rep, "evolution_z", (dz - (x * y - beta * z - f)).eval(),
               {{"dz", dz.abs().maxCoeff()},
                {"xy", (x * y).abs().maxCoeff()},
                {"bz", (beta * z).abs().maxCoeff()},
                {"f", f.abs().maxCoeff()}});
  return rep;
}

}  // namespace detail

// Recomputes every balance equation of a sample from its stored arrays.
// same_operator repeats the generating discretization and must close to
// roundoff; cross_operator swaps in an independent stencil family (second
// order in space for fields, second versus fourth order in time for series,
// a one-step Heun defect against the RK4 hysteresis path) and measures
// genuine consistency.
template <class Scalar>
ResidualReportT<Scalar> verify_sample(const SampleT<Scalar>& s, CheckMode mode) {
  ResidualReportT<Scalar> rep;
  switch (family_from_string(s.family)) {
    case Family::navier_stokes: rep = detail::verify_ns(s, mode); break;
    case Family::navier_cauchy: rep = detail::verify_snc(s, mode); break;
    case Family::elastic_wave: rep = detail::verify_wave(s, mode); break;
    case Family::bouc_wen: rep = detail::verify_boucwen(s, mode); break;
    case Family::lorenz: rep = detail::verify_lorenz(s, mode); break;
  }
  rep.tolerance = check_tolerance<Scalar>(mode);
  return rep;
}

template <class Scalar = double>
struct ResidualPairT {
  ResidualReportT<Scalar> same_op, cross_op;
};

using ResidualPair = ResidualPairT<double>;

// Runs both residual checks on a sample.
template <class Scalar>
ResidualPairT<Scalar> residual(const SampleT<Scalar>& s) {
  return {verify_sample(s, CheckMode::same_operator),
          verify_sample(s, CheckMode::cross_operator)};
}

// ODE re-integration ----------------------------------------------------------

// Re-solves the Bouc-Wen system forward from the stored initial state, driven
// by the stored excitation (cubic interpolation between samples). Returns the
// re-integrated displacement per dof.
template <class Scalar>
TimeSeriesT<Scalar> resolve_boucwen(const SampleT<Scalar>& s, int substeps = 4) {
  const auto& u = s.channel_set("u");
  const auto& du = s.channel_set("du");
  const auto& force = s.channel_set("p");
  const auto p = detail::boucwen_params_of(s);
  const Scalar dt = u.dt;
  const int ndof = u.channels();
  const Index steps = u.steps();
  const Eigen::PartialPivLU<MatrixX<Scalar>> mass_lu(p.mass);

  auto out = TimeSeriesT<Scalar>::zeros(steps, ndof, dt);
  out.values.row(0) = u.values.row(0);

  struct State {
    ArrayX<Scalar> u, v, z;
  };
  auto deriv = [&](const State& st, Scalar t) -> State {
    const ArrayX<Scalar> pt = detail::interp_cubic(force.values, dt, t);
    const ArrayX<Scalar> zn1 = st.z.abs().pow(p.n - Scalar(1));
    State d;
    d.u = st.v;
    d.z = p.a * st.v - p.beta * st.v.abs() * zn1 * st.z - p.gamma * st.v * zn1 * st.z.abs();
    const VectorX<Scalar> rhs =
        pt.matrix() - p.damping * st.v.matrix() -
        (p.alpha * p.stiffness * st.u + (Scalar(1) - p.alpha) * p.stiffness * st.z).matrix();
    d.v = mass_lu.solve(rhs).array();
    return d;
  };

  const Scalar h = dt / Scalar(substeps);
  State st{u.values.row(0).transpose(), du.values.row(0).transpose(),
           ArrayX<Scalar>::Zero(ndof)};
  for (Index i = 0; i + 1 < steps; ++i) {
    for (int m = 0; m < substeps; ++m) {
      const Scalar t = Scalar(i) * dt + Scalar(m) * h;
      const State k1 = deriv(st, t);
      State s2{(st.u + h / 2 * k1.u).eval(), (st.v + h / 2 * k1.v).eval(),
               (st.z + h / 2 * k1.z).eval()};
      const State k2 = deriv(s2, t + h / 2);
      State s3{(st.u + h / 2 * k2.u).eval(), (st.v + h / 2 * k2.v).eval(),
               (st.z + h / 2 * k2.z).eval()};
      const State k3 = deriv(s3, t + h / 2);
      State s4{(st.u + h * k3.u).eval(), (st.v + h * k3.v).eval(), (st.z + h * k3.z).eval()};
      const State k4 = deriv(s4, t + h);
      st.u += h / 6 * (k1.u + 2 * k2.u + 2 * k3.u + k4.u);
      st.v += h / 6 * (k1.v + 2 * k2.v + 2 * k3.v + k4.v);
      st.z += h / 6 * (k1.z + 2 * k2.z + 2 * k3.z + k4.z);
    }
    out.values.row(i + 1) = st.u.transpose();
  }
  return out;
}

// Re-solves the forced Lorenz system from the stored initial state with the
// stored forcing. Returns channels (x, y, z).
template <class Scalar>
TimeSeriesT<Scalar> resolve_lorenz(const SampleT<Scalar>& s, int substeps = 4) {
  const auto& xs = s.channel_set("x");
  const auto& fs = s.channel_set("f");
  const Scalar sigma = s.param("sigma");
  const Scalar rho = s.param("rho");
  const Scalar beta = s.param("beta");
  const Scalar dt = xs.dt;
  const Index steps = xs.steps();

  Scalar x = xs.values(0, 0);
  Scalar y = s.channel_set("y").values(0, 0);
  Scalar z = s.channel_set("z").values(0, 0);
  auto out = TimeSeriesT<Scalar>::zeros(steps, 3, dt);
  out.values(0, 0) = x;
  out.values(0, 1) = y;
  out.values(0, 2) = z;

  auto deriv = [&](Scalar xx, Scalar yy, Scalar zz, Scalar t, Scalar& dx, Scalar& dy,
                   Scalar& dz) {
    const Scalar f = detail::interp_cubic(fs.values, dt, t)[0];
    dx = sigma * (yy - xx);
    dy = xx * (rho - zz) - yy;
    dz = xx * yy - beta * zz - f;
  };

  const Scalar h = dt / Scalar(substeps);
  for (Index i = 0; i + 1 < steps; ++i) {
    for (int m = 0; m < substeps; ++m) {
      const Scalar t = Scalar(i) * dt + Scalar(m) * h;
      Scalar k1x, k1y, k1z, k2x, k2y, k2z, k3x, k3y, k3z, k4x, k4y, k4z;
      deriv(x, y, z, t, k1x, k1y, k1z);
      deriv(x + h / 2 * k1x, y + h / 2 * k1y, z + h / 2 * k1z, t + h / 2, k2x, k2y, k2z);
      deriv(x + h / 2 * k2x, y + h / 2 * k2y, z + h / 2 * k2z, t + h / 2, k3x, k3y, k3z);
      deriv(x + h * k3x, y + h * k3y, z + h * k3z, t + h, k4x, k4y, k4z);
      x += h / 6 * (k1x + 2 * k2x + 2 * k3x + k4x);
      y += h / 6 * (k1y + 2 * k2y + 2 * k3y + k4y);
      z += h / 6 * (k1z + 2 * k2z + 2 * k3z + k4z);
    }
    out.values(i + 1, 0) = x;
    out.values(i + 1, 1) = y;
    out.values(i + 1, 2) = z;
  }
  return out;
}

}  // namespace deforge

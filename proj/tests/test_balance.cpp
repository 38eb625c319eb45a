#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "deforge/balance.hpp"
#include "doctest.h"

using namespace deforge;

namespace {

constexpr double two_pi = 6.283185307179586476925286766559;

struct Harmonic {
  double amp, freq, phase;
};

// Analytic cosine-sum trajectory and its first two derivatives.
double traj(const std::vector<Harmonic>& hs, double offset, double t, int deriv) {
  double v = deriv == 0 ? offset : 0.0;
  for (const auto& h : hs) {
    const double w = two_pi * h.freq;
    const double arg = w * t + h.phase + two_pi / 4.0 * deriv;
    v += h.amp * std::pow(w, deriv) * std::cos(arg);
  }
  return v;
}

TimeSeries sampled_trajectory(const std::vector<std::vector<Harmonic>>& dofs,
                              const std::vector<double>& offsets, Index steps, double dt,
                              int deriv) {
  auto s = TimeSeries::zeros(steps, int(dofs.size()), dt);
  for (size_t c = 0; c < dofs.size(); ++c)
    for (Index i = 0; i < steps; ++i)
      s.values(i, Index(c)) = traj(dofs[c], offsets[c], double(i) * dt, deriv);
  return s;
}

// Fine-step RK4 for dz/dt = a v - beta |v||z|^(n-1) z - gamma v |z|^n with the
// velocity given in closed form, recorded at the sample times.
Eigen::ArrayXd reference_evolution(const std::vector<Harmonic>& hs, Index steps, double dt,
                                   int substeps, const BoucWenParams& p) {
  auto v = [&](double t) { return traj(hs, 0.0, t, 1); };
  auto g = [&](double vel, double z) {
    const double zn1 = std::pow(std::abs(z), p.n - 1.0);
    return p.a * vel - p.beta * std::abs(vel) * zn1 * z - p.gamma * vel * zn1 * std::abs(z);
  };
  Eigen::ArrayXd out = Eigen::ArrayXd::Zero(steps);
  double z = 0.0;
  const double h = dt / substeps;
  for (Index i = 0; i + 1 < steps; ++i) {
    for (int m = 0; m < substeps; ++m) {
      const double t = double(i) * dt + m * h;
      const double k1 = g(v(t), z);
      const double k2 = g(v(t + h / 2), z + h / 2 * k1);
      const double k3 = g(v(t + h / 2), z + h / 2 * k2);
      const double k4 = g(v(t + h), z + h * k3);
      z += h / 6 * (k1 + 2 * k2 + 2 * k3 + k4);
    }
    out[i + 1] = z;
  }
  return out;
}

BoucWenParams coupled_oscillator() {
  BoucWenParams p;
  p.mass.resize(2, 2);
  p.damping.resize(2, 2);
  p.stiffness.resize(2);
  p.mass << 1.0, 0.2, 0.2, 1.3;
  p.damping << 0.3, 0.05, 0.05, 0.5;
  p.stiffness << 4.0, 6.0;
  return p;
}

}  // namespace

TEST_CASE("cubic interpolation reproduces cubic polynomials") {
  const Index n = 9;
  const double dt = 0.35;
  Eigen::ArrayXXd values(n, 2);
  auto poly = [](double t, int c) {
    return c == 0 ? 1.0 - 0.7 * t + 0.25 * t * t + 0.04 * t * t * t
                  : -2.0 + t - 0.5 * t * t + 0.1 * t * t * t;
  };
  for (Index i = 0; i < n; ++i)
    for (int c = 0; c < 2; ++c) values(i, c) = poly(double(i) * dt, c);
  for (double t : {0.0, 0.05, 0.5, 1.21, 1.75, 2.4, 2.79, 2.8}) {
    const Eigen::ArrayXd got = deforge::detail::interp_cubic<double>(values, dt, t);
    for (int c = 0; c < 2; ++c) CHECK(std::abs(got[c] - poly(t, c)) < 1e-12);
  }
}

TEST_CASE("hysteresis evolution matches the closed form in the linear limit") {
  const Index steps = 1024;
  const double dt = 8.0 / double(steps - 1);
  const double w = two_pi * 0.5;
  Eigen::ArrayXXd du(steps, 1);
  for (Index i = 0; i < steps; ++i) du(i, 0) = std::cos(w * double(i) * dt);
  BoucWenParams p;
  p.a = 1.3;
  p.beta = 0.0;
  p.gamma = 0.0;
  p.n = 1.0;
  const Eigen::ArrayXXd z = boucwen_evolve(du, dt, p);
  double worst = 0.0;
  for (Index i = 0; i < steps; ++i) {
    const double exact = p.a / w * std::sin(w * double(i) * dt);
    worst = std::max(worst, std::abs(z(i, 0) - exact));
  }
  CHECK(worst < 1e-8);
}

TEST_CASE("Taylor-Green vortex balances with vanishing forcing") {
  const double re = 100.0;
  const double nu = 1.0 / re;
  const Index n = 64, nt = 32;
  auto g = with_time(grid_2d<double>(n, n, two_pi, two_pi), nt, 1.0);
  auto u = Field::zeros(g, 2, "velocity");
  const double h = spacing(g, 0);
  const double dt = time_step(g);
  for (Index k = 0; k < nt; ++k) {
    const double decay = std::exp(-2.0 * nu * double(k) * dt);
    for (Index i = 0; i < n; ++i)
      for (Index j = 0; j < n; ++j) {
        const double x = double(i) * h, y = double(j) * h;
        u.at(0, k, i, j) = std::sin(x) * std::cos(y) * decay;
        u.at(1, k, i, j) = -std::cos(x) * std::sin(y) * decay;
      }
  }
  NsParams params;
  params.reynolds = re;
  auto s = balance_ns(u, params);

  CHECK(norm(s.field("f"), NormKind::linf) < 1e-6);
  CHECK(s.param("projection") < 1e-12);

  const auto& p = s.field("p");
  double perr = 0.0, pscale = 0.0;
  for (Index k = 0; k < nt; ++k) {
    const double decay = std::exp(-4.0 * nu * double(k) * dt);
    for (Index i = 0; i < n; ++i)
      for (Index j = 0; j < n; ++j) {
        const double exact =
            0.25 * (std::cos(2.0 * double(i) * h) + std::cos(2.0 * double(j) * h)) * decay;
        perr = std::max(perr, std::abs(p.at(0, k, i, j) - exact));
        pscale = std::max(pscale, std::abs(exact));
      }
  }
  CHECK(perr / pscale < 1e-6);

  auto same = verify_sample(s, CheckMode::same_operator);
  CHECK(same.max_rel < 1e-10);
  CHECK(same.pass());
  CHECK(same.tolerance == 1e-10);
  CHECK(!same.max_equation.empty());
  CHECK(same.equations.count("momentum") == 1);
  CHECK(same.equations.count("continuity") == 1);
  CHECK(same.equations.count("initial_condition") == 1);
  CHECK(same.equations.count("boundary") == 1);
  CHECK(same.term_norms.count("momentum.du_dt") == 1);
  CHECK(same.term_norms.count("momentum.pressure_gradient") == 1);

  auto cross = verify_sample(s, CheckMode::cross_operator);
  CHECK(cross.tolerance == 1e-3);
  CHECK(cross.equations.at("momentum") < 5e-2);
  CHECK(cross.equations.at("continuity") < 5e-2);

  SUBCASE("both residual modes come back from one call") {
    auto pair = residual(s);
    CHECK(pair.same_op.max_rel == same.max_rel);
    CHECK(pair.cross_op.max_rel == cross.max_rel);
  }
  SUBCASE("a curl-free contamination is projected out and recorded") {
    auto dirty = u;
    for (Index k = 0; k < nt; ++k)
      for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < n; ++j) {
          const double grad = 0.05 * std::cos(double(i) * h + double(j) * h);
          dirty.at(0, k, i, j) += grad;
          dirty.at(1, k, i, j) += grad;
        }
    auto s2 = balance_ns(dirty, params);
    CHECK(std::abs(s2.param("projection") - 0.05) < 1e-9);
    const auto& cleaned = s2.field("u");
    double diff = 0.0;
    for (int c = 0; c < 2; ++c)
      for (Index k = 0; k < nt; ++k)
        diff = std::max(diff, (cleaned.slab(c, k) - u.slab(c, k)).abs().maxCoeff());
    CHECK(diff < 1e-12);
  }
  SUBCASE("tampered forcing is detected") {
    auto bad = s;
    bad.fields["f"].data[1234] += 1e-6;
    CHECK(verify_sample(bad, CheckMode::same_operator).equations.at("momentum") > 1e-8);
    CHECK(!verify_sample(bad, CheckMode::same_operator).pass());
  }
  SUBCASE("tampered initial state is detected") {
    auto bad = s;
    bad.fields["u0"].data[77] += 1e-6;
    CHECK(verify_sample(bad, CheckMode::same_operator).equations.at("initial_condition") > 1e-8);
  }
}

TEST_CASE("plane-stress forcing matches the symbolic solution") {
  const double E = 2.5, nu = 0.3;
  const double A = 0.9, B = -0.6;
  const int a = 2, b = 3;
  const Index n = 64;
  auto g = grid_2d<double>(n, n, two_pi, two_pi);
  auto u = Field::zeros(g, 2, "displacement");
  const double h = spacing(g, 0);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j) {
      const double x = double(i) * h, y = double(j) * h;
      u.at(0, 0, i, j) = A * std::sin(a * x) * std::cos(b * y);
      u.at(1, 0, i, j) = B * std::cos(a * x) * std::sin(b * y);
    }
  SncParams params;
  params.young = E;
  params.poisson = nu;
  auto s = balance_snc(u, params);

  const double c = E / (1.0 - nu * nu);
  const double hm = (1.0 - nu) / 2.0;
  const double hp = (1.0 + nu) / 2.0;
  const double c0 = c * (a * a * A + hm * b * b * A + hp * a * b * B);
  const double c1 = c * (b * b * B + hm * a * a * B + hp * a * b * A);
  const auto& f = s.field("f");
  double err = 0.0, scale = 0.0;
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j) {
      const double x = double(i) * h, y = double(j) * h;
      const double f0 = c0 * std::sin(a * x) * std::cos(b * y);
      const double f1 = c1 * std::cos(a * x) * std::sin(b * y);
      err = std::max({err, std::abs(f.at(0, 0, i, j) - f0), std::abs(f.at(1, 0, i, j) - f1)});
      scale = std::max({scale, std::abs(f0), std::abs(f1)});
    }
  CHECK(err / scale < 1e-11);

  CHECK(verify_sample(s, CheckMode::same_operator).max_rel < 1e-12);
  CHECK(verify_sample(s, CheckMode::cross_operator).max_rel < 5e-2);

  SUBCASE("a single diagonal mode reproduces the textbook pair") {
    const Index m = 48;
    auto g2 = grid_2d<double>(m, m, 2.0, 2.0);
    auto u2 = Field::zeros(g2, 2, "displacement");
    const double h2 = spacing(g2, 0);
    const double pi = two_pi / 2.0;
    for (Index i = 0; i < m; ++i)
      for (Index j = 0; j < m; ++j)
        u2.at(0, 0, i, j) = std::sin(pi * double(i) * h2) * std::sin(pi * double(j) * h2);
    auto s2 = balance_snc(u2, params);
    const auto& f2 = s2.field("f");
    const double cx = c * pi * pi * (3.0 - nu) / 2.0;
    const double cy = -c * pi * pi * (1.0 + nu) / 2.0;
    double err2 = 0.0;
    for (Index i = 0; i < m; ++i)
      for (Index j = 0; j < m; ++j) {
        const double x = double(i) * h2, y = double(j) * h2;
        err2 = std::max(err2, std::abs(f2.at(0, 0, i, j) - cx * std::sin(pi * x) * std::sin(pi * y)));
        err2 = std::max(err2, std::abs(f2.at(1, 0, i, j) - cy * std::cos(pi * x) * std::cos(pi * y)));
      }
    CHECK(err2 / std::abs(cx) < 1e-11);
  }
}

TEST_CASE("plane compression wave forcing matches the dispersion formula") {
  WaveParams params;
  params.rho = 1.2;
  params.lambda = 2.0;
  params.mu = 0.7;
  const double amp = 0.8, omega = 5.0;
  const int k0 = 3, k1 = 2;
  const double knorm = std::sqrt(double(k0 * k0 + k1 * k1));
  const double s0 = k0 / knorm, s1 = k1 / knorm;

  const Index n = 32, nt = 48;
  auto g = with_time(grid_2d<double>(n, n, two_pi, two_pi), nt, 1.5);
  auto u = Field::zeros(g, 2, "displacement");
  const double h = spacing(g, 0);
  const double dt = time_step(g);
  for (Index k = 0; k < nt; ++k)
    for (Index i = 0; i < n; ++i)
      for (Index j = 0; j < n; ++j) {
        const double phase = k0 * double(i) * h + k1 * double(j) * h - omega * double(k) * dt;
        u.at(0, k, i, j) = amp * s0 * std::cos(phase);
        u.at(1, k, i, j) = amp * s1 * std::cos(phase);
      }
  auto s = balance_wave(u, params);

  // The generating stencil turns the continuous -rho omega^2 into the
  // discrete ring factor 2 (cos(omega dt) - 1) / dt^2 on interior steps.
  const double wtilde2 = 2.0 * (1.0 - std::cos(omega * dt)) / (dt * dt);
  const double ksq = double(k0 * k0 + k1 * k1);
  const double factor = -params.rho * wtilde2 + (params.lambda + 2.0 * params.mu) * ksq;
  const auto& f = s.field("f");
  double interior_err = 0.0, edge_err = 0.0;
  for (Index k = 0; k < nt; ++k)
    for (Index i = 0; i < n; ++i)
      for (Index j = 0; j < n; ++j) {
        const double phase = k0 * double(i) * h + k1 * double(j) * h - omega * double(k) * dt;
        const double e0 = factor * amp * s0 * std::cos(phase);
        const double e1 = factor * amp * s1 * std::cos(phase);
        const double d =
            std::max(std::abs(f.at(0, k, i, j) - e0), std::abs(f.at(1, k, i, j) - e1));
        if (k == 0 || k == nt - 1)
          edge_err = std::max(edge_err, d);
        else
          interior_err = std::max(interior_err, d);
      }
  CHECK(interior_err < 1e-10);
  // One-sided second-derivative stencils at the two end steps carry an
  // O(dt^2 omega^4) truncation error.
  CHECK(edge_err < params.rho * amp * std::pow(omega, 4) * dt * dt);

  auto same = verify_sample(s, CheckMode::same_operator);
  CHECK(same.max_rel < 1e-10);
  CHECK(same.equations.count("initial_velocity") == 1);
  CHECK(verify_sample(s, CheckMode::cross_operator).max_rel < 2e-1);
}

TEST_CASE("heterogeneous density scales the inertia pointwise") {
  WaveParams params;
  params.lambda = 2.0;
  params.mu = 0.7;
  const double amp = 0.8, omega = 5.0;
  const int k0 = 3, k1 = 2;
  const double knorm = std::sqrt(double(k0 * k0 + k1 * k1));
  const double s0 = k0 / knorm, s1 = k1 / knorm;

  const Index n = 32, nt = 48;
  auto gs = grid_2d<double>(n, n, two_pi, two_pi);
  auto g = with_time(gs, nt, 1.5);
  const double h = spacing(g, 0);
  const double dt = time_step(g);
  auto rho = Field::zeros(gs, 1, "density");
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j)
      rho.at(0, 0, i, j) = 1.2 + 0.5 * std::sin(double(i) * h);
  params.rho_field = rho;

  auto u = Field::zeros(g, 2, "displacement");
  for (Index k = 0; k < nt; ++k)
    for (Index i = 0; i < n; ++i)
      for (Index j = 0; j < n; ++j) {
        const double phase = k0 * double(i) * h + k1 * double(j) * h - omega * double(k) * dt;
        u.at(0, k, i, j) = amp * s0 * std::cos(phase);
        u.at(1, k, i, j) = amp * s1 * std::cos(phase);
      }
  auto s = balance_wave(u, params);
  CHECK(s.fields.count("rho") == 1);
  CHECK(s.params.count("rho") == 0);
  CHECK(s.params.count("lambda") == 1);

  const double wtilde2 = 2.0 * (1.0 - std::cos(omega * dt)) / (dt * dt);
  const double ksq = double(k0 * k0 + k1 * k1);
  const auto& f = s.field("f");
  double err = 0.0, scale = 0.0;
  for (Index k = 1; k + 1 < nt; ++k)
    for (Index i = 0; i < n; ++i)
      for (Index j = 0; j < n; ++j) {
        const double phase = k0 * double(i) * h + k1 * double(j) * h - omega * double(k) * dt;
        const double factor =
            -rho.at(0, 0, i, j) * wtilde2 + (params.lambda + 2.0 * params.mu) * ksq;
        const double e0 = factor * amp * s0 * std::cos(phase);
        const double e1 = factor * amp * s1 * std::cos(phase);
        err = std::max({err, std::abs(f.at(0, k, i, j) - e0), std::abs(f.at(1, k, i, j) - e1)});
        scale = std::max({scale, std::abs(e0), std::abs(e1)});
      }
  CHECK(err / scale < 1e-11);

  CHECK(verify_sample(s, CheckMode::same_operator).max_rel < 1e-10);
  CHECK(verify_sample(s, CheckMode::cross_operator).max_rel < 2e-1);

  SUBCASE("densities that dip to zero are rejected") {
    auto bad = params;
    bad.rho_field = rho;
    bad.rho_field.data -= 0.7;
    CHECK_THROWS_AS(balance_wave(u, bad), std::invalid_argument);
  }
}

TEST_CASE("on-dispersion waves leave only time truncation") {
  WaveParams params;
  params.rho = 1.2;
  params.lambda = 2.0;
  params.mu = 0.7;
  const double amp = 0.8;
  const double omega = std::sqrt((params.lambda + 2.0 * params.mu) / params.rho);

  Eigen::ArrayXd dts(3), ratios(3);
  const std::array<Index, 3> nts{257, 513, 1025};
  for (size_t m = 0; m < nts.size(); ++m) {
    const Index nt = nts[m];
    auto g = with_time(grid_1d<double>(64, two_pi), nt, 1.0);
    auto u = Field::zeros(g, 1, "displacement");
    const double h = spacing(g, 0);
    const double dt = time_step(g);
    for (Index k = 0; k < nt; ++k)
      for (Index i = 0; i < 64; ++i)
        u.at(0, k, i) = amp * std::cos(double(i) * h - omega * double(k) * dt);
    auto s = balance_wave(u, params);
    const auto utt = fd_time_derivative(s.field("u"), 2, 2);
    dts[Index(m)] = dt;
    ratios[Index(m)] =
        norm(s.field("f"), NormKind::linf) / (params.rho * norm(utt, NormKind::linf));
  }
  CHECK(ratios[2] < 1e-4);
  const double slope = fit_loglog_slope<double>(dts, ratios);
  CHECK(slope > 1.7);
  CHECK(slope < 2.3);
}

TEST_CASE("hysteretic oscillator sample closes and re-integrates") {
  const Index steps = 1024;
  const double dt = 4.0 / double(steps - 1);
  const std::vector<std::vector<Harmonic>> dofs = {
      {{0.8, 0.4, 0.2}, {0.3, 0.9, 1.1}},
      {{0.6, 0.5, 0.7}, {0.25, 1.1, 2.0}},
  };
  const std::vector<double> offsets = {0.0, 0.0};
  auto u = sampled_trajectory(dofs, offsets, steps, dt, 0);
  const auto p = coupled_oscillator();
  auto s = balance_boucwen(u, p);

  const auto& du = s.channel_set("du");
  double kerr = 0.0;
  for (int c = 0; c < 2; ++c)
    for (Index i = 0; i < steps; ++i)
      kerr = std::max(kerr, std::abs(du.values(i, c) - traj(dofs[size_t(c)], 0.0, double(i) * dt, 1)));
  CHECK(kerr < 1e-4);

  const auto& z = s.channel_set("z");
  CHECK(z.values(0, 0) == 0.0);
  // Hard saturation bound (a / (beta + gamma))^(1/n) for the shipped shape
  // parameters; the drive is strong enough to actually reach it.
  CHECK(z.values.abs().maxCoeff() <= 1.0 + 1e-9);
  CHECK(z.values.abs().maxCoeff() > 0.8);

  for (int c = 0; c < 2; ++c) {
    const Eigen::ArrayXd ref = reference_evolution(dofs[size_t(c)], steps, dt, 8, p);
    const double diff = (z.values.col(c) - ref).abs().maxCoeff() / ref.abs().maxCoeff();
    CHECK(diff < 5e-5);
  }

  auto same = verify_sample(s, CheckMode::same_operator);
  CHECK(same.max_rel < 1e-12);
  CHECK(same.equations.count("velocity") == 1);
  CHECK(same.equations.count("acceleration") == 1);
  CHECK(same.equations.count("evolution") == 1);
  CHECK(same.equations.count("motion") == 1);
  CHECK(verify_sample(s, CheckMode::cross_operator).max_rel < 1e-3);

  auto resolved = resolve_boucwen(s, 8);
  for (int c = 0; c < 2; ++c)
    CHECK(relative_l1(s.channel_set("u").values.col(c), resolved.values.col(c)) < 1e-3);

  SUBCASE("tampered hysteretic state is detected") {
    auto bad = s;
    bad.series["z"].values(500, 0) += 1e-6;
    CHECK(verify_sample(bad, CheckMode::same_operator).equations.at("evolution") > 1e-8);
  }
  SUBCASE("parameter shapes must match the channel count") {
    auto wide = coupled_oscillator();
    wide.stiffness.resize(3);
    wide.stiffness << 4.0, 6.0, 1.0;
    CHECK_THROWS_AS(balance_boucwen(u, wide), std::invalid_argument);
  }
  SUBCASE("a singular mass matrix is rejected") {
    auto degenerate = coupled_oscillator();
    degenerate.mass << 1.0, 1.0, 1.0, 1.0;
    CHECK_THROWS_AS(balance_boucwen(u, degenerate), std::invalid_argument);
  }
  SUBCASE("sampling too coarse for the hysteresis rate is rejected") {
    auto coarse = sampled_trajectory(dofs, offsets, 64, 4.0 / 63.0, 0);
    CHECK_THROWS_AS(balance_boucwen(coarse, p), std::invalid_argument);
  }
}

TEST_CASE("prescribed Lorenz path closes and re-integrates") {
  LorenzParams p;

  SUBCASE("constant path reduces to the fixed-point algebra") {
    auto x = TimeSeries::zeros(64, 1, 0.01);
    x.values.setConstant(1.0);
    auto s = balance_lorenz(x, p);
    CHECK((s.channel_set("y").values - 1.0).abs().maxCoeff() < 1e-10);
    CHECK((s.channel_set("z").values - 27.0).abs().maxCoeff() < 1e-9);
    CHECK((s.channel_set("f").values + 71.0).abs().maxCoeff() < 1e-8);
  }

  SUBCASE("oscillating path matches the analytic chain") {
    const Index steps = 1024;
    const double dt = 8.0 / double(steps - 1);
    const double w = two_pi * 0.75;
    auto x = TimeSeries::zeros(steps, 1, dt);
    for (Index i = 0; i < steps; ++i)
      x.values(i, 0) = 1.5 + 0.4 * std::cos(w * double(i) * dt);
    auto s = balance_lorenz(x, p);

    double ey = 0.0, ez = 0.0, ef = 0.0, sy = 0.0, sz = 0.0, sf = 0.0;
    double ef_edge = 0.0;
    for (Index i = 0; i < steps; ++i) {
      const double t = double(i) * dt;
      const double x0 = 1.5 + 0.4 * std::cos(w * t);
      const double x1 = -0.4 * w * std::sin(w * t);
      const double x2 = -0.4 * w * w * std::cos(w * t);
      const double x3 = 0.4 * w * w * w * std::sin(w * t);
      const double y0 = x0 + x1 / p.sigma;
      const double y1 = x1 + x2 / p.sigma;
      const double y2 = x2 + x3 / p.sigma;
      const double z0 = (p.rho * x0 - y0 - y1) / x0;
      const double z1 =
          ((p.rho * x1 - y1 - y2) * x0 - (p.rho * x0 - y0 - y1) * x1) / (x0 * x0);
      const double f0 = x0 * y0 - p.beta * z0 - z1;
      ey = std::max(ey, std::abs(s.channel_set("y").values(i, 0) - y0));
      ez = std::max(ez, std::abs(s.channel_set("z").values(i, 0) - z0));
      const double df = std::abs(s.channel_set("f").values(i, 0) - f0);
      if (i >= 6 && i + 6 < steps)
        ef = std::max(ef, df);
      else
        ef_edge = std::max(ef_edge, df);
      sy = std::max(sy, std::abs(y0));
      sz = std::max(sz, std::abs(z0));
      sf = std::max(sf, std::abs(f0));
    }
    CHECK(ey / sy < 1e-6);
    CHECK(ez / sz < 1e-6);
    CHECK(ef / sf < 1e-6);
    // One-sided windows near the two ends stack up through the derivative
    // chain, so the first and last few samples sit above the interior error.
    CHECK(ef_edge / sf < 1e-4);

    CHECK(verify_sample(s, CheckMode::same_operator).max_rel < 1e-10);
    CHECK(verify_sample(s, CheckMode::cross_operator).max_rel < 1e-3);

    auto resolved = resolve_lorenz(s, 8);
    CHECK(relative_l1(s.channel_set("x").values.col(0), resolved.values.col(0)) < 1e-3);
    CHECK(relative_l1(s.channel_set("y").values.col(0), resolved.values.col(1)) < 1e-3);
    CHECK(relative_l1(s.channel_set("z").values.col(0), resolved.values.col(2)) < 1e-3);

    auto bad = s;
    bad.series["f"].values(300, 0) += 1e-4;
    CHECK(verify_sample(bad, CheckMode::same_operator).equations.at("evolution_z") > 1e-9);
  }

  SUBCASE("negative paths clear of zero balance the same way") {
    const Index steps = 768;
    const double dt = 6.0 / double(steps - 1);
    const double w = two_pi * 0.6;
    auto x = TimeSeries::zeros(steps, 1, dt);
    for (Index i = 0; i < steps; ++i)
      x.values(i, 0) = -1.5 - 0.4 * std::cos(w * double(i) * dt);
    auto s = balance_lorenz(x, p);
    CHECK(verify_sample(s, CheckMode::same_operator).max_rel < 1e-10);
    CHECK(verify_sample(s, CheckMode::cross_operator).max_rel < 1e-3);
  }

  SUBCASE("paths that approach zero are rejected") {
    auto x = TimeSeries::zeros(64, 1, 0.01);
    for (Index i = 0; i < 64; ++i) x.values(i, 0) = std::cos(0.3 * double(i));
    CHECK_THROWS_AS(balance_lorenz(x, p), std::invalid_argument);
  }
}

TEST_CASE("cross-operator residuals converge at second order") {
  Eigen::ArrayXd hs(3), rs(3);
  const std::array<Index, 3> sizes{24, 32, 48};
  for (size_t m = 0; m < sizes.size(); ++m) {
    const Index n = sizes[m];
    auto g = grid_2d<double>(n, n, two_pi, two_pi);
    auto u = Field::zeros(g, 2, "displacement");
    const double h = spacing(g, 0);
    for (Index i = 0; i < n; ++i)
      for (Index j = 0; j < n; ++j) {
        const double x = double(i) * h, y = double(j) * h;
        u.at(0, 0, i, j) = 0.7 * std::sin(2 * x) * std::cos(3 * y);
        u.at(1, 0, i, j) = -0.4 * std::cos(2 * x) * std::sin(3 * y);
      }
    auto s = balance_snc(u, SncParams{});
    hs[Index(m)] = h;
    rs[Index(m)] = verify_sample(s, CheckMode::cross_operator).equations.at("equilibrium");
  }
  const double slope = fit_loglog_slope<double>(hs, rs);
  CHECK(slope > 1.7);
  CHECK(slope < 2.3);
}

TEST_CASE("finite-difference derivatives converge at second order") {
  Eigen::ArrayXd hs(3), errs(3);
  const std::array<Index, 3> sizes{32, 48, 64};
  for (size_t m = 0; m < sizes.size(); ++m) {
    const Index n = sizes[m];
    auto g = grid_1d<double>(n, two_pi);
    auto f = Field::zeros(g, 1, "state");
    const double h = spacing(g, 0);
    for (Index i = 0; i < n; ++i) f.at(0, 0, i) = std::sin(2.0 * double(i) * h);
    auto d = fd_derivative(f, 0, 1, 2);
    double err = 0.0;
    for (Index i = 0; i < n; ++i)
      err = std::max(err, std::abs(d.at(0, 0, i) - 2.0 * std::cos(2.0 * double(i) * h)));
    hs[Index(m)] = h;
    errs[Index(m)] = err;
  }
  const double slope = fit_loglog_slope<double>(hs, errs);
  CHECK(slope > 1.7);
  CHECK(slope < 2.3);
}

TEST_CASE("malformed balance inputs are rejected") {
  auto g = with_time(grid_2d<double>(16, 16, two_pi, two_pi), 8, 1.0);
  auto scalar_field = Field::zeros(g, 1, "state");
  CHECK_THROWS_AS(balance_ns(scalar_field, NsParams{}), std::invalid_argument);
  auto static_field = Field::zeros(grid_2d<double>(16, 16, two_pi, two_pi), 2, "state");
  CHECK_THROWS_AS(balance_ns(static_field, NsParams{}), std::invalid_argument);
  CHECK_THROWS_AS(balance_wave(static_field, WaveParams{}), std::invalid_argument);
  auto timed = Field::zeros(g, 2, "state");
  CHECK_THROWS_AS(balance_snc(timed, SncParams{}), std::invalid_argument);

  SncParams incompressible;
  incompressible.poisson = 0.6;
  auto disp = Field::zeros(grid_2d<double>(16, 16, two_pi, two_pi), 2, "state");
  CHECK_THROWS_AS(balance_snc(disp, incompressible), std::invalid_argument);
  SncParams slack;
  slack.young = 0.0;
  CHECK_THROWS_AS(balance_snc(disp, slack), std::invalid_argument);

  WaveParams weightless;
  weightless.rho = 0.0;
  CHECK_THROWS_AS(balance_wave(Field::zeros(g, 2, "state"), weightless), std::invalid_argument);

  LorenzParams grounded;
  grounded.x_floor = 0.0;
  auto x = TimeSeries::zeros(64, 1, 0.01);
  x.values.setConstant(1.0);
  CHECK_THROWS_AS(balance_lorenz(x, grounded), std::invalid_argument);
}

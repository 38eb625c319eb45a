#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <Eigen/Eigenvalues>

#include <cmath>
#include <numbers>
#include <vector>

#include "deforge/toysolver.hpp"
#include "doctest.h"

using namespace deforge;
constexpr double pi = std::numbers::pi;

namespace {

using Mat = MatrixX<double>;
using Vec = VectorX<double>;

Mat random_tokens(Index n, int c, std::uint64_t seed) {
  Rng rng(seed);
  Mat x(n, c);
  for (Index i = 0; i < n; ++i)
    for (int j = 0; j < c; ++j) x(i, j) = rng.uniform(-1.0, 1.0);
  return x;
}

// Plain-loop re-implementation of the three-level forward pass; no shared
// code with the library beyond the parameter containers.
Mat reference_forward(const ToyModel& m, const Mat& x) {
  const Index n = x.rows();
  Mat cur = x;
  for (std::size_t li = 0; li < m.enc_w.size(); ++li) {
    const Mat& w = m.enc_w[li];
    Mat next(n, w.rows());
    for (Index i = 0; i < n; ++i)
      for (Index r = 0; r < w.rows(); ++r) {
        double acc = m.enc_b[li][r];
        for (Index c = 0; c < w.cols(); ++c) acc += w(r, c) * cur(i, c);
        next(i, r) = std::tanh(acc);
      }
    cur = next;
  }
  const Index w = cur.cols();
  const double alpha = 1.0 / std::sqrt(double(w));
  for (const auto& blk : m.blocks) {
    Mat q(n, w), k(n, w), v(n, w);
    for (Index i = 0; i < n; ++i)
      for (Index r = 0; r < w; ++r) {
        double aq = 0, ak = 0, av = 0;
        for (Index c = 0; c < w; ++c) {
          aq += blk.wq(r, c) * cur(i, c);
          ak += blk.wk(r, c) * cur(i, c);
          av += blk.wv(r, c) * cur(i, c);
        }
        q(i, r) = aq;
        k(i, r) = ak;
        v(i, r) = av;
      }
    Mat next(n, w);
    for (Index i = 0; i < n; ++i) {
      auto score = std::vector<double>(std::size_t(n));
      double peak = -1e300;
      for (Index j = 0; j < n; ++j) {
        double acc = 0;
        for (Index r = 0; r < w; ++r) acc += q(i, r) * k(j, r);
        score[std::size_t(j)] = alpha * acc;
        peak = std::max(peak, score[std::size_t(j)]);
      }
      double norm = 0;
      for (Index j = 0; j < n; ++j) {
        score[std::size_t(j)] = std::exp(score[std::size_t(j)] - peak);
        norm += score[std::size_t(j)];
      }
      for (Index r = 0; r < w; ++r) {
        double mix = 0;
        for (Index j = 0; j < n; ++j) mix += score[std::size_t(j)] / norm * v(j, r);
        next(i, r) = mix;
      }
    }
    Mat xmid(n, w);
    for (Index i = 0; i < n; ++i)
      for (Index r = 0; r < w; ++r) {
        double acc = blk.bo[r];
        for (Index c = 0; c < w; ++c) acc += blk.wo(r, c) * next(i, c);
        xmid(i, r) = cur(i, r) + acc;
      }
    for (Index i = 0; i < n; ++i)
      for (Index r = 0; r < w; ++r) {
        double acc = blk.bf[r];
        for (Index c = 0; c < w; ++c) acc += blk.wf(r, c) * xmid(i, c);
        cur(i, r) = xmid(i, r) + std::tanh(acc);
      }
  }
  Mat out(n, m.wd.rows());
  for (Index i = 0; i < n; ++i)
    for (Index o = 0; o < m.wd.rows(); ++o) {
      double acc = m.bd[o];
      for (Index c = 0; c < w; ++c) acc += m.wd(o, c) * cur(i, c);
      out(i, o) = acc;
    }
  return out;
}

double loss_at(const ToyModel& base, const Vec& w, const Mat& x, const Mat& target) {
  ToyModel m = base;
  m.unpack(w);
  return l1_loss(forward(m, x), target);
}

Mat out_at(const ToyModel& base, const Vec& w, const Mat& x) {
  ToyModel m = base;
  m.unpack(w);
  return forward(m, x);
}

}  // namespace

TEST_CASE("packing round-trips and counts parameters") {
  ToyConfig cfg;
  cfg.inputs = 3;
  cfg.hidden = 5;
  cfg.outputs = 2;
  cfg.encoder_layers = 2;
  cfg.blocks = 1;
  auto m = toy_init(cfg, 42);
  // encoder 5*3+5 + 5*5+5, block 5*25+2*5, decoder 2*5+2
  CHECK(m.parameter_count() == 20 + 30 + 135 + 12);
  const Vec w = m.pack();
  auto m2 = toy_zeros<double>(cfg);
  m2.unpack(w);
  CHECK((m2.pack() - w).cwiseAbs().maxCoeff() == 0.0);
  CHECK(m2.blocks[0].wq(1, 2) == m.blocks[0].wq(1, 2));

  ToyConfig bad = cfg;
  bad.encoder_layers = 0;
  CHECK_THROWS(toy_zeros<double>(bad));  // attention needs inputs == hidden
}

TEST_CASE("forward matches a plain-loop reference") {
  ToyConfig cfg;
  cfg.inputs = 4;
  cfg.hidden = 6;
  cfg.outputs = 2;
  cfg.encoder_layers = 2;
  cfg.blocks = 2;
  auto m = toy_init(cfg, 7);
  const Mat x = random_tokens(9, cfg.inputs, 11);
  const Mat got = forward(m, x);
  const Mat want = reference_forward(m, x);
  CHECK((got - want).cwiseAbs().maxCoeff() < 1e-13);
}

TEST_CASE("zero parameters reduce to the decoder bias") {
  ToyConfig cfg;
  cfg.inputs = 3;
  cfg.hidden = 4;
  cfg.outputs = 2;
  auto m = toy_zeros<double>(cfg);
  m.bd << 0.7, -1.2;
  const Mat x = random_tokens(13, cfg.inputs, 3);
  const Mat out = forward(m, x);
  for (Index i = 0; i < out.rows(); ++i) {
    CHECK(out(i, 0) == 0.7);
    CHECK(out(i, 1) == -1.2);
  }
}

TEST_CASE("attention rows form a probability simplex") {
  ToyConfig cfg;
  cfg.inputs = 5;
  cfg.hidden = 6;
  cfg.blocks = 2;
  auto m = toy_init(cfg, 21);
  const Mat x = random_tokens(17, cfg.inputs, 22);
  const auto tr = forward_trace(m, x);
  for (const auto& bt : tr.blocks) {
    CHECK(bt.attn.minCoeff() >= 0.0);
    const Vec sums = bt.attn.rowwise().sum();
    CHECK((sums.array() - 1.0).abs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("forward is permutation equivariant") {
  ToyConfig cfg;
  cfg.inputs = 5;
  cfg.hidden = 6;
  cfg.blocks = 1;
  auto m = toy_init(cfg, 31);
  Mat x = random_tokens(12, cfg.inputs, 32);
  // Positional channels zeroed: the map must commute with token reordering.
  x.col(3).setZero();
  x.col(4).setZero();
  const Mat base = forward(m, x);
  std::vector<Index> perm = {4, 7, 0, 11, 2, 9, 1, 10, 3, 6, 8, 5};
  Mat xp(x.rows(), x.cols());
  for (Index i = 0; i < x.rows(); ++i) xp.row(i) = x.row(perm[std::size_t(i)]);
  const Mat got = forward(m, xp);
  double err = 0;
  for (Index i = 0; i < x.rows(); ++i)
    err = std::max(err, (got.row(i) - base.row(perm[std::size_t(i)])).cwiseAbs().maxCoeff());
  CHECK(err < 1e-12);
}

TEST_CASE("loss gradient matches central differences") {
  ToyConfig cfg;
  cfg.inputs = 3;
  cfg.hidden = 5;
  cfg.outputs = 1;
  cfg.encoder_layers = 2;
  cfg.blocks = 1;
  auto m = toy_init(cfg, 101);
  const Index p = m.parameter_count();
  CHECK(p == 191);
  const Mat x = random_tokens(16, cfg.inputs, 102);
  Mat target = random_tokens(16, 1, 103);
  target.array() += 2.0;  // keeps every residual away from the kink

  const auto lg = loss_grad(m, x, target);
  CHECK((forward(m, x) - target).cwiseAbs().minCoeff() > 1e-3);

  const Vec w0 = m.pack();
  const double eps = 1e-5;

  SUBCASE("fifty random directions") {
    Rng rng(104);
    double worst = 0;
    for (int trial = 0; trial < 50; ++trial) {
      Vec d(p);
      for (Index i = 0; i < p; ++i) d[i] = rng.normal();
      d /= d.norm();
      const double fd =
          (loss_at(m, w0 + eps * d, x, target) - loss_at(m, w0 - eps * d, x, target)) /
          (2.0 * eps);
      worst = std::max(worst, std::abs(lg.grad.dot(d) - fd) / std::max(1.0, std::abs(fd)));
    }
    CHECK(worst < 1e-5);
  }

  SUBCASE("every coordinate, reported per layer") {
    Vec fd(p);
    for (Index i = 0; i < p; ++i) {
      Vec wp = w0, wm = w0;
      wp[i] += eps;
      wm[i] -= eps;
      fd[i] = (loss_at(m, wp, x, target) - loss_at(m, wm, x, target)) / (2.0 * eps);
    }
    // Slice boundaries follow the documented packing order.
    const Index cuts[] = {0, 20, 50, 125, 150, 155, 180, 185, 190, 191};
    const char* names[] = {"enc0", "enc1", "wq+wk+wv", "wo", "bo",
                           "wf",   "bf",   "wd",       "bd"};
    for (int s = 0; s < 9; ++s) {
      const Index lo = cuts[s], hi = cuts[s + 1];
      double worst = 0;
      for (Index i = lo; i < hi; ++i)
        worst = std::max(worst, std::abs(lg.grad[i] - fd[i]));
      INFO("layer slice " << names[s]);
      CHECK(worst < 1e-5);
    }
  }

  SUBCASE("subgradient is zero exactly on the kink") {
    const Mat pred = forward(m, x);
    auto lg2 = loss_grad(m, x, pred);
    CHECK(lg2.loss == 0.0);
    CHECK(lg2.grad.cwiseAbs().maxCoeff() == 0.0);
  }

  SUBCASE("loss is absolutely homogeneous in the residual") {
    const Mat pred = forward(m, x);
    const double base = l1_loss(pred, target);
    const Mat scaled = pred + 3.0 * (pred - target);
    CHECK(l1_loss(scaled, target) == doctest::Approx(4.0 * base).epsilon(1e-12));
  }
}

TEST_CASE("jacobian matches finite differences and yields a consistent Gauss-Newton matrix") {
  ToyConfig cfg;
  cfg.inputs = 3;
  cfg.hidden = 5;
  cfg.outputs = 1;
  cfg.encoder_layers = 2;
  cfg.blocks = 1;
  auto m = toy_init(cfg, 201, 1.5);
  const Index p = m.parameter_count();
  const Index n = 200;
  const Mat x = random_tokens(n, cfg.inputs, 202);
  const Vec w0 = m.pack();
  const double eps = 1e-5;

  const Mat j = jacobian(m, x);
  CHECK(j.rows() == n);
  CHECK(j.cols() == p);

  Mat jfd(n, p);
  for (Index c = 0; c < p; ++c) {
    Vec wp = w0, wm = w0;
    wp[c] += eps;
    wm[c] -= eps;
    jfd.col(c) = (out_at(m, wp, x) - out_at(m, wm, x)) / (2.0 * eps);
  }

  const Mat h = j.transpose() * j;
  const Mat hfd = jfd.transpose() * jfd;
  const double scale = h.cwiseAbs().maxCoeff();
  CHECK((h - hfd).cwiseAbs().maxCoeff() / scale < 1e-6);

  Eigen::SelfAdjointEigenSolver<Mat> eig(h);
  CHECK(eig.eigenvalues().minCoeff() >= -1e-10 * eig.eigenvalues().maxCoeff());

  const auto gn = gauss_newton_condnum(m, x);
  CHECK(gn.kappa >= 1.0);
  CHECK(gn.dead_columns == 0);

  // The attention gauge (score product, value product, bias translation)
  // leaves exactly 2h^2+h unidentifiable directions in a one-block model.
  const Index gauge = 2 * cfg.hidden * cfg.hidden + cfg.hidden;
  CHECK(gn.rank_deficient);
  CHECK(gn.rank == p - gauge);

  // Finite differences perturb small singular values too much to pin the
  // effective spectrum, so cross-check it with an independent SVD algorithm
  // on the analytic Jacobian and keep finite differences for sigma_max.
  Eigen::JacobiSVD<Mat> svd(j);
  const auto sv = svd.singularValues();
  const double smax = sv[0];
  const double seff = sv[gn.rank - 1];
  CHECK(gn.sigma_max == doctest::Approx(smax).epsilon(1e-10));
  CHECK(gn.kappa_effective ==
        doctest::Approx((smax / seff) * (smax / seff)).epsilon(1e-8));
  CHECK(gn.lambda_effective == doctest::Approx(seff * seff).epsilon(1e-8));

  Eigen::BDCSVD<Mat> svd_fd(jfd);
  CHECK(gn.sigma_max == doctest::Approx(svd_fd.singularValues()[0]).epsilon(1e-6));
}

TEST_CASE("attention parameter gauges leave the forward map unchanged") {
  ToyConfig cfg;
  cfg.inputs = 4;
  cfg.hidden = 5;
  cfg.outputs = 2;
  cfg.encoder_layers = 2;
  cfg.blocks = 1;
  auto m = toy_init(cfg, 401);
  const Mat x = random_tokens(24, cfg.inputs, 402);
  const Mat base = forward(m, x);

  Rng rng(403);
  Mat g(cfg.hidden, cfg.hidden);
  for (Index r = 0; r < g.rows(); ++r)
    for (Index c = 0; c < g.cols(); ++c) g(r, c) = 0.2 * rng.normal();
  g += Mat::Identity(cfg.hidden, cfg.hidden);
  const Mat ginv = g.inverse();

  SUBCASE("score projections through the shared product") {
    auto t = m;
    t.blocks[0].wq = g * m.blocks[0].wq;
    t.blocks[0].wk = ginv.transpose() * m.blocks[0].wk;
    CHECK((forward(t, x) - base).cwiseAbs().maxCoeff() < 1e-12);
  }
  SUBCASE("value and output projections through the shared product") {
    auto t = m;
    t.blocks[0].wv = g * m.blocks[0].wv;
    t.blocks[0].wo = m.blocks[0].wo * ginv;
    CHECK((forward(t, x) - base).cwiseAbs().maxCoeff() < 1e-12);
  }
  SUBCASE("mixer bias translation absorbed downstream") {
    Vec delta(cfg.hidden);
    for (Index i = 0; i < delta.size(); ++i) delta[i] = rng.normal();
    auto t = m;
    t.blocks[0].bo += delta;
    t.blocks[0].bf -= m.blocks[0].wf * delta;
    t.bd -= m.wd * delta;
    CHECK((forward(t, x) - base).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("jacobian handles stacked attention blocks") {
  ToyConfig cfg;
  cfg.inputs = 4;
  cfg.hidden = 4;
  cfg.outputs = 2;
  cfg.encoder_layers = 1;
  cfg.blocks = 2;
  auto m = toy_init(cfg, 301);
  const Mat x = random_tokens(10, cfg.inputs, 302);
  const Vec w0 = m.pack();
  const Mat j = jacobian(m, x);
  CHECK(j.rows() == 20);

  Rng rng(303);
  Vec d(w0.size());
  for (Index i = 0; i < d.size(); ++i) d[i] = rng.normal();
  d /= d.norm();
  const double eps = 1e-5;
  const Mat dp = out_at(m, w0 + eps * d, x);
  const Mat dm = out_at(m, w0 - eps * d, x);
  double worst = 0;
  for (Index t = 0; t < 10; ++t)
    for (Index o = 0; o < 2; ++o) {
      const double fd = (dp(t, o) - dm(t, o)) / (2.0 * eps);
      worst = std::max(worst, std::abs(j.row(t * 2 + o).dot(d) - fd));
    }
  CHECK(worst < 1e-8);
}

TEST_CASE("an orthonormal linear design has unit condition number") {
  ToyConfig cfg;
  cfg.inputs = 3;
  cfg.hidden = 3;
  cfg.outputs = 1;
  cfg.encoder_layers = 0;
  cfg.blocks = 0;
  auto m = toy_zeros<double>(cfg);
  const Index n = 32;
  Mat x(n, 3);
  for (Index i = 0; i < n; ++i)
    for (int k = 1; k <= 3; ++k)
      x(i, k - 1) = std::sqrt(2.0) * std::sin(2.0 * pi * double(k) * double(i) / double(n));
  const auto gn = gauss_newton_condnum(m, x);
  CHECK(gn.kappa == doctest::Approx(1.0).epsilon(1e-8));
  CHECK(gn.kappa_effective == gn.kappa);
  CHECK(gn.rank == 4);
  CHECK(!gn.rank_deficient);

  SUBCASE("a duplicated feature column is flagged as rank deficient") {
    Mat xdup = x;
    xdup.col(2) = x.col(0);
    const auto bad = gauss_newton_condnum(m, xdup);
    CHECK(bad.rank_deficient);
  }

  SUBCASE("more parameters than residuals are rejected") {
    CHECK_THROWS(gauss_newton_condnum(m, Mat(x.topRows(3))));
  }
}

TEST_CASE("max gradient magnitude matches the analytic slope") {
  const double L = 2.0;
  auto g = grid_1d<double>(64, L);

  SUBCASE("single sine mode") {
    auto u = Field::zeros(g, 1);
    auto x = coordinates(g, 0);
    const double a = 0.8, k = 5.0;
    u.slab(0) = a * (2.0 * pi * k * x / L).sin();
    const double want = a * 2.0 * pi * k / L;
    CHECK(std::abs(max_grad_magnitude(u) - want) < 1e-10 * want);
  }

  SUBCASE("constant field has zero gradient") {
    auto u = Field::zeros(g, 2);
    u.data.setConstant(3.5);
    CHECK(max_grad_magnitude(u) < 1e-12);
  }

  SUBCASE("components combine in quadrature and time is scanned") {
    auto gt = with_time(g, 3, 1.0);
    auto u = Field::zeros(gt, 2);
    auto x = coordinates(gt, 0);
    const double a = 0.9, b = 0.4;
    for (Index t = 0; t < 3; ++t) {
      const double env = 1.0 + double(t) / 2.0;  // largest on the last slab
      u.slab(0, t) = env * a * (2.0 * pi * 4.0 * x / L).sin();
      u.slab(1, t) = env * b * (2.0 * pi * 6.0 * x / L).sin();
    }
    const double ka = a * 2.0 * pi * 4.0 / L, kb = b * 2.0 * pi * 6.0 / L;
    const double want = 2.0 * std::sqrt(ka * ka + kb * kb);
    CHECK(std::abs(max_grad_magnitude(u) - want) < 1e-10 * want);
  }

  SUBCASE("dilation divides the maximum gradient exactly") {
    auto u = Field::zeros(g, 1);
    auto x = coordinates(g, 0);
    u.slab(0) = 1.3 * (2.0 * pi * 8.0 * x / L).sin();
    const double s_raw = max_grad_magnitude(u);
    const double s_dil = max_grad_magnitude(dilate(u, 4));
    CHECK(std::abs(s_raw / s_dil - 4.0) < 1e-10);
  }

  SUBCASE("bounded axes fall back to exact finite differences on linears") {
    auto gb = grid_1d<double>(33, L, false);
    auto u = Field::zeros(gb, 1);
    auto x = coordinates(gb, 0);
    u.slab(0) = 0.7 * x - 0.2;
    CHECK(std::abs(max_grad_magnitude(u) - 0.7) < 1e-12);
  }
}

TEST_CASE("tokenize lays out channels, coordinates, and targets") {
  auto g = with_time(grid_1d<double>(8, 1.0), 3, 2.0);
  auto u = Field::zeros(g, 1, "state");
  auto f = Field::zeros(g, 1, "source");
  Rng rng(77);
  for (Index i = 0; i < u.data.size(); ++i) u.data[i] = rng.uniform(-1.0, 1.0);
  for (Index i = 0; i < f.data.size(); ++i) f.data[i] = rng.uniform(-1.0, 1.0);

  const auto b = tokenize(u, f);
  CHECK(b.x.rows() == 16);
  CHECK(b.x.cols() == 5);
  CHECK(b.coord_channels == 2);
  const Index r = 1 * 8 + 3 - 8;  // second output step starts at row 8
  CHECK(b.x(8 + 3, 0) == f.at(0, 2, 3));
  CHECK(b.x(r, 0) == f.at(0, 1, 3));
  CHECK(b.x(r, 1) == u.at(0, 0, 3));
  CHECK(b.x(r, 2) == 0.0);  // periodic: no boundary channel content
  CHECK(b.x(r, 3) == doctest::Approx(3.0 / 8.0));
  CHECK(b.x(r, 4) == doctest::Approx(0.5));
  CHECK(b.target(r, 0) == u.at(0, 1, 3));

  SUBCASE("bounded axes mark edge tokens with the solution trace") {
    auto gb = with_time(grid_1d<double>(6, 1.0, false), 2, 1.0);
    auto ub = Field::zeros(gb, 1);
    auto fb = Field::zeros(gb, 1);
    for (Index i = 0; i < ub.data.size(); ++i) ub.data[i] = double(i) + 1.0;
    const auto bb = tokenize(ub, fb);
    CHECK(bb.x(0, 2) == ub.at(0, 1, 0));
    CHECK(bb.x(5, 2) == ub.at(0, 1, 5));
    CHECK(bb.x(2, 2) == 0.0);
    CHECK(bb.x(5, 3) == doctest::Approx(1.0));
  }

  SUBCASE("token budget is enforced") {
    auto gbig = with_time(grid_1d<double>(128, 1.0), 34, 1.0);
    auto ub = Field::zeros(gbig, 1);
    auto fb = Field::zeros(gbig, 1);
    CHECK_THROWS(tokenize(ub, fb));
  }
}

TEST_CASE("training overfits a small batch deterministically") {
  auto g = with_time(grid_1d<double>(8, 1.0), 3, 1.0);
  auto u = Field::zeros(g, 1);
  auto f = Field::zeros(g, 1);
  auto x = coordinates(g, 0);
  for (Index t = 0; t < 3; ++t) {
    const double env = 0.4 + 0.3 * double(t);
    u.slab(0, t) = env * (2.0 * pi * x).sin();
    f.slab(0, t) = (1.5 - env) * (2.0 * pi * x).cos();
  }
  const auto batch = tokenize(u, f);

  ToyConfig cfg;
  cfg.inputs = int(batch.x.cols());
  cfg.hidden = 6;
  cfg.outputs = 1;
  auto m0 = toy_init(cfg, 401);

  TrainConfig tc;
  tc.steps = 2000;
  tc.rate = 0.02;

  auto m = m0;
  const auto rep = train(m, batch.x, batch.target, tc);
  CHECK(!rep.diverged);
  CHECK(rep.steps == 2000);
  CHECK(rep.history.size() == 2000);
  CHECK(rep.final_loss < 0.1 * rep.history[0]);

  SUBCASE("reruns reproduce the loss history bit for bit") {
    auto m2 = m0;
    const auto rep2 = train(m2, batch.x, batch.target, tc);
    CHECK((rep2.history - rep.history).abs().maxCoeff() == 0.0);
    CHECK(rep2.final_loss == rep.final_loss);
    CHECK((m2.pack() - m.pack()).cwiseAbs().maxCoeff() == 0.0);
  }

  SUBCASE("divergence aborts with a truncated report") {
    auto m2 = m0;
    TrainConfig wild = tc;
    wild.rate = 1e9;
    const auto bad = train(m2, batch.x, batch.target, wild);
    CHECK(bad.diverged);
    CHECK(bad.steps < wild.steps);
    CHECK(Index(bad.history.size()) == bad.steps + 1);
    CHECK(bad.final_loss >= wild.divergence);
  }

  SUBCASE("the adaptive-moment variant also descends") {
    auto m2 = m0;
    TrainConfig ad = tc;
    ad.adaptive = true;
    ad.steps = 300;
    ad.rate = 0.01;
    const auto rep2 = train(m2, batch.x, batch.target, ad);
    CHECK(!rep2.diverged);
    CHECK(rep2.final_loss < rep2.history[0]);
  }
}

TEST_CASE("the dilation study contracts gradients by the exact factor") {
  CondnumConfig cfg;
  cfg.grid_points = 32;
  cfg.time_points = 9;
  cfg.dilation = 4;
  cfg.seeds = 4;
  cfg.modes = {4, 8};
  cfg.hidden = 5;
  cfg.train_steps = 40;
  cfg.rate = 0.05;
  cfg.threads = 2;

  const auto rep = condnum_study(cfg);
  CHECK(rep.rows.size() == 4);
  const Index gauge = 2 * cfg.hidden * cfg.hidden + cfg.hidden;
  for (const auto& row : rep.rows) {
    CHECK(std::abs(row.s_raw / row.s_dilated - 4.0) < 1e-10 * 4.0);
    CHECK(row.kappa_raw_init >= 1.0);
    CHECK(row.kappa_dilated_init >= 1.0);
    CHECK(std::isfinite(row.kappa_raw_final));
    CHECK(std::isfinite(row.kappa_dilated_final));
    CHECK(row.lambda_raw_init > 0.0);
    CHECK(row.bound_raw_init > 0.0);
    CHECK(row.params == 201);
    CHECK(row.dead_params == cfg.hidden);
    CHECK(row.rank_raw_init <= row.params - row.dead_params - gauge);
    CHECK(row.rank_raw_init > 0);
    CHECK(row.rank_dilated_init > 0);
    CHECK(row.loss_raw_last < row.loss_raw_first);
    CHECK(row.loss_dilated_last < row.loss_dilated_first);
  }
  CHECK(rep.median_kappa_raw_init >= 1.0);
  CHECK(rep.median_kappa_dilated_final >= 1.0);

  SUBCASE("results are identical for any worker count") {
    CondnumConfig solo = cfg;
    solo.threads = 1;
    const auto rep2 = condnum_study<double>(solo);
    for (std::size_t i = 0; i < rep.rows.size(); ++i) {
      CHECK(rep2.rows[i].kappa_raw_final == rep.rows[i].kappa_raw_final);
      CHECK(rep2.rows[i].kappa_dilated_final == rep.rows[i].kappa_dilated_final);
      CHECK(rep2.rows[i].s_raw == rep.rows[i].s_raw);
    }
  }

  SUBCASE("a unit dilation factor degenerates to identical runs") {
    CondnumConfig unit = cfg;
    unit.dilation = 1;
    unit.seeds = 2;
    unit.train_steps = 10;
    const auto rep2 = condnum_study<double>(unit);
    for (const auto& row : rep2.rows) {
      CHECK(row.s_raw == row.s_dilated);
      CHECK(row.kappa_raw_init == row.kappa_dilated_init);
      CHECK(row.kappa_raw_final == row.kappa_dilated_final);
      CHECK(row.loss_raw_last == row.loss_dilated_last);
    }
  }

  SUBCASE("incompatible modes are rejected") {
    CondnumConfig bad = cfg;
    bad.modes = {4, 9};
    CHECK_THROWS(condnum_study<double>(bad));
  }
}

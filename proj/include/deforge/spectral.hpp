#pragma once

#include <cmath>
#include <complex>
#include <vector>

#include "deforge/core.hpp"
#include "deforge/fft.hpp"

namespace deforge {

// Aliasing-order index k in [0, n) mapped to the signed mode; for even n the
// Nyquist index carries the positive sign.
inline Index signed_mode(Index k, Index n) { return 2 * k <= n ? k : k - n; }

template <class Scalar>
Scalar wavenumber(const GridT<Scalar>& g, int dim, Index k) {
  return Scalar(2) * std::numbers::pi_v<Scalar> * Scalar(signed_mode(k, g.points[dim])) /
         g.extents[dim];
}

// Fourier coefficients of a field, same flat layout as FieldT with one complex
// value per mode; coefficients follow the Fourier-series convention, so a unit
// cosine at mode k carries 1/2 at +k and -k.
template <class Scalar = double>
struct SpectrumT {
  GridT<Scalar> grid;
  int components = 1;
  std::string quantity = "state";
  ArrayX<std::complex<Scalar>> data;

  static SpectrumT zeros(const GridT<Scalar>& g, int components, std::string quantity = "state") {
    g.validate();
    SpectrumT s;
    s.grid = g;
    s.components = components;
    s.quantity = std::move(quantity);
    s.data = ArrayX<std::complex<Scalar>>::Zero(Index(components) * time_slabs(g) *
                                                spatial_size(g));
    return s;
  }

  Index slab_offset(int c, Index t) const {
    return (Index(c) * time_slabs(grid) + t) * spatial_size(grid);
  }

  std::complex<Scalar>* slab_ptr(int c, Index t = 0) { return data.data() + slab_offset(c, t); }
  const std::complex<Scalar>* slab_ptr(int c, Index t = 0) const {
    return data.data() + slab_offset(c, t);
  }

  Index flat_index(int c, Index t, Index k0, Index k1 = 0, Index k2 = 0) const {
    return slab_offset(c, t) + (k0 * grid.points[1] + k1) * grid.points[2] + k2;
  }

  std::complex<Scalar>& at(int c, Index t, Index k0, Index k1 = 0, Index k2 = 0) {
    return data[flat_index(c, t, k0, k1, k2)];
  }
  std::complex<Scalar> at(int c, Index t, Index k0, Index k1 = 0, Index k2 = 0) const {
    return data[flat_index(c, t, k0, k1, k2)];
  }
};

using Spectrum = SpectrumT<double>;

namespace detail {

template <class Scalar>
void fft_slab(std::complex<Scalar>* slab, const GridT<Scalar>& g, int sign) {
  const Index n0 = g.points[0], n1 = g.points[1], n2 = g.points[2];
  fft_axis(slab, Index(1), n0, n1 * n2, sign);
  if (g.dims >= 2) fft_axis(slab, n0, n1, n2, sign);
  if (g.dims >= 3) fft_axis(slab, n0 * n1, n2, Index(1), sign);
}

}  // namespace detail

template <class Scalar>
SpectrumT<Scalar> dft_forward(const FieldT<Scalar>& f) {
  for (int j = 0; j < f.grid.dims; ++j)
    if (!f.grid.periodic[j]) throw std::invalid_argument("dft_forward: axis not periodic");
  auto s = SpectrumT<Scalar>::zeros(f.grid, f.components, f.quantity);
  const Index ns = spatial_size(f.grid);
  const Scalar scale = Scalar(1) / Scalar(ns);
  for (int c = 0; c < f.components; ++c)
    for (Index t = 0; t < time_slabs(f.grid); ++t) {
      auto in = f.slab(c, t);
      std::complex<Scalar>* out = s.slab_ptr(c, t);
      for (Index i = 0; i < ns; ++i) out[i] = in[i];
      detail::fft_slab(out, f.grid, -1);
      for (Index i = 0; i < ns; ++i) out[i] *= scale;
    }
  return s;
}

template <class Scalar>
FieldT<Scalar> dft_inverse(const SpectrumT<Scalar>& s) {
  auto f = FieldT<Scalar>::zeros(s.grid, s.components, s.quantity);
  const Index ns = spatial_size(s.grid);
  std::vector<std::complex<Scalar>> buf(ns);
  for (int c = 0; c < s.components; ++c)
    for (Index t = 0; t < time_slabs(s.grid); ++t) {
      const std::complex<Scalar>* in = s.slab_ptr(c, t);
      std::copy(in, in + ns, buf.begin());
      detail::fft_slab(buf.data(), s.grid, +1);
      auto out = f.slab(c, t);
      for (Index i = 0; i < ns; ++i) out[i] = buf[i].real();
    }
  return f;
}

// d^order/dx_dim^order by multiplication with (i kappa)^order in mode space.
// Odd orders zero the Nyquist mode, which has no well-defined sign.
template <class Scalar>
FieldT<Scalar> spectral_derivative(const FieldT<Scalar>& f, int dim, int order) {
  if (dim < 0 || dim >= f.grid.dims)
    throw std::invalid_argument("spectral_derivative: dim out of range");
  if (!f.grid.periodic[dim])
    throw std::invalid_argument("spectral_derivative: axis not periodic");
  if (order < 1) throw std::invalid_argument("spectral_derivative: order must be >= 1");

  const auto& g = f.grid;
  const Index n = g.points[dim];
  std::vector<std::complex<Scalar>> factor(n);
  for (Index k = 0; k < n; ++k) {
    if (order % 2 == 1 && n % 2 == 0 && k == n / 2) {
      factor[k] = Scalar(0);
      continue;
    }
    const std::complex<Scalar> ik(Scalar(0), wavenumber(g, dim, k));
    std::complex<Scalar> c(Scalar(1) / Scalar(n), Scalar(0));
    for (int p = 0; p < order; ++p) c *= ik;
    factor[k] = c;
  }

  Index outer = 1, inner = 1;
  for (int j = 0; j < dim; ++j) outer *= g.points[j];
  for (int j = dim + 1; j < 3; ++j) inner *= g.points[j];

  auto out = FieldT<Scalar>::zeros(g, f.components, f.quantity);
  const Index ns = spatial_size(g);
  std::vector<std::complex<Scalar>> buf(ns);
  for (int c = 0; c < f.components; ++c)
    for (Index t = 0; t < time_slabs(g); ++t) {
      auto in = f.slab(c, t);
      for (Index i = 0; i < ns; ++i) buf[i] = in[i];
      fft_axis(buf.data(), outer, n, inner, -1);
      for (Index o = 0; o < outer; ++o)
        for (Index k = 0; k < n; ++k)
          for (Index i = 0; i < inner; ++i) buf[(o * n + k) * inner + i] *= factor[k];
      fft_axis(buf.data(), outer, n, inner, +1);
      auto dst = out.slab(c, t);
      for (Index i = 0; i < ns; ++i) dst[i] = buf[i].real();
    }
  return out;
}

// Periodic Poisson solve for lap(p) = rhs; the mean mode is set to zero.
template <class Scalar>
FieldT<Scalar> poisson_solve(const FieldT<Scalar>& rhs) {
  auto s = dft_forward(rhs);
  const auto& g = s.grid;
  for (int c = 0; c < s.components; ++c)
    for (Index t = 0; t < time_slabs(g); ++t)
      for (Index k0 = 0; k0 < g.points[0]; ++k0)
        for (Index k1 = 0; k1 < g.points[1]; ++k1)
          for (Index k2 = 0; k2 < g.points[2]; ++k2) {
            const Scalar kx = wavenumber(g, 0, k0);
            const Scalar ky = g.dims >= 2 ? wavenumber(g, 1, k1) : Scalar(0);
            const Scalar kz = g.dims >= 3 ? wavenumber(g, 2, k2) : Scalar(0);
            const Scalar k2n = kx * kx + ky * ky + kz * kz;
            auto& v = s.at(c, t, k0, k1, k2);
            v = k2n > Scalar(0) ? -v / k2n : std::complex<Scalar>(0);
          }
  auto p = dft_inverse(s);
  p.quantity = rhs.quantity;
  return p;
}

// Removes the curl-free part of a vector field per time slab, leaving the
// solenoidal projection u - grad(inv_lap(div u)). The mean mode is untouched.
template <class Scalar>
FieldT<Scalar> helmholtz_project(const FieldT<Scalar>& u) {
  if (u.components != u.grid.dims)
    throw std::invalid_argument("helmholtz_project: need one component per dim");
  auto s = dft_forward(u);
  const auto& g = s.grid;
  for (Index t = 0; t < time_slabs(g); ++t)
    for (Index k0 = 0; k0 < g.points[0]; ++k0)
      for (Index k1 = 0; k1 < g.points[1]; ++k1)
        for (Index k2 = 0; k2 < g.points[2]; ++k2) {
          Scalar kv[3] = {wavenumber(g, 0, k0),
                          g.dims >= 2 ? wavenumber(g, 1, k1) : Scalar(0),
                          g.dims >= 3 ? wavenumber(g, 2, k2) : Scalar(0)};
          const Scalar k2n = kv[0] * kv[0] + kv[1] * kv[1] + kv[2] * kv[2];
          if (!(k2n > Scalar(0))) continue;
          std::complex<Scalar> dot(Scalar(0));
          for (int c = 0; c < g.dims; ++c) dot += kv[c] * s.at(c, t, k0, k1, k2);
          dot /= k2n;
          for (int c = 0; c < g.dims; ++c) s.at(c, t, k0, k1, k2) -= kv[c] * dot;
        }
  auto out = dft_inverse(s);
  out.quantity = u.quantity;
  return out;
}

// Zero every mode whose signed index exceeds n/3 on any axis (2/3 rule).
template <class Scalar>
void dealias_23(SpectrumT<Scalar>& s) {
  const auto& g = s.grid;
  for (int c = 0; c < s.components; ++c)
    for (Index t = 0; t < time_slabs(g); ++t)
      for (Index k0 = 0; k0 < g.points[0]; ++k0)
        for (Index k1 = 0; k1 < g.points[1]; ++k1)
          for (Index k2 = 0; k2 < g.points[2]; ++k2) {
            bool keep = 3 * std::abs(signed_mode(k0, g.points[0])) <= g.points[0];
            if (g.dims >= 2) keep = keep && 3 * std::abs(signed_mode(k1, g.points[1])) <= g.points[1];
            if (g.dims >= 3) keep = keep && 3 * std::abs(signed_mode(k2, g.points[2])) <= g.points[2];
            if (!keep) s.at(c, t, k0, k1, k2) = std::complex<Scalar>(0);
          }
}

// Finite differences ------------------------------------------------------

// Fornberg weights for the m-th derivative at x0 given nodes xs.
template <class Scalar>
ArrayX<Scalar> fd_weights(Scalar x0, const ArrayX<Scalar>& xs, int m) {
  const Index n = xs.size();
  if (n <= m) throw std::invalid_argument("fd_weights: need more nodes than derivative order");
  ArrayXX<Scalar> c = ArrayXX<Scalar>::Zero(n, m + 1);
  c(0, 0) = Scalar(1);
  Scalar c1 = Scalar(1);
  Scalar c4 = xs[0] - x0;
  for (Index i = 1; i < n; ++i) {
    const int mn = int(std::min<Index>(i, m));
    Scalar c2 = Scalar(1);
    const Scalar c5 = c4;
    c4 = xs[i] - x0;
    for (Index j = 0; j < i; ++j) {
      const Scalar c3 = xs[i] - xs[j];
      c2 *= c3;
      if (j == i - 1) {
        for (int k = mn; k >= 1; --k)
          c(i, k) = c1 * (Scalar(k) * c(i - 1, k - 1) - c5 * c(i - 1, k)) / c2;
        c(i, 0) = -c1 * c5 * c(i - 1, 0) / c2;
      }
      for (int k = mn; k >= 1; --k) c(j, k) = (c4 * c(j, k) - Scalar(k) * c(j, k - 1)) / c3;
      c(j, 0) = c4 * c(j, 0) / c3;
    }
    c1 = c2;
  }
  return c.col(m);
}

namespace detail {

// Differentiates every line of a [outer][n][inner] block along the middle
// axis. Periodic lines use one central stencil with index wrap; non-periodic
// lines switch to clamped windows near the ends.
template <class Scalar>
ArrayX<Scalar> fd_lines(const ArrayX<Scalar>& data, Index outer, Index n, Index inner, Scalar h,
                        int order, int accuracy, bool periodic) {
  if (order < 1 || order > 2) throw std::invalid_argument("fd: order must be 1 or 2");
  if (accuracy != 2 && accuracy != 4) throw std::invalid_argument("fd: accuracy must be 2 or 4");
  const Index wc = 2 * ((order + 1) / 2) + accuracy - 1;  // central width, odd
  const Index we = std::min<Index>(order + accuracy, n);  // edge window width
  if (periodic && n < wc) throw std::invalid_argument("fd: axis too short for stencil");
  if (!periodic && we <= order) throw std::invalid_argument("fd: axis too short for stencil");

  const Index r = wc / 2;
  ArrayX<Scalar> xs(wc);
  for (Index j = 0; j < wc; ++j) xs[j] = Scalar(j - r) * h;
  const ArrayX<Scalar> w_central = fd_weights(Scalar(0), xs, order);

  // Precomputed edge stencils (non-periodic only): node i < r uses window
  // [0, we), node i >= n - r uses window [n - we, n). Short axes shrink the
  // edge window to the axis itself, trading accuracy for validity.
  std::vector<ArrayX<Scalar>> w_lo(static_cast<size_t>(r)), w_hi(static_cast<size_t>(r));
  if (!periodic) {
    ArrayX<Scalar> xe(we);
    for (Index j = 0; j < we; ++j) xe[j] = Scalar(j) * h;
    for (Index i = 0; i < r; ++i) {
      w_lo[size_t(i)] = fd_weights(Scalar(i) * h, xe, order);
      w_hi[size_t(i)] = fd_weights(Scalar(we - 1 - i) * h, xe, order);
    }
  }

  ArrayX<Scalar> out(data.size());
  for (Index o = 0; o < outer; ++o)
    for (Index q = 0; q < inner; ++q) {
      const Index base = o * n * inner + q;
      auto src = [&](Index i) { return data[base + i * inner]; };
      for (Index i = 0; i < n; ++i) {
        Scalar acc = Scalar(0);
        if (periodic) {
          for (Index j = 0; j < wc; ++j) {
            Index idx = (i + j - r) % n;
            if (idx < 0) idx += n;
            acc += w_central[j] * src(idx);
          }
        } else if (i < r) {
          const auto& w = w_lo[size_t(i)];
          for (Index j = 0; j < we; ++j) acc += w[j] * src(j);
        } else if (i >= n - r) {
          const auto& w = w_hi[size_t(n - 1 - i)];
          for (Index j = 0; j < we; ++j) acc += w[j] * src(n - we + j);
        } else {
          for (Index j = 0; j < wc; ++j) acc += w_central[j] * src(i + j - r);
        }
        out[base + i * inner] = acc;
      }
    }
  return out;
}

}  // namespace detail

template <class Scalar>
FieldT<Scalar> fd_derivative(const FieldT<Scalar>& f, int dim, int order, int accuracy = 2) {
  if (dim < 0 || dim >= f.grid.dims) throw std::invalid_argument("fd_derivative: dim out of range");
  const auto& g = f.grid;
  Index outer = Index(f.components) * time_slabs(g);
  for (int j = 0; j < dim; ++j) outer *= g.points[j];
  Index inner = 1;
  for (int j = dim + 1; j < 3; ++j) inner *= g.points[j];
  auto out = f;
  out.data = detail::fd_lines(f.data, outer, g.points[dim], inner, spacing(g, dim), order,
                              accuracy, g.periodic[dim]);
  return out;
}

template <class Scalar>
FieldT<Scalar> fd_time_derivative(const FieldT<Scalar>& f, int order, int accuracy = 2) {
  const auto& g = f.grid;
  if (g.time_points < 2) throw std::invalid_argument("fd_time_derivative: no time axis");
  auto out = f;
  out.data = detail::fd_lines(f.data, Index(f.components), g.time_points, spatial_size(g),
                              time_step(g), order, accuracy, false);
  return out;
}

// Derivative of each channel of an evenly sampled series.
template <class Scalar>
ArrayX<Scalar> fd_series(const ArrayX<Scalar>& values, Scalar dt, int order, int accuracy = 2) {
  return detail::fd_lines(values, Index(1), values.size(), Index(1), dt, order, accuracy, false);
}

// Radial (shell-averaged) energy spectrum -----------------------------------

template <class Scalar = double>
struct RadialSpectrumT {
  ArrayX<Scalar> k;       // shell centers, b * dk for b = 1..B
  ArrayX<Scalar> energy;  // E(k_b); sum_b E(k_b) * dk equals the field variance
  Scalar dk = Scalar(0);
};

using RadialSpectrum = RadialSpectrumT<double>;

// Bins |kappa| into shells of width dk = min_j 2 pi / L_j; the mean mode is
// excluded, so summing E * dk over shells recovers the variance (summed over
// components).
template <class Scalar>
RadialSpectrumT<Scalar> radial_spectrum(const FieldT<Scalar>& f, Index t = 0) {
  const auto& g = f.grid;
  auto s = dft_forward(f);

  Scalar dk = std::numeric_limits<Scalar>::max();
  Scalar corner = Scalar(0);
  for (int j = 0; j < g.dims; ++j) {
    const Scalar base = Scalar(2) * std::numbers::pi_v<Scalar> / g.extents[j];
    dk = std::min(dk, base);
    const Scalar kmax = base * Scalar(g.points[j] / 2);
    corner += kmax * kmax;
  }
  const Index nbins = Index(std::floor(std::sqrt(corner) / dk + Scalar(0.5)));

  RadialSpectrumT<Scalar> r;
  r.dk = dk;
  r.k = ArrayX<Scalar>(nbins);
  r.energy = ArrayX<Scalar>::Zero(nbins);
  for (Index b = 0; b < nbins; ++b) r.k[b] = Scalar(b + 1) * dk;

  for (int c = 0; c < f.components; ++c)
    for (Index k0 = 0; k0 < g.points[0]; ++k0)
      for (Index k1 = 0; k1 < g.points[1]; ++k1)
        for (Index k2 = 0; k2 < g.points[2]; ++k2) {
          if (k0 == 0 && k1 == 0 && k2 == 0) continue;
          const Scalar kx = wavenumber(g, 0, k0);
          const Scalar ky = g.dims >= 2 ? wavenumber(g, 1, k1) : Scalar(0);
          const Scalar kz = g.dims >= 3 ? wavenumber(g, 2, k2) : Scalar(0);
          const Scalar kn = std::sqrt(kx * kx + ky * ky + kz * kz);
          const Index b = Index(std::floor(kn / dk + Scalar(0.5))) - 1;
          if (b < 0 || b >= nbins) continue;
          r.energy[b] += std::norm(s.at(c, t, k0, k1, k2)) / dk;
        }
  return r;
}

// Least-squares slope of log y vs log x; entries with a non-positive
// coordinate are skipped.
template <class Scalar>
Scalar fit_loglog_slope(const ArrayX<Scalar>& xs, const ArrayX<Scalar>& ys) {
  if (xs.size() != ys.size()) throw std::invalid_argument("fit_loglog_slope: size mismatch");
  Scalar sx = 0, sy = 0, sxx = 0, sxy = 0;
  Index m = 0;
  for (Index i = 0; i < xs.size(); ++i) {
    if (!(xs[i] > Scalar(0)) || !(ys[i] > Scalar(0))) continue;
    const Scalar x = std::log(xs[i]);
    const Scalar y = std::log(ys[i]);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
    ++m;
  }
  if (m < 2) throw std::invalid_argument("fit_loglog_slope: fewer than two usable points");
  return (Scalar(m) * sxy - sx * sy) / (Scalar(m) * sxx - sx * sx);
}

// Least-squares slope of log E vs log k over shells with k in [kmin, kmax].
template <class Scalar>
Scalar fit_loglog_slope(const RadialSpectrumT<Scalar>& r, Scalar kmin, Scalar kmax) {
  ArrayX<Scalar> xs = ArrayX<Scalar>::Zero(r.k.size());
  ArrayX<Scalar> ys = ArrayX<Scalar>::Zero(r.k.size());
  for (Index b = 0; b < r.k.size(); ++b) {
    if (r.k[b] < kmin || r.k[b] > kmax) continue;
    xs[b] = r.k[b];
    ys[b] = r.energy[b];
  }
  return fit_loglog_slope(xs, ys);
}

}  // namespace deforge

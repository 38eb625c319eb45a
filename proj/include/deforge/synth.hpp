#pragma once

#include <limits>
#include <optional>

#include "deforge/rng.hpp"
#include "deforge/spectral.hpp"

namespace deforge {

// Target radial energy spectra E(k) ------------------------------------------

enum class SpectrumShape { power_law, pope };

template <class Scalar = double>
struct SpectrumParamsT {
  SpectrumShape shape = SpectrumShape::power_law;
  Scalar amplitude = Scalar(1);
  Scalar exponent = Scalar(-5) / Scalar(3);  // power-law slope
  Scalar k_lo = Scalar(0);                   // band clip, both shapes
  Scalar k_hi = std::numeric_limits<Scalar>::infinity();
  Scalar integral_scale = Scalar(1);         // Pope L
  Scalar kolmogorov_scale = Scalar(1e-2);    // Pope eta
};

using SpectrumParams = SpectrumParamsT<double>;

// Model energy spectrum at wavenumber k. The Pope form is
// C k^(-5/3) f_L(kL) f_eta(k eta) with the standard constants
// c_L = 6.78, c_eta = 0.4, beta = 5.2, p0 = 2.
template <class Scalar>
Scalar spectrum_eval(const SpectrumParamsT<Scalar>& p, Scalar k) {
  if (!(k > Scalar(0)) || k < p.k_lo || k > p.k_hi) return Scalar(0);
  switch (p.shape) {
    case SpectrumShape::power_law:
      return p.amplitude * std::pow(k, p.exponent);
    case SpectrumShape::pope: {
      const Scalar c_l = Scalar(6.78), c_eta = Scalar(0.4), beta = Scalar(5.2);
      const Scalar kl = k * p.integral_scale;
      const Scalar keta = k * p.kolmogorov_scale;
      const Scalar f_l = std::pow(kl / std::sqrt(kl * kl + c_l), Scalar(5) / Scalar(3) + Scalar(2));
      const Scalar f_eta = std::exp(
          -beta * (std::pow(keta * keta * keta * keta + c_eta * c_eta * c_eta * c_eta,
                            Scalar(0.25)) -
                   c_eta));
      return p.amplitude * std::pow(k, Scalar(-5) / Scalar(3)) * f_l * f_eta;
    }
  }
  return Scalar(0);
}

// Gaussian random fields ------------------------------------------------------

template <class Scalar = double>
struct GrfParamsT {
  SpectrumParamsT<Scalar> target;
  int components = 1;
  bool divergence_free = false;
  // Random-sweeping time broadening for grids with a time axis: each spatial
  // mode gets a Gaussian frequency line centered at kappa . advect with width
  // |kappa| * sweep_rms. A crude stand-in for true space-time statistics.
  std::array<Scalar, 3> advect{Scalar(0), Scalar(0), Scalar(0)};
  Scalar sweep_rms = Scalar(0);
};

using GrfParams = GrfParamsT<double>;

namespace detail {

template <class Scalar>
Scalar shell_measure(int dims, Scalar k) {
  if (dims == 1) return Scalar(2);
  if (dims == 2) return Scalar(2) * std::numbers::pi_v<Scalar> * k;
  return Scalar(4) * std::numbers::pi_v<Scalar> * k * k;
}

}  // namespace detail

// Draws a real field whose radial energy spectrum matches the target in
// expectation: u_hat(kappa) = sqrt(S(|kappa|) prod dkappa_j) z with z a unit
// complex normal and S the target divided by the shell measure. Conjugate
// pairs share one draw; self-conjugate modes get a real draw. The mean mode
// is always zero.
template <class Scalar>
FieldT<Scalar> gaussian_random_field(const GridT<Scalar>& grid, const GrfParamsT<Scalar>& p,
                                     Rng& rng) {
  grid.validate();
  if (p.components < 1) throw std::invalid_argument("grf: components must be positive");
  if (p.divergence_free && p.components != grid.dims)
    throw std::invalid_argument("grf: divergence-free needs one component per dim");
  const bool timed = grid.time_points > 1;
  if (timed && !(p.sweep_rms > Scalar(0)))
    throw std::invalid_argument("grf: time axis needs sweep_rms > 0");

  const Index n0 = grid.points[0], n1 = grid.points[1], n2 = grid.points[2];
  const Index nt = timed ? grid.time_points : 1;
  const Index nsp = spatial_size(grid);
  // Time lattice treated as one period of length nt * dt, so no sample is
  // duplicated at the seam.
  const Scalar t_period = timed ? Scalar(nt) * time_step(grid) : Scalar(1);

  Scalar dk_prod = Scalar(1);
  for (int j = 0; j < grid.dims; ++j)
    dk_prod *= Scalar(2) * std::numbers::pi_v<Scalar> / grid.extents[j];

  std::vector<ArrayX<std::complex<Scalar>>> hat(
      size_t(p.components), ArrayX<std::complex<Scalar>>::Zero(nt * nsp));
  auto flat = [&](Index mt, Index k0, Index k1, Index k2) {
    return ((mt * n0 + k0) * n1 + k1) * n2 + k2;
  };

  ArrayX<Scalar> line(nt);
  for (Index mt = 0; mt < nt; ++mt)
    for (Index k0 = 0; k0 < n0; ++k0)
      for (Index k1 = 0; k1 < n1; ++k1)
        for (Index k2 = 0; k2 < n2; ++k2) {
          const Index self = flat(mt, k0, k1, k2);
          const Index pt = mt == 0 ? 0 : nt - mt;
          const Index p0 = k0 == 0 ? 0 : n0 - k0;
          const Index p1 = k1 == 0 ? 0 : n1 - k1;
          const Index p2 = k2 == 0 ? 0 : n2 - k2;
          const Index partner = flat(pt, p0, p1, p2);
          if (partner < self) continue;  // already assigned with its pair

          Scalar kap[3] = {wavenumber(grid, 0, k0),
                           grid.dims >= 2 ? wavenumber(grid, 1, k1) : Scalar(0),
                           grid.dims >= 3 ? wavenumber(grid, 2, k2) : Scalar(0)};
          const Scalar kn = std::sqrt(kap[0] * kap[0] + kap[1] * kap[1] + kap[2] * kap[2]);
          Scalar weight = Scalar(1);
          if (timed) {
            // Discrete normalization of the frequency line at this kappa.
            const Scalar mu = kap[0] * p.advect[0] + kap[1] * p.advect[1] + kap[2] * p.advect[2];
            const Scalar sg =
                std::max(kn * p.sweep_rms, std::numbers::pi_v<Scalar> / t_period);
            for (Index m = 0; m < nt; ++m) {
              const Scalar om =
                  Scalar(2) * std::numbers::pi_v<Scalar> * Scalar(signed_mode(m, nt)) / t_period;
              const Scalar dev = (om - mu) / sg;
              line[m] = std::exp(Scalar(-0.5) * dev * dev);
            }
            weight = line[mt] / line.sum();
          }

          Scalar var = Scalar(0);
          if (kn > Scalar(0)) {
            const Scalar e = spectrum_eval(p.target, kn);
            var = e / detail::shell_measure(grid.dims, kn) * dk_prod * weight;
          }
          const Scalar amp = std::sqrt(var);

          const bool self_conj = partner == self;
          std::vector<std::complex<Scalar>> z(size_t(p.components));
          for (auto& v : z) {
            if (self_conj)
              v = std::complex<Scalar>(rng.normal(), Scalar(0));
            else
              v = std::complex<Scalar>(rng.normal(), rng.normal()) / std::sqrt(Scalar(2));
          }
          if (p.divergence_free && kn > Scalar(0)) {
            std::complex<Scalar> dot(0, 0);
            for (int c = 0; c < p.components; ++c) dot += z[size_t(c)] * (kap[c] / kn);
            for (int c = 0; c < p.components; ++c) z[size_t(c)] -= dot * (kap[c] / kn);
          }
          for (int c = 0; c < p.components; ++c) {
            hat[size_t(c)][self] = amp * z[size_t(c)];
            if (!self_conj) hat[size_t(c)][partner] = amp * std::conj(z[size_t(c)]);
          }
        }

  auto f = FieldT<Scalar>::zeros(grid, p.components);
  for (int c = 0; c < p.components; ++c) {
    auto& h = hat[size_t(c)];
    if (timed) fft_axis(h.data(), Index(1), nt, nsp, +1);
    for (Index t = 0; t < nt; ++t) {
      detail::fft_slab(h.data() + t * nsp, grid, +1);
      auto out = f.slab(c, t);
      for (Index i = 0; i < nsp; ++i) out[i] = h[t * nsp + i].real();
    }
  }
  return f;
}

// Divergence-free wave-mode synthesis -----------------------------------------

template <class Scalar = double>
struct WaveModeT {
  std::array<Index, 3> k{0, 0, 0};     // integer lattice wavevector
  std::array<Scalar, 3> sigma{};       // unit polarization, sigma . kappa = 0
  Scalar q = Scalar(0);                // amplitude
  Scalar omega = Scalar(0);            // angular frequency
  Scalar psi = Scalar(0);              // phase
};

using WaveMode = WaveModeT<double>;

template <class Scalar = double>
struct SynthParamsT {
  SpectrumParamsT<Scalar> target;
  Scalar k_lo = Scalar(0);   // physical wavenumber band
  Scalar k_hi = Scalar(0);
  int shells = 4;
  int modes_per_shell = 4;
  Scalar omega_lo = Scalar(0);    // angular frequency band floor
  Scalar omega_max = Scalar(-1);  // < 0: 2 pi n_t / (4 T); 0 for static grids
};

using SynthParams = SynthParamsT<double>;

// Polarization of synthesized wave modes relative to their wavevector.
enum class Polarization { transverse, longitudinal, mixed };

// u_i(x, t) = sum_m 2 q_m cos(kappa_m . x - omega_m t - psi_m) sigma_im.
template <class Scalar>
FieldT<Scalar> evaluate_modes(const std::vector<WaveModeT<Scalar>>& modes,
                              const GridT<Scalar>& grid, const std::string& quantity) {
  auto f = FieldT<Scalar>::zeros(grid, grid.dims, quantity);
  const Index nt = time_slabs(grid);
  const Scalar dt = grid.time_points > 1 ? time_step(grid) : Scalar(0);
  std::array<ArrayX<Scalar>, 3> x;
  for (int j = 0; j < grid.dims; ++j) x[size_t(j)] = coordinates(grid, j);

  for (const auto& m : modes) {
    Scalar kap[3] = {0, 0, 0};
    for (int j = 0; j < grid.dims; ++j)
      kap[j] = Scalar(2) * std::numbers::pi_v<Scalar> * Scalar(m.k[size_t(j)]) / grid.extents[j];
    for (Index t = 0; t < nt; ++t) {
      const Scalar tphase = m.omega * dt * Scalar(t) + m.psi;
      for (Index i0 = 0; i0 < grid.points[0]; ++i0)
        for (Index i1 = 0; i1 < grid.points[1]; ++i1)
          for (Index i2 = 0; i2 < grid.points[2]; ++i2) {
            Scalar arg = kap[0] * x[0][i0] - tphase;
            if (grid.dims >= 2) arg += kap[1] * x[1][i1];
            if (grid.dims >= 3) arg += kap[2] * x[2][i2];
            const Scalar w = Scalar(2) * m.q * std::cos(arg);
            for (int c = 0; c < grid.dims; ++c)
              f.at(c, t, i0, i1, i2) += w * m.sigma[size_t(c)];
          }
    }
  }
  return f;
}

template <class Scalar = double>
struct DivfreeFieldT {
  FieldT<Scalar> field;
  std::vector<WaveModeT<Scalar>> modes;
};

using DivfreeField = DivfreeFieldT<double>;

// Builds a field from discrete wave modes on the integer lattice: log-spaced
// shells over [k_lo, k_hi], modes_per_shell distinct wavevectors per shell,
// q_m^2 = E(|kappa_m|) dk_shell / (2 M) so the slab-mean energy is exactly
// 2 sum q_m^2.
template <class Scalar>
DivfreeFieldT<Scalar> synth_modes(const GridT<Scalar>& grid, const SynthParamsT<Scalar>& p,
                                  Rng& rng, Polarization pol) {
  grid.validate();
  if (grid.dims < 2) throw std::invalid_argument("synth_modes: needs at least 2 dims");
  if (!(p.k_lo > Scalar(0)) || !(p.k_hi > p.k_lo))
    throw std::invalid_argument("synth_modes: need 0 < k_lo < k_hi");
  if (p.shells < 1 || p.modes_per_shell < 1)
    throw std::invalid_argument("synth_modes: need at least one shell and mode");

  Scalar omega_max = p.omega_max;
  if (omega_max < Scalar(0))
    omega_max = grid.time_points > 1
                    ? Scalar(2) * std::numbers::pi_v<Scalar> * Scalar(grid.time_points) /
                          (Scalar(4) * grid.duration)
                    : Scalar(0);
  if (p.omega_lo < Scalar(0) || (omega_max > Scalar(0) && p.omega_lo > omega_max))
    throw std::invalid_argument("synth_modes: need 0 <= omega_lo <= omega_max");

  std::vector<WaveModeT<Scalar>> modes;
  const Scalar lo_log = std::log(p.k_lo), hi_log = std::log(p.k_hi);
  for (int s = 0; s < p.shells; ++s) {
    const Scalar ka = std::exp(lo_log + (hi_log - lo_log) * Scalar(s) / Scalar(p.shells));
    const Scalar kb = std::exp(lo_log + (hi_log - lo_log) * Scalar(s + 1) / Scalar(p.shells));
    std::vector<WaveModeT<Scalar>> shell;
    int attempts = 0;
    while (int(shell.size()) < p.modes_per_shell) {
      if (++attempts > 500)
        throw std::runtime_error("synth_modes: could not place modes in shell; "
                                 "band too narrow for this grid");
      Scalar dir[3] = {0, 0, 0};
      Scalar nrm = 0;
      for (int j = 0; j < grid.dims; ++j) {
        dir[j] = rng.normal();
        nrm += dir[j] * dir[j];
      }
      nrm = std::sqrt(nrm);
      if (!(nrm > Scalar(1e-12))) continue;
      const Scalar radius = ka + (kb - ka) * rng.uniform();
      WaveModeT<Scalar> m;
      bool ok = true;
      Scalar kap[3] = {0, 0, 0};
      Scalar k_phys2 = 0;
      for (int j = 0; j < grid.dims; ++j) {
        const Scalar target = radius * dir[j] / nrm;
        const auto ki = Index(std::llround(target * grid.extents[j] /
                                           (Scalar(2) * std::numbers::pi_v<Scalar>)));
        if (2 * std::abs(ki) >= grid.points[j]) ok = false;  // strictly below Nyquist
        m.k[size_t(j)] = ki;
        kap[j] = Scalar(2) * std::numbers::pi_v<Scalar> * Scalar(ki) / grid.extents[j];
        k_phys2 += kap[j] * kap[j];
      }
      if (!ok) continue;
      const Scalar k_phys = std::sqrt(k_phys2);
      if (k_phys < ka || k_phys > kb) continue;
      bool dup = false;
      for (const auto& e : modes)
        dup = dup || (e.k[0] == m.k[0] && e.k[1] == m.k[1] && e.k[2] == m.k[2]) ||
              (e.k[0] == -m.k[0] && e.k[1] == -m.k[1] && e.k[2] == -m.k[2]);
      for (const auto& e : shell)
        dup = dup || (e.k[0] == m.k[0] && e.k[1] == m.k[1] && e.k[2] == m.k[2]) ||
              (e.k[0] == -m.k[0] && e.k[1] == -m.k[1] && e.k[2] == -m.k[2]);
      if (dup) continue;

      if (pol == Polarization::longitudinal) {
        const Scalar sign = rng.uniform() < Scalar(0.5) ? Scalar(-1) : Scalar(1);
        m.sigma = {sign * kap[0] / k_phys, sign * kap[1] / k_phys, sign * kap[2] / k_phys};
      } else if (pol == Polarization::mixed) {
        Scalar v[3] = {0, 0, 0}, vn = 0;
        do {
          vn = 0;
          for (int j = 0; j < grid.dims; ++j) {
            v[j] = rng.normal();
            vn += v[j] * v[j];
          }
          vn = std::sqrt(vn);
        } while (!(vn > Scalar(1e-8)));
        m.sigma = {v[0] / vn, v[1] / vn, v[2] / vn};
      } else if (grid.dims == 2) {
        const Scalar sign = rng.uniform() < Scalar(0.5) ? Scalar(-1) : Scalar(1);
        m.sigma = {sign * (-kap[1] / k_phys), sign * (kap[0] / k_phys), Scalar(0)};
      } else {
        Scalar v[3], dot = 0, vn = 0;
        do {
          dot = vn = 0;
          for (int j = 0; j < 3; ++j) v[j] = rng.normal();
          for (int j = 0; j < 3; ++j) dot += v[j] * kap[j] / k_phys;
          for (int j = 0; j < 3; ++j) {
            v[j] -= dot * kap[j] / k_phys;
            vn += v[j] * v[j];
          }
          vn = std::sqrt(vn);
        } while (!(vn > Scalar(1e-8)));
        m.sigma = {v[0] / vn, v[1] / vn, v[2] / vn};
      }
      const Scalar e_k = spectrum_eval(p.target, k_phys);
      m.q = std::sqrt(std::max(e_k, Scalar(0)) * (kb - ka) /
                      (Scalar(2) * Scalar(p.modes_per_shell)));
      m.omega = omega_max > Scalar(0) ? rng.uniform(p.omega_lo, omega_max) : Scalar(0);
      m.psi = rng.uniform(Scalar(0), Scalar(2) * std::numbers::pi_v<Scalar>);
      shell.push_back(m);
    }
    modes.insert(modes.end(), shell.begin(), shell.end());
  }

  DivfreeFieldT<Scalar> out;
  out.modes = std::move(modes);
  out.field = evaluate_modes(out.modes, grid, "velocity");
  return out;
}

template <class Scalar>
DivfreeFieldT<Scalar> synth_divfree(const GridT<Scalar>& grid, const SynthParamsT<Scalar>& p,
                                    Rng& rng) {
  return synth_modes(grid, p, rng, Polarization::transverse);
}

// Point sources and trajectories ----------------------------------------------

// Ricker wavelet with peak frequency f: A (1 - 2 pi^2 f^2 tau^2) e^(-pi^2 f^2 tau^2).
template <class Scalar>
Scalar ricker(Scalar t, Scalar peak_frequency, Scalar amplitude = Scalar(1),
              Scalar t0 = Scalar(0)) {
  const Scalar tau = t - t0;
  const Scalar a = std::numbers::pi_v<Scalar> * std::numbers::pi_v<Scalar> * peak_frequency *
                   peak_frequency * tau * tau;
  return amplitude * (Scalar(1) - Scalar(2) * a) * std::exp(-a);
}

template <class Scalar = double>
struct TrajectoryParamsT {
  int channels = 1;
  int modes = 3;
  Scalar f_lo = Scalar(0.2);  // cycles per unit time
  Scalar f_hi = Scalar(1.0);
  Scalar amplitude = Scalar(1);
  Scalar offset = Scalar(0);
  // When finite, amplitudes are shrunk so every channel stays above this.
  Scalar min_value = -std::numeric_limits<Scalar>::infinity();
};

using TrajectoryParams = TrajectoryParamsT<double>;

// Finite sum of sinusoids per channel; analytic derivatives of any order.
template <class Scalar = double>
struct SmoothTrajectoryT {
  ArrayX<Scalar> offset;              // per channel
  ArrayXX<Scalar> amp, freq, phase;   // channels x modes, freq in rad/time

  int channels() const { return int(offset.size()); }

  Scalar eval(int channel, Scalar t, int deriv = 0) const {
    Scalar v = deriv == 0 ? offset[channel] : Scalar(0);
    for (Index m = 0; m < amp.cols(); ++m) {
      const Scalar w = freq(channel, m);
      v += amp(channel, m) * std::pow(w, Scalar(deriv)) *
           std::cos(w * t + phase(channel, m) +
                    Scalar(deriv) * std::numbers::pi_v<Scalar> / Scalar(2));
    }
    return v;
  }

  TimeSeriesT<Scalar> sample(Index steps, Scalar dt, int deriv = 0) const {
    auto s = TimeSeriesT<Scalar>::zeros(steps, channels(), dt);
    for (int c = 0; c < channels(); ++c)
      for (Index i = 0; i < steps; ++i) s.values(i, c) = eval(c, dt * Scalar(i), deriv);
    return s;
  }
};

using SmoothTrajectory = SmoothTrajectoryT<double>;

template <class Scalar>
SmoothTrajectoryT<Scalar> smooth_trajectory(const TrajectoryParamsT<Scalar>& p, Rng& rng) {
  if (p.channels < 1 || p.modes < 1)
    throw std::invalid_argument("smooth_trajectory: need channels and modes >= 1");
  if (!(p.f_lo > Scalar(0)) || !(p.f_hi >= p.f_lo))
    throw std::invalid_argument("smooth_trajectory: need 0 < f_lo <= f_hi");
  SmoothTrajectoryT<Scalar> tr;
  tr.offset = ArrayX<Scalar>::Constant(p.channels, p.offset);
  tr.amp = ArrayXX<Scalar>(p.channels, p.modes);
  tr.freq = ArrayXX<Scalar>(p.channels, p.modes);
  tr.phase = ArrayXX<Scalar>(p.channels, p.modes);
  for (int c = 0; c < p.channels; ++c)
    for (int m = 0; m < p.modes; ++m) {
      tr.amp(c, m) = p.amplitude * rng.uniform(Scalar(0.5), Scalar(1)) / Scalar(m + 1);
      tr.freq(c, m) = Scalar(2) * std::numbers::pi_v<Scalar> * rng.uniform(p.f_lo, p.f_hi);
      tr.phase(c, m) = rng.uniform(Scalar(0), Scalar(2) * std::numbers::pi_v<Scalar>);
    }
  if (std::isfinite(p.min_value)) {
    if (!(p.offset > p.min_value))
      throw std::invalid_argument("smooth_trajectory: offset must exceed min_value");
    for (int c = 0; c < p.channels; ++c) {
      const Scalar swing = tr.amp.row(c).abs().sum();
      const Scalar room = p.offset - p.min_value;
      if (swing > Scalar(0.95) * room) tr.amp.row(c) *= Scalar(0.95) * room / swing;
    }
  }
  return tr;
}

}  // namespace deforge

#pragma once

#include "deforge/spectral.hpp"

namespace deforge {

// Outcome of applying (or probing) a dilation: how many nonzero source modes
// had an image under the re-indexing and how much energy they carried.
template <class Scalar = double>
struct DilationReportT {
  int factor = 1;
  Index modes_retained = 0;
  Index modes_dropped = 0;
  Scalar retained_energy_fraction = Scalar(1);
  bool compatible = true;
};

using DilationReport = DilationReportT<double>;

namespace detail {

// A source mode survives dilation by `factor` iff every signed index is a
// multiple of the factor and stays strictly below Nyquist; the Nyquist mode
// itself has no unambiguous image and is always dropped (factor 1 aside).
inline bool mode_has_image(Index m0, Index m1, Index m2, const Index* n, int factor) {
  const Index m[3] = {m0, m1, m2};
  for (int j = 0; j < 3; ++j) {
    if (m[j] % factor != 0) return false;
    if (2 * std::abs(m[j]) >= n[j] && m[j] != 0) return false;
  }
  return true;
}

}  // namespace detail

// Fourier re-indexing v[k] = u[factor * k]; on a field whose spectrum lives on
// multiples of the factor this evaluates u(x / factor) exactly, otherwise the
// non-divisible modes are projected out.
template <class Scalar>
SpectrumT<Scalar> dilate(const SpectrumT<Scalar>& s, int factor) {
  if (factor < 1) throw std::invalid_argument("dilate: factor must be >= 1");
  if (factor == 1) return s;
  const auto& g = s.grid;
  auto out = SpectrumT<Scalar>::zeros(g, s.components, s.quantity);
  const Index n0 = g.points[0], n1 = g.points[1], n2 = g.points[2];
  for (int c = 0; c < s.components; ++c)
    for (Index t = 0; t < time_slabs(g); ++t)
      for (Index k0 = 0; k0 < n0; ++k0)
        for (Index k1 = 0; k1 < n1; ++k1)
          for (Index k2 = 0; k2 < n2; ++k2) {
            const Index m0 = factor * signed_mode(k0, n0);
            const Index m1 = factor * signed_mode(k1, n1);
            const Index m2 = factor * signed_mode(k2, n2);
            if (2 * std::abs(m0) >= n0 && m0 != 0) continue;
            if (2 * std::abs(m1) >= n1 && m1 != 0) continue;
            if (2 * std::abs(m2) >= n2 && m2 != 0) continue;
            out.at(c, t, k0, k1, k2) =
                s.at(c, t, m0 < 0 ? m0 + n0 : m0, m1 < 0 ? m1 + n1 : m1, m2 < 0 ? m2 + n2 : m2);
          }
  return out;
}

// Inverse re-indexing v[factor * k] = u[k]; modes of u whose image would land
// on or beyond Nyquist are dropped.
template <class Scalar>
SpectrumT<Scalar> undilate(const SpectrumT<Scalar>& s, int factor) {
  if (factor < 1) throw std::invalid_argument("undilate: factor must be >= 1");
  if (factor == 1) return s;
  const auto& g = s.grid;
  auto out = SpectrumT<Scalar>::zeros(g, s.components, s.quantity);
  const Index n0 = g.points[0], n1 = g.points[1], n2 = g.points[2];
  for (int c = 0; c < s.components; ++c)
    for (Index t = 0; t < time_slabs(g); ++t)
      for (Index k0 = 0; k0 < n0; ++k0)
        for (Index k1 = 0; k1 < n1; ++k1)
          for (Index k2 = 0; k2 < n2; ++k2) {
            const Index m0 = factor * signed_mode(k0, n0);
            const Index m1 = factor * signed_mode(k1, n1);
            const Index m2 = factor * signed_mode(k2, n2);
            if (2 * std::abs(m0) >= n0 && m0 != 0) continue;
            if (2 * std::abs(m1) >= n1 && m1 != 0) continue;
            if (2 * std::abs(m2) >= n2 && m2 != 0) continue;
            out.at(c, t, m0 < 0 ? m0 + n0 : m0, m1 < 0 ? m1 + n1 : m1,
                   m2 < 0 ? m2 + n2 : m2) = s.at(c, t, k0, k1, k2);
          }
  return out;
}

template <class Scalar>
DilationReportT<Scalar> dilation_report(const SpectrumT<Scalar>& s, int factor) {
  if (factor < 1) throw std::invalid_argument("dilation_report: factor must be >= 1");
  const auto& g = s.grid;
  const Index n[3] = {g.points[0], g.points[1], g.points[2]};
  DilationReportT<Scalar> rep;
  rep.factor = factor;
  // Coefficients at relative machine-noise level are not counted as modes.
  Scalar peak = 0;
  for (Index i = 0; i < s.data.size(); ++i) peak = std::max(peak, std::norm(s.data[i]));
  const Scalar floor_e = peak * Scalar(1e-26);
  Scalar total = 0, kept = 0;
  for (int c = 0; c < s.components; ++c)
    for (Index t = 0; t < time_slabs(g); ++t)
      for (Index k0 = 0; k0 < n[0]; ++k0)
        for (Index k1 = 0; k1 < n[1]; ++k1)
          for (Index k2 = 0; k2 < n[2]; ++k2) {
            const Scalar e = std::norm(s.at(c, t, k0, k1, k2));
            if (!(e > floor_e)) continue;
            total += e;
            if (factor == 1 || detail::mode_has_image(signed_mode(k0, n[0]),
                                                      signed_mode(k1, n[1]),
                                                      signed_mode(k2, n[2]), n, factor)) {
              kept += e;
              ++rep.modes_retained;
            } else {
              ++rep.modes_dropped;
            }
          }
  rep.retained_energy_fraction = total > Scalar(0) ? kept / total : Scalar(1);
  rep.compatible = rep.retained_energy_fraction >= Scalar(1) - Scalar(1e-12);
  return rep;
}

template <class Scalar>
DilationReportT<Scalar> undilation_report(const SpectrumT<Scalar>& s, int factor) {
  if (factor < 1) throw std::invalid_argument("undilation_report: factor must be >= 1");
  const auto& g = s.grid;
  const Index n[3] = {g.points[0], g.points[1], g.points[2]};
  DilationReportT<Scalar> rep;
  rep.factor = factor;
  Scalar peak = 0;
  for (Index i = 0; i < s.data.size(); ++i) peak = std::max(peak, std::norm(s.data[i]));
  const Scalar floor_e = peak * Scalar(1e-26);
  Scalar total = 0, kept = 0;
  for (int c = 0; c < s.components; ++c)
    for (Index t = 0; t < time_slabs(g); ++t)
      for (Index k0 = 0; k0 < n[0]; ++k0)
        for (Index k1 = 0; k1 < n[1]; ++k1)
          for (Index k2 = 0; k2 < n[2]; ++k2) {
            const Scalar e = std::norm(s.at(c, t, k0, k1, k2));
            if (!(e > floor_e)) continue;
            total += e;
            const Index m[3] = {factor * signed_mode(k0, n[0]), factor * signed_mode(k1, n[1]),
                                factor * signed_mode(k2, n[2])};
            bool fits = true;
            for (int j = 0; j < 3; ++j)
              if (2 * std::abs(m[j]) >= n[j] && m[j] != 0) fits = false;
            if (fits) {
              kept += e;
              ++rep.modes_retained;
            } else {
              ++rep.modes_dropped;
            }
          }
  rep.retained_energy_fraction = total > Scalar(0) ? kept / total : Scalar(1);
  rep.compatible = rep.retained_energy_fraction >= Scalar(1) - Scalar(1e-12);
  return rep;
}

template <class Scalar>
FieldT<Scalar> dilate(const FieldT<Scalar>& f, int factor) {
  if (factor == 1) return f;
  return dft_inverse(dilate(dft_forward(f), factor));
}

template <class Scalar>
FieldT<Scalar> undilate(const FieldT<Scalar>& f, int factor) {
  if (factor == 1) return f;
  return dft_inverse(undilate(dft_forward(f), factor));
}

template <class Scalar>
DilationReportT<Scalar> dilation_report(const FieldT<Scalar>& f, int factor) {
  return dilation_report(dft_forward(f), factor);
}

template <class Scalar>
DilationReportT<Scalar> undilation_report(const FieldT<Scalar>& f, int factor) {
  return undilation_report(dft_forward(f), factor);
}

}  // namespace deforge

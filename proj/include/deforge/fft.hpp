#pragma once

#include <complex>
#include <numbers>
#include <vector>

#include "deforge/core.hpp"

namespace deforge {

inline bool is_pow2(Index n) { return n > 0 && (n & (n - 1)) == 0; }

inline Index next_pow2(Index n) {
  Index p = 1;
  while (p < n) p <<= 1;
  return p;
}

namespace detail {

// Unit roots e^{-i 2 pi j / n} for j < n/2, cached per length and per thread.
template <class Scalar>
const std::complex<Scalar>* twiddle_table(Index n) {
  thread_local std::vector<std::vector<std::complex<Scalar>>> cache;
  int lg = 0;
  while ((Index(1) << lg) < n) ++lg;
  if (Index(cache.size()) <= lg) cache.resize(std::size_t(lg) + 1);
  auto& t = cache[std::size_t(lg)];
  if (t.empty()) {
    t.resize(std::size_t(n / 2));
    for (Index j = 0; j < n / 2; ++j)
      t[std::size_t(j)] = std::polar(
          Scalar(1), Scalar(-2) * std::numbers::pi_v<Scalar> * Scalar(j) / Scalar(n));
  }
  return t.data();
}

template <class Scalar>
void fft_radix2(std::complex<Scalar>* x, Index n, int sign) {
  for (Index i = 1, j = 0; i < n; ++i) {
    Index bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(x[i], x[j]);
  }
  const std::complex<Scalar>* tw = twiddle_table<Scalar>(n);
  for (Index len = 2; len <= n; len <<= 1) {
    const Index stride = n / len;
    for (Index i = 0; i < n; i += len)
      for (Index j = 0; j < len / 2; ++j) {
        auto w = tw[j * stride];
        if (sign > 0) w.imag(-w.imag());
        const auto u = x[i + j];
        const auto v = x[i + j + len / 2] * w;
        x[i + j] = u + v;
        x[i + j + len / 2] = u - v;
      }
  }
}

// Chirp-z (Bluestein) reduction of an arbitrary length to a power of two.
// The chirp exponent is reduced mod 2n before the trig call to keep the
// angle exact for large indices.
template <class Scalar>
void fft_bluestein(std::complex<Scalar>* x, Index n, int sign) {
  const Index m = next_pow2(2 * n - 1);
  std::vector<std::complex<Scalar>> a(m), b(m), chirp(n);
  for (Index j = 0; j < n; ++j) {
    const Index q = Index((static_cast<__int128>(j) * j) % (2 * n));
    chirp[j] =
        std::polar(Scalar(1), Scalar(sign) * std::numbers::pi_v<Scalar> * Scalar(q) / Scalar(n));
  }
  for (Index j = 0; j < n; ++j) a[j] = x[j] * chirp[j];
  b[0] = std::conj(chirp[0]);
  for (Index j = 1; j < n; ++j) b[j] = b[m - j] = std::conj(chirp[j]);
  fft_radix2(a.data(), m, -1);
  fft_radix2(b.data(), m, -1);
  for (Index j = 0; j < m; ++j) a[j] *= b[j];
  fft_radix2(a.data(), m, +1);
  const Scalar inv_m = Scalar(1) / Scalar(m);
  for (Index k = 0; k < n; ++k) x[k] = a[k] * inv_m * chirp[k];
}

}  // namespace detail

// In-place unscaled DFT of length n: sign -1 computes sum_j x_j e^{-i2pi jk/n},
// sign +1 the conjugate sum. No 1/n factor on either direction.
template <class Scalar>
void fft_inplace(std::complex<Scalar>* x, Index n, int sign) {
  if (n <= 1) return;
  if (is_pow2(n))
    detail::fft_radix2(x, n, sign);
  else
    detail::fft_bluestein(x, n, sign);
}

// Batched transform along one axis of a row-major block [n0][n1][n2];
// `axis_len` elements spaced `stride` apart starting at each line base.
template <class Scalar>
void fft_axis(std::complex<Scalar>* data, Index outer, Index axis_len, Index inner, int sign) {
  if (axis_len <= 1) return;
  std::vector<std::complex<Scalar>> line(axis_len);
  for (Index o = 0; o < outer; ++o)
    for (Index i = 0; i < inner; ++i) {
      std::complex<Scalar>* base = data + o * axis_len * inner + i;
      for (Index k = 0; k < axis_len; ++k) line[k] = base[k * inner];
      fft_inplace(line.data(), axis_len, sign);
      for (Index k = 0; k < axis_len; ++k) base[k * inner] = line[k];
    }
}

}  // namespace deforge

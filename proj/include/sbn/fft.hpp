#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <memory>
#include <unordered_map>
#include <vector>

#include "sbn/parallel.hpp"
#include "sbn/tensor.hpp"

namespace sbn {

template <typename T>
using cplx = std::complex<T>;

namespace fft_detail {

constexpr double kTwoPi = 6.283185307179586476925286766559;

inline bool is_pow2(int n) { return n > 0 && (n & (n - 1)) == 0; }

inline int next_pow2(int n) {
  int m = 1;
  while (m < n) m <<= 1;
  return m;
}

// Twiddles and bit-reversal for one power-of-two size. Angles are computed in
// double regardless of T.
template <typename T>
struct Radix2Plan {
  int n = 0;
  std::vector<int> bitrev;
  std::vector<cplx<T>> tw;  // forward twiddles e^{-2pi i k/n}, n/2 entries

  explicit Radix2Plan(int size) : n(size) {
    bitrev.resize(n);
    int bits = 0;
    while ((1 << bits) < n) ++bits;
    for (int i = 0; i < n; ++i) {
      int r = 0;
      for (int b = 0; b < bits; ++b)
        if (i & (1 << b)) r |= 1 << (bits - 1 - b);
      bitrev[i] = r;
    }
    tw.resize(n / 2);
    for (int k = 0; k < n / 2; ++k) {
      double ang = -kTwoPi * k / n;
      tw[k] = cplx<T>(static_cast<T>(std::cos(ang)), static_cast<T>(std::sin(ang)));
    }
  }

  // dir = -1: forward (negative exponent), dir = +1: unnormalized inverse.
  void transform(cplx<T>* a, int dir) const {
    for (int i = 0; i < n; ++i) {
      int j = bitrev[i];
      if (j > i) std::swap(a[i], a[j]);
    }
    for (int len = 2; len <= n; len <<= 1) {
      int half = len >> 1;
      int step = n / len;
      for (int i = 0; i < n; i += len) {
        for (int k = 0; k < half; ++k) {
          cplx<T> w = tw[static_cast<std::size_t>(k) * step];
          if (dir > 0) w = std::conj(w);
          cplx<T> u = a[i + k];
          cplx<T> v = a[i + k + half] * w;
          a[i + k] = u + v;
          a[i + k + half] = u - v;
        }
      }
    }
  }
};

// Bluestein chirp-z fallback for arbitrary sizes; internally runs a
// power-of-two convolution.
template <typename T>
struct BluesteinPlan {
  int n = 0;
  int m = 0;  // pow2 convolution size >= 2n-1
  std::vector<cplx<T>> chirp;    // w_k = e^{-i pi k^2 / n}
  std::vector<cplx<T>> kern_ft;  // FFT of conj-chirp kernel
  Radix2Plan<T> conv;

  explicit BluesteinPlan(int size)
      : n(size), m(next_pow2(2 * size - 1)), conv(next_pow2(2 * size - 1)) {
    chirp.resize(n);
    for (int k = 0; k < n; ++k) {
      // k^2 mod 2n keeps the angle small for large sizes
      std::int64_t q = (static_cast<std::int64_t>(k) * k) % (2 * n);
      double ang = -kTwoPi * 0.5 * static_cast<double>(q) / n;
      chirp[k] = cplx<T>(static_cast<T>(std::cos(ang)), static_cast<T>(std::sin(ang)));
    }
    std::vector<cplx<T>> b(m, cplx<T>(0, 0));
    b[0] = std::conj(chirp[0]);
    for (int k = 1; k < n; ++k) {
      b[k] = std::conj(chirp[k]);
      b[m - k] = std::conj(chirp[k]);
    }
    conv.transform(b.data(), -1);
    kern_ft = std::move(b);
  }

  void forward(cplx<T>* a, std::vector<cplx<T>>& scratch) const {
    scratch.assign(m, cplx<T>(0, 0));
    for (int k = 0; k < n; ++k) scratch[k] = a[k] * chirp[k];
    conv.transform(scratch.data(), -1);
    for (int k = 0; k < m; ++k) scratch[k] *= kern_ft[k];
    conv.transform(scratch.data(), +1);
    T inv_m = T(1) / static_cast<T>(m);
    for (int k = 0; k < n; ++k) a[k] = scratch[k] * inv_m * chirp[k];
  }
};

template <typename T>
struct Plan {
  int n = 1;
  std::unique_ptr<Radix2Plan<T>> r2;
  std::unique_ptr<BluesteinPlan<T>> blu;

  explicit Plan(int size) : n(size) {
    if (n == 1) return;
    if (is_pow2(n))
      r2 = std::make_unique<Radix2Plan<T>>(n);
    else
      blu = std::make_unique<BluesteinPlan<T>>(n);
  }

  void transform(cplx<T>* a, int dir, std::vector<cplx<T>>& scratch) const {
    if (n == 1) return;
    if (r2) {
      r2->transform(a, dir);
      return;
    }
    if (dir < 0) {
      blu->forward(a, scratch);
    } else {
      // unnormalized inverse via conjugation
      for (int k = 0; k < n; ++k) a[k] = std::conj(a[k]);
      blu->forward(a, scratch);
      for (int k = 0; k < n; ++k) a[k] = std::conj(a[k]);
    }
  }
};

// One plan cache per thread; avoids locking on the hot path.
template <typename T>
const Plan<T>& plan_for(int n) {
  thread_local std::unordered_map<int, std::unique_ptr<Plan<T>>> cache;
  auto it = cache.find(n);
  if (it == cache.end())
    it = cache.emplace(n, std::make_unique<Plan<T>>(n)).first;
  return *it->second;
}

template <typename T>
std::vector<cplx<T>>& scratch_buf() {
  thread_local std::vector<cplx<T>> buf;
  return buf;
}

// 1-D unnormalized transform of length n; dir=-1 forward, dir=+1 inverse.
template <typename T>
void dft1(cplx<T>* a, int n, int dir) {
  plan_for<T>(n).transform(a, dir, scratch_buf<T>());
}

}  // namespace fft_detail

inline int packed_width(int w) { return w / 2 + 1; }

// Column multiplicity in the conjugate-extended full spectrum: columns that
// have a distinct mirrored copy count twice (everything except l = 0 and, for
// even W, the Nyquist column).
inline int hermitian_multiplicity(int l, int w) {
  if (l == 0) return 1;
  if (w % 2 == 0 && l == w / 2) return 1;
  return 2;
}

// ---------------------------------------------------------------------------
// Per-slice kernels (one H x W plane at a time)
// ---------------------------------------------------------------------------

// Real 2D DFT of an H x W slice, negative exponent, no normalization; writes
// the packed H x (floor(W/2)+1) half-spectrum.
template <typename T>
void rfft2_slice(const T* x, int h, int w, cplx<T>* out) {
  using fft_detail::dft1;
  const int wp = packed_width(w);
  thread_local std::vector<cplx<T>> rows, col;
  rows.assign(static_cast<std::size_t>(h) * w, cplx<T>(0, 0));
  for (int r = 0; r < h; ++r) {
    cplx<T>* row = rows.data() + static_cast<std::size_t>(r) * w;
    for (int cidx = 0; cidx < w; ++cidx) row[cidx] = cplx<T>(x[r * w + cidx], T(0));
    dft1(row, w, -1);
  }
  col.resize(h);
  for (int l = 0; l < wp; ++l) {
    for (int r = 0; r < h; ++r) col[r] = rows[static_cast<std::size_t>(r) * w + l];
    dft1(col.data(), h, -1);
    for (int r = 0; r < h; ++r) out[static_cast<std::size_t>(r) * wp + l] = col[r];
  }
}

// Conjugate extension of a packed slice to the full H x W spectrum. The packed
// half is authoritative; the redundant half is rebuilt by Hermitian symmetry,
// which keeps the inverse real even for spectra that were modified in place.
template <typename T>
void hermitian_extend_slice(const cplx<T>* s, int h, int wp, int w, cplx<T>* full) {
  for (int k = 0; k < h; ++k) {
    for (int l = 0; l < wp; ++l)
      full[static_cast<std::size_t>(k) * w + l] = s[static_cast<std::size_t>(k) * wp + l];
    for (int l = wp; l < w; ++l) {
      int km = (h - k) % h;
      int lm = w - l;
      full[static_cast<std::size_t>(k) * w + l] =
          std::conj(s[static_cast<std::size_t>(km) * wp + lm]);
    }
  }
}

// Inverse real 2D DFT: conjugate-extend, apply the unnormalized inverse
// transform, scale by 1/(HW) and keep the real part.
template <typename T>
void irfft2_slice(const cplx<T>* s, int h, int wp, int w, T* out) {
  using fft_detail::dft1;
  thread_local std::vector<cplx<T>> full, col;
  full.resize(static_cast<std::size_t>(h) * w);
  hermitian_extend_slice(s, h, wp, w, full.data());
  col.resize(h);
  for (int l = 0; l < w; ++l) {
    for (int r = 0; r < h; ++r) col[r] = full[static_cast<std::size_t>(r) * w + l];
    dft1(col.data(), h, +1);
    for (int r = 0; r < h; ++r) full[static_cast<std::size_t>(r) * w + l] = col[r];
  }
  const T scale = T(1) / static_cast<T>(static_cast<double>(h) * w);
  for (int r = 0; r < h; ++r) {
    cplx<T>* row = full.data() + static_cast<std::size_t>(r) * w;
    dft1(row, w, +1);
    for (int cidx = 0; cidx < w; ++cidx) out[r * w + cidx] = row[cidx].real() * scale;
  }
}

// Adjoint of rfft2_slice: upstream gradient lives on the packed coefficients;
// zero-extend it to full width, run the unnormalized positive-exponent
// transform and take the real part. No Hermitian weighting here — the packed
// coefficients are the literal outputs of the forward map.
template <typename T>
void rfft2_adjoint_slice(const cplx<T>* g, int h, int wp, int w, T* out) {
  using fft_detail::dft1;
  thread_local std::vector<cplx<T>> full, col;
  full.assign(static_cast<std::size_t>(h) * w, cplx<T>(0, 0));
  for (int k = 0; k < h; ++k)
    for (int l = 0; l < wp; ++l)
      full[static_cast<std::size_t>(k) * w + l] = g[static_cast<std::size_t>(k) * wp + l];
  col.resize(h);
  for (int l = 0; l < wp; ++l) {
    for (int r = 0; r < h; ++r) col[r] = full[static_cast<std::size_t>(r) * w + l];
    dft1(col.data(), h, +1);
    for (int r = 0; r < h; ++r) full[static_cast<std::size_t>(r) * w + l] = col[r];
  }
  for (int r = 0; r < h; ++r) {
    cplx<T>* row = full.data() + static_cast<std::size_t>(r) * w;
    dft1(row, w, +1);
    for (int cidx = 0; cidx < w; ++cidx) out[r * w + cidx] = row[cidx].real();
  }
}

// Adjoint of irfft2_slice: forward-transform the upstream spatial gradient,
// keep the packed columns, double the ones whose mirror was folded away and
// scale by 1/(HW).
template <typename T>
void irfft2_adjoint_slice(const T* g, int h, int w, cplx<T>* out) {
  const int wp = packed_width(w);
  rfft2_slice(g, h, w, out);
  const T scale = T(1) / static_cast<T>(static_cast<double>(h) * w);
  for (int k = 0; k < h; ++k)
    for (int l = 0; l < wp; ++l)
      out[static_cast<std::size_t>(k) * wp + l] *=
          scale * static_cast<T>(hermitian_multiplicity(l, w));
}

// ---------------------------------------------------------------------------
// Tensor-level transforms
// ---------------------------------------------------------------------------

template <typename T>
CTensor4<T> rfft2(const Tensor4<T>& x) {
  check(x.height >= 1 && x.width >= 1, "rfft2: empty spatial dims " + x.shape_str());
  CTensor4<T> out(x.batch, x.channels, x.height, packed_width(x.width), x.width);
  const std::int64_t n = static_cast<std::int64_t>(x.batch) * x.channels;
  parallel_for(n, [&](std::int64_t i) {
    int b = static_cast<int>(i / x.channels), c = static_cast<int>(i % x.channels);
    rfft2_slice(x.slice(b, c), x.height, x.width, out.slice(b, c));
  });
  return out;
}

template <typename T>
Tensor4<T> irfft2(const CTensor4<T>& s, int target_width) {
  check(packed_width(target_width) == s.packed_width,
        "irfft2: target_width " + std::to_string(target_width) +
            " inconsistent with packed width " + std::to_string(s.packed_width));
  Tensor4<T> out(s.batch, s.channels, s.height, target_width);
  const std::int64_t n = static_cast<std::int64_t>(s.batch) * s.channels;
  parallel_for(n, [&](std::int64_t i) {
    int b = static_cast<int>(i / s.channels), c = static_cast<int>(i % s.channels);
    irfft2_slice(s.slice(b, c), s.height, s.packed_width, target_width, out.slice(b, c));
  });
  return out;
}

// Textbook O((HW)^2) double-sum DFT of one slice. This is the reference the
// fast path is tested against, and the instrumentation path for magnitude
// maps; guarded so it is never called on anything large.
template <typename T>
std::vector<cplx<T>> naive_dft2(const T* x, int h, int w) {
  check(static_cast<std::int64_t>(h) * w <= 4096, "naive_dft2: slice larger than 4096 elements");
  std::vector<cplx<T>> out(static_cast<std::size_t>(h) * w);
  for (int k = 0; k < h; ++k) {
    for (int l = 0; l < w; ++l) {
      double re = 0, im = 0;
      for (int r = 0; r < h; ++r) {
        for (int cidx = 0; cidx < w; ++cidx) {
          double ang = -fft_detail::kTwoPi * (static_cast<double>(r) * k / h +
                                              static_cast<double>(cidx) * l / w);
          double v = static_cast<double>(x[r * w + cidx]);
          re += v * std::cos(ang);
          im += v * std::sin(ang);
        }
      }
      out[static_cast<std::size_t>(k) * w + l] = cplx<T>(static_cast<T>(re), static_cast<T>(im));
    }
  }
  return out;
}

// Rotate a full-width map so the DC bin lands at (floor(H/2), floor(W/2)).
template <typename E>
std::vector<E> fftshift2(const std::vector<E>& m, int h, int w) {
  std::vector<E> out(m.size());
  const int dr = h / 2, dc = w / 2;
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c)
      out[static_cast<std::size_t>((r + dr) % h) * w + (c + dc) % w] =
          m[static_cast<std::size_t>(r) * w + c];
  return out;
}

// Polar split of a coefficient array; phase normalized to [0, 2pi).
template <typename T>
struct MagnitudePhase {
  std::vector<T> magnitude;
  std::vector<T> phase;
};

template <typename T>
MagnitudePhase<T> magnitude_phase(const cplx<T>* a, std::int64_t n) {
  MagnitudePhase<T> mp;
  mp.magnitude.resize(n);
  mp.phase.resize(n);
  for (std::int64_t i = 0; i < n; ++i) {
    mp.magnitude[i] = std::abs(a[i]);
    T th = std::atan2(a[i].imag(), a[i].real());
    if (th < 0) th += static_cast<T>(fft_detail::kTwoPi);
    if (th >= static_cast<T>(fft_detail::kTwoPi)) th = 0;
    mp.phase[i] = th;
  }
  return mp;
}

}  // namespace sbn

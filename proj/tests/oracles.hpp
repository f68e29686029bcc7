// Reference implementations used only by tests. Everything here is written as
// directly as possible (textbook loops, extended precision) and shares no code
// with the fast paths it checks.
#pragma once

#include <complex>
#include <vector>

#include "sbn/norm.hpp"
#include "sbn/tensor.hpp"

namespace oracle {

using sbn::CTensor4;
using sbn::Tensor4;

// Quadruple-loop cross-correlation with explicit zero padding.
inline Tensor4<double> naive_conv2d(const Tensor4<double>& x, const Tensor4<double>& k, int stride,
                                    int pad) {
  const int B = x.batch, Cin = x.channels, H = x.height, W = x.width;
  const int Cout = k.batch, KH = k.height, KW = k.width;
  const int OH = (H + 2 * pad - KH) / stride + 1;
  const int OW = (W + 2 * pad - KW) / stride + 1;
  Tensor4<double> out(B, Cout, OH, OW);
  for (int b = 0; b < B; ++b)
    for (int co = 0; co < Cout; ++co)
      for (int oh = 0; oh < OH; ++oh)
        for (int ow = 0; ow < OW; ++ow) {
          long double acc = 0;
          for (int ci = 0; ci < Cin; ++ci)
            for (int ki = 0; ki < KH; ++ki)
              for (int kj = 0; kj < KW; ++kj) {
                const int ih = oh * stride + ki - pad;
                const int iw = ow * stride + kj - pad;
                if (ih >= 0 && ih < H && iw >= 0 && iw < W)
                  acc += static_cast<long double>(x.at(b, ci, ih, iw)) * k.at(co, ci, ki, kj);
              }
          out.at(b, co, oh, ow) = static_cast<double>(acc);
        }
  return out;
}

// Triple-loop matrix multiply for the linear layer: out = x * w^T + bias.
inline Tensor4<double> naive_linear(const Tensor4<double>& x, const Tensor4<double>& w,
                                    const Tensor4<double>& bias) {
  const int B = x.batch, F = x.channels, O = w.batch;
  Tensor4<double> out(B, O, 1, 1);
  for (int b = 0; b < B; ++b)
    for (int o = 0; o < O; ++o) {
      long double acc = bias.data[o];
      for (int f = 0; f < F; ++f)
        acc += static_cast<long double>(x.data[b * F + f]) * w.data[o * F + f];
      out.data[b * O + o] = static_cast<double>(acc);
    }
  return out;
}

// Direct log-sum-exp cross entropy at extended precision.
inline double naive_softmax_ce(const Tensor4<double>& logits, const std::vector<int>& labels) {
  const int B = logits.batch, K = logits.channels;
  long double total = 0;
  for (int b = 0; b < B; ++b) {
    const double* row = logits.data.data() + static_cast<std::size_t>(b) * K;
    long double m = row[0];
    for (int k = 1; k < K; ++k) m = std::max<long double>(m, row[k]);
    long double z = 0;
    for (int k = 0; k < K; ++k) z += std::exp(static_cast<long double>(row[k]) - m);
    total += -(static_cast<long double>(row[labels[b]]) - m - std::log(z));
  }
  return static_cast<double>(total / B);
}

// Textbook inverse of a packed half-spectrum: conjugate-extend to the full
// H x W grid, then evaluate the positive-exponent double sum divided by HW.
inline std::vector<double> naive_inverse_from_packed(const std::vector<std::complex<double>>& s,
                                                     int h, int wp, int w) {
  std::vector<std::complex<double>> full(static_cast<std::size_t>(h) * w);
  for (int k = 0; k < h; ++k)
    for (int l = 0; l < w; ++l) {
      if (l < wp)
        full[k * w + l] = s[k * wp + l];
      else
        full[k * w + l] = std::conj(s[((h - k) % h) * wp + (w - l)]);
    }
  std::vector<double> out(static_cast<std::size_t>(h) * w);
  const double two_pi = 6.283185307179586476925286766559;
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      long double re = 0;
      for (int k = 0; k < h; ++k)
        for (int l = 0; l < w; ++l) {
          const double ang = two_pi * (static_cast<double>(r) * k / h + static_cast<double>(c) * l / w);
          re += full[k * w + l].real() * std::cos(ang) - full[k * w + l].imag() * std::sin(ang);
        }
      out[r * w + c] = static_cast<double>(re / (static_cast<long double>(h) * w));
    }
  return out;
}

// Extended-precision per-channel complex statistics.
inline void naive_complex_stats(const CTensor4<double>& s, std::vector<std::complex<double>>& mean,
                                std::vector<double>& var) {
  const int C = s.channels;
  const long double n = static_cast<long double>(s.batch) * s.height * s.packed_width;
  mean.assign(C, {0, 0});
  var.assign(C, 0);
  for (int c = 0; c < C; ++c) {
    long double sre = 0, sim = 0;
    for (int b = 0; b < s.batch; ++b) {
      const std::complex<double>* p = s.slice(b, c);
      for (int i = 0; i < s.height * s.packed_width; ++i) {
        sre += p[i].real();
        sim += p[i].imag();
      }
    }
    const long double mre = sre / n, mim = sim / n;
    long double v = 0;
    for (int b = 0; b < s.batch; ++b) {
      const std::complex<double>* p = s.slice(b, c);
      for (int i = 0; i < s.height * s.packed_width; ++i) {
        const long double dr = p[i].real() - mre, di = p[i].imag() - mim;
        v += dr * dr + di * di;
      }
    }
    mean[c] = {static_cast<double>(mre), static_cast<double>(mim)};
    var[c] = static_cast<double>(v / n);
  }
}

// Step-by-step SBN forward through the reference transforms: naive DFT,
// extended-precision statistics, normalize/affine, naive inverse.
inline Tensor4<double> naive_sbn_full(const Tensor4<double>& x, double gamma, double beta,
                                      double eps) {
  const int B = x.batch, C = x.channels, H = x.height, W = x.width;
  const int Wp = W / 2 + 1;
  CTensor4<double> spec(B, C, H, Wp, W);
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c) {
      std::vector<std::complex<double>> full = sbn::naive_dft2(x.slice(b, c), H, W);
      for (int k = 0; k < H; ++k)
        for (int l = 0; l < Wp; ++l) spec.slice(b, c)[k * Wp + l] = full[k * W + l];
    }
  std::vector<std::complex<double>> mean;
  std::vector<double> var;
  naive_complex_stats(spec, mean, var);
  Tensor4<double> out(B, C, H, W);
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c) {
      std::vector<std::complex<double>> mod(static_cast<std::size_t>(H) * Wp);
      const double d = 1.0 / std::sqrt(var[c] + eps);
      for (int i = 0; i < H * Wp; ++i) {
        const std::complex<double> z = (spec.slice(b, c)[i] - mean[c]) * d;
        mod[i] = {gamma * z.real() + beta, gamma * z.imag()};
      }
      std::vector<double> inv = naive_inverse_from_packed(mod, H, Wp, W);
      std::copy(inv.begin(), inv.end(), out.slice(b, c));
    }
  return out;
}

}  // namespace oracle

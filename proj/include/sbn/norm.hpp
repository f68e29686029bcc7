#pragma once

#include <complex>
#include <cstdint>
#include <string>
#include <vector>

#include "sbn/autograd.hpp"
#include "sbn/fft.hpp"
#include "sbn/tensor.hpp"

namespace sbn {

// train: batch statistics, running stats updated.
// eval:  running statistics, no mutation.
// probe: batch statistics without touching running stats — used for gradient
//        checks and for instrumentation snapshots during training.
enum class Mode { train, eval, probe };

enum class SbnVariant {
  full,
  mean_only,
  std_only,
  normalize_no_affine,
  downscale,
  affine_only,
  split_real_imag,
};

inline const char* variant_name(SbnVariant v) {
  switch (v) {
    case SbnVariant::full: return "full";
    case SbnVariant::mean_only: return "mean_only";
    case SbnVariant::std_only: return "std_only";
    case SbnVariant::normalize_no_affine: return "normalize_no_affine";
    case SbnVariant::downscale: return "downscale";
    case SbnVariant::affine_only: return "affine_only";
    case SbnVariant::split_real_imag: return "split_real_imag";
  }
  return "?";
}

inline bool variant_has_affine(SbnVariant v) {
  return v == SbnVariant::full || v == SbnVariant::affine_only ||
         v == SbnVariant::split_real_imag;
}

inline bool variant_uses_stats(SbnVariant v) {
  return v == SbnVariant::full || v == SbnVariant::mean_only || v == SbnVariant::std_only ||
         v == SbnVariant::normalize_no_affine || v == SbnVariant::split_real_imag;
}

// Which count feeds the n/(n-1) unbiased correction of the running variance:
// `actual` uses the true number of averaged coefficients per channel
// (B*H*Wp); `paper` uses C*H*W/2 verbatim.
enum class NMode { actual, paper };

// ---------------------------------------------------------------------------
// Standard batch normalization
// ---------------------------------------------------------------------------

template <typename T>
struct BnState {
  Tensor4<T> gamma, beta;  // [1,C,1,1]
  std::vector<T> running_mean, running_var;
  T momentum = static_cast<T>(0.1);  // weight of the new batch statistic
  T eps = static_cast<T>(1e-5);

  BnState() = default;
  explicit BnState(int channels)
      : gamma(1, channels, 1, 1, T(1)),
        beta(1, channels, 1, 1, T(0)),
        running_mean(channels, T(0)),
        running_var(channels, T(1)) {}

  int channels() const { return gamma.channels; }
};

template <typename T>
struct BnSaved {
  std::vector<T> mean, invstd;
  bool batch_stats = true;
  std::int64_t count = 0;
};

template <typename T>
Tensor4<T> batchnorm_apply(const Tensor4<T>& x, BnState<T>& st, Mode mode,
                           BnSaved<T>* saved = nullptr) {
  const int B = x.batch, C = x.channels, H = x.height, W = x.width;
  check(C == st.channels(), "batchnorm: channel mismatch " + x.shape_str());
  const std::int64_t n = static_cast<std::int64_t>(B) * H * W;
  const bool batch_stats = mode != Mode::eval;
  if (batch_stats) check(n >= 2, "batchnorm: needs at least 2 values per channel in train mode");

  std::vector<T> mean(C), invstd(C);
  std::vector<double> var(C);
  if (batch_stats) {
    parallel_for(C, [&](std::int64_t c) {
      double s = 0;
      for (int b = 0; b < B; ++b) {
        const T* p = x.slice(b, static_cast<int>(c));
        for (int i = 0; i < H * W; ++i) s += p[i];
      }
      const double m = s / static_cast<double>(n);
      double v = 0;
      for (int b = 0; b < B; ++b) {
        const T* p = x.slice(b, static_cast<int>(c));
        for (int i = 0; i < H * W; ++i) {
          const double d = p[i] - m;
          v += d * d;
        }
      }
      v /= static_cast<double>(n);
      mean[c] = static_cast<T>(m);
      var[c] = v;
      invstd[c] = static_cast<T>(1.0 / std::sqrt(v + static_cast<double>(st.eps)));
    });
    if (mode == Mode::train) {
      const double lam = st.momentum;
      const double corr = static_cast<double>(n) / static_cast<double>(n - 1);
      for (int c = 0; c < C; ++c) {
        st.running_mean[c] = static_cast<T>(lam * mean[c] + (1.0 - lam) * st.running_mean[c]);
        st.running_var[c] = static_cast<T>(lam * var[c] * corr + (1.0 - lam) * st.running_var[c]);
      }
    }
  } else {
    for (int c = 0; c < C; ++c) {
      check(st.running_var[c] >= T(0), "batchnorm: negative running variance (corrupted state)");
      mean[c] = st.running_mean[c];
      invstd[c] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(st.running_var[c]) +
                                                 static_cast<double>(st.eps)));
    }
  }

  Tensor4<T> y(B, C, H, W);
  parallel_for(static_cast<std::int64_t>(B) * C, [&](std::int64_t t) {
    const int b = static_cast<int>(t / C), c = static_cast<int>(t % C);
    const T g = st.gamma.data[c], be = st.beta.data[c], m = mean[c], d = invstd[c];
    const T* xs = x.slice(b, c);
    T* ys = y.slice(b, c);
    for (int i = 0; i < H * W; ++i) ys[i] = g * (xs[i] - m) * d + be;
  });

  if (saved) {
    saved->mean = std::move(mean);
    saved->invstd = std::move(invstd);
    saved->batch_stats = batch_stats;
    saved->count = n;
  }
  return y;
}

template <typename T>
void batchnorm_backward(const Tensor4<T>& x, const Tensor4<T>& g, const Tensor4<T>& gamma,
                        const BnSaved<T>& sv, Tensor4<T>& dx, Tensor4<T>& dgamma,
                        Tensor4<T>& dbeta) {
  const int B = x.batch, C = x.channels, H = x.height, W = x.width;
  dx = Tensor4<T>(B, C, H, W);
  dgamma = Tensor4<T>(1, C, 1, 1);
  dbeta = Tensor4<T>(1, C, 1, 1);
  const double n = static_cast<double>(sv.count);
  parallel_for(C, [&](std::int64_t ci) {
    const int c = static_cast<int>(ci);
    const T m = sv.mean[c], d = sv.invstd[c], gam = gamma.data[c];
    double s1 = 0, s2 = 0;
    for (int b = 0; b < B; ++b) {
      const T* gs = g.slice(b, c);
      const T* xs = x.slice(b, c);
      for (int i = 0; i < H * W; ++i) {
        s1 += gs[i];
        s2 += gs[i] * ((xs[i] - m) * d);
      }
    }
    dgamma.data[c] = static_cast<T>(s2);
    dbeta.data[c] = static_cast<T>(s1);
    if (sv.batch_stats) {
      const T c1 = static_cast<T>(s1 / n), c2 = static_cast<T>(s2 / n);
      for (int b = 0; b < B; ++b) {
        const T* gs = g.slice(b, c);
        const T* xs = x.slice(b, c);
        T* dxs = dx.slice(b, c);
        for (int i = 0; i < H * W; ++i)
          dxs[i] = gam * d * (gs[i] - c1 - ((xs[i] - m) * d) * c2);
      }
    } else {
      for (int b = 0; b < B; ++b) {
        const T* gs = g.slice(b, c);
        T* dxs = dx.slice(b, c);
        for (int i = 0; i < H * W; ++i) dxs[i] = gam * d * gs[i];
      }
    }
  });
}

// Standalone forward matching the layer contract (affine included).
template <typename T>
Tensor4<T> batchnorm_forward(const Tensor4<T>& x, BnState<T>& st, Mode mode) {
  return batchnorm_apply(x, st, mode);
}

// ---------------------------------------------------------------------------
// Spectral batch normalization
// ---------------------------------------------------------------------------

template <typename T>
struct ComplexBatchStats {
  std::vector<std::complex<T>> mean;  // per channel
  std::vector<T> var;                 // mean squared modulus of deviations
  std::int64_t count = 0;             // coefficients averaged per channel
};

// Channel-wise complex mean and variance over (batch, freq-row, freq-col).
template <typename T>
ComplexBatchStats<T> complex_batch_stats(const CTensor4<T>& s) {
  const int B = s.batch, C = s.channels, H = s.height, Wp = s.packed_width;
  const std::int64_t n = static_cast<std::int64_t>(B) * H * Wp;
  check(n >= 2, "complex_batch_stats: fewer than 2 coefficients per channel");
  ComplexBatchStats<T> st;
  st.mean.resize(C);
  st.var.resize(C);
  st.count = n;
  parallel_for(C, [&](std::int64_t ci) {
    const int c = static_cast<int>(ci);
    double sre = 0, sim = 0;
    for (int b = 0; b < B; ++b) {
      const std::complex<T>* p = s.slice(b, c);
      for (int i = 0; i < H * Wp; ++i) {
        sre += p[i].real();
        sim += p[i].imag();
      }
    }
    const double mre = sre / static_cast<double>(n), mim = sim / static_cast<double>(n);
    double v = 0;
    for (int b = 0; b < B; ++b) {
      const std::complex<T>* p = s.slice(b, c);
      for (int i = 0; i < H * Wp; ++i) {
        const double dr = p[i].real() - mre, di = p[i].imag() - mim;
        v += dr * dr + di * di;
      }
    }
    st.mean[c] = std::complex<T>(static_cast<T>(mre), static_cast<T>(mim));
    st.var[c] = static_cast<T>(v / static_cast<double>(n));
  });
  return st;
}

// Per-plane (real/imag separately) statistics, for the split variant.
template <typename T>
void split_plane_stats(const CTensor4<T>& s, std::vector<T>& mean_re, std::vector<T>& var_re,
                       std::vector<T>& mean_im, std::vector<T>& var_im) {
  const int B = s.batch, C = s.channels, H = s.height, Wp = s.packed_width;
  const std::int64_t n = static_cast<std::int64_t>(B) * H * Wp;
  check(n >= 2, "split_plane_stats: fewer than 2 coefficients per channel");
  mean_re.resize(C);
  var_re.resize(C);
  mean_im.resize(C);
  var_im.resize(C);
  parallel_for(C, [&](std::int64_t ci) {
    const int c = static_cast<int>(ci);
    double sre = 0, sim = 0;
    for (int b = 0; b < B; ++b) {
      const std::complex<T>* p = s.slice(b, c);
      for (int i = 0; i < H * Wp; ++i) {
        sre += p[i].real();
        sim += p[i].imag();
      }
    }
    const double mre = sre / static_cast<double>(n), mim = sim / static_cast<double>(n);
    double vre = 0, vim = 0;
    for (int b = 0; b < B; ++b) {
      const std::complex<T>* p = s.slice(b, c);
      for (int i = 0; i < H * Wp; ++i) {
        const double dr = p[i].real() - mre, di = p[i].imag() - mim;
        vre += dr * dr;
        vim += di * di;
      }
    }
    mean_re[c] = static_cast<T>(mre);
    var_re[c] = static_cast<T>(vre / static_cast<double>(n));
    mean_im[c] = static_cast<T>(mim);
    var_im[c] = static_cast<T>(vim / static_cast<double>(n));
  });
}

template <typename T>
struct SbnState {
  Tensor4<T> gamma, beta;  // real, per channel
  std::vector<std::complex<T>> running_mean;
  std::vector<T> running_var;
  std::vector<T> running_var_im;  // split variant: running_var holds the real plane
  T momentum = static_cast<T>(0.1);  // weight of the new batch statistic
  T eps = static_cast<T>(1e-5);
  SbnVariant variant = SbnVariant::full;
  NMode n_mode = NMode::actual;
  T downscale_alpha = T(1);

  SbnState() = default;
  explicit SbnState(int channels)
      : gamma(1, channels, 1, 1, T(1)),
        beta(1, channels, 1, 1, T(0)),
        running_mean(channels, std::complex<T>(0, 0)),
        running_var(channels, T(1)),
        running_var_im(channels, T(1)) {}

  int channels() const { return gamma.channels; }
};

// Count feeding the n/(n-1) correction, resolved per convention.
template <typename T>
double sbn_correction_count(const SbnState<T>& st, int b, int c, int h, int wp, int w) {
  if (st.n_mode == NMode::actual) return static_cast<double>(b) * h * wp;
  (void)c;
  return static_cast<double>(st.gamma.channels) * h * w / 2.0;
}

template <typename T>
void sbn_update_running(SbnState<T>& st, const ComplexBatchStats<T>& stats, double n_corr) {
  check(n_corr > 1.0, "sbn: unbiased correction needs n > 1, got n = " + std::to_string(n_corr));
  const double lam = st.momentum;
  const double corr = n_corr / (n_corr - 1.0);
  for (int c = 0; c < st.channels(); ++c) {
    st.running_mean[c] = std::complex<T>(
        static_cast<T>(lam * stats.mean[c].real() + (1.0 - lam) * st.running_mean[c].real()),
        static_cast<T>(lam * stats.mean[c].imag() + (1.0 - lam) * st.running_mean[c].imag()));
    st.running_var[c] =
        static_cast<T>(lam * stats.var[c] * corr + (1.0 - lam) * st.running_var[c]);
  }
}

// What the backward pass needs from the forward pass. Per-channel only; the
// input spectrum itself is read back from the tape.
template <typename T>
struct SbnSaved {
  SbnVariant variant = SbnVariant::full;
  bool batch_stats = true;
  std::int64_t count = 0;
  std::vector<T> mean_re, mean_im;
  std::vector<T> invstd;     // full / std_only / normalize_no_affine; real plane for split
  std::vector<T> invstd_im;  // split only
  T alpha = T(1);
};

// Optional probe of the internal steps, used by tests and instrumentation.
template <typename T>
struct SbnCapture {
  ComplexBatchStats<T> stats;
  CTensor4<T> pre;         // spectrum entering the layer
  CTensor4<T> normalized;  // after subtract/divide, before affine
  CTensor4<T> post;        // spectrum leaving the layer
};

// Forward transform of a packed spectrum for every variant. Statistics come
// from the batch in train/probe mode and from the running state in eval mode;
// only train mode writes the running state back.
template <typename T>
CTensor4<T> sbn_apply_spectrum(const CTensor4<T>& s, SbnState<T>& st, Mode mode,
                               SbnSaved<T>* saved = nullptr, SbnCapture<T>* cap = nullptr) {
  const int B = s.batch, C = s.channels, H = s.height, Wp = s.packed_width;
  check(C == st.channels(), "sbn: channel mismatch " + s.shape_str());
  const bool batch_stats = mode != Mode::eval;
  const SbnVariant v = st.variant;

  std::vector<T> mean_re(C, T(0)), mean_im(C, T(0)), invstd(C, T(1)), invstd_im(C, T(1));
  ComplexBatchStats<T> stats;

  if (v == SbnVariant::downscale) {
    check(st.downscale_alpha > T(0), "sbn: downscale alpha must be > 0");
  } else if (variant_uses_stats(v)) {
    if (batch_stats) {
      if (v == SbnVariant::split_real_imag) {
        std::vector<T> vre, vim;
        split_plane_stats(s, mean_re, vre, mean_im, vim);
        for (int c = 0; c < C; ++c) {
          invstd[c] = static_cast<T>(
              1.0 / std::sqrt(static_cast<double>(vre[c]) + static_cast<double>(st.eps)));
          invstd_im[c] = static_cast<T>(
              1.0 / std::sqrt(static_cast<double>(vim[c]) + static_cast<double>(st.eps)));
        }
        if (mode == Mode::train) {
          const double n_corr = sbn_correction_count(st, B, C, H, Wp, s.spatial_width);
          check(n_corr > 1.0, "sbn: unbiased correction needs n > 1");
          const double lam = st.momentum, corr = n_corr / (n_corr - 1.0);
          for (int c = 0; c < C; ++c) {
            st.running_mean[c] = std::complex<T>(
                static_cast<T>(lam * mean_re[c] + (1.0 - lam) * st.running_mean[c].real()),
                static_cast<T>(lam * mean_im[c] + (1.0 - lam) * st.running_mean[c].imag()));
            st.running_var[c] =
                static_cast<T>(lam * vre[c] * corr + (1.0 - lam) * st.running_var[c]);
            st.running_var_im[c] =
                static_cast<T>(lam * vim[c] * corr + (1.0 - lam) * st.running_var_im[c]);
          }
        }
      } else {
        stats = complex_batch_stats(s);
        for (int c = 0; c < C; ++c) {
          mean_re[c] = stats.mean[c].real();
          mean_im[c] = stats.mean[c].imag();
          invstd[c] = static_cast<T>(
              1.0 / std::sqrt(static_cast<double>(stats.var[c]) + static_cast<double>(st.eps)));
        }
        if (mode == Mode::train)
          sbn_update_running(st, stats, sbn_correction_count(st, B, C, H, Wp, s.spatial_width));
      }
    } else {
      for (int c = 0; c < C; ++c) {
        check(st.running_var[c] >= T(0), "sbn: negative running variance (corrupted state)");
        mean_re[c] = st.running_mean[c].real();
        mean_im[c] = st.running_mean[c].imag();
        invstd[c] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(st.running_var[c]) +
                                                   static_cast<double>(st.eps)));
        if (v == SbnVariant::split_real_imag) {
          check(st.running_var_im[c] >= T(0), "sbn: negative running variance (corrupted state)");
          invstd_im[c] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(st.running_var_im[c]) +
                                                        static_cast<double>(st.eps)));
        }
      }
    }
  }

  if (cap) cap->pre = s;

  // Normalize step (variant-dependent), then affine where the variant has one.
  CTensor4<T> out(B, C, H, Wp, s.spatial_width);
  CTensor4<T>* norm_cap = nullptr;
  if (cap) {
    cap->normalized = CTensor4<T>(B, C, H, Wp, s.spatial_width);
    norm_cap = &cap->normalized;
  }
  parallel_for(static_cast<std::int64_t>(B) * C, [&](std::int64_t t) {
    const int b = static_cast<int>(t / C), c = static_cast<int>(t % C);
    const std::complex<T>* in = s.slice(b, c);
    std::complex<T>* o = out.slice(b, c);
    std::complex<T>* nc = norm_cap ? norm_cap->slice(b, c) : nullptr;
    const T mre = mean_re[c], mim = mean_im[c], d = invstd[c], dim = invstd_im[c];
    const T g = st.gamma.data[c], be = st.beta.data[c];
    const int n = H * Wp;
    for (int i = 0; i < n; ++i) {
      T a = in[i].real(), bb = in[i].imag();
      T na, nb;
      switch (v) {
        case SbnVariant::full:
        case SbnVariant::normalize_no_affine:
          na = (a - mre) * d;
          nb = (bb - mim) * d;
          break;
        case SbnVariant::mean_only:
          na = a - mre;
          nb = bb - mim;
          break;
        case SbnVariant::std_only:
          na = a * d;
          nb = bb * d;
          break;
        case SbnVariant::downscale:
          na = a / st.downscale_alpha;
          nb = bb / st.downscale_alpha;
          break;
        case SbnVariant::affine_only:
          na = a;
          nb = bb;
          break;
        case SbnVariant::split_real_imag:
          na = (a - mre) * d;
          nb = (bb - mim) * dim;
          break;
      }
      if (nc) nc[i] = std::complex<T>(na, nb);
      if (variant_has_affine(v))
        o[i] = std::complex<T>(g * na + be, g * nb);  // real beta shifts real parts only
      else
        o[i] = std::complex<T>(na, nb);
    }
  });

  if (saved) {
    saved->variant = v;
    saved->batch_stats = batch_stats;
    saved->count = static_cast<std::int64_t>(B) * H * Wp;
    saved->mean_re = std::move(mean_re);
    saved->mean_im = std::move(mean_im);
    saved->invstd = std::move(invstd);
    saved->invstd_im = std::move(invstd_im);
    saved->alpha = st.downscale_alpha;
  }
  if (cap) {
    if (batch_stats && variant_uses_stats(v) && v != SbnVariant::split_real_imag)
      cap->stats = stats;
    cap->post = out;
  }
  return out;
}

// Reverse-mode rule through the normalize+affine step. The statistics couple
// every coefficient of a channel, so the gradient carries the usual two
// batch-norm correction sums; in eval mode the statistics are constants and
// the map is a plain per-channel scale.
template <typename T>
void sbn_backward_spectrum(const CTensor4<T>& s, const CTensor4<T>& g, const Tensor4<T>& gamma,
                           const SbnSaved<T>& sv, CTensor4<T>& ds, Tensor4<T>& dgamma,
                           Tensor4<T>& dbeta) {
  const int B = s.batch, C = s.channels, H = s.height, Wp = s.packed_width;
  const int n = H * Wp;
  const double N = static_cast<double>(sv.count);
  ds = CTensor4<T>(B, C, H, Wp, s.spatial_width);
  dgamma = Tensor4<T>(1, C, 1, 1);
  dbeta = Tensor4<T>(1, C, 1, 1);
  parallel_for(C, [&](std::int64_t ci) {
    const int c = static_cast<int>(ci);
    const T mre = sv.mean_re[c], mim = sv.mean_im[c];
    const T d = sv.invstd[c], dim = sv.invstd_im[c];
    const T gam = gamma.data[c];

    // First pass: channel-wide sums.
    double s1a = 0, s1b = 0, s2 = 0, s2b = 0, p = 0;
    for (int b = 0; b < B; ++b) {
      const std::complex<T>* gs = g.slice(b, c);
      const std::complex<T>* xs = s.slice(b, c);
      for (int i = 0; i < n; ++i) {
        const double ga = gs[i].real(), gb = gs[i].imag();
        const double a = xs[i].real(), bb = xs[i].imag();
        s1a += ga;
        s1b += gb;
        switch (sv.variant) {
          case SbnVariant::full:
          case SbnVariant::normalize_no_affine:
            s2 += ga * ((a - mre) * d) + gb * ((bb - mim) * d);
            break;
          case SbnVariant::std_only:
            p += ga * a + gb * bb;
            break;
          case SbnVariant::affine_only:
            s2 += ga * a + gb * bb;
            break;
          case SbnVariant::split_real_imag:
            s2 += ga * ((a - mre) * d);
            s2b += gb * ((bb - mim) * dim);
            break;
          default:
            break;
        }
      }
    }

    switch (sv.variant) {
      case SbnVariant::full:
        dgamma.data[c] = static_cast<T>(s2);
        dbeta.data[c] = static_cast<T>(s1a);
        break;
      case SbnVariant::affine_only:
        dgamma.data[c] = static_cast<T>(s2);
        dbeta.data[c] = static_cast<T>(s1a);
        break;
      case SbnVariant::split_real_imag:
        dgamma.data[c] = static_cast<T>(s2 + s2b);
        dbeta.data[c] = static_cast<T>(s1a);
        break;
      default:
        break;  // variant has no affine parameters
    }

    // Second pass: per-coefficient gradient.
    for (int b = 0; b < B; ++b) {
      const std::complex<T>* gs = g.slice(b, c);
      const std::complex<T>* xs = s.slice(b, c);
      std::complex<T>* dss = ds.slice(b, c);
      for (int i = 0; i < n; ++i) {
        const double ga = gs[i].real(), gb = gs[i].imag();
        const double a = xs[i].real(), bb = xs[i].imag();
        double da = 0, db = 0;
        switch (sv.variant) {
          case SbnVariant::full:
          case SbnVariant::normalize_no_affine: {
            const double scale = (sv.variant == SbnVariant::full) ? gam * d : d;
            if (sv.batch_stats) {
              da = scale * (ga - s1a / N - ((a - mre) * d) * (s2 / N));
              db = scale * (gb - s1b / N - ((bb - mim) * d) * (s2 / N));
            } else {
              da = scale * ga;
              db = scale * gb;
            }
            break;
          }
          case SbnVariant::mean_only:
            if (sv.batch_stats) {
              da = ga - s1a / N;
              db = gb - s1b / N;
            } else {
              da = ga;
              db = gb;
            }
            break;
          case SbnVariant::std_only:
            if (sv.batch_stats) {
              const double d3 = static_cast<double>(d) * d * d;
              da = d * ga - d3 * (a - mre) / N * p;
              db = d * gb - d3 * (bb - mim) / N * p;
            } else {
              da = d * ga;
              db = d * gb;
            }
            break;
          case SbnVariant::downscale:
            da = ga / sv.alpha;
            db = gb / sv.alpha;
            break;
          case SbnVariant::affine_only:
            da = gam * ga;
            db = gam * gb;
            break;
          case SbnVariant::split_real_imag:
            if (sv.batch_stats) {
              da = gam * d * (ga - s1a / N - ((a - mre) * d) * (s2 / N));
              db = gam * dim * (gb - s1b / N - ((bb - mim) * dim) * (s2b / N));
            } else {
              da = gam * d * ga;
              db = gam * dim * gb;
            }
            break;
        }
        dss[i] = std::complex<T>(static_cast<T>(da), static_cast<T>(db));
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Tape integration and standalone layer forwards
// ---------------------------------------------------------------------------

template <typename T>
int batchnorm_node(Tape<T>& t, int x, int gamma_leaf, int beta_leaf, BnState<T>& st, Mode mode) {
  BnSaved<T> saved;
  Tensor4<T> y = batchnorm_apply(t.rval(x), st, mode, t.grad_enabled() ? &saved : nullptr);
  return t.push(std::move(y),
                [x, gamma_leaf, beta_leaf, saved = std::move(saved)](Tape<T>& tp, int self) {
                  Tensor4<T> dx, dg, db;
                  batchnorm_backward(tp.rval(x), tp.radj(self), tp.rval(gamma_leaf), saved, dx, dg,
                                     db);
                  tp.add_radj(x, dx);
                  tp.add_radj(gamma_leaf, dg);
                  tp.add_radj(beta_leaf, db);
                });
}

template <typename T>
int sbn_spectrum_node(Tape<T>& t, int spec, int gamma_leaf, int beta_leaf, SbnState<T>& st,
                      Mode mode, SbnCapture<T>* cap = nullptr) {
  SbnSaved<T> saved;
  CTensor4<T> y = sbn_apply_spectrum(t.cval(spec), st, mode, t.grad_enabled() ? &saved : nullptr, cap);
  return t.push(std::move(y),
                [spec, gamma_leaf, beta_leaf, saved = std::move(saved)](Tape<T>& tp, int self) {
                  CTensor4<T> ds;
                  Tensor4<T> dg, db;
                  sbn_backward_spectrum(tp.cval(spec), tp.cadj(self), tp.rval(gamma_leaf), saved,
                                        ds, dg, db);
                  tp.add_cadj(spec, ds);
                  if (variant_has_affine(saved.variant)) {
                    tp.add_radj(gamma_leaf, dg);
                    tp.add_radj(beta_leaf, db);
                  }
                });
}

// rfft2 -> normalize/affine -> irfft2, recorded on the tape. The running-stat
// update inside happens at forward time and is not differentiated.
template <typename T>
int sbn_layer_node(Tape<T>& t, int x, int gamma_leaf, int beta_leaf, SbnState<T>& st, Mode mode,
                   SbnCapture<T>* cap = nullptr) {
  check(t.rval(x).all_finite(), "sbn: non-finite input");
  const int w = t.rval(x).width;
  int spec = t.rfft2(x);
  int ns = sbn_spectrum_node(t, spec, gamma_leaf, beta_leaf, st, mode, cap);
  return t.irfft2(ns, w);
}

template <typename T>
Tensor4<T> sbn_forward_train(const Tensor4<T>& x, SbnState<T>& st, SbnCapture<T>* cap = nullptr) {
  check(x.all_finite(), "sbn: non-finite input");
  CTensor4<T> spec = rfft2(x);
  CTensor4<T> y = sbn_apply_spectrum(spec, st, Mode::train, static_cast<SbnSaved<T>*>(nullptr), cap);
  return irfft2(y, x.width);
}

template <typename T>
Tensor4<T> sbn_forward_eval(const Tensor4<T>& x, const SbnState<T>& st,
                            SbnCapture<T>* cap = nullptr) {
  check(x.all_finite(), "sbn: non-finite input");
  CTensor4<T> spec = rfft2(x);
  auto& mut = const_cast<SbnState<T>&>(st);  // eval path never writes state
  CTensor4<T> y = sbn_apply_spectrum(spec, mut, Mode::eval, static_cast<SbnSaved<T>*>(nullptr), cap);
  return irfft2(y, x.width);
}

// Probe: batch statistics, no state mutation.
template <typename T>
Tensor4<T> sbn_forward_probe(const Tensor4<T>& x, const SbnState<T>& st,
                             SbnCapture<T>* cap = nullptr) {
  check(x.all_finite(), "sbn: non-finite input");
  CTensor4<T> spec = rfft2(x);
  auto& mut = const_cast<SbnState<T>&>(st);
  CTensor4<T> y = sbn_apply_spectrum(spec, mut, Mode::probe, static_cast<SbnSaved<T>*>(nullptr), cap);
  return irfft2(y, x.width);
}

}  // namespace sbn

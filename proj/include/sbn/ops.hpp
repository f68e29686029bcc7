#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

#include "sbn/parallel.hpp"
#include "sbn/rng.hpp"
#include "sbn/tensor.hpp"

namespace sbn {

namespace ops_detail {

// Dot product with eight independent lanes so the compiler can keep it in one
// SIMD accumulator; the reduction order is fixed regardless of width.
template <typename T>
inline T dot8(const T* a, const T* b, int n) {
  T lane[8] = {T(0), T(0), T(0), T(0), T(0), T(0), T(0), T(0)};
  int i = 0;
  for (; i + 8 <= n; i += 8)
    for (int j = 0; j < 8; ++j) lane[j] += a[i + j] * b[i + j];
  T tail = T(0);
  for (; i < n; ++i) tail += a[i] * b[i];
  return (((lane[0] + lane[1]) + (lane[2] + lane[3])) +
          ((lane[4] + lane[5]) + (lane[6] + lane[7]))) +
         tail;
}

// Valid output range [lo, hi] for one kernel offset: indices where
// o*stride + k - pad stays inside [0, limit).
inline void conv_bounds(int k, int pad, int stride, int limit, int out_limit, int& lo, int& hi) {
  int shift = pad - k;
  lo = shift > 0 ? (shift + stride - 1) / stride : 0;
  int top = limit - 1 - k + pad;
  hi = top < 0 ? -1 : std::min(out_limit - 1, top / stride);
}

// --- small register-blocked GEMM -------------------------------------------
// C[M,N] += A * B with C and B row-major and B rows contiguous along N; A is
// accessed through explicit strides so the same kernel serves A and A^T. Every
// C element accumulates in one fixed order (k ascending, lanes fixed), so
// results do not depend on how callers partition M across threads.

template <typename T>
constexpr int gemm_nr() {
  return sizeof(T) == 8 ? 8 : 16;
}
constexpr int kGemmMr = 4;

// Explicit 32-byte vector tile; keeps the accumulators in registers, which the
// autovectorizer does not manage reliably for this loop shape.
template <typename T, int MR, int NR>
inline void gemm_micro(const T* a, std::int64_t ars, std::int64_t acs, const T* b, int ldb, T* c,
                       int ldc, int K) {
#if defined(__GNUC__) || defined(__clang__)
  typedef T vec __attribute__((vector_size(32)));
  constexpr int VL = static_cast<int>(32 / sizeof(T));
  constexpr int NV = NR / VL;
  static_assert(NR % VL == 0);
  vec acc[MR][NV] = {};
  for (int k = 0; k < K; ++k) {
    const T* br = b + static_cast<std::int64_t>(k) * ldb;
    vec bv[NV];
    for (int v = 0; v < NV; ++v) __builtin_memcpy(&bv[v], br + v * VL, sizeof(vec));
    for (int i = 0; i < MR; ++i) {
      const T av = a[i * ars + k * acs];
      for (int v = 0; v < NV; ++v) acc[i][v] += bv[v] * av;
    }
  }
  for (int i = 0; i < MR; ++i)
    for (int v = 0; v < NV; ++v) {
      vec cv;
      __builtin_memcpy(&cv, c + i * ldc + v * VL, sizeof(vec));
      cv += acc[i][v];
      __builtin_memcpy(c + i * ldc + v * VL, &cv, sizeof(vec));
    }
#else
  T acc[MR][NR] = {};
  for (int k = 0; k < K; ++k) {
    const T* br = b + static_cast<std::int64_t>(k) * ldb;
    for (int i = 0; i < MR; ++i) {
      const T av = a[i * ars + k * acs];
      for (int j = 0; j < NR; ++j) acc[i][j] += av * br[j];
    }
  }
  for (int i = 0; i < MR; ++i)
    for (int j = 0; j < NR; ++j) c[i * ldc + j] += acc[i][j];
#endif
}

template <typename T>
inline void gemm_micro_edge(const T* a, std::int64_t ars, std::int64_t acs, const T* b, int ldb,
                            T* c, int ldc, int K, int mr, int nr) {
  T acc[kGemmMr][gemm_nr<T>()] = {};
  for (int k = 0; k < K; ++k) {
    const T* br = b + static_cast<std::int64_t>(k) * ldb;
    for (int i = 0; i < mr; ++i) {
      const T av = a[i * ars + k * acs];
      for (int j = 0; j < nr; ++j) acc[i][j] += av * br[j];
    }
  }
  for (int i = 0; i < mr; ++i)
    for (int j = 0; j < nr; ++j) c[i * ldc + j] += acc[i][j];
}

template <typename T>
void gemm_accum(const T* a, std::int64_t ars, std::int64_t acs, const T* b, int ldb, T* c, int ldc,
                int M, int K, int N) {
  constexpr int MR = kGemmMr;
  constexpr int NR = gemm_nr<T>();
  int i = 0;
  for (; i + MR <= M; i += MR) {
    int j = 0;
    for (; j + NR <= N; j += NR)
      gemm_micro<T, MR, NR>(a + i * ars, ars, acs, b + j, ldb, c + i * ldc + j, ldc, K);
    if (j < N)
      gemm_micro_edge(a + i * ars, ars, acs, b + j, ldb, c + i * ldc + j, ldc, K, MR, N - j);
  }
  if (i < M) {
    int j = 0;
    for (; j + NR <= N; j += NR)
      gemm_micro_edge(a + i * ars, ars, acs, b + j, ldb, c + i * ldc + j, ldc, K, M - i, NR);
    if (j < N)
      gemm_micro_edge(a + i * ars, ars, acs, b + j, ldb, c + i * ldc + j, ldc, K, M - i, N - j);
  }
}

// Unrolled patch matrix: col[q][p] with q = (ci*KH + ki)*KW + kj and
// p = oh*OW + ow; out-of-image taps are zero.
template <typename T>
void im2col(const T* x, int Cin, int H, int W, int KH, int KW, int stride, int pad, int OH, int OW,
            T* col) {
  const std::int64_t P = static_cast<std::int64_t>(OH) * OW;
  std::int64_t q = 0;
  for (int ci = 0; ci < Cin; ++ci) {
    const T* plane = x + static_cast<std::int64_t>(ci) * H * W;
    for (int ki = 0; ki < KH; ++ki) {
      for (int kj = 0; kj < KW; ++kj, ++q) {
        T* row = col + q * P;
        int owlo, owhi;
        conv_bounds(kj, pad, stride, W, OW, owlo, owhi);
        for (int oh = 0; oh < OH; ++oh) {
          const int ih = oh * stride + ki - pad;
          T* dst = row + static_cast<std::int64_t>(oh) * OW;
          if (ih < 0 || ih >= H || owhi < owlo) {
            for (int ow = 0; ow < OW; ++ow) dst[ow] = T(0);
            continue;
          }
          const T* src = plane + static_cast<std::int64_t>(ih) * W;
          for (int ow = 0; ow < owlo; ++ow) dst[ow] = T(0);
          if (stride == 1) {
            const T* s = src + kj - pad;
            for (int ow = owlo; ow <= owhi; ++ow) dst[ow] = s[ow];
          } else {
            for (int ow = owlo; ow <= owhi; ++ow) dst[ow] = src[ow * stride + kj - pad];
          }
          for (int ow = owhi + 1; ow < OW; ++ow) dst[ow] = T(0);
        }
      }
    }
  }
}

// Scatter-add of a patch-matrix gradient back to image layout.
template <typename T>
void col2im_add(const T* col, int Cin, int H, int W, int KH, int KW, int stride, int pad, int OH,
                int OW, T* x) {
  const std::int64_t P = static_cast<std::int64_t>(OH) * OW;
  std::int64_t q = 0;
  for (int ci = 0; ci < Cin; ++ci) {
    T* plane = x + static_cast<std::int64_t>(ci) * H * W;
    for (int ki = 0; ki < KH; ++ki) {
      for (int kj = 0; kj < KW; ++kj, ++q) {
        const T* row = col + q * P;
        int owlo, owhi;
        conv_bounds(kj, pad, stride, W, OW, owlo, owhi);
        if (owhi < owlo) continue;
        for (int oh = 0; oh < OH; ++oh) {
          const int ih = oh * stride + ki - pad;
          if (ih < 0 || ih >= H) continue;
          T* dst = plane + static_cast<std::int64_t>(ih) * W;
          const T* src = row + static_cast<std::int64_t>(oh) * OW;
          if (stride == 1) {
            T* d = dst + kj - pad;
            for (int ow = owlo; ow <= owhi; ++ow) d[ow] += src[ow];
          } else {
            for (int ow = owlo; ow <= owhi; ++ow) dst[ow * stride + kj - pad] += src[ow];
          }
        }
      }
    }
  }
}

template <typename T>
std::vector<T>& conv_scratch(int which) {
  thread_local std::vector<T> bufs[2];
  return bufs[which];
}

}  // namespace ops_detail

struct ConvShape {
  int out_h = 0, out_w = 0;
};

template <typename T>
ConvShape conv2d_check(const Tensor4<T>& x, const Tensor4<T>& k, int stride, int pad) {
  check(stride >= 1, "conv2d: stride must be >= 1");
  check(pad >= 0, "conv2d: padding must be >= 0");
  check(k.channels == x.channels,
        "conv2d: kernel expects " + std::to_string(k.channels) + " input channels, got " +
            x.shape_str() + " vs kernel " + k.shape_str());
  check(k.height <= x.height + 2 * pad && k.width <= x.width + 2 * pad,
        "conv2d: kernel " + k.shape_str() + " larger than padded input " + x.shape_str());
  ConvShape s;
  s.out_h = (x.height + 2 * pad - k.height) / stride + 1;
  s.out_w = (x.width + 2 * pad - k.width) / stride + 1;
  return s;
}

// Cross-correlation (deep-learning "convolution"), zero padding, floor output
// size. Per batch element: unroll patches, then one GEMM
//   out[Cout, OH*OW] = kernel[Cout, Cin*KH*KW] * col.
template <typename T>
Tensor4<T> conv2d_forward(const Tensor4<T>& x, const Tensor4<T>& k, int stride, int pad) {
  ConvShape cs = conv2d_check(x, k, stride, pad);
  const int B = x.batch, Cin = x.channels, H = x.height, W = x.width;
  const int Cout = k.batch, KH = k.height, KW = k.width;
  const int OH = cs.out_h, OW = cs.out_w;
  const std::int64_t Q = static_cast<std::int64_t>(Cin) * KH * KW;
  const std::int64_t P = static_cast<std::int64_t>(OH) * OW;
  Tensor4<T> out(B, Cout, OH, OW);
  parallel_for(B, [&](std::int64_t b) {
    std::vector<T>& col = ops_detail::conv_scratch<T>(0);
    col.resize(Q * P);
    ops_detail::im2col(x.slice(static_cast<int>(b), 0), Cin, H, W, KH, KW, stride, pad, OH, OW,
                       col.data());
    ops_detail::gemm_accum(k.data.data(), Q, 1, col.data(), static_cast<int>(P),
                           out.slice(static_cast<int>(b), 0), static_cast<int>(P),
                           Cout, static_cast<int>(Q), static_cast<int>(P));
  });
  return out;
}

// Gradient w.r.t. the input: col-space GEMM with the transposed kernel, then a
// scatter-add back to image layout. Parallel over batch elements.
template <typename T>
Tensor4<T> conv2d_backward_input(const Tensor4<T>& dout, const Tensor4<T>& k, int stride,
                                 int pad, int H, int W) {
  const int B = dout.batch, Cout = dout.channels, OH = dout.height, OW = dout.width;
  const int Cin = k.channels, KH = k.height, KW = k.width;
  const std::int64_t Q = static_cast<std::int64_t>(Cin) * KH * KW;
  const std::int64_t P = static_cast<std::int64_t>(OH) * OW;
  Tensor4<T> dx(B, Cin, H, W);
  parallel_for(B, [&](std::int64_t b) {
    std::vector<T>& gcol = ops_detail::conv_scratch<T>(0);
    gcol.assign(Q * P, T(0));
    // A = kernel^T via strides: element (q, co) lives at k[co*Q + q]
    ops_detail::gemm_accum(k.data.data(), 1, Q, dout.slice(static_cast<int>(b), 0),
                           static_cast<int>(P), gcol.data(), static_cast<int>(P),
                           static_cast<int>(Q), Cout, static_cast<int>(P));
    ops_detail::col2im_add(gcol.data(), Cin, H, W, KH, KW, stride, pad, OH, OW,
                           dx.slice(static_cast<int>(b), 0));
  });
  return dx;
}

// Gradient w.r.t. the kernel: dk[Cout, Q] += dout[Cout, P] * col^T[P, Q],
// accumulated sequentially over the batch. Threads own disjoint out-channel
// row blocks, so each weight's accumulation order is fixed regardless of the
// worker count (every thread rebuilds the per-sample patch matrix).
template <typename T>
Tensor4<T> conv2d_backward_weight(const Tensor4<T>& x, const Tensor4<T>& dout,
                                  const Tensor4<T>& k, int stride, int pad) {
  const int B = x.batch, Cin = x.channels, H = x.height, W = x.width;
  const int Cout = k.batch, KH = k.height, KW = k.width;
  const int OH = dout.height, OW = dout.width;
  const std::int64_t Q = static_cast<std::int64_t>(Cin) * KH * KW;
  const std::int64_t P = static_cast<std::int64_t>(OH) * OW;
  Tensor4<T> dk(Cout, Cin, KH, KW);
  ThreadPool::instance().run([&](int chunk, int nchunks) {
    const int lo = static_cast<int>(static_cast<std::int64_t>(Cout) * chunk / nchunks);
    const int hi = static_cast<int>(static_cast<std::int64_t>(Cout) * (chunk + 1) / nchunks);
    if (hi <= lo) return;
    std::vector<T>& col = ops_detail::conv_scratch<T>(0);
    std::vector<T>& colt = ops_detail::conv_scratch<T>(1);
    col.resize(Q * P);
    colt.resize(Q * P);
    for (int b = 0; b < B; ++b) {
      ops_detail::im2col(x.slice(b, 0), Cin, H, W, KH, KW, stride, pad, OH, OW, col.data());
      for (std::int64_t q = 0; q < Q; ++q)
        for (std::int64_t p = 0; p < P; ++p) colt[p * Q + q] = col[q * P + p];
      ops_detail::gemm_accum(dout.slice(b, lo), P, 1, colt.data(), static_cast<int>(Q),
                             dk.data.data() + static_cast<std::int64_t>(lo) * Q,
                             static_cast<int>(Q), hi - lo, static_cast<int>(P),
                             static_cast<int>(Q));
    }
  });
  return dk;
}

// ---------------------------------------------------------------------------

template <typename T>
Tensor4<T> relu_forward(const Tensor4<T>& x) {
  Tensor4<T> out(x.batch, x.channels, x.height, x.width);
  const std::int64_t n = x.size();
  parallel_for(n, [&](std::int64_t i) { out.data[i] = x.data[i] > T(0) ? x.data[i] : T(0); },
               1 << 16);
  return out;
}

// Subgradient at exactly zero is zero.
template <typename T>
Tensor4<T> relu_backward(const Tensor4<T>& x, const Tensor4<T>& g) {
  Tensor4<T> dx(x.batch, x.channels, x.height, x.width);
  const std::int64_t n = x.size();
  parallel_for(n, [&](std::int64_t i) { dx.data[i] = x.data[i] > T(0) ? g.data[i] : T(0); },
               1 << 16);
  return dx;
}

// 2x2 max pooling with stride 2; argmax index (0..3) saved for the backward
// scatter, first maximum wins on ties.
template <typename T>
Tensor4<T> maxpool2x2_forward(const Tensor4<T>& x, std::vector<std::uint8_t>& argmax) {
  check(x.height % 2 == 0 && x.width % 2 == 0,
        "maxpool2x2: spatial dims must be even, got " + x.shape_str());
  const int OH = x.height / 2, OW = x.width / 2;
  Tensor4<T> out(x.batch, x.channels, OH, OW);
  argmax.assign(out.size(), 0);
  const std::int64_t n = static_cast<std::int64_t>(x.batch) * x.channels;
  parallel_for(n, [&](std::int64_t t) {
    const int b = static_cast<int>(t / x.channels), c = static_cast<int>(t % x.channels);
    const T* xs = x.slice(b, c);
    T* os = out.slice(b, c);
    std::uint8_t* am = argmax.data() + (static_cast<std::size_t>(b) * x.channels + c) * OH * OW;
    for (int oh = 0; oh < OH; ++oh) {
      for (int ow = 0; ow < OW; ++ow) {
        const T* p = xs + static_cast<std::size_t>(2 * oh) * x.width + 2 * ow;
        T best = p[0];
        std::uint8_t idx = 0;
        const T cand[3] = {p[1], p[x.width], p[x.width + 1]};
        for (std::uint8_t j = 0; j < 3; ++j)
          if (cand[j] > best) {
            best = cand[j];
            idx = static_cast<std::uint8_t>(j + 1);
          }
        os[oh * OW + ow] = best;
        am[oh * OW + ow] = idx;
      }
    }
  });
  return out;
}

template <typename T>
Tensor4<T> maxpool2x2_backward(const Tensor4<T>& g, const std::vector<std::uint8_t>& argmax,
                               int H, int W) {
  Tensor4<T> dx(g.batch, g.channels, H, W);
  const int OH = g.height, OW = g.width;
  const std::int64_t n = static_cast<std::int64_t>(g.batch) * g.channels;
  parallel_for(n, [&](std::int64_t t) {
    const int b = static_cast<int>(t / g.channels), c = static_cast<int>(t % g.channels);
    const T* gs = g.slice(b, c);
    T* dxs = dx.slice(b, c);
    const std::uint8_t* am = argmax.data() + (static_cast<std::size_t>(b) * g.channels + c) * OH * OW;
    for (int oh = 0; oh < OH; ++oh)
      for (int ow = 0; ow < OW; ++ow) {
        const std::uint8_t idx = am[oh * OW + ow];
        const int ih = 2 * oh + (idx >> 1), iw = 2 * ow + (idx & 1);
        dxs[static_cast<std::size_t>(ih) * W + iw] += gs[oh * OW + ow];
      }
  });
  return dx;
}

// ---------------------------------------------------------------------------

// x: [B, F, 1, 1]; w: [O, F, 1, 1]; bias: [1, O, 1, 1] -> [B, O, 1, 1]
template <typename T>
Tensor4<T> linear_forward(const Tensor4<T>& x, const Tensor4<T>& w, const Tensor4<T>& bias) {
  const int B = x.batch, F = x.channels, O = w.batch;
  check(x.height == 1 && x.width == 1, "linear: input must be [B,F,1,1], got " + x.shape_str());
  check(w.channels == F, "linear: weight " + w.shape_str() + " does not match input features " +
                             std::to_string(F));
  check(bias.channels == O && bias.size() == O,
        "linear: bias " + bias.shape_str() + " does not match " + std::to_string(O) + " outputs");
  Tensor4<T> out(B, O, 1, 1);
  parallel_for(B, [&](std::int64_t b) {
    const T* xrow = x.data.data() + b * F;
    T* orow = out.data.data() + b * O;
    for (int o = 0; o < O; ++o)
      orow[o] = bias.data[o] + ops_detail::dot8(xrow, w.data.data() + static_cast<std::size_t>(o) * F, F);
  });
  return out;
}

template <typename T>
Tensor4<T> linear_backward_input(const Tensor4<T>& g, const Tensor4<T>& w, int F) {
  const int B = g.batch, O = g.channels;
  Tensor4<T> dx(B, F, 1, 1);
  parallel_for(B, [&](std::int64_t b) {
    const T* grow = g.data.data() + b * O;
    T* dxrow = dx.data.data() + b * F;
    for (int o = 0; o < O; ++o) {
      const T gv = grow[o];
      const T* wrow = w.data.data() + static_cast<std::size_t>(o) * F;
      for (int f = 0; f < F; ++f) dxrow[f] += gv * wrow[f];
    }
  });
  return dx;
}

template <typename T>
void linear_backward_params(const Tensor4<T>& x, const Tensor4<T>& g, Tensor4<T>& dw,
                            Tensor4<T>& db) {
  const int B = x.batch, F = x.channels, O = g.channels;
  dw = Tensor4<T>(O, F, 1, 1);
  db = Tensor4<T>(1, O, 1, 1);
  parallel_for(O, [&](std::int64_t o) {
    T* dwrow = dw.data.data() + o * F;
    T acc = T(0);
    for (int b = 0; b < B; ++b) {
      const T gv = g.data[static_cast<std::size_t>(b) * O + o];
      acc += gv;
      const T* xrow = x.data.data() + static_cast<std::size_t>(b) * F;
      for (int f = 0; f < F; ++f) dwrow[f] += gv * xrow[f];
    }
    db.data[o] = acc;
  });
}

// ---------------------------------------------------------------------------

template <typename T>
Tensor4<T> global_avg_pool_forward(const Tensor4<T>& x) {
  check(x.height >= 1 && x.width >= 1, "global_avg_pool: empty spatial dims");
  Tensor4<T> out(x.batch, x.channels, 1, 1);
  const T inv = T(1) / static_cast<T>(x.height * x.width);
  const std::int64_t n = static_cast<std::int64_t>(x.batch) * x.channels;
  parallel_for(n, [&](std::int64_t t) {
    const int b = static_cast<int>(t / x.channels), c = static_cast<int>(t % x.channels);
    const T* xs = x.slice(b, c);
    T acc = T(0);
    for (int i = 0; i < x.height * x.width; ++i) acc += xs[i];
    out.data[t] = acc * inv;
  });
  return out;
}

template <typename T>
Tensor4<T> global_avg_pool_backward(const Tensor4<T>& g, int H, int W) {
  Tensor4<T> dx(g.batch, g.channels, H, W);
  const T inv = T(1) / static_cast<T>(H * W);
  const std::int64_t n = static_cast<std::int64_t>(g.batch) * g.channels;
  parallel_for(n, [&](std::int64_t t) {
    const T gv = g.data[t] * inv;
    T* dxs = dx.data.data() + t * H * W;
    for (int i = 0; i < H * W; ++i) dxs[i] = gv;
  });
  return dx;
}

// ---------------------------------------------------------------------------

// Mean over the batch of -log softmax(logits)[label], max-subtracted for
// stability. Returns the per-row softmax for the backward pass.
template <typename T>
T softmax_cross_entropy_forward(const Tensor4<T>& logits, const std::vector<int>& labels,
                                Tensor4<T>& probs) {
  const int B = logits.batch, K = logits.channels;
  check(logits.height == 1 && logits.width == 1,
        "softmax_cross_entropy: logits must be [B,K,1,1], got " + logits.shape_str());
  check(static_cast<int>(labels.size()) == B, "softmax_cross_entropy: label count mismatch");
  for (int b = 0; b < B; ++b)
    check(labels[b] >= 0 && labels[b] < K,
          "softmax_cross_entropy: label " + std::to_string(labels[b]) + " out of range [0," +
              std::to_string(K) + ")");
  probs = Tensor4<T>(B, K, 1, 1);
  double loss = 0;
  for (int b = 0; b < B; ++b) {
    const T* row = logits.data.data() + static_cast<std::size_t>(b) * K;
    T m = row[0];
    for (int k = 1; k < K; ++k) m = std::max(m, row[k]);
    double z = 0;
    for (int k = 0; k < K; ++k) z += std::exp(static_cast<double>(row[k] - m));
    T* prow = probs.data.data() + static_cast<std::size_t>(b) * K;
    for (int k = 0; k < K; ++k)
      prow[k] = static_cast<T>(std::exp(static_cast<double>(row[k] - m)) / z);
    loss += -(static_cast<double>(row[labels[b]] - m) - std::log(z));
  }
  return static_cast<T>(loss / B);
}

template <typename T>
Tensor4<T> softmax_cross_entropy_backward(const Tensor4<T>& probs, const std::vector<int>& labels,
                                          T upstream) {
  const int B = probs.batch, K = probs.channels;
  Tensor4<T> dl(B, K, 1, 1);
  const T s = upstream / static_cast<T>(B);
  for (int b = 0; b < B; ++b) {
    const T* prow = probs.data.data() + static_cast<std::size_t>(b) * K;
    T* drow = dl.data.data() + static_cast<std::size_t>(b) * K;
    for (int k = 0; k < K; ++k) drow[k] = prow[k] * s;
    drow[labels[b]] -= s;
  }
  return dl;
}

// Inverted dropout with a fixed derivation stream; identity when p == 0.
template <typename T>
Tensor4<T> dropout_forward(const Tensor4<T>& x, double p, std::uint64_t stream,
                           std::vector<std::uint8_t>& mask) {
  check(p >= 0.0 && p < 1.0, "dropout: p must be in [0,1)");
  Tensor4<T> out = x;
  mask.assign(x.size(), 1);
  if (p == 0.0) return out;
  Rng rng(stream);
  const T scale = static_cast<T>(1.0 / (1.0 - p));
  for (std::int64_t i = 0; i < x.size(); ++i) {
    if (rng.uniform() < p) {
      mask[i] = 0;
      out.data[i] = T(0);
    } else {
      out.data[i] *= scale;
    }
  }
  return out;
}

template <typename T>
Tensor4<T> dropout_backward(const Tensor4<T>& g, const std::vector<std::uint8_t>& mask, double p) {
  Tensor4<T> dx = g;
  if (p == 0.0) return dx;
  const T scale = static_cast<T>(1.0 / (1.0 - p));
  for (std::int64_t i = 0; i < g.size(); ++i)
    dx.data[i] = mask[i] ? g.data[i] * scale : T(0);
  return dx;
}

}  // namespace sbn

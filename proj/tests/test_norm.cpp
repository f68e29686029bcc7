#include <gtest/gtest.h>

#include "oracles.hpp"
#include "sbn/autograd.hpp"
#include "sbn/gradcheck.hpp"
#include "sbn/metrics.hpp"
#include "sbn/norm.hpp"
#include "testutil.hpp"

using sbn::CTensor4;
using sbn::SbnState;
using sbn::SbnVariant;
using sbn::Tape;
using sbn::Tensor4;
using testutil::random_tensor;
using testutil::weighted_sum;
using testutil::weighted_sum_node;

namespace {

// x = [[0,1],[0,0]] has packed spectrum [[1,-1],[1,-1]]: complex mean exactly
// 0, variance exactly 1. Handy whitened fixture.
Tensor4<double> whitened_2x2() {
  Tensor4<double> x(1, 1, 2, 2);
  x.at(0, 0, 0, 1) = 1.0;
  return x;
}

// Direct per-channel batch-norm reference at extended precision.
Tensor4<double> naive_batchnorm_train(const Tensor4<double>& x, double gamma, double beta,
                                      double eps) {
  const int B = x.batch, C = x.channels, H = x.height, W = x.width;
  Tensor4<double> y(B, C, H, W);
  for (int c = 0; c < C; ++c) {
    long double s = 0;
    for (int b = 0; b < B; ++b)
      for (int i = 0; i < H * W; ++i) s += x.slice(b, c)[i];
    const long double m = s / (static_cast<long double>(B) * H * W);
    long double v = 0;
    for (int b = 0; b < B; ++b)
      for (int i = 0; i < H * W; ++i) {
        const long double d = x.slice(b, c)[i] - m;
        v += d * d;
      }
    v /= static_cast<long double>(B) * H * W;
    const long double inv = 1.0L / std::sqrt(v + static_cast<long double>(eps));
    for (int b = 0; b < B; ++b)
      for (int i = 0; i < H * W; ++i)
        y.slice(b, c)[i] = static_cast<double>(gamma * (x.slice(b, c)[i] - m) * inv + beta);
  }
  return y;
}

}  // namespace

// --- complex batch statistics -------------------------------------------------

TEST(ComplexBatchStats, ConstantChannel) {
  CTensor4<double> s(1, 1, 2, 2, 2);
  for (auto& v : s.data) v = {1.5, -0.5};
  auto st = sbn::complex_batch_stats(s);
  EXPECT_NEAR(st.mean[0].real(), 1.5, 1e-14);
  EXPECT_NEAR(st.mean[0].imag(), -0.5, 1e-14);
  EXPECT_NEAR(st.var[0], 0.0, 1e-14);
}

TEST(ComplexBatchStats, SymmetricPair) {
  CTensor4<double> s(2, 1, 1, 1, 1);
  s.data[0] = {1, 1};
  s.data[1] = {-1, -1};
  auto st = sbn::complex_batch_stats(s);
  EXPECT_NEAR(std::abs(st.mean[0]), 0.0, 1e-15);
  EXPECT_NEAR(st.var[0], 2.0, 1e-15);
  EXPECT_EQ(st.count, 2);
}

TEST(ComplexBatchStats, MatchesSummationOracle) {
  CTensor4<double> s(2, 3, 4, 3, 5);
  sbn::Rng rng(404);
  for (auto& v : s.data) v = {rng.normal() * 3, rng.normal() * 3};
  auto got = sbn::complex_batch_stats(s);
  std::vector<std::complex<double>> mean;
  std::vector<double> var;
  oracle::naive_complex_stats(s, mean, var);
  for (int c = 0; c < 3; ++c) {
    EXPECT_NEAR(got.mean[c].real(), mean[c].real(), 1e-12);
    EXPECT_NEAR(got.mean[c].imag(), mean[c].imag(), 1e-12);
    EXPECT_NEAR(got.var[c], var[c], 1e-12);
  }
}

TEST(ComplexBatchStats, RejectsSingleCoefficient) {
  CTensor4<double> s(1, 2, 1, 1, 1);
  EXPECT_THROW(sbn::complex_batch_stats(s), std::invalid_argument);
}

// --- SBN forward ---------------------------------------------------------------

TEST(SbnForward, WhitenedInputIsFixedPoint) {
  Tensor4<double> x = whitened_2x2();
  SbnState<double> st(1);
  st.eps = 1e-12;
  Tensor4<double> y = sbn::sbn_forward_train(x, st);
  for (std::int64_t i = 0; i < x.size(); ++i) EXPECT_NEAR(y.data[i], x.data[i], 1e-8);
}

TEST(SbnForward, ZeroAffineAnnihilates) {
  Tensor4<double> x = random_tensor(2, 2, 4, 4, 31);
  SbnState<double> st(2);
  st.gamma = Tensor4<double>(1, 2, 1, 1, 0.0);
  st.beta = Tensor4<double>(1, 2, 1, 1, 0.0);
  Tensor4<double> y = sbn::sbn_forward_train(x, st);
  for (auto v : y.data) EXPECT_NEAR(v, 0.0, 1e-14);
}

TEST(SbnForward, MatchesComposedNaiveOracle) {
  Tensor4<double> x = random_tensor(2, 2, 4, 4, 32);
  SbnState<double> st(2);
  st.eps = 1e-5;
  Tensor4<double> got = sbn::sbn_forward_train(x, st);
  Tensor4<double> want = oracle::naive_sbn_full(x, 1.0, 0.0, 1e-5);
  for (std::int64_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got.data[i], want.data[i], 1e-10);
}

TEST(SbnForward, RejectsNonFiniteInput) {
  Tensor4<double> x = random_tensor(1, 1, 4, 4, 33);
  x.data[3] = std::numeric_limits<double>::quiet_NaN();
  SbnState<double> st(1);
  EXPECT_THROW(sbn::sbn_forward_train(x, st), std::invalid_argument);
}

TEST(SbnForward, RejectsSingleCoefficientSpectrum) {
  Tensor4<double> x(1, 1, 1, 1, 2.0);
  SbnState<double> st(1);
  EXPECT_THROW(sbn::sbn_forward_train(x, st), std::invalid_argument);
}

TEST(SbnEval, IdentityUnderUnitRunningStats) {
  Tensor4<double> x = random_tensor(2, 2, 4, 4, 34);
  SbnState<double> st(2);
  st.eps = 1e-12;
  Tensor4<double> y = sbn::sbn_forward_eval(x, st);
  for (std::int64_t i = 0; i < x.size(); ++i) EXPECT_NEAR(y.data[i], x.data[i], 1e-8);
}

TEST(SbnEval, PureAndBitwiseRepeatable) {
  Tensor4<double> x = random_tensor(2, 3, 4, 4, 35);
  SbnState<double> st(3);
  st.running_mean[1] = {0.3, -0.2};
  st.running_var = {1.0, 2.0, 0.5};
  SbnState<double> before = st;
  Tensor4<double> a = sbn::sbn_forward_eval(x, st);
  Tensor4<double> b = sbn::sbn_forward_eval(x, st);
  EXPECT_EQ(a.data, b.data);
  EXPECT_EQ(st.running_mean, before.running_mean);  // no hidden state mutation
  EXPECT_EQ(st.running_var, before.running_var);
}

TEST(SbnEval, RejectsNegativeRunningVariance) {
  Tensor4<double> x = random_tensor(1, 1, 4, 4, 36);
  SbnState<double> st(1);
  st.running_var[0] = -1.0;
  EXPECT_THROW(sbn::sbn_forward_eval(x, st), std::invalid_argument);
}

TEST(SbnEval, ReplayMatchesStoredRunningStatsOracle) {
  Tensor4<double> x = random_tensor(2, 2, 4, 4, 37);
  SbnState<double> st(2);
  st.gamma.data = {1.3, 0.7};
  st.beta.data = {0.2, -0.4};
  sbn::sbn_forward_train(x, st);  // one step populates the running stats
  Tensor4<double> got = sbn::sbn_forward_eval(x, st);

  // independent recomputation from the stored running statistics
  const int H = 4, W = 4, Wp = 3;
  Tensor4<double> want(2, 2, H, W);
  for (int b = 0; b < 2; ++b)
    for (int c = 0; c < 2; ++c) {
      auto full = sbn::naive_dft2(x.slice(b, c), H, W);
      std::vector<std::complex<double>> packed(H * Wp);
      const double d = 1.0 / std::sqrt(st.running_var[c] + st.eps);
      for (int k = 0; k < H; ++k)
        for (int l = 0; l < Wp; ++l) {
          std::complex<double> z = (full[k * W + l] - st.running_mean[c]) * d;
          packed[k * Wp + l] = {st.gamma.data[c] * z.real() + st.beta.data[c],
                                st.gamma.data[c] * z.imag()};
        }
      auto inv = oracle::naive_inverse_from_packed(packed, H, Wp, W);
      std::copy(inv.begin(), inv.end(), want.slice(b, c));
    }
  for (std::int64_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got.data[i], want.data[i], 1e-10);
}

// --- running statistics ---------------------------------------------------------

TEST(RunningStats, HandUnrolledFixtureBothConventions) {
  // lambda = 0.1, batch mean 1+0i, batch var 4, n/(n-1) = 2.
  {
    SbnState<double> st(1);  // n_mode = actual; B*H*Wp = 2 via B=2, H=1, W=1
    const double n = sbn::sbn_correction_count(st, /*b=*/2, /*c=*/1, /*h=*/1, /*wp=*/1, /*w=*/1);
    EXPECT_EQ(n, 2.0);
    sbn::ComplexBatchStats<double> stats;
    stats.mean = {{1.0, 0.0}};
    stats.var = {4.0};
    stats.count = 2;
    sbn::sbn_update_running(st, stats, n);
    const double lam = 0.1;
    EXPECT_EQ(st.running_mean[0].real(), lam * 1.0 + (1.0 - lam) * 0.0);
    EXPECT_EQ(st.running_var[0], lam * 4.0 * (2.0 / (2.0 - 1.0)) + (1.0 - lam) * 1.0);
    EXPECT_NEAR(st.running_mean[0].real(), 0.1, 1e-15);
    EXPECT_NEAR(st.running_var[0], 1.7, 1e-15);
  }
  {
    SbnState<double> st(4);  // n_mode = paper; C*H*W/2 = 2 via C=4, H=1, W=1
    st.n_mode = sbn::NMode::paper;
    const double n = sbn::sbn_correction_count(st, /*b=*/5, /*c=*/4, /*h=*/1, /*wp=*/1, /*w=*/1);
    EXPECT_EQ(n, 2.0);
    sbn::ComplexBatchStats<double> stats;
    stats.mean.assign(4, {1.0, 0.0});
    stats.var.assign(4, 4.0);
    stats.count = 5;
    sbn::sbn_update_running(st, stats, n);
    for (int c = 0; c < 4; ++c) {
      EXPECT_NEAR(st.running_mean[c].real(), 0.1, 1e-15);
      EXPECT_NEAR(st.running_var[c], 1.7, 1e-15);
    }
  }
}

TEST(RunningStats, CorrectionCountConventionsDiffer) {
  SbnState<double> actual_st(8);
  SbnState<double> paper_st(8);
  paper_st.n_mode = sbn::NMode::paper;
  // B=4, C=8, H=4, W=4 -> Wp=3: actual counts 4*4*3=48 coefficients, the
  // verbatim formula gives 8*4*4/2 = 64.
  EXPECT_EQ(sbn::sbn_correction_count(actual_st, 4, 8, 4, 3, 4), 48.0);
  EXPECT_EQ(sbn::sbn_correction_count(paper_st, 4, 8, 4, 3, 4), 64.0);
}

TEST(RunningStats, RejectsDegenerateCorrection) {
  SbnState<double> st(1);
  sbn::ComplexBatchStats<double> stats;
  stats.mean = {{0, 0}};
  stats.var = {1.0};
  stats.count = 1;
  EXPECT_THROW(sbn::sbn_update_running(st, stats, 1.0), std::invalid_argument);
}

// --- ablation variants -----------------------------------------------------------

TEST(SbnVariants, MeanOnlyIsIdentityOnZeroMeanSpectrum) {
  Tensor4<double> x = whitened_2x2();
  SbnState<double> st(1);
  st.variant = SbnVariant::mean_only;
  Tensor4<double> y = sbn::sbn_forward_train(x, st);
  for (std::int64_t i = 0; i < x.size(); ++i) EXPECT_NEAR(y.data[i], x.data[i], 1e-10);
}

TEST(SbnVariants, DownscaleAlphaOneIsIdentity) {
  Tensor4<double> x = random_tensor(1, 2, 4, 6, 38);
  SbnState<double> st(2);
  st.variant = SbnVariant::downscale;
  st.downscale_alpha = 1.0;
  st.beta = Tensor4<double>(1, 2, 1, 1, 123.0);  // irrelevant for this variant
  Tensor4<double> y = sbn::sbn_forward_train(x, st);
  for (std::int64_t i = 0; i < x.size(); ++i) EXPECT_NEAR(y.data[i], x.data[i], 1e-12);
}

TEST(SbnVariants, DownscaleRejectsNonPositiveAlpha) {
  Tensor4<double> x = random_tensor(1, 1, 4, 4, 39);
  SbnState<double> st(1);
  st.variant = SbnVariant::downscale;
  st.downscale_alpha = 0.0;
  EXPECT_THROW(sbn::sbn_forward_train(x, st), std::invalid_argument);
}

TEST(SbnVariants, SplitMatchesComponentwiseOracle) {
  Tensor4<double> x = random_tensor(1, 2, 4, 4, 40);
  SbnState<double> st(2);
  st.variant = SbnVariant::split_real_imag;
  st.gamma.data = {1.1, 0.9};
  st.beta.data = {0.05, -0.3};
  Tensor4<double> got = sbn::sbn_forward_train(x, st);

  const int H = 4, W = 4, Wp = 3;
  CTensor4<double> spec(1, 2, H, Wp, W);
  for (int c = 0; c < 2; ++c) {
    auto full = sbn::naive_dft2(x.slice(0, c), H, W);
    for (int k = 0; k < H; ++k)
      for (int l = 0; l < Wp; ++l) spec.slice(0, c)[k * Wp + l] = full[k * W + l];
  }
  Tensor4<double> want(1, 2, H, W);
  for (int c = 0; c < 2; ++c) {
    // treat the real and imaginary planes as independent real batches
    const std::complex<double>* p = spec.slice(0, c);
    long double sre = 0, sim = 0;
    for (int i = 0; i < H * Wp; ++i) {
      sre += p[i].real();
      sim += p[i].imag();
    }
    const long double n = H * Wp;
    const long double mre = sre / n, mim = sim / n;
    long double vre = 0, vim = 0;
    for (int i = 0; i < H * Wp; ++i) {
      vre += (p[i].real() - mre) * (p[i].real() - mre);
      vim += (p[i].imag() - mim) * (p[i].imag() - mim);
    }
    vre /= n;
    vim /= n;
    const double dre = 1.0 / std::sqrt(static_cast<double>(vre) + st.eps);
    const double dim = 1.0 / std::sqrt(static_cast<double>(vim) + st.eps);
    std::vector<std::complex<double>> mod(H * Wp);
    for (int i = 0; i < H * Wp; ++i)
      mod[i] = {st.gamma.data[c] * (p[i].real() - static_cast<double>(mre)) * dre +
                    st.beta.data[c],
                st.gamma.data[c] * (p[i].imag() - static_cast<double>(mim)) * dim};
    auto inv = oracle::naive_inverse_from_packed(mod, H, Wp, W);
    std::copy(inv.begin(), inv.end(), want.slice(0, c));
  }
  for (std::int64_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got.data[i], want.data[i], 1e-10);
}

// --- standard batch normalization ------------------------------------------------

TEST(BatchNorm, ConstantInputGoesToBeta) {
  Tensor4<double> x(3, 2, 4, 4, 7.0);
  sbn::BnState<double> st(2);
  Tensor4<double> y = sbn::batchnorm_forward(x, st, sbn::Mode::train);
  for (auto v : y.data) EXPECT_NEAR(v, 0.0, 1e-9);
}

TEST(BatchNorm, AffineMapsStandardizedInput) {
  // channel values {-1, +1}: exactly zero mean, unit variance
  Tensor4<double> x(2, 1, 1, 1);
  x.data = {-1.0, 1.0};
  sbn::BnState<double> st(1);
  st.eps = 1e-18;
  st.gamma.data[0] = 2.0;
  st.beta.data[0] = 3.0;
  Tensor4<double> y = sbn::batchnorm_forward(x, st, sbn::Mode::train);
  EXPECT_NEAR(y.data[0], 2.0 * -1.0 + 3.0, 1e-7);
  EXPECT_NEAR(y.data[1], 2.0 * 1.0 + 3.0, 1e-7);
}

TEST(BatchNorm, MatchesPerChannelOracle) {
  Tensor4<double> x = random_tensor(4, 2, 3, 3, 41);
  sbn::BnState<double> st(2);
  st.gamma.data = {1.2, 0.8};
  st.beta.data = {-0.1, 0.4};
  Tensor4<double> got = sbn::batchnorm_forward(x, st, sbn::Mode::train);
  Tensor4<double> want_c0 = naive_batchnorm_train(x, 1.2, -0.1, st.eps);
  Tensor4<double> want_c1 = naive_batchnorm_train(x, 0.8, 0.4, st.eps);
  for (int b = 0; b < 4; ++b)
    for (int i = 0; i < 9; ++i) {
      EXPECT_NEAR(got.slice(b, 0)[i], want_c0.slice(b, 0)[i], 1e-12);
      EXPECT_NEAR(got.slice(b, 1)[i], want_c1.slice(b, 1)[i], 1e-12);
    }
}

TEST(BatchNorm, RunningUpdateUsesUnbiasedVariance) {
  Tensor4<double> x(2, 1, 1, 1);
  x.data = {0.0, 2.0};  // mean 1, biased var 1, unbiased var 2
  sbn::BnState<double> st(1);
  st.momentum = 0.5;
  sbn::batchnorm_forward(x, st, sbn::Mode::train);
  EXPECT_NEAR(st.running_mean[0], 0.5 * 1.0 + 0.5 * 0.0, 1e-15);
  EXPECT_NEAR(st.running_var[0], 0.5 * 2.0 + 0.5 * 1.0, 1e-15);
}

TEST(BatchNorm, RejectsDegenerateCount) {
  Tensor4<double> x(1, 2, 1, 1, 1.0);
  sbn::BnState<double> st(2);
  EXPECT_THROW(sbn::batchnorm_forward(x, st, sbn::Mode::train), std::invalid_argument);
}

// --- module invariants -------------------------------------------------------------

TEST(SbnInvariants, PostNormalizationSpectrumIsStandardized) {
  for (int seed = 0; seed < 10; ++seed) {
    Tensor4<double> x = random_tensor(2, 3, 6, 6, sbn::derive_stream(900, seed));
    SbnState<double> st(3);
    sbn::SbnCapture<double> cap;
    sbn::sbn_forward_train(x, st, &cap);
    auto stats = sbn::complex_batch_stats(cap.normalized);
    for (int c = 0; c < 3; ++c) {
      EXPECT_LT(std::abs(stats.mean[c]), 1e-8);
      // mean squared modulus of the normalized coefficients
      double msq = 0;
      std::int64_t n = 0;
      for (int b = 0; b < 2; ++b) {
        const std::complex<double>* p = cap.normalized.slice(b, c);
        for (int i = 0; i < 6 * 4; ++i, ++n) msq += std::norm(p[i]);
      }
      msq /= static_cast<double>(n);
      EXPECT_LE(msq, 1.0 + 1e-12);
      EXPECT_GE(msq, 1.0 - 10.0 * st.eps);
    }
  }
}

TEST(SbnInvariants, OutputIsRealThroughFullSpectrumOracle) {
  Tensor4<double> x = random_tensor(1, 1, 4, 4, 42);
  SbnState<double> st(1);
  st.beta.data[0] = 0.5;
  sbn::SbnCapture<double> cap;
  Tensor4<double> out = sbn::sbn_forward_train(x, st, &cap);
  // Conjugate-extend the modified packed spectrum and take its Hermitian part
  // (exactly what inverting and keeping the real output amounts to); the full
  // double-sum inverse of that spectrum must have vanishing imaginary residue
  // and reproduce the layer output.
  const int H = 4, W = 4, Wp = 3;
  std::vector<std::complex<double>> ext(H * W), full(H * W);
  sbn::hermitian_extend_slice(cap.post.slice(0, 0), H, Wp, W, ext.data());
  for (int k = 0; k < H; ++k)
    for (int l = 0; l < W; ++l)
      full[k * W + l] =
          0.5 * (ext[k * W + l] + std::conj(ext[((H - k) % H) * W + (W - l) % W]));
  const double two_pi = 6.283185307179586476925286766559;
  for (int r = 0; r < H; ++r)
    for (int c = 0; c < W; ++c) {
      std::complex<double> acc{0, 0};
      for (int k = 0; k < H; ++k)
        for (int l = 0; l < W; ++l) {
          const double ang = two_pi * (static_cast<double>(r) * k / H + static_cast<double>(c) * l / W);
          acc += full[k * W + l] * std::complex<double>(std::cos(ang), std::sin(ang));
        }
      EXPECT_LT(std::abs(acc.imag() / (H * W)), 1e-10);
      EXPECT_NEAR(acc.real() / (H * W), out.at(0, 0, r, c), 1e-10);
    }
}

TEST(SbnInvariants, SuppressesNormOfAmplifiedInputs) {
  for (int seed = 0; seed < 5; ++seed) {
    Tensor4<double> x = random_tensor(2, 2, 8, 8, sbn::derive_stream(901, seed), 10.0);
    SbnState<double> st(2);
    Tensor4<double> y = sbn::sbn_forward_train(x, st);
    EXPECT_LT(sbn::frobenius_norm(y), sbn::frobenius_norm(x));
  }
}

TEST(SbnInvariants, NormalizeStepUniformizesDominantCoefficient) {
  // constant offset makes the DC coefficient dominate every slice
  Tensor4<double> x = random_tensor(4, 2, 4, 4, 43, 0.01);
  for (auto& v : x.data) v += 10.0;
  SbnState<double> st(2);
  sbn::SbnCapture<double> cap;
  sbn::sbn_forward_train(x, st, &cap);
  auto ratio = [](const std::complex<double>* p, int n) {
    std::vector<double> mags(n);
    for (int i = 0; i < n; ++i) mags[i] = std::abs(p[i]);
    std::sort(mags.begin(), mags.end());
    const double med = (n % 2) ? mags[n / 2] : 0.5 * (mags[n / 2 - 1] + mags[n / 2]);
    return mags.back() / std::max(med, 1e-300);
  };
  for (int c = 0; c < 2; ++c) {
    const int n = 4 * 3;
    const double before = ratio(cap.pre.slice(0, c), n);
    const double after = ratio(cap.normalized.slice(0, c), n);
    EXPECT_GT(before, 100.0);  // dominant coefficient premise
    EXPECT_LT(after, before);
  }
}

// --- gradients -----------------------------------------------------------------

TEST(SbnGradients, AllVariantsPassFiniteDifferences) {
  for (SbnVariant v :
       {SbnVariant::full, SbnVariant::mean_only, SbnVariant::std_only,
        SbnVariant::normalize_no_affine, SbnVariant::downscale, SbnVariant::affine_only,
        SbnVariant::split_real_imag}) {
    Tensor4<double> x = random_tensor(2, 2, 4, 4, 44 + static_cast<int>(v));
    SbnState<double> st(2);
    st.variant = v;
    st.downscale_alpha = 2.5;
    st.gamma.data = {1.2, 0.8};
    st.beta.data = {0.1, -0.2};
    Tensor4<double> w = random_tensor(2, 2, 4, 4, 45);
    auto eval = [&]() {
      SbnState<double> copy = st;
      return weighted_sum(sbn::sbn_forward_probe(x, copy), w);
    };
    Tape<double> t;
    int xi = t.leaf(x), gi = t.leaf(st.gamma), bi = t.leaf(st.beta);
    int y = sbn::sbn_layer_node(t, xi, gi, bi, st, sbn::Mode::probe);
    t.backward(weighted_sum_node(t, y, w));
    sbn::FdResult fd = sbn::fd_check_tensor(x, t.grad(xi), eval);
    EXPECT_TRUE(fd.pass) << sbn::variant_name(v) << " input grad, worst err " << fd.worst_err;
    if (sbn::variant_has_affine(v)) {
      auto eval_g = [&]() {
        SbnState<double> copy = st;
        return weighted_sum(sbn::sbn_forward_probe(x, copy), w);
      };
      sbn::FdResult fg = sbn::fd_check_tensor(st.gamma, t.grad(gi), eval_g);
      sbn::FdResult fb = sbn::fd_check_tensor(st.beta, t.grad(bi), eval_g);
      EXPECT_TRUE(fg.pass) << sbn::variant_name(v) << " gamma grad";
      EXPECT_TRUE(fb.pass) << sbn::variant_name(v) << " beta grad";
    }
  }
}

TEST(SbnGradients, EvalModePassesFiniteDifferences) {
  Tensor4<double> x = random_tensor(2, 2, 4, 4, 46);
  SbnState<double> st(2);
  st.running_mean[0] = {0.2, -0.1};
  st.running_var = {1.5, 0.7};
  st.gamma.data = {1.1, 0.9};
  Tensor4<double> w = random_tensor(2, 2, 4, 4, 47);
  auto eval = [&]() { return weighted_sum(sbn::sbn_forward_eval(x, st), w); };
  Tape<double> t;
  int xi = t.leaf(x), gi = t.leaf(st.gamma), bi = t.leaf(st.beta);
  int y = sbn::sbn_layer_node(t, xi, gi, bi, st, sbn::Mode::eval);
  t.backward(weighted_sum_node(t, y, w));
  EXPECT_TRUE(sbn::fd_check_tensor(x, t.grad(xi), eval).pass);
}

TEST(BnGradients, TrainAndEvalPassFiniteDifferences) {
  Tensor4<double> x = random_tensor(3, 2, 3, 3, 48);
  sbn::BnState<double> st(2);
  st.gamma.data = {1.3, 0.6};
  st.beta.data = {0.2, -0.5};
  Tensor4<double> w = random_tensor(3, 2, 3, 3, 49);
  for (sbn::Mode mode : {sbn::Mode::probe, sbn::Mode::eval}) {
    auto eval = [&]() {
      sbn::BnState<double> copy = st;
      return weighted_sum(sbn::batchnorm_apply(x, copy, mode), w);
    };
    Tape<double> t;
    int xi = t.leaf(x), gi = t.leaf(st.gamma), bi = t.leaf(st.beta);
    int y = sbn::batchnorm_node(t, xi, gi, bi, st, mode);
    t.backward(weighted_sum_node(t, y, w));
    EXPECT_TRUE(sbn::fd_check_tensor(x, t.grad(xi), eval).pass) << "mode " << static_cast<int>(mode);
    EXPECT_TRUE(sbn::fd_check_tensor(st.gamma, t.grad(gi), eval).pass);
    EXPECT_TRUE(sbn::fd_check_tensor(st.beta, t.grad(bi), eval).pass);
  }
}

TEST(SbnGradients, RunningStatUpdateStaysOutOfGradient) {
  // train mode and probe mode produce identical gradients; only the state
  // differs afterwards
  Tensor4<double> x = random_tensor(2, 1, 4, 4, 50);
  Tensor4<double> w = random_tensor(2, 1, 4, 4, 51);
  SbnState<double> train_st(1), probe_st(1);
  Tape<double> t1, t2;
  int x1 = t1.leaf(x), g1 = t1.leaf(train_st.gamma), b1 = t1.leaf(train_st.beta);
  t1.backward(weighted_sum_node(t1, sbn::sbn_layer_node(t1, x1, g1, b1, train_st, sbn::Mode::train), w));
  int x2 = t2.leaf(x), g2 = t2.leaf(probe_st.gamma), b2 = t2.leaf(probe_st.beta);
  t2.backward(weighted_sum_node(t2, sbn::sbn_layer_node(t2, x2, g2, b2, probe_st, sbn::Mode::probe), w));
  EXPECT_EQ(t1.grad(x1).data, t2.grad(x2).data);
  EXPECT_NE(train_st.running_var[0], 1.0);   // train updated the state
  EXPECT_EQ(probe_st.running_var[0], 1.0);   // probe did not
}

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "sbn/autograd.hpp"
#include "sbn/fft.hpp"
#include "sbn/gradcheck.hpp"
#include "sbn/rng.hpp"

using sbn::CTensor4;
using sbn::Rng;
using sbn::Tensor4;

namespace {

Tensor4<double> random_tensor(int b, int c, int h, int w, std::uint64_t seed, double scale = 1.0) {
  Tensor4<double> t(b, c, h, w);
  Rng rng(seed);
  for (auto& v : t.data) v = scale * rng.normal();
  return t;
}

}  // namespace

TEST(Rfft2, ConstantSliceHasOnlyDc) {
  Tensor4<double> x(1, 1, 2, 2, 1.0);
  CTensor4<double> s = sbn::rfft2(x);
  ASSERT_EQ(s.packed_width, 2);
  EXPECT_NEAR(s.data[0].real(), 4.0, 1e-12);
  EXPECT_NEAR(s.data[0].imag(), 0.0, 1e-12);
  for (std::size_t i = 1; i < s.data.size(); ++i) {
    EXPECT_NEAR(s.data[i].real(), 0.0, 1e-12);
    EXPECT_NEAR(s.data[i].imag(), 0.0, 1e-12);
  }
}

TEST(Rfft2, UnitImpulseIsFlat) {
  Tensor4<double> x(1, 1, 2, 2);
  x.at(0, 0, 0, 0) = 1.0;
  CTensor4<double> s = sbn::rfft2(x);
  for (const auto& v : s.data) {
    EXPECT_NEAR(v.real(), 1.0, 1e-12);
    EXPECT_NEAR(v.imag(), 0.0, 1e-12);
  }
}

TEST(Rfft2, MatchesNaiveOnOddDims) {
  Tensor4<double> x = random_tensor(1, 1, 7, 5, 123);
  CTensor4<double> s = sbn::rfft2(x);
  auto ref = sbn::naive_dft2(x.slice(0, 0), 7, 5);
  for (int k = 0; k < 7; ++k)
    for (int l = 0; l < s.packed_width; ++l)
      EXPECT_LT(std::abs(s.slice(0, 0)[k * s.packed_width + l] - ref[k * 5 + l]), 1e-10);
}

TEST(Rfft2, MatchesNaiveOnAllSmallSizes) {
  for (int h = 1; h <= 8; ++h)
    for (int w = 1; w <= 8; ++w)
      for (int seed = 0; seed < 5; ++seed) {
        Tensor4<double> x = random_tensor(1, 1, h, w, sbn::derive_stream(7, h, w, seed));
        CTensor4<double> s = sbn::rfft2(x);
        auto ref = sbn::naive_dft2(x.slice(0, 0), h, w);
        for (int k = 0; k < h; ++k)
          for (int l = 0; l < s.packed_width; ++l)
            ASSERT_LT(std::abs(s.slice(0, 0)[k * s.packed_width + l] - ref[k * w + l]), 1e-10)
                << "h=" << h << " w=" << w;
      }
}

TEST(Rfft2, ProducedSpectraAreHermitianInSelfConjugateColumns) {
  for (int h = 2; h <= 6; ++h)
    for (int w : {2, 4, 5, 6}) {
      Tensor4<double> x = random_tensor(1, 1, h, w, sbn::derive_stream(9, h, w));
      CTensor4<double> s = sbn::rfft2(x);
      const int wp = s.packed_width;
      for (int k = 0; k < h; ++k) {
        auto a = s.slice(0, 0)[k * wp + 0];
        auto b = std::conj(s.slice(0, 0)[((h - k) % h) * wp + 0]);
        EXPECT_LT(std::abs(a - b), 1e-10);
        if (w % 2 == 0) {
          auto c = s.slice(0, 0)[k * wp + (wp - 1)];
          auto d = std::conj(s.slice(0, 0)[((h - k) % h) * wp + (wp - 1)]);
          EXPECT_LT(std::abs(c - d), 1e-10);
        }
      }
    }
}

TEST(Irfft2, RoundTripIdentity) {
  Tensor4<double> x = random_tensor(2, 2, 4, 6, 77);
  Tensor4<double> back = sbn::irfft2(sbn::rfft2(x), 6);
  for (std::int64_t i = 0; i < x.size(); ++i) EXPECT_NEAR(back.data[i], x.data[i], 1e-10);
}

TEST(Irfft2, DcOnlySpectrumGivesConstant) {
  const int h = 3, w = 5;
  CTensor4<double> s(1, 1, h, w / 2 + 1, w);
  const double c = -2.25;
  s.data[0] = {h * w * c, 0.0};
  Tensor4<double> out = sbn::irfft2(s, w);
  for (auto v : out.data) EXPECT_NEAR(v, c, 1e-12);
}

TEST(Irfft2, BetaShiftedSpectrumMatchesNaiveExtensionOracle) {
  const int h = 4, w = 4, wp = 3;
  Tensor4<double> x = random_tensor(1, 1, h, w, 2024);
  CTensor4<double> s = sbn::rfft2(x);
  const double beta = 0.7;
  for (auto& v : s.data) v += std::complex<double>(beta, 0.0);
  Tensor4<double> got = sbn::irfft2(s, w);
  std::vector<std::complex<double>> packed(s.data.begin(), s.data.end());
  std::vector<double> want = oracle::naive_inverse_from_packed(packed, h, wp, w);
  for (int i = 0; i < h * w; ++i) EXPECT_NEAR(got.data[i], want[i], 1e-10);
}

TEST(Irfft2, RejectsInconsistentTargetWidth) {
  Tensor4<double> x = random_tensor(1, 1, 4, 6, 5);
  CTensor4<double> s = sbn::rfft2(x);
  EXPECT_THROW(sbn::irfft2(s, 8), std::invalid_argument);
  EXPECT_NO_THROW(sbn::irfft2(s, 7));  // odd width with the same packing is consistent
}

TEST(NaiveDft2, SingleElement) {
  const double c = 3.5;
  auto out = sbn::naive_dft2(&c, 1, 1);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_NEAR(out[0].real(), c, 1e-14);
  EXPECT_NEAR(out[0].imag(), 0.0, 1e-14);
}

TEST(NaiveDft2, DeltaAtRowOne) {
  double x[4] = {0, 0, 1, 0};  // delta at (1,0) in a 2x2 slice
  auto out = sbn::naive_dft2(x, 2, 2);
  const double want[4] = {1, 1, -1, -1};
  for (int i = 0; i < 4; ++i) {
    EXPECT_NEAR(out[i].real(), want[i], 1e-12);
    EXPECT_NEAR(out[i].imag(), 0.0, 1e-12);
  }
}

TEST(NaiveDft2, SizeGuard) {
  std::vector<double> big(70 * 70, 0.0);
  EXPECT_THROW(sbn::naive_dft2(big.data(), 70, 70), std::invalid_argument);
}

TEST(NaiveDft2, AgreesWithRfft2OnRandomSlices) {
  for (int seed = 0; seed < 50; ++seed) {
    Tensor4<double> x = random_tensor(1, 1, 8, 8, sbn::derive_stream(55, seed));
    auto full = sbn::naive_dft2(x.slice(0, 0), 8, 8);
    CTensor4<double> s = sbn::rfft2(x);
    for (int k = 0; k < 8; ++k)
      for (int l = 0; l < s.packed_width; ++l)
        ASSERT_LT(std::abs(full[k * 8 + l] - s.slice(0, 0)[k * s.packed_width + l]), 1e-10);
  }
}

TEST(Fftshift2, TwoByTwo) {
  std::vector<int> m{1, 2, 3, 4};  // [[A,B],[C,D]]
  auto out = sbn::fftshift2(m, 2, 2);
  EXPECT_EQ(out, (std::vector<int>{4, 3, 2, 1}));
}

TEST(Fftshift2, DcMovesToCenter) {
  std::vector<double> m(5 * 4, 0.0);
  m[0] = 9.0;
  auto out = sbn::fftshift2(m, 5, 4);
  EXPECT_EQ(out[(5 / 2) * 4 + 4 / 2], 9.0);
  double total = 0;
  for (double v : out) total += v;
  EXPECT_EQ(total, 9.0);
}

TEST(Fftshift2, DoubleShiftOnOddDimsMatchesIndexOracle) {
  std::vector<int> m(9);
  for (int i = 0; i < 9; ++i) m[i] = i;
  auto twice = sbn::fftshift2(sbn::fftshift2(m, 3, 3), 3, 3);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c)
      EXPECT_EQ(twice[((r + 2) % 3) * 3 + (c + 2) % 3], m[r * 3 + c]);
}

TEST(MagnitudePhase, ReconstructsCoefficients) {
  Rng rng(31);
  std::vector<std::complex<double>> a(64);
  for (auto& v : a) v = {rng.normal(), rng.normal()};
  a[7] = {0, 0};
  auto mp = sbn::magnitude_phase(a.data(), static_cast<std::int64_t>(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_GE(mp.magnitude[i], 0.0);
    EXPECT_GE(mp.phase[i], 0.0);
    EXPECT_LT(mp.phase[i], 6.2831853071795865);
    std::complex<double> rec = std::polar(mp.magnitude[i], mp.phase[i]);
    EXPECT_LT(std::abs(rec - a[i]), 1e-10);
  }
}

// --- gradient rules --------------------------------------------------------

TEST(DftBackward, DcRealPartLossGivesAllOnes) {
  Tensor4<double> x = random_tensor(1, 1, 3, 4, 11);
  sbn::Tape<double> t;
  int xi = t.leaf(x);
  int s = t.rfft2(xi);
  // loss = real part of the DC coefficient
  Tensor4<double> loss(1, 1, 1, 1);
  loss.data[0] = t.cval(s).data[0].real();
  int root = t.push(std::move(loss), [s](sbn::Tape<double>& tp, int self) {
    CTensor4<double>& a = tp.cadj(s);
    a.data[0] += std::complex<double>(tp.radj(self).data[0], 0.0);
  });
  t.backward(root);
  for (auto v : t.grad(xi).data) EXPECT_NEAR(v, 1.0, 1e-12);
}

TEST(DftBackward, HermitianWeightedEnergyLossMatchesFiniteDifferences) {
  const int h = 4, w = 4;
  Tensor4<double> x = random_tensor(1, 1, h, w, 202);
  auto weighted_energy = [&](const CTensor4<double>& s) {
    double acc = 0;
    for (int k = 0; k < h; ++k)
      for (int l = 0; l < s.packed_width; ++l)
        acc += sbn::hermitian_multiplicity(l, w) * std::norm(s.slice(0, 0)[k * s.packed_width + l]);
    return acc;
  };
  sbn::Tape<double> t;
  int xi = t.leaf(x);
  int s = t.rfft2(xi);
  Tensor4<double> loss(1, 1, 1, 1);
  loss.data[0] = weighted_energy(t.cval(s));
  int root = t.push(std::move(loss), [s, h, w](sbn::Tape<double>& tp, int self) {
    const double up = tp.radj(self).data[0];
    const CTensor4<double>& sv = tp.cval(s);
    CTensor4<double>& a = tp.cadj(s);
    for (int k = 0; k < h; ++k)
      for (int l = 0; l < sv.packed_width; ++l) {
        const int i = k * sv.packed_width + l;
        a.data[i] += 2.0 * sbn::hermitian_multiplicity(l, w) * sv.data[i] * up;
      }
  });
  t.backward(root);

  // the full-spectrum energy gradient is 2*H*W*x
  for (std::int64_t i = 0; i < x.size(); ++i)
    EXPECT_NEAR(t.grad(xi).data[i], 2.0 * h * w * x.data[i], 1e-8);

  auto eval = [&]() { return weighted_energy(sbn::rfft2(x)); };
  sbn::FdResult fd = sbn::fd_check_tensor(x, t.grad(xi), eval);
  EXPECT_TRUE(fd.pass) << "worst err " << fd.worst_err;
}

TEST(DftBackward, ZeroUpstreamGivesZeroGradient) {
  Tensor4<double> x = random_tensor(1, 1, 4, 5, 8);
  sbn::Tape<double> t;
  int xi = t.leaf(x);
  int s = t.rfft2(xi);
  int y = t.irfft2(s, 5);
  Tensor4<double> loss(1, 1, 1, 1);  // ignores y entirely
  int root = t.push(std::move(loss), [y](sbn::Tape<double>&, int) { (void)y; });
  t.backward(root);
  for (auto v : t.grad(xi).data) EXPECT_EQ(v, 0.0);
}

TEST(DftBackward, RoundTripCompositionPassesFiniteDifferences) {
  for (int w : {4, 5}) {
    Tensor4<double> x = random_tensor(1, 2, 4, w, sbn::derive_stream(606, w));
    Tensor4<double> weights = random_tensor(1, 2, 4, w, sbn::derive_stream(607, w));
    auto eval = [&]() {
      Tensor4<double> y = sbn::irfft2(sbn::rfft2(x), w);
      double acc = 0;
      for (std::int64_t i = 0; i < y.size(); ++i) acc += y.data[i] * weights.data[i];
      return acc;
    };
    sbn::Tape<double> t;
    int xi = t.leaf(x);
    int y = t.irfft2(t.rfft2(xi), w);
    Tensor4<double> loss(1, 1, 1, 1);
    loss.data[0] = eval();
    int root = t.push(std::move(loss), [y, weights](sbn::Tape<double>& tp, int self) {
      Tensor4<double> g = weights;
      for (auto& v : g.data) v *= tp.radj(self).data[0];
      tp.add_radj(y, g);
    });
    t.backward(root);
    sbn::FdResult fd = sbn::fd_check_tensor(x, t.grad(xi), eval);
    EXPECT_TRUE(fd.pass) << "w=" << w << " worst err " << fd.worst_err;
  }
}

// --- module invariants ------------------------------------------------------

TEST(SpectrumInvariants, ParsevalOverConjugateExtension) {
  for (int seed = 0; seed < 20; ++seed) {
    Rng rng(sbn::derive_stream(4000, seed));
    const int h = 1 + static_cast<int>(rng.below(16));
    const int w = 1 + static_cast<int>(rng.below(16));
    Tensor4<double> x = random_tensor(1, 1, h, w, sbn::derive_stream(4001, seed));
    CTensor4<double> s = sbn::rfft2(x);
    double space = 0;
    for (auto v : x.data) space += v * v;
    double freq = 0;
    for (int k = 0; k < h; ++k)
      for (int l = 0; l < s.packed_width; ++l)
        freq += sbn::hermitian_multiplicity(l, w) * std::norm(s.slice(0, 0)[k * s.packed_width + l]);
    EXPECT_NEAR(space * h * w, freq, 1e-10 * std::max(1.0, freq));
  }
}

TEST(SpectrumInvariants, Linearity) {
  Tensor4<double> x = random_tensor(1, 1, 6, 7, 1);
  Tensor4<double> y = random_tensor(1, 1, 6, 7, 2);
  const double a = 1.7, b = -0.4;
  Tensor4<double> z(1, 1, 6, 7);
  for (std::int64_t i = 0; i < z.size(); ++i) z.data[i] = a * x.data[i] + b * y.data[i];
  CTensor4<double> sz = sbn::rfft2(z), sx = sbn::rfft2(x), sy = sbn::rfft2(y);
  for (std::size_t i = 0; i < sz.data.size(); ++i)
    EXPECT_LT(std::abs(sz.data[i] - (a * sx.data[i] + b * sy.data[i])), 1e-10);
}

TEST(SpectrumInvariants, PackedWidthIsFloorHalfPlusOne) {
  for (int w = 1; w <= 9; ++w) {
    Tensor4<double> x = random_tensor(1, 1, 2, w, w);
    EXPECT_EQ(sbn::rfft2(x).packed_width, w / 2 + 1);
  }
}

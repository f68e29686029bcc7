#pragma once

#include <algorithm>
#include <array>
#include <string>
#include <vector>

#include "sbn/fft.hpp"
#include "sbn/tensor.hpp"

namespace sbn {

// Compensated (Kahan) sum of squares, then sqrt.
template <typename T>
double frobenius_norm(const Tensor4<T>& t) {
  double sum = 0, comp = 0;
  for (std::int64_t i = 0; i < t.size(); ++i) {
    const double v = static_cast<double>(t.data[i]);
    const double term = v * v - comp;
    const double next = sum + term;
    comp = (next - sum) - term;
    sum = next;
  }
  return std::sqrt(sum);
}

// The nine tracked levels, top to bottom: max; 93; 84; 69; 50; 31; 16; 7; min.
inline constexpr std::array<double, 9> kPercentileLevels{100, 93, 84, 69, 50, 31, 16, 7, 0};

// Order statistics with linear interpolation between adjacent ranks, returned
// in the same descending order as kPercentileLevels.
template <typename T>
std::array<double, 9> percentile_bands(const Tensor4<T>& t) {
  check(t.size() > 0, "percentile_bands: empty tensor");
  std::vector<double> v(t.data.begin(), t.data.end());
  std::sort(v.begin(), v.end());
  const double nm1 = static_cast<double>(v.size() - 1);
  std::array<double, 9> out{};
  for (std::size_t i = 0; i < 9; ++i) {
    const double rank = kPercentileLevels[i] / 100.0 * nm1;
    const std::size_t lo = static_cast<std::size_t>(rank);
    const double frac = rank - static_cast<double>(lo);
    out[i] = (lo + 1 < v.size()) ? v[lo] + frac * (v[lo + 1] - v[lo]) : v[lo];
  }
  return out;
}

// DC-centered magnitude image of one channel of the first batch element,
// computed through the reference full-spectrum transform.
template <typename T>
Image2D<T> magnitude_map(const Tensor4<T>& t, int channel) {
  check(channel >= 0 && channel < t.channels,
        "magnitude_map: channel " + std::to_string(channel) + " out of range");
  check(t.batch >= 1, "magnitude_map: empty batch");
  const int H = t.height, W = t.width;
  std::vector<cplx<T>> spec = naive_dft2(t.slice(0, channel), H, W);
  std::vector<T> mag(spec.size());
  for (std::size_t i = 0; i < spec.size(); ++i) mag[i] = std::abs(spec[i]);
  mag = fftshift2(mag, H, W);
  Image2D<T> img(H, W);
  img.v = std::move(mag);
  return img;
}

// Max over median of the full-spectrum coefficient magnitudes of one channel
// (first batch element); the uniformity measure used to compare feature maps
// before and after an SBN layer.
template <typename T>
double max_median_magnitude_ratio(const Tensor4<T>& t, int channel) {
  Image2D<T> m = magnitude_map(t, channel);
  std::vector<double> v(m.v.begin(), m.v.end());
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  const double med = (n % 2 == 1) ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  const double mx = v.back();
  return mx / std::max(med, 1e-300);
}

enum class MetricKind { frobenius_norm, percentile_band, magnitude_map_ref };

inline const char* metric_kind_name(MetricKind k) {
  switch (k) {
    case MetricKind::frobenius_norm: return "frobenius_norm";
    case MetricKind::percentile_band: return "percentile_band";
    case MetricKind::magnitude_map_ref: return "magnitude_map_ref";
  }
  return "?";
}

// One instrumentation sample; exactly one payload field is meaningful for a
// given kind.
struct MetricRecord {
  std::string run_id;
  int epoch = 0;
  std::string layer_tag;
  MetricKind kind = MetricKind::frobenius_norm;
  double value = 0;                // frobenius_norm
  std::array<double, 9> bands{};   // percentile_band
  std::string path;                // magnitude_map_ref
};

}  // namespace sbn

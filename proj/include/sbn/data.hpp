#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "sbn/optim.hpp"
#include "sbn/parallel.hpp"
#include "sbn/rng.hpp"
#include "sbn/tensor.hpp"

namespace sbn {

template <typename T>
struct Dataset {
  Tensor4<T> train_images;  // [N,3,32,32], values in [0,1]
  std::vector<int> train_labels;
  Tensor4<T> test_images;
  std::vector<int> test_labels;
  int classes = 10;
};

enum class DatasetKind { cifar10_binary, synthetic_blobs };

struct DatasetSpec {
  DatasetKind kind = DatasetKind::synthetic_blobs;
  std::string path;  // cifar10_binary: directory with the 6 batch files
  std::uint64_t seed = 7;
  int n_train = 5000;  // 0 = all available
  int n_test = 1000;
  int classes = 10;
  double snr = 1.0;  // synthetic blobs: class-signal scale relative to unit noise
};

// ---------------------------------------------------------------------------
// CIFAR-10 binary format: records of 3073 bytes, one label byte (0-9) followed
// by 3x1024 channel-planar row-major pixel bytes.
// ---------------------------------------------------------------------------

inline constexpr int kCifarRecordBytes = 3073;
inline constexpr int kCifarImageBytes = 3072;

template <typename T>
void parse_cifar_records(const std::vector<unsigned char>& bytes, const std::string& origin,
                         std::vector<T>& pixels, std::vector<int>& labels) {
  check(bytes.size() % kCifarRecordBytes == 0,
        "cifar10: truncated file '" + origin + "' (" + std::to_string(bytes.size()) +
            " bytes is not a multiple of 3073)");
  const std::size_t n = bytes.size() / kCifarRecordBytes;
  const T inv = static_cast<T>(1.0 / 255.0);
  pixels.reserve(pixels.size() + n * kCifarImageBytes);
  labels.reserve(labels.size() + n);
  for (std::size_t r = 0; r < n; ++r) {
    const unsigned char* rec = bytes.data() + r * kCifarRecordBytes;
    check(rec[0] <= 9, "cifar10: label byte " + std::to_string(int(rec[0])) + " > 9 in '" +
                           origin + "' record " + std::to_string(r));
    labels.push_back(rec[0]);
    for (int i = 0; i < kCifarImageBytes; ++i)
      pixels.push_back(static_cast<T>(rec[1 + i]) * inv);
  }
}

inline std::vector<unsigned char> read_file_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  check(f.good(), "cannot open file '" + path + "'");
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(f),
                                    std::istreambuf_iterator<char>());
}

template <typename T>
Dataset<T> load_cifar10(const std::string& dir) {
  Dataset<T> ds;
  std::vector<T> px;
  std::vector<int> lb;
  for (int i = 1; i <= 5; ++i) {
    const std::string p = dir + "/data_batch_" + std::to_string(i) + ".bin";
    parse_cifar_records(read_file_bytes(p), p, px, lb);
  }
  ds.train_images = Tensor4<T>(static_cast<int>(lb.size()), 3, 32, 32);
  ds.train_images.data = std::move(px);
  ds.train_labels = std::move(lb);

  std::vector<T> tpx;
  std::vector<int> tlb;
  const std::string tp = dir + "/test_batch.bin";
  parse_cifar_records(read_file_bytes(tp), tp, tpx, tlb);
  ds.test_images = Tensor4<T>(static_cast<int>(tlb.size()), 3, 32, 32);
  ds.test_images.data = std::move(tpx);
  ds.test_labels = std::move(tlb);
  ds.classes = 10;
  return ds;
}

// ---------------------------------------------------------------------------
// Synthetic blob dataset: smooth per-class color patterns plus pixel noise,
// quantized to bytes like a real image source. Class separability scales with
// snr. Labels cycle deterministically so every split stays balanced.
// ---------------------------------------------------------------------------

namespace data_detail {

// 4x4 Gaussian grid bilinearly upsampled to 32x32, per channel: smooth enough
// to survive the random-crop augmentation.
template <typename T>
std::vector<double> blob_center(Rng& rng) {
  constexpr int G = 4, S = 32;
  std::array<double, G * G * 3> grid{};
  for (auto& v : grid) v = rng.normal();
  std::vector<double> img(3 * S * S);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < S; ++y)
      for (int x = 0; x < S; ++x) {
        const double gy = static_cast<double>(y) * (G - 1) / (S - 1);
        const double gx = static_cast<double>(x) * (G - 1) / (S - 1);
        const int y0 = static_cast<int>(gy), x0 = static_cast<int>(gx);
        const int y1 = std::min(y0 + 1, G - 1), x1 = std::min(x0 + 1, G - 1);
        const double fy = gy - y0, fx = gx - x0;
        auto g = [&](int yy, int xx) { return grid[(c * G + yy) * G + xx]; };
        img[(c * S + y) * S + x] = (1 - fy) * ((1 - fx) * g(y0, x0) + fx * g(y0, x1)) +
                                   fy * ((1 - fx) * g(y1, x0) + fx * g(y1, x1));
      }
  return img;
}

template <typename T>
void fill_split(Tensor4<T>& images, std::vector<int>& labels,
                const std::vector<std::vector<double>>& centers, int n, int classes, double snr,
                std::uint64_t seed, std::uint64_t split_tag) {
  images = Tensor4<T>(n, 3, 32, 32);
  labels.resize(n);
  parallel_for(n, [&](std::int64_t i) {
    const int cls = static_cast<int>(i % classes);
    labels[i] = cls;
    Rng rng(derive_stream(seed, 0xb10b5ull, split_tag, static_cast<std::uint64_t>(i)));
    const std::vector<double>& ctr = centers[cls];
    T* out = images.data.data() + i * 3 * 32 * 32;
    for (int p = 0; p < 3 * 32 * 32; ++p) {
      const double raw = snr * ctr[p] + rng.normal();
      int byte = static_cast<int>(std::lround(128.0 + 42.0 * raw));
      byte = std::min(255, std::max(0, byte));
      out[p] = static_cast<T>(byte / 255.0);
    }
  });
}

}  // namespace data_detail

template <typename T>
Dataset<T> synth_blobs(std::uint64_t seed, int n_train, int n_test, int classes, double snr) {
  check(classes >= 2, "synth_blobs: need at least 2 classes");
  check(n_train >= 0 && n_test >= 0, "synth_blobs: negative sample count");
  Dataset<T> ds;
  ds.classes = classes;
  Rng crng(derive_stream(seed, 0xce47ull));
  std::vector<std::vector<double>> centers;
  centers.reserve(classes);
  for (int c = 0; c < classes; ++c) centers.push_back(data_detail::blob_center<T>(crng));
  data_detail::fill_split(ds.train_images, ds.train_labels, centers, n_train, classes, snr, seed,
                          1);
  data_detail::fill_split(ds.test_images, ds.test_labels, centers, n_test, classes, snr, seed, 2);
  return ds;
}

template <typename T>
Dataset<T> load_dataset(const DatasetSpec& spec) {
  if (spec.kind == DatasetKind::synthetic_blobs)
    return synth_blobs<T>(spec.seed, spec.n_train, spec.n_test, spec.classes, spec.snr);
  Dataset<T> full = load_cifar10<T>(spec.path);
  auto take = [](Tensor4<T>& imgs, std::vector<int>& lbls, int n) {
    if (n <= 0 || n >= imgs.batch) return;
    imgs.data.resize(static_cast<std::size_t>(n) * imgs.channels * imgs.height * imgs.width);
    imgs.batch = n;
    lbls.resize(n);
  };
  take(full.train_images, full.train_labels, spec.n_train);
  take(full.test_images, full.test_labels, spec.n_test);
  return full;
}

// ---------------------------------------------------------------------------
// Augmentation
// ---------------------------------------------------------------------------

// Zero padding, uniform crop offset, Bernoulli horizontal flip, then
// channelwise standardization. Each sample draws from its own stream derived
// from (seed, epoch, dataset index), so the result does not depend on batch
// composition or thread count.
template <typename T>
Tensor4<T> augment_batch(const Tensor4<T>& batch, const TrainConfig& cfg, int epoch,
                         const std::vector<std::int64_t>& dataset_indices) {
  const int B = batch.batch, C = batch.channels, H = batch.height, W = batch.width;
  check(static_cast<int>(dataset_indices.size()) == B, "augment_batch: index count mismatch");
  const int pad = cfg.crop_padding, cs = cfg.crop_size;
  check(cs <= H + 2 * pad && cs <= W + 2 * pad, "augment_batch: crop larger than padded input");
  Tensor4<T> out(B, C, cs, cs);
  parallel_for(B, [&](std::int64_t i) {
    Rng rng(derive_stream(cfg.seed, 0xa46ull, static_cast<std::uint64_t>(epoch),
                          static_cast<std::uint64_t>(dataset_indices[i])));
    const int oy = static_cast<int>(rng.below(static_cast<std::uint64_t>(H + 2 * pad - cs + 1)));
    const int ox = static_cast<int>(rng.below(static_cast<std::uint64_t>(W + 2 * pad - cs + 1)));
    const bool flip = rng.bernoulli(cfg.hflip_prob);
    for (int c = 0; c < C; ++c) {
      const T mean = static_cast<T>(cfg.norm_mean[c % 3]);
      const T inv_std = static_cast<T>(1.0 / cfg.norm_std[c % 3]);
      const T* src = batch.slice(static_cast<int>(i), c);
      T* dst = out.slice(static_cast<int>(i), c);
      for (int y = 0; y < cs; ++y) {
        const int sy = y + oy - pad;
        for (int x = 0; x < cs; ++x) {
          const int sx0 = x + ox - pad;
          const int sx = flip ? (cs - 1 - x) + ox - pad : sx0;
          T v = T(0);
          if (sy >= 0 && sy < H && sx >= 0 && sx < W) v = src[sy * W + sx];
          dst[y * cs + x] = (v - mean) * inv_std;
        }
      }
    }
  });
  return out;
}

// Eval path: standardization only.
template <typename T>
Tensor4<T> normalize_batch(const Tensor4<T>& batch, const TrainConfig& cfg) {
  Tensor4<T> out(batch.batch, batch.channels, batch.height, batch.width);
  const int plane = batch.height * batch.width;
  parallel_for(static_cast<std::int64_t>(batch.batch) * batch.channels, [&](std::int64_t t) {
    const int c = static_cast<int>(t % batch.channels);
    const T mean = static_cast<T>(cfg.norm_mean[c % 3]);
    const T inv_std = static_cast<T>(1.0 / cfg.norm_std[c % 3]);
    const T* src = batch.data.data() + t * plane;
    T* dst = out.data.data() + t * plane;
    for (int i = 0; i < plane; ++i) dst[i] = (src[i] - mean) * inv_std;
  });
  return out;
}

// Gather a batch by dataset indices.
template <typename T>
Tensor4<T> gather(const Tensor4<T>& images, const std::vector<std::int64_t>& idx) {
  Tensor4<T> out(static_cast<int>(idx.size()), images.channels, images.height, images.width);
  const std::size_t stride =
      static_cast<std::size_t>(images.channels) * images.height * images.width;
  for (std::size_t i = 0; i < idx.size(); ++i)
    std::copy_n(images.data.data() + idx[i] * stride, stride, out.data.data() + i * stride);
  return out;
}

}  // namespace sbn

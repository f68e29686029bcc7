#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace sbn {

// Dense row-major (batch, channel, height, width) tensor. Every activation in
// the library flows through this carrier; matrices are stored as B x F x 1 x 1
// and per-channel parameter vectors as 1 x C x 1 x 1.
template <typename T>
struct Tensor4 {
  int batch = 0, channels = 0, height = 0, width = 0;
  std::vector<T> data;

  Tensor4() = default;
  Tensor4(int b, int c, int h, int w, T fill = T(0))
      : batch(b), channels(c), height(h), width(w) {
    if (b < 0 || c < 0 || h < 0 || w < 0)
      throw std::invalid_argument("Tensor4: negative dimension");
    data.assign(static_cast<std::size_t>(b) * c * h * w, fill);
  }

  std::int64_t size() const {
    return static_cast<std::int64_t>(batch) * channels * height * width;
  }
  bool empty() const { return size() == 0; }

  T& at(int b, int c, int h, int w) {
    return data[((static_cast<std::size_t>(b) * channels + c) * height + h) * width + w];
  }
  T at(int b, int c, int h, int w) const {
    return data[((static_cast<std::size_t>(b) * channels + c) * height + h) * width + w];
  }

  // Pointer to the contiguous h*w plane of one (batch, channel) slice.
  T* slice(int b, int c) {
    return data.data() + (static_cast<std::size_t>(b) * channels + c) * height * width;
  }
  const T* slice(int b, int c) const {
    return data.data() + (static_cast<std::size_t>(b) * channels + c) * height * width;
  }

  bool same_shape(const Tensor4& o) const {
    return batch == o.batch && channels == o.channels && height == o.height && width == o.width;
  }

  std::string shape_str() const {
    std::ostringstream os;
    os << "[" << batch << "," << channels << "," << height << "," << width << "]";
    return os.str();
  }

  bool all_finite() const {
    for (const T& v : data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }
};

// Packed half-spectrum of a real Tensor4 after a real 2D DFT. Only the
// non-redundant packed_width = floor(W/2)+1 columns are stored; the original
// spatial width is carried so the inverse knows how to extend.
template <typename T>
struct CTensor4 {
  int batch = 0, channels = 0, height = 0, packed_width = 0;
  int spatial_width = 0;  // W of the signal this spectrum came from
  std::vector<std::complex<T>> data;

  CTensor4() = default;
  CTensor4(int b, int c, int h, int wp, int w_spatial)
      : batch(b), channels(c), height(h), packed_width(wp), spatial_width(w_spatial) {
    if (wp != w_spatial / 2 + 1)
      throw std::invalid_argument("CTensor4: packed_width must be floor(W/2)+1");
    data.assign(static_cast<std::size_t>(b) * c * h * wp, std::complex<T>(0, 0));
  }

  std::int64_t size() const {
    return static_cast<std::int64_t>(batch) * channels * height * packed_width;
  }

  std::complex<T>* slice(int b, int c) {
    return data.data() +
           (static_cast<std::size_t>(b) * channels + c) * height * packed_width;
  }
  const std::complex<T>* slice(int b, int c) const {
    return data.data() +
           (static_cast<std::size_t>(b) * channels + c) * height * packed_width;
  }

  bool same_shape(const CTensor4& o) const {
    return batch == o.batch && channels == o.channels && height == o.height &&
           packed_width == o.packed_width && spatial_width == o.spatial_width;
  }

  std::string shape_str() const {
    std::ostringstream os;
    os << "[" << batch << "," << channels << "," << height << "," << packed_width
       << " (W=" << spatial_width << ")]";
    return os.str();
  }
};

// A bare 2-D real matrix, used for rendered magnitude maps and PGM emission.
template <typename T>
struct Image2D {
  int rows = 0, cols = 0;
  std::vector<T> v;

  Image2D() = default;
  Image2D(int r, int c, T fill = T(0)) : rows(r), cols(c), v(static_cast<std::size_t>(r) * c, fill) {}
  T& at(int r, int c) { return v[static_cast<std::size_t>(r) * cols + c]; }
  T at(int r, int c) const { return v[static_cast<std::size_t>(r) * cols + c]; }
};

inline void check(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

}  // namespace sbn

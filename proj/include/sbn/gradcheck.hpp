#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "sbn/rng.hpp"
#include "sbn/tensor.hpp"

namespace sbn {

// Central finite differences against an analytic gradient. The evaluation
// callback must be a pure function of the tensor contents.
struct FdOptions {
  double step = 1e-5;
  double rel_tol = 1e-6;
  double abs_floor = 1e-8;
  int max_entries = 0;  // 0 = check every entry; otherwise a deterministic subset
  std::uint64_t subsample_seed = 17;
};

struct FdResult {
  bool pass = true;
  int checked = 0;
  double worst_err = 0;     // |fd - analytic| at the worst entry
  double worst_ratio = 0;   // err / tol at the worst entry
  std::int64_t worst_index = -1;

  void merge(const FdResult& o) {
    pass = pass && o.pass;
    checked += o.checked;
    if (o.worst_ratio > worst_ratio) {
      worst_ratio = o.worst_ratio;
      worst_err = o.worst_err;
      worst_index = o.worst_index;
    }
  }
};

template <typename F>
FdResult fd_check_tensor(Tensor4<double>& x, const Tensor4<double>& analytic, F&& eval,
                         const FdOptions& opt = {}) {
  check(x.same_shape(analytic), "fd_check_tensor: gradient shape mismatch");
  std::vector<std::int64_t> idx(static_cast<std::size_t>(x.size()));
  std::iota(idx.begin(), idx.end(), 0);
  if (opt.max_entries > 0 && static_cast<std::int64_t>(idx.size()) > opt.max_entries) {
    Rng rng(derive_stream(opt.subsample_seed, x.size()));
    shuffle_indices(idx.begin(), idx.end(), rng);
    idx.resize(opt.max_entries);
    std::sort(idx.begin(), idx.end());
  }
  FdResult res;
  for (std::int64_t i : idx) {
    const double v = x.data[i];
    x.data[i] = v + opt.step;
    const double f1 = eval();
    x.data[i] = v - opt.step;
    const double f2 = eval();
    x.data[i] = v;
    const double fd = (f1 - f2) / (2.0 * opt.step);
    const double an = analytic.data[i];
    const double err = std::abs(fd - an);
    const double tol = std::max(opt.abs_floor, opt.rel_tol * std::max(std::abs(fd), std::abs(an)));
    const double ratio = err / tol;
    ++res.checked;
    if (ratio > res.worst_ratio) {
      res.worst_ratio = ratio;
      res.worst_err = err;
      res.worst_index = i;
    }
    if (err > tol) res.pass = false;
  }
  return res;
}

}  // namespace sbn

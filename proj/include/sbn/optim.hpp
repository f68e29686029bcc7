#pragma once

#include <string>
#include <vector>

#include "sbn/models.hpp"
#include "sbn/tensor.hpp"

namespace sbn {

struct TrainConfig {
  int batch_size = 128;
  int epochs = 30;
  double lr0 = 0.1;
  std::vector<int> milestones{15, 23};
  double lr_decay = 0.2;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double val_fraction = 0.1;
  std::uint64_t seed = 1;
  // augmentation (train split only; eval data is normalized but never cropped
  // or flipped)
  int crop_size = 32;
  int crop_padding = 4;
  double hflip_prob = 0.5;
  std::array<double, 3> norm_mean{0.5, 0.5, 0.5};
  std::array<double, 3> norm_std{0.25, 0.25, 0.25};
  bool decay_sbn_affine = true;  // weight decay also shrinks BN/SBN gamma, beta

  void validate() const {
    check(batch_size >= 1, "train config: batch_size must be >= 1");
    check(epochs >= 0, "train config: epochs must be >= 0");
    check(lr_decay > 0.0 && lr_decay <= 1.0, "train config: lr_decay must be in (0,1]");
    check(val_fraction > 0.0 && val_fraction < 1.0, "train config: val_fraction must be in (0,1)");
    for (std::size_t i = 0; i < milestones.size(); ++i) {
      check(milestones[i] < epochs, "train config: milestone beyond last epoch");
      if (i > 0) check(milestones[i] > milestones[i - 1],
                       "train config: milestones must be strictly increasing");
    }
    check(momentum >= 0.0 && momentum < 1.0, "train config: momentum must be in [0,1)");
    check(weight_decay >= 0.0, "train config: weight_decay must be >= 0");
    check(crop_padding >= 0, "train config: crop_padding must be >= 0");
    check(hflip_prob >= 0.0 && hflip_prob <= 1.0, "train config: hflip_prob must be in [0,1]");
  }
};

// Step decay applied at the start of each milestone epoch (inclusive).
inline double lr_at(int epoch, const TrainConfig& cfg) {
  int hits = 0;
  for (int m : cfg.milestones)
    if (m <= epoch) ++hits;
  double lr = cfg.lr0;
  for (int i = 0; i < hits; ++i) lr *= cfg.lr_decay;
  return lr;
}

// Classical momentum SGD with L2-style weight decay folded into the gradient:
//   v <- momentum * v + (g + wd * w);  w <- w - lr * v
// Decay applies to conv/linear weights and, when decay_affine is set, to the
// BN/SBN scale/shift parameters; never to biases or running statistics.
template <typename T>
void sgd_step(const std::vector<ParamRef<T>>& params, const std::vector<Tensor4<T>>& grads,
              std::vector<Tensor4<T>>& velocity, double lr, double momentum, double weight_decay,
              bool decay_affine) {
  check(params.size() == grads.size() && params.size() == velocity.size(),
        "sgd_step: parameter/gradient/velocity count mismatch");
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor4<T>& w = *params[p].tensor;
    const Tensor4<T>& g = grads[p];
    Tensor4<T>& v = velocity[p];
    check(w.same_shape(g) && w.same_shape(v), "sgd_step: shape mismatch at " + params[p].name);
    if (!g.all_finite())
      throw std::runtime_error("sgd_step: non-finite gradient at parameter '" + params[p].name +
                               "'");
    double wd = 0.0;
    if (params[p].kind == ParamKind::weight)
      wd = weight_decay;
    else if (params[p].kind == ParamKind::affine && decay_affine)
      wd = weight_decay;
    const T lrT = static_cast<T>(lr), moT = static_cast<T>(momentum), wdT = static_cast<T>(wd);
    for (std::int64_t i = 0; i < w.size(); ++i) {
      v.data[i] = moT * v.data[i] + (g.data[i] + wdT * w.data[i]);
      w.data[i] -= lrT * v.data[i];
    }
  }
}

}  // namespace sbn

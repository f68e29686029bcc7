#pragma once

#include <functional>
#include <utility>
#include <variant>
#include <vector>

#include "sbn/fft.hpp"
#include "sbn/ops.hpp"
#include "sbn/tensor.hpp"

namespace sbn {

// Define-by-run tape. Nodes are appended in execution order, which is a valid
// topological order, so reverse-mode differentiation is a single reverse sweep.
// Values are either real feature maps or packed spectra; adjoints mirror the
// value type and are allocated lazily (a node that never receives an adjoint
// contributes nothing and its backward is skipped).
//
// A tape is owned by exactly one training step and never shared.
template <typename T>
class Tape {
 public:
  using Real = Tensor4<T>;
  using Cplx = CTensor4<T>;

  explicit Tape(bool grad_enabled = true) : grad_(grad_enabled) {}

  bool grad_enabled() const { return grad_; }
  int size() const { return static_cast<int>(nodes_.size()); }

  int leaf(Real v) { return push(std::move(v), nullptr); }
  int leafc(Cplx v) { return push(std::move(v), nullptr); }

  // Extension point used by the normalization layers: push a computed value
  // with a custom backward.
  int push(Real v, std::function<void(Tape&, int)> back) {
    nodes_.push_back(Node{std::move(v), std::monostate{}, grad_ ? std::move(back) : nullptr});
    return size() - 1;
  }
  int push(Cplx v, std::function<void(Tape&, int)> back) {
    nodes_.push_back(Node{std::move(v), std::monostate{}, grad_ ? std::move(back) : nullptr});
    return size() - 1;
  }

  bool is_complex(int id) const { return std::holds_alternative<Cplx>(nodes_[id].value); }

  const Real& rval(int id) const { return std::get<Real>(nodes_[id].value); }
  const Cplx& cval(int id) const { return std::get<Cplx>(nodes_[id].value); }

  bool adj_engaged(int id) const {
    return !std::holds_alternative<std::monostate>(nodes_[id].adjoint);
  }

  // Adjoint accessors; allocate zeros of the value's shape on first touch.
  Real& radj(int id) {
    Node& nd = nodes_[id];
    if (!adj_engaged(id)) {
      const Real& v = std::get<Real>(nd.value);
      nd.adjoint = Real(v.batch, v.channels, v.height, v.width);
    }
    return std::get<Real>(nd.adjoint);
  }
  Cplx& cadj(int id) {
    Node& nd = nodes_[id];
    if (!adj_engaged(id)) {
      const Cplx& v = std::get<Cplx>(nd.value);
      nd.adjoint = Cplx(v.batch, v.channels, v.height, v.packed_width, v.spatial_width);
    }
    return std::get<Cplx>(nd.adjoint);
  }

  void add_radj(int id, const Real& g) {
    Real& a = radj(id);
    for (std::int64_t i = 0; i < g.size(); ++i) a.data[i] += g.data[i];
  }
  void add_cadj(int id, const Cplx& g) {
    Cplx& a = cadj(id);
    for (std::int64_t i = 0; i < g.size(); ++i) a.data[i] += g.data[i];
  }

  // Gradient of the most recent backward() w.r.t. a real node (zeros if the
  // node was unreachable from the root).
  const Real& grad(int id) { return radj(id); }

  // Reverse sweep from a scalar root.
  void backward(int root) {
    check(root >= 0 && root < size(), "backward: root id out of range");
    check(!is_complex(root) && rval(root).size() == 1,
          "backward: root must be a real scalar node, got " +
              (is_complex(root) ? cval(root).shape_str() : rval(root).shape_str()));
    radj(root).data[0] = T(1);
    for (int i = root; i >= 0; --i) {
      Node& nd = nodes_[i];
      if (nd.back && adj_engaged(i)) nd.back(*this, i);
    }
  }

  // ---------------------------------------------------------------------
  // Recorded primitive operations
  // ---------------------------------------------------------------------

  int conv2d(int x, int k, int stride, int pad) {
    Real out = conv2d_forward(rval(x), rval(k), stride, pad);
    return push(std::move(out), [x, k, stride, pad](Tape& t, int self) {
      const Real& g = t.radj(self);
      const Real& xv = t.rval(x);
      const Real& kv = t.rval(k);
      t.add_radj(x, conv2d_backward_input(g, kv, stride, pad, xv.height, xv.width));
      t.add_radj(k, conv2d_backward_weight(xv, g, kv, stride, pad));
    });
  }

  int relu(int x) {
    Real out = relu_forward(rval(x));
    return push(std::move(out), [x](Tape& t, int self) {
      t.add_radj(x, relu_backward(t.rval(x), t.radj(self)));
    });
  }

  int maxpool2x2(int x) {
    std::vector<std::uint8_t> argmax;
    Real out = maxpool2x2_forward(rval(x), argmax);
    return push(std::move(out),
                [x, argmax = std::move(argmax)](Tape& t, int self) {
                  const Real& xv = t.rval(x);
                  t.add_radj(x, maxpool2x2_backward(t.radj(self), argmax, xv.height, xv.width));
                });
  }

  int linear(int x, int w, int b) {
    Real out = linear_forward(rval(x), rval(w), rval(b));
    return push(std::move(out), [x, w, b](Tape& t, int self) {
      const Real& g = t.radj(self);
      const Real& xv = t.rval(x);
      t.add_radj(x, linear_backward_input(g, t.rval(w), xv.channels));
      Real dw, db;
      linear_backward_params(xv, g, dw, db);
      t.add_radj(w, dw);
      t.add_radj(b, db);
    });
  }

  int global_avg_pool(int x) {
    Real out = global_avg_pool_forward(rval(x));
    return push(std::move(out), [x](Tape& t, int self) {
      const Real& xv = t.rval(x);
      t.add_radj(x, global_avg_pool_backward(t.radj(self), xv.height, xv.width));
    });
  }

  int add(int a, int b) {
    const Real& av = rval(a);
    const Real& bv = rval(b);
    check(av.same_shape(bv), "add: shape mismatch " + av.shape_str() + " vs " + bv.shape_str());
    Real out(av.batch, av.channels, av.height, av.width);
    for (std::int64_t i = 0; i < out.size(); ++i) out.data[i] = av.data[i] + bv.data[i];
    return push(std::move(out), [a, b](Tape& t, int self) {
      const Real& g = t.radj(self);
      t.add_radj(a, g);
      t.add_radj(b, g);
    });
  }

  int dropout(int x, double p, std::uint64_t stream) {
    std::vector<std::uint8_t> mask;
    Real out = dropout_forward(rval(x), p, stream, mask);
    return push(std::move(out), [x, p, mask = std::move(mask)](Tape& t, int self) {
      t.add_radj(x, dropout_backward(t.radj(self), mask, p));
    });
  }

  int rfft2(int x) {
    Cplx out = sbn::rfft2(rval(x));
    return push(std::move(out), [x](Tape& t, int self) {
      const Cplx& g = t.cadj(self);
      const Real& xv = t.rval(x);
      Real dx(xv.batch, xv.channels, xv.height, xv.width);
      const std::int64_t n = static_cast<std::int64_t>(xv.batch) * xv.channels;
      parallel_for(n, [&](std::int64_t i) {
        int b = static_cast<int>(i / xv.channels), c = static_cast<int>(i % xv.channels);
        rfft2_adjoint_slice(g.slice(b, c), g.height, g.packed_width, g.spatial_width,
                            dx.slice(b, c));
      });
      t.add_radj(x, dx);
    });
  }

  int irfft2(int s, int target_width) {
    Real out = sbn::irfft2(cval(s), target_width);
    return push(std::move(out), [s](Tape& t, int self) {
      const Real& g = t.radj(self);
      const Cplx& sv = t.cval(s);
      Cplx ds(sv.batch, sv.channels, sv.height, sv.packed_width, sv.spatial_width);
      const std::int64_t n = static_cast<std::int64_t>(sv.batch) * sv.channels;
      parallel_for(n, [&](std::int64_t i) {
        int b = static_cast<int>(i / sv.channels), c = static_cast<int>(i % sv.channels);
        irfft2_adjoint_slice(g.slice(b, c), g.height, g.width, ds.slice(b, c));
      });
      t.add_cadj(s, ds);
    });
  }

  int softmax_cross_entropy(int logits, std::vector<int> labels) {
    Real probs;
    T loss = softmax_cross_entropy_forward(rval(logits), labels, probs);
    Real out(1, 1, 1, 1);
    out.data[0] = loss;
    return push(std::move(out),
                [logits, labels = std::move(labels), probs = std::move(probs)](Tape& t, int self) {
                  const T up = t.radj(self).data[0];
                  t.add_radj(logits, softmax_cross_entropy_backward(probs, labels, up));
                });
  }

 private:
  struct Node {
    std::variant<Real, Cplx> value;
    std::variant<std::monostate, Real, Cplx> adjoint;
    std::function<void(Tape&, int)> back;
  };

  std::vector<Node> nodes_;
  bool grad_;
};

}  // namespace sbn

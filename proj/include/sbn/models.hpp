#pragma once

#include <algorithm>
#include <array>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "sbn/autograd.hpp"
#include "sbn/norm.hpp"
#include "sbn/rng.hpp"

namespace sbn {

enum class Family { resnet, vgg };

// Placement follows the module-numbering convention: "SBN34" means every BN
// layer in modules 3 and 4 is followed by an SBN layer; "2BN34" stacks a
// second BN instead. A norm site never gets both.
struct ModelConfig {
  Family family = Family::resnet;
  std::array<int, 4> blocks{1, 1, 1, 1};
  int base_channels = 16;
  int num_classes = 10;
  int in_channels = 3;
  std::set<int> sbn_modules;        // subset of {1,2,3,4}
  std::set<int> double_bn_modules;  // subset of {1,2,3,4}
  SbnVariant sbn_variant = SbnVariant::full;
  double downscale_alpha = 4.0;
  NMode n_mode = NMode::actual;
  double dropout = 0.0;  // vgg head dropout; 0 disables
  std::uint64_t seed = 1;

  void validate() const {
    for (int b : blocks) check(b >= 1, "model config: zero blocks in a module");
    check(base_channels >= 1, "model config: base_channels must be >= 1");
    check(num_classes >= 2, "model config: need at least 2 classes");
    for (int m : sbn_modules)
      check(m >= 1 && m <= 4, "model config: invalid sbn module index " + std::to_string(m));
    for (int m : double_bn_modules)
      check(m >= 1 && m <= 4, "model config: invalid double-bn module index " + std::to_string(m));
    for (int m : sbn_modules)
      check(!double_bn_modules.count(m),
            "model config: module " + std::to_string(m) + " selected for both SBN and 2BN");
    check(dropout >= 0.0 && dropout < 1.0, "model config: dropout must be in [0,1)");
  }
};

template <typename T>
struct ConvLayer {
  Tensor4<T> w;  // [Cout, Cin, kh, kw]
  int stride = 1, pad = 0;
};

// BN followed by an optional second BN or an optional SBN.
template <typename T>
struct NormStack {
  BnState<T> bn;
  std::optional<BnState<T>> bn2;
  std::optional<SbnState<T>> sbn;
};

template <typename T>
struct ResBlock {
  ConvLayer<T> conv1;
  NormStack<T> n1;
  ConvLayer<T> conv2;
  NormStack<T> n2;
  std::optional<ConvLayer<T>> proj;  // 1x1 downsample on the skip path
  std::optional<NormStack<T>> proj_n;
};

template <typename T>
struct VggBlock {
  ConvLayer<T> conv;
  NormStack<T> norm;
};

enum class ParamKind { weight, bias, affine };

template <typename T>
struct ParamRef {
  std::string name;
  Tensor4<T>* tensor = nullptr;
  ParamKind kind = ParamKind::weight;
};

template <typename T>
struct Model {
  ModelConfig cfg;
  ConvLayer<T> stem;
  NormStack<T> stem_n;  // resnet only
  std::vector<std::vector<ResBlock<T>>> res_modules;
  std::vector<std::vector<VggBlock<T>>> vgg_modules;
  Tensor4<T> fc_w, fc_b;

  // Fixed parameter traversal; forward() binds leaves in the same order.
  template <typename Fn>
  void visit_params(Fn&& fn) {
    auto stack = [&](const std::string& site, NormStack<T>& n) {
      fn(site + ".bn.gamma", n.bn.gamma, ParamKind::affine);
      fn(site + ".bn.beta", n.bn.beta, ParamKind::affine);
      if (n.bn2) {
        fn(site + ".bn2.gamma", n.bn2->gamma, ParamKind::affine);
        fn(site + ".bn2.beta", n.bn2->beta, ParamKind::affine);
      }
      if (n.sbn && variant_has_affine(n.sbn->variant)) {
        fn(site + ".sbn.gamma", n.sbn->gamma, ParamKind::affine);
        fn(site + ".sbn.beta", n.sbn->beta, ParamKind::affine);
      }
    };
    if (cfg.family == Family::resnet) {
      fn("stem.conv.w", stem.w, ParamKind::weight);
      stack("stem.n", stem_n);
      for (std::size_t m = 0; m < res_modules.size(); ++m) {
        for (std::size_t b = 0; b < res_modules[m].size(); ++b) {
          ResBlock<T>& blk = res_modules[m][b];
          const std::string base = "m" + std::to_string(m + 1) + ".b" + std::to_string(b);
          fn(base + ".conv1.w", blk.conv1.w, ParamKind::weight);
          stack(base + ".n1", blk.n1);
          fn(base + ".conv2.w", blk.conv2.w, ParamKind::weight);
          stack(base + ".n2", blk.n2);
          if (blk.proj) {
            fn(base + ".proj.w", blk.proj->w, ParamKind::weight);
            stack(base + ".projn", *blk.proj_n);
          }
        }
      }
    } else {
      for (std::size_t m = 0; m < vgg_modules.size(); ++m) {
        for (std::size_t b = 0; b < vgg_modules[m].size(); ++b) {
          VggBlock<T>& blk = vgg_modules[m][b];
          const std::string base = "m" + std::to_string(m + 1) + ".b" + std::to_string(b);
          fn(base + ".conv.w", blk.conv.w, ParamKind::weight);
          stack(base + ".n", blk.norm);
        }
      }
    }
    fn("fc.w", fc_w, ParamKind::weight);
    fn("fc.b", fc_b, ParamKind::bias);
  }

  std::vector<ParamRef<T>> params() {
    std::vector<ParamRef<T>> out;
    visit_params([&](const std::string& name, Tensor4<T>& t, ParamKind k) {
      out.push_back(ParamRef<T>{name, &t, k});
    });
    return out;
  }

  std::int64_t param_count() {
    std::int64_t n = 0;
    visit_params([&](const std::string&, Tensor4<T>& t, ParamKind) { n += t.size(); });
    return n;
  }
};

namespace model_detail {

template <typename T>
Tensor4<T> kaiming_uniform(int cout, int cin, int kh, int kw, Rng& rng) {
  Tensor4<T> w(cout, cin, kh, kw);
  const double fan_in = static_cast<double>(cin) * kh * kw;
  const double bound = std::sqrt(6.0 / fan_in);
  for (auto& v : w.data) v = static_cast<T>(rng.uniform(-bound, bound));
  return w;
}

// He-style Gaussian: std = sqrt(2 / (kh*kw*cout)).
template <typename T>
Tensor4<T> he_normal_fanout(int cout, int cin, int kh, int kw, Rng& rng) {
  Tensor4<T> w(cout, cin, kh, kw);
  const double sd = std::sqrt(2.0 / (static_cast<double>(kh) * kw * cout));
  for (auto& v : w.data) v = static_cast<T>(sd * rng.normal());
  return w;
}

template <typename T>
NormStack<T> make_stack(const ModelConfig& cfg, int channels, int module_1based) {
  NormStack<T> n;
  n.bn = BnState<T>(channels);
  if (module_1based >= 1 && cfg.double_bn_modules.count(module_1based))
    n.bn2 = BnState<T>(channels);
  if (module_1based >= 1 && cfg.sbn_modules.count(module_1based)) {
    SbnState<T> s(channels);
    s.variant = cfg.sbn_variant;
    s.n_mode = cfg.n_mode;
    s.downscale_alpha = static_cast<T>(cfg.downscale_alpha);
    n.sbn = std::move(s);
  }
  return n;
}

}  // namespace model_detail

template <typename T>
Model<T> build_model(const ModelConfig& cfg) {
  cfg.validate();
  Model<T> m;
  m.cfg = cfg;
  Rng rng(derive_stream(cfg.seed, 0x6d6f64656cull));  // one stream, fixed walk order
  const int w0 = cfg.base_channels;

  if (cfg.family == Family::resnet) {
    m.stem = ConvLayer<T>{model_detail::kaiming_uniform<T>(w0, cfg.in_channels, 3, 3, rng), 1, 1};
    m.stem_n = model_detail::make_stack<T>(cfg, w0, 0);  // stem is not a module
    int in_ch = w0;
    m.res_modules.resize(4);
    for (int mod = 0; mod < 4; ++mod) {
      const int out_ch = w0 << mod;
      for (int b = 0; b < cfg.blocks[mod]; ++b) {
        const int stride = (mod > 0 && b == 0) ? 2 : 1;
        ResBlock<T> blk;
        blk.conv1 =
            ConvLayer<T>{model_detail::kaiming_uniform<T>(out_ch, in_ch, 3, 3, rng), stride, 1};
        blk.n1 = model_detail::make_stack<T>(cfg, out_ch, mod + 1);
        blk.conv2 = ConvLayer<T>{model_detail::kaiming_uniform<T>(out_ch, out_ch, 3, 3, rng), 1, 1};
        blk.n2 = model_detail::make_stack<T>(cfg, out_ch, mod + 1);
        if (stride != 1 || in_ch != out_ch) {
          blk.proj =
              ConvLayer<T>{model_detail::kaiming_uniform<T>(out_ch, in_ch, 1, 1, rng), stride, 0};
          blk.proj_n = model_detail::make_stack<T>(cfg, out_ch, mod + 1);
        }
        m.res_modules[mod].push_back(std::move(blk));
        in_ch = out_ch;
      }
    }
    m.fc_w = model_detail::kaiming_uniform<T>(cfg.num_classes, in_ch, 1, 1, rng);
    m.fc_b = Tensor4<T>(1, cfg.num_classes, 1, 1);
  } else {
    int in_ch = cfg.in_channels;
    m.vgg_modules.resize(4);
    for (int mod = 0; mod < 4; ++mod) {
      const int out_ch = w0 << mod;
      for (int b = 0; b < cfg.blocks[mod]; ++b) {
        VggBlock<T> blk;
        blk.conv = ConvLayer<T>{model_detail::he_normal_fanout<T>(out_ch, in_ch, 3, 3, rng), 1, 1};
        blk.norm = model_detail::make_stack<T>(cfg, out_ch, mod + 1);
        m.vgg_modules[mod].push_back(std::move(blk));
        in_ch = out_ch;
      }
    }
    m.fc_w = model_detail::kaiming_uniform<T>(cfg.num_classes, in_ch, 1, 1, rng);
    m.fc_b = Tensor4<T>(1, cfg.num_classes, 1, 1);
  }
  return m;
}

// ---------------------------------------------------------------------------
// Forward pass with tap capture
// ---------------------------------------------------------------------------

template <typename T>
struct BoundParams {
  std::vector<ParamRef<T>> refs;
  std::vector<int> leaf_ids;  // aligned with refs
  std::unordered_map<const Tensor4<T>*, int> by_tensor;
};

template <typename T>
BoundParams<T> bind_params(Tape<T>& t, Model<T>& m) {
  BoundParams<T> b;
  b.refs = m.params();
  b.leaf_ids.reserve(b.refs.size());
  for (auto& r : b.refs) {
    int id = t.leaf(*r.tensor);
    b.leaf_ids.push_back(id);
    b.by_tensor.emplace(r.tensor, id);
  }
  return b;
}

template <typename T>
struct TapSink {
  const std::set<std::string>* want = nullptr;      // tags to capture
  std::map<std::string, Tensor4<T>>* out = nullptr;  // detached value copies

  void offer(const std::string& tag, Tape<T>& t, int node) const {
    if (want && out && want->count(tag)) (*out)[tag] = t.rval(node);
  }
};

// All tags a model exposes, in forward order. A bare norm-site tag (e.g.
// "m4.b0.n2") is the output of the whole normalization stack at that site;
// ".bn" / ".bn2" / ".sbn" address the individual stages.
template <typename T>
std::vector<std::string> tap_tags(const Model<T>& m) {
  std::vector<std::string> tags;
  auto stack = [&](const std::string& site, const NormStack<T>& n) {
    tags.push_back(site + ".bn");
    if (n.bn2) tags.push_back(site + ".bn2");
    if (n.sbn) tags.push_back(site + ".sbn");
    tags.push_back(site);
  };
  if (m.cfg.family == Family::resnet) {
    tags.push_back("stem.conv");
    stack("stem.n", m.stem_n);
    tags.push_back("stem.relu");
    for (std::size_t mod = 0; mod < m.res_modules.size(); ++mod)
      for (std::size_t b = 0; b < m.res_modules[mod].size(); ++b) {
        const std::string base = "m" + std::to_string(mod + 1) + ".b" + std::to_string(b);
        const ResBlock<T>& blk = m.res_modules[mod][b];
        tags.push_back(base + ".conv1");
        stack(base + ".n1", blk.n1);
        tags.push_back(base + ".relu1");
        tags.push_back(base + ".conv2");
        stack(base + ".n2", blk.n2);
        if (blk.proj) {
          tags.push_back(base + ".proj");
          stack(base + ".projn", *blk.proj_n);
        }
        tags.push_back(base + ".add");
        tags.push_back(base + ".out");
      }
  } else {
    for (std::size_t mod = 0; mod < m.vgg_modules.size(); ++mod) {
      for (std::size_t b = 0; b < m.vgg_modules[mod].size(); ++b) {
        const std::string base = "m" + std::to_string(mod + 1) + ".b" + std::to_string(b);
        const VggBlock<T>& blk = m.vgg_modules[mod][b];
        tags.push_back(base + ".conv");
        stack(base + ".n", blk.norm);
        tags.push_back(base + ".relu");
      }
      tags.push_back("m" + std::to_string(mod + 1) + ".pool");
    }
  }
  tags.push_back("gap");
  tags.push_back("logits");
  return tags;
}

namespace model_detail {

template <typename T>
int norm_stack_node(Tape<T>& t, int x, NormStack<T>& n, Mode mode, const BoundParams<T>& bp,
                    const std::string& site, const TapSink<T>& sink) {
  auto leaf_of = [&](Tensor4<T>& p) {
    auto it = bp.by_tensor.find(&p);
    if (it != bp.by_tensor.end()) return it->second;
    return t.leaf(p);  // non-trainable (e.g. SBN affine of a no-affine variant)
  };
  int cur = batchnorm_node(t, x, leaf_of(n.bn.gamma), leaf_of(n.bn.beta), n.bn, mode);
  sink.offer(site + ".bn", t, cur);
  if (n.bn2) {
    cur = batchnorm_node(t, cur, leaf_of(n.bn2->gamma), leaf_of(n.bn2->beta), *n.bn2, mode);
    sink.offer(site + ".bn2", t, cur);
  }
  if (n.sbn) {
    cur = sbn_layer_node(t, cur, leaf_of(n.sbn->gamma), leaf_of(n.sbn->beta), *n.sbn, mode);
    sink.offer(site + ".sbn", t, cur);
  }
  sink.offer(site, t, cur);
  return cur;
}

}  // namespace model_detail

// Runs the network, returning the logits node. Tap snapshots are detached
// copies and do not perturb the gradient graph.
template <typename T>
int model_forward(Tape<T>& t, Model<T>& m, int x, Mode mode, const BoundParams<T>& bp,
                  const TapSink<T>& sink = {}, std::uint64_t dropout_stream = 0) {
  auto leaf_of = [&](Tensor4<T>& p) {
    auto it = bp.by_tensor.find(&p);
    check(it != bp.by_tensor.end(), "model_forward: unbound parameter");
    return it->second;
  };
  int cur = x;
  if (m.cfg.family == Family::resnet) {
    cur = t.conv2d(cur, leaf_of(m.stem.w), m.stem.stride, m.stem.pad);
    sink.offer("stem.conv", t, cur);
    cur = model_detail::norm_stack_node(t, cur, m.stem_n, mode, bp, "stem.n", sink);
    cur = t.relu(cur);
    sink.offer("stem.relu", t, cur);
    for (std::size_t mod = 0; mod < m.res_modules.size(); ++mod)
      for (std::size_t b = 0; b < m.res_modules[mod].size(); ++b) {
        ResBlock<T>& blk = m.res_modules[mod][b];
        const std::string base = "m" + std::to_string(mod + 1) + ".b" + std::to_string(b);
        int skip = cur;
        int y = t.conv2d(cur, leaf_of(blk.conv1.w), blk.conv1.stride, blk.conv1.pad);
        sink.offer(base + ".conv1", t, y);
        y = model_detail::norm_stack_node(t, y, blk.n1, mode, bp, base + ".n1", sink);
        y = t.relu(y);
        sink.offer(base + ".relu1", t, y);
        y = t.conv2d(y, leaf_of(blk.conv2.w), blk.conv2.stride, blk.conv2.pad);
        sink.offer(base + ".conv2", t, y);
        y = model_detail::norm_stack_node(t, y, blk.n2, mode, bp, base + ".n2", sink);
        if (blk.proj) {
          skip = t.conv2d(skip, leaf_of(blk.proj->w), blk.proj->stride, blk.proj->pad);
          sink.offer(base + ".proj", t, skip);
          skip = model_detail::norm_stack_node(t, skip, *blk.proj_n, mode, bp, base + ".projn", sink);
        }
        y = t.add(y, skip);
        sink.offer(base + ".add", t, y);
        cur = t.relu(y);
        sink.offer(base + ".out", t, cur);
      }
  } else {
    for (std::size_t mod = 0; mod < m.vgg_modules.size(); ++mod) {
      for (std::size_t b = 0; b < m.vgg_modules[mod].size(); ++b) {
        VggBlock<T>& blk = m.vgg_modules[mod][b];
        const std::string base = "m" + std::to_string(mod + 1) + ".b" + std::to_string(b);
        cur = t.conv2d(cur, leaf_of(blk.conv.w), blk.conv.stride, blk.conv.pad);
        sink.offer(base + ".conv", t, cur);
        cur = model_detail::norm_stack_node(t, cur, blk.norm, mode, bp, base + ".n", sink);
        cur = t.relu(cur);
        sink.offer(base + ".relu", t, cur);
      }
      cur = t.maxpool2x2(cur);
      sink.offer("m" + std::to_string(mod + 1) + ".pool", t, cur);
    }
  }
  cur = t.global_avg_pool(cur);
  sink.offer("gap", t, cur);
  if (m.cfg.family == Family::vgg && m.cfg.dropout > 0.0 && mode == Mode::train)
    cur = t.dropout(cur, m.cfg.dropout, dropout_stream);
  cur = t.linear(cur, leaf_of(m.fc_w), leaf_of(m.fc_b));
  sink.offer("logits", t, cur);
  return cur;
}

// Convenience wrapper: validates tags, runs the forward, returns logits node
// and the captured snapshots.
template <typename T>
int forward_with_taps(Tape<T>& t, Model<T>& m, int x, Mode mode, const BoundParams<T>& bp,
                      const std::set<std::string>& want, std::map<std::string, Tensor4<T>>& out,
                      std::uint64_t dropout_stream = 0) {
  std::vector<std::string> known = tap_tags(m);
  for (const std::string& tag : want)
    check(std::find(known.begin(), known.end(), tag) != known.end(),
          "forward_with_taps: unknown tap tag '" + tag + "'");
  TapSink<T> sink{&want, &out};
  return model_forward(t, m, x, mode, bp, sink, dropout_stream);
}

}  // namespace sbn

#pragma once

#include <chrono>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "sbn/data.hpp"
#include "sbn/io.hpp"
#include "sbn/metrics.hpp"
#include "sbn/models.hpp"
#include "sbn/optim.hpp"

namespace sbn {

struct EpochRow {
  int epoch = 0;
  double lr = 0, train_loss = 0, train_acc = 0, val_acc = 0;
  double wall_s = 0;  // informational; excluded from determinism comparisons
};

struct RunRecord {
  std::vector<EpochRow> epochs;
  double best_val_acc = -1;
  int best_epoch = -1;
  double test_acc = 0;
  bool diverged = false;
  std::string note;
  std::uint64_t model_seed = 0, train_seed = 0;
  std::string rng_note = "mt19937_64 streams derived from (seed, purpose, epoch, index)";
  double total_wall_s = 0;
};

// The deterministic face of a run: byte-identical across replays of the same
// config and seed within one build.
inline std::string run_csv_text(const RunRecord& r) {
  std::ostringstream os;
  os << "epoch,lr,train_loss,train_acc,val_acc\n";
  for (const EpochRow& e : r.epochs)
    os << e.epoch << "," << fmt_g17(e.lr) << "," << fmt_g17(e.train_loss) << ","
       << fmt_g17(e.train_acc) << "," << fmt_g17(e.val_acc) << "\n";
  return os.str();
}

template <typename T>
struct RunOutput {
  RunRecord record;
  std::vector<MetricRecord> metrics;
  Model<T> final_model;
  Model<T> best_model;
  std::vector<std::int64_t> probe_indices;
  std::vector<std::int64_t> train_indices, val_indices;
};

namespace train_detail {

template <typename T>
double evaluate(Model<T>& model, const Tensor4<T>& images, const std::vector<int>& labels,
                const std::vector<std::int64_t>& indices, const TrainConfig& cfg) {
  if (indices.empty()) return 0.0;
  std::int64_t correct = 0;
  for (std::size_t off = 0; off < indices.size(); off += cfg.batch_size) {
    const std::size_t n = std::min<std::size_t>(cfg.batch_size, indices.size() - off);
    std::vector<std::int64_t> idx(indices.begin() + off, indices.begin() + off + n);
    Tensor4<T> x = normalize_batch(gather(images, idx), cfg);
    Tape<T> tape(false);
    BoundParams<T> bp = bind_params(tape, model);
    int logits = model_forward(tape, model, tape.leaf(std::move(x)), Mode::eval, bp);
    const Tensor4<T>& lv = tape.rval(logits);
    for (std::size_t i = 0; i < n; ++i) {
      const T* row = lv.data.data() + i * lv.channels;
      int arg = 0;
      for (int k = 1; k < lv.channels; ++k)
        if (row[k] > row[arg]) arg = k;
      if (arg == labels[idx[i]]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(indices.size());
}

// Probe-batch instrumentation: batch statistics, no state mutation, no
// augmentation randomness.
template <typename T>
std::map<std::string, Tensor4<T>> capture_taps(Model<T>& model, const Tensor4<T>& probe_raw,
                                               const TrainConfig& cfg,
                                               const std::set<std::string>& tags) {
  std::map<std::string, Tensor4<T>> out;
  if (tags.empty()) return out;
  Tensor4<T> x = normalize_batch(probe_raw, cfg);
  Tape<T> tape(false);
  BoundParams<T> bp = bind_params(tape, model);
  forward_with_taps(tape, model, tape.leaf(std::move(x)), Mode::probe, bp, tags, out);
  return out;
}

template <typename T>
void emit_tap_metrics(const std::map<std::string, Tensor4<T>>& taps, const std::string& run_id,
                      int epoch, std::vector<MetricRecord>& sink) {
  for (const auto& [tag, tensor] : taps) {
    MetricRecord fr;
    fr.run_id = run_id;
    fr.epoch = epoch;
    fr.layer_tag = tag;
    fr.kind = MetricKind::frobenius_norm;
    fr.value = frobenius_norm(tensor);
    sink.push_back(fr);
    MetricRecord pb = fr;
    pb.kind = MetricKind::percentile_band;
    pb.bands = percentile_bands(tensor);
    sink.push_back(pb);
  }
}

}  // namespace train_detail

// Full training loop: milestone-decayed momentum SGD, crop/flip augmentation,
// disjoint train/val split, best-on-validation checkpointing, probe-batch
// instrumentation at every epoch boundary (index k = state after k epochs).
template <typename T>
RunOutput<T> run_experiment(const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                            const Dataset<T>& data, const InstrumentSpec& inst = {}) {
  model_cfg.validate();
  train_cfg.validate();
  check(data.classes == model_cfg.num_classes, "run_experiment: dataset/model class mismatch");
  const int n_total = data.train_images.batch;
  check(n_total >= 2, "run_experiment: dataset too small");

  const auto t_start = std::chrono::steady_clock::now();
  RunOutput<T> out{.record = {},
                   .metrics = {},
                   .final_model = build_model<T>(model_cfg),
                   .best_model = {},
                   .probe_indices = {}};
  Model<T>& model = out.final_model;
  RunRecord& rec = out.record;
  rec.model_seed = model_cfg.seed;
  rec.train_seed = train_cfg.seed;

  // Disjoint train/val split; the test set never touches checkpoint selection.
  std::vector<std::int64_t> all(n_total);
  std::iota(all.begin(), all.end(), 0);
  {
    Rng rng(derive_stream(train_cfg.seed, 0x5b11ull));
    shuffle_indices(all.begin(), all.end(), rng);
  }
  std::int64_t n_val = std::max<std::int64_t>(1, std::llround(n_total * train_cfg.val_fraction));
  if (n_val >= n_total) n_val = n_total - 1;
  std::vector<std::int64_t> val_idx(all.begin(), all.begin() + n_val);
  std::vector<std::int64_t> train_idx(all.begin() + n_val, all.end());
  out.val_indices = val_idx;
  out.train_indices = train_idx;

  auto epoch_order = [&](int epoch) {
    std::vector<std::int64_t> order = train_idx;
    Rng rng(derive_stream(train_cfg.seed, 0x04dull, static_cast<std::uint64_t>(epoch)));
    shuffle_indices(order.begin(), order.end(), rng);
    return order;
  };

  // Probe batch: the first batch of the epoch-0 order, frozen for the run.
  {
    std::vector<std::int64_t> order0 = epoch_order(0);
    const std::size_t pn = std::min<std::size_t>(train_cfg.batch_size, order0.size());
    out.probe_indices.assign(order0.begin(), order0.begin() + pn);
  }
  Tensor4<T> probe_raw = gather(data.train_images, out.probe_indices);
  std::set<std::string> tap_set(inst.taps.begin(), inst.taps.end());

  std::vector<ParamRef<T>> refs = model.params();
  std::vector<Tensor4<T>> velocity;
  velocity.reserve(refs.size());
  for (auto& r : refs)
    velocity.emplace_back(r.tensor->batch, r.tensor->channels, r.tensor->height, r.tensor->width);

  std::map<std::string, Tensor4<T>> final_taps;
  for (int epoch = 0; epoch <= train_cfg.epochs; ++epoch) {
    // Instrumentation at the boundary: state after `epoch` trained epochs.
    auto taps = train_detail::capture_taps(model, probe_raw, train_cfg, tap_set);
    train_detail::emit_tap_metrics(taps, inst.run_id, epoch, out.metrics);
    if (epoch == train_cfg.epochs || rec.diverged) {
      final_taps = std::move(taps);
      break;
    }

    const auto t_epoch = std::chrono::steady_clock::now();
    const double lr = lr_at(epoch, train_cfg);
    std::vector<std::int64_t> order = epoch_order(epoch);
    double loss_sum = 0;
    std::int64_t seen = 0, correct = 0;
    int step = 0;
    for (std::size_t off = 0; off < order.size() && !rec.diverged;
         off += train_cfg.batch_size, ++step) {
      const std::size_t n = std::min<std::size_t>(train_cfg.batch_size, order.size() - off);
      std::vector<std::int64_t> idx(order.begin() + off, order.begin() + off + n);
      Tensor4<T> x = augment_batch(gather(data.train_images, idx), train_cfg, epoch, idx);
      std::vector<int> labels(n);
      for (std::size_t i = 0; i < n; ++i) labels[i] = data.train_labels[idx[i]];

      Tape<T> tape(true);
      BoundParams<T> bp = bind_params(tape, model);
      const std::uint64_t drop_stream = derive_stream(train_cfg.seed, 0xd409ull,
                                                      static_cast<std::uint64_t>(epoch),
                                                      static_cast<std::uint64_t>(step));
      int logits;
      try {
        logits = model_forward(tape, model, tape.leaf(std::move(x)), Mode::train, bp, {},
                               drop_stream);
      } catch (const std::exception& e) {
        rec.diverged = true;
        rec.note = std::string("forward failed: ") + e.what();
        break;
      }
      int loss = tape.softmax_cross_entropy(logits, labels);
      const double loss_v = static_cast<double>(tape.rval(loss).data[0]);
      if (!std::isfinite(loss_v)) {
        rec.diverged = true;
        rec.note = "non-finite loss at epoch " + std::to_string(epoch) + " step " +
                   std::to_string(step);
        break;
      }
      const Tensor4<T>& lv = tape.rval(logits);
      for (std::size_t i = 0; i < n; ++i) {
        const T* row = lv.data.data() + i * lv.channels;
        int arg = 0;
        for (int kk = 1; kk < lv.channels; ++kk)
          if (row[kk] > row[arg]) arg = kk;
        if (arg == labels[i]) ++correct;
      }
      loss_sum += loss_v * static_cast<double>(n);
      seen += n;

      tape.backward(loss);
      std::vector<Tensor4<T>> grads;
      grads.reserve(refs.size());
      for (std::size_t p = 0; p < refs.size(); ++p) grads.push_back(tape.grad(bp.leaf_ids[p]));
      try {
        sgd_step(refs, grads, velocity, lr, train_cfg.momentum, train_cfg.weight_decay,
                 train_cfg.decay_sbn_affine);
      } catch (const std::exception& e) {
        rec.diverged = true;
        rec.note = e.what();
        break;
      }
    }

    EpochRow row;
    row.epoch = epoch;
    row.lr = lr;
    row.train_loss = seen ? loss_sum / static_cast<double>(seen) : 0.0;
    row.train_acc = seen ? static_cast<double>(correct) / static_cast<double>(seen) : 0.0;
    row.val_acc = rec.diverged
                      ? 0.0
                      : train_detail::evaluate(model, data.train_images, data.train_labels,
                                               val_idx, train_cfg);
    row.wall_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_epoch).count();
    rec.epochs.push_back(row);
    if (!rec.diverged && row.val_acc > rec.best_val_acc) {
      rec.best_val_acc = row.val_acc;
      rec.best_epoch = epoch;
      out.best_model = model;  // checkpoint copy
    }
  }

  if (rec.best_epoch < 0) out.best_model = model;
  if (train_cfg.epochs > 0 && data.test_images.batch > 0 && !rec.diverged) {
    std::vector<std::int64_t> test_idx(data.test_images.batch);
    std::iota(test_idx.begin(), test_idx.end(), 0);
    rec.test_acc = train_detail::evaluate(out.best_model, data.test_images, data.test_labels,
                                          test_idx, train_cfg);
  }
  rec.total_wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();

  // Disk emission.
  if (!inst.out_dir.empty()) {
    ensure_dir(inst.out_dir);
    if (inst.snapshot_final && !final_taps.empty()) {
      ensure_dir(inst.out_dir + "/snaps");
      ensure_dir(inst.out_dir + "/maps");
      for (const auto& [tag, tensor] : final_taps) {
        save_tensor4(tensor, inst.out_dir + "/snaps/" + tag + ".t4");
        const int nmaps = std::min(8, tensor.channels);
        for (int c = 0; c < nmaps; ++c) {
          const std::string mp = inst.out_dir + "/maps/" + tag + "_c" + std::to_string(c) + ".pgm";
          render_pgm(magnitude_map(tensor, c), mp);
          MetricRecord mr;
          mr.run_id = inst.run_id;
          mr.epoch = train_cfg.epochs;
          mr.layer_tag = tag;
          mr.kind = MetricKind::magnitude_map_ref;
          mr.path = mp;
          out.metrics.push_back(mr);
        }
      }
    }
    write_text_file(inst.out_dir + "/run.csv", run_csv_text(rec));
    write_metrics_csv(out.metrics, inst.out_dir + "/metrics.csv");
    std::ostringstream sm;
    sm << "key,value\n";
    sm << "best_val_acc," << fmt_g17(rec.best_val_acc) << "\n";
    sm << "best_epoch," << rec.best_epoch << "\n";
    sm << "test_acc," << fmt_g17(rec.test_acc) << "\n";
    sm << "diverged," << (rec.diverged ? 1 : 0) << "\n";
    sm << "wall_seconds," << fmt_g17(rec.total_wall_s) << "\n";
    sm << "model_seed," << rec.model_seed << "\n";
    sm << "train_seed," << rec.train_seed << "\n";
    std::string note = rec.note;
    for (char& ch : note)
      if (ch == ',' || ch == '\n') ch = ';';
    sm << "note," << note << "\n";
    write_text_file(inst.out_dir + "/summary.csv", sm.str());
  }
  return out;
}

}  // namespace sbn

// Command-line front end: train / analyze / dft-check / gradcheck / ablate.

#include <filesystem>
#include <iostream>
#include <map>
#include <string>

#include <CLI11.hpp>

#include "sbn/sbn.hpp"

namespace {

using sbn::Tensor4;

struct CommonOpts {
  std::string out_dir;
  long long seed = -1;
  std::string precision = "f64";
};

void apply_overrides(sbn::ExperimentConfig& ec, const CommonOpts& o) {
  if (!o.out_dir.empty()) ec.instrument.out_dir = o.out_dir;
  if (o.seed >= 0) {
    ec.model.seed = static_cast<std::uint64_t>(o.seed);
    ec.train.seed = static_cast<std::uint64_t>(o.seed);
  }
}

template <typename T>
int cmd_train(const sbn::ExperimentConfig& ec, const std::string& config_text) {
  sbn::Dataset<T> data = sbn::load_dataset<T>(ec.dataset);
  sbn::RunOutput<T> out = sbn::run_experiment<T>(ec.model, ec.train, data, ec.instrument);
  if (!ec.instrument.out_dir.empty())
    sbn::write_text_file(ec.instrument.out_dir + "/config.echo.ini", config_text);
  const sbn::RunRecord& r = out.record;
  for (const sbn::EpochRow& e : r.epochs)
    std::cout << "epoch " << e.epoch << " lr " << e.lr << " loss " << e.train_loss << " train_acc "
              << e.train_acc << " val_acc " << e.val_acc << " (" << e.wall_s << "s)\n";
  std::cout << "best_val_acc " << r.best_val_acc << " at epoch " << r.best_epoch << "\n";
  std::cout << "test_acc " << r.test_acc << "\n";
  if (r.diverged) {
    std::cout << "diverged: " << r.note << "\n";
    return 2;
  }
  return 0;
}

template <typename T>
int cmd_ablate(const sbn::ExperimentConfig& base, const CommonOpts& o) {
  sbn::check(!base.model.sbn_modules.empty(),
             "ablate: config must select sbn_modules so the variants differ");
  const sbn::SbnVariant variants[] = {
      sbn::SbnVariant::full,          sbn::SbnVariant::mean_only,
      sbn::SbnVariant::std_only,      sbn::SbnVariant::normalize_no_affine,
      sbn::SbnVariant::downscale,     sbn::SbnVariant::affine_only,
      sbn::SbnVariant::split_real_imag};
  std::ostringstream csv;
  csv << "variant,best_val_acc,final_val_acc,test_acc,diverged\n";
  for (sbn::SbnVariant v : variants) {
    sbn::ExperimentConfig ec = base;
    ec.model.sbn_variant = v;
    ec.instrument.run_id = base.instrument.run_id + "-" + sbn::variant_name(v);
    ec.instrument.out_dir =
        base.instrument.out_dir.empty() ? "" : base.instrument.out_dir + "/" + sbn::variant_name(v);
    sbn::Dataset<T> data = sbn::load_dataset<T>(ec.dataset);
    sbn::RunOutput<T> out = sbn::run_experiment<T>(ec.model, ec.train, data, ec.instrument);
    const sbn::RunRecord& r = out.record;
    const double final_val = r.epochs.empty() ? 0.0 : r.epochs.back().val_acc;
    csv << sbn::variant_name(v) << "," << sbn::fmt_g17(r.best_val_acc) << ","
        << sbn::fmt_g17(final_val) << "," << sbn::fmt_g17(r.test_acc) << ","
        << (r.diverged ? 1 : 0) << "\n";
    std::cout << "variant " << sbn::variant_name(v) << ": best_val " << r.best_val_acc
              << " test " << r.test_acc << (r.diverged ? " DIVERGED" : "") << "\n";
  }
  const std::string dir = o.out_dir.empty() ? base.instrument.out_dir : o.out_dir;
  sbn::check(!dir.empty(), "ablate: no output directory (set [output] dir or --out)");
  sbn::ensure_dir(dir);
  sbn::write_text_file(dir + "/ablation.csv", csv.str());
  std::cout << "wrote " << dir << "/ablation.csv\n";
  return 0;
}

int cmd_dft_check() {
  using sbn::CTensor4;
  int properties = 0;
  double worst = 0;
  auto track = [&](double err) {
    worst = std::max(worst, err);
    ++properties;
  };
  for (int h = 1; h <= 8; ++h) {
    for (int w = 1; w <= 8; ++w) {
      for (int seed = 0; seed < 5; ++seed) {
        sbn::Rng rng(sbn::derive_stream(91, h, w, seed));
        Tensor4<double> x(1, 1, h, w);
        for (auto& v : x.data) v = rng.normal();
        CTensor4<double> s = sbn::rfft2(x);
        // forward agrees with the reference double sum
        std::vector<std::complex<double>> ref = sbn::naive_dft2(x.slice(0, 0), h, w);
        double err = 0;
        for (int k = 0; k < h; ++k)
          for (int l = 0; l < s.packed_width; ++l)
            err = std::max(err, std::abs(s.slice(0, 0)[k * s.packed_width + l] - ref[k * w + l]));
        track(err);
        // round trip
        Tensor4<double> back = sbn::irfft2(s, w);
        err = 0;
        for (std::int64_t i = 0; i < x.size(); ++i)
          err = std::max(err, std::abs(back.data[i] - x.data[i]));
        track(err);
        // Parseval over the conjugate-extended spectrum
        double space = 0, freq = 0;
        for (auto v : x.data) space += v * v;
        for (int k = 0; k < h; ++k)
          for (int l = 0; l < s.packed_width; ++l)
            freq += sbn::hermitian_multiplicity(l, w) *
                    std::norm(s.slice(0, 0)[k * s.packed_width + l]);
        track(std::abs(space * h * w - freq) / std::max(1.0, freq));
      }
    }
  }
  if (worst < 1e-9) {
    std::cout << "ok: " << properties << " properties (worst deviation " << worst << ")\n";
    return 0;
  }
  std::cout << "fail: worst deviation " << worst << " across " << properties << " properties\n";
  return 1;
}

int cmd_gradcheck() {
  using sbn::Tape;
  int cases = 0;
  bool ok = true;
  auto report = [&](const std::string& name, const sbn::FdResult& r) {
    ++cases;
    ok = ok && r.pass;
    std::cout << (r.pass ? "pass" : "FAIL") << " " << name << " (" << r.checked
              << " entries, worst err " << r.worst_err << ")\n";
  };

  for (int seed = 0; seed < 5; ++seed) {
    sbn::Rng rng(sbn::derive_stream(4242, seed));
    Tensor4<double> x(2, 3, 6, 6), k(4, 3, 3, 3);
    for (auto& v : x.data) v = rng.normal();
    for (auto& v : k.data) v = rng.normal() * 0.3;
    auto loss = [&]() {
      Tape<double> t(false);
      Tensor4<double> y = sbn::conv2d_forward(x, k, 1, 1);
      double s = 0;
      for (std::int64_t i = 0; i < y.size(); ++i) s += y.data[i] * ((i % 7) * 0.25 - 0.5);
      return s;
    };
    Tape<double> t;
    int xi = t.leaf(x), ki = t.leaf(k);
    int y = t.conv2d(xi, ki, 1, 1);
    const Tensor4<double>& yv = t.rval(y);
    Tensor4<double> w(yv.batch, yv.channels, yv.height, yv.width);
    for (std::int64_t i = 0; i < w.size(); ++i) w.data[i] = (i % 7) * 0.25 - 0.5;
    // weighted-sum head so every output matters
    int root = t.push(Tensor4<double>(1, 1, 1, 1), nullptr);
    {
      Tensor4<double> s(1, 1, 1, 1);
      double acc = 0;
      for (std::int64_t i = 0; i < yv.size(); ++i) acc += yv.data[i] * w.data[i];
      s.data[0] = acc;
      root = t.push(std::move(s), [y, w](Tape<double>& tp, int self) {
        Tensor4<double> g = w;
        const double up = tp.radj(self).data[0];
        for (auto& v : g.data) v *= up;
        tp.add_radj(y, g);
      });
    }
    t.backward(root);
    sbn::FdOptions opt;
    opt.max_entries = 40;
    report("conv2d/input seed " + std::to_string(seed),
           sbn::fd_check_tensor(x, t.grad(xi), loss, opt));
    report("conv2d/kernel seed " + std::to_string(seed),
           sbn::fd_check_tensor(k, t.grad(ki), loss, opt));
  }

  for (int seed = 0; seed < 3; ++seed) {
    sbn::Rng rng(sbn::derive_stream(777, seed));
    Tensor4<double> x(2, 2, 4, 4);
    for (auto& v : x.data) v = rng.normal();
    sbn::SbnState<double> st(2);
    auto loss = [&]() {
      sbn::SbnState<double> s2 = st;
      Tensor4<double> y = sbn::sbn_forward_probe(x, s2);
      double s = 0;
      for (std::int64_t i = 0; i < y.size(); ++i) s += y.data[i] * y.data[i];
      return 0.5 * s;
    };
    Tape<double> t;
    int xi = t.leaf(x), gi = t.leaf(st.gamma), bi = t.leaf(st.beta);
    int y = sbn::sbn_layer_node(t, xi, gi, bi, st, sbn::Mode::probe);
    const Tensor4<double>& yv = t.rval(y);
    Tensor4<double> half(1, 1, 1, 1);
    double acc = 0;
    for (auto v : yv.data) acc += v * v;
    half.data[0] = 0.5 * acc;
    int root = t.push(std::move(half), [y](Tape<double>& tp, int self) {
      const double up = tp.radj(self).data[0];
      Tensor4<double> g = tp.rval(y);
      for (auto& v : g.data) v *= up;
      tp.add_radj(y, g);
    });
    t.backward(root);
    sbn::FdOptions opt;
    opt.max_entries = 48;
    report("sbn/input seed " + std::to_string(seed), sbn::fd_check_tensor(x, t.grad(xi), loss, opt));
  }

  std::cout << (ok ? "ok: " : "fail: ") << cases << " gradient checks\n";
  return ok ? 0 : 1;
}

int cmd_analyze(const std::string& run_dir) {
  namespace fs = std::filesystem;
  std::vector<sbn::MetricRecord> records = sbn::read_metrics_csv(run_dir + "/metrics.csv");

  std::ostringstream fig1, fig2;
  fig1 << "run_id,epoch,layer_tag,frobenius_norm\n";
  fig2 << "run_id,epoch,layer_tag";
  for (int i = 0; i < 9; ++i) fig2 << ",p" << i;
  fig2 << "\n";
  for (const auto& r : records) {
    if (r.kind == sbn::MetricKind::frobenius_norm)
      fig1 << r.run_id << "," << r.epoch << "," << r.layer_tag << "," << sbn::fmt_g17(r.value)
           << "\n";
    if (r.kind == sbn::MetricKind::percentile_band) {
      fig2 << r.run_id << "," << r.epoch << "," << r.layer_tag;
      for (int i = 0; i < 9; ++i) fig2 << "," << sbn::fmt_g17(r.bands[i]);
      fig2 << "\n";
    }
  }
  sbn::write_text_file(run_dir + "/fig1_norms.csv", fig1.str());
  sbn::write_text_file(run_dir + "/fig2_bands.csv", fig2.str());

  // Magnitude maps and before/after uniformity ratios from the stored taps.
  const std::string snaps = run_dir + "/snaps";
  std::ostringstream fig3;
  fig3 << "site,channel,ratio_before,ratio_after,decreased\n";
  int pairs = 0;
  if (fs::exists(snaps)) {
    sbn::ensure_dir(run_dir + "/maps_analyze");
    for (const auto& entry : fs::directory_iterator(snaps)) {
      const std::string name = entry.path().filename().string();
      if (name.size() < 8 || name.substr(name.size() - 7) != ".sbn.t4") continue;
      const std::string site = name.substr(0, name.size() - 7);
      const std::string before_path = snaps + "/" + site + ".bn.t4";
      if (!fs::exists(before_path)) continue;
      Tensor4<double> before = sbn::load_tensor4(before_path);
      Tensor4<double> after = sbn::load_tensor4(entry.path().string());
      for (int c = 0; c < before.channels; ++c) {
        const double rb = sbn::max_median_magnitude_ratio(before, c);
        const double ra = sbn::max_median_magnitude_ratio(after, c);
        fig3 << site << "," << c << "," << sbn::fmt_g17(rb) << "," << sbn::fmt_g17(ra) << ","
             << (ra < rb ? 1 : 0) << "\n";
      }
      ++pairs;
    }
    for (const auto& entry : fs::directory_iterator(snaps)) {
      if (entry.path().extension() != ".t4") continue;
      Tensor4<double> t = sbn::load_tensor4(entry.path().string());
      const std::string stem = entry.path().stem().string();
      for (int c = 0; c < std::min(8, t.channels); ++c)
        sbn::render_pgm(sbn::magnitude_map(t, c),
                        run_dir + "/maps_analyze/" + stem + "_c" + std::to_string(c) + ".pgm");
    }
  }
  sbn::write_text_file(run_dir + "/fig3_ratios.csv", fig3.str());
  std::cout << "analyzed " << records.size() << " metric records, " << pairs
            << " bn/sbn snapshot pairs\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"spectral batch normalization training stack"};
  app.require_subcommand(1);

  CommonOpts opts;
  std::string config_path, run_dir;

  auto add_common = [&](CLI::App* sub, bool with_config) {
    if (with_config) sub->add_option("config", config_path, "experiment config file")->required();
    sub->add_option("--out", opts.out_dir, "output directory override");
    sub->add_option("--seed", opts.seed, "override model and train seeds");
    sub->add_option("--precision", opts.precision, "f32 or f64")
        ->check(CLI::IsMember({"f32", "f64"}));
  };

  CLI::App* train = app.add_subcommand("train", "run one experiment from a config file");
  add_common(train, true);
  CLI::App* ablate = app.add_subcommand("ablate", "run the 7-variant ablation matrix");
  add_common(ablate, true);
  CLI::App* analyze = app.add_subcommand("analyze", "recompute figure-style outputs from a run");
  analyze->add_option("run_dir", run_dir, "directory written by train")->required();
  app.add_subcommand("dft-check", "spectral transform property suite");
  app.add_subcommand("gradcheck", "finite-difference gradient suite");

  CLI11_PARSE(app, argc, argv);

  try {
    if (app.got_subcommand("dft-check")) return cmd_dft_check();
    if (app.got_subcommand("gradcheck")) return cmd_gradcheck();
    if (app.got_subcommand("analyze")) return cmd_analyze(run_dir);

    sbn::ExperimentConfig ec = sbn::parse_experiment_config(config_path);
    apply_overrides(ec, opts);
    const std::string text = sbn::read_text_file(config_path);
    if (app.got_subcommand("train"))
      return opts.precision == "f32" ? cmd_train<float>(ec, text) : cmd_train<double>(ec, text);
    if (app.got_subcommand("ablate"))
      return opts.precision == "f32" ? cmd_ablate<float>(ec, opts) : cmd_ablate<double>(ec, opts);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

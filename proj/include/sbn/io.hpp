#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "sbn/data.hpp"
#include "sbn/metrics.hpp"
#include "sbn/models.hpp"
#include "sbn/optim.hpp"
#include "sbn/tensor.hpp"

namespace sbn {

// %.17g — round-trips any 64-bit float exactly.
inline std::string fmt_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline void ensure_dir(const std::string& dir) {
  if (!dir.empty()) std::filesystem::create_directories(dir);
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream f(path);
  check(f.good(), "cannot open file '" + path + "'");
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  check(f.good(), "cannot write file '" + path + "'");
  f << text;
  check(f.good(), "write failed for '" + path + "'");
}

// ---------------------------------------------------------------------------
// Flat key = value configuration with [section] headers
// ---------------------------------------------------------------------------

class ConfigFile {
 public:
  static ConfigFile parse_text(const std::string& text, const std::string& origin = "<string>") {
    ConfigFile cf;
    cf.origin_ = origin;
    std::istringstream is(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      std::string s = strip(line);
      if (s.empty() || s[0] == '#' || s[0] == ';') continue;
      if (s.front() == '[') {
        check(s.back() == ']', origin + ":" + std::to_string(lineno) + ": malformed section header");
        section = strip(s.substr(1, s.size() - 2));
        check(!section.empty(), origin + ":" + std::to_string(lineno) + ": empty section name");
        cf.sections_[section];  // a section may be empty
        continue;
      }
      const std::size_t eq = s.find('=');
      check(eq != std::string::npos,
            origin + ":" + std::to_string(lineno) + ": expected key = value");
      check(!section.empty(), origin + ":" + std::to_string(lineno) + ": key outside any section");
      const std::string key = strip(s.substr(0, eq));
      const std::string val = strip(s.substr(eq + 1));
      check(!key.empty(), origin + ":" + std::to_string(lineno) + ": empty key");
      auto& sec = cf.sections_[section];
      check(!sec.count(key), origin + ":" + std::to_string(lineno) + ": duplicate key '" + key +
                                 "' in [" + section + "]");
      sec[key] = Entry{val, lineno, false};
    }
    return cf;
  }

  static ConfigFile parse_file(const std::string& path) {
    return parse_text(read_text_file(path), path);
  }

  bool has(const std::string& sec, const std::string& key) const {
    auto s = sections_.find(sec);
    return s != sections_.end() && s->second.count(key);
  }

  std::string get_str(const std::string& sec, const std::string& key, const std::string& dflt) {
    auto s = sections_.find(sec);
    if (s == sections_.end()) return dflt;
    auto k = s->second.find(key);
    if (k == s->second.end()) return dflt;
    k->second.consumed = true;
    return k->second.value;
  }

  std::string require(const std::string& sec, const std::string& key) {
    check(has(sec, key), origin_ + ": missing required key '" + key + "' in [" + sec + "]");
    return get_str(sec, key, "");
  }

  double get_double(const std::string& sec, const std::string& key, double dflt) {
    if (!has(sec, key)) return dflt;
    return parse_double(sec, key, get_str(sec, key, ""));
  }

  int get_int(const std::string& sec, const std::string& key, int dflt) {
    if (!has(sec, key)) return dflt;
    const std::string v = get_str(sec, key, "");
    return static_cast<int>(parse_ll(sec, key, v));
  }

  std::uint64_t get_u64(const std::string& sec, const std::string& key, std::uint64_t dflt) {
    if (!has(sec, key)) return dflt;
    return static_cast<std::uint64_t>(parse_ll(sec, key, get_str(sec, key, "")));
  }

  bool get_bool(const std::string& sec, const std::string& key, bool dflt) {
    if (!has(sec, key)) return dflt;
    const std::string v = get_str(sec, key, "");
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    fail(sec, key, "expected a boolean, got '" + v + "'");
    return dflt;
  }

  std::vector<int> get_int_list(const std::string& sec, const std::string& key,
                                std::vector<int> dflt) {
    if (!has(sec, key)) return dflt;
    std::vector<int> out;
    for (const std::string& item : split_list(get_str(sec, key, "")))
      out.push_back(static_cast<int>(parse_ll(sec, key, item)));
    return out;
  }

  std::vector<std::string> get_str_list(const std::string& sec, const std::string& key,
                                        std::vector<std::string> dflt) {
    if (!has(sec, key)) return dflt;
    return split_list(get_str(sec, key, ""));
  }

  std::array<double, 3> get_double3(const std::string& sec, const std::string& key,
                                    std::array<double, 3> dflt) {
    if (!has(sec, key)) return dflt;
    std::vector<std::string> items = split_list(get_str(sec, key, ""));
    check(items.size() == 3, origin_ + ": key '" + key + "' in [" + sec + "] needs 3 values");
    return {parse_double(sec, key, items[0]), parse_double(sec, key, items[1]),
            parse_double(sec, key, items[2])};
  }

  // Every key must have been consumed by a getter; anything left is unknown.
  void reject_unknown() const {
    for (const auto& [sec, entries] : sections_)
      for (const auto& [key, e] : entries)
        check(e.consumed, origin_ + ":" + std::to_string(e.line) + ": unknown key '" + key +
                              "' in [" + sec + "]");
  }

 private:
  struct Entry {
    std::string value;
    int line = 0;
    bool consumed = false;
  };

  static std::string strip(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
  }

  static std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream is(s);
    while (std::getline(is, cur, ',')) {
      cur = strip(cur);
      if (!cur.empty()) out.push_back(cur);
    }
    return out;
  }

  [[noreturn]] void fail(const std::string& sec, const std::string& key,
                         const std::string& msg) const {
    int line = 0;
    auto s = sections_.find(sec);
    if (s != sections_.end()) {
      auto k = s->second.find(key);
      if (k != s->second.end()) line = k->second.line;
    }
    throw std::invalid_argument(origin_ + ":" + std::to_string(line) + ": key '" + key + "' in [" +
                                sec + "]: " + msg);
  }

  double parse_double(const std::string& sec, const std::string& key, const std::string& v) {
    try {
      std::size_t pos = 0;
      double d = std::stod(v, &pos);
      if (pos != v.size()) throw std::invalid_argument("");
      return d;
    } catch (...) {
      fail(sec, key, "expected a number, got '" + v + "'");
    }
  }

  long long parse_ll(const std::string& sec, const std::string& key, const std::string& v) {
    try {
      std::size_t pos = 0;
      long long d = std::stoll(v, &pos);
      if (pos != v.size()) throw std::invalid_argument("");
      return d;
    } catch (...) {
      fail(sec, key, "expected an integer, got '" + v + "'");
    }
  }

  std::string origin_;
  std::map<std::string, std::map<std::string, Entry>> sections_;
};

// ---------------------------------------------------------------------------
// Experiment configuration
// ---------------------------------------------------------------------------

struct InstrumentSpec {
  std::vector<std::string> taps;
  bool snapshot_final = true;
  std::string run_id = "run";
  std::string out_dir;  // empty: nothing written to disk
};

struct ExperimentConfig {
  ModelConfig model;
  TrainConfig train;
  DatasetSpec dataset;
  InstrumentSpec instrument;
};

inline Family parse_family(const std::string& s) {
  if (s == "resnet") return Family::resnet;
  if (s == "vgg") return Family::vgg;
  throw std::invalid_argument("unknown model family '" + s + "' (expected resnet|vgg)");
}

inline SbnVariant parse_variant(const std::string& s) {
  for (SbnVariant v :
       {SbnVariant::full, SbnVariant::mean_only, SbnVariant::std_only,
        SbnVariant::normalize_no_affine, SbnVariant::downscale, SbnVariant::affine_only,
        SbnVariant::split_real_imag})
    if (s == variant_name(v)) return v;
  throw std::invalid_argument("unknown sbn variant '" + s + "'");
}

inline NMode parse_n_mode(const std::string& s) {
  if (s == "actual") return NMode::actual;
  if (s == "paper") return NMode::paper;
  throw std::invalid_argument("unknown n_mode '" + s + "' (expected actual|paper)");
}

inline DatasetKind parse_dataset_kind(const std::string& s) {
  if (s == "cifar10_binary") return DatasetKind::cifar10_binary;
  if (s == "synthetic_blobs") return DatasetKind::synthetic_blobs;
  throw std::invalid_argument("unknown dataset kind '" + s +
                              "' (expected cifar10_binary|synthetic_blobs)");
}

inline ExperimentConfig experiment_from_config(ConfigFile& cf) {
  ExperimentConfig ec;

  ec.model.family = parse_family(cf.require("model", "family"));
  std::vector<int> blocks = cf.get_int_list("model", "blocks", {1, 1, 1, 1});
  check(blocks.size() == 4, "model.blocks needs exactly 4 entries");
  std::copy(blocks.begin(), blocks.end(), ec.model.blocks.begin());
  ec.model.base_channels = cf.get_int("model", "base_channels", 16);
  ec.model.num_classes = cf.get_int("model", "num_classes", 10);
  for (int m : cf.get_int_list("model", "sbn_modules", {})) ec.model.sbn_modules.insert(m);
  for (int m : cf.get_int_list("model", "double_bn_modules", {}))
    ec.model.double_bn_modules.insert(m);
  ec.model.sbn_variant = parse_variant(cf.get_str("model", "sbn_variant", "full"));
  ec.model.downscale_alpha = cf.get_double("model", "downscale_alpha", 4.0);
  ec.model.n_mode = parse_n_mode(cf.get_str("model", "n_mode", "actual"));
  ec.model.dropout = cf.get_double("model", "dropout", 0.0);
  ec.model.seed = cf.get_u64("model", "seed", 1);

  ec.train.batch_size = cf.get_int("train", "batch_size", 128);
  ec.train.epochs = cf.get_int("train", "epochs", 30);
  ec.train.lr0 = cf.get_double("train", "lr0", 0.1);
  ec.train.milestones = cf.get_int_list("train", "milestones", {15, 23});
  ec.train.lr_decay = cf.get_double("train", "lr_decay", 0.2);
  ec.train.momentum = cf.get_double("train", "momentum", 0.9);
  ec.train.weight_decay = cf.get_double("train", "weight_decay", 5e-4);
  ec.train.val_fraction = cf.get_double("train", "val_fraction", 0.1);
  ec.train.seed = cf.get_u64("train", "seed", 1);
  ec.train.crop_size = cf.get_int("train", "crop_size", 32);
  ec.train.crop_padding = cf.get_int("train", "crop_padding", 4);
  ec.train.hflip_prob = cf.get_double("train", "hflip_prob", 0.5);
  ec.train.norm_mean = cf.get_double3("train", "norm_mean", {0.5, 0.5, 0.5});
  ec.train.norm_std = cf.get_double3("train", "norm_std", {0.25, 0.25, 0.25});
  ec.train.decay_sbn_affine = cf.get_bool("train", "decay_sbn_affine", true);

  ec.dataset.kind = parse_dataset_kind(cf.require("dataset", "kind"));
  ec.dataset.path = cf.get_str("dataset", "path", "");
  ec.dataset.seed = cf.get_u64("dataset", "seed", 7);
  ec.dataset.n_train = cf.get_int("dataset", "n_train", 5000);
  ec.dataset.n_test = cf.get_int("dataset", "n_test", 1000);
  ec.dataset.classes = cf.get_int("dataset", "classes", 10);
  ec.dataset.snr = cf.get_double("dataset", "snr", 1.0);

  ec.instrument.taps = cf.get_str_list("instrument", "taps", {});
  ec.instrument.snapshot_final = cf.get_bool("instrument", "snapshot_final", true);
  ec.instrument.run_id = cf.get_str("output", "run_id", "run");
  ec.instrument.out_dir = cf.get_str("output", "dir", "");

  cf.reject_unknown();
  ec.model.validate();
  ec.train.validate();
  check(ec.model.num_classes == ec.dataset.classes,
        "model.num_classes must match dataset.classes");
  return ec;
}

inline ExperimentConfig parse_experiment_config(const std::string& path) {
  ConfigFile cf = ConfigFile::parse_file(path);
  return experiment_from_config(cf);
}

// ---------------------------------------------------------------------------
// CSV emission
// ---------------------------------------------------------------------------

inline std::string metrics_csv_header() {
  std::string h = "run_id,epoch,layer_tag,kind,value";
  for (int i = 0; i < 9; ++i) h += ",p" + std::to_string(i);
  return h + ",path";
}

inline void write_metrics_csv(const std::vector<MetricRecord>& records, const std::string& path) {
  std::ostringstream os;
  os << metrics_csv_header() << "\n";
  for (const MetricRecord& r : records) {
    os << r.run_id << "," << r.epoch << "," << r.layer_tag << "," << metric_kind_name(r.kind);
    os << "," << (r.kind == MetricKind::frobenius_norm ? fmt_g17(r.value) : "");
    for (int i = 0; i < 9; ++i)
      os << "," << (r.kind == MetricKind::percentile_band ? fmt_g17(r.bands[i]) : "");
    os << "," << (r.kind == MetricKind::magnitude_map_ref ? r.path : "");
    os << "\n";
  }
  write_text_file(path, os.str());
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(line);
  while (std::getline(is, cur, ',')) out.push_back(cur);
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

inline std::vector<MetricRecord> read_metrics_csv(const std::string& path) {
  std::istringstream is(read_text_file(path));
  std::string line;
  check(static_cast<bool>(std::getline(is, line)), "metrics csv '" + path + "' is empty");
  check(line == metrics_csv_header(), "metrics csv '" + path + "' has an unexpected header");
  std::vector<MetricRecord> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f = split_csv_line(line);
    check(f.size() == 15, "metrics csv '" + path + "': malformed row");
    MetricRecord r;
    r.run_id = f[0];
    r.epoch = std::stoi(f[1]);
    r.layer_tag = f[2];
    const std::string kind = f[3];
    if (kind == "frobenius_norm") {
      r.kind = MetricKind::frobenius_norm;
      r.value = std::stod(f[4]);
    } else if (kind == "percentile_band") {
      r.kind = MetricKind::percentile_band;
      for (int i = 0; i < 9; ++i) r.bands[i] = std::stod(f[5 + i]);
    } else if (kind == "magnitude_map_ref") {
      r.kind = MetricKind::magnitude_map_ref;
      r.path = f[14];
    } else {
      throw std::invalid_argument("metrics csv '" + path + "': unknown kind '" + kind + "'");
    }
    out.push_back(std::move(r));
  }
  return out;
}

// ---------------------------------------------------------------------------
// PGM emission (binary P5, log1p + min-max scaling)
// ---------------------------------------------------------------------------

template <typename T>
void render_pgm(const Image2D<T>& map, const std::string& path) {
  std::vector<double> y(map.v.size());
  for (std::size_t i = 0; i < map.v.size(); ++i) {
    const double v = static_cast<double>(map.v[i]);
    check(std::isfinite(v), "render_pgm: non-finite entry");
    y[i] = std::log1p(v);
  }
  double lo = y.empty() ? 0 : y[0], hi = lo;
  for (double v : y) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  std::string bytes;
  bytes.reserve(y.size());
  if (hi - lo <= 0) {
    bytes.assign(y.size(), static_cast<char>(128));  // degenerate map: mid-gray
  } else {
    for (double v : y) {
      int px = static_cast<int>(std::lround((v - lo) / (hi - lo) * 255.0));
      bytes.push_back(static_cast<char>(std::min(255, std::max(0, px))));
    }
  }
  std::ostringstream os;
  os << "P5\n" << map.cols << " " << map.rows << "\n255\n" << bytes;
  write_text_file(path, os.str());
}

// ---------------------------------------------------------------------------
// Raw tensor snapshots ("T4F8": dims as u32 LE, data as f64 LE)
// ---------------------------------------------------------------------------

template <typename T>
void save_tensor4(const Tensor4<T>& t, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  check(f.good(), "cannot write '" + path + "'");
  f.write("T4F8", 4);
  const std::uint32_t dims[4] = {
      static_cast<std::uint32_t>(t.batch), static_cast<std::uint32_t>(t.channels),
      static_cast<std::uint32_t>(t.height), static_cast<std::uint32_t>(t.width)};
  f.write(reinterpret_cast<const char*>(dims), sizeof(dims));
  for (std::int64_t i = 0; i < t.size(); ++i) {
    const double v = static_cast<double>(t.data[i]);
    f.write(reinterpret_cast<const char*>(&v), sizeof(v));
  }
  check(f.good(), "write failed for '" + path + "'");
}

inline Tensor4<double> load_tensor4(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  check(f.good(), "cannot open '" + path + "'");
  char magic[4];
  f.read(magic, 4);
  check(f.good() && std::string(magic, 4) == "T4F8", "'" + path + "' is not a tensor snapshot");
  std::uint32_t dims[4];
  f.read(reinterpret_cast<char*>(dims), sizeof(dims));
  Tensor4<double> t(static_cast<int>(dims[0]), static_cast<int>(dims[1]),
                    static_cast<int>(dims[2]), static_cast<int>(dims[3]));
  f.read(reinterpret_cast<char*>(t.data.data()), t.size() * static_cast<std::int64_t>(sizeof(double)));
  check(f.good(), "truncated tensor snapshot '" + path + "'");
  return t;
}

}  // namespace sbn

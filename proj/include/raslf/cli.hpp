#pragma once

// `raslf` command-line driver. Exit codes: 0 success, 1 usage or
// configuration error, 2 data error, 3 numeric failure.

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "raslf/checks.hpp"
#include "raslf/config_kv.hpp"
#include "raslf/data_io.hpp"
#include "raslf/metrics.hpp"
#include "raslf/network.hpp"
#include "raslf/training.hpp"

namespace raslf::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

namespace fs = std::filesystem;

/// Worker cap from --threads; echoed with every configuration.
inline std::size_t& thread_cap() {
  static std::size_t threads = 1;
  return threads;
}

inline void echo_config(std::ostream& out, const std::string& command,
                        const KeyValues& kv) {
  out << "# effective configuration: " << command << "\n"
      << "threads = " << thread_cap() << "\n"
      << kv.to_string() << "# end configuration\n";
  out.flush();
}

/// Container files in `dir` (sorted by name), reduced to the Y channel.
inline LfDataset load_dataset_dir(const std::string& dir) {
  if (!fs::is_directory(dir)) throw DataError(dir + ": not a directory");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".lf")
      files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw DataError(dir + ": no .lf containers");
  LfDataset ds;
  for (const auto& f : files) {
    LfFile file = read_container(f.string());
    ds.ids.push_back(f.stem().string());
    ds.hr.push_back(file.tag == ChannelTag::rgb
                        ? extract_channel(convert_rgb_to_ycbcr(file.lf), 0)
                        : std::move(file.lf));
  }
  return ds;
}

/// Training/validation data: directories when given, otherwise synthetic.
struct DataOptions {
  std::string train_dir, val_dir;
  std::size_t train_scenes = 32, val_scenes = 8;
  std::uint64_t train_seed = 11, val_seed = 12;
  std::size_t H = 64;
  double max_disparity = 2.0;

  void add(CLI::App& app) {
    app.add_option("--train", train_dir,
                   "Directory of .lf training scenes (default: synthetic)");
    app.add_option("--val", val_dir,
                   "Directory of .lf validation scenes (default: synthetic)");
    app.add_option("--train-scenes", train_scenes, "Synthetic training scenes");
    app.add_option("--val-scenes", val_scenes, "Synthetic validation scenes");
    app.add_option("--train-seed", train_seed, "Synthetic training seed");
    app.add_option("--val-seed", val_seed, "Synthetic validation seed");
    app.add_option("--scene-size", H, "Synthetic scene height and width");
    app.add_option("--max-disparity", max_disparity,
                   "Synthetic disparity range [0, d]");
  }

  void describe(KeyValues& kv) const {
    kv.set("data.train", train_dir.empty() ? "synthetic" : train_dir);
    kv.set("data.val", val_dir.empty() ? "synthetic" : val_dir);
    if (train_dir.empty() || val_dir.empty()) {
      kv.set("data.train_scenes", train_scenes);
      kv.set("data.val_scenes", val_scenes);
      kv.set("data.train_seed", train_seed);
      kv.set("data.val_seed", val_seed);
      kv.set("data.scene_size", H);
      kv.set("data.max_disparity", max_disparity);
    }
  }

  std::pair<LfDataset, LfDataset> load(const ModelConfig& m) const {
    auto make = [&](const std::string& dir, std::size_t n, std::uint64_t seed,
                    const std::string& prefix) {
      if (!dir.empty()) return load_dataset_dir(dir);
      return make_synthetic_dataset({n, m.U, m.V, H, H, max_disparity, seed},
                                    prefix);
    };
    return {make(train_dir, train_scenes, train_seed, "train"),
            make(val_dir, val_scenes, val_seed, "val")};
  }
};

/// Schedule preset plus optional file and flag overrides.
struct ScheduleOptions {
  std::string preset;
  std::string file;
  std::optional<std::size_t> epochs, steps_per_epoch, batch, patch;
  std::optional<double> lr;
  std::optional<std::uint64_t> seed;
  std::string checkpoint_dir;

  explicit ScheduleOptions(std::string p) : preset(std::move(p)) {}

  void add(CLI::App& app) {
    app.add_option("--schedule", preset,
                   "Schedule preset (stage1, stage2, tiny-stage1, tiny-stage2)");
    app.add_option("--schedule-config", file, "Key-value schedule overrides");
    app.add_option("--epochs", epochs, "Override epochs");
    app.add_option("--steps-per-epoch", steps_per_epoch,
                   "Override optimizer steps per epoch");
    app.add_option("--batch", batch, "Override batch size");
    app.add_option("--patch", patch, "Override LR patch side");
    app.add_option("--lr", lr, "Override initial learning rate");
    app.add_option("--seed", seed, "Override sampling seed");
    app.add_option("--checkpoint-dir", checkpoint_dir,
                   "Directory for periodic and last-good checkpoints");
  }

  TrainConfig resolve() const {
    TrainConfig t = schedule_preset(preset);
    if (!file.empty()) t = TrainConfig::from_kv(KeyValues::load(file), t);
    if (epochs) t.epochs = *epochs;
    if (steps_per_epoch) t.steps_per_epoch = *steps_per_epoch;
    if (batch) t.batch = *batch;
    if (patch) t.patch = *patch;
    if (lr) t.lr = *lr;
    if (seed) t.seed = *seed;
    if (!checkpoint_dir.empty()) t.checkpoint_dir = checkpoint_dir;
    t.validate();
    return t;
  }
};

inline void merge(KeyValues& into, const KeyValues& from,
                  const std::string& prefix) {
  for (const auto& k : from.keys()) into.set(prefix + k, from.get(k));
}

class LogWriter {
 public:
  LogWriter(std::ostream& out, const std::string& path) : out_(out) {
    if (!path.empty()) {
      file_.open(path);
      if (!file_) throw DataError("cannot write log " + path);
    }
  }
  void line(const std::string& s) {
    out_ << s << "\n";
    out_.flush();
    if (file_.is_open()) file_ << s << "\n" << std::flush;
  }
  void config(const std::string& command, const KeyValues& kv) {
    echo_config(out_, command, kv);
    if (file_.is_open()) echo_config(file_, command, kv);
  }

 private:
  std::ostream& out_;
  std::ofstream file_;
};

inline std::string fixed(double v, int digits = 4) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

// ---------------------------------------------------------------- commands

struct GenArgs {
  std::string scene, out, disparity, pgm;
  std::size_t random = 0;
  std::uint64_t seed = 1;
  std::size_t U = 5, V = 5, H = 64, W = 64;
  double max_disparity = 2.0;
};

inline int cmd_gen(const GenArgs& a, std::ostream& out) {
  KeyValues kv;
  if (a.random > 0) {
    kv.set("random", a.random);
    kv.set("seed", a.seed);
    kv.set("U", a.U);
    kv.set("V", a.V);
    kv.set("H", a.H);
    kv.set("W", a.W);
    kv.set("max_disparity", a.max_disparity);
    kv.set("out", a.out);
    echo_config(out, "gen", kv);
    const LfDataset ds = make_synthetic_dataset(
        {a.random, a.U, a.V, a.H, a.W, a.max_disparity, a.seed}, "scene");
    fs::create_directories(a.out);
    for (std::size_t i = 0; i < ds.hr.size(); ++i) {
      std::ostringstream name;
      name << "scene_" << std::setw(3) << std::setfill('0') << i << ".lf";
      write_container((fs::path(a.out) / name.str()).string(), ds.hr[i]);
    }
    out << "wrote " << ds.hr.size() << " scenes to " << a.out << "\n";
    return kOk;
  }
  if (a.scene.empty()) {
    throw ConfigError("gen: give --scene FILE or --random N");
  }
  const SyntheticSceneSpec spec = scene_spec_from_kv(KeyValues::load(a.scene));
  kv.set("scene", a.scene);
  kv.set("out", a.out);
  if (!a.disparity.empty()) kv.set("disparity", a.disparity);
  if (!a.pgm.empty()) kv.set("pgm", a.pgm);
  echo_config(out, "gen", kv);
  const SyntheticScene s = synth_generate(spec);
  write_container(a.out, s.lf);
  if (!a.pgm.empty()) write_pgm_grid(a.pgm, s.lf);
  if (!a.disparity.empty()) {
    // Containers hold [0, 1]; disparity is stored affinely with its range
    // in a key-value sidecar.
    const auto [lo, hi] =
        std::minmax_element(s.disparity.data.begin(), s.disparity.data.end());
    const float dmin = *lo, dmax = *hi;
    LightField4D norm = s.disparity;
    for (float& v : norm.data)
      v = dmax > dmin ? (v - dmin) / (dmax - dmin) : 0.0f;
    write_container(a.disparity, norm);
    KeyValues range;
    range.set("min", double(dmin));
    range.set("max", double(dmax));
    range.save(a.disparity + ".kv");
  }
  out << "wrote " << to_string(s.lf.ext) << " to " << a.out << "\n";
  return kOk;
}

struct TrainArgs {
  std::string preset = "tiny", model_config, out, log;
  DataOptions data;
  ScheduleOptions schedule{"tiny-stage1"};
};

inline int cmd_train(const TrainArgs& a, std::ostream& out) {
  if (a.out.empty()) throw ConfigError("train: --out is required");
  ModelConfig m = preset_config(a.preset);
  if (!a.model_config.empty()) {
    m = ModelConfig::from_kv(KeyValues::load(a.model_config), m);
  }
  // Stage 1 always trains every scan path.
  m.paths = BlockPaths::full();
  m.validate();
  TrainConfig t = a.schedule.resolve();
  t.stage = 1;
  KeyValues kv;
  kv.set("preset", a.preset);
  merge(kv, m.to_kv(), "model.");
  merge(kv, t.to_kv(), "train.");
  a.data.describe(kv);
  kv.set("out", a.out);
  LogWriter log(out, a.log);
  log.config("train", kv);
  const auto [train, val] = a.data.load(m);
  RaslfModel<float> model(m);
  const TrainResult r = train_stage1(model, train, val, t,
                                     [&](const LogRecord& rec) {
                                       log.line(rec.to_string());
                                     });
  save_checkpoint(a.out, model, &r.optimizer);
  log.line("bicubic_psnr=" + fixed(r.bicubic_val_psnr) +
           " initial_psnr=" + fixed(r.initial_val_psnr) +
           " final_psnr=" + fixed(r.final_val_psnr));
  log.line("wrote " + a.out);
  return kOk;
}

struct PruneArgs {
  std::string checkpoint, out, log;
  std::string keep_sai = "RowFwd,ColFwd", keep_mac = "RowFwd,RowBwd,ColFwd,ColBwd",
              keep_hepi = "RowFwd", keep_vepi = "ColFwd";
  DataOptions data;
  ScheduleOptions schedule{"tiny-stage2"};
};

inline int cmd_prune_finetune(const PruneArgs& a, std::ostream& out) {
  if (a.checkpoint.empty() || a.out.empty()) {
    throw ConfigError("prune-finetune: --checkpoint and --out are required");
  }
  const BlockPaths keep{ScanPathSet::parse(a.keep_sai),
                        ScanPathSet::parse(a.keep_mac),
                        ScanPathSet::parse(a.keep_hepi),
                        ScanPathSet::parse(a.keep_vepi)};
  TrainConfig t = a.schedule.resolve();
  t.stage = 2;
  const LoadedCheckpoint<float> ck = load_checkpoint<float>(a.checkpoint);
  KeyValues kv;
  kv.set("checkpoint", a.checkpoint);
  merge(kv, ck.model.config().to_kv(), "model.");
  kv.set("keep.sai", a.keep_sai);
  kv.set("keep.mac", a.keep_mac);
  kv.set("keep.hepi", a.keep_hepi);
  kv.set("keep.vepi", a.keep_vepi);
  merge(kv, t.to_kv(), "train.");
  a.data.describe(kv);
  kv.set("out", a.out);
  LogWriter log(out, a.log);
  log.config("prune-finetune", kv);
  const auto [train, val] = a.data.load(ck.model.config());
  const Stage2Result r =
      train_stage2(ck.model, train, val, t, keep,
                   [&](const LogRecord& rec) { log.line(rec.to_string()); });
  save_checkpoint(a.out, r.model, &r.training.optimizer);
  log.line("full_psnr=" + fixed(r.full_val_psnr) +
           " pruned_psnr=" + fixed(r.pruned_val_psnr) +
           " finetuned_psnr=" + fixed(r.training.final_val_psnr));
  log.line("wrote " + a.out);
  return kOk;
}

/// Y through the model; Cb and Cr bicubic for RGB input.
inline LfFile super_resolve(const RaslfModel<float>& model, const LfFile& in) {
  const std::size_t a = model.config().scale;
  if (in.tag == ChannelTag::y) return {model.infer(in.lf), ChannelTag::y};
  const LightField4D ycc = convert_rgb_to_ycbcr(in.lf);
  LightField4D up = bicubic_upsample(ycc, a);
  insert_channel(up, model.infer(extract_channel(ycc, 0)), 0);
  return {convert_ycbcr_to_rgb(up), ChannelTag::rgb};
}

struct InferArgs {
  std::string checkpoint, input, output;
};

inline int cmd_infer(const InferArgs& a, std::ostream& out) {
  KeyValues kv;
  kv.set("checkpoint", a.checkpoint);
  kv.set("input", a.input);
  kv.set("output", a.output);
  echo_config(out, "infer", kv);
  const LoadedCheckpoint<float> ck = load_checkpoint<float>(a.checkpoint);
  const LfFile in = read_container(a.input);
  const LfFile sr = super_resolve(ck.model, in);
  write_container(a.output, sr.lf, sr.tag);
  out << "wrote " << to_string(sr.lf.ext) << " (" << to_string(sr.tag)
      << ") to " << a.output << "\n";
  return kOk;
}

struct EvalArgs {
  std::vector<std::string> hr, sr;
  std::string checkpoint, report;
  std::size_t scale = 0;
  bool view_mean = false;
};

inline std::string dataset_name(const std::string& dir) {
  fs::path p(dir);
  if (p.filename().empty()) p = p.parent_path();
  return p.filename().string();
}

inline int cmd_eval(const EvalArgs& a, std::ostream& out) {
  if (a.hr.empty()) throw ConfigError("eval: at least one --hr directory");
  if (!a.sr.empty() && a.sr.size() != a.hr.size()) {
    throw ConfigError("eval: give one --sr directory per --hr directory");
  }
  std::optional<LoadedCheckpoint<float>> ck;
  if (!a.checkpoint.empty()) ck = load_checkpoint<float>(a.checkpoint);
  const std::size_t scale = ck ? ck->model.config().scale : a.scale;
  if (a.sr.empty() && !ck && scale == 0) {
    throw ConfigError(
        "eval: nothing to score; give --sr, --checkpoint or --scale");
  }
  KeyValues kv;
  for (std::size_t i = 0; i < a.hr.size(); ++i) {
    kv.set("hr." + std::to_string(i), a.hr[i]);
    if (!a.sr.empty()) kv.set("sr." + std::to_string(i), a.sr[i]);
  }
  if (ck) kv.set("checkpoint", a.checkpoint);
  kv.set("scale", scale);
  kv.set("psnr_rule", a.view_mean ? "view-mean" : "pooled");
  echo_config(out, "eval", kv);

  std::map<std::string, std::vector<SceneScore>> model_scores, bicubic_scores;
  KeyValues report;
  for (std::size_t i = 0; i < a.hr.size(); ++i) {
    const std::string name = dataset_name(a.hr[i]);
    const LfDataset hr = load_dataset_dir(a.hr[i]);
    std::optional<LfDataset> sr;
    if (!a.sr.empty()) sr = load_dataset_dir(a.sr[i]);
    for (std::size_t s = 0; s < hr.hr.size(); ++s) {
      const std::string id = hr.ids[s];
      const std::string key = name + "." + id;
      std::optional<LightField4D> lr;
      if (scale > 0) lr = bicubic_downsample(hr.hr[s], scale);
      std::optional<LightField4D> candidate;
      if (sr) {
        const auto it = std::find(sr->ids.begin(), sr->ids.end(), id);
        if (it == sr->ids.end()) {
          throw DataError(a.sr[i] + ": no reconstruction for scene '" + id + "'");
        }
        candidate = sr->hr[std::size_t(it - sr->ids.begin())];
      } else if (ck) {
        candidate = ck->model.infer(*lr);
      }
      if (candidate) {
        const SceneScore sc = score_scene(id, *candidate, hr.hr[s], !a.view_mean);
        model_scores[name].push_back(sc);
        report.set("scene." + key + ".psnr", sc.psnr);
        report.set("scene." + key + ".ssim", sc.ssim);
        out << "scene " << key << " psnr=" << fixed(sc.psnr)
            << " ssim=" << fixed(sc.ssim) << "\n";
      }
      if (lr) {
        const SceneScore sc = score_scene(id, bicubic_upsample(*lr, scale),
                                          hr.hr[s], !a.view_mean);
        bicubic_scores[name].push_back(sc);
        report.set("scene." + key + ".bicubic_psnr", sc.psnr);
      }
    }
  }
  auto summarize = [&](const auto& scores, const std::string& label) {
    if (scores.empty()) return;
    const AggregateScore agg = aggregate(scores);
    for (const auto& [name, v] : agg.per_dataset) {
      out << label << " dataset " << name << " psnr=" << fixed(v.first)
          << " ssim=" << fixed(v.second) << "\n";
      report.set(label + ".dataset." + name + ".psnr", v.first);
      report.set(label + ".dataset." + name + ".ssim", v.second);
    }
    out << label << " psnr=" << fixed(agg.psnr) << " ssim=" << fixed(agg.ssim)
        << "\n";
    report.set(label + ".psnr", agg.psnr);
    report.set(label + ".ssim", agg.ssim);
  };
  summarize(model_scores, "model");
  summarize(bicubic_scores, "bicubic");
  if (!a.report.empty()) report.save(a.report);
  return kOk;
}

struct ErrmapArgs {
  std::string reference, reconstruction, out;
  std::size_t channel = 0;
};

inline int cmd_errmap(const ErrmapArgs& a, std::ostream& out) {
  KeyValues kv;
  kv.set("reference", a.reference);
  kv.set("reconstruction", a.reconstruction);
  kv.set("out", a.out);
  kv.set("channel", a.channel);
  kv.set("full_scale_error", kErrorMapRange);
  echo_config(out, "errmap", kv);
  const LfFile ref = read_container(a.reference);
  const LfFile rec = read_container(a.reconstruction);
  if (a.channel >= ref.lf.ext.C) {
    throw ConfigError("errmap: --channel " + std::to_string(a.channel) +
                      " but the light field has " +
                      std::to_string(ref.lf.ext.C) + " channel(s)");
  }
  const LightField4D e = error_map(ref.lf, rec.lf);
  write_pgm_grid(a.out, e, a.channel);
  for (std::size_t u = 0; u < e.ext.U; ++u)
    for (std::size_t v = 0; v < e.ext.V; ++v) {
      double sum = 0;
      for (std::size_t y = 0; y < e.ext.H; ++y)
        for (std::size_t x = 0; x < e.ext.W; ++x)
          sum += std::abs(double(ref.lf.at(u, v, y, x, a.channel)) -
                          double(rec.lf.at(u, v, y, x, a.channel)));
      out << "view " << u << "_" << v
          << " mean_abs_error=" << fixed(sum / double(e.ext.H * e.ext.W), 6)
          << "\n";
    }
  out << "wrote " << e.ext.U * e.ext.V << " heatmaps to " << a.out << "\n";
  return kOk;
}

struct FlopsArgs {
  std::string preset = "raas-x4", model_config;
  std::size_t lr_size = 32;
  bool scaling = false;
};

inline int cmd_flops(const FlopsArgs& a, std::ostream& out) {
  ModelConfig base = preset_config(a.preset);
  if (!a.model_config.empty()) {
    base = ModelConfig::from_kv(KeyValues::load(a.model_config), base);
  }
  base.validate();
  KeyValues kv;
  kv.set("preset", a.preset);
  merge(kv, base.to_kv(), "model.");
  kv.set("lr_size", a.lr_size);
  echo_config(out, "flops", kv);
  const std::size_t H = a.lr_size, W = a.lr_size;
  out << "scan-path ablation (LR " << H << "x" << W << ", " << base.U << "x"
      << base.V << " views)\n"
      << "row  GFLOPs        params\n";
  const auto rows = checks::ablation_rows(base, H, W);
  std::vector<double> f, p;
  for (const auto& r : rows) {
    out << "(" << r.row << ")  " << fixed(double(r.flops) / 1e9, 6) << "  "
        << r.params << "\n";
    f.push_back(double(r.flops));
    p.push_back(double(r.params));
  }
  out << "decrements GFLOPs";
  for (std::size_t i = 1; i < f.size(); ++i)
    out << " " << fixed((f[i - 1] - f[i]) / 1e9, 6);
  out << "\ndecrements params";
  for (std::size_t i = 1; i < p.size(); ++i)
    out << " " << std::size_t(p[i - 1] - p[i]);
  const bool ok =
      checks::equal_decrements(f, 1e-3) && checks::equal_decrements(p, 1e-3);
  out << "\ndecrement check (equal within 0.1%, strictly decreasing): "
      << (ok ? "PASS" : "FAIL") << "\n";
  if (a.scaling) {
    out << "scaling (LR " << H << "x" << W << ")\nconfig  GFLOPs  params\n";
    for (const char* name :
         {"m4c64", "m8c64", "m12c64", "m16c64", "m4c128", "m4c256"}) {
      ModelConfig c = preset_config(name);
      c.U = base.U;
      c.V = base.V;
      c.scale = base.scale;
      out << name << "  " << fixed(double(count_flops(c, H, W)) / 1e9, 6)
          << "  " << analytic_param_count(c) << "\n";
    }
  }
  return ok ? kOk : kNumeric;
}

struct SelfcheckArgs {
  bool inject_fault = false;
  std::string work_dir;
};

inline int cmd_selfcheck(const SelfcheckArgs& a, std::ostream& out) {
  const fs::path dir = a.work_dir.empty()
                           ? fs::temp_directory_path() / "raslf-selfcheck"
                           : fs::path(a.work_dir);
  KeyValues kv;
  kv.set("inject_fault", a.inject_fault);
  kv.set("work_dir", dir.string());
  echo_config(out, "selfcheck", kv);
  struct FaultGuard {
    explicit FaultGuard(bool on) { runtime_flags().corrupt_matmul_grad = on; }
    ~FaultGuard() { runtime_flags().corrupt_matmul_grad = false; }
  } guard(a.inject_fault);

  ModelConfig grad_cfg;
  grad_cfg.blocks = 1;
  grad_cfg.channels = 4;
  grad_cfg.state = 2;
  grad_cfg.U = grad_cfg.V = 2;
  grad_cfg.scale = 2;
  grad_cfg.paths = BlockPaths::full();
  ModelConfig ablation = preset_config("raas-x4");
  ablation.channels = 16;

  std::vector<checks::CheckResult> results;
  results.push_back(checks::timed("representation round trips",
                                  [] { return checks::rep_round_trips(20, 1); }));
  results.push_back(checks::timed("scan oracle", [] {
    return checks::scan_oracle(10, 64, 1e-5, 2);
  }));
  results.push_back(checks::timed("model gradients", [&] {
    return checks::model_gradients(grad_cfg, 4, 1e-3, 3);
  }));
  results.push_back(checks::timed("pruning exactness", [] {
    return checks::pruning_exactness(preset_config("tiny"), 6, 2, 1e-6, 4);
  }));
  results.push_back(checks::timed("ablation structure", [&] {
    return checks::ablation_structure(ablation, 8, 8);
  }));
  results.push_back(checks::timed("zero-init baseline", [] {
    return checks::zero_init_baseline(preset_config("tiny"), 2, 5);
  }));
  results.push_back(checks::timed("epi slopes", [] { return checks::epi_slopes(); }));
  results.push_back(
      checks::timed("metric oracles", [] { return checks::metric_oracles(); }));
  results.push_back(checks::timed("determinism", [&] {
    return checks::determinism(dir, 2);
  }));
  std::size_t failed = 0;
  for (const auto& r : results) {
    out << checks::format_line(r) << "\n";
    failed += r.passed ? 0 : 1;
  }
  out << (failed == 0 ? "selfcheck passed" : "selfcheck FAILED: " +
                                                 std::to_string(failed) +
                                                 " check(s)")
      << "\n";
  return failed == 0 ? kOk : kNumeric;
}

// ---------------------------------------------------------------- entry

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout,
               std::ostream& err = std::cerr) {
  CLI::App app{"Light-field super-resolution with representation-aware "
               "selective scans",
               "raslf"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);
  std::size_t threads = 1;
  app.add_option("--threads", threads,
                 "Worker cap (computation runs on one thread)")
      ->check(CLI::PositiveNumber);

  GenArgs gen;
  auto* g = app.add_subcommand("gen", "Synthesize light fields from scene specs");
  g->add_option("--scene", gen.scene, "Key-value scene spec");
  g->add_option("--out", gen.out, "Output container (or directory with --random)")
      ->required();
  g->add_option("--disparity", gen.disparity,
                "Also write normalized disparity ground truth (+ .kv range)");
  g->add_option("--pgm", gen.pgm, "Also write one 16-bit PGM per view here");
  g->add_option("--random", gen.random, "Generate N random scenes instead");
  g->add_option("--seed", gen.seed, "Seed for --random");
  g->add_option("--U", gen.U, "Angular rows for --random");
  g->add_option("--V", gen.V, "Angular columns for --random");
  g->add_option("--H", gen.H, "Height for --random");
  g->add_option("--W", gen.W, "Width for --random");
  g->add_option("--max-disparity", gen.max_disparity,
                "Disparity range [0, d] for --random");

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Stage 1: train a full-path model");
  t->add_option("--preset", train.preset, "Model preset");
  t->add_option("--model-config", train.model_config,
                "Key-value model overrides");
  t->add_option("--out", train.out, "Output checkpoint")->required();
  t->add_option("--log", train.log, "Also write the log here");
  train.data.add(*t);
  train.schedule.add(*t);

  PruneArgs prune;
  auto* p = app.add_subcommand("prune-finetune",
                               "Stage 2: prune scan paths and fine-tune");
  p->add_option("--checkpoint", prune.checkpoint, "Stage-1 checkpoint")
      ->required();
  p->add_option("--out", prune.out, "Output checkpoint")->required();
  p->add_option("--log", prune.log, "Also write the log here");
  p->add_option("--keep-sai", prune.keep_sai, "SAI paths to keep");
  p->add_option("--keep-mac", prune.keep_mac, "MacPI paths to keep");
  p->add_option("--keep-hepi", prune.keep_hepi, "H-EPI paths to keep");
  p->add_option("--keep-vepi", prune.keep_vepi, "V-EPI paths to keep");
  prune.data.add(*p);
  prune.schedule.add(*p);

  InferArgs infer;
  auto* i = app.add_subcommand("infer", "Super-resolve an LR container");
  i->add_option("--checkpoint", infer.checkpoint, "Model checkpoint")->required();
  i->add_option("--input", infer.input, "LR container")->required();
  i->add_option("--output", infer.output, "SR container")->required();

  EvalArgs eval;
  auto* e = app.add_subcommand("eval", "Score reconstructions against HR");
  e->add_option("--hr", eval.hr, "HR dataset directory (repeatable)")
      ->required();
  e->add_option("--sr", eval.sr, "SR directory per --hr (matched by name)");
  e->add_option("--checkpoint", eval.checkpoint,
                "Score this model on bicubic-degraded HR");
  e->add_option("--scale", eval.scale,
                "Degradation factor for the bicubic baseline (0 = from "
                "checkpoint)");
  e->add_flag("--view-mean", eval.view_mean,
              "Scene PSNR as mean of per-view PSNR instead of pooled MSE");
  e->add_option("--report", eval.report, "Write a key-value report");

  ErrmapArgs errmap;
  auto* m = app.add_subcommand("errmap", "Per-view absolute-error heatmaps");
  m->add_option("--reference", errmap.reference, "HR container")->required();
  m->add_option("--reconstruction", errmap.reconstruction, "SR container")
      ->required();
  m->add_option("--out", errmap.out, "Output directory of u_v.pgm")->required();
  m->add_option("--channel", errmap.channel, "Channel to map");

  FlopsArgs flops;
  auto* f = app.add_subcommand("flops", "Parameter and FLOP tables");
  f->add_option("--preset", flops.preset, "Base model preset");
  f->add_option("--model-config", flops.model_config,
                "Key-value model overrides");
  f->add_option("--lr-size", flops.lr_size, "LR height and width");
  f->add_flag("--scaling", flops.scaling, "Also print depth/width scaling rows");

  SelfcheckArgs self;
  auto* s = app.add_subcommand("selfcheck", "Run the embedded invariant suite");
  s->add_flag("--inject-fault", self.inject_fault,
              "Corrupt matmul gradients (negative control, expect exit 3)");
  s->add_option("--work-dir", self.work_dir, "Scratch directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& ex) {
    const int code = app.exit(ex, out, err);
    return code == 0 ? kOk : kUsage;
  }
  thread_cap() = threads;
  try {
    if (g->parsed()) return cmd_gen(gen, out);
    if (t->parsed()) return cmd_train(train, out);
    if (p->parsed()) return cmd_prune_finetune(prune, out);
    if (i->parsed()) return cmd_infer(infer, out);
    if (e->parsed()) return cmd_eval(eval, out);
    if (m->parsed()) return cmd_errmap(errmap, out);
    if (f->parsed()) return cmd_flops(flops, out);
    if (s->parsed()) return cmd_selfcheck(self, out);
  } catch (const ConfigError& ex) {
    err << "error: " << ex.what() << "\n";
    return kUsage;
  } catch (const NumericError& ex) {
    err << "numeric failure: " << ex.what() << "\n";
    return kNumeric;
  } catch (const std::exception& ex) {
    err << "data error: " << ex.what() << "\n";
    return kData;
  }
  return kUsage;
}

}  // namespace raslf::cli

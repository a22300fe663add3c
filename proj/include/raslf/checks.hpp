#pragma once

// Invariant checks shared by `raslf selfcheck` and the acceptance runner.
// Each returns a CheckResult instead of throwing so a suite can report every
// line.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "raslf/data_io.hpp"
#include "raslf/grad_check.hpp"
#include "raslf/lf_repr.hpp"
#include "raslf/metrics.hpp"
#include "raslf/network.hpp"
#include "raslf/selective_scan.hpp"
#include "raslf/training.hpp"

namespace raslf::checks {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

inline std::string fixed_string(double v, int digits = 4) {
  std::ostringstream os;
  os << std::fixed;
  os.precision(digits);
  os << v;
  return os.str();
}

inline std::string format_line(const CheckResult& r) {
  std::ostringstream os;
  os << (r.passed ? "PASS " : "FAIL ") << r.name << ": " << r.detail << " ("
     << std::fixed;
  os.precision(1);
  os << r.seconds << " s)";
  return os.str();
}

template <class F>
CheckResult timed(std::string name, F&& body) {
  const auto t0 = std::chrono::steady_clock::now();
  CheckResult r;
  try {
    r = body();
  } catch (const std::exception& e) {
    r.passed = false;
    r.detail = std::string("exception: ") + e.what();
  }
  r.name = std::move(name);
  r.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  return r;
}

template <class T>
void perturb_parameters(RaslfModel<T>& model, Rng& rng, double scale) {
  for (auto* p : model.parameters())
    for (auto& v : p->value())
      v = static_cast<T>(double(v) + rng.uniform(-scale, scale));
}

inline LightField4D random_field(const LfExtents& e, Rng& rng) {
  LightField4D lf(e);
  for (float& v : lf.data) v = static_cast<float>(rng.uniform(0.0, 1.0));
  return lf;
}

inline std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// ---------------------------------------------------------------- checks

/// to_rep / from_rep is a bitwise identity and every kind is a bijection on
/// sample indices (checked by enumerating positions).
inline CheckResult rep_round_trips(std::size_t configs, std::uint64_t seed) {
  Rng rng(seed);
  for (std::size_t i = 0; i < configs; ++i) {
    const LfExtents e{1 + rng.below(5), 1 + rng.below(5), 1 + rng.below(12),
                      1 + rng.below(12), 1 + rng.below(8)};
    const LightField4D lf = random_field(e, rng);
    for (RepKind k : kAllRepKinds)
      for (EpiLayout layout :
           {EpiLayout::panoramic, EpiLayout::stacked, EpiLayout::isolated}) {
        if (!(from_rep(to_rep(lf, k, layout), k, e) == lf)) {
          return {"", false,
                  "round trip differs for " + std::string(to_string(k)) +
                      " at " + to_string(e)};
        }
        const RepDims d = rep_dims(k, e, layout);
        std::vector<char> hit(d.batch * d.rows * d.cols, 0);
        for (std::size_t u = 0; u < e.U; ++u)
          for (std::size_t v = 0; v < e.V; ++v)
            for (std::size_t y = 0; y < e.H; ++y)
              for (std::size_t x = 0; x < e.W; ++x) {
                const RepPosition p = rep_position(k, e, u, v, y, x, layout);
                if (p.batch >= d.batch || p.row >= d.rows || p.col >= d.cols) {
                  return {"", false, "position out of range"};
                }
                char& h = hit[(p.batch * d.rows + p.row) * d.cols + p.col];
                if (h) {
                  return {"", false,
                          "two samples share a cell in " +
                              std::string(to_string(k))};
                }
                h = 1;
              }
      }
  }
  return {"", true,
          std::to_string(configs) + " configurations x 4 kinds x 3 layouts"};
}

/// Production scan against the sequential double oracle.
inline CheckResult scan_oracle(std::size_t instances, std::size_t max_length,
                               double tolerance, std::uint64_t seed) {
  Rng rng(seed);
  double worst = 0;
  for (std::size_t i = 0; i < instances; ++i) {
    const std::size_t L = 1 + rng.below(max_length);
    const std::size_t ci = 1 + rng.below(16), n = 1 + rng.below(8);
    const std::size_t r = std::max<std::size_t>(1, ci / 16);
    SsmDirectionParams<float> p("scan", ci, n, r);
    p.initialize(rng);
    for (auto& v : p.d.value()) v = static_cast<float>(rng.uniform(-1, 1));
    std::vector<float> xs(L * ci);
    for (float& v : xs) v = static_cast<float>(rng.uniform(-1, 1));
    const auto x = Tensor<float>::from_data({1, L, ci}, xs);
    const bool reverse = rng.below(2) == 1;
    const Tensor<float> y = [&] {
      NoTapeScope<float> no_tape;
      return scan(x, p, reverse);
    }();
    std::vector<double> xd(xs.begin(), xs.end());
    if (reverse) {
      for (std::size_t t = 0; t < L / 2; ++t)
        std::swap_ranges(xd.begin() + std::ptrdiff_t(t * ci),
                         xd.begin() + std::ptrdiff_t((t + 1) * ci),
                         xd.begin() + std::ptrdiff_t((L - 1 - t) * ci));
    }
    const std::vector<double> ref = scan_reference(xd, p);
    for (std::size_t t = 0; t < L; ++t)
      for (std::size_t c = 0; c < ci; ++c) {
        const double want = ref[(reverse ? L - 1 - t : t) * ci + c];
        const double got = y.data()[t * ci + c];
        worst = std::max(worst,
                         std::abs(got - want) / std::max(std::abs(want), 1.0));
      }
  }
  std::ostringstream os;
  os << instances << " instances, max relative error " << worst
     << " (tolerance " << tolerance << ")";
  return {"", worst < tolerance, os.str()};
}

/// Central differences over every parameter of a small full-path model,
/// evaluated in double on a weighted sum of the SR output.

inline CheckResult model_gradients(const ModelConfig& cfg, std::size_t lr_side,
                                   double tolerance, std::uint64_t seed) {
  Rng rng(seed);
  RaslfModel<double> model(cfg);
  perturb_parameters(model, rng, 0.2);
  const LightField4D lr = random_field({cfg.U, cfg.V, lr_side, lr_side, 1}, rng);
  const Tensor<double> input = lf_to_tensor<double>(lr);
  const Tensor<double> weight = [&] {
    NoTapeScope<double> no_tape;
    const Shape s = model.forward(input).shape();
    std::vector<double> w(numel(s));
    for (double& v : w) v = rng.uniform(-1.0, 1.0);
    return Tensor<double>::from_data(s, std::move(w));
  }();
  const auto report = grad_check<double>(
      [&] { return ops::sum(ops::mul(model.forward(input), weight)); },
      model.parameters(), tolerance);
  std::ostringstream os;
  os << report.coordinates << " coordinates, step " << GradCheckOptions{}.step
     << ", max relative error " << report.max_relative_error << " (tolerance "
     << tolerance << ")";
  if (!report.passed) {
    os << ", worst " << report.worst_parameter << "[" << report.worst_index
       << "] analytic " << report.worst_analytic << " numeric "
       << report.worst_numeric;
  }
  return {"", report.passed, os.str()};
}

/// Pruned forward against the full model with pruned-path outputs zeroed.
inline CheckResult pruning_exactness(const ModelConfig& base,
                                     std::size_t lr_side, std::size_t inputs,
                                     double tolerance, std::uint64_t seed) {
  Rng rng(seed);
  ModelConfig cfg = base;
  cfg.paths = BlockPaths::full();
  RaslfModel<float> full(cfg);
  perturb_parameters(full, rng, 0.2);
  const RaslfModel<float> pruned = prune_model(full);
  const RaslfModel<float> oracle = zero_substituted(full);
  double worst = 0;
  for (std::size_t i = 0; i < inputs; ++i) {
    const LightField4D lr =
        random_field({cfg.U, cfg.V, lr_side, lr_side, 1}, rng);
    const LightField4D a = pruned.infer(lr), b = oracle.infer(lr);
    for (std::size_t j = 0; j < a.data.size(); ++j)
      worst = std::max(worst, double(std::abs(a.data[j] - b.data[j])));
  }
  std::ostringstream os;
  os << inputs << " inputs, max abs difference " << worst << " (tolerance "
     << tolerance << ")";
  return {"", worst < tolerance, os.str()};
}

struct AblationRow {
  char row;
  std::uint64_t flops;
  std::size_t params;
};

inline std::vector<AblationRow> ablation_rows(const ModelConfig& base,
                                              std::size_t H, std::size_t W) {
  std::vector<AblationRow> rows;
  for (char r : {'a', 'b', 'c', 'd'}) {
    const ModelConfig cfg = raas_row_config(r, base);
    rows.push_back({r, count_flops(cfg, H, W), analytic_param_count(cfg)});
  }
  return rows;
}

/// Three consecutive decrements equal within `rel` of the largest, totals
/// strictly decreasing.
inline bool equal_decrements(const std::vector<double>& totals, double rel) {
  std::vector<double> d;
  for (std::size_t i = 1; i < totals.size(); ++i) {
    d.push_back(totals[i - 1] - totals[i]);
    if (!(d.back() > 0)) return false;
  }
  const auto [lo, hi] = std::minmax_element(d.begin(), d.end());
  return (*hi - *lo) <= rel * *hi;
}

inline CheckResult ablation_structure(const ModelConfig& base, std::size_t H,
                                      std::size_t W) {
  const auto rows = ablation_rows(base, H, W);
  std::vector<double> f, p;
  for (const auto& r : rows) {
    f.push_back(double(r.flops));
    p.push_back(double(r.params));
  }
  // The analytic count must agree with what a forward pass records.
  RaslfModel<float> probe(raas_row_config('a', base));
  std::uint64_t measured = 0;
  {
    NoTapeScope<float> no_tape;
    FlopCounter counter;
    probe.forward(lf_to_tensor<float>(LightField4D({base.U, base.V, H, W, 1})));
    measured = counter.total();
  }
  const bool ok = equal_decrements(f, 1e-3) && equal_decrements(p, 1e-3) &&
                  measured == rows[0].flops &&
                  count_params(probe) == rows[0].params;
  std::ostringstream os;
  os << "flops";
  for (double v : f) os << " " << std::uint64_t(v);
  os << "; params";
  for (double v : p) os << " " << std::size_t(v);
  os << "; measured row (a) " << measured;
  return {"", ok, os.str()};
}

inline LfDataset synthetic_set(std::size_t scenes, std::uint64_t seed,
                               const std::string& prefix) {
  return make_synthetic_dataset({scenes, 3, 3, 64, 64, 2.0, seed}, prefix);
}

/// A fresh model reproduces bicubic bitwise; PSNRs agree exactly.
inline CheckResult zero_init_baseline(const ModelConfig& cfg,
                                      std::size_t scenes, std::uint64_t seed) {
  const RaslfModel<float> model(cfg);
  const LfDataset val = make_synthetic_dataset(
      {scenes, cfg.U, cfg.V, 16 * cfg.scale, 16 * cfg.scale, 1.0, seed});
  for (const auto& hr : val.hr) {
    const LightField4D lr = bicubic_downsample(hr, cfg.scale);
    if (!(model.infer(lr) == bicubic_upsample(lr, cfg.scale))) {
      return {"", false, "model output differs from bicubic"};
    }
  }
  const ValidationScore s = validate_model(model, val);
  std::ostringstream os;
  os.precision(10);
  os << scenes << " scenes, model " << s.model_psnr << " dB, bicubic "
     << s.bicubic_psnr << " dB";
  return {"", s.model_psnr == s.bicubic_psnr, os.str()};
}

/// Tile slopes on single-plane scenes with integer disparity; a spatial-only
/// flip must break the horizontal check whenever d != 0.
inline CheckResult epi_slopes() {
  std::size_t checked = 0;
  for (int d : {0, 1, 2})
    for (TextureKind kind :
         {TextureKind::checker, TextureKind::sinusoid, TextureKind::noise}) {
      SyntheticSceneSpec s;
      s.U = s.V = 5;
      s.H = s.W = 32;
      Texture t;
      t.kind = kind;
      t.scale = kind == TextureKind::noise ? 1.0 : 3.0;
      t.angle = 0.5;
      t.seed = std::uint64_t(7 + d);
      s.layers.push_back({double(d), t, Mask{}});
      const LightField4D lf = synth_generate(s).lf;
      if (!vepi_slope_holds(lf, d) || !hepi_slope_holds(lf, d)) {
        return {"", false,
                "slope check fails at d=" + std::to_string(d) + " (" +
                    std::string(to_string(kind)) + ")"};
      }
      if (d != 0 && hepi_slope_holds(spatial_hflip(lf), d)) {
        return {"", false,
                "negative control passed at d=" + std::to_string(d)};
      }
      ++checked;
    }
  return {"", true,
          std::to_string(checked) +
              " scenes, d in {0,1,2}; spatial flip rejected for d != 0"};
}

inline CheckResult metric_oracles() {
  const LightField4D a({1, 1, 16, 16, 1}, 0.0f);
  const LightField4D b({1, 1, 16, 16, 1}, 0.1f);
  const double p = psnr(a, b).db;
  Rng rng(3);
  const LightField4D n = random_field({2, 2, 16, 16, 1}, rng);
  const double s = ssim(n, n);
  auto scene = [](double v) {
    SceneScore sc;
    sc.psnr = v;
    return sc;
  };
  const double agg =
      aggregate({{"a", {scene(30), scene(34)}}, {"b", {scene(40)}}}).psnr;
  // 0.1 is not a float; the offset is 0.1f, so PSNR sits 1.3e-7 dB below 20.
  const bool ok = std::abs(p - 20.0) < 1e-6 && s == 1.0 && agg == 36.0;
  std::ostringstream os;
  os.precision(12);
  os << "psnr " << p << " dB (tolerance 1e-6), ssim " << s << ", aggregate "
     << agg;
  return {"", ok, os.str()};
}

/// Two seeded runs give byte-identical checkpoints; container and checkpoint
/// files survive load/save unchanged.
inline CheckResult determinism(const std::filesystem::path& dir,
                               std::size_t steps) {
  std::filesystem::create_directories(dir);
  ModelConfig cfg = preset_config("tiny");
  cfg.paths = BlockPaths::full();
  const LfDataset train = make_synthetic_dataset({4, 3, 3, 32, 32, 2.0, 21});
  const LfDataset val = make_synthetic_dataset({2, 3, 3, 32, 32, 2.0, 22});
  TrainConfig t = tiny_stage1_schedule();
  t.epochs = 1;
  t.steps_per_epoch = steps;
  t.patch = 8;
  std::vector<std::string> files;
  for (int run = 0; run < 2; ++run) {
    RaslfModel<float> m(cfg);
    const TrainResult r = train_stage1(m, train, val, t);
    const std::string path = (dir / ("run" + std::to_string(run) + ".ckpt")).string();
    save_checkpoint(path, m, &r.optimizer);
    files.push_back(path);
  }
  const bool runs_equal = slurp(files[0]) == slurp(files[1]);
  const auto loaded = load_checkpoint<float>(files[0]);
  const std::string resaved = (dir / "resaved.ckpt").string();
  save_checkpoint(resaved, loaded.model,
                  loaded.optimizer ? &*loaded.optimizer : nullptr);
  const bool ckpt_stable = slurp(resaved) == slurp(files[0]);
  const std::string c1 = (dir / "a.lf").string(), c2 = (dir / "b.lf").string();
  write_container(c1, val.hr[0]);
  write_container(c2, read_container(c1).lf);
  const bool container_stable =
      slurp(c1) == slurp(c2) && read_container(c1).lf == val.hr[0];
  std::ostringstream os;
  os << "runs identical " << runs_equal << ", checkpoint stable "
     << ckpt_stable << ", container stable " << container_stable;
  return {"", runs_equal && ckpt_stable && container_stable, os.str()};
}

}  // namespace raslf::checks

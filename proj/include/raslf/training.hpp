#pragma once

#include <cmath>
#include <filesystem>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "raslf/data_io.hpp"
#include "raslf/metrics.hpp"
#include "raslf/network.hpp"
#include "raslf/resample.hpp"

namespace raslf {

/// Mean absolute error over all elements.
template <class T>
Tensor<T> l1_loss(const Tensor<T>& prediction, const Tensor<T>& target) {
  if (prediction.shape() != target.shape()) {
    throw ShapeError("l1_loss: prediction " + to_string(prediction.shape()) +
                     " vs target " + to_string(target.shape()));
  }
  return ops::mean(ops::abs(ops::sub(prediction, target)));
}

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam over float parameters; moments live in an
/// OptimizerState so they can be checkpointed.
class Adam {
 public:
  Adam(ParameterList<float> params, AdamOptions opt = {})
      : params_(std::move(params)), opt_(opt) {
    for (const auto* p : params_) {
      state_.m.emplace_back(p->numel(), 0.0f);
      state_.v.emplace_back(p->numel(), 0.0f);
    }
  }

  void load_state(OptimizerState s) {
    if (s.m.size() != params_.size() || s.v.size() != params_.size()) {
      throw ConfigError("adam: optimizer state has " +
                        std::to_string(s.m.size()) + " entries, expected " +
                        std::to_string(params_.size()));
    }
    for (std::size_t i = 0; i < params_.size(); ++i) {
      if (s.m[i].size() != params_[i]->numel() ||
          s.v[i].size() != params_[i]->numel()) {
        throw ConfigError("adam: moment shape mismatch for " +
                          params_[i]->name());
      }
    }
    state_ = std::move(s);
  }
  const OptimizerState& state() const { return state_; }

  /// Throws NumericError naming the parameter if any gradient or updated
  /// weight is non-finite; nothing is updated in that case.
  void step(double lr) {
    for (const auto* p : params_)
      for (float g : p->grad())
        if (!std::isfinite(g)) {
          throw NumericError("adam: non-finite gradient in parameter '" +
                             p->name() + "'");
        }
    const double t = double(state_.step + 1);
    const double c1 = 1.0 - std::pow(opt_.beta1, t);
    const double c2 = 1.0 - std::pow(opt_.beta2, t);
    OptimizerState next = state_;
    next.step = state_.step + 1;
    std::vector<std::vector<float>> values(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
      const auto w = params_[i]->value();
      const auto g = params_[i]->grad();
      auto& m = next.m[i];
      auto& v = next.v[i];
      auto& out = values[i];
      out.resize(w.size());
      for (std::size_t j = 0; j < w.size(); ++j) {
        const double gj = g[j];
        const double mj = opt_.beta1 * m[j] + (1.0 - opt_.beta1) * gj;
        const double vj = opt_.beta2 * v[j] + (1.0 - opt_.beta2) * gj * gj;
        m[j] = static_cast<float>(mj);
        v[j] = static_cast<float>(vj);
        out[j] = static_cast<float>(
            w[j] - lr * (mj / c1) / (std::sqrt(vj / c2) + opt_.eps));
        if (!std::isfinite(out[j])) {
          throw NumericError("adam: update makes parameter '" +
                             params_[i]->name() + "' non-finite");
        }
      }
    }
    for (std::size_t i = 0; i < params_.size(); ++i)
      std::copy(values[i].begin(), values[i].end(),
                params_[i]->value().begin());
    state_ = std::move(next);
  }

  void zero_grad() { zero_grads(params_); }

 private:
  ParameterList<float> params_;
  AdamOptions opt_;
  OptimizerState state_;
};

inline double step_decay_lr(double lr0, double factor, std::size_t period,
                            std::size_t epoch) {
  return lr0 * std::pow(factor, double(epoch / period));
}

struct TrainConfig {
  int stage = 1;
  std::size_t epochs = 180;
  std::size_t steps_per_epoch = 100;
  double lr = 2e-4;
  double decay = 0.5;
  std::size_t decay_period = 30;  // epochs
  std::size_t batch = 4;
  std::size_t patch = 16;  // LR patch side
  bool augment = true;
  std::uint64_t seed = 1;
  std::size_t validate_every = 1;    // epochs; 0 = only at the end
  std::size_t checkpoint_every = 0;  // epochs; 0 = never
  std::string checkpoint_dir;        // also receives last-good on divergence

  std::size_t total_steps() const { return epochs * steps_per_epoch; }

  void validate() const {
    if (stage != 1 && stage != 2) throw ConfigError("train: stage must be 1 or 2");
    if (epochs == 0 || steps_per_epoch == 0 || batch == 0 || patch == 0 ||
        decay_period == 0) {
      throw ConfigError(
          "train: epochs, steps_per_epoch, batch, patch and decay_period must "
          "be >= 1");
    }
    if (!(lr > 0.0) || !(decay > 0.0)) {
      throw ConfigError("train: lr and decay must be positive");
    }
  }

  KeyValues to_kv() const {
    KeyValues kv;
    kv.set("stage", stage);
    kv.set("epochs", epochs);
    kv.set("steps_per_epoch", steps_per_epoch);
    kv.set("lr", lr);
    kv.set("decay", decay);
    kv.set("decay_period", decay_period);
    kv.set("batch", batch);
    kv.set("patch", patch);
    kv.set("augment", augment);
    kv.set("seed", seed);
    kv.set("validate_every", validate_every);
    kv.set("checkpoint_every", checkpoint_every);
    kv.set("checkpoint_dir", checkpoint_dir);
    return kv;
  }

  static TrainConfig from_kv(const KeyValues& kv, TrainConfig c) {
    c.stage = kv.get_as<int>("stage", c.stage);
    c.epochs = kv.get_as<std::size_t>("epochs", c.epochs);
    c.steps_per_epoch = kv.get_as<std::size_t>("steps_per_epoch", c.steps_per_epoch);
    c.lr = kv.get_as<double>("lr", c.lr);
    c.decay = kv.get_as<double>("decay", c.decay);
    c.decay_period = kv.get_as<std::size_t>("decay_period", c.decay_period);
    c.batch = kv.get_as<std::size_t>("batch", c.batch);
    c.patch = kv.get_as<std::size_t>("patch", c.patch);
    c.augment = kv.get_as<bool>("augment", c.augment);
    c.seed = kv.get_as<std::uint64_t>("seed", c.seed);
    c.validate_every = kv.get_as<std::size_t>("validate_every", c.validate_every);
    c.checkpoint_every =
        kv.get_as<std::size_t>("checkpoint_every", c.checkpoint_every);
    c.checkpoint_dir = kv.get("checkpoint_dir", c.checkpoint_dir);
    c.validate();
    return c;
  }

  double lr_at(std::size_t epoch) const {
    return step_decay_lr(lr, decay, decay_period, epoch);
  }
};

/// Full schedules: 180 epochs at 2e-4 halved every 30, then 30 epochs at
/// 5e-5 halved every 15.
inline TrainConfig stage1_schedule() { return {}; }
inline TrainConfig stage2_schedule() {
  TrainConfig c;
  c.stage = 2;
  c.epochs = 30;
  c.lr = 5e-5;
  c.decay_period = 15;
  return c;
}

/// Desk-scale schedules for the tiny model.
/// Desk schedule for the tiny preset: 2000 single-patch steps, about 7 min on
/// one core.
inline TrainConfig tiny_stage1_schedule() {
  TrainConfig c;
  c.epochs = 20;
  c.steps_per_epoch = 100;
  c.batch = 1;
  c.lr = 2e-3;
  c.decay_period = 8;
  c.validate_every = 5;
  return c;
}
inline TrainConfig tiny_stage2_schedule() {
  TrainConfig c = tiny_stage1_schedule();
  c.stage = 2;
  c.epochs = 5;
  c.lr = 5e-4;
  c.decay_period = 3;
  c.validate_every = 5;
  return c;
}

inline TrainConfig schedule_preset(const std::string& name) {
  if (name == "stage1") return stage1_schedule();
  if (name == "stage2") return stage2_schedule();
  if (name == "tiny-stage1") return tiny_stage1_schedule();
  if (name == "tiny-stage2") return tiny_stage2_schedule();
  throw ConfigError("unknown schedule preset '" + name + "'");
}

// ---------------------------------------------------------------- data

/// HR light fields; LR inputs are derived by bicubic downsampling.
struct LfDataset {
  std::vector<std::string> ids;
  std::vector<LightField4D> hr;
};

struct SyntheticDatasetSpec {
  std::size_t scenes = 32;
  std::size_t U = 3, V = 3, H = 64, W = 64;
  double max_disparity = 2.0;
  std::uint64_t seed = 1;
};

inline LfDataset make_synthetic_dataset(const SyntheticDatasetSpec& spec,
                                        const std::string& prefix = "scene") {
  Rng rng(spec.seed);
  LfDataset ds;
  for (std::size_t i = 0; i < spec.scenes; ++i) {
    const auto s = random_scene_spec(rng, spec.U, spec.V, spec.H, spec.W,
                                     spec.max_disparity);
    ds.ids.push_back(prefix + "_" + std::to_string(i));
    ds.hr.push_back(synth_generate(s).lf);
  }
  return ds;
}

struct TrainingSample {
  LightField4D lr, hr;
};

/// Random HR crop of (patch * scale)^2, optional joint augmentation, then
/// bicubic degradation.
inline TrainingSample sample_patch(const LfDataset& ds, std::size_t scale,
                                   std::size_t patch, bool augment_on,
                                   Rng& rng) {
  const LightField4D& hr = ds.hr[rng.below(ds.hr.size())];
  const std::size_t hp = patch * scale;
  if (hr.ext.H < hp || hr.ext.W < hp) {
    throw DataError("training scene " + to_string(hr.ext) +
                    " is smaller than the " + std::to_string(hp) +
                    "x" + std::to_string(hp) + " HR patch");
  }
  const std::size_t y = rng.below(hr.ext.H - hp + 1);
  const std::size_t x = rng.below(hr.ext.W - hp + 1);
  LightField4D p = crop(hr, y, x, hp, hp);
  if (augment_on) {
    for (AugmentOp op : {AugmentOp::hflip, AugmentOp::vflip, AugmentOp::rot90})
      if (rng.below(2) == 1 && (op != AugmentOp::rot90 || p.ext.U == p.ext.V))
        p = augment(p, op);
  }
  return {bicubic_downsample(p, scale), std::move(p)};
}

struct ValidationScore {
  double model_psnr = 0.0;
  double bicubic_psnr = 0.0;
};

/// Mean over scenes of the pooled PSNR.
inline ValidationScore validate_model(const RaslfModel<float>& model,
                                      const LfDataset& val) {
  if (val.hr.empty()) throw DataError("validation set is empty");
  const std::size_t a = model.config().scale;
  ValidationScore s;
  for (const auto& hr : val.hr) {
    const LightField4D lr = bicubic_downsample(hr, a);
    s.model_psnr += psnr(model.infer(lr), hr).db;
    s.bicubic_psnr += psnr(bicubic_upsample(lr, a), hr).db;
  }
  s.model_psnr /= double(val.hr.size());
  s.bicubic_psnr /= double(val.hr.size());
  return s;
}

// ---------------------------------------------------------------- loop

struct LogRecord {
  std::size_t step = 0, epoch = 0;
  double lr = 0.0, loss = 0.0;
  std::optional<double> val_psnr;

  std::string to_string() const {
    std::ostringstream os;
    os.precision(9);
    os << "step=" << step << " epoch=" << epoch << " lr=" << lr
       << " loss=" << loss;
    if (val_psnr) os << " val_psnr=" << *val_psnr;
    return os.str();
  }
};

using LogSink = std::function<void(const LogRecord&)>;

struct TrainResult {
  std::vector<LogRecord> log;
  double initial_val_psnr = 0.0;
  double final_val_psnr = 0.0;
  double bicubic_val_psnr = 0.0;
  OptimizerState optimizer;
};

namespace detail {

inline TrainResult run_training(RaslfModel<float>& model,
                                const LfDataset& train, const LfDataset& val,
                                const TrainConfig& cfg, const LogSink& sink) {
  cfg.validate();
  if (train.hr.empty()) throw DataError("training set is empty");
  Rng rng(cfg.seed);
  auto params = model.parameters();
  Adam adam(params);
  TrainResult result;
  const ValidationScore v0 = validate_model(model, val);
  result.initial_val_psnr = v0.model_psnr;
  result.bicubic_val_psnr = v0.bicubic_psnr;
  result.final_val_psnr = v0.model_psnr;
  const std::size_t a = model.config().scale;
  const float inv_batch = 1.0f / float(cfg.batch);

  auto save_last_good = [&](const std::string& file) {
    if (cfg.checkpoint_dir.empty()) return;
    std::filesystem::create_directories(cfg.checkpoint_dir);
    save_checkpoint(cfg.checkpoint_dir + "/" + file, model, &adam.state());
  };

  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cfg.lr_at(epoch);
    for (std::size_t s = 0; s < cfg.steps_per_epoch; ++s) {
      adam.zero_grad();
      double loss_sum = 0;
      for (std::size_t b = 0; b < cfg.batch; ++b) {
        const TrainingSample sample =
            sample_patch(train, a, cfg.patch, cfg.augment, rng);
        Tape<float> tape;
        TapeScope<float> scope(tape);
        const Tensor<float> pred = model.forward(lf_to_tensor<float>(sample.lr));
        const Tensor<float> loss =
            ops::mul(l1_loss(pred, lf_to_tensor<float>(sample.hr)),
                     Tensor<float>::scalar(inv_batch));
        if (!std::isfinite(loss.item())) {
          save_last_good("last-good.ckpt");
          throw NumericError("training diverged: loss is " +
                             std::to_string(loss.item()) + " at step " +
                             std::to_string(step));
        }
        loss_sum += double(loss.item());
        tape.backward(loss);
      }
      try {
        adam.step(lr);
      } catch (const NumericError&) {
        save_last_good("last-good.ckpt");
        throw;
      }
      ++step;
      LogRecord rec{step, epoch, lr, loss_sum, std::nullopt};
      const bool epoch_end = s + 1 == cfg.steps_per_epoch;
      const bool last = epoch_end && epoch + 1 == cfg.epochs;
      if (epoch_end && (last || (cfg.validate_every &&
                                 (epoch + 1) % cfg.validate_every == 0))) {
        rec.val_psnr = validate_model(model, val).model_psnr;
        result.final_val_psnr = *rec.val_psnr;
      }
      result.log.push_back(rec);
      if (sink) sink(rec);
    }
    if (cfg.checkpoint_every && (epoch + 1) % cfg.checkpoint_every == 0 &&
        !cfg.checkpoint_dir.empty()) {
      save_last_good("epoch-" + std::to_string(epoch + 1) + ".ckpt");
    }
  }
  result.optimizer = adam.state();
  return result;
}

}  // namespace detail

/// Pre-trains a full-path model. The model is updated in place.
inline TrainResult train_stage1(RaslfModel<float>& model,
                                const LfDataset& train, const LfDataset& val,
                                const TrainConfig& cfg,
                                const LogSink& sink = {}) {
  if (model.stage() != StageTag::stage1_full) {
    throw ConfigError("train_stage1: model is not a stage1-full model");
  }
  for (const auto& b : model.blocks()) {
    if (!(b.paths() == BlockPaths::full())) {
      throw ConfigError(
          "train_stage1: every stage must scan all four paths");
    }
  }
  return detail::run_training(model, train, val, cfg, sink);
}

struct Stage2Result {
  RaslfModel<float> model;
  TrainResult training;
  double full_val_psnr = 0.0;    // stage-1 model before pruning
  double pruned_val_psnr = 0.0;  // right after pruning
};

/// Prunes to `keep` and fine-tunes.
inline Stage2Result train_stage2(const RaslfModel<float>& stage1,
                                 const LfDataset& train, const LfDataset& val,
                                 const TrainConfig& cfg,
                                 const BlockPaths& keep = BlockPaths::raas(),
                                 const LogSink& sink = {}) {
  if (stage1.stage() != StageTag::stage1_full) {
    throw ConfigError("train_stage2: checkpoint is already pruned");
  }
  Stage2Result r{prune_model(stage1, keep), {}, 0.0, 0.0};
  r.full_val_psnr = validate_model(stage1, val).model_psnr;
  r.training = detail::run_training(r.model, train, val, cfg, sink);
  r.pruned_val_psnr = r.training.initial_val_psnr;
  return r;
}

}  // namespace raslf

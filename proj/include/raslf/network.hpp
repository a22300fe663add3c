#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "raslf/blocks.hpp"
#include "raslf/config_kv.hpp"
#include "raslf/data_io.hpp"
#include "raslf/resample.hpp"

namespace raslf {

struct ModelConfig {
  std::size_t blocks = 4;    // M
  std::size_t channels = 64;  // C
  std::size_t scale = 4;     // alpha
  std::size_t U = 5, V = 5;
  std::size_t state = 16;    // N
  std::size_t inner = 0;     // C_inner, 0 = C
  std::size_t dt_rank = 0;   // 0 = max(1, C_inner / 16)
  BlockPaths paths = BlockPaths::raas();
  bool use_daa = true;
  bool use_epi = true;
  bool epi_parallel = false;
  EpiLayout epi_layout = EpiLayout::panoramic;
  std::uint64_t seed = 1;

  std::size_t inner_channels() const { return inner ? inner : channels; }
  std::size_t rank() const {
    return dt_rank ? dt_rank : std::max<std::size_t>(1, inner_channels() / 16);
  }
  StageDims stage_dims() const {
    return {channels, inner_channels(), state, rank()};
  }
  BlockOptions block_options() const {
    return {use_epi, epi_parallel, epi_layout};
  }

  void validate() const {
    if (blocks == 0 || channels == 0 || U == 0 || V == 0 || state == 0) {
      throw ConfigError("model config: M, C, U, V and N must be >= 1");
    }
    if (scale != 2 && scale != 4) {
      throw ConfigError("model config: scale must be 2 or 4, got " +
                        std::to_string(scale));
    }
  }

  KeyValues to_kv() const {
    KeyValues kv;
    kv.set("blocks", blocks);
    kv.set("channels", channels);
    kv.set("scale", scale);
    kv.set("U", U);
    kv.set("V", V);
    kv.set("state", state);
    kv.set("inner", inner_channels());
    kv.set("dt_rank", rank());
    kv.set("paths.sai", paths.sai.to_string());
    kv.set("paths.mac", paths.mac.to_string());
    kv.set("paths.hepi", paths.hepi.to_string());
    kv.set("paths.vepi", paths.vepi.to_string());
    kv.set("use_daa", use_daa);
    kv.set("use_epi", use_epi);
    kv.set("epi_parallel", epi_parallel);
    kv.set("epi_layout", std::string(to_string(epi_layout)));
    kv.set("seed", seed);
    return kv;
  }

  /// Keys absent from `kv` keep the values of `base`.
  static ModelConfig from_kv(const KeyValues& kv) {
    return from_kv(kv, ModelConfig());
  }
  static ModelConfig from_kv(const KeyValues& kv, const ModelConfig& base) {
    ModelConfig c = base;
    c.blocks = kv.get_as<std::size_t>("blocks", c.blocks);
    c.channels = kv.get_as<std::size_t>("channels", c.channels);
    c.scale = kv.get_as<std::size_t>("scale", c.scale);
    c.U = kv.get_as<std::size_t>("U", c.U);
    c.V = kv.get_as<std::size_t>("V", c.V);
    c.state = kv.get_as<std::size_t>("state", c.state);
    c.inner = kv.get_as<std::size_t>("inner", c.inner);
    c.dt_rank = kv.get_as<std::size_t>("dt_rank", c.dt_rank);
    auto paths = [&](const char* key, ScanPathSet& out) {
      if (kv.has(key)) out = ScanPathSet::parse(kv.get(key));
    };
    paths("paths.sai", c.paths.sai);
    paths("paths.mac", c.paths.mac);
    paths("paths.hepi", c.paths.hepi);
    paths("paths.vepi", c.paths.vepi);
    c.use_daa = kv.get_as<bool>("use_daa", c.use_daa);
    c.use_epi = kv.get_as<bool>("use_epi", c.use_epi);
    c.epi_parallel = kv.get_as<bool>("epi_parallel", c.epi_parallel);
    if (kv.has("epi_layout")) {
      c.epi_layout = epi_layout_from_string(kv.get("epi_layout"));
    }
    c.seed = kv.get_as<std::uint64_t>("seed", c.seed);
    c.validate();
    return c;
  }
};

// ---------------------------------------------------------------- presets

inline ModelConfig scaled_config(std::size_t m, std::size_t c) {
  ModelConfig cfg;
  cfg.blocks = m;
  cfg.channels = c;
  return cfg;
}

/// Scan-path ablation rows (a) to (d); defaults to M = 4, C = 64, alpha = 4.
inline ModelConfig raas_row_config(char row,
                                   ModelConfig cfg = scaled_config(4, 64)) {
  using P = ScanPath;
  const ScanPathSet four = ScanPathSet::four_path();
  switch (row) {
    case 'a':
      cfg.paths = {four, four, {P::row_fwd, P::row_bwd}, {P::col_fwd, P::col_bwd}};
      break;
    case 'b':
      cfg.paths = {ScanPathSet::sai(), four, {P::row_fwd, P::row_bwd},
                   {P::col_fwd, P::col_bwd}};
      break;
    case 'c': cfg.paths = BlockPaths::raas(); break;
    case 'd':
      cfg.paths = {ScanPathSet::sai(), ScanPathSet::sai(), ScanPathSet::hepi(),
                   ScanPathSet::vepi()};
      break;
    default:
      throw ConfigError(std::string("unknown scan-path ablation row '") + row +
                        "'");
  }
  return cfg;
}

inline const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names = {
      "tiny",         "m4c64",       "m8c64",       "m12c64",
      "m16c64",       "m4c128",      "m4c256",      "raas-a",
      "raas-b",       "raas-c",      "raas-d",      "no-daa",
      "epi-isolated", "epi-stacked", "epi-parallel", "no-epi",
      "raas-x2",      "raas-x4"};
  return names;
}

inline ModelConfig preset_config(const std::string& name) {
  if (name == "tiny") {
    ModelConfig c;
    c.blocks = 2;
    c.channels = 16;
    c.state = 4;
    c.U = c.V = 3;
    c.scale = 2;
    return c;
  }
  static const std::map<std::string, std::pair<std::size_t, std::size_t>>
      scaling = {{"m4c64", {4, 64}},   {"m8c64", {8, 64}},
                 {"m12c64", {12, 64}}, {"m16c64", {16, 64}},
                 {"m4c128", {4, 128}}, {"m4c256", {4, 256}}};
  if (const auto it = scaling.find(name); it != scaling.end()) {
    return scaled_config(it->second.first, it->second.second);
  }
  if (name == "raas-x4" || name == "raas-x2") {
    ModelConfig c = scaled_config(4, 64);
    c.scale = name == "raas-x4" ? 4 : 2;
    return c;
  }
  if (name.size() == 6 && name.rfind("raas-", 0) == 0) {
    return raas_row_config(name[5]);
  }
  ModelConfig c = scaled_config(4, 64);
  if (name == "no-daa") {
    c.use_daa = false;
  } else if (name == "epi-isolated") {
    c.epi_layout = EpiLayout::isolated;
  } else if (name == "epi-stacked") {
    c.epi_layout = EpiLayout::stacked;
  } else if (name == "epi-parallel") {
    c.epi_parallel = true;
  } else if (name == "no-epi") {
    c.use_epi = false;
  } else {
    throw ConfigError("unknown model preset '" + name + "'");
  }
  return c;
}

// ---------------------------------------------------------------- model

enum class StageTag { stage1_full, stage2_pruned };

inline std::string_view to_string(StageTag t) {
  return t == StageTag::stage1_full ? "stage1-full" : "stage2-pruned";
}

inline StageTag stage_tag_from_string(std::string_view s) {
  if (s == "stage1-full") return StageTag::stage1_full;
  if (s == "stage2-pruned") return StageTag::stage2_pruned;
  throw DataError("unknown stage tag '" + std::string(s) + "'");
}

template <class T>
Tensor<T> lf_to_tensor(const LightField4D& lf) {
  return Tensor<T>::from_data(lf.ext.shape(),
                              std::vector<T>(lf.data.begin(), lf.data.end()));
}

template <class T>
LightField4D tensor_to_lf(const Tensor<T>& t) {
  LightField4D lf(extents_of(t.shape()));
  for (std::size_t i = 0; i < lf.data.size(); ++i)
    lf.data[i] = static_cast<float>(t[i]);
  return lf;
}

/// Embedding conv + angular embedding, M PGR blocks, dual-anchor
/// aggregation, pixel-shuffle upsampler; output = bicubic(LR) + residual.
template <class T>
class RaslfModel {
 public:
  explicit RaslfModel(ModelConfig config,
                      StageTag tag = StageTag::stage1_full)
      : config_(std::move(config)), tag_(tag) {
    config_.validate();
    const std::size_t C = config_.channels;
    embed_ = Conv3x3<T>("embed.conv", 1, C);
    angular_ = AngularEmbedding<T>(config_.U, config_.V, C);
    for (std::size_t k = 0; k < config_.blocks; ++k) {
      blocks_.emplace_back("pgr." + std::to_string(k), config_.paths,
                           config_.stage_dims(), config_.block_options());
    }
    if (config_.use_daa) {
      if (config_.blocks >= 2) daa_.emplace(config_.blocks, C);
    } else {
      concat_.emplace(config_.blocks, C);
    }
    upsampler_ = Upsampler<T>(C, config_.scale);
    Rng rng(config_.seed);
    embed_.initialize(rng);
    angular_.initialize(rng);
    for (auto& b : blocks_) b.initialize(rng);
    if (daa_) daa_->initialize(rng);
    if (concat_) concat_->initialize(rng);
    upsampler_.initialize(rng);
  }

  const ModelConfig& config() const { return config_; }
  StageTag stage() const { return tag_; }
  void set_stage(StageTag t) { tag_ = t; }
  // Only for callers that rebuilt the blocks to match `paths`.
  void set_paths(const BlockPaths& paths) { config_.paths = paths; }

  std::vector<PgrBlock<T>>& blocks() { return blocks_; }
  const std::vector<PgrBlock<T>>& blocks() const { return blocks_; }
  AngularEmbedding<T>& angular() { return angular_; }
  std::optional<DualAnchorAggregation<T>>& daa() { return daa_; }
  Upsampler<T>& upsampler() { return upsampler_; }

  /// Pointers are invalidated when the model is moved.
  ParameterList<T> parameters() {
    ParameterList<T> ps;
    embed_.collect(ps);
    angular_.collect(ps);
    for (auto& b : blocks_) b.collect(ps);
    if (daa_) daa_->collect(ps);
    if (concat_) concat_->collect(ps);
    upsampler_.collect(ps);
    return ps;
  }

  std::vector<const Parameter<T>*> parameters() const {
    const auto ps = const_cast<RaslfModel*>(this)->parameters();
    return {ps.begin(), ps.end()};
  }

  std::size_t parameter_count() { return count_scalars(parameters()); }

  /// F^0 = conv(I_LR) + P_ang on a (U, V, H, W, 1) input.
  Tensor<T> embed(const Tensor<T>& lr) const {
    const LfExtents e = check_input(lr);
    Tensor<T> x = ops::reshape(lr, {e.U * e.V, 1, e.H, e.W});
    x = ops::permute(embed_(x), {0, 2, 3, 1});
    x = ops::reshape(x, {e.U, e.V, e.H, e.W, config_.channels});
    return angular_(x);
  }

  /// Aggregated cascade feature F^agg from F^0.
  Tensor<T> aggregate(const Tensor<T>& f0) const {
    std::vector<Tensor<T>> feats;
    Tensor<T> f = f0;
    for (const auto& b : blocks_) {
      f = b(f);
      feats.push_back(f);
    }
    if (daa_) return (*daa_)(feats);
    if (concat_) return (*concat_)(feats);
    return feats.front();  // single block: both anchors are F^1
  }

  Tensor<T> residual(const Tensor<T>& lr) const {
    const Tensor<T> f0 = embed(lr);
    return upsampler_(ops::add(aggregate(f0), f0));
  }

  Tensor<T> forward(const Tensor<T>& lr) const {
    const Tensor<T> r = residual(lr);
    const LightField4D up = bicubic_upsample(tensor_to_lf(lr), config_.scale);
    return ops::add(lf_to_tensor<T>(up), r);
  }

  /// Inference on a single-channel light field without recording.
  LightField4D infer(const LightField4D& lr) const {
    NoTapeScope<T> no_tape;
    return tensor_to_lf(forward(lf_to_tensor<T>(lr)));
  }

 private:
  LfExtents check_input(const Tensor<T>& lr) const {
    const LfExtents e = extents_of(lr.shape());
    if (e.C != 1) {
      throw ShapeError("model input must be single-channel (Y), got " +
                       std::to_string(e.C) + " channels");
    }
    if (e.U != config_.U || e.V != config_.V) {
      throw ShapeError("model expects " + std::to_string(config_.U) + "x" +
                       std::to_string(config_.V) + " views, input has " +
                       std::to_string(e.U) + "x" + std::to_string(e.V));
    }
    return e;
  }

  ModelConfig config_;
  StageTag tag_;
  Conv3x3<T> embed_;
  AngularEmbedding<T> angular_;
  std::vector<PgrBlock<T>> blocks_;
  std::optional<DualAnchorAggregation<T>> daa_;
  std::optional<ConcatAggregation<T>> concat_;
  Upsampler<T> upsampler_;
};

template <class T>
std::size_t count_params(RaslfModel<T>& model) {
  return model.parameter_count();
}

/// Parameter count from the configuration alone.
inline std::size_t analytic_param_count(const ModelConfig& cfg) {
  const StageDims d = cfg.stage_dims();
  const std::size_t C = cfg.channels;
  std::size_t n = Conv3x3<float>::parameter_count(1, C, 1) + cfg.U * cfg.V * C;
  std::size_t per_block = VssmStage<float>::parameter_count(d, cfg.paths.sai.size()) +
                          VssmStage<float>::parameter_count(d, cfg.paths.mac.size());
  if (cfg.use_epi) {
    per_block += VssmStage<float>::parameter_count(d, cfg.paths.hepi.size()) +
                 VssmStage<float>::parameter_count(d, cfg.paths.vepi.size());
  }
  n += cfg.blocks * per_block;
  if (cfg.use_daa) {
    if (cfg.blocks >= 2) {
      n += DualAnchorAggregation<float>::parameter_count(cfg.blocks, C);
    }
  } else {
    n += ConcatAggregation<float>::parameter_count(cfg.blocks, C);
  }
  return n + Upsampler<float>::parameter_count(C, cfg.scale);
}

/// Forward FLOPs (multiply-accumulate = 2) on a U x V x H x W input,
/// excluding the fixed bicubic term. Mirrors the per-primitive costs.
inline std::uint64_t count_flops(const ModelConfig& cfg, std::size_t H,
                                 std::size_t W) {
  using u64 = std::uint64_t;
  const StageDims d = cfg.stage_dims();
  const u64 views = cfg.U * cfg.V;
  const u64 tokens = views * H * W;
  const u64 C = cfg.channels, Ci = d.inner, N = d.state, R = d.rank;
  const u64 a2 = cfg.scale * cfg.scale;
  u64 f = 0;
  f += 2 * tokens * C * 9 + tokens * C;  // embedding conv + bias
  f += tokens * C;                       // angular embedding
  auto stage = [&](std::size_t paths) {
    u64 s = 8 * tokens * C;                  // layer norm
    s += 2 * tokens * C * 2 * Ci;            // in_proj
    s += 2 * tokens * Ci * 9 + tokens * Ci;  // depthwise conv + bias
    s += 4 * tokens * Ci;                    // SiLU
    const u64 per_path = 2 * tokens * Ci * (R + 2 * N) + 2 * tokens * R * Ci +
                         tokens * Ci * (8 * N + 6);
    s += paths * per_path + (paths - 1) * tokens * Ci;  // scans + path sum
    s += 4 * tokens * Ci + tokens * Ci;     // SiLU gate, multiply
    s += 2 * tokens * Ci * C + tokens * C;  // out_proj, residual
    return s;
  };
  u64 block = stage(cfg.paths.sai.size()) + stage(cfg.paths.mac.size());
  if (cfg.use_epi) {
    block += stage(cfg.paths.hepi.size()) + stage(cfg.paths.vepi.size());
    if (cfg.epi_parallel) block += 2 * tokens * C;
  }
  f += cfg.blocks * block;
  const u64 M = cfg.blocks;
  auto mlp = [&](u64 in) {
    return 2 * tokens * in * C + tokens * C + 4 * tokens * C +
           2 * tokens * C * C + tokens * C;
  };
  if (cfg.use_daa) {
    if (M >= 2) f += (2 * (M - 1) + 2 * (M - 2)) * tokens * C + mlp(2 * C);
  } else {
    f += mlp(M * C);
  }
  f += tokens * C;  // F^agg + F^0
  f += 2 * views * (C * a2) * H * W * C * 9 + views * C * a2 * H * W;
  f += 2 * views * a2 * H * W * C * 9 + views * a2 * H * W;
  f += views * a2 * H * W;  // bicubic + residual
  return f;
}


/// Drops every scan path not in `keep`; the result is tagged stage2-pruned.
template <class T>
RaslfModel<T> prune_model(const RaslfModel<T>& model,
                          const BlockPaths& keep = BlockPaths::raas()) {
  if (model.stage() == StageTag::stage2_pruned) {
    throw ConfigError("prune_model: model is already pruned");
  }
  RaslfModel<T> out = model;
  for (auto& b : out.blocks()) {
    b.sai.ss = prune_paths(b.sai.ss, keep.sai);
    b.mac.ss = prune_paths(b.mac.ss, keep.mac);
    b.hepi.ss = prune_paths(b.hepi.ss, keep.hepi);
    b.vepi.ss = prune_paths(b.vepi.ss, keep.vepi);
  }
  out.set_paths(keep);
  out.set_stage(StageTag::stage2_pruned);
  return out;
}

/// Keeps every parameter but multiplies the outputs of paths outside `keep`
/// by zero. Must agree with prune_model.
template <class T>
RaslfModel<T> zero_substituted(const RaslfModel<T>& model,
                               const BlockPaths& keep = BlockPaths::raas()) {
  RaslfModel<T> out = model;
  auto mark = [](Ss2d<T>& ss, const ScanPathSet& k) {
    ss.zeroed.clear();
    for (const auto& b : ss.branches)
      if (!k.contains(b.path)) ss.zeroed.push_back(b.path);
  };
  for (auto& b : out.blocks()) {
    mark(b.sai.ss, keep.sai);
    mark(b.mac.ss, keep.mac);
    mark(b.hepi.ss, keep.hepi);
    mark(b.vepi.ss, keep.vepi);
  }
  return out;
}

/// Copies parameter values into a model of another scalar type.
template <class U, class T>
RaslfModel<U> promote(const RaslfModel<T>& model) {
  RaslfModel<U> out(model.config(), model.stage());
  RaslfModel<T> src = model;
  auto from = src.parameters();
  auto to = out.parameters();
  if (from.size() != to.size()) {
    throw ConfigError("promote: parameter lists differ in length");
  }
  for (std::size_t i = 0; i < from.size(); ++i) {
    auto s = from[i]->value();
    auto d = to[i]->value();
    for (std::size_t j = 0; j < s.size(); ++j) d[j] = static_cast<U>(s[j]);
  }
  return out;
}

// ---------------------------------------------------------------- checkpoint

/// Adam moments, one vector per parameter in parameters() order.
struct OptimizerState {
  std::uint64_t step = 0;
  std::vector<std::vector<float>> m, v;
};

inline constexpr const char* kCheckpointMagic = "RASLF-CHECKPOINT 1";

/// Text header (magic, stage, config, tensor count, optimizer flag, "end"),
/// then per tensor: u32 name length, name, u32 rank, u32 dims, float32 LE
/// values. Optimizer state follows as u32 step (lo, hi) and m, v blocks.
template <class T>
void save_checkpoint(const std::string& path, const RaslfModel<T>& model,
                     const OptimizerState* opt = nullptr) {
  auto ps = model.parameters();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  KeyValues header = model.config().to_kv();
  header.set("stage", std::string(to_string(model.stage())));
  header.set("tensors", ps.size());
  header.set("optimizer", opt != nullptr);
  out << kCheckpointMagic << "\n" << header.to_string() << "end\n";
  std::vector<float> buf;
  for (const auto* p : ps) {
    detail::put_u32(out, static_cast<std::uint32_t>(p->name().size()));
    out.write(p->name().data(), static_cast<std::streamsize>(p->name().size()));
    detail::put_u32(out, static_cast<std::uint32_t>(p->shape().size()));
    for (std::size_t d : p->shape()) detail::put_u32(out, std::uint32_t(d));
    buf.assign(p->value().begin(), p->value().end());
    detail::write_f32_block(out, buf.data(), buf.size());
  }
  if (opt) {
    if (opt->m.size() != ps.size() || opt->v.size() != ps.size()) {
      throw ConfigError("save_checkpoint: optimizer state does not match the "
                        "parameter list");
    }
    detail::put_u32(out, std::uint32_t(opt->step & 0xffffffffu));
    detail::put_u32(out, std::uint32_t(opt->step >> 32));
    for (std::size_t i = 0; i < ps.size(); ++i) {
      detail::write_f32_block(out, opt->m[i].data(), opt->m[i].size());
      detail::write_f32_block(out, opt->v[i].data(), opt->v[i].size());
    }
  }
  if (!out) throw DataError("write failed: " + path);
}

template <class T = float>
struct LoadedCheckpoint {
  RaslfModel<T> model;
  std::optional<OptimizerState> optimizer;
};

template <class T = float>
LoadedCheckpoint<T> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || line != kCheckpointMagic) {
    throw DataError(path + ": not a checkpoint");
  }
  std::string text;
  while (std::getline(in, line) && line != "end") text += line + "\n";
  if (line != "end") throw DataError(path + ": truncated header");
  const KeyValues header = KeyValues::parse(text, path);
  LoadedCheckpoint<T> ck{
      RaslfModel<T>(ModelConfig::from_kv(header),
                    stage_tag_from_string(header.get("stage"))),
      std::nullopt};
  auto ps = ck.model.parameters();
  const auto count = header.get_as<std::size_t>("tensors");
  if (count != ps.size()) {
    throw DataError(path + ": " + std::to_string(count) +
                    " tensors stored, model has " + std::to_string(ps.size()));
  }
  std::vector<float> buf;
  for (auto* p : ps) {
    std::string name(detail::get_u32(in, path), '\0');
    if (!in.read(name.data(), static_cast<std::streamsize>(name.size())) ||
        name != p->name()) {
      throw DataError(path + ": expected tensor '" + p->name() + "', found '" +
                      name + "'");
    }
    Shape shape(detail::get_u32(in, path));
    for (auto& d : shape) d = detail::get_u32(in, path);
    if (shape != p->shape()) {
      throw DataError(path + ": tensor '" + name + "' has shape " +
                      to_string(shape) + ", expected " + to_string(p->shape()));
    }
    buf.resize(p->numel());
    detail::read_f32_block(in, buf.data(), buf.size(), path);
    std::transform(buf.begin(), buf.end(), p->value().begin(),
                   [](float f) { return static_cast<T>(f); });
  }
  if (header.get_as<bool>("optimizer")) {
    OptimizerState opt;
    opt.step = detail::get_u32(in, path);
    opt.step |= std::uint64_t(detail::get_u32(in, path)) << 32;
    for (auto* p : ps) {
      opt.m.emplace_back(p->numel());
      opt.v.emplace_back(p->numel());
      detail::read_f32_block(in, opt.m.back().data(), p->numel(), path);
      detail::read_f32_block(in, opt.v.back().data(), p->numel(), path);
    }
    ck.optimizer = std::move(opt);
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw DataError(path + ": trailing bytes after checkpoint payload");
  }
  return ck;
}

}  // namespace raslf

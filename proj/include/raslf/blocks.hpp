#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "raslf/lf_repr.hpp"
#include "raslf/ops.hpp"
#include "raslf/random.hpp"
#include "raslf/selective_scan.hpp"

namespace raslf {

namespace detail {

template <class T>
void init_uniform(Parameter<T>& p, Rng& rng, std::size_t fan_in) {
  const double bound = 1.0 / std::sqrt(double(fan_in));
  for (T& w : p.value()) w = static_cast<T>(rng.uniform(-bound, bound));
}

template <class T>
void init_constant(Parameter<T>& p, T value) {
  std::fill(p.value().begin(), p.value().end(), value);
}

}  // namespace detail

/// Dense layer over the last extent; weight stored as (in, out).
template <class T>
struct Linear {
  std::size_t in = 0, out = 0;
  Parameter<T> weight;
  std::optional<Parameter<T>> bias;

  Linear() = default;
  Linear(const std::string& name, std::size_t in_, std::size_t out_,
         bool with_bias)
      : in(in_), out(out_), weight(name + ".weight", {in_, out_}) {
    if (with_bias) bias.emplace(name + ".bias", Shape{out_});
  }

  void initialize(Rng& rng, bool zero = false) {
    if (zero) {
      detail::init_constant(weight, T(0));
    } else {
      detail::init_uniform(weight, rng, in);
    }
    if (bias) detail::init_constant(*bias, T(0));
  }

  Tensor<T> operator()(const Tensor<T>& x) const {
    Tensor<T> y = ops::matmul(x, weight.tensor());
    return bias ? ops::add(y, bias->tensor()) : y;
  }

  void collect(ParameterList<T>& ps) {
    ps.push_back(&weight);
    if (bias) ps.push_back(&*bias);
  }

  static std::size_t parameter_count(std::size_t in, std::size_t out,
                                     bool with_bias) {
    return in * out + (with_bias ? out : 0);
  }
};

/// 3x3 convolution on (N, C, H, W) with bias.
template <class T>
struct Conv3x3 {
  std::size_t in = 0, out = 0, groups = 1;
  Parameter<T> weight;
  Parameter<T> bias;

  Conv3x3() = default;
  Conv3x3(const std::string& name, std::size_t in_, std::size_t out_,
          std::size_t groups_ = 1)
      : in(in_),
        out(out_),
        groups(groups_),
        weight(name + ".weight", {out_, in_ / groups_, 3, 3}),
        bias(name + ".bias", {out_}) {}

  void initialize(Rng& rng, bool zero = false) {
    if (zero) {
      detail::init_constant(weight, T(0));
    } else {
      detail::init_uniform(weight, rng, in / groups * 9);
    }
    detail::init_constant(bias, T(0));
  }

  Tensor<T> operator()(const Tensor<T>& x) const {
    return ops::conv2d(x, weight.tensor(), bias.tensor(), groups);
  }

  void collect(ParameterList<T>& ps) {
    ps.push_back(&weight);
    ps.push_back(&bias);
  }

  static std::size_t parameter_count(std::size_t in, std::size_t out,
                                     std::size_t groups) {
    return out * (in / groups) * 9 + out;
  }
};

struct StageDims {
  std::size_t channels = 0;  // C
  std::size_t inner = 0;     // C_inner
  std::size_t state = 0;     // N
  std::size_t rank = 0;      // delta projection rank
};

/// Processor operator: LN -> in_proj -> (x, z); x -> depthwise conv -> SiLU
/// -> SS2D; y * SiLU(z) -> out_proj; residual add, all in representation
/// space of `kind`.
template <class T>
struct VssmStage {
  RepKind kind = RepKind::sai;
  EpiLayout layout = EpiLayout::panoramic;
  StageDims dims;
  Parameter<T> ln_gamma, ln_beta;
  Linear<T> in_proj, out_proj;
  Conv3x3<T> dw_conv;
  Ss2d<T> ss;

  VssmStage() = default;
  VssmStage(const std::string& name, RepKind kind_, const ScanPathSet& paths,
            StageDims d, EpiLayout layout_ = EpiLayout::panoramic)
      : kind(kind_),
        layout(layout_),
        dims(d),
        ln_gamma(name + ".norm.weight", {d.channels}),
        ln_beta(name + ".norm.bias", {d.channels}),
        in_proj(name + ".in_proj", d.channels, 2 * d.inner, false),
        out_proj(name + ".out_proj", d.inner, d.channels, false),
        dw_conv(name + ".conv", d.inner, d.inner, d.inner),
        ss(name + ".ss2d", paths, d.inner, d.state, d.rank) {}

  void initialize(Rng& rng) {
    detail::init_constant(ln_gamma, T(1));
    detail::init_constant(ln_beta, T(0));
    in_proj.initialize(rng);
    dw_conv.initialize(rng);
    ss.initialize(rng);
    out_proj.initialize(rng, true);
  }

  Tensor<T> operator()(const Tensor<T>& feature) const {
    const LfExtents e = extents_of(feature.shape());
    if (e.C != dims.channels) {
      throw ShapeError("vssm stage: feature has " + std::to_string(e.C) +
                       " channels, stage expects " +
                       std::to_string(dims.channels));
    }
    const Tensor<T> grid = to_rep(feature, kind, layout);
    const std::size_t ci = dims.inner;
    Tensor<T> h = ops::layer_norm(grid, ln_gamma.tensor(), ln_beta.tensor());
    h = in_proj(h);
    Tensor<T> x = ops::slice(h, 3, 0, ci);
    Tensor<T> z = ops::slice(h, 3, ci, 2 * ci);
    x = ops::permute(dw_conv(ops::permute(x, {0, 3, 1, 2})), {0, 2, 3, 1});
    x = ops::silu(x);
    Tensor<T> y = ss2d(x, ss);
    y = out_proj(ops::mul(y, ops::silu(z)));
    return from_rep(ops::add(grid, y), kind, e, layout);
  }

  void collect(ParameterList<T>& ps) {
    ps.push_back(&ln_gamma);
    ps.push_back(&ln_beta);
    in_proj.collect(ps);
    dw_conv.collect(ps);
    ss.collect(ps);
    out_proj.collect(ps);
  }

  static std::size_t parameter_count(const StageDims& d, std::size_t paths) {
    return 2 * d.channels + Linear<T>::parameter_count(d.channels, 2 * d.inner, false) +
           Conv3x3<T>::parameter_count(d.inner, d.inner, d.inner) +
           paths * SsmDirectionParams<T>::parameter_count(d.inner, d.state, d.rank) +
           Linear<T>::parameter_count(d.inner, d.channels, false);
  }
};

struct BlockPaths {
  ScanPathSet sai = ScanPathSet::sai();
  ScanPathSet mac = ScanPathSet::macpi();
  ScanPathSet hepi = ScanPathSet::hepi();
  ScanPathSet vepi = ScanPathSet::vepi();

  static BlockPaths raas() { return {}; }
  static BlockPaths full() {
    const ScanPathSet f = ScanPathSet::four_path();
    return {f, f, f, f};
  }
  bool operator==(const BlockPaths&) const = default;
};

struct BlockOptions {
  bool use_epi = true;
  // EPI stages applied to the same input and summed instead of chained.
  bool epi_parallel = false;
  EpiLayout epi_layout = EpiLayout::panoramic;
};

/// Progressive geometric refinement: SAI -> MacPI -> H-EPI -> V-EPI.
template <class T>
struct PgrBlock {
  BlockOptions options;
  VssmStage<T> sai, mac, hepi, vepi;

  PgrBlock() = default;
  PgrBlock(const std::string& name, const BlockPaths& paths, StageDims d,
           BlockOptions opt = {})
      : options(opt),
        sai(name + ".sai", RepKind::sai, paths.sai, d),
        mac(name + ".mac", RepKind::macpi, paths.mac, d),
        hepi(name + ".hepi", RepKind::hpepi, paths.hepi, d, opt.epi_layout),
        vepi(name + ".vepi", RepKind::vpepi, paths.vepi, d, opt.epi_layout) {}

  void initialize(Rng& rng) {
    for (auto* s : stages()) s->initialize(rng);
  }

  Tensor<T> operator()(const Tensor<T>& feature) const {
    Tensor<T> f = mac(sai(feature));
    if (!options.use_epi) return f;
    if (options.epi_parallel) {
      // h(f) + v(f) - f keeps a single residual path.
      return ops::sub(ops::add(hepi(f), vepi(f)), f);
    }
    return vepi(hepi(f));
  }

  std::vector<VssmStage<T>*> stages() {
    std::vector<VssmStage<T>*> s{&sai, &mac};
    if (options.use_epi) {
      s.push_back(&hepi);
      s.push_back(&vepi);
    }
    return s;
  }

  void collect(ParameterList<T>& ps) {
    for (auto* s : stages()) s->collect(ps);
  }

  BlockPaths paths() const {
    return {sai.ss.path_set(), mac.ss.path_set(), hepi.ss.path_set(),
            vepi.ss.path_set()};
  }
};

/// Dual-anchor aggregation: F^S = w^S_1 F^1 + sum_{k=2}^{M-1} w^S_k F^k,
/// F^G = w^G_M F^M + sum_{k=2}^{M-1} w^G_k F^k, F^agg = MLP([F^S, F^G]).
template <class T>
struct DualAnchorAggregation {
  std::size_t blocks = 0, channels = 0;
  std::vector<Parameter<T>> w_s;  // layers 1..M-1
  std::vector<Parameter<T>> w_g;  // layers 2..M
  Linear<T> fc1, fc2;

  DualAnchorAggregation() = default;
  DualAnchorAggregation(std::size_t m, std::size_t c)
      : blocks(m),
        channels(c),
        fc1("daa.mlp.0", 2 * c, c, true),
        fc2("daa.mlp.2", c, c, true) {
    if (m < 2) throw ConfigError("dual-anchor aggregation needs M >= 2");
    for (std::size_t k = 1; k + 1 <= m; ++k)
      w_s.emplace_back("daa.w_s." + std::to_string(k), Shape{});
    for (std::size_t k = 2; k <= m; ++k)
      w_g.emplace_back("daa.w_g." + std::to_string(k), Shape{});
  }

  void initialize(Rng& rng) {
    for (std::size_t i = 0; i < w_s.size(); ++i)
      detail::init_constant(w_s[i], T(i == 0 ? 1 : 0));
    for (std::size_t i = 0; i < w_g.size(); ++i)
      detail::init_constant(w_g[i], T(i + 1 == w_g.size() ? 1 : 0));
    fc1.initialize(rng);
    fc2.initialize(rng);
  }

  // Weight of layer k (1-based) in each anchor.
  const Parameter<T>& spatial_weight(std::size_t k) const { return w_s.at(k - 1); }
  const Parameter<T>& geometric_weight(std::size_t k) const { return w_g.at(k - 2); }

  std::pair<Tensor<T>, Tensor<T>> anchors(
      const std::vector<Tensor<T>>& features) const {
    if (features.size() != blocks) {
      throw ConfigError("dual-anchor aggregation expects " +
                        std::to_string(blocks) + " features, got " +
                        std::to_string(features.size()));
    }
    const std::size_t m = blocks;
    Tensor<T> fs = ops::mul(features[0], spatial_weight(1).tensor());
    Tensor<T> fg = ops::mul(features[m - 1], geometric_weight(m).tensor());
    for (std::size_t k = 2; k + 1 <= m; ++k) {
      fs = ops::add(fs, ops::mul(features[k - 1], spatial_weight(k).tensor()));
      fg = ops::add(fg, ops::mul(features[k - 1], geometric_weight(k).tensor()));
    }
    return {fs, fg};
  }

  Tensor<T> operator()(const std::vector<Tensor<T>>& features) const {
    auto [fs, fg] = anchors(features);
    const std::size_t axis = fs.rank() - 1;
    return fc2(ops::silu(fc1(ops::concat<T>({fs, fg}, axis))));
  }

  void collect(ParameterList<T>& ps) {
    for (auto& p : w_s) ps.push_back(&p);
    for (auto& p : w_g) ps.push_back(&p);
    fc1.collect(ps);
    fc2.collect(ps);
  }

  static std::size_t parameter_count(std::size_t m, std::size_t c) {
    return 2 * (m - 1) + Linear<T>::parameter_count(2 * c, c, true) +
           Linear<T>::parameter_count(c, c, true);
  }
};

/// Ablation fusion without anchors: MLP over the concatenation of all M
/// cascade features.
template <class T>
struct ConcatAggregation {
  std::size_t blocks = 0, channels = 0;
  Linear<T> fc1, fc2;

  ConcatAggregation() = default;
  ConcatAggregation(std::size_t m, std::size_t c)
      : blocks(m),
        channels(c),
        fc1("fuse.mlp.0", m * c, c, true),
        fc2("fuse.mlp.2", c, c, true) {}

  void initialize(Rng& rng) {
    fc1.initialize(rng);
    fc2.initialize(rng);
  }

  Tensor<T> operator()(const std::vector<Tensor<T>>& features) const {
    if (features.size() != blocks) {
      throw ConfigError("concat aggregation expects " +
                        std::to_string(blocks) + " features");
    }
    const std::size_t axis = features[0].rank() - 1;
    return fc2(ops::silu(fc1(ops::concat(features, axis))));
  }

  void collect(ParameterList<T>& ps) {
    fc1.collect(ps);
    fc2.collect(ps);
  }

  static std::size_t parameter_count(std::size_t m, std::size_t c) {
    return Linear<T>::parameter_count(m * c, c, true) +
           Linear<T>::parameter_count(c, c, true);
  }
};

/// Learnable (U, V, C) offset shared by every spatial position of a view.
template <class T>
struct AngularEmbedding {
  Parameter<T> table;

  AngularEmbedding() = default;
  AngularEmbedding(std::size_t u, std::size_t v, std::size_t c)
      : table("embed.angular", {u, v, c}) {}

  void initialize(Rng&) { detail::init_constant(table, T(0)); }

  Tensor<T> operator()(const Tensor<T>& feature) const {
    const LfExtents e = extents_of(feature.shape());
    if (Shape{e.U, e.V, e.C} != table.shape()) {
      throw ShapeError("angular embedding " + to_string(table.shape()) +
                       " does not match feature " + to_string(feature.shape()));
    }
    // (U, V, H, W, C) -> (H, W, U, V, C) so the table broadcasts; the
    // permutation is its own inverse.
    const std::vector<std::size_t> swap{2, 3, 0, 1, 4};
    return ops::permute(ops::add(ops::permute(feature, swap), table.tensor()),
                        swap);
  }

  void collect(ParameterList<T>& ps) { ps.push_back(&table); }
};

/// Per-view 3x3 conv C -> C*alpha^2, pixel shuffle, 3x3 conv -> 1 channel.
template <class T>
struct Upsampler {
  std::size_t channels = 0, scale = 0;
  Conv3x3<T> expand, project;

  Upsampler() = default;
  Upsampler(std::size_t c, std::size_t alpha)
      : channels(c),
        scale(alpha),
        expand("upsample.expand", c, c * alpha * alpha),
        project("upsample.project", c, 1) {
    if (alpha != 2 && alpha != 4) {
      throw ConfigError("upsampler: scale factor must be 2 or 4, got " +
                        std::to_string(alpha));
    }
  }

  void initialize(Rng& rng) {
    expand.initialize(rng);
    project.initialize(rng, true);
  }

  Tensor<T> operator()(const Tensor<T>& feature) const {
    const LfExtents e = extents_of(feature.shape());
    if (e.C != channels) {
      throw ShapeError("upsampler: expected " + std::to_string(channels) +
                       " channels, got " + std::to_string(e.C));
    }
    Tensor<T> x = ops::reshape(feature, {e.U * e.V, e.H, e.W, e.C});
    x = ops::permute(x, {0, 3, 1, 2});
    x = project(ops::pixel_shuffle(expand(x), scale));
    return ops::reshape(x, {e.U, e.V, e.H * scale, e.W * scale, 1});
  }

  void collect(ParameterList<T>& ps) {
    expand.collect(ps);
    project.collect(ps);
  }

  static std::size_t parameter_count(std::size_t c, std::size_t alpha) {
    return Conv3x3<T>::parameter_count(c, c * alpha * alpha, 1) +
           Conv3x3<T>::parameter_count(c, 1, 1);
  }
};

}  // namespace raslf

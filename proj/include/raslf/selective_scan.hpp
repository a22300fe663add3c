#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "raslf/lf_repr.hpp"
#include "raslf/ops.hpp"
#include "raslf/random.hpp"

namespace raslf {

/// Ordered, duplicate-free, non-empty subset of the four canonical paths.
class ScanPathSet {
 public:
  ScanPathSet() = default;
  ScanPathSet(std::initializer_list<ScanPath> paths)
      : ScanPathSet(std::vector<ScanPath>(paths)) {}
  explicit ScanPathSet(std::vector<ScanPath> paths) : paths_(std::move(paths)) {
    if (paths_.empty()) throw ConfigError("scan path set must not be empty");
    for (std::size_t i = 0; i < paths_.size(); ++i)
      for (std::size_t j = i + 1; j < paths_.size(); ++j)
        if (paths_[i] == paths_[j]) {
          throw ConfigError("scan path set repeats " +
                            std::string(raslf::to_string(paths_[i])));
        }
  }

  static ScanPathSet four_path() {
    return {ScanPath::row_fwd, ScanPath::row_bwd, ScanPath::col_fwd,
            ScanPath::col_bwd};
  }
  // Representation-aware presets.
  static ScanPathSet sai() { return {ScanPath::row_fwd, ScanPath::col_fwd}; }
  static ScanPathSet macpi() { return four_path(); }
  static ScanPathSet hepi() { return {ScanPath::row_fwd}; }
  static ScanPathSet vepi() { return {ScanPath::col_fwd}; }

  static ScanPathSet parse(std::string_view text) {
    std::vector<ScanPath> paths;
    std::size_t pos = 0;
    while (pos <= text.size()) {
      const std::size_t comma = std::min(text.find(',', pos), text.size());
      std::string_view item = text.substr(pos, comma - pos);
      while (!item.empty() && item.front() == ' ') item.remove_prefix(1);
      while (!item.empty() && item.back() == ' ') item.remove_suffix(1);
      if (!item.empty()) paths.push_back(scan_path_from_string(item));
      pos = comma + 1;
    }
    return ScanPathSet(std::move(paths));
  }

  const std::vector<ScanPath>& paths() const { return paths_; }
  std::size_t size() const { return paths_.size(); }
  bool contains(ScanPath p) const {
    return std::find(paths_.begin(), paths_.end(), p) != paths_.end();
  }
  bool subset_of(const ScanPathSet& other) const {
    return std::all_of(paths_.begin(), paths_.end(),
                       [&](ScanPath p) { return other.contains(p); });
  }
  bool operator==(const ScanPathSet&) const = default;

  std::string to_string() const {
    std::string s;
    for (std::size_t i = 0; i < paths_.size(); ++i) {
      if (i) s += ',';
      s += raslf::to_string(paths_[i]);
    }
    return s;
  }

 private:
  std::vector<ScanPath> paths_;
};

/// Per-direction selective-scan parameters. The input projection maps each
/// token to [delta_low (rank) | B (state) | C (state)].
template <class T>
struct SsmDirectionParams {
  std::size_t channels = 0;
  std::size_t state = 0;
  std::size_t rank = 0;
  Parameter<T> x_proj;   // (channels, rank + 2 * state)
  Parameter<T> dt_proj;  // (rank, channels)
  Parameter<T> dt_bias;  // (channels)
  Parameter<T> a_log;    // (channels, state)
  Parameter<T> d;        // (channels)

  SsmDirectionParams() = default;
  SsmDirectionParams(const std::string& prefix, std::size_t channels_,
                     std::size_t state_, std::size_t rank_)
      : channels(channels_),
        state(state_),
        rank(rank_),
        x_proj(prefix + ".x_proj.weight", {channels_, rank_ + 2 * state_}),
        dt_proj(prefix + ".dt_proj.weight", {rank_, channels_}),
        dt_bias(prefix + ".dt_proj.bias", {channels_}),
        a_log(prefix + ".A_log", {channels_, state_}),
        d(prefix + ".D", {channels_}) {
    if (channels_ == 0 || state_ == 0 || rank_ == 0) {
      throw ConfigError("selective scan needs channels, state and rank >= 1");
    }
  }

  /// Standard stable initialization: fan-in uniform projections, delta
  /// log-uniform in [0.001, 0.1] through the bias, A_log = log(1..N), D = 1.
  void initialize(Rng& rng) {
    const double xs = 1.0 / std::sqrt(double(channels));
    for (T& w : x_proj.value()) w = static_cast<T>(rng.uniform(-xs, xs));
    const double ds = 1.0 / std::sqrt(double(rank));
    for (T& w : dt_proj.value()) w = static_cast<T>(rng.uniform(-ds, ds));
    for (T& b : dt_bias.value()) {
      const double dt = std::max(
          1e-4, std::exp(rng.uniform(std::log(0.001), std::log(0.1))));
      b = static_cast<T>(dt + std::log(-std::expm1(-dt)));
    }
    for (std::size_t c = 0; c < channels; ++c)
      for (std::size_t n = 0; n < state; ++n)
        a_log.value()[c * state + n] = static_cast<T>(std::log(double(n + 1)));
    std::fill(d.value().begin(), d.value().end(), T(1));
  }

  void collect(ParameterList<T>& out) {
    for (auto* p : {&x_proj, &dt_proj, &dt_bias, &a_log, &d}) out.push_back(p);
  }

  static std::size_t parameter_count(std::size_t channels, std::size_t state,
                                     std::size_t rank) {
    return channels * (rank + 2 * state) + rank * channels + channels +
           channels * state + channels;
  }
};

/// Sequential oracle: x is (L, channels) row-major; evaluated in double.
template <class T>
std::vector<double> scan_reference(const std::vector<double>& x,
                                   const SsmDirectionParams<T>& p) {
  const std::size_t Ci = p.channels, N = p.state, R = p.rank;
  if (x.empty() || x.size() % Ci != 0) {
    throw ShapeError("scan_reference: token sequence must be (L >= 1, " +
                     std::to_string(Ci) + ")");
  }
  const std::size_t L = x.size() / Ci;
  const std::size_t P = R + 2 * N;
  std::vector<double> y(L * Ci);
  std::vector<double> h(Ci * N, 0.0);
  std::vector<double> proj(P);
  for (std::size_t t = 0; t < L; ++t) {
    for (std::size_t j = 0; j < P; ++j) {
      double acc = 0;
      for (std::size_t c = 0; c < Ci; ++c)
        acc += x[t * Ci + c] * double(p.x_proj.value()[c * P + j]);
      proj[j] = acc;
    }
    for (std::size_t c = 0; c < Ci; ++c) {
      double raw = 0;
      for (std::size_t r = 0; r < R; ++r)
        raw += proj[r] * double(p.dt_proj.value()[r * Ci + c]);
      const double delta = std::log1p(std::exp(raw + double(p.dt_bias.value()[c])));
      double out = double(p.d.value()[c]) * x[t * Ci + c];
      for (std::size_t n = 0; n < N; ++n) {
        const double a = -std::exp(double(p.a_log.value()[c * N + n]));
        const double a_bar = std::exp(delta * a);
        const double b_bar = delta * proj[R + n];
        double& state = h[c * N + n];
        state = a_bar * state + b_bar * x[t * Ci + c];
        out += proj[R + N + n] * state;
        if (!std::isfinite(state) || !std::isfinite(out)) {
          throw NumericError("scan_reference: non-finite intermediate at t=" +
                             std::to_string(t) + ", c=" + std::to_string(c) +
                             ", n=" + std::to_string(n));
        }
      }
      y[t * Ci + c] = out;
    }
  }
  return y;
}

/// Production scan over (B, L, channels) tokens; `reverse` runs the
/// recurrence from the last token to the first.
template <class T>
Tensor<T> scan(const Tensor<T>& x, const SsmDirectionParams<T>& p,
               bool reverse = false) {
  if (x.rank() != 3 || x.dim(2) != p.channels) {
    throw ShapeError("scan: tokens must be (B, L, " +
                     std::to_string(p.channels) + "), got " +
                     to_string(x.shape()));
  }
  const std::size_t R = p.rank, N = p.state;
  Tensor<T> proj = ops::matmul(x, p.x_proj.tensor());
  Tensor<T> dt_low = ops::slice(proj, 2, 0, R);
  Tensor<T> b = ops::slice(proj, 2, R, R + N);
  Tensor<T> c = ops::slice(proj, 2, R + N, R + 2 * N);
  Tensor<T> dt = ops::matmul(dt_low, p.dt_proj.tensor());
  return ops::selective_scan(x, dt, p.dt_bias.tensor(), p.a_log.tensor(), b, c,
                             p.d.tensor(), reverse);
}

template <class T>
struct Ss2dBranch {
  ScanPath path;
  SsmDirectionParams<T> params;
};

/// Multi-directional scan bundle: one parameter set per configured path.
template <class T>
struct Ss2d {
  std::vector<Ss2dBranch<T>> branches;
  // Zero-substitution oracle: outputs of these paths are multiplied by zero
  // before summation instead of being removed.
  std::vector<ScanPath> zeroed;

  Ss2d() = default;
  Ss2d(const std::string& prefix, const ScanPathSet& paths,
       std::size_t channels, std::size_t state, std::size_t rank) {
    for (ScanPath p : paths.paths()) {
      branches.push_back(
          {p, SsmDirectionParams<T>(prefix + "." + std::string(to_string(p)),
                                    channels, state, rank)});
    }
  }

  ScanPathSet path_set() const {
    std::vector<ScanPath> p;
    for (const auto& b : branches) p.push_back(b.path);
    return ScanPathSet(std::move(p));
  }

  void initialize(Rng& rng) {
    for (auto& b : branches) b.params.initialize(rng);
  }

  void collect(ParameterList<T>& out) {
    for (auto& b : branches) b.params.collect(out);
  }
};

/// Sum over paths of unflatten(scan(flatten(grid, path))). Output shape
/// equals the (B, rows, cols, channels) input shape.
template <class T>
Tensor<T> ss2d(const Tensor<T>& grid, const Ss2d<T>& bundle) {
  if (bundle.branches.empty()) {
    throw ConfigError("ss2d: no scan paths configured");
  }
  Tensor<T> total;
  for (const auto& branch : bundle.branches) {
    Tensor<T> seq = flatten_grid(grid, branch.path);
    Tensor<T> out = scan(seq, branch.params, is_reverse_path(branch.path));
    Tensor<T> back = unflatten_grid(out, branch.path, grid.shape());
    if (std::find(bundle.zeroed.begin(), bundle.zeroed.end(), branch.path) !=
        bundle.zeroed.end()) {
      back = ops::mul(back, Tensor<T>::scalar(T(0)));
    }
    total = total.defined() ? ops::add(total, back) : back;
  }
  return total;
}

/// Same as ss2d with an explicit parameter list, one entry per path.
template <class T>
Tensor<T> ss2d(const Tensor<T>& grid, const ScanPathSet& paths,
               const std::vector<SsmDirectionParams<T>>& params) {
  if (params.size() != paths.size()) {
    throw ConfigError("ss2d: " + std::to_string(paths.size()) +
                      " paths but " + std::to_string(params.size()) +
                      " parameter sets");
  }
  Ss2d<T> bundle;
  for (std::size_t i = 0; i < params.size(); ++i)
    bundle.branches.push_back({paths.paths()[i], params[i]});
  return ss2d(grid, bundle);
}

/// Drops the parameters of every path not in `keep`.
template <class T>
Ss2d<T> prune_paths(const Ss2d<T>& bundle, const ScanPathSet& keep) {
  if (keep.size() == 0) throw ConfigError("prune_paths: keep set is empty");
  const ScanPathSet current = bundle.path_set();
  if (!keep.subset_of(current)) {
    throw ConfigError("prune_paths: {" + keep.to_string() +
                      "} is not a subset of {" + current.to_string() + "}");
  }
  Ss2d<T> out;
  for (const auto& b : bundle.branches)
    if (keep.contains(b.path)) out.branches.push_back(b);
  return out;
}

}  // namespace raslf

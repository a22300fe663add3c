#pragma once

// Index-level transforms between a 4-D light field and its 2-D working
// representations. Angular u pairs with spatial x, v pairs with y: the
// horizontal EPI at fixed (y, v) is indexed by (x, u), the vertical EPI at
// fixed (x, u) by (y, v).

#include <array>
#include <cstddef>
#include <limits>
#include <string>
#include <string_view>
#include <vector>

#include "raslf/ops.hpp"

namespace raslf {

enum class RepKind { sai, macpi, vpepi, hpepi };

/// How EPI slices of one orientation are arranged into grids.
enum class EpiLayout { panoramic, stacked, isolated };

enum class ScanPath { row_fwd, row_bwd, col_fwd, col_bwd };

inline constexpr std::array<RepKind, 4> kAllRepKinds = {
    RepKind::sai, RepKind::macpi, RepKind::hpepi, RepKind::vpepi};
inline constexpr std::array<ScanPath, 4> kAllScanPaths = {
    ScanPath::row_fwd, ScanPath::row_bwd, ScanPath::col_fwd, ScanPath::col_bwd};

inline std::string_view to_string(RepKind k) {
  switch (k) {
    case RepKind::sai: return "SAI";
    case RepKind::macpi: return "MacPI";
    case RepKind::vpepi: return "VPEPI";
    case RepKind::hpepi: return "HPEPI";
  }
  return "?";
}

inline std::string_view to_string(EpiLayout l) {
  switch (l) {
    case EpiLayout::panoramic: return "panoramic";
    case EpiLayout::stacked: return "stacked";
    case EpiLayout::isolated: return "isolated";
  }
  return "?";
}

inline std::string_view to_string(ScanPath p) {
  switch (p) {
    case ScanPath::row_fwd: return "RowFwd";
    case ScanPath::row_bwd: return "RowBwd";
    case ScanPath::col_fwd: return "ColFwd";
    case ScanPath::col_bwd: return "ColBwd";
  }
  return "?";
}

inline RepKind rep_kind_from_string(std::string_view s) {
  for (RepKind k : kAllRepKinds)
    if (to_string(k) == s) return k;
  throw ConfigError("unknown representation '" + std::string(s) + "'");
}

inline EpiLayout epi_layout_from_string(std::string_view s) {
  for (EpiLayout l :
       {EpiLayout::panoramic, EpiLayout::stacked, EpiLayout::isolated})
    if (to_string(l) == s) return l;
  throw ConfigError("unknown EPI layout '" + std::string(s) + "'");
}

inline ScanPath scan_path_from_string(std::string_view s) {
  for (ScanPath p : kAllScanPaths)
    if (to_string(p) == s) return p;
  throw ConfigError("unknown scan path '" + std::string(s) + "'");
}

inline bool is_column_path(ScanPath p) {
  return p == ScanPath::col_fwd || p == ScanPath::col_bwd;
}
inline bool is_reverse_path(ScanPath p) {
  return p == ScanPath::row_bwd || p == ScanPath::col_bwd;
}

struct LfExtents {
  std::size_t U = 1, V = 1, H = 1, W = 1, C = 1;

  std::size_t count() const {
    std::size_t n = 1;
    for (std::size_t e : {U, V, H, W, C}) {
      if (e == 0) throw ShapeError("light field extents must be >= 1");
      if (n > std::numeric_limits<std::size_t>::max() / e) {
        throw ShapeError("light field extents overflow the address space");
      }
      n *= e;
    }
    return n;
  }
  Shape shape() const { return {U, V, H, W, C}; }
  bool operator==(const LfExtents&) const = default;
};

inline std::string to_string(const LfExtents& e) {
  return std::to_string(e.U) + "x" + std::to_string(e.V) + "x" +
         std::to_string(e.H) + "x" + std::to_string(e.W) + "x" +
         std::to_string(e.C);
}

/// Samples L(u, v, x, y, c) stored as [u][v][y][x][c].
struct LightField4D {
  LfExtents ext;
  std::vector<float> data;

  LightField4D() = default;
  explicit LightField4D(LfExtents e, float fill = 0.0f)
      : ext(e), data(e.count(), fill) {}

  std::size_t index(std::size_t u, std::size_t v, std::size_t y, std::size_t x,
                    std::size_t c = 0) const {
    return (((u * ext.V + v) * ext.H + y) * ext.W + x) * ext.C + c;
  }
  float& at(std::size_t u, std::size_t v, std::size_t y, std::size_t x,
            std::size_t c = 0) {
    return data[index(u, v, y, x, c)];
  }
  float at(std::size_t u, std::size_t v, std::size_t y, std::size_t x,
           std::size_t c = 0) const {
    return data[index(u, v, y, x, c)];
  }
  bool operator==(const LightField4D&) const = default;
};

/// Batch of 2-D token grids stored as [batch][row][col][c].
struct RepGrid {
  RepKind kind = RepKind::sai;
  EpiLayout layout = EpiLayout::panoramic;
  std::size_t batch = 0, rows = 0, cols = 0, channels = 0;
  std::vector<float> data;

  std::size_t index(std::size_t b, std::size_t r, std::size_t col,
                    std::size_t c = 0) const {
    return ((b * rows + r) * cols + col) * channels + c;
  }
};

struct RepPosition {
  std::size_t batch, row, col;
  bool operator==(const RepPosition&) const = default;
};

struct RepDims {
  std::size_t batch, rows, cols;
};

inline RepDims rep_dims(RepKind kind, const LfExtents& e,
                        EpiLayout layout = EpiLayout::panoramic) {
  switch (kind) {
    case RepKind::sai: return {e.U * e.V, e.H, e.W};
    case RepKind::macpi: return {e.H * e.W, e.V, e.U};
    case RepKind::vpepi:
      switch (layout) {
        case EpiLayout::panoramic: return {1, e.U * e.H, e.W * e.V};
        case EpiLayout::stacked: return {1, e.U * e.W * e.H, e.V};
        case EpiLayout::isolated: return {e.U * e.W, e.H, e.V};
      }
      break;
    case RepKind::hpepi:
      switch (layout) {
        case EpiLayout::panoramic: return {1, e.V * e.W, e.H * e.U};
        case EpiLayout::stacked: return {1, e.V * e.H * e.W, e.U};
        case EpiLayout::isolated: return {e.V * e.H, e.W, e.U};
      }
      break;
  }
  throw ConfigError("rep_dims: invalid representation");
}

/// Where sample (u, v, y, x) lands in the representation.
inline RepPosition rep_position(RepKind kind, const LfExtents& e, std::size_t u,
                                std::size_t v, std::size_t y, std::size_t x,
                                EpiLayout layout = EpiLayout::panoramic) {
  switch (kind) {
    case RepKind::sai: return {u * e.V + v, y, x};
    case RepKind::macpi: return {y * e.W + x, v, u};
    case RepKind::vpepi:
      switch (layout) {
        case EpiLayout::panoramic: return {0, u * e.H + y, x * e.V + v};
        case EpiLayout::stacked: return {0, (u * e.W + x) * e.H + y, v};
        case EpiLayout::isolated: return {u * e.W + x, y, v};
      }
      break;
    case RepKind::hpepi:
      switch (layout) {
        case EpiLayout::panoramic: return {0, v * e.W + x, y * e.U + u};
        case EpiLayout::stacked: return {0, (v * e.H + y) * e.W + x, u};
        case EpiLayout::isolated: return {v * e.H + y, x, u};
      }
      break;
  }
  throw ConfigError("rep_position: invalid representation");
}

inline RepGrid to_rep(const LightField4D& lf, RepKind kind,
                      EpiLayout layout = EpiLayout::panoramic) {
  const LfExtents& e = lf.ext;
  const RepDims d = rep_dims(kind, e, layout);
  RepGrid g{kind, layout, d.batch, d.rows, d.cols, e.C,
            std::vector<float>(e.count())};
  for (std::size_t u = 0; u < e.U; ++u)
    for (std::size_t v = 0; v < e.V; ++v)
      for (std::size_t y = 0; y < e.H; ++y)
        for (std::size_t x = 0; x < e.W; ++x) {
          const RepPosition p = rep_position(kind, e, u, v, y, x, layout);
          for (std::size_t c = 0; c < e.C; ++c)
            g.data[g.index(p.batch, p.row, p.col, c)] = lf.at(u, v, y, x, c);
        }
  return g;
}

inline LightField4D from_rep(const RepGrid& g, RepKind kind,
                             const LfExtents& e) {
  if (g.kind != kind) {
    throw ShapeError("from_rep: grid holds " + std::string(to_string(g.kind)) +
                     ", requested " + std::string(to_string(kind)));
  }
  const RepDims d = rep_dims(kind, e, g.layout);
  if (d.batch != g.batch || d.rows != g.rows || d.cols != g.cols ||
      e.C != g.channels || g.data.size() != e.count()) {
    throw ShapeError("from_rep: grid " + std::to_string(g.batch) + "x" +
                     std::to_string(g.rows) + "x" + std::to_string(g.cols) +
                     "x" + std::to_string(g.channels) +
                     " does not match extents " + to_string(e));
  }
  LightField4D lf(e);
  for (std::size_t u = 0; u < e.U; ++u)
    for (std::size_t v = 0; v < e.V; ++v)
      for (std::size_t y = 0; y < e.H; ++y)
        for (std::size_t x = 0; x < e.W; ++x) {
          const RepPosition p = rep_position(kind, e, u, v, y, x, g.layout);
          for (std::size_t c = 0; c < e.C; ++c)
            lf.at(u, v, y, x, c) = g.data[g.index(p.batch, p.row, p.col, c)];
        }
  return lf;
}

/// Grid cell visited at step s of a path over a rows x cols grid.
inline std::pair<std::size_t, std::size_t> path_cell(ScanPath path,
                                                     std::size_t rows,
                                                     std::size_t cols,
                                                     std::size_t s) {
  const std::size_t len = rows * cols;
  const std::size_t k = is_reverse_path(path) ? len - 1 - s : s;
  return is_column_path(path) ? std::pair{k % rows, k / rows}
                              : std::pair{k / cols, k % cols};
}

/// Token sequences per batch item, stored as [batch][step][c].
inline std::vector<float> flatten(const RepGrid& g, ScanPath path) {
  std::vector<float> seq(g.data.size());
  const std::size_t len = g.rows * g.cols;
  for (std::size_t b = 0; b < g.batch; ++b)
    for (std::size_t s = 0; s < len; ++s) {
      const auto [r, col] = path_cell(path, g.rows, g.cols, s);
      for (std::size_t c = 0; c < g.channels; ++c)
        seq[(b * len + s) * g.channels + c] = g.data[g.index(b, r, col, c)];
    }
  return seq;
}

inline RepGrid unflatten(const std::vector<float>& seq, ScanPath path,
                         const RepGrid& like) {
  RepGrid g = like;
  if (seq.size() != g.data.size()) {
    throw ShapeError("unflatten: sequence length does not match grid");
  }
  const std::size_t len = g.rows * g.cols;
  for (std::size_t b = 0; b < g.batch; ++b)
    for (std::size_t s = 0; s < len; ++s) {
      const auto [r, col] = path_cell(path, g.rows, g.cols, s);
      for (std::size_t c = 0; c < g.channels; ++c)
        g.data[g.index(b, r, col, c)] = seq[(b * len + s) * g.channels + c];
    }
  return g;
}

// Tensor forms used inside the network: permute + reshape of a
// (U, V, H, W, C) feature into (batch, rows, cols, C).

struct RepTransform {
  std::vector<std::size_t> perm;
  RepDims dims;
};

inline RepTransform rep_transform(RepKind kind, const LfExtents& e,
                                  EpiLayout layout = EpiLayout::panoramic) {
  std::vector<std::size_t> perm;
  switch (kind) {
    case RepKind::sai: perm = {0, 1, 2, 3, 4}; break;
    case RepKind::macpi: perm = {2, 3, 1, 0, 4}; break;
    case RepKind::vpepi:
      perm = layout == EpiLayout::panoramic ? std::vector<std::size_t>{0, 2, 3, 1, 4}
                                            : std::vector<std::size_t>{0, 3, 2, 1, 4};
      break;
    case RepKind::hpepi:
      perm = layout == EpiLayout::panoramic ? std::vector<std::size_t>{1, 3, 2, 0, 4}
                                            : std::vector<std::size_t>{1, 2, 3, 0, 4};
      break;
  }
  return {perm, rep_dims(kind, e, layout)};
}

inline LfExtents extents_of(const Shape& feature) {
  if (feature.size() != 5) {
    throw ShapeError("expected a (U, V, H, W, C) feature, got " +
                     to_string(feature));
  }
  return {feature[0], feature[1], feature[2], feature[3], feature[4]};
}

template <class T>
Tensor<T> to_rep(const Tensor<T>& feature, RepKind kind,
                 EpiLayout layout = EpiLayout::panoramic) {
  const LfExtents e = extents_of(feature.shape());
  const RepTransform t = rep_transform(kind, e, layout);
  Tensor<T> x = kind == RepKind::sai ? feature : ops::permute(feature, t.perm);
  return ops::reshape(x, {t.dims.batch, t.dims.rows, t.dims.cols, e.C});
}

template <class T>
Tensor<T> from_rep(const Tensor<T>& grid, RepKind kind, const LfExtents& e,
                   EpiLayout layout = EpiLayout::panoramic) {
  const RepTransform t = rep_transform(kind, e, layout);
  const Shape expected{t.dims.batch, t.dims.rows, t.dims.cols, e.C};
  if (grid.shape() != expected) {
    throw ShapeError("from_rep: grid " + to_string(grid.shape()) +
                     " does not match " + std::string(to_string(kind)) +
                     " of extents " + to_string(e));
  }
  const Shape full = e.shape();
  if (kind == RepKind::sai) return ops::reshape(grid, full);
  Shape permuted(5);
  std::vector<std::size_t> inverse(5);
  for (std::size_t i = 0; i < 5; ++i) {
    permuted[i] = full[t.perm[i]];
    inverse[t.perm[i]] = i;
  }
  return ops::permute(ops::reshape(grid, permuted), inverse);
}

/// (B, rows, cols, C) -> (B, rows*cols, C) in forward path order. Reverse
/// paths share the forward order; the scan runs backwards over it.
template <class T>
Tensor<T> flatten_grid(const Tensor<T>& grid, ScanPath path) {
  const Shape& s = grid.shape();
  if (s.size() != 4) {
    throw ShapeError("flatten: expected (B, rows, cols, C), got " +
                     to_string(s));
  }
  Tensor<T> g = is_column_path(path) ? ops::permute(grid, {0, 2, 1, 3}) : grid;
  return ops::reshape(g, {s[0], s[1] * s[2], s[3]});
}

template <class T>
Tensor<T> unflatten_grid(const Tensor<T>& seq, ScanPath path,
                         const Shape& grid_shape) {
  if (is_column_path(path)) {
    Tensor<T> g = ops::reshape(
        seq, {grid_shape[0], grid_shape[2], grid_shape[1], seq.dim(2)});
    return ops::permute(g, {0, 2, 1, 3});
  }
  return ops::reshape(
      seq, {grid_shape[0], grid_shape[1], grid_shape[2], seq.dim(2)});
}

}  // namespace raslf

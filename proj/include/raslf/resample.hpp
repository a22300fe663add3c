#pragma once

// Separable Keys cubic resampling (a = -0.5) with replicate boundary.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "raslf/error.hpp"
#include "raslf/lf_repr.hpp"

namespace raslf {

inline double keys_kernel(double x, double a = -0.5) {
  x = std::abs(x);
  if (x <= 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
  if (x < 2.0) return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
  return 0.0;
}

/// Four taps per output sample along one axis.
struct ResampleTable {
  std::size_t in = 0, out = 0;
  std::vector<std::size_t> index;  // out * 4
  std::vector<double> weight;      // out * 4
};

namespace detail {

inline ResampleTable cubic_table(std::size_t in, std::size_t out,
                                 double step) {
  ResampleTable t{in, out, std::vector<std::size_t>(out * 4),
                  std::vector<double>(out * 4)};
  const auto last = static_cast<std::ptrdiff_t>(in) - 1;
  for (std::size_t o = 0; o < out; ++o) {
    // Pixel centers: output o sits at input coordinate (o + 0.5) * step - 0.5.
    const double src = (double(o) + 0.5) * step - 0.5;
    const double base = std::floor(src);
    const double frac = src - base;
    double total = 0;
    for (int k = 0; k < 4; ++k) {
      const double w = keys_kernel(frac - double(k - 1));
      const auto i = std::clamp(static_cast<std::ptrdiff_t>(base) + k - 1,
                                std::ptrdiff_t{0}, last);
      t.index[o * 4 + k] = static_cast<std::size_t>(i);
      t.weight[o * 4 + k] = w;
      total += w;
    }
    for (int k = 0; k < 4; ++k) t.weight[o * 4 + k] /= total;
  }
  return t;
}

}  // namespace detail

inline ResampleTable upsample_table(std::size_t in, std::size_t alpha) {
  return detail::cubic_table(in, in * alpha, 1.0 / double(alpha));
}

/// Same kernel evaluated on the alpha-strided grid; `in` must be a multiple
/// of alpha.
inline ResampleTable downsample_table(std::size_t in, std::size_t alpha) {
  if (in % alpha != 0) {
    throw DataError("bicubic downsampling: extent " + std::to_string(in) +
                    " is not a multiple of " + std::to_string(alpha));
  }
  return detail::cubic_table(in, in / alpha, double(alpha));
}

/// Resamples one plane with element stride `stride` (interleaved channels).
inline void resample_plane(const float* src, std::size_t stride,
                           const ResampleTable& ty, const ResampleTable& tx,
                           float* dst, std::size_t dst_stride) {
  std::vector<double> tmp(ty.in * tx.out);
  for (std::size_t y = 0; y < ty.in; ++y) {
    const float* row = src + y * tx.in * stride;
    for (std::size_t o = 0; o < tx.out; ++o) {
      double acc = 0;
      for (int k = 0; k < 4; ++k)
        acc += tx.weight[o * 4 + k] * double(row[tx.index[o * 4 + k] * stride]);
      tmp[y * tx.out + o] = acc;
    }
  }
  for (std::size_t o = 0; o < ty.out; ++o)
    for (std::size_t x = 0; x < tx.out; ++x) {
      double acc = 0;
      for (int k = 0; k < 4; ++k)
        acc += ty.weight[o * 4 + k] * tmp[ty.index[o * 4 + k] * tx.out + x];
      dst[(o * tx.out + x) * dst_stride] = static_cast<float>(acc);
    }
}

inline LightField4D resize_views(const LightField4D& lf,
                                 const ResampleTable& ty,
                                 const ResampleTable& tx) {
  const LfExtents& e = lf.ext;
  LightField4D out(LfExtents{e.U, e.V, ty.out, tx.out, e.C});
  for (std::size_t u = 0; u < e.U; ++u)
    for (std::size_t v = 0; v < e.V; ++v)
      for (std::size_t c = 0; c < e.C; ++c)
        resample_plane(&lf.data[lf.index(u, v, 0, 0, c)], e.C, ty, tx,
                       &out.data[out.index(u, v, 0, 0, c)], e.C);
  return out;
}

inline LightField4D bicubic_upsample(const LightField4D& lf,
                                     std::size_t alpha) {
  return resize_views(lf, upsample_table(lf.ext.H, alpha),
                      upsample_table(lf.ext.W, alpha));
}

inline LightField4D bicubic_downsample(const LightField4D& lf,
                                       std::size_t alpha) {
  return resize_views(lf, downsample_table(lf.ext.H, alpha),
                      downsample_table(lf.ext.W, alpha));
}

/// factor in {1/4, 1/2, 2, 4}.
inline LightField4D bicubic_resize(const LightField4D& lf, double factor) {
  if (factor == 2.0 || factor == 4.0) {
    return bicubic_upsample(lf, static_cast<std::size_t>(factor));
  }
  if (factor == 0.5 || factor == 0.25) {
    return bicubic_downsample(lf, static_cast<std::size_t>(1.0 / factor));
  }
  throw ConfigError("bicubic_resize: unsupported factor " +
                    std::to_string(factor) + " (expected 1/4, 1/2, 2 or 4)");
}

}  // namespace raslf

#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "raslf/data_io.hpp"
#include "raslf/error.hpp"
#include "raslf/lf_repr.hpp"

namespace raslf {

inline constexpr double kPsnrCap = 99.0;

struct PsnrResult {
  double db = 0.0;
  bool identical = false;
};

inline void require_same_extents(const LightField4D& a, const LightField4D& b,
                                  const char* what) {
  if (!(a.ext == b.ext)) {
    throw DataError(std::string(what) + ": extents differ (" +
                    to_string(a.ext) + " vs " + to_string(b.ext) + ")");
  }
}

inline PsnrResult psnr_from_mse(double mse, double peak) {
  if (mse == 0.0) return {kPsnrCap, true};
  return {std::min(kPsnrCap, 10.0 * std::log10(peak * peak / mse)), false};
}

inline double mse(std::span<const float> a, std::span<const float> b) {
  double acc = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = double(a[i]) - double(b[i]);
    acc += d * d;
  }
  return acc / double(a.size());
}

/// Pooled MSE over every sample of every view.
inline PsnrResult psnr(const LightField4D& a, const LightField4D& b,
                       double peak = 1.0) {
  require_same_extents(a, b, "psnr");
  return psnr_from_mse(mse(a.data, b.data), peak);
}

/// Mean of per-view PSNRs (alternative view-level rule).
inline PsnrResult psnr_view_mean(const LightField4D& a, const LightField4D& b,
                                 double peak = 1.0) {
  require_same_extents(a, b, "psnr");
  const std::size_t view = a.ext.H * a.ext.W * a.ext.C;
  double acc = 0;
  bool identical = true;
  for (std::size_t i = 0; i < a.ext.U * a.ext.V; ++i) {
    const auto r = psnr_from_mse(
        mse(std::span(a.data).subspan(i * view, view),
            std::span(b.data).subspan(i * view, view)),
        peak);
    acc += r.db;
    identical = identical && r.identical;
  }
  return {acc / double(a.ext.U * a.ext.V), identical};
}

struct SsimOptions {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01, k2 = 0.03;
  double data_range = 1.0;
};

/// Mean local SSIM of one single-channel image over the valid region.
inline double ssim_plane(const float* a, const float* b, std::size_t H,
                         std::size_t W, std::size_t stride = 1,
                         const SsimOptions& opt = {}) {
  const auto win = static_cast<std::size_t>(opt.window);
  if (H < win || W < win) {
    throw DataError("ssim: image " + std::to_string(H) + "x" +
                    std::to_string(W) + " is smaller than the " +
                    std::to_string(win) + "x" + std::to_string(win) +
                    " window");
  }
  std::vector<double> g(win);
  double gsum = 0;
  const double half = double(win - 1) / 2.0;
  for (std::size_t i = 0; i < win; ++i) {
    g[i] = std::exp(-(double(i) - half) * (double(i) - half) /
                    (2 * opt.sigma * opt.sigma));
    gsum += g[i];
  }
  for (double& v : g) v /= gsum;
  const double c1 = (opt.k1 * opt.data_range) * (opt.k1 * opt.data_range);
  const double c2 = (opt.k2 * opt.data_range) * (opt.k2 * opt.data_range);
  const std::size_t oh = H - win + 1, ow = W - win + 1;
  double total = 0;
  for (std::size_t y = 0; y < oh; ++y)
    for (std::size_t x = 0; x < ow; ++x) {
      double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
      for (std::size_t i = 0; i < win; ++i)
        for (std::size_t j = 0; j < win; ++j) {
          const double w = g[i] * g[j];
          const double va = a[((y + i) * W + x + j) * stride];
          const double vb = b[((y + i) * W + x + j) * stride];
          ma += w * va;
          mb += w * vb;
          saa += w * va * va;
          sbb += w * vb * vb;
          sab += w * va * vb;
        }
      const double var_a = saa - ma * ma;
      const double var_b = sbb - mb * mb;
      const double cov = sab - ma * mb;
      // With a == b every factor pair below is identical, so the ratio is
      // exactly 1.
      const double num = (2 * ma * mb + c1) * (2 * cov + c2);
      const double den = (ma * ma + mb * mb + c1) * (var_a + var_b + c2);
      total += num / den;
    }
  return total / double(oh * ow);
}

/// Mean over views of the per-view SSIM (channel 0).
inline double ssim(const LightField4D& a, const LightField4D& b,
                   const SsimOptions& opt = {}) {
  require_same_extents(a, b, "ssim");
  double acc = 0;
  for (std::size_t u = 0; u < a.ext.U; ++u)
    for (std::size_t v = 0; v < a.ext.V; ++v)
      acc += ssim_plane(&a.data[a.index(u, v, 0, 0)],
                        &b.data[b.index(u, v, 0, 0)], a.ext.H, a.ext.W,
                        a.ext.C, opt);
  return acc / double(a.ext.U * a.ext.V);
}

struct SceneScore {
  std::string scene;
  std::vector<double> view_psnr;
  std::vector<double> view_ssim;
  double psnr = 0.0;  // scene-level value (pooled or view mean)
  double ssim = 0.0;
  bool identical = false;
};

inline SceneScore score_scene(const std::string& id, const LightField4D& sr,
                              const LightField4D& hr, bool pooled = true) {
  require_same_extents(sr, hr, "score");
  SceneScore s;
  s.scene = id;
  const std::size_t view = hr.ext.H * hr.ext.W * hr.ext.C;
  const bool ssim_ok = hr.ext.H >= 11 && hr.ext.W >= 11;
  for (std::size_t i = 0; i < hr.ext.U * hr.ext.V; ++i) {
    s.view_psnr.push_back(
        psnr_from_mse(mse(std::span(sr.data).subspan(i * view, view),
                          std::span(hr.data).subspan(i * view, view)),
                      1.0)
            .db);
    if (ssim_ok) {
      s.view_ssim.push_back(ssim_plane(&sr.data[i * view], &hr.data[i * view],
                                       hr.ext.H, hr.ext.W, hr.ext.C));
    }
  }
  const PsnrResult p = pooled ? psnr(sr, hr) : psnr_view_mean(sr, hr);
  s.psnr = p.db;
  s.identical = p.identical;
  if (ssim_ok) {
    double acc = 0;
    for (double v : s.view_ssim) acc += v;
    s.ssim = acc / double(s.view_ssim.size());
  } else {
    s.ssim = std::nan("");
  }
  return s;
}

struct AggregateScore {
  double psnr = 0.0;
  double ssim = 0.0;
  std::map<std::string, std::pair<double, double>> per_dataset;
};

/// Two-stage mean: scenes within each dataset, then datasets.
inline AggregateScore aggregate(
    const std::map<std::string, std::vector<SceneScore>>& datasets) {
  if (datasets.empty()) throw DataError("aggregate: no datasets");
  AggregateScore out;
  for (const auto& [name, scenes] : datasets) {
    if (scenes.empty()) {
      throw DataError("aggregate: dataset '" + name + "' has no scenes");
    }
    double p = 0, s = 0;
    for (const auto& sc : scenes) {
      p += sc.psnr;
      s += sc.ssim;
    }
    out.per_dataset[name] = {p / double(scenes.size()),
                             s / double(scenes.size())};
    out.psnr += out.per_dataset[name].first;
    out.ssim += out.per_dataset[name].second;
  }
  out.psnr /= double(datasets.size());
  out.ssim /= double(datasets.size());
  return out;
}

inline constexpr double kErrorMapRange = 0.1;

/// |reference - reconstruction| scaled so 0.1 maps to full scale, clamped.
inline LightField4D error_map(const LightField4D& reference,
                              const LightField4D& reconstruction) {
  require_same_extents(reference, reconstruction, "error_map");
  LightField4D out(reference.ext);
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    const double e = std::abs(double(reference.data[i]) -
                              double(reconstruction.data[i]));
    out.data[i] = static_cast<float>(std::min(1.0, e / kErrorMapRange));
  }
  return out;
}

}  // namespace raslf

#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "raslf/config_kv.hpp"
#include "raslf/error.hpp"
#include "raslf/lf_repr.hpp"
#include "raslf/random.hpp"
#include "raslf/resample.hpp"

namespace raslf {

// ---------------------------------------------------------------- container

enum class ChannelTag : std::uint32_t { y = 0, rgb = 1 };

inline std::string_view to_string(ChannelTag t) {
  return t == ChannelTag::y ? "Y" : "RGB";
}

struct LfFile {
  LightField4D lf;
  ChannelTag tag = ChannelTag::y;
};

inline constexpr std::uint32_t kContainerVersion = 1;

namespace detail {

inline void put_u32(std::ostream& out, std::uint32_t v) {
  const char b[4] = {char(v & 0xff), char((v >> 8) & 0xff),
                     char((v >> 16) & 0xff), char((v >> 24) & 0xff)};
  out.write(b, 4);
}

inline std::uint32_t get_u32(std::istream& in, const std::string& path) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) {
    throw DataError(path + ": truncated header");
  }
  return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 |
         std::uint32_t(b[2]) << 16 | std::uint32_t(b[3]) << 24;
}

inline void put_f32(std::ostream& out, float f) {
  put_u32(out, std::bit_cast<std::uint32_t>(f));
}

inline void write_f32_block(std::ostream& out, const float* v, std::size_t n) {
  std::vector<unsigned char> bytes(n * 4);
  for (std::size_t i = 0; i < n; ++i) {
    const auto u = std::bit_cast<std::uint32_t>(v[i]);
    for (int k = 0; k < 4; ++k) bytes[i * 4 + k] = (u >> (8 * k)) & 0xff;
  }
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

inline void read_f32_block(std::istream& in, float* v, std::size_t n,
                           const std::string& path) {
  std::vector<unsigned char> bytes(n * 4);
  if (!in.read(reinterpret_cast<char*>(bytes.data()),
               static_cast<std::streamsize>(bytes.size()))) {
    throw DataError(path + ": truncated payload");
  }
  for (std::size_t i = 0; i < n; ++i) {
    std::uint32_t u = 0;
    for (int k = 0; k < 4; ++k) u |= std::uint32_t(bytes[i * 4 + k]) << (8 * k);
    v[i] = std::bit_cast<float>(u);
  }
}

}  // namespace detail

/// Writes "LF4D", version, U V H W C, channel tag, then little-endian float32
/// samples in [u][v][y][x][c] order, clamped to [0, 1].
inline void write_container(const std::string& path, const LightField4D& lf,
                            ChannelTag tag = ChannelTag::y) {
  const std::size_t expect_c = tag == ChannelTag::y ? 1 : 3;
  if (lf.ext.C != expect_c) {
    throw DataError(path + ": " + std::string(to_string(tag)) + " needs " +
                    std::to_string(expect_c) + " channels, light field has " +
                    std::to_string(lf.ext.C));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out.write("LF4D", 4);
  detail::put_u32(out, kContainerVersion);
  for (std::size_t e : {lf.ext.U, lf.ext.V, lf.ext.H, lf.ext.W, lf.ext.C})
    detail::put_u32(out, static_cast<std::uint32_t>(e));
  detail::put_u32(out, static_cast<std::uint32_t>(tag));
  std::vector<float> clamped(lf.data.size());
  for (std::size_t i = 0; i < clamped.size(); ++i)
    clamped[i] = std::clamp(lf.data[i], 0.0f, 1.0f);
  detail::write_f32_block(out, clamped.data(), clamped.size());
  if (!out) throw DataError("write failed: " + path);
}

inline LfFile read_container(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, "LF4D", 4) != 0) {
    throw DataError(path + ": not an LF4D container");
  }
  const std::uint32_t version = detail::get_u32(in, path);
  if (version != kContainerVersion) {
    throw DataError(path + ": unsupported container version " +
                    std::to_string(version));
  }
  LfExtents e;
  for (std::size_t* f : {&e.U, &e.V, &e.H, &e.W, &e.C})
    *f = detail::get_u32(in, path);
  const std::uint32_t tag = detail::get_u32(in, path);
  if (tag > 1) throw DataError(path + ": unknown channel tag");
  LfFile file;
  file.tag = static_cast<ChannelTag>(tag);
  if (e.C != (file.tag == ChannelTag::y ? 1u : 3u)) {
    throw DataError(path + ": channel count does not match tag");
  }
  try {
    file.lf = LightField4D(e);
  } catch (const ShapeError& err) {
    throw DataError(path + ": " + err.what());
  }
  detail::read_f32_block(in, file.lf.data.data(), file.lf.data.size(), path);
  if (in.peek() != std::char_traits<char>::eof()) {
    throw DataError(path + ": trailing bytes after payload");
  }
  return file;
}

// ---------------------------------------------------------------- PGM grid

/// One 16-bit binary graymap per view named u_v.pgm.
inline void write_pgm(const std::string& path, const float* plane,
                      std::size_t H, std::size_t W, std::size_t stride = 1) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out << "P5\n" << W << " " << H << "\n65535\n";
  std::vector<unsigned char> bytes(H * W * 2);
  for (std::size_t i = 0; i < H * W; ++i) {
    const double v = std::clamp(double(plane[i * stride]), 0.0, 1.0);
    const auto q = static_cast<std::uint16_t>(std::lround(v * 65535.0));
    bytes[2 * i] = static_cast<unsigned char>(q >> 8);
    bytes[2 * i + 1] = static_cast<unsigned char>(q & 0xff);
  }
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

struct PgmImage {
  std::size_t H = 0, W = 0;
  std::vector<float> data;
};

inline PgmImage read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  std::string magic;
  std::size_t W = 0, H = 0, maxval = 0;
  in >> magic >> W >> H >> maxval;
  if (magic != "P5" || !in || W == 0 || H == 0 || maxval == 0 ||
      maxval > 65535) {
    throw DataError(path + ": not a binary PGM");
  }
  in.get();
  const std::size_t bpp = maxval > 255 ? 2 : 1;
  std::vector<unsigned char> bytes(H * W * bpp);
  if (!in.read(reinterpret_cast<char*>(bytes.data()),
               static_cast<std::streamsize>(bytes.size()))) {
    throw DataError(path + ": truncated PGM");
  }
  PgmImage img{H, W, std::vector<float>(H * W)};
  for (std::size_t i = 0; i < H * W; ++i) {
    const unsigned q = bpp == 2 ? (unsigned(bytes[2 * i]) << 8 | bytes[2 * i + 1])
                                : bytes[i];
    img.data[i] = static_cast<float>(double(q) / double(maxval));
  }
  return img;
}

inline void write_pgm_grid(const std::string& dir, const LightField4D& lf,
                           std::size_t channel = 0) {
  std::filesystem::create_directories(dir);
  for (std::size_t u = 0; u < lf.ext.U; ++u)
    for (std::size_t v = 0; v < lf.ext.V; ++v) {
      const auto path = std::filesystem::path(dir) /
                        (std::to_string(u) + "_" + std::to_string(v) + ".pgm");
      write_pgm(path.string(), &lf.data[lf.index(u, v, 0, 0, channel)],
                lf.ext.H, lf.ext.W, lf.ext.C);
    }
}

inline LightField4D read_pgm_grid(const std::string& dir) {
  std::size_t U = 0, V = 0;
  if (!std::filesystem::is_directory(dir)) {
    throw DataError(dir + ": not a directory");
  }
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    std::size_t u = 0, v = 0;
    char tail[8] = {};
    if (std::sscanf(name.c_str(), "%zu_%zu.%3s", &u, &v, tail) == 3 &&
        std::string(tail) == "pgm") {
      U = std::max(U, u + 1);
      V = std::max(V, v + 1);
    }
  }
  if (U == 0) throw DataError(dir + ": no u_v.pgm views found");
  LightField4D lf;
  for (std::size_t u = 0; u < U; ++u)
    for (std::size_t v = 0; v < V; ++v) {
      const auto path = std::filesystem::path(dir) /
                        (std::to_string(u) + "_" + std::to_string(v) + ".pgm");
      if (!std::filesystem::exists(path)) {
        throw DataError(path.string() + ": missing view");
      }
      const PgmImage img = read_pgm(path.string());
      if (u == 0 && v == 0) lf = LightField4D(LfExtents{U, V, img.H, img.W, 1});
      if (img.H != lf.ext.H || img.W != lf.ext.W) {
        throw DataError(path.string() + ": view size differs");
      }
      std::copy(img.data.begin(), img.data.end(),
                lf.data.begin() + static_cast<std::ptrdiff_t>(lf.index(u, v, 0, 0)));
    }
  return lf;
}

// ---------------------------------------------------------------- color

/// ITU-R BT.601, full range [0, 1].
inline std::array<float, 3> rgb_to_ycbcr(float r, float g, float b) {
  const double y = 0.299 * r + 0.587 * g + 0.114 * b;
  const double cb = 0.5 + (b - y) * (0.5 / 0.886);
  const double cr = 0.5 + (r - y) * (0.5 / 0.701);
  return {float(y), float(cb), float(cr)};
}

inline std::array<float, 3> ycbcr_to_rgb(float y, float cb, float cr) {
  const double r = y + (cr - 0.5) * (0.701 / 0.5);
  const double b = y + (cb - 0.5) * (0.886 / 0.5);
  const double g = (y - 0.299 * r - 0.114 * b) / 0.587;
  return {float(r), float(g), float(b)};
}

inline LightField4D convert_rgb_to_ycbcr(const LightField4D& rgb) {
  if (rgb.ext.C != 3) throw DataError("expected a 3-channel light field");
  LightField4D out(rgb.ext);
  for (std::size_t i = 0; i < rgb.data.size(); i += 3) {
    const auto ycc = rgb_to_ycbcr(rgb.data[i], rgb.data[i + 1], rgb.data[i + 2]);
    std::copy(ycc.begin(), ycc.end(), out.data.begin() + std::ptrdiff_t(i));
  }
  return out;
}

inline LightField4D convert_ycbcr_to_rgb(const LightField4D& ycc) {
  if (ycc.ext.C != 3) throw DataError("expected a 3-channel light field");
  LightField4D out(ycc.ext);
  for (std::size_t i = 0; i < ycc.data.size(); i += 3) {
    const auto rgb = ycbcr_to_rgb(ycc.data[i], ycc.data[i + 1], ycc.data[i + 2]);
    std::copy(rgb.begin(), rgb.end(), out.data.begin() + std::ptrdiff_t(i));
  }
  return out;
}

inline LightField4D extract_channel(const LightField4D& lf, std::size_t c) {
  if (c >= lf.ext.C) throw DataError("channel index out of range");
  LfExtents e = lf.ext;
  e.C = 1;
  LightField4D out(e);
  for (std::size_t i = 0; i < out.data.size(); ++i)
    out.data[i] = lf.data[i * lf.ext.C + c];
  return out;
}

inline void insert_channel(LightField4D& lf, const LightField4D& plane,
                           std::size_t c) {
  if (plane.ext.C != 1 || plane.data.size() * lf.ext.C != lf.data.size()) {
    throw DataError("insert_channel: extents differ");
  }
  for (std::size_t i = 0; i < plane.data.size(); ++i)
    lf.data[i * lf.ext.C + c] = plane.data[i];
}

// ---------------------------------------------------------------- synthesis

enum class TextureKind { checker, sinusoid, noise };
enum class MaskKind { full, rect, disk };

struct Texture {
  TextureKind kind = TextureKind::noise;
  // checker: square side; sinusoid: period in pixels; noise: box radius.
  double scale = 4.0;
  double angle = 0.0;  // sinusoid orientation in radians
  float low = 0.0f, high = 1.0f;
  std::uint64_t seed = 0;
};

struct Mask {
  MaskKind kind = MaskKind::full;
  // rect: [x0, x1) x [y0, y1); disk: center (x0, y0), radius x1. Center-view
  // coordinates.
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;

  bool covers(double x, double y) const {
    switch (kind) {
      case MaskKind::full: return true;
      case MaskKind::rect: return x >= x0 && x < x1 && y >= y0 && y < y1;
      case MaskKind::disk:
        return (x - x0) * (x - x0) + (y - y0) * (y - y0) < x1 * x1;
    }
    return false;
  }
};

struct SceneLayer {
  double disparity = 0.0;
  Texture texture;
  Mask mask;
};

struct SyntheticSceneSpec {
  std::size_t U = 5, V = 5, H = 64, W = 64;
  std::vector<SceneLayer> layers;
  std::uint64_t seed = 0;
};

struct SyntheticScene {
  LightField4D lf;         // C = 1
  LightField4D disparity;  // per-view disparity of the visible layer
};

namespace detail {

inline double lattice_noise(std::uint64_t seed, std::int64_t ix,
                            std::int64_t iy) {
  Rng r(seed ^ (static_cast<std::uint64_t>(ix) * 0x9e3779b97f4a7c15ull) ^
        (static_cast<std::uint64_t>(iy) * 0xc2b2ae3d27d4eb4full));
  r.next_u64();
  return r.uniform();
}

inline double smoothed_noise(std::uint64_t seed, std::int64_t ix,
                             std::int64_t iy, int radius) {
  double acc = 0;
  for (int dy = -radius; dy <= radius; ++dy)
    for (int dx = -radius; dx <= radius; ++dx)
      acc += lattice_noise(seed, ix + dx, iy + dy);
  const double n = double((2 * radius + 1) * (2 * radius + 1));
  return acc / n;
}

}  // namespace detail

/// Procedural texture value at continuous center-view coordinates.
inline float texture_value(const Texture& t, double x, double y) {
  double s = 0;  // in [0, 1]
  switch (t.kind) {
    case TextureKind::checker: {
      const auto cx = static_cast<std::int64_t>(std::floor(x / t.scale));
      const auto cy = static_cast<std::int64_t>(std::floor(y / t.scale));
      s = ((cx + cy) % 2 + 2) % 2 == 0 ? 0.0 : 1.0;
      break;
    }
    case TextureKind::sinusoid: {
      const double p = x * std::cos(t.angle) + y * std::sin(t.angle);
      s = 0.5 + 0.5 * std::sin(2.0 * 3.141592653589793 * p / t.scale);
      break;
    }
    case TextureKind::noise: {
      const int radius = std::max(0, static_cast<int>(t.scale));
      const double fx = std::floor(x), fy = std::floor(y);
      const double ax = x - fx, ay = y - fy;
      const auto ix = static_cast<std::int64_t>(fx);
      const auto iy = static_cast<std::int64_t>(fy);
      auto n = [&](std::int64_t dx, std::int64_t dy) {
        return detail::smoothed_noise(t.seed, ix + dx, iy + dy, radius);
      };
      // Bilinear weights are exactly 0 at integer coordinates, so integer
      // shifts reproduce lattice values bit for bit.
      s = n(0, 0);
      if (ax != 0.0 || ay != 0.0) {
        s = (1 - ay) * ((1 - ax) * n(0, 0) + ax * n(1, 0)) +
            ay * ((1 - ax) * n(0, 1) + ax * n(1, 1));
      }
      break;
    }
  }
  return static_cast<float>(t.low + (t.high - t.low) * s);
}

inline void validate(const SyntheticSceneSpec& spec) {
  if (spec.U == 0 || spec.V == 0 || spec.H == 0 || spec.W == 0) {
    throw DataError("scene extents must be >= 1");
  }
  if (spec.layers.empty()) throw DataError("scene has no layers");
  const double limit = double(std::min(spec.H, spec.W)) / 2.0;
  for (const auto& l : spec.layers) {
    if (std::abs(l.disparity) * double(std::max(spec.U, spec.V)) >= limit) {
      throw DataError("layer disparity " + std::to_string(l.disparity) +
                      " shifts content out of frame (|d| * max(U, V) must be "
                      "< min(H, W) / 2)");
    }
    const bool noise = l.texture.kind == TextureKind::noise;
    if (!(l.texture.scale > 0) && !(noise && l.texture.scale == 0)) {
      throw DataError("texture scale must be > 0 (noise radius >= 0)");
    }
  }
}

/// View (u, v) shows each layer shifted by (d (u - uc), d (v - vc)); the layer
/// with the largest disparity (nearest) that covers a pixel wins.
inline SyntheticScene synth_generate(const SyntheticSceneSpec& spec) {
  validate(spec);
  std::vector<const SceneLayer*> order;
  for (const auto& l : spec.layers) order.push_back(&l);
  std::stable_sort(order.begin(), order.end(),
                   [](const SceneLayer* a, const SceneLayer* b) {
                     return a->disparity > b->disparity;
                   });
  const LfExtents e{spec.U, spec.V, spec.H, spec.W, 1};
  SyntheticScene scene{LightField4D(e), LightField4D(e)};
  const double uc = double((spec.U - 1) / 2), vc = double((spec.V - 1) / 2);
  for (std::size_t u = 0; u < spec.U; ++u)
    for (std::size_t v = 0; v < spec.V; ++v)
      for (std::size_t y = 0; y < spec.H; ++y)
        for (std::size_t x = 0; x < spec.W; ++x) {
          for (const SceneLayer* l : order) {
            const double sx = double(x) - l->disparity * (double(u) - uc);
            const double sy = double(y) - l->disparity * (double(v) - vc);
            if (!l->mask.covers(sx, sy)) continue;
            scene.lf.at(u, v, y, x) = texture_value(l->texture, sx, sy);
            scene.disparity.at(u, v, y, x) = static_cast<float>(l->disparity);
            break;
          }
        }
  return scene;
}

inline std::string_view to_string(TextureKind k) {
  switch (k) {
    case TextureKind::checker: return "checker";
    case TextureKind::sinusoid: return "sinusoid";
    case TextureKind::noise: return "noise";
  }
  return "?";
}

inline TextureKind texture_kind_from_string(const std::string& s) {
  for (auto k : {TextureKind::checker, TextureKind::sinusoid, TextureKind::noise})
    if (to_string(k) == s) return k;
  throw DataError("unknown texture '" + s + "'");
}

/// Scene spec as key-value text:
///   U, V, H, W, seed, layers = n, layer.<i>.disparity, layer.<i>.texture,
///   layer.<i>.scale, layer.<i>.angle, layer.<i>.low, layer.<i>.high,
///   layer.<i>.mask = full | rect x0 y0 x1 y1 | disk cx cy r
inline SyntheticSceneSpec scene_spec_from_kv(const KeyValues& kv) {
  SyntheticSceneSpec spec;
  spec.U = kv.get_as<std::size_t>("U", spec.U);
  spec.V = kv.get_as<std::size_t>("V", spec.V);
  spec.H = kv.get_as<std::size_t>("H", spec.H);
  spec.W = kv.get_as<std::size_t>("W", spec.W);
  spec.seed = kv.get_as<std::uint64_t>("seed", 0);
  const auto n = kv.get_as<std::size_t>("layers");
  Rng rng(spec.seed);
  for (std::size_t i = 0; i < n; ++i) {
    const std::string p = "layer." + std::to_string(i) + ".";
    SceneLayer l;
    l.disparity = kv.get_as<double>(p + "disparity", 0.0);
    l.texture.kind = texture_kind_from_string(kv.get(p + "texture", "noise"));
    l.texture.scale = kv.get_as<double>(p + "scale", 4.0);
    l.texture.angle = kv.get_as<double>(p + "angle", 0.0);
    l.texture.low = kv.get_as<float>(p + "low", 0.0f);
    l.texture.high = kv.get_as<float>(p + "high", 1.0f);
    l.texture.seed = rng.next_u64();
    std::istringstream mask(kv.get(p + "mask", "full"));
    std::string kind;
    mask >> kind;
    if (kind == "full") {
      l.mask.kind = MaskKind::full;
    } else if (kind == "rect") {
      l.mask.kind = MaskKind::rect;
      mask >> l.mask.x0 >> l.mask.y0 >> l.mask.x1 >> l.mask.y1;
    } else if (kind == "disk") {
      l.mask.kind = MaskKind::disk;
      mask >> l.mask.x0 >> l.mask.y0 >> l.mask.x1;
    } else {
      throw DataError("key '" + p + "mask': unknown mask '" + kind + "'");
    }
    if (mask.fail()) throw DataError("key '" + p + "mask': malformed");
    spec.layers.push_back(l);
  }
  return spec;
}

/// Two or three layers: a full background plus occluding foreground shapes,
/// disparities drawn from {0, 0.5, ..., max_disparity}.
inline SyntheticSceneSpec random_scene_spec(Rng& rng, std::size_t U,
                                            std::size_t V, std::size_t H,
                                            std::size_t W,
                                            double max_disparity = 2.0) {
  SyntheticSceneSpec spec;
  spec.U = U;
  spec.V = V;
  spec.H = H;
  spec.W = W;
  spec.seed = rng.next_u64();
  const auto steps = static_cast<std::size_t>(max_disparity * 2.0);
  auto draw_disparity = [&] { return 0.5 * double(rng.below(steps + 1)); };
  auto draw_texture = [&] {
    Texture t;
    t.kind = static_cast<TextureKind>(rng.below(3));
    switch (t.kind) {
      case TextureKind::checker: t.scale = 2.0 + double(rng.below(6)); break;
      case TextureKind::sinusoid: t.scale = rng.uniform(3.0, 12.0); break;
      case TextureKind::noise: t.scale = 1.0 + double(rng.below(3)); break;
    }
    t.angle = rng.uniform(0.0, 3.141592653589793);
    t.low = static_cast<float>(rng.uniform(0.0, 0.4));
    t.high = static_cast<float>(rng.uniform(0.6, 1.0));
    t.seed = rng.next_u64();
    return t;
  };
  SceneLayer back{draw_disparity(), draw_texture(), Mask{}};
  spec.layers.push_back(back);
  const std::size_t extra = 1 + rng.below(2);
  for (std::size_t i = 0; i < extra; ++i) {
    SceneLayer l{draw_disparity(), draw_texture(), Mask{}};
    if (rng.below(2) == 0) {
      l.mask.kind = MaskKind::rect;
      l.mask.x0 = rng.uniform(0.0, W * 0.6);
      l.mask.y0 = rng.uniform(0.0, H * 0.6);
      l.mask.x1 = l.mask.x0 + rng.uniform(W * 0.2, W * 0.5);
      l.mask.y1 = l.mask.y0 + rng.uniform(H * 0.2, H * 0.5);
    } else {
      l.mask.kind = MaskKind::disk;
      l.mask.x0 = rng.uniform(W * 0.2, W * 0.8);
      l.mask.y0 = rng.uniform(H * 0.2, H * 0.8);
      l.mask.x1 = rng.uniform(std::min(H, W) * 0.1, std::min(H, W) * 0.35);
    }
    spec.layers.push_back(l);
  }
  return spec;
}

// ---------------------------------------------------------------- EPI checks

/// Every V-PEPI tile at (u, x) satisfies tile[y][v] == tile[y + d (v' - v)][v']
/// wherever both indices are in range; `d` must be an integer.
inline bool vepi_slope_holds(const LightField4D& lf, int d,
                             std::size_t channel = 0) {
  const LfExtents& e = lf.ext;
  const RepGrid g = to_rep(lf, RepKind::vpepi);
  for (std::size_t u = 0; u < e.U; ++u)
    for (std::size_t x = 0; x < e.W; ++x)
      for (std::size_t y = 0; y < e.H; ++y)
        for (std::size_t v = 0; v < e.V; ++v)
          for (std::size_t v2 = 0; v2 < e.V; ++v2) {
            const auto y2 = static_cast<std::ptrdiff_t>(y) +
                            d * (static_cast<std::ptrdiff_t>(v2) -
                                 static_cast<std::ptrdiff_t>(v));
            if (y2 < 0 || y2 >= static_cast<std::ptrdiff_t>(e.H)) continue;
            const auto a = g.data[g.index(0, u * e.H + y, x * e.V + v, channel)];
            const auto b = g.data[g.index(0, u * e.H + std::size_t(y2),
                                          x * e.V + v2, channel)];
            if (a != b) return false;
          }
  return true;
}

/// H-PEPI tiles at (v, y): tile[x][u] == tile[x + d (u' - u)][u'].
inline bool hepi_slope_holds(const LightField4D& lf, int d,
                             std::size_t channel = 0) {
  const LfExtents& e = lf.ext;
  const RepGrid g = to_rep(lf, RepKind::hpepi);
  for (std::size_t v = 0; v < e.V; ++v)
    for (std::size_t y = 0; y < e.H; ++y)
      for (std::size_t x = 0; x < e.W; ++x)
        for (std::size_t u = 0; u < e.U; ++u)
          for (std::size_t u2 = 0; u2 < e.U; ++u2) {
            const auto x2 = static_cast<std::ptrdiff_t>(x) +
                            d * (static_cast<std::ptrdiff_t>(u2) -
                                 static_cast<std::ptrdiff_t>(u));
            if (x2 < 0 || x2 >= static_cast<std::ptrdiff_t>(e.W)) continue;
            const auto a = g.data[g.index(0, v * e.W + x, y * e.U + u, channel)];
            const auto b = g.data[g.index(0, v * e.W + std::size_t(x2),
                                          y * e.U + u2, channel)];
            if (a != b) return false;
          }
  return true;
}

// ---------------------------------------------------------------- patches

struct PatchWindow {
  std::size_t y = 0, x = 0;
};

inline std::vector<std::size_t> window_starts(std::size_t extent,
                                              std::size_t size,
                                              std::size_t stride) {
  std::vector<std::size_t> starts;
  for (std::size_t s = 0;; s += stride) {
    const std::size_t clamped = std::min(s, extent - size);
    if (starts.empty() || starts.back() != clamped) starts.push_back(clamped);
    if (s + size >= extent) break;
  }
  return starts;
}

inline LightField4D crop(const LightField4D& lf, std::size_t y0,
                         std::size_t x0, std::size_t h, std::size_t w) {
  if (y0 + h > lf.ext.H || x0 + w > lf.ext.W) {
    throw DataError("crop window exceeds the light field");
  }
  LfExtents e = lf.ext;
  e.H = h;
  e.W = w;
  LightField4D out(e);
  for (std::size_t u = 0; u < e.U; ++u)
    for (std::size_t v = 0; v < e.V; ++v)
      for (std::size_t y = 0; y < h; ++y) {
        const auto src = lf.data.begin() +
                         std::ptrdiff_t(lf.index(u, v, y0 + y, x0));
        std::copy(src, src + std::ptrdiff_t(w * e.C),
                  out.data.begin() + std::ptrdiff_t(out.index(u, v, y, 0)));
      }
  return out;
}

/// Spatial windows shared by all views; the last window is clamped to the
/// border.
inline std::vector<LightField4D> extract_patches(const LightField4D& lf,
                                                 std::size_t size_h,
                                                 std::size_t size_w,
                                                 std::size_t stride) {
  if (size_h == 0 || size_w == 0 || stride == 0) {
    throw DataError("patch size and stride must be >= 1");
  }
  if (size_h > lf.ext.H || size_w > lf.ext.W) {
    throw DataError("patch " + std::to_string(size_h) + "x" +
                    std::to_string(size_w) + " exceeds spatial extent " +
                    std::to_string(lf.ext.H) + "x" + std::to_string(lf.ext.W));
  }
  std::vector<LightField4D> out;
  for (std::size_t y : window_starts(lf.ext.H, size_h, stride))
    for (std::size_t x : window_starts(lf.ext.W, size_w, stride))
      out.push_back(crop(lf, y, x, size_h, size_w));
  return out;
}

// ---------------------------------------------------------------- augment

enum class AugmentOp { hflip, vflip, rot90 };

inline std::string_view to_string(AugmentOp op) {
  switch (op) {
    case AugmentOp::hflip: return "hflip";
    case AugmentOp::vflip: return "vflip";
    case AugmentOp::rot90: return "rot90";
  }
  return "?";
}

/// hflip reverses x and u; vflip reverses y and v; rot90 maps
/// L'(u', v', y', x') = L(U-1-v', u', W-1-y', x') (angular and spatial
/// grids rotate together).
inline LightField4D augment(const LightField4D& lf, AugmentOp op) {
  const LfExtents& e = lf.ext;
  if (op == AugmentOp::rot90 && e.U != e.V) {
    throw DataError("rot90 needs a square angular grid, got " +
                    std::to_string(e.U) + "x" + std::to_string(e.V));
  }
  LfExtents oe = e;
  if (op == AugmentOp::rot90) std::swap(oe.H, oe.W);
  LightField4D out(oe);
  for (std::size_t u = 0; u < oe.U; ++u)
    for (std::size_t v = 0; v < oe.V; ++v)
      for (std::size_t y = 0; y < oe.H; ++y)
        for (std::size_t x = 0; x < oe.W; ++x) {
          std::size_t su = u, sv = v, sy = y, sx = x;
          switch (op) {
            case AugmentOp::hflip:
              su = e.U - 1 - u;
              sx = e.W - 1 - x;
              break;
            case AugmentOp::vflip:
              sv = e.V - 1 - v;
              sy = e.H - 1 - y;
              break;
            case AugmentOp::rot90:
              su = e.U - 1 - v;
              sv = u;
              sx = e.W - 1 - y;
              sy = x;
              break;
          }
          for (std::size_t c = 0; c < e.C; ++c)
            out.at(u, v, y, x, c) = lf.at(su, sv, sy, sx, c);
        }
  return out;
}

/// Spatial-only horizontal flip (breaks the light-field geometry; used as a
/// negative control).
inline LightField4D spatial_hflip(const LightField4D& lf) {
  LightField4D out(lf.ext);
  for (std::size_t u = 0; u < lf.ext.U; ++u)
    for (std::size_t v = 0; v < lf.ext.V; ++v)
      for (std::size_t y = 0; y < lf.ext.H; ++y)
        for (std::size_t x = 0; x < lf.ext.W; ++x)
          for (std::size_t c = 0; c < lf.ext.C; ++c)
            out.at(u, v, y, x, c) = lf.at(u, v, y, lf.ext.W - 1 - x, c);
  return out;
}

}  // namespace raslf

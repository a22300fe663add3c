#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "raslf/data_io.hpp"
#include "raslf/resample.hpp"
#include "test_util.hpp"

using namespace raslf;
using raslf::testing::temp_dir;

namespace {

LightField4D random_lf(LfExtents e, Rng& rng) {
  LightField4D lf(e);
  for (float& v : lf.data) v = static_cast<float>(rng.uniform(0.0, 1.0));
  return lf;
}

SyntheticSceneSpec plane_scene(double d, TextureKind kind,
                               std::size_t views = 5) {
  SyntheticSceneSpec s;
  s.U = s.V = views;
  s.H = s.W = 24;
  Texture t;
  t.kind = kind;
  t.scale = kind == TextureKind::noise ? 1.0 : 3.0;
  t.angle = 0.4;
  t.seed = 17;
  s.layers.push_back({d, t, Mask{}});
  return s;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST(Container, RoundTripIsBitwise) {
  Rng rng(1);
  const auto dir = temp_dir("container");
  for (ChannelTag tag : {ChannelTag::y, ChannelTag::rgb}) {
    const LightField4D lf =
        random_lf({2, 3, 4, 5, tag == ChannelTag::y ? 1u : 3u}, rng);
    const std::string path = (dir / "lf.bin").string();
    write_container(path, lf, tag);
    const LfFile back = read_container(path);
    EXPECT_EQ(back.lf, lf);
    EXPECT_EQ(back.tag, tag);
    write_container((dir / "again.bin").string(), back.lf, back.tag);
    EXPECT_EQ(slurp(path), slurp((dir / "again.bin").string()));
  }
}

TEST(Container, ClampsToUnitRange) {
  const auto dir = temp_dir("container_clamp");
  LightField4D lf({1, 1, 1, 3, 1});
  lf.data = {-0.5f, 0.5f, 1.5f};
  write_container((dir / "c.bin").string(), lf);
  EXPECT_EQ(read_container((dir / "c.bin").string()).lf.data,
            (std::vector<float>{0.0f, 0.5f, 1.0f}));
}

TEST(Container, RejectsBadInput) {
  const auto dir = temp_dir("container_bad");
  const std::string path = (dir / "c.bin").string();
  EXPECT_THROW(write_container(path, LightField4D({1, 1, 2, 2, 3}),
                               ChannelTag::y),
               DataError);
  write_container(path, LightField4D({1, 1, 2, 2, 1}));
  const std::string bytes = slurp(path);
  auto write = [&](const std::string& name, const std::string& content) {
    const std::string p = (dir / name).string();
    std::ofstream(p, std::ios::binary) << content;
    return p;
  };
  EXPECT_THROW(read_container(write("magic", "LF5D" + bytes.substr(4))),
               DataError);
  EXPECT_THROW(read_container(write("trunc", bytes.substr(0, bytes.size() - 1))),
               DataError);
  EXPECT_THROW(read_container(write("trail", bytes + "z")), DataError);
  std::string version = bytes;
  version[4] = 9;
  EXPECT_THROW(read_container(write("version", version)), DataError);
  EXPECT_THROW(read_container((dir / "nope").string()), DataError);
}

TEST(Pgm, SixteenBitRoundTrip) {
  const auto dir = temp_dir("pgm");
  LightField4D lf({2, 2, 3, 4, 1});
  for (std::size_t i = 0; i < lf.data.size(); ++i)
    lf.data[i] = static_cast<float>(double(i * 997 % 65536) / 65535.0);
  write_pgm_grid((dir / "views").string(), lf);
  EXPECT_TRUE(std::filesystem::exists(dir / "views" / "1_0.pgm"));
  EXPECT_EQ(read_pgm_grid((dir / "views").string()), lf);
  std::filesystem::remove(dir / "views" / "1_1.pgm");
  EXPECT_THROW(read_pgm_grid((dir / "views").string()), DataError);
}

TEST(Color, YCbCrRoundTrip) {
  Rng rng(2);
  const LightField4D rgb = random_lf({1, 2, 3, 3, 3}, rng);
  const LightField4D back = convert_ycbcr_to_rgb(convert_rgb_to_ycbcr(rgb));
  for (std::size_t i = 0; i < rgb.data.size(); ++i)
    EXPECT_NEAR(back.data[i], rgb.data[i], 1e-5);
  const auto y = rgb_to_ycbcr(1.0f, 1.0f, 1.0f);
  EXPECT_NEAR(y[0], 1.0f, 1e-6);
  EXPECT_NEAR(y[1], 0.5f, 1e-6);
  EXPECT_NEAR(y[2], 0.5f, 1e-6);
}

TEST(Color, ChannelExtractInsert) {
  Rng rng(3);
  LightField4D rgb = random_lf({1, 1, 2, 2, 3}, rng);
  LightField4D g = extract_channel(rgb, 1);
  EXPECT_EQ(g.ext.C, 1u);
  EXPECT_EQ(g.at(0, 0, 1, 1), rgb.at(0, 0, 1, 1, 1));
  for (float& v : g.data) v = 0.25f;
  insert_channel(rgb, g, 2);
  EXPECT_EQ(rgb.at(0, 0, 1, 0, 2), 0.25f);
  EXPECT_THROW(extract_channel(rgb, 3), DataError);
}

TEST(Synthetic, DisparityGroundTruthAndSlopes) {
  for (int d : {0, 1, 2})
    for (TextureKind kind :
         {TextureKind::checker, TextureKind::sinusoid, TextureKind::noise}) {
      const SyntheticScene s = synth_generate(plane_scene(d, kind));
      for (float v : s.disparity.data) ASSERT_EQ(v, float(d));
      EXPECT_TRUE(vepi_slope_holds(s.lf, d)) << d;
      EXPECT_TRUE(hepi_slope_holds(s.lf, d)) << d;
      if (d != 0) {
        EXPECT_FALSE(vepi_slope_holds(s.lf, d + 1));
        EXPECT_FALSE(hepi_slope_holds(spatial_hflip(s.lf), d));
      }
    }
}

TEST(Synthetic, CenterViewIsUnshifted) {
  const SyntheticSceneSpec spec = plane_scene(2, TextureKind::checker);
  const SyntheticScene s = synth_generate(spec);
  for (std::size_t y = 0; y < spec.H; ++y)
    for (std::size_t x = 0; x < spec.W; ++x)
      EXPECT_EQ(s.lf.at(2, 2, y, x),
                texture_value(spec.layers[0].texture, double(x), double(y)));
}

TEST(Synthetic, NearestLayerOccludes) {
  SyntheticSceneSpec spec = plane_scene(0, TextureKind::checker);
  SceneLayer front{1.0, Texture{TextureKind::checker, 2.0, 0, 0.9f, 0.9f, 1},
                   Mask{MaskKind::rect, 8, 8, 16, 16}};
  spec.layers.push_back(front);
  const SyntheticScene s = synth_generate(spec);
  EXPECT_EQ(s.disparity.at(2, 2, 10, 10), 1.0f);
  EXPECT_EQ(s.lf.at(2, 2, 10, 10), 0.9f);
  EXPECT_EQ(s.disparity.at(2, 2, 2, 2), 0.0f);
  // View u = 4 shifts the front layer two pixels to the right.
  EXPECT_EQ(s.disparity.at(4, 2, 10, 9), 0.0f);
  EXPECT_EQ(s.disparity.at(4, 2, 10, 10), 1.0f);
  EXPECT_EQ(s.disparity.at(4, 2, 10, 17), 1.0f);
  EXPECT_EQ(s.disparity.at(4, 2, 10, 18), 0.0f);
}

TEST(Synthetic, ValidationErrors) {
  SyntheticSceneSpec spec = plane_scene(3, TextureKind::checker);
  EXPECT_THROW(synth_generate(spec), DataError);
  spec = plane_scene(1, TextureKind::checker);
  spec.layers[0].texture.scale = 0;
  EXPECT_THROW(synth_generate(spec), DataError);
  spec.layers.clear();
  EXPECT_THROW(synth_generate(spec), DataError);
}

TEST(Synthetic, SceneSpecFromKeyValues) {
  const auto kv = KeyValues::parse(
      "U = 3\nV = 3\nH = 16\nW = 20\nseed = 4\nlayers = 2\n"
      "layer.0.disparity = 0\nlayer.0.texture = sinusoid\n"
      "layer.0.scale = 5\nlayer.1.disparity = 1.5\n"
      "layer.1.texture = checker\nlayer.1.mask = disk 10 8 3\n");
  const SyntheticSceneSpec spec = scene_spec_from_kv(kv);
  EXPECT_EQ(spec.W, 20u);
  ASSERT_EQ(spec.layers.size(), 2u);
  EXPECT_EQ(spec.layers[1].mask.kind, MaskKind::disk);
  EXPECT_EQ(spec.layers[1].mask.x1, 3.0);
  EXPECT_EQ(spec.layers[0].texture.kind, TextureKind::sinusoid);
  EXPECT_THROW(scene_spec_from_kv(KeyValues::parse(
                   "layers = 1\nlayer.0.texture = marble\n")),
               DataError);
  EXPECT_THROW(scene_spec_from_kv(
                   KeyValues::parse("layers = 1\nlayer.0.mask = oval 1\n")),
               DataError);
}

TEST(Synthetic, SampleSpecsParseAndGenerate) {
  const std::filesystem::path dir(RASLF_SAMPLES_DIR);
  std::size_t n = 0;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.path().extension() != ".kv") continue;
    const auto spec = scene_spec_from_kv(KeyValues::load(entry.path().string()));
    EXPECT_NO_THROW(synth_generate(spec)) << entry.path();
    ++n;
  }
  EXPECT_GT(n, 0u);
}

TEST(Synthetic, RandomSpecsAreDeterministicAndValid) {
  Rng a(5), b(5);
  for (int i = 0; i < 10; ++i) {
    const auto sa = random_scene_spec(a, 3, 3, 32, 32);
    const auto sb = random_scene_spec(b, 3, 3, 32, 32);
    EXPECT_EQ(synth_generate(sa).lf, synth_generate(sb).lf);
    for (const auto& l : sa.layers) {
      EXPECT_GE(l.disparity, 0.0);
      EXPECT_LE(l.disparity, 2.0);
    }
  }
}

TEST(Patches, WindowsCoverExtentWithClampedTail) {
  EXPECT_EQ(window_starts(10, 4, 4), (std::vector<std::size_t>{0, 4, 6}));
  EXPECT_EQ(window_starts(8, 4, 4), (std::vector<std::size_t>{0, 4}));
  EXPECT_EQ(window_starts(4, 4, 1), (std::vector<std::size_t>{0}));
  Rng rng(6);
  const LightField4D lf = random_lf({2, 2, 10, 8, 1}, rng);
  const auto patches = extract_patches(lf, 4, 4, 4);
  ASSERT_EQ(patches.size(), 6u);
  EXPECT_EQ(patches[5].at(1, 0, 0, 0), lf.at(1, 0, 6, 4));
  EXPECT_THROW(extract_patches(lf, 11, 4, 1), DataError);
  EXPECT_THROW(crop(lf, 8, 0, 4, 4), DataError);
}

TEST(Augment, PreservesEpiGeometry) {
  const SyntheticScene s = synth_generate(plane_scene(1, TextureKind::noise));
  for (AugmentOp op : {AugmentOp::hflip, AugmentOp::vflip, AugmentOp::rot90}) {
    const LightField4D a = augment(s.lf, op);
    EXPECT_TRUE(vepi_slope_holds(a, 1)) << to_string(op);
    EXPECT_TRUE(hepi_slope_holds(a, 1)) << to_string(op);
  }
  EXPECT_FALSE(vepi_slope_holds(spatial_hflip(augment(s.lf, AugmentOp::rot90)), 1) &&
               hepi_slope_holds(spatial_hflip(augment(s.lf, AugmentOp::rot90)), 1));
}

TEST(Augment, GroupIdentities) {
  Rng rng(7);
  const LightField4D lf = random_lf({3, 3, 4, 6, 2}, rng);
  EXPECT_EQ(augment(augment(lf, AugmentOp::hflip), AugmentOp::hflip), lf);
  EXPECT_EQ(augment(augment(lf, AugmentOp::vflip), AugmentOp::vflip), lf);
  LightField4D r = lf;
  for (int i = 0; i < 4; ++i) r = augment(r, AugmentOp::rot90);
  EXPECT_EQ(r, lf);
  EXPECT_EQ(augment(lf, AugmentOp::rot90).ext, (LfExtents{3, 3, 6, 4, 2}));
  EXPECT_THROW(augment(LightField4D({2, 3, 2, 2, 1}), AugmentOp::rot90),
               DataError);
}

TEST(Bicubic, KernelValues) {
  EXPECT_EQ(keys_kernel(0.0), 1.0);
  EXPECT_EQ(keys_kernel(1.0), 0.0);
  EXPECT_EQ(keys_kernel(2.0), 0.0);
  EXPECT_DOUBLE_EQ(keys_kernel(0.5), 0.5625);
  EXPECT_DOUBLE_EQ(keys_kernel(1.5), -0.0625);
  EXPECT_EQ(keys_kernel(-0.5), keys_kernel(0.5));
}

TEST(Bicubic, TablesSumToOneAndStayInRange) {
  for (std::size_t n : {1u, 2u, 5u, 16u})
    for (std::size_t a : {2u, 4u}) {
      for (const ResampleTable& t : {upsample_table(n, a)}) {
        ASSERT_EQ(t.out, n * a);
        for (std::size_t o = 0; o < t.out; ++o) {
          double s = 0;
          for (int k = 0; k < 4; ++k) {
            s += t.weight[o * 4 + k];
            EXPECT_LT(t.index[o * 4 + k], n);
          }
          EXPECT_NEAR(s, 1.0, 1e-12);
        }
      }
    }
  EXPECT_THROW(downsample_table(10, 4), DataError);
}

TEST(Bicubic, ConstantAndLinearFieldsArePreserved) {
  LightField4D c({1, 1, 6, 6, 1}, 0.375f);
  for (float v : bicubic_upsample(c, 4).data) EXPECT_NEAR(v, 0.375f, 1e-7);
  for (float v : bicubic_downsample(LightField4D({1, 1, 8, 8, 1}, 0.5f), 2).data)
    EXPECT_NEAR(v, 0.5f, 1e-7);
  // A linear ramp is reproduced away from the replicated border.
  LightField4D ramp({1, 1, 8, 8, 1});
  for (std::size_t y = 0; y < 8; ++y)
    for (std::size_t x = 0; x < 8; ++x) ramp.at(0, 0, y, x) = 0.05f * float(x);
  const LightField4D up = bicubic_upsample(ramp, 2);
  for (std::size_t x = 4; x < 12; ++x) {
    const double src = (double(x) + 0.5) / 2.0 - 0.5;
    EXPECT_NEAR(up.at(0, 0, 5, x), 0.05 * src, 1e-6);
  }
}

TEST(Bicubic, ResizeFactors) {
  LightField4D lf({1, 2, 8, 8, 3}, 0.5f);
  EXPECT_EQ(bicubic_resize(lf, 2.0).ext, (LfExtents{1, 2, 16, 16, 3}));
  EXPECT_EQ(bicubic_resize(lf, 0.25).ext, (LfExtents{1, 2, 2, 2, 3}));
  EXPECT_THROW(bicubic_resize(lf, 3.0), ConfigError);
}

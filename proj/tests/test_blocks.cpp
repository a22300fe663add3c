#include <gtest/gtest.h>

#include <cmath>

#include "raslf/blocks.hpp"
#include "raslf/grad_check.hpp"
#include "test_util.hpp"

using namespace raslf;
using raslf::testing::bitwise_equal;
using raslf::testing::fill_random;
using raslf::testing::random_tensor;

namespace {

StageDims small_dims(std::size_t c = 4) { return {c, c, 3, 1}; }

template <class T>
void randomize_all(ParameterList<T> ps, Rng& rng, double scale = 0.5) {
  for (auto* p : ps) fill_random(*p, rng, -scale, scale);
}

template <class T>
void randomize_stage(VssmStage<T>& s, Rng& rng) {
  s.initialize(rng);
  fill_random(s.out_proj.weight, rng, -0.5, 0.5);
}

template <class T>
std::vector<T> view_of(const Tensor<T>& f, std::size_t u, std::size_t v) {
  const LfExtents e = extents_of(f.shape());
  const std::size_t n = e.H * e.W * e.C;
  const auto begin = f.data().begin() + std::ptrdiff_t((u * e.V + v) * n);
  return {begin, begin + std::ptrdiff_t(n)};
}

}  // namespace

TEST(VssmStage, ZeroOutputProjectionIsIdentity) {
  Rng rng(1);
  for (RepKind kind : kAllRepKinds) {
    VssmStage<float> s("s", kind, ScanPathSet::four_path(), small_dims());
    s.initialize(rng);
    const auto f = random_tensor<float>({2, 3, 4, 5, 4}, rng);
    const auto out = s(f);
    EXPECT_EQ(out.shape(), f.shape());
    EXPECT_TRUE(bitwise_equal(out.data(), f.data())) << to_string(kind);
  }
}

TEST(VssmStage, ShapePreservingForEveryKindAndLayout) {
  Rng rng(2);
  for (RepKind kind : kAllRepKinds)
    for (EpiLayout layout :
         {EpiLayout::panoramic, EpiLayout::stacked, EpiLayout::isolated}) {
      VssmStage<float> s("s", kind, ScanPathSet::four_path(), small_dims(),
                         layout);
      randomize_stage(s, rng);
      const auto f = random_tensor<float>({3, 2, 5, 4, 4}, rng);
      EXPECT_EQ(s(f).shape(), f.shape());
    }
}

TEST(VssmStage, SingleViewMacPiIsPointwise) {
  // U = V = 1: every MacPI grid is 1x1, so each spatial site is processed on
  // its own as a 1-token sequence.
  Rng rng(3);
  VssmStage<double> s("s", RepKind::macpi, ScanPathSet::four_path(),
                      small_dims());
  randomize_stage(s, rng);
  const auto f = random_tensor<double>({1, 1, 3, 4, 4}, rng);
  const auto out = s(f);
  for (std::size_t y = 0; y < 3; ++y)
    for (std::size_t x = 0; x < 4; ++x) {
      std::vector<double> site(4);
      for (std::size_t c = 0; c < 4; ++c) site[c] = f[(y * 4 + x) * 4 + c];
      const auto one = s(Tensor<double>::from_data({1, 1, 1, 1, 4}, site));
      for (std::size_t c = 0; c < 4; ++c)
        EXPECT_NEAR(out[(y * 4 + x) * 4 + c], one[c], 1e-12);
    }
}

TEST(VssmStage, SaiStageIsEquivariantToViewPermutation) {
  Rng rng(4);
  VssmStage<float> s("s", RepKind::sai, ScanPathSet::sai(), small_dims());
  randomize_stage(s, rng);
  const auto f = random_tensor<float>({1, 2, 4, 4, 4}, rng);
  std::vector<float> sv(f.numel());
  const std::size_t n = 4 * 4 * 4;
  for (std::size_t i = 0; i < n; ++i) {
    sv[i] = f[n + i];
    sv[n + i] = f[i];
  }
  const auto out = s(f);
  const auto out_sw = s(Tensor<float>::from_data({1, 2, 4, 4, 4}, sv));
  EXPECT_EQ(view_of(out, 0, 0), view_of(out_sw, 0, 1));
  EXPECT_EQ(view_of(out, 0, 1), view_of(out_sw, 0, 0));
}

TEST(VssmStage, RejectsChannelMismatch) {
  VssmStage<float> s("s", RepKind::sai, ScanPathSet::sai(), small_dims());
  Rng rng(5);
  EXPECT_THROW(s(random_tensor<float>({1, 1, 2, 2, 3}, rng)), ShapeError);
}

TEST(VssmStage, ParameterCountMatchesCollectedScalars) {
  for (std::size_t paths = 1; paths <= 4; ++paths) {
    std::vector<ScanPath> p(kAllScanPaths.begin(),
                            kAllScanPaths.begin() + std::ptrdiff_t(paths));
    const StageDims d{6, 12, 5, 2};
    VssmStage<float> s("s", RepKind::sai, ScanPathSet(p), d);
    ParameterList<float> ps;
    s.collect(ps);
    EXPECT_EQ(count_scalars(ps), VssmStage<float>::parameter_count(d, paths));
  }
}

TEST(PgrBlock, FreshBlockIsIdentity) {
  Rng rng(6);
  PgrBlock<float> b("b", BlockPaths::full(), small_dims());
  b.initialize(rng);
  const auto f = random_tensor<float>({2, 2, 3, 3, 4}, rng);
  EXPECT_TRUE(bitwise_equal(b(f).data(), f.data()));
}

TEST(PgrBlock, PerturbingOneViewReachesOtherViews) {
  Rng rng(7);
  PgrBlock<double> b("b", BlockPaths::raas(), small_dims());
  b.initialize(rng);
  for (auto* s : b.stages()) randomize_stage(*s, rng);
  const auto f = random_tensor<double>({2, 2, 4, 4, 4}, rng);
  std::vector<double> g(f.data().begin(), f.data().end());
  // Channel 0 of view (0, 0) only; a shift shared by all channels would be
  // removed by the layer norm.
  for (std::size_t i = 0; i < 4 * 4 * 4; i += 4) g[i] += 0.25;
  const auto a = b(f);
  const auto c = b(Tensor<double>::from_data(f.shape(), g));
  const auto va = view_of(a, 1, 1), vc = view_of(c, 1, 1);
  double delta = 0;
  for (std::size_t i = 0; i < va.size(); ++i) delta += std::abs(va[i] - vc[i]);
  EXPECT_GT(delta, 1e-6);
}

TEST(PgrBlock, WithoutEpiEqualsSaiThenMac) {
  Rng rng(8);
  BlockOptions opt;
  opt.use_epi = false;
  PgrBlock<float> b("b", BlockPaths::raas(), small_dims(), opt);
  b.initialize(rng);
  for (auto* s : b.stages()) fill_random(s->out_proj.weight, rng, -0.5, 0.5);
  EXPECT_EQ(b.stages().size(), 2u);
  const auto f = random_tensor<float>({2, 2, 3, 3, 4}, rng);
  EXPECT_TRUE(bitwise_equal(b(f).data(), b.mac(b.sai(f)).data()));
}

TEST(PgrBlock, ParallelEpiSumsBranches) {
  Rng rng(9);
  BlockOptions opt;
  opt.epi_parallel = true;
  PgrBlock<double> b("b", BlockPaths::raas(), small_dims(), opt);
  b.initialize(rng);
  for (auto* s : b.stages()) fill_random(s->out_proj.weight, rng, -0.5, 0.5);
  const auto f = random_tensor<double>({2, 2, 3, 3, 4}, rng);
  const auto m = b.mac(b.sai(f));
  const auto h = b.hepi(m), v = b.vepi(m), out = b(f);
  for (std::size_t i = 0; i < out.numel(); ++i)
    EXPECT_NEAR(out[i], h[i] + v[i] - m[i], 1e-12);
}

TEST(DualAnchorAggregation, RequiresTwoBlocks) {
  EXPECT_THROW(DualAnchorAggregation<float>(1, 4), ConfigError);
}

TEST(DualAnchorAggregation, TwoBlocksHaveNoIntermediateTerms) {
  Rng rng(10);
  DualAnchorAggregation<double> daa(2, 3);
  daa.initialize(rng);
  daa.w_s[0].value()[0] = 0.7;
  daa.w_g[0].value()[0] = -1.3;
  const auto f1 = random_tensor<double>({1, 1, 2, 2, 3}, rng);
  const auto f2 = random_tensor<double>({1, 1, 2, 2, 3}, rng);
  const auto [fs, fg] = daa.anchors({f1, f2});
  for (std::size_t i = 0; i < f1.numel(); ++i) {
    EXPECT_DOUBLE_EQ(fs[i], 0.7 * f1[i]);
    EXPECT_DOUBLE_EQ(fg[i], -1.3 * f2[i]);
  }
}

TEST(DualAnchorAggregation, InitialAnchorsAreFirstAndLast) {
  Rng rng(11);
  DualAnchorAggregation<float> daa(4, 3);
  daa.initialize(rng);
  EXPECT_EQ(daa.w_s.size(), 3u);
  EXPECT_EQ(daa.w_g.size(), 3u);
  std::vector<Tensor<float>> feats;
  for (int k = 0; k < 4; ++k)
    feats.push_back(random_tensor<float>({1, 2, 2, 2, 3}, rng));
  const auto [fs, fg] = daa.anchors(feats);
  EXPECT_TRUE(bitwise_equal(fs.data(), feats[0].data()));
  EXPECT_TRUE(bitwise_equal(fg.data(), feats[3].data()));
  const auto agg = daa(feats);
  const auto direct =
      daa.fc2(ops::silu(daa.fc1(ops::concat<float>({feats[0], feats[3]}, 4))));
  EXPECT_TRUE(bitwise_equal(agg.data(), direct.data()));
  EXPECT_EQ(agg.shape(), feats[0].shape());
}

TEST(DualAnchorAggregation, AnchorsAreLinearInWeights) {
  Rng rng(12);
  DualAnchorAggregation<double> daa(4, 2);
  daa.initialize(rng);
  for (auto& w : daa.w_s) fill_random(w, rng);
  for (auto& w : daa.w_g) fill_random(w, rng);
  std::vector<Tensor<double>> feats;
  for (int k = 0; k < 4; ++k)
    feats.push_back(random_tensor<double>({1, 1, 2, 2, 2}, rng));
  const auto [s1, g1] = daa.anchors(feats);
  for (auto& w : daa.w_s) w.value()[0] *= 2;
  for (auto& w : daa.w_g) w.value()[0] *= 2;
  const auto [s2, g2] = daa.anchors(feats);
  for (std::size_t i = 0; i < s1.numel(); ++i) {
    EXPECT_NEAR(s2[i], 2 * s1[i], 1e-12);
    EXPECT_NEAR(g2[i], 2 * g1[i], 1e-12);
  }
}

TEST(DualAnchorAggregation, WeightGradientsMatchFiniteDifferences) {
  Rng rng(13);
  DualAnchorAggregation<double> daa(3, 2);
  daa.initialize(rng);
  for (auto& w : daa.w_s) fill_random(w, rng);
  for (auto& w : daa.w_g) fill_random(w, rng);
  std::vector<Tensor<double>> feats;
  for (int k = 0; k < 3; ++k)
    feats.push_back(random_tensor<double>({1, 1, 3, 3, 2}, rng));
  const auto target = random_tensor<double>({1, 1, 3, 3, 2}, rng);
  ParameterList<double> weights;
  for (auto& w : daa.w_s) weights.push_back(&w);
  for (auto& w : daa.w_g) weights.push_back(&w);
  const auto report = grad_check<double>(
      [&] { return ops::mean(ops::abs(ops::sub(daa(feats), target))); },
      weights, 1e-3);
  EXPECT_TRUE(report.passed) << report.worst_parameter << " "
                             << report.max_relative_error;
}

TEST(ConcatAggregation, MixesAllFeatures) {
  Rng rng(14);
  ConcatAggregation<float> agg(3, 2);
  agg.initialize(rng);
  std::vector<Tensor<float>> feats;
  for (int k = 0; k < 3; ++k)
    feats.push_back(random_tensor<float>({1, 1, 2, 2, 2}, rng));
  EXPECT_EQ(agg(feats).shape(), feats[0].shape());
  EXPECT_THROW(agg({feats[0]}), ConfigError);
  ParameterList<float> ps;
  agg.collect(ps);
  EXPECT_EQ(count_scalars(ps), ConcatAggregation<float>::parameter_count(3, 2));
}

TEST(AngularEmbedding, AddsPerViewOffset) {
  Rng rng(15);
  AngularEmbedding<float> emb(2, 3, 2);
  fill_random(emb.table, rng);
  const auto f = random_tensor<float>({2, 3, 2, 2, 2}, rng);
  const auto out = emb(f);
  for (std::size_t u = 0; u < 2; ++u)
    for (std::size_t v = 0; v < 3; ++v)
      for (std::size_t s = 0; s < 4; ++s)
        for (std::size_t c = 0; c < 2; ++c) {
          const std::size_t i = (((u * 3 + v) * 4) + s) * 2 + c;
          EXPECT_EQ(out[i], f[i] + emb.table.value()[(u * 3 + v) * 2 + c]);
        }
  EXPECT_THROW(emb(random_tensor<float>({3, 3, 2, 2, 2}, rng)), ShapeError);
}

TEST(Upsampler, ShapeContract) {
  Rng rng(16);
  Upsampler<float> up(4, 2);
  up.initialize(rng);
  EXPECT_EQ(up(random_tensor<float>({1, 1, 4, 4, 4}, rng)).shape(),
            (Shape{1, 1, 8, 8, 1}));
  Upsampler<float> up4(4, 4);
  EXPECT_EQ(up4(random_tensor<float>({2, 1, 3, 2, 4}, rng)).shape(),
            (Shape{2, 1, 12, 8, 1}));
}

TEST(Upsampler, ZeroFeatureGivesZeroResidual) {
  Rng rng(17);
  Upsampler<float> up(3, 2);
  up.initialize(rng);
  fill_random(up.project.weight, rng);
  const auto r = up(Tensor<float>::zeros({2, 2, 3, 3, 3}));
  for (float v : r.data()) EXPECT_EQ(v, 0.0f);
}

TEST(Upsampler, RejectsUnsupportedScale) {
  EXPECT_THROW(Upsampler<float>(4, 3), ConfigError);
}

TEST(Upsampler, ShufflePlacementThroughIdentityConvs) {
  // expand = identity copy of channel 0 into all four sub-pixels scaled by
  // (1 + sub-pixel index); project = identity on channel 0.
  Upsampler<double> up(1, 2);
  auto w = up.expand.weight.value();
  for (std::size_t o = 0; o < 4; ++o) w[o * 9 + 4] = double(o + 1);
  up.project.weight.value()[4] = 1.0;
  const auto x = Tensor<double>::from_data({1, 1, 2, 2, 1}, {1, 2, 3, 4});
  const auto r = up(x);
  for (std::size_t h = 0; h < 2; ++h)
    for (std::size_t wi = 0; wi < 2; ++wi)
      for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < 2; ++j) {
          const double expect = x[h * 2 + wi] * double(i * 2 + j + 1);
          EXPECT_DOUBLE_EQ(r[(h * 2 + i) * 4 + wi * 2 + j], expect);
        }
}

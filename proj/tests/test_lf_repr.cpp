#include <gtest/gtest.h>

#include <set>
#include <tuple>

#include "raslf/lf_repr.hpp"
#include "test_util.hpp"

using namespace raslf;

namespace {

LightField4D random_lf(LfExtents e, Rng& rng) {
  LightField4D lf(e);
  for (float& v : lf.data) v = static_cast<float>(rng.uniform());
  return lf;
}

// Source index encoded as the value so positions can be read back.
LightField4D index_lf(LfExtents e) {
  LightField4D lf(e);
  for (std::size_t i = 0; i < lf.data.size(); ++i) lf.data[i] = float(i);
  return lf;
}

const EpiLayout kLayouts[] = {EpiLayout::panoramic, EpiLayout::stacked,
                              EpiLayout::isolated};

}  // namespace

TEST(LfRepr, VpepiPositionExample) {
  const LfExtents e{2, 2, 2, 2, 1};
  const RepPosition p = rep_position(RepKind::vpepi, e, 1, 0, 0, 1);
  EXPECT_EQ(p, (RepPosition{0, 2, 2}));
}

TEST(LfRepr, RepShapes) {
  const LfExtents e{5, 4, 3, 2, 1};
  auto dims = [&](RepKind k) {
    const RepDims d = rep_dims(k, e);
    return std::tuple{d.batch, d.rows, d.cols};
  };
  EXPECT_EQ(dims(RepKind::sai), std::tuple(20u, 3u, 2u));
  EXPECT_EQ(dims(RepKind::macpi), std::tuple(6u, 4u, 5u));
  EXPECT_EQ(dims(RepKind::vpepi), std::tuple(1u, 15u, 8u));
  EXPECT_EQ(dims(RepKind::hpepi), std::tuple(1u, 8u, 15u));
}

TEST(LfRepr, EveryKindIsAPermutationOfIndices) {
  Rng rng(11);
  const LfExtents e{3, 3, 4, 4, 2};
  const LightField4D lf = index_lf(e);
  for (RepKind k : kAllRepKinds)
    for (EpiLayout layout : kLayouts) {
      const RepGrid g = to_rep(lf, k, layout);
      ASSERT_EQ(g.batch * g.rows * g.cols * g.channels, e.count());
      std::set<float> seen(g.data.begin(), g.data.end());
      EXPECT_EQ(seen.size(), e.count()) << to_string(k);
      EXPECT_EQ(*seen.rbegin(), float(e.count() - 1));
    }
  (void)rng;
}

TEST(LfRepr, RoundTripAllKinds) {
  Rng rng(12);
  const LfExtents e{2, 2, 3, 3, 4};
  const LightField4D lf = random_lf(e, rng);
  for (RepKind k : kAllRepKinds)
    for (EpiLayout layout : kLayouts)
      EXPECT_EQ(from_rep(to_rep(lf, k, layout), k, e), lf) << to_string(k);
}

TEST(LfRepr, DegenerateAngularGrid) {
  Rng rng(13);
  const LfExtents e{1, 1, 4, 3, 2};
  const LightField4D lf = random_lf(e, rng);
  const RepGrid g = to_rep(lf, RepKind::macpi);
  EXPECT_EQ(g.rows, 1u);
  EXPECT_EQ(g.cols, 1u);
  EXPECT_EQ(from_rep(g, RepKind::macpi, e), lf);
}

TEST(LfRepr, ZeroGridGivesZeroField) {
  const LfExtents e{2, 3, 2, 2, 1};
  RepGrid g = to_rep(LightField4D(e, 1.0f), RepKind::vpepi);
  std::fill(g.data.begin(), g.data.end(), 0.0f);
  const LightField4D lf = from_rep(g, RepKind::vpepi, e);
  for (float v : lf.data) EXPECT_EQ(v, 0.0f);
}

TEST(LfRepr, FromRepRejectsMismatches) {
  const LfExtents e{2, 2, 2, 2, 1};
  const RepGrid g = to_rep(LightField4D(e), RepKind::sai);
  EXPECT_THROW(from_rep(g, RepKind::macpi, e), ShapeError);
  EXPECT_THROW(from_rep(g, RepKind::sai, LfExtents{2, 2, 2, 3, 1}),
               ShapeError);
}

TEST(LfRepr, ExtentOverflowFails) {
  const std::size_t big = std::size_t(1) << 20;
  EXPECT_THROW((LfExtents{big, big, big, big, 1}.count()), ShapeError);
  EXPECT_THROW((LfExtents{0, 1, 1, 1, 1}.count()), ShapeError);
}

TEST(LfRepr, TensorTransformsMatchIndexMaps) {
  Rng rng(14);
  const LfExtents e{3, 2, 4, 3, 2};
  const LightField4D lf = random_lf(e, rng);
  auto t = Tensor<float>::from_data(e.shape(), lf.data);
  for (RepKind k : kAllRepKinds)
    for (EpiLayout layout : kLayouts) {
      const RepGrid g = to_rep(lf, k, layout);
      const Tensor<float> tg = to_rep(t, k, layout);
      ASSERT_EQ(tg.shape(), (Shape{g.batch, g.rows, g.cols, g.channels}));
      EXPECT_TRUE(raslf::testing::bitwise_equal<float>(tg.data(), g.data));
      const Tensor<float> back = from_rep(tg, k, e, layout);
      EXPECT_TRUE(raslf::testing::bitwise_equal<float>(back.data(), lf.data));
    }
}

TEST(LfRepr, ParseNames) {
  EXPECT_EQ(rep_kind_from_string("MacPI"), RepKind::macpi);
  EXPECT_EQ(scan_path_from_string("ColBwd"), ScanPath::col_bwd);
  EXPECT_EQ(epi_layout_from_string("stacked"), EpiLayout::stacked);
  EXPECT_THROW(scan_path_from_string("Diag"), ConfigError);
}

TEST(Flatten, TwoByTwoOrders) {
  RepGrid g{RepKind::sai, EpiLayout::panoramic, 1, 2, 2, 1, {1, 2, 3, 4}};
  EXPECT_EQ(flatten(g, ScanPath::row_fwd), (std::vector<float>{1, 2, 3, 4}));
  EXPECT_EQ(flatten(g, ScanPath::col_fwd), (std::vector<float>{1, 3, 2, 4}));
  EXPECT_EQ(flatten(g, ScanPath::row_bwd), (std::vector<float>{4, 3, 2, 1}));
  EXPECT_EQ(flatten(g, ScanPath::col_bwd), (std::vector<float>{4, 2, 3, 1}));
}

TEST(Flatten, HpepiRowTokensVaryAngularFirst) {
  const LfExtents e{3, 2, 4, 5, 1};
  const LightField4D lf = index_lf(e);
  const RepGrid g = to_rep(lf, RepKind::hpepi);
  const std::vector<float> seq = flatten(g, ScanPath::row_fwd);
  const std::size_t per_row = g.cols;
  for (std::size_t row = 0; row < g.rows; ++row) {
    // Decode the first U tokens of this row back to (u, v, y, x).
    std::set<std::size_t> us;
    std::set<std::tuple<std::size_t, std::size_t, std::size_t>> rest;
    for (std::size_t s = 0; s < e.U; ++s) {
      std::size_t idx = static_cast<std::size_t>(seq[row * per_row + s]);
      const std::size_t x = idx % e.W;
      idx /= e.W;
      const std::size_t y = idx % e.H;
      idx /= e.H;
      const std::size_t v = idx % e.V;
      const std::size_t u = idx / e.V;
      us.insert(u);
      rest.insert({v, y, x});
    }
    EXPECT_EQ(us.size(), e.U);
    EXPECT_EQ(rest.size(), 1u);
  }
}

TEST(Flatten, RoundTripAndReversal) {
  Rng rng(15);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t rows = 1 + rng.below(8), cols = 1 + rng.below(8);
    const std::size_t batch = 1 + rng.below(3), ch = 1 + rng.below(3);
    RepGrid g{RepKind::sai, EpiLayout::panoramic, batch, rows, cols, ch,
              std::vector<float>(batch * rows * cols * ch)};
    for (float& v : g.data) v = static_cast<float>(rng.uniform());
    for (ScanPath p : kAllScanPaths) {
      const RepGrid back = unflatten(flatten(g, p), p, g);
      EXPECT_EQ(back.data, g.data);
    }
    for (auto [fwd, bwd] : {std::pair{ScanPath::row_fwd, ScanPath::row_bwd},
                            std::pair{ScanPath::col_fwd, ScanPath::col_bwd}}) {
      const auto f = flatten(g, fwd), b = flatten(g, bwd);
      const std::size_t len = rows * cols;
      for (std::size_t bi = 0; bi < batch; ++bi)
        for (std::size_t s = 0; s < len; ++s)
          for (std::size_t c = 0; c < ch; ++c)
            ASSERT_EQ(b[(bi * len + s) * ch + c],
                      f[(bi * len + len - 1 - s) * ch + c]);
    }
  }
}

TEST(Flatten, TensorFormMatchesForwardOrder) {
  Rng rng(16);
  RepGrid g{RepKind::sai, EpiLayout::panoramic, 2, 3, 4, 2,
            std::vector<float>(48)};
  for (float& v : g.data) v = static_cast<float>(rng.uniform());
  auto t = Tensor<float>::from_data({2, 3, 4, 2}, g.data);
  for (ScanPath p : {ScanPath::row_fwd, ScanPath::col_fwd}) {
    const auto seq = flatten_grid(t, p);
    EXPECT_TRUE(raslf::testing::bitwise_equal<float>(seq.data(), flatten(g, p)));
    const auto back = unflatten_grid(seq, p, t.shape());
    EXPECT_TRUE(raslf::testing::bitwise_equal(back.data(), t.data()));
  }
}

#include <gtest/gtest.h>

#include <cmath>

#include "raslf/selective_scan.hpp"
#include "test_util.hpp"

using namespace raslf;
using raslf::testing::random_tensor;

namespace {

template <class T>
SsmDirectionParams<T> random_params(std::size_t ci, std::size_t n,
                                    std::size_t r, Rng& rng) {
  SsmDirectionParams<T> p("scan", ci, n, r);
  p.initialize(rng);
  // Move away from the identity-ish initialization so every term matters.
  for (auto& v : p.d.value()) v = static_cast<T>(rng.uniform(-1, 1));
  for (auto& v : p.a_log.value()) v = static_cast<T>(rng.uniform(-1, 1.5));
  return p;
}

std::vector<double> to_double(std::span<const float> v) {
  return {v.begin(), v.end()};
}

}  // namespace

TEST(ScanReference, HandEvaluatedScalarRecurrence) {
  // delta = ln 2 (bias 0, no data term), A = -1 so decay = 0.5; B = 1/ln 2 so
  // delta * B = 1; C = 1; D = 0.
  SsmDirectionParams<double> p("s", 1, 1, 1);
  p.x_proj.value()[0] = 0.0;
  p.x_proj.value()[1] = 1.0 / std::log(2.0);
  p.x_proj.value()[2] = 1.0;
  p.dt_proj.value()[0] = 0.0;
  p.dt_bias.value()[0] = 0.0;
  p.a_log.value()[0] = 0.0;
  p.d.value()[0] = 0.0;
  // softplus(0) = ln 2.
  const auto y = scan_reference(std::vector<double>{1, 1, 1}, p);
  EXPECT_NEAR(y[0], 1.0, 1e-12);
  EXPECT_NEAR(y[1], 1.5, 1e-12);
  EXPECT_NEAR(y[2], 1.75, 1e-12);
  auto x = Tensor<double>::from_data({1, 3, 1}, {1, 1, 1});
  const auto fast = scan(x, p);
  for (int t = 0; t < 3; ++t) EXPECT_NEAR(fast[t], y[t], 1e-12);
}

TEST(ScanReference, ZeroInputProjectionGivesSkipOnly) {
  Rng rng(21);
  auto p = random_params<float>(4, 3, 1, rng);
  // B columns frozen to zero.
  const std::size_t P = 1 + 2 * 3;
  for (std::size_t c = 0; c < 4; ++c)
    for (std::size_t n = 0; n < 3; ++n) p.x_proj.value()[c * P + 1 + n] = 0;
  std::fill(p.d.value().begin(), p.d.value().end(), 1.0f);
  auto x = random_tensor<float>({2, 9, 4}, rng);
  const auto y = scan(x, p);
  EXPECT_TRUE(raslf::testing::bitwise_equal(y.data(), x.data()));
  const auto yr = scan_reference(to_double(x.data().subspan(0, 36)), p);
  for (std::size_t i = 0; i < 36; ++i) EXPECT_EQ(yr[i], double(x[i]));
}

TEST(ScanReference, SingleStepClosedForm) {
  Rng rng(22);
  auto p = random_params<double>(3, 2, 1, rng);
  std::vector<double> x{0.3, -0.7, 1.1};
  const auto y = scan_reference(x, p);
  const std::size_t P = 5;
  std::vector<double> proj(P, 0.0);
  for (std::size_t j = 0; j < P; ++j)
    for (std::size_t c = 0; c < 3; ++c)
      proj[j] += x[c] * p.x_proj.value()[c * P + j];
  for (std::size_t c = 0; c < 3; ++c) {
    const double delta = std::log1p(
        std::exp(proj[0] * p.dt_proj.value()[c] + p.dt_bias.value()[c]));
    double expect = p.d.value()[c] * x[c];
    for (std::size_t n = 0; n < 2; ++n)
      expect += proj[3 + n] * delta * proj[1 + n] * x[c];
    EXPECT_NEAR(y[c], expect, 1e-12);
  }
  auto fast = scan(Tensor<double>::from_data({1, 1, 3}, x), p);
  for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(fast[c], y[c], 1e-14);
}

TEST(ScanReference, NonFiniteNamesPosition) {
  SsmDirectionParams<double> p("s", 1, 1, 1);
  p.a_log.value()[0] = -800.0;  // A ~ 0: no decay
  p.x_proj.value()[1] = 1e300;
  p.x_proj.value()[2] = 1e300;
  try {
    scan_reference(std::vector<double>{1, 1}, p);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("t=0"), std::string::npos) << msg;
    EXPECT_NE(msg.find("c=0"), std::string::npos);
    EXPECT_NE(msg.find("n=0"), std::string::npos);
  }
  EXPECT_THROW(scan_reference(std::vector<double>{}, p), ShapeError);
}

TEST(Scan, MatchesReferenceOnRandomInstance) {
  Rng rng(23);
  auto p = random_params<float>(8, 4, 1, rng);
  auto x = random_tensor<float>({1, 64, 8}, rng);
  const auto y = scan(x, p);
  const auto ref = scan_reference(to_double(x.data()), p);
  for (std::size_t i = 0; i < ref.size(); ++i) {
    EXPECT_LE(std::abs(y[i] - ref[i]), 1e-5 * std::max(std::abs(ref[i]), 1.0))
        << i;
  }
}

TEST(Scan, ReverseEqualsForwardOnReversedSequence) {
  Rng rng(24);
  auto p = random_params<double>(3, 4, 1, rng);
  auto x = random_tensor<double>({2, 7, 3}, rng);
  std::vector<double> rev(x.numel());
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t t = 0; t < 7; ++t)
      for (std::size_t c = 0; c < 3; ++c)
        rev[(b * 7 + t) * 3 + c] = x[(b * 7 + 6 - t) * 3 + c];
  const auto yr = scan(x, p, true);
  const auto yf = scan(Tensor<double>::from_data({2, 7, 3}, rev), p);
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t t = 0; t < 7; ++t)
      for (std::size_t c = 0; c < 3; ++c)
        EXPECT_EQ(yr[(b * 7 + t) * 3 + c], yf[(b * 7 + 6 - t) * 3 + c]);
}

TEST(Scan, Causality) {
  Rng rng(25);
  auto p = random_params<double>(4, 3, 1, rng);
  auto x = random_tensor<double>({1, 20, 4}, rng);
  std::vector<double> pert(x.data().begin(), x.data().end());
  const std::size_t t = 11;
  for (std::size_t c = 0; c < 4; ++c) pert[(t + 1) * 4 + c] += 0.5;
  const auto a = scan(x, p);
  const auto b = scan(Tensor<double>::from_data({1, 20, 4}, pert), p);
  for (std::size_t i = 0; i < (t + 1) * 4; ++i) EXPECT_EQ(a[i], b[i]);
  bool changed = false;
  for (std::size_t i = (t + 1) * 4; i < 80; ++i) changed |= a[i] != b[i];
  EXPECT_TRUE(changed);
}

TEST(Scan, WorkIsLinearInLength) {
  Rng rng(26);
  auto p = random_params<float>(8, 4, 1, rng);
  auto count = [&](std::size_t L) {
    FlopCounter fc;
    scan(random_tensor<float>({1, L, 8}, rng), p);
    return double(fc.total());
  };
  const double ratio = count(256) / count(128);
  EXPECT_NEAR(ratio, 2.0, 0.1);
}

TEST(Scan, ShapeErrors) {
  Rng rng(27);
  auto p = random_params<float>(4, 2, 1, rng);
  EXPECT_THROW(scan(Tensor<float>::zeros({1, 5, 3}), p), ShapeError);
  EXPECT_THROW(scan(Tensor<float>::zeros({5, 4}), p), ShapeError);
  EXPECT_THROW(SsmDirectionParams<float>("x", 4, 0, 1), ConfigError);
}

TEST(ScanPathSet, PresetsAndParsing) {
  using P = ScanPath;
  EXPECT_EQ(ScanPathSet::sai(), (ScanPathSet{P::row_fwd, P::col_fwd}));
  EXPECT_EQ(ScanPathSet::macpi().size(), 4u);
  EXPECT_EQ(ScanPathSet::hepi(), (ScanPathSet{P::row_fwd}));
  EXPECT_EQ(ScanPathSet::vepi(), (ScanPathSet{P::col_fwd}));
  EXPECT_EQ(ScanPathSet::parse("RowFwd, ColBwd").to_string(), "RowFwd,ColBwd");
  EXPECT_THROW(ScanPathSet::parse(""), ConfigError);
  EXPECT_THROW(ScanPathSet::parse("RowFwd,RowFwd"), ConfigError);
  EXPECT_THROW(ScanPathSet::parse("RowFwd,Up"), ConfigError);
  EXPECT_TRUE(ScanPathSet::sai().subset_of(ScanPathSet::four_path()));
  EXPECT_FALSE(ScanPathSet::four_path().subset_of(ScanPathSet::sai()));
}

TEST(Ss2d, SingleRowGridIsOneDimensionalScan) {
  Rng rng(28);
  Ss2d<double> bundle("ss", {ScanPath::row_fwd}, 3, 2, 1);
  bundle.initialize(rng);
  auto grid = random_tensor<double>({1, 1, 9, 3}, rng);
  const auto y = ss2d(grid, bundle);
  const auto direct =
      scan(ops::reshape(grid, {1, 9, 3}), bundle.branches[0].params);
  EXPECT_TRUE(raslf::testing::bitwise_equal(y.data(), direct.data()));
}

TEST(Ss2d, ZeroInputGivesZeroOutput) {
  Rng rng(29);
  Ss2d<float> bundle("ss", ScanPathSet::four_path(), 4, 3, 1);
  bundle.initialize(rng);
  const auto y = ss2d(Tensor<float>::zeros({2, 3, 5, 4}), bundle);
  for (float v : y.data()) EXPECT_EQ(v, 0.0f);
}

TEST(Ss2d, FourPathEqualsSumOfSinglePaths) {
  Rng rng(30);
  Ss2d<double> bundle("ss", ScanPathSet::four_path(), 3, 2, 1);
  bundle.initialize(rng);
  auto grid = random_tensor<double>({2, 4, 3, 3}, rng);
  const auto full = ss2d(grid, bundle);
  std::vector<double> acc(full.numel(), 0.0);
  for (const auto& b : bundle.branches) {
    const auto single = ss2d(grid, ScanPathSet{b.path}, {b.params});
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += single[i];
  }
  for (std::size_t i = 0; i < acc.size(); ++i)
    EXPECT_NEAR(full[i], acc[i], 1e-12);
}

TEST(Ss2d, CountMismatchFails) {
  Rng rng(31);
  SsmDirectionParams<float> p("p", 2, 2, 1);
  EXPECT_THROW(ss2d(Tensor<float>::zeros({1, 2, 2, 2}),
                    ScanPathSet::sai(), {p}),
               ConfigError);
}

TEST(PrunePaths, ZeroSubstitutionOracle) {
  Rng rng(32);
  Ss2d<float> full("ss", ScanPathSet::four_path(), 4, 3, 1);
  full.initialize(rng);
  auto grid = random_tensor<float>({2, 5, 4, 4}, rng);
  const Ss2d<float> pruned = prune_paths(full, ScanPathSet::sai());
  Ss2d<float> zeroed = full;
  zeroed.zeroed = {ScanPath::row_bwd, ScanPath::col_bwd};
  const auto a = ss2d(grid, pruned);
  const auto b = ss2d(grid, zeroed);
  double worst = 0;
  for (std::size_t i = 0; i < a.numel(); ++i)
    worst = std::max(worst, double(std::abs(a[i] - b[i])));
  EXPECT_LT(worst, 1e-6);
}

TEST(PrunePaths, IdenticalSetAndBookkeeping) {
  Rng rng(33);
  Ss2d<float> full("ss", ScanPathSet::four_path(), 4, 3, 1);
  full.initialize(rng);
  const Ss2d<float> same = prune_paths(full, ScanPathSet::four_path());
  auto grid = random_tensor<float>({1, 3, 3, 4}, rng);
  EXPECT_TRUE(raslf::testing::bitwise_equal(ss2d(grid, same).data(),
                                            ss2d(grid, full).data()));
  auto count = [](Ss2d<float> b) {
    ParameterList<float> ps;
    b.collect(ps);
    return count_scalars(ps);
  };
  const std::size_t per = SsmDirectionParams<float>::parameter_count(4, 3, 1);
  EXPECT_EQ(count(full), 4 * per);
  EXPECT_EQ(count(prune_paths(full, ScanPathSet::hepi())), per);
  EXPECT_THROW(prune_paths(prune_paths(full, ScanPathSet::sai()),
                           ScanPathSet::macpi()),
               ConfigError);
  EXPECT_THROW(prune_paths(full, ScanPathSet{}), ConfigError);
}

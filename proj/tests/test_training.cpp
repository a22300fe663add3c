#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "raslf/training.hpp"
#include "test_util.hpp"

using namespace raslf;
using raslf::testing::temp_dir;

namespace {

ModelConfig micro_config() {
  ModelConfig c;
  c.blocks = 2;
  c.channels = 4;
  c.state = 3;
  c.U = c.V = 2;
  c.scale = 2;
  c.paths = BlockPaths::full();
  return c;
}

LfDataset micro_data(std::size_t scenes, std::uint64_t seed) {
  return make_synthetic_dataset({scenes, 2, 2, 16, 16, 1.0, seed});
}

TrainConfig micro_schedule() {
  TrainConfig t;
  t.epochs = 2;
  t.steps_per_epoch = 2;
  t.batch = 1;
  t.patch = 4;
  t.lr = 1e-3;
  t.decay_period = 1;
  return t;
}

}  // namespace

TEST(Loss, L1ValueAndGradient) {
  const auto p = Tensor<double>::from_data({4}, {0.0, 1.0, 2.0, 3.0}, true);
  const auto t = Tensor<double>::from_data({4}, {1.0, 1.0, 0.0, 5.0});
  Tape<double> tape;
  TapeScope<double> scope(tape);
  const auto l = l1_loss(p, t);
  EXPECT_DOUBLE_EQ(l.item(), (1.0 + 0.0 + 2.0 + 2.0) / 4.0);
  tape.backward(l);
  const auto g = p.grad();
  EXPECT_EQ(std::vector<double>(g.begin(), g.end()),
            (std::vector<double>{-0.25, 0.0, 0.25, -0.25}));
  EXPECT_THROW(l1_loss(p, Tensor<double>::from_data({2}, {0.0, 0.0})),
               ShapeError);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  Parameter<float> w("w", {3});
  w.value()[0] = 1.0f;
  w.grad()[0] = 0.5f;
  w.grad()[1] = -2.0f;
  Adam adam({&w});
  adam.step(0.01);
  EXPECT_NEAR(w.value()[0], 1.0f - 0.01f, 1e-6);
  EXPECT_NEAR(w.value()[1], 0.01f, 1e-6);
  EXPECT_EQ(w.value()[2], 0.0f);  // zero gradient, zero moments
  EXPECT_EQ(adam.state().step, 1u);
}

TEST(Adam, NonFiniteGradientNamesParameterAndLeavesValues) {
  Parameter<float> a("a", {2}), b("blocks.0.sai.in_proj.weight", {2});
  b.grad()[1] = std::numeric_limits<float>::quiet_NaN();
  a.grad()[0] = 1.0f;
  Adam adam({&a, &b});
  try {
    adam.step(0.1);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("blocks.0.sai.in_proj.weight"),
              std::string::npos);
  }
  EXPECT_EQ(a.value()[0], 0.0f);
  EXPECT_EQ(adam.state().step, 0u);
}

TEST(Adam, StateShapeIsChecked) {
  Parameter<float> w("w", {3});
  Adam adam({&w});
  OptimizerState s;
  EXPECT_THROW(adam.load_state(s), ConfigError);
  s.m = {{0, 0}};
  s.v = {{0, 0}};
  EXPECT_THROW(adam.load_state(s), ConfigError);
}

TEST(Schedule, StepDecay) {
  EXPECT_DOUBLE_EQ(step_decay_lr(2e-4, 0.5, 30, 0), 2e-4);
  EXPECT_DOUBLE_EQ(step_decay_lr(2e-4, 0.5, 30, 29), 2e-4);
  EXPECT_DOUBLE_EQ(step_decay_lr(2e-4, 0.5, 30, 30), 1e-4);
  EXPECT_DOUBLE_EQ(step_decay_lr(2e-4, 0.5, 30, 179), 2e-4 / 32);
  const TrainConfig s1 = stage1_schedule();
  EXPECT_EQ(s1.epochs, 180u);
  EXPECT_EQ(s1.batch, 4u);
  EXPECT_DOUBLE_EQ(s1.lr_at(60), 5e-5);
  EXPECT_THROW(schedule_preset("huge"), ConfigError);
}

TEST(Schedule, TinyPresetsFitDeskBudgets) {
  EXPECT_LE(tiny_stage1_schedule().total_steps(), 2000u);
  EXPECT_LE(tiny_stage2_schedule().total_steps(), 500u);
  EXPECT_EQ(tiny_stage2_schedule().stage, 2);
  EXPECT_LT(tiny_stage2_schedule().lr, tiny_stage1_schedule().lr);
}

TEST(Schedule, KeyValueRoundTrip) {
  TrainConfig t = tiny_stage2_schedule();
  t.checkpoint_dir = "out/ckpt";
  t.augment = false;
  const TrainConfig back = TrainConfig::from_kv(t.to_kv(), TrainConfig{});
  EXPECT_EQ(back.to_kv().to_string(), t.to_kv().to_string());
  TrainConfig bad = t;
  bad.batch = 0;
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(Sampling, PatchShapesAndDeterminism) {
  const LfDataset ds = micro_data(3, 4);
  Rng a(9), b(9);
  for (int i = 0; i < 5; ++i) {
    const TrainingSample x = sample_patch(ds, 2, 4, true, a);
    const TrainingSample y = sample_patch(ds, 2, 4, true, b);
    EXPECT_EQ(x.hr, y.hr);
    EXPECT_EQ(x.lr.ext, (LfExtents{2, 2, 4, 4, 1}));
    EXPECT_EQ(x.hr.ext, (LfExtents{2, 2, 8, 8, 1}));
    EXPECT_EQ(x.lr, bicubic_downsample(x.hr, 2));
  }
  EXPECT_THROW(sample_patch(ds, 2, 9, false, a), DataError);
}

TEST(Training, LossDecreasesOnFixedPatch) {
  RaslfModel<float> m(micro_config());
  const TrainingSample s = [] {
    Rng rng(3);
    return sample_patch(micro_data(1, 5), 2, 4, false, rng);
  }();
  auto params = m.parameters();
  Adam adam(params);
  auto loss_once = [&] {
    adam.zero_grad();
    Tape<float> tape;
    TapeScope<float> scope(tape);
    const auto l = l1_loss(m.forward(lf_to_tensor<float>(s.lr)),
                           lf_to_tensor<float>(s.hr));
    tape.backward(l);
    return double(l.item());
  };
  const double first = loss_once();
  adam.step(5e-3);
  double last = first;
  for (int i = 0; i < 20; ++i) {
    last = loss_once();
    adam.step(5e-3);
  }
  EXPECT_LT(last, 0.9 * first);
}

TEST(Training, StartsAtBicubicAndIsDeterministic) {
  const LfDataset train = micro_data(3, 6), val = micro_data(2, 7);
  RaslfModel<float> a(micro_config()), b(micro_config());
  const TrainResult ra = train_stage1(a, train, val, micro_schedule());
  const TrainResult rb = train_stage1(b, train, val, micro_schedule());
  EXPECT_EQ(ra.initial_val_psnr, ra.bicubic_val_psnr);
  ASSERT_EQ(ra.log.size(), 4u);
  EXPECT_TRUE(ra.log[1].val_psnr.has_value());
  EXPECT_FALSE(ra.log[0].val_psnr.has_value());
  EXPECT_DOUBLE_EQ(ra.log[2].lr, 5e-4);
  for (std::size_t i = 0; i < ra.log.size(); ++i)
    EXPECT_EQ(ra.log[i].loss, rb.log[i].loss);
  EXPECT_EQ(ra.final_val_psnr, rb.final_val_psnr);
  EXPECT_EQ(ra.optimizer.step, 4u);
  const auto pa = a.parameters(), pb = b.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i)
    ASSERT_TRUE(raslf::testing::bitwise_equal<float>(pa[i]->value(),
                                                     pb[i]->value()));
}

TEST(Training, StagePreconditions) {
  const LfDataset train = micro_data(2, 8), val = micro_data(1, 9);
  ModelConfig c = micro_config();
  c.paths = BlockPaths::raas();
  RaslfModel<float> raas(c);
  EXPECT_THROW(train_stage1(raas, train, val, micro_schedule()), ConfigError);
  RaslfModel<float> full(micro_config());
  RaslfModel<float> pruned = prune_model(full);
  EXPECT_THROW(train_stage1(pruned, train, val, micro_schedule()),
               ConfigError);
  EXPECT_THROW(train_stage2(pruned, train, val, micro_schedule()),
               ConfigError);
  EXPECT_THROW(train_stage1(full, LfDataset{}, val, micro_schedule()),
               DataError);
}

TEST(Training, PrunedStartMatchesZeroSubstitution) {
  const LfDataset train = micro_data(3, 10), val = micro_data(2, 11);
  RaslfModel<float> m(micro_config());
  train_stage1(m, train, val, micro_schedule());
  TrainConfig t2 = micro_schedule();
  t2.epochs = 1;
  const Stage2Result r = train_stage2(m, train, val, t2);
  EXPECT_EQ(r.model.stage(), StageTag::stage2_pruned);
  EXPECT_EQ(r.full_val_psnr, validate_model(m, val).model_psnr);
  EXPECT_NEAR(r.pruned_val_psnr,
              validate_model(zero_substituted(m), val).model_psnr, 1e-4);
}

TEST(Training, DivergenceWritesLastGoodCheckpoint) {
  const LfDataset train = micro_data(2, 12), val = micro_data(1, 13);
  RaslfModel<float> m(micro_config());
  TrainConfig t = micro_schedule();
  t.lr = std::numeric_limits<double>::infinity();
  const auto dir = temp_dir("diverge");
  t.checkpoint_dir = dir.string();
  EXPECT_THROW(train_stage1(m, train, val, t), NumericError);
  const auto ckpt = load_checkpoint<float>((dir / "last-good.ckpt").string());
  EXPECT_EQ(ckpt.model.stage(), StageTag::stage1_full);
}

TEST(Logging, RecordFormat) {
  LogRecord r{12, 1, 0.5, 0.25, 30.5};
  EXPECT_EQ(r.to_string(), "step=12 epoch=1 lr=0.5 loss=0.25 val_psnr=30.5");
  r.val_psnr.reset();
  EXPECT_EQ(r.to_string(), "step=12 epoch=1 lr=0.5 loss=0.25");
}

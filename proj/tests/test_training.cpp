#include <gtest/gtest.h>

#include "uacanet/training.hpp"

using namespace uacanet;

namespace {

ModelConfig tiny() {
  ModelConfig c;
  c.width = 8;
  c.side = 32;
  c.backbone_widths = {8, 8, 16, 16};
  return c;
}

}  // namespace

TEST(PolyLr, LiteralForm) {
  const PolySchedule s{1e-4, 1000, 0.9, ScheduleForm::literal};
  EXPECT_EQ(poly_lr(0, s), 1e-4);
  EXPECT_EQ(poly_lr(1000, s), 0.0);
  EXPECT_NEAR(poly_lr(500, s), 4.64113268731853e-5, 1e-12);
  EXPECT_NEAR(poly_lr(250, s), 7.12825411250741e-5, 1e-12);
}

TEST(PolyLr, ConventionalForm) {
  const PolySchedule s{1e-4, 1000, 0.9, ScheduleForm::conventional};
  EXPECT_EQ(poly_lr(0, s), 1e-4);
  EXPECT_NEAR(poly_lr(500, s), 5.35886731268147e-5, 1e-12);
  EXPECT_EQ(poly_lr(1000, s), 0.0);
}

TEST(PolyLr, BeyondEndClampsToZero) {
  const PolySchedule s{1e-4, 10};
  testing::internal::CaptureStderr();
  EXPECT_EQ(poly_lr(11, s), 0.0);
  EXPECT_NE(testing::internal::GetCapturedStderr().find("warning"), std::string::npos);
  EXPECT_THROW(poly_lr(0, PolySchedule{1e-4, 0}), std::invalid_argument);
}

TEST(Adam, ZeroGradientsLeaveParametersUnchanged) {
  auto p = parameter(Tensor<double>({3}, {1.0, -2.0, 0.5}));
  sum(mul_scalar(p, 0.0)).backward();
  NamedParams<double> params{{"p", p}};
  AdamState<double> st;
  adam_step(params, st, 1e-3);
  EXPECT_EQ(p.values(), (std::vector<double>{1.0, -2.0, 0.5}));
  EXPECT_EQ(st.step, 1);
}

TEST(Adam, FirstStepMovesBySignTimesLr) {
  auto p = parameter(Tensor<double>({2}, {0.0, 0.0}));
  sum(mul(p, Tensor<double>({2}, {0.3, -0.3}))).backward();
  NamedParams<double> params{{"p", p}};
  AdamState<double> st;
  adam_step(params, st, 1e-3);
  EXPECT_NEAR(p[0], -9.99999966666668e-4, 1e-15);
  EXPECT_NEAR(p[1], 9.99999966666668e-4, 1e-15);
  for (double g : p.grad()) EXPECT_EQ(g, 0.0);
}

TEST(Adam, ParametersAreUpdatedIndependently) {
  auto a = parameter(Tensor<double>({1}, {0.0}));
  auto b = parameter(Tensor<double>({1}, {0.0}));
  sum(add(mul_scalar(a, 5.0), mul_scalar(b, 0.0))).backward();
  NamedParams<double> params{{"a", a}, {"b", b}};
  AdamState<double> st;
  adam_step(params, st, 1e-2);
  EXPECT_LT(a[0], 0.0);
  EXPECT_EQ(b[0], 0.0);
}

TEST(Adam, MissingGradientThrows) {
  auto p = parameter(Tensor<double>({1}, {0.0}));
  NamedParams<double> params{{"p", p}};
  AdamState<double> st;
  EXPECT_THROW(adam_step(params, st, 1e-3), std::logic_error);
}

TEST(MakeBatch, ResizesAndBinarises) {
  const auto data = synth_blobs(2, 64, 1);
  const auto b = make_batch<float>(data, 32);
  EXPECT_EQ(b.images.shape(), (Shape{2, 3, 32, 32}));
  EXPECT_EQ(b.masks.shape(), (Shape{2, 1, 32, 32}));
  for (float v : b.masks.values()) EXPECT_TRUE(v == 0.0f || v == 1.0f);
}

TEST(TrainStep, SingleStepDescendsOverTenSeeds) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    UACANet<double> model(tiny(), seed);
    AdamState<double> adam;
    const auto batch = make_batch<double>(synth_blobs(2, 32, seed), 32);
    const double before = train_step(model, batch, adam, PolySchedule{1e-4, 10}, 0).loss;
    NoGradGuard no_grad;
    const double after = total_loss(model.forward(batch.images).logits, batch.masks).total.item();
    EXPECT_LT(after, before) << "seed " << seed;
  }
}

TEST(TrainStep, LossFinitePositiveAndDecreasesOnFixedBatch) {
  ModelConfig c;
  c.width = 16;
  c.side = 64;
  UACANet<float> model(c, 1);
  AdamState<float> adam;
  const auto batch = make_batch<float>(synth_blobs(2, 64, 1), 64);
  const PolySchedule sched{1e-3, 200};
  double first = 0, last = 0;
  for (std::int64_t it = 0; it < 200; ++it) {
    const auto r = train_step(model, batch, adam, sched, it);
    ASSERT_TRUE(std::isfinite(r.loss));
    ASSERT_GT(r.loss, 0.0);
    if (it == 0) first = r.loss;
    last = r.loss;
  }
  EXPECT_LT(last, 0.1 * first);
}

TEST(Train, SameSeedSameTrajectory) {
  const auto data = synth_blobs(4, 32, 2);
  TrainOptions opt;
  opt.epochs = 2;
  opt.batch_size = 2;
  opt.seed = 5;
  opt.base_lr = 1e-3;
  opt.augmentation = AugmentConfig{};
  std::vector<double> losses[2];
  for (int run = 0; run < 2; ++run) {
    UACANet<float> model(tiny(), 3);
    AdamState<float> adam;
    train(model, data, adam, opt, [&](const StepResult& r) { losses[run].push_back(r.loss); });
  }
  ASSERT_EQ(losses[0].size(), 4u);
  EXPECT_EQ(losses[0], losses[1]);
}

TEST(Train, ResumeMatchesUninterruptedRun) {
  const auto data = synth_blobs(4, 32, 3);
  TrainOptions opt;
  opt.epochs = 2;
  opt.batch_size = 2;
  opt.base_lr = 1e-3;
  std::vector<double> full, split;
  {
    UACANet<float> model(tiny(), 4);
    AdamState<float> adam;
    train(model, data, adam, opt, [&](const StepResult& r) { full.push_back(r.loss); });
  }
  {
    UACANet<float> model(tiny(), 4);
    AdamState<float> adam;
    // Same schedule length as the full run, stopped after one epoch.
    PolySchedule sched{opt.base_lr, opt.iter_max(data.size())};
    for (std::int64_t it = 0; it < 2; ++it) {
      std::vector<Sample> chunk;
      std::vector<std::size_t> order(4);
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::mt19937_64 shuffle_rng(opt.seed * 0x9E3779B97F4A7C15ULL);
      std::shuffle(order.begin(), order.end(), shuffle_rng);
      for (std::int64_t k = it * 2; k < it * 2 + 2; ++k) chunk.push_back(data[order[static_cast<std::size_t>(k)]]);
      split.push_back(train_step(model, make_batch<float>(chunk, 32), adam, sched, it).loss);
    }
    TrainOptions rest = opt;
    rest.start_iter = 2;
    train(model, data, adam, rest, [&](const StepResult& r) { split.push_back(r.loss); });
  }
  EXPECT_EQ(full, split);
}

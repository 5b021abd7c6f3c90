#include <gtest/gtest.h>

#include "uacanet/dataset.hpp"
#include "uacanet/losses.hpp"
#include "uacanet/model.hpp"

using namespace uacanet;

namespace {

ModelConfig tiny(std::int64_t side = 64) {
  ModelConfig c;
  c.width = 8;
  c.side = side;
  c.backbone_widths = {8, 8, 16, 16};
  return c;
}

Tensor<float> random_images(std::int64_t b, std::int64_t side, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return Tensor<float>::uniform({b, 3, side, side}, rng, 0.0f, 1.0f);
}

}  // namespace

TEST(ModelConfig, Validation) {
  ModelConfig c = tiny();
  EXPECT_NO_THROW(c.validate());
  c.side = 48;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = tiny();
  c.width = 12;  // not a multiple of the reduction 8
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(ModelConfig, JsonRoundTripAndDifference) {
  ModelConfig c = tiny();
  c.disable_paa = true;
  EXPECT_EQ(ModelConfig::from_json(c.to_json()), c);
  ModelConfig d = c;
  d.width = 16;
  EXPECT_EQ(c.first_difference(d), "width");
  EXPECT_EQ(c.first_difference(c), "");
}

TEST(Backbone, StrideArithmetic) {
  Initializer init(1);
  BackboneLite<float> bb(init, {8, 8, 16, 16});
  NoGradGuard no_grad;
  const auto f = bb(random_images(1, 64, 1));
  EXPECT_EQ(f[0].shape(), (Shape{1, 8, 16, 16}));
  EXPECT_EQ(f[1].shape(), (Shape{1, 16, 8, 8}));
  EXPECT_EQ(f[2].shape(), (Shape{1, 16, 4, 4}));
}

TEST(Backbone, FullSideStrides) {
  Initializer init(2);
  BackboneLite<float> bb(init, {4, 4, 4, 4});
  NoGradGuard no_grad;
  const auto f = bb(random_images(1, 352, 2));
  EXPECT_EQ(f[0].dim(2), 88);
  EXPECT_EQ(f[1].dim(2), 44);
  EXPECT_EQ(f[2].dim(2), 22);
}

TEST(Model, FourOutputsAtInputSize) {
  UACANet<float> model(tiny(), 3);
  NoGradGuard no_grad;
  const auto out = model.forward(random_images(2, 64, 3));
  for (const auto& l : out.logits) EXPECT_EQ(l.shape(), (Shape{2, 1, 64, 64}));
  EXPECT_EQ(out.probability().shape(), (Shape{2, 1, 64, 64}));
  EXPECT_THROW(model.forward(random_images(1, 32, 3)), ShapeError);
}

TEST(Model, ForwardIsDeterministic) {
  UACANet<float> a(tiny(), 4), b(tiny(), 4);
  const auto x = random_images(1, 64, 4);
  NoGradGuard no_grad;
  const auto o1 = a.forward(x), o2 = a.forward(x), o3 = b.forward(x);
  for (std::size_t k = 0; k < 4; ++k) {
    EXPECT_EQ(o1.logits[k].values(), o2.logits[k].values());
    EXPECT_EQ(o1.logits[k].values(), o3.logits[k].values());
  }
}

TEST(Model, ZeroHeadsChainTheDecoderLogit) {
  UACANet<float> model(tiny(), 5);
  model.zero_uaca_heads();
  NoGradGuard no_grad;
  const auto out = model.forward(random_images(2, 64, 5));
  Tensor<float> guidance = out.decoder_logit;
  for (const auto& stage : out.stages) {
    const auto expected = bilinear_resize(guidance, stage.logit.dim(2), stage.logit.dim(3));
    EXPECT_EQ(stage.logit.values(), expected.values());
    guidance = stage.logit;
  }
}

TEST(Model, EveryParameterGetsGradient) {
  UACANet<double> model(tiny(), 6);
  const auto data = synth_blobs(2, 64, 6);
  Tensor<double> images = Tensor<double>::zeros({2, 3, 64, 64}), masks = Tensor<double>::zeros({2, 1, 64, 64});
  for (std::int64_t i = 0; i < 2; ++i) {
    for (std::int64_t k = 0; k < 3 * 4096; ++k) images[i * 3 * 4096 + k] = data[i].image[k];
    for (std::int64_t k = 0; k < 4096; ++k) masks[i * 4096 + k] = data[i].mask[k];
  }
  total_loss(model.forward(images).logits, masks).total.backward();
  for (auto [name, p] : model.named_parameters()) {
    ASSERT_TRUE(p.has_grad()) << name;
    double mag = 0;
    for (double g : p.grad()) mag += std::abs(g);
    EXPECT_GT(mag, 0.0) << name;
  }
}

TEST(Model, AblationsRun) {
  for (int variant = 0; variant < 2; ++variant) {
    ModelConfig c = tiny();
    (variant == 0 ? c.disable_paa : c.disable_uncertainty) = true;
    UACANet<float> model(c, 7);
    const auto out = model.forward(random_images(1, 64, 7));
    EXPECT_EQ(out.logits[3].shape(), (Shape{1, 1, 64, 64}));
    Tensor<float> gt = Tensor<float>::zeros({1, 1, 64, 64});
    EXPECT_NO_THROW(total_loss(out.logits, gt).total.backward());
  }
}

TEST(Model, AblationsShrinkParameterCount) {
  ModelConfig c = tiny();
  const auto full = UACANet<float>(c, 8).parameter_count();
  c.disable_paa = true;
  EXPECT_LT(UACANet<float>(c, 8).parameter_count(), full);
}

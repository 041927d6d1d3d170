#include <gtest/gtest.h>

#include "mfm/features.hpp"

using namespace mfm;

namespace {

const PromptTokens kPrompt = PromptTokens::parse("yellow disc clockwise on checker");

LatentVideo<double> latent(const DenoiserConfig& c, std::uint64_t seed) {
  Rng rng(seed);
  return LatentVideo<double>::randn(c.frames, c.height, c.width, c.channels, rng);
}

}  // namespace

TEST(Maps, CrossAttentionByHand) {
  // Two sites, two words, one head, width 1: score = phi * q * tau * k.
  Activation<double> phi{1, 1, 2, Mat<double>(2, 1)};
  phi.values << 1, -1;
  Mat<double> tau(2, 1);
  tau << 0, 2;
  AttentionProjection<double> proj{Mat<double>::Ones(1, 1), Mat<double>::Ones(1, 1), 1};
  const auto m = cross_attention_map(phi, tau, proj);
  const double e2 = std::exp(2.0), em2 = std::exp(-2.0);
  EXPECT_NEAR(m.at(0, 0, 0, 0), 1 / (1 + e2), 1e-15);
  EXPECT_NEAR(m.at(0, 0, 0, 1), e2 / (1 + e2), 1e-15);
  EXPECT_NEAR(m.at(0, 0, 1, 1), em2 / (1 + em2), 1e-15);
  const auto masked = cross_attention_map(phi, tau, proj, {1, 0});
  EXPECT_EQ(masked.at(0, 0, 1, 0), 1.0);
  EXPECT_EQ(masked.at(0, 0, 1, 1), 0.0);
}

TEST(Maps, TemporalSelfAttentionByHand) {
  // One site, two frames with scalar features 1 and 2: scores are products.
  Activation<double> phi{2, 1, 1, Mat<double>(2, 1)};
  phi.values << 1, 2;
  AttentionProjection<double> proj{Mat<double>::Ones(1, 1), Mat<double>::Ones(1, 1), 1};
  const auto m = temporal_self_attention_map(phi, proj);
  EXPECT_NEAR(m.at(0, 0, 0, 1), std::exp(2.0) / (std::exp(1.0) + std::exp(2.0)), 1e-15);
  EXPECT_NEAR(m.at(0, 0, 1, 1), std::exp(4.0) / (std::exp(2.0) + std::exp(4.0)), 1e-15);
}

TEST(Maps, ShapeChecks) {
  Activation<double> phi{1, 1, 2, Mat<double>::Ones(2, 3)};
  AttentionProjection<double> proj{Mat<double>::Ones(2, 2), Mat<double>::Ones(2, 2), 1};
  EXPECT_THROW(cross_attention_map(phi, Mat<double>(Mat<double>::Ones(2, 2)), proj), Error);
  EXPECT_THROW(temporal_self_attention_map(phi, proj), Error);
}

// The standalone map functions reproduce what the denoiser captured.
TEST(Maps, RecomputedFromCapturedInputs) {
  const auto cfg = DenoiserConfig::micro();
  const Denoiser<double> m(cfg);
  const auto cap = m.denoise_with_capture(latent(cfg, 1), 9, kPrompt);
  std::vector<char> mask(static_cast<std::size_t>(cfg.max_prompt), 0);
  for (std::size_t i = 0; i < kPrompt.ids.size(); ++i) mask[i] = 1;
  for (int b = 0; b < cfg.blocks; ++b) {
    const auto& c = cap.blocks[std::size_t(b)];
    const auto ca = cross_attention_map(c.ca_input, m.text_embedding(kPrompt), m.cross_projection(b), mask);
    const auto tsa = temporal_self_attention_map(c.tsa_input, m.temporal_projection(b));
    EXPECT_LT((ca.values - c.ca.values).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((tsa.values - c.tsa.values).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Features, CombineLayoutAndWeights) {
  CAMap<double> ca{1, 1, 2, 2, Mat<double>(2, 2)};
  ca.values << 0.25, 0.75, 0.5, 0.5;
  TSAMap<double> tsa{1, 1, 2, Mat<double>(2, 2)};
  tsa.values << 1, 0, 0.3, 0.7;
  const auto f = combine_maps(ca, tsa, 2.0, 0.5);
  ASSERT_EQ(f.size(), 8);
  Mat<double> expect(1, 8);
  expect << 0.5, 1.5, 1, 1, 0.5, 0, 0.15, 0.35;
  EXPECT_EQ(f.vector, expect);
  EXPECT_EQ(f.ca_segment().size(), 4);
  EXPECT_EQ(combine_maps(ca, tsa, 0.0, 1.0).ca_segment().norm(), 0.0);
  EXPECT_THROW(combine_maps(ca, tsa, -1.0, 1.0), Error);
}

TEST(Features, FrozenExtractorIgnoresAdapters) {
  const auto cfg = DenoiserConfig::micro();
  const Denoiser<double> base(cfg);
  Denoiser<double> adapted = base;
  attach_lora(adapted, default_lora_targets(cfg), 2, 1.0, 3);
  Rng rng(4);
  adapted.visit_linears([&](const std::string&, Linear<double>& l) {
    if (l.lora) l.lora->up.value = rng.normal_matrix<double>(l.out_dim(), 2, 0.3);
  });
  const auto z = latent(cfg, 5);
  const auto a = FrozenExtractor<double>(base).extract(z, 10, kPrompt, 1.0, 1.0);
  const auto b = FrozenExtractor<double>(adapted).extract(z, 10, kPrompt, 1.0, 1.0);
  EXPECT_EQ(a.vector, b.vector);
  EXPECT_EQ(lora_parameter_count(FrozenExtractor<double>(adapted).model()), 0u);
}

TEST(Features, TapePathMatchesValuePath) {
  const auto cfg = DenoiserConfig::micro();
  const FrozenExtractor<double> ex{Denoiser<double>(cfg)};
  const auto z = latent(cfg, 6);
  Tape<double> tape(false);
  const Mat<double> v = ex.features(tape, tape.constant(z.data), 12, kPrompt, 0.7, 1.3).value();
  EXPECT_EQ(v, ex.extract(z, 12, kPrompt, 0.7, 1.3).vector);
}

TEST(Features, InputGradientMatchesFiniteDifferences) {
  const auto cfg = DenoiserConfig::micro();
  const FrozenExtractor<double> ex{Denoiser<double>(cfg)};
  const auto z = latent(cfg, 7);
  Rng rng(8);
  const Mat<double> target = ex.extract(latent(cfg, 9), 12, kPrompt, 1.0, 1.0).vector;
  auto loss = [&](const Mat<double>& x) {
    return (target - ex.extract(LatentVideo<double>::from(z, x), 12, kPrompt, 1.0, 1.0).vector).squaredNorm();
  };
  (void)rng;
  Tape<double> tape;
  Var<double> x = tape.input(z.data);
  Var<double> l = motion_feature_matching_loss(target, ex.features(tape, x, 12, kPrompt, 1.0, 1.0), 1.0);
  tape.backward(l);
  ASSERT_NE(tape.grad(x), nullptr);
  const Mat<double> g = *tape.grad(x);
  // Extractor parameters are frozen and must not collect gradients.
  ex.model().visit_params([&](const std::string& name, const Param<double>& p) {
    EXPECT_EQ(tape.grad_of(p), nullptr) << name;
  });
  for (Eigen::Index k = 0; k < z.data.size(); k += 5) {
    Mat<double> up = z.data, down = z.data;
    up.data()[k] += 1e-6;
    down.data()[k] -= 1e-6;
    const double fd = (loss(up) - loss(down)) / 2e-6;
    EXPECT_NEAR(g.data()[k], fd, 1e-6 + 1e-4 * std::abs(fd)) << k;
  }
}

TEST(Features, MatchingLossValue) {
  MotionFeatures<double> a, b;
  a.vector = Mat<double>(1, 3);
  b.vector = Mat<double>(1, 3);
  a.vector << 1, 2, 3;
  b.vector << 1, 0, 4;
  EXPECT_DOUBLE_EQ(motion_feature_matching_loss(a, b, 0.5), 2.5);
  EXPECT_EQ(motion_feature_matching_loss(a, a, 1.0), 0.0);
  b.vector = Mat<double>(1, 2);
  EXPECT_THROW(motion_feature_matching_loss(a, b, 1.0), Error);
}

#include <gtest/gtest.h>

#include "mfm/lora.hpp"

using namespace mfm;

namespace {

const PromptTokens kPrompt = PromptTokens::parse("green bar left on texture");

template <class T>
LatentVideo<T> latent(const DenoiserConfig& c, std::uint64_t seed) {
  Rng rng(seed);
  return LatentVideo<T>::randn(c.frames, c.height, c.width, c.channels, rng);
}

template <class T>
void randomize_up(Denoiser<T>& m, std::uint64_t seed, double std = 0.05) {
  Rng rng(seed);
  m.visit_linears([&](const std::string&, Linear<T>& l) {
    if (l.lora) l.lora->up.value = rng.normal_matrix<T>(l.lora->up.value.rows(), l.lora->up.value.cols(), std);
  });
}

}  // namespace

TEST(Lora, DefaultTargetsAndParameterCount) {
  const DenoiserConfig cfg;
  Denoiser<float> m(cfg);
  const auto targets = default_lora_targets(cfg);
  EXPECT_EQ(targets.size(), 21u);
  attach_lora(m, targets, 4, 1.0f, 1);
  // Per block: conv 4*(576+64), four 64x64 projections 4*128 each, fc1 and fc2 4*(64+128).
  EXPECT_EQ(lora_parameter_count(m), 3u * (2560 + 4 * 512 + 2 * 768));
  EXPECT_EQ(lora_parameter_count(m), 18432u);
}

TEST(Lora, ZeroInitIsBitExactIdentity) {
  const DenoiserConfig cfg;
  const Denoiser<float> base(cfg);
  Denoiser<float> adapted = base;
  attach_lora(adapted, default_lora_targets(cfg), 4, 1.0f, 2);
  for (int k = 0; k < 3; ++k) {
    const auto z = latent<float>(cfg, 10 + k);
    EXPECT_EQ(adapted.denoise(z, 20 + k, kPrompt).data, base.denoise(z, 20 + k, kPrompt).data);
  }
}

TEST(Lora, AttachFreezesBaseOnly) {
  const auto cfg = DenoiserConfig::micro();
  Denoiser<double> m(cfg);
  attach_lora(m, {"blocks.0.tsa.q", "blocks.1.ff.fc1"}, 2, 1.0, 3);
  m.visit_params([](const std::string& name, const Param<double>& p) { EXPECT_FALSE(p.trainable) << name; });
  int with = 0;
  m.visit_linears([&](const std::string&, const Linear<double>& l) {
    if (!l.lora) return;
    ++with;
    EXPECT_TRUE(l.lora->down.trainable);
    EXPECT_EQ(l.lora->up.value.norm(), 0.0);
    EXPECT_GT(l.lora->down.value.norm(), 0.0);
  });
  EXPECT_EQ(with, 2);
}

TEST(Lora, ValidationLeavesModelUntouched) {
  const auto cfg = DenoiserConfig::micro();
  Denoiser<double> m(cfg);
  try {
    attach_lora(m, {"blocks.0.tsa.q", "blocks.9.tsa.q"}, 2, 1.0, 4);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::unknown_target);
  }
  try {
    attach_lora(m, {"blocks.0.tsa.q"}, cfg.dim + 1, 1.0, 4);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::rank_too_large);
  }
  EXPECT_EQ(lora_parameter_count(m), 0u);
  m.visit_params([](const std::string&, const Param<double>& p) { EXPECT_TRUE(p.trainable); });
}

TEST(Lora, MergeMatchesAdaptedAndDetachRestores) {
  const DenoiserConfig cfg;
  const Denoiser<double> base(Denoiser<float>(cfg).cast<double>());
  Denoiser<double> adapted = base;
  attach_lora(adapted, default_lora_targets(cfg), 4, 1.0, 5);
  randomize_up(adapted, 6);
  Denoiser<double> merged = adapted;
  merge_lora(merged);
  EXPECT_EQ(lora_parameter_count(merged), 0u);
  const auto z = latent<double>(cfg, 7);
  const auto a = adapted.denoise(z, 60, kPrompt).data, b = merged.denoise(z, 60, kPrompt).data;
  EXPECT_LT((a - b).norm() / a.norm(), 1e-12);
  EXPECT_GT((a - base.denoise(z, 60, kPrompt).data).norm(), 1e-6);

  detach_lora(merged);
  detach_lora(adapted);
  for (auto* m : {&merged, &adapted}) {
    std::vector<Mat<double>> got, want;
    m->visit_params([&](const std::string&, const Param<double>& p) { got.push_back(p.value); });
    base.visit_params([&](const std::string&, const Param<double>& p) { want.push_back(p.value); });
    ASSERT_EQ(got.size(), want.size());
    for (std::size_t i = 0; i < got.size(); ++i) EXPECT_EQ(got[i], want[i]);
  }
}

TEST(Lora, ExtractApplyRoundTrip) {
  const auto cfg = DenoiserConfig::micro();
  const Denoiser<double> base(cfg);
  Denoiser<double> adapted = base;
  attach_lora(adapted, default_lora_targets(cfg), 2, 0.5, 8);
  randomize_up(adapted, 9);
  const auto set = extract_adapters(adapted);
  EXPECT_EQ(set.size(), default_lora_targets(cfg).size());
  Denoiser<double> fresh = base;
  apply_adapters(fresh, set);
  const auto z = latent<double>(cfg, 10);
  EXPECT_EQ(fresh.denoise(z, 3, kPrompt).data, adapted.denoise(z, 3, kPrompt).data);

  auto bad = set;
  bad.adapters[0].target = "nowhere";
  Denoiser<double> other = base;
  EXPECT_THROW(apply_adapters(other, bad), Error);
}

TEST(Lora, DeltaUsesUpTimesDown) {
  LoraAdapter<double> a;
  a.down.value = Mat<double>(1, 2);
  a.down.value << 1, 2;
  a.up.value = Mat<double>(3, 1);
  a.up.value << 1, 0, -1;
  a.scale = 2.0;
  // Stored as d_in x d_out: (up * down)^T scaled.
  Mat<double> expect(2, 3);
  expect << 2, 0, -2, 4, 0, -4;
  EXPECT_EQ(a.delta(), expect);
}

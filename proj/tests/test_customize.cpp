#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "mfm/customize.hpp"

using namespace mfm;

namespace {

const PromptTokens kPrompt = PromptTokens::parse("blue bar down on plain");

LatentVideo<double> latent(const DenoiserConfig& c, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  auto v = LatentVideo<double>::randn(c.frames, c.height, c.width, c.channels, rng);
  v.data *= scale;
  return v;
}

}  // namespace

TEST(Customize, TimestepPolicies) {
  const auto s = NoiseSchedule::standard(100);
  Rng rng(1);
  int lo = 1000, hi = 0;
  for (int i = 0; i < 2000; ++i) {
    const int t = sample_timestep("upper", s, rng);
    lo = std::min(lo, t);
    hi = std::max(hi, t);
    EXPECT_EQ(timestep_weight(t, s), 1.0);
  }
  EXPECT_EQ(lo, 50);
  EXPECT_EQ(hi, 100);
  int small = 0;
  for (int i = 0; i < 2000; ++i) small += sample_timestep("all", s, rng) < 50;
  EXPECT_GT(small, 800);
}

TEST(Customize, ConfigValidation) {
  CustomizeConfig c;
  EXPECT_NO_THROW(c.validate());
  c.lambda_tsa = -1;
  EXPECT_THROW(c.validate(), Error);
  c = {};
  c.timesteps = "middle";
  EXPECT_THROW(c.validate(), Error);
  c = {};
  c.beta_mix = 1.2;
  EXPECT_THROW(c.validate(), Error);
  EXPECT_EQ(parse_objective("ddpm"), Objective::ddpm);
  EXPECT_STREQ(objective_name(Objective::residual), "residual");
  try {
    parse_objective("clip");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::invalid_config);
  }
}

// The pixel objective is the reparametrised v-loss with its weight folded in.
TEST(Customize, DdpmObjectiveEqualsReparamForm) {
  const auto cfg = DenoiserConfig::micro();
  const Denoiser<double> m(cfg);
  const FrozenExtractor<double> ex(m);
  const auto s = NoiseSchedule::standard(20);
  const auto z0 = latent(cfg, 2), eps = latent(cfg, 3);
  const int t = 15;
  Tape<double> tape(false);
  const double got =
      customization_loss(tape, m, ex, z0, kPrompt, t, eps, Objective::ddpm, 1.0, 1.0, s).value()(0, 0);
  const auto zt = forward_noise(z0, t, eps, s);
  const auto eps_theta = m.denoise(zt, t, kPrompt);
  const double v_form = reparam_weight(t, timestep_weight(t, s), s) *
                        (predict_prev(zt, eps, t, s).data - predict_prev(zt, eps_theta, t, s).data).squaredNorm();
  EXPECT_NEAR(got, v_form, 1e-10 * v_form);
}

TEST(Customize, LowerHalfTimestepsCarryNoLoss) {
  const auto cfg = DenoiserConfig::micro();
  const Denoiser<double> m(cfg);
  const FrozenExtractor<double> ex(m);
  const auto s = NoiseSchedule::standard(20);
  for (auto obj : {Objective::mfm, Objective::ddpm, Objective::residual}) {
    Tape<double> tape(false);
    EXPECT_EQ(customization_loss(tape, m, ex, latent(cfg, 4), kPrompt, 3, latent(cfg, 5), obj, 1.0, 1.0, s).value()(0, 0),
              0.0);
  }
}

// d(loss)/d(LoRA) against central differences for every objective; the frozen
// extractor and base weights receive nothing.
TEST(Customize, AdapterGradientsMatchFiniteDifferences) {
  const auto cfg = DenoiserConfig::micro();
  const Denoiser<double> base(cfg);
  Denoiser<double> model = base;
  attach_lora(model, default_lora_targets(cfg), 2, 1.0, 6);
  Rng rng(7);
  model.visit_linears([&](const std::string&, Linear<double>& l) {
    if (l.lora) l.lora->up.value = rng.normal_matrix<double>(l.out_dim(), 2, 0.1);
  });
  const FrozenExtractor<double> ex(base);
  const auto s = NoiseSchedule::standard(20);
  const auto z0 = latent(cfg, 8), eps = latent(cfg, 9);
  const int t = 14;
  for (auto obj : {Objective::mfm, Objective::ddpm, Objective::residual}) {
    auto value = [&]() {
      Tape<double> tape(false);
      return customization_loss(tape, model, ex, z0, kPrompt, t, eps, obj, 1.0, 1.0, s).value()(0, 0);
    };
    Tape<double> tape;
    tape.backward(customization_loss(tape, model, ex, z0, kPrompt, t, eps, obj, 1.0, 1.0, s));
    ex.model().visit_params([&](const std::string&, const Param<double>& p) { EXPECT_EQ(tape.grad_of(p), nullptr); });
    model.visit_params([&](const std::string&, const Param<double>& p) { EXPECT_EQ(tape.grad_of(p), nullptr); });
    double worst = 0;
    model.visit_linears([&](const std::string& name, Linear<double>& l) {
      if (!l.lora) return;
      for (Param<double>* p : {&l.lora->down, &l.lora->up}) {
        const Mat<double>* g = tape.grad_of(*p);
        ASSERT_NE(g, nullptr) << name;
        for (Eigen::Index k = 0; k < p->value.size(); k += 3) {
          const double keep = p->value.data()[k], h = 1e-5;
          p->value.data()[k] = keep + h;
          const double up = value();
          p->value.data()[k] = keep - h;
          const double down = value();
          p->value.data()[k] = keep;
          const double fd = (up - down) / (2 * h);
          worst = std::max(worst, std::abs(fd - g->data()[k]) / std::max(std::abs(fd), 1e-6));
        }
      }
    });
    EXPECT_LT(worst, 1e-3) << objective_name(obj);
  }
}

TEST(Customize, ProducesAdaptersAndLeavesBaseAlone) {
  const auto cfg = DenoiserConfig::micro();
  const Denoiser<float> base(cfg);
  const auto before = base.denoise(latent(cfg, 10).cast<float>(), 5, kPrompt).data;
  const auto s = NoiseSchedule::standard(20);
  CustomizeConfig cc;
  cc.steps = 5;
  cc.rank = 2;
  cc.lr = 1e-2;
  std::vector<double> losses;
  const auto ad = customize(base, latent(cfg, 11).cast<float>(), kPrompt, cc, s, &losses);
  EXPECT_EQ(losses.size(), 5u);
  EXPECT_EQ(ad.size(), default_lora_targets(cfg).size());
  double up = 0;
  for (const auto& a : ad.adapters) up += a.adapter.up.value.norm();
  EXPECT_GT(up, 0.0);
  EXPECT_EQ(base.denoise(latent(cfg, 10).cast<float>(), 5, kPrompt).data, before);
  EXPECT_EQ(lora_parameter_count(base), 0u);

  cc.steps = 0;
  const auto none = customize(base, latent(cfg, 11).cast<float>(), kPrompt, cc, s);
  for (const auto& a : none.adapters) EXPECT_EQ(a.adapter.up.value.norm(), 0.0f);
}

TEST(Customize, NonFiniteLossIsReported) {
  const auto cfg = DenoiserConfig::micro();
  const Denoiser<float> base(cfg);
  CustomizeConfig cc;
  cc.steps = 3;
  cc.lambda_ca = std::numeric_limits<double>::infinity();
  try {
    customize(base, latent(cfg, 12).cast<float>(), kPrompt, cc, NoiseSchedule::standard(20));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::divergence);
  }
}

TEST(Customize, ShapeMismatchRejected) {
  const auto cfg = DenoiserConfig::micro();
  const Denoiser<float> base(cfg);
  Rng rng(13);
  const auto wrong = LatentVideo<float>::randn(cfg.frames + 1, cfg.height, cfg.width, cfg.channels, rng);
  EXPECT_THROW(customize(base, wrong, kPrompt, CustomizeConfig{}, NoiseSchedule::standard(20)), Error);
}

TEST(Pretrain, ReducesNoisePredictionError) {
  DenoiserConfig cfg = DenoiserConfig::micro();
  const auto s = NoiseSchedule::standard(20);
  std::vector<RenderedScene> data;
  for (int i = 0; i < 4; ++i) {
    RenderedScene r;
    r.video = LatentVideo<float>(cfg.frames, cfg.height, cfg.width, cfg.channels);
    for (int y = 0; y < cfg.height; ++y)
      for (int x = 0; x < cfg.width; ++x)
        for (int f = 0; f < cfg.frames; ++f)
          for (int c = 0; c < cfg.channels; ++c) r.video.at(f, y, x, c) = ((x + y + i + f) % 2) ? 0.8f : -0.8f;
    r.prompt = kPrompt;
    data.push_back(r);
  }
  const Denoiser<float> init(cfg);
  PretrainConfig pc;
  pc.steps = 150;
  pc.batch = 2;
  pc.lr = 5e-3;
  pc.warmup = 10;
  int logs = 0;
  pc.log_every = 50;
  pc.on_log = [&logs](int, double) { ++logs; };
  const auto trained = pretrain_base(data, cfg, s, pc);
  EXPECT_EQ(logs, 3);
  for (int t : {5, 15}) EXPECT_LT(eps_error(trained, data, t, s, 1), eps_error(init, data, t, s, 1)) << t;
}

TEST(Generate, SeededAndChecked) {
  const auto cfg = DenoiserConfig::micro();
  const Denoiser<float> base(cfg);
  const auto s = NoiseSchedule::standard(20);
  const AdapterSet<float> none;
  const auto a = generate<float>(base, none, kPrompt, std::nullopt, 0.0, 5, 3, s);
  EXPECT_EQ(a.data, generate<float>(base, none, kPrompt, std::nullopt, 0.0, 5, 3, s).data);
  EXPECT_NE(a.data, generate<float>(base, none, kPrompt, std::nullopt, 0.0, 5, 4, s).data);
  try {
    generate<float>(base, none, kPrompt, std::nullopt, 0.3, 5, 3, s);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::invalid_config);
  }
}

// Inverted noise fed back at beta_mix = 1 with the same model and prompt reproduces the input.
TEST(Generate, InversionRoundTripOnUntrainedModel) {
  const auto cfg = DenoiserConfig::micro();
  const Denoiser<double> base(cfg);
  const auto s = NoiseSchedule::standard(20);
  const auto z0 = latent(cfg, 14, 0.5);
  const auto inv = invert_video(base, z0, kPrompt, 20, s);
  const auto back = generate(base, AdapterSet<double>{}, kPrompt, std::optional(inv), 1.0, 20, 0, s);
  EXPECT_LT((back.data - z0.data).cwiseAbs().mean(), 0.05);
}

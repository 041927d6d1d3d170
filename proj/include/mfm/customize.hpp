#pragma once

#include <cmath>
#include <functional>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "mfm/diffmath.hpp"
#include "mfm/features.hpp"
#include "mfm/optim.hpp"
#include "mfm/metrics.hpp"
#include "mfm/synthdata.hpp"

namespace mfm {

// ---- schedule config ----

struct ScheduleConfig {
  int steps = 100;
  double beta_start = 1e-4;
  double beta_end = 0.02;

  NoiseSchedule build() const { return NoiseSchedule::linear(steps, beta_start, beta_end); }
  nlohmann::ordered_json to_json() const {
    return {{"steps", steps}, {"beta_start", beta_start}, {"beta_end", beta_end}};
  }
  static ScheduleConfig from_json(const nlohmann::json& j) {
    ScheduleConfig c;
    c.steps = j.value("steps", c.steps);
    c.beta_start = j.value("beta_start", c.beta_start);
    c.beta_end = j.value("beta_end", c.beta_end);
    return c;
  }
};

// ---- pretraining ----

struct PretrainConfig {
  int steps = 3000;
  int batch = 4;
  double lr = 2e-3;
  int warmup = 100;
  double clip = 1.0;
  // Probability of replacing each prompt word by its generic stand-in.
  double caption_dropout = 0.15;
  std::uint64_t seed = 0;
  // Called every `log_every` steps with (step, mean loss over the window).
  int log_every = 100;
  std::function<void(int, double)> on_log;
};

// Caption dropout: slot-wise replacement by generic words.
inline PromptTokens drop_words(const PromptTokens& p, double prob, Rng& rng) {
  PromptTokens out = p;
  for (std::size_t i = 0; i < out.ids.size(); ++i)
    if (rng.uniform() < prob)
      out.ids[i] = vocab::id_of(vocab::kGenericSlots[std::min<std::size_t>(i, vocab::kGenericSlots.size() - 1)]);
  return out;
}

// Mean squared noise-prediction error over a batch on one tape.
template <class T>
Var<T> eps_loss(Tape<T>& tape, const Denoiser<T>& model, const LatentVideo<T>& z0, int t, const LatentVideo<T>& eps,
                const PromptTokens& prompt, const NoiseSchedule& s) {
  const auto zt = forward_noise(z0, t, eps, s);
  auto r = model.forward(tape, tape.constant(zt.data), t, prompt, false);
  return ops::scale(ops::sum_sq_diff(r.eps, eps.data), T(1) / T(eps.data.size()));
}

template <class T>
std::vector<Param<T>*> trainable_params(Denoiser<T>& model) {
  std::vector<Param<T>*> out;
  model.visit_params([&out](const std::string&, Param<T>& p) {
    if (p.trainable) out.push_back(&p);
  });
  model.visit_linears([&out](const std::string&, Linear<T>& l) {
    if (!l.lora) return;
    if (l.lora->down.trainable) out.push_back(&l.lora->down);
    if (l.lora->up.trainable) out.push_back(&l.lora->up);
  });
  return out;
}

// Trains a fresh denoiser on the corpus with the standard noise-prediction objective.
inline Denoiser<float> pretrain_base(const std::vector<RenderedScene>& data, const DenoiserConfig& mcfg,
                                     const NoiseSchedule& s, const PretrainConfig& cfg) {
  require(!data.empty(), ErrorKind::empty_set, "pretraining needs a nonempty dataset");
  require(cfg.steps >= 0 && cfg.batch >= 1, ErrorKind::invalid_range, "bad pretraining step/batch counts");
  Denoiser<float> model(mcfg);
  auto params = trainable_params(model);
  Adam<float> opt(params, {cfg.lr, 0.9, 0.999, 1e-8, cfg.clip});
  Rng rng(cfg.seed);
  double window = 0.0;
  int window_n = 0;
  for (int step = 0; step < cfg.steps; ++step) {
    const double warm = cfg.warmup > 0 ? std::min(1.0, double(step + 1) / cfg.warmup) : 1.0;
    // Cosine decay to 10% of the peak rate.
    const double decay = 0.55 + 0.45 * std::cos(std::numbers::pi * double(step) / double(std::max(1, cfg.steps)));
    opt.set_lr(cfg.lr * warm * decay);
    Tape<float> tape;
    Var<float> total;
    for (int b = 0; b < cfg.batch; ++b) {
      const auto& sc = data[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(data.size()) - 1))];
      const int t = rng.uniform_int(1, s.steps());
      const auto eps = LatentVideo<float>::randn(sc.video.frames, sc.video.height, sc.video.width, sc.video.channels, rng);
      const auto prompt = drop_words(sc.prompt, cfg.caption_dropout, rng);
      Var<float> l = eps_loss(tape, model, sc.video, t, eps, prompt, s);
      total = b == 0 ? l : ops::add(total, l);
    }
    total = ops::scale(total, 1.0f / float(cfg.batch));
    const float lv = total.value()(0, 0);
    require(std::isfinite(lv), ErrorKind::divergence, "pretraining diverged at step " + std::to_string(step));
    tape.backward(total);
    opt.step(tape);
    window += lv;
    ++window_n;
    if (cfg.on_log && cfg.log_every > 0 && (step + 1) % cfg.log_every == 0) {
      cfg.on_log(step + 1, window / window_n);
      window = 0.0;
      window_n = 0;
    }
  }
  return model;
}

// Mean per-element noise-prediction error at timestep t over the given scenes.
template <class T>
double eps_error(const Denoiser<T>& model, const std::vector<RenderedScene>& data, int t, const NoiseSchedule& s,
                 std::uint64_t seed) {
  Rng rng(seed);
  double sum = 0.0;
  for (const auto& sc : data) {
    const auto z0 = sc.video.template cast<T>();
    const auto eps = LatentVideo<T>::randn(z0.frames, z0.height, z0.width, z0.channels, rng);
    const auto pred = model.denoise(forward_noise(z0, t, eps, s), t, sc.prompt);
    sum += double((pred.data - eps.data).squaredNorm()) / double(eps.data.size());
  }
  return sum / double(data.size());
}

// ---- customization ----

enum class Objective { mfm, ddpm, residual };

inline Objective parse_objective(const std::string& s) {
  if (s == "mfm") return Objective::mfm;
  if (s == "ddpm") return Objective::ddpm;
  if (s == "residual") return Objective::residual;
  throw Error(ErrorKind::invalid_config, "unknown objective '" + s + "' (mfm|ddpm|residual)");
}

inline const char* objective_name(Objective o) {
  switch (o) {
    case Objective::mfm: return "mfm";
    case Objective::ddpm: return "ddpm";
    case Objective::residual: return "residual";
  }
  return "mfm";
}

struct CustomizeConfig {
  int steps = 200;
  double lr = 5e-4;
  double lambda_ca = 1.0;
  double lambda_tsa = 1.0;
  Objective objective = Objective::mfm;
  // "upper": uniform over the nonzero-weight half; "all": uniform over 1..T, weighted.
  std::string timesteps = "upper";
  int rank = 4;
  double lora_scale = 1.0;
  std::vector<std::string> targets;  // empty: default targets
  double beta_mix = 0.3;
  int ddim_steps = 25;
  std::uint64_t seed = 0;
  std::function<void(int, double)> on_step;

  void validate() const {
    require(steps >= 0, ErrorKind::invalid_config, "steps must be >= 0");
    require(lr > 0, ErrorKind::invalid_config, "learning rate must be > 0");
    require(lambda_ca >= 0 && lambda_tsa >= 0, ErrorKind::invalid_config, "lambda weights must be >= 0");
    require(beta_mix >= 0 && beta_mix <= 1, ErrorKind::invalid_config, "beta_mix must lie in [0, 1]");
    require(timesteps == "upper" || timesteps == "all", ErrorKind::invalid_config, "timesteps must be upper|all");
    require(ddim_steps >= 1, ErrorKind::invalid_config, "ddim_steps must be >= 1");
  }
};

// Loss of one customization step at (t, eps) as a tape node. `model` carries the adapters;
// the extractor is the frozen base.
template <class T>
Var<T> customization_loss(Tape<T>& tape, const Denoiser<T>& model, const FrozenExtractor<T>& extractor,
                          const LatentVideo<T>& z0, const PromptTokens& prompt, int t, const LatentVideo<T>& eps,
                          Objective objective, T lambda_ca, T lambda_tsa, const NoiseSchedule& s) {
  const double w = timestep_weight(t, s);
  const auto zt = forward_noise(z0, t, eps, s);
  Var<T> zt_var = tape.constant(zt.data);
  Var<T> eps_theta = model.forward(tape, zt_var, t, prompt, false).eps;
  if (objective == Objective::ddpm) {
    // w'_t |v(eps) - v(eps_theta)|^2 == w_t |eps - eps_theta|^2, so train on the latter directly.
    return ops::scale(ops::sum_sq_diff(eps_theta, eps.data), T(w));
  }
  const auto c = prev_coefficients(t, s);
  Var<T> v_theta = ops::affine(zt_var, T(c.signal), eps_theta, T(c.noise));
  const LatentVideo<T> v_hat = predict_prev(zt, eps, t, s);
  if (objective == Objective::residual) {
    Tape<T> scratch(false);
    const Mat<T> target = ops::frame_diff(scratch.constant(v_hat.data), z0.frames).value();
    return ops::scale(ops::sum_sq_diff(ops::frame_diff(v_theta, z0.frames), target), T(w));
  }
  // v estimates z_{t-1}, so features are read at that noise level.
  const int tf = t - 1;
  const Mat<T> f_gt = extractor.extract(v_hat, tf, prompt, lambda_ca, lambda_tsa).vector;
  Var<T> f_pred = extractor.features(tape, v_theta, tf, prompt, lambda_ca, lambda_tsa);
  return motion_feature_matching_loss(f_gt, f_pred, T(w));
}

inline int sample_timestep(const std::string& policy, const NoiseSchedule& s, Rng& rng) {
  if (policy == "all") return rng.uniform_int(1, s.steps());
  const int lo = (s.steps() + 1) / 2;  // smallest t with 2t >= T
  return rng.uniform_int(std::max(1, lo), s.steps());
}

// Fine-tunes LoRA adapters on one reference video and returns them. The base model is
// not modified.
template <class T>
AdapterSet<T> customize(const Denoiser<T>& base, const LatentVideo<T>& z0, const PromptTokens& prompt,
                        const CustomizeConfig& cfg, const NoiseSchedule& s, std::vector<double>* losses = nullptr) {
  cfg.validate();
  const auto& mc = base.config();
  require(z0.frames == mc.frames && z0.height == mc.height && z0.width == mc.width && z0.channels == mc.channels,
          ErrorKind::shape_mismatch, "reference video shape differs from the model");
  Denoiser<T> model = base;
  detach_lora(model);
  attach_lora(model, cfg.targets.empty() ? default_lora_targets(mc) : cfg.targets, cfg.rank, T(cfg.lora_scale),
              mix_seed(cfg.seed, 1));
  const FrozenExtractor<T> extractor(base);
  Adam<T> opt(trainable_params(model), {cfg.lr, 0.9, 0.999, 1e-8, 0.0});
  Rng rng(mix_seed(cfg.seed, 2));
  for (int step = 0; step < cfg.steps; ++step) {
    const int t = sample_timestep(cfg.timesteps, s, rng);
    const auto eps = LatentVideo<T>::randn(z0.frames, z0.height, z0.width, z0.channels, rng);
    Tape<T> tape;
    Var<T> loss = customization_loss(tape, model, extractor, z0, prompt, t, eps, cfg.objective, T(cfg.lambda_ca),
                                     T(cfg.lambda_tsa), s);
    const double lv = double(loss.value()(0, 0));
    require(std::isfinite(lv), ErrorKind::divergence,
            "customization loss is not finite at step " + std::to_string(step) + " (t=" + std::to_string(t) + ")");
    if (losses) losses->push_back(lv);
    if (cfg.on_step) cfg.on_step(step, lv);
    tape.backward(loss);
    opt.step(tape);
  }
  return extract_adapters(model);
}

// ---- generation ----

template <class T>
LatentVideo<T> invert_video(const Denoiser<T>& base, const LatentVideo<T>& z0, const PromptTokens& prompt, int steps,
                            const NoiseSchedule& s) {
  Denoiser<T> model = base;
  detach_lora(model);
  return ddim_invert([&](const LatentVideo<T>& z, int t) { return model.denoise(z, t, prompt); }, z0, steps, s);
}

template <class T>
LatentVideo<T> generate(const Denoiser<T>& base, const AdapterSet<T>& adapters, const PromptTokens& prompt,
                        const std::optional<LatentVideo<T>>& eps_inv, double beta_mix, int ddim_steps,
                        std::uint64_t seed, const NoiseSchedule& s) {
  require(beta_mix >= 0.0 && beta_mix <= 1.0, ErrorKind::invalid_range, "beta_mix must lie in [0, 1]");
  require(eps_inv.has_value() || beta_mix == 0.0, ErrorKind::invalid_config,
          "beta_mix > 0 needs an inverted noise (reference video)");
  Denoiser<T> model = base;
  detach_lora(model);
  apply_adapters(model, adapters);
  const auto& mc = model.config();
  Rng rng(seed);
  const auto fresh = LatentVideo<T>::randn(mc.frames, mc.height, mc.width, mc.channels, rng);
  const LatentVideo<T> zT = eps_inv ? mix_noise(*eps_inv, fresh, beta_mix) : fresh;
  return ddim_sample([&](const LatentVideo<T>& z, int t) { return model.denoise(z, t, prompt); }, zT, ddim_steps, s);
}

// One motion-transfer trial: customize on the reference, generate with the new prompt from
// noise mixed with the reference's inversion, and score against the reference.
struct TransferResult {
  double discrepancy = 0.0;
  LatentVideo<float> video;
  AdapterSet<float> adapters;
};

inline TransferResult transfer_trial(const Denoiser<float>& base, const LatentVideo<float>& ref,
                                     const PromptTokens& train_prompt, const PromptTokens& gen_prompt,
                                     const LatentVideo<float>& eps_inv, const CustomizeConfig& cfg,
                                     std::uint64_t gen_seed, const NoiseSchedule& s, bool skip_training = false) {
  TransferResult r;
  if (!skip_training) r.adapters = customize(base, ref, train_prompt, cfg, s);
  r.video = generate(base, r.adapters, gen_prompt, std::optional<LatentVideo<float>>(eps_inv), cfg.beta_mix,
                     cfg.ddim_steps, gen_seed, s);
  r.discrepancy = video_motion_discrepancy(ref, r.video);
  return r;
}

}  // namespace mfm

#pragma once

#include <string>
#include <vector>

#include "json.hpp"

#include "mfm/customize.hpp"

namespace mfm {

// Replaces the motion word of a template prompt ("colour shape motion on bg") by the
// generic "moving", so motion has to come from the adapters rather than the text.
inline PromptTokens genericize_motion(const PromptTokens& p) {
  PromptTokens out = p;
  if (out.ids.size() >= 3) out.ids[2] = vocab::id_of("moving");
  return out;
}

// A prompt describing a different sprite (colour, shape and background all changed).
inline PromptTokens restyled_prompt(const SceneSpec& ref, int variant) {
  const int color = (ref.color + 3 + variant) % static_cast<int>(kColors.size());
  const int shape = (static_cast<int>(ref.shape) + 1 + variant % 2) % 3;
  const int bg = (static_cast<int>(ref.background) + 1) % 3;
  return PromptTokens::parse(std::string(kColorNames[static_cast<std::size_t>(color)]) + " " +
                             kShapeNames[static_cast<std::size_t>(shape)] + " moving on " +
                             kBackgroundWords[static_cast<std::size_t>(bg)]);
}

// ---- retrieval ----

struct RetrievalReport {
  double ours = 0.0;
  double raw = 0.0;
  double residual = 0.0;
  int queries = 0;
  int seeds = 0;
  std::vector<double> ours_per_seed, raw_per_seed, residual_per_seed;
  // Per-query AP averaged over seeds.
  std::vector<double> ours_per_query, raw_per_query, residual_per_query;

  nlohmann::ordered_json to_json() const {
    return {{"mean_ap", {{"motion_features", ours}, {"raw_latent", raw}, {"residual_frames", residual}}},
            {"per_seed",
             {{"motion_features", ours_per_seed}, {"raw_latent", raw_per_seed}, {"residual_frames", residual_per_seed}}},
            {"per_query",
             {{"motion_features", ours_per_query}, {"raw_latent", raw_per_query}, {"residual_frames", residual_per_query}}},
            {"queries_per_seed", queries},
            {"seeds", seeds}};
  }
};

// Ground-truth trajectory Chamfer discrepancy between every pair of scenes.
inline Mat<double> pairwise_discrepancy(const std::vector<RenderedScene>& scenes) {
  const auto n = static_cast<Eigen::Index>(scenes.size());
  Mat<double> d = Mat<double>::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const auto& a = scenes[static_cast<std::size_t>(i)];
      const auto& b = scenes[static_cast<std::size_t>(j)];
      d(i, j) = d(j, i) = chamfer_motion_discrepancy(a.trajectories, b.trajectories, a.video.frames, a.video.height,
                                                     a.video.width);
    }
  return d;
}

// Every scene is a query once per noise seed; mean AP over all (seed, query) pairs.
inline RetrievalReport retrieval_study(const FrozenExtractor<float>& extractor, const std::vector<RenderedScene>& scenes,
                                       const NoiseSchedule& s, int t, int seeds, double positive_fraction,
                                       std::uint64_t seed, float lambda_ca = 1.0f, float lambda_tsa = 1.0f) {
  require(scenes.size() >= 2, ErrorKind::empty_set, "retrieval needs at least two videos");
  require(seeds >= 1, ErrorKind::invalid_range, "retrieval needs at least one seed");
  const Mat<double> disc = pairwise_discrepancy(scenes);
  RetrievalReport r;
  r.seeds = seeds;
  r.queries = static_cast<int>(scenes.size());
  r.ours_per_query.assign(scenes.size(), 0.0);
  r.raw_per_query.assign(scenes.size(), 0.0);
  r.residual_per_query.assign(scenes.size(), 0.0);
  for (int k = 0; k < seeds; ++k) {
    std::vector<Mat<float>> ours, raw, res;
    for (std::size_t i = 0; i < scenes.size(); ++i) {
      const std::uint64_t ns = mix_seed(mix_seed(seed, static_cast<std::uint64_t>(k)), i);
      const auto noisy = noisy_probe_input(scenes[i].video, t, ns, s);
      ours.push_back(extractor.extract(noisy, t, generic_prompt(), lambda_ca, lambda_tsa).vector);
      raw.push_back(raw_latent_feature(noisy));
      res.push_back(residual_frame_feature(noisy));
    }
    double a = 0, b = 0, c = 0;
    for (int q = 0; q < r.queries; ++q) {
      const auto qi = static_cast<std::size_t>(q);
      const double x = retrieval_ap(ours, disc, q, positive_fraction);
      const double y = retrieval_ap(raw, disc, q, positive_fraction);
      const double z = retrieval_ap(res, disc, q, positive_fraction);
      a += x;
      b += y;
      c += z;
      r.ours_per_query[qi] += x / seeds;
      r.raw_per_query[qi] += y / seeds;
      r.residual_per_query[qi] += z / seeds;
    }
    r.ours_per_seed.push_back(a / r.queries);
    r.raw_per_seed.push_back(b / r.queries);
    r.residual_per_seed.push_back(c / r.queries);
  }
  for (int k = 0; k < seeds; ++k) {
    r.ours += r.ours_per_seed[static_cast<std::size_t>(k)] / seeds;
    r.raw += r.raw_per_seed[static_cast<std::size_t>(k)] / seeds;
    r.residual += r.residual_per_seed[static_cast<std::size_t>(k)] / seeds;
  }
  return r;
}

// ---- ablation ----

struct AblationReport {
  std::vector<double> full, no_ca, no_tsa;

  static double mean(const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / double(v.size());
  }

  nlohmann::ordered_json to_json() const {
    return {{"full", mean(full)},
            {"no_ca", mean(no_ca)},
            {"no_tsa", mean(no_tsa)},
            {"per_seed", {{"full", full}, {"no_ca", no_ca}, {"no_tsa", no_tsa}}}};
  }
};

// Customizes with both feature terms, without CA (lambda_ca = 0) and without TSA
// (lambda_tsa = 0) on the same reference, once per seed, scoring each generation.
inline AblationReport ablation_study(const Denoiser<float>& base, const LatentVideo<float>& ref,
                                     const PromptTokens& train_prompt, const PromptTokens& gen_prompt,
                                     const CustomizeConfig& cfg, int seeds, const NoiseSchedule& s) {
  require(seeds >= 1, ErrorKind::invalid_range, "ablation needs at least one seed");
  const auto eps_inv = invert_video(base, ref, train_prompt, cfg.ddim_steps, s);
  AblationReport r;
  for (int k = 0; k < seeds; ++k) {
    CustomizeConfig c = cfg;
    c.seed = mix_seed(cfg.seed, static_cast<std::uint64_t>(k));
    const std::uint64_t gen_seed = mix_seed(c.seed, 99);
    r.full.push_back(transfer_trial(base, ref, train_prompt, gen_prompt, eps_inv, c, gen_seed, s).discrepancy);
    CustomizeConfig nca = c;
    nca.lambda_ca = 0.0;
    r.no_ca.push_back(transfer_trial(base, ref, train_prompt, gen_prompt, eps_inv, nca, gen_seed, s).discrepancy);
    CustomizeConfig ntsa = c;
    ntsa.lambda_tsa = 0.0;
    r.no_tsa.push_back(transfer_trial(base, ref, train_prompt, gen_prompt, eps_inv, ntsa, gen_seed, s).discrepancy);
  }
  return r;
}

}  // namespace mfm

#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "mfm/checkpoint.hpp"
#include "mfm/pgm.hpp"
#include "mfm/studies.hpp"

namespace mfm::cli {

using ojson = nlohmann::ordered_json;
namespace fs = std::filesystem;

enum class Kind { str, integer, real, flag, u64 };

struct ParamSpec {
  std::string key;  // JSON key; the flag is --key with '_' replaced by '-'
  Kind kind;
  ojson fallback;   // null: required
  std::string help;
};

struct Command {
  std::string name;
  std::string help;
  std::vector<ParamSpec> params;
};

inline std::vector<Command> commands() {
  const ojson req;  // null marks a required value
  return {
      {"gen-data",
       "Render a synthetic corpus (manifest + .lvid/.csv/.txt per scene)",
       {{"out", Kind::str, req, "output corpus directory"},
        {"n", Kind::integer, 600, "number of scenes"},
        {"paired", Kind::flag, false, "emit same-motion / mirrored-motion pairs"},
        {"frames", Kind::integer, 8, "frames per video"},
        {"height", Kind::integer, 16, "frame height"},
        {"width", Kind::integer, 16, "frame width"},
        {"seed", Kind::u64, 0, "random seed"}}},
      {"pretrain",
       "Pretrain the base denoiser on a corpus",
       {{"data", Kind::str, req, "corpus directory"},
        {"out", Kind::str, req, "checkpoint path"},
        {"steps", Kind::integer, 2000, "optimizer steps"},
        {"batch", Kind::integer, 4, "videos per step"},
        {"lr", Kind::real, 2e-3, "peak learning rate"},
        {"warmup", Kind::integer, 100, "linear warmup steps"},
        {"clip", Kind::real, 1.0, "gradient norm clip"},
        {"caption_dropout", Kind::real, 0.15, "per-word generic replacement probability"},
        {"timesteps", Kind::integer, 100, "diffusion steps T"},
        {"beta_start", Kind::real, 1e-4, "first beta"},
        {"beta_end", Kind::real, 0.02, "last beta"},
        {"dim", Kind::integer, 64, "model width"},
        {"blocks", Kind::integer, 3, "block count"},
        {"heads", Kind::integer, 2, "attention heads"},
        {"seed", Kind::u64, 0, "random seed"}}},
      {"customize",
       "Fine-tune LoRA adapters on one reference video",
       {{"base", Kind::str, req, "base checkpoint"},
        {"ref", Kind::str, req, "reference .lvid"},
        {"prompt", Kind::str, req, "prompt describing the reference"},
        {"out", Kind::str, req, "adapter file"},
        {"steps", Kind::integer, 200, "optimizer steps"},
        {"lr", Kind::real, 5e-4, "learning rate"},
        {"lambda_ca", Kind::real, 1.0, "cross-attention feature weight"},
        {"lambda_tsa", Kind::real, 1.0, "temporal self-attention feature weight"},
        {"objective", Kind::str, "mfm", "mfm | ddpm | residual"},
        {"timestep_policy", Kind::str, "upper", "upper | all"},
        {"rank", Kind::integer, 4, "LoRA rank"},
        {"seed", Kind::u64, 0, "random seed"}}},
      {"generate",
       "Sample a video, optionally with adapters and inverted reference noise",
       {{"base", Kind::str, req, "base checkpoint"},
        {"adapters", Kind::str, "", "adapter file (empty: none)"},
        {"prompt", Kind::str, req, "generation prompt"},
        {"ref_for_inversion", Kind::str, "", "reference .lvid to invert (empty: none)"},
        {"inversion_prompt", Kind::str, "", "prompt used for inversion (empty: --prompt)"},
        {"beta_mix", Kind::real, 0.3, "share of inverted noise in the initial latent"},
        {"ddim_steps", Kind::integer, 25, "sampler steps"},
        {"out", Kind::str, req, "output .lvid"},
        {"seed", Kind::u64, 0, "random seed"}}},
      {"evaluate",
       "Motion discrepancy between a reference and generated videos",
       {{"ref", Kind::str, req, "reference .lvid"},
        {"gen", Kind::str, req, "generated .lvid (comma-separated for several)"},
        {"ref_tracks", Kind::str, "", "ground-truth trajectory CSV for the reference (empty: track it)"},
        {"grid", Kind::integer, 8, "tracker grid size"},
        {"radius", Kind::integer, 2, "tracker search radius"},
        {"out", Kind::str, "", "report path (empty: stdout only)"}}},
      {"ablate",
       "Full vs -CA vs -TSA customization on one reference",
       {{"base", Kind::str, req, "base checkpoint"},
        {"ref", Kind::str, req, "reference .lvid"},
        {"prompt", Kind::str, req, "prompt describing the reference"},
        {"gen_prompt", Kind::str, req, "generation prompt"},
        {"out", Kind::str, req, "report path"},
        {"seeds", Kind::integer, 3, "repetitions"},
        {"steps", Kind::integer, 200, "optimizer steps"},
        {"lr", Kind::real, 5e-4, "learning rate"},
        {"lambda_ca", Kind::real, 1.0, "cross-attention feature weight"},
        {"lambda_tsa", Kind::real, 1.0, "temporal self-attention feature weight"},
        {"rank", Kind::integer, 4, "LoRA rank"},
        {"beta_mix", Kind::real, 0.3, "share of inverted noise"},
        {"ddim_steps", Kind::integer, 25, "sampler steps"},
        {"seed", Kind::u64, 0, "random seed"}}},
      {"retrieve",
       "Motion retrieval AP with motion features vs raw latents vs residual frames",
       {{"base", Kind::str, req, "base checkpoint"},
        {"data", Kind::str, req, "corpus directory"},
        {"out", Kind::str, req, "report path"},
        {"t", Kind::integer, -1, "probe timestep (-1: T/2)"},
        {"seeds", Kind::integer, 10, "noise seeds"},
        {"positive_fraction", Kind::real, 0.1, "share of candidates labelled positive"},
        {"lambda_ca", Kind::real, 1.0, "cross-attention feature weight"},
        {"lambda_tsa", Kind::real, 1.0, "temporal self-attention feature weight"},
        {"seed", Kind::u64, 0, "random seed"}}},
      {"inspect-attn",
       "Dump CA and TSA maps of one video as PGM images",
       {{"base", Kind::str, req, "base checkpoint"},
        {"video", Kind::str, req, "input .lvid"},
        {"prompt", Kind::str, req, "prompt"},
        {"t", Kind::integer, -1, "noise timestep (-1: T/2, 0: clean)"},
        {"block", Kind::integer, -1, "block index (-1: feature block)"},
        {"out", Kind::str, req, "output directory"},
        {"seed", Kind::u64, 0, "random seed"}}},
  };
}

// Parses a flag string into the parameter's JSON type.
inline ojson convert(const ParamSpec& p, const std::string& v) {
  try {
    switch (p.kind) {
      case Kind::str: return v;
      case Kind::integer: {
        std::size_t pos = 0;
        const long long x = std::stoll(v, &pos);
        if (pos != v.size()) break;
        return x;
      }
      case Kind::u64: {
        std::size_t pos = 0;
        const unsigned long long x = std::stoull(v, &pos);
        if (pos != v.size() || (!v.empty() && v[0] == '-')) break;
        return x;
      }
      case Kind::real: {
        std::size_t pos = 0;
        const double x = std::stod(v, &pos);
        if (pos != v.size()) break;
        return x;
      }
      case Kind::flag:
        if (v == "true" || v == "1") return true;
        if (v == "false" || v == "0") return false;
        break;
    }
  } catch (const std::exception&) {
  }
  throw Error(ErrorKind::invalid_config, "bad value '" + v + "' for --" + p.key);
}

inline ojson check_type(const ParamSpec& p, const nlohmann::json& v) {
  const bool ok = (p.kind == Kind::str && v.is_string()) ||
                  (p.kind == Kind::integer && v.is_number_integer()) ||
                  (p.kind == Kind::u64 && v.is_number_unsigned()) ||
                  (p.kind == Kind::real && v.is_number()) || (p.kind == Kind::flag && v.is_boolean());
  require(ok, ErrorKind::invalid_config, "config value for '" + p.key + "' has the wrong type");
  if (p.kind == Kind::real) return v.get<double>();
  return ojson(v);
}

// defaults <- config file <- explicit flags, then MM_SEED as a seed fallback.
inline ojson resolve(const Command& cmd, const std::string& config_path,
                     const std::map<std::string, std::string>& given) {
  nlohmann::json file = nlohmann::json::object();
  if (!config_path.empty()) {
    std::ifstream is(config_path);
    require(static_cast<bool>(is), ErrorKind::io, "cannot open config " + config_path);
    try {
      file = nlohmann::json::parse(is);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::invalid_config, std::string("bad config file: ") + e.what());
    }
    require(file.is_object(), ErrorKind::invalid_config, "config file must hold a JSON object");
    for (auto it = file.begin(); it != file.end(); ++it) {
      if (it.key() == "command") {
        require(it.value() == cmd.name, ErrorKind::invalid_config,
                "config was written for '" + it.value().get<std::string>() + "', not '" + cmd.name + "'");
        continue;
      }
      bool known = false;
      for (const auto& p : cmd.params) known = known || p.key == it.key();
      require(known, ErrorKind::invalid_config, "unknown config key '" + it.key() + "' for " + cmd.name);
    }
  }
  ojson out;
  out["command"] = cmd.name;
  for (const auto& p : cmd.params) {
    ojson v = p.fallback;
    bool from_user = false;
    if (file.contains(p.key)) {
      v = check_type(p, file[p.key]);
      from_user = true;
    }
    if (auto it = given.find(p.key); it != given.end()) {
      v = convert(p, it->second);
      from_user = true;
    }
    if (!from_user && p.key == "seed") {
      if (const char* env = std::getenv("MM_SEED"); env && *env) v = convert(p, env);
    }
    require(!v.is_null(), ErrorKind::invalid_config, "missing required --" + p.key);
    out[p.key] = v;
  }
  return out;
}

inline std::string flag_name(const std::string& key) {
  std::string f = key;
  for (auto& c : f)
    if (c == '_') c = '-';
  return "--" + f;
}

inline void write_json(const fs::path& path, const ojson& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path);
  require(static_cast<bool>(os), ErrorKind::io, "cannot write " + path.string());
  os << j.dump(2) << '\n';
  require(static_cast<bool>(os), ErrorKind::io, "write failed: " + path.string());
}

// resolved_config.json goes into the output directory, or next to an output file.
inline void write_resolved(const fs::path& out, bool out_is_dir, const ojson& cfg) {
  const fs::path dir = out_is_dir ? out : (out.has_parent_path() ? out.parent_path() : fs::path("."));
  fs::create_directories(dir);
  write_json(dir / "resolved_config.json", cfg);
}

inline NoiseSchedule checkpoint_schedule(const fs::path& ckpt) {
  const auto f = read_tensor_file(ckpt, "denoiser");
  return ScheduleConfig::from_json(f.config.value("schedule", nlohmann::json::object())).build();
}

inline void save_base(const fs::path& path, const Denoiser<float>& model, const ScheduleConfig& sc) {
  save_denoiser(path, model, nlohmann::json{{"schedule", sc.to_json()}});
}

inline std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

// ---- subcommands ----

inline int cmd_gen_data(const ojson& c, std::ostream& os) {
  const fs::path out = c["out"].get<std::string>();
  const auto corpus = make_corpus(c["n"].get<int>(), c["seed"].get<std::uint64_t>(), c["paired"].get<bool>(),
                                  c["frames"].get<int>(), c["height"].get<int>(), c["width"].get<int>());
  write_corpus(out, corpus);
  write_resolved(out, true, c);
  os << ojson{{"scenes", corpus.scenes.size()}, {"out", out.string()}}.dump() << '\n';
  return 0;
}

inline int cmd_pretrain(const ojson& c, std::ostream& os) {
  const auto corpus = read_corpus(c["data"].get<std::string>());
  std::vector<RenderedScene> data;
  for (const auto& s : corpus.scenes) data.push_back(s.scene);
  DenoiserConfig mc;
  mc.frames = data[0].video.frames;
  mc.height = data[0].video.height;
  mc.width = data[0].video.width;
  mc.channels = data[0].video.channels;
  mc.dim = c["dim"].get<int>();
  mc.blocks = c["blocks"].get<int>();
  mc.heads = c["heads"].get<int>();
  mc.feature_block = std::min(mc.feature_block, mc.blocks - 1);
  mc.downsample_block = std::min(mc.downsample_block, mc.blocks - 1);
  mc.seed = c["seed"].get<std::uint64_t>();
  ScheduleConfig sc{c["timesteps"].get<int>(), c["beta_start"].get<double>(), c["beta_end"].get<double>()};
  PretrainConfig pc;
  pc.steps = c["steps"].get<int>();
  pc.batch = c["batch"].get<int>();
  pc.lr = c["lr"].get<double>();
  pc.warmup = c["warmup"].get<int>();
  pc.clip = c["clip"].get<double>();
  pc.caption_dropout = c["caption_dropout"].get<double>();
  pc.seed = mix_seed(mc.seed, 17);
  ojson log = ojson::array();
  pc.on_log = [&log](int step, double loss) { log.push_back({{"step", step}, {"loss", loss}}); };
  const auto s = sc.build();
  const auto model = pretrain_base(data, mc, s, pc);
  const fs::path out = c["out"].get<std::string>();
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  save_base(out, model, sc);
  write_resolved(out, false, c);
  ojson report{{"config", c}, {"loss_log", log}};
  write_json(fs::path(out.string() + ".json"), report);
  os << ojson{{"checkpoint", out.string()}, {"final_loss", log.empty() ? ojson() : log.back()["loss"]}}.dump() << '\n';
  return 0;
}

inline CustomizeConfig customize_config(const ojson& c) {
  CustomizeConfig cc;
  cc.steps = c["steps"].get<int>();
  cc.lr = c["lr"].get<double>();
  cc.lambda_ca = c["lambda_ca"].get<double>();
  cc.lambda_tsa = c["lambda_tsa"].get<double>();
  cc.rank = c["rank"].get<int>();
  cc.seed = c["seed"].get<std::uint64_t>();
  if (c.contains("objective")) cc.objective = parse_objective(c["objective"].get<std::string>());
  if (c.contains("timestep_policy")) cc.timesteps = c["timestep_policy"].get<std::string>();
  if (c.contains("beta_mix")) cc.beta_mix = c["beta_mix"].get<double>();
  if (c.contains("ddim_steps")) cc.ddim_steps = c["ddim_steps"].get<int>();
  cc.validate();
  return cc;
}

inline int cmd_customize(const ojson& c, std::ostream& os) {
  const std::string base_path = c["base"].get<std::string>();
  const auto base = load_denoiser<float>(base_path);
  const auto s = checkpoint_schedule(base_path);
  const auto ref = read_lvid<float>(c["ref"].get<std::string>());
  const auto prompt = PromptTokens::parse(c["prompt"].get<std::string>());
  const auto cc = customize_config(c);
  std::vector<double> losses;
  const auto adapters = customize(base, ref, prompt, cc, s, &losses);
  const fs::path out = c["out"].get<std::string>();
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  save_adapters(out, adapters);
  write_resolved(out, false, c);
  write_json(fs::path(out.string() + ".json"), ojson{{"config", c}, {"losses", losses}});
  os << ojson{{"adapters", out.string()}, {"targets", adapters.size()}, {"parameters", adapters.parameter_count()}}.dump()
     << '\n';
  return 0;
}

inline int cmd_generate(const ojson& c, std::ostream& os) {
  const std::string base_path = c["base"].get<std::string>();
  const auto base = load_denoiser<float>(base_path);
  const auto s = checkpoint_schedule(base_path);
  const auto prompt = PromptTokens::parse(c["prompt"].get<std::string>());
  AdapterSet<float> adapters;
  if (const auto a = c["adapters"].get<std::string>(); !a.empty()) adapters = load_adapters<float>(a);
  std::optional<LatentVideo<float>> eps_inv;
  const int steps = c["ddim_steps"].get<int>();
  if (const auto r = c["ref_for_inversion"].get<std::string>(); !r.empty()) {
    const auto inv_text = c["inversion_prompt"].get<std::string>();
    const auto inv_prompt = inv_text.empty() ? prompt : PromptTokens::parse(inv_text);
    eps_inv = invert_video(base, read_lvid<float>(r), inv_prompt, steps, s);
  }
  const auto video = generate(base, adapters, prompt, eps_inv, c["beta_mix"].get<double>(), steps,
                              c["seed"].get<std::uint64_t>(), s);
  const fs::path out = c["out"].get<std::string>();
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  write_lvid(out, video);
  write_resolved(out, false, c);
  os << ojson{{"video", out.string()}}.dump() << '\n';
  return 0;
}

inline int cmd_evaluate(const ojson& c, std::ostream& os) {
  const auto ref = read_lvid<float>(c["ref"].get<std::string>());
  const int grid = c["grid"].get<int>(), radius = c["radius"].get<int>();
  const auto ref_tracks_path = c["ref_tracks"].get<std::string>();
  const TrajectorySet ref_tracks =
      ref_tracks_path.empty() ? track_points(ref, grid, radius) : read_trajectories_csv(ref_tracks_path);
  const auto gens = split_commas(c["gen"].get<std::string>());
  require(!gens.empty(), ErrorKind::invalid_config, "--gen names no videos");
  ojson pairs = ojson::array();
  double sum = 0, lo = 0, hi = 0;
  for (std::size_t i = 0; i < gens.size(); ++i) {
    const auto gen = read_lvid<float>(gens[i]);
    require_same_shape(ref, gen, "evaluate: reference and generated shapes differ");
    const double d = chamfer_motion_discrepancy(ref_tracks, track_points(gen, grid, radius), ref.frames, ref.height,
                                                ref.width);
    pairs.push_back({{"gen", gens[i]}, {"discrepancy", d}});
    sum += d;
    lo = i == 0 ? d : std::min(lo, d);
    hi = i == 0 ? d : std::max(hi, d);
  }
  const ojson report{{"pairs", pairs},
                     {"summary", {{"mean", sum / double(gens.size())}, {"min", lo}, {"max", hi}, {"count", gens.size()}}},
                     {"config", c}};
  if (const auto out = c["out"].get<std::string>(); !out.empty()) {
    write_json(out, report);
    write_resolved(out, false, c);
  }
  os << report.dump(2) << '\n';
  return 0;
}

inline int cmd_ablate(const ojson& c, std::ostream& os) {
  const std::string base_path = c["base"].get<std::string>();
  const auto base = load_denoiser<float>(base_path);
  const auto s = checkpoint_schedule(base_path);
  const auto ref = read_lvid<float>(c["ref"].get<std::string>());
  const auto cc = customize_config(c);
  const auto r = ablation_study(base, ref, PromptTokens::parse(c["prompt"].get<std::string>()),
                                PromptTokens::parse(c["gen_prompt"].get<std::string>()), cc, c["seeds"].get<int>(), s);
  ojson report = r.to_json();
  report["config"] = c;
  const fs::path out = c["out"].get<std::string>();
  write_json(out, report);
  write_resolved(out, false, c);
  os << report.dump(2) << '\n';
  return 0;
}

inline int cmd_retrieve(const ojson& c, std::ostream& os) {
  const std::string base_path = c["base"].get<std::string>();
  const auto base = load_denoiser<float>(base_path);
  const auto s = checkpoint_schedule(base_path);
  const auto corpus = read_corpus(c["data"].get<std::string>());
  std::vector<RenderedScene> scenes;
  for (const auto& sc : corpus.scenes) scenes.push_back(sc.scene);
  int t = c["t"].get<int>();
  if (t < 0) t = s.steps() / 2;
  s.require_timestep(t, 0);
  const FrozenExtractor<float> extractor(base);
  const auto r = retrieval_study(extractor, scenes, s, t, c["seeds"].get<int>(), c["positive_fraction"].get<double>(),
                                 c["seed"].get<std::uint64_t>(), float(c["lambda_ca"].get<double>()),
                                 float(c["lambda_tsa"].get<double>()));
  ojson report = r.to_json();
  report["t"] = t;
  report["config"] = c;
  const fs::path out = c["out"].get<std::string>();
  write_json(out, report);
  write_resolved(out, false, c);
  os << report.dump(2) << '\n';
  return 0;
}

inline int cmd_inspect(const ojson& c, std::ostream& os) {
  const std::string base_path = c["base"].get<std::string>();
  const auto base = load_denoiser<float>(base_path);
  const auto s = checkpoint_schedule(base_path);
  const auto video = read_lvid<float>(c["video"].get<std::string>());
  const auto prompt = PromptTokens::parse(c["prompt"].get<std::string>());
  int t = c["t"].get<int>();
  if (t < 0) t = s.steps() / 2;
  int block = c["block"].get<int>();
  if (block < 0) block = base.config().feature_block;
  require(block < base.config().blocks, ErrorKind::block_out_of_range, "block index out of range");
  const auto noisy = noisy_probe_input(video, t, c["seed"].get<std::uint64_t>(), s);
  const auto maps = base.denoise_until_block(noisy, t, prompt, block).back();
  const fs::path out = c["out"].get<std::string>();
  fs::create_directories(out);
  ojson files = ojson::array();
  auto record = [&](const std::string& name, const PgmBounds& b, const ojson& what) {
    ojson e = what;
    e["file"] = name;
    e["min"] = b.min;
    e["max"] = b.max;
    files.push_back(e);
  };
  const int H = maps.ca.height, W = maps.ca.width, F = maps.ca.frames;
  for (std::size_t l = 0; l < prompt.ids.size(); ++l) {
    const std::string word(vocab::word(prompt.ids[l]));
    for (int f = 0; f < F; ++f) {
      Mat<float> img(H, W);
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) img(y, x) = maps.ca.at(f, y, x, static_cast<int>(l));
      char name[96];
      std::snprintf(name, sizeof(name), "ca_w%zu_%s_f%d.pgm", l, word.c_str(), f);
      record(name, write_pgm(out / name, img), {{"map", "ca"}, {"word", word}, {"word_index", l}, {"frame", f}});
    }
  }
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      Mat<float> img(F, F);
      for (int a = 0; a < F; ++a)
        for (int b = 0; b < F; ++b) img(a, b) = maps.tsa.at(y, x, a, b);
      char name[64];
      std::snprintf(name, sizeof(name), "tsa_y%d_x%d.pgm", y, x);
      record(name, write_pgm(out / name, img), {{"map", "tsa"}, {"y", y}, {"x", x}});
    }
  const ojson sidecar{{"block", block}, {"t", t}, {"prompt", prompt.text()}, {"files", files}, {"config", c}};
  write_json(out / "maps.json", sidecar);
  write_resolved(out, true, c);
  os << ojson{{"out", out.string()}, {"images", files.size()}}.dump() << '\n';
  return 0;
}

inline int dispatch(const ojson& c, std::ostream& os) {
  const auto name = c["command"].get<std::string>();
  if (name == "gen-data") return cmd_gen_data(c, os);
  if (name == "pretrain") return cmd_pretrain(c, os);
  if (name == "customize") return cmd_customize(c, os);
  if (name == "generate") return cmd_generate(c, os);
  if (name == "evaluate") return cmd_evaluate(c, os);
  if (name == "ablate") return cmd_ablate(c, os);
  if (name == "retrieve") return cmd_retrieve(c, os);
  if (name == "inspect-attn") return cmd_inspect(c, os);
  throw Error(ErrorKind::invalid_config, "unknown command " + name);
}

inline const char* kind_name(ErrorKind k) {
  switch (k) {
    case ErrorKind::invalid_range: return "invalid_range";
    case ErrorKind::shape_mismatch: return "shape_mismatch";
    case ErrorKind::timestep_out_of_range: return "timestep_out_of_range";
    case ErrorKind::degenerate_coefficient: return "degenerate_coefficient";
    case ErrorKind::sigma_out_of_range: return "sigma_out_of_range";
    case ErrorKind::unknown_token: return "unknown_token";
    case ErrorKind::unknown_target: return "unknown_target";
    case ErrorKind::rank_too_large: return "rank_too_large";
    case ErrorKind::invalid_config: return "invalid_config";
    case ErrorKind::block_out_of_range: return "block_out_of_range";
    case ErrorKind::empty_set: return "empty_set";
    case ErrorKind::divergence: return "divergence";
    case ErrorKind::io: return "io";
    case ErrorKind::format: return "format";
  }
  return "error";
}

// Exit codes: 0 success, 1 validation or runtime failure, 2 usage error.
inline int run(int argc, const char* const* argv, std::ostream& os = std::cout, std::ostream& es = std::cerr) {
  CLI::App app{"mfm: motion feature matching on a toy video diffusion model"};
  app.require_subcommand(1);
  const auto cmds = commands();
  std::vector<std::map<std::string, std::string>> values(cmds.size());
  std::vector<std::string> config_paths(cmds.size());
  std::vector<CLI::App*> subs;
  std::vector<std::vector<std::pair<std::string, CLI::Option*>>> options(cmds.size());
  for (std::size_t i = 0; i < cmds.size(); ++i) {
    auto* sub = app.add_subcommand(cmds[i].name, cmds[i].help);
    sub->add_option("--config", config_paths[i], "JSON file of parameter values (flags override it)");
    for (const auto& p : cmds[i].params) {
      std::string help = p.help;
      if (!p.fallback.is_null()) help += " [" + p.fallback.dump() + "]";
      CLI::Option* o = nullptr;
      if (p.kind == Kind::flag) {
        o = sub->add_flag(flag_name(p.key), help);
      } else {
        o = sub->add_option(flag_name(p.key), help)->type_name("VALUE")->expected(1);
      }
      options[i].emplace_back(p.key, o);
    }
    subs.push_back(sub);
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    app.exit(e, os, es);
    return 0;
  } catch (const CLI::CallForAllHelp& e) {
    app.exit(e, os, es);
    return 0;
  } catch (const CLI::ParseError& e) {
    app.exit(e, os, es);
    return 2;
  }
  for (std::size_t i = 0; i < cmds.size(); ++i) {
    if (!subs[i]->parsed()) continue;
    try {
      std::map<std::string, std::string> given;
      for (const auto& [key, opt] : options[i]) {
        if (opt->count() == 0) continue;
        const auto res = opt->results();
        given[key] = res.empty() ? "true" : res.back();
      }
      // Flags carry no value of their own.
      for (const auto& p : cmds[i].params)
        if (p.kind == Kind::flag && given.count(p.key) && given[p.key] != "false" && given[p.key] != "0")
          given[p.key] = "true";
      const auto cfg = resolve(cmds[i], config_paths[i], given);
      return dispatch(cfg, os);
    } catch (const Error& e) {
      es << ojson{{"error", kind_name(e.kind())}, {"message", e.what()}}.dump() << '\n';
      return 1;
    } catch (const nlohmann::json::exception& e) {
      es << ojson{{"error", "invalid_config"}, {"message", e.what()}}.dump() << '\n';
      return 1;
    } catch (const std::exception& e) {
      es << ojson{{"error", "failure"}, {"message", e.what()}}.dump() << '\n';
      return 1;
    }
  }
  return 2;
}

}  // namespace mfm::cli

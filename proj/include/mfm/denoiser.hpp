#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"

#include "mfm/layers.hpp"
#include "mfm/maps.hpp"
#include "mfm/video.hpp"
#include "mfm/vocab.hpp"

namespace mfm {

struct DenoiserConfig {
  int frames = 8;
  int height = 16;
  int width = 16;
  int channels = 3;
  int dim = 64;
  int text_dim = 32;
  int blocks = 3;
  int heads = 2;
  // Block that runs at half resolution (pooled before it, upsampled after it); -1 for none.
  int downsample_block = 2;
  // Block whose attention maps form the motion features.
  int feature_block = 2;
  int vocab = vocab::kSize;
  int max_prompt = 8;
  int ff_mult = 2;
  int time_dim = 64;
  std::uint64_t seed = 0;

  // D=8, F=2, 4x4 latent: small enough for finite-difference checks.
  static DenoiserConfig micro() {
    DenoiserConfig c;
    c.frames = 2;
    c.height = 4;
    c.width = 4;
    c.dim = 8;
    c.text_dim = 8;
    c.time_dim = 8;
    return c;
  }

  int block_height(int b) const { return b == downsample_block ? height / 2 : height; }
  int block_width(int b) const { return b == downsample_block ? width / 2 : width; }

  void validate() const {
    auto bad = [](bool cond, const std::string& what) { require(!cond, ErrorKind::invalid_config, what); };
    bad(frames < 1 || height < 1 || width < 1 || channels < 1, "latent dimensions must be >= 1");
    bad(blocks < 1, "need at least one block");
    bad(feature_block < 0 || feature_block >= blocks, "feature block index must be < block count");
    bad(downsample_block >= blocks, "downsample block index must be < block count");
    bad(heads < 1 || dim % heads != 0, "model width must be divisible by the head count");
    bad(time_dim < 2 || time_dim % 2 != 0, "time embedding width must be even");
    bad(vocab < 2 || max_prompt < 1 || text_dim < 1 || ff_mult < 1, "bad text/ff sizes");
    if (downsample_block >= 0) bad(height % 2 != 0 || width % 2 != 0, "downsampling needs even spatial size");
    bad(block_height(feature_block) < 2 || block_width(feature_block) < 2, "feature resolution must be >= 2x2");
  }

  nlohmann::ordered_json to_json() const {
    return {{"frames", frames},         {"height", height},
            {"width", width},           {"channels", channels},
            {"dim", dim},               {"text_dim", text_dim},
            {"blocks", blocks},         {"heads", heads},
            {"downsample_block", downsample_block}, {"feature_block", feature_block},
            {"vocab", vocab},           {"max_prompt", max_prompt},
            {"ff_mult", ff_mult},       {"time_dim", time_dim},
            {"seed", seed}};
  }

  static DenoiserConfig from_json(const nlohmann::json& j) {
    DenoiserConfig c;
    c.frames = j.value("frames", c.frames);
    c.height = j.value("height", c.height);
    c.width = j.value("width", c.width);
    c.channels = j.value("channels", c.channels);
    c.dim = j.value("dim", c.dim);
    c.text_dim = j.value("text_dim", c.text_dim);
    c.blocks = j.value("blocks", c.blocks);
    c.heads = j.value("heads", c.heads);
    c.downsample_block = j.value("downsample_block", c.downsample_block);
    c.feature_block = j.value("feature_block", c.feature_block);
    c.vocab = j.value("vocab", c.vocab);
    c.max_prompt = j.value("max_prompt", c.max_prompt);
    c.ff_mult = j.value("ff_mult", c.ff_mult);
    c.time_dim = j.value("time_dim", c.time_dim);
    c.seed = j.value("seed", c.seed);
    return c;
  }

  bool operator==(const DenoiserConfig&) const = default;
};

template <class T>
struct AttentionLayer {
  Linear<T> q, k, v, o;
};

template <class T>
struct DenoiserBlock {
  LayerNorm<T> conv_norm;
  Linear<T> conv;  // 3x3 spatial convolution as a (9 D) -> D map over im2col patches
  LayerNorm<T> ca_norm;
  AttentionLayer<T> ca;
  LayerNorm<T> tsa_norm;
  Param<T> frame_pos;  // F x D
  AttentionLayer<T> tsa;
  LayerNorm<T> ff_norm;
  Linear<T> ff1, ff2;
};

// Everything an attention block exposes to capture hooks.
template <class T>
struct BlockCapture {
  int block = 0;
  int frames = 0;
  int height = 0;
  int width = 0;
  Var<T> ca_input;
  Var<T> ca_map;
  Var<T> tsa_input;
  Var<T> tsa_map;
};

template <class T>
struct ForwardResult {
  Var<T> eps;  // invalid after an early exit
  std::vector<BlockCapture<T>> captures;
};

// Value snapshot of one block's captures.
template <class T>
struct BlockMaps {
  CAMap<T> ca;
  TSAMap<T> tsa;
  Activation<T> ca_input;
  Activation<T> tsa_input;
};

template <class T>
BlockMaps<T> snapshot(const BlockCapture<T>& c, int words) {
  BlockMaps<T> m;
  m.ca = {c.frames, c.height, c.width, words, c.ca_map.value()};
  m.tsa = {c.height, c.width, c.frames, c.tsa_map.value()};
  m.ca_input = {c.frames, c.height, c.width, c.ca_input.value()};
  m.tsa_input = {c.frames, c.height, c.width, c.tsa_input.value()};
  return m;
}

inline std::vector<double> timestep_embedding(int t, int dim) {
  std::vector<double> e(static_cast<std::size_t>(dim));
  const int half = dim / 2;
  for (int i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * double(i) / double(half));
    e[static_cast<std::size_t>(i)] = std::sin(double(t) * freq);
    e[static_cast<std::size_t>(half + i)] = std::cos(double(t) * freq);
  }
  return e;
}

// Toy text-conditioned spatio-temporal noise predictor. Each block applies, with
// residual connections: 3x3 spatial conv -> cross-attention to the prompt -> temporal
// self-attention per spatial site -> feedforward. One block runs at half resolution.
template <class T>
class Denoiser {
 public:
  Denoiser() = default;

  explicit Denoiser(const DenoiserConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(cfg_.seed);
    const int d = cfg_.dim;
    token_embed_.value = rng.normal_matrix<T>(cfg_.vocab, cfg_.text_dim, 1.0);
    pos_embed_.value = rng.normal_matrix<T>(cfg_.max_prompt, cfg_.text_dim, 0.1);
    time1_ = Linear<T>(cfg_.time_dim, d, true, rng);
    time2_ = Linear<T>(d, d, true, rng);
    in_proj_ = Linear<T>(cfg_.channels, d, true, rng);
    blocks_.resize(static_cast<std::size_t>(cfg_.blocks));
    for (auto& b : blocks_) {
      b.conv_norm = LayerNorm<T>(d);
      b.conv = Linear<T>(9 * d, d, true, rng, 0.5);
      b.ca_norm = LayerNorm<T>(d);
      b.ca.q = Linear<T>(d, d, false, rng);
      b.ca.k = Linear<T>(cfg_.text_dim, d, false, rng);
      b.ca.v = Linear<T>(cfg_.text_dim, d, false, rng);
      b.ca.o = Linear<T>(d, d, true, rng, 0.5);
      b.tsa_norm = LayerNorm<T>(d);
      b.frame_pos.value = rng.normal_matrix<T>(cfg_.frames, d, 0.1);
      b.tsa.q = Linear<T>(d, d, false, rng);
      b.tsa.k = Linear<T>(d, d, false, rng);
      b.tsa.v = Linear<T>(d, d, false, rng);
      b.tsa.o = Linear<T>(d, d, true, rng, 0.5);
      b.ff_norm = LayerNorm<T>(d);
      b.ff1 = Linear<T>(d, cfg_.ff_mult * d, true, rng);
      b.ff2 = Linear<T>(cfg_.ff_mult * d, d, true, rng, 0.5);
    }
    out_norm_ = LayerNorm<T>(d);
    out_proj_ = Linear<T>(d, cfg_.channels, true, rng);
  }

  const DenoiserConfig& config() const { return cfg_; }

  // Full or truncated forward pass on a tape. With stop_block >= 0 the pass ends after
  // that block and `eps` is left invalid.
  ForwardResult<T> forward(Tape<T>& tape, Var<T> z, int t, const PromptTokens& prompt, bool capture,
                           int stop_block = -1) const {
    const int F = cfg_.frames;
    require(z.rows() == Eigen::Index(F) * cfg_.height * cfg_.width && z.cols() == cfg_.channels,
            ErrorKind::shape_mismatch, "denoise: latent shape differs from model config");
    require(stop_block < cfg_.blocks, ErrorKind::block_out_of_range, "stop block index out of range");
    for (int id : prompt.ids)
      require(id > 0 && id < cfg_.vocab, ErrorKind::unknown_token, "prompt token id outside vocabulary");

    const std::vector<int> ids = prompt.padded(cfg_.max_prompt);
    std::vector<char> mask(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) mask[i] = ids[i] != vocab::kPad;

    ForwardResult<T> res;
    Var<T> text = ops::add(ops::gather_rows(tape.param(token_embed_), ids), tape.param(pos_embed_));

    Mat<T> temb_in(1, cfg_.time_dim);
    const auto te = timestep_embedding(t, cfg_.time_dim);
    for (int i = 0; i < cfg_.time_dim; ++i) temb_in(0, i) = T(te[static_cast<std::size_t>(i)]);
    Var<T> temb = time2_(tape, ops::silu(time1_(tape, tape.constant(std::move(temb_in)))));

    Var<T> h = in_proj_(tape, z);
    Var<T> skip;
    for (int bi = 0; bi < cfg_.blocks; ++bi) {
      const auto& b = blocks_[static_cast<std::size_t>(bi)];
      const int H = cfg_.block_height(bi), W = cfg_.block_width(bi);
      if (bi == cfg_.downsample_block) {
        skip = h;
        h = ops::avg_pool2(h, F, cfg_.height, cfg_.width);
      }
      h = ops::add_row(h, temb);

      Var<T> a = ops::silu(b.conv_norm(tape, h));
      h = ops::add(h, b.conv(tape, ops::im2col3x3(a, F, H, W)));

      Var<T> ca_in = b.ca_norm(tape, h);
      Var<T> ca_p = ops::cross_attn_probs(b.ca.q(tape, ca_in), b.ca.k(tape, text), cfg_.heads, mask);
      h = ops::add(h, b.ca.o(tape, ops::cross_attn_apply(ca_p, b.ca.v(tape, text), cfg_.heads)));

      Var<T> tsa_in = ops::add_grouped_rows(b.tsa_norm(tape, h), tape.param(b.frame_pos), Eigen::Index(H) * W);
      Var<T> tsa_p =
          ops::temporal_attn_probs(b.tsa.q(tape, tsa_in), b.tsa.k(tape, tsa_in), cfg_.heads, F, H * W);
      h = ops::add(h, b.tsa.o(tape, ops::temporal_attn_apply(tsa_p, b.tsa.v(tape, tsa_in), cfg_.heads, F, H * W)));

      h = ops::add(h, b.ff2(tape, ops::silu(b.ff1(tape, b.ff_norm(tape, h)))));

      if (capture) {
        res.captures.push_back({bi, F, H, W, ca_in, ops::head_mean(ca_p, cfg_.heads), tsa_in,
                                ops::head_mean(tsa_p, cfg_.heads)});
      }
      if (bi == stop_block) return res;
      if (bi == cfg_.downsample_block) h = ops::add(ops::upsample2(h, F, H, W), skip);
    }
    res.eps = out_proj_(tape, ops::silu(out_norm_(tape, h)));
    return res;
  }

  LatentVideo<T> denoise(const LatentVideo<T>& z, int t, const PromptTokens& prompt) const {
    Tape<T> tape(false);
    auto r = forward(tape, tape.constant(z.data), t, prompt, false);
    return LatentVideo<T>::from(z, r.eps.value());
  }

  struct Captured {
    LatentVideo<T> eps;
    std::vector<BlockMaps<T>> blocks;
  };

  Captured denoise_with_capture(const LatentVideo<T>& z, int t, const PromptTokens& prompt) const {
    Tape<T> tape(false);
    auto r = forward(tape, tape.constant(z.data), t, prompt, true);
    Captured out{LatentVideo<T>::from(z, r.eps.value()), {}};
    for (const auto& c : r.captures) out.blocks.push_back(snapshot(c, cfg_.max_prompt));
    return out;
  }

  // Runs blocks 0..stop_block only. `flops`, when given, receives the arithmetic count.
  std::vector<BlockMaps<T>> denoise_until_block(const LatentVideo<T>& z, int t, const PromptTokens& prompt,
                                                int stop_block, std::uint64_t* flops = nullptr) const {
    require(stop_block >= 0 && stop_block < cfg_.blocks, ErrorKind::block_out_of_range,
            "stop block index out of range");
    Tape<T> tape(false);
    auto r = forward(tape, tape.constant(z.data), t, prompt, true, stop_block);
    if (flops) *flops = tape.flops;
    std::vector<BlockMaps<T>> out;
    for (const auto& c : r.captures) out.push_back(snapshot(c, cfg_.max_prompt));
    return out;
  }

  // Text embedding tau(y) (L x D_txt) for the given prompt.
  Mat<T> text_embedding(const PromptTokens& prompt) const {
    const auto ids = prompt.padded(cfg_.max_prompt);
    Mat<T> out(cfg_.max_prompt, cfg_.text_dim);
    for (int i = 0; i < cfg_.max_prompt; ++i)
      out.row(i) = token_embed_.value.row(ids[static_cast<std::size_t>(i)]) + pos_embed_.value.row(i);
    return out;
  }

  AttentionProjection<T> cross_projection(int block) const {
    const auto& b = blocks_.at(static_cast<std::size_t>(block));
    return {b.ca.q.effective_weight(), b.ca.k.effective_weight(), cfg_.heads};
  }
  AttentionProjection<T> temporal_projection(int block) const {
    const auto& b = blocks_.at(static_cast<std::size_t>(block));
    return {b.tsa.q.effective_weight(), b.tsa.k.effective_weight(), cfg_.heads};
  }

  // Visits every base parameter with a stable dotted name, in a fixed order.
  template <class F>
  void visit_params(F&& fn) {
    visit_impl(*this, fn);
  }
  template <class F>
  void visit_params(F&& fn) const {
    visit_impl(*this, fn);
  }

  // Visits every linear map (the possible adapter targets).
  template <class F>
  void visit_linears(F&& fn) {
    visit_linears_impl(*this, fn);
  }
  template <class F>
  void visit_linears(F&& fn) const {
    visit_linears_impl(*this, fn);
  }

  void set_trainable(bool on) {
    visit_params([on](const std::string&, Param<T>& p) { p.trainable = on; });
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    visit_params([&n](const std::string&, const Param<T>& p) { n += static_cast<std::size_t>(p.value.size()); });
    return n;
  }

  template <class U>
  Denoiser<U> cast() const {
    Denoiser<U> out(cfg_);
    std::vector<const Param<T>*> src;
    visit_params([&src](const std::string&, const Param<T>& p) { src.push_back(&p); });
    std::size_t i = 0;
    out.visit_params([&](const std::string&, Param<U>& p) {
      p.value = src[i]->value.template cast<U>();
      p.trainable = src[i]->trainable;
      ++i;
    });
    std::vector<const Linear<T>*> lins;
    visit_linears([&lins](const std::string&, const Linear<T>& l) { lins.push_back(&l); });
    i = 0;
    out.visit_linears([&](const std::string&, Linear<U>& l) {
      const Linear<T>& src_l = *lins[i++];
      if (src_l.premerge_weight) l.premerge_weight = src_l.premerge_weight->template cast<U>();
      if (!src_l.lora) return;
      LoraAdapter<U> a;
      a.down.value = src_l.lora->down.value.template cast<U>();
      a.up.value = src_l.lora->up.value.template cast<U>();
      a.down.trainable = src_l.lora->down.trainable;
      a.up.trainable = src_l.lora->up.trainable;
      a.scale = U(src_l.lora->scale);
      l.lora = std::move(a);
    });
    return out;
  }

 private:
  template <class Self, class F>
  static void visit_impl(Self& self, F& fn) {
    auto lin = [&fn](const std::string& name, auto& l) {
      fn(name + ".weight", l.weight);
      if (l.has_bias()) fn(name + ".bias", l.bias);
    };
    auto norm = [&fn](const std::string& name, auto& n) {
      fn(name + ".gamma", n.gamma);
      fn(name + ".beta", n.beta);
    };
    fn(std::string("text.token_embed"), self.token_embed_);
    fn(std::string("text.pos_embed"), self.pos_embed_);
    lin("time.fc1", self.time1_);
    lin("time.fc2", self.time2_);
    lin("in_proj", self.in_proj_);
    for (std::size_t i = 0; i < self.blocks_.size(); ++i) {
      auto& b = self.blocks_[i];
      const std::string p = "blocks." + std::to_string(i) + ".";
      norm(p + "conv_norm", b.conv_norm);
      lin(p + "conv", b.conv);
      norm(p + "ca_norm", b.ca_norm);
      lin(p + "ca.q", b.ca.q);
      lin(p + "ca.k", b.ca.k);
      lin(p + "ca.v", b.ca.v);
      lin(p + "ca.o", b.ca.o);
      norm(p + "tsa_norm", b.tsa_norm);
      fn(p + "tsa.frame_pos", b.frame_pos);
      lin(p + "tsa.q", b.tsa.q);
      lin(p + "tsa.k", b.tsa.k);
      lin(p + "tsa.v", b.tsa.v);
      lin(p + "tsa.o", b.tsa.o);
      norm(p + "ff_norm", b.ff_norm);
      lin(p + "ff.fc1", b.ff1);
      lin(p + "ff.fc2", b.ff2);
    }
    norm("out_norm", self.out_norm_);
    lin("out_proj", self.out_proj_);
  }

  template <class Self, class F>
  static void visit_linears_impl(Self& self, F& fn) {
    fn(std::string("time.fc1"), self.time1_);
    fn(std::string("time.fc2"), self.time2_);
    fn(std::string("in_proj"), self.in_proj_);
    for (std::size_t i = 0; i < self.blocks_.size(); ++i) {
      auto& b = self.blocks_[i];
      const std::string p = "blocks." + std::to_string(i) + ".";
      fn(p + "conv", b.conv);
      fn(p + "ca.q", b.ca.q);
      fn(p + "ca.k", b.ca.k);
      fn(p + "ca.v", b.ca.v);
      fn(p + "ca.o", b.ca.o);
      fn(p + "tsa.q", b.tsa.q);
      fn(p + "tsa.k", b.tsa.k);
      fn(p + "tsa.v", b.tsa.v);
      fn(p + "tsa.o", b.tsa.o);
      fn(p + "ff.fc1", b.ff1);
      fn(p + "ff.fc2", b.ff2);
    }
    fn(std::string("out_proj"), self.out_proj_);
  }

  DenoiserConfig cfg_;
  Param<T> token_embed_;
  Param<T> pos_embed_;
  Linear<T> time1_, time2_;
  Linear<T> in_proj_;
  std::vector<DenoiserBlock<T>> blocks_;
  LayerNorm<T> out_norm_;
  Linear<T> out_proj_;
};

}  // namespace mfm

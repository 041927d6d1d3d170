#pragma once

#include <algorithm>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "mfm/denoiser.hpp"

namespace mfm {

template <class T>
struct NamedAdapter {
  std::string target;
  LoraAdapter<T> adapter;
};

// Adapters detached from any model, keyed by target layer name.
template <class T>
struct AdapterSet {
  std::vector<NamedAdapter<T>> adapters;

  bool empty() const { return adapters.empty(); }
  std::size_t size() const { return adapters.size(); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& a : adapters) n += static_cast<std::size_t>(a.adapter.down.value.size() + a.adapter.up.value.size());
    return n;
  }
};

// Temporal self-attention projections, feedforward layers and the spatial conv of every
// block. The conv stands in for the spatial self-attention of a full-size backbone.
inline std::vector<std::string> default_lora_targets(const DenoiserConfig& cfg) {
  std::vector<std::string> out;
  for (int b = 0; b < cfg.blocks; ++b) {
    const std::string p = "blocks." + std::to_string(b) + ".";
    for (const char* s : {"conv", "tsa.q", "tsa.k", "tsa.v", "tsa.o", "ff.fc1", "ff.fc2"}) out.push_back(p + s);
  }
  return out;
}

// Freezes every base parameter and attaches a fresh adapter to each target.
template <class T>
void attach_lora(Denoiser<T>& model, const std::vector<std::string>& targets, int rank, T scale, std::uint64_t seed) {
  require(rank >= 1, ErrorKind::invalid_range, "LoRA rank must be >= 1");
  std::set<std::string> wanted(targets.begin(), targets.end());
  std::set<std::string> found;
  // Validate before mutating anything.
  model.visit_linears([&](const std::string& name, const Linear<T>& l) {
    if (!wanted.count(name)) return;
    found.insert(name);
    require(rank <= std::min(l.in_dim(), l.out_dim()), ErrorKind::rank_too_large,
            "rank " + std::to_string(rank) + " exceeds min(d_in, d_out) of " + name);
  });
  for (const auto& t : wanted) require(found.count(t) != 0, ErrorKind::unknown_target, "unknown LoRA target '" + t + "'");

  model.set_trainable(false);
  Rng rng(seed);
  model.visit_linears([&](const std::string& name, Linear<T>& l) {
    if (!wanted.count(name)) return;
    LoraAdapter<T> a;
    a.down.value = rng.normal_matrix<T>(rank, l.in_dim(), 0.01);
    a.up.value = Mat<T>::Zero(l.out_dim(), rank);
    a.scale = scale;
    l.lora = std::move(a);
  });
}

template <class T>
AdapterSet<T> extract_adapters(const Denoiser<T>& model) {
  AdapterSet<T> s;
  model.visit_linears([&](const std::string& name, const Linear<T>& l) {
    if (l.lora) s.adapters.push_back({name, *l.lora});
  });
  return s;
}

// Installs adapters on a model (freezing its base weights). Existing adapters are replaced.
template <class T>
void apply_adapters(Denoiser<T>& model, const AdapterSet<T>& set) {
  std::set<std::string> found;
  model.visit_linears([&](const std::string& name, Linear<T>& l) {
    for (const auto& a : set.adapters) {
      if (a.target != name) continue;
      require(a.adapter.down.value.cols() == l.in_dim() && a.adapter.up.value.rows() == l.out_dim() &&
                  a.adapter.up.value.cols() == a.adapter.down.value.rows(),
              ErrorKind::shape_mismatch, "adapter shape differs from layer " + name);
      l.lora = a.adapter;
      found.insert(name);
    }
  });
  for (const auto& a : set.adapters)
    require(found.count(a.target) != 0, ErrorKind::unknown_target, "unknown LoRA target '" + a.target + "'");
  if (!set.empty()) model.set_trainable(false);
}

// Bakes each adapter into its weight. Originals are kept so detach_lora can restore them.
template <class T>
void merge_lora(Denoiser<T>& model) {
  model.visit_linears([](const std::string&, Linear<T>& l) {
    if (!l.lora) return;
    if (!l.premerge_weight) l.premerge_weight = l.weight.value;
    l.weight.value += l.lora->delta();
    l.lora.reset();
  });
}

// Removes adapters and undoes any merge, restoring the exact base weights.
template <class T>
void detach_lora(Denoiser<T>& model) {
  model.visit_linears([](const std::string&, Linear<T>& l) {
    l.lora.reset();
    if (l.premerge_weight) {
      l.weight.value = *l.premerge_weight;
      l.premerge_weight.reset();
    }
  });
  model.set_trainable(true);
}

template <class T>
std::size_t lora_parameter_count(const Denoiser<T>& model) {
  return extract_adapters(model).parameter_count();
}

template <class T, class U>
AdapterSet<U> cast_adapters(const AdapterSet<T>& s) {
  AdapterSet<U> out;
  for (const auto& a : s.adapters) {
    LoraAdapter<U> b;
    b.down.value = a.adapter.down.value.template cast<U>();
    b.up.value = a.adapter.up.value.template cast<U>();
    b.scale = U(a.adapter.scale);
    out.adapters.push_back({a.target, std::move(b)});
  }
  return out;
}

}  // namespace mfm

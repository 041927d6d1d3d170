#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "mfm/lora.hpp"

namespace mfm {

// One file: a JSON header line {kind, config, tensors: [{name, shape, offset}]} followed by
// the concatenated little-endian f32 payloads. Offsets count floats.
struct TensorFile {
  std::string kind;
  nlohmann::json config;
  std::vector<std::pair<std::string, Mat<float>>> tensors;

  const Mat<float>& at(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.first == name) return t.second;
    throw Error(ErrorKind::format, "tensor '" + name + "' missing from file");
  }
};

inline void write_tensor_file(const std::filesystem::path& path, const TensorFile& f) {
  nlohmann::ordered_json h;
  h["kind"] = f.kind;
  h["config"] = f.config;
  h["tensors"] = nlohmann::ordered_json::array();
  std::size_t offset = 0;
  for (const auto& [name, m] : f.tensors) {
    h["tensors"].push_back({{"name", name}, {"shape", {m.rows(), m.cols()}}, {"offset", offset}});
    offset += static_cast<std::size_t>(m.size());
  }
  std::ofstream os(path, std::ios::binary);
  require(static_cast<bool>(os), ErrorKind::io, "cannot open " + path.string() + " for writing");
  os << h.dump() << '\n';
  for (const auto& t : f.tensors) detail::write_f32_le(os, t.second.data(), static_cast<std::size_t>(t.second.size()));
  require(static_cast<bool>(os), ErrorKind::io, "write failed: " + path.string());
}

inline TensorFile read_tensor_file(const std::filesystem::path& path, const std::string& expected_kind) {
  std::ifstream is(path, std::ios::binary);
  require(static_cast<bool>(is), ErrorKind::io, "cannot open " + path.string());
  const auto h = detail::read_header_line(is, path.string());
  TensorFile f;
  f.kind = h.value("kind", "");
  require(f.kind == expected_kind, ErrorKind::format,
          path.string() + ": expected a " + expected_kind + " file, found '" + f.kind + "'");
  f.config = h.value("config", nlohmann::json::object());
  for (const auto& t : h.at("tensors")) {
    const auto shape = t.at("shape").get<std::vector<long>>();
    require(shape.size() == 2 && shape[0] >= 0 && shape[1] >= 0, ErrorKind::format, "bad tensor shape");
    Mat<float> m(shape[0], shape[1]);
    detail::read_f32_le(is, m.data(), static_cast<std::size_t>(m.size()));
    f.tensors.emplace_back(t.at("name").get<std::string>(), std::move(m));
  }
  return f;
}

// `extra` keys (e.g. the noise schedule) are stored alongside the model config.
template <class T>
void save_denoiser(const std::filesystem::path& path, const Denoiser<T>& model,
                   const nlohmann::json& extra = nlohmann::json::object()) {
  TensorFile f;
  f.kind = "denoiser";
  f.config = model.config().to_json();
  for (auto it = extra.begin(); it != extra.end(); ++it) f.config[it.key()] = it.value();
  model.visit_params([&f](const std::string& name, const Param<T>& p) {
    f.tensors.emplace_back(name, p.value.template cast<float>());
  });
  write_tensor_file(path, f);
}

template <class T = float>
Denoiser<T> load_denoiser(const std::filesystem::path& path) {
  const auto f = read_tensor_file(path, "denoiser");
  Denoiser<T> model(DenoiserConfig::from_json(f.config));
  model.visit_params([&f](const std::string& name, Param<T>& p) {
    const auto& m = f.at(name);
    require(m.rows() == p.value.rows() && m.cols() == p.value.cols(), ErrorKind::format,
            "tensor '" + name + "' has the wrong shape");
    p.value = m.template cast<T>();
  });
  return model;
}

template <class T>
void save_adapters(const std::filesystem::path& path, const AdapterSet<T>& set) {
  TensorFile f;
  f.kind = "lora";
  nlohmann::json targets = nlohmann::json::array();
  for (const auto& a : set.adapters) {
    targets.push_back({{"target", a.target}, {"rank", a.adapter.rank()}, {"scale", double(a.adapter.scale)}});
    f.tensors.emplace_back(a.target + ".down", a.adapter.down.value.template cast<float>());
    f.tensors.emplace_back(a.target + ".up", a.adapter.up.value.template cast<float>());
  }
  f.config = {{"targets", targets}};
  write_tensor_file(path, f);
}

template <class T = float>
AdapterSet<T> load_adapters(const std::filesystem::path& path) {
  const auto f = read_tensor_file(path, "lora");
  AdapterSet<T> set;
  for (const auto& t : f.config.at("targets")) {
    const std::string name = t.at("target").get<std::string>();
    LoraAdapter<T> a;
    a.down.value = f.at(name + ".down").template cast<T>();
    a.up.value = f.at(name + ".up").template cast<T>();
    a.scale = T(t.value("scale", 1.0));
    set.adapters.push_back({name, std::move(a)});
  }
  return set;
}

}  // namespace mfm

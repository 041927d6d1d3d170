#pragma once

#include <array>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "mfm/core.hpp"

namespace mfm {

// Closed synthetic vocabulary. Id 0 is padding. The generic words stand in for any
// colour / shape / motion / background and are used by caption dropout and probes.
namespace vocab {

inline constexpr std::array<std::string_view, 32> kWords = {
    "<pad>",   "some",  "object", "moving",    "scene",            "red",     "green",    "blue",
    "yellow",  "cyan",  "magenta", "orange",   "white",            "square",  "disc",     "bar",
    "right",   "left",  "up",     "down",      "clockwise",        "counterclockwise", "growing", "shrinking",
    "panleft", "panright", "panup", "pandown", "on",               "plain",   "checker",  "texture"};

inline constexpr int kPad = 0;
inline constexpr int kSize = static_cast<int>(kWords.size());

inline int id_of(std::string_view word) {
  for (int i = 1; i < kSize; ++i)
    if (kWords[static_cast<std::size_t>(i)] == word) return i;
  throw Error(ErrorKind::unknown_token, "unknown word '" + std::string(word) + "'");
}

inline std::string_view word(int id) {
  require(id >= 0 && id < kSize, ErrorKind::unknown_token, "token id out of vocabulary");
  return kWords[static_cast<std::size_t>(id)];
}

// Generic replacement for each template slot (colour, shape, motion, "on", background).
inline constexpr std::array<std::string_view, 5> kGenericSlots = {"some", "object", "moving", "on", "scene"};

}  // namespace vocab

struct PromptTokens {
  std::vector<int> ids;

  static PromptTokens parse(std::string_view text) {
    PromptTokens p;
    std::istringstream is{std::string(text)};
    std::string w;
    while (is >> w) p.ids.push_back(vocab::id_of(w));
    require(!p.ids.empty(), ErrorKind::unknown_token, "empty prompt");
    return p;
  }

  std::string text() const {
    std::string out;
    for (int id : ids) {
      if (id == vocab::kPad) continue;
      if (!out.empty()) out += ' ';
      out += vocab::word(id);
    }
    return out;
  }

  // Ids right-padded to `length`; throws when the prompt is longer.
  std::vector<int> padded(int length) const {
    require(static_cast<int>(ids.size()) <= length, ErrorKind::invalid_range, "prompt longer than max length");
    std::vector<int> out(static_cast<std::size_t>(length), vocab::kPad);
    std::copy(ids.begin(), ids.end(), out.begin());
    return out;
  }

  bool operator==(const PromptTokens&) const = default;
};

inline PromptTokens generic_prompt() { return PromptTokens::parse("some object moving on scene"); }

}  // namespace mfm

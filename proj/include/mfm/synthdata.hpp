#pragma once

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "mfm/trajectory.hpp"
#include "mfm/video.hpp"
#include "mfm/vocab.hpp"

namespace mfm {

enum class Shape { square, disc, bar };
enum class MotionKind { translate, rotate, scale, pan };
enum class Background { flat, checker, texture };

struct Motion {
  MotionKind kind = MotionKind::translate;
  double vx = 0.0, vy = 0.0;  // px/frame (object velocity, or camera velocity for pan)
  double omega = 0.0;         // rad/frame, positive is clockwise on screen (y points down)
  double rate = 0.0;          // log-scale change per frame
};

struct SceneSpec {
  Shape shape = Shape::square;
  int color = 0;  // index into kColors
  double size = 6.0;
  Motion motion;
  Background background = Background::flat;
  std::uint64_t background_seed = 0;
  double cx = 8.0, cy = 8.0;  // sprite centre at frame 0, continuous coordinates
  int frames = 8, height = 16, width = 16;
  std::uint64_t seed = 0;  // ground-truth point sampling
};

inline constexpr std::array<const char*, 8> kColorNames = {"red",  "green",   "blue",   "yellow",
                                                           "cyan", "magenta", "orange", "white"};
inline constexpr std::array<std::array<double, 3>, 8> kColors = {{{1.0, 0.15, 0.15},
                                                                  {0.15, 1.0, 0.15},
                                                                  {0.2, 0.3, 1.0},
                                                                  {1.0, 1.0, 0.15},
                                                                  {0.15, 1.0, 1.0},
                                                                  {1.0, 0.15, 1.0},
                                                                  {1.0, 0.55, 0.1},
                                                                  {1.0, 1.0, 1.0}}};
inline constexpr std::array<const char*, 3> kShapeNames = {"square", "disc", "bar"};
inline constexpr std::array<const char*, 3> kBackgroundWords = {"plain", "checker", "texture"};
inline constexpr std::array<const char*, 4> kMotionKindNames = {"translate", "rotate", "scale", "pan"};

inline constexpr int kTrackPoints = 16;
inline constexpr double kMaxSpeed = 2.0;  // tracker search radius

inline std::string motion_word(const Motion& m) {
  switch (m.kind) {
    case MotionKind::translate:
      if (std::abs(m.vx) >= std::abs(m.vy)) return m.vx >= 0 ? "right" : "left";
      return m.vy >= 0 ? "down" : "up";
    case MotionKind::rotate:
      return m.omega >= 0 ? "clockwise" : "counterclockwise";
    case MotionKind::scale:
      return m.rate >= 0 ? "growing" : "shrinking";
    case MotionKind::pan:
      if (std::abs(m.vx) >= std::abs(m.vy)) return m.vx >= 0 ? "panright" : "panleft";
      return m.vy >= 0 ? "pandown" : "panup";
  }
  return "moving";
}

inline PromptTokens scene_prompt(const SceneSpec& s) {
  std::string text = std::string(kColorNames.at(static_cast<std::size_t>(s.color))) + " " +
                     kShapeNames[static_cast<std::size_t>(s.shape)] + " " + motion_word(s.motion) + " on " +
                     kBackgroundWords[static_cast<std::size_t>(s.background)];
  return PromptTokens::parse(text);
}

namespace detail {

struct Vec2 {
  double x, y;
};

// Sprite pose at frame f in world coordinates.
struct Pose {
  Vec2 centre;
  double angle;
  double zoom;
  Vec2 camera;
};

inline Pose pose_at(const SceneSpec& s, int f) {
  const Motion& m = s.motion;
  Pose p{{s.cx, s.cy}, 0.0, 1.0, {0.0, 0.0}};
  switch (m.kind) {
    case MotionKind::translate:
      p.centre = {s.cx + m.vx * f, s.cy + m.vy * f};
      break;
    case MotionKind::rotate:
      p.angle = m.omega * f;
      break;
    case MotionKind::scale:
      p.zoom = std::exp(m.rate * f);
      break;
    case MotionKind::pan:
      p.camera = {m.vx * f, m.vy * f};
      break;
  }
  return p;
}

// Local sprite coordinates -> frame (continuous) coordinates.
inline Vec2 to_frame(const Pose& p, Vec2 local) {
  const double c = std::cos(p.angle), sn = std::sin(p.angle);
  const double x = p.zoom * (c * local.x - sn * local.y), y = p.zoom * (sn * local.x + c * local.y);
  return {p.centre.x + x - p.camera.x, p.centre.y + y - p.camera.y};
}

inline Vec2 to_local(const Pose& p, Vec2 frame) {
  const double wx = frame.x + p.camera.x - p.centre.x, wy = frame.y + p.camera.y - p.centre.y;
  const double c = std::cos(p.angle), sn = std::sin(p.angle);
  return {(c * wx + sn * wy) / p.zoom, (-sn * wx + c * wy) / p.zoom};
}

inline bool inside_shape(Shape shape, double size, Vec2 l) {
  const double h = size / 2;
  switch (shape) {
    case Shape::square:
      return std::abs(l.x) <= h && std::abs(l.y) <= h;
    case Shape::disc:
      return l.x * l.x + l.y * l.y <= h * h;
    case Shape::bar:
      return std::abs(l.x) <= h && std::abs(l.y) <= size / 6;
  }
  return false;
}

inline double hash_unit(std::uint64_t seed, long i, long j) {
  const std::uint64_t h = mix_seed(mix_seed(seed, static_cast<std::uint64_t>(i)), static_cast<std::uint64_t>(j));
  return double(h >> 11) * 0x1.0p-53;
}

// Background intensity in [0, 1] at world position (x, y).
inline double background_at(const SceneSpec& s, double x, double y) {
  switch (s.background) {
    case Background::flat:
      return 0.2;
    case Background::checker: {
      const long i = static_cast<long>(std::floor(x / 4.0)), j = static_cast<long>(std::floor(y / 4.0));
      return ((i + j) % 2 == 0) ? 0.12 : 0.3;
    }
    case Background::texture: {
      const double gx = x / 3.0, gy = y / 3.0;
      const long i = static_cast<long>(std::floor(gx)), j = static_cast<long>(std::floor(gy));
      const double fx = gx - double(i), fy = gy - double(j);
      auto v = [&](long a, long b) { return hash_unit(s.background_seed, a, b); };
      const double n = (1 - fy) * ((1 - fx) * v(i, j) + fx * v(i + 1, j)) + fy * ((1 - fx) * v(i, j + 1) + fx * v(i + 1, j + 1));
      return 0.08 + 0.3 * n;
    }
  }
  return 0.2;
}

// Fraction of the sprite's area that lies inside the frame at frame f.
inline double visible_fraction(const SceneSpec& s, int f) {
  const Pose p = pose_at(s, f);
  const int n = 24;
  int in = 0, total = 0;
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b) {
      const Vec2 l{(a + 0.5) / n * s.size - s.size / 2, (b + 0.5) / n * s.size - s.size / 2};
      if (!inside_shape(s.shape, s.size, l)) continue;
      ++total;
      const Vec2 q = to_frame(p, l);
      if (q.x >= 0 && q.x < s.width && q.y >= 0 && q.y < s.height) ++in;
    }
  return total ? double(in) / total : 0.0;
}

}  // namespace detail

// Ground-truth points: fixed local positions carried along by the motion law. The local
// region fits inside every shape so all points lie on the sprite.
inline TrajectorySet scene_trajectories(const SceneSpec& s) {
  Rng rng(mix_seed(s.seed, 0x7261));
  TrajectorySet out;
  out.frames = s.frames;
  for (int k = 0; k < kTrackPoints; ++k) {
    const detail::Vec2 l{(rng.uniform() * 2 - 1) * 0.4 * s.size, (rng.uniform() * 2 - 1) * s.size / 6};
    Mat<double> t(s.frames, 2);
    for (int f = 0; f < s.frames; ++f) {
      const auto q = detail::to_frame(detail::pose_at(s, f), l);
      t(f, 0) = q.x - 0.5;
      t(f, 1) = q.y - 0.5;
    }
    out.tracks.push_back(std::move(t));
  }
  out.clamp(s.height, s.width);
  return out;
}

// Throws invalid_range when the sprite leaves the frame too far or moves too fast.
inline void validate_scene(const SceneSpec& s) {
  require(s.frames >= 1 && s.height >= 4 && s.width >= 4, ErrorKind::invalid_range, "scene too small");
  require(s.color >= 0 && s.color < static_cast<int>(kColors.size()), ErrorKind::invalid_range, "bad colour index");
  require(s.size >= 2.0, ErrorKind::invalid_range, "sprite size must be >= 2 px");
  for (int f = 0; f < s.frames; ++f)
    require(detail::visible_fraction(s, f) >= 0.5, ErrorKind::invalid_range,
            "sprite less than half inside the frame at frame " + std::to_string(f));
  // Fastest point of the sprite (its corner region) must stay within the search radius.
  const double reach = s.size / std::sqrt(2.0);
  for (int f = 0; f + 1 < s.frames; ++f) {
    const auto a = detail::pose_at(s, f), b = detail::pose_at(s, f + 1);
    for (double ang = 0; ang < 6.283; ang += 0.3927)
      for (double r : {0.0, reach * 0.5, reach * 0.8}) {
        const detail::Vec2 l{r * std::cos(ang), r * std::sin(ang)};
        if (!detail::inside_shape(s.shape, s.size, l)) continue;
        const auto p = detail::to_frame(a, l), q = detail::to_frame(b, l);
        require(std::hypot(q.x - p.x, q.y - p.y) <= kMaxSpeed + 1e-9, ErrorKind::invalid_range,
                "sprite moves faster than the tracker search radius");
      }
  }
}

struct RenderedScene {
  LatentVideo<float> video;
  TrajectorySet trajectories;
  PromptTokens prompt;
};

inline RenderedScene render_scene(const SceneSpec& s) {
  validate_scene(s);
  RenderedScene out{LatentVideo<float>(s.frames, s.height, s.width, 3), scene_trajectories(s), scene_prompt(s)};
  const auto& col = kColors[static_cast<std::size_t>(s.color)];
  constexpr int ss = 2;  // supersampling per axis
  for (int f = 0; f < s.frames; ++f) {
    const auto pose = detail::pose_at(s, f);
    for (int y = 0; y < s.height; ++y)
      for (int x = 0; x < s.width; ++x) {
        std::array<double, 3> acc{0, 0, 0};
        for (int sy = 0; sy < ss; ++sy)
          for (int sx = 0; sx < ss; ++sx) {
            const detail::Vec2 p{x + (sx + 0.5) / ss, y + (sy + 0.5) / ss};
            const auto l = detail::to_local(pose, p);
            if (detail::inside_shape(s.shape, s.size, l)) {
              // 2 px checker in sprite coordinates makes rotation and scale visible.
              const long ci = static_cast<long>(std::floor(l.x / 2.0)) + static_cast<long>(std::floor(l.y / 2.0));
              const double shade = (ci % 2 == 0) ? 1.0 : 0.6;
              for (int c = 0; c < 3; ++c) acc[static_cast<std::size_t>(c)] += shade * col[static_cast<std::size_t>(c)];
            } else {
              const double b = detail::background_at(s, p.x + pose.camera.x, p.y + pose.camera.y);
              for (auto& a : acc) a += b;
            }
          }
        for (int c = 0; c < 3; ++c)
          out.video.at(f, y, x, c) = static_cast<float>(2.0 * acc[static_cast<std::size_t>(c)] / (ss * ss) - 1.0);
      }
  }
  return out;
}

// ---- corpus ----

inline constexpr int kMotionClasses = 6;
inline constexpr std::array<const char*, kMotionClasses> kMotionClassNames = {
    "translate-x", "translate-y", "rotate", "scale", "pan-x", "pan-y"};

struct CorpusScene {
  SceneSpec spec;
  int motion_class = 0;
  int pair = -1;        // index of the pair this scene belongs to, -1 when unpaired
  char pair_type = 0;   // 'A' same motion / different look, 'B' same look / mirrored motion
  RenderedScene scene;
};

struct Corpus {
  std::vector<CorpusScene> scenes;
};

namespace detail {

inline double signed_uniform(Rng& rng, double lo, double hi) {
  const double m = lo + (hi - lo) * rng.uniform();
  return rng.uniform() < 0.5 ? -m : m;
}

inline Motion random_motion(int cls, Rng& rng) {
  Motion m;
  switch (cls) {
    case 0: m.kind = MotionKind::translate; m.vx = signed_uniform(rng, 0.8, 1.4); break;
    case 1: m.kind = MotionKind::translate; m.vy = signed_uniform(rng, 0.8, 1.4); break;
    case 2: m.kind = MotionKind::rotate; m.omega = signed_uniform(rng, 0.25, 0.4); break;
    case 3: m.kind = MotionKind::scale; m.rate = signed_uniform(rng, 0.06, 0.08); break;
    case 4: m.kind = MotionKind::pan; m.vx = signed_uniform(rng, 0.8, 1.4); break;
    default: m.kind = MotionKind::pan; m.vy = signed_uniform(rng, 0.8, 1.4); break;
  }
  return m;
}

inline Motion mirrored(Motion m) {
  m.vx = -m.vx;
  m.vy = -m.vy;
  m.omega = -m.omega;
  m.rate = -m.rate;
  return m;
}

// Start position that keeps the sprite in frame. Translations start on the side they move away from.
inline void place(SceneSpec& s, Rng& rng) {
  const double travel_x = s.motion.kind == MotionKind::translate ? s.motion.vx * (s.frames - 1) : 0.0;
  const double travel_y = s.motion.kind == MotionKind::translate ? s.motion.vy * (s.frames - 1) : 0.0;
  const double mid_x = s.width / 2.0 - travel_x / 2.0, mid_y = s.height / 2.0 - travel_y / 2.0;
  s.cx = mid_x + (rng.uniform() * 2 - 1) * 1.5;
  s.cy = mid_y + (rng.uniform() * 2 - 1) * 1.5;
}

inline bool scene_ok(const SceneSpec& s) {
  try {
    validate_scene(s);
    return true;
  } catch (const Error&) {
    return false;
  }
}

inline SceneSpec random_scene(int cls, Rng& rng, int frames, int height, int width) {
  for (;;) {
    SceneSpec s;
    s.frames = frames;
    s.height = height;
    s.width = width;
    s.shape = static_cast<Shape>(rng.uniform_int(0, 2));
    s.color = rng.uniform_int(0, static_cast<int>(kColors.size()) - 1);
    s.background = static_cast<Background>(rng.uniform_int(0, 2));
    s.background_seed = rng.next_u64();
    s.seed = rng.next_u64();
    s.motion = random_motion(cls, rng);
    s.size = 5.0 + 2.0 * rng.uniform();
    if (s.motion.kind == MotionKind::scale) s.size = s.motion.rate > 0 ? 4.0 + rng.uniform() : 6.5 + rng.uniform();
    place(s, rng);
    if (scene_ok(s)) return s;
  }
}

}  // namespace detail

// n scenes cycling through the six motion classes. With pairing, consecutive scenes of a
// class form pairs that alternate between type A (same motion law and point seed,
// different colour and shape) and type B (same appearance, mirrored motion).
inline Corpus make_corpus(int n, std::uint64_t seed, bool pairing, int frames = 8, int height = 16, int width = 16) {
  require(n >= 1, ErrorKind::invalid_range, "corpus needs n >= 1");
  Rng rng(seed);
  Corpus c;
  c.scenes.resize(static_cast<std::size_t>(n));
  std::array<int, kMotionClasses> seen{};
  int pair_counter = 0;
  std::array<int, kMotionClasses> open_pair;
  open_pair.fill(-1);
  for (int i = 0; i < n; ++i) {
    const int cls = i % kMotionClasses;
    auto& cs = c.scenes[static_cast<std::size_t>(i)];
    cs.motion_class = cls;
    const int k = seen[static_cast<std::size_t>(cls)]++;
    if (pairing && k % 2 == 1) {
      const auto& first = c.scenes[static_cast<std::size_t>(open_pair[static_cast<std::size_t>(cls)])];
      const bool type_a = (k / 2) % 2 == 0;
      SceneSpec s = first.spec;
      for (int attempt = 0;; ++attempt) {
        if (type_a) {
          do {
            s.color = rng.uniform_int(0, static_cast<int>(kColors.size()) - 1);
            s.shape = static_cast<Shape>(rng.uniform_int(0, 2));
          } while (s.color == first.spec.color && s.shape == first.spec.shape);
          s.background = static_cast<Background>(rng.uniform_int(0, 2));
          s.background_seed = rng.next_u64();
        } else {
          s.motion = detail::mirrored(first.spec.motion);
          // Mirror the start about the frame centre so the sprite travels the same on-screen path reversed.
          if (s.motion.kind == MotionKind::translate || s.motion.kind == MotionKind::pan) {
            s.cx = s.width - first.spec.cx;
            s.cy = s.height - first.spec.cy;
          }
          s.seed = rng.next_u64();
        }
        if (detail::scene_ok(s)) {
          cs.spec = s;
          break;
        }
        // Mirrored scale may not fit; resize the pair member until it does.
        require(attempt < 1000, ErrorKind::invalid_range, "could not build a valid paired scene");
        if (!type_a) s.size = std::max(2.0, s.size * 0.9);
      }
      cs.pair = first.pair;
      cs.pair_type = type_a ? 'A' : 'B';
      c.scenes[static_cast<std::size_t>(open_pair[static_cast<std::size_t>(cls)])].pair_type = cs.pair_type;
    } else {
      cs.spec = detail::random_scene(cls, rng, frames, height, width);
      if (pairing) {
        cs.pair = pair_counter++;
        open_pair[static_cast<std::size_t>(cls)] = i;
      }
    }
    cs.scene = render_scene(cs.spec);
  }
  return c;
}

// ---- corpus I/O ----

inline nlohmann::ordered_json spec_to_json(const SceneSpec& s) {
  return {{"shape", kShapeNames[static_cast<std::size_t>(s.shape)]},
          {"color", kColorNames[static_cast<std::size_t>(s.color)]},
          {"size", s.size},
          {"motion",
           {{"kind", kMotionKindNames[static_cast<std::size_t>(s.motion.kind)]},
            {"vx", s.motion.vx},
            {"vy", s.motion.vy},
            {"omega", s.motion.omega},
            {"rate", s.motion.rate}}},
          {"background", kBackgroundWords[static_cast<std::size_t>(s.background)]},
          {"background_seed", s.background_seed},
          {"cx", s.cx},
          {"cy", s.cy},
          {"F", s.frames},
          {"H", s.height},
          {"W", s.width},
          {"seed", s.seed}};
}

namespace detail {
template <std::size_t N>
int index_of(const std::array<const char*, N>& names, const std::string& v, const char* what) {
  for (std::size_t i = 0; i < N; ++i)
    if (v == names[i]) return static_cast<int>(i);
  throw Error(ErrorKind::format, std::string("unknown ") + what + " '" + v + "'");
}
}  // namespace detail

inline SceneSpec spec_from_json(const nlohmann::json& j) {
  SceneSpec s;
  s.shape = static_cast<Shape>(detail::index_of(kShapeNames, j.at("shape").get<std::string>(), "shape"));
  s.color = detail::index_of(kColorNames, j.at("color").get<std::string>(), "colour");
  s.size = j.at("size").get<double>();
  const auto& m = j.at("motion");
  s.motion.kind = static_cast<MotionKind>(detail::index_of(kMotionKindNames, m.at("kind").get<std::string>(), "motion"));
  s.motion.vx = m.value("vx", 0.0);
  s.motion.vy = m.value("vy", 0.0);
  s.motion.omega = m.value("omega", 0.0);
  s.motion.rate = m.value("rate", 0.0);
  s.background =
      static_cast<Background>(detail::index_of(kBackgroundWords, j.at("background").get<std::string>(), "background"));
  s.background_seed = j.value("background_seed", std::uint64_t{0});
  s.cx = j.at("cx").get<double>();
  s.cy = j.at("cy").get<double>();
  s.frames = j.value("F", 8);
  s.height = j.value("H", 16);
  s.width = j.value("W", 16);
  s.seed = j.value("seed", std::uint64_t{0});
  return s;
}

inline void write_corpus(const std::filesystem::path& dir, const Corpus& c) {
  std::filesystem::create_directories(dir);
  nlohmann::ordered_json manifest;
  manifest["scenes"] = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < c.scenes.size(); ++i) {
    const auto& s = c.scenes[i];
    char stem[32];
    std::snprintf(stem, sizeof(stem), "scene_%03zu", i);
    write_lvid(dir / (std::string(stem) + ".lvid"), s.scene.video);
    write_trajectories_csv(dir / (std::string(stem) + ".csv"), s.scene.trajectories);
    {
      std::ofstream os(dir / (std::string(stem) + ".txt"));
      os << s.scene.prompt.text() << '\n';
      require(static_cast<bool>(os), ErrorKind::io, "cannot write prompt file");
    }
    nlohmann::ordered_json e;
    e["video"] = std::string(stem) + ".lvid";
    e["trajectories"] = std::string(stem) + ".csv";
    e["prompt_file"] = std::string(stem) + ".txt";
    e["prompt"] = s.scene.prompt.text();
    e["motion_class"] = kMotionClassNames[static_cast<std::size_t>(s.motion_class)];
    e["pair"] = s.pair;
    e["pair_type"] = s.pair_type ? std::string(1, s.pair_type) : std::string();
    e["spec"] = spec_to_json(s.spec);
    manifest["scenes"].push_back(e);
  }
  std::ofstream os(dir / "manifest.json");
  require(static_cast<bool>(os), ErrorKind::io, "cannot write manifest");
  os << manifest.dump(2) << '\n';
}

inline Corpus read_corpus(const std::filesystem::path& dir) {
  std::ifstream is(dir / "manifest.json");
  require(static_cast<bool>(is), ErrorKind::io, "cannot open " + (dir / "manifest.json").string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::format, std::string("bad manifest: ") + e.what());
  }
  Corpus c;
  for (const auto& e : manifest.at("scenes")) {
    CorpusScene s;
    s.spec = spec_from_json(e.at("spec"));
    s.motion_class = detail::index_of(kMotionClassNames, e.at("motion_class").get<std::string>(), "motion class");
    s.pair = e.value("pair", -1);
    const std::string pt = e.value("pair_type", std::string());
    s.pair_type = pt.empty() ? 0 : pt[0];
    s.scene.video = read_lvid<float>(dir / e.at("video").get<std::string>());
    s.scene.trajectories = read_trajectories_csv(dir / e.at("trajectories").get<std::string>());
    s.scene.prompt = PromptTokens::parse(e.at("prompt").get<std::string>());
    c.scenes.push_back(std::move(s));
  }
  require(!c.scenes.empty(), ErrorKind::empty_set, "corpus is empty");
  return c;
}

}  // namespace mfm

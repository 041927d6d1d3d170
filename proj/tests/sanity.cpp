// Qualitative checks of the pretrained base's attention maps. Needs the checkpoint the
// acceptance runner leaves in its cache directory (pass --cache DIR).

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "mfm.hpp"
#include "mfm/cli.hpp"

using namespace mfm;
namespace fs = std::filesystem;

namespace {

fs::path g_cache = "acceptance_cache";

struct Fixture {
  Denoiser<float> model;
  NoiseSchedule schedule;
  Corpus corpus;
};

const Fixture& fixture() {
  static const Fixture f = [] {
    const auto ckpt = g_cache / "base.ckpt";
    if (!fs::exists(ckpt)) throw Error(ErrorKind::io, "no pretrained base in " + g_cache.string());
    return Fixture{load_denoiser(ckpt), cli::checkpoint_schedule(ckpt), make_corpus(60, 101, false)};
  }();
  return f;
}

// Sprite bounding box (frame coordinates) at frame f, loose enough to cover any rotation.
struct Box {
  double x0, x1, y0, y1;
  bool overlaps_cell(int y, int x, double cell) const {
    return (x + 1) * cell > x0 && x * cell < x1 && (y + 1) * cell > y0 && y * cell < y1;
  }
};

Box sprite_box(const SceneSpec& s, int f) {
  const auto p = detail::pose_at(s, f);
  const double cx = p.centre.x - p.camera.x, cy = p.centre.y - p.camera.y;
  const double r = s.size * p.zoom / std::sqrt(2.0);
  return {cx - r, cx + r, cy - r, cy + r};
}

}  // namespace

// Cross-attention to the colour word peaks on the sprite.
TEST(PretrainedMaps, CrossAttentionLocatesTheSprite) {
  const auto& fx = fixture();
  const int t = fx.schedule.steps() / 4;
  int hits = 0, frames = 0;
  for (const auto& cs : fx.corpus.scenes) {
    const auto noisy = noisy_probe_input(cs.scene.video, t, 3, fx.schedule);
    const auto maps = fx.model.denoise_until_block(noisy, t, cs.scene.prompt, fx.model.config().feature_block).back();
    const double cell = double(cs.spec.height) / maps.ca.height;
    for (int f = 0; f < maps.ca.frames; ++f) {
      int by = 0, bx = 0;
      for (int y = 0; y < maps.ca.height; ++y)
        for (int x = 0; x < maps.ca.width; ++x)
          if (maps.ca.at(f, y, x, 0) > maps.ca.at(f, by, bx, 0)) by = y, bx = x;
      hits += sprite_box(cs.spec, f).overlaps_cell(by, bx, cell);
      ++frames;
    }
  }
  EXPECT_GE(double(hits) / frames, 0.7) << hits << " of " << frames;
}

// Frames correlate less where the sprite moves than on the static background, so the
// off-diagonal temporal attention mass is lower there.
TEST(PretrainedMaps, TemporalAttentionSeparatesMovingRegions) {
  const auto& fx = fixture();
  const int t = fx.schedule.steps() / 4;
  double moving = 0, still = 0;
  int n_moving = 0, n_still = 0;
  for (const auto& cs : fx.corpus.scenes) {
    const auto kind = cs.spec.motion.kind;
    if (kind != MotionKind::translate && kind != MotionKind::rotate) continue;  // the background moves or nothing does
    const auto noisy = noisy_probe_input(cs.scene.video, t, 3, fx.schedule);
    const auto maps = fx.model.denoise_until_block(noisy, t, cs.scene.prompt, fx.model.config().feature_block).back();
    const auto& tsa = maps.tsa;
    const double cell = double(cs.spec.height) / tsa.height;
    for (int y = 0; y < tsa.height; ++y)
      for (int x = 0; x < tsa.width; ++x) {
        bool covered = false;
        for (int f = 0; f < tsa.frames; ++f) covered |= sprite_box(cs.spec, f).overlaps_cell(y, x, cell);
        double diag = 0;
        for (int f = 0; f < tsa.frames; ++f) diag += tsa.at(y, x, f, f);
        const double off = 1.0 - diag / tsa.frames;
        (covered ? moving : still) += off;
        ++(covered ? n_moving : n_still);
      }
  }
  EXPECT_LT(moving / n_moving, still / n_still);
}

int main(int argc, char** argv) {
  ::testing::InitGoogleTest(&argc, argv);
  for (int i = 1; i + 1 < argc; ++i)
    if (std::string(argv[i]) == "--cache") g_cache = argv[i + 1];
  return RUN_ALL_TESTS();
}

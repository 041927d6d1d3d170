#include <gtest/gtest.h>

#include <limits>

#include "mfm/metrics.hpp"
#include "mfm/synthdata.hpp"

using namespace mfm;

namespace {

TrajectorySet set_of(std::vector<Mat<double>> tracks) {
  TrajectorySet s;
  s.frames = static_cast<int>(tracks.front().rows());
  s.tracks = std::move(tracks);
  return s;
}

// Brute-force double loop straight from the definition.
double chamfer_oracle(const TrajectorySet& ref, const TrajectorySet& gen, int F, int H, int W) {
  auto dist = [](const Mat<double>& a, const Mat<double>& b) {
    double s = 0;
    for (Eigen::Index f = 0; f < a.rows(); ++f)
      for (int c = 0; c < 2; ++c) s += (a(f, c) - b(f, c)) * (a(f, c) - b(f, c));
    return s;
  };
  double g2r = 0, r2g = 0;
  for (const auto& g : gen.tracks) {
    double m = std::numeric_limits<double>::infinity();
    for (const auto& r : ref.tracks) m = std::min(m, dist(g, r));
    g2r += m;
  }
  for (const auto& r : ref.tracks) {
    double m = std::numeric_limits<double>::infinity();
    for (const auto& g : gen.tracks) m = std::min(m, dist(g, r));
    r2g += m;
  }
  return (g2r / double(gen.size()) + r2g / double(ref.size())) / (2.0 * F * H * W);
}

// Smooth random texture shifted by (dx, dy) per frame; integer shifts keep it exact.
LatentVideo<double> shifted_texture(int F, int H, int W, int dx, int dy) {
  LatentVideo<double> v(F, H, W, 2);
  for (int f = 0; f < F; ++f)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        const double u = x - dx * f, w = y - dy * f;
        v.at(f, y, x, 0) = std::sin(0.9 * u) + std::cos(1.3 * w + 0.4 * u);
        v.at(f, y, x, 1) = std::sin(0.5 * u * w * 0.1 + 0.7 * w);
      }
  return v;
}

}  // namespace

TEST(Chamfer, HandCase) {
  Mat<double> t(2, 2), r(2, 2);
  t << 0, 0, 1, 0;
  r << 0, 0, 0, 0;
  EXPECT_EQ(chamfer_motion_discrepancy(set_of({r}), set_of({t}), 2, 10, 10), 0.005);
}

TEST(Chamfer, IdentityIsZero) {
  Rng rng(1);
  const auto a = set_of({rng.normal_matrix<double>(3, 2), rng.normal_matrix<double>(3, 2)});
  EXPECT_EQ(chamfer_motion_discrepancy(a, a, 3, 8, 8), 0.0);
}

TEST(Chamfer, MatchesBruteForceAndIsSymmetric) {
  Rng rng(2);
  for (int k = 0; k < 200; ++k) {
    const int F = rng.uniform_int(1, 3), nr = rng.uniform_int(1, 4), ng = rng.uniform_int(1, 4);
    std::vector<Mat<double>> a, b;
    for (int i = 0; i < nr; ++i) a.push_back(rng.normal_matrix<double>(F, 2, 4.0));
    for (int i = 0; i < ng; ++i) b.push_back(rng.normal_matrix<double>(F, 2, 4.0));
    const auto ra = set_of(a), gb = set_of(b);
    const double d = chamfer_motion_discrepancy(ra, gb, F, 16, 16);
    EXPECT_NEAR(d, chamfer_oracle(ra, gb, F, 16, 16), 1e-12);
    EXPECT_NEAR(d, chamfer_motion_discrepancy(gb, ra, F, 16, 16), 1e-15);
    EXPECT_GE(d, 0.0);
  }
}

TEST(Chamfer, Errors) {
  Mat<double> a = Mat<double>::Zero(2, 2), b = Mat<double>::Zero(3, 2);
  try {
    chamfer_motion_discrepancy(set_of({a}), set_of({b}), 2, 4, 4);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::shape_mismatch);
  }
  TrajectorySet empty;
  empty.frames = 2;
  try {
    chamfer_motion_discrepancy(empty, set_of({a}), 2, 4, 4);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::empty_set);
  }
}

TEST(Tracker, StaticVideoGivesConstantTracks) {
  const auto v = shifted_texture(5, 16, 16, 0, 0);
  const auto tr = track_points(v, 4, 2);
  ASSERT_EQ(tr.size(), 16u);
  for (const auto& t : tr.tracks)
    for (int f = 1; f < 5; ++f) EXPECT_EQ(t.row(f), t.row(0));
}

TEST(Tracker, FollowsGlobalTranslation) {
  const auto v = shifted_texture(6, 24, 24, 1, 0);
  // Interior seeds so no point reaches the border.
  std::vector<std::array<double, 2>> seeds;
  for (int y = 6; y <= 16; y += 5)
    for (int x = 4; x <= 10; x += 3) seeds.push_back({double(x), double(y)});
  const auto tr = track_points_from(v, seeds, 2);
  for (std::size_t i = 0; i < seeds.size(); ++i)
    for (int f = 0; f < 6; ++f) {
      EXPECT_NEAR(tr.tracks[i](f, 0), seeds[i][0] + f, 1e-9);
      EXPECT_NEAR(tr.tracks[i](f, 1), seeds[i][1], 1e-9);
    }
}

TEST(Tracker, DeterministicAndInBounds) {
  Rng rng(3);
  const auto v = LatentVideo<double>::randn(4, 10, 12, 3, rng);
  const auto a = track_points(v, 5, 2), b = track_points(v, 5, 2);
  EXPECT_TRUE(a == b);
  for (const auto& t : a.tracks) {
    EXPECT_GE(t.col(0).minCoeff(), 0.0);
    EXPECT_LE(t.col(0).maxCoeff(), 11.0);
    EXPECT_LE(t.col(1).maxCoeff(), 9.0);
  }
  EXPECT_THROW(track_points(v, 11, 2), Error);
  EXPECT_THROW(track_points(v, 4, 0), Error);
}

TEST(Tracker, RecoversSpriteTrajectories) {
  const auto corpus = make_corpus(24, 5, false);
  double total = 0;
  int n = 0;
  for (const auto& cs : corpus.scenes) {
    const auto& gt = cs.scene.trajectories;
    std::vector<std::array<double, 2>> seeds;
    for (const auto& t : gt.tracks) seeds.push_back({t(0, 0), t(0, 1)});
    const auto tr = track_points_from(cs.scene.video, seeds, 2);
    double err = 0;
    for (std::size_t i = 0; i < gt.size(); ++i)
      for (int f = 0; f < gt.frames; ++f) err += (tr.tracks[i].row(f) - gt.tracks[i].row(f)).norm();
    err /= double(gt.size() * std::size_t(gt.frames));
    total += err;
    ++n;
    EXPECT_LT(err, 1.5) << kMotionClassNames[std::size_t(cs.motion_class)];
  }
  EXPECT_LT(total / n, 1.0);
}

TEST(AveragePrecision, HandCases) {
  // Positives {a=0, b=1}; ranking (a, x, b, y).
  EXPECT_NEAR(average_precision({0, 2, 1, 3}, {1, 1, 0, 0}), 0.5 * (1.0 + 2.0 / 3.0), 1e-15);
  EXPECT_EQ(average_precision({1, 0, 3, 2}, {1, 1, 0, 0}), 1.0);
  EXPECT_THROW(average_precision({0, 1}, {0, 0}), Error);
}

TEST(AveragePrecision, RetrievalPositivesAndRange) {
  // Five items on a line; discrepancy = |i - j|, features equal to position.
  const int n = 5;
  Mat<double> d(n, n);
  std::vector<Mat<double>> feats;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) d(i, j) = std::abs(i - j);
    feats.push_back(Mat<double>::Constant(1, 1, i));
  }
  for (int q = 0; q < n; ++q) EXPECT_EQ(retrieval_ap(feats, d, q, 0.3), 1.0);
  // Reversed features rank the true neighbour last from query 0: one positive at rank 4.
  std::vector<Mat<double>> rev;
  for (int i = 0; i < n; ++i) rev.push_back(Mat<double>::Constant(1, 1, i == 1 ? 100.0 : i));
  EXPECT_NEAR(retrieval_ap(rev, d, 0, 0.2), 0.25, 1e-15);
  EXPECT_THROW(retrieval_ap(feats, d, 0, 0.0), Error);
  EXPECT_THROW(retrieval_ap(feats, d, 0, 1.0), Error);
}

TEST(AveragePrecision, StructuredBeatsRandomFeatures) {
  const auto corpus = make_corpus(30, 6, true);
  std::vector<RenderedScene> scenes;
  for (const auto& c : corpus.scenes) scenes.push_back(c.scene);
  Mat<double> d = Mat<double>::Zero(30, 30);
  for (int i = 0; i < 30; ++i)
    for (int j = 0; j < 30; ++j)
      if (i != j)
        d(i, j) = chamfer_motion_discrepancy(scenes[std::size_t(i)].trajectories, scenes[std::size_t(j)].trajectories,
                                             8, 16, 16);
  // Structured: flattened ground-truth trajectories. Random: Gaussian vectors.
  std::vector<Mat<double>> structured, random;
  Rng rng(7);
  for (const auto& s : scenes) {
    Mat<double> f(1, Eigen::Index(s.trajectories.size()) * 16);
    for (std::size_t k = 0; k < s.trajectories.size(); ++k)
      f.middleCols(Eigen::Index(k) * 16, 16) = s.trajectories.tracks[k].reshaped<Eigen::RowMajor>().transpose();
    structured.push_back(f);
    random.push_back(rng.normal_matrix<double>(1, 64));
  }
  double a = 0, b = 0;
  for (int q = 0; q < 30; ++q) {
    a += retrieval_ap(structured, d, q, 0.1);
    b += retrieval_ap(random, d, q, 0.1);
  }
  EXPECT_GT(a, b);
}

TEST(Probe, NoiseIsSeededAndVanishesAtZero) {
  const auto s = NoiseSchedule::standard(100);
  Rng rng(8);
  const auto v = LatentVideo<double>::randn(2, 4, 4, 3, rng);
  EXPECT_EQ(noisy_probe_input(v, 50, 9, s).data, noisy_probe_input(v, 50, 9, s).data);
  EXPECT_NE(noisy_probe_input(v, 50, 9, s).data, noisy_probe_input(v, 50, 10, s).data);
  EXPECT_EQ(noisy_probe_input(v, 0, 9, s).data, v.data);
}

TEST(Probe, ComparisonFeatures) {
  LatentVideo<double> v(3, 1, 2, 1);
  v.data << 1, 2, 4, 8, 16, 32;
  Mat<double> raw(1, 6), res(1, 4);
  raw << 1, 2, 4, 8, 16, 32;
  res << 3, 6, 12, 24;
  EXPECT_EQ(raw_latent_feature(v), raw);
  EXPECT_EQ(residual_frame_feature(v), res);
}

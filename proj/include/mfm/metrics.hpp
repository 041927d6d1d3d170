#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "mfm/diffmath.hpp"
#include "mfm/features.hpp"
#include "mfm/trajectory.hpp"

namespace mfm {

// Trajectory-set Chamfer distance, C * (mean_i min_j |T_i - R_j|^2 + mean_j min_i |T_i - R_j|^2)
// with C = 1 / (2 F H W). Each directed sum is averaged over its own set.
inline double chamfer_motion_discrepancy(const TrajectorySet& ref, const TrajectorySet& gen, int frames, int height,
                                         int width) {
  require(!ref.empty() && !gen.empty(), ErrorKind::empty_set, "chamfer: empty trajectory set");
  require(ref.frames == gen.frames && ref.frames == frames, ErrorKind::shape_mismatch, "chamfer: frame counts differ");
  require(height >= 1 && width >= 1, ErrorKind::invalid_range, "chamfer: bad frame size");
  const std::size_t nr = ref.size(), ng = gen.size();
  Mat<double> d(static_cast<Eigen::Index>(ng), static_cast<Eigen::Index>(nr));
  for (std::size_t i = 0; i < ng; ++i)
    for (std::size_t j = 0; j < nr; ++j) d(Eigen::Index(i), Eigen::Index(j)) = (gen.tracks[i] - ref.tracks[j]).squaredNorm();
  const double gen_to_ref = d.rowwise().minCoeff().sum() / double(ng);
  const double ref_to_gen = d.colwise().minCoeff().sum() / double(nr);
  return (gen_to_ref + ref_to_gen) / (2.0 * frames * height * width);
}

namespace detail {

// Bilinear sample with edge replication; returns all channels.
template <class T>
void sample_pixel(const LatentVideo<T>& v, int f, double x, double y, double* out) {
  x = std::clamp(x, 0.0, double(v.width - 1));
  y = std::clamp(y, 0.0, double(v.height - 1));
  const int x0 = static_cast<int>(std::floor(x)), y0 = static_cast<int>(std::floor(y));
  const int x1 = std::min(x0 + 1, v.width - 1), y1 = std::min(y0 + 1, v.height - 1);
  const double fx = x - x0, fy = y - y0;
  for (int c = 0; c < v.channels; ++c)
    out[c] = (1 - fy) * ((1 - fx) * double(v.at(f, y0, x0, c)) + fx * double(v.at(f, y0, x1, c))) +
             fy * ((1 - fx) * double(v.at(f, y1, x0, c)) + fx * double(v.at(f, y1, x1, c)));
}

template <class T>
std::vector<double> patch(const LatentVideo<T>& v, int f, double x, double y) {
  std::vector<double> p(static_cast<std::size_t>(9 * v.channels));
  for (int dy = -1; dy <= 1; ++dy)
    for (int dx = -1; dx <= 1; ++dx)
      sample_pixel(v, f, x + dx, y + dy, p.data() + ((dy + 1) * 3 + (dx + 1)) * v.channels);
  return p;
}

inline double ssd(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

// Parabolic sub-pixel offset from three costs at -1, 0, +1.
inline double parabola(double lo, double mid, double hi) {
  const double den = lo - 2 * mid + hi;
  if (mid == 0.0 || den <= 0.0) return 0.0;
  return std::clamp(0.5 * (lo - hi) / den, -0.5, 0.5);
}

}  // namespace detail

// Frame-to-frame block matching from explicit start points (x, y) on frame 0. Each step
// picks the integer displacement within +-radius minimising a 3x3 patch SSD (ties go to
// the smaller displacement), refined to sub-pixel precision by a parabola fit.
template <class T>
TrajectorySet track_points_from(const LatentVideo<T>& video, const std::vector<std::array<double, 2>>& seeds,
                                int radius) {
  require(radius >= 1, ErrorKind::invalid_range, "tracker radius must be >= 1");
  require(video.height >= 3 && video.width >= 3, ErrorKind::invalid_range, "tracker needs frames of at least 3x3");
  require(!seeds.empty(), ErrorKind::empty_set, "tracker needs at least one seed point");
  std::vector<std::array<int, 2>> offsets;
  for (int dy = -radius; dy <= radius; ++dy)
    for (int dx = -radius; dx <= radius; ++dx) offsets.push_back({dx, dy});
  std::stable_sort(offsets.begin(), offsets.end(), [](const auto& a, const auto& b) {
    return a[0] * a[0] + a[1] * a[1] < b[0] * b[0] + b[1] * b[1];
  });

  TrajectorySet out;
  out.frames = video.frames;
  out.source = "tracked";
  for (const auto& s : seeds) {
    Mat<double> t(video.frames, 2);
    double x = std::clamp(s[0], 0.0, double(video.width - 1)), y = std::clamp(s[1], 0.0, double(video.height - 1));
    t(0, 0) = x;
    t(0, 1) = y;
    for (int f = 0; f + 1 < video.frames; ++f) {
      const auto ref = detail::patch(video, f, x, y);
      auto cost = [&](double cx, double cy) { return detail::ssd(ref, detail::patch(video, f + 1, cx, cy)); };
      double best = std::numeric_limits<double>::infinity();
      std::array<int, 2> bo{0, 0};
      for (const auto& o : offsets) {
        const double c = cost(x + o[0], y + o[1]);
        if (c < best) {
          best = c;
          bo = o;
        }
      }
      const double bx = x + bo[0], by = y + bo[1];
      const double sx = detail::parabola(cost(bx - 1, by), best, cost(bx + 1, by));
      const double sy = detail::parabola(cost(bx, by - 1), best, cost(bx, by + 1));
      x = std::clamp(bx + sx, 0.0, double(video.width - 1));
      y = std::clamp(by + sy, 0.0, double(video.height - 1));
      t(f + 1, 0) = x;
      t(f + 1, 1) = y;
    }
    out.tracks.push_back(std::move(t));
  }
  return out;
}

// grid x grid points, evenly spaced over frame 0.
template <class T>
TrajectorySet track_points(const LatentVideo<T>& video, int grid, int radius) {
  require(grid >= 1 && grid <= std::min(video.height, video.width), ErrorKind::invalid_range,
          "tracker grid does not fit in the frame");
  std::vector<std::array<double, 2>> seeds;
  for (int i = 0; i < grid; ++i)
    for (int j = 0; j < grid; ++j)
      seeds.push_back({std::round((j + 0.5) * video.width / grid - 0.5), std::round((i + 0.5) * video.height / grid - 0.5)});
  return track_points_from(video, seeds, radius);
}

// Tracks a grid on both videos and returns their Chamfer discrepancy.
template <class T>
double video_motion_discrepancy(const LatentVideo<T>& ref, const LatentVideo<T>& gen, int grid = 8, int radius = 2) {
  require_same_shape(ref, gen, "motion discrepancy: video shapes differ");
  return chamfer_motion_discrepancy(track_points(ref, grid, radius), track_points(gen, grid, radius), ref.frames,
                                    ref.height, ref.width);
}

// Average precision of `positives` under `ranking` (both hold candidate indices).
inline double average_precision(const std::vector<int>& ranking, const std::vector<char>& is_positive) {
  int hits = 0, total = 0;
  for (char p : is_positive) total += p ? 1 : 0;
  require(total > 0, ErrorKind::empty_set, "average precision needs at least one positive");
  double sum = 0;
  for (std::size_t r = 0; r < ranking.size(); ++r) {
    if (!is_positive[static_cast<std::size_t>(ranking[r])]) continue;
    ++hits;
    sum += double(hits) / double(r + 1);
  }
  return sum / total;
}

// Positives: the ceil(fraction * (N - 1)) non-query items with the smallest discrepancy to
// the query. Ranking: ascending L2 feature distance. Ties keep index order.
template <class T>
double retrieval_ap(const std::vector<Mat<T>>& features, const Mat<double>& discrepancy, int query,
                    double positive_fraction) {
  const int n = static_cast<int>(features.size());
  require(positive_fraction > 0.0 && positive_fraction < 1.0, ErrorKind::invalid_range,
          "positive fraction must lie in (0, 1)");
  require(n >= 2 && discrepancy.rows() == n && discrepancy.cols() == n, ErrorKind::shape_mismatch,
          "retrieval: feature count and discrepancy matrix differ");
  require(query >= 0 && query < n, ErrorKind::invalid_range, "retrieval: query index out of range");
  std::vector<int> others;
  for (int i = 0; i < n; ++i)
    if (i != query) others.push_back(i);
  const int npos = static_cast<int>(std::ceil(positive_fraction * double(n - 1) - 1e-12));

  std::vector<int> by_disc = others;
  std::stable_sort(by_disc.begin(), by_disc.end(),
                   [&](int a, int b) { return discrepancy(query, a) < discrepancy(query, b); });
  std::vector<char> positive(static_cast<std::size_t>(n), 0);
  for (int i = 0; i < npos; ++i) positive[static_cast<std::size_t>(by_disc[static_cast<std::size_t>(i)])] = 1;

  std::vector<double> dist(static_cast<std::size_t>(n), 0.0);
  for (int i : others) {
    require(features[static_cast<std::size_t>(i)].size() == features[static_cast<std::size_t>(query)].size(),
            ErrorKind::shape_mismatch, "retrieval: feature lengths differ");
    dist[static_cast<std::size_t>(i)] =
        double((features[static_cast<std::size_t>(i)] - features[static_cast<std::size_t>(query)]).norm());
  }
  std::vector<int> ranking = others;
  std::stable_sort(ranking.begin(), ranking.end(),
                   [&](int a, int b) { return dist[static_cast<std::size_t>(a)] < dist[static_cast<std::size_t>(b)]; });
  return average_precision(ranking, positive);
}

template <class T>
LatentVideo<T> noisy_probe_input(const LatentVideo<T>& video, int t, std::uint64_t seed, const NoiseSchedule& s) {
  Rng rng(seed);
  const auto eps = LatentVideo<T>::randn(video.frames, video.height, video.width, video.channels, rng);
  return forward_noise(video, t, eps, s);
}

// Noises the video to level t with a seeded draw and extracts motion features using
// the generic probe prompt. t = 0 gives the clean video's features.
template <class T>
MotionFeatures<T> noisy_feature_probe(const FrozenExtractor<T>& extractor, const LatentVideo<T>& video, int t,
                                      std::uint64_t seed, const NoiseSchedule& s, T lambda_ca = T(1),
                                      T lambda_tsa = T(1)) {
  return extractor.extract(noisy_probe_input(video, t, seed, s), t, generic_prompt(), lambda_ca, lambda_tsa);
}

// Flattened comparison features for the retrieval study.
template <class T>
Mat<T> raw_latent_feature(const LatentVideo<T>& v) {
  return v.data.template reshaped<Eigen::RowMajor>().transpose();
}

template <class T>
Mat<T> residual_frame_feature(const LatentVideo<T>& v) {
  const Eigen::Index r = Eigen::Index(v.height) * v.width;
  if (v.frames < 2) return Mat<T>::Zero(1, 1);
  Mat<T> d = v.data.bottomRows(r * (v.frames - 1)) - v.data.topRows(r * (v.frames - 1));
  return d.template reshaped<Eigen::RowMajor>().transpose();
}

}  // namespace mfm

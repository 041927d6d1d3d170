#pragma once

#include <charconv>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "mfm/core.hpp"

namespace mfm {

// N point trajectories, each F x 2 (x, y) in pixel-index coordinates: pixel (i, j) has
// its centre at (j, i), so valid positions lie in [0, W-1] x [0, H-1].
struct TrajectorySet {
  int frames = 0;
  std::vector<Mat<double>> tracks;
  std::string source = "ground-truth";

  std::size_t size() const { return tracks.size(); }
  bool empty() const { return tracks.empty(); }

  void clamp(int height, int width) {
    for (auto& t : tracks) {
      t.col(0) = t.col(0).cwiseMax(0.0).cwiseMin(double(width - 1));
      t.col(1) = t.col(1).cwiseMax(0.0).cwiseMin(double(height - 1));
    }
  }

  bool operator==(const TrajectorySet& o) const {
    if (frames != o.frames || tracks.size() != o.tracks.size()) return false;
    for (std::size_t i = 0; i < tracks.size(); ++i)
      if (tracks[i] != o.tracks[i]) return false;
    return true;
  }
};

namespace detail {
inline std::string shortest(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}
}  // namespace detail

// CSV with header traj_id,frame,x,y. Values use the shortest round-trip representation.
inline void write_trajectories_csv(const std::filesystem::path& path, const TrajectorySet& s) {
  std::ofstream os(path);
  require(static_cast<bool>(os), ErrorKind::io, "cannot open " + path.string() + " for writing");
  os << "traj_id,frame,x,y\n";
  for (std::size_t i = 0; i < s.tracks.size(); ++i)
    for (int f = 0; f < s.frames; ++f)
      os << i << ',' << f << ',' << detail::shortest(s.tracks[i](f, 0)) << ',' << detail::shortest(s.tracks[i](f, 1))
         << '\n';
  require(static_cast<bool>(os), ErrorKind::io, "write failed: " + path.string());
}

inline TrajectorySet read_trajectories_csv(const std::filesystem::path& path, const std::string& source = "ground-truth") {
  std::ifstream is(path);
  require(static_cast<bool>(is), ErrorKind::io, "cannot open " + path.string());
  std::string line;
  require(static_cast<bool>(std::getline(is, line)) && line.rfind("traj_id,frame,x,y", 0) == 0, ErrorKind::format,
          path.string() + ": missing trajectory CSV header");
  struct Row {
    int id, frame;
    double x, y;
  };
  std::vector<Row> rows;
  int max_id = -1, max_frame = -1;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    Row r{};
    const char* p = line.data();
    const char* end = line.data() + line.size();
    auto field = [&](auto& out) {
      auto res = std::from_chars(p, end, out);
      require(res.ec == std::errc{}, ErrorKind::format, path.string() + ": bad CSV row '" + line + "'");
      p = res.ptr;
      if (p < end && *p == ',') ++p;
    };
    field(r.id);
    field(r.frame);
    field(r.x);
    field(r.y);
    require(r.id >= 0 && r.frame >= 0, ErrorKind::format, "negative trajectory index");
    max_id = std::max(max_id, r.id);
    max_frame = std::max(max_frame, r.frame);
    rows.push_back(r);
  }
  TrajectorySet s;
  s.source = source;
  s.frames = max_frame + 1;
  s.tracks.assign(static_cast<std::size_t>(max_id + 1), Mat<double>::Constant(s.frames, 2, std::nan("")));
  for (const auto& r : rows) {
    s.tracks[static_cast<std::size_t>(r.id)](r.frame, 0) = r.x;
    s.tracks[static_cast<std::size_t>(r.id)](r.frame, 1) = r.y;
  }
  for (const auto& t : s.tracks) require(t.allFinite(), ErrorKind::format, path.string() + ": incomplete trajectories");
  return s;
}

}  // namespace mfm

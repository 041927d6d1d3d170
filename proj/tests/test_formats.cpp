#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "mfm/checkpoint.hpp"
#include "mfm/pgm.hpp"
#include "mfm/trajectory.hpp"

using namespace mfm;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "mfm_formats";
  fs::create_directories(dir);
  return dir / name;
}

template <class F>
ErrorKind kind_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorKind::invalid_range;
}

}  // namespace

TEST(Lvid, RoundTripIsBitExact) {
  Rng rng(1);
  auto v = LatentVideo<float>::randn(3, 5, 7, 2, rng);
  v.fps = 12;
  v.data(0, 0) = -0.0f;
  v.data(1, 1) = 1e-40f;  // subnormal
  const auto p = scratch("a.lvid");
  write_lvid(p, v);
  const auto back = read_lvid(p);
  EXPECT_TRUE(back.same_shape(v));
  EXPECT_EQ(back.fps, 12);
  EXPECT_EQ(std::memcmp(back.data.data(), v.data.data(), sizeof(float) * std::size_t(v.data.size())), 0);
  std::ifstream is(p);
  std::string header;
  std::getline(is, header);
  EXPECT_EQ(header, R"({"F":3,"H":5,"W":7,"C":2,"fps":12,"dtype":"f32"})");
  EXPECT_EQ(fs::file_size(p), header.size() + 1 + 4 * 3 * 5 * 7 * 2);
}

TEST(Lvid, MalformedFilesAreRejected) {
  const auto p = scratch("bad.lvid");
  {
    std::ofstream os(p);
    os << R"({"F":1,"H":2,"W":2,"C":1,"dtype":"f32"})" << '\n' << "abc";
  }
  EXPECT_EQ(kind_of([&] { read_lvid(p); }), ErrorKind::format);
  {
    std::ofstream os(p);
    os << "not json\n";
  }
  EXPECT_EQ(kind_of([&] { read_lvid(p); }), ErrorKind::format);
  EXPECT_EQ(kind_of([&] { read_lvid(scratch("missing.lvid")); }), ErrorKind::io);
}

TEST(Checkpoint, DenoiserRoundTrip) {
  DenoiserConfig cfg = DenoiserConfig::micro();
  cfg.seed = 99;
  const Denoiser<float> m(cfg);
  const auto p = scratch("m.ckpt");
  save_denoiser(p, m, nlohmann::json{{"schedule", {{"steps", 50}}}});
  const auto back = load_denoiser(p);
  EXPECT_EQ(back.config(), cfg);
  std::vector<Mat<float>> a, b;
  m.visit_params([&](const std::string&, const Param<float>& q) { a.push_back(q.value); });
  back.visit_params([&](const std::string&, const Param<float>& q) { b.push_back(q.value); });
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], b[i]);
  EXPECT_EQ(read_tensor_file(p, "denoiser").config.at("schedule").at("steps"), 50);
  EXPECT_EQ(kind_of([&] { read_tensor_file(p, "lora"); }), ErrorKind::format);
}

TEST(Checkpoint, AdapterRoundTrip) {
  const auto cfg = DenoiserConfig::micro();
  Denoiser<float> m(cfg);
  attach_lora(m, {"blocks.0.tsa.q", "blocks.1.ff.fc2"}, 2, 0.5f, 3);
  Rng rng(4);
  m.visit_linears([&](const std::string&, Linear<float>& l) {
    if (l.lora) l.lora->up.value = rng.normal_matrix<float>(l.out_dim(), 2);
  });
  const auto set = extract_adapters(m);
  const auto p = scratch("a.lora");
  save_adapters(p, set);
  const auto back = load_adapters(p);
  ASSERT_EQ(back.size(), set.size());
  for (std::size_t i = 0; i < set.size(); ++i) {
    EXPECT_EQ(back.adapters[i].target, set.adapters[i].target);
    EXPECT_EQ(back.adapters[i].adapter.down.value, set.adapters[i].adapter.down.value);
    EXPECT_EQ(back.adapters[i].adapter.up.value, set.adapters[i].adapter.up.value);
    EXPECT_EQ(back.adapters[i].adapter.scale, 0.5f);
  }
  EXPECT_EQ(kind_of([&] { load_denoiser(p); }), ErrorKind::format);
}

TEST(Trajectories, CsvRoundTripIsBitExact) {
  Rng rng(5);
  TrajectorySet s;
  s.frames = 4;
  for (int i = 0; i < 3; ++i) s.tracks.push_back(rng.normal_matrix<double>(4, 2, 5.0));
  s.tracks[0](0, 0) = 0.1 + 0.2;  // classic shortest-representation case
  const auto p = scratch("t.csv");
  write_trajectories_csv(p, s);
  const auto back = read_trajectories_csv(p);
  EXPECT_TRUE(back == s);
  std::ifstream is(p);
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line, "traj_id,frame,x,y");
  std::getline(is, line);
  EXPECT_EQ(line.substr(0, 24), "0,0,0.30000000000000004,");
}

TEST(Trajectories, MalformedCsvRejected) {
  const auto p = scratch("bad.csv");
  {
    std::ofstream os(p);
    os << "traj_id,frame,x,y\n0,0,1,2\n0,1,oops,2\n";
  }
  EXPECT_EQ(kind_of([&] { read_trajectories_csv(p); }), ErrorKind::format);
  {
    std::ofstream os(p);
    os << "traj_id,frame,x,y\n0,0,1,2\n1,1,1,2\n";  // holes
  }
  EXPECT_EQ(kind_of([&] { read_trajectories_csv(p); }), ErrorKind::format);
  {
    std::ofstream os(p);
    os << "id,f,x,y\n";
  }
  EXPECT_EQ(kind_of([&] { read_trajectories_csv(p); }), ErrorKind::format);
}

TEST(Pgm, NormalisesToFullRange) {
  Mat<double> img(2, 3);
  img << 0, 1, 2, 3, 4, 5;
  const auto p = scratch("x.pgm");
  const auto b = write_pgm(p, img);
  EXPECT_EQ(b.min, 0.0);
  EXPECT_EQ(b.max, 5.0);
  const auto back = read_pgm(p);
  ASSERT_EQ(back.rows(), 2);
  ASSERT_EQ(back.cols(), 3);
  EXPECT_EQ(back(0, 0), 0.0);
  EXPECT_EQ(back(1, 2), 255.0);
  EXPECT_EQ(back(0, 1), 51.0);
  const auto flat = write_pgm(p, Mat<double>(Mat<double>::Constant(2, 2, 7.0)));
  EXPECT_EQ(flat.min, 7.0);
  EXPECT_EQ(read_pgm(p).maxCoeff(), 0.0);
}

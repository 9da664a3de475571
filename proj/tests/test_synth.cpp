#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "cat/synth.hpp"

using namespace cat;
namespace fs = std::filesystem;

namespace {

SequenceSpec base_spec() {
  SequenceSpec s;
  s.seed = 42;
  s.length = 40;
  s.width = 160;
  s.height = 120;
  return s;
}

std::string read_bytes(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(is)), {});
}

double region_mean(const Tensor<float>& img, int x0, int y0, int w, int h) {
  const int W = img.dim(2);
  double sum = 0;
  for (int y = y0; y < y0 + h; ++y)
    for (int x = x0; x < x0 + w; ++x) sum += img.data[y * W + x];
  return sum / (double(w) * h);
}

}  // namespace

TEST_CASE("spec file parsing") {
  fs::create_directories("synth_tmp");
  {
    std::ofstream os("synth_tmp/spec.cfg");
    os << "# a comment\n"
       << "seed = 7\n"
       << "length = 30\n"
       << "width = 96\n"
       << "height = 80\n"
       << "shape = ellipse\n"
       << "target_w = 18\n"
       << "challenge = 5:9 IV\n"
       << "challenge = 10:19 FM OCC\n";
  }
  SequenceSpec s = SequenceSpec::load("synth_tmp/spec.cfg");
  CHECK(s.seed == 7);
  CHECK(s.length == 30);
  CHECK(s.shape == "ellipse");
  CHECK(s.target_w == 18);
  REQUIRE(s.schedule.size() == 2);
  CHECK(s.schedule[1].start == 10);
  CHECK(s.schedule[1].end == 19);
  CHECK(s.schedule[1].tags == ChallengeSet{ChallengeLabel::FM, ChallengeLabel::OCC});
  CHECK(s.tags_at(12) == ChallengeSet{ChallengeLabel::FM, ChallengeLabel::OCC});
  CHECK(s.tags_at(3).empty());

  {
    std::ofstream os("synth_tmp/bad1.cfg");
    os << "length = 30\nchallenge = 25:40 IV\n";  // range past the end
  }
  CHECK_THROWS_AS(SequenceSpec::load("synth_tmp/bad1.cfg"), std::invalid_argument);
  {
    std::ofstream os("synth_tmp/bad2.cfg");
    os << "length = 30\nchallenge = 5:9 BLUR\n";
  }
  CHECK_THROWS_AS(SequenceSpec::load("synth_tmp/bad2.cfg"), std::invalid_argument);
}

TEST_CASE("clean sequence: constant velocity, sub-FM displacement") {
  SequenceSpec s = base_spec();
  generate(s, "synth_clean");
  Sequence seq = load_sequence("synth_clean");
  REQUIRE(seq.length == s.length);
  for (int f = 1; f < seq.length; ++f) {
    double d = center_error(seq.gt_rgb[f], seq.gt_rgb[f - 1]);
    CHECK(d < 0.5 * 0.5 * (s.target_w + s.target_h));
  }
  for (int f = 0; f < seq.length; ++f) {
    CHECK(seq.challenges[f].empty());
    CHECK(seq.gt_rgb[f].area() > 0);
    // co-registered ground truth
    CHECK(seq.gt_rgb[f].x == seq.gt_t[f].x);
    CHECK(seq.gt_rgb[f].w == seq.gt_t[f].w);
  }
}

TEST_CASE("same spec twice produces a byte-identical directory") {
  SequenceSpec s = base_spec();
  s.length = 12;
  s.schedule.push_back({2, 5, {ChallengeLabel::IV, ChallengeLabel::FM}});
  generate(s, "synth_det_a");
  generate(s, "synth_det_b");
  std::vector<fs::path> rel;
  for (const auto& e : fs::recursive_directory_iterator("synth_det_a"))
    if (e.is_regular_file()) rel.push_back(fs::relative(e.path(), "synth_det_a"));
  CHECK(rel.size() == 2 * 12 + 3);
  for (const auto& r : rel)
    CHECK(read_bytes(fs::path("synth_det_a") / r) == read_bytes(fs::path("synth_det_b") / r));
}

TEST_CASE("TC erases thermal contrast between target and background ring") {
  SequenceSpec s = base_spec();
  s.schedule.push_back({10, 24, {ChallengeLabel::TC}});
  generate(s, "synth_tc");
  Sequence seq = load_sequence("synth_tc");
  for (int f : {10, 17, 24}) {
    FramePair fp = seq.frame(f);
    const BBox& b = fp.gt_t;
    int x0 = int(b.x), y0 = int(b.y), w = int(b.w), h = int(b.h);
    double target = region_mean(fp.thermal, x0, y0, w, h);
    // background ring: inflated box minus the target box
    int m = 6;
    const int W = fp.thermal.dim(2), H = fp.thermal.dim(1);
    double sum = 0;
    int n = 0;
    for (int y = std::max(0, y0 - m); y < std::min(H, y0 + h + m); ++y)
      for (int x = std::max(0, x0 - m); x < std::min(W, x0 + w + m); ++x) {
        if (x >= x0 && x < x0 + w && y >= y0 && y < y0 + h) continue;
        sum += fp.thermal.data[y * W + x];
        ++n;
      }
    CHECK(std::abs(target - sum / n) < 0.05);
  }
  // outside the window the target is hot against the background
  FramePair clean = seq.frame(2);
  const BBox& b = clean.gt_t;
  double target = region_mean(clean.thermal, int(b.x), int(b.y), int(b.w), int(b.h));
  CHECK(target > 0.7);
}

TEST_CASE("FM produces super-threshold displacement inside the window") {
  SequenceSpec s = base_spec();
  s.schedule.push_back({15, 25, {ChallengeLabel::FM}});
  generate(s, "synth_fm");
  Sequence seq = load_sequence("synth_fm");
  for (int f = 15; f <= 25; ++f) {
    double d = center_error(seq.gt_rgb[f], seq.gt_rgb[f - 1]);
    double size = 0.5 * (seq.gt_rgb[f].w + seq.gt_rgb[f].h);
    CHECK(d > 0.5 * size - 1.5);  // integer gt rounding slack
  }
}

TEST_CASE("SV ramps the scale monotonically by at least 40 percent") {
  SequenceSpec s = base_spec();
  s.length = 60;
  s.schedule.push_back({10, 40, {ChallengeLabel::SV}});
  generate(s, "synth_sv");
  Sequence seq = load_sequence("synth_sv");
  double first = seq.gt_rgb[10].area(), last = seq.gt_rgb[40].area();
  double ratio = std::sqrt(last / first);
  CHECK((ratio > 1.38 || ratio < 0.62));
  bool growing = ratio > 1;
  for (int f = 11; f <= 40; ++f) {
    double prev = seq.gt_rgb[f - 1].w, cur = seq.gt_rgb[f].w;
    if (growing)
      CHECK(cur >= prev - 1e-9);
    else
      CHECK(cur <= prev + 1e-9);
  }
}

TEST_CASE("OCC covers at least half the target in both modalities") {
  SequenceSpec s = base_spec();
  s.schedule.push_back({5, 15, {ChallengeLabel::OCC}});
  generate(s, "synth_occ");
  Sequence seq = load_sequence("synth_occ");
  FramePair fp = seq.frame(10);
  const BBox& b = fp.gt_t;
  const int W = fp.thermal.dim(2);
  int covered = 0, total = 0;
  for (int y = int(b.y); y < int(b.y + b.h); ++y)
    for (int x = int(b.x); x < int(b.x + b.w); ++x) {
      ++total;
      // occluder is cold (~0.2) against the hot target (~0.85)
      if (fp.thermal.data[y * W + x] < 0.5) ++covered;
    }
  CHECK(double(covered) / total >= 0.5);
  // rgb occluder is dark against the bright target
  covered = 0;
  for (int y = int(b.y); y < int(b.y + b.h); ++y)
    for (int x = int(b.x); x < int(b.x + b.w); ++x) {
      double v = 0;
      for (int c = 0; c < 3; ++c) v += fp.rgb.data[(c * fp.rgb.dim(1) + y) * W + x];
      if (v / 3 < 0.5) ++covered;
    }
  CHECK(double(covered) / total >= 0.5);
}

TEST_CASE("IV darkens rgb only") {
  SequenceSpec s = base_spec();
  s.schedule.push_back({10, 25, {ChallengeLabel::IV}});
  generate(s, "synth_iv");
  Sequence seq = load_sequence("synth_iv");
  auto mean_of = [](const Tensor<float>& t) {
    double sum = 0;
    for (float v : t.data) sum += v;
    return sum / double(t.size());
  };
  FramePair in = seq.frame(18), out = seq.frame(2);
  CHECK(mean_of(in.rgb) < mean_of(out.rgb) - 0.1);
  CHECK(std::abs(mean_of(in.thermal) - mean_of(out.thermal)) < 0.02);
}

TEST_CASE("load_sequence format contracts") {
  fs::create_directories("synth_fmt");
  {
    std::ofstream g("synth_fmt/gt_rgb.txt");
    g << "10,20,30,40\n1,2,3,4\n";
    std::ofstream t("synth_fmt/gt_t.txt");
    t << "10,20,30,40\n1,2,3,4\n";
    std::ofstream c("synth_fmt/challenges.txt");
    c << "IV OCC\n\n";
  }
  Sequence seq = load_sequence("synth_fmt");
  REQUIRE(seq.length == 2);
  CHECK(seq.gt_rgb[0].x == 10);
  CHECK(seq.gt_rgb[0].y == 20);
  CHECK(seq.gt_rgb[0].w == 30);
  CHECK(seq.gt_rgb[0].h == 40);
  CHECK(seq.challenges[0] == ChallengeSet{ChallengeLabel::IV, ChallengeLabel::OCC});
  CHECK(seq.challenges[1].empty());

  {
    std::ofstream g("synth_fmt/gt_rgb.txt");
    g << "10,20,30\n1,2,3,4\n";
  }
  CHECK_THROWS_AS(load_sequence("synth_fmt"), IoError);
  {
    std::ofstream g("synth_fmt/gt_rgb.txt");
    g << "10,20,30,40\n1,2,3,4\n";
    std::ofstream c("synth_fmt/challenges.txt");
    c << "IV BAD\n\n";
  }
  CHECK_THROWS_AS(load_sequence("synth_fmt"), std::invalid_argument);
  CHECK_THROWS_AS(load_sequence("no_such_dir"), IoError);
}

TEST_CASE("challenge_subset membership and counting") {
  SequenceSpec s = base_spec();
  s.schedule.push_back({10, 19, {ChallengeLabel::IV}});
  s.schedule.push_back({15, 22, {ChallengeLabel::OCC}});
  generate(s, "synth_subset");
  Sequence seq = load_sequence("synth_subset");
  auto iv = challenge_subset(seq, ChallengeLabel::IV);
  auto occ = challenge_subset(seq, ChallengeLabel::OCC);
  CHECK(iv.size() == 10);
  CHECK(occ.size() == 8);
  // frame 17 is in both subsets; frame 0 in none
  CHECK(std::find(iv.begin(), iv.end(), 17) != iv.end());
  CHECK(std::find(occ.begin(), occ.end(), 17) != occ.end());
  CHECK(challenge_subset(seq, ChallengeLabel::TC).empty());
  for (ChallengeLabel c : kAllChallenges) {
    auto sub = challenge_subset(seq, c);
    CHECK(std::find(sub.begin(), sub.end(), 0) == sub.end());
  }
}

TEST_CASE("generate -> load round-trips at 8-bit precision") {
  SequenceSpec s = base_spec();
  s.length = 5;
  generate(s, "synth_rt");
  Sequence seq = load_sequence("synth_rt");
  FramePair fp = seq.frame(0);
  CHECK(fp.rgb.shape == Shape{3, s.height, s.width});
  CHECK(fp.thermal.shape == Shape{1, s.height, s.width});
  for (float v : fp.rgb.data) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
    // every value is k/255 for integer k
    CHECK(std::abs(v * 255.0f - std::round(v * 255.0f)) < 1e-4f);
  }
}

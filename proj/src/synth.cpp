#include "cat/synth.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "cat/config.hpp"
#include "cat/pnm.hpp"

namespace cat {

namespace {

constexpr double kPi = 3.14159265358979323846;

struct Wave {
  double fx, fy, phase, amp;
};

double field_at(const std::vector<Wave>& waves, int x, int y, int w, int h) {
  double v = 0.45;
  for (const Wave& wv : waves)
    v += wv.amp * std::sin(2 * kPi * (wv.fx * x / w + wv.fy * y / h) + wv.phase);
  return v;
}

std::uint8_t quant(double v) {
  v = std::clamp(v, 0.0, 1.0);
  return static_cast<std::uint8_t>(std::lround(v * 255.0));
}

std::string frame_name(int i) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%06d", i);
  return buf;
}

struct IntBox {
  int x, y, w, h;
};

bool in_ellipse(const IntBox& b, int x, int y) {
  double dx = (x + 0.5 - (b.x + b.w / 2.0)) / (b.w / 2.0);
  double dy = (y + 0.5 - (b.y + b.h / 2.0)) / (b.h / 2.0);
  return dx * dx + dy * dy <= 1.0;
}

}  // namespace

ChallengeSet SequenceSpec::tags_at(int frame) const {
  ChallengeSet out;
  for (const ChallengeWindow& w : schedule)
    if (frame >= w.start && frame <= w.end) out.insert(w.tags.begin(), w.tags.end());
  return out;
}

void SequenceSpec::validate() const {
  if (length <= 0) throw std::invalid_argument("sequence spec: length must be positive");
  if (width < 32 || height < 32)
    throw std::invalid_argument("sequence spec: image size must be at least 32x32");
  if (shape != "rectangle" && shape != "ellipse")
    throw std::invalid_argument("sequence spec: shape must be rectangle or ellipse");
  if (target_w < 4 || target_h < 4)
    throw std::invalid_argument("sequence spec: target size must be at least 4px");
  // target must fit with margin at the maximum SV scale
  if (target_w * 1.4 + 4 > width || target_h * 1.4 + 4 > height)
    throw std::invalid_argument("sequence spec: target does not fit the frame at max scale");
  for (const ChallengeWindow& w : schedule) {
    if (w.start < 0 || w.end >= length || w.start > w.end)
      throw std::invalid_argument("sequence spec: challenge range " +
                                  std::to_string(w.start) + ":" + std::to_string(w.end) +
                                  " outside [0," + std::to_string(length) + ")");
    if (w.tags.empty())
      throw std::invalid_argument("sequence spec: challenge range without tags");
  }
}

SequenceSpec SequenceSpec::load(const std::string& path) {
  Config cfg = Config::load(path);
  SequenceSpec s;
  s.seed = cfg.get_u64("seed", s.seed);
  s.length = cfg.get_int("length", s.length);
  s.width = cfg.get_int("width", s.width);
  s.height = cfg.get_int("height", s.height);
  s.shape = cfg.get("shape", s.shape);
  s.target_w = cfg.get_double("target_w", s.target_w);
  s.target_h = cfg.get_double("target_h", s.target_h);
  s.speed = cfg.get_double("speed", s.speed);
  s.noise_sigma = cfg.get_double("noise_sigma", s.noise_sigma);
  for (const std::string& line : cfg.all("challenge")) {
    std::vector<std::string> toks = split_ws(line);
    if (toks.empty()) throw IoError("sequence spec: empty challenge entry");
    std::vector<std::string> range = split_char(toks[0], ':');
    if (range.size() != 2)
      throw IoError("sequence spec: challenge range must be start:end, got '" + toks[0] + "'");
    ChallengeWindow w;
    try {
      w.start = std::stoi(range[0]);
      w.end = std::stoi(range[1]);
    } catch (const std::exception&) {
      throw IoError("sequence spec: bad challenge range '" + toks[0] + "'");
    }
    for (size_t i = 1; i < toks.size(); ++i) w.tags.insert(parse_challenge(toks[i]));
    if (w.tags.empty())
      throw IoError("sequence spec: challenge entry '" + line + "' has no tags");
    s.schedule.push_back(std::move(w));
  }
  s.validate();
  return s;
}

void generate(const SequenceSpec& spec, const std::string& out_dir) {
  spec.validate();
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir + "/rgb", ec);
  fs::create_directories(out_dir + "/t", ec);
  if (!fs::is_directory(out_dir + "/rgb") || !fs::is_directory(out_dir + "/t"))
    throw IoError("generate: cannot create output directory " + out_dir);

  const int W = spec.width, H = spec.height;
  std::mt19937_64 rng(spec.seed ^ 0xc2b2ae3d27d4eb4full);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, spec.noise_sigma);

  // static low-frequency background per modality
  auto make_waves = [&] {
    std::vector<Wave> ws;
    for (int i = 0; i < 4; ++i) {
      Wave w;
      w.fx = 1 + std::floor(u01(rng) * 3);
      w.fy = 1 + std::floor(u01(rng) * 3);
      w.phase = 2 * kPi * u01(rng);
      w.amp = 0.05;
      ws.push_back(w);
    }
    return ws;
  };
  std::vector<Wave> bg_rgb = make_waves(), bg_t = make_waves();

  double target_rgb[3], occ_rgb[3];
  for (double& c : target_rgb) c = 0.75 + 0.2 * u01(rng);
  for (double& c : occ_rgb) c = 0.10 + 0.15 * u01(rng);
  const double target_t = 0.85, occ_t = 0.20;

  // per-window draws, in schedule order, before the frame loop
  std::vector<double> sv_sign(spec.schedule.size(), 1.0);
  std::vector<double> iv_gain(spec.schedule.size(), 1.0), iv_gamma(spec.schedule.size(), 1.0);
  for (size_t i = 0; i < spec.schedule.size(); ++i) {
    if (spec.schedule[i].tags.count(ChallengeLabel::SV))
      sv_sign[i] = u01(rng) < 0.5 ? 1.0 : -1.0;
    if (spec.schedule[i].tags.count(ChallengeLabel::IV)) {
      iv_gain[i] = 0.35 + 0.2 * u01(rng);
      iv_gamma[i] = 1.3 + 0.5 * u01(rng);
    }
  }

  double cx = W / 2.0, cy = H / 2.0;
  double ang = 2 * kPi * u01(rng);
  double vx = spec.speed * std::cos(ang), vy = spec.speed * std::sin(ang);

  std::ostringstream gt_lines, tag_lines;
  std::vector<double> rgb(static_cast<size_t>(3) * H * W);
  std::vector<double> th(static_cast<size_t>(H) * W);

  for (int f = 0; f < spec.length; ++f) {
    ChallengeSet tags = spec.tags_at(f);

    double scale = 1.0;
    for (size_t i = 0; i < spec.schedule.size(); ++i) {
      const ChallengeWindow& w = spec.schedule[i];
      if (f >= w.start && f <= w.end && w.tags.count(ChallengeLabel::SV)) {
        double t = w.end > w.start ? double(f - w.start) / (w.end - w.start) : 1.0;
        scale = 1.0 + sv_sign[i] * 0.4 * t;
        break;
      }
    }
    double tw = spec.target_w * scale, thh = spec.target_h * scale;

    if (f > 0) {
      if (tags.count(ChallengeLabel::FM)) {
        // jump toward the frame interior, displacement 0.7 x mean target size
        double d = 0.7 * 0.5 * (tw + thh);
        double a = 0.5 * kPi * u01(rng);
        double sx = cx > W / 2.0 ? -1.0 : 1.0;
        double sy = cy > H / 2.0 ? -1.0 : 1.0;
        cx += sx * d * std::cos(a);
        cy += sy * d * std::sin(a);
      } else {
        cx += vx;
        cy += vy;
      }
      double mx = tw / 2 + 2, my = thh / 2 + 2;
      if (cx < mx) { cx = mx; vx = std::abs(vx); }
      if (cx > W - mx) { cx = W - mx; vx = -std::abs(vx); }
      if (cy < my) { cy = my; vy = std::abs(vy); }
      if (cy > H - my) { cy = H - my; vy = -std::abs(vy); }
    }

    IntBox box;
    box.w = std::max(2, int(std::lround(tw)));
    box.h = std::max(2, int(std::lround(thh)));
    box.x = std::clamp(int(std::lround(cx - tw / 2)), 1, W - box.w - 1);
    box.y = std::clamp(int(std::lround(cy - thh / 2)), 1, H - box.h - 1);

    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        double br = field_at(bg_rgb, x, y, W, H);
        for (int c = 0; c < 3; ++c) rgb[(c * H + y) * W + x] = br * (0.8 + 0.1 * c);
        th[y * W + x] = field_at(bg_t, x, y, W, H);
      }

    for (int y = box.y; y < box.y + box.h; ++y)
      for (int x = box.x; x < box.x + box.w; ++x) {
        if (spec.shape == "ellipse" && !in_ellipse(box, x, y)) continue;
        for (int c = 0; c < 3; ++c) rgb[(c * H + y) * W + x] = target_rgb[c];
        th[y * W + x] = target_t;
      }

    if (tags.count(ChallengeLabel::OCC)) {
      // occluder over the top 60% of the target, both modalities
      int oh = std::max(1, int(std::ceil(0.6 * box.h)));
      for (int y = box.y; y < box.y + oh; ++y)
        for (int x = box.x; x < box.x + box.w; ++x) {
          for (int c = 0; c < 3; ++c) rgb[(c * H + y) * W + x] = occ_rgb[c];
          th[y * W + x] = occ_t;
        }
    }

    if (tags.count(ChallengeLabel::TC)) {
      // kill the thermal contrast: fill the target box with the mean of a
      // surrounding background ring
      int m = std::max(3, box.w / 3);
      int rx0 = std::max(0, box.x - m), rx1 = std::min(W, box.x + box.w + m);
      int ry0 = std::max(0, box.y - m), ry1 = std::min(H, box.y + box.h + m);
      double sum = 0;
      int n = 0;
      for (int y = ry0; y < ry1; ++y)
        for (int x = rx0; x < rx1; ++x) {
          if (x >= box.x && x < box.x + box.w && y >= box.y && y < box.y + box.h) continue;
          sum += th[y * W + x];
          ++n;
        }
      double ring = n > 0 ? sum / n : 0.45;
      for (int y = box.y; y < box.y + box.h; ++y)
        for (int x = box.x; x < box.x + box.w; ++x) th[y * W + x] = ring;
    }

    if (tags.count(ChallengeLabel::IV)) {
      double gain = 1.0, gamma = 1.0;
      for (size_t i = 0; i < spec.schedule.size(); ++i)
        if (f >= spec.schedule[i].start && f <= spec.schedule[i].end &&
            spec.schedule[i].tags.count(ChallengeLabel::IV)) {
          gain = iv_gain[i];
          gamma = iv_gamma[i];
          break;
        }
      for (double& v : rgb) v = std::pow(std::clamp(v * gain, 0.0, 1.0), gamma);
    }

    RgbImage ri;
    ri.w = W;
    ri.h = H;
    ri.pix.resize(static_cast<size_t>(3) * H * W);
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x)
        for (int c = 0; c < 3; ++c)
          ri.pix[(y * W + x) * 3 + c] = quant(rgb[(c * H + y) * W + x] + noise(rng));
    GrayImage ti;
    ti.w = W;
    ti.h = H;
    ti.pix.resize(static_cast<size_t>(H) * W);
    for (int i = 0; i < H * W; ++i) ti.pix[i] = quant(th[i] + noise(rng));

    write_ppm(out_dir + "/rgb/" + frame_name(f) + ".ppm", ri);
    write_pgm(out_dir + "/t/" + frame_name(f) + ".pgm", ti);

    gt_lines << box.x << "," << box.y << "," << box.w << "," << box.h << "\n";
    bool first = true;
    for (ChallengeLabel c : kAllChallenges)
      if (tags.count(c)) {
        if (!first) tag_lines << " ";
        tag_lines << to_string(c);
        first = false;
      }
    tag_lines << "\n";
  }

  auto write_text = [&](const std::string& name, const std::string& body) {
    std::ofstream os(out_dir + "/" + name, std::ios::binary);
    if (!os) throw IoError("generate: cannot write " + out_dir + "/" + name);
    os << body;
  };
  write_text("gt_rgb.txt", gt_lines.str());
  write_text("gt_t.txt", gt_lines.str());  // co-registered modalities
  write_text("challenges.txt", tag_lines.str());
}

namespace {

std::vector<BBox> read_gt(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("load_sequence: missing " + path);
  std::vector<BBox> out;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    std::vector<std::string> f = split_char(trim(line), ',');
    if (f.size() != 4)
      throw IoError("load_sequence: " + path + ":" + std::to_string(lineno) +
                    ": expected x,y,w,h");
    BBox b;
    try {
      b.x = std::stod(f[0]);
      b.y = std::stod(f[1]);
      b.w = std::stod(f[2]);
      b.h = std::stod(f[3]);
    } catch (const std::exception&) {
      throw IoError("load_sequence: " + path + ":" + std::to_string(lineno) +
                    ": malformed ground-truth line '" + line + "'");
    }
    if (b.w <= 0 || b.h <= 0)
      throw IoError("load_sequence: " + path + ":" + std::to_string(lineno) +
                    ": non-positive box size");
    out.push_back(b);
  }
  return out;
}

}  // namespace

Sequence load_sequence(const std::string& dir) {
  Sequence s;
  s.dir = dir;
  s.gt_rgb = read_gt(dir + "/gt_rgb.txt");
  s.gt_t = read_gt(dir + "/gt_t.txt");
  if (s.gt_rgb.size() != s.gt_t.size())
    throw IoError("load_sequence: gt_rgb.txt and gt_t.txt disagree on frame count");
  s.length = static_cast<int>(s.gt_rgb.size());

  std::ifstream is(dir + "/challenges.txt");
  if (!is) throw IoError("load_sequence: missing " + dir + "/challenges.txt");
  std::string line;
  while (std::getline(is, line) && static_cast<int>(s.challenges.size()) < s.length) {
    ChallengeSet tags;
    for (const std::string& tok : split_ws(trim(line))) tags.insert(parse_challenge(tok));
    s.challenges.push_back(std::move(tags));
  }
  if (static_cast<int>(s.challenges.size()) != s.length)
    throw IoError("load_sequence: challenges.txt has fewer lines than ground truth");
  return s;
}

FramePair Sequence::frame(int i) const {
  if (i < 0 || i >= length)
    throw std::out_of_range("sequence frame index " + std::to_string(i));
  FramePair fp;
  fp.rgb = rgb_to_tensor<float>(read_ppm(dir + "/rgb/" + frame_name(i) + ".ppm"));
  fp.thermal = gray_to_tensor<float>(read_pgm(dir + "/t/" + frame_name(i) + ".pgm"));
  fp.gt_rgb = gt_rgb[i];
  fp.gt_t = gt_t[i];
  fp.challenges = challenges[i];
  return fp;
}

std::vector<int> challenge_subset(const Sequence& seq, ChallengeLabel c) {
  std::vector<int> out;
  for (int i = 0; i < seq.length; ++i)
    if (seq.challenges[i].count(c)) out.push_back(i);
  return out;
}

}  // namespace cat

#include "cat/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "cat/config.hpp"
#include "cat/tensor.hpp"

namespace cat {

namespace {

void check_lengths(size_t a, size_t b, const char* where) {
  if (a != b)
    throw std::invalid_argument(std::string(where) + ": " + std::to_string(a) +
                                " predictions vs " + std::to_string(b) + " ground-truth boxes");
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void save_results(const std::string& path, const TrackResult& r) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("save_results: cannot write " + path);
  for (size_t i = 0; i < r.boxes.size(); ++i) {
    const BBox& b = r.boxes[i];
    os << fmt(b.x) << "," << fmt(b.y) << "," << fmt(b.w) << "," << fmt(b.h) << ","
       << fmt(r.scores[i]) << "\n";
  }
}

TrackResult load_results(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("load_results: cannot open " + path);
  TrackResult r;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    std::vector<std::string> f = split_char(trim(line), ',');
    if (f.size() != 5)
      throw IoError("load_results: " + path + ":" + std::to_string(lineno) +
                    ": expected x,y,w,h,score");
    try {
      r.boxes.push_back(BBox{std::stod(f[0]), std::stod(f[1]), std::stod(f[2]), std::stod(f[3])});
      r.scores.push_back(std::stod(f[4]));
    } catch (const std::exception&) {
      throw IoError("load_results: " + path + ":" + std::to_string(lineno) +
                    ": malformed line '" + line + "'");
    }
  }
  return r;
}

std::vector<double> precision_curve(const std::vector<BBox>& pred,
                                    const std::vector<BBox>& gt) {
  check_lengths(pred.size(), gt.size(), "precision_curve");
  std::vector<double> curve(51, 0.0);
  if (pred.empty()) return curve;
  for (int tau = 0; tau <= 50; ++tau) {
    int n = 0;
    for (size_t i = 0; i < pred.size(); ++i)
      if (center_error(pred[i], gt[i]) <= tau) ++n;
    curve[tau] = double(n) / double(pred.size());
  }
  return curve;
}

double pr_at(const std::vector<double>& curve, int tau) {
  if (tau < 0 || tau >= static_cast<int>(curve.size()))
    throw std::invalid_argument("pr_at: threshold outside the curve");
  return curve[tau];
}

std::vector<double> success_curve(const std::vector<BBox>& pred,
                                  const std::vector<BBox>& gt) {
  check_lengths(pred.size(), gt.size(), "success_curve");
  std::vector<double> curve(21, 0.0);
  if (pred.empty()) return curve;
  for (int k = 0; k <= 20; ++k) {
    double t = k * 0.05;
    int n = 0;
    for (size_t i = 0; i < pred.size(); ++i)
      if (iou(pred[i], gt[i]) > t) ++n;
    curve[k] = double(n) / double(pred.size());
  }
  return curve;
}

double sr_auc(const std::vector<double>& curve) {
  if (curve.size() != 21) throw std::invalid_argument("sr_auc: expected 21 curve points");
  double s = 0;
  for (double v : curve) s += v;
  return s / 21.0;
}

MprMsr mpr_msr(const std::vector<BBox>& pred, const std::vector<BBox>& gt_rgb,
               const std::vector<BBox>& gt_t) {
  if (gt_rgb.empty() || gt_t.empty())
    throw std::invalid_argument("mpr_msr: both modalities' ground truth required");
  auto pr_r = precision_curve(pred, gt_rgb), pr_t = precision_curve(pred, gt_t);
  auto sr_r = success_curve(pred, gt_rgb), sr_t = success_curve(pred, gt_t);
  MprMsr out;
  out.mpr_curve.resize(51);
  for (int i = 0; i <= 50; ++i) out.mpr_curve[i] = std::min(pr_r[i], pr_t[i]);
  out.msr_curve.resize(21);
  for (int i = 0; i <= 20; ++i) out.msr_curve[i] = std::min(sr_r[i], sr_t[i]);
  out.mpr5 = out.mpr_curve[5];
  out.mpr20 = out.mpr_curve[20];
  out.msr = sr_auc(out.msr_curve);
  return out;
}

namespace {

// frames pooled across one variant's runs, optionally filtered by tag
struct Pool {
  std::vector<BBox> pred, gt_rgb, gt_t;
};

struct Row {
  std::string variant, subset;
  size_t frames;
  double pr5, pr20, sr, mpr20, msr;
};

void write_svg_curves(const std::string& path, const std::string& title,
                      const std::string& x_label, double x_max,
                      const std::vector<std::pair<std::string, std::vector<double>>>& curves) {
  const int W = 640, H = 480, ml = 60, mr = 20, mt = 40, mb = 50;
  const int pw = W - ml - mr, ph = H - mt - mb;
  static const char* colors[] = {"#c0392b", "#2980b9", "#27ae60", "#8e44ad",
                                 "#d35400", "#16a085", "#7f8c8d", "#2c3e50"};
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("write_report: cannot write " + path);
  os << "<svg xmlns='http://www.w3.org/2000/svg' width='" << W << "' height='" << H << "'>\n";
  os << "<rect width='100%' height='100%' fill='white'/>\n";
  os << "<text x='" << W / 2 << "' y='24' text-anchor='middle' font-size='16'>" << title
     << "</text>\n";
  // axes
  os << "<line x1='" << ml << "' y1='" << mt + ph << "' x2='" << ml + pw << "' y2='"
     << mt + ph << "' stroke='black'/>\n";
  os << "<line x1='" << ml << "' y1='" << mt << "' x2='" << ml << "' y2='" << mt + ph
     << "' stroke='black'/>\n";
  for (int i = 0; i <= 5; ++i) {
    double fx = ml + pw * i / 5.0;
    double fy = mt + ph - ph * i / 5.0;
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%g", x_max * i / 5.0);
    os << "<text x='" << fx << "' y='" << mt + ph + 18 << "' text-anchor='middle' font-size='11'>"
       << buf << "</text>\n";
    std::snprintf(buf, sizeof(buf), "%.1f", i / 5.0);
    os << "<text x='" << ml - 8 << "' y='" << fy + 4 << "' text-anchor='end' font-size='11'>"
       << buf << "</text>\n";
  }
  os << "<text x='" << ml + pw / 2 << "' y='" << H - 12
     << "' text-anchor='middle' font-size='12'>" << x_label << "</text>\n";
  int ci = 0;
  for (const auto& [label, curve] : curves) {
    const char* col = colors[ci % 8];
    os << "<polyline fill='none' stroke='" << col << "' stroke-width='2' points='";
    for (size_t i = 0; i < curve.size(); ++i) {
      double fx = ml + pw * double(i) / double(curve.size() - 1);
      double fy = mt + ph - ph * curve[i];
      os << fx << "," << fy << " ";
    }
    os << "'/>\n";
    os << "<text x='" << ml + 10 << "' y='" << mt + 16 + 16 * ci << "' font-size='12' fill='"
       << col << "'>" << label << "</text>\n";
    ++ci;
  }
  os << "</svg>\n";
}

}  // namespace

void write_report(const std::vector<EvalRun>& runs, const std::string& out_dir) {
  if (runs.empty()) throw std::invalid_argument("write_report: no runs");
  std::filesystem::create_directories(out_dir);

  // variant -> subset -> pooled frames, in first-appearance order
  std::vector<std::string> variants;
  std::map<std::string, std::map<std::string, Pool>> pools;
  std::vector<std::string> subsets{"ALL"};
  for (const EvalRun& r : runs) {
    check_lengths(r.pred.size(), r.gt_rgb.size(), "write_report");
    check_lengths(r.pred.size(), r.gt_t.size(), "write_report");
    if (!pools.count(r.variant)) variants.push_back(r.variant);
    auto& by_subset = pools[r.variant];
    for (size_t i = 0; i < r.pred.size(); ++i) {
      auto push = [&](const std::string& subset) {
        Pool& p = by_subset[subset];
        p.pred.push_back(r.pred[i]);
        p.gt_rgb.push_back(r.gt_rgb[i]);
        p.gt_t.push_back(r.gt_t[i]);
      };
      push("ALL");
      if (i < r.tags.size())
        for (ChallengeLabel c : kAllChallenges)
          if (r.tags[i].count(c)) {
            std::string name = to_string(c);
            if (std::find(subsets.begin(), subsets.end(), name) == subsets.end())
              subsets.push_back(name);
            push(name);
          }
    }
  }

  std::vector<Row> rows;
  for (const std::string& v : variants)
    for (const std::string& s : subsets) {
      auto it = pools[v].find(s);
      if (it == pools[v].end()) continue;
      const Pool& p = it->second;
      auto pr = precision_curve(p.pred, p.gt_rgb);
      auto sr = success_curve(p.pred, p.gt_rgb);
      auto mm = mpr_msr(p.pred, p.gt_rgb, p.gt_t);
      rows.push_back({v, s, p.pred.size(), pr[5], pr[20], sr_auc(sr), mm.mpr20, mm.msr});
    }

  std::ofstream csv(out_dir + "/report.csv", std::ios::binary);
  if (!csv) throw IoError("write_report: cannot write " + out_dir + "/report.csv");
  csv << "variant,subset,frames,pr5,pr20,sr,mpr20,msr\n";
  for (const Row& r : rows)
    csv << r.variant << "," << r.subset << "," << r.frames << "," << fmt(r.pr5) << ","
        << fmt(r.pr20) << "," << fmt(r.sr) << "," << fmt(r.mpr20) << "," << fmt(r.msr)
        << "\n";

  std::vector<std::pair<std::string, std::vector<double>>> pr_curves, sr_curves;
  for (const std::string& v : variants) {
    const Pool& p = pools[v]["ALL"];
    auto pr = precision_curve(p.pred, p.gt_rgb);
    auto sr = success_curve(p.pred, p.gt_rgb);
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%s [%.3f]", v.c_str(), pr[20]);
    pr_curves.emplace_back(buf, pr);
    std::snprintf(buf, sizeof(buf), "%s [%.3f]", v.c_str(), sr_auc(sr));
    sr_curves.emplace_back(buf, sr);
  }
  write_svg_curves(out_dir + "/pr.svg", "Precision plot", "center error threshold (px)",
                   50, pr_curves);
  write_svg_curves(out_dir + "/sr.svg", "Success plot", "IoU threshold", 1.0, sr_curves);
}

}  // namespace cat

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "cat/config.hpp"
#include "cat/metrics.hpp"
#include "cat/tensor.hpp"

using namespace cat;

namespace {

std::vector<BBox> random_boxes(int n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> pos(0, 100), size(5, 40);
  std::vector<BBox> out;
  for (int i = 0; i < n; ++i) out.push_back(BBox{pos(rng), pos(rng), size(rng), size(rng)});
  return out;
}

// independent naive re-implementations, structured differently on purpose
double naive_iou(const BBox& a, const BBox& b) {
  double x1 = std::max(a.x, b.x), y1 = std::max(a.y, b.y);
  double x2 = std::min(a.x + a.w, b.x + b.w), y2 = std::min(a.y + a.h, b.y + b.h);
  double inter = (x2 > x1 && y2 > y1) ? (x2 - x1) * (y2 - y1) : 0.0;
  double uni = a.w * a.h + b.w * b.h - inter;
  return uni > 0 ? inter / uni : 0.0;
}

double naive_pr(const std::vector<BBox>& p, const std::vector<BBox>& g, double tau) {
  int n = 0;
  for (size_t i = 0; i < p.size(); ++i) {
    double dx = (p[i].x + p[i].w / 2) - (g[i].x + g[i].w / 2);
    double dy = (p[i].y + p[i].h / 2) - (g[i].y + g[i].h / 2);
    if (std::sqrt(dx * dx + dy * dy) <= tau) ++n;
  }
  return double(n) / double(p.size());
}

double naive_success(const std::vector<BBox>& p, const std::vector<BBox>& g, double t) {
  int n = 0;
  for (size_t i = 0; i < p.size(); ++i)
    if (naive_iou(p[i], g[i]) > t) ++n;
  return double(n) / double(p.size());
}

}  // namespace

TEST_CASE("iou hand cases") {
  BBox a{0, 0, 4, 4};
  CHECK(iou(a, a) == 1.0);
  CHECK(iou(a, BBox{10, 10, 4, 4}) == 0.0);
  CHECK(iou(a, BBox{2, 2, 4, 4}) == doctest::Approx(4.0 / 28.0).epsilon(1e-12));
  CHECK(iou(BBox{0, 0, 0, 0}, BBox{0, 0, 0, 0}) == 0.0);  // zero union
}

TEST_CASE("precision curve hand cases") {
  std::vector<BBox> gt{{0, 0, 10, 10}, {0, 0, 10, 10}, {0, 0, 10, 10}};
  auto perfect = precision_curve(gt, gt);
  for (double v : perfect) CHECK(v == 1.0);

  // center errors 1, 3, 10
  std::vector<BBox> pred{{1, 0, 10, 10}, {3, 0, 10, 10}, {10, 0, 10, 10}};
  auto curve = precision_curve(pred, gt);
  CHECK(pr_at(curve, 5) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(pr_at(curve, 20) == 1.0);

  std::vector<BBox> far{{100, 0, 10, 10}, {100, 0, 10, 10}, {100, 0, 10, 10}};
  for (double v : precision_curve(far, gt)) CHECK(v == 0.0);

  CHECK_THROWS_AS(precision_curve(pred, std::vector<BBox>(2)), std::invalid_argument);
  CHECK_THROWS_AS(pr_at(curve, 51), std::invalid_argument);
}

TEST_CASE("success curve hand cases") {
  std::vector<BBox> gt{{0, 0, 10, 10}};
  auto perfect = success_curve(gt, gt);
  CHECK(sr_auc(perfect) == doctest::Approx(20.0 / 21.0).epsilon(1e-12));
  CHECK(perfect[20] == 0.0);  // strict inequality at t = 1

  std::vector<BBox> gt2{{0, 0, 10, 10}, {0, 0, 10, 10}};
  std::vector<BBox> pred2{{0, 0, 10, 10}, {50, 50, 10, 10}};  // IoUs 1.0 and 0.0
  CHECK(sr_auc(success_curve(pred2, gt2)) == doctest::Approx(20.0 * 0.5 / 21.0).epsilon(1e-12));

  std::vector<BBox> none{{50, 50, 10, 10}, {50, 50, 10, 10}};
  CHECK(sr_auc(success_curve(none, gt2)) == 0.0);
}

TEST_CASE("curves are monotone") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    auto gt = random_boxes(30, rng), pred = random_boxes(30, rng);
    auto pr = precision_curve(pred, gt);
    for (size_t i = 1; i < pr.size(); ++i) CHECK(pr[i] >= pr[i - 1]);
    auto sr = success_curve(pred, gt);
    for (size_t i = 1; i < sr.size(); ++i) CHECK(sr[i] <= sr[i - 1]);
  }
}

TEST_CASE("mpr/msr pointwise minimum") {
  std::mt19937_64 rng(4);
  auto gt = random_boxes(10, rng);
  auto pred = random_boxes(10, rng);
  auto mm = mpr_msr(pred, gt, gt);
  auto pr = precision_curve(pred, gt);
  for (int i = 0; i <= 50; ++i) CHECK(mm.mpr_curve[i] == pr[i]);

  // thermal gt shifted far away: min dominates to zero
  std::vector<BBox> far;
  for (const BBox& b : gt) far.push_back(BBox{b.x + 500, b.y + 500, b.w, b.h});
  auto mm2 = mpr_msr(pred, gt, far);
  for (double v : mm2.mpr_curve) CHECK(v == 0.0);
  CHECK(mm2.msr == 0.0);

  // hand-built 3-frame case against a brute-force oracle
  std::vector<BBox> g_rgb{{0, 0, 10, 10}, {5, 5, 10, 10}, {20, 0, 10, 10}};
  std::vector<BBox> g_t{{2, 0, 10, 10}, {5, 9, 10, 10}, {20, 0, 12, 12}};
  std::vector<BBox> p{{1, 0, 10, 10}, {5, 5, 10, 10}, {24, 0, 10, 10}};
  auto mm3 = mpr_msr(p, g_rgb, g_t);
  for (int tau = 0; tau <= 50; ++tau)
    CHECK(mm3.mpr_curve[tau] ==
          doctest::Approx(std::min(naive_pr(p, g_rgb, tau), naive_pr(p, g_t, tau)))
              .epsilon(1e-12));
  for (int k = 0; k <= 20; ++k)
    CHECK(mm3.msr_curve[k] ==
          doctest::Approx(std::min(naive_success(p, g_rgb, k * 0.05),
                                   naive_success(p, g_t, k * 0.05)))
              .epsilon(1e-12));

  CHECK_THROWS_AS(mpr_msr(p, g_rgb, {}), std::invalid_argument);
}

TEST_CASE("metrics agree with the naive oracle on 100 random cases") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    int n = 1 + int(rng() % 40);
    auto gt = random_boxes(n, rng), pred = random_boxes(n, rng);
    for (int i = 0; i < n; ++i)
      CHECK(iou(pred[i], gt[i]) == doctest::Approx(naive_iou(pred[i], gt[i])).epsilon(1e-12));
    auto pr = precision_curve(pred, gt);
    for (int tau = 0; tau <= 50; ++tau)
      CHECK(pr[tau] == doctest::Approx(naive_pr(pred, gt, tau)).epsilon(1e-12));
    auto sr = success_curve(pred, gt);
    for (int k = 0; k <= 20; ++k)
      CHECK(sr[k] == doctest::Approx(naive_success(pred, gt, k * 0.05)).epsilon(1e-12));
  }
}

TEST_CASE("results file round trip") {
  TrackResult r;
  r.boxes = {{1.5, 2.25, 30, 40.125}, {7, 8, 9, 10}};
  r.scores = {0.75, -1.25};
  save_results("metrics_results.txt", r);
  TrackResult r2 = load_results("metrics_results.txt");
  REQUIRE(r2.boxes.size() == 2);
  CHECK(r2.boxes[0].x == 1.5);
  CHECK(r2.boxes[0].h == 40.125);
  CHECK(r2.scores[1] == -1.25);
  CHECK_THROWS_AS(load_results("no_such_results.txt"), IoError);

  {
    std::ofstream os("metrics_bad.txt");
    os << "1,2,3,4\n";  // missing score
  }
  CHECK_THROWS_AS(load_results("metrics_bad.txt"), IoError);
}

TEST_CASE("report: perfect run, breakdown, csv round trip") {
  EvalRun run;
  run.variant = "full";
  run.sequence = "seq0";
  for (int i = 0; i < 10; ++i) {
    BBox b{double(i), double(i), 12, 12};
    run.pred.push_back(b);
    run.gt_rgb.push_back(b);
    run.gt_t.push_back(b);
    ChallengeSet tags;
    if (i < 4) tags.insert(ChallengeLabel::IV);
    run.tags.push_back(tags);
  }
  write_report({run}, "metrics_report");

  std::ifstream csv("metrics_report/report.csv");
  REQUIRE(csv.good());
  std::string header, line;
  std::getline(csv, header);
  CHECK(header == "variant,subset,frames,pr5,pr20,sr,mpr20,msr");
  std::vector<std::vector<std::string>> rows;
  while (std::getline(csv, line))
    if (!trim(line).empty()) rows.push_back(split_char(line, ','));
  REQUIRE(rows.size() == 2);  // ALL + IV
  CHECK(rows[0][1] == "ALL");
  CHECK(rows[0][2] == "10");
  CHECK(std::stod(rows[0][4]) == 1.0);  // pr20
  CHECK(std::stod(rows[0][5]) == doctest::Approx(20.0 / 21.0).epsilon(1e-12));
  CHECK(rows[1][1] == "IV");
  CHECK(rows[1][2] == "4");

  CHECK(std::filesystem::exists("metrics_report/pr.svg"));
  CHECK(std::filesystem::exists("metrics_report/sr.svg"));

  // untagged dataset: single ALL row
  run.tags.clear();
  write_report({run}, "metrics_report2");
  std::ifstream csv2("metrics_report2/report.csv");
  std::getline(csv2, header);
  int n = 0;
  while (std::getline(csv2, line))
    if (!trim(line).empty()) ++n;
  CHECK(n == 1);

  CHECK_THROWS_AS(write_report({}, "metrics_report3"), std::invalid_argument);
}

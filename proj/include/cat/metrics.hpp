#ifndef CAT_METRICS_HPP
#define CAT_METRICS_HPP

#include <string>
#include <vector>

#include "cat/bbox.hpp"
#include "cat/challenge.hpp"

namespace cat {

// Tracker output: one box and score per frame, "x,y,w,h,score" lines on disk.
struct TrackResult {
  std::vector<BBox> boxes;
  std::vector<double> scores;
};

void save_results(const std::string& path, const TrackResult& r);
TrackResult load_results(const std::string& path);

// Precision: fraction of frames whose center error is <= tau, for tau = 0..50
// px in steps of 1 (51 points).
std::vector<double> precision_curve(const std::vector<BBox>& pred,
                                    const std::vector<BBox>& gt);
double pr_at(const std::vector<double>& curve, int tau);

// Success: fraction of frames with IoU strictly greater than t, for t = 0..1
// in steps of 0.05 (21 points). SR is the mean of the 21 points.
std::vector<double> success_curve(const std::vector<BBox>& pred,
                                  const std::vector<BBox>& gt);
double sr_auc(const std::vector<double>& curve);

// Pointwise minimum over the two modalities' curves.
struct MprMsr {
  std::vector<double> mpr_curve;  // 51 points
  std::vector<double> msr_curve;  // 21 points
  double mpr5 = 0, mpr20 = 0, msr = 0;
};
MprMsr mpr_msr(const std::vector<BBox>& pred, const std::vector<BBox>& gt_rgb,
               const std::vector<BBox>& gt_t);

// One evaluated run: a variant tag, a sequence id, predictions and ground
// truth. `tags` may be empty (no per-challenge breakdown).
struct EvalRun {
  std::string variant;
  std::string sequence;
  std::vector<BBox> pred;
  std::vector<BBox> gt_rgb, gt_t;
  std::vector<ChallengeSet> tags;
};

// Writes report.csv plus pr.svg / sr.svg into out_dir. The CSV carries one
// row per (variant, subset): the pooled ALL subset and one per challenge tag.
void write_report(const std::vector<EvalRun>& runs, const std::string& out_dir);

}  // namespace cat

#endif

#ifndef CAT_TRACKER_HPP
#define CAT_TRACKER_HPP

#include <deque>
#include <random>

#include "cat/metrics.hpp"
#include "cat/model.hpp"
#include "cat/synth.hpp"
#include "cat/training.hpp"

namespace cat {

struct TrackerConfig {
  // first-frame adaptation
  int init_pos = 500;
  int init_neg = 5000;
  int init_epochs = 50;
  double init_lr_fc6 = 0.001;
  double init_lr_fc45 = 0.0005;
  // bounding-box regressor
  int regress_boxes = 1000;
  double regress_iou = 0.6;
  double ridge_lambda = 1.0;
  // candidate sampling
  int candidates = 256;
  double trans_sigma = 0.6;  // x mean(w,h)
  double scale_sigma = 0.5;  // in log-1.05 steps
  double score_threshold = 0.0;
  // online updates
  int update_pos = 20;
  int update_neg = 100;
  int longterm_interval = 10;
  int shortterm_frames = 20;  // pos frames used by a short-term update
  double update_lr_fc6 = 0.003;
  double update_lr_fc45 = 0.0015;
  int update_epochs = 15;
  int pos_capacity = 100;  // frames' worth, FIFO
  int neg_capacity = 20;
  int batch_pos = 32;
  int batch_neg = 96;
  // optimizer + mining
  double momentum = 0.9;
  double weight_decay = 0.0005;
  double grad_clip = 10.0;
  double pos_iou = 0.7;
  double neg_iou = 0.3;
  int mining_attempts = 400000;
  std::uint64_t seed = 0;
};

// Ridge-regularized linear refinement of (dx, dy, dlog w, dlog h) targets on
// pooled features. A degenerate (non-finite) solve leaves the regressor
// invalid, and apply() then returns the box unchanged.
struct BoxRegressor {
  std::vector<double> w;  // column-major [F+1][4]
  bool valid = false;
  int feat_dim = 0;

  void fit(const Tensor<float>& feats, const std::vector<BBox>& boxes, const BBox& gt,
           double lambda);
  BBox apply(const float* feat, const BBox& box) const;
};

// Online tracker over a frozen feature extractor: only fc4-6 and the box
// regressor adapt during a sequence. Sample stores hold pooled RoIAlign
// features, so updates never re-run the convolutional stack.
class Tracker {
 public:
  struct Out {
    BBox box;
    double score;
  };

  Tracker(CatModel<float>& model, TrackerConfig cfg = {}, VariantFlags flags = {});

  void init(const FramePair& frame, const BBox& gt);
  Out step(const FramePair& frame);

  double fps() const;
  const BBox& last() const { return last_; }
  int pos_frames() const { return static_cast<int>(pos_store_.size()); }
  int neg_frames() const { return static_cast<int>(neg_store_.size()); }
  bool regressor_valid() const { return reg_.valid; }
  int updates_run() const { return updates_run_; }

 private:
  void train_fc(const std::vector<const Tensor<float>*>& pos,
                const std::vector<const Tensor<float>*>& neg, int epochs, double lr6,
                double lr45);

  CatModel<float>& model_;
  TrackerConfig cfg_;
  VariantFlags flags_;
  std::mt19937_64 rng_;
  BBox last_;
  double trans_boost_ = 1.0;  // search widening under consecutive failures
  int frame_idx_ = 0;
  int updates_run_ = 0;
  std::deque<Tensor<float>> pos_store_, neg_store_;  // [n,F] rows per frame
  BoxRegressor reg_;
  int feat_dim_ = 0;
  double seconds_ = 0;
  int frames_tracked_ = 0;
};

// Full sequence: init on frame 0 with its ground truth, then step through the
// rest. Returns one box + score per frame (frame 0 scores 1).
TrackResult track_sequence(CatModel<float>& model, const Sequence& seq,
                           const TrackerConfig& cfg = {}, const VariantFlags& flags = {},
                           double* fps_out = nullptr);

}  // namespace cat

#endif

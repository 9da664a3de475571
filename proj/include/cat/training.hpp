#ifndef CAT_TRAINING_HPP
#define CAT_TRAINING_HPP

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "cat/model.hpp"
#include "cat/synth.hpp"

namespace cat {

struct MiningError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  double lr_branch = 0.001;
  double lr_fc = 0.0005;
  double lr_backbone = 0.0001;
  double lr_agg = 0.0005;
  double momentum = 0.9;
  double weight_decay = 0.0005;
  double grad_clip = 10.0;
  // minibatch iterations per stage (per challenge in stages I and II), scaled
  // by epoch_scale for desk runs
  int iters = 1000;
  double epoch_scale = 1.0;
  int frames_per_batch = 8;
  int pos_per_frame = 32;
  int neg_per_frame = 96;
  double pos_iou = 0.7;  // exclusive lower bound for positives
  double neg_iou = 0.3;  // exclusive upper bound for negatives
  int mining_attempts = 10000;
  double embed_weight = 0.1;  // instance embedding loss weight
  std::uint64_t seed = 0;
  std::string log_csv;  // per-iteration CSV log, appended when nonempty

  int scaled_iters() const {
    return std::max(1, static_cast<int>(std::lround(iters * epoch_scale)));
  }
};

struct LabeledBox {
  BBox box;
  int label;  // 1 positive, 0 negative
};

// Gaussian-jittered boxes around gt: n_pos with IoU > pos_iou, n_neg with
// IoU < neg_iou, clipped to a W x H frame. Throws MiningError when the
// attempt cap runs out. Positives come first in the returned list.
std::vector<LabeledBox> mine_boxes(const BBox& gt, int W, int H, int n_pos, int n_neg,
                                   double pos_iou, double neg_iou, int attempts,
                                   std::mt19937_64& rng);
std::vector<LabeledBox> mine_samples(const FramePair& frame, const BBox& gt, int n_pos,
                                     int n_neg, const TrainConfig& cfg,
                                     std::mt19937_64& rng);

struct StageStats {
  std::vector<double> losses;  // one entry per iteration
  std::vector<double> accs;    // minibatch classification accuracy
};

// Stage I: challenge branches one-by-one (direct residual wiring) + fc;
// backbone frozen. Stage II: guidance modules on the IV/TC subsets. Stage
// III: aggregation + fc, backbone fine-tuned; branches and guidance frozen.
// The model must have one fc6 head per sequence.
StageStats train_stage1(const std::vector<Sequence>& seqs, CatModel<float>& model,
                        const TrainConfig& cfg);
StageStats train_stage2(const std::vector<Sequence>& seqs, CatModel<float>& model,
                        const TrainConfig& cfg);
StageStats train_stage3(const std::vector<Sequence>& seqs, CatModel<float>& model,
                        const TrainConfig& cfg);

// Input patch pair for one frame: 3x search region around the target, both
// modalities resampled to the network input side (thermal replicated to 3
// channels), plus the ground-truth box in patch coordinates.
struct PatchPair {
  Tensor<float> rgb, thermal;  // [1,3,side,side]
  BBox region;
  BBox gt_patch;
};
PatchPair make_patch(const FramePair& frame, const BBox& gt, int side);

}  // namespace cat

#endif

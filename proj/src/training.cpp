#include "cat/training.hpp"

#include <filesystem>
#include <fstream>

#include "cat/patch.hpp"
#include "cat/sgd.hpp"

namespace cat {

PatchPair make_patch(const FramePair& frame, const BBox& gt, int side) {
  PatchPair pp;
  pp.region = search_region(gt);
  Tensor<float> rgb = crop_resize(frame.rgb, pp.region, side);
  Tensor<float> th = replicate3(crop_resize(frame.thermal, pp.region, side));
  pp.rgb = Tensor<float>({1, 3, side, side}, std::move(rgb.data));
  pp.thermal = Tensor<float>({1, 3, side, side}, std::move(th.data));
  pp.gt_patch = image_to_patch(gt, pp.region, side);
  return pp;
}

std::vector<LabeledBox> mine_boxes(const BBox& gt, int W, int H, int n_pos, int n_neg,
                                   double pos_iou, double neg_iou, int max_attempts,
                                   std::mt19937_64& rng) {
  if (gt.area() <= 0) throw std::invalid_argument("mine_boxes: gt has no area");
  const double m = 0.5 * (gt.w + gt.h);
  std::normal_distribution<double> n01(0.0, 1.0);
  std::uniform_real_distribution<double> u01(0.0, 1.0);

  std::vector<LabeledBox> out;
  int attempts = 0;
  auto spend = [&] {
    if (++attempts > max_attempts)
      throw MiningError("mine_boxes: attempt cap exceeded (gt " + std::to_string(gt.w) +
                        "x" + std::to_string(gt.h) + " near the frame border?)");
  };

  int got = 0;
  while (got < n_pos) {
    spend();
    BBox b = gt;
    double s = std::pow(1.05, n01(rng));
    b.w = gt.w * s;
    b.h = gt.h * s;
    b.x = gt.cx() + 0.1 * m * n01(rng) - b.w / 2;
    b.y = gt.cy() + 0.1 * m * n01(rng) - b.h / 2;
    b = b.clipped(W, H, 2.0);
    if (iou(b, gt) > pos_iou) {
      out.push_back({b, 1});
      ++got;
    }
  }

  got = 0;
  while (got < n_neg) {
    spend();
    BBox b = gt;
    double s = std::pow(1.2, n01(rng));
    b.w = gt.w * s;
    b.h = gt.h * s;
    if (attempts % 2 == 0) {
      b.x = gt.cx() + m * n01(rng) - b.w / 2;
      b.y = gt.cy() + m * n01(rng) - b.h / 2;
    } else {
      b.x = u01(rng) * (W - b.w);
      b.y = u01(rng) * (H - b.h);
    }
    b = b.clipped(W, H, 2.0);
    if (iou(b, gt) < neg_iou) {
      out.push_back({b, 0});
      ++got;
    }
  }
  return out;
}

std::vector<LabeledBox> mine_samples(const FramePair& frame, const BBox& gt, int n_pos,
                                     int n_neg, const TrainConfig& cfg,
                                     std::mt19937_64& rng) {
  return mine_boxes(gt, frame.rgb.dim(2), frame.rgb.dim(1), n_pos, n_neg, cfg.pos_iou,
                    cfg.neg_iou, cfg.mining_attempts, rng);
}

namespace {

struct FrameRef {
  int seq, frame;
};

std::vector<FrameRef> pool_all(const std::vector<Sequence>& seqs) {
  std::vector<FrameRef> out;
  for (int s = 0; s < static_cast<int>(seqs.size()); ++s)
    for (int f = 0; f < seqs[s].length; ++f) out.push_back({s, f});
  return out;
}

std::vector<FrameRef> pool_challenge(const std::vector<Sequence>& seqs, ChallengeLabel c) {
  std::vector<FrameRef> out;
  for (int s = 0; s < static_cast<int>(seqs.size()); ++s)
    for (int f : challenge_subset(seqs[s], c)) out.push_back({s, f});
  return out;
}

// first `rows` rows of a row-major [B,F] node
int take_rows(Graph<float>& g, int x, int rows) {
  const int B = g.val(x).dim(0), F = g.val(x).dim(1);
  int flat = reshape(g, x, {1, B * F});
  return reshape(g, slice_cols(g, flat, 0, rows * F), {rows, F});
}

struct IterOut {
  double loss, acc;
};

IterOut run_iteration(const std::vector<Sequence>& seqs, CatModel<float>& model,
                      const std::vector<FrameRef>& pool, Wire wire, ChallengeLabel single,
                      const TrainConfig& cfg, std::vector<ParamGroup<float>>& groups,
                      std::mt19937_64& rng) {
  const int side = model.cfg.input_side;
  const int D = static_cast<int>(model.fc6.size());
  Graph<float> g;
  std::vector<int> frame_losses;
  int correct = 0, total = 0;

  for (int bf = 0; bf < cfg.frames_per_batch; ++bf) {
    const FrameRef ref = pool[rng() % pool.size()];
    FramePair fp = seqs[ref.seq].frame(ref.frame);
    const BBox gt = fp.gt_rgb;
    auto samples = mine_samples(fp, gt, cfg.pos_per_frame, cfg.neg_per_frame, cfg, rng);
    PatchPair pp = make_patch(fp, gt, side);

    std::vector<BBox> boxes;
    std::vector<int> labels;
    int n_pos = 0;
    for (const LabeledBox& s : samples) {
      boxes.push_back(image_to_patch(s.box, pp.region, side).clipped(side, side, 2.0));
      labels.push_back(s.label);
      n_pos += s.label;
    }

    int rgb = g.leaf(std::move(pp.rgb));
    int t = g.leaf(std::move(pp.thermal));
    ForwardOpts<float> opts;
    opts.wire = wire;
    opts.single = single;
    auto feats = forward_features(g, model, rgb, t, opts);
    auto out = classify(g, model, feats, boxes, ref.seq, true, &rng);
    int loss = softmax_ce(g, out.scores, labels);

    if (D > 1 && cfg.embed_weight > 0 && n_pos > 0) {
      // which sequence do these positives belong to, across all domain heads
      int fpos = take_rows(g, out.fc5_out, n_pos);
      std::vector<int> cols;
      for (int d = 0; d < D; ++d) {
        int sc = linear(g, fpos, g.param(*model.fc6[d].w), g.param(*model.fc6[d].b));
        cols.push_back(slice_cols(g, sc, 1, 1));
      }
      int embed = softmax_ce(g, concat(g, cols, 1), std::vector<int>(n_pos, ref.seq));
      loss = add(g, loss, scale(g, embed, float(cfg.embed_weight)));
    }
    frame_losses.push_back(loss);

    const Tensor<float>& sc = g.val(out.scores);
    for (size_t i = 0; i < labels.size(); ++i) {
      int p = sc.data[2 * i + 1] > sc.data[2 * i] ? 1 : 0;
      if (p == labels[i]) ++correct;
      ++total;
    }
  }

  int lsum = frame_losses[0];
  for (size_t i = 1; i < frame_losses.size(); ++i) lsum = add(g, lsum, frame_losses[i]);
  int lmean = scale(g, lsum, 1.0f / float(frame_losses.size()));
  g.backward(lmean);
  g.accumulate_param_grads();

  SgdConfig sgd;
  sgd.momentum = cfg.momentum;
  sgd.weight_decay = cfg.weight_decay;
  sgd.grad_clip = cfg.grad_clip;
  sgd_step(groups, sgd);
  model.zero_grads();
  return {double(g.val(lmean).data[0]), double(correct) / double(total)};
}

class CsvLog {
 public:
  explicit CsvLog(const std::string& path) {
    if (path.empty()) return;
    bool fresh = !std::filesystem::exists(path);
    os_.open(path, std::ios::app);
    if (!os_) throw IoError("training log: cannot write " + path);
    if (fresh) os_ << "stage,challenge,iter,loss,acc\n";
  }
  void row(int stage, const std::string& challenge, int iter, const IterOut& o) {
    if (os_.is_open())
      os_ << stage << "," << challenge << "," << iter << "," << o.loss << "," << o.acc
          << "\n";
  }

 private:
  std::ofstream os_;
};

void check_domains(const std::vector<Sequence>& seqs, const CatModel<float>& model,
                   const char* where) {
  if (seqs.empty()) throw std::invalid_argument(std::string(where) + ": no sequences");
  if (model.fc6.size() != seqs.size())
    throw std::invalid_argument(std::string(where) + ": model has " +
                                std::to_string(model.fc6.size()) + " domain heads for " +
                                std::to_string(seqs.size()) + " sequences");
}

std::vector<Param<float>*> fc_params(CatModel<float>& m) {
  auto out = m.group("fc");
  for (Param<float>* p : m.group("fc6")) out.push_back(p);
  return out;
}

}  // namespace

StageStats train_stage1(const std::vector<Sequence>& seqs, CatModel<float>& model,
                        const TrainConfig& cfg) {
  check_domains(seqs, model, "train_stage1");
  std::mt19937_64 rng(cfg.seed ^ 0xa1a1a1a1ull);
  CsvLog log(cfg.log_csv);
  StageStats stats;

  model.set_all_trainable(false);
  model.set_trainable("fc", true);
  model.set_trainable("fc6", true);
  for (ChallengeLabel c : kAllChallenges) {
    std::string name = to_string(c);
    auto pool = pool_challenge(seqs, c);
    if (pool.empty())
      throw std::runtime_error("train_stage1: empty training subset for challenge " + name);
    model.set_trainable("branch." + name, true);
    std::vector<ParamGroup<float>> groups{
        {model.group("branch." + name), cfg.lr_branch}, {fc_params(model), cfg.lr_fc}};
    for (int it = 0; it < cfg.scaled_iters(); ++it) {
      IterOut o = run_iteration(seqs, model, pool, Wire::single_direct, c, cfg, groups, rng);
      log.row(1, name, it, o);
      stats.losses.push_back(o.loss);
      stats.accs.push_back(o.acc);
    }
    model.set_trainable("branch." + name, false);
  }
  return stats;
}

StageStats train_stage2(const std::vector<Sequence>& seqs, CatModel<float>& model,
                        const TrainConfig& cfg) {
  check_domains(seqs, model, "train_stage2");
  std::mt19937_64 rng(cfg.seed ^ 0xb2b2b2b2ull);
  CsvLog log(cfg.log_csv);
  StageStats stats;

  model.set_all_trainable(false);
  model.set_trainable("guidance", true);
  std::vector<ParamGroup<float>> groups{{model.group("guidance"), cfg.lr_branch}};
  for (ChallengeLabel c : kSpecificChallenges) {
    std::string name = to_string(c);
    auto pool = pool_challenge(seqs, c);
    if (pool.empty())
      throw std::runtime_error("train_stage2: empty training subset for challenge " + name);
    for (int it = 0; it < cfg.scaled_iters(); ++it) {
      IterOut o = run_iteration(seqs, model, pool, Wire::single_guided, c, cfg, groups, rng);
      log.row(2, name, it, o);
      stats.losses.push_back(o.loss);
      stats.accs.push_back(o.acc);
    }
  }
  return stats;
}

StageStats train_stage3(const std::vector<Sequence>& seqs, CatModel<float>& model,
                        const TrainConfig& cfg) {
  check_domains(seqs, model, "train_stage3");
  std::mt19937_64 rng(cfg.seed ^ 0xc3c3c3c3ull);
  CsvLog log(cfg.log_csv);
  StageStats stats;

  model.set_all_trainable(false);
  model.set_trainable("agg", true);
  model.set_trainable("fc", true);
  model.set_trainable("fc6", true);
  model.set_trainable("backbone", true);
  std::vector<ParamGroup<float>> groups{{model.group("agg"), cfg.lr_agg},
                                        {fc_params(model), cfg.lr_fc},
                                        {model.group("backbone"), cfg.lr_backbone}};
  auto pool = pool_all(seqs);
  for (int it = 0; it < cfg.scaled_iters(); ++it) {
    IterOut o = run_iteration(seqs, model, pool, Wire::full_net, ChallengeLabel::FM, cfg,
                              groups, rng);
    log.row(3, "ALL", it, o);
    stats.losses.push_back(o.loss);
    stats.accs.push_back(o.acc);
  }
  return stats;
}

}  // namespace cat

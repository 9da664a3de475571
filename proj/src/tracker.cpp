#include "cat/tracker.hpp"

#include <Eigen/Dense>

#include <chrono>
#include <iostream>

#include "cat/patch.hpp"
#include "cat/sgd.hpp"

namespace cat {

namespace {

using Clock = std::chrono::steady_clock;

double elapsed(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

Tensor<float> rows_of(const Tensor<float>& flat, const std::vector<int>& idx) {
  const int F = flat.dim(1);
  Tensor<float> out({static_cast<int>(idx.size()), F});
  for (size_t i = 0; i < idx.size(); ++i)
    std::copy_n(flat.data.begin() + std::int64_t(idx[i]) * F, F,
                out.data.begin() + std::int64_t(i) * F);
  return out;
}

}  // namespace

Tracker::Tracker(CatModel<float>& model, TrackerConfig cfg, VariantFlags flags)
    : model_(model), cfg_(cfg), flags_(flags), rng_(cfg.seed ^ 0x7f4a7c15ull) {}

void Tracker::init(const FramePair& frame, const BBox& gt) {
  auto t0 = Clock::now();
  if (gt.area() <= 0) throw std::invalid_argument("Tracker::init: gt has no area");

  model_.reset_single_domain();
  model_.set_all_trainable(false);
  model_.set_trainable("fc", true);
  model_.fc6[0].w->trainable = true;
  model_.fc6[0].b->trainable = true;

  last_ = gt;
  frame_idx_ = 0;
  updates_run_ = 0;
  pos_store_.clear();
  neg_store_.clear();

  const int side = model_.cfg.input_side;
  PatchPair pp = make_patch(frame, gt, side);
  Graph<float> g;
  int rgb = g.leaf(std::move(pp.rgb)), t = g.leaf(std::move(pp.thermal));
  ForwardOpts<float> opts;
  opts.flags = flags_;
  auto feats = forward_features(g, model_, rgb, t, opts);

  auto samples = mine_boxes(pp.gt_patch, side, side, cfg_.init_pos, cfg_.init_neg,
                            cfg_.pos_iou, cfg_.neg_iou, cfg_.mining_attempts, rng_);
  std::vector<BBox> boxes;
  for (const LabeledBox& s : samples) boxes.push_back(s.box);
  int flat = pool_and_flatten(g, model_, feats, boxes);
  const Tensor<float>& fv = g.val(flat);
  feat_dim_ = fv.dim(1);

  std::vector<int> pos_idx, neg_idx;
  for (int i = 0; i < static_cast<int>(samples.size()); ++i)
    (samples[i].label ? pos_idx : neg_idx).push_back(i);
  pos_store_.push_back(rows_of(fv, pos_idx));
  neg_store_.push_back(rows_of(fv, neg_idx));

  train_fc({&pos_store_.back()}, {&neg_store_.back()}, cfg_.init_epochs, cfg_.init_lr_fc6,
           cfg_.init_lr_fc45);

  // box regressor on well-overlapping samples from the shared feature map
  auto rsamples = mine_boxes(pp.gt_patch, side, side, cfg_.regress_boxes, 0,
                             cfg_.regress_iou, cfg_.neg_iou, cfg_.mining_attempts, rng_);
  std::vector<BBox> rboxes;
  for (const LabeledBox& s : rsamples) rboxes.push_back(s.box);
  int rflat = pool_and_flatten(g, model_, feats, rboxes);
  reg_.fit(g.val(rflat), rboxes, pp.gt_patch, cfg_.ridge_lambda);

  seconds_ = elapsed(t0);
  frames_tracked_ = 1;
}

Tracker::Out Tracker::step(const FramePair& frame) {
  auto t0 = Clock::now();
  const int side = model_.cfg.input_side;
  const int W = frame.rgb.dim(2), H = frame.rgb.dim(1);

  PatchPair pp = make_patch(frame, last_, side);
  Graph<float> g;
  int rgb = g.leaf(std::move(pp.rgb)), t = g.leaf(std::move(pp.thermal));
  ForwardOpts<float> opts;
  opts.flags = flags_;
  auto feats = forward_features(g, model_, rgb, t, opts);

  // Gaussian candidates around the previous result, in image coordinates;
  // consecutive failures widen the search radius until the target is re-found
  std::normal_distribution<double> n01(0.0, 1.0);
  const double m = 0.5 * (last_.w + last_.h);
  const double trans = cfg_.trans_sigma * trans_boost_;
  std::vector<BBox> patch_boxes;
  for (int i = 0; i < cfg_.candidates; ++i) {
    double s = std::pow(1.05, cfg_.scale_sigma * n01(rng_));
    BBox b;
    b.w = last_.w * s;
    b.h = last_.h * s;
    b.x = last_.cx() + trans * m * n01(rng_) - b.w / 2;
    b.y = last_.cy() + trans * m * n01(rng_) - b.h / 2;
    b = b.clipped(W, H, 4.0);
    patch_boxes.push_back(image_to_patch(b, pp.region, side).clipped(side, side, 2.0));
  }

  int flat = pool_and_flatten(g, model_, feats, patch_boxes);
  auto out = classify_features(g, model_, flat, 0);
  const Tensor<float>& sc = g.val(out.scores);

  std::vector<double> margins(cfg_.candidates);
  int best = 0;
  for (int i = 0; i < cfg_.candidates; ++i) {
    margins[i] = double(sc.data[2 * i + 1]) - double(sc.data[2 * i]);
    if (margins[i] > margins[best]) best = i;  // strict: lowest index wins ties
  }
  std::vector<double> sorted = margins;
  std::partial_sort(sorted.begin(), sorted.begin() + std::min(5, cfg_.candidates),
                    sorted.end(), std::greater<double>());
  double score = 0;
  int top = std::min(5, cfg_.candidates);
  for (int i = 0; i < top; ++i) score += sorted[i];
  score /= top;
  bool success = score > cfg_.score_threshold;

  // the best candidate is always the new estimate; the regressor only refines
  // confident results, and consecutive failures widen the next search
  BBox result_patch = patch_boxes[best];
  if (success) {
    if (reg_.valid)
      result_patch =
          reg_.apply(g.val(flat).data.data() + std::int64_t(best) * feat_dim_, result_patch)
              .clipped(side, side, 2.0);
    trans_boost_ = 1.0;
  } else {
    trans_boost_ = std::min(1.5, trans_boost_ * 1.1);
  }
  BBox result = patch_to_image(result_patch, pp.region, side).clipped(W, H, 4.0);
  last_ = result;
  ++frame_idx_;

  if (success) {
    try {
      auto samples =
          mine_boxes(result_patch, side, side, cfg_.update_pos, cfg_.update_neg,
                     cfg_.pos_iou, cfg_.neg_iou, cfg_.mining_attempts, rng_);
      std::vector<BBox> boxes;
      for (const LabeledBox& s : samples) boxes.push_back(s.box);
      int uflat = pool_and_flatten(g, model_, feats, boxes);
      const Tensor<float>& uv = g.val(uflat);
      std::vector<int> pos_idx, neg_idx;
      for (int i = 0; i < static_cast<int>(samples.size()); ++i)
        (samples[i].label ? pos_idx : neg_idx).push_back(i);
      pos_store_.push_back(rows_of(uv, pos_idx));
      neg_store_.push_back(rows_of(uv, neg_idx));
      while (static_cast<int>(pos_store_.size()) > cfg_.pos_capacity) pos_store_.pop_front();
      while (static_cast<int>(neg_store_.size()) > cfg_.neg_capacity) neg_store_.pop_front();
    } catch (const MiningError&) {
      // result pinned against the patch border; skip sample collection
    }
  }

  std::vector<const Tensor<float>*> pos_rows, neg_rows;
  for (const auto& t2 : neg_store_) neg_rows.push_back(&t2);
  if (!success) {
    // short-term update: most recent positive frames only
    int from = std::max(0, static_cast<int>(pos_store_.size()) - cfg_.shortterm_frames);
    for (size_t i = from; i < pos_store_.size(); ++i) pos_rows.push_back(&pos_store_[i]);
    train_fc(pos_rows, neg_rows, cfg_.update_epochs, cfg_.update_lr_fc6, cfg_.update_lr_fc45);
    ++updates_run_;
  } else if (frame_idx_ % cfg_.longterm_interval == 0) {
    for (const auto& t2 : pos_store_) pos_rows.push_back(&t2);
    train_fc(pos_rows, neg_rows, cfg_.update_epochs, cfg_.update_lr_fc6, cfg_.update_lr_fc45);
    ++updates_run_;
  }

  seconds_ += elapsed(t0);
  ++frames_tracked_;
  return {result, score};
}

void Tracker::train_fc(const std::vector<const Tensor<float>*>& pos,
                       const std::vector<const Tensor<float>*>& neg, int epochs,
                       double lr6, double lr45) {
  std::int64_t n_pos = 0, n_neg = 0;
  for (const auto* t : pos) n_pos += t->dim(0);
  for (const auto* t : neg) n_neg += t->dim(0);
  if (n_pos == 0 || n_neg == 0) {
    std::cerr << "tracker: empty sample store, skipping update\n";
    return;
  }

  auto pick = [&](const std::vector<const Tensor<float>*>& src, std::int64_t total,
                  int count, float* dst) {
    const int F = feat_dim_;
    for (int i = 0; i < count; ++i) {
      std::int64_t r = std::int64_t(rng_() % std::uint64_t(total));
      for (const auto* t : src) {
        if (r < t->dim(0)) {
          std::copy_n(t->data.begin() + r * F, F, dst + std::int64_t(i) * F);
          break;
        }
        r -= t->dim(0);
      }
    }
  };

  SgdConfig sgd;
  sgd.momentum = cfg_.momentum;
  sgd.weight_decay = cfg_.weight_decay;
  sgd.grad_clip = cfg_.grad_clip;
  std::vector<ParamGroup<float>> groups{
      {{model_.fc6[0].w, model_.fc6[0].b}, lr6},
      {{model_.fc4.w, model_.fc4.b, model_.fc5.w, model_.fc5.b}, lr45}};

  const int bp = cfg_.batch_pos, bn = cfg_.batch_neg;
  for (int e = 0; e < epochs; ++e) {
    Tensor<float> x({bp + bn, feat_dim_});
    pick(pos, n_pos, bp, x.data.data());
    pick(neg, n_neg, bn, x.data.data() + std::int64_t(bp) * feat_dim_);
    std::vector<int> labels(bp + bn, 0);
    std::fill(labels.begin(), labels.begin() + bp, 1);

    Graph<float> g;
    int xi = g.leaf(std::move(x));
    auto out = classify_features(g, model_, xi, 0, true, &rng_);
    int loss = softmax_ce(g, out.scores, labels);
    g.backward(loss);
    g.accumulate_param_grads();
    sgd_step(groups, sgd);
    model_.zero_grads();
  }
}

void BoxRegressor::fit(const Tensor<float>& feats, const std::vector<BBox>& boxes,
                       const BBox& gt, double lambda) {
  const int n = feats.dim(0), F = feats.dim(1);
  feat_dim = F;
  Eigen::MatrixXd X(n, F + 1);
  Eigen::MatrixXd Y(n, 4);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < F; ++j) X(i, j) = feats.data[std::int64_t(i) * F + j];
    X(i, F) = 1.0;
    const BBox& b = boxes[i];
    Y(i, 0) = (gt.cx() - b.cx()) / b.w;
    Y(i, 1) = (gt.cy() - b.cy()) / b.h;
    Y(i, 2) = std::log(gt.w / b.w);
    Y(i, 3) = std::log(gt.h / b.h);
  }
  Eigen::MatrixXd A = X.transpose() * X;
  A.diagonal().array() += lambda;
  Eigen::MatrixXd W = A.ldlt().solve(X.transpose() * Y);
  if (!W.allFinite()) {
    valid = false;  // degenerate system: fall back to identity refinement
    return;
  }
  w.assign(W.data(), W.data() + W.size());  // column-major [F+1][4]
  valid = true;
}

BBox BoxRegressor::apply(const float* feat, const BBox& box) const {
  if (!valid) return box;
  const int F = feat_dim;
  double d[4];
  for (int k = 0; k < 4; ++k) {
    double acc = w[std::size_t(k) * (F + 1) + F];  // bias
    for (int j = 0; j < F; ++j) acc += w[std::size_t(k) * (F + 1) + j] * feat[j];
    d[k] = acc;
  }
  BBox out;
  out.w = std::max(2.0, box.w * std::exp(std::clamp(d[2], -1.0, 1.0)));
  out.h = std::max(2.0, box.h * std::exp(std::clamp(d[3], -1.0, 1.0)));
  out.x = box.cx() + std::clamp(d[0], -2.0, 2.0) * box.w - out.w / 2;
  out.y = box.cy() + std::clamp(d[1], -2.0, 2.0) * box.h - out.h / 2;
  return out;
}

double Tracker::fps() const {
  return seconds_ > 0 ? frames_tracked_ / seconds_ : 0.0;
}

TrackResult track_sequence(CatModel<float>& model, const Sequence& seq,
                           const TrackerConfig& cfg, const VariantFlags& flags,
                           double* fps_out) {
  if (seq.length < 1) throw std::invalid_argument("track_sequence: empty sequence");
  Tracker tr(model, cfg, flags);
  FramePair first = seq.frame(0);
  tr.init(first, first.gt_rgb);
  TrackResult out;
  out.boxes.push_back(first.gt_rgb);
  out.scores.push_back(1.0);
  for (int f = 1; f < seq.length; ++f) {
    auto [box, score] = tr.step(seq.frame(f));
    out.boxes.push_back(box);
    out.scores.push_back(score);
  }
  if (fps_out) *fps_out = tr.fps();
  return out;
}

}  // namespace cat

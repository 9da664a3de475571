#ifndef CAT_SGD_HPP
#define CAT_SGD_HPP

#include <cmath>
#include <limits>
#include <vector>

#include "cat/graph.hpp"
#include "cat/tensor.hpp"

namespace cat {

struct SgdConfig {
  double lr = 0.001;
  double momentum = 0.9;
  double weight_decay = 0.0005;
  double grad_clip = std::numeric_limits<double>::infinity();  // global L2 ceiling

  void validate() const {
    if (lr <= 0) throw std::invalid_argument("SgdConfig: lr must be positive");
    if (momentum < 0 || momentum >= 1)
      throw std::invalid_argument("SgdConfig: momentum must be in [0,1)");
    if (weight_decay < 0)
      throw std::invalid_argument("SgdConfig: weight_decay must be non-negative");
    if (grad_clip <= 0)
      throw std::invalid_argument("SgdConfig: grad_clip must be positive");
  }
};

// Parameters updated together with one learning rate; clipping is global
// across every group passed to sgd_step.
template <typename S>
struct ParamGroup {
  std::vector<Param<S>*> params;
  double lr;
};

// Global-norm clip first, then momentum update:
//   v <- momentum*v - lr*(g + weight_decay*p);  p <- p + v
template <typename S>
void sgd_step(std::vector<ParamGroup<S>>& groups, const SgdConfig& cfg) {
  cfg.validate();
  double sq = 0;
  for (auto& grp : groups)
    for (Param<S>* p : grp.params) {
      double n = 0;
      for (S v : p->grad.data) n += double(v) * double(v);
      if (!std::isfinite(n)) throw NumericError("sgd_step: non-finite gradient in " + p->name);
      sq += n;
    }
  double norm = std::sqrt(sq);
  S clip_scale = S(1);
  if (std::isfinite(cfg.grad_clip) && norm > cfg.grad_clip)
    clip_scale = S(cfg.grad_clip / norm);

  for (auto& grp : groups)
    for (Param<S>* p : grp.params) {
      auto v = p->momentum.array();
      auto grad = p->grad.array();
      auto val = p->value.array();
      v = S(cfg.momentum) * v -
          S(grp.lr) * (grad * clip_scale + S(cfg.weight_decay) * val);
      val += v;
    }
}

// Single-rate convenience form matching the optimizer contract tests.
template <typename S>
void sgd_step(std::vector<Param<S>*> params, const SgdConfig& cfg) {
  std::vector<ParamGroup<S>> groups{{std::move(params), cfg.lr}};
  sgd_step(groups, cfg);
}

}  // namespace cat

#endif

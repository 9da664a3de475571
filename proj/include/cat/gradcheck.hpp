#ifndef CAT_GRADCHECK_HPP
#define CAT_GRADCHECK_HPP

#include <functional>
#include <vector>

#include "cat/graph.hpp"
#include "cat/ops.hpp"

namespace cat {

struct GradCheckReport {
  double max_rel_err = 0;
  std::int64_t checked = 0;
};

// Central finite-difference check of a scalar-valued graph builder. `build`
// receives a fresh graph and the leaf ids for `inputs` (in order) and must
// return the id of a scalar output node. Run in double precision.
template <typename S>
GradCheckReport grad_check(std::vector<Tensor<S>> inputs,
                           const std::function<int(Graph<S>&, const std::vector<int>&)>& build,
                           S eps = S(1e-4)) {
  auto eval = [&](const std::vector<Tensor<S>>& xs) -> S {
    Graph<S> g;
    std::vector<int> ids;
    for (const auto& x : xs) ids.push_back(g.leaf(x, false));
    int root = build(g, ids);
    return g.val(root).data[0];
  };

  // Analytic gradients.
  std::vector<Tensor<S>> analytic;
  {
    Graph<S> g;
    std::vector<int> ids;
    for (const auto& x : inputs) ids.push_back(g.leaf(x, true));
    int root = build(g, ids);
    g.backward(root);
    for (int id : ids) analytic.push_back(g.grad(id));
  }

  GradCheckReport rep;
  for (size_t t = 0; t < inputs.size(); ++t) {
    for (std::int64_t i = 0; i < inputs[t].size(); ++i) {
      S keep = inputs[t].data[i];
      inputs[t].data[i] = keep + eps;
      S fp = eval(inputs);
      inputs[t].data[i] = keep - eps;
      S fm = eval(inputs);
      inputs[t].data[i] = keep;
      double num = double(fp - fm) / (2.0 * double(eps));
      double ana = double(analytic[t].data[i]);
      double denom = std::max(std::abs(num) + std::abs(ana), 1e-3);
      rep.max_rel_err = std::max(rep.max_rel_err, std::abs(num - ana) / denom);
      ++rep.checked;
    }
  }
  return rep;
}

// Finite-difference check against model parameters. `build` constructs the
// scalar loss in a fresh graph, registering parameters via g.param(...).
// Probes `probes` random entries per parameter instead of every entry, which
// keeps whole-network checks affordable.
template <typename S>
GradCheckReport param_grad_check(const std::vector<Param<S>*>& params,
                                 const std::function<int(Graph<S>&)>& build,
                                 int probes, std::mt19937_64& rng, S eps = S(1e-4)) {
  for (Param<S>* p : params) p->zero_grad();
  {
    Graph<S> g;
    int root = build(g);
    g.backward(root);
    g.accumulate_param_grads();
  }
  auto eval = [&]() -> S {
    Graph<S> g;
    return g.val(build(g)).data[0];
  };

  GradCheckReport rep;
  for (Param<S>* p : params) {
    if (!p->trainable) continue;
    for (int t = 0; t < probes; ++t) {
      std::int64_t i = std::int64_t(rng() % std::uint64_t(p->value.size()));
      S keep = p->value.data[i];
      p->value.data[i] = keep + eps;
      S fp = eval();
      p->value.data[i] = keep - eps;
      S fm = eval();
      p->value.data[i] = keep;
      double num = double(fp - fm) / (2.0 * double(eps));
      double ana = double(p->grad.data[i]);
      double denom = std::max(std::abs(num) + std::abs(ana), 1e-3);
      rep.max_rel_err = std::max(rep.max_rel_err, std::abs(num - ana) / denom);
      ++rep.checked;
    }
  }
  return rep;
}

}  // namespace cat

#endif

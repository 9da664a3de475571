#ifndef CAT_GRAPH_HPP
#define CAT_GRAPH_HPP

#include <deque>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "cat/tensor.hpp"

namespace cat {

// Named trainable parameter with persistent gradient and momentum buffers.
// `group` tags the parameter for stage-wise freezing and per-group learning
// rates (e.g. "backbone.rgb", "branch.IV.t", "guidance", "agg.rgb", "fc").
template <typename S>
struct Param {
  std::string name;
  std::string group;
  Tensor<S> value;
  Tensor<S> grad;
  Tensor<S> momentum;
  bool trainable = true;

  Param() = default;
  Param(std::string n, std::string g, Tensor<S> v)
      : name(std::move(n)),
        group(std::move(g)),
        value(std::move(v)),
        grad(Tensor<S>::zeros(value.shape)),
        momentum(Tensor<S>::zeros(value.shape)) {}

  void zero_grad() { std::fill(grad.data.begin(), grad.data.end(), S(0)); }
};

// Reverse-mode tape. Ops append nodes in evaluation order; backward() walks
// the tape in reverse. Nodes that no trainable leaf feeds into are skipped
// (needs_grad propagation), so frozen backbone weights cost no gradient GEMMs.
template <typename S>
class Graph {
 public:
  // Backward closures receive the graph and their own node id, so they can
  // read the output gradient with g.grad(self).
  using BackFn = std::function<void(Graph&, int)>;

  struct Node {
    Tensor<S> value;
    Tensor<S> grad;  // allocated on demand in backward()
    bool needs_grad = false;
    BackFn backward;
  };

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  int leaf(Tensor<S> v, bool needs_grad = false) {
    Node n;
    n.value = std::move(v);
    n.needs_grad = needs_grad;
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
  }

  // Leaf backed by a model parameter; accumulate_param_grads() adds the
  // node's gradient into p.grad after backward().
  int param(Param<S>& p) {
    int id = leaf(p.value, p.trainable);
    param_nodes_.emplace_back(id, &p);
    return id;
  }

  int op(Tensor<S> value, const std::vector<int>& parents, BackFn backward) {
    Node n;
    n.value = std::move(value);
    for (int pid : parents)
      if (nodes_[pid].needs_grad) n.needs_grad = true;
    if (n.needs_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
  }

  const Tensor<S>& val(int id) const { return nodes_[id].value; }
  Tensor<S>& val(int id) { return nodes_[id].value; }
  bool needs_grad(int id) const { return nodes_[id].needs_grad; }

  Tensor<S>& grad(int id) {
    Node& n = nodes_[id];
    if (n.grad.size() == 0) n.grad = Tensor<S>::zeros(n.value.shape);
    return n.grad;
  }

  // Seeds d(root)/d(root)=1 (root must be scalar) and runs the tape backward.
  void backward(int root) {
    if (nodes_[root].value.size() != 1)
      throw ShapeError("backward root must be a scalar");
    if (!nodes_[root].needs_grad) return;
    grad(root)[0] = S(1);
    for (int id = root; id >= 0; --id) {
      Node& n = nodes_[id];
      if (n.needs_grad && n.backward && n.grad.size() != 0) n.backward(*this, id);
    }
  }

  void accumulate_param_grads() {
    for (auto& [id, p] : param_nodes_) {
      Node& n = nodes_[id];
      if (n.grad.size() != 0) p->grad.array() += n.grad.array();
    }
  }

  size_t num_nodes() const { return nodes_.size(); }

 private:
  std::deque<Node> nodes_;
  std::vector<std::pair<int, Param<S>*>> param_nodes_;
};

}  // namespace cat

#endif

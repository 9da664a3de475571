#ifndef CAT_MODEL_HPP
#define CAT_MODEL_HPP

#include <array>
#include <cstring>
#include <deque>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "cat/challenge.hpp"
#include "cat/checkpoint.hpp"
#include "cat/graph.hpp"
#include "cat/ops.hpp"
#include "cat/pnm.hpp"

namespace cat {

// Backbone: three conv layers (7x7 s2, 5x5 s2, 3x3 s1 dilation 3), max pool
// only after conv1, LRN after conv1/conv2. Challenge branches ride on each
// layer as parallel residual adapters.
struct NetConfig {
  std::array<int, 3> channels{96, 256, 512};
  int input_side = 107;
  int conv3_dilation = 3;
  int roialign_out = 3;
  int fc_dim = 512;
  int branch_mid = 8;  // layer-1 branch bottleneck channels
  int lrn_n = 5;
  double lrn_k = 2.0, lrn_alpha = 1e-4, lrn_beta = 0.75;
  double dropout = 0.5;

  static NetConfig desk() {
    NetConfig c;
    c.channels = {16, 32, 64};
    c.fc_dim = 128;
    c.branch_mid = 4;
    return c;
  }
};

// Spatial sizes through the backbone and the branch stacks; branch pools are
// sized so branch outputs match the backbone layer outputs exactly.
struct NetGeom {
  int conv1_out, pool1_out, conv2_out, conv3_out;
  std::array<int, 3> layer_in;         // spatial side entering each layer
  std::array<int, 3> layer_out;        // spatial side leaving each layer
  std::array<int, 3> branch_conv_out;  // after the branch convs, pre-pool
  std::array<int, 3> branch_pool;      // final pool window (1 = no pool)
};

inline NetGeom compute_geom(const NetConfig& cfg) {
  NetGeom g{};
  int in = cfg.input_side;
  g.conv1_out = (in - 7) / 2 + 1;
  if (g.conv1_out < 3) throw ShapeError("input patch too small for conv1");
  g.pool1_out = (g.conv1_out - 3) / 2 + 1;
  g.conv2_out = (g.pool1_out - 5) / 2 + 1;
  g.conv3_out = g.conv2_out - cfg.conv3_dilation * 2;
  if (g.conv3_out < cfg.roialign_out)
    throw ShapeError("configuration yields conv3 map smaller than roialign output");
  g.layer_in = {in, g.pool1_out, g.conv2_out};
  g.layer_out = {g.pool1_out, g.conv2_out, g.conv3_out};

  auto conv_out = [](int s, int k, int stride) { return (s - k) / stride + 1; };
  // layer 1 branch: 3x3 s2, 3x3 s2; layer 2: 3x3 s2; layer 3: 1x1 s2
  g.branch_conv_out[0] = conv_out(conv_out(in, 3, 2), 3, 2);
  g.branch_conv_out[1] = conv_out(g.pool1_out, 3, 2);
  g.branch_conv_out[2] = conv_out(g.conv2_out, 1, 2);
  for (int l = 0; l < 3; ++l) {
    int win = g.branch_conv_out[l] - g.layer_out[l] + 1;
    if (win < 1)
      throw ShapeError("branch output smaller than backbone layer output at layer " +
                       std::to_string(l + 1));
    g.branch_pool[l] = win;
  }
  return g;
}

inline std::int64_t backbone_stream_params(const NetConfig& cfg) {
  auto [c1, c2, c3] = cfg.channels;
  std::int64_t n = std::int64_t(c1) * 3 * 49 + c1;
  n += std::int64_t(c2) * c1 * 25 + c2;
  n += std::int64_t(c3) * c2 * 9 + c3;
  return n;
}

inline std::int64_t branch_params(const NetConfig& cfg, int layer) {
  auto [c1, c2, c3] = cfg.channels;
  switch (layer) {
    case 0:
      return std::int64_t(cfg.branch_mid) * 3 * 9 + cfg.branch_mid +
             std::int64_t(c1) * cfg.branch_mid * 9 + c1;
    case 1: return std::int64_t(c2) * c1 * 9 + c2;
    case 2: return std::int64_t(c3) * c2 * 1 + c3;
  }
  throw std::invalid_argument("branch_params: layer out of range");
}

inline std::int64_t agg_params(const NetConfig& cfg, int layer) {
  std::int64_t c = cfg.channels[layer];
  return 5 * c * c + c;
}

template <typename S>
class CatModel {
 public:
  struct ConvLayer {
    Param<S>* w = nullptr;
    Param<S>* b = nullptr;
    ConvSpec spec;
  };
  struct FcLayer {
    Param<S>* w = nullptr;
    Param<S>* b = nullptr;
  };
  struct Branch {
    std::vector<ConvLayer> convs;
    int pool_window = 1;
  };
  struct Guidance {
    ConvLayer pre;   // w1, b1
    ConvLayer gate;  // w2, b2
  };

  NetConfig cfg;
  NetGeom geom;

  std::array<std::array<ConvLayer, 3>, 2> backbone;       // [stream][layer]
  std::array<std::array<Branch, 3>, 3> shared_branch;     // [shared idx][layer]
  std::array<std::array<std::array<Branch, 3>, 2>, 2> specific_branch;  // [spec idx][stream][layer]
  std::array<std::array<std::array<Guidance, 3>, 2>, 2> guidance;       // [spec idx][guided stream][layer]
  std::array<std::array<ConvLayer, 3>, 2> agg;            // [stream][layer]
  FcLayer fc4, fc5;
  std::vector<FcLayer> fc6;  // one head per domain

  explicit CatModel(NetConfig c = NetConfig{}, std::uint64_t seed = 0,
                    int num_domains = 1)
      : cfg(c), geom(compute_geom(c)), rng_(seed ^ 0x9e3779b97f4a7c15ull) {
    auto [c1, c2, c3] = cfg.channels;
    const char* stream_name[2] = {"rgb", "t"};

    for (int s = 0; s < 2; ++s) {
      std::string base = std::string("backbone.") + stream_name[s];
      backbone[s][0] = make_conv(base + ".conv1", "backbone", ConvSpec{7, 7, 3, c1, 2, 1, 0});
      backbone[s][1] = make_conv(base + ".conv2", "backbone", ConvSpec{5, 5, c1, c2, 2, 1, 0});
      backbone[s][2] = make_conv(base + ".conv3", "backbone",
                                 ConvSpec{3, 3, c2, c3, 1, cfg.conv3_dilation, 0});
    }

    for (size_t i = 0; i < kSharedChallenges.size(); ++i) {
      std::string cn = to_string(kSharedChallenges[i]);
      for (int l = 0; l < 3; ++l)
        shared_branch[i][l] = make_branch("branch." + cn, "branch." + cn, l);
    }
    for (size_t i = 0; i < kSpecificChallenges.size(); ++i) {
      std::string cn = to_string(kSpecificChallenges[i]);
      for (int s = 0; s < 2; ++s)
        for (int l = 0; l < 3; ++l) {
          specific_branch[i][s][l] = make_branch(
              "branch." + cn + "." + stream_name[s], "branch." + cn, l);
          Guidance& gd = guidance[i][s][l];
          int ch = cfg.channels[l];
          std::string gn = "guid." + cn + "." + stream_name[s] + ".l" + std::to_string(l + 1);
          gd.pre = make_conv(gn + ".pre", "guidance", ConvSpec{1, 1, ch, ch, 1, 1, 0}, 0.01);
          gd.gate = make_conv(gn + ".gate", "guidance", ConvSpec{1, 1, ch, ch, 1, 1, 0}, 0.01);
        }
    }

    for (int s = 0; s < 2; ++s)
      for (int l = 0; l < 3; ++l) {
        int ch = cfg.channels[l];
        agg[s][l] = make_conv(std::string("agg.") + stream_name[s] + ".l" +
                                  std::to_string(l + 1),
                              "agg", ConvSpec{1, 1, 5 * ch, ch, 1, 1, 0}, 0.01);
      }

    int pooled_dim = 2 * c3 * cfg.roialign_out * cfg.roialign_out;
    fc4 = make_fc("fc4", "fc", cfg.fc_dim, pooled_dim);
    fc5 = make_fc("fc5", "fc", cfg.fc_dim, cfg.fc_dim);
    for (int d = 0; d < num_domains; ++d) add_domain();
  }

  int add_domain() {
    int d = static_cast<int>(fc6.size());
    fc6.push_back(make_fc("fc6.d" + std::to_string(d), "fc6", 2, cfg.fc_dim, 0.01));
    return d;
  }

  // Replaces the multi-domain heads with one freshly initialized head for a
  // new tracking sequence.
  void reset_single_domain() {
    for (FcLayer& h : fc6) {
      h.w->trainable = false;
      h.b->trainable = false;
    }
    fc6.clear();
    dead_heads_ += 1;
    fc6.push_back(make_fc("fc6.track" + std::to_string(dead_heads_), "fc6", 2,
                          cfg.fc_dim, 0.01));
  }

  const Branch& branch(ChallengeLabel c, int stream, int layer) const {
    if (is_shared(c)) return shared_branch[shared_index(c)][layer];
    return specific_branch[specific_index(c)][stream][layer];
  }
  Branch& branch(ChallengeLabel c, int stream, int layer) {
    if (is_shared(c)) return shared_branch[shared_index(c)][layer];
    return specific_branch[specific_index(c)][stream][layer];
  }
  const Guidance& guid(ChallengeLabel c, int guided_stream, int layer) const {
    return guidance[specific_index(c)][guided_stream][layer];
  }

  static int shared_index(ChallengeLabel c) {
    for (size_t i = 0; i < kSharedChallenges.size(); ++i)
      if (kSharedChallenges[i] == c) return static_cast<int>(i);
    throw std::invalid_argument("not a shared challenge");
  }
  static int specific_index(ChallengeLabel c) {
    for (size_t i = 0; i < kSpecificChallenges.size(); ++i)
      if (kSpecificChallenges[i] == c) return static_cast<int>(i);
    throw std::invalid_argument("not a specific challenge");
  }

  std::vector<Param<S>*> all_params() {
    std::vector<Param<S>*> out;
    for (auto& p : params_) out.push_back(&p);
    return out;
  }

  // All parameters whose group equals `prefix` or starts with `prefix.`.
  std::vector<Param<S>*> group(const std::string& prefix) {
    std::vector<Param<S>*> out;
    for (auto& p : params_)
      if (p.group == prefix ||
          (p.group.size() > prefix.size() && p.group.compare(0, prefix.size(), prefix) == 0 &&
           p.group[prefix.size()] == '.'))
        out.push_back(&p);
    return out;
  }

  void set_all_trainable(bool t) {
    for (auto& p : params_) p.trainable = t;
  }
  void set_trainable(const std::string& prefix, bool t) {
    for (Param<S>* p : group(prefix)) p->trainable = t;
  }
  void zero_grads() {
    for (auto& p : params_) p.zero_grad();
  }

  NamedTensors state() const {
    NamedTensors out;
    for (const auto& p : params_)
      out.emplace_back(p.name, p.value.template cast<float>());
    return out;
  }

  void load_state(const NamedTensors& st) {
    std::map<std::string, Param<S>*> by_name;
    for (auto& p : params_) by_name[p.name] = &p;
    for (const auto& [name, t] : st) {
      auto it = by_name.find(name);
      if (it == by_name.end()) {
        if (name.rfind("fc6.", 0) == 0) continue;  // stale domain heads
        throw IoError("checkpoint parameter '" + name + "' not in model");
      }
      if (it->second->value.shape != t.shape)
        throw IoError("checkpoint parameter '" + name + "' has shape " +
                      shape_str(t.shape) + ", model expects " +
                      shape_str(it->second->value.shape));
      it->second->value = t.template cast<S>();
    }
  }

  void save(const std::string& path) const { save_checkpoint(path, state()); }
  void load(const std::string& path) { load_state(load_checkpoint(path)); }

  // FNV-1a over the float32 image of a parameter group; used by the
  // stage-freezing tests.
  std::uint64_t group_hash(const std::string& prefix) {
    std::uint64_t h = 1469598103934665603ull;
    for (Param<S>* p : group(prefix)) {
      for (S v : p->value.data) {
        float f = static_cast<float>(v);
        unsigned char bytes[4];
        std::memcpy(bytes, &f, 4);
        for (unsigned char b : bytes) h = (h ^ b) * 1099511628211ull;
      }
    }
    return h;
  }

 private:
  std::deque<Param<S>> params_;
  std::mt19937_64 rng_;
  int dead_heads_ = 0;

  Param<S>* add_param(const std::string& name, const std::string& group, Shape sh,
                      double sigma) {
    Tensor<S> t(sh);
    if (sigma > 0) {
      std::normal_distribution<double> n(0.0, sigma);
      for (auto& v : t.data) v = S(n(rng_));
    }
    params_.emplace_back(name, group, std::move(t));
    return &params_.back();
  }

  ConvLayer make_conv(const std::string& name, const std::string& group, ConvSpec sp,
                      double sigma = -1) {
    double fan_in = double(sp.in_ch) * sp.kernel_h * sp.kernel_w;
    if (sigma < 0) sigma = std::sqrt(2.0 / fan_in);
    ConvLayer c;
    c.w = add_param(name + ".w", group, {sp.out_ch, sp.in_ch, sp.kernel_h, sp.kernel_w},
                    sigma);
    c.b = add_param(name + ".b", group, {sp.out_ch}, 0.0);
    c.spec = sp;
    return c;
  }

  FcLayer make_fc(const std::string& name, const std::string& group, int out_dim,
                  int in_dim, double sigma = -1) {
    if (sigma < 0) sigma = std::sqrt(2.0 / in_dim);
    FcLayer f;
    f.w = add_param(name + ".w", group, {out_dim, in_dim}, sigma);
    f.b = add_param(name + ".b", group, {out_dim}, 0.0);
    return f;
  }

  Branch make_branch(const std::string& name, const std::string& group, int layer) {
    Branch br;
    int ch = cfg.channels[layer];
    std::string ln = name + ".l" + std::to_string(layer + 1);
    switch (layer) {
      case 0:
        br.convs.push_back(make_conv(ln + ".c0", group, ConvSpec{3, 3, 3, cfg.branch_mid, 2, 1, 0}));
        br.convs.push_back(make_conv(ln + ".c1", group, ConvSpec{3, 3, cfg.branch_mid, ch, 2, 1, 0}));
        break;
      case 1:
        br.convs.push_back(make_conv(ln + ".c0", group, ConvSpec{3, 3, cfg.channels[0], ch, 2, 1, 0}));
        break;
      case 2:
        br.convs.push_back(make_conv(ln + ".c0", group, ConvSpec{1, 1, cfg.channels[1], ch, 2, 1, 0}));
        break;
    }
    br.pool_window = geom.branch_pool[layer];
    return br;
  }
};

// ---------------------------------------------------------------------------
// Forward wiring

struct ActivationTrace {
  std::vector<std::pair<std::string, int>> entries;  // name -> node id
};

// Stage wiring for the challenge branches:
//   full_net       - all branches, guidance per flags.mode, aggregation
//   single_direct  - one branch, direct residual addition (training stage I)
//   single_guided  - one specific branch with gated guidance (stage II)
enum class Wire { full_net, single_direct, single_guided };

template <typename S>
struct ForwardOpts {
  VariantFlags flags;
  Wire wire = Wire::full_net;
  ChallengeLabel single = ChallengeLabel::FM;
  ActivationTrace* trace = nullptr;
};

namespace detail {

template <typename S>
int conv_block(Graph<S>& g, CatModel<S>& m, const typename CatModel<S>::ConvLayer& c,
               int input) {
  return conv2d(g, input, g.param(*c.w), g.param(*c.b), c.spec);
}

// backbone layer: conv -> relu -> lrn (layers 1,2) -> maxpool (layer 1 only)
template <typename S>
int backbone_layer(Graph<S>& g, CatModel<S>& m, int stream, int layer, int input) {
  int y = conv_block(g, m, m.backbone[stream][layer], input);
  y = relu(g, y);
  if (layer < 2)
    y = lrn(g, y, m.cfg.lrn_n, S(m.cfg.lrn_k), S(m.cfg.lrn_alpha), S(m.cfg.lrn_beta));
  if (layer == 0) y = maxpool2d(g, y, 3, 2);
  return y;
}

// challenge branch: per conv: conv -> relu -> lrn; final maxpool to match the
// backbone layer's output resolution
template <typename S>
int branch_forward(Graph<S>& g, CatModel<S>& m, const typename CatModel<S>::Branch& br,
                   int input) {
  int y = input;
  for (const auto& c : br.convs) {
    y = conv_block(g, m, c, y);
    y = relu(g, y);
    y = lrn(g, y, m.cfg.lrn_n, S(m.cfg.lrn_k), S(m.cfg.lrn_alpha), S(m.cfg.lrn_beta));
  }
  if (br.pool_window > 1) y = maxpool2d(g, y, br.pool_window, 1);
  return y;
}

// Gated point-wise feature shift from the prior modality's features x into
// the guided modality's features z; variants for the ablations.
template <typename S>
int guide(Graph<S>& g, CatModel<S>& m, int x, int z,
          const typename CatModel<S>::Guidance& gp, VariantMode mode) {
  check_same_shape(g.val(x), g.val(z), "guide");
  switch (mode) {
    case VariantMode::no_guidance:
      return z;
    case VariantMode::direct_add:
      return add(g, z, x);
    case VariantMode::film: {
      int cond = global_avg_pool(g, x);  // [N,C]
      int C = g.val(x).dim(1);
      int wg = reshape(g, g.param(*gp.pre.w), {C, C});
      int wb = reshape(g, g.param(*gp.gate.w), {C, C});
      int gamma_f = linear(g, cond, wg, g.param(*gp.pre.b));
      int beta_f = linear(g, cond, wb, g.param(*gp.gate.b));
      return channel_affine(g, z, gamma_f, beta_f);
    }
    default: {
      int gamma = conv_block(g, m, gp.pre, x);
      if (mode == VariantMode::no_gate) return add(g, z, gamma);
      int beta = conv_block(g, m, gp.gate, relu(g, gamma));
      int gated = mul(g, sigmoid(g, beta), gamma);
      return add(g, z, gated);
    }
  }
}

template <typename S>
void trace_entry(ActivationTrace* tr, const std::string& name, int id) {
  if (tr) tr->entries.emplace_back(name, id);
}

}  // namespace detail

template <typename S>
struct Features {
  // node ids of per-layer outputs, [stream][layer]; stream 0 rgb, 1 thermal
  std::array<std::array<int, 3>, 2> layer_out;
  int conv3(int stream) const { return layer_out[stream][2]; }
};

// One hierarchical layer: backbone output plus the aggregated (or single)
// challenge branch residual, per stream.
template <typename S>
std::array<int, 2> cat_layer_forward(Graph<S>& g, CatModel<S>& m, int layer,
                                     std::array<int, 2> inputs,
                                     const ForwardOpts<S>& opts) {
  const char* stream_name[2] = {"rgb", "t"};
  std::array<int, 2> base{};
  for (int s = 0; s < 2; ++s) {
    base[s] = detail::backbone_layer(g, m, s, layer, inputs[s]);
    detail::trace_entry<S>(opts.trace,
                           "l" + std::to_string(layer + 1) + "_backbone_" + stream_name[s],
                           base[s]);
  }
  if (!opts.flags.layer_active(layer)) return base;

  if (opts.wire != Wire::full_net) {
    ChallengeLabel c = opts.single;
    std::array<int, 2> bout{};
    for (int s = 0; s < 2; ++s)
      bout[s] = detail::branch_forward(g, m, m.branch(c, s, layer), inputs[s]);
    std::array<int, 2> out{};
    for (int s = 0; s < 2; ++s) {
      int res = bout[s];
      if (opts.wire == Wire::single_guided) {
        if (!is_specific(c))
          throw std::invalid_argument("guided wiring needs a modality-specific challenge");
        res = detail::guide(g, m, bout[1 - s], bout[s], m.guid(c, s, layer),
                            VariantMode::full);
      }
      out[s] = add(g, base[s], res);
    }
    return out;
  }

  // full network: all five branches, guidance between the specific ones,
  // adaptive aggregation, residual addition
  std::array<std::array<int, 5>, 2> bouts{};
  for (int s = 0; s < 2; ++s)
    for (int ci = 0; ci < 5; ++ci)
      bouts[s][ci] =
          detail::branch_forward(g, m, m.branch(kAllChallenges[ci], s, layer), inputs[s]);

  std::array<int, 2> out{};
  for (int s = 0; s < 2; ++s) {
    std::vector<int> parts;
    for (int ci = 0; ci < 5; ++ci) {
      ChallengeLabel c = kAllChallenges[ci];
      int feat = bouts[s][ci];
      if (is_specific(c))
        feat = detail::guide(g, m, bouts[1 - s][ci], bouts[s][ci], m.guid(c, s, layer),
                             opts.flags.mode);
      detail::trace_entry<S>(opts.trace,
                             "l" + std::to_string(layer + 1) + "_" + to_string(c) + "_" +
                                 stream_name[s],
                             feat);
      parts.push_back(feat);
    }
    int cc = concat(g, parts, 1);
    int agg = detail::conv_block(g, m, m.agg[s][layer], cc);
    out[s] = add(g, base[s], agg);
  }
  return out;
}

// Full two-stream forward from input patches (both [N,3,side,side]).
template <typename S>
Features<S> forward_features(Graph<S>& g, CatModel<S>& m, int rgb, int t,
                             const ForwardOpts<S>& opts) {
  const Tensor<S>& rv = g.val(rgb);
  if (rv.rank() != 4 || rv.dim(1) != 3 || rv.dim(2) != m.cfg.input_side ||
      rv.dim(3) != m.cfg.input_side)
    throw ShapeError("forward_features: rgb patch must be [N,3," +
                     std::to_string(m.cfg.input_side) + "," +
                     std::to_string(m.cfg.input_side) + "], got " + shape_str(rv.shape));
  check_same_shape(g.val(rgb), g.val(t), "forward_features");

  Features<S> f{};
  std::array<int, 2> cur{rgb, t};
  for (int l = 0; l < 3; ++l) {
    cur = cat_layer_forward(g, m, l, cur, opts);
    f.layer_out[0][l] = cur[0];
    f.layer_out[1][l] = cur[1];
  }
  return f;
}

template <typename S>
struct ClassifyOut {
  int scores;   // [B,2]
  int fc5_out;  // [B,fc_dim] post-ReLU, shared by the domain heads
};

// fc head on already pooled-and-flattened features [B, 2*C3*r*r].
template <typename S>
ClassifyOut<S> classify_features(Graph<S>& g, CatModel<S>& m, int flat, int domain,
                                 bool train_dropout = false,
                                 std::mt19937_64* rng = nullptr) {
  if (domain < 0 || domain >= static_cast<int>(m.fc6.size()))
    throw std::invalid_argument("unknown domain id " + std::to_string(domain));
  int y = linear(g, flat, g.param(*m.fc4.w), g.param(*m.fc4.b));
  y = relu(g, y);
  if (train_dropout) y = dropout(g, y, m.cfg.dropout, *rng);
  y = linear(g, y, g.param(*m.fc5.w), g.param(*m.fc5.b));
  y = relu(g, y);
  int fc5_out = y;
  if (train_dropout) y = dropout(g, y, m.cfg.dropout, *rng);
  int scores = linear(g, y, g.param(*m.fc6[domain].w), g.param(*m.fc6[domain].b));
  return {scores, fc5_out};
}

// RoIAlign both streams' conv3 maps for the same boxes (patch coordinates),
// concatenate and flatten.
template <typename S>
int pool_and_flatten(Graph<S>& g, CatModel<S>& m, const Features<S>& f,
                     const std::vector<BBox>& boxes) {
  double scale = double(m.geom.conv3_out) / m.cfg.input_side;
  int pr = roialign(g, f.conv3(0), boxes, scale, m.cfg.roialign_out);
  int pt = roialign(g, f.conv3(1), boxes, scale, m.cfg.roialign_out);
  int cc = concat(g, {pr, pt}, 1);
  int B = static_cast<int>(boxes.size());
  return reshape(g, cc, {B, int(g.val(cc).size() / B)});
}

template <typename S>
ClassifyOut<S> classify(Graph<S>& g, CatModel<S>& m, const Features<S>& f,
                        const std::vector<BBox>& boxes, int domain,
                        bool train_dropout = false, std::mt19937_64* rng = nullptr) {
  int flat = pool_and_flatten(g, m, f, boxes);
  return classify_features(g, m, flat, domain, train_dropout, rng);
}

// Channel-mean heat maps of the backbone and branch feature maps, one PGM per
// (layer, branch, stream), normalized to [0,255]. Returns the written paths.
template <typename S>
std::vector<std::string> dump_activations(CatModel<S>& m, const Tensor<S>& rgb_patch,
                                          const Tensor<S>& t_patch,
                                          const VariantFlags& flags,
                                          const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);

  Graph<S> g;
  Shape in_shape{1, rgb_patch.dim(0), rgb_patch.dim(1), rgb_patch.dim(2)};
  int rgb = g.leaf(Tensor<S>(in_shape, rgb_patch.data));
  int t = g.leaf(Tensor<S>(in_shape, t_patch.data));
  ActivationTrace trace;
  ForwardOpts<S> opts;
  opts.flags = flags;
  opts.trace = &trace;
  forward_features(g, m, rgb, t, opts);

  std::vector<std::string> written;
  for (const auto& [name, id] : trace.entries) {
    const Tensor<S>& v = g.val(id);
    const int C = v.dim(1), H = v.dim(2), W = v.dim(3);
    GrayImage img;
    img.w = W;
    img.h = H;
    img.pix.resize(static_cast<size_t>(H) * W);
    std::vector<double> mean(static_cast<size_t>(H) * W, 0.0);
    for (int c = 0; c < C; ++c)
      for (int i = 0; i < H * W; ++i) mean[i] += double(v.data[c * H * W + i]);
    double lo = mean[0], hi = mean[0];
    for (double x : mean) {
      lo = std::min(lo, x);
      hi = std::max(hi, x);
    }
    double span = hi - lo;
    for (size_t i = 0; i < mean.size(); ++i)
      img.pix[i] = span > 0 ? static_cast<std::uint8_t>(
                                  std::lround((mean[i] - lo) / span * 255.0))
                            : 0;
    std::string path = out_dir + "/" + name + ".pgm";
    write_pgm(path, img);
    written.push_back(path);
  }
  return written;
}

}  // namespace cat

#endif

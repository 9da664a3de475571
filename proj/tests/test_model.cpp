#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <random>

#include "cat/gradcheck.hpp"
#include "cat/model.hpp"
#include "cat/patch.hpp"

using namespace cat;

namespace {

NetConfig tiny_config() {
  NetConfig c;
  c.channels = {2, 2, 2};
  c.input_side = 75;
  c.roialign_out = 1;
  c.fc_dim = 4;
  c.branch_mid = 2;
  return c;
}

template <typename S>
Tensor<S> random_image(int side, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Tensor<S> t({1, 3, side, side});
  for (auto& v : t.data) v = S(u(rng));
  return t;
}

template <typename S>
std::int64_t group_size(CatModel<S>& m, const std::string& g) {
  std::int64_t n = 0;
  for (auto* p : m.group(g)) n += p->value.size();
  return n;
}

}  // namespace

TEST_CASE("full-config parameter counts match closed-form arithmetic") {
  NetConfig full;  // 96/256/512, m=8
  CHECK(backbone_stream_params(full) == 1809024);
  CHECK(branch_params(full, 0) == 7232);
  CHECK(branch_params(full, 1) == 221440);
  CHECK(branch_params(full, 2) == 131584);
  CHECK(agg_params(full, 0) == 46176);

  // each branch strictly smaller than the backbone conv of its layer
  std::int64_t conv_counts[3] = {14208, 614656, 1180160};
  for (int l = 0; l < 3; ++l) CHECK(branch_params(full, l) < conv_counts[l]);
}

TEST_CASE("instantiated parameter tensors agree with the arithmetic") {
  for (NetConfig cfg : {tiny_config(), NetConfig::desk()}) {
    CatModel<float> m(cfg, 1);
    CHECK(group_size(m, "backbone") == 2 * backbone_stream_params(cfg));
    std::int64_t branch_total = branch_params(cfg, 0) + branch_params(cfg, 1) + branch_params(cfg, 2);
    CHECK(group_size(m, "branch.FM") == branch_total);      // single shared set
    CHECK(group_size(m, "branch.IV") == 2 * branch_total);  // per-stream sets
    std::int64_t agg_total = 0;
    for (int l = 0; l < 3; ++l) agg_total += agg_params(cfg, l);
    CHECK(group_size(m, "agg") == 2 * agg_total);
  }
}

TEST_CASE("shared branches use single storage for both streams") {
  CatModel<float> m(tiny_config(), 3);
  for (ChallengeLabel c : kSharedChallenges)
    for (int l = 0; l < 3; ++l)
      CHECK(m.branch(c, 0, l).convs[0].w == m.branch(c, 1, l).convs[0].w);
  for (ChallengeLabel c : kSpecificChallenges)
    for (int l = 0; l < 3; ++l)
      CHECK(m.branch(c, 0, l).convs[0].w != m.branch(c, 1, l).convs[0].w);
}

TEST_CASE("guidance module scalar oracle") {
  NetConfig cfg = tiny_config();
  cfg.channels = {1, 1, 1};
  cfg.branch_mid = 1;
  CatModel<float> m(cfg, 0);
  auto& gp = m.guidance[0][0][0];
  gp.pre.w->value.data[0] = 1.0f;
  gp.pre.b->value.data[0] = 0.0f;
  gp.gate.w->value.data[0] = 1.0f;
  gp.gate.b->value.data[0] = 0.0f;

  auto run = [&](float xv, float zv, VariantMode mode, float gate_bias = 0.0f) {
    gp.gate.b->value.data[0] = gate_bias;
    Graph<float> g;
    int x = g.leaf(Tensor<float>({1, 1, 1, 1}, {xv}));
    int z = g.leaf(Tensor<float>({1, 1, 1, 1}, {zv}));
    int out = detail::guide(g, m, x, z, gp, mode);
    return g.val(out).data[0];
  };

  // x=2, z=1, unit weights, zero biases: gamma=2, beta=2,
  // sigma(2)*2 = 1.761594, output 2.761594
  CHECK(run(2, 1, VariantMode::full) == doctest::Approx(2.761594).epsilon(1e-6));

  // gate driven closed: output collapses to z exactly
  CHECK(run(2, 1, VariantMode::full, -1e6f) == 1.0f);

  // x=0 with zero biases: gamma=0, output = z for every mode except direct_add
  for (VariantMode mode : {VariantMode::full, VariantMode::no_gate, VariantMode::no_guidance})
    CHECK(run(0, 1, mode) == doctest::Approx(1.0f));
  CHECK(run(0.5f, 1, VariantMode::direct_add) == doctest::Approx(1.5f));
}

TEST_CASE("gate monotonicity: rising gate bias moves output from z toward z+gamma") {
  NetConfig cfg = tiny_config();
  cfg.channels = {1, 1, 1};
  CatModel<float> m(cfg, 0);
  auto& gp = m.guidance[1][1][0];
  gp.pre.w->value.data[0] = 1.0f;
  gp.pre.b->value.data[0] = 0.0f;
  gp.gate.w->value.data[0] = 0.0f;  // beta = gate bias alone

  const float xv = 2.0f, zv = 1.0f;  // gamma = 2
  float prev = -1e9f;
  for (float b2 : {-6.f, -3.f, 0.f, 3.f, 6.f}) {
    gp.gate.b->value.data[0] = b2;
    Graph<float> g;
    int x = g.leaf(Tensor<float>({1, 1, 1, 1}, {xv}));
    int z = g.leaf(Tensor<float>({1, 1, 1, 1}, {zv}));
    float out = g.val(detail::guide(g, m, x, z, gp, VariantMode::full)).data[0];
    CHECK(out > prev);
    CHECK(out > zv);
    CHECK(out < zv + xv);
    prev = out;
  }
}

TEST_CASE("guidance composite passes finite-difference checks") {
  for (int seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(400 + seed);
    std::normal_distribution<double> n(0.0, 1.0);
    auto rt = [&](Shape sh) {
      Tensor<double> t(std::move(sh));
      for (auto& v : t.data) v = n(rng);
      return t;
    };
    auto x = rt({1, 2, 3, 3});
    auto z = rt({1, 2, 3, 3});
    auto w1 = rt({2, 2, 1, 1});
    auto b1 = rt({2});
    auto w2 = rt({2, 2, 1, 1});
    auto b2 = rt({2});
    auto rep = grad_check<double>(
        {x, z, w1, b1, w2, b2},
        [&](Graph<double>& g, const std::vector<int>& ids) {
          ConvSpec one{1, 1, 2, 2, 1, 1, 0};
          int gamma = conv2d(g, ids[0], ids[2], ids[3], one);
          int beta = conv2d(g, relu(g, gamma), ids[4], ids[5], one);
          int out = add(g, ids[1], mul(g, sigmoid(g, beta), gamma));
          int gap = global_avg_pool(g, out);
          return softmax_ce(g, gap, {1});
        });
    CHECK_MESSAGE(rep.max_rel_err < 1e-4, "guidance composite seed ", seed);
  }
}

TEST_CASE("baseline flags reproduce the plain backbone bit-exactly") {
  std::mt19937_64 rng(9);
  CatModel<float> m(tiny_config(), 5);
  auto rgb = random_image<float>(m.cfg.input_side, rng);
  auto th = random_image<float>(m.cfg.input_side, rng);

  Graph<float> g;
  int ri = g.leaf(rgb), ti = g.leaf(th);
  ForwardOpts<float> opts;
  opts.flags.mode = VariantMode::baseline;
  auto f = forward_features(g, m, ri, ti, opts);

  // hand-wired plain backbone
  std::array<int, 2> cur{ri, ti};
  for (int l = 0; l < 3; ++l)
    for (int s = 0; s < 2; ++s) cur[s] = detail::backbone_layer(g, m, s, l, cur[s]);
  for (int s = 0; s < 2; ++s)
    CHECK(g.val(f.layer_out[s][2]).data == g.val(cur[s]).data);
}

TEST_CASE("zeroed branch, guidance and aggregation weights reduce to baseline") {
  std::mt19937_64 rng(10);
  CatModel<float> m(tiny_config(), 5);
  for (const char* grp : {"branch", "guidance", "agg"})
    for (auto* p : m.group(grp)) std::fill(p->value.data.begin(), p->value.data.end(), 0.0f);

  auto rgb = random_image<float>(m.cfg.input_side, rng);
  auto th = random_image<float>(m.cfg.input_side, rng);
  Graph<float> g;
  int ri = g.leaf(rgb), ti = g.leaf(th);
  ForwardOpts<float> full, base;
  full.flags.mode = VariantMode::full;
  base.flags.mode = VariantMode::baseline;
  auto ff = forward_features(g, m, ri, ti, full);
  auto fb = forward_features(g, m, ri, ti, base);
  for (int s = 0; s < 2; ++s)
    for (std::int64_t i = 0; i < g.val(ff.layer_out[s][2]).size(); ++i)
      CHECK(g.val(ff.layer_out[s][2]).data[i] ==
            doctest::Approx(g.val(fb.layer_out[s][2]).data[i]).epsilon(1e-6));
}

TEST_CASE("gate closed by large negative bias equals no_guidance variant") {
  std::mt19937_64 rng(11);
  CatModel<float> m(tiny_config(), 5);
  auto rgb = random_image<float>(m.cfg.input_side, rng);
  auto th = random_image<float>(m.cfg.input_side, rng);

  Graph<float> g;
  int ri = g.leaf(rgb), ti = g.leaf(th);
  ForwardOpts<float> ng;
  ng.flags.mode = VariantMode::no_guidance;
  auto f_ng = forward_features(g, m, ri, ti, ng);

  for (auto* p : m.group("guidance"))
    if (p->name.find(".gate.b") != std::string::npos)
      std::fill(p->value.data.begin(), p->value.data.end(), -1e6f);
  ForwardOpts<float> fullo;
  fullo.flags.mode = VariantMode::full;
  auto f_full = forward_features(g, m, ri, ti, fullo);

  for (int s = 0; s < 2; ++s)
    for (std::int64_t i = 0; i < g.val(f_ng.layer_out[s][2]).size(); ++i)
      CHECK(g.val(f_full.layer_out[s][2]).data[i] ==
            doctest::Approx(g.val(f_ng.layer_out[s][2]).data[i]).epsilon(1e-5));
}

TEST_CASE("variant active_layers gates individual layers") {
  std::mt19937_64 rng(12);
  CatModel<float> m(tiny_config(), 5);
  auto rgb = random_image<float>(m.cfg.input_side, rng);
  auto th = random_image<float>(m.cfg.input_side, rng);
  Graph<float> g;
  int ri = g.leaf(rgb), ti = g.leaf(th);

  ForwardOpts<float> only3;
  only3.flags.active_layers = {false, false, true};
  auto f3 = forward_features(g, m, ri, ti, only3);
  ForwardOpts<float> base;
  base.flags.mode = VariantMode::baseline;
  auto fb = forward_features(g, m, ri, ti, base);
  // layers 1-2 identical to baseline, layer 3 differs
  CHECK(g.val(f3.layer_out[0][1]).data == g.val(fb.layer_out[0][1]).data);
  bool differs = false;
  for (std::int64_t i = 0; i < g.val(f3.layer_out[0][2]).size(); ++i)
    if (g.val(f3.layer_out[0][2]).data[i] != g.val(fb.layer_out[0][2]).data[i]) differs = true;
  CHECK(differs);
}

TEST_CASE("backbone shape contract on the desk config") {
  CatModel<float> m(NetConfig::desk(), 2);
  CHECK(m.geom.conv3_out >= 3);
  std::mt19937_64 rng(13);
  Graph<float> g;
  auto rgb = random_image<float>(m.cfg.input_side, rng);
  auto th = random_image<float>(m.cfg.input_side, rng);
  ForwardOpts<float> opts;
  auto f = forward_features(g, m, g.leaf(rgb), g.leaf(th), opts);
  const auto& out = g.val(f.conv3(0));
  CHECK(out.dim(1) == 64);
  CHECK(out.dim(2) >= 3);

  // zero weights -> zero features
  for (auto* p : m.all_params()) std::fill(p->value.data.begin(), p->value.data.end(), 0.0f);
  Graph<float> g2;
  auto f0 = forward_features(g2, m, g2.leaf(rgb), g2.leaf(th), opts);
  for (float v : g2.val(f0.conv3(0)).data) CHECK(v == 0.0f);
}

TEST_CASE("classify head contracts") {
  std::mt19937_64 rng(14);
  CatModel<float> m(tiny_config(), 2);
  auto rgb = random_image<float>(m.cfg.input_side, rng);
  auto th = random_image<float>(m.cfg.input_side, rng);
  std::vector<BBox> boxes{{10, 10, 30, 30}, {20, 15, 25, 40}, {10, 10, 30, 30}};

  Graph<float> g;
  ForwardOpts<float> opts;
  auto f = forward_features(g, m, g.leaf(rgb), g.leaf(th), opts);
  auto out = classify(g, m, f, boxes, 0);
  const auto& sc = g.val(out.scores);
  REQUIRE(sc.shape == Shape{3, 2});
  // duplicated candidate scores identically
  CHECK(sc.data[0] == sc.data[4]);
  CHECK(sc.data[1] == sc.data[5]);

  // batched call equals per-sample calls stacked
  for (int i = 0; i < 3; ++i) {
    auto one = classify(g, m, f, {boxes[i]}, 0);
    CHECK(g.val(one.scores).data[0] == doctest::Approx(sc.data[2 * i]).epsilon(1e-6));
    CHECK(g.val(one.scores).data[1] == doctest::Approx(sc.data[2 * i + 1]).epsilon(1e-6));
  }

  CHECK_THROWS_AS(classify(g, m, f, boxes, 7), std::invalid_argument);

  // zero fc weights -> scores (0,0)
  for (auto* p : m.group("fc")) std::fill(p->value.data.begin(), p->value.data.end(), 0.0f);
  for (auto* p : m.group("fc6")) std::fill(p->value.data.begin(), p->value.data.end(), 0.0f);
  auto z = classify(g, m, f, {boxes[0]}, 0);
  CHECK(g.val(z.scores).data[0] == 0.0f);
  CHECK(g.val(z.scores).data[1] == 0.0f);
}

TEST_CASE("roialign whole-map pooling matches hand bilinear computation") {
  Tensor<float> ramp({1, 1, 4, 4});
  for (int i = 0; i < 16; ++i) ramp.data[i] = float(i);
  Graph<float> g;
  int p = roialign(g, g.leaf(ramp), {BBox{0, 0, 4, 4}}, 1.0, 2);
  // independent hand evaluation of the documented sampling scheme
  for (int by = 0; by < 2; ++by)
    for (int bx = 0; bx < 2; ++bx) {
      double acc = 0;
      for (int sy = 0; sy < 2; ++sy)
        for (int sx = 0; sx < 2; ++sx) {
          double py = std::clamp((by + (sy + 0.5) / 2.0) * 2.0, 0.0, 3.0);
          double px = std::clamp((bx + (sx + 0.5) / 2.0) * 2.0, 0.0, 3.0);
          int y0 = int(py), x0 = int(px);
          int y1 = std::min(y0 + 1, 3), x1 = std::min(x0 + 1, 3);
          double ly = py - y0, lx = px - x0;
          acc += (1 - ly) * ((1 - lx) * ramp.data[y0 * 4 + x0] + lx * ramp.data[y0 * 4 + x1]) +
                 ly * ((1 - lx) * ramp.data[y1 * 4 + x0] + lx * ramp.data[y1 * 4 + x1]);
        }
      CHECK(g.val(p).data[by * 2 + bx] == doctest::Approx(acc / 4.0).epsilon(1e-6));
    }
}

TEST_CASE("whole-network gradient check on a tiny config") {
  NetConfig cfg = tiny_config();
  CatModel<double> m(cfg, 2);
  std::mt19937_64 rng(77);
  auto rgb = random_image<double>(cfg.input_side, rng);
  auto th = random_image<double>(cfg.input_side, rng);
  std::vector<BBox> boxes{{20, 20, 35, 35}, {5, 40, 25, 30}};
  std::vector<int> labels{1, 0};

  auto build = [&](Graph<double>& g) {
    ForwardOpts<double> opts;  // full wiring, gated guidance, aggregation
    auto f = forward_features(g, m, g.leaf(rgb), g.leaf(th), opts);
    auto out = classify(g, m, f, boxes, 0);
    return softmax_ce(g, out.scores, labels);
  };
  auto rep = param_grad_check<double>(m.all_params(), build, 1, rng);
  CHECK(rep.checked > 50);
  CHECK(rep.max_rel_err < 1e-4);
}

TEST_CASE("dump_activations writes one heat map per layer, branch and stream") {
  CatModel<float> m(tiny_config(), 1);
  std::mt19937_64 rng(15);
  Tensor<float> rgb({3, 75, 75}), th({3, 75, 75});
  std::uniform_real_distribution<double> u(0, 1);
  for (auto& v : rgb.data) v = float(u(rng));
  for (auto& v : th.data) v = float(u(rng));

  VariantFlags flags;
  auto files = dump_activations(m, rgb, th, flags, "act_dump");
  // 3 layers x (backbone + 5 branches) x 2 streams
  CHECK(files.size() == 3 * 6 * 2);

  auto files2 = dump_activations(m, rgb, th, flags, "act_dump2");
  for (size_t i = 0; i < files.size(); ++i) {
    std::ifstream a(files[i], std::ios::binary), b(files2[i], std::ios::binary);
    std::string sa((std::istreambuf_iterator<char>(a)), {});
    std::string sb((std::istreambuf_iterator<char>(b)), {});
    CHECK(sa == sb);  // same model, same input -> identical bytes
  }

  // zero-weight model -> uniform images
  for (auto* p : m.all_params()) std::fill(p->value.data.begin(), p->value.data.end(), 0.0f);
  auto files0 = dump_activations(m, rgb, th, flags, "act_dump0");
  auto img = read_pgm(files0.back());
  for (auto px : img.pix) CHECK(px == img.pix[0]);
}

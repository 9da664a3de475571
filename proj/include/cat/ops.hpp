#ifndef CAT_OPS_HPP
#define CAT_OPS_HPP

#include <cmath>
#include <memory>
#include <random>
#include <vector>

#include "cat/bbox.hpp"
#include "cat/graph.hpp"
#include "cat/tensor.hpp"

namespace cat {

struct ConvSpec {
  int kernel_h = 1, kernel_w = 1;
  int in_ch = 1, out_ch = 1;
  int stride = 1;
  int dilation = 1;
  int padding = 0;

  int out_h(int in_h) const {
    return (in_h + 2 * padding - dilation * (kernel_h - 1) - 1) / stride + 1;
  }
  int out_w(int in_w) const {
    return (in_w + 2 * padding - dilation * (kernel_w - 1) - 1) / stride + 1;
  }
  void validate(int in_h, int in_w) const {
    if (kernel_h < 1 || kernel_w < 1 || in_ch < 1 || out_ch < 1 || stride < 1 ||
        dilation < 1 || padding < 0)
      throw ShapeError("invalid ConvSpec field");
    if (out_h(in_h) < 1 || out_w(in_w) < 1)
      throw ShapeError("conv output would be empty for input " +
                       std::to_string(in_h) + "x" + std::to_string(in_w));
  }
  std::int64_t weight_count() const {
    return static_cast<std::int64_t>(out_ch) * in_ch * kernel_h * kernel_w;
  }
  std::int64_t param_count() const { return weight_count() + out_ch; }
};

namespace detail {

// Column matrix: K = C*kh*kw rows, M = Ho*Wo columns, row-major flat buffer.
template <typename S>
void im2col(const S* src, int C, int H, int W, const ConvSpec& sp, S* col) {
  const int Ho = sp.out_h(H), Wo = sp.out_w(W);
  S* dst = col;
  for (int c = 0; c < C; ++c)
    for (int ky = 0; ky < sp.kernel_h; ++ky)
      for (int kx = 0; kx < sp.kernel_w; ++kx)
        for (int oy = 0; oy < Ho; ++oy) {
          int iy = oy * sp.stride - sp.padding + ky * sp.dilation;
          for (int ox = 0; ox < Wo; ++ox) {
            int ix = ox * sp.stride - sp.padding + kx * sp.dilation;
            *dst++ = (iy >= 0 && iy < H && ix >= 0 && ix < W)
                         ? src[(c * H + iy) * W + ix]
                         : S(0);
          }
        }
}

template <typename S>
void col2im_add(const S* col, int C, int H, int W, const ConvSpec& sp, S* dst) {
  const int Ho = sp.out_h(H), Wo = sp.out_w(W);
  const S* src = col;
  for (int c = 0; c < C; ++c)
    for (int ky = 0; ky < sp.kernel_h; ++ky)
      for (int kx = 0; kx < sp.kernel_w; ++kx)
        for (int oy = 0; oy < Ho; ++oy) {
          int iy = oy * sp.stride - sp.padding + ky * sp.dilation;
          for (int ox = 0; ox < Wo; ++ox) {
            int ix = ox * sp.stride - sp.padding + kx * sp.dilation;
            if (iy >= 0 && iy < H && ix >= 0 && ix < W)
              dst[(c * H + iy) * W + ix] += *src;
            ++src;
          }
        }
}

}  // namespace detail

// Cross-correlation (no kernel flip). input [N,C,H,W], weight [O,C,kh,kw],
// bias [O] -> [N,O,Ho,Wo].
template <typename S>
int conv2d(Graph<S>& g, int input, int weight, int bias, ConvSpec sp) {
  const Tensor<S>& x = g.val(input);
  const Tensor<S>& w = g.val(weight);
  const Tensor<S>& b = g.val(bias);
  if (x.rank() != 4)
    throw ShapeError("conv2d: input must be 4-d, got " + shape_str(x.shape));
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  sp.validate(H, W);
  if (w.shape != Shape{sp.out_ch, sp.in_ch, sp.kernel_h, sp.kernel_w})
    throw ShapeError("conv2d: weight shape " + shape_str(w.shape) +
                     " does not match spec");
  if (C != sp.in_ch)
    throw ShapeError("conv2d: input has " + std::to_string(C) +
                     " channels, spec wants " + std::to_string(sp.in_ch));
  if (b.shape != Shape{sp.out_ch}) throw ShapeError("conv2d: bad bias shape");

  const int Ho = sp.out_h(H), Wo = sp.out_w(W);
  const int K = C * sp.kernel_h * sp.kernel_w, M = Ho * Wo, O = sp.out_ch;
  using Mat = typename Tensor<S>::MatrixS;

  Tensor<S> y({N, O, Ho, Wo});
  {
    std::vector<S> col(static_cast<size_t>(K) * M);
    auto wmat = w.mat(O, K);
    for (int n = 0; n < N; ++n) {
      detail::im2col(x.data.data() + static_cast<std::int64_t>(n) * C * H * W, C, H,
                     W, sp, col.data());
      Eigen::Map<const Mat> cmat(col.data(), K, M);
      Eigen::Map<Mat> ymat(y.data.data() + static_cast<std::int64_t>(n) * O * M, O, M);
      ymat.noalias() = wmat * cmat;
      for (int o = 0; o < O; ++o) ymat.row(o).array() += b.data[o];
    }
  }

  auto back = [input, weight, bias, sp, N, C, H, W, Ho, Wo, K, M, O](Graph<S>& gg,
                                                                     int self) {
    const Tensor<S>& xv = gg.val(input);
    const Tensor<S>& wv = gg.val(weight);
    const Tensor<S>& dy = gg.grad(self);
    auto wmat = wv.mat(O, K);
    std::vector<S> col(static_cast<size_t>(K) * M);
    std::vector<S> dcol;
    const bool need_dx = gg.needs_grad(input);
    const bool need_dw = gg.needs_grad(weight);
    const bool need_db = gg.needs_grad(bias);
    if (need_dx) dcol.resize(static_cast<size_t>(K) * M);
    for (int n = 0; n < N; ++n) {
      Eigen::Map<const Mat> dymat(dy.data.data() + static_cast<std::int64_t>(n) * O * M,
                                  O, M);
      if (need_dw || need_dx) {
        if (need_dw)
          detail::im2col(xv.data.data() + static_cast<std::int64_t>(n) * C * H * W, C,
                         H, W, sp, col.data());
        if (need_dw) {
          Eigen::Map<const Mat> cmat(col.data(), K, M);
          gg.grad(weight).mat(O, K).noalias() += dymat * cmat.transpose();
        }
        if (need_dx) {
          Eigen::Map<Mat> dcmat(dcol.data(), K, M);
          dcmat.noalias() = wmat.transpose() * dymat;
          detail::col2im_add(dcol.data(), C, H, W, sp,
                             gg.grad(input).data.data() +
                                 static_cast<std::int64_t>(n) * C * H * W);
        }
      }
      if (need_db) {
        Tensor<S>& db = gg.grad(bias);
        for (int o = 0; o < O; ++o) db.data[o] += dymat.row(o).sum();
      }
    }
  };
  return g.op(std::move(y), {input, weight, bias}, back);
}

// Per-window maximum; backward routes to the argmax, first index in row-major
// order on ties.
template <typename S>
int maxpool2d(Graph<S>& g, int input, int window, int stride) {
  const Tensor<S>& x = g.val(input);
  if (x.rank() != 4) throw ShapeError("maxpool2d: input must be 4-d");
  if (window < 1 || stride < 1) throw ShapeError("maxpool2d: window/stride >= 1");
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (window > H || window > W)
    throw ShapeError("maxpool2d: window larger than input " + shape_str(x.shape));
  const int Ho = (H - window) / stride + 1, Wo = (W - window) / stride + 1;

  Tensor<S> y({N, C, Ho, Wo});
  auto argmax = std::make_shared<std::vector<std::int64_t>>(y.size());
  std::int64_t oi = 0;
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const S* plane = x.data.data() + (static_cast<std::int64_t>(n) * C + c) * H * W;
      for (int oy = 0; oy < Ho; ++oy)
        for (int ox = 0; ox < Wo; ++ox) {
          S best = plane[oy * stride * W + ox * stride];
          std::int64_t besti = oy * stride * W + ox * stride;
          for (int ky = 0; ky < window; ++ky)
            for (int kx = 0; kx < window; ++kx) {
              std::int64_t idx = (oy * stride + ky) * W + (ox * stride + kx);
              if (plane[idx] > best) {
                best = plane[idx];
                besti = idx;
              }
            }
          y.data[oi] = best;
          (*argmax)[oi] = (static_cast<std::int64_t>(n) * C + c) * H * W + besti;
          ++oi;
        }
    }

  auto back = [input, argmax](Graph<S>& gg, int self) {
    if (!gg.needs_grad(input)) return;
    const Tensor<S>& dy = gg.grad(self);
    Tensor<S>& dx = gg.grad(input);
    for (std::int64_t i = 0; i < dy.size(); ++i) dx.data[(*argmax)[i]] += dy.data[i];
  };
  return g.op(std::move(y), {input}, back);
}

// Across-channel local response normalization:
//   b_c = a_c / (k + (alpha/n) * sum_{c' in window(c,n)} a_{c'}^2)^beta
template <typename S>
int lrn(Graph<S>& g, int input, int n, S k, S alpha, S beta) {
  const Tensor<S>& x = g.val(input);
  if (x.rank() != 4) throw ShapeError("lrn: input must be 4-d");
  if (n < 1 || n % 2 == 0) throw ShapeError("lrn: window size must be odd");
  if (k <= 0) throw ShapeError("lrn: k must be positive");
  const int N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  const int half = n / 2;

  Tensor<S> y(x.shape);
  for (int b = 0; b < N; ++b) {
    const S* a = x.data.data() + static_cast<std::int64_t>(b) * C * HW;
    S* out = y.data.data() + static_cast<std::int64_t>(b) * C * HW;
    for (int p = 0; p < HW; ++p)
      for (int c = 0; c < C; ++c) {
        S s = 0;
        for (int c2 = std::max(0, c - half); c2 <= std::min(C - 1, c + half); ++c2)
          s += a[c2 * HW + p] * a[c2 * HW + p];
        S d = k + alpha / S(n) * s;
        out[c * HW + p] = a[c * HW + p] * std::pow(d, -beta);
      }
  }

  auto back = [input, n, k, alpha, beta, N, C, HW, half](Graph<S>& gg, int self) {
    if (!gg.needs_grad(input)) return;
    const Tensor<S>& xv = gg.val(input);
    const Tensor<S>& dy = gg.grad(self);
    Tensor<S>& dx = gg.grad(input);
    std::vector<S> denom(C);
    for (int b = 0; b < N; ++b) {
      const S* a = xv.data.data() + static_cast<std::int64_t>(b) * C * HW;
      const S* dyo = dy.data.data() + static_cast<std::int64_t>(b) * C * HW;
      S* dxo = dx.data.data() + static_cast<std::int64_t>(b) * C * HW;
      for (int p = 0; p < HW; ++p) {
        for (int c = 0; c < C; ++c) {
          S s = 0;
          for (int c2 = std::max(0, c - half); c2 <= std::min(C - 1, c + half); ++c2)
            s += a[c2 * HW + p] * a[c2 * HW + p];
          denom[c] = k + alpha / S(n) * s;
        }
        for (int c = 0; c < C; ++c) {
          S dyc = dyo[c * HW + p];
          if (dyc == S(0)) continue;
          dxo[c * HW + p] += dyc * std::pow(denom[c], -beta);
          S common = dyc * a[c * HW + p] * (-beta) *
                     std::pow(denom[c], -beta - 1) * (S(2) * alpha / S(n));
          for (int j = std::max(0, c - half); j <= std::min(C - 1, c + half); ++j)
            dxo[j * HW + p] += common * a[j * HW + p];
        }
      }
    }
  };
  return g.op(std::move(y), {input}, back);
}

template <typename S>
int relu(Graph<S>& g, int input) {
  const Tensor<S>& x = g.val(input);
  Tensor<S> y(x.shape);
  for (std::int64_t i = 0; i < x.size(); ++i) y.data[i] = x.data[i] > S(0) ? x.data[i] : S(0);
  auto back = [input](Graph<S>& gg, int self) {
    if (!gg.needs_grad(input)) return;
    const Tensor<S>& xv = gg.val(input);
    const Tensor<S>& dy = gg.grad(self);
    Tensor<S>& dx = gg.grad(input);
    for (std::int64_t i = 0; i < dy.size(); ++i)
      if (xv.data[i] > S(0)) dx.data[i] += dy.data[i];
  };
  return g.op(std::move(y), {input}, back);
}

template <typename S>
int sigmoid(Graph<S>& g, int input) {
  const Tensor<S>& x = g.val(input);
  Tensor<S> y(x.shape);
  for (std::int64_t i = 0; i < x.size(); ++i) y.data[i] = S(1) / (S(1) + std::exp(-x.data[i]));
  auto back = [input](Graph<S>& gg, int self) {
    if (!gg.needs_grad(input)) return;
    const Tensor<S>& yv = gg.val(self);
    const Tensor<S>& dy = gg.grad(self);
    Tensor<S>& dx = gg.grad(input);
    for (std::int64_t i = 0; i < dy.size(); ++i)
      dx.data[i] += dy.data[i] * yv.data[i] * (S(1) - yv.data[i]);
  };
  return g.op(std::move(y), {input}, back);
}

// Fully connected: x [B,D], w [O,D], b [O] -> [B,O].
template <typename S>
int linear(Graph<S>& g, int input, int weight, int bias) {
  const Tensor<S>& x = g.val(input);
  const Tensor<S>& w = g.val(weight);
  const Tensor<S>& b = g.val(bias);
  if (x.rank() != 2 || w.rank() != 2)
    throw ShapeError("linear: expects 2-d input and weight");
  const int B = x.dim(0), D = x.dim(1), O = w.dim(0);
  if (w.dim(1) != D)
    throw ShapeError("linear: weight " + shape_str(w.shape) + " vs input " +
                     shape_str(x.shape));
  if (b.shape != Shape{O}) throw ShapeError("linear: bad bias shape");

  Tensor<S> y({B, O});
  y.mat(B, O).noalias() = x.mat(B, D) * w.mat(O, D).transpose();
  for (int i = 0; i < B; ++i)
    y.mat(B, O).row(i) += b.mat(1, O).row(0);

  auto back = [input, weight, bias, B, D, O](Graph<S>& gg, int self) {
    const Tensor<S>& dy = gg.grad(self);
    if (gg.needs_grad(input))
      gg.grad(input).mat(B, D).noalias() += dy.mat(B, O) * gg.val(weight).mat(O, D);
    if (gg.needs_grad(weight))
      gg.grad(weight).mat(O, D).noalias() +=
          dy.mat(B, O).transpose() * gg.val(input).mat(B, D);
    if (gg.needs_grad(bias))
      gg.grad(bias).mat(1, O) += dy.mat(B, O).colwise().sum();
  };
  return g.op(std::move(y), {input, weight, bias}, back);
}

template <typename S>
int add(Graph<S>& g, int a, int b) {
  const Tensor<S>& av = g.val(a);
  const Tensor<S>& bv = g.val(b);
  check_same_shape(av, bv, "add");
  Tensor<S> y(av.shape);
  y.array() = av.array() + bv.array();
  auto back = [a, b](Graph<S>& gg, int self) {
    const Tensor<S>& dy = gg.grad(self);
    if (gg.needs_grad(a)) gg.grad(a).array() += dy.array();
    if (gg.needs_grad(b)) gg.grad(b).array() += dy.array();
  };
  return g.op(std::move(y), {a, b}, back);
}

template <typename S>
int mul(Graph<S>& g, int a, int b) {
  const Tensor<S>& av = g.val(a);
  const Tensor<S>& bv = g.val(b);
  check_same_shape(av, bv, "mul");
  Tensor<S> y(av.shape);
  y.array() = av.array() * bv.array();
  auto back = [a, b](Graph<S>& gg, int self) {
    const Tensor<S>& dy = gg.grad(self);
    if (gg.needs_grad(a)) gg.grad(a).array() += dy.array() * gg.val(b).array();
    if (gg.needs_grad(b)) gg.grad(b).array() += dy.array() * gg.val(a).array();
  };
  return g.op(std::move(y), {a, b}, back);
}

template <typename S>
int scale(Graph<S>& g, int a, S c) {
  Tensor<S> y(g.val(a).shape);
  y.array() = g.val(a).array() * c;
  auto back = [a, c](Graph<S>& gg, int self) {
    if (gg.needs_grad(a)) gg.grad(a).array() += gg.grad(self).array() * c;
  };
  return g.op(std::move(y), {a}, back);
}

template <typename S>
int reshape(Graph<S>& g, int a, Shape sh) {
  const Tensor<S>& av = g.val(a);
  if (shape_numel(sh) != av.size())
    throw ShapeError("reshape: numel mismatch " + shape_str(av.shape) + " -> " +
                     shape_str(sh));
  Tensor<S> y(sh, av.data);
  auto back = [a](Graph<S>& gg, int self) {
    if (gg.needs_grad(a)) gg.grad(a).array() += gg.grad(self).array();
  };
  return g.op(std::move(y), {a}, back);
}

// Concatenate along `axis`; all inputs equal-shaped except that axis.
template <typename S>
int concat(Graph<S>& g, const std::vector<int>& xs, int axis) {
  if (xs.empty()) throw ShapeError("concat: no inputs");
  Shape sh = g.val(xs[0]).shape;
  if (axis < 0 || axis >= static_cast<int>(sh.size()))
    throw ShapeError("concat: bad axis");
  int total = 0;
  for (int id : xs) {
    Shape s = g.val(id).shape;
    for (size_t d = 0; d < sh.size(); ++d)
      if (static_cast<int>(d) != axis && s[d] != sh[d])
        throw ShapeError("concat: incompatible shapes " + shape_str(sh) + " vs " +
                         shape_str(s));
    total += s[axis];
  }
  Shape osh = sh;
  osh[axis] = total;

  std::int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= sh[d];
  for (size_t d = axis + 1; d < sh.size(); ++d) inner *= sh[d];

  Tensor<S> y(osh);
  std::int64_t off = 0;
  for (int id : xs) {
    const Tensor<S>& v = g.val(id);
    std::int64_t ax = v.shape[axis];
    for (std::int64_t o = 0; o < outer; ++o)
      std::copy(v.data.begin() + o * ax * inner, v.data.begin() + (o + 1) * ax * inner,
                y.data.begin() + (o * total + off) * inner);
    off += ax;
  }

  auto parents = xs;
  auto back = [xs, outer, inner, total, axis](Graph<S>& gg, int self) {
    const Tensor<S>& dy = gg.grad(self);
    std::int64_t off = 0;
    for (int id : xs) {
      std::int64_t ax = gg.val(id).shape[axis];
      if (gg.needs_grad(id)) {
        Tensor<S>& dx = gg.grad(id);
        for (std::int64_t o = 0; o < outer; ++o)
          for (std::int64_t i = 0; i < ax * inner; ++i)
            dx.data[o * ax * inner + i] += dy.data[(o * total + off) * inner + i];
      }
      off += ax;
    }
  };
  return g.op(std::move(y), parents, back);
}

// Global average pooling [N,C,H,W] -> [N,C].
template <typename S>
int global_avg_pool(Graph<S>& g, int input) {
  const Tensor<S>& x = g.val(input);
  if (x.rank() != 4) throw ShapeError("global_avg_pool: input must be 4-d");
  const int N = x.dim(0), C = x.dim(1);
  const std::int64_t HW = static_cast<std::int64_t>(x.dim(2)) * x.dim(3);
  Tensor<S> y({N, C});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const S* p = x.data.data() + (static_cast<std::int64_t>(n) * C + c) * HW;
      S s = 0;
      for (std::int64_t i = 0; i < HW; ++i) s += p[i];
      y.data[n * C + c] = s / S(HW);
    }
  auto back = [input, N, C, HW](Graph<S>& gg, int self) {
    if (!gg.needs_grad(input)) return;
    const Tensor<S>& dy = gg.grad(self);
    Tensor<S>& dx = gg.grad(input);
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c) {
        S d = dy.data[n * C + c] / S(HW);
        S* p = dx.data.data() + (static_cast<std::int64_t>(n) * C + c) * HW;
        for (std::int64_t i = 0; i < HW; ++i) p[i] += d;
      }
  };
  return g.op(std::move(y), {input}, back);
}

// Channel-wise affine y = s*z + t with s,t of shape [N,C] broadcast over H,W.
template <typename S>
int channel_affine(Graph<S>& g, int z, int s, int t) {
  const Tensor<S>& zv = g.val(z);
  const Tensor<S>& sv = g.val(s);
  const Tensor<S>& tv = g.val(t);
  if (zv.rank() != 4) throw ShapeError("channel_affine: z must be 4-d");
  const int N = zv.dim(0), C = zv.dim(1);
  const std::int64_t HW = static_cast<std::int64_t>(zv.dim(2)) * zv.dim(3);
  if (sv.shape != Shape{N, C} || tv.shape != Shape{N, C})
    throw ShapeError("channel_affine: scale/shift must be [N,C]");
  Tensor<S> y(zv.shape);
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      std::int64_t base = (static_cast<std::int64_t>(n) * C + c) * HW;
      S sc = sv.data[n * C + c], sh = tv.data[n * C + c];
      for (std::int64_t i = 0; i < HW; ++i) y.data[base + i] = sc * zv.data[base + i] + sh;
    }
  auto back = [z, s, t, N, C, HW](Graph<S>& gg, int self) {
    const Tensor<S>& dy = gg.grad(self);
    const Tensor<S>& zv = gg.val(z);
    const Tensor<S>& sv = gg.val(s);
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c) {
        std::int64_t base = (static_cast<std::int64_t>(n) * C + c) * HW;
        if (gg.needs_grad(z)) {
          S sc = sv.data[n * C + c];
          Tensor<S>& dz = gg.grad(z);
          for (std::int64_t i = 0; i < HW; ++i) dz.data[base + i] += sc * dy.data[base + i];
        }
        if (gg.needs_grad(s)) {
          S acc = 0;
          for (std::int64_t i = 0; i < HW; ++i) acc += dy.data[base + i] * zv.data[base + i];
          gg.grad(s).data[n * C + c] += acc;
        }
        if (gg.needs_grad(t)) {
          S acc = 0;
          for (std::int64_t i = 0; i < HW; ++i) acc += dy.data[base + i];
          gg.grad(t).data[n * C + c] += acc;
        }
      }
  };
  return g.op(std::move(y), {z, s, t}, back);
}

// Inverted dropout; pass the RNG so runs stay seed-deterministic.
template <typename S>
int dropout(Graph<S>& g, int input, double rate, std::mt19937_64& rng) {
  const Tensor<S>& x = g.val(input);
  auto mask = std::make_shared<std::vector<S>>(x.size());
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const S keep_scale = S(1.0 / (1.0 - rate));
  Tensor<S> y(x.shape);
  for (std::int64_t i = 0; i < x.size(); ++i) {
    (*mask)[i] = u(rng) >= rate ? keep_scale : S(0);
    y.data[i] = x.data[i] * (*mask)[i];
  }
  auto back = [input, mask](Graph<S>& gg, int self) {
    if (!gg.needs_grad(input)) return;
    const Tensor<S>& dy = gg.grad(self);
    Tensor<S>& dx = gg.grad(input);
    for (std::int64_t i = 0; i < dy.size(); ++i) dx.data[i] += dy.data[i] * (*mask)[i];
  };
  return g.op(std::move(y), {input}, back);
}

// Column slice of a [B,K] matrix: columns [start, start+len).
template <typename S>
int slice_cols(Graph<S>& g, int input, int start, int len) {
  const Tensor<S>& x = g.val(input);
  if (x.rank() != 2) throw ShapeError("slice_cols: input must be 2-d");
  const int B = x.dim(0), K = x.dim(1);
  if (start < 0 || len < 1 || start + len > K) throw ShapeError("slice_cols: bad range");
  Tensor<S> y({B, len});
  for (int i = 0; i < B; ++i)
    for (int j = 0; j < len; ++j) y.data[i * len + j] = x.data[i * K + start + j];
  auto back = [input, start, len, B, K](Graph<S>& gg, int self) {
    if (!gg.needs_grad(input)) return;
    const Tensor<S>& dy = gg.grad(self);
    Tensor<S>& dx = gg.grad(input);
    for (int i = 0; i < B; ++i)
      for (int j = 0; j < len; ++j) dx.data[i * K + start + j] += dy.data[i * len + j];
  };
  return g.op(std::move(y), {input}, back);
}

// Mean negative log-likelihood over K-way softmax rows; labels in [0,K).
// softmax cross-entropy (K=2) and the instance embedding loss (K=#domains)
// are both instances of this.
template <typename S>
int softmax_ce(Graph<S>& g, int scores, const std::vector<int>& labels) {
  const Tensor<S>& s = g.val(scores);
  if (s.rank() != 2) throw ShapeError("softmax_ce: scores must be [B,K]");
  const int B = s.dim(0), K = s.dim(1);
  if (static_cast<int>(labels.size()) != B)
    throw ShapeError("softmax_ce: need one label per row");
  for (int l : labels)
    if (l < 0 || l >= K)
      throw std::invalid_argument("softmax_ce: label " + std::to_string(l) +
                                  " outside [0," + std::to_string(K) + ")");
  S loss = 0;
  for (int i = 0; i < B; ++i) {
    const S* row = s.data.data() + static_cast<std::int64_t>(i) * K;
    S m = row[0];
    for (int k = 1; k < K; ++k) m = std::max(m, row[k]);
    S lse = 0;
    for (int k = 0; k < K; ++k) lse += std::exp(row[k] - m);
    loss += (m + std::log(lse)) - row[labels[i]];
  }
  loss /= S(B);
  if (!std::isfinite(static_cast<double>(loss)))
    throw NumericError("softmax_ce: non-finite loss");

  auto labs = labels;
  auto back = [scores, labs, B, K](Graph<S>& gg, int self) {
    if (!gg.needs_grad(scores)) return;
    const Tensor<S>& sv = gg.val(scores);
    const S d = gg.grad(self).data[0] / S(B);
    Tensor<S>& ds = gg.grad(scores);
    for (int i = 0; i < B; ++i) {
      const S* row = sv.data.data() + static_cast<std::int64_t>(i) * K;
      S m = row[0];
      for (int k = 1; k < K; ++k) m = std::max(m, row[k]);
      S z = 0;
      for (int k = 0; k < K; ++k) z += std::exp(row[k] - m);
      for (int k = 0; k < K; ++k) {
        S p = std::exp(row[k] - m) / z;
        ds.data[static_cast<std::int64_t>(i) * K + k] +=
            d * (p - (k == labs[i] ? S(1) : S(0)));
      }
    }
  };
  return g.op(Tensor<S>({1}, {loss}), {scores}, back);
}

// Bilinear RoIAlign. features [1,C,H,W], boxes in image coordinates scaled by
// `spatial_scale` into feature coordinates, r x r bins with 2x2 sample points
// averaged per bin. Sample points are clamped to the feature grid.
template <typename S>
int roialign(Graph<S>& g, int features, const std::vector<BBox>& boxes,
             double spatial_scale, int r) {
  const Tensor<S>& f = g.val(features);
  if (f.rank() != 4 || f.dim(0) != 1)
    throw ShapeError("roialign: features must be [1,C,H,W]");
  if (r < 1) throw ShapeError("roialign: output size must be >= 1");
  const int C = f.dim(1), H = f.dim(2), W = f.dim(3);
  const int B = static_cast<int>(boxes.size());

  struct Tap {
    int idx[4];
    S w[4];
  };
  // One tap per (box, bin_y, bin_x, sample); spatial part only, shared by all
  // channels.
  auto taps = std::make_shared<std::vector<Tap>>(static_cast<size_t>(B) * r * r * 4);
  size_t ti = 0;
  for (int bi = 0; bi < B; ++bi) {
    const BBox& bx = boxes[bi];
    if (bx.w <= 0 || bx.h <= 0) throw ShapeError("roialign: box with non-positive size");
    double fx = bx.x * spatial_scale, fy = bx.y * spatial_scale;
    double fw = bx.w * spatial_scale, fh = bx.h * spatial_scale;
    if (fx >= W || fy >= H || fx + fw <= 0 || fy + fh <= 0)
      throw ShapeError("roialign: box entirely outside feature map");
    double bw = fw / r, bh = fh / r;
    for (int by = 0; by < r; ++by)
      for (int bxi = 0; bxi < r; ++bxi)
        for (int sy = 0; sy < 2; ++sy)
          for (int sx = 0; sx < 2; ++sx) {
            double py = fy + (by + (sy + 0.5) / 2.0) * bh;
            double px = fx + (bxi + (sx + 0.5) / 2.0) * bw;
            py = std::clamp(py, 0.0, double(H - 1));
            px = std::clamp(px, 0.0, double(W - 1));
            int y0 = static_cast<int>(py), x0 = static_cast<int>(px);
            int y1 = std::min(y0 + 1, H - 1), x1 = std::min(x0 + 1, W - 1);
            double ly = py - y0, lx = px - x0;
            Tap& t = (*taps)[ti++];
            t.idx[0] = y0 * W + x0;
            t.idx[1] = y0 * W + x1;
            t.idx[2] = y1 * W + x0;
            t.idx[3] = y1 * W + x1;
            t.w[0] = S((1 - ly) * (1 - lx));
            t.w[1] = S((1 - ly) * lx);
            t.w[2] = S(ly * (1 - lx));
            t.w[3] = S(ly * lx);
          }
  }

  Tensor<S> y({B, C, r, r});
  for (int bi = 0; bi < B; ++bi)
    for (int c = 0; c < C; ++c) {
      const S* plane = f.data.data() + static_cast<std::int64_t>(c) * H * W;
      S* out = y.data.data() + ((static_cast<std::int64_t>(bi) * C + c) * r * r);
      for (int bin = 0; bin < r * r; ++bin) {
        S acc = 0;
        for (int sp = 0; sp < 4; ++sp) {
          const Tap& t = (*taps)[(static_cast<size_t>(bi) * r * r + bin) * 4 + sp];
          acc += t.w[0] * plane[t.idx[0]] + t.w[1] * plane[t.idx[1]] +
                 t.w[2] * plane[t.idx[2]] + t.w[3] * plane[t.idx[3]];
        }
        out[bin] = acc / S(4);
      }
    }

  auto back = [features, taps, B, C, H, W, r](Graph<S>& gg, int self) {
    if (!gg.needs_grad(features)) return;
    const Tensor<S>& dy = gg.grad(self);
    Tensor<S>& df = gg.grad(features);
    for (int bi = 0; bi < B; ++bi)
      for (int c = 0; c < C; ++c) {
        S* plane = df.data.data() + static_cast<std::int64_t>(c) * H * W;
        const S* dout = dy.data.data() + ((static_cast<std::int64_t>(bi) * C + c) * r * r);
        for (int bin = 0; bin < r * r; ++bin) {
          S d = dout[bin] / S(4);
          for (int sp = 0; sp < 4; ++sp) {
            const Tap& t = (*taps)[(static_cast<size_t>(bi) * r * r + bin) * 4 + sp];
            for (int q = 0; q < 4; ++q) plane[t.idx[q]] += d * t.w[q];
          }
        }
      }
  };
  return g.op(std::move(y), {features}, back);
}

}  // namespace cat

#endif

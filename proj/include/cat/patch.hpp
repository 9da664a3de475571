#ifndef CAT_PATCH_HPP
#define CAT_PATCH_HPP

#include "cat/bbox.hpp"
#include "cat/tensor.hpp"

namespace cat {

// Search region: 3x the target size, centered on the target.
inline BBox search_region(const BBox& target, double context = 3.0) {
  BBox r;
  r.w = target.w * context;
  r.h = target.h * context;
  r.x = target.cx() - r.w / 2;
  r.y = target.cy() - r.h / 2;
  return r;
}

// Bilinear crop-and-resize of region to side x side; samples outside the
// image are clamped to the border.
template <typename S>
Tensor<S> crop_resize(const Tensor<S>& img, const BBox& region, int side) {
  if (img.rank() != 3) throw ShapeError("crop_resize: image must be [C,H,W]");
  const int C = img.dim(0), H = img.dim(1), W = img.dim(2);
  Tensor<S> out({C, side, side});
  for (int oy = 0; oy < side; ++oy) {
    double sy = region.y + (oy + 0.5) / side * region.h - 0.5;
    sy = std::clamp(sy, 0.0, double(H - 1));
    int y0 = static_cast<int>(sy), y1 = std::min(y0 + 1, H - 1);
    double ly = sy - y0;
    for (int ox = 0; ox < side; ++ox) {
      double sx = region.x + (ox + 0.5) / side * region.w - 0.5;
      sx = std::clamp(sx, 0.0, double(W - 1));
      int x0 = static_cast<int>(sx), x1 = std::min(x0 + 1, W - 1);
      double lx = sx - x0;
      for (int c = 0; c < C; ++c) {
        const S* p = img.data.data() + static_cast<std::int64_t>(c) * H * W;
        double v = (1 - ly) * ((1 - lx) * p[y0 * W + x0] + lx * p[y0 * W + x1]) +
                   ly * ((1 - lx) * p[y1 * W + x0] + lx * p[y1 * W + x1]);
        out.data[(static_cast<std::int64_t>(c) * side + oy) * side + ox] = S(v);
      }
    }
  }
  return out;
}

// Replicate a single-channel image to three channels.
template <typename S>
Tensor<S> replicate3(const Tensor<S>& img) {
  if (img.rank() != 3 || img.dim(0) != 1)
    throw ShapeError("replicate3: expects [1,H,W]");
  Tensor<S> out({3, img.dim(1), img.dim(2)});
  for (int c = 0; c < 3; ++c)
    std::copy(img.data.begin(), img.data.end(), out.data.begin() + c * img.size());
  return out;
}

// Map a box from image coordinates into patch coordinates of a region
// resampled to side x side, and back.
inline BBox image_to_patch(const BBox& b, const BBox& region, int side) {
  double sx = side / region.w, sy = side / region.h;
  return BBox{(b.x - region.x) * sx, (b.y - region.y) * sy, b.w * sx, b.h * sy};
}

inline BBox patch_to_image(const BBox& b, const BBox& region, int side) {
  double sx = region.w / side, sy = region.h / side;
  return BBox{b.x * sx + region.x, b.y * sy + region.y, b.w * sx, b.h * sy};
}

}  // namespace cat

#endif

#ifndef CAT_BBOX_HPP
#define CAT_BBOX_HPP

#include <algorithm>
#include <cmath>

namespace cat {

// Axis-aligned box, (x, y) top-left corner, sizes in pixels.
struct BBox {
  double x = 0, y = 0, w = 0, h = 0;

  double area() const { return std::max(0.0, w) * std::max(0.0, h); }
  double cx() const { return x + w / 2; }
  double cy() const { return y + h / 2; }

  BBox clipped(double W, double H, double min_size = 1.0) const {
    BBox b = *this;
    b.w = std::clamp(b.w, min_size, W);
    b.h = std::clamp(b.h, min_size, H);
    b.x = std::clamp(b.x, 0.0, W - b.w);
    b.y = std::clamp(b.y, 0.0, H - b.h);
    return b;
  }
};

inline double iou(const BBox& a, const BBox& b) {
  double ix = std::max(0.0, std::min(a.x + a.w, b.x + b.w) - std::max(a.x, b.x));
  double iy = std::max(0.0, std::min(a.y + a.h, b.y + b.h) - std::max(a.y, b.y));
  double inter = ix * iy;
  double uni = a.area() + b.area() - inter;
  return uni > 0 ? inter / uni : 0.0;
}

inline double center_error(const BBox& a, const BBox& b) {
  return std::hypot(a.cx() - b.cx(), a.cy() - b.cy());
}

}  // namespace cat

#endif

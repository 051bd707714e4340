#pragma once

#include <algorithm>
#include <array>
#include <cmath>

#include "relmatch/errors.hpp"

namespace relmatch {

// Axis-aligned box, top-left corner plus size, in image-fraction units.
// All geometry in the library lives in this representation; pixel
// conversions happen only at I/O boundaries.
struct Box {
  double x = 0.0;
  double y = 0.0;
  double w = 0.0;
  double h = 0.0;

  double area() const { return w * h; }
  double cx() const { return x + 0.5 * w; }
  double cy() const { return y + 0.5 * h; }

  bool operator==(const Box&) const = default;
};

inline bool box_valid(const Box& b) {
  return b.w >= 0.0 && b.h >= 0.0 && b.x >= 0.0 && b.y >= 0.0 &&
         b.x + b.w <= 1.0 && b.y + b.h <= 1.0;
}

inline Box clamp01(const Box& b) {
  Box r;
  r.x = std::clamp(b.x, 0.0, 1.0);
  r.y = std::clamp(b.y, 0.0, 1.0);
  r.w = std::clamp(b.w, 0.0, 1.0 - r.x);
  r.h = std::clamp(b.h, 0.0, 1.0 - r.y);
  return r;
}

inline double intersection_area(const Box& a, const Box& b) {
  const double ix = std::max(0.0, std::min(a.x + a.w, b.x + b.w) - std::max(a.x, b.x));
  const double iy = std::max(0.0, std::min(a.y + a.h, b.y + b.h) - std::max(a.y, b.y));
  return ix * iy;
}

// Intersection over union; 0 when the union has no area.
inline double iou(const Box& a, const Box& b) {
  const double inter = intersection_area(a, b);
  const double uni = a.area() + b.area() - inter;
  if (uni <= 0.0) return 0.0;
  return inter / uni;
}

// Intersection over the area of `a` (containment measure).
inline double ioa(const Box& a, const Box& b) {
  const double aa = a.area();
  if (aa <= 0.0) return 0.0;
  return intersection_area(a, b) / aa;
}

// Spatial feature of box j relative to box i:
// [(x_j - cx_i)/w_i, (y_j - cy_i)/h_i,
//  (x_j + w_j - cx_i)/w_i, (y_j + h_j - cy_i)/h_i,
//  area_j / area_i]
inline std::array<double, 5> relative_spatial(const Box& bi, const Box& bj) {
  if (bi.w <= 0.0 || bi.h <= 0.0)
    throw DegenerateBox("relative_spatial: reference box has zero extent");
  const double cx = bi.cx();
  const double cy = bi.cy();
  return {(bj.x - cx) / bi.w, (bj.y - cy) / bi.h,
          (bj.x + bj.w - cx) / bi.w, (bj.y + bj.h - cy) / bi.h,
          (bj.w * bj.h) / (bi.w * bi.h)};
}

// Location feature [x, y, w, h, w*h].
inline std::array<double, 5> location_vector(const Box& b) {
  return {b.x, b.y, b.w, b.h, b.w * b.h};
}

}  // namespace relmatch

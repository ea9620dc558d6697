#pragma once

#include <algorithm>
#include <cmath>

#include "flare/base/tensor.hpp"

namespace flare::env {

/// Anti-aliased capsule (segment with round caps): intensity 1 inside,
/// linear falloff over one pixel at the rim. Coordinates in pixels,
/// y increasing downward. Draws with max-blend so shapes compose.
inline void draw_segment(Tensor<float>& img, double x0, double y0, double x1, double y1,
                         double radius) {
  const int h = img.dim(0), w = img.dim(1);
  const double dx = x1 - x0, dy = y1 - y0;
  const double len2 = dx * dx + dy * dy;
  const int lo_y = std::max(0, static_cast<int>(std::floor(std::min(y0, y1) - radius - 1)));
  const int hi_y = std::min(h - 1, static_cast<int>(std::ceil(std::max(y0, y1) + radius + 1)));
  const int lo_x = std::max(0, static_cast<int>(std::floor(std::min(x0, x1) - radius - 1)));
  const int hi_x = std::min(w - 1, static_cast<int>(std::ceil(std::max(x0, x1) + radius + 1)));
  for (int py = lo_y; py <= hi_y; ++py)
    for (int px = lo_x; px <= hi_x; ++px) {
      const double cx = px + 0.5, cy = py + 0.5;
      double t = 0.0;
      if (len2 > 0.0)
        t = std::clamp(((cx - x0) * dx + (cy - y0) * dy) / len2, 0.0, 1.0);
      const double qx = x0 + t * dx - cx, qy = y0 + t * dy - cy;
      const double dist = std::sqrt(qx * qx + qy * qy);
      const double v = std::clamp(radius + 0.5 - dist, 0.0, 1.0);
      float& cell = img.at(py, px);
      cell = std::max(cell, static_cast<float>(v));
    }
}

/// Axis-aligned filled rectangle with anti-aliased edges (pixel-coverage
/// weighting). Corners in pixel coordinates, y downward.
inline void draw_rect(Tensor<float>& img, double x0, double y0, double x1, double y1) {
  const int h = img.dim(0), w = img.dim(1);
  const int lo_y = std::max(0, static_cast<int>(std::floor(y0)));
  const int hi_y = std::min(h - 1, static_cast<int>(std::ceil(y1)) - 1 + 1);
  const int lo_x = std::max(0, static_cast<int>(std::floor(x0)));
  const int hi_x = std::min(w - 1, static_cast<int>(std::ceil(x1)) - 1 + 1);
  for (int py = lo_y; py <= hi_y; ++py)
    for (int px = lo_x; px <= hi_x; ++px) {
      const double cover_x = std::clamp(std::min<double>(px + 1, x1) - std::max<double>(px, x0), 0.0, 1.0);
      const double cover_y = std::clamp(std::min<double>(py + 1, y1) - std::max<double>(py, y0), 0.0, 1.0);
      const double v = cover_x * cover_y;
      float& cell = img.at(py, px);
      cell = std::max(cell, static_cast<float>(v));
    }
}

}  // namespace flare::env

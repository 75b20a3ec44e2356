/* Copyright (c) 2026 The picodet-cpp Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License. */

#include "picodet/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace picodet {

namespace {

double intersection_area(const Box& a, const Box& b) {
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0 || ih <= 0) return 0.0;
  return iw * ih;
}

}  // namespace

double iou(const Box& a, const Box& b) {
  const double inter = intersection_area(a, b);
  const double uni = a.area() + b.area() - inter;
  if (uni <= 0) return 0.0;  // zero-area boxes
  return inter / uni;
}

double giou(const Box& a, const Box& b) {
  const double inter = intersection_area(a, b);
  const double uni = a.area() + b.area() - inter;
  const double cw = std::max(a.x2, b.x2) - std::min(a.x1, b.x1);
  const double ch = std::max(a.y2, b.y2) - std::min(a.y1, b.y1);
  const double enclose = cw * ch;
  const double i = uni > 0 ? inter / uni : 0.0;
  if (enclose <= 0) return i;
  return i - (enclose - uni) / enclose;
}

double giou_with_grad(const Box& p, const Box& g, BoxGrad& grad) {
  const double iw = std::min(p.x2, g.x2) - std::max(p.x1, g.x1);
  const double ih = std::min(p.y2, g.y2) - std::max(p.y1, g.y1);
  const double inter = (iw > 0 && ih > 0) ? iw * ih : 0.0;
  const double pa = p.area(), ga = g.area();
  const double uni = pa + ga - inter;
  const double cw = std::max(p.x2, g.x2) - std::min(p.x1, g.x1);
  const double ch = std::max(p.y2, g.y2) - std::min(p.y1, g.y1);
  const double enclose = cw * ch;

  // Partials of intersection w.r.t. pred coords (subgradient at ties).
  const bool overlap = inter > 0;
  const double dI_dx1 = (overlap && p.x1 >= g.x1) ? -ih : 0.0;
  const double dI_dy1 = (overlap && p.y1 >= g.y1) ? -iw : 0.0;
  const double dI_dx2 = (overlap && p.x2 <= g.x2) ? ih : 0.0;
  const double dI_dy2 = (overlap && p.y2 <= g.y2) ? iw : 0.0;

  const double ph = p.height(), pw = p.width();
  const double dPa_dx1 = -ph, dPa_dy1 = -pw, dPa_dx2 = ph, dPa_dy2 = pw;

  const double dU_dx1 = dPa_dx1 - dI_dx1, dU_dy1 = dPa_dy1 - dI_dy1;
  const double dU_dx2 = dPa_dx2 - dI_dx2, dU_dy2 = dPa_dy2 - dI_dy2;

  const double dC_dx1 = (p.x1 <= g.x1) ? -ch : 0.0;
  const double dC_dy1 = (p.y1 <= g.y1) ? -cw : 0.0;
  const double dC_dx2 = (p.x2 >= g.x2) ? ch : 0.0;
  const double dC_dy2 = (p.y2 >= g.y2) ? cw : 0.0;

  const double u2 = uni * uni;
  const double c2 = enclose * enclose;
  auto diou = [&](double dI, double dU) {
    return uni > 0 ? (dI * uni - inter * dU) / u2 : 0.0;
  };
  auto dpen = [&](double dU, double dC) {
    // d/dp of (C - U)/C = (dC*U - C*dU)... derivative of (1 - U/C) = -(dU*C - U*dC)/C^2
    return enclose > 0 ? -(dU * enclose - uni * dC) / c2 : 0.0;
  };
  grad.dx1 = diou(dI_dx1, dU_dx1) - dpen(dU_dx1, dC_dx1);
  grad.dy1 = diou(dI_dy1, dU_dy1) - dpen(dU_dy1, dC_dy1);
  grad.dx2 = diou(dI_dx2, dU_dx2) - dpen(dU_dx2, dC_dx2);
  grad.dy2 = diou(dI_dy2, dU_dy2) - dpen(dU_dy2, dC_dy2);

  const double i = uni > 0 ? inter / uni : 0.0;
  if (enclose <= 0) return i;
  return i - (enclose - uni) / enclose;
}

std::vector<AnchorPoint> make_grid(const std::vector<std::pair<int, int>>& level_shapes,
                                   const std::vector<double>& strides) {
  if (level_shapes.size() != strides.size())
    throw std::invalid_argument("make_grid: level_shapes/strides length mismatch");
  std::vector<AnchorPoint> points;
  for (size_t l = 0; l < level_shapes.size(); ++l) {
    const auto [h, w] = level_shapes[l];
    const double s = strides[l];
    points.reserve(points.size() + size_t(h) * size_t(w));
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j)
        points.push_back({(j + 0.5) * s, (i + 0.5) * s, s, static_cast<int>(l)});
  }
  return points;
}

DistanceTarget encode_distances(const AnchorPoint& p, const Box& gt) {
  if (!(p.cx > gt.x1 && p.cx < gt.x2 && p.cy > gt.y1 && p.cy < gt.y2))
    throw std::invalid_argument("encode_distances: point not strictly inside box");
  return {(p.cx - gt.x1) / p.stride, (p.cy - gt.y1) / p.stride,
          (gt.x2 - p.cx) / p.stride, (gt.y2 - p.cy) / p.stride};
}

Box decode_distances(const AnchorPoint& p, const DistanceTarget& d) {
  return {p.cx - d.l * p.stride, p.cy - d.t * p.stride,
          p.cx + d.r * p.stride, p.cy + d.b * p.stride};
}

}  // namespace picodet

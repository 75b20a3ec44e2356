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

#pragma once

#include <utility>
#include <vector>

namespace picodet {

// Axis-aligned box, continuous pixel xyxy. The one canonical box form;
// cxcywh / xywh appear only at I/O boundaries.
struct Box {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }
  double cx() const { return 0.5 * (x1 + x2); }
  double cy() const { return 0.5 * (y1 + y2); }
  bool valid() const { return x1 <= x2 && y1 <= y2; }
  bool contains(double px, double py) const {
    return px >= x1 && px <= x2 && py >= y1 && py <= y2;
  }
};

struct LabeledBox {
  Box box;
  int class_id = 0;
};

// FCOS-style prediction location at a feature-map cell center.
struct AnchorPoint {
  double cx = 0, cy = 0;
  double stride = 0;
  int level = 0;
};

// Stride-normalized left/top/right/bottom distances from a point to box edges.
struct DistanceTarget {
  double l = 0, t = 0, r = 0, b = 0;
};

double iou(const Box& a, const Box& b);
double giou(const Box& a, const Box& b);

// Analytic gradient of giou(pred, gt) w.r.t. pred's four coordinates.
struct BoxGrad {
  double dx1 = 0, dy1 = 0, dx2 = 0, dy2 = 0;
};
double giou_with_grad(const Box& pred, const Box& gt, BoxGrad& grad);

// H*W points per level at cell centers, level-major, row-major within a level.
std::vector<AnchorPoint> make_grid(const std::vector<std::pair<int, int>>& level_shapes,
                                   const std::vector<double>& strides);

// Point must lie strictly inside gt; throws otherwise.
DistanceTarget encode_distances(const AnchorPoint& p, const Box& gt);
Box decode_distances(const AnchorPoint& p, const DistanceTarget& d);

}  // namespace picodet

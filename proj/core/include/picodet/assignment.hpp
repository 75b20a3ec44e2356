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

#include <vector>

#include "picodet/geometry.hpp"
#include "picodet/losses.hpp"

namespace picodet {

enum class AssignMode { kAtss, kSimOtaOriginal, kSimOtaModified };

struct AssignerConfig {
  int top_n = 10;             // candidates summed for dynamic k
  double cost_lambda = 6.0;   // GIoU weight in the cost matrix
  double center_radius = 2.5; // strides
  int atss_topk = 9;
  double atss_cell_scale = 5.0;  // anchor cell box side = stride * scale
  AssignMode mode = AssignMode::kSimOtaModified;
};

// Per-anchor assignment. matched_gt < 0 means negative.
struct AssignmentResult {
  std::vector<int> matched_gt;
  std::vector<double> quality;
  std::vector<int> class_target;
  std::vector<DistanceTarget> distance_target;

  int num_positives() const {
    int n = 0;
    for (int g : matched_gt) n += g >= 0;
    return n;
  }
};

// Dense [num_candidates x num_gt] costs with a map back to anchor ids.
// Non-candidate entries carry the kSentinel cost.
struct CostMatrix {
  static constexpr double kSentinel = 1e9;
  std::vector<int> anchor_ids;  // candidate row -> anchor index
  int num_gt = 0;
  std::vector<double> cost;

  double& at(int cand, int gt) { return cost[size_t(cand) * num_gt + gt]; }
  double at(int cand, int gt) const { return cost[size_t(cand) * num_gt + gt]; }
};

// mask[a * num_gt + g]: anchor a is a candidate for gt g — point inside the
// box, or within center_radius * stride of the box center (Chebyshev).
std::vector<char> center_prior_candidates(const std::vector<AnchorPoint>& anchors,
                                          const std::vector<LabeledBox>& gts,
                                          const AssignerConfig& cfg);

// k = max(1, floor(sum of top-n ious)), clamped to the candidate count.
int dynamic_k(const std::vector<double>& ious, const AssignerConfig& cfg);

CostMatrix simota_cost(const std::vector<std::vector<double>>& pred_scores,
                       const std::vector<Box>& pred_boxes,
                       const std::vector<AnchorPoint>& anchors,
                       const std::vector<LabeledBox>& gts,
                       const std::vector<char>& candidates,
                       const AssignerConfig& cfg);

AssignmentResult simota_assign(const std::vector<std::vector<double>>& pred_scores,
                               const std::vector<Box>& pred_boxes,
                               const std::vector<AnchorPoint>& anchors,
                               const std::vector<LabeledBox>& gts,
                               const AssignerConfig& cfg);

AssignmentResult atss_assign(const std::vector<AnchorPoint>& anchors,
                             const std::vector<LabeledBox>& gts,
                             const AssignerConfig& cfg);

}  // namespace picodet

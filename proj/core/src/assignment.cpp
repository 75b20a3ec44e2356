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

#include "picodet/assignment.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace picodet {

namespace {

// Raw point-to-edge distances, stride-normalized. Unlike encode_distances this
// is total: components go negative when the point falls outside the box; the
// DFL target clamp handles that downstream.
DistanceTarget raw_distances(const AnchorPoint& p, const Box& gt) {
  return {(p.cx - gt.x1) / p.stride, (p.cy - gt.y1) / p.stride,
          (gt.x2 - p.cx) / p.stride, (gt.y2 - p.cy) / p.stride};
}

AssignmentResult empty_result(size_t num_anchors) {
  AssignmentResult r;
  r.matched_gt.assign(num_anchors, -1);
  r.quality.assign(num_anchors, 0.0);
  r.class_target.assign(num_anchors, -1);
  r.distance_target.assign(num_anchors, DistanceTarget{});
  return r;
}

}  // namespace

std::vector<char> center_prior_candidates(const std::vector<AnchorPoint>& anchors,
                                          const std::vector<LabeledBox>& gts,
                                          const AssignerConfig& cfg) {
  if (anchors.empty()) throw std::invalid_argument("center_prior_candidates: no anchors");
  std::vector<char> mask(anchors.size() * gts.size(), 0);
  for (size_t a = 0; a < anchors.size(); ++a) {
    const auto& p = anchors[a];
    for (size_t g = 0; g < gts.size(); ++g) {
      const Box& box = gts[g].box;
      const bool inside = box.contains(p.cx, p.cy);
      const double r = cfg.center_radius * p.stride;
      const bool near_center =
          std::abs(p.cx - box.cx()) <= r && std::abs(p.cy - box.cy()) <= r;
      mask[a * gts.size() + g] = inside || near_center;
    }
  }
  return mask;
}

int dynamic_k(const std::vector<double>& ious, const AssignerConfig& cfg) {
  if (ious.empty()) throw std::invalid_argument("dynamic_k: no candidates");
  std::vector<double> sorted = ious;
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  const size_t n = std::min(sorted.size(), size_t(cfg.top_n));
  double sum = std::accumulate(sorted.begin(), sorted.begin() + long(n), 0.0);
  int k = std::max(1, static_cast<int>(std::floor(sum)));
  return std::min(k, static_cast<int>(ious.size()));
}

CostMatrix simota_cost(const std::vector<std::vector<double>>& pred_scores,
                       const std::vector<Box>& pred_boxes,
                       const std::vector<AnchorPoint>& anchors,
                       const std::vector<LabeledBox>& gts,
                       const std::vector<char>& candidates,
                       const AssignerConfig& cfg) {
  CostMatrix cm;
  cm.num_gt = static_cast<int>(gts.size());
  for (size_t a = 0; a < anchors.size(); ++a) {
    bool any = false;
    for (size_t g = 0; g < gts.size(); ++g) any |= candidates[a * gts.size() + g] != 0;
    if (any) cm.anchor_ids.push_back(static_cast<int>(a));
  }
  cm.cost.assign(cm.anchor_ids.size() * gts.size(), CostMatrix::kSentinel);
  LossConfig lcfg;  // cost uses default VFL parameters
  for (size_t row = 0; row < cm.anchor_ids.size(); ++row) {
    const size_t a = size_t(cm.anchor_ids[row]);
    for (size_t g = 0; g < gts.size(); ++g) {
      if (!candidates[a * gts.size() + g]) continue;
      const double i = iou(pred_boxes[a], gts[g].box);
      const double p = pred_scores[a][size_t(gts[g].class_id)];
      double c;
      if (cfg.mode == AssignMode::kSimOtaOriginal) {
        const double pc = std::min(std::max(p, lcfg.eps), 1.0 - lcfg.eps);
        c = -std::log(pc) + cfg.cost_lambda * (1.0 - i);
      } else {
        c = varifocal_loss(p, i, lcfg) + cfg.cost_lambda * giou_loss(pred_boxes[a], gts[g].box);
      }
      cm.at(static_cast<int>(row), static_cast<int>(g)) = c;
    }
  }
  return cm;
}

AssignmentResult simota_assign(const std::vector<std::vector<double>>& pred_scores,
                               const std::vector<Box>& pred_boxes,
                               const std::vector<AnchorPoint>& anchors,
                               const std::vector<LabeledBox>& gts,
                               const AssignerConfig& cfg) {
  if (cfg.mode == AssignMode::kAtss)
    throw std::invalid_argument("simota_assign: config is not a SimOTA mode");
  AssignmentResult result = empty_result(anchors.size());
  if (gts.empty()) return result;

  const auto candidates = center_prior_candidates(anchors, gts, cfg);
  const auto cm = simota_cost(pred_scores, pred_boxes, anchors, gts, candidates, cfg);

  // Per GT: dynamic k from candidate IoUs, then the k cheapest candidates.
  // selected[a] -> (gt, cost) with min-cost conflict resolution.
  std::vector<int> chosen_gt(anchors.size(), -1);
  std::vector<double> chosen_cost(anchors.size(), CostMatrix::kSentinel);
  for (size_t g = 0; g < gts.size(); ++g) {
    std::vector<int> cand_rows;
    std::vector<double> cand_ious;
    for (size_t row = 0; row < cm.anchor_ids.size(); ++row) {
      const size_t a = size_t(cm.anchor_ids[row]);
      if (!candidates[a * gts.size() + g]) continue;
      cand_rows.push_back(static_cast<int>(row));
      cand_ious.push_back(iou(pred_boxes[a], gts[g].box));
    }
    if (cand_rows.empty()) continue;  // GT gets no positives
    const int k = dynamic_k(cand_ious, cfg);
    // Sort candidates by (cost, anchor index) for deterministic ties.
    std::vector<int> order(cand_rows.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int x, int y) {
      const double cx = cm.at(cand_rows[size_t(x)], static_cast<int>(g));
      const double cy = cm.at(cand_rows[size_t(y)], static_cast<int>(g));
      if (cx != cy) return cx < cy;
      return cm.anchor_ids[size_t(cand_rows[size_t(x)])] < cm.anchor_ids[size_t(cand_rows[size_t(y)])];
    });
    for (int t = 0; t < k; ++t) {
      const int row = cand_rows[size_t(order[size_t(t)])];
      const size_t a = size_t(cm.anchor_ids[size_t(row)]);
      const double c = cm.at(row, static_cast<int>(g));
      // Conflict rule: keep the cheapest GT; ties go to the lower GT index
      // (the earlier claim wins because of strict <).
      if (c < chosen_cost[a]) {
        chosen_cost[a] = c;
        chosen_gt[a] = static_cast<int>(g);
      }
    }
  }

  for (size_t a = 0; a < anchors.size(); ++a) {
    const int g = chosen_gt[a];
    if (g < 0) continue;
    result.matched_gt[a] = g;
    result.quality[a] = iou(pred_boxes[a], gts[size_t(g)].box);
    result.class_target[a] = gts[size_t(g)].class_id;
    result.distance_target[a] = raw_distances(anchors[a], gts[size_t(g)].box);
  }
  return result;
}

AssignmentResult atss_assign(const std::vector<AnchorPoint>& anchors,
                             const std::vector<LabeledBox>& gts,
                             const AssignerConfig& cfg) {
  AssignmentResult result = empty_result(anchors.size());
  if (gts.empty()) return result;

  int num_levels = 0;
  for (const auto& p : anchors) num_levels = std::max(num_levels, p.level + 1);

  auto cell_box = [&](const AnchorPoint& p) {
    const double half = 0.5 * cfg.atss_cell_scale * p.stride;
    return Box{p.cx - half, p.cy - half, p.cx + half, p.cy + half};
  };

  std::vector<int> chosen_gt(anchors.size(), -1);
  std::vector<double> chosen_iou(anchors.size(), 0.0);
  for (size_t g = 0; g < gts.size(); ++g) {
    const Box& gt = gts[g].box;
    // atss_topk closest anchor centers per level.
    std::vector<int> cand;
    for (int lvl = 0; lvl < num_levels; ++lvl) {
      std::vector<std::pair<double, int>> dists;
      for (size_t a = 0; a < anchors.size(); ++a) {
        if (anchors[a].level != lvl) continue;
        const double dx = anchors[a].cx - gt.cx();
        const double dy = anchors[a].cy - gt.cy();
        dists.emplace_back(dx * dx + dy * dy, static_cast<int>(a));
      }
      std::stable_sort(dists.begin(), dists.end());
      for (size_t t = 0; t < std::min(dists.size(), size_t(cfg.atss_topk)); ++t)
        cand.push_back(dists[t].second);
    }
    if (cand.empty()) continue;
    std::vector<double> cand_iou(cand.size());
    double mean = 0.0;
    for (size_t t = 0; t < cand.size(); ++t) {
      cand_iou[t] = iou(cell_box(anchors[size_t(cand[t])]), gt);
      mean += cand_iou[t];
    }
    mean /= double(cand.size());
    double var = 0.0;
    for (double v : cand_iou) var += (v - mean) * (v - mean);
    const double stdev = std::sqrt(var / double(cand.size()));  // population std
    const double thresh = mean + stdev;
    for (size_t t = 0; t < cand.size(); ++t) {
      const size_t a = size_t(cand[t]);
      if (cand_iou[t] < thresh) continue;
      if (!gt.contains(anchors[a].cx, anchors[a].cy)) continue;
      // Conflict rule: highest IoU wins; ties keep the earlier (lower) GT.
      if (cand_iou[t] > chosen_iou[a]) {
        chosen_iou[a] = cand_iou[t];
        chosen_gt[a] = static_cast<int>(g);
      }
    }
  }

  for (size_t a = 0; a < anchors.size(); ++a) {
    const int g = chosen_gt[a];
    if (g < 0) continue;
    result.matched_gt[a] = g;
    result.quality[a] = chosen_iou[a];
    result.class_target[a] = gts[size_t(g)].class_id;
    result.distance_target[a] = raw_distances(anchors[a], gts[size_t(g)].box);
  }
  return result;
}

}  // namespace picodet

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

#include "picodet/eval.hpp"

#include <algorithm>
#include <stdexcept>

namespace picodet {

namespace {

// 101-point interpolated AP from (tp flags sorted by descending score).
double average_precision(const std::vector<char>& tp, int num_gt) {
  if (num_gt == 0) return 0;
  std::vector<double> precision, recall;
  int tp_count = 0;
  for (size_t i = 0; i < tp.size(); ++i) {
    tp_count += tp[i];
    precision.push_back(double(tp_count) / double(i + 1));
    recall.push_back(double(tp_count) / num_gt);
  }
  // Interpolated precision: running max from the right.
  for (int i = static_cast<int>(precision.size()) - 2; i >= 0; --i)
    precision[size_t(i)] = std::max(precision[size_t(i)], precision[size_t(i) + 1]);

  double sum = 0;
  size_t idx = 0;
  for (int r = 0; r <= 100; ++r) {
    double target = r / 100.0;
    while (idx < recall.size() && recall[idx] < target - 1e-12) ++idx;
    if (idx < recall.size()) sum += precision[idx];
  }
  return sum / 101.0;
}

}  // namespace

EvalResult evaluate_map(const std::vector<EvalDetection>& detections,
                        const std::vector<EvalGroundTruth>& ground_truth,
                        int num_classes) {
  for (const EvalDetection& d : detections)
    if (d.class_id < 0 || d.class_id >= num_classes)
      throw std::runtime_error("eval: detection class id out of range: " +
                               std::to_string(d.class_id));
  for (const EvalGroundTruth& g : ground_truth)
    if (g.class_id < 0 || g.class_id >= num_classes)
      throw std::runtime_error("eval: ground-truth class id out of range: " +
                               std::to_string(g.class_id));

  // Stable score order shared by all thresholds/classes.
  std::vector<int> order(detections.size());
  for (size_t i = 0; i < order.size(); ++i) order[static_cast<size_t>(i)] = int(i);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return detections[size_t(a)].score > detections[size_t(b)].score;
  });

  EvalResult result;
  double sum_over_thresholds = 0;
  int classes_with_gt = 0;
  std::vector<int> gt_count(static_cast<size_t>(num_classes), 0);
  for (const EvalGroundTruth& g : ground_truth) ++gt_count[size_t(g.class_id)];
  for (int c = 0; c < num_classes; ++c) classes_with_gt += gt_count[size_t(c)] > 0;
  if (classes_with_gt == 0) return result;

  for (int t = 0; t < 10; ++t) {
    double thresh = 0.5 + 0.05 * t;
    double ap_sum = 0;
    for (int c = 0; c < num_classes; ++c) {
      if (gt_count[size_t(c)] == 0) continue;
      // GT pool for this class, with per-threshold matched flags.
      std::vector<const EvalGroundTruth*> gts;
      for (const EvalGroundTruth& g : ground_truth)
        if (g.class_id == c) gts.push_back(&g);
      std::vector<char> matched(gts.size(), 0);

      std::vector<char> tp;
      for (int di : order) {
        const EvalDetection& d = detections[size_t(di)];
        if (d.class_id != c) continue;
        int best = -1;
        double best_iou = thresh;
        for (size_t gi = 0; gi < gts.size(); ++gi) {
          if (matched[gi] || gts[gi]->image_id != d.image_id) continue;
          double v = iou(d.box, gts[gi]->box);
          if (v >= best_iou) {
            best_iou = v;
            best = int(gi);
          }
        }
        if (best >= 0) {
          matched[size_t(best)] = 1;
          tp.push_back(1);
        } else {
          tp.push_back(0);
        }
      }
      double ap = average_precision(tp, gt_count[size_t(c)]);
      ap_sum += ap;
      if (t == 0) result.per_class_ap50[c] = ap;
    }
    double mean_ap = ap_sum / classes_with_gt;
    sum_over_thresholds += mean_ap;
    if (t == 0) result.map_50 = mean_ap;
  }
  result.map_50_95 = sum_over_thresholds / 10.0;
  return result;
}

}  // namespace picodet

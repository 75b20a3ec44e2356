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

#include <map>
#include <vector>

#include "picodet/geometry.hpp"

namespace picodet {

struct EvalDetection {
  int image_id = 0;
  int class_id = 0;
  double score = 0;
  Box box;
};

struct EvalGroundTruth {
  int image_id = 0;
  int class_id = 0;
  Box box;
};

struct EvalResult {
  double map_50_95 = 0;  // averaged over IoU 0.50:0.05:0.95
  double map_50 = 0;
  std::map<int, double> per_class_ap50;  // class id -> AP@0.5
};

// 101-point interpolated AP, averaged over IoU thresholds and over classes
// that have at least one ground-truth box. Detections are matched greedily
// in descending score order (ties by input order) to the best unmatched
// same-class GT in the same image. Throws on class ids outside
// [0, num_classes).
EvalResult evaluate_map(const std::vector<EvalDetection>& detections,
                        const std::vector<EvalGroundTruth>& ground_truth,
                        int num_classes);

}  // namespace picodet

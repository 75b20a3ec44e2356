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

#include "picodet/csppan.hpp"
#include "picodet/geometry.hpp"
#include "picodet/losses.hpp"
#include "picodet/nn.hpp"

namespace picodet {

struct HeadConfig {
  int num_classes = 80;
  int dp_count = 2;  // DP modules per level (2 for S/M, 4 for L)
  int reg_max = 7;
  bool share_weights_across_levels = false;
  double score_threshold = 0.025;
  double nms_iou = 0.6;
  int max_detections = 100;
  nn::Activation activation = nn::Activation::kHSwish;

  int reg_channels() const { return 4 * (reg_max + 1); }
  int out_channels() const { return num_classes + reg_channels(); }
};

struct Detection {
  Box box;
  double score = 0;
  int class_id = 0;
};

// Raw per-level head outputs: cls logits [N, num_classes, H, W] (pre-sigmoid)
// and reg logits [N, 4*(reg_max+1), H, W] (pre-softmax per side).
struct HeadOutputs {
  std::vector<nn::Var> cls_logits;
  std::vector<nn::Var> reg_logits;
  std::vector<std::pair<int, int>> level_shapes;
  std::vector<double> strides;
};

// Coupled GFL head: per level, dp_count DP modules then one 1x1 conv whose
// channels split into classification scores and DFL distance distributions.
class GflHead {
 public:
  GflHead(const HeadConfig& cfg, int in_channels, int num_levels, std::mt19937& rng);

  HeadOutputs forward(const NeckFeatures& feats, bool training);
  void collect(nn::ParamList& out);
  const HeadConfig& config() const { return cfg_; }

 private:
  HeadConfig cfg_;
  int num_levels_ = 0;
  std::vector<std::vector<nn::DpModule>> towers_;  // [level][dp]
  std::vector<nn::Conv2d> predictors_;             // final coupled 1x1 per level
};

// Integral decode of head outputs into per-image detections (before NMS).
// image_w/h clip the boxes; score_threshold filters.
std::vector<std::vector<Detection>> decode(const HeadOutputs& outputs,
                                           const HeadConfig& cfg, int image_w,
                                           int image_h);

// Class-wise greedy NMS, descending score, at most max_detections survivors.
std::vector<Detection> nms(std::vector<Detection> dets, const HeadConfig& cfg);

}  // namespace picodet

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

namespace picodet {

struct LossConfig {
  double vfl_alpha = 0.75;
  double vfl_gamma = 2.0;
  double qfl_beta = 2.0;
  double giou_weight = 2.0;
  double dfl_weight = 0.25;
  double eps = 1e-9;
  bool use_qfl = false;  // ablation: replace VFL with QFL
};

// Uniform integer bins [0, reg_max] in stride-normalized distance units.
struct DistributionSpec {
  int reg_max = 7;
  int num_bins() const { return reg_max + 1; }
  // Upper clamp keeps the i+1 bin defined at the edge.
  double clamp_target(double y) const;
};

// Classification losses on a single (prediction, quality) pair. All inputs are
// eps-clamped; grad_p receives d loss / d p when non-null.
double varifocal_loss(double p, double q, const LossConfig& cfg, double* grad_p = nullptr);
double quality_focal_loss(double p, double q, const LossConfig& cfg, double* grad_p = nullptr);

double giou_loss(const Box& pred, const Box& gt);
double giou_loss_with_grad(const Box& pred, const Box& gt, BoxGrad& grad);

// dist: probability vector over reg_max+1 bins; y in [0, reg_max].
// grad receives d loss / d S_i when non-null (same length as dist).
double distribution_focal_loss(const std::vector<double>& dist, double y,
                               const DistributionSpec& spec, const LossConfig& cfg,
                               std::vector<double>* grad = nullptr);

double dfl_expectation(const std::vector<double>& dist, const DistributionSpec& spec);

// Per-anchor inputs to the composite loss: joint classification-quality
// scores for every class, the decoded box, and per-side distance
// distributions.
struct AnchorPrediction {
  std::vector<double> scores;                   // per-class sigmoid scores
  Box box;                                      // decoded prediction, pixels
  std::vector<std::vector<double>> side_dists;  // 4 x (reg_max+1), softmax
};

struct AnchorTarget {
  bool positive = false;
  int class_target = -1;    // valid when positive
  double quality = 0;       // IoU with matched GT, 0 for negatives
  Box gt_box;               // valid when positive
  DistanceTarget gt_dist;   // stride-normalized, valid when positive
};

struct DetectionLossBreakdown {
  double total = 0;
  double vfl = 0;
  double giou = 0;
  double dfl = 0;
  double normalizer = 1;
};

// Composite loss: vfl + giou_weight * giou + dfl_weight * dfl. VFL runs over
// all anchors (negatives at q=0); GIoU/DFL over positives only. Each term is
// divided by the sum of positive quality targets, clamped >= 1.
DetectionLossBreakdown detection_loss(const std::vector<AnchorPrediction>& preds,
                                      const std::vector<AnchorTarget>& targets,
                                      const DistributionSpec& spec,
                                      const LossConfig& cfg);

}  // namespace picodet

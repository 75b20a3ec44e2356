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

#include <random>
#include <string>
#include <vector>

#include "picodet/config.hpp"
#include "picodet/data.hpp"
#include "picodet/detector.hpp"
#include "picodet/eval.hpp"

namespace picodet {

// lr = 0.5 * lr0 * (1 + cos(pi * step / total)); throws if step > total.
double cosine_lr(int step, int total, double lr0);
// Linear warmup over warmup_iters, then cosine decay over the full horizon.
double scheduled_lr(int step, const TrainSchedule& cfg);

// Cycle-reset exponential moving average of weights: shadow tracks the
// parameters at rate `decay`; every `forget_step` steps the shadow is reset
// to the current weights. forget_step <= 0 disables the reset (plain EMA).
class Ema {
 public:
  Ema(const nn::ParamList& params, double decay, int forget_step);

  void update();  // one step: shadow <- d*shadow + (1-d)*weights (or reset)
  int step() const { return step_; }
  const std::vector<Tensor>& shadow() const { return shadow_; }

  // Swap shadow <-> live weights (call twice to restore).
  void swap_with_model();

 private:
  nn::ParamList params_;
  std::vector<Tensor> shadow_;
  double decay_;
  int forget_step_;
  int step_ = 0;
};

// One training sample after augmentation: CHW image + boxes in its pixels.
struct Sample {
  Tensor image;  // [3, S, S]
  std::vector<LabeledBox> boxes;
};

// Random horizontal flip (p = 0.5), random crop keeping at least one box
// (bounded retries, then the crop is skipped), bilinear resize to a size
// drawn from input_sizes. Boxes stay inside bounds with positive area.
Sample augment(const Tensor& image_chw, const std::vector<LabeledBox>& boxes,
               std::mt19937& rng, const std::vector<int>& input_sizes);

// Deterministic resize used by evaluation/inference.
Tensor resize_bilinear_chw(const Tensor& image_chw, int out_h, int out_w);

// Runs assignment on the current predictions, computes the composite
// detection loss, and writes d loss / d logit seeds (averaged over the
// batch) for nn::backward. Returns the batch-mean loss breakdown.
DetectionLossBreakdown compute_detection_grads(
    const HeadOutputs& outputs, const std::vector<std::vector<LabeledBox>>& gt_boxes,
    const AssignerConfig& assign_cfg, const LossConfig& loss_cfg, int reg_max,
    std::vector<Tensor>& cls_seeds, std::vector<Tensor>& reg_seeds);

// Full-dataset evaluation at a fixed square input size; detections are mapped
// back to original image coordinates.
EvalResult evaluate_detector(Detector& model, const DatasetIndex& dataset, int input_size);

struct TrainResult {
  double map_50 = 0;
  double map_50_95 = 0;
  std::string checkpoint_path;
  std::string metrics_path;
};

// SGD + warmup/cosine LR + Cycle-EMA training loop. Deterministic for a
// given seed (single-threaded). Writes metrics.jsonl and checkpoints under
// out_dir; aborts with diagnostics on non-finite loss. Evaluation uses EMA
// weights when enabled.
TrainResult train_detector(Detector& model, const DatasetIndex& dataset,
                           const ExperimentConfig& cfg, const std::string& out_dir);

}  // namespace picodet

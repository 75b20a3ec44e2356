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

#include <string>
#include <vector>

#include "picodet/assignment.hpp"
#include "picodet/detector.hpp"
#include "picodet/losses.hpp"

namespace picodet {

enum class BackboneKind { kEsNet, kShuffleNetV2 };

struct ModelConfig {
  int num_classes = 80;
  double width_multiplier = 0.75;
  BackboneKind backbone = BackboneKind::kEsNet;
  nn::Activation activation = nn::Activation::kHSwish;
  std::vector<int> stage_base_channels{128, 256, 512};
  std::vector<int> stage_block_counts{3, 7, 3};
  int se_reduction = 4;
  int neck_channels = 96;
  int neck_csp_blocks = 1;
  int neck_kernel = 5;
  bool use_p6 = true;
  int head_dp_count = 2;
  int reg_max = 7;
  bool share_head = false;
  double score_threshold = 0.025;
  double nms_iou = 0.6;
  int max_detections = 100;
  std::vector<double> ratios;  // optional per-block genotype fragment

  DetectorConfig to_detector() const;
};

struct TrainSchedule {
  double lr0 = -1;  // < 0: resolved to 0.1 * batch_size / 640
  double momentum = 0.9;
  double weight_decay = 4e-5;
  int batch_size = 8;
  int max_iters = 2000;
  int warmup_iters = 500;
  std::vector<int> input_sizes{128};
  double ema_decay = 0.9998;
  int ema_forget_step = 0;  // 0: default, 2 epochs' worth of iterations
  bool use_ema = true;
  double clip_grad_norm = 0;  // 0: off
  std::uint64_t seed = 0;
  int eval_interval = 0;  // 0: final eval only
  int eval_input_size = 0;  // 0: first of input_sizes
  int log_interval = 1;

  double resolved_lr0() const { return lr0 > 0 ? lr0 : 0.1 * batch_size / 640.0; }
};

struct NasSchedule {
  double max_flops_m = 0;  // MFLOPs budget; 0 = no budget
  int population = 24;
  int generations = 10;
  double mutation_prob = 0.1;
  double crossover_prob = 0.5;
  int eval_subset = 16;
  int supernet_steps = 200;
  double clip_grad_norm = 35;
  int eval_input_size = 128;
  std::vector<double> ratio_set{0.5, 0.675, 0.75, 0.875, 1.0};
};

struct DataPaths {
  std::string train_json;
  std::string val_json;
  bool clip_boxes = false;
};

struct ExperimentConfig {
  ModelConfig model;
  LossConfig loss;
  AssignerConfig assign;
  TrainSchedule train;
  NasSchedule nas;
  DataPaths data;
};

// Loads and validates a YAML experiment config. Unknown keys are rejected
// with field-path diagnostics; omitted keys take the defaults above
// (PicoDet-S-equivalent model settings). Throws ConfigError.
ExperimentConfig load_config(const std::string& path);
ExperimentConfig parse_config(const std::string& yaml_text);

// Fully-resolved YAML round-trippable through parse_config (idempotent).
std::string dump_config(const ExperimentConfig& cfg);

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace picodet

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

#include <optional>

#include "picodet/nn.hpp"

namespace picodet {

// Nearest multiple of 8, ties upward, floor of 8.
int round_to_8(double x);

struct EsNetConfig {
  std::vector<int> stage_base_channels{128, 256, 512};
  std::vector<int> stage_block_counts{3, 7, 3};
  double width_multiplier = 1.0;
  nn::Activation activation = nn::Activation::kHSwish;
  int stem_base_channels = 24;
  int se_reduction = 4;
  int classifier_channels = 1024;  // classification-mode expansion conv
  int num_classes = 1000;          // classification mode only
  // Ablation baseline: plain ShuffleNetV2 blocks (no SE, no Ghost, no
  // stride-2 fusion stage).
  bool plain_shufflenet = false;

  int total_blocks() const {
    int n = 0;
    for (int c : stage_block_counts) n += c;
    return n;
  }
  int stage_channels(int stage) const {
    return round_to_8(width_multiplier * stage_base_channels[size_t(stage)]);
  }
  int stem_channels() const { return round_to_8(width_multiplier * stem_base_channels); }
};

struct BackboneFeatures {
  nn::Var c3, c4, c5;
  std::vector<double> strides{8, 16, 32};
};

// Squeeze-and-excitation gate: GAP -> 1x1 (ReLU) -> 1x1 (H-Sigmoid) -> scale.
class SeModule {
 public:
  SeModule() = default;
  SeModule(std::string name, int channels, int reduction, std::mt19937& rng);
  nn::Var forward(const nn::Var& x, int active_c = -1);
  void collect(nn::ParamList& out);

 private:
  nn::Conv2d fc1_, fc2_;
  int channels_ = 0, reduction_ = 0;
};

// Half the outputs from a 1x1 primary conv, half from a cheap depthwise 3x3
// on the primaries, concatenated.
class GhostModule {
 public:
  GhostModule() = default;
  GhostModule(std::string name, int in_c, int out_c, nn::Activation act, std::mt19937& rng);
  nn::Var forward(const nn::Var& x, bool training, int active_in = -1);
  void collect(nn::ParamList& out);

  int64_t param_count() const;

 private:
  nn::ConvBnAct primary_, cheap_;
};

class EsBlock {
 public:
  EsBlock() = default;
  // stride 1: in_c == out_c; stride 2: in_c -> out_c.
  EsBlock(std::string name, int in_c, int out_c, int stride, const EsNetConfig& cfg,
          std::mt19937& rng);
  // ratio prunes the block's inner (mid) channels.
  nn::Var forward(const nn::Var& x, bool training, double ratio = 1.0);
  void collect(nn::ParamList& out);

  int mid_base() const { return mid_base_; }

 private:
  int in_c_ = 0, out_c_ = 0, stride_ = 1, mid_base_ = 0;
  bool plain_ = false;
  // stride-1 branch
  nn::ConvBnAct pw1_, pw2_plain_;
  nn::ConvBnAct dw_;
  SeModule se_;
  GhostModule ghost_;
  // stride-2 branches
  nn::ConvBnAct b1_dw_, b1_pw_, b2_pw1_, b2_dw_, b2_pw2_;
  nn::ConvBnAct fuse_dw_, fuse_pw_;
};

class ESNet {
 public:
  explicit ESNet(const EsNetConfig& cfg, std::mt19937& rng);

  // Per-block inner-channel ratios (NAS hook); empty = full width.
  void set_ratios(const std::vector<double>& ratios);
  const std::vector<double>& ratios() const { return ratios_; }

  BackboneFeatures forward(const nn::Var& image, bool training);
  // Classification mode: stages -> 1x1 expansion -> GAP -> linear logits.
  nn::Var forward_classifier(const nn::Var& image, bool training);

  void collect(nn::ParamList& out);
  // Excludes the classification tail (expansion conv + linear head).
  void collect_detection(nn::ParamList& out);
  const EsNetConfig& config() const { return cfg_; }

 private:
  EsNetConfig cfg_;
  std::vector<double> ratios_;
  nn::ConvBnAct stem_;
  std::vector<std::vector<EsBlock>> stages_;
  nn::ConvBnAct conv5_;
  nn::Conv2d fc_;
};

}  // namespace picodet

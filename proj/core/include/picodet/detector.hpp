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

#include <memory>

#include "picodet/csppan.hpp"
#include "picodet/esnet.hpp"
#include "picodet/head.hpp"

namespace picodet {

struct DetectorConfig {
  EsNetConfig backbone;
  NeckConfig neck;
  HeadConfig head;

  int num_levels() const { return neck.use_p6 ? 4 : 3; }
};

// PicoDet-S: ESNet-0.75x ([96,192,384]) + CSP-PAN@96 + 4-level coupled head.
DetectorConfig picodet_s_config(int num_classes = 80);
// Desk-scale variant for the overfit and NAS experiments.
DetectorConfig picodet_tiny_config(int num_classes = 3);

class Detector {
 public:
  Detector(const DetectorConfig& cfg, uint32_t seed);

  HeadOutputs forward(const Tensor& images, bool training);
  std::vector<std::vector<Detection>> infer(const Tensor& images);

  // Backbone channel-ratio hook (NAS).
  void set_ratios(const std::vector<double>& ratios) { backbone_.set_ratios(ratios); }

  nn::ParamList params();           // detection parameters, stable order
  int64_t param_count();            // trainable scalars
  int64_t flops(int input_size);    // multiply-accumulates, batch 1

  const DetectorConfig& config() const { return cfg_; }
  ESNet& backbone() { return backbone_; }
  CspPan& neck() { return neck_; }
  GflHead& head() { return head_; }

 private:
  DetectorConfig cfg_;
  std::mt19937 rng_;
  ESNet backbone_;
  CspPan neck_;
  GflHead head_;
};

// Anchor grid matching a detector forward at the given input size.
std::vector<AnchorPoint> detector_anchors(const HeadOutputs& outputs);

}  // namespace picodet

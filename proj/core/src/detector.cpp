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

#include "picodet/detector.hpp"

namespace picodet {

DetectorConfig picodet_s_config(int num_classes) {
  DetectorConfig cfg;
  cfg.backbone.width_multiplier = 0.75;
  cfg.neck.out_channels = 96;
  cfg.head.num_classes = num_classes;
  cfg.head.dp_count = 2;
  return cfg;
}

DetectorConfig picodet_tiny_config(int num_classes) {
  DetectorConfig cfg;
  cfg.backbone.width_multiplier = 0.25;
  cfg.neck.out_channels = 32;
  cfg.head.num_classes = num_classes;
  cfg.head.dp_count = 2;
  return cfg;
}

namespace {
std::vector<int> backbone_out_channels(const EsNetConfig& cfg) {
  return {cfg.stage_channels(0), cfg.stage_channels(1), cfg.stage_channels(2)};
}
}  // namespace

Detector::Detector(const DetectorConfig& cfg, uint32_t seed)
    : cfg_(cfg),
      rng_(seed),
      backbone_(cfg.backbone, rng_),
      neck_(cfg.neck, backbone_out_channels(cfg.backbone), rng_),
      head_(cfg.head, cfg.neck.out_channels, cfg.num_levels(), rng_) {}

HeadOutputs Detector::forward(const Tensor& images, bool training) {
  nn::Var x = nn::make_var(images, false);
  BackboneFeatures feats = backbone_.forward(x, training);
  NeckFeatures neck_out = neck_.forward(feats, training);
  return head_.forward(neck_out, training);
}

std::vector<std::vector<Detection>> Detector::infer(const Tensor& images) {
  const int W = images.dim(3), H = images.dim(2);
  HeadOutputs out = forward(images, false);
  auto decoded = decode(out, cfg_.head, W, H);
  std::vector<std::vector<Detection>> result;
  result.reserve(decoded.size());
  for (auto& dets : decoded) result.push_back(nms(std::move(dets), cfg_.head));
  return result;
}

nn::ParamList Detector::params() {
  nn::ParamList out;
  backbone_.collect_detection(out);
  neck_.collect(out);
  head_.collect(out);
  return out;
}

int64_t Detector::param_count() {
  int64_t n = 0;
  for (auto* p : params())
    if (p->trainable) n += p->value().numel();
  return n;
}

int64_t Detector::flops(int input_size) {
  Tensor dummy({1, 3, input_size, input_size});
  nn::FlopScope scope;
  forward(dummy, false);
  return nn::FlopScope::macs();
}

std::vector<AnchorPoint> detector_anchors(const HeadOutputs& outputs) {
  std::vector<std::pair<int, int>> shapes = outputs.level_shapes;
  return make_grid(shapes, outputs.strides);
}

}  // namespace picodet

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

#include "picodet/esnet.hpp"
#include "picodet/nn.hpp"

namespace picodet {

struct NeckConfig {
  int out_channels = 96;
  int num_csp_blocks = 1;
  int kernel = 5;
  nn::Activation activation = nn::Activation::kHSwish;
  bool use_p6 = true;  // fourth output scale
};

struct NeckFeatures {
  std::vector<nn::Var> levels;   // P3.. (3 or 4 maps)
  std::vector<double> strides;   // 8, 16, 32 (, 64)
};

// Cross-stage-partial fusion of two equal-channel maps: concat, two 1x1
// half-projections, DP bottlenecks on one half, concat, 1x1 merge.
class CspFusion {
 public:
  CspFusion() = default;
  CspFusion(std::string name, int channels, int num_blocks, int kernel,
            nn::Activation act, std::mt19937& rng);
  nn::Var forward(const nn::Var& a, const nn::Var& b, bool training);
  void collect(nn::ParamList& out);

 private:
  nn::ConvBnAct proj_main_, proj_short_, merge_;
  std::vector<nn::DpModule> blocks_;
};

class CspPan {
 public:
  CspPan(const NeckConfig& cfg, const std::vector<int>& in_channels, std::mt19937& rng);

  NeckFeatures forward(const BackboneFeatures& feats, bool training);
  void collect(nn::ParamList& out);
  const NeckConfig& config() const { return cfg_; }

 private:
  NeckConfig cfg_;
  std::vector<nn::ConvBnAct> unify_;       // 1x1 reducers for C3..C5
  CspFusion td4_, td3_;                    // top-down fusions
  CspFusion bu4_, bu5_;                    // bottom-up fusions
  nn::DpModule down3_, down4_;             // stride-2 DP on the bottom-up path
  nn::DpModule p6_down_;                   // extra top scale
};

}  // namespace picodet

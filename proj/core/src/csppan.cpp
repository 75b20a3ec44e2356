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

#include "picodet/csppan.hpp"

#include <stdexcept>

namespace picodet {

using nn::Var;

CspFusion::CspFusion(std::string name, int channels, int num_blocks, int kernel,
                     nn::Activation act, std::mt19937& rng) {
  const int half = channels / 2;
  proj_main_ = nn::ConvBnAct(name + ".proj_main", 2 * channels, half, 1, 1, 1, act, rng);
  proj_short_ = nn::ConvBnAct(name + ".proj_short", 2 * channels, half, 1, 1, 1, act, rng);
  for (int i = 0; i < num_blocks; ++i)
    blocks_.emplace_back(name + ".block" + std::to_string(i), half, half, kernel, 1, act, rng);
  merge_ = nn::ConvBnAct(name + ".merge", channels, channels, 1, 1, 1, act, rng);
}

Var CspFusion::forward(const Var& a, const Var& b, bool training) {
  if (!a->value.same_shape(b->value))
    throw std::invalid_argument("CspFusion: input shape mismatch");
  Var x = nn::concat_channels({a, b});
  Var shortcut = proj_short_.forward(x, training);
  Var main = proj_main_.forward(x, training);
  for (auto& blk : blocks_) main = blk.forward(main, training);
  return merge_.forward(nn::concat_channels({shortcut, main}), training);
}

void CspFusion::collect(nn::ParamList& out) {
  proj_main_.collect(out);
  proj_short_.collect(out);
  for (auto& blk : blocks_) blk.collect(out);
  merge_.collect(out);
}

CspPan::CspPan(const NeckConfig& cfg, const std::vector<int>& in_channels,
               std::mt19937& rng)
    : cfg_(cfg) {
  if (in_channels.size() != 3) throw std::invalid_argument("CspPan: expects C3-C5");
  const int c = cfg.out_channels;
  for (size_t i = 0; i < 3; ++i)
    unify_.emplace_back("neck.unify" + std::to_string(i + 3), in_channels[i], c, 1, 1, 1,
                        cfg.activation, rng);
  td4_ = CspFusion("neck.td4", c, cfg.num_csp_blocks, cfg.kernel, cfg.activation, rng);
  td3_ = CspFusion("neck.td3", c, cfg.num_csp_blocks, cfg.kernel, cfg.activation, rng);
  bu4_ = CspFusion("neck.bu4", c, cfg.num_csp_blocks, cfg.kernel, cfg.activation, rng);
  bu5_ = CspFusion("neck.bu5", c, cfg.num_csp_blocks, cfg.kernel, cfg.activation, rng);
  down3_ = nn::DpModule("neck.down3", c, c, cfg.kernel, 2, cfg.activation, rng);
  down4_ = nn::DpModule("neck.down4", c, c, cfg.kernel, 2, cfg.activation, rng);
  if (cfg.use_p6)
    p6_down_ = nn::DpModule("neck.p6", c, c, cfg.kernel, 2, cfg.activation, rng);
}

NeckFeatures CspPan::forward(const BackboneFeatures& feats, bool training) {
  Var c3 = unify_[0].forward(feats.c3, training);
  Var c4 = unify_[1].forward(feats.c4, training);
  Var c5 = unify_[2].forward(feats.c5, training);

  // Top-down: upsample and fuse with the next finer map.
  Var td4 = td4_.forward(nn::upsample_nearest2x_to(c5, c4), c4, training);
  Var td3 = td3_.forward(nn::upsample_nearest2x_to(td4, c3), c3, training);

  // Bottom-up: stride-2 DP downsample and fuse.
  Var p3 = td3;
  Var p4 = bu4_.forward(down3_.forward(p3, training), td4, training);
  Var p5 = bu5_.forward(down4_.forward(p4, training), c5, training);

  NeckFeatures out;
  out.levels = {p3, p4, p5};
  out.strides = {8, 16, 32};
  if (cfg_.use_p6) {
    out.levels.push_back(p6_down_.forward(p5, training));
    out.strides.push_back(64);
  }
  return out;
}

void CspPan::collect(nn::ParamList& out) {
  for (auto& u : unify_) u.collect(out);
  td4_.collect(out);
  td3_.collect(out);
  bu4_.collect(out);
  bu5_.collect(out);
  down3_.collect(out);
  down4_.collect(out);
  if (cfg_.use_p6) p6_down_.collect(out);
}

}  // namespace picodet

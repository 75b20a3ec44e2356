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

#include "picodet/esnet.hpp"

#include <cmath>
#include <stdexcept>

namespace picodet {

using nn::Activation;
using nn::Var;

int round_to_8(double x) {
  const int r = static_cast<int>(std::floor(x / 8.0 + 0.5)) * 8;  // ties up
  return std::max(8, r);
}

// ---------------------------------------------------------------------------
// SeModule
// ---------------------------------------------------------------------------

SeModule::SeModule(std::string name, int channels, int reduction, std::mt19937& rng)
    : fc1_(name + ".fc1", channels, channels / reduction, 1, 1, 0, 1, true, rng),
      fc2_(name + ".fc2", channels / reduction, channels, 1, 1, 0, 1, true, rng),
      channels_(channels),
      reduction_(reduction) {}

Var SeModule::forward(const Var& x, int active_c) {
  const int c = active_c > 0 ? active_c : channels_;
  const int cr = std::max(1, c / reduction_);
  Var s = nn::global_avg_pool(x);
  s = nn::relu(fc1_.forward(s, cr, c));
  s = nn::hsigmoid(fc2_.forward(s, c, cr));
  return nn::channel_scale(x, s);
}

void SeModule::collect(nn::ParamList& out) {
  fc1_.collect(out);
  fc2_.collect(out);
}

// ---------------------------------------------------------------------------
// GhostModule
// ---------------------------------------------------------------------------

GhostModule::GhostModule(std::string name, int in_c, int out_c, Activation act,
                         std::mt19937& rng)
    : primary_(name + ".primary", in_c, out_c / 2, 1, 1, 1, act, rng),
      cheap_(name + ".cheap", out_c / 2, out_c / 2, 3, 1, out_c / 2, act, rng) {
  if (out_c % 2 != 0) throw std::invalid_argument("GhostModule: out_channels must be even");
}

Var GhostModule::forward(const Var& x, bool training, int active_in) {
  Var p = primary_.forward(x, training, -1, active_in);
  Var c = cheap_.forward(p, training);
  return nn::concat_channels({p, c});
}

// (primary_ BN runs inside ConvBnAct::forward; forward above inlines for the
// active-width path.)
int64_t GhostModule::param_count() const {
  return primary_.conv.w.value().numel() + cheap_.conv.w.value().numel();
}

void GhostModule::collect(nn::ParamList& out) {
  primary_.collect(out);
  cheap_.collect(out);
}

// ---------------------------------------------------------------------------
// EsBlock
// ---------------------------------------------------------------------------

EsBlock::EsBlock(std::string name, int in_c, int out_c, int stride,
                 const EsNetConfig& cfg, std::mt19937& rng)
    : in_c_(in_c), out_c_(out_c), stride_(stride), plain_(cfg.plain_shufflenet) {
  const Activation act = cfg.activation;
  if (stride == 1) {
    if (in_c != out_c) throw std::invalid_argument("EsBlock stride 1 must preserve channels");
    const int half = out_c / 2;
    mid_base_ = half;
    pw1_ = nn::ConvBnAct(name + ".pw1", half, half, 1, 1, 1, act, rng);
    dw_ = nn::ConvBnAct(name + ".dw", half, half, 3, 1, half, Activation::kNone, rng);
    if (plain_) {
      pw2_plain_ = nn::ConvBnAct(name + ".pw2", half, half, 1, 1, 1, act, rng);
    } else {
      se_ = SeModule(name + ".se", half, cfg.se_reduction, rng);
      ghost_ = GhostModule(name + ".ghost", half, half, act, rng);
    }
  } else {
    const int half = out_c / 2;
    mid_base_ = half;
    b1_dw_ = nn::ConvBnAct(name + ".b1.dw", in_c, in_c, 3, 2, in_c, Activation::kNone, rng);
    b1_pw_ = nn::ConvBnAct(name + ".b1.pw", in_c, half, 1, 1, 1, act, rng);
    b2_pw1_ = nn::ConvBnAct(name + ".b2.pw1", in_c, half, 1, 1, 1, act, rng);
    b2_dw_ = nn::ConvBnAct(name + ".b2.dw", half, half, 3, 2, half, Activation::kNone, rng);
    if (!plain_) se_ = SeModule(name + ".b2.se", half, cfg.se_reduction, rng);
    b2_pw2_ = nn::ConvBnAct(name + ".b2.pw2", half, half, 1, 1, 1, act, rng);
    if (!plain_) {
      fuse_dw_ = nn::ConvBnAct(name + ".fuse.dw", out_c, out_c, 3, 1, out_c,
                               Activation::kNone, rng);
      fuse_pw_ = nn::ConvBnAct(name + ".fuse.pw", out_c, out_c, 1, 1, 1, act, rng);
    }
  }
}

Var EsBlock::forward(const Var& x, bool training, double ratio) {
  const int mid = ratio < 1.0 ? round_to_8(ratio * mid_base_) : mid_base_;
  if (stride_ == 1) {
    const int half = out_c_ / 2;
    Var keep = nn::slice_channels(x, 0, half);
    Var work = nn::slice_channels(x, half, half);
    Var y = pw1_.forward(work, training, mid, half);
    y = dw_.forward(y, training, mid, mid);
    if (plain_) {
      y = pw2_plain_.forward(y, training, half, mid);
    } else {
      y = se_.forward(y, mid);
      y = ghost_.forward(y, training, mid);
    }
    return nn::channel_shuffle(nn::concat_channels({keep, y}), 2);
  }
  const int half = out_c_ / 2;
  Var b1 = b1_dw_.forward(x, training);
  b1 = b1_pw_.forward(b1, training, half, in_c_);
  Var b2 = b2_pw1_.forward(x, training, mid, in_c_);
  b2 = b2_dw_.forward(b2, training, mid, mid);
  if (!plain_) b2 = se_.forward(b2, mid);
  b2 = b2_pw2_.forward(b2, training, half, mid);
  Var y = nn::channel_shuffle(nn::concat_channels({b1, b2}), 2);
  if (!plain_) {
    y = fuse_dw_.forward(y, training);
    y = fuse_pw_.forward(y, training);
  }
  return y;
}

void EsBlock::collect(nn::ParamList& out) {
  if (stride_ == 1) {
    pw1_.collect(out);
    dw_.collect(out);
    if (plain_) {
      pw2_plain_.collect(out);
    } else {
      se_.collect(out);
      ghost_.collect(out);
    }
    return;
  }
  b1_dw_.collect(out);
  b1_pw_.collect(out);
  b2_pw1_.collect(out);
  b2_dw_.collect(out);
  if (!plain_) se_.collect(out);
  b2_pw2_.collect(out);
  if (!plain_) {
    fuse_dw_.collect(out);
    fuse_pw_.collect(out);
  }
}

// ---------------------------------------------------------------------------
// ESNet
// ---------------------------------------------------------------------------

ESNet::ESNet(const EsNetConfig& cfg, std::mt19937& rng) : cfg_(cfg) {
  const int stem_c = cfg.stem_channels();
  stem_ = nn::ConvBnAct("backbone.stem", 3, stem_c, 3, 2, 1, cfg.activation, rng);
  int in_c = stem_c;
  for (size_t s = 0; s < cfg.stage_block_counts.size(); ++s) {
    const int out_c = cfg_.stage_channels(static_cast<int>(s));
    std::vector<EsBlock> blocks;
    for (int b = 0; b < cfg.stage_block_counts[s]; ++b) {
      const std::string name =
          "backbone.stage" + std::to_string(s + 2) + ".block" + std::to_string(b);
      blocks.emplace_back(name, b == 0 ? in_c : out_c, out_c, b == 0 ? 2 : 1, cfg_, rng);
    }
    stages_.push_back(std::move(blocks));
    in_c = out_c;
  }
  conv5_ = nn::ConvBnAct("backbone.conv5", in_c, cfg.classifier_channels, 1, 1, 1,
                         cfg.activation, rng);
  fc_ = nn::Conv2d("backbone.fc", cfg.classifier_channels, cfg.num_classes, 1, 1, 0, 1,
                   true, rng);
}

void ESNet::set_ratios(const std::vector<double>& ratios) {
  if (!ratios.empty() && static_cast<int>(ratios.size()) != cfg_.total_blocks())
    throw std::invalid_argument("set_ratios: genotype length mismatch");
  ratios_ = ratios;
}

BackboneFeatures ESNet::forward(const Var& image, bool training) {
  if (image->value.dim(2) < 32 || image->value.dim(3) < 32)
    throw std::invalid_argument("ESNet: input smaller than 32x32");
  Var x = stem_.forward(image, training);
  x = nn::max_pool2d(x, 3, 2, 1);
  BackboneFeatures feats;
  size_t block_idx = 0;
  for (size_t s = 0; s < stages_.size(); ++s) {
    for (auto& block : stages_[s]) {
      const double r = ratios_.empty() ? 1.0 : ratios_[block_idx];
      x = block.forward(x, training, r);
      ++block_idx;
    }
    if (s == 0) feats.c3 = x;
    if (s == 1) feats.c4 = x;
    if (s == 2) feats.c5 = x;
  }
  return feats;
}

Var ESNet::forward_classifier(const Var& image, bool training) {
  Var x = stem_.forward(image, training);
  x = nn::max_pool2d(x, 3, 2, 1);
  size_t block_idx = 0;
  for (auto& stage : stages_) {
    for (auto& block : stage) {
      const double r = ratios_.empty() ? 1.0 : ratios_[block_idx];
      x = block.forward(x, training, r);
      ++block_idx;
    }
  }
  x = conv5_.forward(x, training);
  x = nn::global_avg_pool(x);
  return fc_.forward(x);
}

void ESNet::collect(nn::ParamList& out) {
  collect_detection(out);
  conv5_.collect(out);
  fc_.collect(out);
}

void ESNet::collect_detection(nn::ParamList& out) {
  stem_.collect(out);
  for (auto& stage : stages_)
    for (auto& block : stage) block.collect(out);
}

}  // namespace picodet

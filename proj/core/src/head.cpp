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

#include "picodet/head.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace picodet {

using nn::Var;

GflHead::GflHead(const HeadConfig& cfg, int in_channels, int num_levels,
                 std::mt19937& rng)
    : cfg_(cfg), num_levels_(num_levels) {
  const int shared = cfg.share_weights_across_levels ? 1 : num_levels;
  for (int l = 0; l < shared; ++l) {
    std::vector<nn::DpModule> tower;
    for (int d = 0; d < cfg.dp_count; ++d)
      tower.emplace_back("head.l" + std::to_string(l) + ".dp" + std::to_string(d),
                         in_channels, in_channels, 5, 1, cfg.activation, rng);
    towers_.push_back(std::move(tower));
    predictors_.emplace_back("head.l" + std::to_string(l) + ".pred", in_channels,
                             cfg.out_channels(), 1, 1, 0, 1, true, rng);
    // Classification bias starts at a 0.01 prior so early training is not
    // swamped by negatives.
    const float prior_bias = -std::log(99.0f);
    for (int c = 0; c < cfg.num_classes; ++c)
      predictors_.back().b.value()[c] = prior_bias;
  }
}

HeadOutputs GflHead::forward(const NeckFeatures& feats, bool training) {
  if (static_cast<int>(feats.levels.size()) != num_levels_)
    throw std::invalid_argument("GflHead: level count mismatch");
  HeadOutputs out;
  out.strides = feats.strides;
  for (int l = 0; l < num_levels_; ++l) {
    const int il = cfg_.share_weights_across_levels ? 0 : l;
    Var x = feats.levels[size_t(l)];
    for (auto& dp : towers_[size_t(il)]) x = dp.forward(x, training);
    Var pred = predictors_[size_t(il)].forward(x);
    out.cls_logits.push_back(nn::slice_channels(pred, 0, cfg_.num_classes));
    out.reg_logits.push_back(nn::slice_channels(pred, cfg_.num_classes, cfg_.reg_channels()));
    out.level_shapes.emplace_back(pred->value.dim(2), pred->value.dim(3));
  }
  return out;
}

void GflHead::collect(nn::ParamList& out) {
  for (auto& tower : towers_)
    for (auto& dp : tower) dp.collect(out);
  for (auto& p : predictors_) p.collect(out);
}

std::vector<std::vector<Detection>> decode(const HeadOutputs& outputs,
                                           const HeadConfig& cfg, int image_w,
                                           int image_h) {
  const int bins = cfg.reg_max + 1;
  const int N = outputs.cls_logits.empty() ? 0 : outputs.cls_logits[0]->value.dim(0);
  std::vector<std::vector<Detection>> per_image(static_cast<size_t>(N));
  for (size_t l = 0; l < outputs.cls_logits.size(); ++l) {
    const Tensor& cls = outputs.cls_logits[l]->value;
    const Tensor& reg = outputs.reg_logits[l]->value;
    const double stride = outputs.strides[l];
    const int H = cls.dim(2), W = cls.dim(3), C = cls.dim(1);
    for (int n = 0; n < N; ++n) {
      for (int i = 0; i < H; ++i) {
        for (int j = 0; j < W; ++j) {
          double best = -1;
          int best_c = -1;
          for (int c = 0; c < C; ++c) {
            const double s = 1.0 / (1.0 + std::exp(-double(cls.at(n, c, i, j))));
            if (s > best) {
              best = s;
              best_c = c;
            }
          }
          if (best < cfg.score_threshold) continue;
          // Integral decode: per-side softmax expectation, stride-scaled.
          double sides[4];
          for (int s = 0; s < 4; ++s) {
            double maxv = -1e30;
            for (int b = 0; b < bins; ++b)
              maxv = std::max(maxv, double(reg.at(n, s * bins + b, i, j)));
            double denom = 0, e = 0;
            for (int b = 0; b < bins; ++b) {
              const double p = std::exp(double(reg.at(n, s * bins + b, i, j)) - maxv);
              denom += p;
              e += b * p;
            }
            sides[s] = e / denom * stride;
          }
          const AnchorPoint p{(j + 0.5) * stride, (i + 0.5) * stride, stride,
                              static_cast<int>(l)};
          Box box{p.cx - sides[0], p.cy - sides[1], p.cx + sides[2], p.cy + sides[3]};
          box.x1 = std::clamp(box.x1, 0.0, double(image_w));
          box.y1 = std::clamp(box.y1, 0.0, double(image_h));
          box.x2 = std::clamp(box.x2, box.x1, double(image_w));
          box.y2 = std::clamp(box.y2, box.y1, double(image_h));
          per_image[size_t(n)].push_back({box, best, best_c});
        }
      }
    }
  }
  return per_image;
}

std::vector<Detection> nms(std::vector<Detection> dets, const HeadConfig& cfg) {
  std::stable_sort(dets.begin(), dets.end(),
                   [](const Detection& a, const Detection& b) { return a.score > b.score; });
  std::vector<Detection> kept;
  std::vector<char> suppressed(dets.size(), 0);
  for (size_t i = 0; i < dets.size(); ++i) {
    if (suppressed[i]) continue;
    kept.push_back(dets[i]);
    if (static_cast<int>(kept.size()) >= cfg.max_detections) break;
    for (size_t j = i + 1; j < dets.size(); ++j) {
      if (suppressed[j] || dets[j].class_id != dets[i].class_id) continue;
      if (iou(dets[i].box, dets[j].box) >= cfg.nms_iou) suppressed[j] = 1;
    }
  }
  return kept;
}

}  // namespace picodet

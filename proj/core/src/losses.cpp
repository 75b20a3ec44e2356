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

#include "picodet/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace picodet {

namespace {
double clamp_unit(double p, double eps) { return std::min(std::max(p, eps), 1.0 - eps); }
}  // namespace

double DistributionSpec::clamp_target(double y) const {
  return std::min(std::max(y, 0.0), double(reg_max) - 0.01);
}

double varifocal_loss(double p, double q, const LossConfig& cfg, double* grad_p) {
  const double pc = clamp_unit(p, cfg.eps);
  const bool interior = (p == pc);
  double loss, dp;
  if (q > 0) {
    loss = -q * (q * std::log(pc) + (1 - q) * std::log(1 - pc));
    dp = -q * (q / pc - (1 - q) / (1 - pc));
  } else {
    const double mod = cfg.vfl_alpha * std::pow(pc, cfg.vfl_gamma);
    loss = -mod * std::log(1 - pc);
    dp = -cfg.vfl_alpha * (cfg.vfl_gamma * std::pow(pc, cfg.vfl_gamma - 1) * std::log(1 - pc) -
                           std::pow(pc, cfg.vfl_gamma) / (1 - pc));
  }
  if (grad_p) *grad_p = interior ? dp : 0.0;
  return loss;
}

double quality_focal_loss(double p, double q, const LossConfig& cfg, double* grad_p) {
  const double pc = clamp_unit(p, cfg.eps);
  const bool interior = (p == pc);
  const double m = std::abs(q - pc);
  const double ce = (1 - q) * std::log(1 - pc) + q * std::log(pc);
  const double mb = std::pow(m, cfg.qfl_beta);
  const double loss = -mb * ce;
  if (grad_p) {
    if (m == 0.0) {
      *grad_p = 0.0;
    } else {
      const double sgn = pc > q ? 1.0 : -1.0;
      const double dce = q / pc - (1 - q) / (1 - pc);
      const double dm = cfg.qfl_beta * std::pow(m, cfg.qfl_beta - 1) * sgn;
      *grad_p = interior ? -(dm * ce + mb * dce) : 0.0;
    }
  }
  return loss;
}

double giou_loss(const Box& pred, const Box& gt) { return 1.0 - giou(pred, gt); }

double giou_loss_with_grad(const Box& pred, const Box& gt, BoxGrad& grad) {
  const double g = giou_with_grad(pred, gt, grad);
  grad.dx1 = -grad.dx1;
  grad.dy1 = -grad.dy1;
  grad.dx2 = -grad.dx2;
  grad.dy2 = -grad.dy2;
  return 1.0 - g;
}

double distribution_focal_loss(const std::vector<double>& dist, double y,
                               const DistributionSpec& spec, const LossConfig& cfg,
                               std::vector<double>* grad) {
  if (static_cast<int>(dist.size()) != spec.num_bins())
    throw std::invalid_argument("distribution_focal_loss: bin count mismatch");
  if (y < 0 || y > spec.reg_max)
    throw std::invalid_argument("distribution_focal_loss: target outside [0, reg_max]");
  const int i = static_cast<int>(std::floor(y));
  const double wl = i + 1 - y;  // weight on the left bin
  const double wr = y - i;
  if (grad) grad->assign(dist.size(), 0.0);
  double loss = 0.0;
  if (wl > 0) {
    const double s = clamp_unit(dist[size_t(i)], cfg.eps);
    loss -= wl * std::log(s);
    if (grad && dist[size_t(i)] == s) (*grad)[size_t(i)] = -wl / s;
  }
  if (wr > 0) {
    const double s = clamp_unit(dist[size_t(i + 1)], cfg.eps);
    loss -= wr * std::log(s);
    if (grad && dist[size_t(i + 1)] == s) (*grad)[size_t(i + 1)] = -wr / s;
  }
  return loss;
}

double dfl_expectation(const std::vector<double>& dist, const DistributionSpec& spec) {
  if (static_cast<int>(dist.size()) != spec.num_bins())
    throw std::invalid_argument("dfl_expectation: bin count mismatch");
  double e = 0.0;
  for (size_t i = 0; i < dist.size(); ++i) e += double(i) * dist[i];
  return e;
}

DetectionLossBreakdown detection_loss(const std::vector<AnchorPrediction>& preds,
                                      const std::vector<AnchorTarget>& targets,
                                      const DistributionSpec& spec,
                                      const LossConfig& cfg) {
  if (preds.size() != targets.size())
    throw std::invalid_argument("detection_loss: prediction/target count mismatch");
  DetectionLossBreakdown out;
  double quality_sum = 0.0;
  for (const auto& t : targets)
    if (t.positive) quality_sum += t.quality;
  out.normalizer = std::max(1.0, quality_sum);

  auto cls_loss = [&](double p, double q) {
    return cfg.use_qfl ? quality_focal_loss(p, q, cfg) : varifocal_loss(p, q, cfg);
  };

  double vfl_sum = 0, giou_sum = 0, dfl_sum = 0;
  for (size_t a = 0; a < preds.size(); ++a) {
    const auto& p = preds[a];
    const auto& t = targets[a];
    for (size_t c = 0; c < p.scores.size(); ++c) {
      const double q = (t.positive && static_cast<int>(c) == t.class_target) ? t.quality : 0.0;
      vfl_sum += cls_loss(p.scores[c], q);
    }
    if (t.positive) {
      giou_sum += giou_loss(p.box, t.gt_box);
      const double side_targets[4] = {t.gt_dist.l, t.gt_dist.t, t.gt_dist.r, t.gt_dist.b};
      for (int s = 0; s < 4; ++s)
        dfl_sum += distribution_focal_loss(p.side_dists[size_t(s)],
                                           spec.clamp_target(side_targets[s]), spec, cfg) /
                   4.0;
    }
  }
  out.vfl = vfl_sum / out.normalizer;
  out.giou = giou_sum / out.normalizer;
  out.dfl = dfl_sum / out.normalizer;
  out.total = out.vfl + cfg.giou_weight * out.giou + cfg.dfl_weight * out.dfl;
  return out;
}

}  // namespace picodet

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

#include <doctest.h>

#include <cmath>
#include <random>

#include "picodet/losses.hpp"

using namespace picodet;

namespace {
const LossConfig kCfg;
}

TEST_CASE("varifocal loss values") {
  // Positive: plain BCE weighted by quality; negative: alpha * p^gamma focal.
  double p = 0.6, q = 0.8;
  double expect_pos = -(q * (q * std::log(p) + (1 - q) * std::log(1 - p)));
  CHECK(varifocal_loss(p, q, kCfg) == doctest::Approx(expect_pos).epsilon(1e-9));
  double expect_neg = -kCfg.vfl_alpha * std::pow(p, kCfg.vfl_gamma) * std::log(1 - p);
  CHECK(varifocal_loss(p, 0.0, kCfg) == doctest::Approx(expect_neg).epsilon(1e-9));
  // Perfect prediction of the quality target minimizes the positive loss.
  double at_q = varifocal_loss(q, q, kCfg);
  CHECK(at_q < varifocal_loss(q - 0.2, q, kCfg));
  CHECK(at_q < varifocal_loss(q + 0.15, q, kCfg));
}

TEST_CASE("quality focal loss values") {
  double p = 0.3, q = 0.7;
  double ce = -(q * std::log(p) + (1 - q) * std::log(1 - p));
  CHECK(quality_focal_loss(p, q, kCfg) ==
        doctest::Approx(std::pow(std::abs(q - p), kCfg.qfl_beta) * ce).epsilon(1e-9));
  // Zero at p == q (the modulation vanishes).
  CHECK(quality_focal_loss(0.7, 0.7, kCfg) == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("classification loss gradients match finite differences (100 random inputs)") {
  std::mt19937 rng(41);
  std::uniform_real_distribution<double> up(0.02, 0.98), uq(0.0, 1.0);
  const double h = 1e-5;
  for (int i = 0; i < 100; ++i) {
    double p = up(rng);
    double q = (i % 3 == 0) ? 0.0 : uq(rng);
    for (bool qfl : {false, true}) {
      auto f = [&](double pp) {
        return qfl ? quality_focal_loss(pp, q, kCfg) : varifocal_loss(pp, q, kCfg);
      };
      double g = 0;
      if (qfl)
        quality_focal_loss(p, q, kCfg, &g);
      else
        varifocal_loss(p, q, kCfg, &g);
      double fd = (f(p + h) - f(p - h)) / (2 * h);
      CHECK(g == doctest::Approx(fd).epsilon(1e-3));
    }
  }
}

TEST_CASE("giou loss and gradient") {
  Box a{0, 0, 2, 2};
  CHECK(giou_loss(a, a) == doctest::Approx(0.0));
  CHECK(giou_loss(a, Box{10, 10, 12, 12}) > 1.0);

  std::mt19937 rng(43);
  std::uniform_real_distribution<double> u(0.0, 8.0);
  const double h = 1e-5;
  for (int i = 0; i < 100; ++i) {
    Box p{u(rng), u(rng), 0, 0};
    p.x2 = p.x1 + 0.5 + u(rng);
    p.y2 = p.y1 + 0.5 + u(rng);
    Box g{u(rng), u(rng), 0, 0};
    g.x2 = g.x1 + 0.5 + u(rng);
    g.y2 = g.y1 + 0.5 + u(rng);
    BoxGrad an;
    giou_loss_with_grad(p, g, an);
    double* slot[4] = {&p.x1, &p.y1, &p.x2, &p.y2};
    double val[4] = {an.dx1, an.dy1, an.dx2, an.dy2};
    for (int s = 0; s < 4; ++s) {
      double save = *slot[s];
      *slot[s] = save + h;
      double up2 = giou_loss(p, g);
      *slot[s] = save - h;
      double dn = giou_loss(p, g);
      *slot[s] = save;
      CHECK(val[s] == doctest::Approx((up2 - dn) / (2 * h)).epsilon(1e-3));
    }
  }
}

TEST_CASE("distribution focal loss: value, minimizer, gradient") {
  DistributionSpec spec;  // reg_max 7
  // Exact integer target with all mass on the right bin -> zero loss.
  std::vector<double> onehot(8, 1e-12);
  onehot[3] = 1.0 - 7e-12;
  CHECK(distribution_focal_loss(onehot, 3.0, spec, kCfg) ==
        doctest::Approx(0.0).epsilon(1e-6));

  // Grid-search oracle: among two-bin distributions (i, i+1), the minimizer
  // of DFL for target y = 3.4 puts weight (1 - 0.4, 0.4).
  double y = 3.4;
  double best = 1e9, best_w = -1;
  for (int wi = 0; wi <= 100; ++wi) {
    double w = wi / 100.0;
    std::vector<double> d(8, 1e-12);
    d[3] = 1 - w;
    d[4] = w;
    double v = distribution_focal_loss(d, y, spec, kCfg);
    if (v < best) {
      best = v;
      best_w = w;
    }
  }
  CHECK(best_w == doctest::Approx(0.4).epsilon(1e-6));

  // Expectation of the optimal two-bin distribution reproduces the target.
  std::vector<double> opt(8, 0.0);
  opt[3] = 0.6;
  opt[4] = 0.4;
  CHECK(dfl_expectation(opt, spec) == doctest::Approx(3.4).epsilon(1e-9));

  // FD gradient over 100 random distributions.
  std::mt19937 rng(47);
  std::uniform_real_distribution<double> u(0.05, 1.0), uy(0.0, 7.0);
  const double h = 1e-5;
  for (int i = 0; i < 100; ++i) {
    std::vector<double> d(8);
    double z = 0;
    for (double& v : d) {
      v = u(rng);
      z += v;
    }
    for (double& v : d) v /= z;
    double yy = uy(rng);
    if (std::abs(yy - std::round(yy)) < 0.01) yy += 0.05;  // keep floor stable
    std::vector<double> grad;
    distribution_focal_loss(d, yy, spec, kCfg, &grad);
    for (int kbin = 0; kbin < 8; ++kbin) {
      std::vector<double> dp = d, dm = d;
      dp[size_t(kbin)] += h;
      dm[size_t(kbin)] -= h;
      double fd = (distribution_focal_loss(dp, yy, spec, kCfg) -
                   distribution_focal_loss(dm, yy, spec, kCfg)) /
                  (2 * h);
      CHECK(grad[size_t(kbin)] == doctest::Approx(fd).epsilon(1e-3));
    }
  }
}

TEST_CASE("clamp_target keeps the integral bins defined") {
  DistributionSpec spec;
  CHECK(spec.clamp_target(-1.0) == doctest::Approx(0.0));
  CHECK(spec.clamp_target(3.5) == doctest::Approx(3.5));
  CHECK(spec.clamp_target(7.0) == doctest::Approx(7.0 - 0.01));
  CHECK(spec.clamp_target(99.0) == doctest::Approx(7.0 - 0.01));
}

TEST_CASE("detection_loss composition and normalizer") {
  DistributionSpec spec;
  LossConfig cfg;
  // Two anchors, one positive with quality 0.5 -> normalizer max(1, 0.5) = 1.
  std::vector<AnchorPrediction> preds(2);
  for (auto& p : preds) {
    p.scores = {0.3, 0.2};
    p.box = Box{0, 0, 4, 4};
    p.side_dists.assign(4, std::vector<double>(8, 1.0 / 8));
  }
  std::vector<AnchorTarget> targets(2);
  targets[0].positive = true;
  targets[0].class_target = 1;
  targets[0].quality = 0.5;
  targets[0].gt_box = Box{0, 0, 3, 4};
  targets[0].gt_dist = DistanceTarget{1, 1, 2, 2};

  auto bl = detection_loss(preds, targets, spec, cfg);
  CHECK(bl.normalizer == doctest::Approx(1.0));

  double vfl_expect = varifocal_loss(0.3, 0.0, cfg)      // anchor0 class0
                      + varifocal_loss(0.2, 0.5, cfg)    // anchor0 class1 (positive)
                      + varifocal_loss(0.3, 0.0, cfg)    // anchor1 class0
                      + varifocal_loss(0.2, 0.0, cfg);   // anchor1 class1
  CHECK(bl.vfl == doctest::Approx(vfl_expect).epsilon(1e-9));

  double giou_expect = giou_loss(preds[0].box, targets[0].gt_box);
  CHECK(bl.giou == doctest::Approx(giou_expect).epsilon(1e-9));

  double dfl_expect = 0;
  std::vector<double> uniform(8, 1.0 / 8);
  for (double yy : {1.0, 1.0, 2.0, 2.0})
    dfl_expect += distribution_focal_loss(uniform, spec.clamp_target(yy), spec, cfg);
  dfl_expect /= 4;
  CHECK(bl.dfl == doctest::Approx(dfl_expect).epsilon(1e-9));

  CHECK(bl.total == doctest::Approx(bl.vfl + cfg.giou_weight * bl.giou +
                                    cfg.dfl_weight * bl.dfl)
                        .epsilon(1e-9));

  // Higher total quality raises the normalizer.
  targets[1].positive = true;
  targets[1].class_target = 0;
  targets[1].quality = 0.9;
  targets[1].gt_box = Box{0, 0, 4, 4};
  targets[1].gt_dist = DistanceTarget{2, 2, 2, 2};
  auto bl2 = detection_loss(preds, targets, spec, cfg);
  CHECK(bl2.normalizer == doctest::Approx(1.4));
}

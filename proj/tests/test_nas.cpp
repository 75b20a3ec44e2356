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

#include <algorithm>
#include <random>

#include "grad_check.hpp"
#include "picodet/nas.hpp"

using namespace picodet;

namespace {

const std::vector<double> kRatioSet{0.5, 0.675, 0.75, 0.875, 1.0};

}  // namespace

TEST_CASE("sandwich sample brackets the space with max and min") {
  std::mt19937 rng(3);
  auto cands = sandwich_sample(6, kRatioSet, rng);
  REQUIRE(cands.size() == 8);
  CHECK(cands[0] == uniform_genotype(6, 1.0));
  CHECK(cands[1] == uniform_genotype(6, 0.5));
  for (size_t i = 2; i < 8; ++i) {
    REQUIRE(cands[i].ratios.size() == 6);
    for (double r : cands[i].ratios)
      CHECK(std::count(kRatioSet.begin(), kRatioSet.end(), r) == 1);
  }
  // Same seed reproduces the random tail.
  std::mt19937 rng2(3);
  auto again = sandwich_sample(6, kRatioSet, rng2);
  for (size_t i = 0; i < 8; ++i) CHECK(cands[i] == again[i]);
}

TEST_CASE("applying the all-max genotype reproduces the full network") {
  auto cfg = picodet_tiny_config(3);
  Detector det(cfg, 11);
  const int blocks = cfg.backbone.total_blocks();
  std::mt19937 rng(11);
  Tensor x = testing::random_tensor({1, 3, 64, 64}, rng, 0.3f);

  auto base = det.forward(x, false);
  apply_genotype(det, uniform_genotype(blocks, 1.0));
  auto full = det.forward(x, false);
  for (size_t l = 0; l < base.cls_logits.size(); ++l)
    for (int64_t i = 0; i < base.cls_logits[l]->value.numel(); ++i)
      REQUIRE(base.cls_logits[l]->value[i] == full.cls_logits[l]->value[i]);

  apply_genotype(det, uniform_genotype(blocks, 0.5));
  auto slim = det.forward(x, false);
  double diff = 0;
  for (int64_t i = 0; i < base.cls_logits[0]->value.numel(); ++i)
    diff += std::abs(base.cls_logits[0]->value[i] - slim.cls_logits[0]->value[i]);
  CHECK(diff > 1e-4);
  CHECK_THROWS(apply_genotype(det, uniform_genotype(blocks + 1, 1.0)));
}

TEST_CASE("children share the supernet weights") {
  // Perturbing a backbone weight must change the slim child's output: the
  // child is a sliced view of the same storage, not a copy.
  auto cfg = picodet_tiny_config(3);
  Detector det(cfg, 13);
  const int blocks = cfg.backbone.total_blocks();
  std::mt19937 rng(13);
  Tensor x = testing::random_tensor({1, 3, 64, 64}, rng, 0.3f);

  apply_genotype(det, uniform_genotype(blocks, 0.5));
  auto before = det.forward(x, false);
  nn::ParamList params = det.params();
  for (auto* p : params) {
    if (p->name.find("stage2.block1.pw1.conv.weight") == std::string::npos) continue;
    for (int64_t i = 0; i < p->value().numel(); ++i) p->value()[i] += 0.05f;
  }
  auto after = det.forward(x, false);
  double diff = 0;
  for (int64_t i = 0; i < before.cls_logits[0]->value.numel(); ++i)
    diff += std::abs(before.cls_logits[0]->value[i] - after.cls_logits[0]->value[i]);
  CHECK(diff > 1e-6);
}

TEST_CASE("flops estimates shrink monotonically with uniform width") {
  auto cfg = picodet_tiny_config(3);
  Detector det(cfg, 17);
  const int blocks = cfg.backbone.total_blocks();
  double prev = 1e18;
  for (double r : {1.0, 0.875, 0.75, 0.675, 0.5}) {
    const double f = estimate_flops_m(det, uniform_genotype(blocks, r), 64);
    CHECK(f > 0);
    CHECK(f <= prev);
    prev = f;
  }
  // estimate_flops_m must not disturb the active ratios.
  CHECK(det.backbone().ratios().empty());
  CHECK(estimate_flops_m(det, uniform_genotype(blocks, 1.0), 128) >
        estimate_flops_m(det, uniform_genotype(blocks, 1.0), 64));
}

TEST_CASE("one sandwich step trains without breaking the full-width model") {
  auto cfg = picodet_tiny_config(3);
  ExperimentConfig xc;
  xc.model.num_classes = 3;
  Detector det(cfg, 19);
  std::mt19937 rng(19);
  Tensor batch = testing::random_tensor({2, 3, 64, 64}, rng, 0.3f);
  std::vector<std::vector<LabeledBox>> gt = {
      {{{8, 8, 40, 40}, 0}},
      {{{20, 12, 56, 60}, 2}},
  };
  nn::ParamList params = det.params();
  nn::SGD opt(params, xc.train.momentum, xc.train.weight_decay);
  auto losses = supernet_train_step(det, batch, gt, xc, opt, 0.01, rng);
  REQUIRE(losses.size() == 8);
  for (double l : losses) {
    CHECK(std::isfinite(l));
    CHECK(l > 0);
  }
  CHECK(det.backbone().ratios().empty());  // restored to full width
  auto out = det.forward(batch, false);
  for (int64_t i = 0; i < out.cls_logits[0]->value.numel(); ++i)
    REQUIRE(std::isfinite(out.cls_logits[0]->value[i]));
}

TEST_CASE("evolution rejects budgets below the smallest child") {
  auto cfg = picodet_tiny_config(3);
  Detector det(cfg, 23);
  ExperimentConfig xc;
  xc.model.num_classes = 3;
  xc.nas.max_flops_m = 0.001;  // far below any genotype
  xc.nas.eval_input_size = 64;
  DatasetIndex empty;
  std::mt19937 rng(23);
  CHECK_THROWS_AS(evolve(det, empty, xc, rng, nullptr), InfeasibleBudget);
}

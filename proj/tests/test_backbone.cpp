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

#include <random>
#include <set>

#include "grad_check.hpp"
#include "picodet/esnet.hpp"

using namespace picodet;

TEST_CASE("round_to_8: nearest multiple, ties upward, floor 8") {
  CHECK(round_to_8(64.0) == 64);
  CHECK(round_to_8(86.4) == 88);   // 0.675 * 128
  CHECK(round_to_8(84.0) == 88);   // tie -> up
  CHECK(round_to_8(83.9) == 80);
  CHECK(round_to_8(2.0) == 8);     // floor
  CHECK(round_to_8(96.0 * 0.75) == 72);
  // Every (ratio, base) pair used by the search space stays divisible by 8.
  for (double r : {0.5, 0.675, 0.75, 0.875, 1.0})
    for (int base : {32, 48, 64, 96, 128, 192, 256, 384, 512})
      CHECK(round_to_8(r * base) % 8 == 0);
}

TEST_CASE("width multiplier scales stage channels onto the published grid") {
  EsNetConfig cfg;
  cfg.width_multiplier = 0.75;
  CHECK(cfg.stage_channels(0) == 96);
  CHECK(cfg.stage_channels(1) == 192);
  CHECK(cfg.stage_channels(2) == 384);
  cfg.width_multiplier = 1.0;
  CHECK(cfg.stage_channels(0) == 128);
  CHECK(cfg.stage_channels(1) == 256);
  CHECK(cfg.stage_channels(2) == 512);
}

TEST_CASE("backbone feature pyramid shapes and strides") {
  std::mt19937 rng(5);
  EsNetConfig cfg;
  cfg.width_multiplier = 0.25;
  ESNet net(cfg, rng);
  Tensor x = Tensor::zeros({1, 3, 128, 128});
  auto f = net.forward(nn::make_var(x), /*training=*/false);
  CHECK(f.c3->value.dim(2) == 16);  // stride 8
  CHECK(f.c4->value.dim(2) == 8);   // stride 16
  CHECK(f.c5->value.dim(2) == 4);   // stride 32
  CHECK(f.c3->value.dim(1) == cfg.stage_channels(0));
  CHECK(f.c4->value.dim(1) == cfg.stage_channels(1));
  CHECK(f.c5->value.dim(1) == cfg.stage_channels(2));
}

TEST_CASE("ghost module halves the primary conv cost") {
  std::mt19937 rng(9);
  GhostModule ghost("g", 64, 64, nn::Activation::kHSwish, rng);
  // A dense 1x1 64->64 conv would cost 64*64 = 4096 weights; the ghost
  // module's primary is 64->32 plus a cheap depthwise 3x3.
  int64_t dense = 64 * 64;
  CHECK(ghost.param_count() < dense);
  Tensor x = Tensor::zeros({1, 64, 8, 8});
  auto y = ghost.forward(nn::make_var(x), false);
  CHECK(y->value.dim(1) == 64);
}

TEST_CASE("channel ratios prune inner widths without changing outputs' shape") {
  std::mt19937 rng(13);
  EsNetConfig cfg;
  cfg.width_multiplier = 0.25;
  cfg.stage_block_counts = {2, 2, 2};
  ESNet net(cfg, rng);
  Tensor x = testing::random_tensor({1, 3, 64, 64}, rng, 1.0f);

  auto full = net.forward(nn::make_var(x), false);
  net.set_ratios(std::vector<double>(6, 0.5));
  auto slim = net.forward(nn::make_var(x), false);
  CHECK(full.c5->value.shape() == slim.c5->value.shape());
  CHECK(full.c3->value.shape() == slim.c3->value.shape());

  // Pruning must change the computation, not just re-run it.
  double diff = 0;
  for (int64_t i = 0; i < full.c5->value.numel(); ++i)
    diff += std::abs(full.c5->value[i] - slim.c5->value[i]);
  CHECK(diff > 1e-3);
  net.set_ratios({});
}

TEST_CASE("set_ratios validates length") {
  std::mt19937 rng(15);
  EsNetConfig cfg;
  cfg.stage_block_counts = {1, 1, 1};
  ESNet net(cfg, rng);
  CHECK_THROWS(net.set_ratios({1.0, 1.0}));
  net.set_ratios({1.0, 1.0, 1.0});  // exact length is fine
}

TEST_CASE("plain shufflenet ablation drops SE/ghost parameters") {
  std::mt19937 rng1(21), rng2(21);
  EsNetConfig es;
  es.width_multiplier = 0.5;
  es.stage_block_counts = {1, 1, 1};
  EsNetConfig plain = es;
  plain.plain_shufflenet = true;

  ESNet a(es, rng1), b(plain, rng2);
  nn::ParamList pa, pb;
  a.collect_detection(pa);
  b.collect_detection(pb);
  auto count = [](const nn::ParamList& l) {
    int64_t n = 0;
    for (auto* p : l)
      if (p->trainable) n += p->value().numel();
    return n;
  };
  CHECK(count(pb) < count(pa));
  std::set<std::string> names;
  for (auto* p : pb) names.insert(p->name);
  for (const std::string& n : names) {
    CHECK(n.find(".se.") == std::string::npos);
    CHECK(n.find("ghost") == std::string::npos);
    CHECK(n.find("fuse") == std::string::npos);
  }
}

TEST_CASE("classifier mode produces logits over the class count") {
  std::mt19937 rng(23);
  EsNetConfig cfg;
  cfg.width_multiplier = 0.25;
  cfg.num_classes = 10;
  cfg.stage_block_counts = {1, 1, 1};
  ESNet net(cfg, rng);
  auto logits = net.forward_classifier(nn::make_var(Tensor::zeros({2, 3, 64, 64})), false);
  CHECK(logits->value.dim(0) == 2);
  CHECK(logits->value.dim(1) == 10);
}

TEST_CASE("parameter names are unique and stable") {
  std::mt19937 rng(25);
  EsNetConfig cfg;
  cfg.stage_block_counts = {1, 1, 1};
  ESNet net(cfg, rng);
  nn::ParamList params;
  net.collect(params);
  std::set<std::string> names;
  for (auto* p : params) {
    CHECK(names.insert(p->name).second);  // no duplicates
    CHECK(!p->name.empty());
  }
}

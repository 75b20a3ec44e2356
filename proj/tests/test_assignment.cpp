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
#include <cmath>
#include <random>

#include "picodet/assignment.hpp"

using namespace picodet;

#include "support/simota_oracle.hpp"

using testing::Instance;
using testing::oracle_assign;
using testing::random_instance;


TEST_CASE("center prior: inside-box or near-center anchors only") {
  AssignerConfig cfg;
  std::vector<AnchorPoint> anchors = {
      {10, 10, 8, 0},   // inside
      {100, 100, 8, 0},  // far away
      {34, 10, 8, 0},   // outside box but within 2.5 * 8 of center (20, 10)
  };
  std::vector<LabeledBox> gts = {{Box{0, 0, 30, 20}, 0}};
  auto mask = center_prior_candidates(anchors, gts, cfg);
  CHECK(mask[0] == 1);
  CHECK(mask[1] == 0);
  CHECK(mask[2] == 1);
}

TEST_CASE("dynamic_k: floor of top-n IoU sum, clamped") {
  AssignerConfig cfg;
  CHECK(dynamic_k({0.9, 0.8, 0.7}, cfg) == 2);       // floor(2.4) = 2
  CHECK(dynamic_k({0.1, 0.1}, cfg) == 1);            // floor(0.2) -> min 1
  CHECK(dynamic_k({0.9, 0.9}, cfg) == 1);            // floor(1.8) = 1
  std::vector<double> many(20, 0.75);
  CHECK(dynamic_k(many, cfg) == 7);                  // top-10 sum = 7.5
}

TEST_CASE("dynamic_k uses only the top-n ious") {
  AssignerConfig cfg;  // top_n = 10
  std::vector<double> many(20, 0.5);
  // top-10 sum = 5.0 -> k = 5 (the other 10 are ignored)
  CHECK(dynamic_k(many, cfg) == 5);
}

TEST_CASE("modified SimOTA equals the brute-force oracle (1000 instances)") {
  std::mt19937 rng(59);
  AssignerConfig cfg;
  for (int i = 0; i < 1000; ++i) {
    Instance inst = random_instance(rng);
    auto got = simota_assign(inst.scores, inst.boxes, inst.anchors, inst.gts, cfg);
    auto want = oracle_assign(inst, cfg);
    REQUIRE(got.matched_gt == want.matched_gt);
    for (size_t a = 0; a < inst.anchors.size(); ++a) {
      CHECK(got.quality[a] == doctest::Approx(want.quality[a]).epsilon(1e-12));
      CHECK(got.class_target[a] == want.class_target[a]);
      if (got.matched_gt[a] >= 0) {
        CHECK(got.distance_target[a].l == doctest::Approx(want.distance_target[a].l));
        CHECK(got.distance_target[a].b == doctest::Approx(want.distance_target[a].b));
      }
    }
  }
}

TEST_CASE("original SimOTA cost equals the oracle too") {
  std::mt19937 rng(61);
  AssignerConfig cfg;
  cfg.mode = AssignMode::kSimOtaOriginal;
  for (int i = 0; i < 200; ++i) {
    Instance inst = random_instance(rng);
    auto got = simota_assign(inst.scores, inst.boxes, inst.anchors, inst.gts, cfg);
    auto want = oracle_assign(inst, cfg);
    REQUIRE(got.matched_gt == want.matched_gt);
  }
}

TEST_CASE("lambda scales the GIoU term of the cost") {
  AssignerConfig cfg;
  std::vector<AnchorPoint> anchors = {{10, 10, 8, 0}};
  std::vector<LabeledBox> gts = {{Box{0, 0, 20, 20}, 0}};
  std::vector<std::vector<double>> scores = {{0.5}};
  std::vector<Box> boxes = {Box{2, 2, 18, 18}};
  auto mask = center_prior_candidates(anchors, gts, cfg);
  for (double lam : {5.0, 6.0, 7.0}) {
    cfg.cost_lambda = lam;
    auto cm = simota_cost(scores, boxes, anchors, gts, mask, cfg);
    LossConfig lc;
    double expect = varifocal_loss(0.5, iou(boxes[0], gts[0].box), lc) +
                    lam * giou_loss(boxes[0], gts[0].box);
    CHECK(cm.at(0, 0) == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("SimOTA determinism: identical inputs give identical outputs") {
  std::mt19937 rng(67);
  Instance inst = random_instance(rng);
  AssignerConfig cfg;
  auto r1 = simota_assign(inst.scores, inst.boxes, inst.anchors, inst.gts, cfg);
  auto r2 = simota_assign(inst.scores, inst.boxes, inst.anchors, inst.gts, cfg);
  CHECK(r1.matched_gt == r2.matched_gt);
  CHECK(r1.class_target == r2.class_target);
}

TEST_CASE("ATSS: centered anchors become positives, distant ones do not") {
  AssignerConfig cfg;
  cfg.mode = AssignMode::kAtss;
  // A small grid of stride-8 anchors around one GT.
  std::vector<AnchorPoint> anchors;
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x)
      anchors.push_back({x * 8.0 + 4, y * 8.0 + 4, 8.0, 0});
  std::vector<LabeledBox> gts = {{Box{8, 8, 32, 32}, 1}};
  auto r = atss_assign(anchors, gts, cfg);
  CHECK(r.num_positives() > 0);
  for (size_t a = 0; a < anchors.size(); ++a) {
    if (r.matched_gt[a] < 0) continue;
    // ATSS requires the anchor center inside the GT box.
    CHECK(anchors[a].cx >= 8.0);
    CHECK(anchors[a].cx <= 32.0);
    CHECK(anchors[a].cy >= 8.0);
    CHECK(anchors[a].cy <= 32.0);
    CHECK(r.class_target[a] == 1);
  }
}

TEST_CASE("simota_assign rejects the ATSS mode") {
  AssignerConfig cfg;
  cfg.mode = AssignMode::kAtss;
  std::vector<AnchorPoint> anchors = {{4, 4, 8, 0}};
  std::vector<LabeledBox> gts;
  CHECK_THROWS(simota_assign({{0.5}}, {Box{0, 0, 1, 1}}, anchors, gts, cfg));
}

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

#include <benchmark/benchmark.h>

#include <random>

#include "picodet/assignment.hpp"
#include "picodet/detector.hpp"
#include "picodet/geometry.hpp"
#include "picodet/head.hpp"

namespace {

using namespace picodet;

Tensor random_input(int n, int c, int s, uint32_t seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<float> d(0.f, 1.f);
  Tensor t = Tensor::zeros({n, c, s, s});
  for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = d(rng);
  return t;
}

void BM_DetectorForward(benchmark::State& state) {
  const int size = static_cast<int>(state.range(0));
  Detector model(picodet_s_config(80), 1);
  Tensor x = random_input(1, 3, size, 7);
  for (auto _ : state) {
    auto out = model.forward(x, /*training=*/false);
    benchmark::DoNotOptimize(out.cls_logits.front()->value.data());
  }
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_DetectorForward)->Arg(320)->Arg(416)->Unit(benchmark::kMillisecond);

void BM_DetectorInfer(benchmark::State& state) {
  Detector model(picodet_tiny_config(3), 1);
  Tensor x = random_input(1, 3, 128, 7);
  for (auto _ : state) {
    auto dets = model.infer(x);
    benchmark::DoNotOptimize(dets);
  }
}
BENCHMARK(BM_DetectorInfer)->Unit(benchmark::kMillisecond);

void BM_IoUPairwise(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  std::mt19937 rng(3);
  std::uniform_real_distribution<double> d(0, 100);
  std::vector<Box> a(static_cast<size_t>(n)), b(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    double x = d(rng), y = d(rng);
    a[size_t(i)] = {x, y, x + 1 + d(rng), y + 1 + d(rng)};
    x = d(rng), y = d(rng);
    b[size_t(i)] = {x, y, x + 1 + d(rng), y + 1 + d(rng)};
  }
  for (auto _ : state) {
    double acc = 0;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) acc += iou(a[size_t(i)], b[size_t(j)]);
    benchmark::DoNotOptimize(acc);
  }
  state.SetItemsProcessed(state.iterations() * n * n);
}
BENCHMARK(BM_IoUPairwise)->Arg(100)->Arg(300);

void BM_Nms(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  std::mt19937 rng(11);
  std::uniform_real_distribution<double> d(0, 300);
  std::uniform_real_distribution<double> s(0, 1);
  std::vector<Detection> dets(static_cast<size_t>(n));
  for (auto& det : dets) {
    double x = d(rng), y = d(rng);
    det.box = {x, y, x + 5 + d(rng) / 4, y + 5 + d(rng) / 4};
    det.score = s(rng);
    det.class_id = int(rng() % 3);
  }
  HeadConfig cfg;
  cfg.num_classes = 3;
  for (auto _ : state) {
    auto kept = nms(dets, cfg);
    benchmark::DoNotOptimize(kept);
  }
  state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(BM_Nms)->Arg(200)->Arg(1000);

void BM_SimOtaAssign(benchmark::State& state) {
  const int anchors = static_cast<int>(state.range(0));
  const int gts = 8;
  std::mt19937 rng(5);
  std::uniform_real_distribution<double> u(0, 1);
  std::uniform_real_distribution<double> pos(0, 256);
  std::vector<std::vector<double>> scores(static_cast<size_t>(anchors),
                                          std::vector<double>(3));
  std::vector<Box> boxes(static_cast<size_t>(anchors));
  std::vector<AnchorPoint> pts(static_cast<size_t>(anchors));
  for (int i = 0; i < anchors; ++i) {
    for (auto& sc : scores[size_t(i)]) sc = u(rng);
    double x = pos(rng), y = pos(rng);
    boxes[size_t(i)] = {x, y, x + 10 + pos(rng) / 8, y + 10 + pos(rng) / 8};
    pts[size_t(i)] = {pos(rng), pos(rng), 8};
  }
  std::vector<LabeledBox> gt(static_cast<size_t>(gts));
  for (auto& g : gt) {
    double x = pos(rng), y = pos(rng);
    g.box = {x, y, x + 20 + pos(rng) / 4, y + 20 + pos(rng) / 4};
    g.class_id = int(rng() % 3);
  }
  AssignerConfig cfg;
  for (auto _ : state) {
    auto result = simota_assign(scores, boxes, pts, gt, cfg);
    benchmark::DoNotOptimize(result);
  }
  state.SetItemsProcessed(state.iterations() * anchors);
}
BENCHMARK(BM_SimOtaAssign)->Arg(400)->Arg(1600);

}  // namespace

BENCHMARK_MAIN();

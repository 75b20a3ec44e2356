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

#include <iosfwd>
#include <random>
#include <vector>

#include "picodet/config.hpp"
#include "picodet/data.hpp"
#include "picodet/detector.hpp"
#include "picodet/train.hpp"

namespace picodet {

// Per-block inner-channel width ratios for the backbone supernet.
struct ArchGenotype {
  std::vector<double> ratios;

  bool operator==(const ArchGenotype& o) const { return ratios == o.ratios; }
};

ArchGenotype uniform_genotype(int num_blocks, double ratio);

// Sandwich rule: [all-max, all-min, six uniform-random genotypes].
std::vector<ArchGenotype> sandwich_sample(int num_blocks,
                                          const std::vector<double>& ratio_set,
                                          std::mt19937& rng);

// Activates the genotype's widths on the shared supernet weights (sliced
// views, no copies). Throws on length mismatch.
void apply_genotype(Detector& supernet, const ArchGenotype& g);

// Multiply-accumulate count (in millions) of the child at the given square
// input size. Restores the supernet's previous ratios.
double estimate_flops_m(Detector& supernet, const ArchGenotype& g, int input_size);

// One sandwich step: accumulate gradients from the 8 candidates on the same
// batch (each scaled by 1/8), L2-clip, one optimizer step. Returns the 8
// per-candidate losses; throws on non-finite loss.
std::vector<double> supernet_train_step(Detector& supernet, const Tensor& batch,
                                        const std::vector<std::vector<LabeledBox>>& gt,
                                        const ExperimentConfig& cfg, nn::SGD& opt,
                                        double lr, std::mt19937& rng);

struct SearchResult {
  ArchGenotype best;
  double fitness = 0;   // mAP@0.5 on the validation subset
  double flops_m = 0;
  int evaluations = 0;
};

// Thrown when no genotype in the space fits the FLOPs budget.
struct InfeasibleBudget : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Evolutionary search on the frozen supernet: tournament selection,
// single-point crossover, per-gene mutation; offspring over the FLOPs budget
// are rejected. Writes JSON lines {generation, genotype, flops_m, fitness}
// to log when non-null. Best-so-far fitness is nondecreasing.
SearchResult evolve(Detector& supernet, const DatasetIndex& val_subset,
                    const ExperimentConfig& cfg, std::mt19937& rng,
                    std::ostream* log = nullptr);

}  // namespace picodet

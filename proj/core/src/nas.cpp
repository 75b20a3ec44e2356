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

#include "picodet/nas.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <ostream>
#include <stdexcept>

#include <json.hpp>

namespace picodet {

using json = nlohmann::json;

ArchGenotype uniform_genotype(int num_blocks, double ratio) {
  return ArchGenotype{std::vector<double>(size_t(num_blocks), ratio)};
}

std::vector<ArchGenotype> sandwich_sample(int num_blocks,
                                          const std::vector<double>& ratio_set,
                                          std::mt19937& rng) {
  if (ratio_set.empty()) throw std::invalid_argument("sandwich_sample: empty ratio set");
  double lo = *std::min_element(ratio_set.begin(), ratio_set.end());
  double hi = *std::max_element(ratio_set.begin(), ratio_set.end());
  std::vector<ArchGenotype> out;
  out.push_back(uniform_genotype(num_blocks, hi));
  out.push_back(uniform_genotype(num_blocks, lo));
  std::uniform_int_distribution<size_t> pick(0, ratio_set.size() - 1);
  for (int i = 0; i < 6; ++i) {
    ArchGenotype g;
    g.ratios.reserve(size_t(num_blocks));
    for (int b = 0; b < num_blocks; ++b) g.ratios.push_back(ratio_set[pick(rng)]);
    out.push_back(std::move(g));
  }
  return out;
}

void apply_genotype(Detector& supernet, const ArchGenotype& g) {
  const int expect = supernet.config().backbone.total_blocks();
  if (int(g.ratios.size()) != expect)
    throw std::invalid_argument("apply_genotype: genotype length " +
                                std::to_string(g.ratios.size()) + ", supernet has " +
                                std::to_string(expect) + " blocks");
  supernet.set_ratios(g.ratios);
}

double estimate_flops_m(Detector& supernet, const ArchGenotype& g, int input_size) {
  std::vector<double> saved = supernet.backbone().ratios();
  apply_genotype(supernet, g);
  double macs = double(supernet.flops(input_size)) / 1e6;
  supernet.set_ratios(saved);
  return macs;
}

std::vector<double> supernet_train_step(Detector& supernet, const Tensor& batch,
                                        const std::vector<std::vector<LabeledBox>>& gt,
                                        const ExperimentConfig& cfg, nn::SGD& opt,
                                        double lr, std::mt19937& rng) {
  const int blocks = supernet.config().backbone.total_blocks();
  std::vector<ArchGenotype> candidates = sandwich_sample(blocks, cfg.nas.ratio_set, rng);
  const double scale = 1.0 / double(candidates.size());

  opt.zero_grad();
  std::vector<double> losses;
  for (size_t ci = 0; ci < candidates.size(); ++ci) {
    apply_genotype(supernet, candidates[ci]);
    HeadOutputs out = supernet.forward(batch, /*training=*/true);
    std::vector<Tensor> cls_seeds, reg_seeds;
    DetectionLossBreakdown loss = compute_detection_grads(
        out, gt, cfg.assign, cfg.loss, supernet.config().head.reg_max, cls_seeds,
        reg_seeds);
    if (!std::isfinite(loss.total))
      throw std::runtime_error("supernet_train_step: non-finite loss for candidate " +
                               std::to_string(ci) + " (vfl=" + std::to_string(loss.vfl) +
                               " giou=" + std::to_string(loss.giou) +
                               " dfl=" + std::to_string(loss.dfl) + ")");
    losses.push_back(loss.total);

    std::vector<nn::Var> roots;
    std::vector<Tensor> seeds;
    for (size_t l = 0; l < out.cls_logits.size(); ++l) {
      cls_seeds[l].scale_(static_cast<float>(scale));
      reg_seeds[l].scale_(static_cast<float>(scale));
      roots.push_back(out.cls_logits[l]);
      seeds.push_back(cls_seeds[l]);
      roots.push_back(out.reg_logits[l]);
      seeds.push_back(reg_seeds[l]);
    }
    nn::backward(roots, seeds);
  }
  opt.clip_grad_norm(static_cast<float>(cfg.nas.clip_grad_norm));
  opt.step(static_cast<float>(lr));
  supernet.set_ratios({});  // back to full width
  return losses;
}

namespace {

double child_fitness(Detector& supernet, const ArchGenotype& g,
                     const DatasetIndex& val_subset, int input_size) {
  apply_genotype(supernet, g);
  EvalResult ev = evaluate_detector(supernet, val_subset, input_size);
  supernet.set_ratios({});
  return ev.map_50;
}

}  // namespace

SearchResult evolve(Detector& supernet, const DatasetIndex& val_subset,
                    const ExperimentConfig& cfg, std::mt19937& rng, std::ostream* log) {
  const NasSchedule& ns = cfg.nas;
  const int blocks = supernet.config().backbone.total_blocks();
  const std::vector<double>& set = ns.ratio_set;
  std::uniform_int_distribution<size_t> pick(0, set.size() - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  auto feasible = [&](const ArchGenotype& g) {
    return ns.max_flops_m <= 0 ||
           estimate_flops_m(supernet, g, ns.eval_input_size) <= ns.max_flops_m;
  };
  auto random_genotype = [&]() {
    ArchGenotype g;
    for (int b = 0; b < blocks; ++b) g.ratios.push_back(set[pick(rng)]);
    return g;
  };

  // The cheapest genotype bounds feasibility of the whole space.
  double lo = *std::min_element(set.begin(), set.end());
  if (!feasible(uniform_genotype(blocks, lo)))
    throw InfeasibleBudget("evolve: smallest genotype exceeds the FLOPs budget (" +
                           std::to_string(ns.max_flops_m) + " MFLOPs)");

  struct Scored {
    ArchGenotype g;
    double fitness;
    double flops_m;
  };
  std::vector<Scored> population;
  SearchResult result;

  // Fitness is deterministic on the frozen supernet, so repeat genotypes are
  // served from a cache and do not count as evaluations.
  std::map<std::vector<double>, Scored> seen;

  auto score = [&](const ArchGenotype& g, int generation) {
    auto hit = seen.find(g.ratios);
    if (hit != seen.end()) return hit->second;
    double flops = estimate_flops_m(supernet, g, ns.eval_input_size);
    double fit = child_fitness(supernet, g, val_subset, ns.eval_input_size);
    ++result.evaluations;
    if (log) {
      json line = {{"generation", generation},
                   {"genotype", g.ratios},
                   {"flops_m", flops},
                   {"fitness", fit}};
      (*log) << line.dump() << "\n";
    }
    if (fit > result.fitness || result.best.ratios.empty()) {
      result.best = g;
      result.fitness = fit;
      result.flops_m = flops;
    }
    Scored s{g, fit, flops};
    seen.emplace(g.ratios, s);
    return s;
  };

  // Initial population: budget-feasible random genotypes (bounded retries).
  for (int i = 0; i < ns.population; ++i) {
    ArchGenotype g;
    bool ok = false;
    for (int attempt = 0; attempt < 1000; ++attempt) {
      g = random_genotype();
      if (feasible(g)) { ok = true; break; }
    }
    if (!ok) g = uniform_genotype(blocks, lo);  // always feasible (checked above)
    population.push_back(score(g, 0));
  }

  auto tournament = [&]() -> const Scored& {
    size_t a = rng() % population.size();
    size_t b = rng() % population.size();
    return population[a].fitness >= population[b].fitness ? population[a] : population[b];
  };

  for (int gen = 1; gen <= ns.generations; ++gen) {
    std::vector<Scored> next;
    // Elitism: carry the best individual forward unchanged.
    size_t best_i = 0;
    for (size_t i = 1; i < population.size(); ++i)
      if (population[i].fitness > population[best_i].fitness) best_i = i;
    next.push_back(population[best_i]);

    int rejects = 0;
    while (int(next.size()) < ns.population) {
      if (rejects > 200) {
        // Degenerate budget corner: fall back to cloning a feasible parent.
        next.push_back(score(tournament().g, gen));
        continue;
      }
      ArchGenotype child = tournament().g;
      if (unit(rng) < ns.crossover_prob) {
        const ArchGenotype& other = tournament().g;
        size_t cut = 1 + rng() % size_t(std::max(1, blocks - 1));
        for (size_t i = cut; i < child.ratios.size(); ++i)
          child.ratios[i] = other.ratios[i];
      }
      for (double& r : child.ratios)
        if (unit(rng) < ns.mutation_prob) r = set[pick(rng)];
      if (!feasible(child)) {  // reject infeasible offspring
        ++rejects;
        continue;
      }
      if (seen.count(child.ratios) && rejects <= 200) {
        // Prefer unexplored genotypes; duplicates add nothing new since the
        // fitness landscape is frozen.
        ++rejects;
        continue;
      }
      next.push_back(score(child, gen));
    }
    population = std::move(next);
  }
  return result;
}

}  // namespace picodet

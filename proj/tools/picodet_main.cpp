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

// Single `picodet` binary with subcommands covering the full pipeline:
// dataset generation, training, evaluation, inference, FLOPs reporting,
// supernet training, and architecture search.
//
// Exit codes: 0 success, 2 config error, 3 checkpoint error, 4 search budget
// infeasible, 1 anything else.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>

#include "picodet/checkpoint.hpp"
#include "picodet/config.hpp"
#include "picodet/nas.hpp"
#include "picodet/train.hpp"

using namespace picodet;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitCheckpoint = 3;
constexpr int kExitInfeasible = 4;

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

ExperimentConfig load_experiment(const std::string& path) {
  ExperimentConfig cfg = load_config(path);
  std::cerr << "resolved config:\n" << dump_config(cfg);
  return cfg;
}

DatasetIndex load_dataset(const std::string& json_path, bool clip) {
  if (json_path.empty())
    throw ConfigError("config: data path required for this command");
  return load_coco_json(json_path, clip);
}

void load_weights(const std::string& path, Detector& model) {
  try {
    auto params = model.params();
    load_checkpoint(path, params);
  } catch (const std::exception& e) {
    throw CheckpointError("checkpoint '" + path + "': " + e.what());
  }
}

int eval_size(const ExperimentConfig& cfg) {
  if (cfg.train.eval_input_size > 0) return cfg.train.eval_input_size;
  return cfg.train.input_sizes.front();
}

int cmd_train(const std::string& config_path, const std::string& out,
              int seed, const std::string& resume) {
  ExperimentConfig cfg = load_experiment(config_path);
  if (seed >= 0) cfg.train.seed = static_cast<uint32_t>(seed);
  auto ds = load_dataset(cfg.data.train_json, cfg.data.clip_boxes);
  Detector model(cfg.model.to_detector(), cfg.train.seed);
  if (!resume.empty()) load_weights(resume, model);
  TrainResult r = train_detector(model, ds, cfg, out);
  std::cout << "trained " << cfg.train.max_iters << " iters: mAP@0.5 " << r.map_50
            << ", mAP(0.5:0.95) " << r.map_50_95 << "\n"
            << "checkpoint: " << r.checkpoint_path << "\n"
            << "metrics: " << r.metrics_path << "\n";
  return 0;
}

int cmd_eval(const std::string& config_path, const std::string& ckpt,
             const std::string& data, const std::string& out) {
  ExperimentConfig cfg = load_experiment(config_path);
  auto ds = load_dataset(data.empty() ? cfg.data.val_json : data, cfg.data.clip_boxes);
  Detector model(cfg.model.to_detector(), cfg.train.seed);
  load_weights(ckpt, model);
  EvalResult r = evaluate_detector(model, ds, eval_size(cfg));
  std::cout << "mAP(0.5:0.95) " << r.map_50_95 << "\nmAP(0.5) " << r.map_50 << "\n";
  if (!out.empty()) {
    json per_class = json::object();
    for (auto& [cls, ap] : r.per_class_ap50)
      per_class[std::to_string(ds.category_of(cls))] = ap;
    std::ofstream(out) << json{{"map_50_95", r.map_50_95},
                               {"map_50", r.map_50},
                               {"per_class_ap50", per_class}}
                              .dump(2)
                       << "\n";
  }
  return 0;
}

int cmd_infer(const std::string& config_path, const std::string& ckpt,
              const std::string& images, const std::string& out, double threshold) {
  ExperimentConfig cfg = load_experiment(config_path);
  if (threshold >= 0) cfg.model.score_threshold = threshold;
  Detector model(cfg.model.to_detector(), cfg.train.seed);
  load_weights(ckpt, model);
  const int size = eval_size(cfg);

  std::vector<fs::path> files;
  if (fs::exists(images))
    for (auto& e : fs::directory_iterator(images)) {
      auto ext = e.path().extension().string();
      if (ext == ".png" || ext == ".jpg" || ext == ".jpeg") files.push_back(e.path());
    }
  std::sort(files.begin(), files.end());

  std::ofstream sink;
  std::ostream* os = &std::cout;
  if (!out.empty()) {
    sink.open(out);
    os = &sink;
  }
  for (const auto& f : files) {
    Tensor img = load_image_chw(f.string());
    const int w = img.dim(2), h = img.dim(1);
    Tensor in = resize_bilinear_chw(img, size, size);
    Tensor batch = Tensor::zeros({1, 3, size, size});
    std::copy(in.data(), in.data() + in.numel(), batch.data());
    auto dets = model.infer(batch)[0];
    json arr = json::array();
    for (const auto& d : dets) {
      arr.push_back({{"box",
                      {d.box.x1 * w / size, d.box.y1 * h / size, d.box.x2 * w / size,
                       d.box.y2 * h / size}},
                     {"score", d.score},
                     {"class_id", d.class_id}});
    }
    (*os) << json{{"image", f.filename().string()}, {"detections", arr}}.dump() << "\n";
  }
  return 0;
}

int cmd_flops(const std::string& config_path, int input_size) {
  ExperimentConfig cfg = load_experiment(config_path);
  Detector model(cfg.model.to_detector(), 1);
  const double macs = double(model.flops(input_size));
  std::cout << "params " << model.param_count() << " (" << model.param_count() / 1e6
            << "M)\n"
            << "macs@" << input_size << " " << macs / 1e9 << "G\n"
            << "flops@" << input_size << " " << 2.0 * macs / 1e9 << "G\n";
  return 0;
}

int cmd_dataset_gen(const std::string& out, int num_images, int image_size,
                    uint32_t seed) {
  SynthSpec spec;
  spec.num_images = num_images;
  spec.image_size = image_size;
  spec.seed = seed;
  auto idx = generate_synthetic(spec, out);
  std::cout << "wrote " << idx.images.size() << " images, " << idx.annotations.size()
            << " annotations to " << out << "\n";
  return 0;
}

// Shared by supernet-train and the training half of search.
void train_supernet(Detector& sup, const DatasetIndex& ds, const ExperimentConfig& cfg,
                    std::mt19937& rng) {
  auto params = sup.params();
  nn::SGD opt(params, float(cfg.train.momentum), float(cfg.train.weight_decay));
  std::vector<Tensor> cache;
  std::vector<std::vector<LabeledBox>> boxes;
  for (auto& im : ds.images) {
    cache.push_back(load_image_chw(ds.root + "/" + im.file_name));
    boxes.push_back(ds.boxes_of(im.id));
  }
  const int size = cfg.train.input_sizes.front();
  TrainSchedule sched = cfg.train;
  sched.max_iters = cfg.nas.supernet_steps;
  sched.warmup_iters = std::min(sched.warmup_iters, cfg.nas.supernet_steps / 4);
  for (int step = 0; step < cfg.nas.supernet_steps; ++step) {
    Tensor batch = Tensor::zeros({cfg.train.batch_size, 3, size, size});
    std::vector<std::vector<LabeledBox>> gt;
    for (int b = 0; b < cfg.train.batch_size; ++b) {
      const size_t i = rng() % cache.size();
      Sample s = augment(cache[i], boxes[i], rng, {size});
      std::copy(s.image.data(), s.image.data() + s.image.numel(),
                batch.data() + int64_t(b) * s.image.numel());
      gt.push_back(s.boxes);
    }
    auto losses =
        supernet_train_step(sup, batch, gt, cfg, opt, scheduled_lr(step, sched), rng);
    if (step % 20 == 0)
      std::cerr << "supernet step " << step << " loss[max-width] " << losses[0] << "\n";
  }
}

int cmd_supernet_train(const std::string& config_path, const std::string& out,
                       int seed) {
  ExperimentConfig cfg = load_experiment(config_path);
  if (seed >= 0) cfg.train.seed = static_cast<uint32_t>(seed);
  auto ds = load_dataset(cfg.data.train_json, cfg.data.clip_boxes);
  Detector sup(cfg.model.to_detector(), cfg.train.seed);
  std::mt19937 rng(cfg.train.seed);
  train_supernet(sup, ds, cfg, rng);
  fs::create_directories(out);
  const std::string path = (fs::path(out) / "supernet.ckpt").string();
  auto params = sup.params();
  save_checkpoint(path, params, {{"kind", "supernet"}});
  std::cout << "supernet checkpoint: " << path << "\n";
  return 0;
}

int cmd_search(const std::string& config_path, const std::string& ckpt,
               double budget_flops_m, const std::string& out, int seed) {
  ExperimentConfig cfg = load_experiment(config_path);
  if (seed >= 0) cfg.train.seed = static_cast<uint32_t>(seed);
  if (budget_flops_m > 0) cfg.nas.max_flops_m = budget_flops_m;
  auto val = load_dataset(cfg.data.val_json.empty() ? cfg.data.train_json
                                                    : cfg.data.val_json,
                          cfg.data.clip_boxes);
  if (int(val.images.size()) > cfg.nas.eval_subset) {
    val.images.resize(size_t(cfg.nas.eval_subset));
    std::vector<Annotation> keep;
    for (auto& a : val.annotations)
      for (auto& im : val.images)
        if (a.image_id == im.id) keep.push_back(a);
    val.annotations = keep;
  }
  Detector sup(cfg.model.to_detector(), cfg.train.seed);
  if (!ckpt.empty()) load_weights(ckpt, sup);

  fs::create_directories(out);
  std::ofstream log(fs::path(out) / "search_log.jsonl");
  std::mt19937 rng(cfg.train.seed);
  SearchResult best = evolve(sup, val, cfg, rng, &log);

  // Genotype fragment, loadable through the config loader.
  std::ostringstream frag;
  frag << "model:\n  ratios: [";
  for (size_t i = 0; i < best.best.ratios.size(); ++i)
    frag << (i ? ", " : "") << best.best.ratios[i];
  frag << "]\n";
  parse_config(frag.str());  // round-trip guarantee
  const std::string frag_path = (fs::path(out) / "best_genotype.yaml").string();
  std::ofstream(frag_path) << frag.str();
  std::cout << "best genotype fitness " << best.fitness << " at " << best.flops_m
            << " MFLOPs (" << best.evaluations << " evaluations)\n"
            << "fragment: " << frag_path << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Lightweight anchor-free detector pipeline"};
  app.require_subcommand(1);

  std::string config_path, out, resume, ckpt, data, images;
  int seed = -1, input_size = 320, num_images = 50, image_size = 256;
  uint32_t gen_seed = 0;
  double threshold = -1, budget = 0;

  auto* train = app.add_subcommand("train", "Train a detector");
  train->add_option("--config", config_path)->required();
  train->add_option("--out", out)->required();
  train->add_option("--seed", seed);
  train->add_option("--resume", resume);

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval->add_option("--config", config_path)->required();
  eval->add_option("--checkpoint", ckpt)->required();
  eval->add_option("--data", data);
  eval->add_option("--out", out);

  auto* infer = app.add_subcommand("infer", "Run inference on a directory of images");
  infer->add_option("--config", config_path)->required();
  infer->add_option("--checkpoint", ckpt)->required();
  infer->add_option("--images", images)->required();
  infer->add_option("--out", out);
  infer->add_option("--threshold", threshold);

  auto* flops = app.add_subcommand("flops", "Report parameters and FLOPs");
  flops->add_option("--config", config_path)->required();
  flops->add_option("--input-size", input_size);

  auto* gen = app.add_subcommand("dataset-gen", "Generate a synthetic shapes dataset");
  gen->add_option("--out", out)->required();
  gen->add_option("--num-images", num_images);
  gen->add_option("--image-size", image_size);
  gen->add_option("--seed", gen_seed);

  auto* supernet = app.add_subcommand("supernet-train", "Train the one-shot supernet");
  supernet->add_option("--config", config_path)->required();
  supernet->add_option("--out", out)->required();
  supernet->add_option("--seed", seed);

  auto* search = app.add_subcommand("search", "Evolutionary search on a supernet");
  search->add_option("--config", config_path)->required();
  search->add_option("--checkpoint", ckpt);
  search->add_option("--budget-flops", budget, "MFLOPs budget");
  search->add_option("--out", out)->required();
  search->add_option("--seed", seed);

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) return cmd_train(config_path, out, seed, resume);
    if (eval->parsed()) return cmd_eval(config_path, ckpt, data, out);
    if (infer->parsed()) return cmd_infer(config_path, ckpt, images, out, threshold);
    if (flops->parsed()) return cmd_flops(config_path, input_size);
    if (gen->parsed()) return cmd_dataset_gen(out, num_images, image_size, gen_seed);
    if (supernet->parsed()) return cmd_supernet_train(config_path, out, seed);
    if (search->parsed()) return cmd_search(config_path, ckpt, budget, out, seed);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << "\n";
    return kExitCheckpoint;
  } catch (const InfeasibleBudget& e) {
    std::cerr << "search error: " << e.what() << "\n";
    return kExitInfeasible;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

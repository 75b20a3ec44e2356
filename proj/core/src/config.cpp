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

#include "picodet/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <yaml-cpp/yaml.h>

namespace picodet {

namespace {

// YAML map wrapper that records visited keys so leftovers can be rejected
// with their full field path.
class Section {
 public:
  Section(const YAML::Node& node, std::string path) : node_(node), path_(std::move(path)) {
    if (node_ && !node_.IsMap() && !node_.IsNull())
      throw ConfigError("config: '" + path_ + "' must be a mapping");
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return node_ && node_[key].IsDefined();
  }

  template <typename T>
  void read(const std::string& key, T& out) {
    if (!has(key)) return;
    try {
      out = node_[key].as<T>();
    } catch (const YAML::Exception&) {
      throw ConfigError("config: bad value for '" + join(key) + "'");
    }
  }

  std::string read_enum(const std::string& key, const std::string& fallback,
                        const std::set<std::string>& allowed) {
    std::string v = fallback;
    read(key, v);
    if (!allowed.count(v)) {
      std::string opts;
      for (const std::string& a : allowed) opts += (opts.empty() ? "" : ", ") + a;
      throw ConfigError("config: '" + join(key) + "' must be one of {" + opts +
                        "}, got '" + v + "'");
    }
    return v;
  }

  Section sub(const std::string& key) {
    seen_.insert(key);
    return Section(node_ ? node_[key] : YAML::Node(YAML::NodeType::Null), join(key));
  }

  void finish() {
    if (!node_ || !node_.IsMap()) return;
    for (const auto& kv : node_) {
      std::string key = kv.first.as<std::string>();
      if (!seen_.count(key))
        throw ConfigError("config: unknown key '" + join(key) + "'");
    }
  }

 private:
  std::string join(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }
  YAML::Node node_;
  std::string path_;
  std::set<std::string> seen_;
};

nn::Activation parse_activation(const std::string& s) {
  if (s == "hswish") return nn::Activation::kHSwish;
  if (s == "leaky_relu") return nn::Activation::kLeakyReLU;
  return nn::Activation::kReLU;
}

const char* activation_name(nn::Activation a) {
  switch (a) {
    case nn::Activation::kHSwish: return "hswish";
    case nn::Activation::kLeakyReLU: return "leaky_relu";
    default: return "relu";
  }
}

const char* assign_mode_name(AssignMode m) {
  switch (m) {
    case AssignMode::kAtss: return "atss";
    case AssignMode::kSimOtaOriginal: return "simota_original";
    default: return "simota_modified";
  }
}

}  // namespace

DetectorConfig ModelConfig::to_detector() const {
  DetectorConfig d;
  d.backbone.stage_base_channels = stage_base_channels;
  d.backbone.stage_block_counts = stage_block_counts;
  d.backbone.width_multiplier = width_multiplier;
  d.backbone.activation = activation;
  d.backbone.se_reduction = se_reduction;
  d.backbone.plain_shufflenet = (backbone == BackboneKind::kShuffleNetV2);
  d.neck.out_channels = neck_channels;
  d.neck.num_csp_blocks = neck_csp_blocks;
  d.neck.kernel = neck_kernel;
  d.neck.activation = activation;
  d.neck.use_p6 = use_p6;
  d.head.num_classes = num_classes;
  d.head.dp_count = head_dp_count;
  d.head.reg_max = reg_max;
  d.head.share_weights_across_levels = share_head;
  d.head.score_threshold = score_threshold;
  d.head.nms_iou = nms_iou;
  d.head.max_detections = max_detections;
  d.head.activation = activation;
  return d;
}

ExperimentConfig parse_config(const std::string& yaml_text) {
  YAML::Node root_node;
  try {
    root_node = YAML::Load(yaml_text);
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("config: YAML parse error: ") + e.what());
  }
  Section root(root_node, "");
  ExperimentConfig cfg;

  {
    Section m = root.sub("model");
    m.read("num_classes", cfg.model.num_classes);
    m.read("width_multiplier", cfg.model.width_multiplier);
    cfg.model.backbone = m.read_enum("backbone", "esnet", {"esnet", "shufflenetv2"}) ==
                                 "esnet"
                             ? BackboneKind::kEsNet
                             : BackboneKind::kShuffleNetV2;
    cfg.model.activation = parse_activation(
        m.read_enum("activation", activation_name(cfg.model.activation),
                    {"hswish", "leaky_relu", "relu"}));
    m.read("stage_base_channels", cfg.model.stage_base_channels);
    m.read("stage_block_counts", cfg.model.stage_block_counts);
    m.read("se_reduction", cfg.model.se_reduction);
    m.read("neck_channels", cfg.model.neck_channels);
    m.read("neck_csp_blocks", cfg.model.neck_csp_blocks);
    m.read("neck_kernel", cfg.model.neck_kernel);
    m.read("use_p6", cfg.model.use_p6);
    m.read("head_dp_count", cfg.model.head_dp_count);
    m.read("reg_max", cfg.model.reg_max);
    m.read("share_head", cfg.model.share_head);
    m.read("score_threshold", cfg.model.score_threshold);
    m.read("nms_iou", cfg.model.nms_iou);
    m.read("max_detections", cfg.model.max_detections);
    m.read("ratios", cfg.model.ratios);
    m.finish();
    if (cfg.model.num_classes <= 0) throw ConfigError("config: model.num_classes must be > 0");
    if (cfg.model.stage_base_channels.size() != cfg.model.stage_block_counts.size())
      throw ConfigError("config: model.stage_base_channels and model.stage_block_counts "
                        "must have equal length");
  }
  {
    Section l = root.sub("loss");
    l.read("vfl_alpha", cfg.loss.vfl_alpha);
    l.read("vfl_gamma", cfg.loss.vfl_gamma);
    l.read("qfl_beta", cfg.loss.qfl_beta);
    l.read("giou_weight", cfg.loss.giou_weight);
    l.read("dfl_weight", cfg.loss.dfl_weight);
    l.read("use_qfl", cfg.loss.use_qfl);
    l.finish();
  }
  {
    Section a = root.sub("assign");
    std::string mode = a.read_enum("mode", assign_mode_name(cfg.assign.mode),
                                   {"atss", "simota_original", "simota_modified"});
    cfg.assign.mode = mode == "atss" ? AssignMode::kAtss
                      : mode == "simota_original" ? AssignMode::kSimOtaOriginal
                                                  : AssignMode::kSimOtaModified;
    a.read("cost_lambda", cfg.assign.cost_lambda);
    a.read("top_n", cfg.assign.top_n);
    a.read("center_radius", cfg.assign.center_radius);
    a.read("atss_topk", cfg.assign.atss_topk);
    a.read("atss_cell_scale", cfg.assign.atss_cell_scale);
    a.finish();
  }
  {
    Section t = root.sub("train");
    t.read("lr0", cfg.train.lr0);
    t.read("momentum", cfg.train.momentum);
    t.read("weight_decay", cfg.train.weight_decay);
    t.read("batch_size", cfg.train.batch_size);
    t.read("max_iters", cfg.train.max_iters);
    t.read("warmup_iters", cfg.train.warmup_iters);
    t.read("input_sizes", cfg.train.input_sizes);
    t.read("ema_decay", cfg.train.ema_decay);
    t.read("ema_forget_step", cfg.train.ema_forget_step);
    t.read("use_ema", cfg.train.use_ema);
    t.read("clip_grad_norm", cfg.train.clip_grad_norm);
    t.read("seed", cfg.train.seed);
    t.read("eval_interval", cfg.train.eval_interval);
    t.read("eval_input_size", cfg.train.eval_input_size);
    t.read("log_interval", cfg.train.log_interval);
    t.finish();
    if (cfg.train.batch_size <= 0) throw ConfigError("config: train.batch_size must be > 0");
    if (cfg.train.ema_decay <= 0 || cfg.train.ema_decay >= 1)
      throw ConfigError("config: train.ema_decay must be in (0, 1)");
    if (cfg.train.input_sizes.empty())
      throw ConfigError("config: train.input_sizes must be non-empty");
  }
  {
    Section n = root.sub("nas");
    n.read("max_flops_m", cfg.nas.max_flops_m);
    n.read("population", cfg.nas.population);
    n.read("generations", cfg.nas.generations);
    n.read("mutation_prob", cfg.nas.mutation_prob);
    n.read("crossover_prob", cfg.nas.crossover_prob);
    n.read("eval_subset", cfg.nas.eval_subset);
    n.read("supernet_steps", cfg.nas.supernet_steps);
    n.read("clip_grad_norm", cfg.nas.clip_grad_norm);
    n.read("eval_input_size", cfg.nas.eval_input_size);
    n.read("ratio_set", cfg.nas.ratio_set);
    n.finish();
    if (cfg.nas.population < 4) throw ConfigError("config: nas.population must be >= 4");
  }
  {
    Section d = root.sub("data");
    d.read("train_json", cfg.data.train_json);
    d.read("val_json", cfg.data.val_json);
    d.read("clip_boxes", cfg.data.clip_boxes);
    d.finish();
  }
  root.finish();
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("config: cannot open " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config(ss.str());
}

std::string dump_config(const ExperimentConfig& cfg) {
  YAML::Emitter e;
  auto seq_i = [&](const std::vector<int>& v) {
    e << YAML::Flow << YAML::BeginSeq;
    for (int x : v) e << x;
    e << YAML::EndSeq;
  };
  auto seq_d = [&](const std::vector<double>& v) {
    e << YAML::Flow << YAML::BeginSeq;
    for (double x : v) e << x;
    e << YAML::EndSeq;
  };

  e << YAML::BeginMap;
  e << YAML::Key << "model" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "num_classes" << YAML::Value << cfg.model.num_classes;
  e << YAML::Key << "width_multiplier" << YAML::Value << cfg.model.width_multiplier;
  e << YAML::Key << "backbone" << YAML::Value
    << (cfg.model.backbone == BackboneKind::kEsNet ? "esnet" : "shufflenetv2");
  e << YAML::Key << "activation" << YAML::Value << activation_name(cfg.model.activation);
  e << YAML::Key << "stage_base_channels" << YAML::Value;
  seq_i(cfg.model.stage_base_channels);
  e << YAML::Key << "stage_block_counts" << YAML::Value;
  seq_i(cfg.model.stage_block_counts);
  e << YAML::Key << "se_reduction" << YAML::Value << cfg.model.se_reduction;
  e << YAML::Key << "neck_channels" << YAML::Value << cfg.model.neck_channels;
  e << YAML::Key << "neck_csp_blocks" << YAML::Value << cfg.model.neck_csp_blocks;
  e << YAML::Key << "neck_kernel" << YAML::Value << cfg.model.neck_kernel;
  e << YAML::Key << "use_p6" << YAML::Value << cfg.model.use_p6;
  e << YAML::Key << "head_dp_count" << YAML::Value << cfg.model.head_dp_count;
  e << YAML::Key << "reg_max" << YAML::Value << cfg.model.reg_max;
  e << YAML::Key << "share_head" << YAML::Value << cfg.model.share_head;
  e << YAML::Key << "score_threshold" << YAML::Value << cfg.model.score_threshold;
  e << YAML::Key << "nms_iou" << YAML::Value << cfg.model.nms_iou;
  e << YAML::Key << "max_detections" << YAML::Value << cfg.model.max_detections;
  if (!cfg.model.ratios.empty()) {
    e << YAML::Key << "ratios" << YAML::Value;
    seq_d(cfg.model.ratios);
  }
  e << YAML::EndMap;

  e << YAML::Key << "loss" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "vfl_alpha" << YAML::Value << cfg.loss.vfl_alpha;
  e << YAML::Key << "vfl_gamma" << YAML::Value << cfg.loss.vfl_gamma;
  e << YAML::Key << "qfl_beta" << YAML::Value << cfg.loss.qfl_beta;
  e << YAML::Key << "giou_weight" << YAML::Value << cfg.loss.giou_weight;
  e << YAML::Key << "dfl_weight" << YAML::Value << cfg.loss.dfl_weight;
  e << YAML::Key << "use_qfl" << YAML::Value << cfg.loss.use_qfl;
  e << YAML::EndMap;

  e << YAML::Key << "assign" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "mode" << YAML::Value << assign_mode_name(cfg.assign.mode);
  e << YAML::Key << "cost_lambda" << YAML::Value << cfg.assign.cost_lambda;
  e << YAML::Key << "top_n" << YAML::Value << cfg.assign.top_n;
  e << YAML::Key << "center_radius" << YAML::Value << cfg.assign.center_radius;
  e << YAML::Key << "atss_topk" << YAML::Value << cfg.assign.atss_topk;
  e << YAML::Key << "atss_cell_scale" << YAML::Value << cfg.assign.atss_cell_scale;
  e << YAML::EndMap;

  e << YAML::Key << "train" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "lr0" << YAML::Value << cfg.train.resolved_lr0();
  e << YAML::Key << "momentum" << YAML::Value << cfg.train.momentum;
  e << YAML::Key << "weight_decay" << YAML::Value << cfg.train.weight_decay;
  e << YAML::Key << "batch_size" << YAML::Value << cfg.train.batch_size;
  e << YAML::Key << "max_iters" << YAML::Value << cfg.train.max_iters;
  e << YAML::Key << "warmup_iters" << YAML::Value << cfg.train.warmup_iters;
  e << YAML::Key << "input_sizes" << YAML::Value;
  seq_i(cfg.train.input_sizes);
  e << YAML::Key << "ema_decay" << YAML::Value << cfg.train.ema_decay;
  e << YAML::Key << "ema_forget_step" << YAML::Value << cfg.train.ema_forget_step;
  e << YAML::Key << "use_ema" << YAML::Value << cfg.train.use_ema;
  e << YAML::Key << "clip_grad_norm" << YAML::Value << cfg.train.clip_grad_norm;
  e << YAML::Key << "seed" << YAML::Value << cfg.train.seed;
  e << YAML::Key << "eval_interval" << YAML::Value << cfg.train.eval_interval;
  e << YAML::Key << "eval_input_size" << YAML::Value << cfg.train.eval_input_size;
  e << YAML::Key << "log_interval" << YAML::Value << cfg.train.log_interval;
  e << YAML::EndMap;

  e << YAML::Key << "nas" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "max_flops_m" << YAML::Value << cfg.nas.max_flops_m;
  e << YAML::Key << "population" << YAML::Value << cfg.nas.population;
  e << YAML::Key << "generations" << YAML::Value << cfg.nas.generations;
  e << YAML::Key << "mutation_prob" << YAML::Value << cfg.nas.mutation_prob;
  e << YAML::Key << "crossover_prob" << YAML::Value << cfg.nas.crossover_prob;
  e << YAML::Key << "eval_subset" << YAML::Value << cfg.nas.eval_subset;
  e << YAML::Key << "supernet_steps" << YAML::Value << cfg.nas.supernet_steps;
  e << YAML::Key << "clip_grad_norm" << YAML::Value << cfg.nas.clip_grad_norm;
  e << YAML::Key << "eval_input_size" << YAML::Value << cfg.nas.eval_input_size;
  e << YAML::Key << "ratio_set" << YAML::Value;
  seq_d(cfg.nas.ratio_set);
  e << YAML::EndMap;

  e << YAML::Key << "data" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "train_json" << YAML::Value << cfg.data.train_json;
  e << YAML::Key << "val_json" << YAML::Value << cfg.data.val_json;
  e << YAML::Key << "clip_boxes" << YAML::Value << cfg.data.clip_boxes;
  e << YAML::EndMap;
  e << YAML::EndMap;
  return std::string(e.c_str()) + "\n";
}

}  // namespace picodet

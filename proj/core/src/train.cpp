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

#include "picodet/train.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "picodet/checkpoint.hpp"

namespace picodet {

namespace fs = std::filesystem;
using json = nlohmann::json;

double cosine_lr(int step, int total, double lr0) {
  if (step < 0 || step > total)
    throw std::invalid_argument("cosine_lr: step outside [0, total]");
  return 0.5 * lr0 * (1.0 + std::cos(M_PI * double(step) / double(total)));
}

double scheduled_lr(int step, const TrainSchedule& cfg) {
  double lr0 = cfg.resolved_lr0();
  int warmup = std::min(cfg.warmup_iters, cfg.max_iters);
  if (step < warmup) return lr0 * double(step + 1) / double(warmup);
  return cosine_lr(step, cfg.max_iters, lr0);
}

// ---------------------------------------------------------------------------
// EMA
// ---------------------------------------------------------------------------

Ema::Ema(const nn::ParamList& params, double decay, int forget_step)
    : params_(params), decay_(decay), forget_step_(forget_step) {
  for (nn::Parameter* p : params_) shadow_.push_back(p->value());
}

void Ema::update() {
  ++step_;
  const bool reset = forget_step_ > 0 && step_ % forget_step_ == 0;
  for (size_t i = 0; i < params_.size(); ++i) {
    const Tensor& w = params_[i]->value();
    Tensor& s = shadow_[i];
    if (!s.same_shape(w)) throw std::runtime_error("ema: shape mismatch");
    if (reset) {
      s = w;
    } else {
      for (int64_t j = 0; j < w.numel(); ++j)
        s[j] = static_cast<float>(decay_ * s[j] + (1.0 - decay_) * w[j]);
    }
  }
}

void Ema::swap_with_model() {
  for (size_t i = 0; i < params_.size(); ++i) std::swap(params_[i]->value(), shadow_[i]);
}

// ---------------------------------------------------------------------------
// Augmentation
// ---------------------------------------------------------------------------

Tensor resize_bilinear_chw(const Tensor& img, int out_h, int out_w) {
  const int c = img.dim(0), in_h = img.dim(1), in_w = img.dim(2);
  Tensor out({c, out_h, out_w});
  const double sy = double(in_h) / out_h, sx = double(in_w) / out_w;
  for (int y = 0; y < out_h; ++y) {
    double fy = (y + 0.5) * sy - 0.5;
    int y0 = std::clamp(int(std::floor(fy)), 0, in_h - 1);
    int y1 = std::min(y0 + 1, in_h - 1);
    double wy = std::clamp(fy - y0, 0.0, 1.0);
    for (int x = 0; x < out_w; ++x) {
      double fx = (x + 0.5) * sx - 0.5;
      int x0 = std::clamp(int(std::floor(fx)), 0, in_w - 1);
      int x1 = std::min(x0 + 1, in_w - 1);
      double wx = std::clamp(fx - x0, 0.0, 1.0);
      for (int ch = 0; ch < c; ++ch) {
        auto px = [&](int yy, int xx) {
          return double(img[(int64_t(ch) * in_h + yy) * in_w + xx]);
        };
        double v = (1 - wy) * ((1 - wx) * px(y0, x0) + wx * px(y0, x1)) +
                   wy * ((1 - wx) * px(y1, x0) + wx * px(y1, x1));
        out[(int64_t(ch) * out_h + y) * out_w + x] = static_cast<float>(v);
      }
    }
  }
  return out;
}

namespace {

Tensor hflip_chw(const Tensor& img) {
  const int c = img.dim(0), h = img.dim(1), w = img.dim(2);
  Tensor out(img.shape());
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        out[(int64_t(ch) * h + y) * w + x] = img[(int64_t(ch) * h + y) * w + (w - 1 - x)];
  return out;
}

Tensor crop_chw(const Tensor& img, int x0, int y0, int cw, int ch_px) {
  const int c = img.dim(0), h = img.dim(1), w = img.dim(2);
  (void)h;
  Tensor out({c, ch_px, cw});
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < ch_px; ++y)
      for (int x = 0; x < cw; ++x)
        out[(int64_t(ch) * ch_px + y) * cw + x] =
            img[(int64_t(ch) * h + (y0 + y)) * w + (x0 + x)];
  return out;
}

}  // namespace

Sample augment(const Tensor& image_chw, const std::vector<LabeledBox>& boxes,
               std::mt19937& rng, const std::vector<int>& input_sizes) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const int h = image_chw.dim(1), w = image_chw.dim(2);

  Tensor img = image_chw;
  std::vector<LabeledBox> bxs = boxes;

  // Horizontal flip, p = 0.5.
  if (unit(rng) < 0.5) {
    img = hflip_chw(img);
    for (LabeledBox& b : bxs) {
      double x1 = w - b.box.x2, x2 = w - b.box.x1;
      b.box.x1 = x1;
      b.box.x2 = x2;
    }
  }

  // Random crop keeping at least one box (bounded retries, then skip).
  for (int attempt = 0; attempt < 10 && !bxs.empty(); ++attempt) {
    int cw = std::max(8, int((0.6 + 0.4 * unit(rng)) * w));
    int ch_px = std::max(8, int((0.6 + 0.4 * unit(rng)) * h));
    int x0 = int(unit(rng) * (w - cw + 1));
    int y0 = int(unit(rng) * (h - ch_px + 1));
    Box window{double(x0), double(y0), double(x0 + cw), double(y0 + ch_px)};

    std::vector<LabeledBox> kept;
    for (const LabeledBox& b : bxs) {
      if (!window.contains(b.box.cx(), b.box.cy())) continue;
      Box c{std::max(b.box.x1, window.x1) - x0, std::max(b.box.y1, window.y1) - y0,
            std::min(b.box.x2, window.x2) - x0, std::min(b.box.y2, window.y2) - y0};
      if (c.width() >= 2 && c.height() >= 2) kept.push_back({c, b.class_id});
    }
    if (kept.empty()) continue;
    img = crop_chw(img, x0, y0, cw, ch_px);
    bxs = std::move(kept);
    break;
  }

  // Multi-scale resize to a square target.
  int target = input_sizes[rng() % input_sizes.size()];
  const int cur_h = img.dim(1), cur_w = img.dim(2);
  double sx = double(target) / cur_w, sy = double(target) / cur_h;
  Sample out;
  out.image = resize_bilinear_chw(img, target, target);
  for (LabeledBox& b : bxs) {
    Box s{b.box.x1 * sx, b.box.y1 * sy, b.box.x2 * sx, b.box.y2 * sy};
    s.x1 = std::clamp(s.x1, 0.0, double(target));
    s.y1 = std::clamp(s.y1, 0.0, double(target));
    s.x2 = std::clamp(s.x2, 0.0, double(target));
    s.y2 = std::clamp(s.y2, 0.0, double(target));
    if (s.width() > 0 && s.height() > 0) out.boxes.push_back({s, b.class_id});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Loss gradients through the head logits
// ---------------------------------------------------------------------------

DetectionLossBreakdown compute_detection_grads(
    const HeadOutputs& outputs, const std::vector<std::vector<LabeledBox>>& gt_boxes,
    const AssignerConfig& assign_cfg, const LossConfig& loss_cfg, int reg_max,
    std::vector<Tensor>& cls_seeds, std::vector<Tensor>& reg_seeds) {
  const int levels = static_cast<int>(outputs.cls_logits.size());
  const int batch = outputs.cls_logits[0]->value.dim(0);
  const int num_classes = outputs.cls_logits[0]->value.dim(1);
  const DistributionSpec spec{reg_max};
  const int bins = spec.num_bins();

  cls_seeds.clear();
  reg_seeds.clear();
  for (int l = 0; l < levels; ++l) {
    cls_seeds.push_back(Tensor::zeros(outputs.cls_logits[size_t(l)]->value.shape()));
    reg_seeds.push_back(Tensor::zeros(outputs.reg_logits[size_t(l)]->value.shape()));
  }

  const std::vector<AnchorPoint> anchors = detector_anchors(outputs);
  const int num_anchors = static_cast<int>(anchors.size());
  // Anchor -> (level, cell) bookkeeping.
  std::vector<int> level_of(static_cast<size_t>(num_anchors)), cell_of(static_cast<size_t>(num_anchors));
  {
    int a = 0;
    for (int l = 0; l < levels; ++l) {
      int cells = outputs.level_shapes[size_t(l)].first * outputs.level_shapes[size_t(l)].second;
      for (int i = 0; i < cells; ++i, ++a) {
        level_of[size_t(a)] = l;
        cell_of[size_t(a)] = i;
      }
    }
  }

  DetectionLossBreakdown sum;
  for (int b = 0; b < batch; ++b) {
    // Gather per-anchor predictions.
    std::vector<AnchorPrediction> preds(static_cast<size_t>(num_anchors));
    std::vector<std::vector<double>> scores(static_cast<size_t>(num_anchors));
    std::vector<Box> boxes(static_cast<size_t>(num_anchors));
    for (int a = 0; a < num_anchors; ++a) {
      const int l = level_of[size_t(a)];
      const Tensor& cls = outputs.cls_logits[size_t(l)]->value;
      const Tensor& reg = outputs.reg_logits[size_t(l)]->value;
      const auto [hh, ww] = outputs.level_shapes[size_t(l)];
      const int y = cell_of[size_t(a)] / ww, x = cell_of[size_t(a)] % ww;
      (void)hh;
      AnchorPrediction& p = preds[size_t(a)];
      p.scores.resize(size_t(num_classes));
      for (int c = 0; c < num_classes; ++c)
        p.scores[size_t(c)] = 1.0 / (1.0 + std::exp(-double(cls.at(b, c, y, x))));
      p.side_dists.assign(4, std::vector<double>(size_t(bins)));
      DistanceTarget dist;
      double* sides[4] = {&dist.l, &dist.t, &dist.r, &dist.b};
      for (int s = 0; s < 4; ++s) {
        double mx = -1e30;
        for (int k = 0; k < bins; ++k)
          mx = std::max(mx, double(reg.at(b, s * bins + k, y, x)));
        double z = 0;
        for (int k = 0; k < bins; ++k) {
          double e = std::exp(double(reg.at(b, s * bins + k, y, x)) - mx);
          p.side_dists[size_t(s)][size_t(k)] = e;
          z += e;
        }
        double expectation = 0;
        for (int k = 0; k < bins; ++k) {
          p.side_dists[size_t(s)][size_t(k)] /= z;
          expectation += k * p.side_dists[size_t(s)][size_t(k)];
        }
        *sides[s] = expectation;
      }
      p.box = decode_distances(anchors[size_t(a)], dist);
      scores[size_t(a)] = p.scores;
      boxes[size_t(a)] = p.box;
    }

    // Assignment on the current predictions.
    const std::vector<LabeledBox>& gts = gt_boxes[size_t(b)];
    AssignmentResult assign;
    if (assign_cfg.mode == AssignMode::kAtss)
      assign = atss_assign(anchors, gts, assign_cfg);
    else
      assign = simota_assign(scores, boxes, anchors, gts, assign_cfg);

    std::vector<AnchorTarget> targets(static_cast<size_t>(num_anchors));
    for (int a = 0; a < num_anchors; ++a) {
      int g = assign.matched_gt[size_t(a)];
      if (g < 0) continue;
      AnchorTarget& t = targets[size_t(a)];
      t.positive = true;
      t.class_target = assign.class_target[size_t(a)];
      t.gt_box = gts[size_t(g)].box;
      t.quality = std::max(0.0, iou(boxes[size_t(a)], t.gt_box));
      t.gt_dist = assign.distance_target[size_t(a)];
    }

    DetectionLossBreakdown bl = detection_loss(preds, targets, spec, loss_cfg);
    sum.total += bl.total;
    sum.vfl += bl.vfl;
    sum.giou += bl.giou;
    sum.dfl += bl.dfl;
    sum.normalizer += bl.normalizer;

    const double inv = 1.0 / (bl.normalizer * batch);
    for (int a = 0; a < num_anchors; ++a) {
      const int l = level_of[size_t(a)];
      const auto [hh, ww] = outputs.level_shapes[size_t(l)];
      (void)hh;
      const int y = cell_of[size_t(a)] / ww, x = cell_of[size_t(a)] % ww;
      const AnchorPrediction& p = preds[size_t(a)];
      const AnchorTarget& t = targets[size_t(a)];

      // Classification: d loss / d logit = d loss / d p * p * (1 - p).
      for (int c = 0; c < num_classes; ++c) {
        double q = (t.positive && c == t.class_target) ? t.quality : 0.0;
        double pc = p.scores[size_t(c)];
        double gp = 0;
        if (loss_cfg.use_qfl)
          quality_focal_loss(pc, q, loss_cfg, &gp);
        else
          varifocal_loss(pc, q, loss_cfg, &gp);
        cls_seeds[size_t(l)].at(b, c, y, x) +=
            static_cast<float>(gp * pc * (1.0 - pc) * inv);
      }

      if (!t.positive) continue;
      const double stride = anchors[size_t(a)].stride;

      // GIoU through the decoded box: per-side d loss / d expectation.
      BoxGrad bg;
      giou_loss_with_grad(p.box, t.gt_box, bg);
      double d_exp[4] = {-bg.dx1 * stride, -bg.dy1 * stride, bg.dx2 * stride,
                         bg.dy2 * stride};

      // DFL per side on the clamped target.
      double ys[4] = {t.gt_dist.l, t.gt_dist.t, t.gt_dist.r, t.gt_dist.b};
      for (int s = 0; s < 4; ++s) {
        const std::vector<double>& dist = p.side_dists[size_t(s)];
        std::vector<double> gs(size_t(bins), 0.0);
        std::vector<double> gdfl;
        distribution_focal_loss(dist, spec.clamp_target(ys[s]), spec, loss_cfg, &gdfl);
        double expectation = 0;
        for (int k = 0; k < bins; ++k) expectation += k * dist[size_t(k)];
        for (int k = 0; k < bins; ++k) {
          // GIoU chains through the softmax expectation.
          gs[size_t(k)] += loss_cfg.giou_weight * d_exp[s] * dist[size_t(k)] *
                           (k - expectation);
          // DFL is averaged over the four sides.
          gs[size_t(k)] += loss_cfg.dfl_weight * 0.25 * gdfl[size_t(k)];
        }
        // Softmax jacobian: d loss / d z_j = S_j (g_j - sum_i g_i S_i).
        double dot = 0;
        for (int k = 0; k < bins; ++k) dot += gs[size_t(k)] * dist[size_t(k)];
        for (int k = 0; k < bins; ++k)
          reg_seeds[size_t(l)].at(b, s * bins + k, y, x) += static_cast<float>(
              dist[size_t(k)] * (gs[size_t(k)] - dot) * inv);
      }
    }
  }

  sum.total /= batch;
  sum.vfl /= batch;
  sum.giou /= batch;
  sum.dfl /= batch;
  sum.normalizer /= batch;
  return sum;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

EvalResult evaluate_detector(Detector& model, const DatasetIndex& dataset, int input_size) {
  std::vector<EvalDetection> dets;
  std::vector<EvalGroundTruth> gts;
  for (const ImageRecord& rec : dataset.images) {
    Tensor img = load_image_chw((fs::path(dataset.root) / rec.file_name).string());
    Tensor resized = resize_bilinear_chw(img, input_size, input_size);
    Tensor batch({1, 3, input_size, input_size});
    std::copy(resized.vec().begin(), resized.vec().end(), batch.vec().begin());
    auto per_image = model.infer(batch);
    const double sx = double(rec.width) / input_size, sy = double(rec.height) / input_size;
    for (const Detection& d : per_image[0]) {
      dets.push_back({rec.id, d.class_id, d.score,
                      Box{d.box.x1 * sx, d.box.y1 * sy, d.box.x2 * sx, d.box.y2 * sy}});
    }
    for (const LabeledBox& b : dataset.boxes_of(rec.id))
      gts.push_back({rec.id, b.class_id, b.box});
  }
  return evaluate_map(dets, gts, dataset.num_classes());
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

TrainResult train_detector(Detector& model, const DatasetIndex& dataset,
                           const ExperimentConfig& cfg, const std::string& out_dir) {
  if (dataset.images.empty()) throw std::runtime_error("train: empty dataset");
  fs::create_directories(out_dir);
  const TrainSchedule& tc = cfg.train;

  std::mt19937 rng(static_cast<std::uint32_t>(tc.seed));
  nn::ParamList params = model.params();
  nn::SGD opt(params, static_cast<float>(tc.momentum), static_cast<float>(tc.weight_decay));

  int forget = tc.ema_forget_step;
  if (forget == 0) {
    // Default: two epochs' worth of iterations.
    int iters_per_epoch =
        std::max(1, int(dataset.images.size()) / std::max(1, tc.batch_size));
    forget = 2 * iters_per_epoch;
  }
  Ema ema(params, tc.ema_decay, tc.use_ema ? forget : -1);

  // Preload images once; the synthetic sets are small.
  std::vector<Tensor> cache;
  cache.reserve(dataset.images.size());
  for (const ImageRecord& rec : dataset.images)
    cache.push_back(load_image_chw((fs::path(dataset.root) / rec.file_name).string()));

  const std::string metrics_path = (fs::path(out_dir) / "metrics.jsonl").string();
  std::ofstream metrics(metrics_path, std::ios::binary);
  if (!metrics) throw std::runtime_error("train: cannot write " + metrics_path);

  const int iters_per_epoch =
      std::max(1, int(dataset.images.size()) / std::max(1, tc.batch_size));
  TrainResult result;
  std::uniform_int_distribution<int> pick(0, int(dataset.images.size()) - 1);

  for (int step = 0; step < tc.max_iters; ++step) {
    // Assemble an augmented batch at one common size.
    std::vector<int> ids(static_cast<size_t>(tc.batch_size));
    int target = tc.input_sizes[rng() % tc.input_sizes.size()];
    std::vector<int> one_size{target};
    std::vector<std::vector<LabeledBox>> gt(static_cast<size_t>(tc.batch_size));
    Tensor batch({tc.batch_size, 3, target, target});
    for (int i = 0; i < tc.batch_size; ++i) {
      int idx = pick(rng);
      ids[size_t(i)] = dataset.images[size_t(idx)].id;
      Sample s = augment(cache[size_t(idx)],
                         dataset.boxes_of(dataset.images[size_t(idx)].id), rng, one_size);
      gt[size_t(i)] = s.boxes;
      std::copy(s.image.vec().begin(), s.image.vec().end(),
                batch.vec().begin() + int64_t(i) * s.image.numel());
    }

    HeadOutputs out = model.forward(batch, /*training=*/true);
    std::vector<Tensor> cls_seeds, reg_seeds;
    DetectionLossBreakdown loss = compute_detection_grads(
        out, gt, cfg.assign, cfg.loss, model.config().head.reg_max, cls_seeds, reg_seeds);

    if (!std::isfinite(loss.total)) {
      std::string who;
      for (int id : ids) who += std::to_string(id) + " ";
      throw std::runtime_error("train: non-finite loss at step " + std::to_string(step) +
                               " (vfl=" + std::to_string(loss.vfl) +
                               " giou=" + std::to_string(loss.giou) +
                               " dfl=" + std::to_string(loss.dfl) + ") batch images: " + who);
    }

    opt.zero_grad();
    std::vector<nn::Var> roots;
    std::vector<Tensor> seeds;
    for (size_t l = 0; l < out.cls_logits.size(); ++l) {
      roots.push_back(out.cls_logits[l]);
      seeds.push_back(cls_seeds[l]);
      roots.push_back(out.reg_logits[l]);
      seeds.push_back(reg_seeds[l]);
    }
    nn::backward(roots, seeds);
    if (tc.clip_grad_norm > 0) opt.clip_grad_norm(static_cast<float>(tc.clip_grad_norm));
    double lr = scheduled_lr(step, tc);
    opt.step(static_cast<float>(lr));
    if (tc.use_ema) ema.update();

    if (tc.log_interval > 0 && step % tc.log_interval == 0) {
      json line = {{"step", step},          {"epoch", step / iters_per_epoch},
                   {"lr", lr},              {"loss_total", loss.total},
                   {"loss_vfl", loss.vfl},  {"loss_giou", loss.giou},
                   {"loss_dfl", loss.dfl}};
      metrics << line.dump() << "\n";
    }

    const bool last = step + 1 == tc.max_iters;
    if (last || (tc.eval_interval > 0 && (step + 1) % tc.eval_interval == 0)) {
      int eval_size = tc.eval_input_size > 0 ? tc.eval_input_size : tc.input_sizes[0];
      if (tc.use_ema) ema.swap_with_model();
      EvalResult ev = evaluate_detector(model, dataset, eval_size);
      if (tc.use_ema) ema.swap_with_model();
      json line = {{"step", step + 1}, {"mAP_50", ev.map_50}, {"mAP_50_95", ev.map_50_95}};
      metrics << line.dump() << "\n";
      if (last) {
        result.map_50 = ev.map_50;
        result.map_50_95 = ev.map_50_95;
      }
    }
  }

  result.checkpoint_path = (fs::path(out_dir) / "last.ckpt").string();
  save_checkpoint(result.checkpoint_path, params, {{"step", std::to_string(tc.max_iters)}});
  if (tc.use_ema) {
    ema.swap_with_model();
    save_checkpoint((fs::path(out_dir) / "ema.ckpt").string(), params,
                    {{"step", std::to_string(tc.max_iters)}, {"ema", "1"}});
    ema.swap_with_model();
  }
  result.metrics_path = metrics_path;
  return result;
}

}  // namespace picodet

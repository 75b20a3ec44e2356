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

#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "picodet/tensor.hpp"

namespace picodet::nn {

// ---------------------------------------------------------------------------
// Reverse-mode autograd over Tensor. A forward pass builds a fresh graph of
// Nodes; backward() walks it in reverse topological order. Parameters are
// long-lived Nodes whose gradients accumulate across the pass.
// ---------------------------------------------------------------------------

struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
  Tensor value;
  Tensor grad;  // allocated lazily, same shape as value
  bool requires_grad = false;
  std::vector<Var> parents;
  std::function<void(Node&)> backward_fn;

  void ensure_grad() {
    if (grad.numel() != value.numel()) grad = Tensor::zeros(value.shape());
  }
};

Var make_var(Tensor value, bool requires_grad = false);

// Backpropagate seed gradients through one or more graph roots.
void backward(const std::vector<Var>& roots, const std::vector<Tensor>& seeds);
void backward(const Var& root, const Tensor& seed);

// MAC counting for FLOPs reports. Enabled around a forward pass.
struct FlopScope {
  FlopScope();
  ~FlopScope();
  static int64_t macs();
  static bool enabled();
  static void add(int64_t macs);
};

// ---------------------------------------------------------------------------
// Primitive ops (forward + backward)
// ---------------------------------------------------------------------------

// x: [N,Cin,H,W], w: [OC, IC/groups, k, k], b: [OC] or empty Var.
// groups must be 1 or equal to the channel count (depthwise).
// active_out/active_in select leading weight slices for width-pruned children;
// -1 means the full extent.
Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad,
           int groups = 1, int active_out = -1, int active_in = -1);

Var batch_norm(const Var& x, const Var& gamma, const Var& beta,
               Tensor& running_mean, Tensor& running_var, bool training,
               float momentum = 0.1f, float eps = 1e-5f, int active_c = -1);

Var relu(const Var& x);
Var leaky_relu(const Var& x, float slope = 0.1f);
Var hswish(const Var& x);
Var hsigmoid(const Var& x);
Var sigmoid(const Var& x);

Var add(const Var& a, const Var& b);
// x: [N,C,H,W] scaled per channel by s: [N,C,1,1].
Var channel_scale(const Var& x, const Var& s);
Var global_avg_pool(const Var& x);  // -> [N,C,1,1]
Var max_pool2d(const Var& x, int k, int stride, int pad);
Var concat_channels(const std::vector<Var>& xs);
Var slice_channels(const Var& x, int start, int count);
Var channel_shuffle(const Var& x, int groups);
Var upsample_nearest2x(const Var& x);
// 2x nearest upsample cropped to ref's spatial size (ceil-mode pyramids can
// be one cell short of an exact doubling).
Var upsample_nearest2x_to(const Var& x, const Var& ref);
Var crop_spatial(const Var& x, int h, int w);

// Spatial output size with ceil-mode arithmetic shared by conv/pool.
int conv_out_size(int in, int k, int stride, int pad);

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

struct Parameter {
  std::string name;
  Var var;             // value + grad live here
  bool decay = true;   // weight decay applies
  bool trainable = true;

  Tensor& value() { return var->value; }
  const Tensor& value() const { return var->value; }
  Tensor& grad() { return var->grad; }
};

using ParamList = std::vector<Parameter*>;

enum class Activation { kHSwish, kLeakyReLU, kReLU, kNone };
Var apply_activation(const Var& x, Activation act);

class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(std::string name, int in_c, int out_c, int k, int stride, int pad,
         int groups, bool bias, std::mt19937& rng);

  Var forward(const Var& x, int active_out = -1, int active_in = -1);
  void collect(ParamList& out);

  int in_channels() const { return in_c_; }
  int out_channels() const { return out_c_; }

  Parameter w;
  Parameter b;

 private:
  int in_c_ = 0, out_c_ = 0, k_ = 0, stride_ = 1, pad_ = 0, groups_ = 1;
  bool has_bias_ = false;
};

class BatchNorm2d {
 public:
  BatchNorm2d() = default;
  BatchNorm2d(std::string name, int channels);

  Var forward(const Var& x, bool training, int active_c = -1);
  void collect(ParamList& out);

  Parameter gamma;
  Parameter beta;
  Parameter running_mean;  // non-trainable, checkpointed
  Parameter running_var;

 private:
  int channels_ = 0;
};

// Conv + BN + activation, the basic building unit everywhere.
class ConvBnAct {
 public:
  ConvBnAct() = default;
  ConvBnAct(std::string name, int in_c, int out_c, int k, int stride,
            int groups, Activation act, std::mt19937& rng);

  Var forward(const Var& x, bool training, int active_out = -1, int active_in = -1);
  void collect(ParamList& out);

  Conv2d conv;
  BatchNorm2d bn;
  Activation act = Activation::kHSwish;
};

// Depthwise 5x5 + pointwise 1x1, each with norm + activation.
class DpModule {
 public:
  DpModule() = default;
  DpModule(std::string name, int in_c, int out_c, int kernel, int stride,
           Activation act, std::mt19937& rng);

  Var forward(const Var& x, bool training);
  void collect(ParamList& out);

  ConvBnAct dw;
  ConvBnAct pw;
};

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

class SGD {
 public:
  SGD(ParamList params, float momentum, float weight_decay);

  void zero_grad();
  // Global L2 clip across all trainable grads; returns the pre-clip norm.
  // max_norm <= 0 disables clipping.
  float clip_grad_norm(float max_norm);
  void step(float lr);

 private:
  ParamList params_;
  std::vector<Tensor> velocity_;
  float momentum_;
  float weight_decay_;
};

}  // namespace picodet::nn

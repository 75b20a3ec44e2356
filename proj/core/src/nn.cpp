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

#include "picodet/nn.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace picodet::nn {

using MatRM = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatRM>;
using CMapRM = Eigen::Map<const MatRM>;

Var make_var(Tensor value, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  return n;
}

namespace {

bool any_requires(const std::vector<Var>& vars) {
  for (const auto& v : vars)
    if (v && v->requires_grad) return true;
  return false;
}

void topo_visit(Node* n, std::unordered_set<Node*>& visited, std::vector<Node*>& order) {
  // Iterative post-order DFS; graphs can be deep.
  struct Frame {
    Node* node;
    size_t next_parent;
  };
  std::vector<Frame> stack{{n, 0}};
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent == 0) {
      if (visited.count(f.node)) {
        stack.pop_back();
        continue;
      }
      visited.insert(f.node);
    }
    if (f.next_parent < f.node->parents.size()) {
      Node* p = f.node->parents[f.next_parent++].get();
      if (p && !visited.count(p) && p->requires_grad) stack.push_back({p, 0});
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }
}

}  // namespace

void backward(const std::vector<Var>& roots, const std::vector<Tensor>& seeds) {
  if (roots.size() != seeds.size())
    throw std::invalid_argument("backward: roots/seeds size mismatch");
  std::unordered_set<Node*> visited;
  std::vector<Node*> order;
  for (size_t i = 0; i < roots.size(); ++i) {
    if (!roots[i]->requires_grad) continue;
    roots[i]->ensure_grad();
    roots[i]->grad.add_(seeds[i]);
    topo_visit(roots[i].get(), visited, order);
  }
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && n->grad.numel() == n->value.numel()) n->backward_fn(*n);
  }
}

void backward(const Var& root, const Tensor& seed) {
  backward(std::vector<Var>{root}, std::vector<Tensor>{seed});
}

// ---------------------------------------------------------------------------
// FLOP counting
// ---------------------------------------------------------------------------

namespace {
thread_local int64_t g_macs = 0;
thread_local int g_flop_depth = 0;
}  // namespace

FlopScope::FlopScope() {
  if (++g_flop_depth == 1) g_macs = 0;
}
FlopScope::~FlopScope() { --g_flop_depth; }
int64_t FlopScope::macs() { return g_macs; }
bool FlopScope::enabled() { return g_flop_depth > 0; }
void FlopScope::add(int64_t macs) {
  if (g_flop_depth > 0) g_macs += macs;
}

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

int conv_out_size(int in, int k, int stride, int pad) {
  return (in + 2 * pad - k) / stride + 1;
}

namespace {

// col: [ci*k*k, OH*OW] for sample n of x.
void im2col(const Tensor& x, int n, int ci, int k, int stride, int pad, int oh,
            int ow, float* col) {
  const int H = x.dim(2), W = x.dim(3);
  const float* xn = x.data() + int64_t(n) * x.dim(1) * H * W;
  int64_t r = 0;
  for (int c = 0; c < ci; ++c) {
    const float* xc = xn + int64_t(c) * H * W;
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj, ++r) {
        float* dst = col + r * oh * ow;
        for (int i = 0; i < oh; ++i) {
          const int h = i * stride - pad + ki;
          if (h < 0 || h >= H) {
            for (int j = 0; j < ow; ++j) *dst++ = 0.0f;
            continue;
          }
          const float* row = xc + int64_t(h) * W;
          for (int j = 0; j < ow; ++j) {
            const int w = j * stride - pad + kj;
            *dst++ = (w >= 0 && w < W) ? row[w] : 0.0f;
          }
        }
      }
    }
  }
}

void col2im_acc(const float* col, int ci, int k, int stride, int pad, int oh,
                int ow, Tensor& gx, int n) {
  const int H = gx.dim(2), W = gx.dim(3);
  float* xn = gx.data() + int64_t(n) * gx.dim(1) * H * W;
  int64_t r = 0;
  for (int c = 0; c < ci; ++c) {
    float* xc = xn + int64_t(c) * H * W;
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj, ++r) {
        const float* src = col + r * oh * ow;
        for (int i = 0; i < oh; ++i, src += ow) {
          const int h = i * stride - pad + ki;
          if (h < 0 || h >= H) continue;
          float* row = xc + int64_t(h) * W;
          for (int j = 0; j < ow; ++j) {
            const int w = j * stride - pad + kj;
            if (w >= 0 && w < W) row[w] += src[j];
          }
        }
      }
    }
  }
}

}  // namespace

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad,
           int groups, int active_out, int active_in) {
  const Tensor& xv = x->value;
  const Tensor& wv = w->value;
  if (xv.ndim() != 4 || wv.ndim() != 4) throw std::invalid_argument("conv2d: need 4-d tensors");
  const int N = xv.dim(0), Cin = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  const int k = wv.dim(2);
  const int ao = active_out > 0 ? active_out : wv.dim(0);
  const int ai = active_in > 0 ? active_in : Cin;
  if (ai != Cin) throw std::invalid_argument("conv2d: input channels do not match active_in");
  const bool depthwise = groups != 1;
  if (depthwise && (groups != Cin || ao != Cin))
    throw std::invalid_argument("conv2d: grouped conv supported only as depthwise");
  if (!depthwise && ai > wv.dim(1))
    throw std::invalid_argument("conv2d: active_in exceeds weight fan-in");
  if (ao > wv.dim(0)) throw std::invalid_argument("conv2d: active_out exceeds weight count");
  const int OH = conv_out_size(H, k, stride, pad);
  const int OW = conv_out_size(W, k, stride, pad);
  const int64_t L = int64_t(OH) * OW;

  const bool has_bias = b && b->value.numel() > 0;
  Tensor out({N, ao, OH, OW});

  if (depthwise) {
    for (int n = 0; n < N; ++n) {
      for (int c = 0; c < Cin; ++c) {
        const float* wc = wv.data() + int64_t(c) * k * k;
        const float bias = has_bias ? b->value[c] : 0.0f;
        for (int i = 0; i < OH; ++i) {
          for (int j = 0; j < OW; ++j) {
            float acc = bias;
            for (int ki = 0; ki < k; ++ki) {
              const int h = i * stride - pad + ki;
              if (h < 0 || h >= H) continue;
              for (int kj = 0; kj < k; ++kj) {
                const int ww = j * stride - pad + kj;
                if (ww < 0 || ww >= W) continue;
                acc += wc[ki * k + kj] * xv.at(n, c, h, ww);
              }
            }
            out.at(n, c, i, j) = acc;
          }
        }
      }
    }
    FlopScope::add(int64_t(N) * Cin * k * k * L);
  } else {
    const int ICg = wv.dim(1);
    const int64_t wk = int64_t(ai) * k * k;
    // Weight matrix [ao, ai*k*k]; gather only when the fan-in is pruned.
    MatRM wm;
    const float* wm_data = wv.data();
    if (ai != ICg) {
      wm.resize(ao, wk);
      for (int o = 0; o < ao; ++o)
        for (int c = 0; c < ai; ++c)
          for (int t = 0; t < k * k; ++t)
            wm(o, c * k * k + t) = wv.data()[(int64_t(o) * ICg + c) * k * k + t];
      wm_data = wm.data();
    }
    CMapRM wmap(wm_data, ao, wk);
    std::vector<float> colbuf;
    const bool identity_col = (k == 1 && stride == 1 && pad == 0);
    if (!identity_col) colbuf.resize(size_t(wk) * L);
    for (int n = 0; n < N; ++n) {
      const float* col = xv.data() + int64_t(n) * Cin * H * W;
      if (!identity_col) {
        im2col(xv, n, ai, k, stride, pad, OH, OW, colbuf.data());
        col = colbuf.data();
      }
      CMapRM cmap(col, wk, L);
      MapRM omap(out.data() + int64_t(n) * ao * L, ao, L);
      omap.noalias() = wmap * cmap;
      if (has_bias)
        for (int o = 0; o < ao; ++o) omap.row(o).array() += b->value[o];
    }
    FlopScope::add(int64_t(N) * ao * wk * L);
  }

  auto y = std::make_shared<Node>();
  y->value = std::move(out);
  y->parents = {x, w, b ? b : nullptr};
  if (!y->parents[2]) y->parents.pop_back();
  y->requires_grad = x->requires_grad || w->requires_grad || (has_bias && b->requires_grad);
  if (y->requires_grad) {
    Var xc = x, wc = w, bc = has_bias ? b : nullptr;
    y->backward_fn = [xc, wc, bc, stride, pad, k, depthwise, ao, ai, N, Cin, H, W, OH,
                      OW](Node& node) {
      const Tensor& gy = node.grad;
      const int64_t L = int64_t(OH) * OW;
      if (depthwise) {
        if (wc->requires_grad) wc->ensure_grad();
        if (xc->requires_grad) xc->ensure_grad();
        if (bc && bc->requires_grad) bc->ensure_grad();
        for (int n = 0; n < N; ++n) {
          for (int c = 0; c < Cin; ++c) {
            const float* wcd = wc->value.data() + int64_t(c) * k * k;
            float* gwc = wc->requires_grad ? wc->grad.data() + int64_t(c) * k * k : nullptr;
            for (int i = 0; i < OH; ++i) {
              for (int j = 0; j < OW; ++j) {
                const float g = gy.at(n, c, i, j);
                if (bc && bc->requires_grad) bc->grad[c] += g;
                for (int ki = 0; ki < k; ++ki) {
                  const int h = i * stride - pad + ki;
                  if (h < 0 || h >= H) continue;
                  for (int kj = 0; kj < k; ++kj) {
                    const int ww = j * stride - pad + kj;
                    if (ww < 0 || ww >= W) continue;
                    if (gwc) gwc[ki * k + kj] += g * xc->value.at(n, c, h, ww);
                    if (xc->requires_grad)
                      xc->grad.at(n, c, h, ww) += g * wcd[ki * k + kj];
                  }
                }
              }
            }
          }
        }
        return;
      }
      const int ICg = wc->value.dim(1);
      const int64_t wk = int64_t(ai) * k * k;
      MatRM wm;
      const float* wm_data = wc->value.data();
      if (ai != ICg) {
        wm.resize(ao, wk);
        for (int o = 0; o < ao; ++o)
          for (int c = 0; c < ai; ++c)
            for (int t = 0; t < k * k; ++t)
              wm(o, c * k * k + t) = wc->value.data()[(int64_t(o) * ICg + c) * k * k + t];
        wm_data = wm.data();
      }
      CMapRM wmap(wm_data, ao, wk);
      MatRM gwm = MatRM::Zero(ao, wk);
      std::vector<float> colbuf, gcolbuf;
      const bool identity_col = (k == 1 && stride == 1 && pad == 0);
      if (!identity_col) {
        colbuf.resize(size_t(wk) * L);
        gcolbuf.resize(size_t(wk) * L);
      }
      if (xc->requires_grad) xc->ensure_grad();
      if (bc && bc->requires_grad) bc->ensure_grad();
      for (int n = 0; n < N; ++n) {
        CMapRM gymap(gy.data() + int64_t(n) * ao * L, ao, L);
        const float* col = xc->value.data() + int64_t(n) * Cin * H * W;
        if (!identity_col) {
          im2col(xc->value, n, ai, k, stride, pad, OH, OW, colbuf.data());
          col = colbuf.data();
        }
        if (wc->requires_grad) {
          CMapRM cmap(col, wk, L);
          gwm.noalias() += gymap * cmap.transpose();
        }
        if (bc && bc->requires_grad)
          for (int o = 0; o < ao; ++o) bc->grad[o] += gymap.row(o).sum();
        if (xc->requires_grad) {
          if (identity_col) {
            MapRM gxmap(xc->grad.data() + int64_t(n) * Cin * H * W, wk, L);
            gxmap.noalias() += wmap.transpose() * gymap;
          } else {
            MapRM gcmap(gcolbuf.data(), wk, L);
            gcmap.noalias() = wmap.transpose() * gymap;
            col2im_acc(gcolbuf.data(), ai, k, stride, pad, OH, OW, xc->grad, n);
          }
        }
      }
      if (wc->requires_grad) {
        wc->ensure_grad();
        for (int o = 0; o < ao; ++o)
          for (int c = 0; c < ai; ++c)
            for (int t = 0; t < k * k; ++t)
              wc->grad.data()[(int64_t(o) * ICg + c) * k * k + t] += gwm(o, c * k * k + t);
      }
    };
  }
  return y;
}

// ---------------------------------------------------------------------------
// Batch normalization
// ---------------------------------------------------------------------------

Var batch_norm(const Var& x, const Var& gamma, const Var& beta,
               Tensor& running_mean, Tensor& running_var, bool training,
               float momentum, float eps, int active_c) {
  const Tensor& xv = x->value;
  const int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  if (active_c > 0 && active_c != C)
    throw std::invalid_argument("batch_norm: active_c mismatch");
  const int64_t S = int64_t(N) * H * W;  // reduce size per channel

  auto xhat = std::make_shared<Tensor>(std::vector<int>{N, C, H, W});
  auto inv_std = std::make_shared<std::vector<float>>(C);
  Tensor out({N, C, H, W});

  for (int c = 0; c < C; ++c) {
    float mean, var;
    if (training) {
      double sum = 0.0;
      for (int n = 0; n < N; ++n)
        for (int h = 0; h < H; ++h)
          for (int w = 0; w < W; ++w) sum += xv.at(n, c, h, w);
      mean = static_cast<float>(sum / double(S));
      double sq = 0.0;
      for (int n = 0; n < N; ++n)
        for (int h = 0; h < H; ++h)
          for (int w = 0; w < W; ++w) {
            const double d = xv.at(n, c, h, w) - mean;
            sq += d * d;
          }
      var = static_cast<float>(sq / double(S));
      running_mean[c] = (1 - momentum) * running_mean[c] + momentum * mean;
      running_var[c] = (1 - momentum) * running_var[c] + momentum * var;
    } else {
      mean = running_mean[c];
      var = running_var[c];
    }
    const float istd = 1.0f / std::sqrt(var + eps);
    (*inv_std)[c] = istd;
    const float g = gamma->value[c], b = beta->value[c];
    for (int n = 0; n < N; ++n)
      for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w) {
          const float xh = (xv.at(n, c, h, w) - mean) * istd;
          xhat->at(n, c, h, w) = xh;
          out.at(n, c, h, w) = g * xh + b;
        }
  }
  FlopScope::add(2 * int64_t(C) * S);

  auto y = std::make_shared<Node>();
  y->value = std::move(out);
  y->parents = {x, gamma, beta};
  y->requires_grad = x->requires_grad || gamma->requires_grad || beta->requires_grad;
  if (y->requires_grad) {
    Var xc = x, gc = gamma, bc = beta;
    y->backward_fn = [xc, gc, bc, xhat, inv_std, training, N, C, H, W, S](Node& node) {
      const Tensor& gy = node.grad;
      if (gc->requires_grad) gc->ensure_grad();
      if (bc->requires_grad) bc->ensure_grad();
      if (xc->requires_grad) xc->ensure_grad();
      for (int c = 0; c < C; ++c) {
        double sum_gy = 0.0, sum_gy_xh = 0.0;
        for (int n = 0; n < N; ++n)
          for (int h = 0; h < H; ++h)
            for (int w = 0; w < W; ++w) {
              const float g = gy.at(n, c, h, w);
              sum_gy += g;
              sum_gy_xh += g * xhat->at(n, c, h, w);
            }
        if (gc->requires_grad) gc->grad[c] += static_cast<float>(sum_gy_xh);
        if (bc->requires_grad) bc->grad[c] += static_cast<float>(sum_gy);
        if (!xc->requires_grad) continue;
        const float g = gc->value[c], istd = (*inv_std)[c];
        if (training) {
          const float mg = static_cast<float>(sum_gy / double(S));
          const float mgx = static_cast<float>(sum_gy_xh / double(S));
          for (int n = 0; n < N; ++n)
            for (int h = 0; h < H; ++h)
              for (int w = 0; w < W; ++w)
                xc->grad.at(n, c, h, w) +=
                    g * istd * (gy.at(n, c, h, w) - mg - xhat->at(n, c, h, w) * mgx);
        } else {
          for (int n = 0; n < N; ++n)
            for (int h = 0; h < H; ++h)
              for (int w = 0; w < W; ++w)
                xc->grad.at(n, c, h, w) += g * istd * gy.at(n, c, h, w);
        }
      }
    };
  }
  return y;
}

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

namespace {

// Generic unary elementwise op; dfn receives the input value.
Var unary_op(const Var& x, float (*fn)(float), float (*dfn)(float)) {
  Tensor out(x->value.shape());
  const int64_t n = x->value.numel();
  for (int64_t i = 0; i < n; ++i) out[i] = fn(x->value[i]);
  FlopScope::add(n);
  auto y = std::make_shared<Node>();
  y->value = std::move(out);
  y->parents = {x};
  y->requires_grad = x->requires_grad;
  if (y->requires_grad) {
    Var xc = x;
    y->backward_fn = [xc, dfn, n](Node& node) {
      xc->ensure_grad();
      for (int64_t i = 0; i < n; ++i)
        xc->grad[i] += node.grad[i] * dfn(xc->value[i]);
    };
  }
  return y;
}

float relu_f(float x) { return x > 0 ? x : 0; }
float relu_d(float x) { return x > 0 ? 1.0f : 0.0f; }
float hsig_f(float x) { return x <= -3 ? 0.0f : (x >= 3 ? 1.0f : (x + 3) / 6.0f); }
float hsig_d(float x) { return (x > -3 && x < 3) ? 1.0f / 6.0f : 0.0f; }
float hswish_f(float x) { return x * hsig_f(x); }
float hswish_d(float x) {
  if (x <= -3) return 0.0f;
  if (x >= 3) return 1.0f;
  return (2 * x + 3) / 6.0f;
}

}  // namespace

Var relu(const Var& x) { return unary_op(x, relu_f, relu_d); }
Var hsigmoid(const Var& x) { return unary_op(x, hsig_f, hsig_d); }
Var hswish(const Var& x) { return unary_op(x, hswish_f, hswish_d); }

Var leaky_relu(const Var& x, float slope) {
  Tensor out(x->value.shape());
  const int64_t n = x->value.numel();
  for (int64_t i = 0; i < n; ++i) {
    const float v = x->value[i];
    out[i] = v > 0 ? v : slope * v;
  }
  FlopScope::add(n);
  auto y = std::make_shared<Node>();
  y->value = std::move(out);
  y->parents = {x};
  y->requires_grad = x->requires_grad;
  if (y->requires_grad) {
    Var xc = x;
    y->backward_fn = [xc, slope, n](Node& node) {
      xc->ensure_grad();
      for (int64_t i = 0; i < n; ++i)
        xc->grad[i] += node.grad[i] * (xc->value[i] > 0 ? 1.0f : slope);
    };
  }
  return y;
}

Var sigmoid(const Var& x) {
  Tensor out(x->value.shape());
  const int64_t n = x->value.numel();
  for (int64_t i = 0; i < n; ++i) out[i] = 1.0f / (1.0f + std::exp(-x->value[i]));
  FlopScope::add(n);
  auto y = std::make_shared<Node>();
  y->value = std::move(out);
  y->parents = {x};
  y->requires_grad = x->requires_grad;
  if (y->requires_grad) {
    Var xc = x;
    auto out_copy = std::make_shared<Tensor>(y->value);
    y->backward_fn = [xc, out_copy, n](Node& node) {
      xc->ensure_grad();
      for (int64_t i = 0; i < n; ++i) {
        const float s = (*out_copy)[i];
        xc->grad[i] += node.grad[i] * s * (1 - s);
      }
    };
  }
  return y;
}

Var apply_activation(const Var& x, Activation act) {
  switch (act) {
    case Activation::kHSwish: return hswish(x);
    case Activation::kLeakyReLU: return leaky_relu(x);
    case Activation::kReLU: return relu(x);
    case Activation::kNone: return x;
  }
  throw std::logic_error("unknown activation");
}

Var add(const Var& a, const Var& b) {
  if (!a->value.same_shape(b->value)) throw std::invalid_argument("add: shape mismatch");
  Tensor out = a->value;
  out.add_(b->value);
  FlopScope::add(out.numel());
  auto y = std::make_shared<Node>();
  y->value = std::move(out);
  y->parents = {a, b};
  y->requires_grad = a->requires_grad || b->requires_grad;
  if (y->requires_grad) {
    Var ac = a, bc = b;
    y->backward_fn = [ac, bc](Node& node) {
      if (ac->requires_grad) {
        ac->ensure_grad();
        ac->grad.add_(node.grad);
      }
      if (bc->requires_grad) {
        bc->ensure_grad();
        bc->grad.add_(node.grad);
      }
    };
  }
  return y;
}

Var channel_scale(const Var& x, const Var& s) {
  const int N = x->value.dim(0), C = x->value.dim(1), H = x->value.dim(2), W = x->value.dim(3);
  if (s->value.dim(0) != N || s->value.dim(1) != C)
    throw std::invalid_argument("channel_scale: gate shape mismatch");
  Tensor out({N, C, H, W});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const float g = s->value.at(n, c, 0, 0);
      for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w) out.at(n, c, h, w) = g * x->value.at(n, c, h, w);
    }
  FlopScope::add(out.numel());
  auto y = std::make_shared<Node>();
  y->value = std::move(out);
  y->parents = {x, s};
  y->requires_grad = x->requires_grad || s->requires_grad;
  if (y->requires_grad) {
    Var xc = x, sc = s;
    y->backward_fn = [xc, sc, N, C, H, W](Node& node) {
      if (xc->requires_grad) xc->ensure_grad();
      if (sc->requires_grad) sc->ensure_grad();
      for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
          const float g = sc->value.at(n, c, 0, 0);
          double acc = 0.0;
          for (int h = 0; h < H; ++h)
            for (int w = 0; w < W; ++w) {
              const float gy = node.grad.at(n, c, h, w);
              if (xc->requires_grad) xc->grad.at(n, c, h, w) += gy * g;
              acc += double(gy) * xc->value.at(n, c, h, w);
            }
          if (sc->requires_grad) sc->grad.at(n, c, 0, 0) += static_cast<float>(acc);
        }
    };
  }
  return y;
}

Var global_avg_pool(const Var& x) {
  const int N = x->value.dim(0), C = x->value.dim(1), H = x->value.dim(2), W = x->value.dim(3);
  Tensor out({N, C, 1, 1});
  const float inv = 1.0f / float(H * W);
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      double acc = 0.0;
      for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w) acc += x->value.at(n, c, h, w);
      out.at(n, c, 0, 0) = static_cast<float>(acc) * inv;
    }
  FlopScope::add(x->value.numel());
  auto y = std::make_shared<Node>();
  y->value = std::move(out);
  y->parents = {x};
  y->requires_grad = x->requires_grad;
  if (y->requires_grad) {
    Var xc = x;
    y->backward_fn = [xc, N, C, H, W, inv](Node& node) {
      xc->ensure_grad();
      for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
          const float g = node.grad.at(n, c, 0, 0) * inv;
          for (int h = 0; h < H; ++h)
            for (int w = 0; w < W; ++w) xc->grad.at(n, c, h, w) += g;
        }
    };
  }
  return y;
}

Var max_pool2d(const Var& x, int k, int stride, int pad) {
  const int N = x->value.dim(0), C = x->value.dim(1), H = x->value.dim(2), W = x->value.dim(3);
  const int OH = conv_out_size(H, k, stride, pad);
  const int OW = conv_out_size(W, k, stride, pad);
  Tensor out({N, C, OH, OW});
  auto argmax = std::make_shared<std::vector<int32_t>>(size_t(N) * C * OH * OW);
  int64_t idx = 0;
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int i = 0; i < OH; ++i)
        for (int j = 0; j < OW; ++j, ++idx) {
          float best = -std::numeric_limits<float>::infinity();
          int32_t best_pos = -1;
          for (int ki = 0; ki < k; ++ki) {
            const int h = i * stride - pad + ki;
            if (h < 0 || h >= H) continue;
            for (int kj = 0; kj < k; ++kj) {
              const int w = j * stride - pad + kj;
              if (w < 0 || w >= W) continue;
              const float v = x->value.at(n, c, h, w);
              if (v > best) {
                best = v;
                best_pos = h * W + w;
              }
            }
          }
          out[idx] = best_pos >= 0 ? best : 0.0f;
          (*argmax)[size_t(idx)] = best_pos;
        }
  FlopScope::add(out.numel() * k * k);
  auto y = std::make_shared<Node>();
  y->value = std::move(out);
  y->parents = {x};
  y->requires_grad = x->requires_grad;
  if (y->requires_grad) {
    Var xc = x;
    y->backward_fn = [xc, argmax, N, C, OH, OW, H, W](Node& node) {
      xc->ensure_grad();
      int64_t idx = 0;
      for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
          float* gx = xc->grad.data() + (int64_t(n) * C + c) * H * W;
          for (int i = 0; i < OH * OW; ++i, ++idx) {
            const int32_t p = (*argmax)[size_t(idx)];
            if (p >= 0) gx[p] += node.grad[idx];
          }
        }
    };
  }
  return y;
}

Var concat_channels(const std::vector<Var>& xs) {
  if (xs.empty()) throw std::invalid_argument("concat_channels: empty input");
  const int N = xs[0]->value.dim(0), H = xs[0]->value.dim(2), W = xs[0]->value.dim(3);
  int C = 0;
  for (const auto& x : xs) {
    if (x->value.dim(0) != N || x->value.dim(2) != H || x->value.dim(3) != W)
      throw std::invalid_argument("concat_channels: shape mismatch");
    C += x->value.dim(1);
  }
  Tensor out({N, C, H, W});
  const int64_t HW = int64_t(H) * W;
  for (int n = 0; n < N; ++n) {
    int co = 0;
    for (const auto& x : xs) {
      const int ci = x->value.dim(1);
      std::copy_n(x->value.data() + int64_t(n) * ci * HW, size_t(ci * HW),
                  out.data() + (int64_t(n) * C + co) * HW);
      co += ci;
    }
  }
  auto y = std::make_shared<Node>();
  y->value = std::move(out);
  y->parents = xs;
  y->requires_grad = any_requires(xs);
  if (y->requires_grad) {
    std::vector<Var> parts = xs;
    y->backward_fn = [parts, N, C, HW](Node& node) {
      for (int n = 0; n < N; ++n) {
        int co = 0;
        for (const auto& x : parts) {
          const int ci = x->value.dim(1);
          if (x->requires_grad) {
            x->ensure_grad();
            const float* src = node.grad.data() + (int64_t(n) * C + co) * HW;
            float* dst = x->grad.data() + int64_t(n) * ci * HW;
            for (int64_t i = 0; i < ci * HW; ++i) dst[i] += src[i];
          }
          co += ci;
        }
      }
    };
  }
  return y;
}

Var slice_channels(const Var& x, int start, int count) {
  const int N = x->value.dim(0), C = x->value.dim(1), H = x->value.dim(2), W = x->value.dim(3);
  if (start < 0 || start + count > C) throw std::invalid_argument("slice_channels: out of range");
  const int64_t HW = int64_t(H) * W;
  Tensor out({N, count, H, W});
  for (int n = 0; n < N; ++n)
    std::copy_n(x->value.data() + (int64_t(n) * C + start) * HW, size_t(count * HW),
                out.data() + int64_t(n) * count * HW);
  auto y = std::make_shared<Node>();
  y->value = std::move(out);
  y->parents = {x};
  y->requires_grad = x->requires_grad;
  if (y->requires_grad) {
    Var xc = x;
    y->backward_fn = [xc, start, count, N, C, HW](Node& node) {
      xc->ensure_grad();
      for (int n = 0; n < N; ++n) {
        const float* src = node.grad.data() + int64_t(n) * count * HW;
        float* dst = xc->grad.data() + (int64_t(n) * C + start) * HW;
        for (int64_t i = 0; i < count * HW; ++i) dst[i] += src[i];
      }
    };
  }
  return y;
}

Var channel_shuffle(const Var& x, int groups) {
  const int N = x->value.dim(0), C = x->value.dim(1), H = x->value.dim(2), W = x->value.dim(3);
  if (C % groups != 0) throw std::invalid_argument("channel_shuffle: channels not divisible by groups");
  const int cpg = C / groups;
  const int64_t HW = int64_t(H) * W;
  // Destination channel for source channel c = (g, i): (i, g).
  std::vector<int> perm(static_cast<size_t>(C), 0);
  for (int g = 0; g < groups; ++g)
    for (int i = 0; i < cpg; ++i) perm[size_t(g * cpg + i)] = i * groups + g;
  Tensor out({N, C, H, W});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      std::copy_n(x->value.data() + (int64_t(n) * C + c) * HW, size_t(HW),
                  out.data() + (int64_t(n) * C + perm[size_t(c)]) * HW);
  auto y = std::make_shared<Node>();
  y->value = std::move(out);
  y->parents = {x};
  y->requires_grad = x->requires_grad;
  if (y->requires_grad) {
    Var xc = x;
    auto perm_copy = std::make_shared<std::vector<int>>(perm);
    y->backward_fn = [xc, perm_copy, N, C, HW](Node& node) {
      xc->ensure_grad();
      for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
          const float* src = node.grad.data() + (int64_t(n) * C + (*perm_copy)[size_t(c)]) * HW;
          float* dst = xc->grad.data() + (int64_t(n) * C + c) * HW;
          for (int64_t i = 0; i < HW; ++i) dst[i] += src[i];
        }
    };
  }
  return y;
}

Var upsample_nearest2x(const Var& x) {
  const int N = x->value.dim(0), C = x->value.dim(1), H = x->value.dim(2), W = x->value.dim(3);
  Tensor out({N, C, 2 * H, 2 * W});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int h = 0; h < 2 * H; ++h)
        for (int w = 0; w < 2 * W; ++w)
          out.at(n, c, h, w) = x->value.at(n, c, h / 2, w / 2);
  auto y = std::make_shared<Node>();
  y->value = std::move(out);
  y->parents = {x};
  y->requires_grad = x->requires_grad;
  if (y->requires_grad) {
    Var xc = x;
    y->backward_fn = [xc, N, C, H, W](Node& node) {
      xc->ensure_grad();
      for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
          for (int h = 0; h < 2 * H; ++h)
            for (int w = 0; w < 2 * W; ++w)
              xc->grad.at(n, c, h / 2, w / 2) += node.grad.at(n, c, h, w);
    };
  }
  return y;
}

Var crop_spatial(const Var& x, int h, int w) {
  const int N = x->value.dim(0), C = x->value.dim(1), H = x->value.dim(2), W = x->value.dim(3);
  if (h > H || w > W) throw std::invalid_argument("crop_spatial: target larger than input");
  if (h == H && w == W) return x;
  Tensor out({N, C, h, w});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) out.at(n, c, i, j) = x->value.at(n, c, i, j);
  auto y = std::make_shared<Node>();
  y->value = std::move(out);
  y->parents = {x};
  y->requires_grad = x->requires_grad;
  if (y->requires_grad) {
    Var xc = x;
    y->backward_fn = [xc, N, C, h, w](Node& node) {
      xc->ensure_grad();
      for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
          for (int i = 0; i < h; ++i)
            for (int j = 0; j < w; ++j)
              xc->grad.at(n, c, i, j) += node.grad.at(n, c, i, j);
    };
  }
  return y;
}

Var upsample_nearest2x_to(const Var& x, const Var& ref) {
  return crop_spatial(upsample_nearest2x(x), ref->value.dim(2), ref->value.dim(3));
}

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

Conv2d::Conv2d(std::string name, int in_c, int out_c, int k, int stride, int pad,
               int groups, bool bias, std::mt19937& rng)
    : in_c_(in_c), out_c_(out_c), k_(k), stride_(stride), pad_(pad), groups_(groups),
      has_bias_(bias) {
  const int fan_in = (in_c / groups) * k * k;
  std::normal_distribution<float> dist(0.0f, std::sqrt(2.0f / float(fan_in)));
  Tensor wt({out_c, in_c / groups, k, k});
  for (int64_t i = 0; i < wt.numel(); ++i) wt[i] = dist(rng);
  w.name = name + ".weight";
  w.var = make_var(std::move(wt), true);
  if (bias) {
    b.name = name + ".bias";
    b.var = make_var(Tensor({out_c}), true);
    b.decay = false;
  }
}

Var Conv2d::forward(const Var& x, int active_out, int active_in) {
  int groups = groups_;
  if (groups_ == in_c_ && groups_ > 1 && active_in > 0) groups = active_in;  // pruned depthwise
  return conv2d(x, w.var, has_bias_ ? b.var : nullptr, stride_, pad_, groups,
                active_out, active_in);
}

void Conv2d::collect(ParamList& out) {
  out.push_back(&w);
  if (has_bias_) out.push_back(&b);
}

BatchNorm2d::BatchNorm2d(std::string name, int channels) : channels_(channels) {
  gamma.name = name + ".weight";
  gamma.var = make_var(Tensor({channels}, 1.0f), true);
  gamma.decay = false;
  beta.name = name + ".bias";
  beta.var = make_var(Tensor({channels}), true);
  beta.decay = false;
  running_mean.name = name + ".running_mean";
  running_mean.var = make_var(Tensor({channels}), false);
  running_mean.trainable = false;
  running_var.name = name + ".running_var";
  running_var.var = make_var(Tensor({channels}, 1.0f), false);
  running_var.trainable = false;
}

Var BatchNorm2d::forward(const Var& x, bool training, int active_c) {
  const int c = active_c > 0 ? active_c : channels_;
  if (c == channels_)
    return batch_norm(x, gamma.var, beta.var, running_mean.value(), running_var.value(),
                      training, 0.1f, 1e-5f, c);
  // Width-pruned child: normalize with the leading parameter slice. Gradients
  // land in the leading slice of the full gamma/beta via sliced views.
  auto gslice = make_var(Tensor({c}), gamma.var->requires_grad);
  auto bslice = make_var(Tensor({c}), beta.var->requires_grad);
  std::copy_n(gamma.value().data(), size_t(c), gslice->value.data());
  std::copy_n(beta.value().data(), size_t(c), bslice->value.data());
  gslice->parents = {gamma.var};
  bslice->parents = {beta.var};
  Var gfull = gamma.var, bfull = beta.var;
  gslice->backward_fn = [gfull, c](Node& node) {
    gfull->ensure_grad();
    for (int i = 0; i < c; ++i) gfull->grad[i] += node.grad[i];
  };
  bslice->backward_fn = [bfull, c](Node& node) {
    bfull->ensure_grad();
    for (int i = 0; i < c; ++i) bfull->grad[i] += node.grad[i];
  };
  // Running stats also use the leading slice; writes go back to the full buffer.
  Tensor rm({c}), rv({c});
  std::copy_n(running_mean.value().data(), size_t(c), rm.data());
  std::copy_n(running_var.value().data(), size_t(c), rv.data());
  Var out = batch_norm(x, gslice, bslice, rm, rv, training, 0.1f, 1e-5f, c);
  std::copy_n(rm.data(), size_t(c), running_mean.value().data());
  std::copy_n(rv.data(), size_t(c), running_var.value().data());
  return out;
}

void BatchNorm2d::collect(ParamList& out) {
  out.push_back(&gamma);
  out.push_back(&beta);
  out.push_back(&running_mean);
  out.push_back(&running_var);
}

ConvBnAct::ConvBnAct(std::string name, int in_c, int out_c, int k, int stride,
                     int groups, Activation act_, std::mt19937& rng)
    : conv(name + ".conv", in_c, out_c, k, stride, k / 2, groups, false, rng),
      bn(name + ".bn", out_c),
      act(act_) {}

Var ConvBnAct::forward(const Var& x, bool training, int active_out, int active_in) {
  Var y = conv.forward(x, active_out, active_in);
  y = bn.forward(y, training, active_out);
  return apply_activation(y, act);
}

void ConvBnAct::collect(ParamList& out) {
  conv.collect(out);
  bn.collect(out);
}

DpModule::DpModule(std::string name, int in_c, int out_c, int kernel, int stride,
                   Activation act, std::mt19937& rng)
    : dw(name + ".dw", in_c, in_c, kernel, stride, in_c, act, rng),
      pw(name + ".pw", in_c, out_c, 1, 1, 1, act, rng) {}

Var DpModule::forward(const Var& x, bool training) {
  return pw.forward(dw.forward(x, training), training);
}

void DpModule::collect(ParamList& out) {
  dw.collect(out);
  pw.collect(out);
}

// ---------------------------------------------------------------------------
// SGD
// ---------------------------------------------------------------------------

SGD::SGD(ParamList params, float momentum, float weight_decay)
    : params_(std::move(params)), momentum_(momentum), weight_decay_(weight_decay) {
  velocity_.reserve(params_.size());
  for (auto* p : params_) velocity_.emplace_back(Tensor(p->value().shape()));
}

void SGD::zero_grad() {
  for (auto* p : params_) {
    p->var->ensure_grad();
    p->var->grad.fill(0.0f);
  }
}

float SGD::clip_grad_norm(float max_norm) {
  double sq = 0.0;
  for (auto* p : params_) {
    if (!p->trainable || p->var->grad.numel() == 0) continue;
    for (int64_t i = 0; i < p->var->grad.numel(); ++i) {
      const double g = p->var->grad[i];
      sq += g * g;
    }
  }
  const float norm = static_cast<float>(std::sqrt(sq));
  if (max_norm > 0 && norm > max_norm) {
    const float scale = max_norm / (norm + 1e-12f);
    for (auto* p : params_) {
      if (!p->trainable || p->var->grad.numel() == 0) continue;
      p->var->grad.scale_(scale);
    }
  }
  return norm;
}

void SGD::step(float lr) {
  for (size_t i = 0; i < params_.size(); ++i) {
    Parameter* p = params_[i];
    if (!p->trainable || p->var->grad.numel() == 0) continue;
    Tensor& v = velocity_[i];
    Tensor& w = p->value();
    const Tensor& g = p->var->grad;
    const float wd = p->decay ? weight_decay_ : 0.0f;
    for (int64_t j = 0; j < w.numel(); ++j) {
      v[j] = momentum_ * v[j] + g[j] + wd * w[j];
      w[j] -= lr * v[j];
    }
  }
}

}  // namespace picodet::nn

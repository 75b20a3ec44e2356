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

#include "grad_check.hpp"
#include "picodet/nn.hpp"

using namespace picodet;
using namespace picodet::nn;
using picodet::testing::grad_check;
using picodet::testing::random_tensor;

namespace {
std::mt19937 g_rng(7);
constexpr double kTol = 5e-2;  // float forward + 1e-2 FD step
}  // namespace

TEST_CASE("conv2d matches a direct naive convolution") {
  Tensor x = random_tensor({1, 3, 6, 7}, g_rng);
  Tensor w = random_tensor({4, 3, 3, 3}, g_rng);
  Tensor b = random_tensor({4}, g_rng);
  Var y = conv2d(make_var(x), make_var(w), make_var(b), /*stride=*/2, /*pad=*/1);

  const int oh = conv_out_size(6, 3, 2, 1), ow = conv_out_size(7, 3, 2, 1);
  REQUIRE(y->value.shape() == std::vector<int>{1, 4, oh, ow});
  for (int oc = 0; oc < 4; ++oc)
    for (int y0 = 0; y0 < oh; ++y0)
      for (int x0 = 0; x0 < ow; ++x0) {
        double acc = b[oc];
        for (int ic = 0; ic < 3; ++ic)
          for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
              int iy = y0 * 2 + ky - 1, ix = x0 * 2 + kx - 1;
              if (iy < 0 || iy >= 6 || ix < 0 || ix >= 7) continue;
              acc += double(x.at(0, ic, iy, ix)) * double(w.at(oc, ic, ky, kx));
            }
        CHECK(y->value.at(0, oc, y0, x0) == doctest::Approx(acc).epsilon(1e-4));
      }
}

TEST_CASE("conv2d gradient: dense, strided, padded") {
  Tensor w = random_tensor({4, 3, 3, 3}, g_rng, 0.5);
  Tensor b = random_tensor({4}, g_rng, 0.5);
  auto fn = [&](const Var& x) {
    return conv2d(x, make_var(w), make_var(b), 2, 1);
  };
  auto gc = grad_check(fn, random_tensor({2, 3, 5, 6}, g_rng));
  CHECK(gc.max_rel_err < kTol);
}

TEST_CASE("conv2d gradient w.r.t. weights and bias") {
  Tensor x = random_tensor({1, 3, 5, 5}, g_rng);
  std::mt19937 rng(11);
  Tensor w0 = random_tensor({2, 3, 3, 3}, rng, 0.5);
  auto fn = [&](const Var& w) { return conv2d(make_var(x), w, Var(), 1, 1); };
  auto gc = grad_check(fn, w0);
  CHECK(gc.max_rel_err < kTol);
}

TEST_CASE("depthwise conv2d gradient") {
  Tensor w = random_tensor({6, 1, 3, 3}, g_rng, 0.5);
  auto fn = [&](const Var& x) {
    return conv2d(x, make_var(w), Var(), 1, 1, /*groups=*/6);
  };
  auto gc = grad_check(fn, random_tensor({1, 6, 5, 5}, g_rng));
  CHECK(gc.max_rel_err < kTol);
}

TEST_CASE("conv2d 1x1 fast path equals general path") {
  Tensor x = random_tensor({2, 5, 4, 4}, g_rng);
  Tensor w = random_tensor({3, 5, 1, 1}, g_rng);
  Var fast = conv2d(make_var(x), make_var(w), Var(), 1, 0);
  for (int n = 0; n < 2; ++n)
    for (int oc = 0; oc < 3; ++oc)
      for (int y = 0; y < 4; ++y)
        for (int xx = 0; xx < 4; ++xx) {
          double acc = 0;
          for (int ic = 0; ic < 5; ++ic)
            acc += double(x.at(n, ic, y, xx)) * double(w.at(oc, ic, 0, 0));
          CHECK(fast->value.at(n, oc, y, xx) == doctest::Approx(acc).epsilon(1e-4));
        }
}

TEST_CASE("conv2d active slices select leading channels") {
  Tensor x = random_tensor({1, 6, 4, 4}, g_rng);
  Tensor w = random_tensor({8, 6, 1, 1}, g_rng);
  // Full conv on the first 4 input channels / first 5 output channels.
  Tensor xs({1, 4, 4, 4});
  for (int c = 0; c < 4; ++c)
    for (int i = 0; i < 16; ++i) xs[c * 16 + i] = x[c * 16 + i];
  Tensor ws({5, 4, 1, 1});
  for (int oc = 0; oc < 5; ++oc)
    for (int ic = 0; ic < 4; ++ic) ws.at(oc, ic, 0, 0) = w.at(oc, ic, 0, 0);

  // The pruned call sees a 4-channel input and gathers the first 4 fan-in
  // columns of the full 6-fan-in weight.
  Var pruned = conv2d(make_var(xs), make_var(w), Var(), 1, 0, 1, /*active_out=*/5,
                      /*active_in=*/4);
  Var ref = conv2d(make_var(xs), make_var(ws), Var(), 1, 0);
  REQUIRE(pruned->value.shape() == ref->value.shape());
  for (int64_t i = 0; i < ref->value.numel(); ++i)
    CHECK(pruned->value[i] == doctest::Approx(ref->value[i]).epsilon(1e-5));
}

TEST_CASE("batch_norm training: normalized statistics and gradient") {
  Tensor gamma({4}, 1.0f), beta({4}, 0.0f);
  Tensor rm({4}, 0.0f), rv({4}, 1.0f);
  Tensor x = random_tensor({3, 4, 5, 5}, g_rng, 2.0);

  Var y = batch_norm(make_var(x), make_var(gamma), make_var(beta), rm, rv, true);
  for (int c = 0; c < 4; ++c) {
    double mean = 0, var = 0;
    int64_t n = 0;
    for (int b = 0; b < 3; ++b)
      for (int i = 0; i < 25; ++i) {
        mean += y->value.at(b, c, i / 5, i % 5);
        ++n;
      }
    mean /= double(n);
    for (int b = 0; b < 3; ++b)
      for (int i = 0; i < 25; ++i) {
        double d = y->value.at(b, c, i / 5, i % 5) - mean;
        var += d * d;
      }
    var /= double(n);
    CHECK(mean == doctest::Approx(0.0).epsilon(1e-3));
    CHECK(var == doctest::Approx(1.0).epsilon(1e-2));
  }

  auto fn = [&](const Var& v) {
    Tensor m({4}, 0.0f), s({4}, 1.0f);
    return batch_norm(v, make_var(gamma), make_var(beta), m, s, true);
  };
  auto gc = grad_check(fn, random_tensor({2, 4, 3, 3}, g_rng));
  CHECK(gc.max_rel_err < kTol);
}

TEST_CASE("batch_norm eval uses running statistics") {
  Tensor gamma({2}, 2.0f), beta({2}, 1.0f);
  Tensor rm({2}), rv({2});
  rm[0] = 1.0f; rm[1] = -1.0f;
  rv[0] = 4.0f; rv[1] = 0.25f;
  Tensor x({1, 2, 1, 1});
  x[0] = 3.0f; x[1] = 0.0f;
  Var y = batch_norm(make_var(x), make_var(gamma), make_var(beta), rm, rv, false);
  CHECK(y->value[0] == doctest::Approx(2.0 * (3.0 - 1.0) / 2.0 + 1.0).epsilon(1e-4));
  CHECK(y->value[1] == doctest::Approx(2.0 * (0.0 + 1.0) / 0.5 + 1.0).epsilon(1e-3));
}

TEST_CASE("activation gradients") {
  for (auto* name : {"relu", "leaky", "hswish", "hsigmoid", "sigmoid"}) {
    std::string s(name);
    auto fn = [&](const Var& x) -> Var {
      if (s == "relu") return relu(x);
      if (s == "leaky") return leaky_relu(x);
      if (s == "hswish") return hswish(x);
      if (s == "hsigmoid") return hsigmoid(x);
      return sigmoid(x);
    };
    // Keep inputs away from the piecewise-linear kinks.
    Tensor x = random_tensor({1, 2, 4, 4}, g_rng);
    for (int64_t i = 0; i < x.numel(); ++i) {
      float v = x[i];
      if (std::abs(v) < 0.1f) x[i] = 0.2f;
      if (std::abs(std::abs(v) - 3.0f) < 0.1f) x[i] = 2.0f;
    }
    auto gc = grad_check(fn, x);
    CHECK_MESSAGE(gc.max_rel_err < kTol, s);
  }
}

TEST_CASE("hswish and hsigmoid values") {
  Tensor x({5});
  x[0] = -4; x[1] = -1; x[2] = 0; x[3] = 1; x[4] = 4;
  Var hs = hswish(make_var(x));
  Var hg = hsigmoid(make_var(x));
  CHECK(hs->value[0] == doctest::Approx(0.0));
  CHECK(hs->value[2] == doctest::Approx(0.0));
  CHECK(hs->value[3] == doctest::Approx(1.0 * 4.0 / 6.0));
  CHECK(hs->value[4] == doctest::Approx(4.0));
  CHECK(hg->value[0] == doctest::Approx(0.0));
  CHECK(hg->value[2] == doctest::Approx(0.5));
  CHECK(hg->value[4] == doctest::Approx(1.0));
}

TEST_CASE("max_pool2d values and gradient") {
  Tensor x({1, 1, 4, 4});
  for (int i = 0; i < 16; ++i) x[i] = float(i);
  Var y = max_pool2d(make_var(x), 2, 2, 0);
  CHECK(y->value.shape() == std::vector<int>{1, 1, 2, 2});
  CHECK(y->value[0] == 5);
  CHECK(y->value[3] == 15);

  auto fn = [](const Var& v) { return max_pool2d(v, 3, 2, 1); };
  auto gc = grad_check(fn, random_tensor({1, 2, 5, 5}, g_rng));
  CHECK(gc.max_rel_err < kTol);
}

TEST_CASE("global_avg_pool, add, channel_scale gradients") {
  auto gc1 = grad_check([](const Var& x) { return global_avg_pool(x); },
                        random_tensor({2, 3, 4, 4}, g_rng));
  CHECK(gc1.max_rel_err < kTol);

  Tensor other = random_tensor({1, 2, 3, 3}, g_rng);
  auto gc2 = grad_check([&](const Var& x) { return add(x, make_var(other)); },
                        random_tensor({1, 2, 3, 3}, g_rng));
  CHECK(gc2.max_rel_err < kTol);

  Tensor gate = random_tensor({1, 3, 1, 1}, g_rng);
  auto gc3 = grad_check([&](const Var& x) { return channel_scale(x, make_var(gate)); },
                        random_tensor({1, 3, 4, 4}, g_rng));
  CHECK(gc3.max_rel_err < kTol);
  auto gc4 = grad_check(
      [&](const Var& s) { return channel_scale(make_var(other), s); },
      random_tensor({1, 2, 1, 1}, g_rng));
  CHECK(gc4.max_rel_err < kTol);
}

TEST_CASE("concat_channels and slice_channels round-trip with gradients") {
  Tensor a = random_tensor({1, 2, 3, 3}, g_rng);
  Tensor b = random_tensor({1, 3, 3, 3}, g_rng);
  Var cat = concat_channels({make_var(a), make_var(b)});
  REQUIRE(cat->value.shape() == std::vector<int>{1, 5, 3, 3});
  Var sa = slice_channels(cat, 0, 2);
  Var sb = slice_channels(cat, 2, 3);
  for (int64_t i = 0; i < a.numel(); ++i) CHECK(sa->value[i] == a[i]);
  for (int64_t i = 0; i < b.numel(); ++i) CHECK(sb->value[i] == b[i]);

  auto gc = grad_check(
      [&](const Var& x) {
        return slice_channels(concat_channels({x, make_var(b)}), 1, 3);
      },
      random_tensor({1, 2, 3, 3}, g_rng));
  CHECK(gc.max_rel_err < kTol);
}

TEST_CASE("channel_shuffle is the (groups, per-group) transpose permutation") {
  const int C = 6, groups = 2, cpg = C / groups;
  Tensor x({1, C, 1, 1});
  for (int c = 0; c < C; ++c) x[c] = float(c);
  Var y = channel_shuffle(make_var(x), groups);
  // Source channel (g, i) lands on destination (i, g).
  for (int g = 0; g < groups; ++g)
    for (int i = 0; i < cpg; ++i)
      CHECK(y->value[i * groups + g] == doctest::Approx(float(g * cpg + i)));

  // Applying the shuffle cpg times with swapped roles restores the order:
  // shuffle with groups then with cpg is the identity.
  Var z = channel_shuffle(y, cpg);
  for (int c = 0; c < C; ++c) CHECK(z->value[c] == doctest::Approx(float(c)));

  auto gc = grad_check([](const Var& v) { return channel_shuffle(v, 3); },
                       random_tensor({2, 6, 2, 2}, g_rng));
  CHECK(gc.max_rel_err < kTol);
}

TEST_CASE("upsample_nearest2x and crop gradients") {
  Tensor x({1, 1, 2, 2});
  x[0] = 1; x[1] = 2; x[2] = 3; x[3] = 4;
  Var y = upsample_nearest2x(make_var(x));
  CHECK(y->value.shape() == std::vector<int>{1, 1, 4, 4});
  CHECK(y->value.at(0, 0, 0, 1) == 1);
  CHECK(y->value.at(0, 0, 3, 3) == 4);

  auto gc = grad_check([](const Var& v) { return upsample_nearest2x(v); },
                       random_tensor({1, 2, 3, 3}, g_rng));
  CHECK(gc.max_rel_err < kTol);

  Tensor ref = Tensor::zeros({1, 2, 5, 5});
  auto gc2 = grad_check(
      [&](const Var& v) { return upsample_nearest2x_to(v, make_var(ref)); },
      random_tensor({1, 2, 3, 3}, g_rng));
  CHECK(gc2.max_rel_err < kTol);
}

TEST_CASE("conv_out_size ceil-mode arithmetic") {
  CHECK(conv_out_size(224, 3, 2, 1) == 112);
  CHECK(conv_out_size(13, 3, 2, 1) == 7);
  CHECK(conv_out_size(7, 3, 2, 1) == 4);
  CHECK(conv_out_size(5, 1, 1, 0) == 5);
}

TEST_CASE("SGD weight decay skips non-decay parameters") {
  std::mt19937 rng(3);
  Parameter w{"w", make_var(Tensor({1}, 1.0f), true), /*decay=*/true, true};
  Parameter g{"g", make_var(Tensor({1}, 1.0f), true), /*decay=*/false, true};
  w.var->ensure_grad();
  g.var->ensure_grad();
  SGD opt({&w, &g}, 0.0f, 0.1f);
  opt.step(1.0f);
  CHECK(w.value()[0] == doctest::Approx(1.0 - 0.1).epsilon(1e-5));
  CHECK(g.value()[0] == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("SGD clip_grad_norm caps the global norm") {
  Parameter a{"a", make_var(Tensor({2}, 0.0f), true), true, true};
  a.var->ensure_grad();
  a.grad()[0] = 3.0f;
  a.grad()[1] = 4.0f;
  SGD opt({&a}, 0.0f, 0.0f);
  float pre = opt.clip_grad_norm(1.0f);
  CHECK(pre == doctest::Approx(5.0).epsilon(1e-5));
  CHECK(std::hypot(a.grad()[0], a.grad()[1]) == doctest::Approx(1.0).epsilon(1e-5));
}

TEST_CASE("FlopScope counts conv multiply-accumulates") {
  Tensor x = Tensor::zeros({1, 96, 13, 13});
  Tensor w = Tensor::zeros({96, 96, 1, 1});
  {
    FlopScope scope;
    conv2d(make_var(x), make_var(w), Var(), 1, 0);
    CHECK(FlopScope::macs() == int64_t(96) * 96 * 13 * 13);
  }
}

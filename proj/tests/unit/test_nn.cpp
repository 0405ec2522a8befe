// Copyright 2026 The iotlm Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>

#include "iotlm/nn.hpp"

using namespace iotlm;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, bool grad = false) {
  std::vector<Real> v(shape_numel(shape));
  for (Real& x : v) x = static_cast<Real>(rng.normal());
  return Tensor::from(std::move(shape), std::move(v), grad);
}

std::vector<Real> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace

TEST_CASE("linear layer") {
  const Tensor x = Tensor::from({2, 2}, {1, 2, 3, 4});
  CHECK(values(linear_apply(Tensor::from({2, 2}, {1, 0, 0, 1}), Tensor::zeros({2}), x)) == values(x));
  const Tensor b = Tensor::from({3}, {1, 2, 3});
  CHECK(values(linear_apply(Tensor::zeros({2, 3}), b, Tensor::zeros({2, 2}))) ==
        std::vector<Real>{1, 2, 3, 1, 2, 3});

  Rng rng(1);
  const Tensor w = random_tensor({5, 3}, rng), bias = random_tensor({3}, rng), in = random_tensor({4, 5}, rng);
  const Tensor y_t = linear_apply(w, bias, in);
  const auto y = y_t.data();
  for (std::size_t t = 0; t < 4; ++t) {
    for (std::size_t o = 0; o < 3; ++o) {
      double s = bias.data()[o];
      for (std::size_t i = 0; i < 5; ++i) s += double(in.data()[t * 5 + i]) * w.data()[i * 3 + o];
      CHECK(y[t * 3 + o] == doctest::Approx(s).epsilon(1e-5));
    }
  }
  CHECK_THROWS_AS(linear_apply(w, Tensor::zeros({4}), in), ShapeError);
}

TEST_CASE("attention") {
  Rng rng(2);
  // One row: softmax over a single key returns v.
  const Tensor q1 = random_tensor({1, 4}, rng), k1 = random_tensor({1, 4}, rng), v1 = random_tensor({1, 4}, rng);
  const Tensor o1_t = attention_apply(q1, k1, v1, 2, true);
  const auto o1 = o1_t.data();
  for (std::size_t i = 0; i < 4; ++i) CHECK(o1[i] == doctest::Approx(v1.data()[i]));

  // Two tokens, one head, no mask: explicit formula.
  const Tensor q = random_tensor({2, 2}, rng), k = random_tensor({2, 2}, rng), v = random_tensor({2, 2}, rng);
  const Tensor o_t = attention_apply(q, k, v, 1, false);
  const auto o = o_t.data();
  for (std::size_t i = 0; i < 2; ++i) {
    double s[2];
    for (std::size_t j = 0; j < 2; ++j) {
      s[j] = (q.data()[i * 2] * k.data()[j * 2] + q.data()[i * 2 + 1] * k.data()[j * 2 + 1]) / std::sqrt(2.0);
    }
    const double m = std::max(s[0], s[1]);
    const double e0 = std::exp(s[0] - m), e1 = std::exp(s[1] - m);
    for (std::size_t c = 0; c < 2; ++c) {
      const double expect = (e0 * v.data()[c] + e1 * v.data()[2 + c]) / (e0 + e1);
      CHECK(o[i * 2 + c] == doctest::Approx(expect).epsilon(1e-5));
    }
  }

  // Causal: perturbing row 2 leaves row 0 untouched.
  const Tensor x = random_tensor({3, 4}, rng);
  std::vector<Real> bumped = values(x);
  for (std::size_t c = 0; c < 4; ++c) bumped[8 + c] += 5;
  const Tensor y = Tensor::from({3, 4}, bumped);
  const Tensor a_t = attention_apply(x, x, x, 2, true);
  const auto a = a_t.data();
  const Tensor b_t = attention_apply(y, y, y, 2, true);
  const auto b = b_t.data();
  for (std::size_t c = 0; c < 8; ++c) CHECK(a[c] == b[c]);

  // Segments are independent sequences.
  const Tensor xx = concat_tokens({x, x});
  const Tensor seg_t = attention_apply(xx, xx, xx, 2, true, 3);
  const auto seg = seg_t.data();
  for (std::size_t i = 0; i < 12; ++i) {
    CHECK(seg[i] == a[i]);
    CHECK(seg[12 + i] == a[i]);
  }
  CHECK_THROWS_AS(attention_apply(x, x, x, 3, true), ConfigError);
}

TEST_CASE("transformer block") {
  Rng rng(3);
  ParamSet p;
  add_transformer_block(p, "b", 8, rng);
  for (const char* path : {"b.attn.o.weight", "b.mlp.fc2.weight"}) {
    for (Real& w : p.get(path).mutable_data()) w = 0;
  }
  const Tensor x = random_tensor({5, 8}, rng);
  CHECK(values(transformer_block_apply(p, "b", x, 2)) == values(x));

  ParamSet q;
  add_transformer_block(q, "b", 8, rng);
  for (std::size_t t : {1, 2, 7}) {
    CHECK(transformer_block_apply(q, "b", random_tensor({t, 8}, rng), 2).shape() == Shape{t, 8});
  }
}

TEST_CASE("cross entropy") {
  const std::int64_t t[] = {2};
  CHECK(cross_entropy(Tensor::zeros({1, 4}), t).item() == doctest::Approx(std::log(4.0)));
  CHECK(cross_entropy(Tensor::from({1, 4}, {0, 0, 100, 0}), t).item() == doctest::Approx(0).epsilon(1e-6));
  const std::int64_t ignored[] = {kIgnoreIndex, kIgnoreIndex};
  CHECK(cross_entropy(Tensor::zeros({2, 4}), ignored).item() == 0);
  const std::int64_t mixed[] = {kIgnoreIndex, 1};
  CHECK(cross_entropy(Tensor::from({2, 2}, {50, -50, 0, 0}), mixed).item() == doctest::Approx(std::log(2.0)));
  const std::int64_t bad[] = {4};
  CHECK_THROWS_AS(cross_entropy(Tensor::zeros({1, 4}), bad), IndexError);
}

TEST_CASE("mean squared error") {
  Rng rng(4);
  const Tensor a = random_tensor({3, 5}, rng), b = random_tensor({3, 5}, rng);
  CHECK(mse_loss(a, a).item() == 0);
  CHECK(mse_loss(add(a, Tensor::scalar(1)), a).item() == doctest::Approx(1).epsilon(1e-6));
  double s = 0;
  for (std::size_t i = 0; i < 15; ++i) s += std::pow(double(a.data()[i]) - b.data()[i], 2);
  CHECK(mse_loss(a, b).item() == doctest::Approx(s / 15).epsilon(1e-6));
}

TEST_CASE("adam") {
  AdamState defaults;
  CHECK(defaults.lr == 1e-4);
  CHECK(defaults.beta1 == 0.9);
  CHECK(defaults.beta2 == 0.999);
  CHECK(defaults.eps == 1e-8);

  ParamSet p;
  p.add("w", Tensor::from({1}, {1}, true));
  AdamState s;
  s.lr = 0.1;
  adam_update(p, s, {{"w", {0}}});
  CHECK(p.get("w")[0] == 1);

  // Two steps by hand.
  double w = 1, m = 0, v = 0;
  for (int step = 1; step <= 2; ++step) {
    const double g = step == 1 ? 0.5 : -0.25;
    adam_update(p, s, {{"w", {static_cast<Real>(g)}}});
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    // The zero-gradient step above already advanced the step counter.
    const int t = step + 1;
    w -= 0.1 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
  }
  CHECK(p.get("w")[0] == doctest::Approx(w).epsilon(1e-7));

  // Frozen parameters never move.
  p.add("frozen", Tensor::from({1}, {2}, true));
  p.freeze("frozen");
  adam_update(p, s, {{"w", {1}}});
  CHECK(p.get("frozen")[0] == 2);
}

TEST_CASE("parameter table round trip") {
  Rng rng(5);
  ParamSet p;
  add_linear(p, "a", 3, 4, rng);
  add_layer_norm(p, "ln", 4);
  p.freeze("ln.gain");
  const auto bytes = params_serialize(p);
  const ParamSet back = params_deserialize(bytes);
  CHECK(back.paths() == p.paths());
  for (const auto& [path, t] : p.entries()) CHECK(values(back.get(path)) == values(t));
  CHECK(params_serialize(back) == bytes);

  const auto empty = params_serialize(ParamSet{});
  CHECK(params_deserialize(empty).size() == 0);

  for (std::size_t cut : {std::size_t{0}, std::size_t{3}, bytes.size() / 2, bytes.size() - 1}) {
    const std::span<const std::uint8_t> part(bytes.data(), cut);
    CHECK_THROWS_AS(params_deserialize(part), FormatError);
  }
}

TEST_CASE("param set views") {
  Rng rng(6);
  ParamSet p;
  add_linear(p, "lm.x", 2, 2, rng);
  add_linear(p, "enc", 2, 2, rng);
  p.freeze_prefix("lm.");
  CHECK(p.trainable().paths() == std::vector<std::string>{"enc.bias", "enc.weight"});
  CHECK(p.with_prefix("lm.").size() == 2);
  CHECK_FALSE(p.get("lm.x.weight").requires_grad());
  const ParamSet copy = p.deep_copy();
  CHECK_FALSE(copy.get("enc.weight").same_as(p.get("enc.weight")));
  CHECK(copy.is_frozen("lm.x.bias"));
  CHECK_THROWS_AS(p.add("enc.bias", Tensor::zeros({2})), ConfigError);
}

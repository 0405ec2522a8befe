// Copyright 2026 The iotlm Authors
// SPDX-License-Identifier: Apache-2.0

// Built only into the 64-bit core library.
#ifdef IOTLM_DOUBLE_PRECISION

#include "iotlm/gradcheck.hpp"

#include <chrono>
#include <cmath>
#include <functional>

#include "iotlm/train.hpp"

namespace iotlm {

namespace {

using namespace iotlm::f64;

Tensor random_tensor(Shape shape, Rng& rng, double stddev = 1.0, bool grad = true) {
  std::vector<Real> v(shape_numel(shape));
  for (Real& x : v) x = rng.normal(0.0, stddev);
  return Tensor::from(std::move(shape), std::move(v), grad);
}

// Values bounded away from zero so h never crosses the ReLU kink.
Tensor away_from_zero(Shape shape, Rng& rng) {
  std::vector<Real> v(shape_numel(shape));
  for (Real& x : v) {
    const double m = rng.uniform(0.1, 1.5);
    x = rng.uniform() < 0.5 ? -m : m;
  }
  return Tensor::from(std::move(shape), std::move(v), true);
}

class Suite {
 public:
  Suite(const GradcheckOptions& options) : options_(options), rng_(options.seed, 0x6763) {}

  // The op output is contracted with a fixed random tensor so every output
  // element gets a distinct upstream gradient.
  void op(const std::string& name, const std::function<Tensor()>& out, std::vector<Tensor> params) {
    const Tensor probe = out();
    const Tensor weights = random_tensor(probe.shape(), rng_, 1.0, false);
    scalar(name, [&] { return sum(mul(out(), weights)); }, std::move(params));
  }

  void scalar(const std::string& name, const std::function<Tensor()>& loss, std::vector<Tensor> params) {
    const FiniteDiffReport r = finite_diff_check(loss, params, options_.h, options_.tolerance);
    report_.entries.push_back({name, r.max_rel_error, r.max_abs_error, r.coordinates, r.passed});
  }

  Rng& rng() { return rng_; }
  GradcheckReport& report() { return report_; }

 private:
  GradcheckOptions options_;
  Rng rng_;
  GradcheckReport report_;
};

void check_ops(Suite& s) {
  Rng& rng = s.rng();
  {
    Tensor a = random_tensor({3, 4}, rng), b = random_tensor({4, 5}, rng);
    s.op("matmul", [=] { return matmul(a, b); }, {a, b});
  }
  {
    Tensor a = random_tensor({3, 4}, rng);
    s.op("transpose", [=] { return transpose(a); }, {a});
  }
  {
    Tensor a = random_tensor({3, 4}, rng), b = random_tensor({3, 4}, rng);
    Tensor row = random_tensor({4}, rng), one = random_tensor({1}, rng);
    s.op("add", [=] { return add(a, b); }, {a, b});
    s.op("add_broadcast_row", [=] { return add(a, row); }, {a, row});
    s.op("add_broadcast_scalar", [=] { return add(a, one); }, {a, one});
    s.op("sub", [=] { return sub(a, b); }, {a, b});
    s.op("sub_broadcast_row", [=] { return sub(a, row); }, {a, row});
    s.op("mul", [=] { return mul(a, b); }, {a, b});
    s.op("mul_broadcast_row", [=] { return mul(a, row); }, {a, row});
    s.op("mul_broadcast_scalar", [=] { return mul(a, one); }, {a, one});
    s.op("gelu", [=] { return gelu(a); }, {a});
    s.op("tanh", [=] { return iotlm::f64::tanh(a); }, {a});
    s.op("exp", [=] { return iotlm::f64::exp(scale(a, 0.5)); }, {a});
    s.op("scale", [=] { return scale(a, -1.7); }, {a});
    s.op("softmax_axis0", [=] { return softmax(a, 0); }, {a});
    s.op("softmax_axis1", [=] { return softmax(a, 1); }, {a});
    s.op("reshape", [=] { return reshape(a, {2, 6}); }, {a});
    s.op("reduce_sum", [=] { return sum(a); }, {a});
    s.op("reduce_mean", [=] { return mean(a); }, {a});
    s.op("reduce_sum_axis0", [=] { return reduce(a, ReduceKind::Sum, 0); }, {a});
    s.op("reduce_mean_axis1", [=] { return reduce(a, ReduceKind::Mean, 1); }, {a});
  }
  {
    Tensor v = random_tensor({5}, rng);
    s.op("softmax_1d", [=] { return softmax(v, 0); }, {v});
  }
  {
    Tensor a = away_from_zero({3, 4}, rng);
    s.op("relu", [=] { return relu(a); }, {a});
  }
  {
    Tensor x = random_tensor({3, 6}, rng), g = random_tensor({6}, rng), b = random_tensor({6}, rng);
    s.op("layer_norm", [=] { return layer_norm(x, g, b); }, {x, g, b});
  }
  {
    Tensor a = random_tensor({2, 3}, rng), b = random_tensor({3, 3}, rng);
    s.op("concat_tokens", [=] { return concat_tokens({a, b}); }, {a, b});
  }
  {
    Tensor t = random_tensor({5, 3}, rng);
    const std::vector<std::size_t> ids{0, 2, 2, 4};
    s.op("gather_rows", [=] { return gather_rows(t, ids); }, {t});
    s.op("slice_rows", [=] { return slice_rows(t, 1, 4); }, {t});
  }
  {
    Tensor q = random_tensor({6, 8}, rng), k = random_tensor({6, 8}, rng), v = random_tensor({6, 8}, rng);
    s.op("attention_causal_segments", [=] { return attention_apply(q, k, v, 2, true, 3); }, {q, k, v});
    s.op("attention_full", [=] { return attention_apply(q, k, v, 4, false); }, {q, k, v});
  }
  {
    Tensor logits = random_tensor({4, 5}, rng);
    const std::vector<std::int64_t> targets{1, kIgnoreIndex, 4, 0};
    s.scalar("cross_entropy", [=] { return cross_entropy(logits, targets); }, {logits});
  }
  {
    Tensor pred = random_tensor({3, 2}, rng);
    const Tensor target = random_tensor({3, 2}, rng, 1.0, false);
    s.scalar("mse_loss", [=] { return mse_loss(pred, target); }, {pred});
  }
  {
    Tensor w = random_tensor({4, 3}, rng), b = random_tensor({3}, rng), x = random_tensor({2, 4}, rng);
    s.op("linear", [=] { return linear_apply(w, b, x); }, {w, b, x});
  }
  {
    ParamSet ps;
    add_transformer_block(ps, "blk", 8, rng);
    std::vector<Tensor> params;
    for (const auto& [path, t] : ps.entries()) {
      // Layer-norm gains start at exactly 1; jitter everything.
      Tensor handle = t;
      for (Real& v : handle.mutable_data()) v += rng.normal(0.0, 0.3);
      params.push_back(handle);
    }
    Tensor x = random_tensor({6, 8}, rng);
    params.push_back(x);
    s.op("transformer_block", [=] { return transformer_block_apply(ps, "blk", x, 2, 3); }, params);
  }
}

void check_merged(Suite& s, InsertionMode mode) {
  Rng& rng = s.rng();
  const TaskRegistry registry = TaskRegistry::default_registry();
  LMConfig lc;
  lc.width = 16;
  lc.layers = 2;
  lc.heads = 2;
  lc.max_seq = 48;
  CausalLM lm = CausalLM::init(lc, 7);
  lm.params.freeze_prefix("lm.");
  EncoderConfig ec;
  ec.width = 8;
  ec.window = 32;
  ec.stride = 32;
  ec.token_cap = 4;
  AdapterConfig ac;
  ac.prefix_len = 4;
  ac.hidden = 8;
  ac.mode = mode;
  if (mode == InsertionMode::PerLayerPrefix) ac.layers = {1};
  const std::string task = "touch";
  MergedModel model = MergedModel::create(lm, ec, ac, registry, {task}, 11);
  // Zero-initialized projections would hide whole gradient paths.
  std::vector<Tensor> params;
  for (const auto& [path, t] : model.params.entries()) {
    Tensor handle = t;
    for (Real& v : handle.mutable_data()) v += rng.normal(0.0, 0.3);
    params.push_back(handle);
  }
  auto samples = gen_task_data(registry, task, 2, 5);
  strip_latents(samples);
  std::vector<InstructionTokens> rows;
  for (const auto& smp : samples) {
    InstructionSample is;
    is.instruction = "Which?";
    is.answer = " " + registry.get(task).classes[static_cast<std::size_t>(smp.class_id)];
    rows.push_back(tokenize_instruction(is));
  }
  const TextBatch batch = make_text_batch(rows);
  const std::vector<const SensorSample*> ptrs{&samples[0], &samples[1]};
  const auto loss = [&] {
    const MergedOutput out = merged_forward(model, ptrs, task, &batch.tokens);
    return add(cross_entropy(out.logits, batch.targets), task_loss(registry.get(task), out.head, ptrs));
  };
  s.scalar(std::string("merged_model_") + std::string(insertion_mode_name(mode)), loss, params);
}

}  // namespace

GradcheckReport run_gradcheck(const GradcheckOptions& options) {
  const auto t0 = std::chrono::steady_clock::now();
  Suite suite(options);
  check_ops(suite);
  check_merged(suite, InsertionMode::InputPrefix);
  check_merged(suite, InsertionMode::PerLayerPrefix);
  GradcheckReport report = std::move(suite.report());
  report.passed = true;
  for (const auto& e : report.entries) report.passed = report.passed && e.passed;
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

}  // namespace iotlm

#endif  // IOTLM_DOUBLE_PRECISION

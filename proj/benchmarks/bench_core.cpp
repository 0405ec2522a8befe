// Copyright 2026 The iotlm Authors
// SPDX-License-Identifier: Apache-2.0

#include <benchmark/benchmark.h>

#include "iotlm/train.hpp"

using namespace iotlm;

namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed, bool requires_grad = false) {
  Rng rng(seed);
  Tensor t = init_normal(shape, rng, 1.0);
  return requires_grad ? Tensor::from(t.shape(), {t.data().begin(), t.data().end()}, true) : t;
}

}  // namespace

static void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor a = random_tensor({n, n}, 1), b = random_tensor({n, n}, 2);
  NoGradGuard no_grad;
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}
BENCHMARK(BM_Matmul)->RangeMultiplier(2)->Range(16, 256);

static void BM_MatmulBackward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor a = random_tensor({n, n}, 1, true), b = random_tensor({n, n}, 2, true);
  for (auto _ : state) {
    const Tensor loss = sum(matmul(a, b));
    backward(loss);
  }
}
BENCHMARK(BM_MatmulBackward)->RangeMultiplier(2)->Range(16, 128);

// Causal self-attention, width 64, 4 heads.
static void BM_Attention(benchmark::State& state) {
  const auto t = static_cast<std::size_t>(state.range(0));
  const Tensor q = random_tensor({t, 64}, 1), k = random_tensor({t, 64}, 2), v = random_tensor({t, 64}, 3);
  NoGradGuard no_grad;
  for (auto _ : state) benchmark::DoNotOptimize(attention_apply(q, k, v, 4, true));
}
BENCHMARK(BM_Attention)->RangeMultiplier(2)->Range(16, 128);

// 40 prefix rows plus 32 text tokens per preset.
static void BM_LMForward(benchmark::State& state) {
  static const char* const presets[] = {"tiny", "small", "medium"};
  const LMConfig config = LMConfig::preset(presets[state.range(0)]);
  const CausalLM lm = build_frozen_lm(config, std::nullopt, 1);
  const Tensor prefix = random_tensor({40, config.width}, 4);
  std::vector<TokenId> tokens(32);
  for (std::size_t i = 0; i < tokens.size(); ++i) tokens[i] = static_cast<TokenId>(32 + i);
  NoGradGuard no_grad;
  for (auto _ : state) benchmark::DoNotOptimize(lm_forward(lm, &prefix, tokens));
  state.SetLabel(presets[state.range(0)]);
}
BENCHMARK(BM_LMForward)->DenseRange(0, 2)->Unit(benchmark::kMillisecond);

// One optimizer step of the merged model on a batch of 16 gesture samples.
static void BM_MergedTrainStep(benchmark::State& state) {
  const TaskRegistry registry = TaskRegistry::default_registry();
  TrainConfig config;
  config.lm_steps = 0;
  config.tasks = {"gesture"};
  MergedModel model = build_model(config, registry);
  auto samples = gen_task_data(registry, "gesture", 16, 1);
  strip_latents(samples);
  std::vector<const SensorSample*> batch;
  for (const auto& s : samples) batch.push_back(&s);
  const TaskSpec& spec = registry.get("gesture");
  AdamState optimizer;
  for (auto _ : state) {
    model.params.zero_grads();
    const MergedOutput out = merged_forward(model, batch, "gesture");
    const Tensor loss = task_loss(spec, out.head, batch);
    backward(loss);
    adam_update(model.params, optimizer, collect_grads(model.params));
  }
}
BENCHMARK(BM_MergedTrainStep)->Unit(benchmark::kMillisecond);

static void BM_GenerateSamples(benchmark::State& state) {
  const TaskRegistry registry = TaskRegistry::default_registry();
  std::uint64_t seed = 0;
  for (auto _ : state) benchmark::DoNotOptimize(gen_task_data(registry, "activity", 32, ++seed));
  state.SetItemsProcessed(state.iterations() * 32);
}
BENCHMARK(BM_GenerateSamples)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();

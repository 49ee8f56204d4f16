#include <benchmark/benchmark.h>

#include "bevrecon/bev.hpp"
#include "bevrecon/diffusion.hpp"
#include "bevrecon/evaluate.hpp"
#include "bevrecon/train.hpp"
#include "bevrecon/wire.hpp"

namespace {

using namespace bevrecon;

RunConfig default_config() {
  RunConfig cfg;
  cfg.validate();
  return cfg;
}

void BM_GenerateScenePair(benchmark::State& state) {
  const RunConfig cfg = default_config();
  uint64_t seed = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(generate_scene_pair(cfg.gen, seed++));
  }
}
BENCHMARK(BM_GenerateScenePair);

void BM_SemanticExtract(benchmark::State& state) {
  const RunConfig cfg = default_config();
  const GridShape grid{cfg.gen.h, cfg.gen.w, cfg.gen.c};
  Model<float> model(cfg.model, grid, 1);
  const ScenePair pair = generate_scene_pair(cfg.gen, 7);
  for (auto _ : state) {
    benchmark::DoNotOptimize(model.extract_semantic(pair.co.data));
  }
}
BENCHMARK(BM_SemanticExtract);

void BM_DenoiserForwardSingle(benchmark::State& state) {
  const RunConfig cfg = default_config();
  const GridShape grid{cfg.gen.h, cfg.gen.w, cfg.gen.c};
  Model<float> model(cfg.model, grid, 1);
  const ScenePair pair = generate_scene_pair(cfg.gen, 7);
  const auto v_c = model.extract_semantic(pair.co.data);
  const auto v_e = model.extract_semantic(pair.ego.data);
  TensorF ft = pair.co.data;
  for (auto _ : state) {
    benchmark::DoNotOptimize(model.denoise(ft, pair.ego.data, 500, pair.delta, v_c, v_e));
  }
}
BENCHMARK(BM_DenoiserForwardSingle);

void BM_Reconstruct(benchmark::State& state) {
  const RunConfig cfg = default_config();
  const GridShape grid{cfg.gen.h, cfg.gen.w, cfg.gen.c};
  Model<float> model(cfg.model, grid, 1);
  const NoiseSchedule sched = build_schedule(cfg.sched.t_diff, cfg.sched.beta_start,
                                             cfg.sched.beta_end);
  const ScenePair pair = generate_scene_pair(cfg.gen, 7);
  const CollabPayload payload = make_payload(model, pair, 0);
  const int steps = static_cast<int>(state.range(0));
  uint64_t seed = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(reconstruct(model, sched, pair.ego, payload, steps, seed++));
  }
}
BENCHMARK(BM_Reconstruct)->Arg(2)->Arg(5)->Arg(10)->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State& state) {
  RunConfig cfg = default_config();
  cfg.opt.steps = 1;
  cfg.opt.val_interval = 1 << 30;
  const GridShape grid{cfg.gen.h, cfg.gen.w, cfg.gen.c};
  for (auto _ : state) {
    state.PauseTiming();
    Model<float> model(cfg.model, grid, 1);
    state.ResumeTiming();
    train_loop(model, cfg);
  }
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);

void BM_PayloadRoundtrip(benchmark::State& state) {
  const RunConfig cfg = default_config();
  const GridShape grid{cfg.gen.h, cfg.gen.w, cfg.gen.c};
  Model<float> model(cfg.model, grid, 1);
  const ScenePair pair = generate_scene_pair(cfg.gen, 7);
  const CollabPayload payload = make_payload(model, pair, 25);
  for (auto _ : state) {
    benchmark::DoNotOptimize(decode_payload(encode_payload(payload)));
  }
}
BENCHMARK(BM_PayloadRoundtrip);

void BM_SelectTopK(benchmark::State& state) {
  const RunConfig cfg = default_config();
  const ScenePair pair = generate_scene_pair(cfg.gen, 7);
  for (auto _ : state) {
    benchmark::DoNotOptimize(select_topk(pair.co.data, 25));
  }
}
BENCHMARK(BM_SelectTopK);

}  // namespace

BENCHMARK_MAIN();

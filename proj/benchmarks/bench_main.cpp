#include <benchmark/benchmark.h>

#include <vector>

#include "cfgmoe/cfg.hpp"
#include "cfgmoe/explainer.hpp"
#include "cfgmoe/instruction.hpp"
#include "cfgmoe/moe.hpp"
#include "cfgmoe/rng.hpp"
#include "cfgmoe/x86_split.hpp"

namespace {

using namespace cfgmoe;

const Dataset& graphs() {
  static const Dataset ds = synth_dataset({.per_class = 16, .feature_dim = 64, .seed = 1});
  return ds;
}

void BM_ModelForward(benchmark::State& state) {
  MoeConfig c;
  c.variant = static_cast<GateVariant>(state.range(0));
  const MoeModel m(c, 1);
  std::size_t i = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(model_forward(m, graphs().graphs[i++ % graphs().size()]));
  }
}
BENCHMARK(BM_ModelForward)->Arg(0)->Arg(1)->Arg(2)->Unit(benchmark::kMicrosecond);

void BM_BatchedForward(benchmark::State& state) {
  const MoeModel m(MoeConfig{}, 1);
  std::vector<const Cfg*> batch;
  for (std::size_t i = 0; i < static_cast<std::size_t>(state.range(0)); ++i) batch.push_back(&graphs().graphs[i]);
  for (auto _ : state) benchmark::DoNotOptimize(model_forward(m, batch));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_BatchedForward)->Arg(1)->Arg(8)->Arg(32)->Unit(benchmark::kMillisecond);

void BM_IntegratedGradients(benchmark::State& state) {
  const MoeModel m(MoeConfig{}, 1);
  const Cfg& g = graphs().graphs[3];
  const IgOptions opts{.steps = static_cast<std::size_t>(state.range(0))};
  for (auto _ : state) benchmark::DoNotOptimize(integrated_gradients(m, g, 5, 0, opts));
  state.SetLabel(std::to_string(g.edges.size()) + " edges");
}
BENCHMARK(BM_IntegratedGradients)->Arg(16)->Arg(64)->Arg(128)->Unit(benchmark::kMillisecond);

void BM_EncodeInstruction(benchmark::State& state) {
  InstructionRecord r;
  r.lock = true;
  r.opcode = 0x81;
  r.modrm = 0x84;
  r.sib = 0x24;
  r.displacement = -64;
  r.immediate = 0x1234;
  for (auto _ : state) benchmark::DoNotOptimize(encode_instruction(r));
}
BENCHMARK(BM_EncodeInstruction);

void BM_SplitBytes(benchmark::State& state) {
  const auto bytes = x86::parse_hex("F0 81 84 24 C0 FF FF FF 34 12 00 00");
  for (auto _ : state) benchmark::DoNotOptimize(x86::split_bytes(std::span<const std::uint8_t>(bytes)));
}
BENCHMARK(BM_SplitBytes);

}  // namespace
BENCHMARK_MAIN();

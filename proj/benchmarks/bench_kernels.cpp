#include <benchmark/benchmark.h>

#include "ccmt/autodiff.hpp"
#include "ccmt/models.hpp"
#include "ccmt/runtime.hpp"
#include "ccmt/training.hpp"

namespace {

using namespace ccmt;

Tensor random_tensor(Shape shape, Rng& rng) {
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = u(rng);
  return t;
}

void BM_Conv2dForwardBackward(benchmark::State& state) {
  const auto side = static_cast<std::size_t>(state.range(0));
  const auto cin = static_cast<std::size_t>(state.range(1));
  const auto cout = static_cast<std::size_t>(state.range(2));
  Rng rng(7);
  const Tensor x = random_tensor({128, side, side, cin}, rng);
  const Tensor w = random_tensor({3, 3, cin, cout}, rng);
  const Tensor b = random_tensor({cout}, rng);
  for (auto _ : state) {
    Tape<float> tape;
    auto in = tape.parameter(x);
    auto y = ops::conv2d(in, tape.parameter(w), tape.parameter(b));
    tape.backward(ops::sum(y));
    benchmark::DoNotOptimize(tape.grad(in).data());
  }
}
BENCHMARK(BM_Conv2dForwardBackward)->Args({14, 1, 6})->Args({7, 6, 5})->Args({3, 5, 3});

void BM_ConvReluPool(benchmark::State& state) {
  const auto side = static_cast<std::size_t>(state.range(0));
  const auto cin = static_cast<std::size_t>(state.range(1));
  const auto cout = static_cast<std::size_t>(state.range(2));
  Rng rng(5);
  const Tensor x = random_tensor({128, side, side, cin}, rng);
  const Tensor w = random_tensor({3, 3, cin, cout}, rng);
  const Tensor b = random_tensor({cout}, rng);
  for (auto _ : state) {
    Tape<float> tape;
    auto in = state.range(3) ? tape.parameter(x) : tape.constant(x);
    auto kernel = tape.parameter(w);
    tape.backward(ops::sum(ops::conv_relu_pool(in, kernel, tape.parameter(b))));
    benchmark::DoNotOptimize(tape.grad(kernel).data());
  }
}
BENCHMARK(BM_ConvReluPool)->Args({14, 1, 6, 0})->Args({7, 6, 5, 1});

void BM_MaxPool(benchmark::State& state) {
  Rng rng(3);
  const Tensor x = random_tensor({128, 14, 14, 6}, rng);
  for (auto _ : state) {
    Tape<float> tape;
    auto in = tape.parameter(x);
    tape.backward(ops::sum(ops::maxpool2(in)));
    benchmark::DoNotOptimize(tape.grad(in).data());
  }
}
BENCHMARK(BM_MaxPool);

void BM_TrainStep(benchmark::State& state) {
  ArchConfig arch;
  arch.variant = state.range(0) == 0 ? Variant::ccmt : Variant::stc;
  const auto bundle = ModelBundle::initialize(arch, 1);
  Rng rng(11);
  std::vector<Tensor> nodes;
  for (std::size_t k = 0; k < arch.nodes; ++k) nodes.push_back(random_tensor({128, 14, 14, 1}, rng));
  std::vector<int> z1(128), z2(128);
  for (std::size_t j = 0; j < 128; ++j) {
    z2[j] = static_cast<int>(j % 10);
    z1[j] = z2[j] == 2;
  }
  const std::vector<std::vector<int>> labels = {z1, z2};
  const ChannelConfig channel{9.0, 11.0};
  for (auto _ : state) {
    Tape<float> tape;
    BoundModel model(tape, bundle);
    std::vector<Var<float>> inputs;
    for (const auto& n : nodes) inputs.push_back(tape.constant(n));
    const auto draw = draw_channel(arch, 128, 1, std::span(&channel, 1), rng);
    const auto loss = loss_ccmt(system_forward(model, inputs, draw), labels);
    tape.backward(loss.total);
    benchmark::DoNotOptimize(model.gradients());
  }
}
BENCHMARK(BM_TrainStep)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

}  // namespace
int main(int argc, char** argv) {
  ccmt::tune_allocator();
  benchmark::Initialize(&argc, argv);
  if (benchmark::ReportUnrecognizedArguments(argc, argv)) return 1;
  benchmark::RunSpecifiedBenchmarks();
  benchmark::Shutdown();
  return 0;
}

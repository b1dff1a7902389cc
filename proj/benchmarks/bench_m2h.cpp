#include <benchmark/benchmark.h>

#include "m2h/adversarial.hpp"
#include "m2h/corpus.hpp"
#include "m2h/lda.hpp"
#include "m2h/nn.hpp"

namespace {

using namespace m2h;

const ParallelCorpus& corpus() {
  static const ParallelCorpus c = generate_synthetic_corpus(CorpusConfig::decoda_shaped(), 2019);
  return c;
}

void BM_GibbsSweep(benchmark::State& state) {
  const auto docs = corpus().documents(Channel::kTrs, Split::kTrain);
  GibbsSampler sampler(docs, corpus().vocab_size(), 25, 2.0, 0.01, 1);
  for (auto _ : state) sampler.sweep();
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(sampler.total_tokens()));
}
BENCHMARK(BM_GibbsSweep)->Unit(benchmark::kMillisecond);

void BM_FoldIn(benchmark::State& state) {
  const auto docs = corpus().documents(Channel::kTrs, Split::kTrain);
  LdaConfig config;
  config.iterations = 20;
  const FoldIn fold_in(train_lda(docs, corpus().vocab_size(), config, 1));
  const auto& doc = docs.front();
  Rng rng(2);
  for (auto _ : state) benchmark::DoNotOptimize(fold_in.infer(doc.tokens, InferenceConfig{}, rng));
}
BENCHMARK(BM_FoldIn)->Unit(benchmark::kMicrosecond);

void BM_GeneratorForwardBackward(benchmark::State& state) {
  Rng rng(3);
  const auto g = make_generator(GeneratorSpec{}, rng);
  const Eigen::MatrixXd z = Eigen::MatrixXd::Random(250, state.range(0)).cwiseAbs();
  const Eigen::MatrixXd upstream = Eigen::MatrixXd::Random(250, state.range(0));
  for (auto _ : state) {
    const auto pass = forward(g, z);
    benchmark::DoNotOptimize(backward(g, pass.cache, upstream));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_GeneratorForwardBackward)->Arg(32)->Arg(256)->Unit(benchmark::kMicrosecond);

void BM_WordEditDistance(benchmark::State& state) {
  const auto& pair = corpus().pairs.front();
  for (auto _ : state) benchmark::DoNotOptimize(word_edit_distance(pair.trs.tokens, pair.asr.tokens));
}
BENCHMARK(BM_WordEditDistance);

}  // namespace

BENCHMARK_MAIN();

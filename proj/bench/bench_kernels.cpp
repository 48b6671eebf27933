// Serial reference vs OpenMP kernel, same inputs. Run with OMP_NUM_THREADS set.

#include <benchmark/benchmark.h>

#include <random>

#include "apideob/hmm.hpp"
#include "apideob/mlr.hpp"
#include "apideob/symexec.hpp"
#include "apideob/synth.hpp"
#include "apideob/vectorize.hpp"

using namespace apideob;

namespace {

const std::vector<TokenSequence>& estep_data() {
  static const auto seqs = sample_hmm(random_hmm(10, 60, 1), 4000, 8, 2);
  return seqs;
}

void BM_EStep(benchmark::State& state, bool parallel) {
  const LogHmm h(random_hmm(10, 60, 3));
  const auto& seqs = estep_data();
  for (auto _ : state) {
    auto c = parallel ? kernels::estep_parallel(h, seqs) : kernels::estep_serial(h, seqs);
    benchmark::DoNotOptimize(c.loglik);
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(seqs.size()));
}

struct Expt2Input {
  HmmBank bank;
  std::vector<EncodedCall> calls;
};

const Expt2Input& expt2_data() {
  static const Expt2Input in = [] {
    Expt2Input out;
    const auto sigs = default_signature_db();
    const std::size_t W = 40;
    std::uint64_t seed = 10;
    for (const auto& [name, n] : sigs.entries())
      out.bank.add(name, static_cast<std::size_t>(n), random_hmm(10, W + 1, seed++));
    std::mt19937_64 rng(4);
    std::uniform_int_distribution<std::size_t> tok(0, W);
    for (int i = 0; i < 2000; ++i) {
      EncodedCall c;
      for (auto& t : c.tokens) t = tok(rng);
      c.available = kMaxArgs;
      out.calls.push_back(c);
    }
    return out;
  }();
  return in;
}

void BM_Expt2Vectorize(benchmark::State& state, bool parallel) {
  const auto& in = expt2_data();
  for (auto _ : state) {
    auto X = parallel ? kernels::vectorize_expt2_parallel(in.bank, in.calls, LastObsMode::Predictive)
                      : kernels::vectorize_expt2_serial(in.bank, in.calls, LastObsMode::Predictive);
    benchmark::DoNotOptimize(X.data().data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(in.calls.size()));
}

void BM_MlrLossGrad(benchmark::State& state, bool parallel) {
  const std::size_t N = 8000, D = 325, C = 25;
  std::mt19937_64 rng(5);
  std::normal_distribution<double> g(0.0, 1.0);
  Matrix Z(N, D), W(D + 1, C), grad;
  for (auto& v : Z.data()) v = g(rng);
  for (auto& v : W.data()) v = 0.01 * g(rng);
  std::vector<std::size_t> y(N);
  for (std::size_t n = 0; n < N; ++n) y[n] = n % C;
  for (auto _ : state) {
    const double l = parallel ? kernels::mlr_loss_grad_parallel(Z, y, W, 1e-4, &grad)
                              : kernels::mlr_loss_grad_serial(Z, y, W, 1e-4, &grad);
    benchmark::DoNotOptimize(l);
  }
}

const SynthCorpus& corpus() {
  static const auto c = [] {
    auto spec = default_synth_spec(6);
    spec.calls_per_api_min = 100;
    spec.calls_per_api_max = 120;
    return generate(spec);
  }();
  return c;
}

void BM_Extract(benchmark::State& state, bool parallel) {
  const auto& c = corpus();
  for (auto _ : state) {
    auto recs = parallel ? extract_corpus(c.functions, c.imports, c.sigs, 1)
                         : extract_corpus_serial(c.functions, c.imports, c.sigs, 1);
    benchmark::DoNotOptimize(recs.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(c.functions.size()));
}

}  // namespace

BENCHMARK_CAPTURE(BM_EStep, serial, false)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(BM_EStep, parallel, true)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(BM_Expt2Vectorize, serial, false)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(BM_Expt2Vectorize, parallel, true)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(BM_MlrLossGrad, serial, false)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(BM_MlrLossGrad, parallel, true)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(BM_Extract, serial, false)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(BM_Extract, parallel, true)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();

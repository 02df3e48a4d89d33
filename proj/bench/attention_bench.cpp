// Sparse heterogeneous attention (OpenMP, 1 thread vs all threads) against
// the serial dense reference.
//
//   ./build/bench/attention_bench --benchmark_filter=Forward

#include <benchmark/benchmark.h>

#include "hetformer/hetatt.hpp"
#include "hetformer/maskgen.hpp"
#include "hetformer/parallel.hpp"
#include "hetformer/rng.hpp"

namespace {

using namespace hetformer;

constexpr std::size_t kDModel = 64;
constexpr std::size_t kHeads = 4;
constexpr std::size_t kWindow = 32;

struct Fixture {
  linalg::Matrix<float> x;
  maskgen::LayerMasks masks;
  hetatt::AttentionParams<float> params;

  explicit Fixture(std::size_t n) {
    Rng rng(17);
    const auto nodes = maskgen::synthetic_layout(n, 16, 8, 8);
    masks = {maskgen::build_t2t(n, kWindow), maskgen::build_ts(nodes), maskgen::build_e2e(nodes)};
    params = hetatt::AttentionParams<float>::zeros({kDModel, kHeads, kDModel / kHeads});
    auto fill = [&](linalg::Matrix<float>& m) {
      for (auto& v : m.data()) v = static_cast<float>(rng.uniform(-0.2, 0.2));
    };
    for (auto& p : params.pattern) {
      fill(p.wq);
      fill(p.wk);
      fill(p.wv);
    }
    fill(params.wo);
    x = linalg::Matrix<float>(n, kDModel);
    fill(x);
  }
};

void BM_SparseForward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const int threads = state.range(1) == 0 ? parallel::get_max_threads() : static_cast<int>(state.range(1));
  const int saved = parallel::get_max_threads();
  parallel::set_num_threads(threads);
  Fixture f(n);
  for (auto _ : state) {
    auto y = hetatt::het_attention_forward(f.x, f.masks, f.params, kHeads);
    benchmark::DoNotOptimize(y.data().data());
  }
  const auto entries = f.masks.t2t.entry_count() + f.masks.ts.entry_count() + f.masks.e2e.entry_count();
  state.counters["entries"] = static_cast<double>(entries);
  state.counters["threads"] = threads;
  parallel::set_num_threads(saved);
}

void BM_SparseForwardBackward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Fixture f(n);
  linalg::Matrix<float> dy(n, kDModel, 1.0f);
  for (auto _ : state) {
    hetatt::AttentionCache<float> cache;
    auto y = hetatt::het_attention_forward(f.x, f.masks, f.params, kHeads, &cache);
    auto g = hetatt::het_attention_backward(cache, f.params, dy);
    benchmark::DoNotOptimize(g.dx.data().data());
  }
}

void BM_DenseReference(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Fixture f(n);
  const std::array<std::vector<std::uint8_t>, hetatt::kNumPatterns> dense = {
      maskgen::densify(f.masks.t2t), maskgen::densify(f.masks.ts), maskgen::densify(f.masks.e2e)};
  for (auto _ : state) {
    auto y = hetatt::dense_reference_attention(f.x, dense, f.params, kHeads);
    benchmark::DoNotOptimize(y.data().data());
  }
}

BENCHMARK(BM_SparseForward)->ArgsProduct({{128, 256, 512, 1024, 2048}, {1, 0}})->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_SparseForwardBackward)->RangeMultiplier(2)->Range(128, 2048)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_DenseReference)->RangeMultiplier(2)->Range(64, 256)->Unit(benchmark::kMicrosecond);

}  // namespace

BENCHMARK_MAIN();

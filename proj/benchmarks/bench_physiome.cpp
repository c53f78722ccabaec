#include "physiome/config.hpp"
#include "physiome/evalkit.hpp"
#include "physiome/inference.hpp"
#include "physiome/neuronet.hpp"
#include "physiome/training.hpp"

#include <benchmark/benchmark.h>

#include <random>

using namespace physiome;
using ag::Matrix;
using ag::Tensor;

namespace {

Matrix noise(ag::Index r, ag::Index c, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n;
    Matrix m(r, c);
    for (ag::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
    return m;
}

NeuroNetConfig net_config() { return preset_config("synthetic").dp.net; }

struct Fixture {
    Dataset data;
    PhysioME model;
    TokenCache cache;

    Fixture() {
        SyntheticConfig sc;
        sc.n_samples = 64;
        data = generate_synthetic_dataset(sc);
        std::vector<NeuroNet> nets;
        for (int m = 0; m < 3; ++m) nets.emplace_back(net_config(), 10 + static_cast<std::uint64_t>(m));
        model = PhysioME(preset_config("synthetic").physiome, std::move(nets), 3);
        cache = build_token_cache(model, data, net_config().frames);
    }
};

Fixture& fixture() {
    static Fixture f;
    return f;
}

}  // namespace

static void BM_MatmulBackward(benchmark::State& state) {
    const auto n = static_cast<ag::Index>(state.range(0));
    const Matrix a = noise(n, n, 1), b = noise(n, n, 2);
    for (auto _ : state) {
        Tensor x(a, true), y(b, true);
        ag::sum_all(ag::matmul(x, y)).backward();
        benchmark::DoNotOptimize(x.grad().data());
    }
}
BENCHMARK(BM_MatmulBackward)->Arg(32)->Arg(64)->Arg(128);

static void BM_NtXent(benchmark::State& state) {
    const auto b = static_cast<ag::Index>(state.range(0));
    const Matrix z1 = noise(b, 32, 3), z2 = noise(b, 32, 4);
    for (auto _ : state) benchmark::DoNotOptimize(nt_xent(Tensor(z1), Tensor(z2), 0.1).item());
}
BENCHMARK(BM_NtXent)->Arg(32)->Arg(128);

static void BM_NeuroNetBatchLoss(benchmark::State& state) {
    const NeuroNetConfig cfg = net_config();
    NeuroNet net(cfg, 5);
    std::vector<Matrix> frames;
    for (int i = 0; i < 8; ++i) {
        frames.push_back(noise(static_cast<ag::Index>(cfg.token_count()), static_cast<ag::Index>(cfg.frame_length()),
                               20 + static_cast<std::uint64_t>(i)));
    }
    for (auto _ : state) {
        std::mt19937_64 rng(1);
        auto out = neuronet_batch_loss(net, frames, rng);
        out.total.backward();
        benchmark::DoNotOptimize(out.total.item());
    }
}
BENCHMARK(BM_NeuroNetBatchLoss)->Unit(benchmark::kMillisecond);

static void BM_PhysioMETrainStep(benchmark::State& state) {
    Fixture& f = fixture();
    PhysioMETrainer trainer(f.model, f.cache);
    for (auto _ : state) benchmark::DoNotOptimize(trainer.step().total);
}
BENCHMARK(BM_PhysioMETrainStep)->Unit(benchmark::kMillisecond);

static void BM_InferScenario(benchmark::State& state) {
    Fixture& f = fixture();
    const auto scenarios = all_scenarios(3);
    const ScenarioMask& s = scenarios[static_cast<std::size_t>(state.range(0))];
    const auto strategy = static_cast<RestorationStrategy>(state.range(1));
    std::vector<std::size_t> rows(16);
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
    for (auto _ : state) benchmark::DoNotOptimize(extract_features(f.model, f.cache, rows, s, strategy).data());
    state.SetLabel(s.to_string() + " " + to_string(strategy));
}
BENCHMARK(BM_InferScenario)
    ->Args({0, static_cast<int>(RestorationStrategy::kRestorationDecoder)})
    ->Args({4, static_cast<int>(RestorationStrategy::kRestorationDecoder)})
    ->Args({4, static_cast<int>(RestorationStrategy::kMaskedToken)})
    ->Unit(benchmark::kMillisecond);

static void BM_Auc(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    std::mt19937_64 rng(7);
    std::vector<double> s(n);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
        s[i] = std::uniform_real_distribution<double>()(rng);
        y[i] = static_cast<int>(i % 2);
    }
    for (auto _ : state) benchmark::DoNotOptimize(auc(s, y));
}
BENCHMARK(BM_Auc)->Arg(1000)->Arg(100000);
BENCHMARK_MAIN();

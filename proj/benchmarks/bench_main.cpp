#include "heatsim/depprocess.hpp"
#include "heatsim/nbe_net.hpp"
#include "heatsim/summaries.hpp"
#include "heatsim/synthetic.hpp"

#include <benchmark/benchmark.h>

#include <memory>

namespace {

using namespace heatsim;

struct DeskSetup {
    GridDomain domain;
    SyntheticSpec spec;
    std::unique_ptr<YearSimulator> sim;

    DeskSetup() {
        const SyntheticData sd = make_synthetic(spec, 17);
        domain = sd.domain;
        sim = std::make_unique<YearSimulator>(domain, spec.D, spec.dep);
    }
};

DeskSetup& desk() {
    static DeskSetup d;
    return d;
}

void BM_uniform_year(benchmark::State& state) {
    auto& d = desk();
    std::uint64_t year = 0;
    for (auto _ : state)
        benchmark::DoNotOptimize(d.sim->uniform_year(42, year++));
}
BENCHMARK(BM_uniform_year);

void BM_storm_cdf_eval(benchmark::State& state) {
    auto& d = desk();
    const StormCdf& cdf = d.sim->storm_cdf();
    double x = 1.0;
    for (auto _ : state) {
        benchmark::DoNotOptimize(cdf.at(x, 3, 7));
        x = x < 1e6 ? x * 1.7 : 1.0;
    }
}
BENCHMARK(BM_storm_cdf_eval);

void BM_summarize_season(benchmark::State& state) {
    auto& d = desk();
    UniformField U;
    U.n = d.domain.n();
    U.D = d.spec.D;
    U.T = 40;
    U.values.resize(static_cast<std::size_t>(U.n) * U.D * U.T);
    for (int t = 0; t < U.T; ++t) {
        const std::vector<double> u = d.sim->uniform_year(7, t);
        for (int s = 0; s < U.n; ++s)
            for (int day = 0; day < U.D; ++day)
                U.at(s, day, t) = u[static_cast<std::size_t>(s) * U.D + day];
    }
    const SummaryConfig cfg;
    for (auto _ : state)
        benchmark::DoNotOptimize(summarize(U, d.domain, cfg));
}
BENCHMARK(BM_summarize_season);

void BM_estimator_forward(benchmark::State& state) {
    const SummaryConfig cfg;
    const EstimatorNet net(BundleShape::from(cfg), PriorBox{}, 99);
    std::vector<double> flat(BundleShape::from(cfg).flat_len(), 0.1);
    for (auto _ : state)
        benchmark::DoNotOptimize(net.predict(flat));
}
BENCHMARK(BM_estimator_forward);

} // namespace

BENCHMARK_MAIN();

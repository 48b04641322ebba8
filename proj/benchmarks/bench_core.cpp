// Microbenchmarks for the hot loops: path simulation, likelihood filtering,
// strategy stepping, and the finite-difference sweep.

#include <benchmark/benchmark.h>

#include "hiddendrift/filters.hpp"
#include "hiddendrift/harness.hpp"
#include "hiddendrift/likelihood.hpp"
#include "hiddendrift/market.hpp"
#include "hiddendrift/pde.hpp"

using namespace hiddendrift;

namespace {

MarketSpec three_atom_market() {
  MarketSpec spec;
  spec.n_stocks = 1;
  spec.horizon = 1.0;
  spec.vol = VolSpec::constant_vol(0.2);
  DiscretePrior prior;
  prior.atoms = {DriftAtom::constant(-0.1), DriftAtom::constant(0.0), DriftAtom::constant(0.2)};
  prior.probs = {1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0};
  spec.prior = prior;
  return spec;
}

void bm_simulate_path(benchmark::State& state) {
  const MarketSpec spec = three_atom_market();
  const double dt = 1.0 / static_cast<double>(state.range(0));
  std::uint64_t p = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(simulate_one_path(spec, dt, 1, p++, Measure::Pstar));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(bm_simulate_path)->Arg(256)->Arg(1024);

void bm_mixture_filter(benchmark::State& state) {
  const MarketSpec spec = three_atom_market();
  const double dt = 1.0 / static_cast<double>(state.range(0));
  const SinglePath path = simulate_one_path(spec, dt, 1, 0, Measure::Pstar);
  const std::vector<Mat> q = q_along_path(spec, path, dt);
  const DiscretePrior& prior = std::get<DiscretePrior>(spec.prior);
  for (auto _ : state) {
    benchmark::DoNotOptimize(mixture_estimate_path(make_likelihood_state(prior), q, path.excess, dt));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(bm_mixture_filter)->Arg(256)->Arg(1024);

void bm_kalman_filter(benchmark::State& state) {
  MarketSpec spec = three_atom_market();
  spec.prior = GaussianStaticPrior{Vec::Constant(1, 0.1), Mat::Constant(1, 1, 0.0025)};
  const double dt = 1.0 / static_cast<double>(state.range(0));
  const SinglePath path = simulate_one_path(spec, dt, 1, 0, Measure::Pstar);
  const OrnsteinUhlenbeckPrior ou =
      OrnsteinUhlenbeckPrior::static_gaussian(Vec::Constant(1, 0.1), Mat::Constant(1, 1, 0.0025));
  const auto sigma_t = [](double) { return Mat::Constant(1, 1, 0.2); };
  const auto q_t = [](double) { return Mat::Constant(1, 1, 25.0); };
  for (auto _ : state) {
    benchmark::DoNotOptimize(kalman_estimate_path(ou, sigma_t, q_t, path.excess, dt));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(bm_kalman_filter)->Arg(256)->Arg(1024);

void bm_myopic_strategy(benchmark::State& state) {
  const MarketSpec spec = three_atom_market();
  const double dt = 1.0 / 1024.0;
  const SinglePath path = simulate_one_path(spec, dt, 1, 0, Measure::P);
  const std::vector<Mat> q = q_along_path(spec, path, dt);
  const Mat est = mixture_estimate_path(make_likelihood_state(std::get<DiscretePrior>(spec.prior)), q,
                                        path.excess, dt);
  for (auto _ : state) {
    benchmark::DoNotOptimize(run_myopic_strategy(spec, path, dt, est, 0.0, 1.0));
  }
  state.SetItemsProcessed(state.iterations() * 1024);
}
BENCHMARK(bm_myopic_strategy);

void bm_fd_sweep(benchmark::State& state) {
  MarketSpec spec = three_atom_market();
  DiscretePrior prior;
  prior.atoms = {DriftAtom::constant(0.0), DriftAtom::constant(0.1)};
  prior.probs = {0.5, 0.5};
  spec.prior = prior;
  const MarkovEmbedding emb = build_embedding(spec, EmbeddingVariant::FinitePaths);
  FdGrid grid;
  grid.lo = Vec::Constant(2, 0.2);
  grid.hi = Vec::Constant(2, 3.0);
  const int n = static_cast<int>(state.range(0));
  grid.shape = {n, n};
  const auto terminal = [](const Vec& y) { return 0.5 * (y[0] + y[1]); };
  for (auto _ : state) {
    benchmark::DoNotOptimize(solve_cauchy_fd(emb, terminal, grid, 64));
  }
  state.SetItemsProcessed(state.iterations() * n * n * 64);
}
BENCHMARK(bm_fd_sweep)->Arg(101)->Arg(201)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();

#pragma once

#include <vector>

#include "hiddendrift/harness.hpp"
#include "hiddendrift/market.hpp"

namespace hdtest {

using namespace hiddendrift;

/// Single-stock market with constant volatility and a discrete drift prior.
inline MarketSpec discrete_market(const std::vector<double>& atoms, const std::vector<double>& probs,
                                  double sigma = 0.2, double horizon = 1.0) {
  MarketSpec spec;
  spec.n_stocks = 1;
  spec.horizon = horizon;
  spec.vol = VolSpec::constant_vol(sigma);
  DiscretePrior prior;
  for (double a : atoms) prior.atoms.push_back(DriftAtom::constant(a));
  prior.probs = probs;
  spec.prior = prior;
  return spec;
}

inline MarketSpec gaussian_market(double mean, double sd, double sigma = 0.2, double horizon = 1.0) {
  MarketSpec spec;
  spec.n_stocks = 1;
  spec.horizon = horizon;
  spec.vol = VolSpec::constant_vol(sigma);
  spec.prior = GaussianStaticPrior{Vec::Constant(1, mean), Mat::Constant(1, 1, sd * sd)};
  return spec;
}

inline MarkovChainPrior two_state_chain(double theta0, double theta1, double rate01, double rate10,
                                        double p0 = 0.5) {
  MarkovChainPrior chain;
  chain.values = {theta0, theta1};
  Mat l(2, 2);
  l << 0.0, rate01, rate10, 0.0;
  chain.intensities = [l](double) { return l; };
  chain.initial_probs = Vec(2);
  chain.initial_probs << p0, 1.0 - p0;
  chain.drift_map = MarkovChainPrior::identity_drift();
  return chain;
}

/// Discretizes a scalar Gaussian prior onto a uniform atom grid (+- width sds),
/// the brute-force oracle for the exact Gaussian/Kalman recursions.
inline DiscretePrior grid_gaussian_prior(double mean, double sd, int atoms, double width = 6.0) {
  DiscretePrior prior;
  std::vector<double> w(static_cast<std::size_t>(atoms));
  double total = 0.0;
  for (int i = 0; i < atoms; ++i) {
    const double x = mean + sd * (-width + 2.0 * width * i / (atoms - 1));
    const double u = (x - mean) / sd;
    prior.atoms.push_back(DriftAtom::constant(x));
    w[static_cast<std::size_t>(i)] = std::exp(-0.5 * u * u);
    total += w[static_cast<std::size_t>(i)];
  }
  for (double& v : w) v /= total;
  prior.probs = w;
  return prior;
}

inline Scenario make_scenario(const MarketSpec& market, double dt, std::size_t n_paths, std::uint64_t seed,
                              UtilitySpec utility = LogUtility{0.0}, FilterChoice filter = FilterChoice::Bayes) {
  Scenario s;
  s.market = market;
  s.utility = utility;
  s.filter = filter;
  s.dt = dt;
  s.n_paths = n_paths;
  s.seed = seed;
  return s;
}

}  // namespace hdtest

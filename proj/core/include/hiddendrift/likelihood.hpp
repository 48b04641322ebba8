#pragma once

#include <vector>

#include "hiddendrift/common.hpp"
#include "hiddendrift/prior.hpp"

namespace hiddendrift {

/// Per-parameter likelihood processes z(theta, t), kept in log-domain.
struct LikelihoodState {
  std::vector<DriftAtom> support;  // parameter atoms (or quadrature nodes)
  Vec weights;                     // prior masses / quadrature weights
  Vec log_z;                       // running log z(theta_i, t), 0 at t = 0
  double t = 0.0;

  std::size_t size() const { return support.size(); }
};

LikelihoodState make_likelihood_state(const DiscretePrior& prior);

/// Gauss-Hermite discretization of a static Gaussian prior (generic oracle
/// for cross-validating the exact Gaussian recursion).
LikelihoodState make_likelihood_state_quadrature(const GaussianStaticPrior& prior, int nodes_per_dim = 32);

/// One increment of log z: theta^T Q dRe - 1/2 theta^T Q theta dt.
/// Throws on non-positive-definite Q.
double log_z_increment(const Vec& theta_drift, const Mat& q, const Vec& d_excess, double dt);

/// Advances every atom of the state by one observation increment.
void likelihood_step(LikelihoodState& state, const Mat& q, const Vec& d_excess, double dt);

/// Zbar(t) = sum_i w_i exp(log z_i), via log-sum-exp.
double mixture_density(const LikelihoodState& state);
double log_mixture_density(const LikelihoodState& state);

/// Posterior masses w_i z_i / Zbar.
Vec posterior_weights(const LikelihoodState& state);

/// Exponential representation of Zbar along a path:
/// Zbar(t) = exp( int ahat^T Q dRe - 1/2 int ahat^T Q ahat ds ), left-point sums.
/// ahat_path and excess_path are (K+1) x n on the same grid; q_path has K+1 entries.
Vec zbar_exponential(const Mat& ahat_path, const std::vector<Mat>& q_path, const Mat& excess_path, double dt);

/// Gauss-Hermite nodes and weights for integration against the standard
/// normal density (Golub-Welsch on the Hermite Jacobi matrix).
void gauss_hermite_normal(int n, Vec& nodes, Vec& weights);

}  // namespace hiddendrift

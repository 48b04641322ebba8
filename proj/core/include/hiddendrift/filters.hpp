#pragma once

#include <functional>
#include <vector>

#include "hiddendrift/common.hpp"
#include "hiddendrift/likelihood.hpp"
#include "hiddendrift/prior.hpp"

namespace hiddendrift {

/// Posterior-mean drift estimate from a likelihood state:
/// ahat(t) = sum_i w_i z_i theta_i(t) / sum_i w_i z_i.
Vec mixture_posterior_mean(const LikelihoodState& state);

/// Gaussian conditional law of the drift given observations.
struct GaussianFilterState {
  Vec mean;
  Mat cov;
  double t = 0.0;
};

GaussianFilterState make_gaussian_filter_state(const OrnsteinUhlenbeckPrior& ou);

/// One Kalman-Bucy update: Euler for the mean (gain (b sigma^T + gamma) Q),
/// RK4 for the Riccati covariance over the observation step.
/// Throws when the covariance loses positive semidefiniteness beyond psd_tol.
GaussianFilterState kalman_step(const GaussianFilterState& state, const OrnsteinUhlenbeckPrior& ou,
                                const std::function<Mat(double)>& sigma_of_t, const std::function<Mat(double)>& q_of_t,
                                const Vec& d_excess, double dt, double psd_tol = 1e-8);

/// Integrates d gamma/dt = -(b s^T + g) Q (b s^T + g)^T - alpha g - g alpha^T + beta beta^T
/// with RK4 and per-step symmetrization. Returns gamma at t_k, k = 0..steps.
std::vector<Mat> riccati_integrate(const Mat& gamma0, const OrnsteinUhlenbeckPrior& ou,
                                   const std::function<Mat(double)>& sigma_of_t,
                                   const std::function<Mat(double)>& q_of_t, double dt, int steps,
                                   double blowup_bound = 1e8);

/// One Wonham update for the chain-state posterior (single stock).
/// The transition part integrates the forward equation with RK4; the
/// innovation part is an Euler increment; the result is clamped to [0,1]
/// coordinatewise and renormalized to the simplex.
Vec wonham_step(const Vec& probs, const MarkovChainPrior& chain, double t, double excess_value, double d_excess,
                double dt, double sigma);

/// ahat(t) = sum_i A(t, theta_i, Re) y_i for a simplex state.
double wonham_drift_estimate(const Vec& probs, const MarkovChainPrior& chain, double t, double excess_value);

/// Tilted prior (sums of `order` parameter draws, weighted by the exponential
/// cross terms) and its normalizer G, used by the power-utility solution.
struct TiltedPrior {
  std::vector<DriftAtom> support;  // candidate summed drifts
  Vec weights;                     // tilted masses (quadrature weights for Gaussian priors)
  double normalizer = 1.0;         // G
  int order = 2;                   // l
  bool gaussian = false;           // closed-form Gaussian tilt available
  Vec sum_mean;                    // law of the coordinate sum, Gaussian case
  Mat sum_cov;
};

/// Builds the tilted prior from a Discrete or static Gaussian prior.
/// q_grid holds Q(t_k), k = 0..K (left-point integration over K steps of dt).
/// Throws std::runtime_error("G infinite: ...") when the Gaussian tilt
/// normalizer diverges, and std::invalid_argument for unsupported priors.
TiltedPrior build_tilted_prior(const PriorSpec& prior, const std::vector<Mat>& q_grid, double dt, int order,
                               int quad_nodes = 32);

/// Posterior-mean path ahat(t_k), k = 0..K, from stepping a likelihood state
/// along an observed excess-return path ((K+1) x n, same grid as q_path).
Mat mixture_estimate_path(LikelihoodState state, const std::vector<Mat>& q_path, const Mat& excess, double dt);

/// Conditional-mean path from the Gaussian filter along an observed path.
Mat kalman_estimate_path(const OrnsteinUhlenbeckPrior& ou, const std::function<Mat(double)>& sigma_of_t,
                         const std::function<Mat(double)>& q_of_t, const Mat& excess, double dt);

/// Chain-state posterior path ((K+1) x d) along an observed single-stock path.
Mat wonham_probability_path(const MarkovChainPrior& chain, const Mat& excess, double dt, double sigma);

/// Likelihood state over the tilted support, for the power equivalence filter.
LikelihoodState make_tilted_likelihood_state(const TiltedPrior& tilted);

/// Power-utility equivalence filter: l^{-1} * posterior mean under the tilt.
Vec power_equivalence_filter(const LikelihoodState& tilted_state, int order);

}  // namespace hiddendrift

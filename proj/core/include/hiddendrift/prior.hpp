#pragma once

#include <functional>
#include <variant>
#include <vector>

#include "hiddendrift/common.hpp"

namespace hiddendrift {

/// A drift atom: one candidate excess-appreciation path theta_i(t).
struct DriftAtom {
  std::function<Vec(double t)> value;

  static DriftAtom constant(const Vec& v) {
    return DriftAtom{[v](double) { return v; }};
  }
  static DriftAtom constant(double v) { return constant(Vec::Constant(1, v)); }
};

/// Finite-support prior: drift is one of the atoms, drawn once at t = 0.
struct DiscretePrior {
  std::vector<DriftAtom> atoms;
  std::vector<double> probs;
};

/// Static Gaussian prior: drift is a constant vector drawn from N(mean, cov).
struct GaussianStaticPrior {
  Vec mean;
  Mat cov;
};

/// Drift follows a mean-reverting linear diffusion driven by the observed
/// excess return and an independent Wiener process:
///   da = alpha(t) (delta(t) - a) dt + b(t) dRe + beta(t) dW,   a(0) ~ N(mean0, cov0).
struct OrnsteinUhlenbeckPrior {
  std::function<Mat(double)> alpha;
  std::function<Mat(double)> beta;
  std::function<Mat(double)> b;
  std::function<Vec(double)> delta;
  Vec mean0;
  Mat cov0;
  double beta_inverse_bound = 1e12;  // required bound on |beta(t)^-1| when beta != 0

  static OrnsteinUhlenbeckPrior static_gaussian(const Vec& mean0, const Mat& cov0);
};

/// Drift driven by a finite-state Markov chain (single stock).
/// l_ij(t) is the instantaneous flow rate from state i to state j;
/// the drift map gives a(t) = A(t, theta_state, Re(t)).
struct MarkovChainPrior {
  std::vector<double> values;                                   // theta_i
  std::function<Mat(double)> intensities;                       // l_ij(t), d x d
  Vec initial_probs;                                            // ybar_i
  std::function<double(double t, double theta, double excess)> drift_map;

  static std::function<double(double, double, double)> identity_drift() {
    return [](double, double theta, double) { return theta; };
  }
};

using PriorSpec = std::variant<DiscretePrior, GaussianStaticPrior, OrnsteinUhlenbeckPrior, MarkovChainPrior>;

/// Validates the prior invariants (probability normalization, PSD covariances,
/// invertibility bounds). Throws std::invalid_argument on violation.
void validate_prior(const PriorSpec& prior, int n_stocks);

}  // namespace hiddendrift

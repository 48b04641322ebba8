#include <doctest.h>

#include <cmath>
#include <unsupported/Eigen/MatrixFunctions>

#include "hiddendrift/filters.hpp"
#include "hiddendrift/market.hpp"
#include "test_helpers.hpp"

using namespace hiddendrift;
using hdtest::discrete_market;
using hdtest::two_state_chain;

namespace {

std::function<Mat(double)> const_mat(double v) {
  return [v](double) { return Mat::Constant(1, 1, v); };
}

}  // namespace

TEST_CASE("posterior mean at t = 0 is the prior mean") {
  DiscretePrior prior;
  prior.atoms = {DriftAtom::constant(-0.1), DriftAtom::constant(0.0), DriftAtom::constant(0.2)};
  prior.probs = {0.25, 0.5, 0.25};
  const LikelihoodState state = make_likelihood_state(prior);
  CHECK(mixture_posterior_mean(state)[0] == doctest::Approx(0.025).epsilon(1e-14));
}

TEST_CASE("symmetric two-atom prior: negating the path negates the estimate") {
  const MarketSpec spec = discrete_market({0.15, -0.15}, {0.5, 0.5});
  const double dt = 1.0 / 256.0;
  const SinglePath path = simulate_one_path(spec, dt, 8, 2, Measure::P);
  const std::vector<Mat> q = q_along_path(spec, path, dt);
  const DiscretePrior& prior = std::get<DiscretePrior>(spec.prior);
  const Mat est = mixture_estimate_path(make_likelihood_state(prior), q, path.excess, dt);
  const Mat est_neg = mixture_estimate_path(make_likelihood_state(prior), q, Mat(-path.excess), dt);
  CHECK((est + est_neg).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("mixture filter matches a per-increment Gaussian-likelihood oracle to 1e-10") {
  const MarketSpec spec = discrete_market({0.0, 0.2}, {0.5, 0.5});
  const double dt = 1.0 / 256.0;
  const SinglePath path = simulate_one_path(spec, dt, 12, 5, Measure::P);
  const std::vector<Mat> q = q_along_path(spec, path, dt);
  const Mat est = mixture_estimate_path(make_likelihood_state(std::get<DiscretePrior>(spec.prior)), q,
                                        path.excess, dt);

  // Oracle: unnormalized posterior from the exact Gaussian density of each
  // increment, N(theta_i dt, sigma^2 dt), in log domain.
  const double var = 0.04 * dt;
  double lw0 = std::log(0.5), lw1 = std::log(0.5);
  for (int k = 0; k <= path.n_steps(); ++k) {
    const double m = std::max(lw0, lw1);
    const double w0 = std::exp(lw0 - m), w1 = std::exp(lw1 - m);
    const double oracle = (w0 * 0.0 + w1 * 0.2) / (w0 + w1);
    CHECK(std::abs(est(k, 0) - oracle) < 1e-10);
    if (k < path.n_steps()) {
      const double d = path.excess(k + 1, 0) - path.excess(k, 0);
      lw0 += -(d - 0.0 * dt) * (d - 0.0 * dt) / (2.0 * var);
      lw1 += -(d - 0.2 * dt) * (d - 0.2 * dt) / (2.0 * var);
    }
  }
}

TEST_CASE("kalman with a certain prior follows the deterministic mean ODE") {
  OrnsteinUhlenbeckPrior ou;
  ou.alpha = const_mat(2.0);
  ou.beta = const_mat(0.0);
  ou.b = const_mat(0.0);
  ou.delta = [](double) { return Vec::Constant(1, 0.3); };
  ou.mean0 = Vec::Constant(1, 0.1);
  ou.cov0 = Mat::Zero(1, 1);
  const double dt = 1.0 / 512.0;
  GaussianFilterState state = make_gaussian_filter_state(ou);
  double ref = 0.1;
  for (int k = 0; k < 512; ++k) {
    state = kalman_step(state, ou, const_mat(0.2), const_mat(25.0), Vec::Constant(1, 0.01), dt);
    ref += 2.0 * (0.3 - ref) * dt;  // gain is zero, so the observation is ignored
    CHECK(state.mean[0] == doctest::Approx(ref).epsilon(1e-12));
    CHECK(std::abs(state.cov(0, 0)) < 1e-12);
  }
}

TEST_CASE("scalar static Riccati matches the closed form v/(1+vqt) to 1e-8") {
  const double v = 0.0025, q = 25.0, dt = 1e-3;
  const OrnsteinUhlenbeckPrior ou =
      OrnsteinUhlenbeckPrior::static_gaussian(Vec::Constant(1, 0.1), Mat::Constant(1, 1, v));
  const std::vector<Mat> gam = riccati_integrate(Mat::Constant(1, 1, v), ou, const_mat(0.2), const_mat(q), dt, 1000);
  for (int k = 0; k <= 1000; ++k) {
    const double t = k * dt;
    CHECK(std::abs(gam[static_cast<std::size_t>(k)](0, 0) - v / (1.0 + v * q * t)) < 1e-8);
  }
}

TEST_CASE("riccati trivial and fixed-point cases") {
  SUBCASE("zero initial condition and zero coefficients stay at zero") {
    OrnsteinUhlenbeckPrior ou = OrnsteinUhlenbeckPrior::static_gaussian(Vec::Zero(1), Mat::Zero(1, 1));
    const std::vector<Mat> gam = riccati_integrate(Mat::Zero(1, 1), ou, const_mat(0.2), const_mat(25.0), 0.01, 100);
    for (const Mat& g : gam) CHECK(g(0, 0) == 0.0);
  }
  SUBCASE("long-run limit solves the algebraic Riccati equation") {
    OrnsteinUhlenbeckPrior ou;
    ou.alpha = const_mat(1.0);
    ou.beta = const_mat(0.5);
    ou.b = const_mat(0.0);
    ou.delta = [](double) { return Vec::Zero(1); };
    ou.mean0 = Vec::Zero(1);
    ou.cov0 = Mat::Constant(1, 1, 0.04);
    const double dt = 1e-3, q = 25.0;
    const std::vector<Mat> gam = riccati_integrate(ou.cov0, ou, const_mat(0.2), const_mat(q), dt, 50000);
    const double g = gam.back()(0, 0);
    const double residual = -q * g * g - 2.0 * g + 0.25;
    CHECK(std::abs(residual) < 1e-6);
  }
  SUBCASE("exceeding the norm bound is reported as a blow-up") {
    OrnsteinUhlenbeckPrior ou;
    ou.alpha = const_mat(-50.0);  // unstable drift pushes gamma well above its start
    ou.beta = const_mat(10.0);
    ou.b = const_mat(0.0);
    ou.delta = [](double) { return Vec::Zero(1); };
    ou.mean0 = Vec::Zero(1);
    ou.cov0 = Mat::Constant(1, 1, 1.0);
    CHECK_THROWS_WITH_AS(
        (void)riccati_integrate(ou.cov0, ou, const_mat(0.2), const_mat(25.0), 0.1, 200, 2.0),
        doctest::Contains("blew up"), std::runtime_error);
  }
}

TEST_CASE("kalman agrees with a 201-atom grid-Bayes oracle to 1e-3") {
  const MarketSpec spec = hdtest::gaussian_market(0.1, 0.05);
  const double dt = 1.0 / 1024.0;
  const OrnsteinUhlenbeckPrior ou =
      OrnsteinUhlenbeckPrior::static_gaussian(Vec::Constant(1, 0.1), Mat::Constant(1, 1, 0.0025));
  const DiscretePrior grid = hdtest::grid_gaussian_prior(0.1, 0.05, 201);
  for (std::size_t p = 0; p < 5; ++p) {
    const SinglePath path = simulate_one_path(spec, dt, 71, p, Measure::P);
    const std::vector<Mat> q = q_along_path(spec, path, dt);
    const Mat kal = kalman_estimate_path(ou, const_mat(0.2), const_mat(25.0), path.excess, dt);
    const Mat bayes = mixture_estimate_path(make_likelihood_state(grid), q, path.excess, dt);
    CHECK((kal - bayes).cwiseAbs().maxCoeff() < 1e-3);
  }
}

TEST_CASE("wonham: uninformative drift reduces to the forward equation") {
  MarkovChainPrior chain = two_state_chain(0.1, 0.1, 0.8, 0.3, 0.9);
  const double dt = 1e-3;
  const MarketSpec base = discrete_market({0.1}, {1.0});
  const SinglePath path = simulate_one_path(base, dt, 5, 0, Measure::P);
  const Mat probs = wonham_probability_path(chain, path.excess, dt, 0.2);

  Mat gen(2, 2);  // generator L with rows summing to zero
  gen << -0.8, 0.8, 0.3, -0.3;
  const Mat expm = (gen.transpose() * 1.0).exp();
  Vec ref = expm * chain.initial_probs;
  CHECK((probs.row(path.n_steps()).transpose() - ref).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("wonham: frozen chain matches the two-atom mixture filter to O(dt)") {
  const MarkovChainPrior chain = two_state_chain(0.0, 0.2, 0.0, 0.0);
  MarketSpec spec = discrete_market({0.0, 0.2}, {0.5, 0.5});
  const double dt = 1.0 / 1024.0;
  for (std::size_t p = 0; p < 5; ++p) {
    const SinglePath path = simulate_one_path(spec, dt, 19, p, Measure::P);
    const std::vector<Mat> q = q_along_path(spec, path, dt);
    const Mat probs = wonham_probability_path(chain, path.excess, dt, 0.2);
    const Mat bayes = mixture_estimate_path(make_likelihood_state(std::get<DiscretePrior>(spec.prior)), q,
                                            path.excess, dt);
    for (int k = 0; k <= path.n_steps(); ++k) {
      const double wonham_est = 0.0 * probs(k, 0) + 0.2 * probs(k, 1);
      CHECK(std::abs(wonham_est - bayes(k, 0)) < 0.02);  // O(dt) between the two discretizations
    }
  }
}

TEST_CASE("wonham: certainty is absorbing and the simplex is preserved") {
  MarkovChainPrior chain = two_state_chain(0.0, 0.2, 0.0, 0.0, 1.0);
  Vec probs = chain.initial_probs;
  const MarketSpec base = discrete_market({0.1}, {1.0});
  const SinglePath path = simulate_one_path(base, 1.0 / 256.0, 2, 0, Measure::P);
  for (int k = 0; k < path.n_steps(); ++k) {
    probs = wonham_step(probs, chain, k / 256.0, path.excess(k, 0), path.excess(k + 1, 0) - path.excess(k, 0),
                        1.0 / 256.0, 0.2);
    CHECK(probs[0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK((probs.array() >= 0.0).all());
    CHECK(probs.sum() == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("tilted prior, discrete cases") {
  const double dt = 1.0 / 256.0;
  const int steps = 256;
  const std::vector<Mat> q_grid(static_cast<std::size_t>(steps) + 1, Mat::Constant(1, 1, 25.0));

  SUBCASE("point mass: support {2 theta0}, G = exp(int theta^T Q theta dt)") {
    DiscretePrior prior;
    prior.atoms = {DriftAtom::constant(0.1)};
    prior.probs = {1.0};
    const TiltedPrior tilted = build_tilted_prior(prior, q_grid, dt, 2);
    CHECK(tilted.support.size() == 1);
    CHECK(tilted.support[0].value(0.0)[0] == doctest::Approx(0.2).epsilon(1e-14));
    CHECK(tilted.normalizer == doctest::Approx(std::exp(0.25)).epsilon(1e-12));
  }
  SUBCASE("Q = 0: no tilt, G = 1, l-fold convolution weights") {
    const std::vector<Mat> q_zero(static_cast<std::size_t>(steps) + 1, Mat::Zero(1, 1));
    DiscretePrior prior;
    prior.atoms = {DriftAtom::constant(0.0), DriftAtom::constant(0.2)};
    prior.probs = {0.3, 0.7};
    const TiltedPrior tilted = build_tilted_prior(prior, q_zero, dt, 2);
    CHECK(tilted.normalizer == doctest::Approx(1.0).epsilon(1e-14));
    double w_mixed = 0.0;
    for (std::size_t i = 0; i < tilted.support.size(); ++i) {
      const double s = tilted.support[i].value(0.0)[0];
      if (std::abs(s - 0.2) < 1e-12) w_mixed += tilted.weights[static_cast<Eigen::Index>(i)];
    }
    CHECK(w_mixed == doctest::Approx(2.0 * 0.3 * 0.7).epsilon(1e-12));
  }
}

TEST_CASE("gaussian tilt matches a dense 2-D Gauss-Hermite oracle to 1e-6 relative") {
  // A N(0.1, 0.3^2) prior with q = 25, T = 1 violates the finiteness
  // condition (the tilt precision matrix is singular), so the closed form is
  // exercised on N(0.1, 0.1^2) and the divergent case must throw.
  const double dt = 1.0 / 256.0;
  const std::vector<Mat> q_grid(257, Mat::Constant(1, 1, 25.0));
  const double c = 25.0 * 1.0;  // int q dt

  const GaussianStaticPrior prior{Vec::Constant(1, 0.1), Mat::Constant(1, 1, 0.01)};
  const TiltedPrior tilted = build_tilted_prior(prior, q_grid, dt, 2);

  Vec nodes, weights;
  gauss_hermite_normal(64, nodes, weights);
  double g = 0.0, mean_sum = 0.0;
  for (Eigen::Index i = 0; i < 64; ++i) {
    const double x1 = 0.1 + 0.1 * nodes[i];
    for (Eigen::Index j = 0; j < 64; ++j) {
      const double x2 = 0.1 + 0.1 * nodes[j];
      const double w = weights[i] * weights[j] * std::exp(c * x1 * x2);
      g += w;
      mean_sum += w * (x1 + x2);
    }
  }
  mean_sum /= g;
  CHECK(std::abs(tilted.normalizer - g) / g < 1e-6);
  CHECK(std::abs(tilted.sum_mean[0] - mean_sum) < 1e-6);

  const GaussianStaticPrior wide{Vec::Constant(1, 0.1), Mat::Constant(1, 1, 0.09)};
  CHECK_THROWS_WITH_AS((void)build_tilted_prior(wide, q_grid, dt, 2), doctest::Contains("G infinite"),
                       std::runtime_error);
}

TEST_CASE("discrete enumeration of a finely gridded Gaussian recovers the closed-form G") {
  const double dt = 1.0 / 64.0;
  const std::vector<Mat> q_grid(65, Mat::Constant(1, 1, 25.0));
  const GaussianStaticPrior prior{Vec::Constant(1, 0.1), Mat::Constant(1, 1, 0.01)};
  const TiltedPrior exact = build_tilted_prior(prior, q_grid, dt, 2);
  const DiscretePrior grid = hdtest::grid_gaussian_prior(0.1, 0.1, 201, 8.0);
  const TiltedPrior enumerated = build_tilted_prior(PriorSpec{grid}, q_grid, dt, 2);
  CHECK(std::abs(enumerated.normalizer - exact.normalizer) < 1e-3);
}

TEST_CASE("power equivalence filter") {
  const double dt = 1.0 / 256.0;
  const std::vector<Mat> q_grid(257, Mat::Constant(1, 1, 25.0));

  SUBCASE("point mass recovers the complete-information drift") {
    DiscretePrior prior;
    prior.atoms = {DriftAtom::constant(0.1)};
    prior.probs = {1.0};
    const TiltedPrior tilted = build_tilted_prior(prior, q_grid, dt, 2);
    const LikelihoodState state = make_tilted_likelihood_state(tilted);
    CHECK(power_equivalence_filter(state, 2)[0] == doctest::Approx(0.1).epsilon(1e-14));
  }
  SUBCASE("t = 0 value is the tilted mean over l") {
    DiscretePrior prior;
    prior.atoms = {DriftAtom::constant(0.0), DriftAtom::constant(0.2)};
    prior.probs = {0.5, 0.5};
    const TiltedPrior tilted = build_tilted_prior(prior, q_grid, dt, 2);
    const LikelihoodState state = make_tilted_likelihood_state(tilted);
    double tilted_mean = 0.0;
    for (std::size_t i = 0; i < tilted.support.size(); ++i) {
      tilted_mean += tilted.weights[static_cast<Eigen::Index>(i)] * tilted.support[i].value(0.0)[0];
    }
    CHECK(power_equivalence_filter(state, 2)[0] == doctest::Approx(0.5 * tilted_mean).epsilon(1e-12));
  }
  SUBCASE("informative prior: tilted and plain posterior means differ along a path") {
    MarketSpec spec = discrete_market({0.0, 0.2}, {0.5, 0.5});
    const SinglePath path = simulate_one_path(spec, dt, 3, 1, Measure::P);
    const std::vector<Mat> q = q_along_path(spec, path, dt);
    const TiltedPrior tilted = build_tilted_prior(spec.prior, q, dt, 2);
    const Mat plain = mixture_estimate_path(make_likelihood_state(std::get<DiscretePrior>(spec.prior)), q,
                                            path.excess, dt);
    const Mat tilt_est = mixture_estimate_path(make_tilted_likelihood_state(tilted), q, path.excess, dt) / 2.0;
    const int mid = path.n_steps() / 2;
    CHECK(std::abs(plain(mid, 0) - tilt_est(mid, 0)) > 1e-3);
  }
}

TEST_CASE("unsupported tilted priors are rejected") {
  const std::vector<Mat> q_grid(17, Mat::Constant(1, 1, 25.0));
  const OrnsteinUhlenbeckPrior ou = OrnsteinUhlenbeckPrior::static_gaussian(Vec::Zero(1), Mat::Constant(1, 1, 0.01));
  CHECK_THROWS_AS((void)build_tilted_prior(PriorSpec{ou}, q_grid, 1.0 / 16.0, 2), std::invalid_argument);
  DiscretePrior prior;
  prior.atoms = {DriftAtom::constant(0.1)};
  prior.probs = {1.0};
  CHECK_THROWS_AS((void)build_tilted_prior(PriorSpec{prior}, q_grid, 1.0 / 16.0, 1), std::invalid_argument);
}

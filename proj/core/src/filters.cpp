#include "hiddendrift/filters.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

namespace hiddendrift {

Vec mixture_posterior_mean(const LikelihoodState& state) {
  const Vec w = posterior_weights(state);
  Vec mean = Vec::Zero(state.support.front().value(state.t).size());
  for (std::size_t i = 0; i < state.support.size(); ++i) {
    if (w[static_cast<Eigen::Index>(i)] > 0.0) {
      mean += w[static_cast<Eigen::Index>(i)] * state.support[i].value(state.t);
    }
  }
  return mean;
}

GaussianFilterState make_gaussian_filter_state(const OrnsteinUhlenbeckPrior& ou) {
  return {ou.mean0, ou.cov0, 0.0};
}

namespace {

Mat riccati_rhs(const Mat& gamma, double t, const OrnsteinUhlenbeckPrior& ou,
                const std::function<Mat(double)>& sigma_of_t, const std::function<Mat(double)>& q_of_t) {
  const Mat gain = ou.b(t) * sigma_of_t(t).transpose() + gamma;
  const Mat alpha = ou.alpha(t);
  const Mat beta = ou.beta(t);
  return (-(gain * q_of_t(t) * gain.transpose()) - alpha * gamma - gamma * alpha.transpose() +
          beta * beta.transpose())
      .eval();
}

Mat riccati_rk4_step(const Mat& gamma, double t, double dt, const OrnsteinUhlenbeckPrior& ou,
                     const std::function<Mat(double)>& sigma_of_t, const std::function<Mat(double)>& q_of_t) {
  const Mat k1 = riccati_rhs(gamma, t, ou, sigma_of_t, q_of_t);
  const Mat k2 = riccati_rhs(gamma + 0.5 * dt * k1, t + 0.5 * dt, ou, sigma_of_t, q_of_t);
  const Mat k3 = riccati_rhs(gamma + 0.5 * dt * k2, t + 0.5 * dt, ou, sigma_of_t, q_of_t);
  const Mat k4 = riccati_rhs(gamma + dt * k3, t + dt, ou, sigma_of_t, q_of_t);
  Mat next = gamma + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  symmetrize(next);
  return next;
}

}  // namespace

std::vector<Mat> riccati_integrate(const Mat& gamma0, const OrnsteinUhlenbeckPrior& ou,
                                   const std::function<Mat(double)>& sigma_of_t,
                                   const std::function<Mat(double)>& q_of_t, double dt, int steps,
                                   double blowup_bound) {
  std::vector<Mat> out;
  out.reserve(static_cast<std::size_t>(steps) + 1);
  Mat gamma = gamma0;
  symmetrize(gamma);
  out.push_back(gamma);
  for (int k = 0; k < steps; ++k) {
    gamma = riccati_rk4_step(gamma, k * dt, dt, ou, sigma_of_t, q_of_t);
    if (!gamma.allFinite() || gamma.norm() > blowup_bound) {
      throw std::runtime_error("riccati_integrate: solution blew up at step " + std::to_string(k + 1));
    }
    out.push_back(gamma);
  }
  return out;
}

GaussianFilterState kalman_step(const GaussianFilterState& state, const OrnsteinUhlenbeckPrior& ou,
                                const std::function<Mat(double)>& sigma_of_t, const std::function<Mat(double)>& q_of_t,
                                const Vec& d_excess, double dt, double psd_tol) {
  const double t = state.t;
  const Mat gain = (ou.b(t) * sigma_of_t(t).transpose() + state.cov) * q_of_t(t);
  GaussianFilterState next;
  next.mean = state.mean + ou.alpha(t) * (ou.delta(t) - state.mean) * dt + gain * (d_excess - state.mean * dt);
  next.cov = riccati_rk4_step(state.cov, t, dt, ou, sigma_of_t, q_of_t);
  next.t = t + dt;
  if (min_eigenvalue(next.cov) < -psd_tol) {
    throw std::runtime_error("kalman_step: covariance lost positive semidefiniteness (dt too large?)");
  }
  return next;
}

double wonham_drift_estimate(const Vec& probs, const MarkovChainPrior& chain, double t, double excess_value) {
  double a = 0.0;
  for (Eigen::Index i = 0; i < probs.size(); ++i) {
    const double y = std::clamp(probs[i], 0.0, 1.0);
    a += chain.drift_map(t, chain.values[static_cast<std::size_t>(i)], excess_value) * y;
  }
  return a;
}

Vec wonham_step(const Vec& probs, const MarkovChainPrior& chain, double t, double excess_value, double d_excess,
                double dt, double sigma) {
  const Eigen::Index d = probs.size();
  const double inv_var = 1.0 / (sigma * sigma);
  const double abar = wonham_drift_estimate(probs, chain, t, excess_value);

  Vec y = probs;
  for (Eigen::Index i = 0; i < d; ++i) {
    const double ai = chain.drift_map(t, chain.values[static_cast<std::size_t>(i)], excess_value);
    y[i] += probs[i] * inv_var * (ai - abar) * (d_excess - abar * dt);
  }

  // Forward transition dy = L^T y dt, RK4 with time-varying intensities.
  const auto rhs = [&chain](const Vec& v, double s) {
    const Mat l = chain.intensities(s);
    const Eigen::Index n = v.size();
    Vec out = Vec::Zero(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      double diag = 0.0;
      for (Eigen::Index j = 0; j < n; ++j) {
        if (j == i) continue;
        diag += l(i, j);
        out[j] += l(i, j) * v[i];
      }
      out[i] -= diag * v[i];
    }
    return out;
  };
  const Vec k1 = rhs(y, t);
  const Vec k2 = rhs(y + 0.5 * dt * k1, t + 0.5 * dt);
  const Vec k3 = rhs(y + 0.5 * dt * k2, t + 0.5 * dt);
  const Vec k4 = rhs(y + dt * k3, t + dt);
  y += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);

  y = y.cwiseMax(0.0).cwiseMin(1.0);
  const double s = y.sum();
  if (s <= 0.0) return Vec::Constant(d, 1.0 / static_cast<double>(d));
  return y / s;
}

namespace {

TiltedPrior tilt_discrete(const DiscretePrior& prior, const std::vector<Mat>& q_grid, double dt, int order) {
  const int d = static_cast<int>(prior.atoms.size());
  const int steps = static_cast<int>(q_grid.size()) - 1;
  if (steps < 1) throw std::invalid_argument("build_tilted_prior: need at least one integration step");

  // cross(i, j) = int_0^T theta_i^T Q theta_j dt, left-point rule.
  Mat cross = Mat::Zero(d, d);
  for (int k = 0; k < steps; ++k) {
    const double t = k * dt;
    std::vector<Vec> th(static_cast<std::size_t>(d));
    for (int i = 0; i < d; ++i) th[static_cast<std::size_t>(i)] = prior.atoms[static_cast<std::size_t>(i)].value(t);
    for (int i = 0; i < d; ++i) {
      const Vec q_th = q_grid[static_cast<std::size_t>(k)] * th[static_cast<std::size_t>(i)];
      for (int j = i; j < d; ++j) {
        const double v = q_th.dot(th[static_cast<std::size_t>(j)]) * dt;
        cross(i, j) += v;
        if (j != i) cross(j, i) += v;
      }
    }
  }

  TiltedPrior tilted;
  tilted.order = order;
  const auto n_tuples = static_cast<std::size_t>(std::pow(d, order));
  tilted.support.reserve(n_tuples);
  tilted.weights = Vec::Zero(static_cast<Eigen::Index>(n_tuples));
  std::vector<int> idx(static_cast<std::size_t>(order), 0);
  double g = 0.0;
  for (std::size_t flat = 0; flat < n_tuples; ++flat) {
    double log_w = 0.0;
    for (int a = 0; a < order; ++a) {
      log_w += std::log(prior.probs[static_cast<std::size_t>(idx[static_cast<std::size_t>(a)])]);
      for (int b = a + 1; b < order; ++b) {
        log_w += cross(idx[static_cast<std::size_t>(a)], idx[static_cast<std::size_t>(b)]);
      }
    }
    const double w = std::exp(log_w);
    g += w;
    tilted.weights[static_cast<Eigen::Index>(flat)] = w;

    std::vector<DriftAtom> parts;
    parts.reserve(static_cast<std::size_t>(order));
    for (int a = 0; a < order; ++a) parts.push_back(prior.atoms[static_cast<std::size_t>(idx[static_cast<std::size_t>(a)])]);
    tilted.support.push_back(DriftAtom{[parts](double t) {
      Vec s = parts.front().value(t);
      for (std::size_t i = 1; i < parts.size(); ++i) s += parts[i].value(t);
      return s;
    }});

    for (int a = 0; a < order; ++a) {
      if (++idx[static_cast<std::size_t>(a)] < d) break;
      idx[static_cast<std::size_t>(a)] = 0;
    }
  }
  tilted.normalizer = g;
  tilted.weights /= g;
  return tilted;
}

TiltedPrior tilt_gaussian(const GaussianStaticPrior& prior, const std::vector<Mat>& q_grid, double dt, int order,
                          int quad_nodes) {
  const int n = static_cast<int>(prior.mean.size());
  const int steps = static_cast<int>(q_grid.size()) - 1;
  Mat q_int = Mat::Zero(n, n);
  for (int k = 0; k < steps; ++k) q_int += q_grid[static_cast<std::size_t>(k)] * dt;

  Eigen::LLT<Mat> llt_cov(prior.cov);
  if (llt_cov.info() != Eigen::Success) {
    throw std::invalid_argument("build_tilted_prior: Gaussian prior covariance must be positive definite");
  }
  const Mat prec = llt_cov.solve(Mat::Identity(n, n));

  // Joint precision of the l draws: prior precision on the diagonal blocks,
  // minus the integrated Q off-diagonal.
  const int m = n * order;
  Mat joint = Mat::Zero(m, m);
  for (int a = 0; a < order; ++a) {
    joint.block(a * n, a * n, n, n) = prec;
    for (int b = 0; b < order; ++b) {
      if (b != a) joint.block(a * n, b * n, n, n) = -q_int;
    }
  }
  if (min_eigenvalue(joint) <= 1e-12) {
    throw std::runtime_error("G infinite: prior variance too large for this Q*T");
  }

  Eigen::LLT<Mat> llt_joint(joint);
  const Mat joint_cov = llt_joint.solve(Mat::Identity(m, m));
  Vec lin = Vec::Zero(m);
  const Vec pm = prec * prior.mean;
  for (int a = 0; a < order; ++a) lin.segment(a * n, n) = pm;
  const Vec joint_mean = joint_cov * lin;

  double log_det_joint = 0.0;
  for (int i = 0; i < m; ++i) log_det_joint += 2.0 * std::log(llt_joint.matrixL()(i, i));
  double log_det_cov = 0.0;
  for (int i = 0; i < n; ++i) log_det_cov += 2.0 * std::log(llt_cov.matrixL()(i, i));

  TiltedPrior tilted;
  tilted.order = order;
  tilted.gaussian = true;
  // log G = -(l/2) log|gamma0| - (1/2) log|P| + (1/2) b^T P^{-1} b - (l/2) m0^T gamma0^{-1} m0
  tilted.normalizer = std::exp(-0.5 * order * log_det_cov - 0.5 * log_det_joint + 0.5 * lin.dot(joint_mean) -
                               0.5 * order * prior.mean.dot(pm));

  tilted.sum_mean = Vec::Zero(n);
  tilted.sum_cov = Mat::Zero(n, n);
  for (int a = 0; a < order; ++a) {
    tilted.sum_mean += joint_mean.segment(a * n, n);
    for (int b = 0; b < order; ++b) tilted.sum_cov += joint_cov.block(a * n, b * n, n, n);
  }

  // Quadrature discretization of the (Gaussian) law of the sum for filtering.
  const GaussianStaticPrior sum_law{tilted.sum_mean, tilted.sum_cov};
  LikelihoodState nodes = make_likelihood_state_quadrature(sum_law, quad_nodes);
  tilted.support = std::move(nodes.support);
  tilted.weights = std::move(nodes.weights);
  return tilted;
}

}  // namespace

TiltedPrior build_tilted_prior(const PriorSpec& prior, const std::vector<Mat>& q_grid, double dt, int order,
                               int quad_nodes) {
  if (order < 2) throw std::invalid_argument("build_tilted_prior: order l must be >= 2");
  if (const auto* d = std::get_if<DiscretePrior>(&prior)) return tilt_discrete(*d, q_grid, dt, order);
  if (const auto* g = std::get_if<GaussianStaticPrior>(&prior)) return tilt_gaussian(*g, q_grid, dt, order, quad_nodes);
  throw std::invalid_argument("build_tilted_prior: only Discrete and static Gaussian priors are supported");
}

Mat mixture_estimate_path(LikelihoodState state, const std::vector<Mat>& q_path, const Mat& excess, double dt) {
  const Eigen::Index rows = excess.rows();
  Mat out(rows, excess.cols());
  for (Eigen::Index k = 0; k < rows; ++k) {
    out.row(k) = mixture_posterior_mean(state).transpose();
    if (k + 1 < rows) {
      const Vec d = (excess.row(k + 1) - excess.row(k)).transpose();
      likelihood_step(state, q_path[static_cast<std::size_t>(k)], d, dt);
    }
  }
  return out;
}

Mat kalman_estimate_path(const OrnsteinUhlenbeckPrior& ou, const std::function<Mat(double)>& sigma_of_t,
                         const std::function<Mat(double)>& q_of_t, const Mat& excess, double dt) {
  const Eigen::Index rows = excess.rows();
  Mat out(rows, excess.cols());
  GaussianFilterState state = make_gaussian_filter_state(ou);
  for (Eigen::Index k = 0; k < rows; ++k) {
    out.row(k) = state.mean.transpose();
    if (k + 1 < rows) {
      const Vec d = (excess.row(k + 1) - excess.row(k)).transpose();
      state = kalman_step(state, ou, sigma_of_t, q_of_t, d, dt);
    }
  }
  return out;
}

Mat wonham_probability_path(const MarkovChainPrior& chain, const Mat& excess, double dt, double sigma) {
  const Eigen::Index rows = excess.rows();
  const auto d = static_cast<Eigen::Index>(chain.values.size());
  Mat out(rows, d);
  Vec probs = chain.initial_probs;
  for (Eigen::Index k = 0; k < rows; ++k) {
    out.row(k) = probs.transpose();
    if (k + 1 < rows) {
      probs = wonham_step(probs, chain, k * dt, excess(k, 0), excess(k + 1, 0) - excess(k, 0), dt, sigma);
    }
  }
  return out;
}

LikelihoodState make_tilted_likelihood_state(const TiltedPrior& tilted) {
  LikelihoodState s;
  s.support = tilted.support;
  s.weights = tilted.weights;
  s.log_z = Vec::Zero(static_cast<Eigen::Index>(tilted.support.size()));
  return s;
}

Vec power_equivalence_filter(const LikelihoodState& tilted_state, int order) {
  return mixture_posterior_mean(tilted_state) / static_cast<double>(order);
}

}  // namespace hiddendrift

#include "hiddendrift/likelihood.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

namespace hiddendrift {

LikelihoodState make_likelihood_state(const DiscretePrior& prior) {
  LikelihoodState s;
  s.support = prior.atoms;
  s.weights = Eigen::Map<const Vec>(prior.probs.data(), static_cast<Eigen::Index>(prior.probs.size()));
  s.log_z = Vec::Zero(static_cast<Eigen::Index>(prior.atoms.size()));
  return s;
}

void gauss_hermite_normal(int n, Vec& nodes, Vec& weights) {
  if (n < 1) throw std::invalid_argument("gauss_hermite_normal: need n >= 1");
  // Jacobi matrix of the (physicists') Hermite polynomials; eigenvalues are
  // the nodes, squared first eigenvector components the weights.
  Mat j = Mat::Zero(n, n);
  for (int i = 1; i < n; ++i) {
    const double off = std::sqrt(i / 2.0);
    j(i, i - 1) = off;
    j(i - 1, i) = off;
  }
  Eigen::SelfAdjointEigenSolver<Mat> es(j);
  nodes = es.eigenvalues() * std::sqrt(2.0);  // rescale to the N(0,1) weight
  weights = es.eigenvectors().row(0).transpose().array().square();
}

LikelihoodState make_likelihood_state_quadrature(const GaussianStaticPrior& prior, int nodes_per_dim) {
  const int n = static_cast<int>(prior.mean.size());
  Vec nodes1, weights1;
  gauss_hermite_normal(nodes_per_dim, nodes1, weights1);

  Eigen::SelfAdjointEigenSolver<Mat> es(prior.cov);
  const Mat sqrt_cov = es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() *
                       es.eigenvectors().transpose();

  LikelihoodState s;
  const auto total = static_cast<std::size_t>(std::pow(nodes_per_dim, n));
  s.support.reserve(total);
  s.weights = Vec::Zero(static_cast<Eigen::Index>(total));
  std::vector<int> idx(static_cast<std::size_t>(n), 0);
  for (std::size_t flat = 0; flat < total; ++flat) {
    Vec z(n);
    double w = 1.0;
    for (int d = 0; d < n; ++d) {
      z[d] = nodes1[idx[static_cast<std::size_t>(d)]];
      w *= weights1[idx[static_cast<std::size_t>(d)]];
    }
    s.support.push_back(DriftAtom::constant(Vec(prior.mean + sqrt_cov * z)));
    s.weights[static_cast<Eigen::Index>(flat)] = w;
    for (int d = 0; d < n; ++d) {
      if (++idx[static_cast<std::size_t>(d)] < nodes_per_dim) break;
      idx[static_cast<std::size_t>(d)] = 0;
    }
  }
  s.log_z = Vec::Zero(static_cast<Eigen::Index>(total));
  return s;
}

namespace {

void check_q(const Mat& q) {
  if (q.rows() == 1) {
    if (q(0, 0) <= 0.0) throw std::invalid_argument("Q must be positive definite");
    return;
  }
  Eigen::LLT<Mat> llt(q);
  if (llt.info() != Eigen::Success) throw std::invalid_argument("Q must be positive definite");
}

}  // namespace

double log_z_increment(const Vec& theta_drift, const Mat& q, const Vec& d_excess, double dt) {
  check_q(q);
  if (theta_drift.size() == 1) {
    const double th = theta_drift[0];
    return th * q(0, 0) * (d_excess[0] - 0.5 * th * dt);
  }
  const Vec qt = q * theta_drift;
  return qt.dot(d_excess) - 0.5 * qt.dot(theta_drift) * dt;
}

void likelihood_step(LikelihoodState& state, const Mat& q, const Vec& d_excess, double dt) {
  check_q(q);
  for (std::size_t i = 0; i < state.support.size(); ++i) {
    const Vec th = state.support[i].value(state.t);
    double inc;
    if (th.size() == 1) {
      inc = th[0] * q(0, 0) * (d_excess[0] - 0.5 * th[0] * dt);
    } else {
      const Vec qt = q * th;
      inc = qt.dot(d_excess) - 0.5 * qt.dot(th) * dt;
    }
    state.log_z[static_cast<Eigen::Index>(i)] += inc;
  }
  state.t += dt;
}

double log_mixture_density(const LikelihoodState& state) { return log_sum_exp(state.log_z, state.weights); }

double mixture_density(const LikelihoodState& state) { return std::exp(log_mixture_density(state)); }

Vec posterior_weights(const LikelihoodState& state) {
  const double log_zbar = log_mixture_density(state);
  Vec w(state.log_z.size());
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    w[i] = state.weights[i] > 0.0 ? state.weights[i] * std::exp(state.log_z[i] - log_zbar) : 0.0;
  }
  return w;
}

Vec zbar_exponential(const Mat& ahat_path, const std::vector<Mat>& q_path, const Mat& excess_path, double dt) {
  const Eigen::Index rows = ahat_path.rows();
  if (excess_path.rows() != rows || static_cast<Eigen::Index>(q_path.size()) < rows) {
    throw std::invalid_argument("zbar_exponential: grid mismatch between ahat, Q and excess paths");
  }
  Vec zbar(rows);
  zbar[0] = 1.0;
  double log_acc = 0.0;
  for (Eigen::Index k = 0; k + 1 < rows; ++k) {
    const Vec a = ahat_path.row(k).transpose();
    const Vec d = (excess_path.row(k + 1) - excess_path.row(k)).transpose();
    const Vec qa = q_path[static_cast<std::size_t>(k)] * a;
    log_acc += qa.dot(d) - 0.5 * qa.dot(a) * dt;
    zbar[k + 1] = std::exp(log_acc);
  }
  return zbar;
}

}  // namespace hiddendrift

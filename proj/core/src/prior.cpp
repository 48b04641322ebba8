#include "hiddendrift/prior.hpp"

#include <Eigen/Eigenvalues>

namespace hiddendrift {

namespace {

void check_probs(const std::vector<double>& p, const char* what) {
  double s = 0.0;
  for (double x : p) {
    if (x < 0.0) throw std::invalid_argument(std::string(what) + ": negative probability");
    s += x;
  }
  if (std::abs(s - 1.0) > 1e-12) throw std::invalid_argument(std::string(what) + ": probabilities must sum to 1");
}

void check_psd(const Mat& m, const char* what) {
  if (m.rows() != m.cols()) throw std::invalid_argument(std::string(what) + ": covariance not square");
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-10 * (1.0 + m.cwiseAbs().maxCoeff())) {
    throw std::invalid_argument(std::string(what) + ": covariance not symmetric");
  }
  if (min_eigenvalue(m) < -1e-10) throw std::invalid_argument(std::string(what) + ": covariance not PSD");
}

}  // namespace

OrnsteinUhlenbeckPrior OrnsteinUhlenbeckPrior::static_gaussian(const Vec& mean0, const Mat& cov0) {
  const int n = static_cast<int>(mean0.size());
  OrnsteinUhlenbeckPrior ou;
  ou.alpha = [n](double) { return Mat::Zero(n, n); };
  ou.beta = [n](double) { return Mat::Zero(n, n); };
  ou.b = [n](double) { return Mat::Zero(n, n); };
  ou.delta = [n](double) { return Vec::Zero(n); };
  ou.mean0 = mean0;
  ou.cov0 = cov0;
  return ou;
}

void validate_prior(const PriorSpec& prior, int n_stocks) {
  if (const auto* d = std::get_if<DiscretePrior>(&prior)) {
    if (d->atoms.empty() || d->atoms.size() != d->probs.size()) {
      throw std::invalid_argument("DiscretePrior: atoms/probs size mismatch");
    }
    check_probs(d->probs, "DiscretePrior");
    for (const auto& a : d->atoms) {
      if (a.value(0.0).size() != n_stocks) throw std::invalid_argument("DiscretePrior: atom dimension != n_stocks");
    }
  } else if (const auto* g = std::get_if<GaussianStaticPrior>(&prior)) {
    if (g->mean.size() != n_stocks) throw std::invalid_argument("GaussianStaticPrior: mean dimension != n_stocks");
    check_psd(g->cov, "GaussianStaticPrior");
  } else if (const auto* ou = std::get_if<OrnsteinUhlenbeckPrior>(&prior)) {
    if (ou->mean0.size() != n_stocks) throw std::invalid_argument("OrnsteinUhlenbeckPrior: mean0 dimension != n_stocks");
    check_psd(ou->cov0, "OrnsteinUhlenbeckPrior");
    const Mat beta0 = ou->beta(0.0);
    if (beta0.cwiseAbs().maxCoeff() > 0.0) {
      // beta(t) must be invertible with a bounded inverse where nonzero
      Eigen::FullPivLU<Mat> lu(beta0);
      if (!lu.isInvertible() || lu.inverse().norm() > ou->beta_inverse_bound) {
        throw std::invalid_argument("OrnsteinUhlenbeckPrior: beta(t) not invertible within bound");
      }
    }
  } else if (const auto* mc = std::get_if<MarkovChainPrior>(&prior)) {
    if (n_stocks != 1) throw std::invalid_argument("MarkovChainPrior: only single-stock markets supported");
    const int d = static_cast<int>(mc->values.size());
    if (d < 1 || mc->initial_probs.size() != d) {
      throw std::invalid_argument("MarkovChainPrior: values/initial_probs size mismatch");
    }
    std::vector<double> p(mc->initial_probs.data(), mc->initial_probs.data() + d);
    check_probs(p, "MarkovChainPrior");
    const Mat l = mc->intensities(0.0);
    if (l.rows() != d || l.cols() != d) throw std::invalid_argument("MarkovChainPrior: intensity matrix wrong size");
    for (int i = 0; i < d; ++i) {
      for (int j = 0; j < d; ++j) {
        if (i != j && l(i, j) < 0.0) throw std::invalid_argument("MarkovChainPrior: negative off-diagonal intensity");
      }
    }
  }
}

}  // namespace hiddendrift

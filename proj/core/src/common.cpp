#include "hiddendrift/common.hpp"

#include <Eigen/Eigenvalues>

namespace hiddendrift {

double log_sum_exp(const Vec& log_terms, const Vec& weights) {
  if (log_terms.size() != weights.size() || log_terms.size() == 0) {
    throw std::invalid_argument("log_sum_exp: size mismatch or empty input");
  }
  double m = -std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < log_terms.size(); ++i) {
    if (weights[i] > 0.0 && log_terms[i] > m) m = log_terms[i];
  }
  if (!std::isfinite(m)) return -std::numeric_limits<double>::infinity();
  double acc = 0.0;
  for (Eigen::Index i = 0; i < log_terms.size(); ++i) {
    if (weights[i] > 0.0) acc += weights[i] * std::exp(log_terms[i] - m);
  }
  return m + std::log(acc);
}

double min_eigenvalue(const Mat& sym) {
  Eigen::SelfAdjointEigenSolver<Mat> es(sym, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

}  // namespace hiddendrift

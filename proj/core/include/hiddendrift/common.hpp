#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace hiddendrift {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Numerically stable log(sum_i w_i * exp(x_i)) for nonnegative weights.
double log_sum_exp(const Vec& log_terms, const Vec& weights);

/// Symmetrize in place: m <- (m + m^T)/2.
inline void symmetrize(Mat& m) { m = ((m + m.transpose()) * 0.5).eval(); }

/// Smallest eigenvalue of a symmetric matrix.
double min_eigenvalue(const Mat& sym);

struct McEstimate {
  double mean = 0.0;
  double se = 0.0;
  std::size_t n = 0;
  std::string label;
};

/// Online mean/variance accumulator (Welford).
class RunningStats {
 public:
  void add(double x) {
    ++n_;
    const double d = x - mean_;
    mean_ += d / static_cast<double>(n_);
    m2_ += d * (x - mean_);
  }
  std::size_t count() const { return n_; }
  double mean() const { return mean_; }
  double variance() const { return n_ > 1 ? m2_ / static_cast<double>(n_ - 1) : 0.0; }
  double std_error() const { return n_ > 1 ? std::sqrt(variance() / static_cast<double>(n_)) : 0.0; }
  McEstimate estimate(const std::string& label) const { return {mean(), std_error(), n_, label}; }

 private:
  std::size_t n_ = 0;
  double mean_ = 0.0;
  double m2_ = 0.0;
};

}  // namespace hiddendrift

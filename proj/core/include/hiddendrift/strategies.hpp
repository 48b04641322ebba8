#pragma once

#include <functional>
#include <variant>

#include "hiddendrift/common.hpp"
#include "hiddendrift/market.hpp"

namespace hiddendrift {

/// U(x) = log(x + delta), F(z, lambda) = z / lambda - delta.
struct LogUtility {
  double delta = 0.0;
};

/// U(x) = x^du / du with du = (l - 1) / l, F(z, lambda) = z^l / lambda^l.
struct PowerUtility {
  int order = 2;  // l >= 2

  double exponent() const { return (order - 1.0) / order; }
};

/// User-supplied pair (U, F) with terminal claims restricted to [domain_lo, inf).
struct GenericUtility {
  std::function<double(double)> u;                // U(x)
  std::function<double(double, double)> f;        // F(z, lambda)
  double domain_lo = 0.0;
};

using UtilitySpec = std::variant<LogUtility, PowerUtility, GenericUtility>;

/// U(x) for the given utility.
double utility_value(const UtilitySpec& utility, double x);

/// F(z, lambda) for the given utility.
double claim_value(const UtilitySpec& utility, double z, double lambda);

/// One self-financing step of normalized wealth: X~' = X~ + B^{-1} pi^T dRe.
double wealth_step(double xtilde, const Vec& pi, double bond, const Vec& d_excess);

/// Log-utility myopic strategy pi = (X + delta B) Q ahat (currency amounts).
Vec log_strategy(double wealth, double bond, const Vec& ahat, const Mat& q, double delta);

/// Power-utility strategy pi = l X Q ahat_pow.
Vec power_strategy(double wealth, double bond, const Vec& ahat_pow, const Mat& q, int order);

/// Solves E_* F(Zbar, lambda) = X0 for lambda.
/// Log: 1/(X0 + delta). Power: X0^{-1/l} (E_* Zbar^l)^{1/l}, where E_* Zbar^l
/// is `normalizer` when finite (closed-form G) and the sample mean otherwise.
/// Generic: bisection on the sample mean of F; throws when no bracket exists.
double solve_lambda(const UtilitySpec& utility, const Vec& zbar_samples, double x0,
                    double normalizer = std::numeric_limits<double>::quiet_NaN(), double tol = 1e-10);

/// Terminal claim xi = F(Zbar(T), lambda). Throws when the claim leaves the
/// utility domain.
double optimal_claim(const UtilitySpec& utility, double lambda, double zbar_terminal);

/// Discrete wealth path under a self-financing strategy.
struct WealthTrace {
  Mat pi;               // K x n, currency holdings held over [t_k, t_{k+1})
  Vec xtilde;           // (K+1), normalized wealth
  Vec wealth;           // (K+1), currency wealth X = B * X~
  double xi_hat = std::numeric_limits<double>::quiet_NaN();  // replication target, if any
  double replication_error = std::numeric_limits<double>::quiet_NaN();  // |X~(T) - xi_hat|
  bool floor_breached = false;  // admissibility monitor X~ - X0 >= q_pi
};

/// Runs the myopic family pi_k = scale * (X(t_k) + delta B(t_k)) Q(t_k) est_k
/// along one simulated path (left-point, self-financing).
/// estimates is (K+1) x n; scale = 1 with filter estimates gives the
/// log-optimal strategy, delta = 0 / scale = l the power-optimal one.
/// q_floor monitors Definition-style admissibility without clipping.
WealthTrace run_myopic_strategy(const MarketSpec& spec, const SinglePath& path, double dt, const Mat& estimates,
                                double delta, double scale, double q_floor = -1e300);

/// Runs an arbitrary policy pi(k, t, X, B) along one path.
WealthTrace run_strategy(const MarketSpec& spec, const SinglePath& path, double dt,
                         const std::function<Vec(int, double, double, double)>& policy, double q_floor = -1e300);

}  // namespace hiddendrift

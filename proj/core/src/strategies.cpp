#include "hiddendrift/strategies.hpp"

namespace hiddendrift {

double utility_value(const UtilitySpec& utility, double x) {
  if (const auto* log_u = std::get_if<LogUtility>(&utility)) {
    if (x + log_u->delta <= 0.0) throw std::domain_error("utility_value: x + delta must be positive");
    return std::log(x + log_u->delta);
  }
  if (const auto* pow_u = std::get_if<PowerUtility>(&utility)) {
    if (x < 0.0) throw std::domain_error("utility_value: power utility needs x >= 0");
    const double du = pow_u->exponent();
    return std::pow(x, du) / du;
  }
  return std::get<GenericUtility>(utility).u(x);
}

double claim_value(const UtilitySpec& utility, double z, double lambda) {
  if (const auto* log_u = std::get_if<LogUtility>(&utility)) return z / lambda - log_u->delta;
  if (const auto* pow_u = std::get_if<PowerUtility>(&utility)) return std::pow(z / lambda, pow_u->order);
  return std::get<GenericUtility>(utility).f(z, lambda);
}

double wealth_step(double xtilde, const Vec& pi, double bond, const Vec& d_excess) {
  return xtilde + pi.dot(d_excess) / bond;
}

Vec log_strategy(double wealth, double bond, const Vec& ahat, const Mat& q, double delta) {
  return (wealth + delta * bond) * (q * ahat);
}

Vec power_strategy(double wealth, double bond, const Vec& ahat_pow, const Mat& q, int order) {
  (void)bond;
  return order * wealth * (q * ahat_pow);
}

namespace {

double mean_claim(const UtilitySpec& utility, const Vec& zbar_samples, double lambda) {
  double acc = 0.0;
  for (Eigen::Index i = 0; i < zbar_samples.size(); ++i) acc += claim_value(utility, zbar_samples[i], lambda);
  return acc / static_cast<double>(zbar_samples.size());
}

}  // namespace

double solve_lambda(const UtilitySpec& utility, const Vec& zbar_samples, double x0, double normalizer, double tol) {
  if (x0 <= 0.0) throw std::invalid_argument("solve_lambda: X0 must be positive");
  if (const auto* log_u = std::get_if<LogUtility>(&utility)) return 1.0 / (x0 + log_u->delta);
  if (const auto* pow_u = std::get_if<PowerUtility>(&utility)) {
    double moment = normalizer;
    if (!std::isfinite(moment)) {
      if (zbar_samples.size() == 0) throw std::invalid_argument("solve_lambda: need Zbar samples or a normalizer");
      moment = zbar_samples.array().pow(pow_u->order).mean();
    }
    return std::pow(moment / x0, 1.0 / pow_u->order);
  }

  if (zbar_samples.size() == 0) throw std::invalid_argument("solve_lambda: generic utility needs Zbar samples");
  // F is decreasing in lambda for the utilities in scope; expand a bracket
  // around lambda = 1, then bisect.
  double lo = 1.0, hi = 1.0;
  double f_lo = mean_claim(utility, zbar_samples, lo) - x0;
  double f_hi = f_lo;
  for (int i = 0; i < 200 && f_lo < 0.0; ++i) {
    lo *= 0.5;
    f_lo = mean_claim(utility, zbar_samples, lo) - x0;
  }
  for (int i = 0; i < 200 && f_hi > 0.0; ++i) {
    hi *= 2.0;
    f_hi = mean_claim(utility, zbar_samples, hi) - x0;
  }
  if (f_lo < 0.0 || f_hi > 0.0) throw std::runtime_error("solve_lambda: bisection bracket not found");
  for (int i = 0; i < 400 && hi - lo > tol * lo; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (mean_claim(utility, zbar_samples, mid) - x0 >= 0.0) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

double optimal_claim(const UtilitySpec& utility, double lambda, double zbar_terminal) {
  if (lambda <= 0.0) throw std::invalid_argument("optimal_claim: lambda must be positive");
  const double xi = claim_value(utility, zbar_terminal, lambda);
  if (const auto* log_u = std::get_if<LogUtility>(&utility)) {
    if (xi + log_u->delta <= 0.0) throw std::domain_error("optimal_claim: claim outside the log-utility domain");
  } else if (std::holds_alternative<PowerUtility>(utility)) {
    if (xi < 0.0) throw std::domain_error("optimal_claim: claim outside the power-utility domain");
  } else if (xi < std::get<GenericUtility>(utility).domain_lo) {
    throw std::domain_error("optimal_claim: claim below the configured domain floor");
  }
  return xi;
}

WealthTrace run_strategy(const MarketSpec& spec, const SinglePath& path, double dt,
                         const std::function<Vec(int, double, double, double)>& policy, double q_floor) {
  const int steps = path.n_steps();
  const int n = spec.n_stocks;
  const Vec bond = rate_integral(path, dt);

  WealthTrace trace;
  trace.pi = Mat::Zero(steps, n);
  trace.xtilde = Vec::Zero(steps + 1);
  trace.wealth = Vec::Zero(steps + 1);
  trace.xtilde[0] = spec.initial_wealth;
  trace.wealth[0] = spec.initial_wealth;

  for (int k = 0; k < steps; ++k) {
    const double t = k * dt;
    const Vec pi = policy(k, t, trace.wealth[k], bond[k]);
    trace.pi.row(k) = pi.transpose();
    const Vec d_excess = (path.excess.row(k + 1) - path.excess.row(k)).transpose();
    trace.xtilde[k + 1] = wealth_step(trace.xtilde[k], pi, bond[k], d_excess);
    trace.wealth[k + 1] = bond[k + 1] * trace.xtilde[k + 1];
    if (trace.xtilde[k + 1] - spec.initial_wealth < q_floor) trace.floor_breached = true;
  }
  return trace;
}

WealthTrace run_myopic_strategy(const MarketSpec& spec, const SinglePath& path, double dt, const Mat& estimates,
                                double delta, double scale, double q_floor) {
  if (estimates.rows() != path.excess.rows() || estimates.cols() != spec.n_stocks) {
    throw std::invalid_argument("run_myopic_strategy: estimate grid does not match the path grid");
  }
  const std::vector<Mat> q = q_along_path(spec, path, dt);
  return run_strategy(
      spec, path, dt,
      [&](int k, double /*t*/, double wealth, double bond) -> Vec {
        const Vec est = estimates.row(k).transpose();
        return scale * (wealth + delta * bond) * (q[static_cast<std::size_t>(k)] * est);
      },
      q_floor);
}

}  // namespace hiddendrift

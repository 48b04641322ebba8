#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "hiddendrift/common.hpp"
#include "hiddendrift/prior.hpp"

namespace hiddendrift {

enum class Measure { P, Pstar };

/// Observed history handed to coefficient functionals: rows 0..step of the
/// excess-return path and rates are valid.
struct PathHistory {
  const Mat& excess;
  const Vec& rates;
  int step;
  double dt;
};

/// Interest-rate functional rho(t, observed path).
struct RateSpec {
  enum class Kind { Constant, TimeOnly, PathDependent } kind = Kind::Constant;
  double constant = 0.0;
  std::function<double(double)> time_fn;
  std::function<double(double, const PathHistory&)> path_fn;

  static RateSpec constant_rate(double r) { return {Kind::Constant, r, {}, {}}; }
  static RateSpec time_varying(std::function<double(double)> f) { return {Kind::TimeOnly, 0.0, std::move(f), {}}; }
  static RateSpec path_dependent(std::function<double(double, const PathHistory&)> f) {
    return {Kind::PathDependent, 0.0, {}, std::move(f)};
  }

  double operator()(double t, const PathHistory& h) const {
    switch (kind) {
      case Kind::Constant: return constant;
      case Kind::TimeOnly: return time_fn(t);
      default: return path_fn(t, h);
    }
  }
};

/// Volatility functional alpha(t, observed excess-return path) -> n x n matrix.
struct VolSpec {
  enum class Kind { Constant, TimeOnly, PathDependent } kind = Kind::Constant;
  Mat constant;
  std::function<Mat(double)> time_fn;
  std::function<Mat(double, const PathHistory&)> path_fn;

  static VolSpec constant_vol(const Mat& s) { return {Kind::Constant, s, {}, {}}; }
  static VolSpec constant_vol(double s) { return constant_vol(Mat::Constant(1, 1, s)); }
  static VolSpec time_varying(std::function<Mat(double)> f) { return {Kind::TimeOnly, {}, std::move(f), {}}; }
  static VolSpec path_dependent(std::function<Mat(double, const PathHistory&)> f) {
    return {Kind::PathDependent, {}, {}, std::move(f)};
  }

  Mat operator()(double t, const PathHistory& h) const {
    switch (kind) {
      case Kind::Constant: return constant;
      case Kind::TimeOnly: return time_fn(t);
      default: return path_fn(t, h);
    }
  }
};

struct MarketSpec {
  int n_stocks = 1;
  double horizon = 1.0;  // T, years
  RateSpec rate = RateSpec::constant_rate(0.0);
  VolSpec vol = VolSpec::constant_vol(0.2);
  PriorSpec prior = DiscretePrior{{DriftAtom::constant(0.0)}, {1.0}};
  Vec initial_prices = Vec::Ones(1);
  double initial_wealth = 1.0;
  double ellipticity_floor = 1e-8;  // c in sigma sigma^T >= c I
  double coeff_bound = 1e6;         // bound on |rho| and |alpha| entries
  bool with_prices = false;

  /// Throws std::invalid_argument when an invariant fails.
  void validate() const;
};

/// One discretized sample path on the uniform grid t_k = k dt, k = 0..K.
struct SinglePath {
  Mat excess;               // (K+1) x n, excess returns Re(t_k), row 0 = 0
  Vec rates;                // K+1, r(t_k)
  Mat brownian;             // K x n, dw over [t_k, t_{k+1})
  Mat drift;                // (K+1) x n realized drift a~(t_k); empty under Pstar
  Mat prices;               // (K+1) x n when requested, else empty
  int atom = -1;            // discrete prior draw
  std::vector<int> chain;   // Markov-chain state index per t_k, when applicable

  int n_steps() const { return static_cast<int>(excess.rows()) - 1; }
};

struct PathBundle {
  double dt = 0.0;
  double horizon = 0.0;
  int n_stocks = 0;
  Measure measure = Measure::P;
  std::uint64_t seed = 0;
  std::vector<SinglePath> paths;

  int n_steps() const { return paths.empty() ? 0 : paths.front().n_steps(); }
};

/// Number of steps K with K dt = T; throws if dt does not divide T.
int grid_steps(double horizon, double dt);

/// Simulates one path; the stream is derived from (seed, path_index) so any
/// subset of paths can be produced independently of order.
SinglePath simulate_one_path(const MarketSpec& spec, double dt, std::uint64_t seed, std::uint64_t path_index,
                             Measure measure);

PathBundle simulate_paths(const MarketSpec& spec, double dt, std::size_t n_paths, std::uint64_t seed,
                          Measure measure);

/// Cumulative quadratic variation sum_{j<k} dRe dRe^T; entry k corresponds to t_k.
std::vector<Mat> quadratic_variation(const SinglePath& path);
std::vector<std::vector<Mat>> quadratic_variation(const PathBundle& bundle);

/// Discount factors B(t_k) = exp(sum_{j<k} r(t_j) dt), left-point rule, B(0) = 1.
Vec rate_integral(const SinglePath& path, double dt);
std::vector<Vec> rate_integral(const PathBundle& bundle);

/// Evaluates sigma(t_k) along an observed path with the ellipticity check;
/// throws std::runtime_error naming the step on violation.
Mat eval_vol_checked(const MarketSpec& spec, double t, const PathHistory& h);

/// Q(t_k) = (sigma sigma^T)^{-1} along the whole grid of a realized path.
std::vector<Mat> q_along_path(const MarketSpec& spec, const SinglePath& path, double dt);

}  // namespace hiddendrift

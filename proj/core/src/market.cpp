#include "hiddendrift/market.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "hiddendrift/rng.hpp"

namespace hiddendrift {

namespace {

Mat psd_sqrt(const Mat& cov) {
  Eigen::SelfAdjointEigenSolver<Mat> es(cov);
  Vec ev = es.eigenvalues().cwiseMax(0.0);
  return es.eigenvectors() * ev.cwiseSqrt().asDiagonal() * es.eigenvectors().transpose();
}

void check_ellipticity(const Mat& sigma, double floor, double t, int step) {
  bool ok;
  if (sigma.rows() == 1) {
    ok = sigma(0, 0) * sigma(0, 0) >= floor;
  } else {
    ok = min_eigenvalue(sigma * sigma.transpose()) >= floor;
  }
  if (!ok) {
    throw std::runtime_error("vol_fn violates sigma sigma^T >= cI at t=" + std::to_string(t) + " (step " +
                             std::to_string(step) + ")");
  }
}

}  // namespace

void MarketSpec::validate() const {
  if (n_stocks < 1) throw std::invalid_argument("MarketSpec: n_stocks must be positive");
  if (horizon <= 0.0) throw std::invalid_argument("MarketSpec: horizon must be positive");
  if (initial_wealth <= 0.0) throw std::invalid_argument("MarketSpec: initial wealth must be positive");
  if (initial_prices.size() != n_stocks || (initial_prices.array() <= 0.0).any()) {
    throw std::invalid_argument("MarketSpec: initial prices must be positive, one per stock");
  }
  if (ellipticity_floor <= 0.0) throw std::invalid_argument("MarketSpec: ellipticity floor must be positive");
  validate_prior(prior, n_stocks);
}

int grid_steps(double horizon, double dt) {
  if (dt <= 0.0) throw std::invalid_argument("dt must be positive");
  const double k = horizon / dt;
  const auto ki = static_cast<int>(std::llround(k));
  if (ki < 1 || std::abs(k - ki) > 1e-9 * std::max(1.0, k)) {
    throw std::invalid_argument("dt does not divide the horizon");
  }
  return ki;
}

Mat eval_vol_checked(const MarketSpec& spec, double t, const PathHistory& h) {
  Mat sigma = spec.vol(t, h);
  if (sigma.rows() != spec.n_stocks || sigma.cols() != spec.n_stocks) {
    throw std::runtime_error("vol_fn returned matrix of wrong size");
  }
  if (sigma.cwiseAbs().maxCoeff() > spec.coeff_bound) {
    throw std::runtime_error("vol_fn exceeds the configured bound at t=" + std::to_string(t));
  }
  check_ellipticity(sigma, spec.ellipticity_floor, t, h.step);
  return sigma;
}

SinglePath simulate_one_path(const MarketSpec& spec, double dt, std::uint64_t seed, std::uint64_t path_index,
                             Measure measure) {
  const int n = spec.n_stocks;
  const int steps = grid_steps(spec.horizon, dt);
  const double sq_dt = std::sqrt(dt);
  Rng rng(seed, path_index);

  SinglePath path;
  path.excess = Mat::Zero(steps + 1, n);
  path.rates = Vec::Zero(steps + 1);
  path.brownian = Mat::Zero(steps, n);
  if (measure == Measure::P) path.drift = Mat::Zero(steps + 1, n);
  if (spec.with_prices) {
    path.prices = Mat::Zero(steps + 1, n);
    path.prices.row(0) = spec.initial_prices.transpose();
  }

  // Parameter draw at t = 0 (independent of the Brownian stream order below).
  const DiscretePrior* discrete = std::get_if<DiscretePrior>(&spec.prior);
  const GaussianStaticPrior* gauss = std::get_if<GaussianStaticPrior>(&spec.prior);
  const OrnsteinUhlenbeckPrior* ou = std::get_if<OrnsteinUhlenbeckPrior>(&spec.prior);
  const MarkovChainPrior* chain = std::get_if<MarkovChainPrior>(&spec.prior);

  Vec theta_const;   // GaussianStatic draw
  Vec ou_state;      // current drift for the OU prior
  int chain_state = -1;
  if (measure == Measure::P) {
    if (discrete != nullptr) {
      const double u = rng.next_uniform();
      double acc = 0.0;
      path.atom = static_cast<int>(discrete->probs.size()) - 1;
      for (std::size_t i = 0; i < discrete->probs.size(); ++i) {
        acc += discrete->probs[i];
        if (u <= acc) {
          path.atom = static_cast<int>(i);
          break;
        }
      }
    } else if (gauss != nullptr) {
      Vec z(n);
      for (int i = 0; i < n; ++i) z[i] = rng.next_normal();
      theta_const = gauss->mean + psd_sqrt(gauss->cov) * z;
    } else if (ou != nullptr) {
      Vec z(n);
      for (int i = 0; i < n; ++i) z[i] = rng.next_normal();
      ou_state = ou->mean0 + psd_sqrt(ou->cov0) * z;
    } else if (chain != nullptr) {
      const double u = rng.next_uniform();
      double acc = 0.0;
      chain_state = static_cast<int>(chain->initial_probs.size()) - 1;
      for (int i = 0; i < chain->initial_probs.size(); ++i) {
        acc += chain->initial_probs[i];
        if (u <= acc) {
          chain_state = i;
          break;
        }
      }
      path.chain.assign(steps + 1, 0);
      path.chain[0] = chain_state;
    }
  }

  // Constant coefficients are evaluated once; the hot loop below runs
  // K * n_paths times for the Monte-Carlo identities.
  const bool const_rate = spec.rate.kind == RateSpec::Kind::Constant;
  const bool const_vol = spec.vol.kind == VolSpec::Kind::Constant;
  Mat sigma_const;
  if (const_vol) {
    const PathHistory hist0{path.excess, path.rates, 0, dt};
    sigma_const = eval_vol_checked(spec, 0.0, hist0);
  }

  Vec dw(n), d_excess(n), drift_k(n);
  Mat sigma_buf;
  for (int k = 0; k < steps; ++k) {
    const double t = k * dt;
    const PathHistory hist{path.excess, path.rates, k, dt};
    const double r = const_rate ? spec.rate.constant : spec.rate(t, hist);
    if (std::abs(r) > spec.coeff_bound) throw std::runtime_error("rate_fn exceeds the configured bound");
    path.rates[k] = r;
    if (!const_vol) sigma_buf = eval_vol_checked(spec, t, hist);
    const Mat& sigma = const_vol ? sigma_const : sigma_buf;

    for (int i = 0; i < n; ++i) dw[i] = sq_dt * rng.next_normal();
    path.brownian.row(k) = dw.transpose();

    if (measure == Measure::P) {
      if (discrete != nullptr) {
        drift_k = discrete->atoms[static_cast<std::size_t>(path.atom)].value(t);
      } else if (gauss != nullptr) {
        drift_k = theta_const;
      } else if (ou != nullptr) {
        drift_k = ou_state;
      } else {
        drift_k[0] = chain->drift_map(t, chain->values[static_cast<std::size_t>(chain_state)], path.excess(k, 0));
      }
      path.drift.row(k) = drift_k.transpose();
      d_excess.noalias() = sigma * dw;
      d_excess += drift_k * dt;
    } else {
      d_excess.noalias() = sigma * dw;
    }
    path.excess.row(k + 1) = path.excess.row(k) + d_excess.transpose();

    if (spec.with_prices) {
      const Vec diag = (sigma * sigma.transpose()).diagonal();
      for (int i = 0; i < n; ++i) {
        path.prices(k + 1, i) = path.prices(k, i) * std::exp(d_excess[i] + r * dt - 0.5 * diag[i] * dt);
      }
    }

    if (measure == Measure::P && ou != nullptr) {
      // Exact-in-distribution Gaussian increment for the independent noise,
      // Euler for the coupling terms.
      Vec zw(n);
      for (int i = 0; i < n; ++i) zw[i] = rng.next_normal();
      ou_state += ou->alpha(t) * (ou->delta(t) - ou_state) * dt + ou->b(t) * d_excess + ou->beta(t) * (sq_dt * zw);
    }
    if (measure == Measure::P && chain != nullptr) {
      // Exponential clock on the grid: left-point intensities held over the step.
      const double u_move = rng.next_uniform();
      const double u_dest = rng.next_uniform();
      const Mat l = chain->intensities(t);
      const int d = static_cast<int>(chain->values.size());
      double leave = 0.0;
      for (int j = 0; j < d; ++j) {
        if (j != chain_state) leave += l(chain_state, j);
      }
      if (leave > 0.0 && u_move < -std::expm1(-leave * dt)) {
        double acc = 0.0;
        for (int j = 0; j < d; ++j) {
          if (j == chain_state) continue;
          acc += l(chain_state, j) / leave;
          if (u_dest <= acc) {
            chain_state = j;
            break;
          }
        }
      }
      path.chain[static_cast<std::size_t>(k) + 1] = chain_state;
    }
  }

  const PathHistory hist_end{path.excess, path.rates, steps, dt};
  path.rates[steps] = spec.rate(spec.horizon, hist_end);
  if (measure == Measure::P) {
    const double t_end = spec.horizon;
    if (discrete != nullptr) {
      path.drift.row(steps) = discrete->atoms[static_cast<std::size_t>(path.atom)].value(t_end).transpose();
    } else if (gauss != nullptr) {
      path.drift.row(steps) = theta_const.transpose();
    } else if (ou != nullptr) {
      path.drift.row(steps) = ou_state.transpose();
    } else {
      path.drift(steps, 0) =
          chain->drift_map(t_end, chain->values[static_cast<std::size_t>(chain_state)], path.excess(steps, 0));
    }
  }
  return path;
}

PathBundle simulate_paths(const MarketSpec& spec, double dt, std::size_t n_paths, std::uint64_t seed,
                          Measure measure) {
  if (n_paths < 1) throw std::invalid_argument("n_paths must be >= 1");
  spec.validate();
  PathBundle bundle;
  bundle.dt = dt;
  bundle.horizon = spec.horizon;
  bundle.n_stocks = spec.n_stocks;
  bundle.measure = measure;
  bundle.seed = seed;
  bundle.paths.reserve(n_paths);
  for (std::size_t p = 0; p < n_paths; ++p) {
    bundle.paths.push_back(simulate_one_path(spec, dt, seed, p, measure));
  }
  return bundle;
}

std::vector<Mat> quadratic_variation(const SinglePath& path) {
  const int steps = path.n_steps();
  if (steps < 1) throw std::invalid_argument("quadratic_variation: need at least 2 time points");
  const int n = static_cast<int>(path.excess.cols());
  std::vector<Mat> qv(static_cast<std::size_t>(steps) + 1, Mat::Zero(n, n));
  for (int k = 0; k < steps; ++k) {
    const Vec d = (path.excess.row(k + 1) - path.excess.row(k)).transpose();
    qv[static_cast<std::size_t>(k) + 1] = qv[static_cast<std::size_t>(k)] + d * d.transpose();
  }
  return qv;
}

std::vector<std::vector<Mat>> quadratic_variation(const PathBundle& bundle) {
  std::vector<std::vector<Mat>> out;
  out.reserve(bundle.paths.size());
  for (const auto& p : bundle.paths) out.push_back(quadratic_variation(p));
  return out;
}

Vec rate_integral(const SinglePath& path, double dt) {
  const int steps = path.n_steps();
  Vec b(steps + 1);
  b[0] = 1.0;
  double acc = 0.0;
  for (int k = 0; k < steps; ++k) {
    acc += path.rates[k] * dt;
    b[k + 1] = std::exp(acc);
  }
  return b;
}

std::vector<Vec> rate_integral(const PathBundle& bundle) {
  std::vector<Vec> out;
  out.reserve(bundle.paths.size());
  for (const auto& p : bundle.paths) out.push_back(rate_integral(p, bundle.dt));
  return out;
}

std::vector<Mat> q_along_path(const MarketSpec& spec, const SinglePath& path, double dt) {
  const int steps = path.n_steps();
  std::vector<Mat> q(static_cast<std::size_t>(steps) + 1);
  for (int k = 0; k <= steps; ++k) {
    const PathHistory hist{path.excess, path.rates, k, dt};
    const Mat sigma = eval_vol_checked(spec, k * dt, hist);
    if (spec.n_stocks == 1) {
      q[static_cast<std::size_t>(k)] = Mat::Constant(1, 1, 1.0 / (sigma(0, 0) * sigma(0, 0)));
    } else {
      q[static_cast<std::size_t>(k)] = (sigma * sigma.transpose()).inverse();
    }
  }
  return q;
}

}  // namespace hiddendrift

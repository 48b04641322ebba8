#include "hiddendrift/pde.hpp"

#include <array>
#include <memory>

#include "hiddendrift/filters.hpp"
#include "hiddendrift/likelihood.hpp"

namespace hiddendrift {

namespace {

Mat eval_deterministic_vol(const VolSpec& vol, double t) {
  if (vol.kind == VolSpec::Kind::Constant) return vol.constant;
  if (vol.kind == VolSpec::Kind::TimeOnly) return vol.time_fn(t);
  throw std::invalid_argument("build_embedding: the embedding requires a deterministic volatility");
}

Mat q_from_sigma(const Mat& sigma) {
  if (sigma.rows() == 1) return Mat::Constant(1, 1, 1.0 / (sigma(0, 0) * sigma(0, 0)));
  return (sigma * sigma.transpose()).inverse();
}

bool atoms_look_static(const std::vector<DriftAtom>& atoms, double horizon) {
  for (const auto& atom : atoms) {
    const Vec v0 = atom.value(0.0);
    for (double t : {horizon / 3.0, 2.0 * horizon / 3.0, horizon}) {
      if ((atom.value(t) - v0).cwiseAbs().maxCoeff() != 0.0) return false;
    }
  }
  return true;
}

MarkovEmbedding build_finite_paths(const MarketSpec& spec, const DiscretePrior& prior) {
  const int d = static_cast<int>(prior.atoms.size());
  const int n = spec.n_stocks;
  MarkovEmbedding emb;
  emb.dimension = d;
  emb.n_stocks = n;
  emb.horizon = spec.horizon;
  emb.y0 = Vec::Ones(d);  // z(theta_i, 0) = 1

  auto atoms = prior.atoms;
  const VolSpec vol = spec.vol;
  emb.b = [atoms, vol, d, n](const Vec& y, double t) {
    const Mat q = q_from_sigma(eval_deterministic_vol(vol, t));
    Mat out(d, n);
    for (int i = 0; i < d; ++i) out.row(i) = y[i] * (q * atoms[static_cast<std::size_t>(i)].value(t)).transpose();
    return out;
  };
  emb.bbar = [b = emb.b, vol](const Vec& y, double t) {
    return Mat(b(y, t) * eval_deterministic_vol(vol, t));
  };
  emb.f = [d](const Vec&, double) { return Vec::Zero(d); };
  Vec probs = Eigen::Map<const Vec>(prior.probs.data(), d);
  emb.phi = [probs](const Vec& y) { return probs.dot(y); };
  emb.time_homogeneous = vol.kind == VolSpec::Kind::Constant && atoms_look_static(atoms, spec.horizon);
  return emb;
}

MarkovEmbedding build_kalman_ou(const MarketSpec& spec, const OrnsteinUhlenbeckPrior& ou, int riccati_steps) {
  const int n = spec.n_stocks;
  const VolSpec vol = spec.vol;
  auto sigma_of_t = [vol](double t) { return eval_deterministic_vol(vol, t); };
  auto q_of_t = [vol](double t) { return q_from_sigma(eval_deterministic_vol(vol, t)); };

  const double dtg = spec.horizon / riccati_steps;
  auto gammas = std::make_shared<std::vector<Mat>>(
      riccati_integrate(ou.cov0, ou, sigma_of_t, q_of_t, dtg, riccati_steps));
  auto gamma_at = [gammas, dtg, riccati_steps](double t) {
    const double u = std::clamp(t / dtg, 0.0, static_cast<double>(riccati_steps));
    const auto k = static_cast<std::size_t>(std::min(static_cast<double>(riccati_steps - 1), std::floor(u)));
    const double w = u - static_cast<double>(k);
    return Mat((1.0 - w) * (*gammas)[k] + w * (*gammas)[k + 1]);
  };

  MarkovEmbedding emb;
  emb.dimension = n + 2;
  emb.n_stocks = n;
  emb.horizon = spec.horizon;
  emb.y0 = Vec::Zero(n + 2);
  emb.y0.head(n) = ou.mean0;
  emb.y0[n + 1] = 1.0;

  emb.f = [ou, gamma_at, q_of_t, n](const Vec& y, double t) {
    const Mat q = q_of_t(t);
    const Vec yhat = y.head(n);
    Vec out = Vec::Zero(n + 2);
    out.head(n) = (-ou.alpha(t) - gamma_at(t) * q) * yhat + ou.alpha(t) * ou.delta(t);
    out[n + 1] = -0.5 * y[n + 1] * yhat.dot(q * yhat);
    return out;
  };
  emb.b = [ou, gamma_at, sigma_of_t, q_of_t, n](const Vec& y, double t) {
    const Mat q = q_of_t(t);
    Mat out = Mat::Zero(n + 2, n);
    out.topRows(n) = (ou.b(t) * sigma_of_t(t).transpose() + gamma_at(t)) * q;
    out.row(n) = (q * y.head(n)).transpose();
    return out;
  };
  emb.bbar = [b = emb.b, sigma_of_t](const Vec& y, double t) { return Mat(b(y, t) * sigma_of_t(t)); };
  emb.phi = [n](const Vec& y) { return y[n + 1] * std::exp(y[n]); };
  emb.time_homogeneous = false;
  return emb;
}

MarkovEmbedding build_markov_chain(const MarketSpec& spec, const MarkovChainPrior& chain) {
  const int d = static_cast<int>(chain.values.size());
  const VolSpec vol = spec.vol;

  MarkovEmbedding emb;
  emb.dimension = d + 2;
  emb.n_stocks = 1;
  emb.horizon = spec.horizon;
  emb.y0 = Vec::Zero(d + 2);
  emb.y0.head(d) = chain.initial_probs;
  emb.y0[d + 1] = 1.0;

  // Posterior coordinates pass through psi = clamp to [0,1] wherever they
  // enter the drift estimate, keeping the coefficients linearly bounded.
  auto drift_parts = [chain, d](const Vec& y, double t, Vec& a, double& abar) {
    a.resize(d);
    abar = 0.0;
    for (int i = 0; i < d; ++i) {
      a[i] = chain.drift_map(t, chain.values[static_cast<std::size_t>(i)], y[d]);
      abar += a[i] * std::clamp(y[i], 0.0, 1.0);
    }
  };

  emb.f = [chain, vol, drift_parts, d](const Vec& y, double t) {
    const double sigma = eval_deterministic_vol(vol, t)(0, 0);
    const double inv_var = 1.0 / (sigma * sigma);
    Vec a;
    double abar;
    drift_parts(y, t, a, abar);
    const Mat l = chain.intensities(t);
    Vec out = Vec::Zero(d + 2);
    for (int i = 0; i < d; ++i) {
      double trans = 0.0;
      for (int k = 0; k < d; ++k) {
        trans += (k == i ? -l.row(i).sum() + l(i, i) : l(k, i)) * y[k];
      }
      out[i] = trans - y[i] * inv_var * (a[i] - abar) * abar;
    }
    return out;
  };
  emb.b = [chain, vol, drift_parts, d](const Vec& y, double t) {
    const double sigma = eval_deterministic_vol(vol, t)(0, 0);
    const double inv_var = 1.0 / (sigma * sigma);
    Vec a;
    double abar;
    drift_parts(y, t, a, abar);
    Mat out = Mat::Zero(d + 2, 1);
    for (int i = 0; i < d; ++i) out(i, 0) = y[i] * inv_var * (a[i] - abar);
    out(d, 0) = 1.0;
    out(d + 1, 0) = y[d + 1] * abar * inv_var;
    return out;
  };
  emb.bbar = [b = emb.b, vol](const Vec& y, double t) {
    return Mat(b(y, t) * eval_deterministic_vol(vol, t)(0, 0));
  };
  emb.phi = [d](const Vec& y) { return y[d + 1]; };
  emb.time_homogeneous = false;
  return emb;
}

}  // namespace

MarkovEmbedding build_embedding(const MarketSpec& spec, EmbeddingVariant variant, int riccati_steps) {
  switch (variant) {
    case EmbeddingVariant::FinitePaths: {
      const auto* prior = std::get_if<DiscretePrior>(&spec.prior);
      if (prior == nullptr) throw std::invalid_argument("build_embedding: FinitePaths needs a discrete prior");
      return build_finite_paths(spec, *prior);
    }
    case EmbeddingVariant::KalmanOU: {
      const auto* prior = std::get_if<OrnsteinUhlenbeckPrior>(&spec.prior);
      if (prior == nullptr) throw std::invalid_argument("build_embedding: KalmanOU needs an OU/Gaussian prior");
      return build_kalman_ou(spec, *prior, riccati_steps);
    }
    case EmbeddingVariant::MarkovChain: {
      const auto* prior = std::get_if<MarkovChainPrior>(&spec.prior);
      if (prior == nullptr) throw std::invalid_argument("build_embedding: MarkovChain needs a chain prior");
      return build_markov_chain(spec, *prior);
    }
  }
  throw std::invalid_argument("build_embedding: unknown variant");
}

Mat embed_along_path(const MarkovEmbedding& emb, const Mat& excess, double dt) {
  const Eigen::Index rows = excess.rows();
  Mat states(rows, emb.dimension);
  Vec y = emb.y0;
  states.row(0) = y.transpose();
  for (Eigen::Index k = 0; k + 1 < rows; ++k) {
    const double t = static_cast<double>(k) * dt;
    const Vec d = (excess.row(k + 1) - excess.row(k)).transpose();
    y += emb.f(y, t) * dt + emb.b(y, t) * d;
    states.row(k + 1) = y.transpose();
  }
  return states;
}

namespace {

/// Advances y from time t to the horizon under the P* dynamics
/// dy = f dt + bbar dw*, sharing the normal draws across the given states.
void advance_pstar(const MarkovEmbedding& emb, std::vector<Vec>& states, double t, double dt, Rng& rng) {
  const auto steps = static_cast<int>(std::llround((emb.horizon - t) / dt));
  const int k_steps = std::max(1, steps);
  const double h = (emb.horizon - t) / k_steps;
  const double sq_h = std::sqrt(h);
  Vec dw(emb.n_stocks);
  for (int k = 0; k < k_steps; ++k) {
    const double s = t + k * h;
    for (int i = 0; i < emb.n_stocks; ++i) dw[i] = sq_h * rng.next_normal();
    for (auto& y : states) y += emb.f(y, s) * h + emb.bbar(y, s) * dw;
  }
}

}  // namespace

McEstimate feynman_kac_value(const MarkovEmbedding& emb, const std::function<double(const Vec&)>& terminal,
                             const Vec& y, double t, double dt, std::size_t n_inner, std::uint64_t seed) {
  RunningStats stats;
  std::vector<Vec> states(1);
  for (std::size_t i = 0; i < n_inner; ++i) {
    Rng rng(seed, i);
    states[0] = y;
    advance_pstar(emb, states, t, dt, rng);
    stats.add(terminal(states[0]));
  }
  return stats.estimate("feynman_kac_value");
}

FkValueGradient feynman_kac_gradient(const MarkovEmbedding& emb, const std::function<double(const Vec&)>& terminal,
                                     const Vec& y, double t, double dt, std::size_t n_inner, std::uint64_t seed) {
  const int m = emb.dimension;
  const double h = 1e-3 * (1.0 + y.norm());
  RunningStats value_stats;
  std::vector<RunningStats> grad_stats(static_cast<std::size_t>(m));
  std::vector<Vec> states(static_cast<std::size_t>(2 * m) + 1);
  for (std::size_t i = 0; i < n_inner; ++i) {
    Rng rng(seed, i);
    states[0] = y;
    for (int j = 0; j < m; ++j) {
      states[static_cast<std::size_t>(2 * j) + 1] = y;
      states[static_cast<std::size_t>(2 * j) + 1][j] += h;
      states[static_cast<std::size_t>(2 * j) + 2] = y;
      states[static_cast<std::size_t>(2 * j) + 2][j] -= h;
    }
    advance_pstar(emb, states, t, dt, rng);
    value_stats.add(terminal(states[0]));
    for (int j = 0; j < m; ++j) {
      const double up = terminal(states[static_cast<std::size_t>(2 * j) + 1]);
      const double dn = terminal(states[static_cast<std::size_t>(2 * j) + 2]);
      grad_stats[static_cast<std::size_t>(j)].add((up - dn) / (2.0 * h));
    }
  }
  FkValueGradient out;
  out.value = value_stats.estimate("feynman_kac_value");
  out.gradient = Vec(m);
  out.gradient_se = Vec(m);
  for (int j = 0; j < m; ++j) {
    out.gradient[j] = grad_stats[static_cast<std::size_t>(j)].mean();
    out.gradient_se[j] = grad_stats[static_cast<std::size_t>(j)].std_error();
  }
  return out;
}

std::size_t FdGrid::size() const {
  std::size_t total = 1;
  for (int s : shape) total *= static_cast<std::size_t>(s);
  return total;
}

Vec FdGrid::point(std::size_t flat) const {
  const int m = dims();
  Vec y(m);
  for (int j = m - 1; j >= 0; --j) {
    const auto s = static_cast<std::size_t>(shape[static_cast<std::size_t>(j)]);
    y[j] = lo[j] + spacing(j) * static_cast<double>(flat % s);
    flat /= s;
  }
  return y;
}

bool FdGrid::contains(const Vec& y) const {
  for (int j = 0; j < dims(); ++j) {
    if (y[j] < lo[j] || y[j] > hi[j]) return false;
  }
  return true;
}

double fd_interpolate(const FdGrid& grid, const std::vector<double>& slice, const Vec& y) {
  const int m = grid.dims();
  if (!grid.contains(y)) throw std::out_of_range("fd_interpolate: point outside the grid domain");
  std::array<int, 3> base{};
  std::array<double, 3> w{};
  std::array<std::size_t, 3> stride{};
  std::size_t str = 1;
  for (int j = m - 1; j >= 0; --j) {
    stride[static_cast<std::size_t>(j)] = str;
    str *= static_cast<std::size_t>(grid.shape[static_cast<std::size_t>(j)]);
  }
  for (int j = 0; j < m; ++j) {
    const double h = grid.spacing(j);
    const double u = (y[j] - grid.lo[j]) / h;
    int i = static_cast<int>(std::floor(u));
    i = std::clamp(i, 0, grid.shape[static_cast<std::size_t>(j)] - 2);
    base[static_cast<std::size_t>(j)] = i;
    w[static_cast<std::size_t>(j)] = u - i;
  }
  double acc = 0.0;
  for (int corner = 0; corner < (1 << m); ++corner) {
    double weight = 1.0;
    std::size_t idx = 0;
    for (int j = 0; j < m; ++j) {
      const int bit = (corner >> j) & 1;
      weight *= bit != 0 ? w[static_cast<std::size_t>(j)] : 1.0 - w[static_cast<std::size_t>(j)];
      idx += static_cast<std::size_t>(base[static_cast<std::size_t>(j)] + bit) * stride[static_cast<std::size_t>(j)];
    }
    acc += weight * slice[idx];
  }
  return acc;
}

Vec fd_gradient(const FdGrid& grid, const std::vector<double>& slice, const Vec& y) {
  const int m = grid.dims();
  Vec grad(m);
  for (int j = 0; j < m; ++j) {
    const double h = grid.spacing(j);
    Vec up = y, dn = y;
    up[j] = std::min(y[j] + h, grid.hi[j]);
    dn[j] = std::max(y[j] - h, grid.lo[j]);
    grad[j] = (fd_interpolate(grid, slice, up) - fd_interpolate(grid, slice, dn)) / (up[j] - dn[j]);
  }
  return grad;
}

namespace {

/// Per-grid-point operator coefficients at one time level.
struct FdCoefficients {
  std::vector<std::vector<double>> drift;      // per dim
  std::vector<std::vector<double>> diffusion;  // per dim, 1/2 (bbar bbar^T)_{jj}
  std::vector<std::vector<double>> cross;      // per pair i < j, (bbar bbar^T)_{ij}
  std::vector<std::pair<int, int>> pairs;
};

FdCoefficients eval_coefficients(const MarkovEmbedding& emb, const FdGrid& grid, double t) {
  const int m = grid.dims();
  const std::size_t total = grid.size();
  FdCoefficients c;
  c.drift.assign(static_cast<std::size_t>(m), std::vector<double>(total));
  c.diffusion.assign(static_cast<std::size_t>(m), std::vector<double>(total));
  for (int i = 0; i < m; ++i) {
    for (int j = i + 1; j < m; ++j) c.pairs.emplace_back(i, j);
  }
  c.cross.assign(c.pairs.size(), std::vector<double>(total));

  std::array<int, 3> mi{};
  Vec y(m);
  for (int j = 0; j < m; ++j) y[j] = grid.lo[j];
  for (std::size_t flat = 0; flat < total; ++flat) {
    const Vec f = emb.f(y, t);
    const Mat bb = emb.bbar(y, t);
    const Mat cov = bb * bb.transpose();
    for (int j = 0; j < m; ++j) {
      c.drift[static_cast<std::size_t>(j)][flat] = f[j];
      c.diffusion[static_cast<std::size_t>(j)][flat] = 0.5 * cov(j, j);
    }
    for (std::size_t p = 0; p < c.pairs.size(); ++p) {
      c.cross[p][flat] = cov(c.pairs[p].first, c.pairs[p].second);
    }
    for (int j = m - 1; j >= 0; --j) {
      if (++mi[static_cast<std::size_t>(j)] < grid.shape[static_cast<std::size_t>(j)]) {
        y[j] += grid.spacing(j);
        break;
      }
      mi[static_cast<std::size_t>(j)] = 0;
      y[j] = grid.lo[j];
    }
  }
  return c;
}

/// L_j v: drift (central, one-sided at the far field) plus diagonal diffusion
/// (dropped at the boundary, matching the zero-second-derivative condition).
void apply_directional(const FdGrid& grid, const FdCoefficients& c, int j, const std::vector<double>& v,
                       std::vector<double>& out) {
  const int m = grid.dims();
  const std::size_t total = grid.size();
  std::size_t str = 1;
  for (int k = m - 1; k > j; --k) str *= static_cast<std::size_t>(grid.shape[static_cast<std::size_t>(k)]);
  const auto len = static_cast<std::size_t>(grid.shape[static_cast<std::size_t>(j)]);
  const double h = grid.spacing(j);
  const double inv_h = 1.0 / h, inv_h2 = 1.0 / (h * h);
  const auto& drift = c.drift[static_cast<std::size_t>(j)];
  const auto& diff = c.diffusion[static_cast<std::size_t>(j)];

  for (std::size_t flat = 0; flat < total; ++flat) {
    const std::size_t i = (flat / str) % len;
    if (i == 0) {
      out[flat] = drift[flat] * (v[flat + str] - v[flat]) * inv_h;
    } else if (i == len - 1) {
      out[flat] = drift[flat] * (v[flat] - v[flat - str]) * inv_h;
    } else {
      out[flat] = drift[flat] * (v[flat + str] - v[flat - str]) * (0.5 * inv_h) +
                  diff[flat] * (v[flat + str] - 2.0 * v[flat] + v[flat - str]) * inv_h2;
    }
  }
}

/// Explicit cross-derivative terms, zero on any involved boundary.
void apply_cross(const FdGrid& grid, const FdCoefficients& c, const std::vector<double>& v,
                 std::vector<double>& out) {
  const int m = grid.dims();
  const std::size_t total = grid.size();
  std::fill(out.begin(), out.end(), 0.0);
  if (c.pairs.empty()) return;
  std::array<std::size_t, 3> stride{};
  std::size_t str = 1;
  for (int k = m - 1; k >= 0; --k) {
    stride[static_cast<std::size_t>(k)] = str;
    str *= static_cast<std::size_t>(grid.shape[static_cast<std::size_t>(k)]);
  }
  for (std::size_t p = 0; p < c.pairs.size(); ++p) {
    const auto [di, dj] = c.pairs[p];
    const std::size_t si = stride[static_cast<std::size_t>(di)], sj = stride[static_cast<std::size_t>(dj)];
    const auto li = static_cast<std::size_t>(grid.shape[static_cast<std::size_t>(di)]);
    const auto lj = static_cast<std::size_t>(grid.shape[static_cast<std::size_t>(dj)]);
    const double scale = 1.0 / (4.0 * grid.spacing(di) * grid.spacing(dj));
    for (std::size_t flat = 0; flat < total; ++flat) {
      const std::size_t ii = (flat / si) % li, jj = (flat / sj) % lj;
      if (ii == 0 || ii == li - 1 || jj == 0 || jj == lj - 1) continue;
      out[flat] += c.cross[p][flat] * scale *
                   (v[flat + si + sj] - v[flat + si - sj] - v[flat - si + sj] + v[flat - si - sj]);
    }
  }
}

/// Solves (I - dt L_j) x = rhs line by line (Thomas algorithm).
void solve_directional(const FdGrid& grid, const FdCoefficients& c, int j, double dt, const std::vector<double>& rhs,
                       std::vector<double>& x) {
  const int m = grid.dims();
  const std::size_t total = grid.size();
  std::size_t str = 1;
  for (int k = m - 1; k > j; --k) str *= static_cast<std::size_t>(grid.shape[static_cast<std::size_t>(k)]);
  const auto len = static_cast<std::size_t>(grid.shape[static_cast<std::size_t>(j)]);
  const double h = grid.spacing(j);
  const double inv_h = 1.0 / h, inv_h2 = 1.0 / (h * h);
  const auto& drift = c.drift[static_cast<std::size_t>(j)];
  const auto& diff = c.diffusion[static_cast<std::size_t>(j)];

  std::vector<double> a(len), b(len), cc(len), d(len), cp(len), dp(len);
  for (std::size_t base = 0; base < total; ++base) {
    if ((base / str) % len != 0) continue;  // not a line start
    for (std::size_t i = 0; i < len; ++i) {
      const std::size_t flat = base + i * str;
      if (i == 0) {
        a[i] = 0.0;
        b[i] = 1.0 + dt * drift[flat] * inv_h;
        cc[i] = -dt * drift[flat] * inv_h;
      } else if (i == len - 1) {
        a[i] = dt * drift[flat] * inv_h;
        b[i] = 1.0 - dt * drift[flat] * inv_h;
        cc[i] = 0.0;
      } else {
        a[i] = -dt * (diff[flat] * inv_h2 - 0.5 * drift[flat] * inv_h);
        b[i] = 1.0 + 2.0 * dt * diff[flat] * inv_h2;
        cc[i] = -dt * (diff[flat] * inv_h2 + 0.5 * drift[flat] * inv_h);
      }
      d[i] = rhs[flat];
    }
    cp[0] = cc[0] / b[0];
    dp[0] = d[0] / b[0];
    for (std::size_t i = 1; i < len; ++i) {
      const double denom = b[i] - a[i] * cp[i - 1];
      cp[i] = cc[i] / denom;
      dp[i] = (d[i] - a[i] * dp[i - 1]) / denom;
    }
    x[base + (len - 1) * str] = dp[len - 1];
    for (std::size_t i = len - 1; i-- > 0;) {
      x[base + i * str] = dp[i] - cp[i] * x[base + (i + 1) * str];
    }
  }
}

void check_cross_stability(const FdGrid& grid, const FdCoefficients& c, double dt) {
  if (c.pairs.empty()) return;
  double worst = 0.0;
  for (std::size_t flat = 0; flat < grid.size(); ++flat) {
    double r = 0.0;
    for (std::size_t p = 0; p < c.pairs.size(); ++p) {
      const auto [i, j] = c.pairs[p];
      r += 2.0 * std::abs(c.cross[p][flat]) / (grid.spacing(i) * grid.spacing(j));
    }
    worst = std::max(worst, r);
  }
  if (dt * worst > 0.5) {
    throw std::runtime_error("solve_cauchy_fd: explicit cross-term stability violated; use dt <= " +
                             std::to_string(0.5 / worst));
  }
}

}  // namespace

FdSolution solve_cauchy_fd(const MarkovEmbedding& emb, const std::function<double(const Vec&)>& terminal,
                           const FdGrid& grid, int time_steps, const FdObserver& observer) {
  const int m = grid.dims();
  if (m != emb.dimension) throw std::invalid_argument("solve_cauchy_fd: grid dimension mismatch");
  if (m < 1 || m > 3) throw std::invalid_argument("solve_cauchy_fd: finite differences support 1 <= M <= 3");
  for (int s : grid.shape) {
    if (s < 4) throw std::invalid_argument("solve_cauchy_fd: need at least 4 points per dimension");
  }
  if (time_steps < 1) throw std::invalid_argument("solve_cauchy_fd: need at least one time step");

  const std::size_t total = grid.size();
  const double dt = emb.horizon / time_steps;

  FdSolution sol;
  sol.grid = grid;
  sol.horizon = emb.horizon;
  sol.time_steps = time_steps;
  sol.terminal_slice.resize(total);
  {
    std::array<int, 3> mi{};
    Vec y(m);
    for (int j = 0; j < m; ++j) y[j] = grid.lo[j];
    for (std::size_t flat = 0; flat < total; ++flat) {
      sol.terminal_slice[flat] = terminal(y);
      for (int j = m - 1; j >= 0; --j) {
        if (++mi[static_cast<std::size_t>(j)] < grid.shape[static_cast<std::size_t>(j)]) {
          y[j] += grid.spacing(j);
          break;
        }
        mi[static_cast<std::size_t>(j)] = 0;
        y[j] = grid.lo[j];
      }
    }
  }

  std::vector<double> v = sol.terminal_slice;
  if (observer) observer(time_steps, emb.horizon, v);

  FdCoefficients coef;
  bool have_coef = false;
  std::vector<double> stage(total), rhs(total), cross_term(total);
  std::vector<std::vector<double>> ljv(static_cast<std::size_t>(m), std::vector<double>(total));

  for (int k = time_steps - 1; k >= 0; --k) {
    const double t = k * dt;
    if (!have_coef || !emb.time_homogeneous) {
      coef = eval_coefficients(emb, grid, t);
      check_cross_stability(grid, coef, dt);
      have_coef = true;
    }

    // Explicit predictor: v + dt (sum_j L_j + L_cross) v.
    for (int j = 0; j < m; ++j) apply_directional(grid, coef, j, v, ljv[static_cast<std::size_t>(j)]);
    apply_cross(grid, coef, v, cross_term);
    for (std::size_t i = 0; i < total; ++i) {
      double acc = cross_term[i];
      for (int j = 0; j < m; ++j) acc += ljv[static_cast<std::size_t>(j)][i];
      stage[i] = v[i] + dt * acc;
    }

    // Directional corrections: (I - dt L_j) y_j = y_{j-1} - dt L_j v.
    for (int j = 0; j < m; ++j) {
      for (std::size_t i = 0; i < total; ++i) rhs[i] = stage[i] - dt * ljv[static_cast<std::size_t>(j)][i];
      solve_directional(grid, coef, j, dt, rhs, stage);
    }
    v = stage;
    if (observer) observer(k, t, v);
  }
  sol.initial_slice = std::move(v);
  return sol;
}

Vec extract_strategy(const MarkovEmbedding& emb, const FdGrid& grid, const std::vector<double>& slice, const Vec& y,
                     double t, double bond) {
  if (!grid.contains(y)) throw std::out_of_range("extract_strategy: state left the finite-difference domain");
  const Vec grad = fd_gradient(grid, slice, y);
  return bond * (emb.b(y, t).transpose() * grad);
}

}  // namespace hiddendrift

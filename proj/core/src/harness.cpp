#include "hiddendrift/harness.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>

#include "hiddendrift/io.hpp"
#include "hiddendrift/likelihood.hpp"
#include "hiddendrift/pde.hpp"

namespace hiddendrift {

namespace {

Vec json_to_vec(const Json& j) {
  if (j.is_number()) return Vec::Constant(1, j.get<double>());
  Vec v(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  return v;
}

Mat json_to_mat(const Json& j) {
  if (j.is_number()) return Mat::Constant(1, 1, j.get<double>());
  const auto rows = j.size();
  const auto cols = j[0].size();
  Mat m(rows, cols);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t c = 0; c < cols; ++c) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = j[i][c];
  }
  return m;
}

PriorSpec prior_from_json(const Json& j, int n_stocks) {
  const std::string type = j.at("type").get<std::string>();
  if (type == "discrete") {
    DiscretePrior prior;
    for (const Json& atom : j.at("atoms")) prior.atoms.push_back(DriftAtom::constant(json_to_vec(atom)));
    prior.probs = j.at("probs").get<std::vector<double>>();
    return prior;
  }
  if (type == "gaussian") {
    return GaussianStaticPrior{json_to_vec(j.at("mean")), json_to_mat(j.at("cov"))};
  }
  if (type == "ou") {
    const Mat alpha = json_to_mat(j.at("alpha"));
    const Mat beta = json_to_mat(j.at("beta"));
    const Mat b = j.contains("b") ? json_to_mat(j.at("b")) : Mat(Mat::Zero(n_stocks, n_stocks));
    const Vec delta = j.contains("delta") ? json_to_vec(j.at("delta")) : Vec(Vec::Zero(n_stocks));
    OrnsteinUhlenbeckPrior prior;
    prior.alpha = [alpha](double) { return alpha; };
    prior.beta = [beta](double) { return beta; };
    prior.b = [b](double) { return b; };
    prior.delta = [delta](double) { return delta; };
    prior.mean0 = json_to_vec(j.at("mean0"));
    prior.cov0 = json_to_mat(j.at("cov0"));
    return prior;
  }
  if (type == "markov_chain") {
    MarkovChainPrior prior;
    prior.values = j.at("values").get<std::vector<double>>();
    const Mat l = json_to_mat(j.at("intensities"));
    prior.intensities = [l](double) { return l; };
    prior.initial_probs = json_to_vec(j.at("initial_probs"));
    prior.drift_map = MarkovChainPrior::identity_drift();
    return prior;
  }
  throw std::invalid_argument("scenario_from_json: unknown prior type '" + type + "'");
}

UtilitySpec utility_from_json(const Json& j) {
  const std::string type = j.at("type").get<std::string>();
  if (type == "log") return LogUtility{j.value("delta", 0.0)};
  if (type == "power") return PowerUtility{j.at("order").get<int>()};
  throw std::invalid_argument("scenario_from_json: unknown utility type '" + type + "'");
}

FilterChoice filter_from_string(const std::string& name) {
  if (name == "bayes") return FilterChoice::Bayes;
  if (name == "kalman") return FilterChoice::Kalman;
  if (name == "wonham") return FilterChoice::Wonham;
  if (name == "power_tilt") return FilterChoice::PowerTilt;
  throw std::invalid_argument("scenario_from_json: unknown filter '" + name + "'");
}

bool deterministic_vol(const VolSpec& vol) { return vol.kind != VolSpec::Kind::PathDependent; }

Mat vol_at(const VolSpec& vol, double t) {
  return vol.kind == VolSpec::Kind::Constant ? vol.constant : vol.time_fn(t);
}

Mat q_of_sigma(const Mat& sigma) {
  if (sigma.rows() == 1) return Mat::Constant(1, 1, 1.0 / (sigma(0, 0) * sigma(0, 0)));
  return (sigma * sigma.transpose()).inverse();
}

/// Prior mean of the drift at t = 0 (the "frozen" competitor estimate).
Vec prior_mean_at_zero(const PriorSpec& prior, int n_stocks) {
  if (const auto* d = std::get_if<DiscretePrior>(&prior)) {
    Vec m = Vec::Zero(n_stocks);
    for (std::size_t i = 0; i < d->atoms.size(); ++i) m += d->probs[i] * d->atoms[i].value(0.0);
    return m;
  }
  if (const auto* g = std::get_if<GaussianStaticPrior>(&prior)) return g->mean;
  if (const auto* ou = std::get_if<OrnsteinUhlenbeckPrior>(&prior)) return ou->mean0;
  const auto& chain = std::get<MarkovChainPrior>(prior);
  double m = 0.0;
  for (std::size_t i = 0; i < chain.values.size(); ++i) {
    m += chain.initial_probs[static_cast<Eigen::Index>(i)] * chain.drift_map(0.0, chain.values[i], 0.0);
  }
  return Vec::Constant(1, m);
}

bool atoms_static(const std::vector<DriftAtom>& atoms, double horizon) {
  for (const auto& atom : atoms) {
    const Vec v0 = atom.value(0.0);
    for (double t : {horizon / 3.0, 2.0 * horizon / 3.0, horizon}) {
      if ((atom.value(t) - v0).cwiseAbs().maxCoeff() != 0.0) return false;
    }
  }
  return true;
}

}  // namespace

Scenario scenario_from_json(const Json& config) {
  Scenario s;
  const Json& market = config.at("market");
  s.market.n_stocks = market.value("n_stocks", 1);
  s.market.horizon = market.value("horizon", 1.0);
  s.market.rate = RateSpec::constant_rate(market.value("rate", 0.0));
  if (market.contains("vol")) {
    s.market.vol = VolSpec::constant_vol(json_to_mat(market.at("vol")));
  }
  s.market.initial_wealth = market.value("initial_wealth", 1.0);
  s.market.initial_prices = market.contains("initial_prices") ? json_to_vec(market.at("initial_prices"))
                                                              : Vec(Vec::Ones(s.market.n_stocks));
  s.market.with_prices = market.value("with_prices", false);
  s.market.prior = prior_from_json(config.at("prior"), s.market.n_stocks);
  if (config.contains("utility")) s.utility = utility_from_json(config.at("utility"));
  if (config.contains("filter")) s.filter = filter_from_string(config.at("filter").get<std::string>());
  const Json& grid = config.at("grid");
  s.dt = grid.at("dt").get<double>();
  s.n_paths = grid.at("paths").get<std::size_t>();
  s.seed = config.value("seed", std::uint64_t{1});
  s.source = config;
  s.validate();
  return s;
}

Scenario load_scenario(const std::string& file) {
  std::ifstream is(file);
  if (!is) throw std::runtime_error("load_scenario: cannot open " + file);
  Json config;
  is >> config;
  return scenario_from_json(config);
}

void Scenario::validate() const {
  market.validate();
  grid_steps(market.horizon, dt);
  if (n_paths < 2) throw std::invalid_argument("Scenario: need at least 2 paths for standard errors");

  const bool discrete = std::holds_alternative<DiscretePrior>(market.prior);
  const bool gaussian = std::holds_alternative<GaussianStaticPrior>(market.prior);
  const bool ou = std::holds_alternative<OrnsteinUhlenbeckPrior>(market.prior);
  const bool chain = std::holds_alternative<MarkovChainPrior>(market.prior);

  switch (filter) {
    case FilterChoice::Bayes:
      if (!discrete && !gaussian) throw std::invalid_argument("Scenario: Bayes filter needs a discrete or Gaussian prior");
      break;
    case FilterChoice::Kalman:
      if (!gaussian && !ou) throw std::invalid_argument("Scenario: Kalman filter needs a Gaussian or OU prior");
      if (!deterministic_vol(market.vol)) throw std::invalid_argument("Scenario: Kalman filter needs deterministic volatility");
      break;
    case FilterChoice::Wonham:
      if (!chain) throw std::invalid_argument("Scenario: Wonham filter needs a Markov-chain prior");
      if (!deterministic_vol(market.vol)) throw std::invalid_argument("Scenario: Wonham filter needs deterministic volatility");
      break;
    case FilterChoice::PowerTilt:
      if (!discrete && !gaussian) throw std::invalid_argument("Scenario: power tilt needs a discrete or Gaussian prior");
      if (!std::holds_alternative<PowerUtility>(utility)) {
        throw std::invalid_argument("Scenario: power tilt filter requires the power utility");
      }
      if (!deterministic_vol(market.vol)) throw std::invalid_argument("Scenario: power tilt needs deterministic volatility");
      break;
  }
  if (std::holds_alternative<PowerUtility>(utility)) {
    if (!discrete && !gaussian) throw std::invalid_argument("Scenario: power utility needs a discrete or Gaussian prior");
    if (!deterministic_vol(market.vol)) throw std::invalid_argument("Scenario: power utility needs deterministic volatility");
  }
}

std::uint64_t config_hash(const Json& config) {
  const std::string dump = config.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : dump) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

const char* artifact_version() { return "1.0.0"; }

// ---------------------------------------------------------------------------
// FilterRunner

struct FilterRunner::Impl {
  MarketSpec market;
  FilterChoice choice = FilterChoice::Bayes;
  double dt = 0.0;
  int steps = 0;
  int order = 1;  // l when the tilted prior is in play, 1 for plain Bayes

  bool det_vol = false;
  std::vector<Mat> q;  // Q(t_k) for deterministic vol

  LikelihoodState proto;         // prior support (Bayes mixture)
  std::optional<TiltedPrior> tilted;
  LikelihoodState tilted_proto;  // tilted support (power equivalence filter)

  // Scalar static fast path: constant sigma, constant atoms, n = 1.
  bool fast = false;
  Vec c1, c2, log_w;        // theta q, 1/2 theta^2 q, log prior mass
  Vec theta;                // atom values
  bool tilted_fast = false;
  Vec tc1, tc2, tlog_w, ttheta;

  std::optional<OrnsteinUhlenbeckPrior> ou;
  std::function<Mat(double)> sigma_t, q_t;
  std::optional<MarkovChainPrior> chain;

  std::vector<Mat> q_for(const SinglePath& path) const {
    if (det_vol) return q;
    return q_along_path(market, path, dt);
  }
};

namespace {

void make_fast_tables(const LikelihoodState& state, double q_value, Vec& c1, Vec& c2, Vec& log_w, Vec& theta) {
  const auto d = static_cast<Eigen::Index>(state.size());
  c1.resize(d);
  c2.resize(d);
  log_w.resize(d);
  theta.resize(d);
  for (Eigen::Index i = 0; i < d; ++i) {
    const double th = state.support[static_cast<std::size_t>(i)].value(0.0)[0];
    theta[i] = th;
    c1[i] = th * q_value;
    c2[i] = 0.5 * th * th * q_value;
    log_w[i] = state.weights[i] > 0.0 ? std::log(state.weights[i]) : -std::numeric_limits<double>::infinity();
  }
}

/// Posterior-mean path for the scalar static case without any indirection.
Mat fast_estimate_path(const Mat& excess, double dt, const Vec& c1, const Vec& c2, const Vec& log_w, const Vec& theta,
                       double inv_order) {
  const Eigen::Index rows = excess.rows();
  const Eigen::Index d = theta.size();
  Mat out(rows, 1);
  Vec logz = Vec::Zero(d);
  for (Eigen::Index k = 0; k < rows; ++k) {
    double best = -std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < d; ++i) best = std::max(best, log_w[i] + logz[i]);
    double num = 0.0, den = 0.0;
    for (Eigen::Index i = 0; i < d; ++i) {
      const double w = std::exp(log_w[i] + logz[i] - best);
      num += w * theta[i];
      den += w;
    }
    out(k, 0) = inv_order * num / den;
    if (k + 1 < rows) {
      const double d_excess = excess(k + 1, 0) - excess(k, 0);
      for (Eigen::Index i = 0; i < d; ++i) logz[i] += c1[i] * d_excess - c2[i] * dt;
    }
  }
  return out;
}

double fast_log_mixture_terminal(const Mat& excess, double dt, const Vec& c1, const Vec& c2, const Vec& log_w) {
  const Eigen::Index rows = excess.rows();
  const Eigen::Index d = c1.size();
  Vec logz = Vec::Zero(d);
  for (Eigen::Index k = 0; k + 1 < rows; ++k) {
    const double d_excess = excess(k + 1, 0) - excess(k, 0);
    for (Eigen::Index i = 0; i < d; ++i) logz[i] += c1[i] * d_excess - c2[i] * dt;
  }
  double best = -std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < d; ++i) best = std::max(best, log_w[i] + logz[i]);
  double acc = 0.0;
  for (Eigen::Index i = 0; i < d; ++i) acc += std::exp(log_w[i] + logz[i] - best);
  return best + std::log(acc);
}

}  // namespace

FilterRunner::FilterRunner(const Scenario& s) : impl_(std::make_unique<Impl>()) {
  Impl& im = *impl_;
  im.market = s.market;
  im.choice = s.filter;
  im.dt = s.dt;
  im.steps = grid_steps(s.market.horizon, s.dt);
  im.det_vol = deterministic_vol(s.market.vol);

  const VolSpec vol = s.market.vol;
  if (im.det_vol) {
    im.q.reserve(static_cast<std::size_t>(im.steps) + 1);
    for (int k = 0; k <= im.steps; ++k) im.q.push_back(q_of_sigma(vol_at(vol, k * s.dt)));
    im.sigma_t = [vol](double t) { return vol_at(vol, t); };
    im.q_t = [vol](double t) { return q_of_sigma(vol_at(vol, t)); };
  }

  const auto* discrete = std::get_if<DiscretePrior>(&s.market.prior);
  const auto* gaussian = std::get_if<GaussianStaticPrior>(&s.market.prior);
  const auto* ou = std::get_if<OrnsteinUhlenbeckPrior>(&s.market.prior);
  const auto* chain = std::get_if<MarkovChainPrior>(&s.market.prior);

  if (discrete != nullptr) {
    im.proto = make_likelihood_state(*discrete);
  } else if (gaussian != nullptr) {
    im.proto = make_likelihood_state_quadrature(*gaussian, 32);
  }

  const bool scalar_static = s.market.n_stocks == 1 && vol.kind == VolSpec::Kind::Constant &&
                             !im.proto.support.empty() && atoms_static(im.proto.support, s.market.horizon);
  if (scalar_static) {
    im.fast = true;
    make_fast_tables(im.proto, im.q.front()(0, 0), im.c1, im.c2, im.log_w, im.theta);
  }

  if (s.filter == FilterChoice::Kalman) {
    im.ou = ou != nullptr ? *ou : OrnsteinUhlenbeckPrior::static_gaussian(gaussian->mean, gaussian->cov);
  }
  if (s.filter == FilterChoice::Wonham) im.chain = *chain;

  const auto* power = std::get_if<PowerUtility>(&s.utility);
  if (power != nullptr && (discrete != nullptr || gaussian != nullptr) && im.det_vol) {
    im.tilted = build_tilted_prior(s.market.prior, im.q, s.dt, power->order);
    im.tilted_proto = make_tilted_likelihood_state(*im.tilted);
    im.order = power->order;
    if (s.market.n_stocks == 1 && vol.kind == VolSpec::Kind::Constant &&
        atoms_static(im.tilted_proto.support, s.market.horizon)) {
      im.tilted_fast = true;
      make_fast_tables(im.tilted_proto, im.q.front()(0, 0), im.tc1, im.tc2, im.tlog_w, im.ttheta);
    }
  }
}

FilterRunner::~FilterRunner() = default;
FilterRunner::FilterRunner(FilterRunner&&) noexcept = default;

Mat FilterRunner::estimates(const SinglePath& path) const {
  const Impl& im = *impl_;
  switch (im.choice) {
    case FilterChoice::Bayes:
      if (im.fast) return fast_estimate_path(path.excess, im.dt, im.c1, im.c2, im.log_w, im.theta, 1.0);
      return mixture_estimate_path(im.proto, im.q_for(path), path.excess, im.dt);
    case FilterChoice::PowerTilt: {
      if (!im.tilted) throw std::logic_error("FilterRunner: tilted prior missing");
      const double inv_l = 1.0 / im.order;
      if (im.tilted_fast) return fast_estimate_path(path.excess, im.dt, im.tc1, im.tc2, im.tlog_w, im.ttheta, inv_l);
      return Mat(mixture_estimate_path(im.tilted_proto, im.q_for(path), path.excess, im.dt) * inv_l);
    }
    case FilterChoice::Kalman:
      return kalman_estimate_path(*im.ou, im.sigma_t, im.q_t, path.excess, im.dt);
    case FilterChoice::Wonham: {
      const double sigma = im.sigma_t(0.0)(0, 0);
      const Mat probs = wonham_probability_path(*im.chain, path.excess, im.dt, sigma);
      Mat est(path.excess.rows(), 1);
      for (Eigen::Index k = 0; k < probs.rows(); ++k) {
        est(k, 0) = wonham_drift_estimate(probs.row(k).transpose(), *im.chain, k * im.dt, path.excess(k, 0));
      }
      return est;
    }
  }
  throw std::logic_error("FilterRunner: unknown filter");
}

double FilterRunner::zbar_mixture_terminal(const SinglePath& path) const {
  const Impl& im = *impl_;
  if (im.proto.support.empty()) {
    throw std::invalid_argument("zbar_mixture_terminal: needs a discrete or Gaussian-static prior");
  }
  if (im.fast) return std::exp(fast_log_mixture_terminal(path.excess, im.dt, im.c1, im.c2, im.log_w));
  LikelihoodState state = im.proto;
  const std::vector<Mat> q = im.q_for(path);
  for (int k = 0; k < im.steps; ++k) {
    const Vec d = (path.excess.row(k + 1) - path.excess.row(k)).transpose();
    likelihood_step(state, q[static_cast<std::size_t>(k)], d, im.dt);
  }
  return mixture_density(state);
}

double FilterRunner::zbar_exponential_terminal(const SinglePath& path) const {
  const Impl& im = *impl_;
  const Mat est = im.choice == FilterChoice::PowerTilt
                      ? Mat(im.fast ? fast_estimate_path(path.excess, im.dt, im.c1, im.c2, im.log_w, im.theta, 1.0)
                                    : mixture_estimate_path(im.proto, im.q_for(path), path.excess, im.dt))
                      : estimates(path);
  const Vec zbar = zbar_exponential(est, im.q_for(path), path.excess, im.dt);
  return zbar[zbar.size() - 1];
}

double FilterRunner::zbar_terminal(const SinglePath& path) const {
  if (!impl_->proto.support.empty()) return zbar_mixture_terminal(path);
  return zbar_exponential_terminal(path);
}

const TiltedPrior* FilterRunner::tilted() const { return impl_->tilted ? &*impl_->tilted : nullptr; }

const std::vector<Mat>& FilterRunner::q_grid() const {
  if (!impl_->det_vol) throw std::logic_error("FilterRunner: no shared Q grid for path-dependent volatility");
  return impl_->q;
}

// ---------------------------------------------------------------------------
// Scenario runs

namespace {

struct StrategyConfig {
  bool trades = false;
  double delta = 0.0;
  double scale = 1.0;
};

StrategyConfig strategy_config(const UtilitySpec& utility) {
  if (const auto* log_u = std::get_if<LogUtility>(&utility)) return {true, log_u->delta, 1.0};
  if (const auto* pow_u = std::get_if<PowerUtility>(&utility)) return {true, 0.0, static_cast<double>(pow_u->order)};
  return {false, 0.0, 1.0};
}

/// lambda_hat for the scenario; uses closed forms (log, power-with-G) and
/// falls back to bisection on independent P* samples.
double lambda_for(const Scenario& s, const FilterRunner& fr) {
  if (const auto* log_u = std::get_if<LogUtility>(&s.utility)) {
    return 1.0 / (s.market.initial_wealth + log_u->delta);
  }
  if (std::holds_alternative<PowerUtility>(s.utility) && fr.tilted() != nullptr) {
    return solve_lambda(s.utility, Vec(), s.market.initial_wealth, fr.tilted()->normalizer);
  }
  const std::size_t n = std::min<std::size_t>(s.n_paths, 20000);
  Vec samples(static_cast<Eigen::Index>(n));
  for (std::size_t p = 0; p < n; ++p) {
    const SinglePath path = simulate_one_path(s.market, s.dt, s.seed ^ 0x9e3779b97f4a7c15ULL, p, Measure::Pstar);
    samples[static_cast<Eigen::Index>(p)] = fr.zbar_terminal(path);
  }
  return solve_lambda(s.utility, samples, s.market.initial_wealth);
}

double quantile(std::vector<double>& sorted_in_place, double q) {
  std::sort(sorted_in_place.begin(), sorted_in_place.end());
  const auto idx = static_cast<std::size_t>(q * (static_cast<double>(sorted_in_place.size()) - 1.0));
  return sorted_in_place[idx];
}

Json estimate_json(const McEstimate& e) {
  return Json{{"label", e.label}, {"mean", e.mean}, {"se", e.se}, {"n", e.n}};
}

}  // namespace

Json run_scenario(const Scenario& s, const std::string& out_dir, const std::string& format) {
  s.validate();
  std::filesystem::create_directories(out_dir);
  const FilterRunner fr(s);
  const StrategyConfig cfg = strategy_config(s.utility);
  const double x0 = s.market.initial_wealth;
  const double lambda = lambda_for(s, fr);

  RunningStats eu_stats, budget_stats;
  std::vector<double> rep_errors;
  rep_errors.reserve(s.n_paths);
  std::vector<WealthTrace> sample_traces;
  const std::size_t n_trace = std::min<std::size_t>(s.n_paths, 8);

  for (std::size_t p = 0; p < s.n_paths; ++p) {
    const SinglePath path = simulate_one_path(s.market, s.dt, s.seed, p, Measure::P);
    const double zbar = fr.zbar_terminal(path);
    const double xi = optimal_claim(s.utility, lambda, zbar);
    if (cfg.trades) {
      const Mat est = fr.estimates(path);
      WealthTrace trace = run_myopic_strategy(s.market, path, s.dt, est, cfg.delta, cfg.scale);
      eu_stats.add(utility_value(s.utility, trace.xtilde[trace.xtilde.size() - 1]));
      rep_errors.push_back(std::abs(trace.xtilde[trace.xtilde.size() - 1] - xi));
      if (p < n_trace) sample_traces.push_back(std::move(trace));
    }
  }
  for (std::size_t p = 0; p < s.n_paths; ++p) {
    const SinglePath path = simulate_one_path(s.market, s.dt, s.seed, p, Measure::Pstar);
    budget_stats.add(optimal_claim(s.utility, lambda, fr.zbar_terminal(path)));
  }

  Json report;
  report["version"] = artifact_version();
  report["seed"] = s.seed;
  report["config_hash"] = config_hash(s.source.is_null() ? Json::object() : s.source);
  report["lambda_hat"] = lambda;
  const McEstimate budget = budget_stats.estimate("budget_mean_claim");
  report["budget"] = estimate_json(budget);
  report["budget"]["target"] = x0;
  report["budget"]["within_3se"] = std::abs(budget.mean - x0) <= 3.0 * budget.se;
  if (cfg.trades) {
    report["expected_utility"] = estimate_json(eu_stats.estimate("expected_utility"));
    std::vector<double> errs = rep_errors;
    Json rep;
    rep["mean"] = std::accumulate(errs.begin(), errs.end(), 0.0) / static_cast<double>(errs.size());
    rep["p50"] = quantile(errs, 0.5);
    rep["p90"] = quantile(errs, 0.9);
    rep["p99"] = quantile(errs, 0.99);
    report["replication_error"] = rep;
  }
  if (fr.tilted() != nullptr) report["tilt_normalizer"] = fr.tilted()->normalizer;

  if (!sample_traces.empty()) {
    std::ofstream os(out_dir + "/wealth_traces.csv");
    write_wealth_trace_csv(os, sample_traces, s.dt);
  }
  if (format == "csv") {
    std::ofstream os(out_dir + "/report.csv");
    os << "key,value\n";
    const Json flat = report.flatten();
    for (const auto& [key, value] : flat.items()) {
      os << key << ',' << (value.is_number() ? format_double(value.get<double>()) : value.dump()) << "\n";
    }
  } else {
    std::ofstream os(out_dir + "/report.json");
    os << report.dump(2) << "\n";
  }
  return report;
}

// ---------------------------------------------------------------------------
// Identity checks

namespace {

IdentityResult check_zbar_martingale(const Scenario& s) {
  const FilterRunner fr(s);
  RunningStats stats;
  for (std::size_t p = 0; p < s.n_paths; ++p) {
    stats.add(fr.zbar_terminal(simulate_one_path(s.market, s.dt, s.seed, p, Measure::Pstar)));
  }
  IdentityResult r;
  r.name = "zbar_martingale";
  r.lhs = stats.mean();
  r.rhs = 1.0;
  r.tolerance = 3.0 * stats.std_error();
  r.pass = std::abs(r.lhs - r.rhs) <= r.tolerance;
  r.details = {{"se", stats.std_error()}, {"n", stats.count()}};
  return r;
}

IdentityResult check_zbar_two_forms(const Scenario& s) {
  const FilterRunner fr(s);
  RunningStats gap;
  for (std::size_t p = 0; p < s.n_paths; ++p) {
    const SinglePath path = simulate_one_path(s.market, s.dt, s.seed, p, Measure::Pstar);
    const double mix = fr.zbar_mixture_terminal(path);
    const double expo = fr.zbar_exponential_terminal(path);
    gap.add(std::abs(mix - expo) / mix);
  }
  IdentityResult r;
  r.name = "zbar_two_forms";
  r.lhs = gap.mean();
  r.rhs = 0.0;
  r.tolerance = 1e-2;
  r.pass = r.lhs < r.tolerance;
  r.details = {{"se", gap.std_error()}, {"n", gap.count()}};
  return r;
}

IdentityResult check_eu_log(const Scenario& s) {
  const auto* log_u = std::get_if<LogUtility>(&s.utility);
  if (log_u == nullptr) throw std::invalid_argument("eu_log: scenario utility must be log");
  const FilterRunner fr(s);
  const double x0 = s.market.initial_wealth;
  RunningStats lhs_stats, rhs_stats, diff_stats;
  for (std::size_t p = 0; p < s.n_paths; ++p) {
    const SinglePath path = simulate_one_path(s.market, s.dt, s.seed, p, Measure::P);
    const Mat est = fr.estimates(path);
    const std::vector<Mat> q = deterministic_vol(s.market.vol) ? fr.q_grid() : q_along_path(s.market, path, s.dt);
    const WealthTrace trace = run_myopic_strategy(s.market, path, s.dt, est, log_u->delta, 1.0);
    double quad = 0.0;
    for (int k = 0; k < path.n_steps(); ++k) {
      const Vec a = est.row(k).transpose();
      quad += a.dot(q[static_cast<std::size_t>(k)] * a) * s.dt;
    }
    const double lhs = std::log(trace.xtilde[trace.xtilde.size() - 1] + log_u->delta);
    const double rhs = std::log(x0 + log_u->delta) + 0.5 * quad;
    lhs_stats.add(lhs);
    rhs_stats.add(rhs);
    diff_stats.add(lhs - rhs);
  }
  IdentityResult r;
  r.name = "eu_log";
  r.lhs = lhs_stats.mean();
  r.rhs = rhs_stats.mean();
  r.tolerance = 3.0 * diff_stats.std_error();
  r.pass = std::abs(diff_stats.mean()) <= r.tolerance;
  r.details = {{"lhs_se", lhs_stats.std_error()},
               {"rhs_se", rhs_stats.std_error()},
               {"paired_diff", diff_stats.mean()},
               {"paired_se", diff_stats.std_error()},
               {"n", diff_stats.count()}};
  return r;
}

IdentityResult check_eu_power(const Scenario& s) {
  const auto* pow_u = std::get_if<PowerUtility>(&s.utility);
  if (pow_u == nullptr) throw std::invalid_argument("eu_power: scenario utility must be power");
  if (s.filter != FilterChoice::PowerTilt) {
    throw std::invalid_argument("eu_power: the identity holds for the power-tilt filter strategy");
  }
  const FilterRunner fr(s);
  const double g = fr.tilted()->normalizer;
  const double du = pow_u->exponent();
  const double x0 = s.market.initial_wealth;
  RunningStats eu;
  for (std::size_t p = 0; p < s.n_paths; ++p) {
    const SinglePath path = simulate_one_path(s.market, s.dt, s.seed, p, Measure::P);
    const WealthTrace trace =
        run_myopic_strategy(s.market, path, s.dt, fr.estimates(path), 0.0, pow_u->order);
    eu.add(utility_value(s.utility, std::max(0.0, trace.xtilde[trace.xtilde.size() - 1])));
  }
  IdentityResult r;
  r.name = "eu_power";
  r.lhs = eu.mean();
  r.rhs = std::pow(x0, du) * std::pow(g, 1.0 - du) / du;
  r.tolerance = 3.0 * eu.std_error();
  r.pass = std::abs(r.lhs - r.rhs) <= r.tolerance;
  r.details = {{"se", eu.std_error()}, {"G", g}, {"n", eu.count()}};
  return r;
}

IdentityResult check_budget(const Scenario& s) {
  const FilterRunner fr(s);
  const double lambda = lambda_for(s, fr);
  RunningStats stats;
  for (std::size_t p = 0; p < s.n_paths; ++p) {
    const SinglePath path = simulate_one_path(s.market, s.dt, s.seed, p, Measure::Pstar);
    stats.add(optimal_claim(s.utility, lambda, fr.zbar_terminal(path)));
  }
  IdentityResult r;
  r.name = "budget";
  r.lhs = stats.mean();
  r.rhs = s.market.initial_wealth;
  r.tolerance = 3.0 * stats.std_error();
  r.pass = std::abs(r.lhs - r.rhs) <= r.tolerance;
  r.details = {{"se", stats.std_error()}, {"lambda_hat", lambda}, {"n", stats.count()}};
  return r;
}

IdentityResult check_ce_failure(const Scenario& s) {
  const auto* pow_u = std::get_if<PowerUtility>(&s.utility);
  if (pow_u == nullptr) throw std::invalid_argument("ce_failure: scenario utility must be power");
  Scenario bayes = s;
  bayes.filter = FilterChoice::Bayes;
  Scenario tilt = s;
  tilt.filter = FilterChoice::PowerTilt;
  const FilterRunner fr_bayes(bayes), fr_tilt(tilt);

  const int steps = grid_steps(s.market.horizon, s.dt);
  std::vector<int> checkpoints;
  for (int j = 1; j <= 6; ++j) checkpoints.push_back(j * steps / 8);

  const bool point_mass =
      std::holds_alternative<DiscretePrior>(s.market.prior) && std::get<DiscretePrior>(s.market.prior).atoms.size() == 1;

  std::size_t n_points = 0, n_exceed = 0;
  double max_diff = 0.0;
  for (std::size_t p = 0; p < s.n_paths; ++p) {
    const SinglePath path = simulate_one_path(s.market, s.dt, s.seed, p, Measure::P);
    const Mat est_b = fr_bayes.estimates(path);
    const Mat est_t = fr_tilt.estimates(path);
    for (int k : checkpoints) {
      const double diff = (est_b.row(k) - est_t.row(k)).cwiseAbs().maxCoeff();
      max_diff = std::max(max_diff, diff);
      ++n_points;
      if (diff > 1e-3) ++n_exceed;
    }
  }
  const double fraction = static_cast<double>(n_exceed) / static_cast<double>(n_points);
  IdentityResult r;
  r.name = "ce_failure";
  if (point_mass) {
    r.lhs = max_diff;
    r.rhs = 0.0;
    r.tolerance = 1e-12;
    r.pass = max_diff <= r.tolerance;
  } else {
    r.lhs = fraction;
    r.rhs = 1.0;
    r.tolerance = 0.01;  // at least 99% of sampled points must exceed 1e-3
    r.pass = fraction >= 0.99;
  }
  r.details = {{"fraction_exceeding_1e-3", fraction}, {"max_diff", max_diff}, {"points", n_points}};
  return r;
}

IdentityResult check_min_variance(const Scenario& s) {
  const FilterRunner fr(s);
  const int steps = grid_steps(s.market.horizon, s.dt);
  const std::vector<int> checkpoints = {steps / 2, steps};
  const Vec frozen = prior_mean_at_zero(s.market.prior, s.market.n_stocks);

  std::vector<RunningStats> mse_filter(2), gain_frozen(2), gain_zero(2);
  for (std::size_t p = 0; p < s.n_paths; ++p) {
    const SinglePath path = simulate_one_path(s.market, s.dt, s.seed, p, Measure::P);
    const Mat est = fr.estimates(path);
    for (std::size_t c = 0; c < checkpoints.size(); ++c) {
      const int k = checkpoints[c];
      const Vec truth = path.drift.row(k).transpose();
      const double e_f = (truth - est.row(k).transpose()).squaredNorm();
      const double e_m = (truth - frozen).squaredNorm();
      const double e_0 = truth.squaredNorm();
      mse_filter[c].add(e_f);
      gain_frozen[c].add(e_m - e_f);
      gain_zero[c].add(e_0 - e_f);
    }
  }
  bool pass = true;
  Json details = Json::array();
  for (std::size_t c = 0; c < checkpoints.size(); ++c) {
    const bool ok_m = gain_frozen[c].mean() >= 2.0 * gain_frozen[c].std_error();
    const bool ok_0 = gain_zero[c].mean() >= 2.0 * gain_zero[c].std_error();
    pass = pass && ok_m && ok_0;
    details.push_back({{"t", checkpoints[c] * s.dt},
                       {"mse_filter", mse_filter[c].mean()},
                       {"gain_vs_frozen", gain_frozen[c].mean()},
                       {"gain_vs_frozen_se", gain_frozen[c].std_error()},
                       {"gain_vs_zero", gain_zero[c].mean()},
                       {"gain_vs_zero_se", gain_zero[c].std_error()}});
  }
  IdentityResult r;
  r.name = "min_variance";
  r.lhs = mse_filter.back().mean();
  r.rhs = mse_filter.back().mean() + gain_frozen.back().mean();
  r.tolerance = 2.0 * gain_frozen.back().std_error();
  r.pass = pass;
  r.details = std::move(details);
  return r;
}

}  // namespace

const std::vector<std::string>& identity_names() {
  static const std::vector<std::string> names = {"zbar_martingale", "zbar_two_forms", "eu_log", "eu_power",
                                                 "budget",          "ce_failure",     "min_variance"};
  return names;
}

IdentityResult verify_identity(const std::string& name, const Scenario& s) {
  s.validate();
  if (name == "zbar_martingale") return check_zbar_martingale(s);
  if (name == "zbar_two_forms") return check_zbar_two_forms(s);
  if (name == "eu_log") return check_eu_log(s);
  if (name == "eu_power") return check_eu_power(s);
  if (name == "budget") return check_budget(s);
  if (name == "ce_failure") return check_ce_failure(s);
  if (name == "min_variance") return check_min_variance(s);
  throw std::invalid_argument("verify_identity: unknown identity '" + name + "'");
}

// ---------------------------------------------------------------------------
// Convergence study

Json convergence_study(const Scenario& s, std::vector<double> dt_levels) {
  if (dt_levels.size() < 3) throw std::invalid_argument("convergence_study: need at least 3 dt levels");
  std::sort(dt_levels.begin(), dt_levels.end(), std::greater<>());
  const double fine = dt_levels.back();
  for (double lvl : dt_levels) {
    grid_steps(s.market.horizon, lvl);
    const double ratio = lvl / fine;
    if (std::abs(ratio - std::llround(ratio)) > 1e-9) {
      throw std::invalid_argument("convergence_study: levels must be integer multiples of the finest dt");
    }
  }
  const double delta = std::holds_alternative<LogUtility>(s.utility) ? std::get<LogUtility>(s.utility).delta : 0.0;
  const double x0 = s.market.initial_wealth;

  std::vector<RunningStats> rep(dt_levels.size()), forms(dt_levels.size()), zero_ctrl(dt_levels.size());
  std::vector<FilterRunner> runners;
  std::vector<Scenario> level_scenarios;
  for (double lvl : dt_levels) {
    Scenario sl = s;
    sl.dt = lvl;
    level_scenarios.push_back(sl);
    runners.emplace_back(sl);
  }

  for (std::size_t p = 0; p < s.n_paths; ++p) {
    const SinglePath fine_path = simulate_one_path(s.market, fine, s.seed, p, Measure::P);
    for (std::size_t l = 0; l < dt_levels.size(); ++l) {
      const auto stride = static_cast<int>(std::llround(dt_levels[l] / fine));
      const int coarse_steps = fine_path.n_steps() / stride;
      SinglePath coarse;
      coarse.excess = Mat(coarse_steps + 1, s.market.n_stocks);
      coarse.rates = Vec(coarse_steps + 1);
      coarse.brownian = Mat::Zero(coarse_steps, s.market.n_stocks);
      coarse.drift = Mat(coarse_steps + 1, s.market.n_stocks);
      for (int k = 0; k <= coarse_steps; ++k) {
        coarse.excess.row(k) = fine_path.excess.row(k * stride);
        coarse.rates[k] = fine_path.rates[k * stride];
        coarse.drift.row(k) = fine_path.drift.row(k * stride);
      }
      const FilterRunner& fr = runners[l];
      const Mat est = fr.estimates(coarse);
      const WealthTrace trace = run_myopic_strategy(s.market, coarse, dt_levels[l], est, delta, 1.0);
      const double zbar_mix = fr.zbar_mixture_terminal(coarse);
      const double target = (x0 + delta) * zbar_mix - delta;
      rep[l].add(std::abs(trace.xtilde[trace.xtilde.size() - 1] - target));
      forms[l].add(std::abs(zbar_mix - fr.zbar_exponential_terminal(coarse)) / zbar_mix);
      const WealthTrace zero_trace =
          run_myopic_strategy(s.market, coarse, dt_levels[l], Mat(Mat::Zero(coarse_steps + 1, s.market.n_stocks)),
                              delta, 1.0);
      zero_ctrl[l].add(std::abs(zero_trace.xtilde[zero_trace.xtilde.size() - 1] - x0));
    }
  }

  Json table = Json::array();
  for (std::size_t l = 0; l < dt_levels.size(); ++l) {
    Json row;
    row["dt"] = dt_levels[l];
    row["replication_error"] = rep[l].mean();
    row["zbar_form_gap"] = forms[l].mean();
    row["zero_strategy_error"] = zero_ctrl[l].mean();
    if (l > 0) {
      row["replication_order"] = std::log2(rep[l - 1].mean() / rep[l].mean());
      row["zbar_form_order"] = std::log2(forms[l - 1].mean() / forms[l].mean());
    }
    table.push_back(row);
  }
  Json out;
  out["levels"] = table;
  out["paths"] = s.n_paths;
  out["seed"] = s.seed;
  return out;
}

// ---------------------------------------------------------------------------
// PDE replication

Json replicate_report(const Scenario& s, const Json& pde_config, const std::string& out_dir) {
  s.validate();
  const auto* discrete = std::get_if<DiscretePrior>(&s.market.prior);
  if (discrete == nullptr) throw std::invalid_argument("replicate_report: FinitePaths embedding needs a discrete prior");
  if (!deterministic_vol(s.market.vol)) {
    throw std::invalid_argument("replicate_report: embedding needs deterministic volatility");
  }
  std::filesystem::create_directories(out_dir);

  const int points = pde_config.value("points", 201);
  const int fd_steps = pde_config.value("time_steps", grid_steps(s.market.horizon, s.dt));
  const double width_sds = pde_config.value("width_sds", 6.0);
  const std::size_t fk_inner = pde_config.value("fk_inner", std::size_t{100000});

  const MarkovEmbedding emb = build_embedding(s.market, EmbeddingVariant::FinitePaths);
  const FilterRunner fr(s);
  const double lambda = lambda_for(s, fr);
  const auto claim = [&](const Vec& y) { return claim_value(s.utility, std::max(emb.phi(y), 0.0), lambda); };

  // Domain sized from the lognormal law of z(theta_i, T) under P*.
  const double T = s.market.horizon;
  const int d = emb.dimension;
  FdGrid grid;
  grid.lo = Vec(d);
  grid.hi = Vec(d);
  grid.shape.assign(static_cast<std::size_t>(d), points);
  {
    double qt = 0.0;
    const std::vector<Mat>& q = fr.q_grid();
    for (int k = 0; k < grid_steps(T, s.dt); ++k) qt += q[static_cast<std::size_t>(k)](0, 0) * s.dt;
    for (int i = 0; i < d; ++i) {
      const double th = discrete->atoms[static_cast<std::size_t>(i)].value(0.0)[0];
      const double sd = std::abs(th) * std::sqrt(qt);
      if (sd == 0.0) {
        grid.lo[i] = 0.5;
        grid.hi[i] = 1.5;
      } else {
        const double mu = -0.5 * th * th * qt;
        grid.lo[i] = std::exp(mu - width_sds * sd);
        grid.hi[i] = std::exp(mu + width_sds * sd);
      }
    }
  }

  // Replication paths and their embedded states, fixed before the backward
  // sweep so each time slice can be sampled as it is produced.
  const int steps = grid_steps(T, s.dt);
  const auto n_rep = static_cast<std::size_t>(pde_config.value("paths", static_cast<int>(s.n_paths)));
  std::vector<SinglePath> paths(n_rep);
  std::vector<Mat> states(n_rep);
  std::size_t clamped = 0;
  for (std::size_t p = 0; p < n_rep; ++p) {
    paths[p] = simulate_one_path(s.market, s.dt, s.seed, p, Measure::Pstar);
    states[p] = embed_along_path(emb, paths[p].excess, s.dt);
    for (Eigen::Index k = 0; k < states[p].rows(); ++k) {
      for (int i = 0; i < d; ++i) {
        const double v = states[p](k, i);
        if (v < grid.lo[i] || v > grid.hi[i]) {
          states[p](k, i) = std::clamp(v, grid.lo[i], grid.hi[i]);
          ++clamped;
        }
      }
    }
  }

  // pi rows are sampled at the FD time levels nearest to each path step.
  std::vector<Mat> pi(n_rep, Mat::Zero(steps, s.market.n_stocks));
  const double fd_dt = T / fd_steps;
  double fd_value_y0 = 0.0;
  const FdObserver observer = [&](int k, double t, const std::vector<double>& slice) {
    if (k == 0) fd_value_y0 = fd_interpolate(grid, slice, emb.y0);
    for (std::size_t p = 0; p < n_rep; ++p) {
      // Path steps whose left point falls in [t, t + fd_dt).
      const int k_lo = static_cast<int>(std::ceil(t / s.dt - 1e-9));
      const int k_hi = std::min(steps - 1, static_cast<int>(std::ceil((t + fd_dt) / s.dt - 1e-9)) - 1);
      for (int kp = k_lo; kp <= k_hi; ++kp) {
        const Vec y = states[p].row(kp).transpose();
        pi[p].row(kp) = extract_strategy(emb, grid, slice, y, t, 1.0).transpose();
      }
    }
  };
  const FdSolution sol = solve_cauchy_fd(emb, claim, grid, fd_steps, observer);
  write_fd_solution(out_dir + "/value_function", sol);

  RunningStats rep_err;
  for (std::size_t p = 0; p < n_rep; ++p) {
    double xtilde = s.market.initial_wealth;
    for (int k = 0; k < steps; ++k) {
      const Vec dre = (paths[p].excess.row(k + 1) - paths[p].excess.row(k)).transpose();
      xtilde += pi[p].row(k).dot(dre);
    }
    const double xi = optimal_claim(s.utility, lambda, fr.zbar_terminal(paths[p]));
    rep_err.add(std::abs(xtilde - xi));
  }

  const McEstimate fk = feynman_kac_value(emb, claim, emb.y0, 0.0, s.dt, fk_inner, s.seed ^ 0xdeadbeefULL);

  Json report;
  report["version"] = artifact_version();
  report["seed"] = s.seed;
  report["lambda_hat"] = lambda;
  report["grid_points"] = points;
  report["fd_time_steps"] = fd_steps;
  report["replication_error"] = estimate_json(rep_err.estimate("mean_abs_terminal_error"));
  report["replication_error"]["budget_fraction"] = rep_err.mean() / s.market.initial_wealth;
  report["fd_value_y0"] = fd_value_y0;
  report["fk_value_y0"] = estimate_json(fk);
  report["fd_fk_gap"] = std::abs(fd_value_y0 - fk.mean);
  report["fd_fk_within_band"] = std::abs(fd_value_y0 - fk.mean) <= 3.0 * fk.se + 1e-3;
  report["clamped_states"] = clamped;
  std::ofstream os(out_dir + "/replication_report.json");
  os << report.dump(2) << "\n";
  return report;
}

}  // namespace hiddendrift

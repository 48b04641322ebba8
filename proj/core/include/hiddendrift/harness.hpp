#pragma once

#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "hiddendrift/filters.hpp"
#include "hiddendrift/market.hpp"
#include "hiddendrift/strategies.hpp"

namespace hiddendrift {

using Json = nlohmann::json;

enum class FilterChoice { Bayes, Kalman, Wonham, PowerTilt };

/// One fully specified experiment: market, preferences, filter, grid, seed.
struct Scenario {
  MarketSpec market;
  UtilitySpec utility = LogUtility{0.0};
  FilterChoice filter = FilterChoice::Bayes;
  double dt = 1.0 / 1024.0;
  std::size_t n_paths = 10000;
  std::uint64_t seed = 1;
  Json source;  // the config this scenario was built from (hashed into reports)

  /// Checks component compatibility (e.g. Wonham needs a chain prior) before
  /// any simulation; throws std::invalid_argument with a structured message.
  void validate() const;
};

/// Parses a scenario from the documented JSON config (see docs/config-schema.md).
Scenario scenario_from_json(const Json& config);
Scenario load_scenario(const std::string& file);

/// FNV-1a hash of the canonical config dump, embedded in every report.
std::uint64_t config_hash(const Json& config);
const char* artifact_version();

/// Drift estimation along realized paths, specialized per filter choice and
/// prepared once per scenario (quadrature nodes, Riccati grid, tilted prior).
class FilterRunner {
 public:
  explicit FilterRunner(const Scenario& s);
  ~FilterRunner();
  FilterRunner(FilterRunner&&) noexcept;

  /// ahat(t_k) rows on the path grid, (K+1) x n.
  Mat estimates(const SinglePath& path) const;
  /// Zbar(T): prior mixture where the prior is discrete/Gaussian-static,
  /// exponential representation driven by the filter otherwise.
  double zbar_terminal(const SinglePath& path) const;
  /// Both representations, available for discrete/Gaussian-static priors.
  double zbar_mixture_terminal(const SinglePath& path) const;
  double zbar_exponential_terminal(const SinglePath& path) const;
  /// Tilted prior (power-utility runs only), else nullptr.
  const TiltedPrior* tilted() const;
  /// Q(t_k) grid shared across paths (deterministic volatility only).
  const std::vector<Mat>& q_grid() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

struct IdentityResult {
  std::string name;
  bool pass = false;
  double lhs = 0.0;
  double rhs = 0.0;
  double tolerance = 0.0;
  Json details;
};

const std::vector<std::string>& identity_names();

/// Checks one of the named identities on the scenario and returns both sides
/// with standard errors; statistical identities use 3-SE bands, pathwise ones
/// the stated deterministic tolerances.
IdentityResult verify_identity(const std::string& name, const Scenario& s);

/// Simulates, filters, trades, and writes wealth traces plus a JSON report
/// (lambda_hat, expected utility, replication-error quantiles, budget check).
Json run_scenario(const Scenario& s, const std::string& out_dir, const std::string& format);

/// Coupled refinement study across dt levels (Brownian increments aggregated
/// from the finest grid); reports per-level errors and empirical orders.
Json convergence_study(const Scenario& s, std::vector<double> dt_levels);

/// PDE-based replication on the FinitePaths embedding: finite-difference
/// value function, strategy extraction along simulated paths, and the
/// Feynman-Kac cross-check at y0.
Json replicate_report(const Scenario& s, const Json& pde_config, const std::string& out_dir);

}  // namespace hiddendrift

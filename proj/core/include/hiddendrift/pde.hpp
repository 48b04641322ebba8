#pragma once

#include <functional>
#include <vector>

#include "hiddendrift/common.hpp"
#include "hiddendrift/market.hpp"
#include "hiddendrift/rng.hpp"

namespace hiddendrift {

/// Finite-dimensional Markov state y with dy = f dt + b dRe, Zbar = phi(y(T)).
struct MarkovEmbedding {
  int dimension = 0;  // M
  int n_stocks = 0;
  double horizon = 0.0;
  Vec y0;
  std::function<Vec(const Vec&, double)> f;     // drift f(y, t)
  std::function<Mat(const Vec&, double)> b;     // M x n loading on dRe
  std::function<Mat(const Vec&, double)> bbar;  // M x n diffusion b * sigma
  std::function<double(const Vec&)> phi;        // Zbar = phi(y(T))
  bool time_homogeneous = false;                // coefficients independent of t
};

enum class EmbeddingVariant { KalmanOU, FinitePaths, MarkovChain };

/// Builds the Markov embedding for the prior in `spec`.
/// KalmanOU: state (yhat, y_{n+1}, y_{n+2}), phi(y) = y_{n+2} exp(y_{n+1}),
///   with the Riccati covariance precomputed on `riccati_steps` substeps and
///   interpolated into the coefficients.
/// FinitePaths: state y_i = z(theta_i, t), phi(y) = p^T y, drift-free.
/// MarkovChain: state (posterior probs, Re, Zbar), phi(y) = y_{d+2}, with the
///   probability coordinates passed through a [0,1] clamp inside the
///   coefficients to keep linear growth.
/// Requires a deterministic (constant or time-only) volatility; throws on a
/// prior/variant mismatch.
MarkovEmbedding build_embedding(const MarketSpec& spec, EmbeddingVariant variant, int riccati_steps = 4096);

/// Advances y along a realized excess-return path (Euler, left-point).
/// Returns the (K+1) x M matrix of states on the path grid.
Mat embed_along_path(const MarkovEmbedding& emb, const Mat& excess, double dt);

/// Feynman-Kac value V(y, t) = E_*[C(y(T)) | y(t) = y], Euler simulation of
/// the driftless-Re dynamics dy = f dt + bbar dw*.
McEstimate feynman_kac_value(const MarkovEmbedding& emb, const std::function<double(const Vec&)>& terminal,
                             const Vec& y, double t, double dt, std::size_t n_inner, std::uint64_t seed);

/// Value and gradient by common-random-number central differences with
/// step h_j = 1e-3 (1 + |y|).
struct FkValueGradient {
  McEstimate value;
  Vec gradient;
  Vec gradient_se;
};
FkValueGradient feynman_kac_gradient(const MarkovEmbedding& emb, const std::function<double(const Vec&)>& terminal,
                                     const Vec& y, double t, double dt, std::size_t n_inner, std::uint64_t seed);

/// Uniform rectangular grid for the finite-difference solver (M <= 3).
struct FdGrid {
  Vec lo;
  Vec hi;
  std::vector<int> shape;  // points per dimension, >= 4 each

  int dims() const { return static_cast<int>(shape.size()); }
  std::size_t size() const;
  double spacing(int dim) const { return (hi[dim] - lo[dim]) / (shape[static_cast<std::size_t>(dim)] - 1); }
  /// Coordinates of the flattened index (row-major, last dim fastest).
  Vec point(std::size_t flat) const;
  bool contains(const Vec& y) const;
};

/// Multilinear interpolation of a slice; throws when y is outside the grid.
double fd_interpolate(const FdGrid& grid, const std::vector<double>& slice, const Vec& y);

/// Gradient of the interpolant by central differences with step = spacing.
Vec fd_gradient(const FdGrid& grid, const std::vector<double>& slice, const Vec& y);

struct FdSolution {
  FdGrid grid;
  double horizon = 0.0;
  int time_steps = 0;
  std::vector<double> terminal_slice;  // V(., T) = C
  std::vector<double> initial_slice;   // V(., 0)
};

/// Called once per time level during the backward sweep, from k = K down to 0,
/// with t = k * horizon / K and the V(., t) slice.
using FdObserver = std::function<void(int, double, const std::vector<double>&)>;

/// Solves dV/dt + (dV/dy)^T f + 1/2 Tr(d2V/dy2 bbar bbar^T) = 0, V(., T) = C,
/// by backward time-stepping: implicit (tridiagonal) in each dimension's
/// drift and diagonal diffusion, explicit in the cross-derivative terms.
/// Far-field boundary: zero second derivative with one-sided drift.
/// Throws when the explicit cross-term part violates its stability bound,
/// naming a suggested dt.
FdSolution solve_cauchy_fd(const MarkovEmbedding& emb, const std::function<double(const Vec&)>& terminal,
                           const FdGrid& grid, int time_steps, const FdObserver& observer = {});

/// Replicating strategy pi = B b(y, t)^T dV/dy from a value-slice gradient.
Vec extract_strategy(const MarkovEmbedding& emb, const FdGrid& grid, const std::vector<double>& slice, const Vec& y,
                     double t, double bond);

}  // namespace hiddendrift

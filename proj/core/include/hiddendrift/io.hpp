#pragma once

#include <ostream>
#include <string>

#include "hiddendrift/market.hpp"
#include "hiddendrift/pde.hpp"
#include "hiddendrift/strategies.hpp"

namespace hiddendrift {

/// Full-precision decimal rendering of a double (round-trippable).
std::string format_double(double x);

/// One row per (path, time): path, t, excess components, rate, and prices
/// when present.
void write_path_bundle_csv(std::ostream& os, const PathBundle& bundle);

/// Compact binary cache with a magic/version header; round-trips exactly.
void write_path_bundle_binary(const std::string& file, const PathBundle& bundle);
PathBundle read_path_bundle_binary(const std::string& file);

/// Filter trace rows: path, t, Zbar, posterior weights / estimate components.
void write_filter_trace_header(std::ostream& os, int n_columns, const std::string& column_prefix);
void write_filter_trace_row(std::ostream& os, std::size_t path, double t, double zbar, const Vec& columns);

/// Wealth traces: path, t, pi components, X, X~.
void write_wealth_trace_csv(std::ostream& os, const std::vector<WealthTrace>& traces, double dt);

/// FD grid export: raw little-endian doubles (terminal then initial slice)
/// plus a JSON metadata sidecar (bounds, spacing, times).
void write_fd_solution(const std::string& file_stem, const FdSolution& sol);

}  // namespace hiddendrift

#include "hiddendrift/io.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>

#include <json.hpp>

namespace hiddendrift {

std::string format_double(double x) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

void write_path_bundle_csv(std::ostream& os, const PathBundle& bundle) {
  const int n = bundle.n_stocks;
  os << "path,t";
  for (int i = 0; i < n; ++i) os << ",excess_" << (i + 1);
  os << ",rate";
  const bool with_prices = !bundle.paths.empty() && bundle.paths.front().prices.size() > 0;
  if (with_prices) {
    for (int i = 0; i < n; ++i) os << ",price_" << (i + 1);
  }
  os << "\n";
  for (std::size_t p = 0; p < bundle.paths.size(); ++p) {
    const SinglePath& path = bundle.paths[p];
    for (int k = 0; k <= path.n_steps(); ++k) {
      os << p << ',' << format_double(k * bundle.dt);
      for (int i = 0; i < n; ++i) os << ',' << format_double(path.excess(k, i));
      os << ',' << format_double(path.rates[k]);
      if (with_prices) {
        for (int i = 0; i < n; ++i) os << ',' << format_double(path.prices(k, i));
      }
      os << "\n";
    }
  }
}

namespace {

constexpr char kMagic[8] = {'H', 'D', 'B', 'U', 'N', 'D', 'L', '\x01'};

template <typename T>
void put(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  return v;
}

void put_matrix(std::ostream& os, const Mat& m) {
  put<std::int64_t>(os, m.rows());
  put<std::int64_t>(os, m.cols());
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) put<double>(os, m(i, j));
  }
}

Mat get_matrix(std::istream& is) {
  const auto rows = get<std::int64_t>(is);
  const auto cols = get<std::int64_t>(is);
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = get<double>(is);
  }
  return m;
}

}  // namespace

void write_path_bundle_binary(const std::string& file, const PathBundle& bundle) {
  std::ofstream os(file, std::ios::binary);
  if (!os) throw std::runtime_error("write_path_bundle_binary: cannot open " + file);
  os.write(kMagic, sizeof(kMagic));
  put<double>(os, bundle.dt);
  put<double>(os, bundle.horizon);
  put<std::int32_t>(os, bundle.n_stocks);
  put<std::int32_t>(os, bundle.measure == Measure::P ? 0 : 1);
  put<std::uint64_t>(os, bundle.seed);
  put<std::uint64_t>(os, bundle.paths.size());
  for (const SinglePath& p : bundle.paths) {
    put_matrix(os, p.excess);
    put_matrix(os, Mat(p.rates.transpose()));
    put_matrix(os, p.brownian);
    put_matrix(os, p.drift);
    put_matrix(os, p.prices);
    put<std::int32_t>(os, p.atom);
    put<std::uint64_t>(os, p.chain.size());
    for (int c : p.chain) put<std::int32_t>(os, c);
  }
}

PathBundle read_path_bundle_binary(const std::string& file) {
  std::ifstream is(file, std::ios::binary);
  if (!is) throw std::runtime_error("read_path_bundle_binary: cannot open " + file);
  char magic[8];
  is.read(magic, sizeof(magic));
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw std::runtime_error("read_path_bundle_binary: bad magic or version in " + file);
  }
  PathBundle bundle;
  bundle.dt = get<double>(is);
  bundle.horizon = get<double>(is);
  bundle.n_stocks = get<std::int32_t>(is);
  bundle.measure = get<std::int32_t>(is) == 0 ? Measure::P : Measure::Pstar;
  bundle.seed = get<std::uint64_t>(is);
  const auto n_paths = get<std::uint64_t>(is);
  bundle.paths.resize(n_paths);
  for (SinglePath& p : bundle.paths) {
    p.excess = get_matrix(is);
    p.rates = get_matrix(is).transpose();
    p.brownian = get_matrix(is);
    p.drift = get_matrix(is);
    p.prices = get_matrix(is);
    p.atom = get<std::int32_t>(is);
    p.chain.resize(get<std::uint64_t>(is));
    for (int& c : p.chain) c = get<std::int32_t>(is);
  }
  if (!is) throw std::runtime_error("read_path_bundle_binary: truncated file " + file);
  return bundle;
}

void write_filter_trace_header(std::ostream& os, int n_columns, const std::string& column_prefix) {
  os << "path,t,zbar";
  for (int i = 0; i < n_columns; ++i) os << ',' << column_prefix << '_' << (i + 1);
  os << "\n";
}

void write_filter_trace_row(std::ostream& os, std::size_t path, double t, double zbar, const Vec& columns) {
  os << path << ',' << format_double(t) << ',' << format_double(zbar);
  for (Eigen::Index i = 0; i < columns.size(); ++i) os << ',' << format_double(columns[i]);
  os << "\n";
}

void write_wealth_trace_csv(std::ostream& os, const std::vector<WealthTrace>& traces, double dt) {
  const int n = traces.empty() ? 0 : static_cast<int>(traces.front().pi.cols());
  os << "path,t";
  for (int i = 0; i < n; ++i) os << ",pi_" << (i + 1);
  os << ",X,X_tilde\n";
  for (std::size_t p = 0; p < traces.size(); ++p) {
    const WealthTrace& tr = traces[p];
    for (Eigen::Index k = 0; k < tr.xtilde.size(); ++k) {
      os << p << ',' << format_double(static_cast<double>(k) * dt);
      for (int i = 0; i < n; ++i) {
        // No position is held out of the final node.
        os << ',' << format_double(k < tr.pi.rows() ? tr.pi(k, i) : 0.0);
      }
      os << ',' << format_double(tr.wealth[k]) << ',' << format_double(tr.xtilde[k]) << "\n";
    }
  }
}

void write_fd_solution(const std::string& file_stem, const FdSolution& sol) {
  {
    std::ofstream os(file_stem + ".bin", std::ios::binary);
    if (!os) throw std::runtime_error("write_fd_solution: cannot open " + file_stem + ".bin");
    os.write(reinterpret_cast<const char*>(sol.terminal_slice.data()),
             static_cast<std::streamsize>(sol.terminal_slice.size() * sizeof(double)));
    os.write(reinterpret_cast<const char*>(sol.initial_slice.data()),
             static_cast<std::streamsize>(sol.initial_slice.size() * sizeof(double)));
  }
  nlohmann::json meta;
  meta["horizon"] = sol.horizon;
  meta["time_steps"] = sol.time_steps;
  meta["shape"] = sol.grid.shape;
  meta["slices"] = {"terminal", "initial"};
  for (int j = 0; j < sol.grid.dims(); ++j) {
    meta["lo"].push_back(sol.grid.lo[j]);
    meta["hi"].push_back(sol.grid.hi[j]);
    meta["spacing"].push_back(sol.grid.spacing(j));
  }
  std::ofstream os(file_stem + ".json");
  if (!os) throw std::runtime_error("write_fd_solution: cannot open " + file_stem + ".json");
  os << meta.dump(2) << "\n";
}

}  // namespace hiddendrift

#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>

#include "hiddendrift/io.hpp"
#include "hiddendrift/pde.hpp"
#include "test_helpers.hpp"

using namespace hiddendrift;
using hdtest::discrete_market;

TEST_CASE("format_double round-trips through text") {
  for (double x : {0.1, 1.0 / 3.0, 1e-300, -2.5e17, 0.0, 1024.0}) {
    CHECK(std::stod(format_double(x)) == x);
  }
}

TEST_CASE("path-bundle binary cache round-trips exactly") {
  MarketSpec spec = discrete_market({-0.1, 0.0, 0.2}, {0.25, 0.5, 0.25});
  spec.with_prices = true;
  spec.initial_prices = Vec::Constant(1, 100.0);
  const PathBundle bundle = simulate_paths(spec, 1.0 / 32.0, 4, 17, Measure::P);
  const std::string file = "bundle_roundtrip.bin";
  write_path_bundle_binary(file, bundle);
  const PathBundle back = read_path_bundle_binary(file);

  CHECK(back.dt == bundle.dt);
  CHECK(back.horizon == bundle.horizon);
  CHECK(back.n_stocks == bundle.n_stocks);
  CHECK(back.seed == bundle.seed);
  CHECK(back.measure == bundle.measure);
  REQUIRE(back.paths.size() == bundle.paths.size());
  for (std::size_t p = 0; p < bundle.paths.size(); ++p) {
    CHECK(back.paths[p].excess == bundle.paths[p].excess);
    CHECK(back.paths[p].rates == bundle.paths[p].rates);
    CHECK(back.paths[p].brownian == bundle.paths[p].brownian);
    CHECK(back.paths[p].drift == bundle.paths[p].drift);
    CHECK(back.paths[p].prices == bundle.paths[p].prices);
    CHECK(back.paths[p].atom == bundle.paths[p].atom);
  }

  SUBCASE("bad magic is an error") {
    std::ofstream os("bundle_bad.bin", std::ios::binary);
    os << "NOTABNDL";
    os.close();
    CHECK_THROWS_WITH_AS((void)read_path_bundle_binary("bundle_bad.bin"), doctest::Contains("bad magic"),
                         std::runtime_error);
  }
  SUBCASE("truncation is an error") {
    std::ifstream is(file, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    std::ofstream os("bundle_trunc.bin", std::ios::binary);
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
    os.close();
    CHECK_THROWS_AS((void)read_path_bundle_binary("bundle_trunc.bin"), std::runtime_error);
  }
  SUBCASE("missing file is an error") {
    CHECK_THROWS_WITH_AS((void)read_path_bundle_binary("no_such_file.bin"), doctest::Contains("cannot open"),
                         std::runtime_error);
  }
}

TEST_CASE("path-bundle csv carries the documented columns") {
  MarketSpec spec = discrete_market({0.1}, {1.0});
  const PathBundle plain = simulate_paths(spec, 0.25, 2, 1, Measure::P);
  std::ostringstream os;
  write_path_bundle_csv(os, plain);
  std::istringstream is(os.str());
  std::string header;
  std::getline(is, header);
  CHECK(header == "path,t,excess_1,rate");
  int rows = 0;
  for (std::string line; std::getline(is, line);) ++rows;
  CHECK(rows == 2 * 5);  // 2 paths x (K+1) nodes at dt = 1/4

  spec.with_prices = true;
  spec.initial_prices = Vec::Constant(1, 100.0);
  const PathBundle priced = simulate_paths(spec, 0.25, 1, 1, Measure::P);
  std::ostringstream os2;
  write_path_bundle_csv(os2, priced);
  CHECK(os2.str().substr(0, os2.str().find('\n')) == "path,t,excess_1,rate,price_1");
}

TEST_CASE("filter trace rows are full precision") {
  std::ostringstream os;
  write_filter_trace_header(os, 2, "w");
  Vec w(2);
  w << 1.0 / 3.0, 2.0 / 3.0;
  write_filter_trace_row(os, 3, 0.5, 1.25, w);
  std::istringstream is(os.str());
  std::string header, row;
  std::getline(is, header);
  std::getline(is, row);
  CHECK(header == "path,t,zbar,w_1,w_2");
  CHECK(row.find("3,0.5,1.25,") == 0);
  CHECK(std::stod(row.substr(row.rfind(',') + 1)) == 2.0 / 3.0);
}

TEST_CASE("wealth trace csv has one row per grid node") {
  const MarketSpec spec = discrete_market({0.1}, {1.0});
  const double dt = 0.25;
  const SinglePath path = simulate_one_path(spec, dt, 1, 0, Measure::P);
  const Mat est = Mat::Constant(path.n_steps() + 1, 1, 0.1);
  const WealthTrace trace = run_myopic_strategy(spec, path, dt, est, 0.0, 1.0);
  std::ostringstream os;
  write_wealth_trace_csv(os, {trace}, dt);
  std::istringstream is(os.str());
  std::string header;
  std::getline(is, header);
  CHECK(header == "path,t,pi_1,X,X_tilde");
  int rows = 0;
  for (std::string line; std::getline(is, line);) ++rows;
  CHECK(rows == path.n_steps() + 1);
}

TEST_CASE("fd solution export writes the raw slices plus a sidecar") {
  const MarketSpec spec = discrete_market({0.1}, {1.0});
  const MarkovEmbedding emb = build_embedding(spec, EmbeddingVariant::FinitePaths);
  FdGrid grid;
  grid.lo = Vec::Constant(1, 0.5);
  grid.hi = Vec::Constant(1, 2.0);
  grid.shape = {11};
  const FdSolution sol = solve_cauchy_fd(emb, [](const Vec& y) { return y[0]; }, grid, 4);
  write_fd_solution("fd_export", sol);

  std::ifstream bin("fd_export.bin", std::ios::binary);
  REQUIRE(bin.good());
  bin.seekg(0, std::ios::end);
  CHECK(bin.tellg() == static_cast<std::streamoff>(2 * 11 * sizeof(double)));

  std::ifstream meta("fd_export.json");
  REQUIRE(meta.good());
  nlohmann::json j;
  meta >> j;
  CHECK(j.contains("lo"));
  CHECK(j.contains("hi"));
  CHECK(j.contains("shape"));
}

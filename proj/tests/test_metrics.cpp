#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>

#include "bt/metrics.hpp"
#include "bt/rng.hpp"

using namespace bt::metrics;

TEST_CASE("r2 reference points") {
  const std::vector<double> y = {1.0, 2.0, 3.0};
  CHECK(r2(y, y) == 1.0);
  CHECK(r2(y, {2.0, 2.0, 2.0}) == 0.0);  // constant mean prediction
  // SS_res = 8, SS_tot = 2
  CHECK(r2(y, {3.0, 2.0, 1.0}) == doctest::Approx(-3.0).epsilon(1e-15));
  CHECK_THROWS_AS(r2({5.0, 5.0, 5.0}, y), std::invalid_argument);
  CHECK_THROWS_AS(r2({1.0}, {1.0}), std::invalid_argument);
}

TEST_CASE("r2 is invariant under common affine maps") {
  bt::rng::Stream rs(31);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> y, yh;
    for (int i = 0; i < 17; ++i) {
      y.push_back(rs.next_gauss() * 3.0 + 1.0);
      yh.push_back(rs.next_gauss() * 3.0 + 1.0);
    }
    const double base = r2(y, yh);
    double scale = 0.0;
    while (std::fabs(scale) < 1e-3) scale = rs.next_gauss() * 5.0;
    const double shift = rs.next_gauss() * 10.0;
    std::vector<double> y2 = y, yh2 = yh;
    for (auto& v : y2) v = scale * v + shift;
    for (auto& v : yh2) v = scale * v + shift;
    CHECK(r2(y2, yh2) == doctest::Approx(base).epsilon(1e-9));
  }
}

TEST_CASE("nnse values and monotonicity") {
  CHECK(nnse(1.0) == 1.0);
  CHECK(nnse(0.0) == 0.5);
  CHECK(nnse(-3.0) == doctest::Approx(0.2).epsilon(1e-15));
  double prev = 0.0;
  for (double r = -50.0; r <= 1.0; r += 0.25) {
    const double v = nnse(r);
    CHECK(v > prev);
    CHECK(v <= 1.0);
    prev = v;
  }
  CHECK_THROWS_AS(nnse(1.5), std::invalid_argument);
}

TEST_CASE("seed statistics conventions") {
  DatasetScore s{"d", {1.0, 3.0}};
  CHECK(s.mean() == 2.0);
  CHECK(s.stdev() == doctest::Approx(std::sqrt(2.0)).epsilon(1e-15));  // n-1
}

TEST_CASE("aggregate over dataset means") {
  std::vector<DatasetScore> one = {{"a", {0.7, 0.7}}};
  const Aggregate a1 = aggregate(one);
  CHECK(a1.median == doctest::Approx(0.7));
  CHECK(a1.mean == doctest::Approx(0.7));
  CHECK(a1.iqr == 0.0);
  CHECK(a1.stdev == 0.0);

  std::vector<DatasetScore> four = {
      {"a", {1.0}}, {"b", {2.0}}, {"c", {3.0}}, {"d", {4.0}}};
  Aggregate a4 = aggregate(four);
  CHECK(a4.median == doctest::Approx(2.5).epsilon(1e-15));
  // linear-interpolation quartiles: q25 = 1.75, q75 = 3.25
  CHECK(a4.iqr == doctest::Approx(1.5).epsilon(1e-15));
  CHECK(a4.mean == doctest::Approx(2.5).epsilon(1e-15));
  // population convention over dataset means
  CHECK(a4.stdev == doctest::Approx(std::sqrt(1.25)).epsilon(1e-15));

  // dataset order is irrelevant
  std::reverse(four.begin(), four.end());
  const Aggregate a4r = aggregate(four);
  CHECK(a4r.median == a4.median);
  CHECK(a4r.iqr == a4.iqr);
  CHECK(a4r.stdev == a4.stdev);
}

TEST_CASE("aggregate table mentions every column") {
  const std::string t = format_aggregate("model", aggregate({{"a", {0.5}}}));
  CHECK(t.find("Median") != std::string::npos);
  CHECK(t.find("Interquartile range") != std::string::npos);
  CHECK(t.find("Mean") != std::string::npos);
  CHECK(t.find("Standard deviation") != std::string::npos);
}

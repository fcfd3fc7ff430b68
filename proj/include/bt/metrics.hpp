#pragma once

#include <string>
#include <vector>

namespace bt::metrics {

// Coefficient of determination, 1 - SS_res / SS_tot. Requires at least two
// samples and non-constant targets.
double r2(const std::vector<double>& y, const std::vector<double>& y_hat);

// Normalized Nash-Sutcliffe efficiency: rescales r2 in (-inf, 1] to (0, 1].
double nnse(double r2);

// Linear-interpolation quantile over unsorted values, q in [0, 1].
double quantile(std::vector<double> values, double q);

struct DatasetScore {
  std::string dataset;
  std::vector<double> seed_r2;

  double mean() const;
  double stdev() const;  // sample convention (n-1) across seeds
};

struct Aggregate {
  double median = 0.0;
  double iqr = 0.0;
  double mean = 0.0;
  double stdev = 0.0;  // population convention across dataset means
};

Aggregate aggregate(const std::vector<DatasetScore>& scores);

// Four-column text table of the aggregate statistics.
std::string format_aggregate(const std::string& label, const Aggregate& agg);

}  // namespace bt::metrics

#include "bt/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace bt::metrics {

double r2(const std::vector<double>& y, const std::vector<double>& y_hat) {
  if (y.size() != y_hat.size())
    throw std::invalid_argument("r2: size mismatch");
  if (y.size() < 2) throw std::invalid_argument("r2: need at least 2 samples");
  double mean = 0.0;
  for (double v : y) mean += v;
  mean /= static_cast<double>(y.size());
  double ss_res = 0.0, ss_tot = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    ss_res += (y[i] - y_hat[i]) * (y[i] - y_hat[i]);
    ss_tot += (y[i] - mean) * (y[i] - mean);
  }
  if (ss_tot == 0.0)
    throw std::invalid_argument("r2: targets are constant (zero total variance)");
  return 1.0 - ss_res / ss_tot;
}

double nnse(double r2) {
  if (r2 > 1.0) throw std::invalid_argument("nnse: r2 must be <= 1");
  return 1.0 / (2.0 - r2);
}

double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw std::invalid_argument("quantile: empty input");
  if (q < 0.0 || q > 1.0) throw std::invalid_argument("quantile: q outside [0, 1]");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(pos);
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

double DatasetScore::mean() const {
  if (seed_r2.empty()) throw std::invalid_argument("DatasetScore: no seeds");
  double m = 0.0;
  for (double v : seed_r2) m += v;
  return m / static_cast<double>(seed_r2.size());
}

double DatasetScore::stdev() const {
  const std::size_t n = seed_r2.size();
  if (n < 2) return 0.0;
  const double m = mean();
  double acc = 0.0;
  for (double v : seed_r2) acc += (v - m) * (v - m);
  return std::sqrt(acc / static_cast<double>(n - 1));
}

Aggregate aggregate(const std::vector<DatasetScore>& scores) {
  if (scores.empty()) throw std::invalid_argument("aggregate: no datasets");
  std::vector<double> means;
  means.reserve(scores.size());
  for (const auto& s : scores) means.push_back(s.mean());
  Aggregate agg;
  agg.median = quantile(means, 0.5);
  agg.iqr = quantile(means, 0.75) - quantile(means, 0.25);
  double m = 0.0;
  for (double v : means) m += v;
  m /= static_cast<double>(means.size());
  agg.mean = m;
  double acc = 0.0;
  for (double v : means) acc += (v - m) * (v - m);
  agg.stdev = std::sqrt(acc / static_cast<double>(means.size()));
  return agg;
}

std::string format_aggregate(const std::string& label, const Aggregate& agg) {
  char buf[256];
  std::string out;
  std::snprintf(buf, sizeof(buf), "%-24s %10s %22s %10s %20s\n", "", "Median",
                "Interquartile range", "Mean", "Standard deviation");
  out += buf;
  std::snprintf(buf, sizeof(buf), "%-24s %10.3f %22.3f %10.3f %20.3f\n",
                label.c_str(), agg.median, agg.iqr, agg.mean, agg.stdev);
  out += buf;
  return out;
}

}  // namespace bt::metrics

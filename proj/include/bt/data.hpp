#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace bt::data {

struct CellValue {
  enum class Kind { Number, Text, Missing };

  Kind kind = Kind::Missing;
  double number = 0.0;
  std::string text;

  static CellValue make_number(double v) { return {Kind::Number, v, {}}; }
  static CellValue make_text(std::string s) { return {Kind::Text, 0.0, std::move(s)}; }
  static CellValue make_missing() { return {}; }
};

// An unordered set of (column name, value) pairs; names are unique.
struct Row {
  std::vector<std::pair<std::string, CellValue>> pairs;

  const CellValue* find(const std::string& column) const;
};

struct Dataset {
  std::string name;
  std::vector<std::string> columns;  // feature columns, target excluded
  std::vector<Row> rows;
  std::string target_column;
  std::vector<double> targets;  // finite, one per row

  std::int64_t size() const { return static_cast<std::int64_t>(rows.size()); }
};

// Cells matching one of these exactly load as Missing.
const std::vector<std::string>& default_na_literals();  // "", "NA", "NaN", "?"

// Raw ingestion: numerals become Number, NA literals Missing, anything else
// Text. No scaling, no one-hot, no row dropping.
Dataset load_csv(const std::string& path, const std::string& target_column,
                 const std::vector<std::string>& na_literals = default_na_literals(),
                 const std::string& name = "");

struct SplitSpec {
  double eval_fraction = 0.2;  // of the smallest dataset's row count
  std::uint64_t seed = 0;
};

struct SplitIndices {
  std::vector<std::int64_t> train, val, test;
};

// Shared evaluation size: n_e = floor(eval_fraction * min dataset size);
// every dataset gets disjoint random test and validation samples of exactly
// n_e rows, remainder trains.
std::vector<SplitIndices> split(const std::vector<Dataset>& datasets,
                                const SplitSpec& spec);

// Downloads url to dest_path; returns the byte count. Throws DataError on
// network or HTTP failure (message carries the status).
std::int64_t fetch_http(const std::string& url, const std::string& dest_path);

// Label order: even, odd, real (non-integer), integer, big (|v| > 50),
// small (|v| <= 50).
struct LabeledNumber {
  double value = 0.0;
  std::array<std::uint8_t, 6> labels{};
};

struct NumberPropsData {
  std::vector<LabeledNumber> train;
  std::vector<LabeledNumber> val;
};

// 1000 train + 1000 validation numbers in [-100, 100], alternating exact
// integers and non-integers, labeled per the rules above.
NumberPropsData gen_number_properties(std::uint64_t seed);

// Two linear-plus-noise tables over three numeric columns whose targets
// live at very different scales: [1, 10] and [1e3, 1e6].
std::pair<Dataset, Dataset> gen_two_scale_regression(std::uint64_t seed);

struct ManifestEntry {
  std::string name;
  std::string path;
  std::string url;  // optional; fetched to path when the file is absent
  std::string target;
};

// JSON array of {name, path, [url], target}.
std::vector<ManifestEntry> load_manifest(const std::string& path);

// Loads every manifest entry, fetching URLs for missing files.
std::vector<Dataset> load_from_manifest(const std::string& path);

}  // namespace bt::data

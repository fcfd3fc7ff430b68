#include "bt/data.hpp"

#include <cctype>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <httplib.h>
#include <json.hpp>

#include "bt/errors.hpp"
#include "bt/rng.hpp"

namespace bt::data {

const CellValue* Row::find(const std::string& column) const {
  for (const auto& [name, value] : pairs)
    if (name == column) return &value;
  return nullptr;
}

const std::vector<std::string>& default_na_literals() {
  static const std::vector<std::string> na = {"", "NA", "NaN", "?"};
  return na;
}

namespace {

std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

// Decimal numeral: optional sign, digits with optional fraction, optional
// exponent. Hex, inf and nan spellings are text, not numbers.
bool parse_decimal(const std::string& cell, double* out) {
  const std::string t = trim(cell);
  if (t.empty()) return false;
  bool digit_seen = false;
  for (char c : t) {
    if (std::isdigit(static_cast<unsigned char>(c))) {
      digit_seen = true;
    } else if (c != '+' && c != '-' && c != '.' && c != 'e' && c != 'E') {
      return false;
    }
  }
  if (!digit_seen) return false;
  const char* begin = t.c_str();
  char* end = nullptr;
  const double v = std::strtod(begin, &end);
  if (end != begin + t.size()) return false;
  if (!std::isfinite(v)) return false;
  *out = v;
  return true;
}

bool is_na(const std::string& cell, const std::vector<std::string>& na) {
  for (const auto& lit : na)
    if (cell == lit) return true;
  return false;
}

// RFC 4180 flavored: quoted fields may hold commas, doubled quotes and
// newlines; both LF and CRLF rows.
std::vector<std::vector<std::string>> parse_csv(const std::string& content) {
  std::vector<std::vector<std::string>> records;
  std::vector<std::string> record;
  std::string field;
  bool quoted = false;
  bool any = false;
  for (std::size_t i = 0; i < content.size(); ++i) {
    const char c = content[i];
    any = true;
    if (quoted) {
      if (c == '"') {
        if (i + 1 < content.size() && content[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field.push_back(c);
      }
    } else if (c == '"' && field.empty()) {
      quoted = true;
    } else if (c == ',') {
      record.push_back(std::move(field));
      field.clear();
    } else if (c == '\n' || c == '\r') {
      if (c == '\r' && i + 1 < content.size() && content[i + 1] == '\n') ++i;
      record.push_back(std::move(field));
      field.clear();
      records.push_back(std::move(record));
      record.clear();
    } else {
      field.push_back(c);
    }
  }
  if (any && (!field.empty() || !record.empty())) {
    record.push_back(std::move(field));
    records.push_back(std::move(record));
  }
  return records;
}

std::string dataset_name_from_path(const std::string& path) {
  return std::filesystem::path(path).stem().string();
}

}  // namespace

Dataset load_csv(const std::string& path, const std::string& target_column,
                 const std::vector<std::string>& na_literals,
                 const std::string& name) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open CSV file: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  const auto records = parse_csv(buf.str());
  if (records.empty()) throw DataError("CSV has no header row: " + path);

  const auto& header = records[0];
  std::size_t target_idx = header.size();
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i].empty())
      throw DataError(path + ": empty column name in header");
    for (std::size_t j = i + 1; j < header.size(); ++j)
      if (header[i] == header[j])
        throw DataError(path + ": duplicate column name '" + header[i] + "'");
    if (header[i] == target_column) target_idx = i;
  }
  if (target_idx == header.size())
    throw DataError(path + ": target column '" + target_column + "' not found");

  Dataset ds;
  ds.name = name.empty() ? dataset_name_from_path(path) : name;
  ds.target_column = target_column;
  for (std::size_t i = 0; i < header.size(); ++i)
    if (i != target_idx) ds.columns.push_back(header[i]);

  for (std::size_t r = 1; r < records.size(); ++r) {
    const auto& rec = records[r];
    if (rec.size() == 1 && rec[0].empty()) continue;  // trailing blank line
    if (rec.size() != header.size())
      throw DataError(path + ": row " + std::to_string(r) + " has " +
                      std::to_string(rec.size()) + " fields, expected " +
                      std::to_string(header.size()));
    Row row;
    double target = 0.0;
    for (std::size_t i = 0; i < rec.size(); ++i) {
      if (i == target_idx) {
        if (!parse_decimal(rec[i], &target))
          throw DataError(path + ": row " + std::to_string(r) +
                          ": non-numeric target cell '" + rec[i] + "'");
        continue;
      }
      double v = 0.0;
      if (is_na(rec[i], na_literals))
        row.pairs.emplace_back(header[i], CellValue::make_missing());
      else if (parse_decimal(rec[i], &v))
        row.pairs.emplace_back(header[i], CellValue::make_number(v));
      else
        row.pairs.emplace_back(header[i], CellValue::make_text(rec[i]));
    }
    ds.rows.push_back(std::move(row));
    ds.targets.push_back(target);
  }
  return ds;
}

std::vector<SplitIndices> split(const std::vector<Dataset>& datasets,
                                const SplitSpec& spec) {
  if (datasets.empty()) throw DataError("split: no datasets");
  if (spec.eval_fraction <= 0.0 || spec.eval_fraction >= 0.5)
    throw DataError("split: eval_fraction must lie in (0, 0.5)");
  std::int64_t min_size = datasets[0].size();
  for (const auto& ds : datasets) min_size = std::min(min_size, ds.size());
  const auto n_eval =
      static_cast<std::int64_t>(spec.eval_fraction * static_cast<double>(min_size));
  if (n_eval < 1)
    throw DataError("split: smallest dataset too small for the eval fraction");
  std::vector<SplitIndices> out;
  for (std::size_t d = 0; d < datasets.size(); ++d) {
    const std::int64_t n = datasets[d].size();
    if (n <= 2 * n_eval)
      throw DataError("split: dataset '" + datasets[d].name +
                      "' too small: " + std::to_string(n) + " rows, needs > " +
                      std::to_string(2 * n_eval));
    std::vector<std::int64_t> idx(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
    rng::Stream rs(rng::derive_key(spec.seed, 0x5911717, d));
    rs.shuffle(idx.begin(), idx.end());
    SplitIndices si;
    si.test.assign(idx.begin(), idx.begin() + n_eval);
    si.val.assign(idx.begin() + n_eval, idx.begin() + 2 * n_eval);
    si.train.assign(idx.begin() + 2 * n_eval, idx.end());
    std::sort(si.test.begin(), si.test.end());
    std::sort(si.val.begin(), si.val.end());
    std::sort(si.train.begin(), si.train.end());
    out.push_back(std::move(si));
  }
  return out;
}

std::int64_t fetch_http(const std::string& url, const std::string& dest_path) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos)
    throw DataError("fetch: malformed url: " + url);
  const std::string scheme = url.substr(0, scheme_end);
  if (scheme != "http" && scheme != "https")
    throw DataError("fetch: unsupported scheme: " + scheme);
#ifndef BT_HAVE_OPENSSL
  if (scheme == "https")
    throw DataError("fetch: built without TLS support; use http");
#endif
  const auto path_start = url.find('/', scheme_end + 3);
  const std::string base =
      path_start == std::string::npos ? url : url.substr(0, path_start);
  const std::string path =
      path_start == std::string::npos ? "/" : url.substr(path_start);

  httplib::Client client(base);
  client.set_follow_location(true);
  auto res = client.Get(path);
  if (!res)
    throw DataError("fetch: " + url + ": " + httplib::to_string(res.error()));
  if (res->status != 200)
    throw DataError("fetch: " + url + ": HTTP status " +
                    std::to_string(res->status));
  std::ofstream out(dest_path, std::ios::binary);
  if (!out) throw DataError("fetch: cannot write " + dest_path);
  out.write(res->body.data(), static_cast<std::streamsize>(res->body.size()));
  out.close();
  return static_cast<std::int64_t>(res->body.size());
}

namespace {

LabeledNumber label_number(double v) {
  LabeledNumber ln;
  ln.value = v;
  const bool integer = v == std::floor(v);
  const bool big = std::fabs(v) > 50.0;
  ln.labels[0] = integer && static_cast<std::int64_t>(v) % 2 == 0;  // even
  ln.labels[1] = integer && static_cast<std::int64_t>(v) % 2 != 0;  // odd
  ln.labels[2] = !integer;                                          // real
  ln.labels[3] = integer;                                           // integer
  ln.labels[4] = big;                                               // big
  ln.labels[5] = !big;                                              // small
  return ln;
}

std::vector<LabeledNumber> draw_numbers(rng::Stream& rs, std::size_t n) {
  std::vector<LabeledNumber> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    double v;
    if (i % 2 == 0) {
      v = static_cast<double>(rs.next_below(201)) - 100.0;  // integer draw
    } else {
      do {
        v = rs.next_range(-100.0, 100.0);
      } while (v == std::floor(v));
    }
    out.push_back(label_number(v));
  }
  return out;
}

Dataset linear_table(const std::string& name, rng::Stream& rs, std::size_t rows,
                     double lo, double hi) {
  // y = lo + (hi - lo) * (0.2 x1 + 0.3 x2 + 0.5 x3) + 2% span gaussian
  // noise, clamped back into [lo, hi].
  Dataset ds;
  ds.name = name;
  ds.columns = {"x1", "x2", "x3"};
  ds.target_column = "y";
  for (std::size_t r = 0; r < rows; ++r) {
    const double x1 = rs.next_unit();
    const double x2 = rs.next_unit();
    const double x3 = rs.next_unit();
    double y = lo + (hi - lo) * (0.2 * x1 + 0.3 * x2 + 0.5 * x3);
    y += 0.02 * (hi - lo) * rs.next_gauss();
    y = std::min(hi, std::max(lo, y));
    Row row;
    row.pairs.emplace_back("x1", CellValue::make_number(x1));
    row.pairs.emplace_back("x2", CellValue::make_number(x2));
    row.pairs.emplace_back("x3", CellValue::make_number(x3));
    ds.rows.push_back(std::move(row));
    ds.targets.push_back(y);
  }
  return ds;
}

}  // namespace

NumberPropsData gen_number_properties(std::uint64_t seed) {
  rng::Stream rs(rng::derive_key(seed, 0xB17'5E7));
  NumberPropsData d;
  d.train = draw_numbers(rs, 1000);
  d.val = draw_numbers(rs, 1000);
  return d;
}

std::pair<Dataset, Dataset> gen_two_scale_regression(std::uint64_t seed) {
  rng::Stream rs(rng::derive_key(seed, 0x75CA1E));
  Dataset small = linear_table("two_scale_small", rs, 600, 1.0, 10.0);
  Dataset large = linear_table("two_scale_large", rs, 600, 1e3, 1e6);
  return {std::move(small), std::move(large)};
}

std::vector<ManifestEntry> load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset manifest: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw DataError("manifest parse error: " + std::string(e.what()));
  }
  if (!j.is_array()) throw DataError("manifest must be a JSON array");
  std::vector<ManifestEntry> entries;
  for (const auto& item : j) {
    ManifestEntry e;
    for (const auto& [key, val] : item.items()) {
      if (key == "name")
        e.name = val.get<std::string>();
      else if (key == "path")
        e.path = val.get<std::string>();
      else if (key == "url")
        e.url = val.get<std::string>();
      else if (key == "target")
        e.target = val.get<std::string>();
      else
        throw DataError("manifest: unknown key '" + key + "'");
    }
    if (e.name.empty() || e.path.empty() || e.target.empty())
      throw DataError("manifest: entries need name, path and target");
    entries.push_back(std::move(e));
  }
  if (entries.empty()) throw DataError("manifest lists no datasets");
  return entries;
}

std::vector<Dataset> load_from_manifest(const std::string& path) {
  std::vector<Dataset> out;
  for (const auto& e : load_manifest(path)) {
    if (!std::filesystem::exists(e.path)) {
      if (e.url.empty())
        throw DataError("dataset file missing and no url given: " + e.path);
      fetch_http(e.url, e.path);
    }
    out.push_back(load_csv(e.path, e.target, default_na_literals(), e.name));
  }
  return out;
}

}  // namespace bt::data

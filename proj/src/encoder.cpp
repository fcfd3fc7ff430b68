#include "bt/encoder.hpp"

#include <algorithm>
#include <cctype>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <unordered_map>

#include "bt/errors.hpp"

namespace bt {

void TextEncoderSpec::validate() const {
  if (vocab_buckets < 2)
    throw std::invalid_argument("text_encoder: vocab_buckets must be >= 2");
  if (text_dim < 1)
    throw std::invalid_argument("text_encoder: text_dim must be >= 1");
  if (mode == Mode::TableFile && table_path.empty())
    throw std::invalid_argument("text_encoder: TableFile mode needs table_path");
}

std::vector<std::int64_t> tokenize(const std::string& text,
                                   const TextEncoderSpec& spec) {
  spec.validate();
  std::vector<std::int64_t> ids;
  const auto push_token = [&](const std::string& tok) {
    const std::uint64_t h = rng::hash_string(tok);
    ids.push_back(static_cast<std::int64_t>(
        1 + h % static_cast<std::uint64_t>(spec.vocab_buckets - 1)));
  };
  std::string word;
  for (unsigned char c : text) {
    const char lc =
        spec.lowercase ? static_cast<char>(std::tolower(c)) : static_cast<char>(c);
    // bytes >= 128 are treated as word characters so UTF-8 stays intact
    if (std::isalnum(c) || c >= 128) {
      word.push_back(lc);
    } else {
      if (!word.empty()) {
        push_token(word);
        word.clear();
      }
      if (!std::isspace(c)) push_token(std::string(1, lc));
    }
  }
  if (!word.empty()) push_token(word);
  if (ids.empty()) ids.push_back(0);
  return ids;
}

void write_embedding_table(const std::string& path, const Tensor<float>& table) {
  if (table.rank() != 2)
    throw std::invalid_argument("embedding table must be rank 2");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write embedding table: " + path);
  out << table.dim(0) << " " << table.dim(1) << "\n";
  for (std::int64_t i = 0; i < table.numel(); ++i) {
    const float v = table[i];
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    const unsigned char le[4] = {
        static_cast<unsigned char>(bits), static_cast<unsigned char>(bits >> 8),
        static_cast<unsigned char>(bits >> 16),
        static_cast<unsigned char>(bits >> 24)};
    out.write(reinterpret_cast<const char*>(le), 4);
  }
}

Tensor<float> read_embedding_table(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open embedding table: " + path);
  std::int64_t vocab = 0, dim = 0;
  in >> vocab >> dim;
  in.ignore(1, '\n');
  if (vocab < 2 || dim < 1)
    throw DataError("embedding table header is malformed: " + path);
  Tensor<float> table(Shape{vocab, dim});
  for (std::int64_t i = 0; i < table.numel(); ++i) {
    unsigned char le[4];
    if (!in.read(reinterpret_cast<char*>(le), 4))
      throw DataError("embedding table is truncated: " + path);
    const std::uint32_t bits = static_cast<std::uint32_t>(le[0]) |
                               (static_cast<std::uint32_t>(le[1]) << 8) |
                               (static_cast<std::uint32_t>(le[2]) << 16) |
                               (static_cast<std::uint32_t>(le[3]) << 24);
    float v;
    std::memcpy(&v, &bits, 4);
    table[i] = v;
  }
  return table;
}

namespace {

template <typename T>
Tensor<T> gauss_tensor(Shape shape, rng::Stream& rs, double std_dev) {
  Tensor<T> t(std::move(shape));
  for (std::int64_t i = 0; i < t.numel(); ++i)
    t[i] = static_cast<T>(std_dev * rs.next_gauss());
  return t;
}

}  // namespace

template <typename T>
RowEncoder<T>::RowEncoder(const TextEncoderSpec& spec,
                          const smr::SmrConfig& smr_cfg, std::int64_t embed_dim,
                          rng::Stream& rs)
    : spec_(spec), smr_(smr_cfg), embed_dim_(embed_dim) {
  spec_.validate();
  smr_.validate();
  if (embed_dim_ < 1) throw std::invalid_argument("encoder: embed_dim must be >= 1");

  const double text_std = 1.0 / std::sqrt(static_cast<double>(spec_.text_dim));
  std::int64_t text_dim = spec_.text_dim;
  if (spec_.mode == TextEncoderSpec::Mode::Hashed) {
    token_table_ = Parameter<T>(
        "encoder.token_table",
        gauss_tensor<T>(Shape{spec_.vocab_buckets, spec_.text_dim}, rs, text_std));
  } else {
    const Tensor<float> raw = read_embedding_table(spec_.table_path);
    spec_.vocab_buckets = raw.dim(0);
    spec_.text_dim = raw.dim(1);
    text_dim = raw.dim(1);
    frozen_table_ = Tensor<T>(Shape{raw.dim(0), raw.dim(1)});
    for (std::int64_t i = 0; i < raw.numel(); ++i)
      frozen_table_[i] = static_cast<T>(raw[i]);
  }
  text_proj_w_ = Parameter<T>(
      "encoder.text_proj.w",
      gauss_tensor<T>(Shape{text_dim, embed_dim_}, rs,
                      1.0 / std::sqrt(static_cast<double>(text_dim))));
  text_proj_b_ = Parameter<T>("encoder.text_proj.b", Tensor<T>(Shape{embed_dim_}));
  const std::int64_t width = smr_.width();
  num_proj_w_ = Parameter<T>(
      "encoder.num_proj.w",
      gauss_tensor<T>(Shape{width, embed_dim_}, rs,
                      1.0 / std::sqrt(static_cast<double>(width))));
  num_proj_b_ = Parameter<T>("encoder.num_proj.b", Tensor<T>(Shape{embed_dim_}));
  missing_token_ = Parameter<T>(
      "encoder.missing_token",
      gauss_tensor<T>(Shape{embed_dim_}, rs,
                      1.0 / std::sqrt(static_cast<double>(embed_dim_))));
}

template <typename T>
std::vector<Parameter<T>*> RowEncoder<T>::params() {
  std::vector<Parameter<T>*> out;
  if (spec_.mode == TextEncoderSpec::Mode::Hashed) out.push_back(&token_table_);
  out.push_back(&text_proj_w_);
  out.push_back(&text_proj_b_);
  out.push_back(&num_proj_w_);
  out.push_back(&num_proj_b_);
  out.push_back(&missing_token_);
  return out;
}

template <typename T>
std::int64_t RowEncoder<T>::param_count() const {
  std::int64_t n = 0;
  if (spec_.mode == TextEncoderSpec::Mode::Hashed)
    n += spec_.vocab_buckets * spec_.text_dim;
  n += spec_.text_dim * embed_dim_ + embed_dim_;   // text projection
  n += smr_.width() * embed_dim_ + embed_dim_;     // numeric projection
  n += embed_dim_;                                 // missing token
  return n;
}

template <typename T>
EncodedBatchNodes<T> RowEncoder<T>::encode(
    Tape<T>& tp, const std::vector<data::Row>& rows,
    const std::vector<std::string>& columns) {
  using Id = typename Tape<T>::Id;
  if (rows.empty()) throw std::invalid_argument("encode: empty batch");
  if (columns.empty()) throw std::invalid_argument("encode: no columns");

  const auto batch = static_cast<std::int64_t>(rows.size());
  const auto n_cols = static_cast<std::int64_t>(columns.size());

  // per-column name tokens (shared across the batch)
  std::vector<std::vector<std::int64_t>> name_tokens;
  name_tokens.reserve(columns.size());
  for (const auto& c : columns) {
    if (c.empty()) throw std::invalid_argument("encode: empty column name");
    name_tokens.push_back(tokenize(c, spec_));
  }

  // resolve each row's cells against the batch column order
  std::vector<const data::CellValue*> cells(
      static_cast<std::size_t>(batch * n_cols));
  for (std::int64_t b = 0; b < batch; ++b) {
    const data::Row& row = rows[static_cast<std::size_t>(b)];
    if (static_cast<std::int64_t>(row.pairs.size()) != n_cols)
      throw std::invalid_argument("encode: row has an inconsistent column set");
    for (std::int64_t c = 0; c < n_cols; ++c) {
      const data::CellValue* cell = row.find(columns[static_cast<std::size_t>(c)]);
      if (!cell)
        throw std::invalid_argument("encode: row lacks column '" +
                                    columns[static_cast<std::size_t>(c)] + "'");
      cells[static_cast<std::size_t>(b * n_cols + c)] = cell;
    }
  }

  // value token runs; numbers and missing cells occupy one slot
  std::vector<std::vector<std::int64_t>> value_text(
      static_cast<std::size_t>(batch * n_cols));
  std::int64_t seq_len = 1;
  for (const auto& toks : name_tokens)
    seq_len = std::max(seq_len, static_cast<std::int64_t>(toks.size()));
  for (std::int64_t i = 0; i < batch * n_cols; ++i) {
    const data::CellValue& cell = *cells[static_cast<std::size_t>(i)];
    if (cell.kind == data::CellValue::Kind::Text) {
      value_text[static_cast<std::size_t>(i)] = tokenize(cell.text, spec_);
      seq_len = std::max(seq_len, static_cast<std::int64_t>(
                                      value_text[static_cast<std::size_t>(i)].size()));
    }
  }

  const Shape out_shape{batch, n_cols, seq_len, embed_dim_};
  Tensor<T> name_mask(Shape{batch, n_cols, seq_len});
  Tensor<T> value_mask(Shape{batch, n_cols, seq_len});

  const Id table = spec_.mode == TextEncoderSpec::Mode::Hashed
                       ? tp.leaf(token_table_)
                       : tp.constant(frozen_table_);

  // ---- names: one gather + projection + scatter ----
  std::vector<std::int64_t> name_ids;
  std::vector<std::int64_t> name_slots;
  for (std::int64_t b = 0; b < batch; ++b)
    for (std::int64_t c = 0; c < n_cols; ++c) {
      const auto& toks = name_tokens[static_cast<std::size_t>(c)];
      for (std::size_t p = 0; p < toks.size(); ++p) {
        name_ids.push_back(toks[p]);
        name_slots.push_back((b * n_cols + c) * seq_len +
                             static_cast<std::int64_t>(p));
        name_mask[(b * n_cols + c) * seq_len + static_cast<std::int64_t>(p)] = T(1);
      }
    }
  Id name_rows = tp.linear(tp.embedding_rows(table, std::move(name_ids)),
                           tp.leaf(text_proj_w_),
                           tp.leaf(text_proj_b_));
  const Id names = tp.scatter_rows(out_shape, name_rows, std::move(name_slots));

  // ---- values: text, numeric and missing streams ----
  std::vector<std::int64_t> text_ids, text_slots;
  std::vector<T> number_bits;
  std::vector<std::int64_t> number_slots, missing_slots;
  for (std::int64_t b = 0; b < batch; ++b)
    for (std::int64_t c = 0; c < n_cols; ++c) {
      const std::int64_t flat = b * n_cols + c;
      const data::CellValue& cell = *cells[static_cast<std::size_t>(flat)];
      switch (cell.kind) {
        case data::CellValue::Kind::Text: {
          const auto& toks = value_text[static_cast<std::size_t>(flat)];
          for (std::size_t p = 0; p < toks.size(); ++p) {
            text_ids.push_back(toks[p]);
            text_slots.push_back(flat * seq_len + static_cast<std::int64_t>(p));
            value_mask[flat * seq_len + static_cast<std::int64_t>(p)] = T(1);
          }
          break;
        }
        case data::CellValue::Kind::Number: {
          const smr::SmrBits bits = smr::encode(cell.number, smr_);
          for (std::uint8_t bit : bits.bits) number_bits.push_back(static_cast<T>(bit));
          number_slots.push_back(flat * seq_len);
          value_mask[flat * seq_len] = T(1);
          break;
        }
        case data::CellValue::Kind::Missing: {
          missing_slots.push_back(flat * seq_len);
          value_mask[flat * seq_len] = T(1);
          break;
        }
      }
    }

  std::vector<Id> streams;
  if (!text_slots.empty()) {
    Id rows_node = tp.linear(tp.embedding_rows(table, std::move(text_ids)),
                             tp.leaf(text_proj_w_),
                             tp.leaf(text_proj_b_));
    streams.push_back(tp.scatter_rows(out_shape, rows_node, std::move(text_slots)));
  }
  if (!number_slots.empty()) {
    const auto n_nums = static_cast<std::int64_t>(number_slots.size());
    Id bits_node =
        tp.constant(Tensor<T>(Shape{n_nums, smr_.width()}, std::move(number_bits)));
    Id rows_node = tp.linear(bits_node,
                             tp.leaf(num_proj_w_),
                             tp.leaf(num_proj_b_));
    streams.push_back(tp.scatter_rows(out_shape, rows_node, std::move(number_slots)));
  }
  if (!missing_slots.empty()) {
    const auto n_miss = static_cast<std::int64_t>(missing_slots.size());
    Id rows_node = tp.expand_first(tp.leaf(missing_token_), n_miss);
    streams.push_back(tp.scatter_rows(out_shape, rows_node, std::move(missing_slots)));
  }
  Id values = streams[0];
  for (std::size_t i = 1; i < streams.size(); ++i)
    values = tp.add(values, streams[i]);

  EncodedBatchNodes<T> out;
  out.names = names;
  out.values = values;
  out.name_mask = std::move(name_mask);
  out.value_mask = std::move(value_mask);
  out.columns = columns;
  out.batch = batch;
  out.n_columns = n_cols;
  out.seq_len = seq_len;
  return out;
}

template <typename T>
EncodedRowBatch<T> RowEncoder<T>::materialize(
    const std::vector<data::Row>& rows,
    const std::vector<std::string>& columns) {
  Tape<T> tp;
  const EncodedBatchNodes<T> nodes = encode(tp, rows, columns);
  EncodedRowBatch<T> out;
  out.names = tp.value(nodes.names).clone();
  out.values = tp.value(nodes.values).clone();
  out.name_mask = nodes.name_mask;
  out.value_mask = nodes.value_mask;
  out.columns = nodes.columns;
  return out;
}

template class RowEncoder<float>;
template class RowEncoder<double>;

}  // namespace bt

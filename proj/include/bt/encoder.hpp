#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bt/data.hpp"
#include "bt/rng.hpp"
#include "bt/smr.hpp"
#include "bt/tape.hpp"

namespace bt {

struct TextEncoderSpec {
  enum class Mode { Hashed, TableFile };

  Mode mode = Mode::Hashed;
  std::int64_t vocab_buckets = 4096;  // bucket 0 reserved for empty text
  std::int64_t text_dim = 128;
  std::string table_path;  // TableFile: frozen embeddings loaded from disk
  bool lowercase = true;

  void validate() const;
};

// Whitespace is dropped, alphanumeric runs become word tokens, every other
// character is a single-char token; each token hashes into [1, vocab).
// Empty text yields the reserved id 0.
std::vector<std::int64_t> tokenize(const std::string& text,
                                   const TextEncoderSpec& spec);

// Embedding table file: one ASCII header line "<vocab> <text_dim>\n"
// followed by vocab x text_dim row-major little-endian 32-bit floats.
void write_embedding_table(const std::string& path,
                           const Tensor<float>& table);
Tensor<float> read_embedding_table(const std::string& path);

// Materialized paired name/value tensors with keep masks.
template <typename T>
struct EncodedRowBatch {
  Tensor<T> names;       // B x C x L x D
  Tensor<T> values;      // B x C x L x D
  Tensor<T> name_mask;   // B x C x L, 1 keeps a position
  Tensor<T> value_mask;  // B x C x L
  std::vector<std::string> columns;  // recorded column order
};

// Same batch built on a live tape so gradients reach the embedding
// parameters during training.
template <typename T>
struct EncodedBatchNodes {
  typename Tape<T>::Id names = Tape<T>::kNone;
  typename Tape<T>::Id values = Tape<T>::kNone;
  Tensor<T> name_mask;
  Tensor<T> value_mask;
  std::vector<std::string> columns;
  std::int64_t batch = 0;
  std::int64_t n_columns = 0;
  std::int64_t seq_len = 0;
};

template <typename T>
class RowEncoder {
 public:
  // Draws every learnable tensor from rs in a fixed order.
  RowEncoder(const TextEncoderSpec& spec, const smr::SmrConfig& smr_cfg,
             std::int64_t embed_dim, rng::Stream& rs);

  const TextEncoderSpec& spec() const { return spec_; }

  std::vector<Parameter<T>*> params();
  std::int64_t param_count() const;

  // Column order follows `columns`; every row must carry exactly that
  // column set (pair order inside a row is irrelevant).
  EncodedBatchNodes<T> encode(Tape<T>& tp, const std::vector<data::Row>& rows,
                              const std::vector<std::string>& columns);

  EncodedRowBatch<T> materialize(const std::vector<data::Row>& rows,
                                 const std::vector<std::string>& columns);

 private:
  TextEncoderSpec spec_;
  smr::SmrConfig smr_;
  std::int64_t embed_dim_;

  Parameter<T> token_table_;  // trainable in Hashed mode only
  Tensor<T> frozen_table_;    // TableFile mode
  Parameter<T> text_proj_w_, text_proj_b_;
  Parameter<T> num_proj_w_, num_proj_b_;
  Parameter<T> missing_token_;
};

}  // namespace bt

#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "bt/encoder.hpp"
#include "bt/smr.hpp"
#include "bt/tape.hpp"

namespace bt {

enum class HeadMode { SmrLogits, Scalar };

struct ModelConfig {
  std::int64_t embed_dim = 144;
  std::int64_t n_blocks = 4;
  std::int64_t n_heads = 8;
  std::int64_t basis_len = 64;       // basis queries per stream
  std::int64_t comp_ratio = 6;       // latent width multiplier r
  std::int64_t n_ctx_layers = 9;     // self-attention blocks over columns
  double dropout = 0.0;
  std::int64_t mlp_hidden_mult = 2;  // hidden width of every MLP, in units of its io width
  smr::SmrConfig smr{29, 14};
  HeadMode head_mode = HeadMode::SmrLogits;

  void validate() const;
  std::int64_t out_dim() const {
    return head_mode == HeadMode::Scalar ? 1 : smr.width();
  }
};

// Learnable-parameter count of the block architecture (basis queries,
// blocks, final downscale, prediction head); the row encoder is counted by
// RowEncoder::param_count.
std::int64_t count_params(const ModelConfig& cfg);

namespace detail {

template <typename T>
struct LinearLayer {
  Parameter<T> w, b;
  LinearLayer() = default;
  LinearLayer(const std::string& prefix, std::int64_t in, std::int64_t out,
              rng::Stream& rs, bool zero_init = false);
  typename Tape<T>::Id apply(Tape<T>& tp, typename Tape<T>::Id x);
  void collect(std::vector<Parameter<T>*>& out);
};

template <typename T>
struct NormLayer {
  Parameter<T> gain, bias;
  NormLayer() = default;
  NormLayer(const std::string& prefix, std::int64_t width);
  typename Tape<T>::Id apply(Tape<T>& tp, typename Tape<T>::Id x);
  void collect(std::vector<Parameter<T>*>& out);
};

template <typename T>
struct AttentionLayer {
  LinearLayer<T> q, k, v, o;
  std::int64_t n_heads = 1;
  AttentionLayer() = default;
  AttentionLayer(const std::string& prefix, std::int64_t width,
                 std::int64_t heads, rng::Stream& rs);
  typename Tape<T>::Id apply(Tape<T>& tp, typename Tape<T>::Id query,
                             typename Tape<T>::Id kv,
                             typename Tape<T>::Id mask = Tape<T>::kNone);
  void collect(std::vector<Parameter<T>*>& out);
};

template <typename T>
struct MlpLayer {
  LinearLayer<T> fc1, fc2;
  MlpLayer() = default;
  MlpLayer(const std::string& prefix, std::int64_t width, std::int64_t hidden,
           rng::Stream& rs);
  typename Tape<T>::Id apply(Tape<T>& tp, typename Tape<T>::Id x);
  void collect(std::vector<Parameter<T>*>& out);
};

// Pre-norm cross attention onto a fixed-length query sequence, then a
// pre-norm residual MLP; no self-attention. Queries carry the residual
// stream.
template <typename T>
struct SequenceCompressor {
  std::string name;
  NormLayer<T> norm_q, norm_kv, norm_mlp;
  AttentionLayer<T> attn;
  MlpLayer<T> mlp;
  double dropout = 0.0;
  SequenceCompressor() = default;
  SequenceCompressor(const std::string& prefix, const ModelConfig& cfg,
                     rng::Stream& rs);
  typename Tape<T>::Id apply(Tape<T>& tp, typename Tape<T>::Id queries,
                             typename Tape<T>::Id seq, typename Tape<T>::Id mask);
  void collect(std::vector<Parameter<T>*>& out);
};

// Cross attention from the compressed name stream onto the compressed
// value stream, then one self-attention pass; both pre-norm residual.
template <typename T>
struct PairMixer {
  std::string name;
  NormLayer<T> norm_q, norm_kv, norm_self;
  AttentionLayer<T> cross, self_attn;
  double dropout = 0.0;
  PairMixer() = default;
  PairMixer(const std::string& prefix, const ModelConfig& cfg, rng::Stream& rs);
  typename Tape<T>::Id apply(Tape<T>& tp, typename Tape<T>::Id names,
                             typename Tape<T>::Id values);
  void collect(std::vector<Parameter<T>*>& out);
};

// Self-attention block over the column axis at latent width r*D.
template <typename T>
struct ColumnContextLayer {
  std::string name;
  NormLayer<T> norm_attn, norm_mlp;
  AttentionLayer<T> attn;
  MlpLayer<T> mlp;
  double dropout = 0.0;
  ColumnContextLayer() = default;
  ColumnContextLayer(const std::string& prefix, const ModelConfig& cfg,
                     rng::Stream& rs);
  typename Tape<T>::Id apply(Tape<T>& tp, typename Tape<T>::Id x);
  void collect(std::vector<Parameter<T>*>& out);
};

// Latent up-projection back to a basis-length sequence; the final block
// emits one branch, earlier blocks emit separately parameterized name and
// value query branches.
template <typename T>
struct QueryExpander {
  bool final_block = false;
  LinearLayer<T> up;
  MlpLayer<T> mlp_name, mlp_value;
  NormLayer<T> norm_name, norm_value;
  std::int64_t basis_len = 0, embed_dim = 0;
  QueryExpander() = default;
  QueryExpander(const std::string& prefix, const ModelConfig& cfg, bool final,
                rng::Stream& rs);
  // returns {name_queries, value_queries}; value is kNone for final blocks
  std::pair<typename Tape<T>::Id, typename Tape<T>::Id> apply(
      Tape<T>& tp, typename Tape<T>::Id latent, std::int64_t n_columns);
  void collect(std::vector<Parameter<T>*>& out);
};

template <typename T>
struct Block {
  SequenceCompressor<T> comp_names, comp_values;
  PairMixer<T> mixer;
  LinearLayer<T> latent_down;  // L_b*D -> r*D
  std::vector<ColumnContextLayer<T>> context;
  QueryExpander<T> expander;
  Block() = default;
  Block(const std::string& prefix, const ModelConfig& cfg, bool final,
        rng::Stream& rs);
  void collect(std::vector<Parameter<T>*>& out);
};

}  // namespace detail

template <typename T>
class BasisTransformer {
 public:
  BasisTransformer(const ModelConfig& cfg, const TextEncoderSpec& text_spec,
                   std::uint64_t init_seed);

  const ModelConfig& config() const { return cfg_; }
  const TextEncoderSpec& text_spec() const { return encoder_.spec(); }
  RowEncoder<T>& encoder() { return encoder_; }

  // All learnable parameters in registration order; names are unique paths.
  const std::vector<Parameter<T>*>& params() { return params_; }
  std::int64_t total_params() const;
  void zero_grads();

  // Logits of shape B x (1+h+l) (or B x 1 in Scalar mode).
  typename Tape<T>::Id forward(Tape<T>& tp, const EncodedBatchNodes<T>& batch);

  // Encode + forward in one pass.
  typename Tape<T>::Id forward_rows(Tape<T>& tp,
                                    const std::vector<data::Row>& rows,
                                    const std::vector<std::string>& columns);

 private:
  ModelConfig cfg_;
  RowEncoder<T> encoder_;
  Parameter<T> name_queries_, value_queries_;  // block-1 basis queries, L_b x D
  std::vector<detail::Block<T>> blocks_;
  detail::LinearLayer<T> final_down_;  // L_b*D -> D
  detail::LinearLayer<T> head_;        // D -> out_dim, zero-initialized
  std::vector<Parameter<T>*> params_;
};

// Additive attention mask (0 keeps, -1e9 drops) from a binary keep mask.
template <typename T>
Tensor<T> additive_mask(const Tensor<T>& keep);

}  // namespace bt

#include "bt/model.hpp"

#include <cmath>
#include <stdexcept>

namespace bt {

void ModelConfig::validate() const {
  if (embed_dim < 1) throw std::invalid_argument("model: embed_dim must be >= 1");
  if (n_heads < 1) throw std::invalid_argument("model: n_heads must be >= 1");
  if (embed_dim % n_heads != 0)
    throw std::invalid_argument("model: embed_dim must be divisible by n_heads");
  if (n_blocks < 1) throw std::invalid_argument("model: n_blocks must be >= 1");
  if (basis_len < 1) throw std::invalid_argument("model: basis_len must be >= 1");
  if (comp_ratio < 1) throw std::invalid_argument("model: comp_ratio must be >= 1");
  if (n_ctx_layers < 0)
    throw std::invalid_argument("model: n_ctx_layers must be >= 0");
  if (dropout < 0.0 || dropout >= 1.0)
    throw std::invalid_argument("model: dropout must lie in [0, 1)");
  if (mlp_hidden_mult < 1)
    throw std::invalid_argument("model: mlp_hidden_mult must be >= 1");
  smr.validate();
}

namespace {

std::int64_t linear_count(std::int64_t in, std::int64_t out) {
  return in * out + out;
}

std::int64_t norm_count(std::int64_t width) { return 2 * width; }

std::int64_t attn_count(std::int64_t width) { return 4 * linear_count(width, width); }

std::int64_t mlp_count(std::int64_t width, std::int64_t hidden) {
  return linear_count(width, hidden) + linear_count(hidden, width);
}

}  // namespace

std::int64_t count_params(const ModelConfig& cfg) {
  cfg.validate();
  const std::int64_t d = cfg.embed_dim;
  const std::int64_t hidden = cfg.mlp_hidden_mult * d;
  const std::int64_t latent = cfg.comp_ratio * d;
  const std::int64_t latent_hidden = cfg.mlp_hidden_mult * latent;
  const std::int64_t seq = cfg.basis_len * d;

  const std::int64_t compressor =
      3 * norm_count(d) + attn_count(d) + mlp_count(d, hidden);
  const std::int64_t mixer = 3 * norm_count(d) + 2 * attn_count(d);
  const std::int64_t ctx_layer = 2 * norm_count(latent) + attn_count(latent) +
                                 mlp_count(latent, latent_hidden);

  std::int64_t total = 2 * seq;  // block-1 basis queries, two streams
  for (std::int64_t b = 0; b < cfg.n_blocks; ++b) {
    const bool final_block = b == cfg.n_blocks - 1;
    total += 2 * compressor + mixer;
    total += linear_count(seq, latent);  // latent compression
    total += cfg.n_ctx_layers * ctx_layer;
    total += linear_count(latent, seq);  // latent decompression up-map
    total += (final_block ? 1 : 2) * (mlp_count(d, hidden) + norm_count(d));
  }
  total += linear_count(seq, d);            // flatten downscale
  total += linear_count(d, cfg.out_dim());  // prediction head
  return total;
}

namespace detail {

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
LinearLayer<T>::LinearLayer(const std::string& prefix, std::int64_t in,
                            std::int64_t out, rng::Stream& rs, bool zero_init) {
  if (zero_init) {
    w = Parameter<T>(prefix + ".w", Tensor<T>(Shape{in, out}));
  } else {
    w = Parameter<T>(prefix + ".w",
                     gauss_tensor<T>(Shape{in, out}, rs,
                                     1.0 / std::sqrt(static_cast<double>(in))));
  }
  b = Parameter<T>(prefix + ".b", Tensor<T>(Shape{out}));
}

template <typename T>
typename Tape<T>::Id LinearLayer<T>::apply(Tape<T>& tp, typename Tape<T>::Id x) {
  return tp.linear(x, tp.leaf(w), tp.leaf(b));
}

template <typename T>
void LinearLayer<T>::collect(std::vector<Parameter<T>*>& out) {
  out.push_back(&w);
  out.push_back(&b);
}

template <typename T>
NormLayer<T>::NormLayer(const std::string& prefix, std::int64_t width) {
  gain = Parameter<T>(prefix + ".gain", Tensor<T>::full(Shape{width}, T(1)));
  bias = Parameter<T>(prefix + ".bias", Tensor<T>(Shape{width}));
}

template <typename T>
typename Tape<T>::Id NormLayer<T>::apply(Tape<T>& tp, typename Tape<T>::Id x) {
  return tp.layer_norm(x, tp.leaf(gain), tp.leaf(bias));
}

template <typename T>
void NormLayer<T>::collect(std::vector<Parameter<T>*>& out) {
  out.push_back(&gain);
  out.push_back(&bias);
}

template <typename T>
AttentionLayer<T>::AttentionLayer(const std::string& prefix, std::int64_t width,
                                  std::int64_t heads, rng::Stream& rs)
    : q(prefix + ".q", width, width, rs),
      k(prefix + ".k", width, width, rs),
      v(prefix + ".v", width, width, rs),
      o(prefix + ".o", width, width, rs),
      n_heads(heads) {}

template <typename T>
typename Tape<T>::Id AttentionLayer<T>::apply(Tape<T>& tp,
                                              typename Tape<T>::Id query,
                                              typename Tape<T>::Id kv,
                                              typename Tape<T>::Id mask) {
  MhaWeights<T> w{tp.leaf(q.w), tp.leaf(q.b), tp.leaf(k.w), tp.leaf(k.b),
                  tp.leaf(v.w), tp.leaf(v.b), tp.leaf(o.w), tp.leaf(o.b)};
  return multi_head_attention(tp, query, kv, static_cast<int>(n_heads), w, mask);
}

template <typename T>
void AttentionLayer<T>::collect(std::vector<Parameter<T>*>& out) {
  q.collect(out);
  k.collect(out);
  v.collect(out);
  o.collect(out);
}

template <typename T>
MlpLayer<T>::MlpLayer(const std::string& prefix, std::int64_t width,
                      std::int64_t hidden, rng::Stream& rs)
    : fc1(prefix + ".fc1", width, hidden, rs),
      fc2(prefix + ".fc2", hidden, width, rs) {}

template <typename T>
typename Tape<T>::Id MlpLayer<T>::apply(Tape<T>& tp, typename Tape<T>::Id x) {
  return fc2.apply(tp, tp.gelu(fc1.apply(tp, x)));
}

template <typename T>
void MlpLayer<T>::collect(std::vector<Parameter<T>*>& out) {
  fc1.collect(out);
  fc2.collect(out);
}

template <typename T>
SequenceCompressor<T>::SequenceCompressor(const std::string& prefix,
                                          const ModelConfig& cfg, rng::Stream& rs)
    : name(prefix),
      norm_q(prefix + ".norm_q", cfg.embed_dim),
      norm_kv(prefix + ".norm_kv", cfg.embed_dim),
      norm_mlp(prefix + ".norm_mlp", cfg.embed_dim),
      attn(prefix + ".attn", cfg.embed_dim, cfg.n_heads, rs),
      mlp(prefix + ".mlp", cfg.embed_dim, cfg.mlp_hidden_mult * cfg.embed_dim, rs),
      dropout(cfg.dropout) {}

template <typename T>
typename Tape<T>::Id SequenceCompressor<T>::apply(Tape<T>& tp,
                                                  typename Tape<T>::Id queries,
                                                  typename Tape<T>::Id seq,
                                                  typename Tape<T>::Id mask) {
  using Id = typename Tape<T>::Id;
  Id attended = attn.apply(tp, norm_q.apply(tp, queries),
                           norm_kv.apply(tp, seq), mask);
  Id h = tp.add(queries, tp.dropout(attended, dropout, name + ".attn_drop"));
  Id expanded = mlp.apply(tp, norm_mlp.apply(tp, h));
  return tp.add(h, tp.dropout(expanded, dropout, name + ".mlp_drop"));
}

template <typename T>
void SequenceCompressor<T>::collect(std::vector<Parameter<T>*>& out) {
  norm_q.collect(out);
  norm_kv.collect(out);
  norm_mlp.collect(out);
  attn.collect(out);
  mlp.collect(out);
}

template <typename T>
PairMixer<T>::PairMixer(const std::string& prefix, const ModelConfig& cfg,
                        rng::Stream& rs)
    : name(prefix),
      norm_q(prefix + ".norm_q", cfg.embed_dim),
      norm_kv(prefix + ".norm_kv", cfg.embed_dim),
      norm_self(prefix + ".norm_self", cfg.embed_dim),
      cross(prefix + ".cross", cfg.embed_dim, cfg.n_heads, rs),
      self_attn(prefix + ".self", cfg.embed_dim, cfg.n_heads, rs),
      dropout(cfg.dropout) {}

template <typename T>
typename Tape<T>::Id PairMixer<T>::apply(Tape<T>& tp, typename Tape<T>::Id names,
                                         typename Tape<T>::Id values) {
  using Id = typename Tape<T>::Id;
  Id mixed = cross.apply(tp, norm_q.apply(tp, names), norm_kv.apply(tp, values));
  Id h = tp.add(names, tp.dropout(mixed, dropout, name + ".cross_drop"));
  Id normed = norm_self.apply(tp, h);
  Id self_out = self_attn.apply(tp, normed, normed);
  return tp.add(h, tp.dropout(self_out, dropout, name + ".self_drop"));
}

template <typename T>
void PairMixer<T>::collect(std::vector<Parameter<T>*>& out) {
  norm_q.collect(out);
  norm_kv.collect(out);
  norm_self.collect(out);
  cross.collect(out);
  self_attn.collect(out);
}

template <typename T>
ColumnContextLayer<T>::ColumnContextLayer(const std::string& prefix,
                                          const ModelConfig& cfg, rng::Stream& rs)
    : name(prefix),
      norm_attn(prefix + ".norm_attn", cfg.comp_ratio * cfg.embed_dim),
      norm_mlp(prefix + ".norm_mlp", cfg.comp_ratio * cfg.embed_dim),
      attn(prefix + ".attn", cfg.comp_ratio * cfg.embed_dim, cfg.n_heads, rs),
      mlp(prefix + ".mlp", cfg.comp_ratio * cfg.embed_dim,
          cfg.mlp_hidden_mult * cfg.comp_ratio * cfg.embed_dim, rs),
      dropout(cfg.dropout) {}

template <typename T>
typename Tape<T>::Id ColumnContextLayer<T>::apply(Tape<T>& tp,
                                                  typename Tape<T>::Id x) {
  using Id = typename Tape<T>::Id;
  Id normed = norm_attn.apply(tp, x);
  Id attended = attn.apply(tp, normed, normed);
  Id h = tp.add(x, tp.dropout(attended, dropout, name + ".attn_drop"));
  Id expanded = mlp.apply(tp, norm_mlp.apply(tp, h));
  return tp.add(h, tp.dropout(expanded, dropout, name + ".mlp_drop"));
}

template <typename T>
void ColumnContextLayer<T>::collect(std::vector<Parameter<T>*>& out) {
  norm_attn.collect(out);
  norm_mlp.collect(out);
  attn.collect(out);
  mlp.collect(out);
}

template <typename T>
QueryExpander<T>::QueryExpander(const std::string& prefix, const ModelConfig& cfg,
                                bool final, rng::Stream& rs)
    : final_block(final),
      up(prefix + ".up", cfg.comp_ratio * cfg.embed_dim,
         cfg.basis_len * cfg.embed_dim, rs),
      basis_len(cfg.basis_len),
      embed_dim(cfg.embed_dim) {
  mlp_name = MlpLayer<T>(prefix + ".name_branch.mlp", cfg.embed_dim,
                         cfg.mlp_hidden_mult * cfg.embed_dim, rs);
  norm_name = NormLayer<T>(prefix + ".name_branch.norm", cfg.embed_dim);
  if (!final_block) {
    mlp_value = MlpLayer<T>(prefix + ".value_branch.mlp", cfg.embed_dim,
                            cfg.mlp_hidden_mult * cfg.embed_dim, rs);
    norm_value = NormLayer<T>(prefix + ".value_branch.norm", cfg.embed_dim);
  }
}

template <typename T>
std::pair<typename Tape<T>::Id, typename Tape<T>::Id> QueryExpander<T>::apply(
    Tape<T>& tp, typename Tape<T>::Id latent, std::int64_t n_columns) {
  using Id = typename Tape<T>::Id;
  const Tensor<T> lv = tp.value(latent);
  const std::int64_t batch = lv.dim(0);
  Id widened = up.apply(tp, latent);  // B x C x (L_b*D)
  Id seq = tp.reshape(widened, Shape{batch, n_columns, basis_len, embed_dim});
  Id names = norm_name.apply(tp, mlp_name.apply(tp, seq));
  if (final_block) return {names, Tape<T>::kNone};
  Id values = norm_value.apply(tp, mlp_value.apply(tp, seq));
  return {names, values};
}

template <typename T>
void QueryExpander<T>::collect(std::vector<Parameter<T>*>& out) {
  up.collect(out);
  mlp_name.collect(out);
  norm_name.collect(out);
  if (!final_block) {
    mlp_value.collect(out);
    norm_value.collect(out);
  }
}

template <typename T>
Block<T>::Block(const std::string& prefix, const ModelConfig& cfg, bool final,
                rng::Stream& rs)
    : comp_names(prefix + ".comp_names", cfg, rs),
      comp_values(prefix + ".comp_values", cfg, rs),
      mixer(prefix + ".mixer", cfg, rs),
      latent_down(prefix + ".latent_down", cfg.basis_len * cfg.embed_dim,
                  cfg.comp_ratio * cfg.embed_dim, rs),
      expander(prefix + ".expander", cfg, final, rs) {
  for (std::int64_t i = 0; i < cfg.n_ctx_layers; ++i)
    context.emplace_back(prefix + ".context" + std::to_string(i), cfg, rs);
}

template <typename T>
void Block<T>::collect(std::vector<Parameter<T>*>& out) {
  comp_names.collect(out);
  comp_values.collect(out);
  mixer.collect(out);
  latent_down.collect(out);
  for (auto& layer : context) layer.collect(out);
  expander.collect(out);
}

template struct LinearLayer<float>;
template struct LinearLayer<double>;
template struct NormLayer<float>;
template struct NormLayer<double>;
template struct AttentionLayer<float>;
template struct AttentionLayer<double>;
template struct MlpLayer<float>;
template struct MlpLayer<double>;
template struct SequenceCompressor<float>;
template struct SequenceCompressor<double>;
template struct PairMixer<float>;
template struct PairMixer<double>;
template struct ColumnContextLayer<float>;
template struct ColumnContextLayer<double>;
template struct QueryExpander<float>;
template struct QueryExpander<double>;
template struct Block<float>;
template struct Block<double>;

}  // namespace detail

template <typename T>
Tensor<T> additive_mask(const Tensor<T>& keep) {
  Tensor<T> out(keep.shape());
  for (std::int64_t i = 0; i < keep.numel(); ++i)
    out[i] = keep[i] > T(0.5) ? T(0) : T(-1e9);
  return out;
}

template <typename T>
BasisTransformer<T>::BasisTransformer(const ModelConfig& cfg,
                                      const TextEncoderSpec& text_spec,
                                      std::uint64_t init_seed)
    : cfg_([&] {
        cfg.validate();
        return cfg;
      }()),
      encoder_([&]() -> RowEncoder<T> {
        rng::Stream rs(rng::derive_key(init_seed, 0xE2C0DE));
        return RowEncoder<T>(text_spec, cfg.smr, cfg.embed_dim, rs);
      }()) {
  rng::Stream rs(rng::derive_key(init_seed, 0xB7'0001));
  const double q_std = 1.0 / std::sqrt(static_cast<double>(cfg_.embed_dim));
  name_queries_ = Parameter<T>(
      "name_queries", detail::gauss_tensor<T>(
                          Shape{cfg_.basis_len, cfg_.embed_dim}, rs, q_std));
  value_queries_ = Parameter<T>(
      "value_queries", detail::gauss_tensor<T>(
                           Shape{cfg_.basis_len, cfg_.embed_dim}, rs, q_std));
  blocks_.reserve(static_cast<std::size_t>(cfg_.n_blocks));
  for (std::int64_t b = 0; b < cfg_.n_blocks; ++b)
    blocks_.emplace_back("block" + std::to_string(b), cfg_,
                         b == cfg_.n_blocks - 1, rs);
  final_down_ = detail::LinearLayer<T>("final_down",
                                       cfg_.basis_len * cfg_.embed_dim,
                                       cfg_.embed_dim, rs);
  // Zero head: initial logits are exactly zero, so the starting loss sits
  // at width * ln 2 regardless of target scale.
  head_ = detail::LinearLayer<T>("head", cfg_.embed_dim, cfg_.out_dim(), rs,
                                 /*zero_init=*/true);

  for (auto* p : encoder_.params()) params_.push_back(p);
  params_.push_back(&name_queries_);
  params_.push_back(&value_queries_);
  for (auto& block : blocks_) block.collect(params_);
  final_down_.collect(params_);
  head_.collect(params_);
}

template <typename T>
std::int64_t BasisTransformer<T>::total_params() const {
  std::int64_t n = 0;
  for (const auto* p : params_) n += p->value.numel();
  return n;
}

template <typename T>
void BasisTransformer<T>::zero_grads() {
  for (auto* p : params_) p->zero_grad();
}

template <typename T>
typename Tape<T>::Id BasisTransformer<T>::forward(
    Tape<T>& tp, const EncodedBatchNodes<T>& batch) {
  using Id = typename Tape<T>::Id;
  if (batch.n_columns < 1) throw std::invalid_argument("forward: empty column set");
  if (tp.value(batch.names).dim(-1) != cfg_.embed_dim)
    throw std::invalid_argument("forward: batch embedding dim mismatch");

  const Id name_amask = tp.constant(additive_mask(batch.name_mask));
  const Id value_amask = tp.constant(additive_mask(batch.value_mask));

  // block-1 queries are shared: broadcast L_b x D over columns and batch
  Id q_names = tp.expand_first(
      tp.expand_first(tp.leaf(name_queries_), batch.n_columns), batch.batch);
  Id q_values = tp.expand_first(
      tp.expand_first(tp.leaf(value_queries_), batch.n_columns), batch.batch);

  Id summary = Tape<T>::kNone;
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    auto& block = blocks_[b];
    Id z_names = block.comp_names.apply(tp, q_names, batch.names, name_amask);
    Id z_values =
        block.comp_values.apply(tp, q_values, batch.values, value_amask);
    Id mixed = block.mixer.apply(tp, z_names, z_values);
    Id flat = tp.reshape(mixed, Shape{batch.batch, batch.n_columns,
                                      cfg_.basis_len * cfg_.embed_dim});
    Id latent = block.latent_down.apply(tp, flat);
    for (auto& layer : block.context) latent = layer.apply(tp, latent);
    auto [next_names, next_values] =
        block.expander.apply(tp, latent, batch.n_columns);
    if (b + 1 == blocks_.size()) {
      summary = next_names;
    } else {
      q_names = next_names;
      q_values = next_values;
    }
  }

  Id pooled = tp.mean(summary, 1);  // average over columns: B x L_b x D
  Id flat = tp.reshape(pooled, Shape{batch.batch, cfg_.basis_len * cfg_.embed_dim});
  Id embedding = final_down_.apply(tp, flat);
  return head_.apply(tp, embedding);
}

template <typename T>
typename Tape<T>::Id BasisTransformer<T>::forward_rows(
    Tape<T>& tp, const std::vector<data::Row>& rows,
    const std::vector<std::string>& columns) {
  const EncodedBatchNodes<T> batch = encoder_.encode(tp, rows, columns);
  return forward(tp, batch);
}

template class BasisTransformer<float>;
template class BasisTransformer<double>;
template Tensor<float> additive_mask<float>(const Tensor<float>&);
template Tensor<double> additive_mask<double>(const Tensor<double>&);

}  // namespace bt

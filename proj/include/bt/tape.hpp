#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "bt/tensor.hpp"

namespace bt {

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;

  Parameter() = default;
  Parameter(std::string n, Tensor<T> v)
      : name(std::move(n)), value(std::move(v)), grad(Tensor<T>(value.shape())) {}

  void zero_grad() {
    T* g = grad.data();
    for (std::int64_t i = 0; i < grad.numel(); ++i) g[i] = T(0);
  }
};

// Reverse-mode tape. Operations append nodes in evaluation order, which is
// a topological order by construction; backward() walks it in exact
// reverse and accumulates gradients additively across fan-out. One tape
// corresponds to one forward pass; parameters persist outside and receive
// their gradients when backward() finishes.
template <typename T>
class Tape {
 public:
  using Id = std::int32_t;
  static constexpr Id kNone = -1;

  explicit Tape(std::uint64_t seed = 0, std::int64_t step = 0, bool train = false)
      : seed_(seed), step_(step), train_(train) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool train_mode() const { return train_; }
  std::size_t size() const { return nodes_.size(); }

  Id leaf(Parameter<T>& p);
  Id constant(Tensor<T> v);

  const Tensor<T>& value(Id id) const { return node(id).val; }
  bool has_grad(Id id) const { return node(id).has_grad; }
  const Tensor<T>& grad(Id id) const;

  // ---- primitives -------------------------------------------------------
  Id add(Id a, Id b);
  Id sub(Id a, Id b);
  Id mul(Id a, Id b);
  Id scalar_mul(Id a, T s);
  Id matmul(Id a, Id b);
  Id reshape(Id a, Shape shape);
  Id transpose(Id a, int ax0, int ax1);
  Id concat(const std::vector<Id>& xs, int axis);
  Id mean(Id a, int axis);
  Id sigmoid(Id a);
  Id gelu(Id a);
  // Softmax over the last axis. The optional mask is an additive tensor
  // (0 keeps a key, -1e9 drops it) broadcastable to a's shape; it must not
  // require gradients. Throws if any row is fully masked.
  Id softmax(Id a, Id additive_mask = kNone);
  Id layer_norm(Id x, Id gain, Id bias);
  Id add_bias(Id x, Id b);
  Id linear(Id x, Id w, Id b) { return add_bias(matmul(x, w), b); }
  Id dropout(Id x, double rate, std::string_view site);
  // Per-sample binary cross entropy with logits, summed over the last axis.
  Id bce_with_logits(Id logits, Id targets);

  // ---- gather/scatter plumbing for the row encoder ----------------------
  Id embedding_rows(Id table, std::vector<std::int64_t> ids);
  // Places src row i at flat row slot[i] of a zero tensor of out_shape
  // (whose last axis must equal src's); duplicate slots accumulate.
  Id scatter_rows(Shape out_shape, Id src, std::vector<std::int64_t> slots);
  Id expand_first(Id a, std::int64_t n);

  void backward(Id root);

  // Forward outputs are scanned for NaN/inf when enabled (default: only in
  // non-NDEBUG builds).
  static void set_finite_checks(bool on);
  static bool finite_checks();

 private:
  struct Node {
    Tensor<T> val;
    Tensor<T> grad;
    bool has_grad = false;
    bool needs_grad = false;
    Parameter<T>* param = nullptr;
    // Called with (tape, own id) during the reverse sweep.
    std::function<void(Tape&, Id)> back;
  };

  Node& node(Id id) {
    if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size())
      throw std::out_of_range("tape: bad node id");
    return nodes_[static_cast<std::size_t>(id)];
  }
  const Node& node(Id id) const {
    return const_cast<Tape*>(this)->node(id);
  }

  Id push(Tensor<T> val, bool needs_grad, std::function<void(Tape&, Id)> back);
  Tensor<T>& grad_buf(Id id);
  bool wants_grad(Id id) const { return node(id).needs_grad; }

  std::vector<Node> nodes_;
  std::unordered_map<const Parameter<T>*, Id> leaf_cache_;
  std::uint64_t seed_;
  std::int64_t step_;
  bool train_;
};

// Standard scaled dot-product attention with separate projection weights
// for query, key, value and output. Leading axes (everything before the
// trailing sequence x feature axes) are independent. key_mask, when given,
// is an additive mask of shape leading x L_k.
template <typename T>
struct MhaWeights {
  typename Tape<T>::Id wq, bq, wk, bk, wv, bv, wo, bo;
};

template <typename T>
typename Tape<T>::Id multi_head_attention(Tape<T>& tp, typename Tape<T>::Id q,
                                          typename Tape<T>::Id kv, int n_heads,
                                          const MhaWeights<T>& w,
                                          typename Tape<T>::Id key_mask =
                                              Tape<T>::kNone);

}  // namespace bt

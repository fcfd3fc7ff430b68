#include "bt/tape.hpp"

#include <cmath>
#include <stdexcept>

#include "bt/kernels.hpp"
#include "bt/rng.hpp"

namespace bt {

namespace {

bool g_finite_checks =
#ifdef NDEBUG
    false;
#else
    true;
#endif

int normalize_axis(int axis, int rank, const char* op) {
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank)
    throw std::invalid_argument(std::string(op) + ": axis out of range");
  return axis;
}

template <typename T>
void check_finite(const Tensor<T>& t, const char* op) {
  const T* p = t.data();
  for (std::int64_t i = 0; i < t.numel(); ++i) {
    if (!std::isfinite(static_cast<double>(p[i])))
      throw std::logic_error(std::string(op) + ": non-finite value in output");
  }
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (!a.same_shape(b))
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                shape_string(a.shape()) + " vs " +
                                shape_string(b.shape()));
}

// Maps a flat index of out_shape onto a broadcast operand whose dims are
// each either equal to out_shape's or 1.
struct BroadcastMap {
  Shape out_shape;
  Shape in_shape;

  std::int64_t operator()(std::int64_t flat) const {
    std::int64_t in_flat = 0;
    std::int64_t in_stride = 1;
    std::int64_t rem = flat;
    for (int i = static_cast<int>(out_shape.size()) - 1; i >= 0; --i) {
      const auto ui = static_cast<std::size_t>(i);
      const std::int64_t coord = rem % out_shape[ui];
      rem /= out_shape[ui];
      in_flat += (in_shape[ui] == 1 ? 0 : coord) * in_stride;
      in_stride *= in_shape[ui];
    }
    return in_flat;
  }
};

template <typename T>
T stable_sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

}  // namespace

template <typename T>
void Tape<T>::set_finite_checks(bool on) {
  g_finite_checks = on;
}

template <typename T>
bool Tape<T>::finite_checks() {
  return g_finite_checks;
}

template <typename T>
typename Tape<T>::Id Tape<T>::push(Tensor<T> val, bool needs_grad,
                                   std::function<void(Tape&, Id)> back) {
  if (g_finite_checks) check_finite(val, "tape");
  Node nd;
  nd.val = std::move(val);
  nd.needs_grad = needs_grad;
  if (needs_grad) nd.back = std::move(back);
  nodes_.push_back(std::move(nd));
  return static_cast<Id>(nodes_.size() - 1);
}

template <typename T>
Tensor<T>& Tape<T>::grad_buf(Id id) {
  Node& nd = node(id);
  if (!nd.has_grad) {
    nd.grad = Tensor<T>(nd.val.shape());
    nd.has_grad = true;
  }
  return nd.grad;
}

template <typename T>
const Tensor<T>& Tape<T>::grad(Id id) const {
  const Node& nd = node(id);
  if (!nd.has_grad) throw std::logic_error("tape: node has no gradient");
  return nd.grad;
}

template <typename T>
typename Tape<T>::Id Tape<T>::leaf(Parameter<T>& p) {
  auto it = leaf_cache_.find(&p);
  if (it != leaf_cache_.end()) return it->second;
  Node nd;
  nd.val = p.value;
  nd.needs_grad = true;
  nd.param = &p;
  nodes_.push_back(std::move(nd));
  const Id id = static_cast<Id>(nodes_.size() - 1);
  leaf_cache_.emplace(&p, id);
  return id;
}

template <typename T>
typename Tape<T>::Id Tape<T>::constant(Tensor<T> v) {
  return push(std::move(v), false, nullptr);
}

// ---- elementwise -----------------------------------------------------------

template <typename T>
typename Tape<T>::Id Tape<T>::add(Id a, Id b) {
  const Tensor<T>& av = value(a);
  require_same_shape(av, value(b), "add");
  Tensor<T> out(av.shape());
  const T* pa = av.data();
  const T* pb = value(b).data();
  T* po = out.data();
  kern::parallel_for(out.numel(), [&](std::int64_t i) { po[i] = pa[i] + pb[i]; });
  return push(std::move(out), wants_grad(a) || wants_grad(b),
              [a, b](Tape& tp, Id self) {
                const Tensor<T>& g = tp.node(self).grad;
                const T* pg = g.data();
                if (tp.wants_grad(a)) {
                  T* ga = tp.grad_buf(a).data();
                  kern::parallel_for(g.numel(),
                                     [&](std::int64_t i) { ga[i] += pg[i]; });
                }
                if (tp.wants_grad(b)) {
                  T* gb = tp.grad_buf(b).data();
                  kern::parallel_for(g.numel(),
                                     [&](std::int64_t i) { gb[i] += pg[i]; });
                }
              });
}

template <typename T>
typename Tape<T>::Id Tape<T>::sub(Id a, Id b) {
  const Tensor<T>& av = value(a);
  require_same_shape(av, value(b), "sub");
  Tensor<T> out(av.shape());
  const T* pa = av.data();
  const T* pb = value(b).data();
  T* po = out.data();
  kern::parallel_for(out.numel(), [&](std::int64_t i) { po[i] = pa[i] - pb[i]; });
  return push(std::move(out), wants_grad(a) || wants_grad(b),
              [a, b](Tape& tp, Id self) {
                const Tensor<T>& g = tp.node(self).grad;
                const T* pg = g.data();
                if (tp.wants_grad(a)) {
                  T* ga = tp.grad_buf(a).data();
                  kern::parallel_for(g.numel(),
                                     [&](std::int64_t i) { ga[i] += pg[i]; });
                }
                if (tp.wants_grad(b)) {
                  T* gb = tp.grad_buf(b).data();
                  kern::parallel_for(g.numel(),
                                     [&](std::int64_t i) { gb[i] -= pg[i]; });
                }
              });
}

template <typename T>
typename Tape<T>::Id Tape<T>::mul(Id a, Id b) {
  const Tensor<T>& av = value(a);
  require_same_shape(av, value(b), "mul");
  Tensor<T> out(av.shape());
  const T* pa = av.data();
  const T* pb = value(b).data();
  T* po = out.data();
  kern::parallel_for(out.numel(), [&](std::int64_t i) { po[i] = pa[i] * pb[i]; });
  return push(std::move(out), wants_grad(a) || wants_grad(b),
              [a, b](Tape& tp, Id self) {
                const Tensor<T>& g = tp.node(self).grad;
                const T* pg = g.data();
                if (tp.wants_grad(a)) {
                  const T* vb = tp.value(b).data();
                  T* ga = tp.grad_buf(a).data();
                  kern::parallel_for(
                      g.numel(), [&](std::int64_t i) { ga[i] += pg[i] * vb[i]; });
                }
                if (tp.wants_grad(b)) {
                  const T* va = tp.value(a).data();
                  T* gb = tp.grad_buf(b).data();
                  kern::parallel_for(
                      g.numel(), [&](std::int64_t i) { gb[i] += pg[i] * va[i]; });
                }
              });
}

template <typename T>
typename Tape<T>::Id Tape<T>::scalar_mul(Id a, T s) {
  const Tensor<T>& av = value(a);
  Tensor<T> out(av.shape());
  const T* pa = av.data();
  T* po = out.data();
  kern::parallel_for(out.numel(), [&](std::int64_t i) { po[i] = s * pa[i]; });
  return push(std::move(out), wants_grad(a), [a, s](Tape& tp, Id self) {
    const Tensor<T>& g = tp.node(self).grad;
    const T* pg = g.data();
    T* ga = tp.grad_buf(a).data();
    kern::parallel_for(g.numel(), [&](std::int64_t i) { ga[i] += s * pg[i]; });
  });
}

template <typename T>
typename Tape<T>::Id Tape<T>::sigmoid(Id a) {
  const Tensor<T>& av = value(a);
  Tensor<T> out(av.shape());
  const T* pa = av.data();
  T* po = out.data();
  kern::parallel_for(out.numel(),
                     [&](std::int64_t i) { po[i] = stable_sigmoid(pa[i]); });
  Tensor<T> y = out;  // shares buffer; kept for the backward pass
  return push(std::move(out), wants_grad(a), [a, y](Tape& tp, Id self) {
    const Tensor<T>& g = tp.node(self).grad;
    const T* pg = g.data();
    const T* py = y.data();
    T* ga = tp.grad_buf(a).data();
    kern::parallel_for(g.numel(), [&](std::int64_t i) {
      ga[i] += pg[i] * py[i] * (T(1) - py[i]);
    });
  });
}

template <typename T>
typename Tape<T>::Id Tape<T>::gelu(Id a) {
  const Tensor<T>& av = value(a);
  Tensor<T> out(av.shape());
  const T* pa = av.data();
  T* po = out.data();
  const T inv_sqrt2 = T(0.70710678118654752440);
  kern::parallel_for(out.numel(), [&](std::int64_t i) {
    po[i] = T(0.5) * pa[i] * (T(1) + std::erf(pa[i] * inv_sqrt2));
  });
  return push(std::move(out), wants_grad(a), [a](Tape& tp, Id self) {
    const Tensor<T>& g = tp.node(self).grad;
    const T* pg = g.data();
    const T* px = tp.value(a).data();
    T* ga = tp.grad_buf(a).data();
    const T inv_sqrt2 = T(0.70710678118654752440);
    const T inv_sqrt2pi = T(0.39894228040143267794);
    kern::parallel_for(g.numel(), [&](std::int64_t i) {
      const T x = px[i];
      const T cdf = T(0.5) * (T(1) + std::erf(x * inv_sqrt2));
      const T pdf = inv_sqrt2pi * std::exp(T(-0.5) * x * x);
      ga[i] += pg[i] * (cdf + x * pdf);
    });
  });
}

// ---- shape ops --------------------------------------------------------------

template <typename T>
typename Tape<T>::Id Tape<T>::reshape(Id a, Shape shape) {
  Tensor<T> out = value(a).reshaped(std::move(shape));
  return push(std::move(out), wants_grad(a), [a](Tape& tp, Id self) {
    const Tensor<T>& g = tp.node(self).grad;
    const T* pg = g.data();
    T* ga = tp.grad_buf(a).data();
    kern::parallel_for(g.numel(), [&](std::int64_t i) { ga[i] += pg[i]; });
  });
}

namespace {

template <typename T>
Tensor<T> transpose_copy(const Tensor<T>& in, int ax0, int ax1) {
  Shape out_shape = in.shape();
  std::swap(out_shape[static_cast<std::size_t>(ax0)],
            out_shape[static_cast<std::size_t>(ax1)]);
  Tensor<T> out(out_shape);
  const int rank = in.rank();
  // outer x d0 x mid x d1 x inner blocks around the two swapped axes
  std::int64_t outer = 1, mid = 1, inner = 1;
  for (int i = 0; i < ax0; ++i) outer *= in.dim(i);
  for (int i = ax0 + 1; i < ax1; ++i) mid *= in.dim(i);
  for (int i = ax1 + 1; i < rank; ++i) inner *= in.dim(i);
  const std::int64_t d0 = in.dim(ax0);
  const std::int64_t d1 = in.dim(ax1);
  const T* pi = in.data();
  T* po = out.data();
  kern::parallel_for(outer * d1, [&](std::int64_t t) {
    const std::int64_t o = t / d1;
    const std::int64_t j = t % d1;
    for (std::int64_t m = 0; m < mid; ++m)
      for (std::int64_t i = 0; i < d0; ++i) {
        const T* src = pi + (((o * d0 + i) * mid + m) * d1 + j) * inner;
        T* dst = po + (((o * d1 + j) * mid + m) * d0 + i) * inner;
        for (std::int64_t x = 0; x < inner; ++x) dst[x] = src[x];
      }
  });
  return out;
}

}  // namespace

template <typename T>
typename Tape<T>::Id Tape<T>::transpose(Id a, int ax0, int ax1) {
  const Tensor<T>& av = value(a);
  ax0 = normalize_axis(ax0, av.rank(), "transpose");
  ax1 = normalize_axis(ax1, av.rank(), "transpose");
  if (ax0 > ax1) std::swap(ax0, ax1);
  if (ax0 == ax1) return reshape(a, av.shape());
  Tensor<T> out = transpose_copy(av, ax0, ax1);
  return push(std::move(out), wants_grad(a), [a, ax0, ax1](Tape& tp, Id self) {
    Tensor<T> gt = transpose_copy(tp.node(self).grad, ax0, ax1);
    const T* pg = gt.data();
    T* ga = tp.grad_buf(a).data();
    kern::parallel_for(gt.numel(), [&](std::int64_t i) { ga[i] += pg[i]; });
  });
}

template <typename T>
typename Tape<T>::Id Tape<T>::concat(const std::vector<Id>& xs, int axis) {
  if (xs.empty()) throw std::invalid_argument("concat: no inputs");
  const Tensor<T>& first = value(xs[0]);
  const int rank = first.rank();
  axis = normalize_axis(axis, rank, "concat");
  std::int64_t axis_total = 0;
  bool ng = false;
  for (Id x : xs) {
    const Tensor<T>& v = value(x);
    if (v.rank() != rank)
      throw std::invalid_argument("concat: rank mismatch");
    for (int i = 0; i < rank; ++i)
      if (i != axis && v.dim(i) != first.dim(i))
        throw std::invalid_argument("concat: shape mismatch off the axis");
    axis_total += v.dim(axis);
    ng = ng || wants_grad(x);
  }
  Shape out_shape = first.shape();
  out_shape[static_cast<std::size_t>(axis)] = axis_total;
  Tensor<T> out(out_shape);
  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= first.dim(i);
  for (int i = axis + 1; i < rank; ++i) inner *= first.dim(i);
  std::int64_t offset = 0;
  for (Id x : xs) {
    const Tensor<T>& v = value(x);
    const std::int64_t d = v.dim(axis);
    const T* pv = v.data();
    T* po = out.data();
    for (std::int64_t o = 0; o < outer; ++o)
      for (std::int64_t j = 0; j < d * inner; ++j)
        po[(o * axis_total + offset) * inner + j] = pv[o * d * inner + j];
    offset += d;
  }
  std::vector<Id> parents = xs;
  return push(std::move(out), ng,
              [parents, axis_total, outer, inner](Tape& tp, Id self) {
                const T* pg = tp.node(self).grad.data();
                std::int64_t offset = 0;
                for (Id x : parents) {
                  const std::int64_t d = tp.value(x).numel() / (outer * inner);
                  if (tp.wants_grad(x)) {
                    T* gx = tp.grad_buf(x).data();
                    for (std::int64_t o = 0; o < outer; ++o)
                      for (std::int64_t j = 0; j < d * inner; ++j)
                        gx[o * d * inner + j] +=
                            pg[(o * axis_total + offset) * inner + j];
                  }
                  offset += d;
                }
              });
}

template <typename T>
typename Tape<T>::Id Tape<T>::mean(Id a, int axis) {
  const Tensor<T>& av = value(a);
  axis = normalize_axis(axis, av.rank(), "mean");
  const std::int64_t d = av.dim(axis);
  if (d == 0) throw std::invalid_argument("mean: empty axis");
  Shape out_shape;
  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < av.rank(); ++i) {
    if (i < axis) outer *= av.dim(i);
    if (i > axis) inner *= av.dim(i);
    if (i != axis) out_shape.push_back(av.dim(i));
  }
  Tensor<T> out(out_shape);
  const T* pa = av.data();
  T* po = out.data();
  const T inv = T(1) / static_cast<T>(d);
  kern::parallel_for(outer * inner, [&](std::int64_t t) {
    const std::int64_t o = t / inner;
    const std::int64_t i = t % inner;
    T acc = T(0);
    for (std::int64_t j = 0; j < d; ++j) acc += pa[(o * d + j) * inner + i];
    po[t] = acc * inv;
  });
  return push(std::move(out), wants_grad(a),
              [a, d, outer, inner, inv](Tape& tp, Id self) {
                const Tensor<T>& g = tp.node(self).grad;
                const T* pg = g.data();
                T* ga = tp.grad_buf(a).data();
                kern::parallel_for(outer * inner, [&](std::int64_t t) {
                  const std::int64_t o = t / inner;
                  const std::int64_t i = t % inner;
                  const T gv = pg[t] * inv;
                  for (std::int64_t j = 0; j < d; ++j)
                    ga[(o * d + j) * inner + i] += gv;
                });
              });
}

// ---- matmul -----------------------------------------------------------------

template <typename T>
typename Tape<T>::Id Tape<T>::matmul(Id a, Id b) {
  const Tensor<T>& av = value(a);
  const Tensor<T>& bv = value(b);
  if (av.rank() < 2 || bv.rank() < 2)
    throw std::invalid_argument("matmul: operands must have rank >= 2");
  const bool broadcast_b = bv.rank() == 2 && av.rank() > 2;
  if (!broadcast_b && av.rank() != bv.rank())
    throw std::invalid_argument("matmul: rank mismatch");
  const std::int64_t m = av.dim(-2);
  const std::int64_t k = av.dim(-1);
  if (bv.dim(-2) != k)
    throw std::invalid_argument("matmul: inner dimensions disagree: " +
                                shape_string(av.shape()) + " x " +
                                shape_string(bv.shape()));
  const std::int64_t n = bv.dim(-1);
  Shape lead(av.shape().begin(), av.shape().end() - 2);
  if (!broadcast_b) {
    Shape lead_b(bv.shape().begin(), bv.shape().end() - 2);
    if (lead != lead_b)
      throw std::invalid_argument("matmul: leading dimensions disagree");
  }
  const std::int64_t batch = shape_numel(lead);
  Shape out_shape = lead;
  out_shape.push_back(m);
  out_shape.push_back(n);
  Tensor<T> out(out_shape);
  kern::MatmulOpts fw;
  fw.broadcast_b = broadcast_b;
  kern::matmul(av.data(), bv.data(), out.data(), batch, m, k, n, fw);
  return push(std::move(out), wants_grad(a) || wants_grad(b),
              [a, b, batch, m, k, n, broadcast_b](Tape& tp, Id self) {
                const Tensor<T>& g = tp.node(self).grad;
                if (tp.wants_grad(a)) {
                  // dA = G x B^T
                  kern::MatmulOpts o;
                  o.trans_b = true;
                  o.broadcast_b = broadcast_b;
                  o.accumulate = true;
                  kern::matmul(g.data(), tp.value(b).data(),
                               tp.grad_buf(a).data(), batch, m, n, k, o);
                }
                if (tp.wants_grad(b)) {
                  // dB = A^T x G, summed over batches when B is shared
                  kern::MatmulOpts o;
                  o.trans_a = true;
                  o.sum_batches = broadcast_b;
                  o.accumulate = true;
                  kern::matmul(tp.value(a).data(), g.data(),
                               tp.grad_buf(b).data(), batch, k, m, n, o);
                }
              });
}

// ---- normalization / attention helpers ---------------------------------------

template <typename T>
typename Tape<T>::Id Tape<T>::softmax(Id a, Id additive_mask) {
  const Tensor<T>& av = value(a);
  if (av.rank() < 1) throw std::invalid_argument("softmax: rank must be >= 1");
  const std::int64_t cols = av.dim(-1);
  const std::int64_t rows = av.numel() / cols;
  Tensor<T> z = av;  // shares buffer when unmasked
  if (additive_mask != kNone) {
    const Tensor<T>& mv = value(additive_mask);
    if (node(additive_mask).needs_grad)
      throw std::logic_error("softmax: mask must not require gradients");
    if (mv.rank() != av.rank())
      throw std::invalid_argument("softmax: mask rank mismatch");
    for (int i = 0; i < av.rank(); ++i)
      if (mv.dim(i) != 1 && mv.dim(i) != av.dim(i))
        throw std::invalid_argument("softmax: mask not broadcastable");
    BroadcastMap map{av.shape(), mv.shape()};
    Tensor<T> zm(av.shape());
    const T* pa = av.data();
    const T* pm = mv.data();
    T* pz = zm.data();
    kern::parallel_for(av.numel(),
                       [&](std::int64_t i) { pz[i] = pa[i] + pm[map(i)]; });
    z = zm;
  }
  // A fully masked row means an empty key sequence upstream.
  {
    const T* pz = z.data();
    for (std::int64_t r = 0; r < rows; ++r) {
      T mx = pz[r * cols];
      for (std::int64_t j = 1; j < cols; ++j)
        mx = pz[r * cols + j] > mx ? pz[r * cols + j] : mx;
      if (mx < T(-1e8))
        throw std::invalid_argument("softmax: fully masked row");
    }
  }
  Tensor<T> out(av.shape());
  kern::softmax_rows(z.data(), out.data(), rows, cols);
  Tensor<T> probs = out;  // kept for backward
  return push(std::move(out), wants_grad(a),
              [a, probs, rows, cols](Tape& tp, Id self) {
                const Tensor<T>& g = tp.node(self).grad;
                const T* pg = g.data();
                const T* pp = probs.data();
                T* ga = tp.grad_buf(a).data();
                kern::parallel_for(rows, [&](std::int64_t r) {
                  const T* gr = pg + r * cols;
                  const T* pr = pp + r * cols;
                  T dot = T(0);
                  for (std::int64_t j = 0; j < cols; ++j) dot += gr[j] * pr[j];
                  T* gar = ga + r * cols;
                  for (std::int64_t j = 0; j < cols; ++j)
                    gar[j] += pr[j] * (gr[j] - dot);
                });
              });
}

template <typename T>
typename Tape<T>::Id Tape<T>::layer_norm(Id x, Id gain, Id bias) {
  const Tensor<T>& xv = value(x);
  const Tensor<T>& gv = value(gain);
  const Tensor<T>& bv = value(bias);
  if (xv.rank() < 1) throw std::invalid_argument("layer_norm: rank must be >= 1");
  const std::int64_t cols = xv.dim(-1);
  if (gv.rank() != 1 || gv.dim(0) != cols || bv.rank() != 1 || bv.dim(0) != cols)
    throw std::invalid_argument("layer_norm: gain/bias must be [last_dim]");
  const std::int64_t rows = xv.numel() / cols;
  Tensor<T> xhat(xv.shape());
  Tensor<T> inv_std(Shape{rows});
  kern::layer_norm_rows(xv.data(), xhat.data(), inv_std.data(), rows, cols,
                        T(1e-5));
  Tensor<T> out(xv.shape());
  const T* ph = xhat.data();
  const T* pgain = gv.data();
  const T* pbias = bv.data();
  T* po = out.data();
  kern::parallel_for(rows * cols, [&](std::int64_t i) {
    po[i] = ph[i] * pgain[i % cols] + pbias[i % cols];
  });
  const bool ng = wants_grad(x) || wants_grad(gain) || wants_grad(bias);
  return push(std::move(out), ng,
              [x, gain, bias, xhat, inv_std, rows, cols](Tape& tp, Id self) {
                const Tensor<T>& g = tp.node(self).grad;
                const T* pg = g.data();
                const T* ph = xhat.data();
                if (tp.wants_grad(gain)) {
                  T* gg = tp.grad_buf(gain).data();
                  kern::parallel_for(cols, [&](std::int64_t j) {
                    T acc = T(0);
                    for (std::int64_t r = 0; r < rows; ++r)
                      acc += pg[r * cols + j] * ph[r * cols + j];
                    gg[j] += acc;
                  });
                }
                if (tp.wants_grad(bias)) {
                  T* gb = tp.grad_buf(bias).data();
                  kern::parallel_for(cols, [&](std::int64_t j) {
                    T acc = T(0);
                    for (std::int64_t r = 0; r < rows; ++r) acc += pg[r * cols + j];
                    gb[j] += acc;
                  });
                }
                if (tp.wants_grad(x)) {
                  const T* pgain = tp.value(gain).data();
                  const T* pis = inv_std.data();
                  T* gx = tp.grad_buf(x).data();
                  const T invn = T(1) / static_cast<T>(cols);
                  kern::parallel_for(rows, [&](std::int64_t r) {
                    const T* gr = pg + r * cols;
                    const T* hr = ph + r * cols;
                    T m1 = T(0), m2 = T(0);
                    for (std::int64_t j = 0; j < cols; ++j) {
                      const T dh = gr[j] * pgain[j];
                      m1 += dh;
                      m2 += dh * hr[j];
                    }
                    m1 *= invn;
                    m2 *= invn;
                    T* gxr = gx + r * cols;
                    for (std::int64_t j = 0; j < cols; ++j) {
                      const T dh = gr[j] * pgain[j];
                      gxr[j] += pis[r] * (dh - m1 - hr[j] * m2);
                    }
                  });
                }
              });
}

template <typename T>
typename Tape<T>::Id Tape<T>::add_bias(Id x, Id b) {
  const Tensor<T>& xv = value(x);
  const Tensor<T>& bv = value(b);
  if (xv.rank() < 1 || bv.rank() != 1 || bv.dim(0) != xv.dim(-1))
    throw std::invalid_argument("add_bias: bias must be [last_dim]");
  const std::int64_t cols = xv.dim(-1);
  const std::int64_t rows = xv.numel() / cols;
  Tensor<T> out(xv.shape());
  const T* px = xv.data();
  const T* pb = bv.data();
  T* po = out.data();
  kern::parallel_for(rows * cols,
                     [&](std::int64_t i) { po[i] = px[i] + pb[i % cols]; });
  return push(std::move(out), wants_grad(x) || wants_grad(b),
              [x, b, rows, cols](Tape& tp, Id self) {
                const Tensor<T>& g = tp.node(self).grad;
                const T* pg = g.data();
                if (tp.wants_grad(x)) {
                  T* gx = tp.grad_buf(x).data();
                  kern::parallel_for(rows * cols,
                                     [&](std::int64_t i) { gx[i] += pg[i]; });
                }
                if (tp.wants_grad(b)) {
                  T* gb = tp.grad_buf(b).data();
                  kern::parallel_for(cols, [&](std::int64_t j) {
                    T acc = T(0);
                    for (std::int64_t r = 0; r < rows; ++r) acc += pg[r * cols + j];
                    gb[j] += acc;
                  });
                }
              });
}

template <typename T>
typename Tape<T>::Id Tape<T>::dropout(Id x, double rate, std::string_view site) {
  if (rate < 0.0 || rate >= 1.0)
    throw std::invalid_argument("dropout: rate must lie in [0, 1)");
  if (!train_ || rate == 0.0) return x;  // identity outside training
  const Tensor<T>& xv = value(x);
  Tensor<T> mask(xv.shape());
  rng::Stream stream(rng::derive_key(seed_, static_cast<std::uint64_t>(step_),
                                     rng::hash_string(site)));
  const T scale = T(1.0 / (1.0 - rate));
  T* pm = mask.data();
  for (std::int64_t i = 0; i < mask.numel(); ++i)
    pm[i] = stream.next_unit() < rate ? T(0) : scale;
  Tensor<T> out(xv.shape());
  const T* px = xv.data();
  T* po = out.data();
  kern::parallel_for(out.numel(),
                     [&](std::int64_t i) { po[i] = px[i] * pm[i]; });
  return push(std::move(out), wants_grad(x), [x, mask](Tape& tp, Id self) {
    const Tensor<T>& g = tp.node(self).grad;
    const T* pg = g.data();
    const T* pm = mask.data();
    T* gx = tp.grad_buf(x).data();
    kern::parallel_for(g.numel(),
                       [&](std::int64_t i) { gx[i] += pg[i] * pm[i]; });
  });
}

template <typename T>
typename Tape<T>::Id Tape<T>::bce_with_logits(Id logits, Id targets) {
  const Tensor<T>& zv = value(logits);
  require_same_shape(zv, value(targets), "bce_with_logits");
  if (zv.rank() < 1)
    throw std::invalid_argument("bce_with_logits: rank must be >= 1");
  const std::int64_t cols = zv.dim(-1);
  const std::int64_t rows = zv.numel() / cols;
  Shape out_shape(zv.shape().begin(), zv.shape().end() - 1);
  Tensor<T> out(out_shape);
  const T* pz = zv.data();
  const T* pt = value(targets).data();
  T* po = out.data();
  kern::parallel_for(rows, [&](std::int64_t r) {
    T acc = T(0);
    for (std::int64_t j = 0; j < cols; ++j) {
      const T z = pz[r * cols + j];
      const T t = pt[r * cols + j];
      const T zpos = z > T(0) ? z : T(0);
      acc += zpos - z * t + std::log1p(std::exp(-std::fabs(z)));
    }
    po[r] = acc;
  });
  return push(std::move(out), wants_grad(logits) || wants_grad(targets),
              [logits, targets, rows, cols](Tape& tp, Id self) {
                const Tensor<T>& g = tp.node(self).grad;
                const T* pg = g.data();
                const T* pz = tp.value(logits).data();
                const T* pt = tp.value(targets).data();
                if (tp.wants_grad(logits)) {
                  T* gz = tp.grad_buf(logits).data();
                  kern::parallel_for(rows * cols, [&](std::int64_t i) {
                    gz[i] += pg[i / cols] * (stable_sigmoid(pz[i]) - pt[i]);
                  });
                }
                if (tp.wants_grad(targets)) {
                  T* gt = tp.grad_buf(targets).data();
                  kern::parallel_for(rows * cols, [&](std::int64_t i) {
                    gt[i] += pg[i / cols] * (-pz[i]);
                  });
                }
              });
}

// ---- gather / scatter --------------------------------------------------------

template <typename T>
typename Tape<T>::Id Tape<T>::embedding_rows(Id table, std::vector<std::int64_t> ids) {
  const Tensor<T>& tv = value(table);
  if (tv.rank() != 2) throw std::invalid_argument("embedding_rows: table must be rank 2");
  const std::int64_t vocab = tv.dim(0);
  const std::int64_t width = tv.dim(1);
  for (std::int64_t id : ids)
    if (id < 0 || id >= vocab)
      throw std::invalid_argument("embedding_rows: id out of range");
  const std::int64_t n = static_cast<std::int64_t>(ids.size());
  Tensor<T> out(Shape{n, width});
  const T* pt = tv.data();
  T* po = out.data();
  kern::parallel_for(n, [&](std::int64_t i) {
    const T* src = pt + ids[static_cast<std::size_t>(i)] * width;
    T* dst = po + i * width;
    for (std::int64_t j = 0; j < width; ++j) dst[j] = src[j];
  });
  return push(std::move(out), wants_grad(table),
              [table, ids = std::move(ids), width](Tape& tp, Id self) {
                const Tensor<T>& g = tp.node(self).grad;
                const T* pg = g.data();
                T* gt = tp.grad_buf(table).data();
                // serial: repeated ids must accumulate deterministically
                for (std::size_t i = 0; i < ids.size(); ++i) {
                  T* dst = gt + ids[i] * width;
                  const T* src = pg + static_cast<std::int64_t>(i) * width;
                  for (std::int64_t j = 0; j < width; ++j) dst[j] += src[j];
                }
              });
}

template <typename T>
typename Tape<T>::Id Tape<T>::scatter_rows(Shape out_shape, Id src,
                                           std::vector<std::int64_t> slots) {
  const Tensor<T>& sv = value(src);
  if (sv.rank() != 2) throw std::invalid_argument("scatter_rows: src must be rank 2");
  if (out_shape.empty() || out_shape.back() != sv.dim(1))
    throw std::invalid_argument("scatter_rows: last axis mismatch");
  const std::int64_t width = sv.dim(1);
  const std::int64_t out_rows = shape_numel(out_shape) / width;
  if (static_cast<std::int64_t>(slots.size()) != sv.dim(0))
    throw std::invalid_argument("scatter_rows: one slot per source row required");
  for (std::int64_t s : slots)
    if (s < 0 || s >= out_rows)
      throw std::invalid_argument("scatter_rows: slot out of range");
  Tensor<T> out(out_shape);
  const T* ps = sv.data();
  T* po = out.data();
  for (std::size_t i = 0; i < slots.size(); ++i) {
    T* dst = po + slots[i] * width;
    const T* row = ps + static_cast<std::int64_t>(i) * width;
    for (std::int64_t j = 0; j < width; ++j) dst[j] += row[j];
  }
  return push(std::move(out), wants_grad(src),
              [src, slots = std::move(slots), width](Tape& tp, Id self) {
                const Tensor<T>& g = tp.node(self).grad;
                const T* pg = g.data();
                T* gs = tp.grad_buf(src).data();
                kern::parallel_for(
                    static_cast<std::int64_t>(slots.size()), [&](std::int64_t i) {
                      const T* srow = pg + slots[static_cast<std::size_t>(i)] * width;
                      T* drow = gs + i * width;
                      for (std::int64_t j = 0; j < width; ++j) drow[j] += srow[j];
                    });
              });
}

template <typename T>
typename Tape<T>::Id Tape<T>::expand_first(Id a, std::int64_t n) {
  if (n < 1) throw std::invalid_argument("expand_first: n must be >= 1");
  const Tensor<T>& av = value(a);
  Shape out_shape;
  out_shape.push_back(n);
  for (std::int64_t d : av.shape()) out_shape.push_back(d);
  Tensor<T> out(out_shape);
  const std::int64_t block = av.numel();
  const T* pa = av.data();
  T* po = out.data();
  kern::parallel_for(n * block,
                     [&](std::int64_t i) { po[i] = pa[i % block]; });
  return push(std::move(out), wants_grad(a), [a, n, block](Tape& tp, Id self) {
    const Tensor<T>& g = tp.node(self).grad;
    const T* pg = g.data();
    T* ga = tp.grad_buf(a).data();
    kern::parallel_for(block, [&](std::int64_t i) {
      T acc = T(0);
      for (std::int64_t b = 0; b < n; ++b) acc += pg[b * block + i];
      ga[i] += acc;
    });
  });
}

// ---- backward -----------------------------------------------------------------

template <typename T>
void Tape<T>::backward(Id root) {
  Node& r = node(root);
  if (r.val.numel() != 1)
    throw std::invalid_argument("backward: root must be a scalar");
  if (!r.needs_grad)
    throw std::logic_error("backward: root is detached from every parameter");
  // Reset node gradients so a repeated call re-derives them; parameter
  // gradients accumulate across calls.
  for (Node& nd : nodes_) {
    nd.has_grad = false;
    nd.grad = Tensor<T>();
  }
  grad_buf(root)[0] = T(1);
  for (Id i = root; i >= 0; --i) {
    Node& nd = node(i);
    if (nd.has_grad && nd.back) nd.back(*this, i);
  }
  for (Node& nd : nodes_) {
    if (nd.param && nd.has_grad) {
      T* pg = nd.param->grad.data();
      const T* src = nd.grad.data();
      for (std::int64_t i = 0; i < nd.grad.numel(); ++i) pg[i] += src[i];
    }
  }
}

// ---- multi-head attention ------------------------------------------------------

template <typename T>
typename Tape<T>::Id multi_head_attention(Tape<T>& tp, typename Tape<T>::Id q,
                                          typename Tape<T>::Id kv, int n_heads,
                                          const MhaWeights<T>& w,
                                          typename Tape<T>::Id key_mask) {
  using Id = typename Tape<T>::Id;
  // copies: node references go stale as ops grow the tape
  const Tensor<T> qv = tp.value(q);
  const Tensor<T> kvv = tp.value(kv);
  if (qv.rank() < 2 || kvv.rank() < 2)
    throw std::invalid_argument("attention: rank must be >= 2");
  const std::int64_t d_model = qv.dim(-1);
  if (kvv.dim(-1) != d_model)
    throw std::invalid_argument("attention: embedding dims disagree");
  if (n_heads < 1 || d_model % n_heads != 0)
    throw std::invalid_argument("attention: embedding dim not divisible by heads");
  const std::int64_t d_head = d_model / n_heads;
  const std::int64_t len_q = qv.dim(-2);
  const std::int64_t len_k = kvv.dim(-2);
  Shape lead(qv.shape().begin(), qv.shape().end() - 2);
  {
    Shape lead_kv(kvv.shape().begin(), kvv.shape().end() - 2);
    if (lead != lead_kv)
      throw std::invalid_argument("attention: leading dimensions disagree");
  }

  auto split_heads = [&](Id x, std::int64_t len) {
    Shape s = lead;
    s.insert(s.end(), {len, static_cast<std::int64_t>(n_heads), d_head});
    Id y = tp.reshape(x, s);
    const int rank = static_cast<int>(s.size());
    return tp.transpose(y, rank - 3, rank - 2);  // ... x heads x len x d_head
  };

  Id qh = split_heads(tp.linear(q, w.wq, w.bq), len_q);
  Id kh = split_heads(tp.linear(kv, w.wk, w.bk), len_k);
  Id vh = split_heads(tp.linear(kv, w.wv, w.bv), len_k);

  const int hrank = static_cast<int>(lead.size()) + 3;
  Id scores = tp.matmul(qh, tp.transpose(kh, hrank - 2, hrank - 1));
  scores = tp.scalar_mul(scores, T(1) / static_cast<T>(std::sqrt(
                                      static_cast<double>(d_head))));
  Id mask = Tape<T>::kNone;
  if (key_mask != Tape<T>::kNone) {
    Shape ms = lead;
    ms.insert(ms.end(), {1, 1, len_k});
    mask = tp.reshape(key_mask, ms);
  }
  Id probs = tp.softmax(scores, mask);
  Id ctx = tp.matmul(probs, vh);  // ... x heads x len_q x d_head
  ctx = tp.transpose(ctx, hrank - 3, hrank - 2);
  Shape merged = lead;
  merged.insert(merged.end(), {len_q, d_model});
  ctx = tp.reshape(ctx, merged);
  return tp.linear(ctx, w.wo, w.bo);
}

template class Tape<float>;
template class Tape<double>;
template struct Parameter<float>;
template struct Parameter<double>;

template Tape<float>::Id multi_head_attention<float>(Tape<float>&, Tape<float>::Id,
                                                     Tape<float>::Id, int,
                                                     const MhaWeights<float>&,
                                                     Tape<float>::Id);
template Tape<double>::Id multi_head_attention<double>(
    Tape<double>&, Tape<double>::Id, Tape<double>::Id, int,
    const MhaWeights<double>&, Tape<double>::Id);

}  // namespace bt

#include <cmath>

#include "bt/kernels.hpp"

// Naive serial kernels. These define the reference semantics the OpenMP
// kernels must reproduce bitwise: every output element is a plain
// batch-major, k-ascending sum.

namespace bt::kern::ref {

template <typename T>
void matmul(const T* a, const T* b, T* c, std::int64_t batch, std::int64_t m,
            std::int64_t k, std::int64_t n, const MatmulOpts& o) {
  const std::int64_t a_stride = m * k;
  const std::int64_t b_stride = o.broadcast_b ? 0 : k * n;
  const std::int64_t c_stride = o.sum_batches ? 0 : m * n;
  if (!o.accumulate) {
    const std::int64_t c_total = o.sum_batches ? m * n : batch * m * n;
    for (std::int64_t i = 0; i < c_total; ++i) c[i] = T(0);
  }
  for (std::int64_t bb = 0; bb < batch; ++bb) {
    const T* pa = a + bb * a_stride;
    const T* pb = b + bb * b_stride;
    T* pc = c + bb * c_stride;
    for (std::int64_t i = 0; i < m; ++i) {
      for (std::int64_t j = 0; j < n; ++j) {
        T acc = pc[i * n + j];
        for (std::int64_t kk = 0; kk < k; ++kk) {
          const T av = o.trans_a ? pa[kk * m + i] : pa[i * k + kk];
          const T bv = o.trans_b ? pb[j * k + kk] : pb[kk * n + j];
          acc += av * bv;
        }
        pc[i * n + j] = acc;
      }
    }
  }
}

template <typename T>
void softmax_rows(const T* x, T* p, std::int64_t rows, std::int64_t cols) {
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* xr = x + r * cols;
    T* pr = p + r * cols;
    T mx = xr[0];
    for (std::int64_t j = 1; j < cols; ++j) mx = xr[j] > mx ? xr[j] : mx;
    T sum = T(0);
    for (std::int64_t j = 0; j < cols; ++j) {
      pr[j] = std::exp(xr[j] - mx);
      sum += pr[j];
    }
    for (std::int64_t j = 0; j < cols; ++j) pr[j] /= sum;
  }
}

template <typename T>
void layer_norm_rows(const T* x, T* xhat, T* inv_std, std::int64_t rows,
                     std::int64_t cols, T eps) {
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* xr = x + r * cols;
    T* hr = xhat + r * cols;
    T mean = T(0);
    for (std::int64_t j = 0; j < cols; ++j) mean += xr[j];
    mean /= static_cast<T>(cols);
    T var = T(0);
    for (std::int64_t j = 0; j < cols; ++j) {
      const T d = xr[j] - mean;
      var += d * d;
    }
    var /= static_cast<T>(cols);
    const T is = T(1) / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::int64_t j = 0; j < cols; ++j) hr[j] = (xr[j] - mean) * is;
  }
}

template void matmul<float>(const float*, const float*, float*, std::int64_t,
                            std::int64_t, std::int64_t, std::int64_t,
                            const MatmulOpts&);
template void matmul<double>(const double*, const double*, double*,
                             std::int64_t, std::int64_t, std::int64_t,
                             std::int64_t, const MatmulOpts&);
template void softmax_rows<float>(const float*, float*, std::int64_t,
                                  std::int64_t);
template void softmax_rows<double>(const double*, double*, std::int64_t,
                                   std::int64_t);
template void layer_norm_rows<float>(const float*, float*, float*,
                                     std::int64_t, std::int64_t, float);
template void layer_norm_rows<double>(const double*, double*, double*,
                                      std::int64_t, std::int64_t, double);

}  // namespace bt::kern::ref

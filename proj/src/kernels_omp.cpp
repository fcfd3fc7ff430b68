#include <atomic>
#include <cmath>

#include "bt/kernels.hpp"

// OpenMP kernels. Work is split across independent output rows only; the
// per-element accumulation order (batch-major, k-ascending) matches the
// serial reference, so outputs are bitwise identical at any thread count.

namespace bt::kern {

namespace {
std::atomic<bool> g_parallel{true};
}

void set_parallel(bool on) { g_parallel.store(on, std::memory_order_relaxed); }

bool parallel_enabled() { return g_parallel.load(std::memory_order_relaxed); }

void set_num_threads(int n) {
#ifdef _OPENMP
  if (n > 0) omp_set_num_threads(n);
#else
  (void)n;
#endif
}

namespace {

// One logical output row i of C_b (or of the batch-summed C).
template <typename T>
inline void matmul_row(const T* pa, const T* pb, T* c_row, std::int64_t m,
                       std::int64_t k, std::int64_t n, std::int64_t i,
                       const MatmulOpts& o) {
  if (!o.trans_a && !o.trans_b) {
    const T* a_row = pa + i * k;
    for (std::int64_t kk = 0; kk < k; ++kk) {
      const T av = a_row[kk];
      const T* b_row = pb + kk * n;
      for (std::int64_t j = 0; j < n; ++j) c_row[j] += av * b_row[j];
    }
  } else if (!o.trans_a && o.trans_b) {
    const T* a_row = pa + i * k;
    for (std::int64_t j = 0; j < n; ++j) {
      const T* b_row = pb + j * k;
      T acc = c_row[j];
      for (std::int64_t kk = 0; kk < k; ++kk) acc += a_row[kk] * b_row[kk];
      c_row[j] = acc;
    }
  } else if (o.trans_a && !o.trans_b) {
    for (std::int64_t kk = 0; kk < k; ++kk) {
      const T av = pa[kk * m + i];
      const T* b_row = pb + kk * n;
      for (std::int64_t j = 0; j < n; ++j) c_row[j] += av * b_row[j];
    }
  } else {
    for (std::int64_t j = 0; j < n; ++j) {
      T acc = c_row[j];
      for (std::int64_t kk = 0; kk < k; ++kk) acc += pa[kk * m + i] * pb[j * k + kk];
      c_row[j] = acc;
    }
  }
}

}  // namespace

template <typename T>
void matmul(const T* a, const T* b, T* c, std::int64_t batch, std::int64_t m,
            std::int64_t k, std::int64_t n, const MatmulOpts& o) {
  const std::int64_t a_stride = m * k;
  const std::int64_t b_stride = o.broadcast_b ? 0 : k * n;
#ifdef _OPENMP
  const bool par = parallel_enabled() && batch * m * k * n >= kParallelGrain;
#endif
  if (o.sum_batches) {
    // All batches land in one C; rows stay independent, so split across i.
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (par)
#endif
    for (std::int64_t i = 0; i < m; ++i) {
      T* c_row = c + i * n;
      if (!o.accumulate)
        for (std::int64_t j = 0; j < n; ++j) c_row[j] = T(0);
      for (std::int64_t bb = 0; bb < batch; ++bb)
        matmul_row(a + bb * a_stride, b + bb * b_stride, c_row, m, k, n, i, o);
    }
    return;
  }
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (par)
#endif
  for (std::int64_t t = 0; t < batch * m; ++t) {
    const std::int64_t bb = t / m;
    const std::int64_t i = t % m;
    T* c_row = c + bb * m * n + i * n;
    if (!o.accumulate)
      for (std::int64_t j = 0; j < n; ++j) c_row[j] = T(0);
    matmul_row(a + bb * a_stride, b + bb * b_stride, c_row, m, k, n, i, o);
  }
}

template <typename T>
void softmax_rows(const T* x, T* p, std::int64_t rows, std::int64_t cols) {
#ifdef _OPENMP
  const bool par = parallel_enabled() && rows * cols >= kParallelGrain;
#pragma omp parallel for schedule(static) if (par)
#endif
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
#ifdef _OPENMP
  const bool par = parallel_enabled() && rows * cols >= kParallelGrain;
#pragma omp parallel for schedule(static) if (par)
#endif
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

}  // namespace bt::kern

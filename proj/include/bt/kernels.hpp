#pragma once

#include <cstdint>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace bt::kern {

// Runtime switch for the OpenMP paths. Kernels parallelize only across
// independent output elements and keep a fixed per-element accumulation
// order, so results are bitwise identical to the serial reference at any
// thread count.
void set_parallel(bool on);
bool parallel_enabled();
void set_num_threads(int n);  // n <= 0 restores the OpenMP default

struct MatmulOpts {
  bool trans_a = false;    // use the transpose of each A matrix
  bool trans_b = false;    // use the transpose of each B matrix
  bool broadcast_b = false;  // one shared B for every batch
  bool sum_batches = false;  // C is a single m x n receiving the batch sum
  bool accumulate = false;   // add into C instead of overwriting
};

// Batched matrix product over the trailing two axes: C_b = A'_b x B'_b with
// logical sizes A' m x k and B' k x n. Per output element the sum runs
// batch-major (when sum_batches) then k-ascending; this order is part of
// the contract and shared with the serial reference.
template <typename T>
void matmul(const T* a, const T* b, T* c, std::int64_t batch, std::int64_t m,
            std::int64_t k, std::int64_t n, const MatmulOpts& opts = {});

template <typename T>
void softmax_rows(const T* x, T* p, std::int64_t rows, std::int64_t cols);

// Writes the normalized rows (zero mean, unit population variance up to
// eps) and the per-row 1/sqrt(var + eps) needed by the backward pass.
template <typename T>
void layer_norm_rows(const T* x, T* xhat, T* inv_std, std::int64_t rows,
                     std::int64_t cols, T eps);

// Serial reference implementations, kept for kernel tests and benchmarks.
namespace ref {
template <typename T>
void matmul(const T* a, const T* b, T* c, std::int64_t batch, std::int64_t m,
            std::int64_t k, std::int64_t n, const MatmulOpts& opts = {});

template <typename T>
void softmax_rows(const T* x, T* p, std::int64_t rows, std::int64_t cols);

template <typename T>
void layer_norm_rows(const T* x, T* xhat, T* inv_std, std::int64_t rows,
                     std::int64_t cols, T eps);
}  // namespace ref

inline constexpr std::int64_t kParallelGrain = 4096;

// Elementwise helper; body(i) must touch only index i of any output.
template <class F>
void parallel_for(std::int64_t n, F&& body) {
#ifdef _OPENMP
  const bool par = parallel_enabled() && n >= kParallelGrain;
#pragma omp parallel for schedule(static) if (par)
  for (std::int64_t i = 0; i < n; ++i) body(i);
#else
  for (std::int64_t i = 0; i < n; ++i) body(i);
#endif
}

}  // namespace bt::kern

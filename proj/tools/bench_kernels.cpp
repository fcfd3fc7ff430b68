// Benchmarks the OpenMP kernels against the serial reference and verifies
// they agree bitwise on the benchmarked shapes.
//
//   bench_kernels [--threads N] [--reps R]

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <functional>
#include <string>
#include <vector>

#include "bt/kernels.hpp"
#include "bt/rng.hpp"

namespace {

using Clock = std::chrono::steady_clock;

double time_ms(const std::function<void()>& fn, int reps) {
  fn();  // warm up
  const auto start = Clock::now();
  for (int i = 0; i < reps; ++i) fn();
  const auto end = Clock::now();
  return std::chrono::duration<double, std::milli>(end - start).count() / reps;
}

std::vector<float> random_vec(std::int64_t n, bt::rng::Stream& rs) {
  std::vector<float> v(static_cast<std::size_t>(n));
  for (auto& x : v) x = static_cast<float>(rs.next_gauss());
  return v;
}

void row(const char* name, double ref_ms, double par_ms, bool exact) {
  std::printf("%-28s %10.3f ms %10.3f ms %8.2fx   %s\n", name, ref_ms, par_ms,
              ref_ms / par_ms, exact ? "bitwise-equal" : "MISMATCH");
}

}  // namespace

int main(int argc, char** argv) {
  int threads = 0;
  int reps = 5;
  for (int i = 1; i < argc; ++i) {
    if (!std::strcmp(argv[i], "--threads") && i + 1 < argc)
      threads = std::atoi(argv[++i]);
    else if (!std::strcmp(argv[i], "--reps") && i + 1 < argc)
      reps = std::atoi(argv[++i]);
  }
  bt::kern::set_num_threads(threads);
  bt::kern::set_parallel(true);

  bt::rng::Stream rs(42);
  std::printf("%-28s %13s %13s %9s\n", "kernel", "serial ref", "openmp",
              "speedup");

  {
    const std::int64_t b = 8, m = 192, k = 192, n = 192;
    auto a = random_vec(b * m * k, rs);
    auto bb = random_vec(b * k * n, rs);
    std::vector<float> c_ref(static_cast<std::size_t>(b * m * n));
    std::vector<float> c_par(c_ref.size());
    const double t_ref = time_ms(
        [&] {
          bt::kern::ref::matmul(a.data(), bb.data(), c_ref.data(), b, m, k, n, {});
        },
        reps);
    const double t_par = time_ms(
        [&] {
          bt::kern::matmul(a.data(), bb.data(), c_par.data(), b, m, k, n, {});
        },
        reps);
    row("matmul 8x192x192x192", t_ref, t_par, c_ref == c_par);
  }
  {
    const std::int64_t b = 64, m = 64, k = 256, n = 64;
    bt::kern::MatmulOpts o;
    o.trans_b = true;
    auto a = random_vec(b * m * k, rs);
    auto bb = random_vec(b * n * k, rs);
    std::vector<float> c_ref(static_cast<std::size_t>(b * m * n));
    std::vector<float> c_par(c_ref.size());
    const double t_ref = time_ms(
        [&] {
          bt::kern::ref::matmul(a.data(), bb.data(), c_ref.data(), b, m, k, n, o);
        },
        reps);
    const double t_par = time_ms(
        [&] {
          bt::kern::matmul(a.data(), bb.data(), c_par.data(), b, m, k, n, o);
        },
        reps);
    row("matmul-nt 64x64x256x64", t_ref, t_par, c_ref == c_par);
  }
  {
    const std::int64_t rows = 16384, cols = 256;
    auto x = random_vec(rows * cols, rs);
    std::vector<float> p_ref(x.size()), p_par(x.size());
    const double t_ref = time_ms(
        [&] { bt::kern::ref::softmax_rows(x.data(), p_ref.data(), rows, cols); },
        reps);
    const double t_par = time_ms(
        [&] { bt::kern::softmax_rows(x.data(), p_par.data(), rows, cols); },
        reps);
    row("softmax 16384x256", t_ref, t_par, p_ref == p_par);
  }
  {
    const std::int64_t rows = 16384, cols = 256;
    auto x = random_vec(rows * cols, rs);
    std::vector<float> h_ref(x.size()), h_par(x.size());
    std::vector<float> s_ref(static_cast<std::size_t>(rows)), s_par(s_ref.size());
    const double t_ref = time_ms(
        [&] {
          bt::kern::ref::layer_norm_rows(x.data(), h_ref.data(), s_ref.data(),
                                         rows, cols, 1e-5f);
        },
        reps);
    const double t_par = time_ms(
        [&] {
          bt::kern::layer_norm_rows(x.data(), h_par.data(), s_par.data(), rows,
                                    cols, 1e-5f);
        },
        reps);
    row("layer_norm 16384x256", t_ref, t_par,
        h_ref == h_par && s_ref == s_par);
  }
  return 0;
}

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <vector>

#include "bt/kernels.hpp"
#include "bt/rng.hpp"

namespace {

template <typename T>
std::vector<T> random_vec(std::int64_t n, bt::rng::Stream& rs) {
  std::vector<T> v(static_cast<std::size_t>(n));
  for (auto& x : v) x = static_cast<T>(rs.next_gauss());
  return v;
}

}  // namespace

// The OpenMP kernels must agree with the serial reference bitwise: they
// parallelize over output elements only and keep the same per-element
// accumulation order.
TEST_CASE_TEMPLATE("matmul: parallel kernels match the serial reference exactly",
                   T, float, double) {
  bt::rng::Stream rs(101);
  const struct {
    std::int64_t batch, m, k, n;
  } cases[] = {{1, 3, 4, 5}, {4, 16, 8, 12}, {2, 33, 65, 17}, {6, 1, 40, 1}};
  for (const auto& c : cases) {
    for (int flags = 0; flags < 8; ++flags) {
      bt::kern::MatmulOpts o;
      o.trans_a = flags & 1;
      o.trans_b = flags & 2;
      o.broadcast_b = flags & 4;
      const auto a = random_vec<T>(c.batch * c.m * c.k, rs);
      const auto b =
          random_vec<T>((o.broadcast_b ? 1 : c.batch) * c.k * c.n, rs);
      std::vector<T> c_ref(static_cast<std::size_t>(c.batch * c.m * c.n));
      std::vector<T> c_par = c_ref;
      bt::kern::ref::matmul(a.data(), b.data(), c_ref.data(), c.batch, c.m, c.k,
                            c.n, o);
      bt::kern::set_parallel(true);
      bt::kern::matmul(a.data(), b.data(), c_par.data(), c.batch, c.m, c.k, c.n,
                       o);
      CHECK(c_ref == c_par);
      // and with parallelism disabled
      bt::kern::set_parallel(false);
      std::vector<T> c_ser(c_ref.size());
      bt::kern::matmul(a.data(), b.data(), c_ser.data(), c.batch, c.m, c.k, c.n,
                       o);
      bt::kern::set_parallel(true);
      CHECK(c_ref == c_ser);
    }
  }
}

TEST_CASE_TEMPLATE("matmul: sum_batches and accumulate modes", T, float, double) {
  bt::rng::Stream rs(103);
  const std::int64_t batch = 5, m = 7, k = 6, n = 4;
  const auto a = random_vec<T>(batch * m * k, rs);
  const auto b = random_vec<T>(batch * k * n, rs);
  bt::kern::MatmulOpts o;
  o.sum_batches = true;
  o.accumulate = true;
  auto seed_vec = random_vec<T>(m * n, rs);
  std::vector<T> c_ref = seed_vec;
  std::vector<T> c_par = seed_vec;
  bt::kern::ref::matmul(a.data(), b.data(), c_ref.data(), batch, m, k, n, o);
  bt::kern::matmul(a.data(), b.data(), c_par.data(), batch, m, k, n, o);
  CHECK(c_ref == c_par);
  // sum over batches equals the sum of per-batch products
  std::vector<T> per(batch * m * n);
  bt::kern::ref::matmul(a.data(), b.data(), per.data(), batch, m, k, n, {});
  for (std::int64_t i = 0; i < m * n; ++i) {
    T acc = seed_vec[static_cast<std::size_t>(i)];
    for (std::int64_t bb = 0; bb < batch; ++bb)
      acc += per[static_cast<std::size_t>(bb * m * n + i)];
    CHECK(c_ref[static_cast<std::size_t>(i)] ==
          doctest::Approx(acc).epsilon(1e-5));
  }
}

TEST_CASE_TEMPLATE("softmax and layer_norm match the reference exactly", T,
                   float, double) {
  bt::rng::Stream rs(107);
  for (std::int64_t rows : {1, 9, 257}) {
    for (std::int64_t cols : {1, 5, 64}) {
      const auto x = random_vec<T>(rows * cols, rs);
      std::vector<T> p_ref(x.size()), p_par(x.size());
      bt::kern::ref::softmax_rows(x.data(), p_ref.data(), rows, cols);
      bt::kern::softmax_rows(x.data(), p_par.data(), rows, cols);
      CHECK(p_ref == p_par);

      std::vector<T> h_ref(x.size()), h_par(x.size());
      std::vector<T> s_ref(static_cast<std::size_t>(rows)),
          s_par(static_cast<std::size_t>(rows));
      bt::kern::ref::layer_norm_rows(x.data(), h_ref.data(), s_ref.data(), rows,
                                     cols, T(1e-5));
      bt::kern::layer_norm_rows(x.data(), h_par.data(), s_par.data(), rows, cols,
                                T(1e-5));
      CHECK(h_ref == h_par);
      CHECK(s_ref == s_par);
    }
  }
}

TEST_CASE("softmax rows sum to one") {
  bt::rng::Stream rs(109);
  const std::int64_t rows = 64, cols = 33;
  const auto x = random_vec<double>(rows * cols, rs);
  std::vector<double> p(x.size());
  bt::kern::softmax_rows(x.data(), p.data(), rows, cols);
  for (std::int64_t r = 0; r < rows; ++r) {
    double s = 0;
    for (std::int64_t j = 0; j < cols; ++j) s += p[static_cast<std::size_t>(r * cols + j)];
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
}

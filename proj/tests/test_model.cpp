#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>

#include "bt/checkpoint.hpp"
#include "bt/model.hpp"
#include "bt/train.hpp"
#include "gradcheck.hpp"

using bt::BasisTransformer;
using bt::HeadMode;
using bt::ModelConfig;
using bt::Shape;
using bt::Tensor;
using bt::TextEncoderSpec;
using bt::data::CellValue;
using bt::data::Row;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.embed_dim = 4;
  cfg.n_blocks = 1;
  cfg.n_heads = 2;
  cfg.basis_len = 2;
  cfg.comp_ratio = 1;
  cfg.n_ctx_layers = 1;
  cfg.mlp_hidden_mult = 2;
  cfg.smr = {2, 1};
  return cfg;
}

TextEncoderSpec tiny_text() {
  TextEncoderSpec spec;
  spec.vocab_buckets = 32;
  spec.text_dim = 4;
  return spec;
}

Row numeric_row(const std::vector<double>& vals) {
  Row r;
  for (std::size_t i = 0; i < vals.size(); ++i)
    r.pairs.emplace_back("c" + std::to_string(i), CellValue::make_number(vals[i]));
  return r;
}

std::vector<std::string> numeric_columns(std::size_t n) {
  std::vector<std::string> cols;
  for (std::size_t i = 0; i < n; ++i) cols.push_back("c" + std::to_string(i));
  return cols;
}

// rows with mixed types for invariance checks
std::vector<Row> mixed_rows(std::uint64_t seed, std::size_t batch,
                            std::size_t n_cols) {
  bt::rng::Stream rs(seed);
  const char* words[] = {"red", "green", "cold", "warm", "big", "small"};
  std::vector<Row> rows;
  for (std::size_t b = 0; b < batch; ++b) {
    Row r;
    for (std::size_t c = 0; c < n_cols; ++c) {
      const std::string name = "col" + std::to_string(c);
      const auto kind = rs.next_below(3);
      if (kind == 0)
        r.pairs.emplace_back(name, CellValue::make_number(rs.next_range(-4, 4)));
      else if (kind == 1)
        r.pairs.emplace_back(
            name, CellValue::make_text(std::string(words[rs.next_below(6)]) + " " +
                                       words[rs.next_below(6)]));
      else
        r.pairs.emplace_back(name, CellValue::make_missing());
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

std::vector<std::string> mixed_columns(std::size_t n) {
  std::vector<std::string> cols;
  for (std::size_t i = 0; i < n; ++i) cols.push_back("col" + std::to_string(i));
  return cols;
}

}  // namespace

TEST_CASE("parameter count formula matches a hand count at the tiny config") {
  const ModelConfig cfg = tiny_config();
  // hand count: queries 16, block 876 (two compressors 360, mixer 184,
  // latent down 36, one context layer 172, up-map 40, final branch 84),
  // flatten downscale 36, head 20
  CHECK(bt::count_params(cfg) == 948);

  BasisTransformer<double> model(cfg, tiny_text(), 1);
  // encoder: 32x4 table + 4x4+4 text proj + 4x4+4 numeric proj + 4 missing
  CHECK(model.encoder().param_count() == 128 + 20 + 20 + 4);
  CHECK(model.total_params() ==
        bt::count_params(cfg) + model.encoder().param_count());

  ModelConfig two = tiny_config();
  two.n_blocks = 2;
  BasisTransformer<double> model2(two, tiny_text(), 1);
  CHECK(model2.total_params() ==
        bt::count_params(two) + model2.encoder().param_count());
  // non-final blocks carry a second decompression branch
  CHECK(bt::count_params(two) - bt::count_params(cfg) == 876 + 84);
}

TEST_CASE("config validation") {
  ModelConfig cfg = tiny_config();
  cfg.n_heads = 3;  // does not divide embed_dim
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = tiny_config();
  cfg.n_blocks = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = tiny_config();
  cfg.smr.high_bits = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("forward shapes for both heads") {
  ModelConfig cfg = tiny_config();
  cfg.smr = {14, 6};
  BasisTransformer<double> model(cfg, tiny_text(), 2);
  std::vector<Row> rows = {numeric_row({1.0, -2.0, 0.5}),
                           numeric_row({0.0, 4.0, -1.0})};
  bt::Tape<double> tp;
  const auto logits = model.forward_rows(tp, rows, numeric_columns(3));
  CHECK(tp.value(logits).shape() == Shape{2, 21});

  ModelConfig scalar_cfg = cfg;
  scalar_cfg.head_mode = HeadMode::Scalar;
  BasisTransformer<double> scalar_model(scalar_cfg, tiny_text(), 2);
  bt::Tape<double> tp2;
  const auto pred = scalar_model.forward_rows(tp2, rows, numeric_columns(3));
  CHECK(tp2.value(pred).shape() == Shape{2, 1});
}

TEST_CASE("zero-initialized head gives exactly width*ln2 starting loss") {
  ModelConfig cfg = tiny_config();
  cfg.smr = {8, 4};
  BasisTransformer<double> model(cfg, tiny_text(), 7);
  bt::TrainConfig tc;
  tc.batch_size = 2;
  std::vector<Row> rows = {numeric_row({1.0, 2.0}), numeric_row({3.0, 4.0})};
  for (double scale : {1.0, 1e5}) {
    bt::Tape<double> tp;
    const auto logits = model.forward_rows(tp, rows, numeric_columns(2));
    const auto res =
        bt::batch_loss(tp, logits, {2.0 * scale, 3.0 * scale}, cfg, tc);
    for (double v : res.per_sample)
      CHECK(v == doctest::Approx(13.0 * std::log(2.0)).epsilon(1e-12));
  }
}

TEST_CASE("duplicate rows produce identical logits") {
  ModelConfig cfg = tiny_config();
  BasisTransformer<double> model(cfg, tiny_text(), 3);
  std::vector<Row> rows = {numeric_row({1.5, -0.5}), numeric_row({1.5, -0.5})};
  bt::Tape<double> tp;
  const auto logits = model.forward_rows(tp, rows, numeric_columns(2));
  const Tensor<double> v = tp.value(logits);
  const std::int64_t w = v.dim(1);
  for (std::int64_t j = 0; j < w; ++j) CHECK(v[j] == v[w + j]);
}

TEST_CASE_TEMPLATE("column permutation leaves logits unchanged", T, float,
                   double) {
  ModelConfig cfg = tiny_config();
  cfg.embed_dim = 16;
  cfg.n_heads = 4;
  cfg.basis_len = 4;
  cfg.n_blocks = 2;
  const double tol = std::is_same_v<T, float> ? 1e-4 : 1e-8;
  for (std::uint64_t trial = 0; trial < 10; ++trial) {
    BasisTransformer<T> model(cfg, tiny_text(), 100 + trial);
    const auto rows = mixed_rows(trial, 3, 5);
    auto cols = mixed_columns(5);
    bt::Tape<T> tp;
    const Tensor<T> base = tp.value(model.forward_rows(tp, rows, cols)).clone();
    bt::rng::Stream rs(trial + 77);
    rs.shuffle(cols.begin(), cols.end());
    bt::Tape<T> tp2;
    const Tensor<T> permuted = tp2.value(model.forward_rows(tp2, rows, cols));
    double max_diff = 0.0;
    for (std::int64_t i = 0; i < base.numel(); ++i)
      max_diff = std::max(max_diff, std::fabs(static_cast<double>(base[i]) -
                                              static_cast<double>(permuted[i])));
    CHECK(max_diff <= tol);
  }
}

TEST_CASE("value token order inside an entry leaves logits unchanged") {
  ModelConfig cfg = tiny_config();
  cfg.embed_dim = 16;
  cfg.n_heads = 4;
  BasisTransformer<float> model(cfg, tiny_text(), 11);
  std::vector<Row> a, b;
  Row ra, rb;
  ra.pairs.emplace_back("t", CellValue::make_text("alpha beta gamma delta"));
  ra.pairs.emplace_back("x", CellValue::make_number(2.0));
  rb.pairs.emplace_back("t", CellValue::make_text("delta gamma beta alpha"));
  rb.pairs.emplace_back("x", CellValue::make_number(2.0));
  a.push_back(ra);
  b.push_back(rb);
  bt::Tape<float> t1, t2;
  const Tensor<float> la = t1.value(model.forward_rows(t1, a, {"t", "x"})).clone();
  const Tensor<float> lb = t2.value(model.forward_rows(t2, b, {"t", "x"}));
  for (std::int64_t i = 0; i < la.numel(); ++i)
    CHECK(std::fabs(la[i] - lb[i]) <= 1e-5);
}

TEST_CASE("latent compression depends on basis order") {
  bt::rng::Stream rs(13);
  bt::detail::LinearLayer<double> down("down", 8, 4, rs);
  Tensor<double> x = btt::random_tensor<double>(Shape{1, 2, 4}, rs);  // 2 basis rows
  Tensor<double> swapped(Shape{1, 2, 4});
  for (int j = 0; j < 4; ++j) {
    swapped[j] = x[4 + j];
    swapped[4 + j] = x[j];
  }
  bt::Tape<double> tp;
  const auto a =
      tp.value(down.apply(tp, tp.reshape(tp.constant(x), Shape{1, 8}))).clone();
  const auto b = tp.value(
      down.apply(tp, tp.reshape(tp.constant(swapped), Shape{1, 8})));
  bool any_diff = false;
  for (std::int64_t i = 0; i < a.numel(); ++i)
    any_diff = any_diff || a[i] != b[i];
  CHECK(any_diff);
}

TEST_CASE("query expander emits two distinct branches before the final block") {
  bt::rng::Stream rs(17);
  ModelConfig cfg = tiny_config();
  bt::detail::QueryExpander<double> expander("exp", cfg, /*final=*/false, rs);
  bt::Tape<double> tp;
  const auto latent = tp.constant(
      btt::random_tensor<double>(Shape{2, 3, cfg.comp_ratio * cfg.embed_dim}, rs));
  auto [names, values] = expander.apply(tp, latent, 3);
  CHECK(tp.value(names).shape() == Shape{2, 3, cfg.basis_len, cfg.embed_dim});
  CHECK(tp.value(values).shape() == Shape{2, 3, cfg.basis_len, cfg.embed_dim});
  bool differ = false;
  for (std::int64_t i = 0; i < tp.value(names).numel(); ++i)
    differ = differ || tp.value(names)[i] != tp.value(values)[i];
  CHECK(differ);

  bt::detail::QueryExpander<double> final_exp("fin", cfg, /*final=*/true, rs);
  auto [single, none] = final_exp.apply(tp, latent, 3);
  CHECK(tp.value(single).shape() == Shape{2, 3, cfg.basis_len, cfg.embed_dim});
  CHECK(none == bt::Tape<double>::kNone);
}

TEST_CASE("end-to-end gradient check at the tiny config") {
  ModelConfig cfg;
  cfg.embed_dim = 8;
  cfg.n_heads = 2;
  cfg.basis_len = 2;
  cfg.n_blocks = 2;
  cfg.comp_ratio = 1;
  cfg.n_ctx_layers = 1;
  cfg.smr = {3, 2};
  TextEncoderSpec spec;
  spec.vocab_buckets = 16;
  spec.text_dim = 4;
  BasisTransformer<double> model(cfg, spec, 21);

  const auto rows = mixed_rows(5, 2, 3);
  const auto cols = mixed_columns(3);
  const std::vector<double> targets = {1.5, -2.25};
  bt::TrainConfig tc;
  tc.batch_size = 2;
  // hold the sample weights constant: the hard-threshold agreement score
  // jumps when a logit crosses zero, and the objective is defined with the
  // weights detached
  tc.gamma = 0.5;

  auto build = [&](bt::Tape<double>& tp) {
    const auto logits = model.forward_rows(tp, rows, cols);
    return bt::batch_loss(tp, logits, targets, cfg, tc).batch_loss;
  };
  const auto res = btt::gradcheck(model.params(), build, 1e-5);
  CHECK(res.checked == model.total_params());
  CHECK(res.max_rel < 1e-3);
}

TEST_CASE("checkpoint round trip is bit exact") {
  ModelConfig cfg = tiny_config();
  cfg.embed_dim = 8;
  cfg.n_heads = 2;
  BasisTransformer<float> model(cfg, tiny_text(), 9);
  const auto rows = mixed_rows(2, 2, 3);
  const auto cols = mixed_columns(3);
  bt::Tape<float> tp;
  const Tensor<float> before = tp.value(model.forward_rows(tp, rows, cols)).clone();

  const std::string path =
      (std::filesystem::temp_directory_path() / "bt_test_ckpt.bin").string();
  bt::save_checkpoint(path, model);
  auto loaded = bt::load_checkpoint<float>(path);
  CHECK(loaded->config().embed_dim == cfg.embed_dim);
  CHECK(loaded->total_params() == model.total_params());
  bt::Tape<float> tp2;
  const Tensor<float> after = tp2.value(loaded->forward_rows(tp2, rows, cols));
  REQUIRE(after.numel() == before.numel());
  for (std::int64_t i = 0; i < before.numel(); ++i) CHECK(before[i] == after[i]);

  // save -> load -> save reproduces the file byte for byte
  const std::string path2 =
      (std::filesystem::temp_directory_path() / "bt_test_ckpt2.bin").string();
  bt::save_checkpoint(path2, *loaded);
  std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
  const std::string c1((std::istreambuf_iterator<char>(f1)),
                       std::istreambuf_iterator<char>());
  const std::string c2((std::istreambuf_iterator<char>(f2)),
                       std::istreambuf_iterator<char>());
  CHECK(c1 == c2);
  std::remove(path.c_str());
  std::remove(path2.c_str());
}

TEST_CASE("empty column set is rejected") {
  BasisTransformer<double> model(tiny_config(), tiny_text(), 1);
  bt::Tape<double> tp;
  std::vector<Row> rows = {numeric_row({1.0})};
  CHECK_THROWS_AS(model.forward_rows(tp, rows, {}), std::invalid_argument);
}

#include "bt/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "bt/errors.hpp"
#include "bt/metrics.hpp"

namespace bt {

void TrainConfig::validate() const {
  if (learning_rate <= 0.0) throw std::invalid_argument("train: learning_rate must be > 0");
  if (weight_decay < 0.0) throw std::invalid_argument("train: weight_decay must be >= 0");
  if (beta1 < 0.0 || beta1 >= 1.0) throw std::invalid_argument("train: beta1 outside [0, 1)");
  if (beta2 < 0.0 || beta2 >= 1.0) throw std::invalid_argument("train: beta2 outside [0, 1)");
  if (eps_opt <= 0.0) throw std::invalid_argument("train: eps_opt must be > 0");
  if (max_grad_norm <= 0.0) throw std::invalid_argument("train: max_grad_norm must be > 0");
  if (lr_decay_mult <= 0.0 || lr_decay_mult > 1.0)
    throw std::invalid_argument("train: lr_decay_mult outside (0, 1]");
  if (gamma < 0.0 || gamma > 0.5)
    throw std::invalid_argument("train: gamma outside [0, 0.5]");
  if (eps_g <= 0.0) throw std::invalid_argument("train: eps_g must be > 0");
  if (batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
  if (n_strides < 1) throw std::invalid_argument("train: n_strides must be >= 1");
  if (stride_size < 1) throw std::invalid_argument("train: stride_size must be >= 1");
}

double magnitude_agreement(double y, double y_hat, double eps_g) {
  if (!std::isfinite(y) || !std::isfinite(y_hat))
    throw std::invalid_argument("magnitude_agreement: non-finite input");
  if (eps_g <= 0.0) throw std::invalid_argument("magnitude_agreement: eps_g must be > 0");
  const double a = std::fabs(y);
  const double b = std::fabs(y_hat);
  return (std::min(a, b) + eps_g) / (std::max(a, b) + eps_g);
}

double reweigh_weight(double g, double gamma) {
  return (1.0 - g) * (1.0 - 2.0 * gamma) + gamma;
}

template <typename T>
std::vector<double> decode_predictions(const Tensor<T>& logits,
                                       const ModelConfig& cfg) {
  const std::int64_t batch = logits.dim(0);
  const std::int64_t width = logits.dim(1);
  std::vector<double> out(static_cast<std::size_t>(batch));
  if (cfg.head_mode == HeadMode::Scalar) {
    if (width != 1) throw std::invalid_argument("decode: scalar head expects width 1");
    for (std::int64_t i = 0; i < batch; ++i)
      out[static_cast<std::size_t>(i)] = static_cast<double>(logits[i]);
    return out;
  }
  if (width != cfg.smr.width())
    throw std::invalid_argument("decode: logit width does not match the bit layout");
  std::vector<double> probs(static_cast<std::size_t>(width));
  for (std::int64_t i = 0; i < batch; ++i) {
    for (std::int64_t j = 0; j < width; ++j) {
      const double z = static_cast<double>(logits[i * width + j]);
      probs[static_cast<std::size_t>(j)] = 1.0 / (1.0 + std::exp(-z));
    }
    out[static_cast<std::size_t>(i)] = smr::decode_probs(probs, cfg.smr);
  }
  return out;
}

template <typename T>
LossResult<T> batch_loss(Tape<T>& tp, typename Tape<T>::Id logits,
                         const std::vector<double>& targets,
                         const ModelConfig& model_cfg, const TrainConfig& cfg) {
  using Id = typename Tape<T>::Id;
  const Tensor<T> lv = tp.value(logits);
  const auto batch = static_cast<std::int64_t>(targets.size());
  if (lv.dim(0) != batch)
    throw std::invalid_argument("batch_loss: logits/targets size mismatch");
  for (double y : targets)
    if (!std::isfinite(y)) throw std::invalid_argument("batch_loss: non-finite target");

  Id per_sample;
  if (cfg.loss_mode == LossMode::BceSmr) {
    if (model_cfg.head_mode != HeadMode::SmrLogits)
      throw std::invalid_argument("batch_loss: BceSmr needs the SmrLogits head");
    const std::int64_t width = model_cfg.smr.width();
    Tensor<T> bits(Shape{batch, width});
    for (std::int64_t i = 0; i < batch; ++i) {
      const smr::SmrBits enc =
          smr::encode(targets[static_cast<std::size_t>(i)], model_cfg.smr);
      for (std::int64_t j = 0; j < width; ++j)
        bits[i * width + j] = static_cast<T>(enc.bits[static_cast<std::size_t>(j)]);
    }
    per_sample = tp.bce_with_logits(logits, tp.constant(std::move(bits)));
  } else {
    if (model_cfg.head_mode != HeadMode::Scalar)
      throw std::invalid_argument("batch_loss: MseScalar needs the Scalar head");
    Tensor<T> t(Shape{batch, 1});
    for (std::int64_t i = 0; i < batch; ++i)
      t[i] = static_cast<T>(targets[static_cast<std::size_t>(i)]);
    Id diff = tp.sub(logits, tp.constant(std::move(t)));
    per_sample = tp.reshape(tp.mul(diff, diff), Shape{batch});
  }

  LossResult<T> res;
  const Tensor<T> ps = tp.value(per_sample);
  res.per_sample.assign(ps.data(), ps.data() + ps.numel());
  res.predictions = decode_predictions(tp.value(logits), model_cfg);

  // Weights are constants: no gradient flows through the agreement score.
  Tensor<T> weights(Shape{batch});
  for (std::int64_t i = 0; i < batch; ++i) {
    const auto ui = static_cast<std::size_t>(i);
    if (cfg.reweigh) {
      const double g =
          magnitude_agreement(targets[ui], res.predictions[ui], cfg.eps_g);
      weights[i] = static_cast<T>(reweigh_weight(g, cfg.gamma));
    } else {
      weights[i] = T(0.5);
    }
  }
  res.batch_loss =
      tp.mean(tp.mul(per_sample, tp.constant(std::move(weights))), 0);
  return res;
}

template <typename T>
AdamW<T>::AdamW(const TrainConfig& cfg, std::vector<Parameter<T>*> params)
    : cfg_(cfg), params_(std::move(params)), lr_(cfg.learning_rate) {
  cfg_.validate();
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const auto* p : params_) {
    m_.emplace_back(p->value.shape());
    v_.emplace_back(p->value.shape());
  }
}

template <typename T>
void AdamW<T>::step() {
  double norm_sq = 0.0;
  for (const auto* p : params_) {
    const T* g = p->grad.data();
    for (std::int64_t i = 0; i < p->grad.numel(); ++i) {
      const double gv = static_cast<double>(g[i]);
      if (!std::isfinite(gv))
        throw NumericError("optimizer: non-finite gradient in " + p->name);
      norm_sq += gv * gv;
    }
  }
  const double norm = std::sqrt(norm_sq);
  const double clip =
      norm > cfg_.max_grad_norm ? cfg_.max_grad_norm / norm : 1.0;

  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Parameter<T>& p = *params_[k];
    T* w = p.value.data();
    const T* g = p.grad.data();
    T* m = m_[k].data();
    T* v = v_[k].data();
    for (std::int64_t i = 0; i < p.value.numel(); ++i) {
      const T gc = static_cast<T>(clip) * g[i];
      m[i] = static_cast<T>(cfg_.beta1) * m[i] + static_cast<T>(1.0 - cfg_.beta1) * gc;
      v[i] = static_cast<T>(cfg_.beta2) * v[i] + static_cast<T>(1.0 - cfg_.beta2) * gc * gc;
      const double m_hat = static_cast<double>(m[i]) / bc1;
      const double v_hat = static_cast<double>(v[i]) / bc2;
      const double update =
          m_hat / (std::sqrt(v_hat) + cfg_.eps_opt) +
          cfg_.weight_decay * static_cast<double>(w[i]);
      w[i] = static_cast<T>(static_cast<double>(w[i]) - lr_ * update);
    }
  }
}

std::string metric_record_line(const MetricRecord& rec) {
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "{\"stride\":%lld,\"dataset\":\"%s\",\"split\":\"%s\","
                "\"r2\":%.17g,\"loss\":%.17g}",
                static_cast<long long>(rec.stride), rec.dataset.c_str(),
                rec.split.c_str(), rec.r2, rec.loss);
  return buf;
}

template <typename T>
std::pair<double, double> evaluate_split(BasisTransformer<T>& model,
                                         const data::Dataset& ds,
                                         const std::vector<std::int64_t>& indices,
                                         const TrainConfig& cfg) {
  std::vector<double> y, y_hat;
  double loss_sum = 0.0;
  std::int64_t count = 0;
  for (std::size_t start = 0; start < indices.size();
       start += static_cast<std::size_t>(cfg.batch_size)) {
    const std::size_t stop =
        std::min(indices.size(), start + static_cast<std::size_t>(cfg.batch_size));
    std::vector<data::Row> rows;
    std::vector<double> targets;
    for (std::size_t i = start; i < stop; ++i) {
      rows.push_back(ds.rows[static_cast<std::size_t>(indices[i])]);
      targets.push_back(ds.targets[static_cast<std::size_t>(indices[i])]);
    }
    Tape<T> tp(cfg.seed, -1, false);
    const auto logits = model.forward_rows(tp, rows, ds.columns);
    LossResult<T> lr = batch_loss(tp, logits, targets, model.config(), cfg);
    for (double v : lr.per_sample) loss_sum += v;
    count += static_cast<std::int64_t>(lr.per_sample.size());
    y.insert(y.end(), targets.begin(), targets.end());
    y_hat.insert(y_hat.end(), lr.predictions.begin(), lr.predictions.end());
  }
  return {metrics::r2(y, y_hat), loss_sum / static_cast<double>(count)};
}

template <typename T>
void restore_params(BasisTransformer<T>& model,
                    const std::vector<std::vector<double>>& snapshot) {
  const auto& params = model.params();
  if (snapshot.size() != params.size())
    throw std::invalid_argument("restore: snapshot size mismatch");
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (static_cast<std::int64_t>(snapshot[k].size()) != params[k]->value.numel())
      throw std::invalid_argument("restore: parameter shape mismatch");
    for (std::int64_t i = 0; i < params[k]->value.numel(); ++i)
      params[k]->value[i] = static_cast<T>(snapshot[k][static_cast<std::size_t>(i)]);
  }
}

template <typename T>
TrainResult train_loop(BasisTransformer<T>& model,
                       const std::vector<data::Dataset>& datasets,
                       const std::vector<data::SplitIndices>& splits,
                       const TrainConfig& cfg, const TrainHooks<T>& hooks) {
  cfg.validate();
  if (datasets.empty()) throw std::invalid_argument("train_loop: no datasets");
  if (datasets.size() != splits.size())
    throw std::invalid_argument("train_loop: datasets/splits size mismatch");
  for (std::size_t d = 0; d < datasets.size(); ++d)
    if (splits[d].train.empty())
      throw std::invalid_argument("train_loop: empty training split in '" +
                                  datasets[d].name + "'");

  AdamW<T> opt(cfg, model.params());
  rng::Stream sampler(rng::derive_key(cfg.seed, 0x5A3B1E));

  TrainResult result;
  result.best_mean_r2 = -std::numeric_limits<double>::infinity();

  auto snapshot = [&] {
    std::vector<std::vector<double>> snap;
    for (const auto* p : model.params()) {
      std::vector<double> v(static_cast<std::size_t>(p->value.numel()));
      for (std::int64_t i = 0; i < p->value.numel(); ++i)
        v[static_cast<std::size_t>(i)] = static_cast<double>(p->value[i]);
      snap.push_back(std::move(v));
    }
    return snap;
  };

  std::int64_t step = 0;
  for (std::int64_t stride = 1; stride <= cfg.n_strides; ++stride) {
    for (std::int64_t s = 0; s < cfg.stride_size; ++s, ++step) {
      const auto d = static_cast<std::size_t>(
          sampler.next_below(static_cast<std::uint64_t>(datasets.size())));
      const auto& ds = datasets[d];
      const auto& train_idx = splits[d].train;

      std::vector<data::Row> rows;
      std::vector<double> targets;
      rows.reserve(static_cast<std::size_t>(cfg.batch_size));
      for (std::int64_t i = 0; i < cfg.batch_size; ++i) {
        const auto pick = train_idx[static_cast<std::size_t>(
            sampler.next_below(static_cast<std::uint64_t>(train_idx.size())))];
        rows.push_back(ds.rows[static_cast<std::size_t>(pick)]);
        targets.push_back(ds.targets[static_cast<std::size_t>(pick)]);
      }

      Tape<T> tp(cfg.seed, step, true);
      const auto logits = model.forward_rows(tp, rows, ds.columns);
      LossResult<T> lr = batch_loss(tp, logits, targets, model.config(), cfg);
      const double loss_value =
          static_cast<double>(tp.value(lr.batch_loss)[0]);
      if (!std::isfinite(loss_value))
        throw NumericError("train_loop: non-finite loss at step " +
                           std::to_string(step));
      model.zero_grads();
      tp.backward(lr.batch_loss);
      opt.step();
    }

    opt.set_lr(opt.lr() * cfg.lr_decay_mult);

    std::vector<MetricRecord> stride_records;
    double mean_r2 = 0.0;
    for (std::size_t d = 0; d < datasets.size(); ++d) {
      const auto [r2, loss] =
          evaluate_split(model, datasets[d], splits[d].val, cfg);
      stride_records.push_back({stride, datasets[d].name, "val", r2, loss});
      mean_r2 += r2;
    }
    mean_r2 /= static_cast<double>(datasets.size());
    if (mean_r2 > result.best_mean_r2) {
      result.best_mean_r2 = mean_r2;
      result.best_stride = stride;
      result.best_params = snapshot();
    }
    result.log.insert(result.log.end(), stride_records.begin(),
                      stride_records.end());
    if (hooks.on_stride) hooks.on_stride(stride, stride_records);
  }
  result.total_steps = step;
  return result;
}

template std::vector<double> decode_predictions<float>(const Tensor<float>&,
                                                       const ModelConfig&);
template std::vector<double> decode_predictions<double>(const Tensor<double>&,
                                                        const ModelConfig&);
template struct LossResult<float>;
template struct LossResult<double>;
template LossResult<float> batch_loss<float>(Tape<float>&, Tape<float>::Id,
                                             const std::vector<double>&,
                                             const ModelConfig&,
                                             const TrainConfig&);
template LossResult<double> batch_loss<double>(Tape<double>&, Tape<double>::Id,
                                               const std::vector<double>&,
                                               const ModelConfig&,
                                               const TrainConfig&);
template class AdamW<float>;
template class AdamW<double>;
template std::pair<double, double> evaluate_split<float>(
    BasisTransformer<float>&, const data::Dataset&,
    const std::vector<std::int64_t>&, const TrainConfig&);
template std::pair<double, double> evaluate_split<double>(
    BasisTransformer<double>&, const data::Dataset&,
    const std::vector<std::int64_t>&, const TrainConfig&);
template void restore_params<float>(BasisTransformer<float>&,
                                    const std::vector<std::vector<double>>&);
template void restore_params<double>(BasisTransformer<double>&,
                                     const std::vector<std::vector<double>>&);
template TrainResult train_loop<float>(BasisTransformer<float>&,
                                       const std::vector<data::Dataset>&,
                                       const std::vector<data::SplitIndices>&,
                                       const TrainConfig&,
                                       const TrainHooks<float>&);
template TrainResult train_loop<double>(BasisTransformer<double>&,
                                        const std::vector<data::Dataset>&,
                                        const std::vector<data::SplitIndices>&,
                                        const TrainConfig&,
                                        const TrainHooks<double>&);

}  // namespace bt

#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "bt/data.hpp"
#include "bt/model.hpp"

namespace bt {

enum class LossMode { BceSmr, MseScalar };

struct TrainConfig {
  double learning_rate = 1e-4;
  double weight_decay = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps_opt = 1e-8;
  double max_grad_norm = 1.0;
  double lr_decay_mult = 0.985;  // applied once per stride
  double gamma = 0.2;            // reweigh aggressiveness, [0, 0.5]
  double eps_g = 1e-8;           // magnitude-agreement stabilizer
  std::int64_t batch_size = 64;
  std::int64_t n_strides = 200;
  std::int64_t stride_size = 200;
  std::uint64_t seed = 0;
  LossMode loss_mode = LossMode::BceSmr;
  // Off means a constant weight of 1/2 on every sample, which is exactly
  // the gamma = 0.5 endpoint of the reweighing formula.
  bool reweigh = true;

  void validate() const;
};

// Bounded magnitude agreement of prediction and target, (0, 1]; symmetric
// and sign-blind.
double magnitude_agreement(double y, double y_hat, double eps_g);

// Loss weight for one sample: (1 - g) * (1 - 2 gamma) + gamma.
double reweigh_weight(double g, double gamma);

template <typename T>
struct LossResult {
  typename Tape<T>::Id batch_loss;           // scalar node
  std::vector<double> per_sample;            // detached per-sample losses
  std::vector<double> predictions;           // decoded scalar predictions
};

// Per-sample loss nodes from logits; targets are encoded on the fly for
// BceSmr. Weights are computed from detached predictions and folded in as
// constants; batch_loss is their weighted mean.
template <typename T>
LossResult<T> batch_loss(Tape<T>& tp, typename Tape<T>::Id logits,
                         const std::vector<double>& targets,
                         const ModelConfig& model_cfg, const TrainConfig& cfg);

// Decode model outputs back to scalars (hard threshold through the
// sign-magnitude layout, or the raw scalar in Scalar head mode).
template <typename T>
std::vector<double> decode_predictions(const Tensor<T>& logits,
                                       const ModelConfig& cfg);

template <typename T>
class AdamW {
 public:
  AdamW(const TrainConfig& cfg, std::vector<Parameter<T>*> params);

  // Global-norm clip, then decoupled-weight-decay moment update. Throws
  // NumericError on a non-finite gradient; the step is not applied.
  void step();
  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }
  std::int64_t step_count() const { return t_; }

 private:
  TrainConfig cfg_;
  std::vector<Parameter<T>*> params_;
  std::vector<Tensor<T>> m_, v_;
  double lr_;
  std::int64_t t_ = 0;
};

struct MetricRecord {
  std::int64_t stride = 0;
  std::string dataset;
  std::string split;
  double r2 = 0.0;
  double loss = 0.0;
};

// One JSONL line per record, fixed float formatting, byte-reproducible.
std::string metric_record_line(const MetricRecord& rec);

struct TrainResult {
  std::vector<MetricRecord> log;
  double best_mean_r2 = 0.0;
  std::int64_t best_stride = 0;
  std::int64_t total_steps = 0;
  std::vector<std::vector<double>> best_params;  // snapshot, registration order
};

template <typename T>
struct TrainHooks {
  // called after each stride with the records appended during it
  std::function<void(std::int64_t stride, const std::vector<MetricRecord>&)>
      on_stride;
};

// Multi-task stride loop: every gradient step draws one batch from a
// uniformly chosen dataset; validation runs after each stride and the best
// mean validation r2 snapshot is kept.
template <typename T>
TrainResult train_loop(BasisTransformer<T>& model,
                       const std::vector<data::Dataset>& datasets,
                       const std::vector<data::SplitIndices>& splits,
                       const TrainConfig& cfg, const TrainHooks<T>& hooks = {});

// Writes a parameter snapshot back into the model.
template <typename T>
void restore_params(BasisTransformer<T>& model,
                    const std::vector<std::vector<double>>& snapshot);

// Mean r2 / mean per-sample loss of the model on the given rows.
template <typename T>
std::pair<double, double> evaluate_split(BasisTransformer<T>& model,
                                         const data::Dataset& ds,
                                         const std::vector<std::int64_t>& indices,
                                         const TrainConfig& cfg);

}  // namespace bt

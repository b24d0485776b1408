#pragma once

#include <functional>
#include <string>
#include <vector>

#include "esfp/encoding.hpp"
#include "esfp/image.hpp"
#include "esfp/unet.hpp"

namespace esfp::train {

template <typename T>
struct AdamConfig {
  T learning_rate = T(1e-4);
  T beta1 = T(0.9);
  T beta2 = T(0.999);
  T epsilon = T(1e-8);
};

/// Standard bias-corrected Adam over a fixed parameter list.
template <typename T>
class Adam {
 public:
  Adam(std::vector<ad::Tensor<T>> params, AdamConfig<T> config);

  void zero_grad();
  /// Applies one update from the accumulated gradients. Non-finite gradients
  /// abort with the offending parameter index in the message.
  void step();
  long step_count() const { return steps_; }

 private:
  std::vector<ad::Tensor<T>> params_;
  std::vector<std::vector<T>> m_;
  std::vector<std::vector<T>> v_;
  AdamConfig<T> config_;
  long steps_ = 0;
};

struct EvalRow {
  std::string name;
  double mae_deg = 0;
  double ae1125 = 0;
  double ae225 = 0;
  double ae30 = 0;
  long pixels = 0;
};

struct EvalReport {
  std::vector<EvalRow> per_sample;
  EvalRow aggregate;  // unweighted mean over the per-sample rows
};

/// Angular error statistics between unit-normalized maps. The mask is the
/// ground truth's validity unless all_pixels is set; an empty selection is an
/// error.
EvalRow angular_metrics(const NormalMap& pred, const NormalMap& gt, bool all_pixels = false,
                        const std::string& name = "");

/// Plain (non-differentiable) Eq.-style cosine loss between normal maps.
double cosine_loss_value(const NormalMap& pred, const NormalMap& gt, bool all_pixels = false);

/// Differentiable loss: unit-normalizes the raw (3,H,W) prediction and takes
/// the masked mean of (1 - <pred, gt>).
template <typename T>
ad::Tensor<T> cosine_loss(ad::Tape<T>* tape, const ad::Tensor<T>& raw_pred,
                          const ad::Tensor<T>& gt_unit, const std::vector<uint8_t>& mask);

struct Sample {
  std::string name;
  CvgriTensor input;
  NormalMap gt;
};

struct TrainConfig {
  int epochs = 200;
  int batch_size = 2;
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double grad_clip = 0.0;  // 0 disables the global-norm clip
  uint64_t seed = 0;
  int eval_interval = 10;
  bool all_pixels = false;
  /// Stop once a test evaluation reaches this MAE; 0 disables early stop.
  double target_mae_deg = 0.0;
  /// Re-estimate normalization running statistics from the training set
  /// before each evaluation, so evaluation-mode normalization reflects the
  /// current weights instead of a lagging exponential average.
  bool recalibrate_stats = true;

  void validate() const;
};

struct HistoryRow {
  int epoch = 0;
  double loss = 0;
  bool evaluated = false;
  double mae_deg = 0;
  double ae1125 = 0;
  double ae225 = 0;
  double ae30 = 0;
};

struct TrainResult {
  std::vector<HistoryRow> history;
  int epochs_run = 0;
};

/// Runs evaluation-mode inference over the samples.
EvalReport evaluate(snn::SpikingUnet& net, const std::vector<Sample>& samples,
                    bool all_pixels = false);

/// Replaces the normalization running averages with the mean batch
/// statistics of the given samples under the current weights.
void recalibrate_norm_stats(snn::SpikingUnet& net, const std::vector<Sample>& samples,
                            int batch_size);

/// Epoch loop: shuffled batches, cosine loss averaged per batch, backward,
/// Adam. Deterministic for a fixed seed. Throws on divergence (non-finite
/// loss) so callers keep their last written checkpoint.
TrainResult train(snn::SpikingUnet& net, const std::vector<Sample>& train_set,
                  const std::vector<Sample>& test_set, const TrainConfig& config,
                  const std::function<void(const HistoryRow&)>& on_epoch = nullptr);

/// MAE of the best constant unit normal on the given samples (coarse angular
/// grid search refined around the mean direction).
double best_constant_baseline_mae(const std::vector<Sample>& samples, bool all_pixels = false);

}  // namespace esfp::train

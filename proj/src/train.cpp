#include "esfp/train.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>
#include <stdexcept>

namespace esfp::train {

namespace {

constexpr double kRadToDeg = 180.0 / std::numbers::pi;

}  // namespace

template <typename T>
Adam<T>::Adam(std::vector<ad::Tensor<T>> params, AdamConfig<T> config)
    : params_(std::move(params)), config_(config) {
  if (!(config_.learning_rate >= T(0))) throw std::invalid_argument("adam: negative learning rate");
  m_.resize(params_.size());
  v_.resize(params_.size());
  for (size_t i = 0; i < params_.size(); ++i) {
    if (!params_[i].requires_grad()) throw std::invalid_argument("adam: parameter does not track gradients");
    m_[i].assign(static_cast<size_t>(params_[i].numel()), T(0));
    v_[i].assign(static_cast<size_t>(params_[i].numel()), T(0));
  }
}

template <typename T>
void Adam<T>::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

template <typename T>
void Adam<T>::step() {
  ++steps_;
  const T bc1 = T(1) - std::pow(config_.beta1, static_cast<T>(steps_));
  const T bc2 = T(1) - std::pow(config_.beta2, static_cast<T>(steps_));
  for (size_t i = 0; i < params_.size(); ++i) {
    auto g = params_[i].grad();
    auto vals = params_[i].values();
    for (size_t j = 0; j < g.size(); ++j) {
      if (!std::isfinite(static_cast<double>(g[j])))
        throw std::runtime_error("adam: non-finite gradient in parameter " + std::to_string(i) +
                                 " at element " + std::to_string(j));
      m_[i][j] = config_.beta1 * m_[i][j] + (T(1) - config_.beta1) * g[j];
      v_[i][j] = config_.beta2 * v_[i][j] + (T(1) - config_.beta2) * g[j] * g[j];
      const T mhat = m_[i][j] / bc1;
      const T vhat = v_[i][j] / bc2;
      vals[j] -= config_.learning_rate * mhat / (std::sqrt(vhat) + config_.epsilon);
    }
  }
}

template class Adam<float>;
template class Adam<double>;

EvalRow angular_metrics(const NormalMap& pred, const NormalMap& gt, bool all_pixels,
                        const std::string& name) {
  if (pred.width != gt.width || pred.height != gt.height)
    throw std::invalid_argument("angular_metrics: shape mismatch");
  const long hw = gt.pixel_count();
  EvalRow row;
  row.name = name;
  double acc = 0;
  long n = 0, c1125 = 0, c225 = 0, c30 = 0;
  for (long i = 0; i < hw; ++i) {
    if (!all_pixels && !gt.valid[i]) continue;
    double dot = 0;
    for (int c = 0; c < 3; ++c)
      dot += static_cast<double>(pred.values[c * hw + i]) * gt.values[c * hw + i];
    dot = std::clamp(dot, -1.0, 1.0);
    const double err = std::acos(dot) * kRadToDeg;
    acc += err;
    ++n;
    if (err < 11.25) ++c1125;
    if (err < 22.5) ++c225;
    if (err < 30.0) ++c30;
  }
  if (n == 0) throw std::invalid_argument("angular_metrics: mask selects no pixels");
  row.pixels = n;
  row.mae_deg = acc / static_cast<double>(n);
  row.ae1125 = static_cast<double>(c1125) / static_cast<double>(n);
  row.ae225 = static_cast<double>(c225) / static_cast<double>(n);
  row.ae30 = static_cast<double>(c30) / static_cast<double>(n);
  return row;
}

double cosine_loss_value(const NormalMap& pred, const NormalMap& gt, bool all_pixels) {
  if (pred.width != gt.width || pred.height != gt.height)
    throw std::invalid_argument("cosine_loss: shape mismatch");
  const long hw = gt.pixel_count();
  double acc = 0;
  long n = 0;
  for (long i = 0; i < hw; ++i) {
    if (!all_pixels && !gt.valid[i]) continue;
    double dot = 0;
    for (int c = 0; c < 3; ++c)
      dot += static_cast<double>(pred.values[c * hw + i]) * gt.values[c * hw + i];
    acc += 1.0 - dot;
    ++n;
  }
  if (n == 0) throw std::invalid_argument("cosine_loss: mask selects no pixels");
  return acc / static_cast<double>(n);
}

template <typename T>
ad::Tensor<T> cosine_loss(ad::Tape<T>* tape, const ad::Tensor<T>& raw_pred,
                          const ad::Tensor<T>& gt_unit, const std::vector<uint8_t>& mask) {
  ad::Tensor<T> unit = ad::unit_normalize3(tape, raw_pred);
  return ad::masked_cosine_loss(tape, unit, gt_unit, mask);
}

template ad::Tensor<float> cosine_loss(ad::Tape<float>*, const ad::Tensor<float>&,
                                       const ad::Tensor<float>&, const std::vector<uint8_t>&);
template ad::Tensor<double> cosine_loss(ad::Tape<double>*, const ad::Tensor<double>&,
                                        const ad::Tensor<double>&, const std::vector<uint8_t>&);

void TrainConfig::validate() const {
  if (epochs < 0) throw std::invalid_argument("train: epochs must be non-negative");
  if (batch_size < 1) throw std::invalid_argument("train: batch size must be at least 1");
  if (learning_rate < 0) throw std::invalid_argument("train: learning rate must be non-negative");
  if (eval_interval < 1) throw std::invalid_argument("train: eval interval must be positive");
}

EvalReport evaluate(snn::SpikingUnet& net, const std::vector<Sample>& samples, bool all_pixels) {
  if (samples.empty()) throw std::invalid_argument("evaluate: no samples");
  EvalReport report;
  for (const auto& s : samples) {
    ad::TensorF raw = net.forward(nullptr, to_tensor(s.input.grid), /*training=*/false);
    NormalMap pred = snn::normalize_prediction(raw);
    report.per_sample.push_back(angular_metrics(pred, s.gt, all_pixels, s.name));
  }
  EvalRow agg;
  agg.name = "aggregate";
  for (const auto& r : report.per_sample) {
    agg.mae_deg += r.mae_deg;
    agg.ae1125 += r.ae1125;
    agg.ae225 += r.ae225;
    agg.ae30 += r.ae30;
    agg.pixels += r.pixels;
  }
  const double n = static_cast<double>(report.per_sample.size());
  agg.mae_deg /= n;
  agg.ae1125 /= n;
  agg.ae225 /= n;
  agg.ae30 /= n;
  report.aggregate = agg;
  return report;
}

void recalibrate_norm_stats(snn::SpikingUnet& net, const std::vector<Sample>& samples,
                            int batch_size) {
  if (samples.empty()) throw std::invalid_argument("recalibrate: no samples");
  net.begin_norm_recalibration();
  std::vector<ad::TensorF> batch;
  for (size_t i = 0; i < samples.size(); i += static_cast<size_t>(batch_size)) {
    batch.clear();
    for (size_t j = i; j < std::min(samples.size(), i + static_cast<size_t>(batch_size)); ++j)
      batch.push_back(to_tensor(samples[j].input.grid));
    net.forward_batch(nullptr, batch, /*training=*/true);
  }
  net.finish_norm_recalibration();
}

TrainResult train(snn::SpikingUnet& net, const std::vector<Sample>& train_set,
                  const std::vector<Sample>& test_set, const TrainConfig& config,
                  const std::function<void(const HistoryRow&)>& on_epoch) {
  config.validate();
  if (train_set.empty()) throw std::invalid_argument("train: empty dataset");

  AdamConfig<float> acfg;
  acfg.learning_rate = static_cast<float>(config.learning_rate);
  acfg.beta1 = static_cast<float>(config.beta1);
  acfg.beta2 = static_cast<float>(config.beta2);
  acfg.epsilon = static_cast<float>(config.epsilon);
  auto params = net.parameters();
  Adam<float> adam(params, acfg);

  // precomputed targets
  std::vector<ad::TensorF> inputs, gts;
  std::vector<std::vector<uint8_t>> masks;
  for (const auto& s : train_set) {
    inputs.push_back(to_tensor(s.input.grid));
    gts.push_back(snn::normals_to_tensor(s.gt));
    masks.push_back(config.all_pixels ? std::vector<uint8_t>{} : s.gt.valid);
  }

  std::mt19937_64 rng(config.seed * 0x2545f4914f6cdd1dULL + 1);
  std::vector<size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), size_t{0});

  TrainResult result;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0;
    long seen = 0;
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(config.batch_size)) {
      const size_t end = std::min(order.size(), start + static_cast<size_t>(config.batch_size));
      ad::Tape<float> tape;
      adam.zero_grad();
      std::vector<ad::TensorF> batch_inputs;
      for (size_t bi = start; bi < end; ++bi) batch_inputs.push_back(inputs[order[bi]]);
      const auto raws = net.forward_batch(&tape, batch_inputs, /*training=*/true);
      ad::TensorF batch_loss;
      for (size_t bi = start; bi < end; ++bi) {
        const size_t idx = order[bi];
        ad::TensorF loss = cosine_loss(&tape, raws[bi - start], gts[idx], masks[idx]);
        batch_loss = bi == start ? loss : ad::add(&tape, batch_loss, loss);
      }
      batch_loss = ad::scale(&tape, batch_loss, 1.0f / static_cast<float>(end - start));
      const double loss_value = static_cast<double>(batch_loss.values()[0]);
      if (!std::isfinite(loss_value))
        throw std::runtime_error("train: loss diverged at epoch " + std::to_string(epoch));
      if (loss_value < -1e-5 || loss_value > 2.0 + 1e-5)
        throw std::logic_error("train: cosine loss out of [0,2]: " + std::to_string(loss_value));
      tape.backward(batch_loss);

      if (config.grad_clip > 0) {
        double norm_sq = 0;
        for (auto& p : params)
          for (float g : p.grad()) norm_sq += static_cast<double>(g) * g;
        const double norm = std::sqrt(norm_sq);
        if (norm > config.grad_clip) {
          const float s = static_cast<float>(config.grad_clip / norm);
          for (auto& p : params)
            for (float& g : p.grad()) g *= s;
        }
      }
      adam.step();
      epoch_loss += loss_value * static_cast<double>(end - start);
      seen += static_cast<long>(end - start);
    }

    HistoryRow row;
    row.epoch = epoch;
    row.loss = epoch_loss / static_cast<double>(seen);
    const bool do_eval = !test_set.empty() &&
                         (epoch % config.eval_interval == 0 || epoch == config.epochs);
    if (do_eval) {
      if (config.recalibrate_stats) recalibrate_norm_stats(net, train_set, config.batch_size);
      EvalReport report = evaluate(net, test_set, config.all_pixels);
      row.evaluated = true;
      row.mae_deg = report.aggregate.mae_deg;
      row.ae1125 = report.aggregate.ae1125;
      row.ae225 = report.aggregate.ae225;
      row.ae30 = report.aggregate.ae30;
    }
    result.history.push_back(row);
    result.epochs_run = epoch;
    if (on_epoch) on_epoch(row);
    if (row.evaluated && config.target_mae_deg > 0 && row.mae_deg < config.target_mae_deg) break;
  }
  const bool ended_on_eval = !result.history.empty() && result.history.back().evaluated;
  if (config.recalibrate_stats && config.epochs > 0 && !ended_on_eval)
    recalibrate_norm_stats(net, train_set, config.batch_size);
  return result;
}

double best_constant_baseline_mae(const std::vector<Sample>& samples, bool all_pixels) {
  if (samples.empty()) throw std::invalid_argument("baseline: no samples");
  // start from the mean direction, then refine over a local angular grid
  double sx = 0, sy = 0, sz = 0;
  for (const auto& s : samples) {
    const long hw = s.gt.pixel_count();
    for (long i = 0; i < hw; ++i) {
      if (!all_pixels && !s.gt.valid[i]) continue;
      sx += s.gt.values[i];
      sy += s.gt.values[hw + i];
      sz += s.gt.values[2 * hw + i];
    }
  }
  const double norm = std::sqrt(sx * sx + sy * sy + sz * sz);
  double best_theta = 0, best_phi = 0;
  if (norm > 1e-12) {
    best_theta = std::acos(std::clamp(sz / norm, -1.0, 1.0));
    best_phi = std::atan2(sy, sx);
  }

  auto mae_of = [&](double theta, double phi) {
    NormalMap constant(samples.front().gt.width, samples.front().gt.height);
    const float nx = static_cast<float>(std::sin(theta) * std::cos(phi));
    const float ny = static_cast<float>(std::sin(theta) * std::sin(phi));
    const float nz = static_cast<float>(std::cos(theta));
    const long hw = constant.pixel_count();
    for (long i = 0; i < hw; ++i) {
      constant.values[i] = nx;
      constant.values[hw + i] = ny;
      constant.values[2 * hw + i] = nz;
    }
    double acc = 0;
    for (const auto& s : samples) {
      acc += angular_metrics(constant, s.gt, all_pixels).mae_deg;
    }
    return acc / static_cast<double>(samples.size());
  };

  double best = mae_of(best_theta, best_phi);
  const double step = std::numbers::pi / 90.0;  // 2 degrees
  for (int it = 0; it < 40; ++it) {
    bool improved = false;
    for (int dt = -1; dt <= 1; ++dt) {
      for (int dp = -1; dp <= 1; ++dp) {
        if (dt == 0 && dp == 0) continue;
        const double theta = std::clamp(best_theta + dt * step, 0.0, std::numbers::pi);
        const double phi = best_phi + dp * step;
        const double mae = mae_of(theta, phi);
        if (mae < best - 1e-9) {
          best = mae;
          best_theta = theta;
          best_phi = phi;
          improved = true;
        }
      }
    }
    if (!improved) break;
  }
  return best;
}

}  // namespace esfp::train

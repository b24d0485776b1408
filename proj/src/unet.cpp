#include "esfp/unet.hpp"

#include <cmath>
#include <stdexcept>

namespace esfp::snn {

namespace {

double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

long count_active(const ad::TensorF& t, bool binary) {
  long n = 0;
  if (binary) {
    for (float v : t.values()) n += v == 1.0f ? 1 : 0;
  } else {
    for (float v : t.values()) n += v > 0.0f ? 1 : 0;
  }
  return n;
}

}  // namespace

const char* timestep_mode_name(TimestepMode mode) {
  return mode == TimestepMode::kSingle ? "single" : "multi";
}

TimestepMode timestep_mode_from_name(const std::string& name) {
  if (name == "single") return TimestepMode::kSingle;
  if (name == "multi") return TimestepMode::kMulti;
  throw std::invalid_argument("unknown timestep mode: " + name);
}

const char* upsample_mode_name(ad::UpsampleMode mode) {
  return mode == ad::UpsampleMode::kNearest ? "nearest" : "bilinear";
}

ad::UpsampleMode upsample_mode_from_name(const std::string& name) {
  if (name == "nearest") return ad::UpsampleMode::kNearest;
  if (name == "bilinear") return ad::UpsampleMode::kBilinear;
  throw std::invalid_argument("unknown upsample mode: " + name);
}

std::vector<int> NetworkConfig::channel_schedule() const {
  std::vector<int> schedule(static_cast<size_t>(encoder_blocks) + 1);
  for (int d = 0; d <= encoder_blocks; ++d) schedule[static_cast<size_t>(d)] = base_channels << d;
  return schedule;
}

void NetworkConfig::validate() const {
  if (bins < 1) throw std::invalid_argument("network: bins must be positive");
  if (encoder_blocks < 1) throw std::invalid_argument("network: need at least one encoder block");
  if (base_channels < 1) throw std::invalid_argument("network: base channels must be positive");
  if (!(norm_epsilon > 0.0f)) throw std::invalid_argument("network: norm epsilon must be positive");
  neuron.validate();
}

SpikingConvLayer::SpikingConvLayer(std::string name, int layer_id, int in_channels,
                                   int out_channels, Role role, const NeuronConfig& neuron,
                                   std::mt19937_64& rng)
    : name_(std::move(name)),
      layer_id_(layer_id),
      in_channels_(in_channels),
      out_channels_(out_channels),
      role_(role),
      neuron_(neuron) {
  constexpr int k = 3;
  weight_ = ad::TensorF({out_channels, in_channels, k, k});
  const double fan_in = static_cast<double>(in_channels) * k * k;
  const double bound = std::sqrt(6.0 / fan_in);
  for (auto& v : weight_.values()) v = static_cast<float>((uniform01(rng) * 2.0 - 1.0) * bound);
  weight_.set_requires_grad(true);

  has_norm_ = role != Role::kPotential;
  if (has_norm_) {
    gain_ = ad::TensorF({out_channels}, 1.0f);
    shift_ = ad::TensorF({out_channels}, 0.0f);
    gain_.set_requires_grad(true);
    shift_.set_requires_grad(true);
    running_.init(out_channels);
  } else {
    bias_ = ad::TensorF({out_channels}, 0.0f);
    bias_.set_requires_grad(true);
  }
  if (role_ == Role::kSpiking && neuron_.kind == NeuronKind::kPLIF) {
    plif_param_ = ad::TensorF::scalar(0.0f);  // sigmoid(0) = 0.5 initial leak
    plif_param_.set_requires_grad(true);
  }
}

std::vector<std::vector<ad::TensorF>> SpikingConvLayer::forward_batch(
    ad::Tape<float>* tape, const std::vector<std::vector<ad::TensorF>>& xs, bool training,
    const NetworkConfig& net, Recorder* recorder, bool smooth) {
  const size_t batch = xs.size();
  const size_t steps = xs.front().size();

  // conv + norm are stateless over batch and time, so pool them into one
  // flat list; normalization statistics then span batch x time x space
  std::vector<ad::TensorF> flat;
  flat.reserve(batch * steps);
  for (const auto& sample : xs)
    for (const auto& x : sample)
      flat.push_back(ad::conv2d(tape, x, weight_, has_norm_ ? nullptr : &bias_));

  if (has_norm_) {
    if (net.per_timestep_norm_stats) {
      for (size_t t = 0; t < steps; ++t) {
        std::vector<ad::TensorF> slice;
        slice.reserve(batch);
        for (size_t n = 0; n < batch; ++n) slice.push_back(flat[n * steps + t]);
        slice = ad::channel_norm_seq(tape, slice, gain_, shift_, net.norm_epsilon, &running_,
                                     training, net.norm_momentum);
        for (size_t n = 0; n < batch; ++n) flat[n * steps + t] = slice[n];
      }
    } else {
      flat = ad::channel_norm_seq(tape, flat, gain_, shift_, net.norm_epsilon, &running_,
                                  training, net.norm_momentum);
    }
  }

  std::vector<std::vector<ad::TensorF>> outputs(batch);
  std::vector<std::vector<ad::TensorF>> drives(batch);
  for (size_t n = 0; n < batch; ++n) {
    drives[n].assign(flat.begin() + static_cast<long>(n * steps),
                     flat.begin() + static_cast<long>((n + 1) * steps));
    switch (role_) {
      case Role::kReal:
        outputs[n] = drives[n];
        break;
      case Role::kSpiking: {
        LayerState<float> state;  // fresh per sample, no cross-sample carryover
        for (const auto& d : drives[n]) {
          auto res = spike_step(tape, state, d, neuron_,
                                neuron_.kind == NeuronKind::kPLIF ? &plif_param_ : nullptr,
                                smooth);
          outputs[n].push_back(res.spikes);
          state = res.state;
        }
        break;
      }
      case Role::kPotential: {
        LayerState<float> state;
        for (const auto& d : drives[n]) {
          auto res = potential_step(tape, state, d, /*accumulate=*/true);
          outputs[n].push_back(res.spikes);
          state = res.state;
        }
        break;
      }
    }
  }

  if (recorder && batch == 1) {
    LayerRecord rec;
    rec.layer_id = layer_id_;
    rec.name = name_;
    rec.spiking = role_ == Role::kSpiking && !smooth;
    rec.fan_in = static_cast<long>(in_channels_) * 9;
    rec.neuron_count = outputs.front().front().numel();
    for (const auto& o : outputs.front()) rec.spike_counts.push_back(count_active(o, rec.spiking));
    if (recorder->capture_tensors) {
      rec.outputs = outputs.front();
      rec.drives = drives.front();
    }
    recorder->layers.push_back(std::move(rec));
  }
  return outputs;
}

void SpikingConvLayer::collect_parameters(std::vector<std::pair<std::string, ad::TensorF>>& out) {
  out.emplace_back(name_ + ".weight", weight_);
  if (has_norm_) {
    out.emplace_back(name_ + ".norm.gain", gain_);
    out.emplace_back(name_ + ".norm.bias", shift_);
  } else {
    out.emplace_back(name_ + ".bias", bias_);
  }
  if (plif_param_.defined()) out.emplace_back(name_ + ".plif", plif_param_);
}

void SpikingConvLayer::begin_norm_recalibration() {
  if (!has_norm_) return;
  running_.init(out_channels_);
  running_.cumulative = true;
}

void SpikingConvLayer::finish_norm_recalibration() { running_.cumulative = false; }

void SpikingConvLayer::collect_state(std::vector<NamedView>& out) {
  auto add = [&out](const std::string& name, ad::TensorF& t, bool trainable) {
    out.push_back(NamedView{name, t.shape(), t.data(), trainable});
  };
  add(name_ + ".weight", weight_, true);
  if (has_norm_) {
    add(name_ + ".norm.gain", gain_, true);
    add(name_ + ".norm.bias", shift_, true);
    const int c = out_channels_;
    out.push_back(NamedView{name_ + ".norm.running_mean", {c}, running_.mean.data(), false});
    out.push_back(NamedView{name_ + ".norm.running_var", {c}, running_.var.data(), false});
  } else {
    add(name_ + ".bias", bias_, true);
  }
  if (plif_param_.defined()) add(name_ + ".plif", plif_param_, true);
}

SpikingUnet::SpikingUnet(const NetworkConfig& config, uint64_t seed) : config_(config) {
  config_.validate();
  std::mt19937_64 rng(seed ^ 0x5deece66dULL);
  const auto schedule = config_.channel_schedule();
  const NeuronConfig& neuron = config_.neuron;
  int layer_id = 1;

  // event encoding module: layer 1 stays real-valued, layer 2 spikes
  encoding_.emplace_back("enc.conv1", layer_id++, config_.input_channels(), schedule[0],
                         SpikingConvLayer::Role::kReal, neuron, rng);
  encoding_.emplace_back("enc.conv2", layer_id++, schedule[0], schedule[0],
                         SpikingConvLayer::Role::kSpiking, neuron, rng);

  for (int d = 0; d < config_.encoder_blocks; ++d) {
    const int cin = schedule[static_cast<size_t>(d)];
    const int cout = schedule[static_cast<size_t>(d) + 1];
    const std::string base = "down" + std::to_string(d + 1);
    encoders_.push_back(Block{
        SpikingConvLayer(base + ".conv1", layer_id++, cin, cout, SpikingConvLayer::Role::kSpiking,
                         neuron, rng),
        SpikingConvLayer(base + ".conv2", layer_id++, cout, cout, SpikingConvLayer::Role::kSpiking,
                         neuron, rng)});
  }

  for (int d = config_.encoder_blocks - 1; d >= 0; --d) {
    const int cup = schedule[static_cast<size_t>(d) + 1];
    const int cskip = schedule[static_cast<size_t>(d)];
    const int cout = schedule[static_cast<size_t>(d)];
    const std::string base = "up" + std::to_string(d + 1);
    decoders_.push_back(Block{
        SpikingConvLayer(base + ".conv1", layer_id++, cup + cskip, cout,
                         SpikingConvLayer::Role::kSpiking, neuron, rng),
        SpikingConvLayer(base + ".conv2", layer_id++, cout, cout,
                         SpikingConvLayer::Role::kSpiking, neuron, rng)});
  }

  head_.emplace_back("head.conv", layer_id++, schedule[0], 3, SpikingConvLayer::Role::kPotential,
                     neuron, rng);
}

ad::TensorF SpikingUnet::forward(ad::Tape<float>* tape, const ad::TensorF& input, bool training,
                                 Recorder* recorder, bool smooth) {
  return forward_batch(tape, {input}, training, recorder, smooth).front();
}

std::vector<ad::TensorF> SpikingUnet::forward_batch(ad::Tape<float>* tape,
                                                    const std::vector<ad::TensorF>& inputs,
                                                    bool training, Recorder* recorder,
                                                    bool smooth) {
  if (inputs.empty()) throw std::invalid_argument("forward: empty batch");
  const int factor = 1 << config_.encoder_blocks;
  for (const auto& input : inputs) {
    if (input.rank() != 3) throw std::invalid_argument("forward: input must be (B,H,W)");
    if (input.dim(0) != config_.bins)
      throw std::invalid_argument("forward: input has " + std::to_string(input.dim(0)) +
                                  " bins, network expects " + std::to_string(config_.bins));
    if (input.shape() != inputs.front().shape())
      throw std::invalid_argument("forward: batch inputs must share one shape");
    if (input.dim(1) % factor != 0 || input.dim(2) % factor != 0)
      throw std::invalid_argument("forward: spatial extent must be divisible by " +
                                  std::to_string(factor));
  }

  using Batch = std::vector<std::vector<ad::TensorF>>;
  Batch seq(inputs.size());
  for (size_t n = 0; n < inputs.size(); ++n) {
    if (config_.mode == TimestepMode::kMulti) {
      seq[n].reserve(static_cast<size_t>(config_.bins));
      for (int b = 0; b < config_.bins; ++b)
        seq[n].push_back(ad::slice_channels(tape, inputs[n], b, b + 1));
    } else {
      seq[n].push_back(inputs[n]);
    }
  }

  auto map_each = [&](Batch& batch, auto&& fn) {
    for (auto& sample : batch)
      for (auto& x : sample) x = fn(x);
  };

  seq = encoding_[0].forward_batch(tape, seq, training, config_, recorder, smooth);
  seq = encoding_[1].forward_batch(tape, seq, training, config_, recorder, smooth);

  std::vector<Batch> skips;
  skips.push_back(seq);
  for (int d = 0; d < config_.encoder_blocks; ++d) {
    map_each(seq, [&](const ad::TensorF& x) { return ad::max_pool2(tape, x); });
    seq = encoders_[static_cast<size_t>(d)].a.forward_batch(tape, seq, training, config_, recorder,
                                                            smooth);
    seq = encoders_[static_cast<size_t>(d)].b.forward_batch(tape, seq, training, config_, recorder,
                                                            smooth);
    if (d + 1 < config_.encoder_blocks) skips.push_back(seq);
  }

  for (int i = 0; i < config_.encoder_blocks; ++i) {
    const auto& skip = skips[static_cast<size_t>(config_.encoder_blocks - 1 - i)];
    for (size_t n = 0; n < seq.size(); ++n) {
      for (size_t t = 0; t < seq[n].size(); ++t) {
        ad::TensorF u = ad::upsample2(tape, seq[n][t], config_.upsample);
        if (u.dim(1) != skip[n][t].dim(1) || u.dim(2) != skip[n][t].dim(2))
          throw std::logic_error("forward: decoder/encoder resolution mismatch");
        seq[n][t] = ad::concat_channels(tape, u, skip[n][t]);
      }
    }
    seq = decoders_[static_cast<size_t>(i)].a.forward_batch(tape, seq, training, config_, recorder,
                                                            smooth);
    seq = decoders_[static_cast<size_t>(i)].b.forward_batch(tape, seq, training, config_, recorder,
                                                            smooth);
  }

  seq = head_[0].forward_batch(tape, seq, training, config_, recorder, smooth);
  std::vector<ad::TensorF> out;
  out.reserve(seq.size());
  for (auto& sample : seq) out.push_back(sample.back());  // last-timestep potential, Eq. 9
  return out;
}

int SpikingUnet::weighted_layer_count() const {
  return static_cast<int>(encoding_.size() + 2 * encoders_.size() + 2 * decoders_.size() +
                          head_.size());
}

std::vector<std::pair<std::string, ad::TensorF>> SpikingUnet::named_parameters() {
  std::vector<std::pair<std::string, ad::TensorF>> out;
  for (auto& l : encoding_) l.collect_parameters(out);
  for (auto& b : encoders_) {
    b.a.collect_parameters(out);
    b.b.collect_parameters(out);
  }
  for (auto& b : decoders_) {
    b.a.collect_parameters(out);
    b.b.collect_parameters(out);
  }
  for (auto& l : head_) l.collect_parameters(out);
  return out;
}

std::vector<ad::TensorF> SpikingUnet::parameters() {
  std::vector<ad::TensorF> out;
  for (auto& [name, t] : named_parameters()) out.push_back(t);
  return out;
}

std::vector<SpikingConvLayer::NamedView> SpikingUnet::state_views() {
  std::vector<SpikingConvLayer::NamedView> out;
  for (auto& l : encoding_) l.collect_state(out);
  for (auto& b : encoders_) {
    b.a.collect_state(out);
    b.b.collect_state(out);
  }
  for (auto& b : decoders_) {
    b.a.collect_state(out);
    b.b.collect_state(out);
  }
  for (auto& l : head_) l.collect_state(out);
  return out;
}

long SpikingUnet::parameter_count() {
  long n = 0;
  for (auto& [name, t] : named_parameters()) n += t.numel();
  return n;
}

void SpikingUnet::begin_norm_recalibration() {
  for (auto& l : encoding_) l.begin_norm_recalibration();
  for (auto& b : encoders_) {
    b.a.begin_norm_recalibration();
    b.b.begin_norm_recalibration();
  }
  for (auto& b : decoders_) {
    b.a.begin_norm_recalibration();
    b.b.begin_norm_recalibration();
  }
  for (auto& l : head_) l.begin_norm_recalibration();
}

void SpikingUnet::finish_norm_recalibration() {
  for (auto& l : encoding_) l.finish_norm_recalibration();
  for (auto& b : encoders_) {
    b.a.finish_norm_recalibration();
    b.b.finish_norm_recalibration();
  }
  for (auto& b : decoders_) {
    b.a.finish_norm_recalibration();
    b.b.finish_norm_recalibration();
  }
  for (auto& l : head_) l.finish_norm_recalibration();
}

NormalMap normalize_prediction(const ad::TensorF& raw) {
  if (raw.rank() != 3 || raw.dim(0) != 3)
    throw std::invalid_argument("normalize_prediction: input must be (3,H,W)");
  const int h = raw.dim(1), w = raw.dim(2);
  NormalMap map(w, h);
  const long hw = static_cast<long>(h) * w;
  for (long i = 0; i < hw; ++i) {
    const float v0 = raw.data()[i], v1 = raw.data()[hw + i], v2 = raw.data()[2 * hw + i];
    const float norm = std::sqrt(v0 * v0 + v1 * v1 + v2 * v2);
    if (norm < 1e-8f) {
      map.values[i] = 0.0f;
      map.values[hw + i] = 0.0f;
      map.values[2 * hw + i] = 1.0f;
      map.valid[i] = 0;
    } else {
      map.values[i] = v0 / norm;
      map.values[hw + i] = v1 / norm;
      map.values[2 * hw + i] = v2 / norm;
      map.valid[i] = 1;
    }
  }
  return map;
}

ad::TensorF normals_to_tensor(const NormalMap& map) {
  return ad::TensorF::from_values({3, map.height, map.width}, map.values);
}

}  // namespace esfp::snn

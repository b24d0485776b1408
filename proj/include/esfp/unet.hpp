#pragma once

#include <array>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "esfp/encoding.hpp"
#include "esfp/image.hpp"
#include "esfp/neuron.hpp"
#include "esfp/ops.hpp"

namespace esfp::snn {

enum class TimestepMode { kSingle, kMulti };

const char* timestep_mode_name(TimestepMode mode);
TimestepMode timestep_mode_from_name(const std::string& name);
const char* upsample_mode_name(ad::UpsampleMode mode);
ad::UpsampleMode upsample_mode_from_name(const std::string& name);

struct NetworkConfig {
  TimestepMode mode = TimestepMode::kMulti;
  int bins = 8;
  int encoder_blocks = 4;
  int base_channels = 16;
  ad::UpsampleMode upsample = ad::UpsampleMode::kNearest;
  NeuronConfig neuron;
  bool per_timestep_norm_stats = false;
  bool normalize_input = false;
  float norm_epsilon = 1e-5f;
  float norm_momentum = 0.1f;

  int input_channels() const { return mode == TimestepMode::kMulti ? 1 : bins; }
  int timesteps() const { return mode == TimestepMode::kMulti ? bins : 1; }
  /// Channels per depth: base, 2*base, ... for encoder_blocks+1 entries.
  std::vector<int> channel_schedule() const;
  void validate() const;
};

/// Per-layer observations from one forward pass, enough to reconstruct
/// spiking rates and, when tensors are captured, to audit activations.
struct LayerRecord {
  int layer_id = 0;
  std::string name;
  bool spiking = false;
  long neuron_count = 0;
  long fan_in = 0;
  std::vector<long> spike_counts;
  std::vector<ad::TensorF> outputs;
  std::vector<ad::TensorF> drives;
};

struct Recorder {
  bool capture_tensors = false;
  std::vector<LayerRecord> layers;
};

class SpikingConvLayer {
 public:
  enum class Role { kReal, kSpiking, kPotential };

  SpikingConvLayer(std::string name, int layer_id, int in_channels, int out_channels, Role role,
                   const NeuronConfig& neuron, std::mt19937_64& rng);

  /// xs[n][t] is sample n's drive at timestep t. Convolution and
  /// normalization pool the whole batch (normalization statistics span the
  /// batch, spatial and temporal extents jointly); the neuron recurrence
  /// then runs per sample. The recorder is honored for single-sample calls.
  std::vector<std::vector<ad::TensorF>> forward_batch(
      ad::Tape<float>* tape, const std::vector<std::vector<ad::TensorF>>& xs, bool training,
      const NetworkConfig& net, Recorder* recorder, bool smooth);

  const std::string& name() const { return name_; }
  int layer_id() const { return layer_id_; }
  Role role() const { return role_; }
  int in_channels() const { return in_channels_; }
  int out_channels() const { return out_channels_; }

  struct NamedView {
    std::string name;
    std::vector<int> shape;
    float* data = nullptr;
    bool trainable = true;
  };
  void collect_parameters(std::vector<std::pair<std::string, ad::TensorF>>& out);
  void collect_state(std::vector<NamedView>& out);

  /// Clears the running statistics and switches them to plain averaging of
  /// upcoming batch statistics; finish() returns to exponential tracking.
  void begin_norm_recalibration();
  void finish_norm_recalibration();

 private:
  std::string name_;
  int layer_id_;
  int in_channels_;
  int out_channels_;
  Role role_;
  NeuronConfig neuron_;
  ad::TensorF weight_;
  ad::TensorF bias_;        // potential head only
  ad::TensorF gain_;        // normalization affine, absent on the potential head
  ad::TensorF shift_;
  ad::TensorF plif_param_;  // PLIF leak, sigmoid-parameterized
  ad::NormRunningStats<float> running_;
  bool has_norm_ = false;
};

/// UNet of spiking convolutional layers: a two-layer event encoding module,
/// encoder blocks of max-pool + two conv layers, mirrored decoder blocks of
/// upsample + concat-skip + two conv layers, and a potential-assisted
/// prediction head. Single mode runs the whole (B,H,W) input through one
/// membrane update; multi mode feeds bin slices sequentially through shared
/// weights.
class SpikingUnet {
 public:
  SpikingUnet(const NetworkConfig& config, uint64_t seed);

  /// Input is (bins,H,W) in both modes. Returns the raw (3,H,W) prediction.
  ad::TensorF forward(ad::Tape<float>* tape, const ad::TensorF& input, bool training = false,
                      Recorder* recorder = nullptr, bool smooth = false);

  /// Batched forward: one raw prediction per input. In training mode the
  /// normalization statistics are computed over the whole batch.
  std::vector<ad::TensorF> forward_batch(ad::Tape<float>* tape,
                                         const std::vector<ad::TensorF>& inputs,
                                         bool training = false, Recorder* recorder = nullptr,
                                         bool smooth = false);

  const NetworkConfig& config() const { return config_; }
  int weighted_layer_count() const;
  long parameter_count();
  std::vector<std::pair<std::string, ad::TensorF>> named_parameters();
  std::vector<ad::TensorF> parameters();
  std::vector<SpikingConvLayer::NamedView> state_views();
  void begin_norm_recalibration();
  void finish_norm_recalibration();

 private:
  struct Block {
    SpikingConvLayer a;
    SpikingConvLayer b;
  };

  NetworkConfig config_;
  std::vector<SpikingConvLayer> encoding_;
  std::vector<Block> encoders_;
  std::vector<Block> decoders_;
  std::vector<SpikingConvLayer> head_;
};

/// Per-pixel division by the Euclidean norm. Pixels with norm below 1e-8 map
/// to (0,0,1) and are flagged invalid.
NormalMap normalize_prediction(const ad::TensorF& raw);

ad::TensorF normals_to_tensor(const NormalMap& map);

}  // namespace esfp::snn

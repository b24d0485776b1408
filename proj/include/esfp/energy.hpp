#pragma once

#include <string>
#include <vector>

#include "esfp/encoding.hpp"
#include "esfp/unet.hpp"

namespace esfp {

/// 45nm CMOS energy per 32-bit synaptic operation.
constexpr double kMacEnergyJoules = 4.6e-12;
constexpr double kAcEnergyJoules = 0.9e-12;

/// Spike observations for one weighted layer across the timesteps of one
/// inference.
struct LayerTrace {
  int layer_id = 0;
  std::string name;
  bool spiking = false;
  long neuron_count = 0;               // K
  long fan_in = 0;                     // C_syn = in_channels * k^2
  std::vector<long> spike_counts;     // S_t per timestep
};

/// (1/T) * sum_t S_t / K.
double mean_spiking_rate(const LayerTrace& trace);

struct EnergyReport {
  double op_mac = 0;
  double op_ac = 0;
  double energy_joules = 0;
  double average_rate = 0;  // mean of per-layer rates, all traced layers
  std::vector<LayerTrace> traces;
  std::string attribution;

  static EnergyReport from_counts(double op_mac, double op_ac);
  double recompute_energy() const { return op_mac * kMacEnergyJoules + op_ac * kAcEnergyJoules; }
  /// reference energy divided by this report's energy.
  double benefit_vs(const EnergyReport& reference) const;
};

/// Synaptic-operation count over traced layers. Spiking layers contribute
/// accumulate ops K*C_syn*F*T; real-valued layers (the input layer and the
/// potential-assisted head) contribute K*C_syn multiply-accumulates once,
/// matching the ANN-style count for real-valued computation. With ann_mode
/// every layer counts as dense MAC. Traces must cover layer ids
/// 1..expected_layers.
EnergyReport count_ops(const std::vector<LayerTrace>& traces, int expected_layers,
                       bool ann_mode = false);

/// Runs one evaluation-mode forward with spike hooks and assembles the
/// report. Pooling and upsampling stages carry no trainable weights and are
/// not traced.
EnergyReport profile_inference(snn::SpikingUnet& network, const CvgriTensor& input);
EnergyReport profile_inference(snn::SpikingUnet& network, const ad::TensorF& input);

/// Traces from recorder output without recomputing a forward pass.
std::vector<LayerTrace> traces_from_recorder(const snn::Recorder& recorder);

}  // namespace esfp

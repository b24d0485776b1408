#pragma once

#include <cmath>

#include "esfp/ops.hpp"
#include "esfp/tensor.hpp"

namespace esfp::snn {

enum class NeuronKind { kIF, kLIF, kPLIF };

struct NeuronConfig {
  NeuronKind kind = NeuronKind::kIF;
  float threshold = 1.0f;
  float reset = 0.0f;
  float leak = 0.5f;  // fixed decay for LIF; PLIF learns its own
  float surrogate_slope = 1.0f;

  void validate() const {
    // threshold of -inf is the forced-fire test hook
    const bool forced_fire = std::isinf(threshold) && threshold < 0.0f;
    if (!forced_fire && !(threshold > reset))
      throw std::invalid_argument("neuron: threshold must exceed reset");
    if (kind == NeuronKind::kLIF && !(leak > 0.0f && leak <= 1.0f))
      throw std::invalid_argument("neuron: leak must be in (0,1]");
  }
};

const char* neuron_kind_name(NeuronKind kind);
NeuronKind neuron_kind_from_name(const std::string& name);

/// Per-layer neuron state for one forward pass: membrane potential before the
/// next reset, and the spikes that decide that reset.
template <typename T>
struct LayerState {
  ad::Tensor<T> membrane;
  ad::Tensor<T> spikes;
  bool fresh = true;
};

template <typename T>
struct SpikeResult {
  ad::Tensor<T> spikes;
  LayerState<T> state;
};

/// One membrane update: u = keep * u_prev * (1 - o_prev) + drive, spike where
/// u >= threshold. keep is 1 (IF), the fixed leak (LIF) or sigmoid of the
/// trainable parameter (PLIF). Fresh states start the membrane at the reset
/// value. With smooth=true the Heaviside is replaced by its ArcTan surrogate
/// in the forward pass as well, which makes the whole step differentiable for
/// finite-difference checks.
template <typename T>
SpikeResult<T> spike_step(ad::Tape<T>* tape, const LayerState<T>& prev, const ad::Tensor<T>& drive,
                          const NeuronConfig& config, const ad::Tensor<T>* plif_param = nullptr,
                          bool smooth = false);

/// Non-spiking output neuron. In accumulate mode the membrane integrates the
/// drive without reset or threshold and the output is the membrane itself;
/// otherwise the drive passes through unchanged.
template <typename T>
SpikeResult<T> potential_step(ad::Tape<T>* tape, const LayerState<T>& prev,
                              const ad::Tensor<T>& drive, bool accumulate);

}  // namespace esfp::snn

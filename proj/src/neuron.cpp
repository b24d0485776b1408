#include "esfp/neuron.hpp"

namespace esfp::snn {

const char* neuron_kind_name(NeuronKind kind) {
  switch (kind) {
    case NeuronKind::kIF: return "if";
    case NeuronKind::kLIF: return "lif";
    case NeuronKind::kPLIF: return "plif";
  }
  return "if";
}

NeuronKind neuron_kind_from_name(const std::string& name) {
  if (name == "if") return NeuronKind::kIF;
  if (name == "lif") return NeuronKind::kLIF;
  if (name == "plif") return NeuronKind::kPLIF;
  throw std::invalid_argument("unknown neuron kind: " + name);
}

template <typename T>
SpikeResult<T> spike_step(ad::Tape<T>* tape, const LayerState<T>& prev, const ad::Tensor<T>& drive,
                          const NeuronConfig& config, const ad::Tensor<T>* plif_param,
                          bool smooth) {
  config.validate();
  if (config.kind == NeuronKind::kPLIF && plif_param == nullptr)
    throw std::invalid_argument("spike_step: PLIF requires its leak parameter");
  if (!prev.fresh && prev.membrane.shape() != drive.shape())
    throw std::invalid_argument("spike_step: drive shape " + ad::shape_string(drive.shape()) +
                                " does not match state " + ad::shape_string(prev.membrane.shape()));

  ad::Tensor<T> membrane;
  if (prev.fresh) {
    // first update: membrane starts at the reset value, no spike history
    if (config.reset == 0.0f) {
      membrane = drive;
    } else {
      ad::Tensor<T> kept(drive.shape(), static_cast<T>(config.reset));
      switch (config.kind) {
        case NeuronKind::kIF: break;
        case NeuronKind::kLIF: kept = ad::scale(tape, kept, static_cast<T>(config.leak)); break;
        case NeuronKind::kPLIF:
          kept = ad::mul_scalar_tensor(tape, kept, ad::sigmoid(tape, *plif_param));
          break;
      }
      membrane = ad::add(tape, kept, drive);
    }
  } else {
    ad::Tensor<T> kept = ad::hard_reset_mul(tape, prev.membrane, prev.spikes);
    switch (config.kind) {
      case NeuronKind::kIF: break;
      case NeuronKind::kLIF: kept = ad::scale(tape, kept, static_cast<T>(config.leak)); break;
      case NeuronKind::kPLIF:
        kept = ad::mul_scalar_tensor(tape, kept, ad::sigmoid(tape, *plif_param));
        break;
    }
    membrane = ad::add(tape, kept, drive);
  }

  ad::Tensor<T> shifted = ad::add_scalar(tape, membrane, static_cast<T>(-config.threshold));
  ad::Tensor<T> spikes = smooth ? ad::spike_smooth(tape, shifted, static_cast<T>(config.surrogate_slope))
                                : ad::spike(tape, shifted, static_cast<T>(config.surrogate_slope));

  SpikeResult<T> result;
  result.spikes = spikes;
  result.state.membrane = membrane;
  result.state.spikes = spikes;
  result.state.fresh = false;
  return result;
}

template <typename T>
SpikeResult<T> potential_step(ad::Tape<T>* tape, const LayerState<T>& prev,
                              const ad::Tensor<T>& drive, bool accumulate) {
  SpikeResult<T> result;
  if (!accumulate || prev.fresh) {
    result.spikes = drive;
  } else {
    if (prev.membrane.shape() != drive.shape())
      throw std::invalid_argument("potential_step: drive shape does not match state");
    result.spikes = ad::add(tape, prev.membrane, drive);
  }
  result.state.membrane = result.spikes;
  result.state.spikes = result.spikes;
  result.state.fresh = false;
  return result;
}

template SpikeResult<float> spike_step(ad::Tape<float>*, const LayerState<float>&,
                                       const ad::Tensor<float>&, const NeuronConfig&,
                                       const ad::Tensor<float>*, bool);
template SpikeResult<double> spike_step(ad::Tape<double>*, const LayerState<double>&,
                                        const ad::Tensor<double>&, const NeuronConfig&,
                                        const ad::Tensor<double>*, bool);
template SpikeResult<float> potential_step(ad::Tape<float>*, const LayerState<float>&,
                                           const ad::Tensor<float>&, bool);
template SpikeResult<double> potential_step(ad::Tape<double>*, const LayerState<double>&,
                                            const ad::Tensor<double>&, bool);

}  // namespace esfp::snn

#include "esfp/energy.hpp"

#include <algorithm>
#include <stdexcept>

namespace esfp {

double mean_spiking_rate(const LayerTrace& trace) {
  if (trace.neuron_count < 1 || trace.spike_counts.empty())
    throw std::invalid_argument("mean_spiking_rate: trace needs neurons and at least one timestep");
  double acc = 0;
  for (long s : trace.spike_counts)
    acc += static_cast<double>(s) / static_cast<double>(trace.neuron_count);
  return acc / static_cast<double>(trace.spike_counts.size());
}

EnergyReport EnergyReport::from_counts(double op_mac, double op_ac) {
  EnergyReport r;
  r.op_mac = op_mac;
  r.op_ac = op_ac;
  r.energy_joules = r.recompute_energy();
  r.attribution = "direct operation counts";
  return r;
}

double EnergyReport::benefit_vs(const EnergyReport& reference) const {
  if (!(energy_joules > 0)) throw std::invalid_argument("benefit: this report has no energy");
  return reference.energy_joules / energy_joules;
}

EnergyReport count_ops(const std::vector<LayerTrace>& traces, int expected_layers, bool ann_mode) {
  std::vector<const LayerTrace*> by_id(static_cast<size_t>(expected_layers), nullptr);
  for (const auto& t : traces) {
    if (t.layer_id >= 1 && t.layer_id <= expected_layers)
      by_id[static_cast<size_t>(t.layer_id - 1)] = &t;
  }
  for (int id = 1; id <= expected_layers; ++id) {
    if (!by_id[static_cast<size_t>(id - 1)])
      throw std::invalid_argument("count_ops: incomplete profile, missing layer " +
                                  std::to_string(id));
  }

  EnergyReport report;
  double rate_acc = 0;
  for (int id = 1; id <= expected_layers; ++id) {
    const LayerTrace& t = *by_id[static_cast<size_t>(id - 1)];
    const double dense = static_cast<double>(t.neuron_count) * static_cast<double>(t.fan_in);
    if (ann_mode) {
      report.op_mac += dense;
    } else if (t.spiking) {
      const double timesteps = static_cast<double>(t.spike_counts.size());
      report.op_ac += dense * mean_spiking_rate(t) * timesteps;
    } else {
      report.op_mac += dense;
    }
    rate_acc += mean_spiking_rate(t);
  }
  report.average_rate = rate_acc / static_cast<double>(expected_layers);
  report.energy_joules = report.recompute_energy();
  report.traces = traces;
  std::sort(report.traces.begin(), report.traces.end(),
            [](const LayerTrace& a, const LayerTrace& b) { return a.layer_id < b.layer_id; });
  report.attribution = ann_mode
                           ? "dense MAC for every weighted layer"
                           : "MAC for the real-valued input layer and the potential head (K*C, "
                             "dense fan-in, no timestep scaling); AC per spiking layer as "
                             "K*C*F*T";
  return report;
}

std::vector<LayerTrace> traces_from_recorder(const snn::Recorder& recorder) {
  std::vector<LayerTrace> traces;
  traces.reserve(recorder.layers.size());
  for (const auto& l : recorder.layers) {
    LayerTrace t;
    t.layer_id = l.layer_id;
    t.name = l.name;
    t.spiking = l.spiking;
    t.neuron_count = l.neuron_count;
    t.fan_in = l.fan_in;
    t.spike_counts = l.spike_counts;
    traces.push_back(std::move(t));
  }
  return traces;
}

EnergyReport profile_inference(snn::SpikingUnet& network, const ad::TensorF& input) {
  snn::Recorder recorder;
  network.forward(nullptr, input, /*training=*/false, &recorder);
  return count_ops(traces_from_recorder(recorder), network.weighted_layer_count());
}

EnergyReport profile_inference(snn::SpikingUnet& network, const CvgriTensor& input) {
  return profile_inference(network, to_tensor(input.grid));
}

}  // namespace esfp

// Python bindings for the core pipeline: scene simulation, CVGR-I encoding,
// spiking UNet inference/training, metrics and energy profiling.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>
#include <optional>

#include "esfp/dataset.hpp"
#include "esfp/encoding.hpp"
#include "esfp/energy.hpp"
#include "esfp/event.hpp"
#include "esfp/io.hpp"
#include "esfp/train.hpp"
#include "esfp/unet.hpp"

namespace py = pybind11;
using namespace esfp;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

ad::TensorF tensor_from_array(const FloatArray& array, int expected_rank, const char* what) {
  py::buffer_info info = array.request();
  if (info.ndim != expected_rank)
    throw std::invalid_argument(std::string(what) + ": expected a " +
                                std::to_string(expected_rank) + "-d array");
  std::vector<int> shape(info.shape.begin(), info.shape.end());
  std::vector<float> values(static_cast<size_t>(info.size));
  std::memcpy(values.data(), info.ptr, sizeof(float) * values.size());
  return ad::TensorF::from_values(std::move(shape), std::move(values));
}

py::array_t<float> array_from_tensor(const ad::TensorF& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<float> out(shape);
  std::memcpy(out.mutable_data(), t.data(), sizeof(float) * static_cast<size_t>(t.numel()));
  return out;
}

py::array_t<float> array_from_grid(const Grid3& grid) {
  py::array_t<float> out({grid.bins, grid.height, grid.width});
  std::memcpy(out.mutable_data(), grid.values.data(), sizeof(float) * grid.values.size());
  return out;
}

Grid3 grid_from_array(const FloatArray& array, const char* what) {
  py::buffer_info info = array.request();
  if (info.ndim != 3) throw std::invalid_argument(std::string(what) + ": expected (B,H,W)");
  Grid3 grid(static_cast<int>(info.shape[0]), static_cast<int>(info.shape[1]),
             static_cast<int>(info.shape[2]));
  std::memcpy(grid.values.data(), info.ptr, sizeof(float) * grid.values.size());
  return grid;
}

NormalMap normal_map_from_arrays(const FloatArray& values,
                                 const std::optional<py::array_t<uint8_t>>& mask) {
  py::buffer_info info = values.request();
  if (info.ndim != 3 || info.shape[0] != 3)
    throw std::invalid_argument("normals: expected a (3,H,W) array");
  NormalMap map(static_cast<int>(info.shape[2]), static_cast<int>(info.shape[1]));
  std::memcpy(map.values.data(), info.ptr, sizeof(float) * map.values.size());
  if (mask) {
    py::buffer_info m = mask->request();
    if (m.size != map.pixel_count()) throw std::invalid_argument("mask: size mismatch");
    std::memcpy(map.valid.data(), m.ptr, map.valid.size());
  }
  return map;
}

py::dict eval_row_to_dict(const train::EvalRow& row) {
  py::dict d;
  d["name"] = row.name;
  d["mae_deg"] = row.mae_deg;
  d["ae_11_25"] = row.ae1125;
  d["ae_22_5"] = row.ae225;
  d["ae_30"] = row.ae30;
  d["pixels"] = row.pixels;
  return d;
}

snn::NetworkConfig make_network_config(const std::string& mode, int bins, int encoder_blocks,
                                       int base_channels, const std::string& upsample,
                                       const std::string& neuron, float threshold, float reset,
                                       float leak, bool per_timestep_norm_stats,
                                       bool normalize_input) {
  snn::NetworkConfig cfg;
  cfg.mode = snn::timestep_mode_from_name(mode);
  cfg.bins = bins;
  cfg.encoder_blocks = encoder_blocks;
  cfg.base_channels = base_channels;
  cfg.upsample = snn::upsample_mode_from_name(upsample);
  cfg.neuron.kind = snn::neuron_kind_from_name(neuron);
  cfg.neuron.threshold = threshold;
  cfg.neuron.reset = reset;
  cfg.neuron.leak = leak;
  cfg.per_timestep_norm_stats = per_timestep_norm_stats;
  cfg.normalize_input = normalize_input;
  cfg.validate();
  return cfg;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "event-based shape from polarization with spiking UNets";

  py::class_<Scene>(m, "Scene")
      .def_static("plane", &Scene::plane, py::arg("width"), py::arg("height"), py::arg("azimuth"),
                  py::arg("zenith"), py::arg("intensity"), py::arg("refractive_index") = 1.5)
      .def_static("sphere_cap", &Scene::sphere_cap, py::arg("width"), py::arg("height"),
                  py::arg("center_x"), py::arg("center_y"), py::arg("pixel_radius"),
                  py::arg("max_zenith"), py::arg("intensity"), py::arg("refractive_index") = 1.5,
                  py::arg("background_valid") = false)
      .def_static("ramp", &Scene::ramp, py::arg("width"), py::arg("height"), py::arg("azimuth"),
                  py::arg("zenith_min"), py::arg("zenith_max"), py::arg("intensity"),
                  py::arg("refractive_index") = 1.5)
      .def_static("composite", &Scene::composite, py::arg("width"), py::arg("height"),
                  py::arg("center_x"), py::arg("center_y"), py::arg("pixel_radius"),
                  py::arg("cap_max_zenith"), py::arg("plane_azimuth"), py::arg("plane_zenith"),
                  py::arg("intensity"), py::arg("refractive_index") = 1.5)
      .def_readonly("width", &Scene::width)
      .def_readonly("height", &Scene::height);

  m.def("normal_from_angles", [](double azimuth, double zenith) {
    const auto n = normal_from_angles(azimuth, zenith);
    py::array_t<double> out(std::vector<py::ssize_t>{3});
    std::memcpy(out.mutable_data(), n.data(), sizeof(double) * 3);
    return out;
  });

  m.def("diffuse_dolp", &diffuse_dolp, py::arg("zenith"), py::arg("refractive_index") = 1.5);
  m.def("polarized_intensity", &polarized_intensity, py::arg("scene"), py::arg("x"), py::arg("y"),
        py::arg("polarizer_angle"));

  m.def(
      "simulate",
      [](const Scene& scene, double contrast_threshold, double polarizer_speed,
         double total_rotation, double sampling_step, double threshold_jitter, uint64_t seed) {
        SimulatorConfig cfg;
        cfg.contrast_threshold = contrast_threshold;
        cfg.polarizer_speed = polarizer_speed;
        cfg.total_rotation = total_rotation;
        cfg.sampling_step = sampling_step;
        cfg.threshold_jitter = threshold_jitter;
        cfg.noise_seed = seed;
        const SimulationResult result = simulate_events(scene, cfg);

        const std::vector<py::ssize_t> flat{static_cast<py::ssize_t>(result.stream.size())};
        py::array_t<uint64_t> t(flat);
        py::array_t<uint16_t> x(flat), y(flat);
        py::array_t<int8_t> p(flat);
        const size_t n = result.stream.size();
        for (size_t i = 0; i < n; ++i) {
          const Event& e = result.stream.events()[i];
          t.mutable_at(i) = e.t_us;
          x.mutable_at(i) = e.x;
          y.mutable_at(i) = e.y;
          p.mutable_at(i) = e.polarity;
        }
        py::array_t<float> normals({3, scene.height, scene.width});
        std::memcpy(normals.mutable_data(), result.ground_truth.values.data(),
                    sizeof(float) * result.ground_truth.values.size());
        py::array_t<uint8_t> mask({scene.height, scene.width});
        std::memcpy(mask.mutable_data(), result.ground_truth.valid.data(),
                    result.ground_truth.valid.size());
        py::array_t<float> intensity({scene.height, scene.width});
        std::memcpy(intensity.mutable_data(), result.intensity0.pixels.data(),
                    sizeof(float) * result.intensity0.pixels.size());

        py::dict out;
        out["t"] = t;
        out["x"] = x;
        out["y"] = y;
        out["p"] = p;
        out["normals"] = normals;
        out["mask"] = mask;
        out["intensity"] = intensity;
        return out;
      },
      py::arg("scene"), py::arg("contrast_threshold") = 0.05,
      py::arg("polarizer_speed") = SimulatorConfig{}.polarizer_speed,
      py::arg("total_rotation") = SimulatorConfig{}.total_rotation,
      py::arg("sampling_step") = SimulatorConfig{}.sampling_step,
      py::arg("threshold_jitter") = 0.0, py::arg("seed") = 0);

  m.def(
      "build_voxel_grid",
      [](py::array_t<uint64_t> t, py::array_t<uint16_t> x, py::array_t<uint16_t> y,
         py::array_t<int8_t> p, int width, int height, int bins) {
        const size_t n = static_cast<size_t>(t.size());
        if (static_cast<size_t>(x.size()) != n || static_cast<size_t>(y.size()) != n ||
            static_cast<size_t>(p.size()) != n)
          throw std::invalid_argument("event arrays must share one length");
        std::vector<Event> events(n);
        for (size_t i = 0; i < n; ++i)
          events[i] = Event{t.at(i), x.at(i), y.at(i), p.at(i)};
        const EventStream stream(width, height, std::move(events));
        return array_from_grid(build_voxel_grid(stream, bins).grid);
      },
      py::arg("t"), py::arg("x"), py::arg("y"), py::arg("p"), py::arg("width"), py::arg("height"),
      py::arg("bins") = 8);

  m.def(
      "build_cvgr",
      [](const FloatArray& grid, float contrast_threshold) {
        VoxelGrid voxel;
        voxel.grid = grid_from_array(grid, "build_cvgr");
        return array_from_grid(build_cvgr(voxel, contrast_threshold).grid);
      },
      py::arg("voxel_grid"), py::arg("contrast_threshold") = 0.05f);

  m.def(
      "build_cvgri",
      [](const FloatArray& cvgr, const FloatArray& intensity0) {
        Cvgr c;
        c.grid = grid_from_array(cvgr, "build_cvgri");
        c.contrast_threshold = 0.0f;
        py::buffer_info info = intensity0.request();
        if (info.ndim != 2) throw std::invalid_argument("intensity: expected (H,W)");
        Image img(static_cast<int>(info.shape[1]), static_cast<int>(info.shape[0]));
        std::memcpy(img.pixels.data(), info.ptr, sizeof(float) * img.pixels.size());
        return array_from_grid(build_cvgri(c, img).grid);
      },
      py::arg("cvgr"), py::arg("intensity0"));

  py::class_<snn::SpikingUnet>(m, "SpikingUnet")
      .def(py::init([](const std::string& mode, int bins, int encoder_blocks, int base_channels,
                       const std::string& upsample, const std::string& neuron, float threshold,
                       float reset, float leak, bool per_timestep_norm_stats, bool normalize_input,
                       uint64_t seed) {
             return snn::SpikingUnet(
                 make_network_config(mode, bins, encoder_blocks, base_channels, upsample, neuron,
                                     threshold, reset, leak, per_timestep_norm_stats,
                                     normalize_input),
                 seed);
           }),
           py::arg("mode") = "multi", py::arg("bins") = 8, py::arg("encoder_blocks") = 4,
           py::arg("base_channels") = 16, py::arg("upsample") = "nearest",
           py::arg("neuron") = "if", py::arg("threshold") = 1.0f, py::arg("reset") = 0.0f,
           py::arg("leak") = 0.5f, py::arg("per_timestep_norm_stats") = false,
           py::arg("normalize_input") = false, py::arg("seed") = 0)
      .def("forward",
           [](snn::SpikingUnet& net, const FloatArray& input) {
             return array_from_tensor(
                 net.forward(nullptr, tensor_from_array(input, 3, "forward"), false));
           })
      .def("weighted_layer_count", &snn::SpikingUnet::weighted_layer_count)
      .def("parameter_count", &snn::SpikingUnet::parameter_count)
      .def("save", [](snn::SpikingUnet& net, const std::string& path) {
        io::save_checkpoint(path, net);
      })
      .def_property_readonly("mode", [](snn::SpikingUnet& net) {
        return std::string(snn::timestep_mode_name(net.config().mode));
      })
      .def_property_readonly("bins",
                             [](snn::SpikingUnet& net) { return net.config().bins; });

  m.def("load_checkpoint", &io::load_checkpoint, py::arg("path"));

  m.def("normalize_prediction", [](const FloatArray& raw) {
    const NormalMap map = snn::normalize_prediction(tensor_from_array(raw, 3, "prediction"));
    py::array_t<float> values({3, map.height, map.width});
    std::memcpy(values.mutable_data(), map.values.data(), sizeof(float) * map.values.size());
    py::array_t<uint8_t> valid({map.height, map.width});
    std::memcpy(valid.mutable_data(), map.valid.data(), map.valid.size());
    return py::make_tuple(values, valid);
  });

  m.def(
      "angular_metrics",
      [](const FloatArray& pred, const FloatArray& gt,
         std::optional<py::array_t<uint8_t>> mask) {
        const NormalMap p = normal_map_from_arrays(pred, std::nullopt);
        const NormalMap g = normal_map_from_arrays(gt, mask);
        return eval_row_to_dict(train::angular_metrics(p, g, !mask.has_value()));
      },
      py::arg("pred"), py::arg("gt"), py::arg("mask") = std::nullopt);

  m.def(
      "cosine_loss",
      [](const FloatArray& pred, const FloatArray& gt, std::optional<py::array_t<uint8_t>> mask) {
        const NormalMap p = normal_map_from_arrays(pred, std::nullopt);
        const NormalMap g = normal_map_from_arrays(gt, mask);
        return train::cosine_loss_value(p, g, !mask.has_value());
      },
      py::arg("pred"), py::arg("gt"), py::arg("mask") = std::nullopt);

  m.def(
      "train",
      [](snn::SpikingUnet& net, const std::vector<FloatArray>& inputs,
         const std::vector<FloatArray>& gts, int epochs, int batch_size, double learning_rate,
         uint64_t seed, int eval_interval) {
        if (inputs.size() != gts.size())
          throw std::invalid_argument("train: inputs and targets must pair up");
        std::vector<train::Sample> samples;
        for (size_t i = 0; i < inputs.size(); ++i) {
          train::Sample s;
          s.name = "sample_" + std::to_string(i);
          s.input.grid = grid_from_array(inputs[i], "train input");
          s.gt = normal_map_from_arrays(gts[i], std::nullopt);
          samples.push_back(std::move(s));
        }
        train::TrainConfig cfg;
        cfg.epochs = epochs;
        cfg.batch_size = batch_size;
        cfg.learning_rate = learning_rate;
        cfg.seed = seed;
        cfg.eval_interval = eval_interval;
        const auto result = train::train(net, samples, samples, cfg);
        py::list history;
        for (const auto& row : result.history) {
          py::dict d;
          d["epoch"] = row.epoch;
          d["loss"] = row.loss;
          if (row.evaluated) d["mae_deg"] = row.mae_deg;
          history.append(d);
        }
        return history;
      },
      py::arg("net"), py::arg("inputs"), py::arg("gts"), py::arg("epochs") = 10,
      py::arg("batch_size") = 2, py::arg("learning_rate") = 1e-4, py::arg("seed") = 0,
      py::arg("eval_interval") = 1000000);

  m.def("profile", [](snn::SpikingUnet& net, const FloatArray& input) {
    const EnergyReport report =
        profile_inference(net, tensor_from_array(input, 3, "profile input"));
    const EnergyReport ann = count_ops(report.traces, net.weighted_layer_count(), true);
    py::dict d;
    d["op_mac"] = report.op_mac;
    d["op_ac"] = report.op_ac;
    d["energy_joules"] = report.energy_joules;
    d["average_rate"] = report.average_rate;
    d["benefit_vs_ann"] = report.benefit_vs(ann);
    py::list layers;
    for (const auto& t : report.traces) {
      py::dict l;
      l["layer"] = t.layer_id;
      l["name"] = t.name;
      l["spiking"] = t.spiking;
      l["neurons"] = t.neuron_count;
      l["fan_in"] = t.fan_in;
      l["rate"] = mean_spiking_rate(t);
      layers.append(l);
    }
    d["layers"] = layers;
    return d;
  });

  m.def("energy_from_counts", [](double op_mac, double op_ac) {
    const auto report = EnergyReport::from_counts(op_mac, op_ac);
    py::dict d;
    d["op_mac"] = report.op_mac;
    d["op_ac"] = report.op_ac;
    d["energy_joules"] = report.energy_joules;
    return d;
  });

  m.def("read_pevt", [](const std::string& path) {
    const EventStream stream = io::read_pevt(path);
    py::dict out;
    const std::vector<py::ssize_t> flat{static_cast<py::ssize_t>(stream.size())};
    py::array_t<uint64_t> t(flat);
    py::array_t<uint16_t> x(flat), y(flat);
    py::array_t<int8_t> p(flat);
    const size_t n = stream.size();
    for (size_t i = 0; i < n; ++i) {
      const Event& e = stream.events()[i];
      t.mutable_at(i) = e.t_us;
      x.mutable_at(i) = e.x;
      y.mutable_at(i) = e.y;
      p.mutable_at(i) = e.polarity;
    }
    out["width"] = stream.width();
    out["height"] = stream.height();
    out["t"] = t;
    out["x"] = x;
    out["y"] = y;
    out["p"] = p;
    return out;
  });

  m.attr("__version__") = "0.1.0";
}

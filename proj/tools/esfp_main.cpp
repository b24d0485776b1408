// Command-line pipeline: simulate polarization event datasets, encode them,
// train and evaluate spiking UNets, and audit synaptic-operation energy.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "esfp/dataset.hpp"
#include "esfp/energy.hpp"
#include "esfp/io.hpp"
#include "esfp/train.hpp"
#include "esfp/unet.hpp"

namespace fs = std::filesystem;
using namespace esfp;

namespace {

constexpr const char* kToolVersion = "esfp 0.1.0";

std::string timestamp_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

void emit_manifest(const std::string& out_dir, const std::string& command,
                   const std::vector<std::pair<std::string, std::string>>& extra) {
  std::vector<std::pair<std::string, std::string>> entries;
  entries.emplace_back("command", command);
  entries.emplace_back("tool_version", kToolVersion);
  entries.emplace_back("timestamp", timestamp_now());
  entries.insert(entries.end(), extra.begin(), extra.end());
  io::write_manifest((fs::path(out_dir) / "manifest.txt").string(), entries);
}

double cfg_num(const io::ConfigFile& cfg, const std::string& section, const char* key,
               double fallback) {
  auto v = cfg.get(section, key);
  return v ? io::parse_double(*v, key) : fallback;
}

long cfg_int(const io::ConfigFile& cfg, const std::string& section, const char* key,
             long fallback) {
  auto v = cfg.get(section, key);
  return v ? io::parse_long(*v, key) : fallback;
}

struct NetworkFlags {
  std::string mode;
  std::string upsample;
  std::string neuron;
};

snn::NetworkConfig network_from_config(const io::ConfigFile& cfg) {
  const auto* section = cfg.find("network");
  if (!section) return snn::NetworkConfig{};
  std::ostringstream text;
  text << "[network]\n";
  for (const auto& [k, v] : section->entries) text << k << "=" << v << "\n";
  return io::network_config_from_text(text.str());
}

void apply_network_flags(snn::NetworkConfig& net, const NetworkFlags& flags) {
  if (!flags.mode.empty()) net.mode = snn::timestep_mode_from_name(flags.mode);
  if (!flags.upsample.empty()) net.upsample = snn::upsample_mode_from_name(flags.upsample);
  if (!flags.neuron.empty()) net.neuron.kind = snn::neuron_kind_from_name(flags.neuron);
}

int cmd_simulate(const std::string& config_path, const std::string& out_dir, long seed,
                 bool seed_set) {
  const io::ConfigFile cfg = io::ConfigFile::parse_file(config_path);
  const int width = static_cast<int>(cfg_int(cfg, "dataset", "width", 64));
  const int height = static_cast<int>(cfg_int(cfg, "dataset", "height", 64));

  SimulatorConfig sim;
  sim.contrast_threshold = cfg_num(cfg, "simulator", "contrast_threshold", sim.contrast_threshold);
  sim.polarizer_speed = cfg_num(cfg, "simulator", "polarizer_speed", sim.polarizer_speed);
  sim.total_rotation = cfg_num(cfg, "simulator", "total_rotation", sim.total_rotation);
  sim.sampling_step = cfg_num(cfg, "simulator", "sampling_step", sim.sampling_step);
  sim.threshold_jitter = cfg_num(cfg, "simulator", "threshold_jitter", sim.threshold_jitter);
  sim.noise_seed = static_cast<uint64_t>(cfg_int(cfg, "simulator", "noise_seed", 0));
  if (seed_set) sim.noise_seed = static_cast<uint64_t>(seed);

  const auto scenes = scenes_from_config(cfg, width, height);
  const int written = simulate_dataset(scenes, sim, out_dir);
  emit_manifest(out_dir, "simulate",
                {{"config", config_path},
                 {"seed", std::to_string(sim.noise_seed)},
                 {"scenes", std::to_string(written)},
                 {"contrast_threshold", std::to_string(sim.contrast_threshold)},
                 {"output", out_dir}});
  std::cout << "simulate: wrote " << written << " scenes to " << out_dir << "\n";
  return 0;
}

int cmd_encode(const std::string& data_dir, const std::string& out_dir, int bins, bool normalize) {
  const LoadedDataset dataset = load_dataset(data_dir, bins, normalize);
  fs::create_directories(out_dir);
  int written = 0;
  for (const auto* split : {&dataset.train, &dataset.test}) {
    for (const auto& sample : *split) {
      io::write_pcvg((fs::path(out_dir) / (sample.name + ".pcvg")).string(), sample.input);
      ++written;
    }
  }
  emit_manifest(out_dir, "encode",
                {{"input", data_dir},
                 {"bins", std::to_string(bins)},
                 {"normalize", normalize ? "1" : "0"},
                 {"tensors", std::to_string(written)},
                 {"output", out_dir}});
  std::cout << "encode: wrote " << written << " CVGR-I tensors to " << out_dir << "\n";
  return 0;
}

int cmd_train(const std::string& data_dir, const std::string& out_dir,
              const std::string& config_path, const NetworkFlags& flags, long seed, bool seed_set,
              long epochs_flag, bool epochs_set) {
  io::ConfigFile cfg;
  if (!config_path.empty()) cfg = io::ConfigFile::parse_file(config_path);

  snn::NetworkConfig net_cfg = network_from_config(cfg);
  apply_network_flags(net_cfg, flags);

  train::TrainConfig tc;
  tc.epochs = static_cast<int>(cfg_int(cfg, "train", "epochs", tc.epochs));
  tc.batch_size = static_cast<int>(cfg_int(cfg, "train", "batch_size", tc.batch_size));
  tc.learning_rate = cfg_num(cfg, "train", "learning_rate", tc.learning_rate);
  tc.beta1 = cfg_num(cfg, "train", "beta1", tc.beta1);
  tc.beta2 = cfg_num(cfg, "train", "beta2", tc.beta2);
  tc.epsilon = cfg_num(cfg, "train", "epsilon", tc.epsilon);
  tc.grad_clip = cfg_num(cfg, "train", "grad_clip", tc.grad_clip);
  tc.eval_interval = static_cast<int>(cfg_int(cfg, "train", "eval_interval", tc.eval_interval));
  tc.target_mae_deg = cfg_num(cfg, "train", "target_mae", tc.target_mae_deg);
  tc.seed = static_cast<uint64_t>(cfg_int(cfg, "train", "seed", 0));
  if (auto v = cfg.get("train", "all_pixels")) tc.all_pixels = io::parse_bool(*v, "all_pixels");
  if (seed_set) tc.seed = static_cast<uint64_t>(seed);
  if (epochs_set) tc.epochs = static_cast<int>(epochs_flag);

  const LoadedDataset dataset = load_dataset(data_dir, net_cfg.bins, net_cfg.normalize_input);
  if (dataset.train.empty()) throw std::runtime_error("train: dataset has no training scenes");

  fs::create_directories(out_dir);
  const std::string model_path = (fs::path(out_dir) / "model.pwts").string();

  snn::SpikingUnet net(net_cfg, tc.seed);
  io::save_checkpoint(model_path, net);  // epoch-0 state; overwritten as training progresses

  std::vector<train::HistoryRow> history;
  const auto result =
      train::train(net, dataset.train, dataset.test, tc, [&](const train::HistoryRow& row) {
        history.push_back(row);
        if (row.evaluated) {
          io::save_checkpoint(model_path, net);
          std::cout << "epoch " << row.epoch << " loss " << row.loss << " test MAE " << row.mae_deg
                    << " deg\n";
        }
      });
  io::save_checkpoint(model_path, net);
  io::write_history_csv((fs::path(out_dir) / "history.csv").string(), result.history);
  emit_manifest(out_dir, "train",
                {{"config", config_path.empty() ? "(defaults)" : config_path},
                 {"data", data_dir},
                 {"seed", std::to_string(tc.seed)},
                 {"epochs", std::to_string(result.epochs_run)},
                 {"mode", snn::timestep_mode_name(net_cfg.mode)},
                 {"checkpoint", model_path},
                 {"output", out_dir}});
  std::cout << "train: " << result.epochs_run << " epochs, checkpoint at " << model_path << "\n";
  return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& data_dir,
             const std::string& out_dir, const std::string& split) {
  snn::SpikingUnet net = io::load_checkpoint(checkpoint);
  const LoadedDataset dataset =
      load_dataset(data_dir, net.config().bins, net.config().normalize_input);
  const auto& samples = split == "train" ? dataset.train : dataset.test;
  if (samples.empty()) throw std::runtime_error("eval: no scenes in split '" + split + "'");

  const train::EvalReport report = train::evaluate(net, samples);
  fs::create_directories(out_dir);
  io::write_eval_csv((fs::path(out_dir) / "eval.csv").string(), report);
  emit_manifest(out_dir, "eval",
                {{"checkpoint", checkpoint},
                 {"data", data_dir},
                 {"split", split},
                 {"mae", std::to_string(report.aggregate.mae_deg)},
                 {"output", out_dir}});
  for (const auto& row : report.per_sample)
    std::cout << row.name << ": MAE " << row.mae_deg << " deg, AE<11.25 " << row.ae1125
              << ", AE<22.5 " << row.ae225 << ", AE<30 " << row.ae30 << "\n";
  std::cout << "aggregate: MAE " << report.aggregate.mae_deg << " deg\n";
  return 0;
}

int cmd_profile(const std::string& checkpoint, const std::string& data_dir,
                const std::string& out_dir, const std::string& split) {
  snn::SpikingUnet net = io::load_checkpoint(checkpoint);
  const LoadedDataset dataset =
      load_dataset(data_dir, net.config().bins, net.config().normalize_input);
  const auto& samples = split == "train" ? dataset.train : dataset.test;
  if (samples.empty()) throw std::runtime_error("profile: no scenes in split '" + split + "'");

  const EnergyReport report = profile_inference(net, samples.front().input);
  // dense ANN counterpart of the same architecture for the benefit ratio
  const EnergyReport ann = count_ops(report.traces, net.weighted_layer_count(), /*ann_mode=*/true);

  fs::create_directories(out_dir);
  io::write_energy_csv((fs::path(out_dir) / "energy.csv").string(), report, &ann);
  emit_manifest(out_dir, "profile",
                {{"checkpoint", checkpoint},
                 {"data", data_dir},
                 {"sample", samples.front().name},
                 {"energy_joules", std::to_string(report.energy_joules)},
                 {"output", out_dir}});

  std::printf("%-8s %-12s %-14s %s\n", "Layer", "Rate", "Spikes", "Name");
  for (const auto& t : report.traces)
    std::printf("%-8d %-12.4f %-14s %s\n", t.layer_id, mean_spiking_rate(t),
                t.spiking ? "Yes" : "No", t.name.c_str());
  std::printf("average rate %.4f\n", report.average_rate);
  std::printf("op_mac %.4g, op_ac %.4g, energy %.6g mJ, benefit vs ANN %.2fx\n", report.op_mac,
              report.op_ac, report.energy_joules * 1e3, report.benefit_vs(ann));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"event-based shape from polarization with spiking UNets"};
  app.require_subcommand(1);

  std::string config_path, out_dir, data_dir, checkpoint, split = "test";
  NetworkFlags flags;
  long seed = 0, epochs = 0;
  int bins = 8;
  bool normalize = false;

  auto* sim = app.add_subcommand("simulate", "simulate a polarization event dataset");
  sim->add_option("--config", config_path, "scene list config")->required();
  sim->add_option("--out", out_dir, "output dataset directory")->required();
  auto* sim_seed = sim->add_option("--seed", seed, "noise seed override");

  auto* enc = app.add_subcommand("encode", "encode a dataset into CVGR-I tensors");
  enc->add_option("--data", data_dir, "dataset directory")->required();
  enc->add_option("--out", out_dir, "output directory")->required();
  enc->add_option("--bins", bins, "temporal bins");
  enc->add_flag("--normalize", normalize, "per-sample min-max normalization");

  auto* tr = app.add_subcommand("train", "train a spiking UNet");
  tr->add_option("--data", data_dir, "dataset directory")->required();
  tr->add_option("--out", out_dir, "output directory")->required();
  tr->add_option("--config", config_path, "[network]/[train] config file");
  tr->add_option("--mode", flags.mode, "single|multi")->check(CLI::IsMember({"single", "multi"}));
  tr->add_option("--upsample", flags.upsample, "nearest|bilinear")
      ->check(CLI::IsMember({"nearest", "bilinear"}));
  tr->add_option("--neuron", flags.neuron, "if|lif|plif")
      ->check(CLI::IsMember({"if", "lif", "plif"}));
  auto* tr_seed = tr->add_option("--seed", seed, "training seed override");
  auto* tr_epochs = tr->add_option("--epochs", epochs, "epoch count override");

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  ev->add_option("--checkpoint", checkpoint, "model .pwts path")->required();
  ev->add_option("--data", data_dir, "dataset directory")->required();
  ev->add_option("--out", out_dir, "output directory")->required();
  ev->add_option("--split", split, "train|test")->check(CLI::IsMember({"train", "test"}));

  auto* prof = app.add_subcommand("profile", "energy-profile a checkpoint");
  prof->add_option("--checkpoint", checkpoint, "model .pwts path")->required();
  prof->add_option("--data", data_dir, "dataset directory")->required();
  prof->add_option("--out", out_dir, "output directory")->required();
  prof->add_option("--split", split, "train|test")->check(CLI::IsMember({"train", "test"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (sim->parsed()) return cmd_simulate(config_path, out_dir, seed, sim_seed->count() > 0);
    if (enc->parsed()) return cmd_encode(data_dir, out_dir, bins, normalize);
    if (tr->parsed())
      return cmd_train(data_dir, out_dir, config_path, flags, seed, tr_seed->count() > 0, epochs,
                       tr_epochs->count() > 0);
    if (ev->parsed()) return cmd_eval(checkpoint, data_dir, out_dir, split);
    if (prof->parsed()) return cmd_profile(checkpoint, data_dir, out_dir, split);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

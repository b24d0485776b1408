#include "esfp/dataset.hpp"

#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>
#include <sstream>

namespace esfp {

namespace fs = std::filesystem;

namespace {

constexpr double kPi = std::numbers::pi;

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return lo + (hi - lo) * (static_cast<double>(rng() >> 11) * 0x1.0p-53);
}

double deg(double d) { return d * kPi / 180.0; }

}  // namespace

std::vector<SceneSpec> sphere_plane_mix(int width, int height, int train_scenes, int test_scenes,
                                        uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0xd1b54a32d192ed03ULL);
  std::vector<SceneSpec> specs;
  const int total = train_scenes + test_scenes;
  const double min_extent = std::min(width, height);
  for (int i = 0; i < total; ++i) {
    const bool is_test = i >= train_scenes;
    SceneSpec spec;
    spec.split = is_test ? "test" : "train";
    std::ostringstream name;
    name << spec.split << "_" << (is_test ? i - train_scenes : i);
    spec.name = name.str();

    // alternate caps-over-planes and plain tilted planes; plane azimuths stay
    // inside (25deg, 155deg) so the polarizer's pi ambiguity cannot alias two
    // scenes onto the same event stream; zeniths stay steep enough for a
    // usable polarization amplitude
    const double intensity = uniform(rng, 0.6, 1.4);
    if (i % 2 == 0) {
      const double radius = uniform(rng, 0.30, 0.42) * min_extent;
      const double cx = width / 2.0 + uniform(rng, -0.12, 0.12) * width;
      const double cy = height / 2.0 + uniform(rng, -0.12, 0.12) * height;
      const double cap_zenith = uniform(rng, deg(55), deg(75));
      const double plane_az = uniform(rng, deg(25), deg(155));
      const double plane_zen = uniform(rng, deg(15), deg(35));
      spec.scene = Scene::composite(width, height, cx, cy, radius, cap_zenith, plane_az, plane_zen,
                                    intensity);
    } else {
      const double az = uniform(rng, deg(25), deg(155));
      const double zen = uniform(rng, deg(30), deg(55));
      spec.scene = Scene::plane(width, height, az, zen, intensity);
    }
    specs.push_back(std::move(spec));
  }
  return specs;
}

std::vector<SceneSpec> scenes_from_config(const io::ConfigFile& config, int width, int height) {
  std::vector<SceneSpec> specs;
  int index = 0;
  for (const auto& section : config.sections) {
    if (section.name != "scene") continue;
    SceneSpec spec;
    spec.name = section.get("name").value_or("scene_" + std::to_string(index));
    spec.split = section.get("split").value_or("train");
    if (spec.split != "train" && spec.split != "test")
      throw std::runtime_error("scene " + spec.name + ": split must be train or test");
    const std::string kind = section.get("kind").value_or("plane");
    auto num = [&](const char* key, double fallback) {
      auto v = section.get(key);
      return v ? io::parse_double(*v, key) : fallback;
    };
    const double intensity = num("intensity", 1.0);
    const double n = num("refractive_index", 1.5);
    if (kind == "plane") {
      spec.scene = Scene::plane(width, height, num("azimuth", 0.0), num("zenith", 0.5), intensity, n);
    } else if (kind == "sphere_cap") {
      spec.scene = Scene::sphere_cap(width, height, num("center_x", width / 2.0),
                                     num("center_y", height / 2.0),
                                     num("radius", 0.35 * std::min(width, height)),
                                     num("max_zenith", 1.0), intensity, n,
                                     section.get("background_valid")
                                         ? io::parse_bool(*section.get("background_valid"), "background_valid")
                                         : false);
    } else if (kind == "ramp") {
      spec.scene = Scene::ramp(width, height, num("azimuth", 0.0), num("zenith_min", 0.1),
                               num("zenith_max", 1.0), intensity, n);
    } else if (kind == "composite") {
      spec.scene = Scene::composite(width, height, num("center_x", width / 2.0),
                                    num("center_y", height / 2.0),
                                    num("radius", 0.35 * std::min(width, height)),
                                    num("max_zenith", 1.0), num("plane_azimuth", 0.8),
                                    num("plane_zenith", 0.3), intensity, n);
    } else {
      throw std::runtime_error("scene " + spec.name + ": unknown kind '" + kind + "'");
    }
    specs.push_back(std::move(spec));
    ++index;
  }
  if (specs.empty()) throw std::runtime_error("config declares no [scene] sections");
  return specs;
}

int simulate_dataset(const std::vector<SceneSpec>& scenes, const SimulatorConfig& config,
                     const std::string& out_dir) {
  if (scenes.empty()) throw std::invalid_argument("simulate_dataset: no scenes");
  config.validate();
  fs::create_directories(out_dir);
  const fs::path dir(out_dir);

  std::ostringstream cfg;
  cfg << "[dataset]\n";
  cfg << "width=" << scenes.front().scene.width << "\n";
  cfg << "height=" << scenes.front().scene.height << "\n";
  cfg << "contrast_threshold=" << config.contrast_threshold << "\n";
  cfg << "scene_count=" << scenes.size() << "\n";

  for (const auto& spec : scenes) {
    if (spec.scene.width != scenes.front().scene.width ||
        spec.scene.height != scenes.front().scene.height)
      throw std::invalid_argument("simulate_dataset: scenes must share one resolution");
    const SimulationResult result = simulate_events(spec.scene, config);
    io::write_pevt((dir / (spec.name + ".pevt")).string(), result.stream);
    io::write_pnrm((dir / (spec.name + ".pnrm")).string(), result.ground_truth);
    io::write_pimg((dir / (spec.name + ".pimg")).string(), result.intensity0);
    cfg << "[scene]\n";
    cfg << "name=" << spec.name << "\n";
    cfg << "split=" << spec.split << "\n";
  }
  io::write_text_file((dir / "dataset.cfg").string(), cfg.str());
  return static_cast<int>(scenes.size());
}

train::Sample encode_sample(const std::string& name, const EventStream& stream,
                            const NormalMap& gt, const Image& intensity0, int bins,
                            float contrast_threshold, bool minmax_norm) {
  train::Sample sample;
  sample.name = name;
  const VoxelGrid grid = build_voxel_grid(stream, bins);
  const Cvgr cvgr = build_cvgr(grid, contrast_threshold);
  sample.input = build_cvgri(cvgr, intensity0);
  if (minmax_norm) sample.input = minmax_normalize(sample.input);
  sample.gt = gt;
  return sample;
}

LoadedDataset load_dataset(const std::string& dir, int bins, bool minmax_norm) {
  const fs::path root(dir);
  const io::ConfigFile cfg = io::ConfigFile::parse_file((root / "dataset.cfg").string());
  const auto* dataset = cfg.find("dataset");
  if (!dataset) throw std::runtime_error(dir + ": dataset.cfg missing [dataset] section");

  LoadedDataset out;
  out.width = static_cast<int>(io::parse_long(dataset->get("width").value_or("0"), "width"));
  out.height = static_cast<int>(io::parse_long(dataset->get("height").value_or("0"), "height"));
  out.contrast_threshold = static_cast<float>(
      io::parse_double(dataset->get("contrast_threshold").value_or("0.05"), "contrast_threshold"));

  for (const auto& section : cfg.sections) {
    if (section.name != "scene") continue;
    const std::string name = section.get("name").value_or("");
    if (name.empty()) throw std::runtime_error(dir + ": scene without a name");
    const std::string split = section.get("split").value_or("train");
    const EventStream stream = io::read_pevt((root / (name + ".pevt")).string());
    const NormalMap gt = io::read_pnrm((root / (name + ".pnrm")).string());
    const Image intensity0 = io::read_pimg((root / (name + ".pimg")).string());
    train::Sample sample = encode_sample(name, stream, gt, intensity0, bins,
                                         out.contrast_threshold, minmax_norm);
    (split == "test" ? out.test : out.train).push_back(std::move(sample));
  }
  if (out.train.empty() && out.test.empty()) throw std::runtime_error(dir + ": dataset has no scenes");
  return out;
}

}  // namespace esfp

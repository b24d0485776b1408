#pragma once

#include <string>
#include <vector>

#include "esfp/event.hpp"
#include "esfp/io.hpp"
#include "esfp/train.hpp"

namespace esfp {

struct SceneSpec {
  std::string name;
  std::string split;  // "train" or "test"
  Scene scene;
};

/// Deterministic mix of sphere caps, composites and tilted planes with
/// azimuths restricted away from the pi ambiguity, for desk-scale training
/// runs.
std::vector<SceneSpec> sphere_plane_mix(int width, int height, int train_scenes, int test_scenes,
                                        uint64_t seed);

/// Parses repeated [scene] sections (kind, split plus per-kind geometry
/// keys) from a simulate config.
std::vector<SceneSpec> scenes_from_config(const io::ConfigFile& config, int width, int height);

/// Simulates every scene and writes <name>.pevt/.pnrm/.pimg plus dataset.cfg
/// into the directory. Returns the number of scenes written.
int simulate_dataset(const std::vector<SceneSpec>& scenes, const SimulatorConfig& config,
                     const std::string& out_dir);

struct LoadedDataset {
  std::vector<train::Sample> train;
  std::vector<train::Sample> test;
  int width = 0;
  int height = 0;
  float contrast_threshold = 0.0f;
};

/// Reads dataset.cfg and the per-scene files, then encodes each stream into
/// its CVGR-I tensor with the given bin count.
LoadedDataset load_dataset(const std::string& dir, int bins, bool minmax_norm = false);

train::Sample encode_sample(const std::string& name, const EventStream& stream,
                            const NormalMap& gt, const Image& intensity0, int bins,
                            float contrast_threshold, bool minmax_norm);

}  // namespace esfp

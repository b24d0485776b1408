#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <random>
#include <string>

#include "esfp/io.hpp"
#include "esfp/train.hpp"
#include "esfp/unet.hpp"

using namespace esfp;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("esfp_cli_" + std::to_string(std::random_device{}()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string sub(const std::string& name) const { return (path / name).string(); }
};

int run_cli(const std::string& args) {
  const std::string cmd = std::string(ESFP_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

const char* kSceneConfig =
    "[dataset]\n"
    "width=16\n"
    "height=16\n"
    "[simulator]\n"
    "contrast_threshold=0.05\n"
    "sampling_step=0.0349\n"  // 2 degrees, keeps the files small
    "[scene]\n"
    "name=train_0\n"
    "split=train\n"
    "kind=composite\n"
    "radius=5\n"
    "max_zenith=1.0\n"
    "plane_azimuth=0.8\n"
    "plane_zenith=0.3\n"
    "[scene]\n"
    "name=train_1\n"
    "split=train\n"
    "kind=plane\n"
    "azimuth=1.2\n"
    "zenith=0.5\n"
    "[scene]\n"
    "name=test_0\n"
    "split=test\n"
    "kind=composite\n"
    "radius=4\n"
    "max_zenith=0.9\n"
    "plane_azimuth=1.9\n"
    "plane_zenith=0.25\n"
    "[scene]\n"
    "name=test_1\n"
    "split=test\n"
    "kind=plane\n"
    "azimuth=2.0\n"
    "zenith=0.4\n";

const char* kTrainConfig =
    "[network]\n"
    "mode=multi\n"
    "bins=4\n"
    "encoder_blocks=2\n"
    "base_channels=4\n"
    "[train]\n"
    "epochs=2\n"
    "batch_size=2\n"
    "eval_interval=2\n";

}  // namespace

TEST_CASE("simulate writes three files per scene plus dataset config and manifest") {
  TempDir dir;
  io::write_text_file(dir.sub("scenes.cfg"), kSceneConfig);
  REQUIRE(run_cli("simulate --config " + dir.sub("scenes.cfg") + " --out " + dir.sub("data")) == 0);

  int files = 0;
  for ([[maybe_unused]] const auto& entry : fs::directory_iterator(dir.sub("data"))) ++files;
  // 4 scenes x 3 files + dataset.cfg + manifest.txt
  CHECK(files == 14);
  CHECK(fs::exists(dir.sub("data") + "/manifest.txt"));
  CHECK(fs::exists(dir.sub("data") + "/test_1.pnrm"));
}

TEST_CASE("simulate reruns with the same seed are bitwise identical") {
  TempDir dir;
  io::write_text_file(dir.sub("scenes.cfg"), kSceneConfig);
  REQUIRE(run_cli("simulate --config " + dir.sub("scenes.cfg") + " --seed 3 --out " +
                  dir.sub("a")) == 0);
  REQUIRE(run_cli("simulate --config " + dir.sub("scenes.cfg") + " --seed 3 --out " +
                  dir.sub("b")) == 0);
  for (const char* name : {"train_0.pevt", "train_1.pevt", "test_0.pnrm", "test_0.pimg"}) {
    const auto a = io::read_text_file(dir.sub("a") + "/" + name);
    const auto b = io::read_text_file(dir.sub("b") + "/" + name);
    CHECK(a == b);
  }
}

TEST_CASE("encode emits one PCVG tensor per scene") {
  TempDir dir;
  io::write_text_file(dir.sub("scenes.cfg"), kSceneConfig);
  REQUIRE(run_cli("simulate --config " + dir.sub("scenes.cfg") + " --out " + dir.sub("data")) == 0);
  REQUIRE(run_cli("encode --data " + dir.sub("data") + " --bins 4 --out " + dir.sub("enc")) == 0);
  const auto t = io::read_pcvg(dir.sub("enc") + "/train_0.pcvg");
  CHECK(t.grid.bins == 4);
  CHECK(t.grid.width == 16);
  CHECK(t.grid.height == 16);
  CHECK(fs::exists(dir.sub("enc") + "/test_1.pcvg"));
}

TEST_CASE("train with zero epochs leaves the checkpoint at initialization") {
  TempDir dir;
  io::write_text_file(dir.sub("scenes.cfg"), kSceneConfig);
  REQUIRE(run_cli("simulate --config " + dir.sub("scenes.cfg") + " --out " + dir.sub("data")) == 0);
  io::write_text_file(dir.sub("train.cfg"), kTrainConfig);
  REQUIRE(run_cli("train --data " + dir.sub("data") + " --config " + dir.sub("train.cfg") +
                  " --epochs 0 --seed 5 --out " + dir.sub("run")) == 0);

  snn::SpikingUnet loaded = io::load_checkpoint(dir.sub("run") + "/model.pwts");
  snn::NetworkConfig expected_cfg = loaded.config();
  snn::SpikingUnet fresh(expected_cfg, 5);  // the training seed also seeds the weights
  auto a = loaded.named_parameters();
  auto b = fresh.named_parameters();
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    REQUIRE(a[i].first == b[i].first);
    for (long j = 0; j < a[i].second.numel(); ++j)
      CHECK(a[i].second.values()[j] == b[i].second.values()[j]);
  }
}

TEST_CASE("train, eval and profile round-trip through checkpoints and CSVs") {
  TempDir dir;
  io::write_text_file(dir.sub("scenes.cfg"), kSceneConfig);
  REQUIRE(run_cli("simulate --config " + dir.sub("scenes.cfg") + " --out " + dir.sub("data")) == 0);
  io::write_text_file(dir.sub("train.cfg"), kTrainConfig);
  REQUIRE(run_cli("train --data " + dir.sub("data") + " --config " + dir.sub("train.cfg") +
                  " --seed 5 --out " + dir.sub("run")) == 0);
  CHECK(fs::exists(dir.sub("run") + "/history.csv"));
  CHECK(fs::exists(dir.sub("run") + "/manifest.txt"));

  REQUIRE(run_cli("eval --checkpoint " + dir.sub("run") + "/model.pwts --data " + dir.sub("data") +
                  " --out " + dir.sub("eval")) == 0);
  const std::string eval_csv = io::read_text_file(dir.sub("eval") + "/eval.csv");
  CHECK(eval_csv.find("aggregate") != std::string::npos);
  CHECK(eval_csv.find("test_0") != std::string::npos);

  REQUIRE(run_cli("profile --checkpoint " + dir.sub("run") + "/model.pwts --data " +
                  dir.sub("data") + " --out " + dir.sub("prof")) == 0);
  const std::string energy_csv = io::read_text_file(dir.sub("prof") + "/energy.csv");
  CHECK(energy_csv.find("summary,op_mac") != std::string::npos);
  CHECK(energy_csv.find("summary,benefit_vs_ann") != std::string::npos);
}

TEST_CASE("simulated sphere normals match the analytic zenith expectation") {
  TempDir dir;
  const char* sphere_cfg =
      "[dataset]\n"
      "width=32\n"
      "height=32\n"
      "[scene]\n"
      "name=train_0\n"
      "split=train\n"
      "kind=sphere_cap\n"
      "center_x=16\n"
      "center_y=16\n"
      "radius=11\n"
      "max_zenith=1.1\n";
  io::write_text_file(dir.sub("sphere.cfg"), sphere_cfg);
  REQUIRE(run_cli("simulate --config " + dir.sub("sphere.cfg") + " --out " + dir.sub("data")) == 0);
  const NormalMap gt = io::read_pnrm(dir.sub("data") + "/train_0.pnrm");

  // analytic oracle: zenith = asin(d / (radius / sin(max_zenith))) per pixel
  const double sphere_radius = 11.0 / std::sin(1.1);
  double expected = 0, actual = 0;
  long count = 0;
  const long hw = gt.pixel_count();
  for (int y = 0; y < 32; ++y) {
    for (int x = 0; x < 32; ++x) {
      const long i = static_cast<long>(y) * 32 + x;
      if (!gt.valid[i]) continue;
      const double dx = x + 0.5 - 16.0, dy = y + 0.5 - 16.0;
      const double d = std::sqrt(dx * dx + dy * dy);
      REQUIRE(d <= 11.0);
      expected += std::asin(d / sphere_radius);
      actual += std::acos(std::clamp<double>(gt.values[2 * hw + i], -1.0, 1.0));
      ++count;
    }
  }
  REQUIRE(count > 100);
  CHECK(std::abs(expected / count - actual / count) <= 1e-3);
}

TEST_CASE("evaluating a checkpoint against its own ground truth normals gives zero MAE") {
  // direct library-level check of the oracle identity used by the CLI
  TempDir dir;
  io::write_text_file(dir.sub("scenes.cfg"), kSceneConfig);
  REQUIRE(run_cli("simulate --config " + dir.sub("scenes.cfg") + " --out " + dir.sub("data")) == 0);
  const NormalMap gt = io::read_pnrm(dir.sub("data") + "/test_0.pnrm");
  const auto row = train::angular_metrics(gt, gt);
  CHECK(row.mae_deg <= 2e-2);  // float32 normals leave millidegree residue
  CHECK(row.ae1125 == 1.0);
}

TEST_CASE("usage errors exit with code 1, data errors with code 2") {
  TempDir dir;
  CHECK(run_cli("") == 1);
  CHECK(run_cli("simulate") == 1);                       // missing required flags
  CHECK(run_cli("train --data /nonexistent --out " + dir.sub("x")) == 2);
  CHECK(run_cli("eval --checkpoint /nonexistent.pwts --data /nonexistent --out " + dir.sub("y")) ==
        2);
}

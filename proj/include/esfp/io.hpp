#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "esfp/encoding.hpp"
#include "esfp/energy.hpp"
#include "esfp/event.hpp"
#include "esfp/train.hpp"
#include "esfp/unet.hpp"

namespace esfp::io {

// Little-endian binary rasters and streams. Layouts:
//   PEVT: magic 'PEVT', version u32=1, width u32, height u32, count u64,
//         count * {t_us u64, x u16, y u16, p i8, pad u8[3]}
//   PNRM: magic 'PNRM', width u32, height u32, f32 (nx,ny,nz) row-major;
//         invalid pixels are zero triplets
//   PIMG: magic 'PIMG', width u32, height u32, f32 row-major
//   PCVG: magic 'PCVG', bins u32, height u32, width u32, f32 bin-major then
//         row-major (the contrast threshold travels in dataset metadata)
//   PWTS: magic 'PWTS', count u32, count * {name_len u32, name bytes,
//         rank u32, extents u32[rank], f32 payload}
void write_pevt(const std::string& path, const EventStream& stream);
EventStream read_pevt(const std::string& path);
void write_pnrm(const std::string& path, const NormalMap& map);
NormalMap read_pnrm(const std::string& path);
void write_pimg(const std::string& path, const Image& image);
Image read_pimg(const std::string& path);
void write_pcvg(const std::string& path, const CvgriTensor& tensor);
CvgriTensor read_pcvg(const std::string& path);

struct NamedArray {
  std::string name;
  std::vector<int> shape;
  std::vector<float> values;
};
void write_pwts(const std::string& path, const std::vector<NamedArray>& arrays);
std::vector<NamedArray> read_pwts(const std::string& path);

/// Sidecar text config next to a .pwts checkpoint.
std::string checkpoint_config_path(const std::string& pwts_path);
std::string network_config_to_text(const snn::NetworkConfig& config);
snn::NetworkConfig network_config_from_text(const std::string& text);

void save_checkpoint(const std::string& pwts_path, snn::SpikingUnet& net);
/// Rebuilds the network from the sidecar config and loads every weight;
/// name or shape mismatches raise a schema error.
snn::SpikingUnet load_checkpoint(const std::string& pwts_path);

/// Flat key=value configs with [section] headers; '#' starts a comment.
/// Sections may repeat (scene lists), order is preserved.
struct ConfigSection {
  std::string name;
  std::vector<std::pair<std::string, std::string>> entries;
  std::optional<std::string> get(const std::string& key) const;
};

struct ConfigFile {
  std::vector<ConfigSection> sections;
  static ConfigFile parse_file(const std::string& path);
  static ConfigFile parse_string(const std::string& text);
  const ConfigSection* find(const std::string& name) const;
  std::optional<std::string> get(const std::string& section, const std::string& key) const;
};

double parse_double(const std::string& value, const std::string& what);
long parse_long(const std::string& value, const std::string& what);
bool parse_bool(const std::string& value, const std::string& what);

/// Key=value run manifest, written atomically (temp file + rename).
void write_manifest(const std::string& path,
                    const std::vector<std::pair<std::string, std::string>>& entries);

void write_history_csv(const std::string& path, const std::vector<train::HistoryRow>& history);
void write_eval_csv(const std::string& path, const train::EvalReport& report);
void write_energy_csv(const std::string& path, const EnergyReport& report,
                      const EnergyReport* reference);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

}  // namespace esfp::io

#include "esfp/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace esfp::io {

namespace {

class ByteWriter {
 public:
  explicit ByteWriter(const std::string& path) : path_(path), out_(path, std::ios::binary) {
    if (!out_) throw std::runtime_error("cannot open for writing: " + path);
  }
  void u8(uint8_t v) { out_.put(static_cast<char>(v)); }
  void i8(int8_t v) { out_.put(static_cast<char>(v)); }
  void u16(uint16_t v) {
    for (int i = 0; i < 2; ++i) u8(static_cast<uint8_t>(v >> (8 * i)));
  }
  void u32(uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<uint8_t>(v >> (8 * i)));
  }
  void u64(uint64_t v) {
    for (int i = 0; i < 8; ++i) u8(static_cast<uint8_t>(v >> (8 * i)));
  }
  void f32(float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    u32(bits);
  }
  void f32_span(const float* data, size_t count) {
    for (size_t i = 0; i < count; ++i) f32(data[i]);
  }
  void bytes(const char* data, size_t count) { out_.write(data, static_cast<std::streamsize>(count)); }
  void finish() {
    out_.flush();
    if (!out_) throw std::runtime_error("write failed: " + path_);
  }

 private:
  std::string path_;
  std::ofstream out_;
};

class ByteReader {
 public:
  explicit ByteReader(const std::string& path) : path_(path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    buf_ = ss.str();
  }
  uint8_t u8() {
    need(1);
    return static_cast<uint8_t>(buf_[pos_++]);
  }
  int8_t i8() { return static_cast<int8_t>(u8()); }
  uint16_t u16() {
    uint16_t v = 0;
    for (int i = 0; i < 2; ++i) v |= static_cast<uint16_t>(u8()) << (8 * i);
    return v;
  }
  uint32_t u32() {
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(u8()) << (8 * i);
    return v;
  }
  uint64_t u64() {
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(u8()) << (8 * i);
    return v;
  }
  float f32() {
    const uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  std::string str(size_t n) {
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  void expect_magic(const char* magic) {
    const std::string m = str(4);
    if (m != magic) throw std::runtime_error(path_ + ": bad magic, expected " + magic);
  }
  bool at_end() const { return pos_ == buf_.size(); }
  const std::string& path() const { return path_; }

 private:
  void need(size_t n) {
    if (pos_ + n > buf_.size()) throw std::runtime_error(path_ + ": truncated file");
  }
  std::string path_;
  std::string buf_;
  size_t pos_ = 0;
};

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void write_pevt(const std::string& path, const EventStream& stream) {
  ByteWriter w(path);
  w.bytes("PEVT", 4);
  w.u32(1);
  w.u32(static_cast<uint32_t>(stream.width()));
  w.u32(static_cast<uint32_t>(stream.height()));
  w.u64(stream.size());
  for (const Event& e : stream.events()) {
    w.u64(e.t_us);
    w.u16(e.x);
    w.u16(e.y);
    w.i8(e.polarity);
    w.u8(0);
    w.u8(0);
    w.u8(0);
  }
  w.finish();
}

EventStream read_pevt(const std::string& path) {
  ByteReader r(path);
  r.expect_magic("PEVT");
  const uint32_t version = r.u32();
  if (version != 1) throw std::runtime_error(path + ": unsupported PEVT version");
  const int width = static_cast<int>(r.u32());
  const int height = static_cast<int>(r.u32());
  const uint64_t count = r.u64();
  std::vector<Event> events(count);
  for (uint64_t i = 0; i < count; ++i) {
    Event& e = events[i];
    e.t_us = r.u64();
    e.x = r.u16();
    e.y = r.u16();
    e.polarity = r.i8();
    r.u8();
    r.u8();
    r.u8();
  }
  return EventStream(width, height, std::move(events));
}

void write_pnrm(const std::string& path, const NormalMap& map) {
  ByteWriter w(path);
  w.bytes("PNRM", 4);
  w.u32(static_cast<uint32_t>(map.width));
  w.u32(static_cast<uint32_t>(map.height));
  const long hw = map.pixel_count();
  for (long i = 0; i < hw; ++i) {
    if (map.valid[i]) {
      w.f32(map.values[i]);
      w.f32(map.values[hw + i]);
      w.f32(map.values[2 * hw + i]);
    } else {
      w.f32(0.0f);
      w.f32(0.0f);
      w.f32(0.0f);
    }
  }
  w.finish();
}

NormalMap read_pnrm(const std::string& path) {
  ByteReader r(path);
  r.expect_magic("PNRM");
  const int width = static_cast<int>(r.u32());
  const int height = static_cast<int>(r.u32());
  NormalMap map(width, height);
  const long hw = map.pixel_count();
  for (long i = 0; i < hw; ++i) {
    const float nx = r.f32(), ny = r.f32(), nz = r.f32();
    const float norm = std::sqrt(nx * nx + ny * ny + nz * nz);
    map.values[i] = nx;
    map.values[hw + i] = ny;
    map.values[2 * hw + i] = nz;
    map.valid[i] = norm > 0.5f ? 1 : 0;
  }
  return map;
}

void write_pimg(const std::string& path, const Image& image) {
  ByteWriter w(path);
  w.bytes("PIMG", 4);
  w.u32(static_cast<uint32_t>(image.width));
  w.u32(static_cast<uint32_t>(image.height));
  w.f32_span(image.pixels.data(), image.pixels.size());
  w.finish();
}

Image read_pimg(const std::string& path) {
  ByteReader r(path);
  r.expect_magic("PIMG");
  const int width = static_cast<int>(r.u32());
  const int height = static_cast<int>(r.u32());
  Image image(width, height);
  for (auto& p : image.pixels) p = r.f32();
  return image;
}

void write_pcvg(const std::string& path, const CvgriTensor& tensor) {
  ByteWriter w(path);
  w.bytes("PCVG", 4);
  w.u32(static_cast<uint32_t>(tensor.grid.bins));
  w.u32(static_cast<uint32_t>(tensor.grid.height));
  w.u32(static_cast<uint32_t>(tensor.grid.width));
  w.f32_span(tensor.grid.values.data(), tensor.grid.values.size());
  w.finish();
}

CvgriTensor read_pcvg(const std::string& path) {
  ByteReader r(path);
  r.expect_magic("PCVG");
  const int bins = static_cast<int>(r.u32());
  const int height = static_cast<int>(r.u32());
  const int width = static_cast<int>(r.u32());
  CvgriTensor t;
  t.grid = Grid3(bins, height, width);
  for (auto& v : t.grid.values) v = r.f32();
  return t;
}

void write_pwts(const std::string& path, const std::vector<NamedArray>& arrays) {
  ByteWriter w(path);
  w.bytes("PWTS", 4);
  w.u32(static_cast<uint32_t>(arrays.size()));
  for (const auto& a : arrays) {
    w.u32(static_cast<uint32_t>(a.name.size()));
    w.bytes(a.name.data(), a.name.size());
    w.u32(static_cast<uint32_t>(a.shape.size()));
    long numel = 1;
    for (int e : a.shape) {
      w.u32(static_cast<uint32_t>(e));
      numel *= e;
    }
    if (numel != static_cast<long>(a.values.size()))
      throw std::invalid_argument("write_pwts: value count does not match shape for " + a.name);
    w.f32_span(a.values.data(), a.values.size());
  }
  w.finish();
}

std::vector<NamedArray> read_pwts(const std::string& path) {
  ByteReader r(path);
  r.expect_magic("PWTS");
  const uint32_t count = r.u32();
  std::vector<NamedArray> arrays(count);
  for (uint32_t i = 0; i < count; ++i) {
    NamedArray& a = arrays[i];
    const uint32_t name_len = r.u32();
    a.name = r.str(name_len);
    const uint32_t rank = r.u32();
    long numel = 1;
    a.shape.resize(rank);
    for (uint32_t d = 0; d < rank; ++d) {
      a.shape[d] = static_cast<int>(r.u32());
      numel *= a.shape[d];
    }
    a.values.resize(static_cast<size_t>(numel));
    for (auto& v : a.values) v = r.f32();
  }
  return arrays;
}

std::string checkpoint_config_path(const std::string& pwts_path) {
  if (pwts_path.size() > 5 && pwts_path.substr(pwts_path.size() - 5) == ".pwts")
    return pwts_path.substr(0, pwts_path.size() - 5) + ".netcfg";
  return pwts_path + ".netcfg";
}

std::string network_config_to_text(const snn::NetworkConfig& c) {
  std::ostringstream out;
  out << "[network]\n";
  out << "mode=" << snn::timestep_mode_name(c.mode) << "\n";
  out << "bins=" << c.bins << "\n";
  out << "encoder_blocks=" << c.encoder_blocks << "\n";
  out << "base_channels=" << c.base_channels << "\n";
  out << "upsample=" << snn::upsample_mode_name(c.upsample) << "\n";
  out << "neuron=" << snn::neuron_kind_name(c.neuron.kind) << "\n";
  out << "threshold=" << format_double(c.neuron.threshold) << "\n";
  out << "reset=" << format_double(c.neuron.reset) << "\n";
  out << "leak=" << format_double(c.neuron.leak) << "\n";
  out << "surrogate_slope=" << format_double(c.neuron.surrogate_slope) << "\n";
  out << "per_timestep_norm_stats=" << (c.per_timestep_norm_stats ? 1 : 0) << "\n";
  out << "normalize_input=" << (c.normalize_input ? 1 : 0) << "\n";
  out << "norm_epsilon=" << format_double(c.norm_epsilon) << "\n";
  out << "norm_momentum=" << format_double(c.norm_momentum) << "\n";
  return out.str();
}

snn::NetworkConfig network_config_from_text(const std::string& text) {
  const ConfigFile cfg = ConfigFile::parse_string(text);
  const ConfigSection* section = cfg.find("network");
  if (!section) throw std::runtime_error("network config: missing [network] section");
  snn::NetworkConfig c;
  auto get = [&](const char* key) { return section->get(key); };
  if (auto v = get("mode")) c.mode = snn::timestep_mode_from_name(*v);
  if (auto v = get("bins")) c.bins = static_cast<int>(parse_long(*v, "bins"));
  if (auto v = get("encoder_blocks")) c.encoder_blocks = static_cast<int>(parse_long(*v, "encoder_blocks"));
  if (auto v = get("base_channels")) c.base_channels = static_cast<int>(parse_long(*v, "base_channels"));
  if (auto v = get("upsample")) c.upsample = snn::upsample_mode_from_name(*v);
  if (auto v = get("neuron")) c.neuron.kind = snn::neuron_kind_from_name(*v);
  if (auto v = get("threshold")) c.neuron.threshold = static_cast<float>(parse_double(*v, "threshold"));
  if (auto v = get("reset")) c.neuron.reset = static_cast<float>(parse_double(*v, "reset"));
  if (auto v = get("leak")) c.neuron.leak = static_cast<float>(parse_double(*v, "leak"));
  if (auto v = get("surrogate_slope"))
    c.neuron.surrogate_slope = static_cast<float>(parse_double(*v, "surrogate_slope"));
  if (auto v = get("per_timestep_norm_stats")) c.per_timestep_norm_stats = parse_bool(*v, "per_timestep_norm_stats");
  if (auto v = get("normalize_input")) c.normalize_input = parse_bool(*v, "normalize_input");
  if (auto v = get("norm_epsilon")) c.norm_epsilon = static_cast<float>(parse_double(*v, "norm_epsilon"));
  if (auto v = get("norm_momentum")) c.norm_momentum = static_cast<float>(parse_double(*v, "norm_momentum"));
  c.validate();
  return c;
}

void save_checkpoint(const std::string& pwts_path, snn::SpikingUnet& net) {
  std::vector<NamedArray> arrays;
  for (const auto& view : net.state_views()) {
    NamedArray a;
    a.name = view.name;
    a.shape = view.shape;
    long numel = 1;
    for (int e : view.shape) numel *= e;
    a.values.assign(view.data, view.data + numel);
    arrays.push_back(std::move(a));
  }
  // both files land via rename so an interrupted run keeps the previous pair
  const std::string tmp = pwts_path + ".tmp";
  write_pwts(tmp, arrays);
  if (std::rename(tmp.c_str(), pwts_path.c_str()) != 0)
    throw std::runtime_error("cannot move checkpoint into place: " + pwts_path);
  const std::string cfg_path = checkpoint_config_path(pwts_path);
  write_text_file(cfg_path + ".tmp", network_config_to_text(net.config()));
  if (std::rename((cfg_path + ".tmp").c_str(), cfg_path.c_str()) != 0)
    throw std::runtime_error("cannot move checkpoint config into place: " + cfg_path);
}

snn::SpikingUnet load_checkpoint(const std::string& pwts_path) {
  const snn::NetworkConfig config =
      network_config_from_text(read_text_file(checkpoint_config_path(pwts_path)));
  snn::SpikingUnet net(config, /*seed=*/0);
  auto arrays = read_pwts(pwts_path);
  auto views = net.state_views();
  if (arrays.size() != views.size())
    throw std::runtime_error("checkpoint schema mismatch: " + std::to_string(arrays.size()) +
                             " arrays for " + std::to_string(views.size()) + " network tensors");
  for (auto& view : views) {
    const NamedArray* found = nullptr;
    for (const auto& a : arrays) {
      if (a.name == view.name) {
        found = &a;
        break;
      }
    }
    if (!found) throw std::runtime_error("checkpoint schema mismatch: missing tensor " + view.name);
    if (found->shape != view.shape)
      throw std::runtime_error("checkpoint schema mismatch: shape of " + view.name);
    std::copy(found->values.begin(), found->values.end(), view.data);
  }
  return net;
}

std::optional<std::string> ConfigSection::get(const std::string& key) const {
  for (auto it = entries.rbegin(); it != entries.rend(); ++it) {
    if (it->first == key) return it->second;
  }
  return std::nullopt;
}

ConfigFile ConfigFile::parse_string(const std::string& text) {
  ConfigFile cfg;
  ConfigSection current;
  current.name = "";
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw std::runtime_error("config line " + std::to_string(lineno) + ": unterminated section");
      if (!current.name.empty() || !current.entries.empty()) cfg.sections.push_back(current);
      current = ConfigSection{};
      current.name = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("config line " + std::to_string(lineno) + ": expected key=value");
    current.entries.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  if (!current.name.empty() || !current.entries.empty()) cfg.sections.push_back(current);
  return cfg;
}

ConfigFile ConfigFile::parse_file(const std::string& path) {
  return parse_string(read_text_file(path));
}

const ConfigSection* ConfigFile::find(const std::string& name) const {
  for (const auto& s : sections) {
    if (s.name == name) return &s;
  }
  return nullptr;
}

std::optional<std::string> ConfigFile::get(const std::string& section,
                                           const std::string& key) const {
  const ConfigSection* s = find(section);
  return s ? s->get(key) : std::nullopt;
}

double parse_double(const std::string& value, const std::string& what) {
  try {
    size_t pos = 0;
    const double v = std::stod(value, &pos);
    if (pos != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw std::runtime_error("cannot parse " + what + ": '" + value + "'");
  }
}

long parse_long(const std::string& value, const std::string& what) {
  try {
    size_t pos = 0;
    const long v = std::stol(value, &pos);
    if (pos != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw std::runtime_error("cannot parse " + what + ": '" + value + "'");
  }
}

bool parse_bool(const std::string& value, const std::string& what) {
  if (value == "1" || value == "true" || value == "on" || value == "yes") return true;
  if (value == "0" || value == "false" || value == "off" || value == "no") return false;
  throw std::runtime_error("cannot parse " + what + ": '" + value + "'");
}

void write_manifest(const std::string& path,
                    const std::vector<std::pair<std::string, std::string>>& entries) {
  std::ostringstream out;
  for (const auto& [k, v] : entries) out << k << "=" << v << "\n";
  const std::string tmp = path + ".tmp";
  write_text_file(tmp, out.str());
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw std::runtime_error("cannot move manifest into place: " + path);
}

void write_history_csv(const std::string& path, const std::vector<train::HistoryRow>& history) {
  std::ostringstream out;
  out << "epoch,loss,mae,ae11.25,ae22.5,ae30\n";
  for (const auto& row : history) {
    out << row.epoch << "," << format_double(row.loss) << ",";
    if (row.evaluated) {
      out << format_double(row.mae_deg) << "," << format_double(row.ae1125) << ","
          << format_double(row.ae225) << "," << format_double(row.ae30);
    } else {
      out << ",,,";
    }
    out << "\n";
  }
  write_text_file(path, out.str());
}

void write_eval_csv(const std::string& path, const train::EvalReport& report) {
  std::ostringstream out;
  out << "scene,mae,ae11.25,ae22.5,ae30,pixels\n";
  for (const auto& row : report.per_sample) {
    out << row.name << "," << format_double(row.mae_deg) << "," << format_double(row.ae1125)
        << "," << format_double(row.ae225) << "," << format_double(row.ae30) << "," << row.pixels
        << "\n";
  }
  out << "aggregate," << format_double(report.aggregate.mae_deg) << ","
      << format_double(report.aggregate.ae1125) << "," << format_double(report.aggregate.ae225)
      << "," << format_double(report.aggregate.ae30) << "," << report.aggregate.pixels << "\n";
  write_text_file(path, out.str());
}

void write_energy_csv(const std::string& path, const EnergyReport& report,
                      const EnergyReport* reference) {
  std::ostringstream out;
  out << "layer,name,K,C_syn,T,rate,spikes,op_ac\n";
  for (const auto& t : report.traces) {
    const double rate = mean_spiking_rate(t);
    const double op_ac = t.spiking ? static_cast<double>(t.neuron_count) * t.fan_in * rate *
                                         static_cast<double>(t.spike_counts.size())
                                   : 0.0;
    out << t.layer_id << "," << t.name << "," << t.neuron_count << "," << t.fan_in << ","
        << t.spike_counts.size() << "," << format_double(rate) << ","
        << (t.spiking ? "yes" : "no") << "," << format_double(op_ac) << "\n";
  }
  out << "summary,op_mac," << format_double(report.op_mac) << "\n";
  out << "summary,op_ac," << format_double(report.op_ac) << "\n";
  out << "summary,energy_joules," << format_double(report.energy_joules) << "\n";
  out << "summary,average_rate," << format_double(report.average_rate) << "\n";
  if (reference)
    out << "summary,benefit_vs_ann," << format_double(report.benefit_vs(*reference)) << "\n";
  write_text_file(path, out.str());
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << text;
  out.flush();
  if (!out) throw std::runtime_error("write failed: " + path);
}

}  // namespace esfp::io

#pragma once

#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "esfp/image.hpp"

namespace esfp {

/// Asynchronous brightness-change record.
struct Event {
  uint64_t t_us = 0;
  uint16_t x = 0;
  uint16_t y = 0;
  int8_t polarity = 1;  // -1 or +1
};

/// Time-sorted event sequence from one sensor. The time window is derived
/// from the events themselves: t0 is the first timestamp, the duration spans
/// to the last one.
class EventStream {
 public:
  EventStream() = default;
  EventStream(int width, int height, std::vector<Event> events);

  int width() const { return width_; }
  int height() const { return height_; }
  const std::vector<Event>& events() const { return events_; }
  size_t size() const { return events_.size(); }
  bool empty() const { return events_.empty(); }

  uint64_t t0_us() const { return events_.empty() ? 0 : events_.front().t_us; }
  uint64_t duration_us() const {
    return events_.empty() ? 0 : events_.back().t_us - events_.front().t_us;
  }

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<Event> events_;
};

enum class SceneKind { kPlane, kSphereCap, kRamp, kComposite };

/// Analytic scene with known per-pixel normal angles and unpolarized
/// radiance. Background pixels of partial scenes carry (0,0,1) normals and a
/// cleared validity flag unless the scene marks them as real surface.
struct Scene {
  SceneKind kind = SceneKind::kPlane;
  int width = 0;
  int height = 0;
  double refractive_index = 1.5;
  std::vector<double> azimuth;      // radians, [0, 2pi)
  std::vector<double> zenith;       // radians, [0, pi/2]
  std::vector<double> unpolarized;  // radiance, > 0
  std::vector<uint8_t> valid;

  static Scene plane(int width, int height, double azimuth, double zenith, double intensity,
                     double refractive_index = 1.5);
  static Scene sphere_cap(int width, int height, double center_x, double center_y,
                          double pixel_radius, double max_zenith, double intensity,
                          double refractive_index = 1.5, bool background_valid = false);
  static Scene ramp(int width, int height, double azimuth, double zenith_min, double zenith_max,
                    double intensity, double refractive_index = 1.5);
  /// Sphere cap over a tilted plane; every pixel is valid surface.
  static Scene composite(int width, int height, double center_x, double center_y,
                         double pixel_radius, double cap_max_zenith, double plane_azimuth,
                         double plane_zenith, double intensity, double refractive_index = 1.5);

  long pixel_count() const { return static_cast<long>(width) * height; }
  NormalMap ground_truth() const;
  void validate() const;
};

/// Rotating-polarizer event camera settings. Angles are polarizer angles;
/// time maps through the angular speed.
struct SimulatorConfig {
  double contrast_threshold = 0.05;
  double polarizer_speed = std::numbers::pi / 1.0e5;   // radians per microsecond
  double total_rotation = std::numbers::pi;            // radians
  double sampling_step = std::numbers::pi / 180.0;     // radians
  double threshold_jitter = 0.0;           // stddev of per-crossing jitter, log units
  uint64_t noise_seed = 0;

  void validate() const;
};

struct SimulationResult {
  EventStream stream;
  NormalMap ground_truth;
  Image intensity0;  // polarizer angle 0
};

/// Degree of linear polarization of diffuse reflection for zenith angle
/// `zenith` and refractive index n.
double diffuse_dolp(double zenith, double refractive_index);

/// Observed radiance of one scene pixel behind a linear polarizer at
/// `polarizer_angle`: I_un/2 * (1 + rho * cos(2*angle - 2*azimuth)).
double polarized_intensity(const Scene& scene, int x, int y, double polarizer_angle);

/// Sweeps the polarizer in `sampling_step` increments, tracks per-pixel log
/// intensity and emits an event whenever it moves a full contrast threshold
/// away from the last crossing level, timestamped by linear interpolation
/// within the step. Events are merged with a stable (t, y, x) order.
SimulationResult simulate_events(const Scene& scene, const SimulatorConfig& config);

}  // namespace esfp

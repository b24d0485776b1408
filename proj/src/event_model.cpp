#include "esfp/event.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

namespace esfp {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

double wrap_azimuth(double a) {
  a = std::fmod(a, kTwoPi);
  if (a < 0) a += kTwoPi;
  return a;
}

}  // namespace

std::array<double, 3> normal_from_angles(double azimuth, double zenith) {
  if (zenith < 0.0 || zenith > std::numbers::pi / 2.0 + 1e-12)
    throw std::invalid_argument("normal_from_angles: zenith must lie in [0, pi/2]");
  return {std::sin(zenith) * std::cos(azimuth), std::sin(zenith) * std::sin(azimuth),
          std::cos(zenith)};
}

EventStream::EventStream(int width, int height, std::vector<Event> events)
    : width_(width), height_(height), events_(std::move(events)) {
  if (width <= 0 || height <= 0) throw std::invalid_argument("event stream extents must be positive");
  uint64_t prev_t = 0;
  for (size_t i = 0; i < events_.size(); ++i) {
    const Event& e = events_[i];
    if (e.polarity != 1 && e.polarity != -1)
      throw std::invalid_argument("event polarity must be -1 or +1");
    if (e.x >= width || e.y >= height) throw std::invalid_argument("event outside sensor bounds");
    if (i > 0 && e.t_us < prev_t) throw std::invalid_argument("events must be time-sorted");
    prev_t = e.t_us;
  }
}

void Scene::validate() const {
  if (width <= 0 || height <= 0) throw std::invalid_argument("scene extents must be positive");
  const long n = pixel_count();
  if (static_cast<long>(azimuth.size()) != n || static_cast<long>(zenith.size()) != n ||
      static_cast<long>(unpolarized.size()) != n || static_cast<long>(valid.size()) != n)
    throw std::invalid_argument("scene buffers must cover every pixel");
  for (long i = 0; i < n; ++i) {
    if (zenith[i] < 0.0 || zenith[i] > std::numbers::pi / 2.0 + 1e-12)
      throw std::invalid_argument("scene zenith out of [0, pi/2]");
    if (!(unpolarized[i] > 0.0)) throw std::invalid_argument("scene radiance must be positive");
  }
}

Scene Scene::plane(int width, int height, double azimuth, double zenith, double intensity,
                   double refractive_index) {
  Scene s;
  s.kind = SceneKind::kPlane;
  s.width = width;
  s.height = height;
  s.refractive_index = refractive_index;
  const long n = s.pixel_count();
  s.azimuth.assign(n, wrap_azimuth(azimuth));
  s.zenith.assign(n, zenith);
  s.unpolarized.assign(n, intensity);
  s.valid.assign(n, 1);
  s.validate();
  return s;
}

Scene Scene::sphere_cap(int width, int height, double center_x, double center_y,
                        double pixel_radius, double max_zenith, double intensity,
                        double refractive_index, bool background_valid) {
  if (!(pixel_radius > 0.0) || !(max_zenith > 0.0) || max_zenith > std::numbers::pi / 2.0)
    throw std::invalid_argument("sphere cap: bad radius or zenith extent");
  Scene s;
  s.kind = SceneKind::kSphereCap;
  s.width = width;
  s.height = height;
  s.refractive_index = refractive_index;
  const long n = static_cast<long>(width) * height;
  s.azimuth.assign(n, 0.0);
  s.zenith.assign(n, 0.0);
  s.unpolarized.assign(n, intensity);
  s.valid.assign(n, background_valid ? 1 : 0);
  // orthographic sphere: sin(zenith) grows linearly with image-plane radius
  const double sphere_radius = pixel_radius / std::sin(max_zenith);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const double dx = x + 0.5 - center_x;
      const double dy = y + 0.5 - center_y;
      const double d = std::sqrt(dx * dx + dy * dy);
      if (d > pixel_radius) continue;
      const long i = static_cast<long>(y) * width + x;
      s.zenith[i] = std::asin(std::min(1.0, d / sphere_radius));
      s.azimuth[i] = d > 1e-12 ? wrap_azimuth(std::atan2(dy, dx)) : 0.0;
      s.valid[i] = 1;
    }
  }
  s.validate();
  return s;
}

Scene Scene::ramp(int width, int height, double azimuth, double zenith_min, double zenith_max,
                  double intensity, double refractive_index) {
  if (zenith_min > zenith_max) throw std::invalid_argument("ramp: zenith_min > zenith_max");
  Scene s;
  s.kind = SceneKind::kRamp;
  s.width = width;
  s.height = height;
  s.refractive_index = refractive_index;
  const long n = s.pixel_count();
  s.azimuth.assign(n, wrap_azimuth(azimuth));
  s.zenith.assign(n, 0.0);
  s.unpolarized.assign(n, intensity);
  s.valid.assign(n, 1);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const double f = width > 1 ? static_cast<double>(x) / (width - 1) : 0.0;
      s.zenith[static_cast<long>(y) * width + x] = zenith_min + f * (zenith_max - zenith_min);
    }
  }
  s.validate();
  return s;
}

Scene Scene::composite(int width, int height, double center_x, double center_y,
                       double pixel_radius, double cap_max_zenith, double plane_azimuth,
                       double plane_zenith, double intensity, double refractive_index) {
  Scene s = Scene::sphere_cap(width, height, center_x, center_y, pixel_radius, cap_max_zenith,
                              intensity, refractive_index, true);
  s.kind = SceneKind::kComposite;
  const double pa = wrap_azimuth(plane_azimuth);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const double dx = x + 0.5 - center_x;
      const double dy = y + 0.5 - center_y;
      if (std::sqrt(dx * dx + dy * dy) <= pixel_radius) continue;
      const long i = static_cast<long>(y) * width + x;
      s.azimuth[i] = pa;
      s.zenith[i] = plane_zenith;
    }
  }
  s.validate();
  return s;
}

NormalMap Scene::ground_truth() const {
  NormalMap map(width, height);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const long i = static_cast<long>(y) * width + x;
      const auto n = normal_from_angles(azimuth[i], zenith[i]);
      map.set(x, y, static_cast<float>(n[0]), static_cast<float>(n[1]), static_cast<float>(n[2]));
      map.valid[i] = valid[i];
    }
  }
  return map;
}

void SimulatorConfig::validate() const {
  if (!(contrast_threshold > 0.0)) throw std::invalid_argument("simulator: contrast threshold must be positive");
  if (!(polarizer_speed > 0.0)) throw std::invalid_argument("simulator: polarizer speed must be positive");
  if (!(sampling_step > 0.0) || sampling_step > total_rotation + 1e-12)
    throw std::invalid_argument("simulator: sampling step must be positive and at most the total rotation");
  if (threshold_jitter < 0.0) throw std::invalid_argument("simulator: jitter must be non-negative");
}

double diffuse_dolp(double zenith, double refractive_index) {
  const double n = refractive_index;
  const double s = std::sin(zenith);
  const double s2 = s * s;
  const double a = n - 1.0 / n;
  const double b = n + 1.0 / n;
  const double num = a * a * s2;
  const double den = 2.0 + 2.0 * n * n - b * b * s2 +
                     4.0 * std::cos(zenith) * std::sqrt(std::max(0.0, n * n - s2));
  return den > 0.0 ? num / den : 0.0;
}

double polarized_intensity(const Scene& scene, int x, int y, double polarizer_angle) {
  if (x < 0 || x >= scene.width || y < 0 || y >= scene.height)
    throw std::invalid_argument("polarized_intensity: pixel outside scene");
  const long i = static_cast<long>(y) * scene.width + x;
  const double rho = diffuse_dolp(scene.zenith[i], scene.refractive_index);
  return scene.unpolarized[i] / 2.0 *
         (1.0 + rho * std::cos(2.0 * polarizer_angle - 2.0 * scene.azimuth[i]));
}

SimulationResult simulate_events(const Scene& scene, const SimulatorConfig& config) {
  scene.validate();
  config.validate();

  const int width = scene.width, height = scene.height;
  const int steps = static_cast<int>(std::ceil(config.total_rotation / config.sampling_step - 1e-9));

  std::vector<std::vector<Event>> per_row(static_cast<size_t>(height));
  bool failed = false;
  std::string failure;

#pragma omp parallel for schedule(static)
  for (int y = 0; y < height; ++y) {
    std::vector<Event>& row_events = per_row[static_cast<size_t>(y)];
    for (int x = 0; x < width; ++x) {
      const long pix = static_cast<long>(y) * width + x;
      const double rho = diffuse_dolp(scene.zenith[pix], scene.refractive_index);
      const double half_i = scene.unpolarized[pix] / 2.0;
      const double phase = 2.0 * scene.azimuth[pix];
      auto intensity_at = [&](double angle) { return half_i * (1.0 + rho * std::cos(2.0 * angle - phase)); };

      // per-pixel generator: independent of the parallel schedule
      std::mt19937_64 rng(config.noise_seed * 0x9e3779b97f4a7c15ULL + pix + 1);
      std::normal_distribution<double> jitter(0.0, config.threshold_jitter);

      const double i0 = intensity_at(0.0);
      if (!(i0 > 0.0)) {
#pragma omp critical
        {
          failed = true;
          failure = "non-positive intensity at pixel (" + std::to_string(x) + "," + std::to_string(y) + ")";
        }
        continue;
      }
      double log_prev = std::log(i0);
      double ref = log_prev;
      double t_prev = 0.0;
      for (int k = 1; k <= steps; ++k) {
        const double angle = std::min(k * config.sampling_step, config.total_rotation);
        const double t_now = angle / config.polarizer_speed;
        const double inten = intensity_at(angle);
        if (!(inten > 0.0)) {
#pragma omp critical
          {
            failed = true;
            failure = "non-positive intensity at pixel (" + std::to_string(x) + "," + std::to_string(y) + ")";
          }
          break;
        }
        const double log_now = std::log(inten);
        if (log_now != log_prev) {
          const double pol = log_now > log_prev ? 1.0 : -1.0;
          while (true) {
            double c = config.contrast_threshold;
            if (config.threshold_jitter > 0.0) c = std::max(0.01 * c, c + jitter(rng));
            const double cross = ref + pol * c;
            const bool reached = pol > 0 ? cross <= log_now : cross >= log_now;
            if (!reached) break;
            const double frac = (cross - log_prev) / (log_now - log_prev);
            const double t_cross = t_prev + frac * (t_now - t_prev);
            Event e;
            e.t_us = static_cast<uint64_t>(std::llround(std::max(0.0, t_cross)));
            e.x = static_cast<uint16_t>(x);
            e.y = static_cast<uint16_t>(y);
            e.polarity = pol > 0 ? int8_t(1) : int8_t(-1);
            row_events.push_back(e);
            ref = cross;
          }
        }
        log_prev = log_now;
        t_prev = t_now;
      }
    }
  }
  if (failed) throw std::runtime_error("simulate_events: " + failure);

  std::vector<Event> all;
  size_t total = 0;
  for (const auto& row : per_row) total += row.size();
  all.reserve(total);
  for (auto& row : per_row) all.insert(all.end(), row.begin(), row.end());
  std::stable_sort(all.begin(), all.end(), [](const Event& a, const Event& b) {
    if (a.t_us != b.t_us) return a.t_us < b.t_us;
    if (a.y != b.y) return a.y < b.y;
    return a.x < b.x;
  });

  SimulationResult result;
  result.stream = EventStream(width, height, std::move(all));
  result.ground_truth = scene.ground_truth();
  result.intensity0 = Image(width, height);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      result.intensity0.at(x, y) = static_cast<float>(polarized_intensity(scene, x, y, 0.0));
  return result;
}

}  // namespace esfp

#include "doctest.h"

#include <cmath>
#include <map>
#include <numbers>
#include <random>

#include "esfp/event.hpp"
#include "test_util.hpp"

using namespace esfp;
using namespace esfp::testutil;

namespace {

constexpr double kPi = std::numbers::pi;

/// Fine-step reference: samples the analytic log intensity directly (no
/// interpolation) and counts threshold crossings per pixel.
std::vector<long> reference_event_counts(const Scene& scene, const SimulatorConfig& cfg,
                                         int refine) {
  std::vector<long> counts(static_cast<size_t>(scene.pixel_count()), 0);
  const double step = cfg.sampling_step / refine;
  const int steps = static_cast<int>(std::ceil(cfg.total_rotation / step - 1e-9));
  for (int y = 0; y < scene.height; ++y) {
    for (int x = 0; x < scene.width; ++x) {
      const long pix = static_cast<long>(y) * scene.width + x;
      double ref = std::log(polarized_intensity(scene, x, y, 0.0));
      double prev = ref;
      for (int k = 1; k <= steps; ++k) {
        const double angle = std::min(k * step, cfg.total_rotation);
        const double now = std::log(polarized_intensity(scene, x, y, angle));
        const double pol = now > prev ? 1.0 : -1.0;
        while (true) {
          const double cross = ref + pol * cfg.contrast_threshold;
          const bool reached = pol > 0 ? cross <= now : cross >= now;
          if (!reached) break;
          counts[pix] += 1;
          ref = cross;
        }
        prev = now;
      }
    }
  }
  return counts;
}

std::vector<long> per_pixel_counts(const EventStream& stream) {
  std::vector<long> counts(static_cast<size_t>(stream.width()) * stream.height(), 0);
  for (const Event& e : stream.events())
    counts[static_cast<size_t>(e.y) * stream.width() + e.x] += 1;
  return counts;
}

}  // namespace

TEST_CASE("normal_from_angles trivial orientations") {
  const auto up = normal_from_angles(1.234, 0.0);
  CHECK(up[0] == doctest::Approx(0.0));
  CHECK(up[1] == doctest::Approx(0.0));
  CHECK(up[2] == doctest::Approx(1.0));

  const auto equator = normal_from_angles(0.0, kPi / 2);
  CHECK(equator[0] == doctest::Approx(1.0));
  CHECK(equator[1] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(std::abs(equator[2]) < 1e-12);
}

TEST_CASE("normal_from_angles matches the scalar formula") {
  const double a = kPi / 4, t = kPi / 3;
  const auto n = normal_from_angles(a, t);
  CHECK(n[0] == doctest::Approx(std::sin(t) * std::cos(a)).epsilon(1e-12));
  CHECK(n[1] == doctest::Approx(std::sin(t) * std::sin(a)).epsilon(1e-12));
  CHECK(n[2] == doctest::Approx(std::cos(t)).epsilon(1e-12));
}

TEST_CASE("normal_from_angles output has unit norm over random angles") {
  std::mt19937_64 rng(41);
  for (int i = 0; i < 1000; ++i) {
    const double a = uniform(rng, 0, 2 * kPi);
    const double t = uniform(rng, 0, kPi / 2);
    const auto n = normal_from_angles(a, t);
    const double norm = std::sqrt(n[0] * n[0] + n[1] * n[1] + n[2] * n[2]);
    CHECK(std::abs(norm - 1.0) <= 1e-6);
  }
}

TEST_CASE("normal_from_angles rejects out-of-range zenith") {
  CHECK_THROWS_AS(normal_from_angles(0.0, -0.1), std::invalid_argument);
  CHECK_THROWS_AS(normal_from_angles(0.0, kPi / 2 + 0.1), std::invalid_argument);
}

TEST_CASE("polarized intensity of an unpolarized pixel is constant") {
  // zenith 0 gives zero degree of polarization
  Scene s = Scene::plane(4, 4, 0.7, 0.0, 2.0);
  for (double angle : {0.0, 0.4, 1.1, 2.9}) {
    CHECK(polarized_intensity(s, 1, 2, angle) == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("polarized intensity is pi-periodic in the polarizer angle") {
  Scene s = Scene::plane(2, 2, 0.9, 0.8, 1.3);
  for (double angle : {0.0, 0.3, 1.0, 2.2}) {
    CHECK(polarized_intensity(s, 0, 0, angle) ==
          doctest::Approx(polarized_intensity(s, 0, 0, angle + kPi)).epsilon(1e-12));
  }
}

TEST_CASE("polarized intensity matches the scalar oracle on one pixel") {
  const double azimuth = 1.1, zenith = 0.9, i_un = 1.7, n = 1.5, angle = 0.35;
  Scene s = Scene::plane(2, 2, azimuth, zenith, i_un, n);

  // independent evaluation of the diffuse model
  const double sin2 = std::sin(zenith) * std::sin(zenith);
  const double num = std::pow(n - 1.0 / n, 2) * sin2;
  const double den = 2.0 + 2.0 * n * n - std::pow(n + 1.0 / n, 2) * sin2 +
                     4.0 * std::cos(zenith) * std::sqrt(n * n - sin2);
  const double rho = num / den;
  const double expected = i_un / 2.0 * (1.0 + rho * std::cos(2 * angle - 2 * azimuth));
  CHECK(polarized_intensity(s, 0, 1, angle) == doctest::Approx(expected).epsilon(1e-12));
  CHECK(rho > 0.0);
  CHECK(rho < 1.0);
}

TEST_CASE("constant-intensity pixels emit no events") {
  Scene s = Scene::plane(6, 6, 0.4, 0.0, 1.0);  // rho = 0 everywhere
  SimulatorConfig cfg;
  const auto result = simulate_events(s, cfg);
  CHECK(result.stream.empty());
}

TEST_CASE("a monotone log ramp of 3.5 thresholds emits exactly 3 positive events") {
  // azimuth pi/2 makes cos(2a - pi) rise monotonically over a quarter sweep
  const double zenith = 1.1;
  Scene s = Scene::plane(1, 1, kPi / 2, zenith, 1.0);
  const double rho = diffuse_dolp(zenith, 1.5);
  const double delta_l = std::log(1 + rho) - std::log(1 - rho);

  SimulatorConfig cfg;
  cfg.total_rotation = kPi / 2;
  cfg.sampling_step = kPi / 360;
  cfg.contrast_threshold = delta_l / 3.5;
  const auto result = simulate_events(s, cfg);
  REQUIRE(result.stream.size() == 3);
  for (const Event& e : result.stream.events()) CHECK(e.polarity == 1);
}

TEST_CASE("sphere-cap event counts match a 10x finer reference within one event") {
  Scene s = Scene::sphere_cap(24, 24, 12.0, 12.0, 9.0, 1.1, 1.0, 1.5, true);
  SimulatorConfig cfg;
  const auto result = simulate_events(s, cfg);
  CHECK(result.stream.size() > 100);  // meaningful coverage
  const auto actual = per_pixel_counts(result.stream);
  const auto expected = reference_event_counts(s, cfg, 10);
  for (size_t i = 0; i < expected.size(); ++i) {
    CHECK(std::abs(actual[i] - expected[i]) <= 1);
  }
}

TEST_CASE("event invariants: sorted stream, contrast-sized log steps, matching signs") {
  Scene s = Scene::composite(16, 16, 8.0, 8.0, 6.0, 1.0, 0.9, 0.4, 1.2);
  SimulatorConfig cfg;
  const auto result = simulate_events(s, cfg);
  REQUIRE(!result.stream.empty());

  uint64_t prev_t = 0;
  for (const Event& e : result.stream.events()) {
    CHECK(e.t_us >= prev_t);
    prev_t = e.t_us;
  }

  // reconstruct log intensity at the event timestamps from the analytic model
  std::map<std::pair<int, int>, double> last_log;
  const double tol = cfg.contrast_threshold / 10.0;
  for (const Event& e : result.stream.events()) {
    const double angle = cfg.polarizer_speed * static_cast<double>(e.t_us);
    const double level = std::log(polarized_intensity(s, e.x, e.y, angle));
    const auto key = std::make_pair(static_cast<int>(e.x), static_cast<int>(e.y));
    auto it = last_log.find(key);
    if (it == last_log.end()) {
      last_log[key] = level;
      continue;
    }
    const double delta = level - it->second;
    CHECK(std::abs(std::abs(delta) - cfg.contrast_threshold) <= tol);
    CHECK((delta > 0 ? 1 : -1) == static_cast<int>(e.polarity));
    it->second = level;
  }
}

TEST_CASE("doubling the contrast threshold never increases event counts") {
  std::mt19937_64 rng(42);
  for (int trial = 0; trial < 3; ++trial) {
    Scene s = Scene::composite(12, 12, uniform(rng, 4, 8), uniform(rng, 4, 8), 4.5,
                               uniform(rng, 0.7, 1.2), uniform(rng, 0.5, 2.0),
                               uniform(rng, 0.2, 0.5), 1.0);
    SimulatorConfig base;
    SimulatorConfig doubled = base;
    doubled.contrast_threshold = 2 * base.contrast_threshold;
    const auto counts_base = per_pixel_counts(simulate_events(s, base).stream);
    const auto counts_doubled = per_pixel_counts(simulate_events(s, doubled).stream);
    for (size_t i = 0; i < counts_base.size(); ++i) CHECK(counts_doubled[i] <= counts_base[i]);
  }
}

TEST_CASE("simulation is deterministic and independent of thread schedule") {
  Scene s = Scene::sphere_cap(20, 20, 10.0, 9.0, 7.0, 1.0, 1.0);
  SimulatorConfig cfg;
  cfg.threshold_jitter = 0.005;
  cfg.noise_seed = 7;
  const auto a = simulate_events(s, cfg);
  const auto b = simulate_events(s, cfg);
  REQUIRE(a.stream.size() == b.stream.size());
  for (size_t i = 0; i < a.stream.size(); ++i) {
    CHECK(a.stream.events()[i].t_us == b.stream.events()[i].t_us);
    CHECK(a.stream.events()[i].x == b.stream.events()[i].x);
    CHECK(a.stream.events()[i].y == b.stream.events()[i].y);
    CHECK(a.stream.events()[i].polarity == b.stream.events()[i].polarity);
  }
}

TEST_CASE("simulator validates its configuration") {
  Scene s = Scene::plane(2, 2, 0.1, 0.3, 1.0);
  SimulatorConfig bad;
  bad.contrast_threshold = 0.0;
  CHECK_THROWS_AS(simulate_events(s, bad), std::invalid_argument);
  SimulatorConfig bad_step;
  bad_step.sampling_step = bad_step.total_rotation * 2;
  CHECK_THROWS_AS(simulate_events(s, bad_step), std::invalid_argument);
}

TEST_CASE("scene constructors enforce invariants") {
  CHECK_THROWS_AS(Scene::plane(4, 4, 0.0, 2.0, 1.0), std::invalid_argument);   // zenith > pi/2
  CHECK_THROWS_AS(Scene::plane(4, 4, 0.0, 0.5, -1.0), std::invalid_argument);  // radiance <= 0
  CHECK_THROWS_AS(Scene::sphere_cap(4, 4, 2, 2, 0.0, 1.0, 1.0), std::invalid_argument);
}

TEST_CASE("event stream construction validates events") {
  std::vector<Event> bad = {{100, 5, 0, 1}};
  CHECK_THROWS_AS(EventStream(4, 4, bad), std::invalid_argument);  // x out of bounds
  std::vector<Event> unsorted = {{100, 0, 0, 1}, {50, 0, 0, 1}};
  CHECK_THROWS_AS(EventStream(4, 4, unsorted), std::invalid_argument);
  std::vector<Event> badpol = {{100, 0, 0, 2}};
  CHECK_THROWS_AS(EventStream(4, 4, badpol), std::invalid_argument);
}

TEST_CASE("sphere cap ground truth marks background invalid unless asked") {
  Scene masked = Scene::sphere_cap(16, 16, 8.0, 8.0, 5.0, 1.0, 1.0);
  const NormalMap gt = masked.ground_truth();
  bool saw_invalid = false, saw_valid = false;
  for (uint8_t v : gt.valid) (v ? saw_valid : saw_invalid) = true;
  CHECK(saw_valid);
  CHECK(saw_invalid);

  Scene full = Scene::sphere_cap(16, 16, 8.0, 8.0, 5.0, 1.0, 1.0, 1.5, true);
  for (uint8_t v : full.ground_truth().valid) CHECK(v == 1);
}

#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace esfp {

/// Single-channel float raster, row-major.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(int w, int h, float fill = 0.0f)
      : width(w), height(h), pixels(static_cast<size_t>(w) * h, fill) {
    if (w <= 0 || h <= 0) throw std::invalid_argument("image extents must be positive");
  }
  float& at(int x, int y) { return pixels[static_cast<size_t>(y) * width + x]; }
  float at(int x, int y) const { return pixels[static_cast<size_t>(y) * width + x]; }
};

/// Per-pixel surface normals stored as three channel planes (nx, ny, nz),
/// plus a validity mask. Invalid pixels serialize as zero triplets.
struct NormalMap {
  int width = 0;
  int height = 0;
  std::vector<float> values;  // 3 planes of H*W
  std::vector<uint8_t> valid;

  NormalMap() = default;
  NormalMap(int w, int h)
      : width(w),
        height(h),
        values(3 * static_cast<size_t>(w) * h, 0.0f),
        valid(static_cast<size_t>(w) * h, 1) {
    if (w <= 0 || h <= 0) throw std::invalid_argument("normal map extents must be positive");
  }

  long pixel_count() const { return static_cast<long>(width) * height; }
  float& channel(int c, int x, int y) {
    return values[static_cast<size_t>(c) * pixel_count() + static_cast<size_t>(y) * width + x];
  }
  float channel(int c, int x, int y) const {
    return values[static_cast<size_t>(c) * pixel_count() + static_cast<size_t>(y) * width + x];
  }
  void set(int x, int y, float nx, float ny, float nz) {
    channel(0, x, y) = nx;
    channel(1, x, y) = ny;
    channel(2, x, y) = nz;
  }
};

/// N = (sin t cos a, sin t sin a, cos t); zenith outside [0, pi/2] is a
/// domain error.
std::array<double, 3> normal_from_angles(double azimuth, double zenith);

}  // namespace esfp

#pragma once

#include <cstdint>
#include <optional>

#include "esfp/event.hpp"
#include "esfp/tensor.hpp"

namespace esfp {

/// Dense (bins, H, W) float grid, bin-major then row-major.
struct Grid3 {
  int bins = 0;
  int height = 0;
  int width = 0;
  std::vector<float> values;

  Grid3() = default;
  Grid3(int b, int h, int w)
      : bins(b), height(h), width(w), values(static_cast<size_t>(b) * h * w, 0.0f) {
    if (b <= 0 || h <= 0 || w <= 0) throw std::invalid_argument("grid extents must be positive");
  }
  long plane() const { return static_cast<long>(height) * width; }
  float& at(int b, int y, int x) { return values[static_cast<size_t>(b) * plane() + static_cast<size_t>(y) * width + x]; }
  float at(int b, int y, int x) const { return values[static_cast<size_t>(b) * plane() + static_cast<size_t>(y) * width + x]; }
};

struct TimeWindow {
  uint64_t t0_us = 0;
  uint64_t duration_us = 0;
};

/// Spatio-temporal event histogram with the bilinear temporal kernel.
struct VoxelGrid {
  Grid3 grid;
  TimeWindow window;
};

/// Cumulative, contrast-scaled voxel grid.
struct Cvgr {
  Grid3 grid;
  float contrast_threshold = 0.0f;
};

/// CVGR plus the polarizer-angle-0 image broadcast over every bin: the
/// network input representation.
struct CvgriTensor {
  Grid3 grid;
  float contrast_threshold = 0.0f;
};

/// Distributes each event's polarity over the two nearest temporal bins.
/// The window defaults to the stream's own [t0, t0+duration]; bins out of
/// range from timestamp rounding are clamped to the edge so no mass is lost.
VoxelGrid build_voxel_grid(const EventStream& stream, int bins,
                           std::optional<TimeWindow> window = std::nullopt);

/// Running prefix sum along the bin axis scaled by the contrast threshold.
Cvgr build_cvgr(const VoxelGrid& grid, float contrast_threshold);

/// Adds the angle-0 intensity image to every temporal bin.
CvgriTensor build_cvgri(const Cvgr& cvgr, const Image& intensity0);

/// Optional per-sample min-max normalization to [0,1]; identity on constant
/// input. Off by default in the pipeline.
CvgriTensor minmax_normalize(const CvgriTensor& input);

ad::Tensor<float> to_tensor(const Grid3& grid);

}  // namespace esfp

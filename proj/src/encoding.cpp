#include "esfp/encoding.hpp"

#include <algorithm>
#include <cmath>

namespace esfp {

VoxelGrid build_voxel_grid(const EventStream& stream, int bins, std::optional<TimeWindow> window) {
  if (bins < 2) throw std::invalid_argument("build_voxel_grid: bin count must be at least 2");
  VoxelGrid out;
  out.grid = Grid3(bins, stream.height(), stream.width());
  out.window = window.value_or(TimeWindow{stream.t0_us(), stream.duration_us()});

  const double scale = out.window.duration_us > 0
                           ? static_cast<double>(bins - 1) / static_cast<double>(out.window.duration_us)
                           : 0.0;
  const long plane = out.grid.plane();
  for (const Event& e : stream.events()) {
    const double t_star = scale * (static_cast<double>(e.t_us) - static_cast<double>(out.window.t0_us));
    const int b0 = static_cast<int>(std::floor(t_star));
    const float w1 = static_cast<float>(t_star - b0);
    const float w0 = 1.0f - w1;
    const long pix = static_cast<long>(e.y) * stream.width() + e.x;
    const float p = static_cast<float>(e.polarity);
    const int c0 = std::clamp(b0, 0, bins - 1);
    const int c1 = std::clamp(b0 + 1, 0, bins - 1);
    out.grid.values[static_cast<size_t>(c0) * plane + pix] += p * w0;
    out.grid.values[static_cast<size_t>(c1) * plane + pix] += p * w1;
  }
  return out;
}

Cvgr build_cvgr(const VoxelGrid& grid, float contrast_threshold) {
  if (!(contrast_threshold > 0.0f))
    throw std::invalid_argument("build_cvgr: contrast threshold must be positive");
  Cvgr out;
  out.contrast_threshold = contrast_threshold;
  out.grid = Grid3(grid.grid.bins, grid.grid.height, grid.grid.width);
  const long plane = grid.grid.plane();
  std::vector<double> acc(static_cast<size_t>(plane), 0.0);
  for (int b = 0; b < grid.grid.bins; ++b) {
    const float* src = grid.grid.values.data() + static_cast<long>(b) * plane;
    float* dst = out.grid.values.data() + static_cast<long>(b) * plane;
    for (long i = 0; i < plane; ++i) {
      acc[i] += static_cast<double>(contrast_threshold) * static_cast<double>(src[i]);
      dst[i] = static_cast<float>(acc[i]);
    }
  }
  return out;
}

CvgriTensor build_cvgri(const Cvgr& cvgr, const Image& intensity0) {
  if (intensity0.width != cvgr.grid.width || intensity0.height != cvgr.grid.height)
    throw std::invalid_argument("build_cvgri: intensity image shape does not match grid");
  CvgriTensor out;
  out.contrast_threshold = cvgr.contrast_threshold;
  out.grid = cvgr.grid;
  const long plane = out.grid.plane();
  for (int b = 0; b < out.grid.bins; ++b) {
    float* dst = out.grid.values.data() + static_cast<long>(b) * plane;
    for (long i = 0; i < plane; ++i) dst[i] += intensity0.pixels[i];
  }
  return out;
}

CvgriTensor minmax_normalize(const CvgriTensor& input) {
  CvgriTensor out = input;
  const auto [lo_it, hi_it] = std::minmax_element(out.grid.values.begin(), out.grid.values.end());
  const float lo = *lo_it, hi = *hi_it;
  if (hi - lo < 1e-12f) return out;
  const float inv = 1.0f / (hi - lo);
  for (float& v : out.grid.values) v = (v - lo) * inv;
  return out;
}

ad::Tensor<float> to_tensor(const Grid3& grid) {
  return ad::Tensor<float>::from_values({grid.bins, grid.height, grid.width}, grid.values);
}

}  // namespace esfp

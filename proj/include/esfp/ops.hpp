#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "esfp/tensor.hpp"

namespace esfp::ad {

enum class UpsampleMode { kNearest, kBilinear };

// Elementwise ops. Shapes must match exactly; no broadcasting beyond the
// scalar-tensor variants below.
template <typename T>
Tensor<T> add(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> scale(Tape<T>* tape, const Tensor<T>& a, T factor);
template <typename T>
Tensor<T> add_scalar(Tape<T>* tape, const Tensor<T>& a, T constant);

/// out = x * s where s is a single-element tensor (e.g. a trainable leak).
template <typename T>
Tensor<T> mul_scalar_tensor(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& s);

template <typename T>
Tensor<T> sigmoid(Tape<T>* tape, const Tensor<T>& x);

/// out = u_prev * (1 - o_prev): the multiplicative hard reset gate.
template <typename T>
Tensor<T> hard_reset_mul(Tape<T>* tape, const Tensor<T>& u_prev, const Tensor<T>& o_prev);

/// Heaviside step on x (fires at x >= 0, output exactly 0 or 1). Backward
/// substitutes the ArcTan surrogate derivative slope/(1+(pi*slope*x)^2).
template <typename T>
Tensor<T> spike(Tape<T>* tape, const Tensor<T>& x, T surrogate_slope);

/// Smooth stand-in used by gradient checks: forward evaluates the ArcTan
/// sigmoid g(slope*x) itself, so its exact derivative equals spike()'s
/// surrogate backward.
template <typename T>
Tensor<T> spike_smooth(Tape<T>* tape, const Tensor<T>& x, T surrogate_slope);

/// g'(x) = 1/(1+(pi x)^2), evaluated elementwise. Plain function, no tape.
template <typename T>
Tensor<T> surrogate_grad(const Tensor<T>& x);

/// 2-D cross-correlation, stride 1, zero padding preserving HxW. Input is
/// (C_in,H,W), weight (C_out,C_in,k,k) with odd k; optional bias (C_out).
template <typename T>
Tensor<T> conv2d(Tape<T>* tape, const Tensor<T>& input, const Tensor<T>& weight,
                 const Tensor<T>* bias = nullptr);

/// 2x2 non-overlapping max pool; H and W must be even. Backward routes the
/// gradient to the argmax cell, first index in row-major order on ties.
template <typename T>
Tensor<T> max_pool2(Tape<T>* tape, const Tensor<T>& input);

/// Doubles H and W. Nearest replicates each pixel 2x2; bilinear uses the
/// align-corners=false convention.
template <typename T>
Tensor<T> upsample2(Tape<T>* tape, const Tensor<T>& input, UpsampleMode mode);

template <typename T>
Tensor<T> concat_channels(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b);

/// Copies channels [c0, c1) out of a (C,H,W) tensor.
template <typename T>
Tensor<T> slice_channels(Tape<T>* tape, const Tensor<T>& x, int c0, int c1);

template <typename T>
Tensor<T> sum_all(Tape<T>* tape, const Tensor<T>& x);

template <typename T>
Tensor<T> mean_all(Tape<T>* tape, const Tensor<T>& x);

/// Running averages for evaluation-mode normalization. In cumulative mode
/// each update weighs in as 1/(n+1), turning the running values into the
/// plain mean of the observed batch statistics (used to re-estimate
/// statistics for a fixed set of weights).
template <typename T>
struct NormRunningStats {
  std::vector<T> mean;
  std::vector<T> var;
  long update_count = 0;
  bool cumulative = false;

  void init(int channels) {
    mean.assign(static_cast<size_t>(channels), T(0));
    var.assign(static_cast<size_t>(channels), T(1));
    update_count = 0;
  }
  bool empty() const { return mean.empty(); }
};

/// Per-channel standardization with affine gain/bias over a sequence of
/// equally shaped (C,H,W) tensors. Statistics are computed jointly over the
/// whole sequence (spatial and, for multi-timestep inputs, temporal extent).
/// In training mode batch statistics are used and running averages updated;
/// in evaluation mode the running averages normalize instead.
template <typename T>
std::vector<Tensor<T>> channel_norm_seq(Tape<T>* tape, const std::vector<Tensor<T>>& xs,
                                        const Tensor<T>& gain, const Tensor<T>& bias, T epsilon,
                                        NormRunningStats<T>* running = nullptr, bool training = true,
                                        T momentum = T(0.1));

/// Single-tensor convenience: batch statistics of this tensor alone.
template <typename T>
Tensor<T> channel_norm(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& gain,
                       const Tensor<T>& bias, T epsilon);

/// Normalizes a (3,H,W) tensor to per-pixel unit vectors. Pixels with norm
/// below `degenerate_eps` output (0,0,1) with zero gradient; their flat pixel
/// indices are appended to `degenerate` when given.
template <typename T>
Tensor<T> unit_normalize3(Tape<T>* tape, const Tensor<T>& x, T degenerate_eps = T(1e-8),
                          std::vector<int>* degenerate = nullptr);

/// Mean over masked pixels of (1 - <pred, gt>) for (3,H,W) inputs. `mask`
/// may be empty (all pixels); throws if no pixel is selected. `gt` is
/// treated as a constant.
template <typename T>
Tensor<T> masked_cosine_loss(Tape<T>* tape, const Tensor<T>& pred_unit, const Tensor<T>& gt,
                             const std::vector<uint8_t>& mask);

}  // namespace esfp::ad

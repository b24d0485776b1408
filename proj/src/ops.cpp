#define EIGEN_DONT_PARALLELIZE
#include "esfp/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numbers>

namespace esfp::ad {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapRM = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using CMapRM = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;

// Output columns are processed in fixed-size blocks so the arithmetic (and
// therefore the result bits) do not depend on the number of threads.
constexpr long kGemmChunk = 1024;

/// C(M,N) = A(M,K) * B(K,N), row-major buffers, optionally accumulating.
template <typename T>
void matmul_rm(const T* a, long m, long k, const T* b, long n, T* c, bool accumulate) {
  CMapRM<T> am(a, m, k, Eigen::OuterStride<>(k));
  const long nchunks = (n + kGemmChunk - 1) / kGemmChunk;
#pragma omp parallel for schedule(static)
  for (long ci = 0; ci < nchunks; ++ci) {
    const long n0 = ci * kGemmChunk;
    const long n1 = std::min(n, n0 + kGemmChunk);
    CMapRM<T> bm(b + n0, k, n1 - n0, Eigen::OuterStride<>(n));
    MapRM<T> cm(c + n0, m, n1 - n0, Eigen::OuterStride<>(n));
    if (accumulate)
      cm.noalias() += am * bm;
    else
      cm.noalias() = am * bm;
  }
}

/// C(M,N) = A(K,M)^T * B(K,N), chunked like matmul_rm.
template <typename T>
void matmul_tn_rm(const T* a, long k, long m, const T* b, long n, T* c, bool accumulate) {
  CMapRM<T> am(a, k, m, Eigen::OuterStride<>(m));
  const long nchunks = (n + kGemmChunk - 1) / kGemmChunk;
#pragma omp parallel for schedule(static)
  for (long ci = 0; ci < nchunks; ++ci) {
    const long n0 = ci * kGemmChunk;
    const long n1 = std::min(n, n0 + kGemmChunk);
    CMapRM<T> bm(b + n0, k, n1 - n0, Eigen::OuterStride<>(n));
    MapRM<T> cm(c + n0, m, n1 - n0, Eigen::OuterStride<>(n));
    if (accumulate)
      cm.noalias() += am.transpose() * bm;
    else
      cm.noalias() = am.transpose() * bm;
  }
}

/// cols(C*k*k, H*W) <- zero-padded sliding windows of x(C,H,W), row-major.
template <typename T>
void im2col(const T* x, int c_in, int h, int w, int k, T* cols) {
  const int pad = k / 2;
  const long hw = static_cast<long>(h) * w;
  long r = 0;
  for (int c = 0; c < c_in; ++c) {
    for (int di = 0; di < k; ++di) {
      for (int dj = 0; dj < k; ++dj, ++r) {
        T* dst = cols + r * hw;
        const int sy = di - pad;
        const int sx = dj - pad;
        const int x0 = std::max(0, -sx);
        const int x1 = std::min(w, w - sx);
        for (int y = 0; y < h; ++y) {
          T* row = dst + static_cast<long>(y) * w;
          const int yy = y + sy;
          if (yy < 0 || yy >= h || x1 <= x0) {
            std::fill(row, row + w, T(0));
            continue;
          }
          const T* src = x + (static_cast<long>(c) * h + yy) * w;
          if (x0 > 0) std::fill(row, row + x0, T(0));
          std::copy(src + x0 + sx, src + x1 + sx, row + x0);
          if (x1 < w) std::fill(row + x1, row + w, T(0));
        }
      }
    }
  }
}

/// Scatter-add of an im2col layout back onto the (C,H,W) gradient buffer.
template <typename T>
void col2im_add(const T* cols, int c_in, int h, int w, int k, T* gx) {
  const int pad = k / 2;
  const long hw = static_cast<long>(h) * w;
  long r = 0;
  for (int c = 0; c < c_in; ++c) {
    for (int di = 0; di < k; ++di) {
      for (int dj = 0; dj < k; ++dj, ++r) {
        const T* src = cols + r * hw;
        const int sy = di - pad;
        const int sx = dj - pad;
        const int x0 = std::max(0, -sx);
        const int x1 = std::min(w, w - sx);
        if (x1 <= x0) continue;
        for (int y = 0; y < h; ++y) {
          const int yy = y + sy;
          if (yy < 0 || yy >= h) continue;
          T* dst = gx + (static_cast<long>(c) * h + yy) * w;
          const T* srow = src + static_cast<long>(y) * w;
          for (int xc = x0; xc < x1; ++xc) dst[xc + sx] += srow[xc];
        }
      }
    }
  }
}

template <typename T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                                " vs " + shape_string(b.shape()));
}

template <typename T>
bool want_grad(Tape<T>* tape, bool any_input_grad) {
  return tape != nullptr && any_input_grad;
}

template <typename T>
T surrogate_derivative(T x, T slope) {
  const T pi = std::numbers::pi_v<T>;
  const T z = pi * slope * x;
  return slope / (T(1) + z * z);
}

}  // namespace

template <typename T>
Tensor<T> add(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape(a, b, "add");
  Tensor<T> out(a.shape());
  const long n = out.numel();
  for (long i = 0; i < n; ++i) out.data()[i] = a.data()[i] + b.data()[i];
  if (want_grad(tape, a.requires_grad() || b.requires_grad())) {
    out.set_requires_grad(true);
    tape->record([a = a, b = b, out]() mutable {
      auto go = out.grad();
      if (a.requires_grad()) {
        auto ga = a.grad();
        for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad();
        for (size_t i = 0; i < go.size(); ++i) gb[i] += go[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> sub(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape(a, b, "sub");
  Tensor<T> out(a.shape());
  const long n = out.numel();
  for (long i = 0; i < n; ++i) out.data()[i] = a.data()[i] - b.data()[i];
  if (want_grad(tape, a.requires_grad() || b.requires_grad())) {
    out.set_requires_grad(true);
    tape->record([a = a, b = b, out]() mutable {
      auto go = out.grad();
      if (a.requires_grad()) {
        auto ga = a.grad();
        for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad();
        for (size_t i = 0; i < go.size(); ++i) gb[i] -= go[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> mul(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape(a, b, "mul");
  Tensor<T> out(a.shape());
  const long n = out.numel();
  for (long i = 0; i < n; ++i) out.data()[i] = a.data()[i] * b.data()[i];
  if (want_grad(tape, a.requires_grad() || b.requires_grad())) {
    out.set_requires_grad(true);
    tape->record([a = a, b = b, out]() mutable {
      auto go = out.grad();
      if (a.requires_grad()) {
        auto ga = a.grad();
        for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * b.data()[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad();
        for (size_t i = 0; i < go.size(); ++i) gb[i] += go[i] * a.data()[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> scale(Tape<T>* tape, const Tensor<T>& a, T factor) {
  Tensor<T> out(a.shape());
  const long n = out.numel();
  for (long i = 0; i < n; ++i) out.data()[i] = a.data()[i] * factor;
  if (want_grad(tape, a.requires_grad())) {
    out.set_requires_grad(true);
    tape->record([a = a, out, factor]() mutable {
      auto go = out.grad();
      auto ga = a.grad();
      for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * factor;
    });
  }
  return out;
}

template <typename T>
Tensor<T> add_scalar(Tape<T>* tape, const Tensor<T>& a, T constant) {
  Tensor<T> out(a.shape());
  const long n = out.numel();
  for (long i = 0; i < n; ++i) out.data()[i] = a.data()[i] + constant;
  if (want_grad(tape, a.requires_grad())) {
    out.set_requires_grad(true);
    tape->record([a = a, out]() mutable {
      auto go = out.grad();
      auto ga = a.grad();
      for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> mul_scalar_tensor(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& s) {
  if (s.numel() != 1) throw std::invalid_argument("mul_scalar_tensor: scale must have one element");
  const T sv = s.data()[0];
  Tensor<T> out(x.shape());
  const long n = out.numel();
  for (long i = 0; i < n; ++i) out.data()[i] = x.data()[i] * sv;
  if (want_grad(tape, x.requires_grad() || s.requires_grad())) {
    out.set_requires_grad(true);
    tape->record([x = x, s = s, out, sv]() mutable {
      auto go = out.grad();
      if (x.requires_grad()) {
        auto gx = x.grad();
        for (size_t i = 0; i < go.size(); ++i) gx[i] += go[i] * sv;
      }
      if (s.requires_grad()) {
        T acc = T(0);
        for (size_t i = 0; i < go.size(); ++i) acc += go[i] * x.data()[i];
        s.grad()[0] += acc;
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> sigmoid(Tape<T>* tape, const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  const long n = out.numel();
  for (long i = 0; i < n; ++i) {
    const T v = x.data()[i];
    out.data()[i] = v >= T(0) ? T(1) / (T(1) + std::exp(-v))
                              : std::exp(v) / (T(1) + std::exp(v));
  }
  if (want_grad(tape, x.requires_grad())) {
    out.set_requires_grad(true);
    tape->record([x = x, out]() mutable {
      auto go = out.grad();
      auto gx = x.grad();
      for (size_t i = 0; i < go.size(); ++i) {
        const T y = out.data()[i];
        gx[i] += go[i] * y * (T(1) - y);
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> hard_reset_mul(Tape<T>* tape, const Tensor<T>& u_prev, const Tensor<T>& o_prev) {
  check_same_shape(u_prev, o_prev, "hard_reset_mul");
  Tensor<T> out(u_prev.shape());
  const long n = out.numel();
  for (long i = 0; i < n; ++i) out.data()[i] = u_prev.data()[i] * (T(1) - o_prev.data()[i]);
  if (want_grad(tape, u_prev.requires_grad() || o_prev.requires_grad())) {
    out.set_requires_grad(true);
    tape->record([u_prev = u_prev, o_prev = o_prev, out]() mutable {
      auto go = out.grad();
      if (u_prev.requires_grad()) {
        auto gu = u_prev.grad();
        for (size_t i = 0; i < go.size(); ++i) gu[i] += go[i] * (T(1) - o_prev.data()[i]);
      }
      if (o_prev.requires_grad()) {
        auto gs = o_prev.grad();
        for (size_t i = 0; i < go.size(); ++i) gs[i] -= go[i] * u_prev.data()[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> spike(Tape<T>* tape, const Tensor<T>& x, T surrogate_slope) {
  Tensor<T> out(x.shape());
  const long n = out.numel();
  for (long i = 0; i < n; ++i) out.data()[i] = x.data()[i] >= T(0) ? T(1) : T(0);
  if (want_grad(tape, x.requires_grad())) {
    out.set_requires_grad(true);
    tape->record([x = x, out, surrogate_slope]() mutable {
      auto go = out.grad();
      auto gx = x.grad();
      for (size_t i = 0; i < go.size(); ++i)
        gx[i] += go[i] * surrogate_derivative(x.data()[i], surrogate_slope);
    });
  }
  return out;
}

template <typename T>
Tensor<T> spike_smooth(Tape<T>* tape, const Tensor<T>& x, T surrogate_slope) {
  const T pi = std::numbers::pi_v<T>;
  Tensor<T> out(x.shape());
  const long n = out.numel();
  for (long i = 0; i < n; ++i)
    out.data()[i] = std::atan(pi * surrogate_slope * x.data()[i]) / pi + T(0.5);
  if (want_grad(tape, x.requires_grad())) {
    out.set_requires_grad(true);
    tape->record([x = x, out, surrogate_slope]() mutable {
      auto go = out.grad();
      auto gx = x.grad();
      for (size_t i = 0; i < go.size(); ++i)
        gx[i] += go[i] * surrogate_derivative(x.data()[i], surrogate_slope);
    });
  }
  return out;
}

template <typename T>
Tensor<T> surrogate_grad(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  const long n = out.numel();
  for (long i = 0; i < n; ++i) out.data()[i] = surrogate_derivative(x.data()[i], T(1));
  return out;
}

template <typename T>
Tensor<T> conv2d(Tape<T>* tape, const Tensor<T>& input, const Tensor<T>& weight,
                 const Tensor<T>* bias) {
  if (input.rank() != 3) throw std::invalid_argument("conv2d: input must be (C,H,W)");
  if (weight.rank() != 4) throw std::invalid_argument("conv2d: weight must be (Cout,Cin,k,k)");
  const int c_in = input.dim(0), h = input.dim(1), w = input.dim(2);
  const int c_out = weight.dim(0), k = weight.dim(2);
  if (weight.dim(1) != c_in)
    throw std::invalid_argument("conv2d: weight expects " + std::to_string(weight.dim(1)) +
                                " input channels, input has " + std::to_string(c_in));
  if (weight.dim(3) != k || k % 2 == 0) throw std::invalid_argument("conv2d: kernel must be square with odd size");
  if (bias && (bias->rank() != 1 || bias->dim(0) != c_out))
    throw std::invalid_argument("conv2d: bias must be (Cout)");

  const long hw = static_cast<long>(h) * w;
  const long kk = static_cast<long>(c_in) * k * k;
  std::vector<T> cols(kk * hw);
  im2col(input.data(), c_in, h, w, k, cols.data());

  Tensor<T> out({c_out, h, w});
  matmul_rm(weight.data(), c_out, kk, cols.data(), hw, out.data(), false);
  if (bias) {
    for (int c = 0; c < c_out; ++c) {
      T* dst = out.data() + static_cast<long>(c) * hw;
      const T bv = bias->data()[c];
      for (long i = 0; i < hw; ++i) dst[i] += bv;
    }
  }

  const bool bias_grad = bias && bias->requires_grad();
  if (want_grad(tape, input.requires_grad() || weight.requires_grad() || bias_grad)) {
    out.set_requires_grad(true);
    Tensor<T> bias_t = bias ? *bias : Tensor<T>();
    tape->record([input = input, weight = weight, bias_t, out, c_in, h, w, k, c_out, hw, kk]() mutable {
      const T* go = out.grad().data();
      if (weight.requires_grad()) {
        std::vector<T> cols(kk * hw);
        im2col(input.data(), c_in, h, w, k, cols.data());
        CMapRM<T> gom(go, c_out, hw, Eigen::OuterStride<>(hw));
        CMapRM<T> cm(cols.data(), kk, hw, Eigen::OuterStride<>(hw));
        MapRM<T> gw(weight.grad().data(), c_out, kk, Eigen::OuterStride<>(kk));
        gw.noalias() += gom * cm.transpose();
      }
      if (input.requires_grad()) {
        std::vector<T> dcols(kk * hw);
        matmul_tn_rm(weight.data(), c_out, kk, go, hw, dcols.data(), false);
        col2im_add(dcols.data(), c_in, h, w, k, input.grad().data());
      }
      if (bias_t.defined() && bias_t.requires_grad()) {
        auto gb = bias_t.grad();
        for (int c = 0; c < c_out; ++c) {
          T acc = T(0);
          const T* src = go + static_cast<long>(c) * hw;
          for (long i = 0; i < hw; ++i) acc += src[i];
          gb[c] += acc;
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> max_pool2(Tape<T>* tape, const Tensor<T>& input) {
  if (input.rank() != 3) throw std::invalid_argument("max_pool2: input must be (C,H,W)");
  const int c = input.dim(0), h = input.dim(1), w = input.dim(2);
  if (h % 2 != 0 || w % 2 != 0)
    throw std::invalid_argument("max_pool2: spatial extents must be even, got " + shape_string(input.shape()));
  const int oh = h / 2, ow = w / 2;
  Tensor<T> out({c, oh, ow});
  auto argmax = std::make_shared<std::vector<int32_t>>(out.numel());
  long oi = 0;
  for (int ci = 0; ci < c; ++ci) {
    const T* plane = input.data() + static_cast<long>(ci) * h * w;
    for (int y = 0; y < oh; ++y) {
      for (int x = 0; x < ow; ++x, ++oi) {
        long best_idx = static_cast<long>(2 * y) * w + 2 * x;
        T best = plane[best_idx];
        // row-major scan keeps the first index on ties
        for (int dy = 0; dy < 2; ++dy) {
          for (int dx = 0; dx < 2; ++dx) {
            const long idx = static_cast<long>(2 * y + dy) * w + (2 * x + dx);
            if (plane[idx] > best) {
              best = plane[idx];
              best_idx = idx;
            }
          }
        }
        out.data()[oi] = best;
        (*argmax)[oi] = static_cast<int32_t>(static_cast<long>(ci) * h * w + best_idx);
      }
    }
  }
  if (want_grad(tape, input.requires_grad())) {
    out.set_requires_grad(true);
    tape->record([input = input, out, argmax]() mutable {
      auto go = out.grad();
      auto gx = input.grad();
      for (size_t i = 0; i < go.size(); ++i) gx[(*argmax)[i]] += go[i];
    });
  }
  return out;
}

namespace {

// align-corners=false source coordinates for a 2x upsample along one axis
struct BilinearAxis {
  std::vector<int> i0, i1;
  std::vector<float> w0;
};

inline BilinearAxis bilinear_axis(int in_extent) {
  BilinearAxis ax;
  const int out_extent = in_extent * 2;
  ax.i0.resize(out_extent);
  ax.i1.resize(out_extent);
  ax.w0.resize(out_extent);
  for (int i = 0; i < out_extent; ++i) {
    const double src = (i + 0.5) / 2.0 - 0.5;
    int lo = static_cast<int>(std::floor(src));
    const double frac = src - lo;
    int hi = lo + 1;
    lo = std::clamp(lo, 0, in_extent - 1);
    hi = std::clamp(hi, 0, in_extent - 1);
    ax.i0[i] = lo;
    ax.i1[i] = hi;
    ax.w0[i] = static_cast<float>(1.0 - frac);
  }
  return ax;
}

}  // namespace

template <typename T>
Tensor<T> upsample2(Tape<T>* tape, const Tensor<T>& input, UpsampleMode mode) {
  if (input.rank() != 3) throw std::invalid_argument("upsample2: input must be (C,H,W)");
  const int c = input.dim(0), h = input.dim(1), w = input.dim(2);
  const int oh = h * 2, ow = w * 2;
  Tensor<T> out({c, oh, ow});

  if (mode == UpsampleMode::kNearest) {
    for (int ci = 0; ci < c; ++ci) {
      const T* src = input.data() + static_cast<long>(ci) * h * w;
      T* dst = out.data() + static_cast<long>(ci) * oh * ow;
      for (int y = 0; y < oh; ++y) {
        const T* srow = src + static_cast<long>(y / 2) * w;
        T* drow = dst + static_cast<long>(y) * ow;
        for (int x = 0; x < ow; ++x) drow[x] = srow[x / 2];
      }
    }
    if (want_grad(tape, input.requires_grad())) {
      out.set_requires_grad(true);
      tape->record([input = input, out, c, h, w, oh, ow]() mutable {
        auto go = out.grad();
        auto gx = input.grad();
        for (int ci = 0; ci < c; ++ci) {
          for (int y = 0; y < oh; ++y) {
            const long orow = (static_cast<long>(ci) * oh + y) * ow;
            const long irow = (static_cast<long>(ci) * h + y / 2) * w;
            for (int x = 0; x < ow; ++x) gx[irow + x / 2] += go[orow + x];
          }
        }
      });
    }
    return out;
  }

  const BilinearAxis ay = bilinear_axis(h);
  const BilinearAxis axx = bilinear_axis(w);
  for (int ci = 0; ci < c; ++ci) {
    const T* src = input.data() + static_cast<long>(ci) * h * w;
    T* dst = out.data() + static_cast<long>(ci) * oh * ow;
    for (int y = 0; y < oh; ++y) {
      const T wy0 = static_cast<T>(ay.w0[y]);
      const T* r0 = src + static_cast<long>(ay.i0[y]) * w;
      const T* r1 = src + static_cast<long>(ay.i1[y]) * w;
      T* drow = dst + static_cast<long>(y) * ow;
      for (int x = 0; x < ow; ++x) {
        const T wx0 = static_cast<T>(axx.w0[x]);
        const T top = r0[axx.i0[x]] * wx0 + r0[axx.i1[x]] * (T(1) - wx0);
        const T bot = r1[axx.i0[x]] * wx0 + r1[axx.i1[x]] * (T(1) - wx0);
        drow[x] = top * wy0 + bot * (T(1) - wy0);
      }
    }
  }
  if (want_grad(tape, input.requires_grad())) {
    out.set_requires_grad(true);
    tape->record([input = input, out, ay, axx, c, h, w, oh, ow]() mutable {
      auto go = out.grad();
      auto gx = input.grad();
      for (int ci = 0; ci < c; ++ci) {
        const long ibase = static_cast<long>(ci) * h * w;
        const long obase = static_cast<long>(ci) * oh * ow;
        for (int y = 0; y < oh; ++y) {
          const T wy0 = static_cast<T>(ay.w0[y]);
          for (int x = 0; x < ow; ++x) {
            const T g = go[obase + static_cast<long>(y) * ow + x];
            const T wx0 = static_cast<T>(axx.w0[x]);
            gx[ibase + static_cast<long>(ay.i0[y]) * w + axx.i0[x]] += g * wy0 * wx0;
            gx[ibase + static_cast<long>(ay.i0[y]) * w + axx.i1[x]] += g * wy0 * (T(1) - wx0);
            gx[ibase + static_cast<long>(ay.i1[y]) * w + axx.i0[x]] += g * (T(1) - wy0) * wx0;
            gx[ibase + static_cast<long>(ay.i1[y]) * w + axx.i1[x]] += g * (T(1) - wy0) * (T(1) - wx0);
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> concat_channels(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 3 || b.rank() != 3)
    throw std::invalid_argument("concat_channels: inputs must be (C,H,W)");
  if (a.dim(1) != b.dim(1) || a.dim(2) != b.dim(2))
    throw std::invalid_argument("concat_channels: spatial mismatch " + shape_string(a.shape()) +
                                " vs " + shape_string(b.shape()));
  const long na = a.numel(), nb = b.numel();
  Tensor<T> out({a.dim(0) + b.dim(0), a.dim(1), a.dim(2)});
  std::copy(a.data(), a.data() + na, out.data());
  std::copy(b.data(), b.data() + nb, out.data() + na);
  if (want_grad(tape, a.requires_grad() || b.requires_grad())) {
    out.set_requires_grad(true);
    tape->record([a = a, b = b, out, na, nb]() mutable {
      auto go = out.grad();
      if (a.requires_grad()) {
        auto ga = a.grad();
        for (long i = 0; i < na; ++i) ga[i] += go[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad();
        for (long i = 0; i < nb; ++i) gb[i] += go[na + i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> slice_channels(Tape<T>* tape, const Tensor<T>& x, int c0, int c1) {
  if (x.rank() != 3) throw std::invalid_argument("slice_channels: input must be (C,H,W)");
  if (c0 < 0 || c1 > x.dim(0) || c0 >= c1) throw std::invalid_argument("slice_channels: bad channel range");
  const long hw = static_cast<long>(x.dim(1)) * x.dim(2);
  Tensor<T> out({c1 - c0, x.dim(1), x.dim(2)});
  std::copy(x.data() + c0 * hw, x.data() + c1 * hw, out.data());
  if (want_grad(tape, x.requires_grad())) {
    out.set_requires_grad(true);
    tape->record([x = x, out, c0, hw]() mutable {
      auto go = out.grad();
      auto gx = x.grad();
      for (size_t i = 0; i < go.size(); ++i) gx[c0 * hw + i] += go[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> sum_all(Tape<T>* tape, const Tensor<T>& x) {
  double acc = 0;
  const long n = x.numel();
  for (long i = 0; i < n; ++i) acc += static_cast<double>(x.data()[i]);
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(acc));
  if (want_grad(tape, x.requires_grad())) {
    out.set_requires_grad(true);
    tape->record([x = x, out]() mutable {
      const T g = out.grad()[0];
      auto gx = x.grad();
      for (size_t i = 0; i < gx.size(); ++i) gx[i] += g;
    });
  }
  return out;
}

template <typename T>
Tensor<T> mean_all(Tape<T>* tape, const Tensor<T>& x) {
  const long n = x.numel();
  double acc = 0;
  for (long i = 0; i < n; ++i) acc += static_cast<double>(x.data()[i]);
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(acc / static_cast<double>(n)));
  if (want_grad(tape, x.requires_grad())) {
    out.set_requires_grad(true);
    tape->record([x = x, out, n]() mutable {
      const T g = out.grad()[0] / static_cast<T>(n);
      auto gx = x.grad();
      for (size_t i = 0; i < gx.size(); ++i) gx[i] += g;
    });
  }
  return out;
}

template <typename T>
std::vector<Tensor<T>> channel_norm_seq(Tape<T>* tape, const std::vector<Tensor<T>>& xs,
                                        const Tensor<T>& gain, const Tensor<T>& bias, T epsilon,
                                        NormRunningStats<T>* running, bool training, T momentum) {
  if (xs.empty()) throw std::invalid_argument("channel_norm_seq: empty sequence");
  if (!(epsilon > T(0))) throw std::invalid_argument("channel_norm_seq: epsilon must be positive");
  const auto& shape = xs.front().shape();
  if (shape.size() != 3) throw std::invalid_argument("channel_norm_seq: inputs must be (C,H,W)");
  for (const auto& x : xs) {
    if (x.shape() != shape) throw std::invalid_argument("channel_norm_seq: inconsistent shapes");
  }
  const int c = shape[0];
  const long hw = static_cast<long>(shape[1]) * shape[2];
  if (gain.numel() != c || bias.numel() != c)
    throw std::invalid_argument("channel_norm_seq: gain/bias must have one entry per channel");
  const long count = static_cast<long>(xs.size()) * hw;

  std::vector<T> mean(static_cast<size_t>(c)), inv_std(static_cast<size_t>(c));
  if (training) {
    if (running && running->cumulative)
      momentum = T(1) / static_cast<T>(running->update_count + 1);
    for (int ci = 0; ci < c; ++ci) {
      double acc = 0;
      for (const auto& x : xs) {
        const T* p = x.data() + static_cast<long>(ci) * hw;
        for (long i = 0; i < hw; ++i) acc += static_cast<double>(p[i]);
      }
      const double mu = acc / static_cast<double>(count);
      double vacc = 0;
      for (const auto& x : xs) {
        const T* p = x.data() + static_cast<long>(ci) * hw;
        for (long i = 0; i < hw; ++i) {
          const double d = static_cast<double>(p[i]) - mu;
          vacc += d * d;
        }
      }
      const double var = vacc / static_cast<double>(count);
      mean[ci] = static_cast<T>(mu);
      inv_std[ci] = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(epsilon)));
      if (running) {
        if (running->empty()) running->init(c);
        running->mean[ci] = (T(1) - momentum) * running->mean[ci] + momentum * static_cast<T>(mu);
        running->var[ci] = (T(1) - momentum) * running->var[ci] + momentum * static_cast<T>(var);
      }
    }
    if (running) running->update_count++;
  } else {
    if (!running || running->empty())
      throw std::logic_error("channel_norm_seq: evaluation mode requires running statistics");
    for (int ci = 0; ci < c; ++ci) {
      mean[ci] = running->mean[ci];
      inv_std[ci] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(running->var[ci]) +
                                                   static_cast<double>(epsilon)));
    }
  }

  std::vector<Tensor<T>> outs;
  outs.reserve(xs.size());
  bool any_grad = gain.requires_grad() || bias.requires_grad();
  for (const auto& x : xs) any_grad = any_grad || x.requires_grad();

  for (const auto& x : xs) {
    Tensor<T> y(x.shape());
    for (int ci = 0; ci < c; ++ci) {
      const T* p = x.data() + static_cast<long>(ci) * hw;
      T* q = y.data() + static_cast<long>(ci) * hw;
      const T g = gain.data()[ci], b = bias.data()[ci];
      const T mu = mean[ci], is = inv_std[ci];
      for (long i = 0; i < hw; ++i) q[i] = (p[i] - mu) * is * g + b;
    }
    if (want_grad(tape, any_grad)) y.set_requires_grad(true);
    outs.push_back(y);
  }

  if (want_grad(tape, any_grad)) {
    std::vector<Tensor<T>> xs_copy = xs;
    std::vector<Tensor<T>> outs_copy = outs;
    tape->record([xs = std::move(xs_copy), outs = std::move(outs_copy), gain = gain, bias = bias,
                  mean = std::move(mean), inv_std = std::move(inv_std), c, hw, count, training]() mutable {
      for (int ci = 0; ci < c; ++ci) {
        const T mu = mean[ci], is = inv_std[ci];
        const T g = gain.data()[ci];
        double sum_go = 0, sum_go_xhat = 0;
        for (size_t t = 0; t < xs.size(); ++t) {
          const T* p = xs[t].data() + static_cast<long>(ci) * hw;
          const T* go = outs[t].grad().data() + static_cast<long>(ci) * hw;
          for (long i = 0; i < hw; ++i) {
            sum_go += static_cast<double>(go[i]);
            sum_go_xhat += static_cast<double>(go[i]) * static_cast<double>((p[i] - mu) * is);
          }
        }
        if (gain.requires_grad()) gain.grad()[ci] += static_cast<T>(sum_go_xhat);
        if (bias.requires_grad()) bias.grad()[ci] += static_cast<T>(sum_go);
        const T mean_go = static_cast<T>(sum_go / static_cast<double>(count));
        const T mean_go_xhat = static_cast<T>(sum_go_xhat / static_cast<double>(count));
        for (size_t t = 0; t < xs.size(); ++t) {
          if (!xs[t].requires_grad()) continue;
          const T* p = xs[t].data() + static_cast<long>(ci) * hw;
          const T* go = outs[t].grad().data() + static_cast<long>(ci) * hw;
          T* gx = xs[t].grad().data() + static_cast<long>(ci) * hw;
          if (training) {
            for (long i = 0; i < hw; ++i) {
              const T xhat = (p[i] - mu) * is;
              gx[i] += g * is * (go[i] - mean_go - xhat * mean_go_xhat);
            }
          } else {
            for (long i = 0; i < hw; ++i) gx[i] += go[i] * g * is;
          }
        }
      }
    });
  }
  return outs;
}

template <typename T>
Tensor<T> channel_norm(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& gain,
                       const Tensor<T>& bias, T epsilon) {
  return channel_norm_seq(tape, std::vector<Tensor<T>>{x}, gain, bias, epsilon,
                          static_cast<NormRunningStats<T>*>(nullptr), true, T(0.1))[0];
}

template <typename T>
Tensor<T> unit_normalize3(Tape<T>* tape, const Tensor<T>& x, T degenerate_eps,
                          std::vector<int>* degenerate) {
  if (x.rank() != 3 || x.dim(0) != 3)
    throw std::invalid_argument("unit_normalize3: input must be (3,H,W)");
  const long hw = static_cast<long>(x.dim(1)) * x.dim(2);
  Tensor<T> out(x.shape());
  for (long i = 0; i < hw; ++i) {
    const T v0 = x.data()[i], v1 = x.data()[hw + i], v2 = x.data()[2 * hw + i];
    const T norm = std::sqrt(v0 * v0 + v1 * v1 + v2 * v2);
    if (norm < degenerate_eps) {
      out.data()[i] = T(0);
      out.data()[hw + i] = T(0);
      out.data()[2 * hw + i] = T(1);
      if (degenerate) degenerate->push_back(static_cast<int>(i));
    } else {
      out.data()[i] = v0 / norm;
      out.data()[hw + i] = v1 / norm;
      out.data()[2 * hw + i] = v2 / norm;
    }
  }
  if (want_grad(tape, x.requires_grad())) {
    out.set_requires_grad(true);
    tape->record([x = x, out, hw, degenerate_eps]() mutable {
      auto go = out.grad();
      auto gx = x.grad();
      for (long i = 0; i < hw; ++i) {
        const T v0 = x.data()[i], v1 = x.data()[hw + i], v2 = x.data()[2 * hw + i];
        const T norm = std::sqrt(v0 * v0 + v1 * v1 + v2 * v2);
        if (norm < degenerate_eps) continue;  // clamped pixels pass no gradient
        const T n0 = v0 / norm, n1 = v1 / norm, n2 = v2 / norm;
        const T g0 = go[i], g1 = go[hw + i], g2 = go[2 * hw + i];
        const T dot = g0 * n0 + g1 * n1 + g2 * n2;
        gx[i] += (g0 - n0 * dot) / norm;
        gx[hw + i] += (g1 - n1 * dot) / norm;
        gx[2 * hw + i] += (g2 - n2 * dot) / norm;
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> masked_cosine_loss(Tape<T>* tape, const Tensor<T>& pred_unit, const Tensor<T>& gt,
                             const std::vector<uint8_t>& mask) {
  if (pred_unit.rank() != 3 || pred_unit.dim(0) != 3)
    throw std::invalid_argument("masked_cosine_loss: prediction must be (3,H,W)");
  check_same_shape(pred_unit, gt, "masked_cosine_loss");
  const long hw = static_cast<long>(pred_unit.dim(1)) * pred_unit.dim(2);
  if (!mask.empty() && static_cast<long>(mask.size()) != hw)
    throw std::invalid_argument("masked_cosine_loss: mask size mismatch");

  long count = 0;
  double acc = 0;
  for (long i = 0; i < hw; ++i) {
    if (!mask.empty() && !mask[i]) continue;
    ++count;
    const double dot = static_cast<double>(pred_unit.data()[i]) * gt.data()[i] +
                       static_cast<double>(pred_unit.data()[hw + i]) * gt.data()[hw + i] +
                       static_cast<double>(pred_unit.data()[2 * hw + i]) * gt.data()[2 * hw + i];
    acc += 1.0 - dot;
  }
  if (count == 0) throw std::invalid_argument("masked_cosine_loss: mask selects no pixels");
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(acc / static_cast<double>(count)));
  if (want_grad(tape, pred_unit.requires_grad())) {
    out.set_requires_grad(true);
    std::vector<uint8_t> mask_copy = mask;
    tape->record([pred_unit = pred_unit, gt = gt, out, hw, count, mask = std::move(mask_copy)]() mutable {
      const T g = out.grad()[0] / static_cast<T>(count);
      auto gp = pred_unit.grad();
      for (long i = 0; i < hw; ++i) {
        if (!mask.empty() && !mask[i]) continue;
        gp[i] -= g * gt.data()[i];
        gp[hw + i] -= g * gt.data()[hw + i];
        gp[2 * hw + i] -= g * gt.data()[2 * hw + i];
      }
    });
  }
  return out;
}

#define ESFP_INSTANTIATE_OPS(T)                                                                    \
  template Tensor<T> add(Tape<T>*, const Tensor<T>&, const Tensor<T>&);                           \
  template Tensor<T> sub(Tape<T>*, const Tensor<T>&, const Tensor<T>&);                           \
  template Tensor<T> mul(Tape<T>*, const Tensor<T>&, const Tensor<T>&);                           \
  template Tensor<T> scale(Tape<T>*, const Tensor<T>&, T);                                        \
  template Tensor<T> add_scalar(Tape<T>*, const Tensor<T>&, T);                                   \
  template Tensor<T> mul_scalar_tensor(Tape<T>*, const Tensor<T>&, const Tensor<T>&);             \
  template Tensor<T> sigmoid(Tape<T>*, const Tensor<T>&);                                         \
  template Tensor<T> hard_reset_mul(Tape<T>*, const Tensor<T>&, const Tensor<T>&);                \
  template Tensor<T> spike(Tape<T>*, const Tensor<T>&, T);                                        \
  template Tensor<T> spike_smooth(Tape<T>*, const Tensor<T>&, T);                                 \
  template Tensor<T> surrogate_grad(const Tensor<T>&);                                            \
  template Tensor<T> conv2d(Tape<T>*, const Tensor<T>&, const Tensor<T>&, const Tensor<T>*);      \
  template Tensor<T> max_pool2(Tape<T>*, const Tensor<T>&);                                       \
  template Tensor<T> upsample2(Tape<T>*, const Tensor<T>&, UpsampleMode);                         \
  template Tensor<T> concat_channels(Tape<T>*, const Tensor<T>&, const Tensor<T>&);               \
  template Tensor<T> slice_channels(Tape<T>*, const Tensor<T>&, int, int);                        \
  template Tensor<T> sum_all(Tape<T>*, const Tensor<T>&);                                         \
  template Tensor<T> mean_all(Tape<T>*, const Tensor<T>&);                                        \
  template std::vector<Tensor<T>> channel_norm_seq(Tape<T>*, const std::vector<Tensor<T>>&,       \
                                                   const Tensor<T>&, const Tensor<T>&, T,         \
                                                   NormRunningStats<T>*, bool, T);                \
  template Tensor<T> channel_norm(Tape<T>*, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
                                  T);                                                             \
  template Tensor<T> unit_normalize3(Tape<T>*, const Tensor<T>&, T, std::vector<int>*);           \
  template Tensor<T> masked_cosine_loss(Tape<T>*, const Tensor<T>&, const Tensor<T>&,             \
                                        const std::vector<uint8_t>&);

ESFP_INSTANTIATE_OPS(float)
ESFP_INSTANTIATE_OPS(double)

#undef ESFP_INSTANTIATE_OPS

}  // namespace esfp::ad

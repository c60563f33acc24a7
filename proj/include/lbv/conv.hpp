#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <type_traits>
#include <vector>

#include "lbv/bank.hpp"
#include "lbv/errors.hpp"
#include "lbv/opcount.hpp"
#include "lbv/parallel.hpp"
#include "lbv/tensor.hpp"

namespace lbv {

namespace detail {

struct Tap {
  std::int64_t offset;  // flat offset into the zero-padded volume
  std::int8_t sign;     // +1 or -1
};

/// Non-zero taps of every filter, resolved against padded strides, in
/// ascending (dz, dy, dx) order so the accumulation order is fixed.
inline std::vector<std::vector<Tap>> resolve_taps(const TernaryFilterBank& bank,
                                                  std::int64_t pad_hw, std::int64_t pad_w) {
  std::vector<std::vector<Tap>> taps(static_cast<std::size_t>(bank.count()));
  for (std::int64_t f = 0; f < bank.count(); ++f) {
    auto& list = taps[static_cast<std::size_t>(f)];
    for (std::int64_t k = 0; k < TernaryFilterBank::kFilterVolume; ++k) {
      const std::int8_t s = bank.entry(f, k);
      if (s == 0) continue;
      const std::int64_t dz = k / 9, dy = (k / 3) % 3, dx = k % 3;
      list.push_back({dz * pad_hw + dy * pad_w + dx, s});
    }
  }
  return taps;
}

/// Channel sum of x written into the interior of a zeroed padded volume.
/// The fixed-filter stage only ever adds or subtracts input values, so the
/// channel reduction can happen once up front.
template <typename S>
void presum_into_padded(const S* x, std::int64_t channels, std::int64_t d, std::int64_t h,
                        std::int64_t w, S* pad, std::int64_t pad_hw, std::int64_t pad_w) {
  for (std::int64_t c = 0; c < channels; ++c) {
    const S* src = x + c * d * h * w;
    for (std::int64_t z = 0; z < d; ++z)
      for (std::int64_t y = 0; y < h; ++y) {
        S* dst = pad + (z + 1) * pad_hw + (y + 1) * pad_w + 1;
        const S* row = src + (z * h + y) * w;
        if (c == 0)
          for (std::int64_t i = 0; i < w; ++i) dst[i] = row[i];
        else
          for (std::int64_t i = 0; i < w; ++i) dst[i] += row[i];
      }
  }
}

template <typename S>
void ternary_conv3d_sample(const S* x, std::int64_t channels, std::int64_t d, std::int64_t h,
                           std::int64_t w, const std::vector<std::vector<Tap>>& taps, S* out,
                           std::vector<S>& pad_scratch) {
  const std::int64_t pad_w = w + 2, pad_hw = (h + 2) * pad_w;
  const std::int64_t pad_n = (d + 2) * pad_hw;
  if (static_cast<std::int64_t>(pad_scratch.size()) != pad_n)
    pad_scratch.assign(static_cast<std::size_t>(pad_n), S(0));
  else
    std::fill(pad_scratch.begin(), pad_scratch.end(), S(0));
  S* pad = pad_scratch.data();
  presum_into_padded(x, channels, d, h, w, pad, pad_hw, pad_w);

  const std::int64_t vol = d * h * w;
  for (std::size_t f = 0; f < taps.size(); ++f) {
    S* plane = out + static_cast<std::int64_t>(f) * vol;
    for (std::int64_t i = 0; i < vol; ++i) plane[i] = S(0);
    for (std::int64_t z = 0; z < d; ++z)
      for (std::int64_t y = 0; y < h; ++y) {
        S* o = plane + (z * h + y) * w;
        const S* base = pad + z * pad_hw + y * pad_w;
        for (const Tap& t : taps[f]) {
          const S* r = base + t.offset;
          if (t.sign > 0)
            for (std::int64_t i = 0; i < w; ++i) o[i] += r[i];
          else
            for (std::int64_t i = 0; i < w; ++i) o[i] -= r[i];
        }
      }
  }
}

/// Transpose of the ternary stage: scatters dout back through the taps.
/// Every input channel receives the same gradient (the channel presum has a
/// unit Jacobian per channel).
template <typename S>
void ternary_conv3d_sample_backward(const S* dout, std::int64_t channels, std::int64_t d,
                                    std::int64_t h, std::int64_t w,
                                    const std::vector<std::vector<Tap>>& taps, S* dx,
                                    std::vector<S>& pad_scratch) {
  const std::int64_t pad_w = w + 2, pad_hw = (h + 2) * pad_w;
  const std::int64_t pad_n = (d + 2) * pad_hw;
  pad_scratch.assign(static_cast<std::size_t>(pad_n), S(0));
  S* pad = pad_scratch.data();

  const std::int64_t vol = d * h * w;
  for (std::size_t f = 0; f < taps.size(); ++f) {
    const S* plane = dout + static_cast<std::int64_t>(f) * vol;
    for (std::int64_t z = 0; z < d; ++z)
      for (std::int64_t y = 0; y < h; ++y) {
        const S* g = plane + (z * h + y) * w;
        S* base = pad + z * pad_hw + y * pad_w;
        for (const Tap& t : taps[f]) {
          S* r = base + t.offset;
          if (t.sign > 0)
            for (std::int64_t i = 0; i < w; ++i) r[i] += g[i];
          else
            for (std::int64_t i = 0; i < w; ++i) r[i] -= g[i];
        }
      }
  }
  // Crop the interior and broadcast to all input channels.
  for (std::int64_t c = 0; c < channels; ++c)
    for (std::int64_t z = 0; z < d; ++z)
      for (std::int64_t y = 0; y < h; ++y) {
        S* dst = dx + ((c * d + z) * h + y) * w;
        const S* src = pad + (z + 1) * pad_hw + (y + 1) * pad_w + 1;
        for (std::int64_t i = 0; i < w; ++i) dst[i] = src[i];
      }
}

inline void check_rank45(const Shape& s, const char* what) {
  if (s.size() != 4 && s.size() != 5)
    throw ShapeError(std::string(what) + ": expected rank 4 [C,D,H,W] or rank 5 [N,C,D,H,W], got " +
                     shape_str(s));
}

}  // namespace detail

/// Fixed-filter 3D stage of the LBV layer: stride 1, zero padding 1, output
/// channel f = sum over input channels of the correlation with ternary
/// filter f. The inner accumulation uses additions and subtractions only.
template <typename S>
Tensor<S> ternary_conv3d(const Tensor<S>& input, const TernaryFilterBank& bank) {
  detail::check_rank45(input.shape(), "ternary_conv3d");
  const bool batched = input.rank() == 5;
  const std::int64_t n = batched ? input.dim(0) : 1;
  const std::int64_t c = input.dim(batched ? 1 : 0);
  const std::int64_t d = input.dim(batched ? 2 : 1);
  const std::int64_t h = input.dim(batched ? 3 : 2);
  const std::int64_t w = input.dim(batched ? 4 : 3);
  const std::int64_t pad_w = w + 2, pad_hw = (h + 2) * pad_w;
  const auto taps = detail::resolve_taps(bank, pad_hw, pad_w);

  Shape out_shape = batched ? Shape{n, bank.count(), d, h, w} : Shape{bank.count(), d, h, w};
  Tensor<S> out(out_shape);
  const std::int64_t in_stride = c * d * h * w;
  const std::int64_t out_stride = bank.count() * d * h * w;
  parallel_for(n, [&](std::int64_t b, std::int64_t e) {
    std::vector<S> scratch;
    for (std::int64_t i = b; i < e; ++i)
      detail::ternary_conv3d_sample(input.data() + i * in_stride, c, d, h, w, taps,
                                    out.data() + i * out_stride, scratch);
  });
  return out;
}

/// Gradient of ternary_conv3d with respect to its input.
template <typename S>
Tensor<S> ternary_conv3d_backward(const Tensor<S>& dout, std::int64_t in_channels,
                                  const TernaryFilterBank& bank) {
  detail::check_rank45(dout.shape(), "ternary_conv3d_backward");
  const bool batched = dout.rank() == 5;
  const std::int64_t n = batched ? dout.dim(0) : 1;
  const std::int64_t f = dout.dim(batched ? 1 : 0);
  if (f != bank.count()) throw ShapeError("dout channel count != bank count");
  const std::int64_t d = dout.dim(batched ? 2 : 1);
  const std::int64_t h = dout.dim(batched ? 3 : 2);
  const std::int64_t w = dout.dim(batched ? 4 : 3);
  const std::int64_t pad_w = w + 2, pad_hw = (h + 2) * pad_w;
  const auto taps = detail::resolve_taps(bank, pad_hw, pad_w);

  Shape dx_shape = batched ? Shape{n, in_channels, d, h, w} : Shape{in_channels, d, h, w};
  Tensor<S> dx(dx_shape);
  const std::int64_t out_stride = f * d * h * w;
  const std::int64_t in_stride = in_channels * d * h * w;
  parallel_for(n, [&](std::int64_t b, std::int64_t e) {
    std::vector<S> scratch;
    for (std::int64_t i = b; i < e; ++i)
      detail::ternary_conv3d_sample_backward(dout.data() + i * out_stride, in_channels, d, h, w,
                                             taps, dx.data() + i * in_stride, scratch);
  });
  return dx;
}

/// Plain dense 3D correlation, arbitrary trainable weights [F, C, kd, kh, kw],
/// arbitrary stride and zero padding. This is the conventional layer the LBV
/// stage is measured against, and the reference side of the equivalence check.
template <typename S>
Tensor<S> conv3d_reference(const Tensor<S>& input, const Tensor<S>& weights, std::int64_t stride = 1,
                           std::int64_t padding = 0) {
  detail::check_rank45(input.shape(), "conv3d_reference");
  if (weights.rank() != 5) throw ShapeError("weights must be [F,C,kd,kh,kw]");
  if (stride < 1) throw ShapeError("stride must be >= 1");
  const bool batched = input.rank() == 5;
  const std::int64_t n = batched ? input.dim(0) : 1;
  const std::int64_t c = input.dim(batched ? 1 : 0);
  const std::int64_t d = input.dim(batched ? 2 : 1);
  const std::int64_t h = input.dim(batched ? 3 : 2);
  const std::int64_t w = input.dim(batched ? 4 : 3);
  const std::int64_t f = weights.dim(0), kd = weights.dim(2), kh = weights.dim(3),
                     kw = weights.dim(4);
  if (weights.dim(1) != c)
    throw ShapeError("weights expect " + std::to_string(weights.dim(1)) + " input channels, got " +
                     std::to_string(c));
  const std::int64_t od = (d + 2 * padding - kd) / stride + 1;
  const std::int64_t oh = (h + 2 * padding - kh) / stride + 1;
  const std::int64_t ow = (w + 2 * padding - kw) / stride + 1;
  if (d + 2 * padding < kd || h + 2 * padding < kh || w + 2 * padding < kw)
    throw ShapeError("kernel does not fit padded input");

  Shape out_shape = batched ? Shape{n, f, od, oh, ow} : Shape{f, od, oh, ow};
  Tensor<S> out(out_shape);
  const std::int64_t in_stride = c * d * h * w, out_stride = f * od * oh * ow;
  for (std::int64_t b = 0; b < n; ++b) {
    const S* x = input.data() + b * in_stride;
    S* y = out.data() + b * out_stride;
    for (std::int64_t oc = 0; oc < f; ++oc)
      for (std::int64_t oz = 0; oz < od; ++oz)
        for (std::int64_t oy = 0; oy < oh; ++oy)
          for (std::int64_t ox = 0; ox < ow; ++ox) {
            S acc(0);
            for (std::int64_t ic = 0; ic < c; ++ic)
              for (std::int64_t z = 0; z < kd; ++z) {
                const std::int64_t iz = oz * stride + z - padding;
                if (iz < 0 || iz >= d) continue;
                for (std::int64_t yy = 0; yy < kh; ++yy) {
                  const std::int64_t iy = oy * stride + yy - padding;
                  if (iy < 0 || iy >= h) continue;
                  for (std::int64_t xx = 0; xx < kw; ++xx) {
                    const std::int64_t ix = ox * stride + xx - padding;
                    if (ix < 0 || ix >= w) continue;
                    acc += weights(oc, ic, z, yy, xx) * x[((ic * d + iz) * h + iy) * w + ix];
                  }
                }
              }
            y[((oc * od + oz) * oh + oy) * ow + ox] = acc;
          }
  }
  return out;
}

/// Gradients of conv3d_reference for both input and weights.
template <typename S>
void conv3d_reference_backward(const Tensor<S>& input, const Tensor<S>& weights,
                               const Tensor<S>& dout, std::int64_t stride, std::int64_t padding,
                               Tensor<S>* dinput, Tensor<S>* dweights) {
  const bool batched = input.rank() == 5;
  const std::int64_t n = batched ? input.dim(0) : 1;
  const std::int64_t c = input.dim(batched ? 1 : 0);
  const std::int64_t d = input.dim(batched ? 2 : 1);
  const std::int64_t h = input.dim(batched ? 3 : 2);
  const std::int64_t w = input.dim(batched ? 4 : 3);
  const std::int64_t f = weights.dim(0), kd = weights.dim(2), kh = weights.dim(3),
                     kw = weights.dim(4);
  const std::int64_t od = dout.dim(batched ? 2 : 1), oh = dout.dim(batched ? 3 : 2),
                     ow = dout.dim(batched ? 4 : 3);
  if (dinput) *dinput = Tensor<S>(input.shape());
  if (dweights) *dweights = Tensor<S>(weights.shape());
  const std::int64_t in_stride = c * d * h * w, out_stride = f * od * oh * ow;
  for (std::int64_t b = 0; b < n; ++b) {
    const S* x = input.data() + b * in_stride;
    const S* g = dout.data() + b * out_stride;
    S* dx = dinput ? dinput->data() + b * in_stride : nullptr;
    for (std::int64_t oc = 0; oc < f; ++oc)
      for (std::int64_t oz = 0; oz < od; ++oz)
        for (std::int64_t oy = 0; oy < oh; ++oy)
          for (std::int64_t ox = 0; ox < ow; ++ox) {
            const S go = g[((oc * od + oz) * oh + oy) * ow + ox];
            for (std::int64_t ic = 0; ic < c; ++ic)
              for (std::int64_t z = 0; z < kd; ++z) {
                const std::int64_t iz = oz * stride + z - padding;
                if (iz < 0 || iz >= d) continue;
                for (std::int64_t yy = 0; yy < kh; ++yy) {
                  const std::int64_t iy = oy * stride + yy - padding;
                  if (iy < 0 || iy >= h) continue;
                  for (std::int64_t xx = 0; xx < kw; ++xx) {
                    const std::int64_t ix = ox * stride + xx - padding;
                    if (ix < 0 || ix >= w) continue;
                    const std::int64_t xi = ((ic * d + iz) * h + iy) * w + ix;
                    if (dx) dx[xi] += weights(oc, ic, z, yy, xx) * go;
                    if (dweights) (*dweights)(oc, ic, z, yy, xx) += x[xi] * go;
                  }
                }
              }
          }
  }
}

// ---------------------------------------------------------------------------
// Pointwise (1x1x1) convolution: a per-voxel linear map across channels.
// float/double take the GEMM path; instrumented scalars take plain loops.
// ---------------------------------------------------------------------------

namespace detail {

template <typename S>
using MatMap = Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename S>
using ConstMatMap =
    Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

template <typename S>
inline constexpr bool use_gemm_v = std::is_same_v<S, float> || std::is_same_v<S, double>;

}  // namespace detail

template <typename S>
Tensor<S> pointwise_conv3d(const Tensor<S>& input, const Tensor<S>& weights,
                           const Tensor<S>& bias) {
  detail::check_rank45(input.shape(), "pointwise_conv3d");
  const bool batched = input.rank() == 5;
  const std::int64_t n = batched ? input.dim(0) : 1;
  const std::int64_t c = input.dim(batched ? 1 : 0);
  const std::int64_t vol = input.size() / (n * c);
  if (weights.rank() != 2 || weights.dim(1) != c)
    throw ShapeError("pointwise weights must be [out," + std::to_string(c) + "]");
  const std::int64_t o = weights.dim(0);
  if (bias.rank() != 1 || bias.dim(0) != o) throw ShapeError("pointwise bias must be [out]");

  Shape out_shape = input.shape();
  out_shape[batched ? 1 : 0] = o;
  Tensor<S> out(out_shape);
  parallel_for(n, [&](std::int64_t b, std::int64_t e) {
    for (std::int64_t i = b; i < e; ++i) {
      const S* x = input.data() + i * c * vol;
      S* y = out.data() + i * o * vol;
      if constexpr (detail::use_gemm_v<S>) {
        detail::ConstMatMap<S> xm(x, c, vol);
        detail::ConstMatMap<S> wm(weights.data(), o, c);
        detail::MatMap<S> ym(y, o, vol);
        ym.noalias() = wm * xm;
        for (std::int64_t oc = 0; oc < o; ++oc) ym.row(oc).array() += bias[oc];
      } else {
        for (std::int64_t oc = 0; oc < o; ++oc)
          for (std::int64_t v = 0; v < vol; ++v) {
            S acc = bias[oc];
            for (std::int64_t ic = 0; ic < c; ++ic) acc += weights(oc, ic) * x[ic * vol + v];
            y[oc * vol + v] = acc;
          }
      }
    }
  });
  return out;
}

/// Gradients of pointwise_conv3d. Weight/bias gradients accumulate over the
/// batch in sample order (deterministic); pass nullptr to skip dinput.
template <typename S>
void pointwise_conv3d_backward(const Tensor<S>& input, const Tensor<S>& weights,
                               const Tensor<S>& dout, Tensor<S>* dinput, Tensor<S>* dweights,
                               Tensor<S>* dbias) {
  const bool batched = input.rank() == 5;
  const std::int64_t n = batched ? input.dim(0) : 1;
  const std::int64_t c = input.dim(batched ? 1 : 0);
  const std::int64_t vol = input.size() / (n * c);
  const std::int64_t o = weights.dim(0);
  if (dinput) *dinput = Tensor<S>(input.shape());
  if (dweights) *dweights = Tensor<S>(weights.shape());
  if (dbias) *dbias = Tensor<S>(Shape{o});

  // dX per sample is parallel; dW/db accumulate serially in sample order.
  if (dinput) {
    parallel_for(n, [&](std::int64_t b, std::int64_t e) {
      for (std::int64_t i = b; i < e; ++i) {
        const S* g = dout.data() + i * o * vol;
        S* dx = dinput->data() + i * c * vol;
        if constexpr (detail::use_gemm_v<S>) {
          detail::ConstMatMap<S> gm(g, o, vol);
          detail::ConstMatMap<S> wm(weights.data(), o, c);
          detail::MatMap<S> dxm(dx, c, vol);
          dxm.noalias() = wm.transpose() * gm;
        } else {
          for (std::int64_t ic = 0; ic < c; ++ic)
            for (std::int64_t v = 0; v < vol; ++v) {
              S acc(0);
              for (std::int64_t oc = 0; oc < o; ++oc) acc += weights(oc, ic) * g[oc * vol + v];
              dx[ic * vol + v] = acc;
            }
        }
      }
    });
  }
  if (dweights || dbias) {
    for (std::int64_t i = 0; i < n; ++i) {
      const S* x = input.data() + i * c * vol;
      const S* g = dout.data() + i * o * vol;
      if constexpr (detail::use_gemm_v<S>) {
        detail::ConstMatMap<S> xm(x, c, vol);
        detail::ConstMatMap<S> gm(g, o, vol);
        if (dweights) {
          detail::MatMap<S> dwm(dweights->data(), o, c);
          dwm.noalias() += gm * xm.transpose();
        }
        if (dbias) {
          detail::MatMap<S> dbm(dbias->data(), o, 1);
          dbm.noalias() += gm.rowwise().sum();
        }
      } else {
        for (std::int64_t oc = 0; oc < o; ++oc)
          for (std::int64_t v = 0; v < vol; ++v) {
            const S go = g[oc * vol + v];
            if (dbias) (*dbias)[oc] += go;
            if (dweights)
              for (std::int64_t ic = 0; ic < c; ++ic) (*dweights)(oc, ic) += go * x[ic * vol + v];
          }
      }
    }
  }
}

}  // namespace lbv

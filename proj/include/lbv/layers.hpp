#pragma once

#include <cctype>
#include <cmath>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "lbv/conv.hpp"
#include "lbv/rng.hpp"
#include "lbv/tensor.hpp"

namespace lbv {

enum class Mode { kTrain, kInfer };

/// A trainable tensor plus its gradient accumulator.
template <typename S>
struct ParamSlot {
  std::string name;
  Tensor<S> value;
  Tensor<S> grad;

  explicit ParamSlot(std::string n, Tensor<S> v)
      : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}
};

/// Reverse-mode building block: forward caches whatever backward needs,
/// backward consumes the cache and accumulates parameter gradients.
template <typename S>
class Layer {
 public:
  virtual ~Layer() = default;
  virtual std::string kind() const = 0;
  virtual Tensor<S> forward(Tensor<S> x, Mode mode) = 0;
  virtual Tensor<S> backward(const Tensor<S>& dy) = 0;
  virtual std::vector<ParamSlot<S>*> params() { return {}; }

  /// Non-trainable state that still belongs in checkpoints (BN running stats).
  virtual std::vector<std::pair<std::string, Tensor<S>*>> state_tensors() { return {}; }

  /// First layer of a network can skip computing its input gradient.
  bool input_grad_needed = true;

  void zero_grads() {
    for (auto* p : params()) p->grad.fill(S(0));
  }
};

// ---------------------------------------------------------------------------

template <typename S>
class TernaryConv3dLayer final : public Layer<S> {
 public:
  TernaryConv3dLayer(std::shared_ptr<const TernaryFilterBank> bank, std::int64_t in_channels)
      : bank_(std::move(bank)), in_channels_(in_channels) {}

  std::string kind() const override { return "tconv"; }

  Tensor<S> forward(Tensor<S> x, Mode) override {
    const std::int64_t c = x.dim(x.rank() == 5 ? 1 : 0);
    if (c != in_channels_)
      throw ShapeError("ternary conv expects " + std::to_string(in_channels_) +
                       " channels, got " + std::to_string(c));
    return ternary_conv3d(x, *bank_);
  }

  Tensor<S> backward(const Tensor<S>& dy) override {
    if (!this->input_grad_needed) return Tensor<S>();
    return ternary_conv3d_backward(dy, in_channels_, *bank_);
  }

  const TernaryFilterBank& bank() const { return *bank_; }

 private:
  std::shared_ptr<const TernaryFilterBank> bank_;
  std::int64_t in_channels_;
};

template <typename S>
class ReluLayer final : public Layer<S> {
 public:
  std::string kind() const override { return "relu"; }

  Tensor<S> forward(Tensor<S> x, Mode) override {
    mask_.resize(static_cast<std::size_t>(x.size()));
    S* p = x.data();
    for (std::int64_t i = 0; i < x.size(); ++i) {
      const bool on = p[i] > S(0);
      mask_[static_cast<std::size_t>(i)] = on;
      if (!on) p[i] = S(0);  // subgradient at 0 is 0: exactly-zero inputs stay inactive
    }
    return x;
  }

  Tensor<S> backward(const Tensor<S>& dy) override {
    Tensor<S> dx(dy.shape());
    for (std::int64_t i = 0; i < dy.size(); ++i)
      dx[i] = mask_[static_cast<std::size_t>(i)] ? dy[i] : S(0);
    return dx;
  }

 private:
  std::vector<std::uint8_t> mask_;
};

/// Elementwise max(0, x) as a free function.
template <typename S>
Tensor<S> relu(const Tensor<S>& x) {
  Tensor<S> y = x;
  for (std::int64_t i = 0; i < y.size(); ++i)
    if (!(y[i] > S(0))) y[i] = S(0);
  return y;
}

/// Fan-in-scaled normal init (std = sqrt(2 / fan_in)), suited to ReLU stacks.
template <typename S>
Tensor<S> he_normal(Shape shape, std::int64_t fan_in, Pcg32& rng) {
  Tensor<S> t(std::move(shape));
  const double std = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (std::int64_t i = 0; i < t.size(); ++i) t[i] = static_cast<S>(std * rng.normal());
  return t;
}

template <typename S>
class PointwiseConv3dLayer final : public Layer<S> {
 public:
  PointwiseConv3dLayer(std::int64_t in_channels, std::int64_t out_channels, Pcg32& rng,
                       std::string name_prefix)
      : weights_(name_prefix + ".weight", he_normal<S>(Shape{out_channels, in_channels},
                                                       /*fan_in=*/in_channels, rng)),
        bias_(name_prefix + ".bias", Tensor<S>(Shape{out_channels})) {}

  std::string kind() const override { return "pconv"; }

  Tensor<S> forward(Tensor<S> x, Mode) override {
    cached_input_ = std::move(x);
    return pointwise_conv3d(cached_input_, weights_.value, bias_.value);
  }

  Tensor<S> backward(const Tensor<S>& dy) override {
    Tensor<S> dx;
    pointwise_conv3d_backward(cached_input_, weights_.value, dy,
                              this->input_grad_needed ? &dx : nullptr, &dw_scratch_, &db_scratch_);
    accumulate(weights_.grad, dw_scratch_);
    accumulate(bias_.grad, db_scratch_);
    return dx;
  }

  std::vector<ParamSlot<S>*> params() override { return {&weights_, &bias_}; }

  ParamSlot<S>& weights() { return weights_; }
  ParamSlot<S>& bias() { return bias_; }

 private:
  static void accumulate(Tensor<S>& into, const Tensor<S>& from) {
    for (std::int64_t i = 0; i < into.size(); ++i) into[i] += from[i];
  }

  ParamSlot<S> weights_, bias_;
  Tensor<S> cached_input_, dw_scratch_, db_scratch_;
};

// ---------------------------------------------------------------------------

/// Per-channel batch normalization over all non-channel axes.
/// Training mode normalizes by batch statistics (biased variance) and updates
/// running stats with momentum 0.1; inference mode normalizes by the running
/// stats. Backward handles both modes (inference treats the stats as
/// constants, which is what the fixed-stat gradient checks exercise).
template <typename S>
class BatchNormLayer final : public Layer<S> {
 public:
  static constexpr double kEps = 1e-5;
  static constexpr double kMomentum = 0.1;

  BatchNormLayer(std::int64_t channels, std::string name_prefix)
      : gamma_(name_prefix + ".gamma", Tensor<S>(Shape{channels}, S(1))),
        beta_(name_prefix + ".beta", Tensor<S>(Shape{channels})),
        running_mean_(Shape{channels}),
        running_var_(Shape{channels}) {}

  std::string kind() const override { return "bn"; }

  Tensor<S> forward(Tensor<S> x, Mode mode) override {
    const auto [n, c, vol] = split_axes(x);
    if (c != gamma_.value.dim(0))
      throw ShapeError("batchnorm expects " + std::to_string(gamma_.value.dim(0)) + " channels");
    mode_ = mode;
    mean_.assign(static_cast<std::size_t>(c), 0.0);
    invstd_.assign(static_cast<std::size_t>(c), 0.0);
    const double m = static_cast<double>(n * vol);

    if (mode == Mode::kTrain) {
      for (std::int64_t ch = 0; ch < c; ++ch) {
        double sum = 0;
        for_channel(x, n, c, vol, ch, [&](S v) { sum += static_cast<double>(v); });
        mean_[static_cast<std::size_t>(ch)] = sum / m;
      }
      for (std::int64_t ch = 0; ch < c; ++ch) {
        const double mu = mean_[static_cast<std::size_t>(ch)];
        double ss = 0;
        for_channel(x, n, c, vol, ch, [&](S v) {
          const double d = static_cast<double>(v) - mu;
          ss += d * d;
        });
        const double var = ss / m;
        invstd_[static_cast<std::size_t>(ch)] = 1.0 / std::sqrt(var + kEps);
        running_mean_[ch] = static_cast<S>((1.0 - kMomentum) * static_cast<double>(running_mean_[ch]) +
                                           kMomentum * mu);
        running_var_[ch] = static_cast<S>((1.0 - kMomentum) * static_cast<double>(running_var_[ch]) +
                                          kMomentum * var);
      }
    } else {
      for (std::int64_t ch = 0; ch < c; ++ch) {
        mean_[static_cast<std::size_t>(ch)] = static_cast<double>(running_mean_[ch]);
        invstd_[static_cast<std::size_t>(ch)] =
            1.0 / std::sqrt(static_cast<double>(running_var_[ch]) + kEps);
      }
    }

    xhat_ = Tensor<S>(x.shape());
    Tensor<S> y(x.shape());
    batch_count_ = n;
    parallel_for(n, [&](std::int64_t b, std::int64_t e) {
      for (std::int64_t i = b; i < e; ++i)
        for (std::int64_t ch = 0; ch < c; ++ch) {
          const S mu = static_cast<S>(mean_[static_cast<std::size_t>(ch)]);
          const S is = static_cast<S>(invstd_[static_cast<std::size_t>(ch)]);
          const S g = gamma_.value[ch], bt = beta_.value[ch];
          const std::int64_t off = (i * c + ch) * vol;
          for (std::int64_t v = 0; v < vol; ++v) {
            const S xh = (x[off + v] - mu) * is;
            xhat_[off + v] = xh;
            y[off + v] = g * xh + bt;
          }
        }
    });
    return y;
  }

  Tensor<S> backward(const Tensor<S>& dy) override {
    const auto [n, c, vol] = split_axes(dy);
    const double m = static_cast<double>(n * vol);
    Tensor<S> dx(dy.shape());
    for (std::int64_t ch = 0; ch < c; ++ch) {
      double sum_dy = 0, sum_dy_xhat = 0;
      for (std::int64_t i = 0; i < n; ++i) {
        const std::int64_t off = (i * c + ch) * vol;
        for (std::int64_t v = 0; v < vol; ++v) {
          sum_dy += static_cast<double>(dy[off + v]);
          sum_dy_xhat += static_cast<double>(dy[off + v]) * static_cast<double>(xhat_[off + v]);
        }
      }
      gamma_.grad[ch] += static_cast<S>(sum_dy_xhat);
      beta_.grad[ch] += static_cast<S>(sum_dy);
      const double g = static_cast<double>(gamma_.value[ch]);
      const double is = invstd_[static_cast<std::size_t>(ch)];
      for (std::int64_t i = 0; i < n; ++i) {
        const std::int64_t off = (i * c + ch) * vol;
        if (mode_ == Mode::kTrain) {
          for (std::int64_t v = 0; v < vol; ++v)
            dx[off + v] = static_cast<S>(
                g * is *
                (static_cast<double>(dy[off + v]) - sum_dy / m -
                 static_cast<double>(xhat_[off + v]) * sum_dy_xhat / m));
        } else {
          for (std::int64_t v = 0; v < vol; ++v)
            dx[off + v] = static_cast<S>(g * is * static_cast<double>(dy[off + v]));
        }
      }
    }
    return dx;
  }

  std::vector<ParamSlot<S>*> params() override { return {&gamma_, &beta_}; }

  std::vector<std::pair<std::string, Tensor<S>*>> state_tensors() override {
    return {{gamma_.name.substr(0, gamma_.name.rfind('.')) + ".running_mean", &running_mean_},
            {gamma_.name.substr(0, gamma_.name.rfind('.')) + ".running_var", &running_var_}};
  }

  Tensor<S>& running_mean() { return running_mean_; }
  Tensor<S>& running_var() { return running_var_; }
  ParamSlot<S>& gamma() { return gamma_; }
  ParamSlot<S>& beta() { return beta_; }

 private:
  static std::tuple<std::int64_t, std::int64_t, std::int64_t> split_axes(const Tensor<S>& x) {
    if (x.rank() < 2) throw ShapeError("batchnorm needs a channel axis");
    const bool batched = x.rank() >= 3;
    const std::int64_t n = batched ? x.dim(0) : 1;
    const std::int64_t c = x.dim(batched ? 1 : 0);
    return {n, c, x.size() / (n * c)};
  }

  template <typename Fn>
  static void for_channel(const Tensor<S>& x, std::int64_t n, std::int64_t c, std::int64_t vol,
                          std::int64_t ch, Fn&& fn) {
    for (std::int64_t i = 0; i < n; ++i) {
      const std::int64_t off = (i * c + ch) * vol;
      for (std::int64_t v = 0; v < vol; ++v) fn(x[off + v]);
    }
  }

  ParamSlot<S> gamma_, beta_;
  Tensor<S> running_mean_, running_var_;
  Tensor<S> xhat_;
  std::vector<double> mean_, invstd_;
  Mode mode_ = Mode::kTrain;
  std::int64_t batch_count_ = 0;
};

// ---------------------------------------------------------------------------

/// 2x2x2 max pooling with stride 2 over the three spatial axes. Per axis the
/// output length is max(floor(len/2), 1); axes of length 1 pass through, so
/// a collapsed temporal axis survives repeated pooling.
template <typename S>
class MaxPool3dLayer final : public Layer<S> {
 public:
  std::string kind() const override { return "maxpool"; }

  static Shape output_shape(const Shape& in) {
    Shape out = in;
    const std::size_t r = in.size();
    for (std::size_t a = r - 3; a < r; ++a) out[a] = std::max<std::int64_t>(in[a] / 2, 1);
    return out;
  }

  Tensor<S> forward(Tensor<S> x, Mode) override {
    detail::check_rank45(x.shape(), "maxpool3d");
    in_shape_ = x.shape();
    const bool batched = x.rank() == 5;
    const std::int64_t n = batched ? x.dim(0) : 1;
    const std::int64_t c = x.dim(batched ? 1 : 0);
    const std::int64_t d = x.dim(batched ? 2 : 1), h = x.dim(batched ? 3 : 2),
                       w = x.dim(batched ? 4 : 3);
    const std::int64_t od = std::max<std::int64_t>(d / 2, 1),
                       oh = std::max<std::int64_t>(h / 2, 1),
                       ow = std::max<std::int64_t>(w / 2, 1);
    Tensor<S> y(output_shape(x.shape()));
    argmax_.assign(static_cast<std::size_t>(y.size()), 0);
    const std::int64_t in_plane = d * h * w, out_plane = od * oh * ow;
    parallel_for(n * c, [&](std::int64_t b, std::int64_t e) {
      for (std::int64_t p = b; p < e; ++p) {
        const S* src = x.data() + p * in_plane;
        S* dst = y.data() + p * out_plane;
        std::int64_t* amax = argmax_.data() + p * out_plane;
        for (std::int64_t oz = 0; oz < od; ++oz)
          for (std::int64_t oy = 0; oy < oh; ++oy)
            for (std::int64_t ox = 0; ox < ow; ++ox) {
              const std::int64_t z1 = std::min(2 * oz + 2, d), y1 = std::min(2 * oy + 2, h),
                                 x1 = std::min(2 * ox + 2, w);
              S best{};
              std::int64_t best_ix = -1;
              for (std::int64_t z = 2 * oz; z < z1; ++z)
                for (std::int64_t yy = 2 * oy; yy < y1; ++yy)
                  for (std::int64_t xx = 2 * ox; xx < x1; ++xx) {
                    const std::int64_t ix = (z * h + yy) * w + xx;
                    if (best_ix < 0 || src[ix] > best) {  // ties keep the first occurrence
                      best = src[ix];
                      best_ix = ix;
                    }
                  }
              dst[(oz * oh + oy) * ow + ox] = best;
              amax[(oz * oh + oy) * ow + ox] = p * in_plane + best_ix;
            }
      }
    });
    return y;
  }

  Tensor<S> backward(const Tensor<S>& dy) override {
    Tensor<S> dx(in_shape_);
    for (std::int64_t i = 0; i < dy.size(); ++i)
      dx[argmax_[static_cast<std::size_t>(i)]] += dy[i];
    return dx;
  }

 private:
  Shape in_shape_;
  std::vector<std::int64_t> argmax_;
};

/// Average pooling with the same window geometry as MaxPool3dLayer.
template <typename S>
class AvgPool3dLayer final : public Layer<S> {
 public:
  std::string kind() const override { return "avgpool"; }

  Tensor<S> forward(Tensor<S> x, Mode) override {
    detail::check_rank45(x.shape(), "avgpool3d");
    in_shape_ = x.shape();
    const bool batched = x.rank() == 5;
    const std::int64_t n = batched ? x.dim(0) : 1;
    const std::int64_t c = x.dim(batched ? 1 : 0);
    const std::int64_t d = x.dim(batched ? 2 : 1), h = x.dim(batched ? 3 : 2),
                       w = x.dim(batched ? 4 : 3);
    const std::int64_t od = std::max<std::int64_t>(d / 2, 1),
                       oh = std::max<std::int64_t>(h / 2, 1),
                       ow = std::max<std::int64_t>(w / 2, 1);
    Tensor<S> y(MaxPool3dLayer<S>::output_shape(x.shape()));
    const std::int64_t in_plane = d * h * w, out_plane = od * oh * ow;
    for (std::int64_t p = 0; p < n * c; ++p) {
      const S* src = x.data() + p * in_plane;
      S* dst = y.data() + p * out_plane;
      for (std::int64_t oz = 0; oz < od; ++oz)
        for (std::int64_t oy = 0; oy < oh; ++oy)
          for (std::int64_t ox = 0; ox < ow; ++ox) {
            const std::int64_t z1 = std::min(2 * oz + 2, d), y1 = std::min(2 * oy + 2, h),
                               x1 = std::min(2 * ox + 2, w);
            S sum(0);
            std::int64_t cnt = 0;
            for (std::int64_t z = 2 * oz; z < z1; ++z)
              for (std::int64_t yy = 2 * oy; yy < y1; ++yy)
                for (std::int64_t xx = 2 * ox; xx < x1; ++xx) {
                  sum += src[(z * h + yy) * w + xx];
                  ++cnt;
                }
            dst[(oz * oh + oy) * ow + ox] = sum / S(static_cast<double>(cnt));
          }
    }
    return y;
  }

  Tensor<S> backward(const Tensor<S>& dy) override {
    const bool batched = in_shape_.size() == 5;
    const std::int64_t n = batched ? in_shape_[0] : 1;
    const std::int64_t c = in_shape_[batched ? 1 : 0];
    const std::int64_t d = in_shape_[batched ? 2 : 1], h = in_shape_[batched ? 3 : 2],
                       w = in_shape_[batched ? 4 : 3];
    const std::int64_t od = std::max<std::int64_t>(d / 2, 1),
                       oh = std::max<std::int64_t>(h / 2, 1),
                       ow = std::max<std::int64_t>(w / 2, 1);
    Tensor<S> dx(in_shape_);
    const std::int64_t in_plane = d * h * w, out_plane = od * oh * ow;
    for (std::int64_t p = 0; p < n * c; ++p) {
      const S* g = dy.data() + p * out_plane;
      S* dst = dx.data() + p * in_plane;
      for (std::int64_t oz = 0; oz < od; ++oz)
        for (std::int64_t oy = 0; oy < oh; ++oy)
          for (std::int64_t ox = 0; ox < ow; ++ox) {
            const std::int64_t z1 = std::min(2 * oz + 2, d), y1 = std::min(2 * oy + 2, h),
                               x1 = std::min(2 * ox + 2, w);
            const std::int64_t cnt = (z1 - 2 * oz) * (y1 - 2 * oy) * (x1 - 2 * ox);
            const S share = g[(oz * oh + oy) * ow + ox] / S(static_cast<double>(cnt));
            for (std::int64_t z = 2 * oz; z < z1; ++z)
              for (std::int64_t yy = 2 * oy; yy < y1; ++yy)
                for (std::int64_t xx = 2 * ox; xx < x1; ++xx)
                  dst[(z * h + yy) * w + xx] += share;
          }
    }
    return dx;
  }

 private:
  Shape in_shape_;
};

template <typename S>
class FlattenLayer final : public Layer<S> {
 public:
  std::string kind() const override { return "flatten"; }

  Tensor<S> forward(Tensor<S> x, Mode) override {
    in_shape_ = x.shape();
    const std::int64_t n = x.dim(0);
    const std::int64_t features = x.size() / n;
    return std::move(x).reshaped({n, features});
  }

  Tensor<S> backward(const Tensor<S>& dy) override {
    Tensor<S> copy = dy;
    return std::move(copy).reshaped(in_shape_);
  }

 private:
  Shape in_shape_;
};

template <typename S>
class DenseLayer final : public Layer<S> {
 public:
  DenseLayer(std::int64_t in_features, std::int64_t out_features, Pcg32& rng,
             std::string name_prefix)
      : weights_(name_prefix + ".weight",
                 he_normal<S>(Shape{out_features, in_features}, in_features, rng)),
        bias_(name_prefix + ".bias", Tensor<S>(Shape{out_features})) {}

  std::string kind() const override { return "dense"; }

  Tensor<S> forward(Tensor<S> x, Mode) override {
    if (x.rank() != 2 || x.dim(1) != weights_.value.dim(1))
      throw ShapeError("dense expects [N," + std::to_string(weights_.value.dim(1)) + "]");
    cached_input_ = std::move(x);
    const std::int64_t n = cached_input_.dim(0), in = weights_.value.dim(1),
                       out = weights_.value.dim(0);
    Tensor<S> y({n, out});
    if constexpr (detail::use_gemm_v<S>) {
      detail::ConstMatMap<S> xm(cached_input_.data(), n, in);
      detail::ConstMatMap<S> wm(weights_.value.data(), out, in);
      detail::MatMap<S> ym(y.data(), n, out);
      ym.noalias() = xm * wm.transpose();
      for (std::int64_t i = 0; i < n; ++i) ym.row(i) += detail::ConstMatMap<S>(bias_.value.data(), 1, out);
    } else {
      for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t o = 0; o < out; ++o) {
          S acc = bias_.value[o];
          for (std::int64_t k = 0; k < in; ++k) acc += cached_input_(i, k) * weights_.value(o, k);
          y(i, o) = acc;
        }
    }
    return y;
  }

  Tensor<S> backward(const Tensor<S>& dy) override {
    const std::int64_t n = cached_input_.dim(0), in = weights_.value.dim(1),
                       out = weights_.value.dim(0);
    Tensor<S> dx({n, in});
    if constexpr (detail::use_gemm_v<S>) {
      detail::ConstMatMap<S> gm(dy.data(), n, out);
      detail::ConstMatMap<S> xm(cached_input_.data(), n, in);
      detail::ConstMatMap<S> wm(weights_.value.data(), out, in);
      detail::MatMap<S>(weights_.grad.data(), out, in).noalias() += gm.transpose() * xm;
      detail::MatMap<S>(bias_.grad.data(), 1, out).noalias() += gm.colwise().sum();
      if (this->input_grad_needed)
        detail::MatMap<S>(dx.data(), n, in).noalias() = gm * wm;
    } else {
      for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t o = 0; o < out; ++o) {
          const S go = dy(i, o);
          bias_.grad[o] += go;
          for (std::int64_t k = 0; k < in; ++k) {
            weights_.grad(o, k) += go * cached_input_(i, k);
            dx(i, k) += go * weights_.value(o, k);
          }
        }
    }
    return dx;
  }

  std::vector<ParamSlot<S>*> params() override { return {&weights_, &bias_}; }

  ParamSlot<S>& weights() { return weights_; }
  ParamSlot<S>& bias() { return bias_; }

 private:
  ParamSlot<S> weights_, bias_;
  Tensor<S> cached_input_;
};

// ---------------------------------------------------------------------------

/// Stage order inside an LBV block, as comma-separated tokens from
/// {tconv, relu, pconv, bn}. Exactly one fixed ternary stage and one
/// trainable pointwise stage, ternary first.
inline constexpr const char* kDefaultBlockOrder = "tconv,relu,pconv,bn,relu";

inline std::vector<std::string> parse_block_order(const std::string& order) {
  std::vector<std::string> tokens;
  std::string cur;
  for (char c : order) {
    if (c == ',') {
      tokens.push_back(cur);
      cur.clear();
    } else if (!std::isspace(static_cast<unsigned char>(c))) {
      cur += c;
    }
  }
  if (!cur.empty()) tokens.push_back(cur);
  std::int64_t tconv = 0, pconv = 0;
  bool pconv_seen = false;
  for (const auto& t : tokens) {
    if (t == "tconv") {
      ++tconv;
      if (pconv_seen) throw ValidationError("block order: tconv must precede pconv");
    } else if (t == "pconv") {
      ++pconv;
      pconv_seen = true;
    } else if (t != "relu" && t != "bn") {
      throw ValidationError("unknown block stage '" + t + "'");
    }
  }
  if (tconv != 1 || pconv != 1)
    throw ValidationError("block order needs exactly one tconv and one pconv stage");
  return tokens;
}

/// The Local Binary Volume block: a fixed ternary 3x3x3 convolution produces
/// a difference map, ReLU turns it into an approximate binary bit-map, and a
/// trainable 1x1x1 convolution mixes the maps into feature maps; batch norm
/// and a trailing ReLU finish the block. Only the pointwise weights, bias,
/// and the BN affine pair are trainable.
template <typename S>
class LbvBlockLayer final : public Layer<S> {
 public:
  LbvBlockLayer(std::shared_ptr<const TernaryFilterBank> bank, std::int64_t in_channels,
                std::int64_t out_channels, Pcg32& rng, std::string name_prefix,
                const std::string& order = kDefaultBlockOrder)
      : in_channels_(in_channels), out_channels_(out_channels), order_(order) {
    std::int64_t channels = in_channels;
    for (const auto& token : parse_block_order(order)) {
      if (token == "tconv") {
        stages_.push_back(std::make_unique<TernaryConv3dLayer<S>>(bank, channels));
        channels = bank->count();
      } else if (token == "relu") {
        stages_.push_back(std::make_unique<ReluLayer<S>>());
      } else if (token == "pconv") {
        stages_.push_back(std::make_unique<PointwiseConv3dLayer<S>>(channels, out_channels, rng,
                                                                    name_prefix + ".pconv"));
        channels = out_channels;
      } else if (token == "bn") {
        stages_.push_back(std::make_unique<BatchNormLayer<S>>(channels, name_prefix + ".bn"));
      }
    }
  }

  std::string kind() const override { return "lbv"; }

  Tensor<S> forward(Tensor<S> x, Mode mode) override {
    stages_.front()->input_grad_needed = this->input_grad_needed;
    for (auto& stage : stages_) x = stage->forward(std::move(x), mode);
    return x;
  }

  Tensor<S> backward(const Tensor<S>& dy) override {
    Tensor<S> g = dy;
    for (std::size_t i = stages_.size(); i-- > 0;) g = stages_[i]->backward(g);
    return g;
  }

  std::vector<ParamSlot<S>*> params() override {
    std::vector<ParamSlot<S>*> out;
    for (auto& stage : stages_)
      for (auto* p : stage->params()) out.push_back(p);
    return out;
  }

  std::vector<std::pair<std::string, Tensor<S>*>> state_tensors() override {
    std::vector<std::pair<std::string, Tensor<S>*>> out;
    for (auto& stage : stages_)
      for (auto& s : stage->state_tensors()) out.push_back(s);
    return out;
  }

  std::int64_t in_channels() const { return in_channels_; }
  std::int64_t out_channels() const { return out_channels_; }
  const std::string& order() const { return order_; }
  std::vector<std::unique_ptr<Layer<S>>>& stages() { return stages_; }

 private:
  std::int64_t in_channels_, out_channels_;
  std::string order_;
  std::vector<std::unique_ptr<Layer<S>>> stages_;
};

/// Composition of the LBV block stages on a single input, training mode off.
template <typename S>
Tensor<S> lbv_forward(const Tensor<S>& x, LbvBlockLayer<S>& block, Mode mode = Mode::kTrain) {
  Tensor<S> copy = x;
  return block.forward(std::move(copy), mode);
}

// ---------------------------------------------------------------------------

/// Row-wise softmax with max subtraction. Accepts [K] or [N,K].
template <typename S>
Tensor<S> softmax(const Tensor<S>& logits) {
  const bool batched = logits.rank() == 2;
  const std::int64_t n = batched ? logits.dim(0) : 1;
  const std::int64_t k = logits.dim(batched ? 1 : 0);
  Tensor<S> probs(logits.shape());
  for (std::int64_t i = 0; i < n; ++i) {
    const S* z = logits.data() + i * k;
    S* p = probs.data() + i * k;
    S zmax = z[0];
    for (std::int64_t j = 1; j < k; ++j)
      if (z[j] > zmax) zmax = z[j];
    S sum(0);
    for (std::int64_t j = 0; j < k; ++j) {
      using std::exp;
      p[j] = exp(z[j] - zmax);
      sum += p[j];
    }
    for (std::int64_t j = 0; j < k; ++j) p[j] = p[j] / sum;
  }
  return probs;
}

/// -log p[label]; label must lie in [0, classes).
template <typename S>
double cross_entropy(const Tensor<S>& probs, std::int64_t label) {
  const std::int64_t k = probs.dim(probs.rank() - 1);
  if (label < 0 || label >= k)
    throw ValidationError("label " + std::to_string(label) + " out of range [0," +
                          std::to_string(k) + ")");
  return -std::log(std::max(static_cast<double>(probs[label]), 1e-300));
}

/// Softmax + categorical cross-entropy head over a batch of logits.
/// Loss is the batch mean; backward yields (probs - onehot)/N.
template <typename S>
class SoftmaxXent {
 public:
  double forward(const Tensor<S>& logits, std::span<const std::int64_t> labels) {
    const std::int64_t n = logits.dim(0), k = logits.dim(1);
    if (static_cast<std::int64_t>(labels.size()) != n)
      throw ShapeError("label count != batch size");
    probs_ = softmax(logits);
    labels_.assign(labels.begin(), labels.end());
    double loss = 0;
    for (std::int64_t i = 0; i < n; ++i) {
      const std::int64_t y = labels[static_cast<std::size_t>(i)];
      if (y < 0 || y >= k) throw ValidationError("label out of range");
      loss += -std::log(std::max(static_cast<double>(probs_(i, y)), 1e-300));
    }
    return loss / static_cast<double>(n);
  }

  Tensor<S> backward() const {
    const std::int64_t n = probs_.dim(0), k = probs_.dim(1);
    Tensor<S> dz = probs_;
    const S inv_n = S(1.0 / static_cast<double>(n));
    for (std::int64_t i = 0; i < n; ++i) {
      dz(i, labels_[static_cast<std::size_t>(i)]) -= S(1);
      for (std::int64_t j = 0; j < k; ++j) dz(i, j) *= inv_n;
    }
    return dz;
  }

  const Tensor<S>& probs() const { return probs_; }

 private:
  Tensor<S> probs_;
  std::vector<std::int64_t> labels_;
};

template <typename S>
std::int64_t argmax_row(const Tensor<S>& t, std::int64_t row) {
  const std::int64_t k = t.dim(t.rank() - 1);
  const S* p = t.data() + row * k;
  std::int64_t best = 0;
  for (std::int64_t j = 1; j < k; ++j)
    if (p[j] > p[best]) best = j;
  return best;
}

}  // namespace lbv

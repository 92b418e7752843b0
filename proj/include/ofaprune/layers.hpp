#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "ofaprune/tensor.hpp"

namespace ofp {

enum class LayerKind { conv2d, batchnorm, relu, globalavgpool, linear };

inline const char* to_string(LayerKind k) {
  switch (k) {
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::batchnorm: return "batchnorm";
    case LayerKind::relu: return "relu";
    case LayerKind::globalavgpool: return "globalavgpool";
    case LayerKind::linear: return "linear";
  }
  return "?";
}

inline LayerKind layer_kind_from_string(const std::string& s) {
  if (s == "conv2d") return LayerKind::conv2d;
  if (s == "batchnorm") return LayerKind::batchnorm;
  if (s == "relu") return LayerKind::relu;
  if (s == "globalavgpool") return LayerKind::globalavgpool;
  if (s == "linear") return LayerKind::linear;
  throw FormatError("unknown layer kind '" + s + "'");
}

// Per-channel keep bits (1 = keep). An empty vector means "keep everything".
using BitVec = std::vector<std::uint8_t>;

inline std::vector<std::size_t> kept_indices(std::span<const std::uint8_t> mask, std::size_t channels) {
  std::vector<std::size_t> idx;
  if (mask.empty()) {
    idx.resize(channels);
    for (std::size_t i = 0; i < channels; ++i) idx[i] = i;
    return idx;
  }
  if (mask.size() != channels) {
    throw ShapeError("channel mask length " + std::to_string(mask.size()) + " does not match " +
                     std::to_string(channels) + " channels");
  }
  for (std::size_t i = 0; i < channels; ++i)
    if (mask[i]) idx.push_back(i);
  return idx;
}

inline constexpr double kBnEpsilon = 1e-5;
inline constexpr double kBnMomentum = 0.1;

enum class BnMode { train, eval, accumulate };

template <class T>
struct BnStats {
  Tensor<T> mean;
  Tensor<T> var;
  std::int64_t count = 0;  // batches folded in by accumulate mode

  static BnStats fresh(std::size_t channels) { return {Tensor<T>({channels}, T{0}), Tensor<T>({channels}, T{1}), 0}; }
  void reset() {
    mean.fill(T{0});
    var.fill(T{1});
    count = 0;
  }
  bool operator==(const BnStats&) const = default;
};

template <class T>
struct LayerParams {
  LayerKind kind = LayerKind::relu;
  Tensor<T> weight;  // conv: Cout,Cin,K,K; linear: Cout,Cin
  Tensor<T> bias;    // empty when the layer has no bias
  Tensor<T> gamma;
  Tensor<T> beta;
  BnStats<T> running;
  std::size_t stride = 1;
  std::size_t padding = 0;

  bool operator==(const LayerParams&) const = default;
};

inline std::size_t conv_out_extent(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad) {
  const long long span = static_cast<long long>(in) + 2 * static_cast<long long>(pad) - static_cast<long long>(k);
  if (span < 0 || stride == 0) {
    throw ShapeError("conv2d: kernel " + std::to_string(k) + " does not fit input extent " + std::to_string(in) +
                     " with padding " + std::to_string(pad));
  }
  return static_cast<std::size_t>(span) / stride + 1;
}

namespace detail {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Row r of `col` (stride ld) holds the (channel, kh, kw) patch values of
// every output position.
template <class T>
void im2col(const T* img, std::size_t H, std::size_t W, std::span<const std::size_t> channels, std::size_t K,
            std::size_t stride, std::size_t pad, std::size_t Ho, std::size_t Wo, T* col, std::size_t ld) {
  std::size_t row = 0;
  for (std::size_t c : channels) {
    const T* src = img + c * H * W;
    for (std::size_t kh = 0; kh < K; ++kh) {
      for (std::size_t kw = 0; kw < K; ++kw, ++row) {
        T* dst = col + row * ld;
        for (std::size_t oh = 0; oh < Ho; ++oh) {
          const long long ih = static_cast<long long>(oh * stride + kh) - static_cast<long long>(pad);
          T* drow = dst + oh * Wo;
          if (ih < 0 || ih >= static_cast<long long>(H)) {
            std::fill(drow, drow + Wo, T{0});
            continue;
          }
          const T* srow = src + static_cast<std::size_t>(ih) * W;
          for (std::size_t ow = 0; ow < Wo; ++ow) {
            const long long iw = static_cast<long long>(ow * stride + kw) - static_cast<long long>(pad);
            drow[ow] = (iw < 0 || iw >= static_cast<long long>(W)) ? T{0} : srow[iw];
          }
        }
      }
    }
  }
}

template <class T>
void col2im_add(const T* col, std::size_t ld, std::size_t H, std::size_t W, std::span<const std::size_t> channels,
                std::size_t K, std::size_t stride, std::size_t pad, std::size_t Ho, std::size_t Wo, T* img) {
  std::size_t row = 0;
  for (std::size_t c : channels) {
    T* dst = img + c * H * W;
    for (std::size_t kh = 0; kh < K; ++kh) {
      for (std::size_t kw = 0; kw < K; ++kw, ++row) {
        const T* src = col + row * ld;
        for (std::size_t oh = 0; oh < Ho; ++oh) {
          const long long ih = static_cast<long long>(oh * stride + kh) - static_cast<long long>(pad);
          if (ih < 0 || ih >= static_cast<long long>(H)) continue;
          T* drow = dst + static_cast<std::size_t>(ih) * W;
          for (std::size_t ow = 0; ow < Wo; ++ow) {
            const long long iw = static_cast<long long>(ow * stride + kw) - static_cast<long long>(pad);
            if (iw >= 0 && iw < static_cast<long long>(W)) drow[iw] += src[oh * Wo + ow];
          }
        }
      }
    }
  }
}

// Samples per im2col batch, keeping the patch matrix near 4M entries.
inline std::size_t samples_per_chunk(std::size_t rows, std::size_t plane, std::size_t n) {
  const std::size_t per = std::max<std::size_t>(1, rows * plane);
  return std::clamp<std::size_t>((std::size_t{1} << 22) / per, 1, std::max<std::size_t>(n, 1));
}

template <class T>
RowMat<T> gather_kernel(const Tensor<T>& weight, std::span<const std::size_t> kout, std::span<const std::size_t> kin) {
  const std::size_t Cin = weight.dim(1), KK = weight.dim(2) * weight.dim(3);
  RowMat<T> w(kout.size(), kin.size() * KK);
  for (std::size_t r = 0; r < kout.size(); ++r)
    for (std::size_t c = 0; c < kin.size(); ++c)
      for (std::size_t k = 0; k < KK; ++k) w(r, c * KK + k) = weight[(kout[r] * Cin + kin[c]) * KK + k];
  return w;
}

}  // namespace detail

// Masked 2-D convolution. Input channels with mask_in = 0 are skipped; output
// channels with mask_out = 0 are exactly zero.
template <class T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& weight, const std::type_identity_t<Tensor<T>>* bias, std::size_t stride,
                         std::size_t pad, std::span<const std::uint8_t> mask_in = {},
                         std::span<const std::uint8_t> mask_out = {}) {
  require_rank(x, 4, "conv2d input");
  require_rank(weight, 4, "conv2d kernel");
  if (weight.dim(2) != weight.dim(3) || weight.dim(2) == 0) throw ShapeError("conv2d: kernel must be square with K >= 1");
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t Cout = weight.dim(0), K = weight.dim(2);
  if (weight.dim(1) != C) {
    throw ShapeError("conv2d: input has " + std::to_string(C) + " channels, kernel expects " + std::to_string(weight.dim(1)));
  }
  const auto kin = kept_indices(mask_in, C);
  const auto kout = kept_indices(mask_out, Cout);
  const std::size_t Ho = conv_out_extent(H, K, stride, pad), Wo = conv_out_extent(W, K, stride, pad);
  Tensor<T> y({N, Cout, Ho, Wo});
  if (kout.empty()) return y;

  const std::size_t plane = Ho * Wo;
  const auto wsub = detail::gather_kernel(weight, kout, kin);
  const std::size_t chunk = detail::samples_per_chunk(kin.size() * K * K, plane, N);
  detail::RowMat<T> col, out;
  for (std::size_t n0 = 0; n0 < N; n0 += chunk) {
    const std::size_t nb = std::min(chunk, N - n0), ld = nb * plane;
    if (kin.empty()) {
      out.setZero(static_cast<Eigen::Index>(kout.size()), static_cast<Eigen::Index>(ld));
    } else {
      col.resize(static_cast<Eigen::Index>(kin.size() * K * K), static_cast<Eigen::Index>(ld));
      for (std::size_t n = 0; n < nb; ++n)
        detail::im2col(x.ptr() + (n0 + n) * C * H * W, H, W, std::span<const std::size_t>(kin), K, stride, pad, Ho, Wo,
                       col.data() + n * plane, ld);
      out.noalias() = wsub * col;
    }
    for (std::size_t n = 0; n < nb; ++n)
      for (std::size_t r = 0; r < kout.size(); ++r) {
        T* dst = y.ptr() + ((n0 + n) * Cout + kout[r]) * plane;
        const T* src = out.data() + r * ld + n * plane;
        const T b = bias && !bias->empty() ? (*bias)[kout[r]] : T{0};
        for (std::size_t p = 0; p < plane; ++p) dst[p] = src[p] + b;
      }
  }
  return y;
}

// Accumulates kernel/bias gradients into grad_weight/grad_bias and returns the
// input gradient (zero on masked input channels).
template <class T>
Tensor<T> conv2d_backward(const Tensor<T>& x, const Tensor<T>& weight, std::size_t stride, std::size_t pad,
                          const Tensor<T>& grad_out, Tensor<T>& grad_weight, std::type_identity_t<Tensor<T>>* grad_bias,
                          std::span<const std::uint8_t> mask_in = {}, std::span<const std::uint8_t> mask_out = {},
                          bool want_input_grad = true) {
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t Cout = weight.dim(0), K = weight.dim(2);
  const std::size_t Ho = grad_out.dim(2), Wo = grad_out.dim(3), plane = Ho * Wo;
  const auto kin = kept_indices(mask_in, C);
  const auto kout = kept_indices(mask_out, Cout);
  Tensor<T> gx;
  if (want_input_grad) gx = Tensor<T>(x.shape());
  if (kout.empty() || kin.empty()) return gx;

  const std::size_t KK = K * K;
  const auto wsub = detail::gather_kernel(weight, kout, kin);
  const std::size_t chunk = detail::samples_per_chunk(kin.size() * KK, plane, N);
  detail::RowMat<T> col, gcol, gy;
  detail::RowMat<T> gw = detail::RowMat<T>::Zero(static_cast<Eigen::Index>(kout.size()), static_cast<Eigen::Index>(kin.size() * KK));
  for (std::size_t n0 = 0; n0 < N; n0 += chunk) {
    const std::size_t nb = std::min(chunk, N - n0), ld = nb * plane;
    gy.resize(static_cast<Eigen::Index>(kout.size()), static_cast<Eigen::Index>(ld));
    col.resize(static_cast<Eigen::Index>(kin.size() * KK), static_cast<Eigen::Index>(ld));
    for (std::size_t n = 0; n < nb; ++n) {
      for (std::size_t r = 0; r < kout.size(); ++r) {
        const T* src = grad_out.ptr() + ((n0 + n) * Cout + kout[r]) * plane;
        std::copy(src, src + plane, gy.data() + r * ld + n * plane);
      }
      detail::im2col(x.ptr() + (n0 + n) * C * H * W, H, W, std::span<const std::size_t>(kin), K, stride, pad, Ho, Wo,
                     col.data() + n * plane, ld);
    }
    gw.noalias() += gy * col.transpose();
    if (want_input_grad) {
      gcol.noalias() = wsub.transpose() * gy;
      for (std::size_t n = 0; n < nb; ++n)
        detail::col2im_add(gcol.data() + n * plane, ld, H, W, std::span<const std::size_t>(kin), K, stride, pad, Ho, Wo,
                           gx.ptr() + (n0 + n) * C * H * W);
    }
    if (grad_bias && !grad_bias->empty()) {
      for (std::size_t r = 0; r < kout.size(); ++r) {
        T acc{0};
        for (std::size_t p = 0; p < ld; ++p) acc += gy(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(p));
        (*grad_bias)[kout[r]] += acc;
      }
    }
  }
  const std::size_t Cin = weight.dim(1);
  for (std::size_t r = 0; r < kout.size(); ++r)
    for (std::size_t c = 0; c < kin.size(); ++c)
      for (std::size_t k = 0; k < KK; ++k) grad_weight[(kout[r] * Cin + kin[c]) * KK + k] += gw(r, c * KK + k);
  return gx;
}

// Saved state of a batch-normalization forward pass needed by its backward.
template <class T>
struct BnCache {
  Tensor<T> xhat;
  std::vector<T> inv_std;
};

// Batch normalization over N,H,W for each channel (also accepts N x C input).
// train: normalize by batch stats, update running stats with momentum.
// accumulate: normalize by batch stats, fold batch stats into a cumulative
// average (post-hoc calibration). eval: normalize by running stats.
// Channels with mask = 0 produce exactly zero. Running variance is floored at
// the epsilon so it stays strictly positive.
template <class T>
Tensor<T> batchnorm_forward(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, BnStats<T>& stats,
                            BnMode mode, std::span<const std::uint8_t> mask = {}, std::type_identity_t<BnCache<T>>* cache = nullptr,
                            double eps = kBnEpsilon, double momentum = kBnMomentum) {
  if (x.rank() != 4 && x.rank() != 2) throw ShapeError("batchnorm: expected NCHW or NC input, got " + shape_str(x.shape()));
  const std::size_t N = x.dim(0), C = x.dim(1);
  const std::size_t HW = x.rank() == 4 ? x.dim(2) * x.dim(3) : 1;
  if (gamma.size() != C || beta.size() != C) throw ShapeError("batchnorm: affine parameters do not match channels");
  const auto keep = kept_indices(mask, C);
  Tensor<T> y(x.shape());
  if (cache) {
    cache->xhat = Tensor<T>(x.shape());
    cache->inv_std.assign(C, T{0});
  }
  if (mode == BnMode::eval && (stats.mean.size() != C || stats.var.size() != C)) {
    throw Error("batchnorm: eval mode needs populated running statistics");
  }
  if (mode != BnMode::eval && (stats.mean.size() != C || stats.var.size() != C)) stats = BnStats<T>::fresh(C);
  const double M = static_cast<double>(N * HW);
  for (std::size_t c : keep) {
    double mean = 0.0, var = 0.0;
    if (mode == BnMode::eval) {
      mean = static_cast<double>(stats.mean[c]);
      var = static_cast<double>(stats.var[c]);
    } else {
      for (std::size_t n = 0; n < N; ++n) {
        const T* p = x.ptr() + (n * C + c) * HW;
        for (std::size_t i = 0; i < HW; ++i) mean += static_cast<double>(p[i]);
      }
      mean /= M;
      for (std::size_t n = 0; n < N; ++n) {
        const T* p = x.ptr() + (n * C + c) * HW;
        for (std::size_t i = 0; i < HW; ++i) {
          const double d = static_cast<double>(p[i]) - mean;
          var += d * d;
        }
      }
      var /= M;
    }
    const T mean_t = static_cast<T>(mean);
    const T inv = static_cast<T>(1.0 / std::sqrt(var + eps));
    const T g = gamma[c], b = beta[c];
    for (std::size_t n = 0; n < N; ++n) {
      const T* p = x.ptr() + (n * C + c) * HW;
      T* q = y.ptr() + (n * C + c) * HW;
      T* h = cache ? cache->xhat.ptr() + (n * C + c) * HW : nullptr;
      for (std::size_t i = 0; i < HW; ++i) {
        const T xh = (p[i] - mean_t) * inv;
        if (h) h[i] = xh;
        q[i] = g * xh + b;
      }
    }
    if (cache) cache->inv_std[c] = inv;
    const double var_floor = std::max(var, eps);
    if (mode == BnMode::train) {
      stats.mean[c] = static_cast<T>((1.0 - momentum) * static_cast<double>(stats.mean[c]) + momentum * mean);
      stats.var[c] = static_cast<T>(std::max((1.0 - momentum) * static_cast<double>(stats.var[c]) + momentum * var_floor, eps));
    } else if (mode == BnMode::accumulate) {
      const double k = static_cast<double>(stats.count) + 1.0;
      stats.mean[c] = static_cast<T>(static_cast<double>(stats.mean[c]) + (mean - static_cast<double>(stats.mean[c])) / k);
      stats.var[c] = static_cast<T>(std::max(static_cast<double>(stats.var[c]) + (var_floor - static_cast<double>(stats.var[c])) / k, eps));
    }
  }
  if (mode == BnMode::accumulate) ++stats.count;
  return y;
}

// Backward for train/accumulate mode (batch statistics); with
// batch_stats = false, treats mean and variance as constants (eval mode).
template <class T>
Tensor<T> batchnorm_backward(const Tensor<T>& grad_out, const BnCache<T>& cache, const Tensor<T>& gamma,
                             Tensor<T>& grad_gamma, Tensor<T>& grad_beta, std::span<const std::uint8_t> mask = {},
                             bool batch_stats = true) {
  const std::size_t N = grad_out.dim(0), C = grad_out.dim(1);
  const std::size_t HW = grad_out.rank() == 4 ? grad_out.dim(2) * grad_out.dim(3) : 1;
  const auto keep = kept_indices(mask, C);
  Tensor<T> gx(grad_out.shape());
  const double M = static_cast<double>(N * HW);
  for (std::size_t c : keep) {
    double sum_dy = 0.0, sum_dy_xh = 0.0;
    for (std::size_t n = 0; n < N; ++n) {
      const T* dy = grad_out.ptr() + (n * C + c) * HW;
      const T* xh = cache.xhat.ptr() + (n * C + c) * HW;
      for (std::size_t i = 0; i < HW; ++i) {
        sum_dy += static_cast<double>(dy[i]);
        sum_dy_xh += static_cast<double>(dy[i]) * static_cast<double>(xh[i]);
      }
    }
    grad_gamma[c] += static_cast<T>(sum_dy_xh);
    grad_beta[c] += static_cast<T>(sum_dy);
    const double g = static_cast<double>(gamma[c]);
    const double inv = static_cast<double>(cache.inv_std[c]);
    for (std::size_t n = 0; n < N; ++n) {
      const T* dy = grad_out.ptr() + (n * C + c) * HW;
      const T* xh = cache.xhat.ptr() + (n * C + c) * HW;
      T* dx = gx.ptr() + (n * C + c) * HW;
      for (std::size_t i = 0; i < HW; ++i) {
        if (batch_stats) {
          dx[i] = static_cast<T>(g * inv / M *
                                 (M * static_cast<double>(dy[i]) - sum_dy - static_cast<double>(xh[i]) * sum_dy_xh));
        } else {
          dx[i] = static_cast<T>(g * inv * static_cast<double>(dy[i]));
        }
      }
    }
  }
  return gx;
}

template <class T>
Tensor<T> relu_forward(const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > T{0} ? x[i] : T{0};
  return y;
}

// x is the relu input.
template <class T>
Tensor<T> relu_backward(const Tensor<T>& x, const Tensor<T>& grad_out) {
  Tensor<T> gx(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) gx[i] = x[i] > T{0} ? grad_out[i] : T{0};
  return gx;
}

template <class T>
Tensor<T> global_avg_pool_forward(const Tensor<T>& x) {
  require_rank(x, 4, "globalavgpool input");
  const std::size_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  Tensor<T> y({N, C});
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    T s{0};
    const T* p = x.ptr() + nc * HW;
    for (std::size_t i = 0; i < HW; ++i) s += p[i];
    y[nc] = s / static_cast<T>(HW);
  }
  return y;
}

template <class T>
Tensor<T> global_avg_pool_backward(const Shape& input_shape, const Tensor<T>& grad_out) {
  const std::size_t N = input_shape[0], C = input_shape[1], HW = input_shape[2] * input_shape[3];
  Tensor<T> gx(input_shape);
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    const T g = grad_out[nc] / static_cast<T>(HW);
    T* p = gx.ptr() + nc * HW;
    for (std::size_t i = 0; i < HW; ++i) p[i] = g;
  }
  return gx;
}

// y = x W^T + b over the kept input features.
template <class T>
Tensor<T> linear_forward(const Tensor<T>& x, const Tensor<T>& weight, const std::type_identity_t<Tensor<T>>* bias,
                         std::span<const std::uint8_t> mask_in = {}) {
  require_rank(x, 2, "linear input");
  const std::size_t N = x.dim(0), Cin = x.dim(1), Cout = weight.dim(0);
  if (weight.dim(1) != Cin) throw ShapeError("linear: input width " + std::to_string(Cin) + " vs weight " + shape_str(weight.shape()));
  const auto kin = kept_indices(mask_in, Cin);
  Tensor<T> y({N, Cout});
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t o = 0; o < Cout; ++o) {
      T s = bias && !bias->empty() ? (*bias)[o] : T{0};
      const T* w = weight.ptr() + o * Cin;
      const T* xi = x.ptr() + n * Cin;
      for (std::size_t i : kin) s += w[i] * xi[i];
      y[n * Cout + o] = s;
    }
  }
  return y;
}

template <class T>
Tensor<T> linear_backward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& grad_out,
                          Tensor<T>& grad_weight, std::type_identity_t<Tensor<T>>* grad_bias, std::span<const std::uint8_t> mask_in = {}) {
  const std::size_t N = x.dim(0), Cin = x.dim(1), Cout = weight.dim(0);
  const auto kin = kept_indices(mask_in, Cin);
  Tensor<T> gx(x.shape());
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t o = 0; o < Cout; ++o) {
      const T g = grad_out[n * Cout + o];
      if (grad_bias && !grad_bias->empty()) (*grad_bias)[o] += g;
      for (std::size_t i : kin) {
        grad_weight[o * Cin + i] += g * x[n * Cin + i];
        gx[n * Cin + i] += g * weight[o * Cin + i];
      }
    }
  }
  return gx;
}

// Convenience wrappers over LayerParams.
template <class T>
Tensor<T> conv2d(const Tensor<T>& input, const LayerParams<T>& p, std::span<const std::uint8_t> mask_in = {},
                 std::span<const std::uint8_t> mask_out = {}) {
  return conv2d_forward(input, p.weight, &p.bias, p.stride, p.padding, mask_in, mask_out);
}

template <class T>
Tensor<T> batchnorm(const Tensor<T>& input, LayerParams<T>& p, BnMode mode, std::span<const std::uint8_t> mask = {}) {
  return batchnorm_forward(input, p.gamma, p.beta, p.running, mode, mask);
}

}  // namespace ofp

#pragma once

// Minimal strided convolution / transposed convolution layers with explicit
// backward passes, plus an Adam optimizer. GEMMs go through Eigen; im2col
// and col2im are written out here.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "vqburn/common.hpp"
#include "vqburn/volume.hpp"

namespace vqburn::nn {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

enum class Activation { kReLU, kSiLU };

inline std::string to_string(Activation a) { return a == Activation::kReLU ? "relu" : "silu"; }

inline Activation activation_from_string(const std::string& s) {
  if (s == "relu") return Activation::kReLU;
  if (s == "silu") return Activation::kSiLU;
  throw config_error("unknown activation '" + s + "'");
}

template <typename T>
T activate(Activation a, T z) {
  if (a == Activation::kReLU) return z > T(0) ? z : T(0);
  return z / (T(1) + std::exp(-z));
}

/// d activate(z) / dz
template <typename T>
T activate_grad(Activation a, T z) {
  if (a == Activation::kReLU) return z > T(0) ? T(1) : T(0);
  const T s = T(1) / (T(1) + std::exp(-z));
  return s * (T(1) + z * (T(1) - s));
}

/// Geometry shared by a convolution and its transpose: a "large" grid of
/// size big_h x big_w sampled by a kernel with stride and zero padding into
/// a "small" grid of size small_h x small_w.
struct ConvGeometry {
  int kernel = 4;
  int stride = 2;
  int pad = 1;

  int small_extent(int big) const { return (big + 2 * pad - kernel) / stride + 1; }
  int big_extent(int small) const { return (small - 1) * stride - 2 * pad + kernel; }
  friend bool operator==(const ConvGeometry&, const ConvGeometry&) = default;
};

/// cols[(c*K + ky)*K + kx][ys*Ws + xs] = big[c][ys*S - P + ky][xs*S - P + kx] (0 outside).
template <typename T>
void im2col(const Volume<T>& big, const ConvGeometry& g, int small_h, int small_w, std::vector<T>& cols) {
  const int K = g.kernel;
  const std::size_t ncols = static_cast<std::size_t>(small_h) * small_w;
  cols.assign(static_cast<std::size_t>(big.channels) * K * K * ncols, T(0));
  for (int c = 0; c < big.channels; ++c)
    for (int ky = 0; ky < K; ++ky)
      for (int kx = 0; kx < K; ++kx) {
        T* row = cols.data() + ((static_cast<std::size_t>(c) * K + ky) * K + kx) * ncols;
        for (int ys = 0; ys < small_h; ++ys) {
          const int y = ys * g.stride - g.pad + ky;
          if (y < 0 || y >= big.height) continue;
          for (int xs = 0; xs < small_w; ++xs) {
            const int x = xs * g.stride - g.pad + kx;
            if (x < 0 || x >= big.width) continue;
            row[static_cast<std::size_t>(ys) * small_w + xs] = big.at(c, y, x);
          }
        }
      }
}

/// Adjoint of im2col: scatter-add columns back onto the large grid.
template <typename T>
void col2im(const std::vector<T>& cols, const ConvGeometry& g, int small_h, int small_w, Volume<T>& big) {
  const int K = g.kernel;
  const std::size_t ncols = static_cast<std::size_t>(small_h) * small_w;
  std::fill(big.data.begin(), big.data.end(), T(0));
  for (int c = 0; c < big.channels; ++c)
    for (int ky = 0; ky < K; ++ky)
      for (int kx = 0; kx < K; ++kx) {
        const T* row = cols.data() + ((static_cast<std::size_t>(c) * K + ky) * K + kx) * ncols;
        for (int ys = 0; ys < small_h; ++ys) {
          const int y = ys * g.stride - g.pad + ky;
          if (y < 0 || y >= big.height) continue;
          for (int xs = 0; xs < small_w; ++xs) {
            const int x = xs * g.stride - g.pad + kx;
            if (x < 0 || x >= big.width) continue;
            big.at(c, y, x) += row[static_cast<std::size_t>(ys) * small_w + xs];
          }
        }
      }
}

/// A strided convolution (downsampling) or transposed convolution
/// (upsampling) layer.
///   conv:       weight [out, in*K*K]
///   transposed: weight [in, out*K*K]
template <typename T>
struct ConvLayer {
  int in_channels = 0;
  int out_channels = 0;
  bool transposed = false;
  ConvGeometry geometry;
  std::vector<T> weight;
  std::vector<T> bias;

  ConvLayer() = default;
  ConvLayer(int in, int out, bool is_transposed, ConvGeometry g = {})
      : in_channels(in), out_channels(out), transposed(is_transposed), geometry(g),
        weight(static_cast<std::size_t>(in) * out * g.kernel * g.kernel, T(0)), bias(out, T(0)) {}

  int patch_len() const { return geometry.kernel * geometry.kernel; }

  /// He-uniform initialization; biases start at zero.
  void init(Rng& rng) {
    const int fan_in = transposed ? in_channels * patch_len() / (geometry.stride * geometry.stride)
                                  : in_channels * patch_len();
    const double bound = std::sqrt(6.0 / std::max(1, fan_in));
    for (T& w : weight) w = static_cast<T>(rng.uniform(-bound, bound));
    std::fill(bias.begin(), bias.end(), T(0));
  }

  template <typename U>
  ConvLayer<U> cast() const {
    ConvLayer<U> out(in_channels, out_channels, transposed, geometry);
    for (std::size_t i = 0; i < weight.size(); ++i) out.weight[i] = static_cast<U>(weight[i]);
    for (std::size_t i = 0; i < bias.size(); ++i) out.bias[i] = static_cast<U>(bias[i]);
    return out;
  }

  friend bool operator==(const ConvLayer&, const ConvLayer&) = default;
};

/// Values a layer's backward pass needs from its forward pass.
template <typename T>
struct LayerCache {
  Volume<T> input;
  std::vector<T> cols;  // conv only: im2col(input)
};

template <typename T>
Volume<T> forward(const ConvLayer<T>& layer, const Volume<T>& x, LayerCache<T>* cache = nullptr) {
  if (x.channels != layer.in_channels)
    throw data_error("layer expects " + std::to_string(layer.in_channels) + " channels, got " +
                     std::to_string(x.channels));
  const auto& g = layer.geometry;
  const int KK = layer.patch_len();
  if (!layer.transposed) {
    const int oh = g.small_extent(x.height), ow = g.small_extent(x.width);
    if (oh < 1 || ow < 1 || g.big_extent(oh) != x.height || g.big_extent(ow) != x.width)
      throw data_error("input extent incompatible with convolution stride");
    std::vector<T> local;
    std::vector<T>& cols = cache ? cache->cols : local;
    im2col(x, g, oh, ow, cols);
    Volume<T> y(layer.out_channels, oh, ow);
    ConstMatMap<T> W(layer.weight.data(), layer.out_channels, static_cast<Eigen::Index>(layer.in_channels) * KK);
    ConstMatMap<T> C(cols.data(), static_cast<Eigen::Index>(layer.in_channels) * KK, static_cast<Eigen::Index>(oh) * ow);
    MatMap<T> Y(y.data.data(), layer.out_channels, static_cast<Eigen::Index>(oh) * ow);
    Y.noalias() = W * C;
    for (int o = 0; o < layer.out_channels; ++o) Y.row(o).array() += layer.bias[o];
    if (cache) cache->input = x;
    return y;
  }
  const int oh = g.big_extent(x.height), ow = g.big_extent(x.width);
  std::vector<T> cols(static_cast<std::size_t>(layer.out_channels) * KK * x.plane_size());
  ConstMatMap<T> W(layer.weight.data(), layer.in_channels, static_cast<Eigen::Index>(layer.out_channels) * KK);
  ConstMatMap<T> X(x.data.data(), layer.in_channels, static_cast<Eigen::Index>(x.plane_size()));
  MatMap<T> C(cols.data(), static_cast<Eigen::Index>(layer.out_channels) * KK, static_cast<Eigen::Index>(x.plane_size()));
  C.noalias() = W.transpose() * X;
  Volume<T> y(layer.out_channels, oh, ow);
  col2im(cols, g, x.height, x.width, y);
  for (int o = 0; o < layer.out_channels; ++o)
    for (T& v : y.plane(o)) v += layer.bias[o];
  if (cache) cache->input = x;
  return y;
}

/// Gradient buffers with the same layout as a layer's parameters.
template <typename T>
struct LayerGrad {
  std::vector<T> weight;
  std::vector<T> bias;

  explicit LayerGrad(const ConvLayer<T>& l = {}) : weight(l.weight.size(), T(0)), bias(l.bias.size(), T(0)) {}
};

/// Accumulates parameter gradients into `grad` and returns dL/dinput.
template <typename T>
Volume<T> backward(const ConvLayer<T>& layer, const LayerCache<T>& cache, const Volume<T>& dy, LayerGrad<T>& grad) {
  const auto& g = layer.geometry;
  const int KK = layer.patch_len();
  const Volume<T>& x = cache.input;
  for (int o = 0; o < layer.out_channels; ++o) {
    T s = T(0);
    for (T v : dy.plane(o)) s += v;
    grad.bias[o] += s;
  }
  if (!layer.transposed) {
    const Eigen::Index rows = static_cast<Eigen::Index>(layer.in_channels) * KK;
    const Eigen::Index n = static_cast<Eigen::Index>(dy.plane_size());
    ConstMatMap<T> W(layer.weight.data(), layer.out_channels, rows);
    ConstMatMap<T> C(cache.cols.data(), rows, n);
    ConstMatMap<T> DY(dy.data.data(), layer.out_channels, n);
    MatMap<T> DW(grad.weight.data(), layer.out_channels, rows);
    DW.noalias() += DY * C.transpose();
    std::vector<T> dcols(static_cast<std::size_t>(rows) * n);
    MatMap<T> DC(dcols.data(), rows, n);
    DC.noalias() = W.transpose() * DY;
    Volume<T> dx(x.channels, x.height, x.width);
    col2im(dcols, g, dy.height, dy.width, dx);
    return dx;
  }
  // Transposed: y = col2im(W^T x) + b, so dcols = im2col(dy).
  std::vector<T> dcols;
  im2col(dy, g, x.height, x.width, dcols);
  const Eigen::Index rows = static_cast<Eigen::Index>(layer.out_channels) * KK;
  const Eigen::Index n = static_cast<Eigen::Index>(x.plane_size());
  ConstMatMap<T> W(layer.weight.data(), layer.in_channels, rows);
  ConstMatMap<T> DC(dcols.data(), rows, n);
  ConstMatMap<T> X(x.data.data(), layer.in_channels, n);
  MatMap<T> DW(grad.weight.data(), layer.in_channels, rows);
  DW.noalias() += X * DC.transpose();
  Volume<T> dx(x.channels, x.height, x.width);
  MatMap<T> DX(dx.data.data(), layer.in_channels, n);
  DX.noalias() = W * DC;
  return dx;
}

// ---------------------------------------------------------------------------
// Adam

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First/second moment buffers for one parameter tensor.
template <typename T>
struct AdamSlot {
  std::vector<T> m;
  std::vector<T> v;
  friend bool operator==(const AdamSlot&, const AdamSlot&) = default;
};

/// One bias-corrected Adam update of `param` given `grad`; `step` is 1-based.
template <typename T>
void adam_update(std::vector<T>& param, const std::vector<T>& grad, AdamSlot<T>& slot, const AdamConfig& cfg,
                 long step) {
  if (slot.m.size() != param.size()) {
    slot.m.assign(param.size(), T(0));
    slot.v.assign(param.size(), T(0));
  }
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
  const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
  const T step_size = static_cast<T>(cfg.lr / c1);
  const T inv_c2 = static_cast<T>(1.0 / c2);
  const T eps = static_cast<T>(cfg.eps);
  for (std::size_t i = 0; i < param.size(); ++i) {
    const T gi = grad[i];
    slot.m[i] = b1 * slot.m[i] + (T(1) - b1) * gi;
    slot.v[i] = b2 * slot.v[i] + (T(1) - b2) * gi * gi;
    param[i] -= step_size * slot.m[i] / (std::sqrt(slot.v[i] * inv_c2) + eps);
  }
}

}  // namespace vqburn::nn

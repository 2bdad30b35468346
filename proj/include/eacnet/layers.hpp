#pragma once

// Differentiable building blocks specific to the enhancing / cropping
// networks: attention-residual enhancement, region cropping, across-channel
// local response normalization, per-region heads and their concatenation,
// plus the plain dense layer and dropout they are assembled with.

#include <cmath>
#include <random>
#include <span>
#include <vector>

#include "eacnet/error.hpp"
#include "eacnet/geometry.hpp"
#include "eacnet/tensor.hpp"

namespace eacnet::layers {

inline constexpr std::size_t kCropWindow = 3;
inline constexpr std::size_t kRegionCount = geometry::kCenterCount;

// ---------------------------------------------------------------------------
// Dense layer: y = x W + b, W stored as [in, out].

template <typename T>
Tensor<T> dense_forward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  Tensor<T> y = matmul(x, weight);
  if (bias.rank() != 1 || bias.dim(0) != y.dim(1))
    throw ShapeError("dense: bias " + shape_string(bias.shape()) + " does not match weight " +
                     shape_string(weight.shape()));
  for (std::size_t r = 0; r < y.dim(0); ++r)
    for (std::size_t c = 0; c < y.dim(1); ++c) y.at(r, c) += bias[c];
  return y;
}

template <typename T>
struct DenseGrads {
  Tensor<T> input, weight, bias;
};

template <typename T>
DenseGrads<T> dense_backward(const Tensor<T>& x, const Tensor<T>& weight,
                             const Tensor<T>& upstream, GradRequest req = {}) {
  auto g = matmul_backward(x, weight, upstream, req);
  DenseGrads<T> out{std::move(g.a), std::move(g.b), {}};
  if (req.params) {
    out.bias = Tensor<T>({weight.dim(1)});
    for (std::size_t r = 0; r < upstream.dim(0); ++r)
      for (std::size_t c = 0; c < upstream.dim(1); ++c) out.bias[c] += upstream.at(r, c);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dropout (inverted: kept units are scaled by 1/(1-rate) during training)

template <typename T>
Tensor<T> dropout_mask(const Shape& shape, double rate, std::mt19937_64& rng) {
  if (rate < 0 || rate >= 1) throw DomainError("dropout rate must lie in [0,1)");
  Tensor<T> mask(shape);
  std::bernoulli_distribution keep(1.0 - rate);
  const T scale_kept = static_cast<T>(1.0 / (1.0 - rate));
  for (auto& m : mask.data()) m = keep(rng) ? scale_kept : T(0);
  return mask;
}

// ---------------------------------------------------------------------------
// Enhancing layer

/// Bias-free 1x1 projection applied to the attention-modulated group input.
template <typename T>
struct EnhanceParams {
  Tensor<T> projection_kernel;  // [Cout, Cin, 1, 1]

  void validate() const {
    const auto& k = projection_kernel;
    if (k.rank() != 4 || k.dim(2) != 1 || k.dim(3) != 1)
      throw ShapeError("enhance projection kernel must be [Cout,Cin,1,1], got " +
                       shape_string(k.shape()));
  }
};

/// Attention maps of a batch resized to h x w, shaped [N,1,h,w].
template <typename T>
Tensor<T> resized_attention(std::span<const geometry::AttentionMap> maps, std::size_t h,
                            std::size_t w) {
  if (maps.empty()) throw ShapeError("resized_attention: no attention maps");
  Tensor<T> out({maps.size(), 1, h, w});
  for (std::size_t n = 0; n < maps.size(); ++n) {
    const Tensor<T> r = bilinear_resize(maps[n].template to_tensor<T>(), h, w);
    std::copy(r.data().begin(), r.data().end(), out.raw() + n * h * w);
  }
  return out;
}

/// x * a, with a [N,1,H,W] broadcast over the channels of x [N,C,H,W].
template <typename T>
Tensor<T> modulate(const Tensor<T>& x, const Tensor<T>& attention) {
  if (x.rank() != 4 || attention.rank() != 4 || attention.dim(1) != 1 ||
      attention.dim(0) != x.dim(0) || attention.dim(2) != x.dim(2) ||
      attention.dim(3) != x.dim(3))
    throw ShapeError("modulate: attention " + shape_string(attention.shape()) +
                     " does not match features " + shape_string(x.shape()));
  Tensor<T> out = x;
  const std::size_t plane = x.dim(2) * x.dim(3);
  for (std::size_t n = 0; n < x.dim(0); ++n)
    for (std::size_t c = 0; c < x.dim(1); ++c) {
      T* dst = out.raw() + (n * x.dim(1) + c) * plane;
      const T* a = attention.raw() + n * plane;
      for (std::size_t i = 0; i < plane; ++i) dst[i] *= a[i];
    }
  return out;
}

/// group_output + conv1x1(a ⊙ x, projection). `attention` is already resized
/// to the group's working resolution, [N,1,H,W].
template <typename T>
Tensor<T> enhance_forward(const Tensor<T>& x, const Tensor<T>& group_output,
                          const Tensor<T>& attention, const EnhanceParams<T>& p) {
  p.validate();
  if (group_output.rank() != 4 || group_output.dim(0) != x.dim(0) ||
      group_output.dim(2) != x.dim(2) || group_output.dim(3) != x.dim(3))
    throw ShapeError("enhance: group output " + shape_string(group_output.shape()) +
                     " does not match input " + shape_string(x.shape()));
  if (p.projection_kernel.dim(0) != group_output.dim(1))
    throw ShapeError("enhance: projection " + shape_string(p.projection_kernel.shape()) +
                     " does not produce the " + std::to_string(group_output.dim(1)) +
                     " channels of the group output");
  const Tensor<T> skip = conv2d(modulate(x, attention), p.projection_kernel);
  return add(group_output, skip);
}

/// Overload taking the raw 100x100 maps (one per sample).
template <typename T>
Tensor<T> enhance_forward(const Tensor<T>& x, const Tensor<T>& group_output,
                          std::span<const geometry::AttentionMap> maps,
                          const EnhanceParams<T>& p) {
  return enhance_forward(x, group_output, resized_attention<T>(maps, x.dim(2), x.dim(3)), p);
}

template <typename T>
struct EnhanceGrads {
  Tensor<T> input;         // through the attention skip only
  Tensor<T> group_output;  // identical to upstream
  Tensor<T> projection_kernel;
};

template <typename T>
EnhanceGrads<T> enhance_backward(const Tensor<T>& x, const Tensor<T>& attention,
                                 const EnhanceParams<T>& p, const Tensor<T>& upstream,
                                 GradRequest req = {}) {
  const Tensor<T> modulated = modulate(x, attention);
  auto g = conv2d_backward(modulated, p.projection_kernel, false, {}, upstream, req);
  EnhanceGrads<T> out;
  out.group_output = upstream;
  if (req.input) out.input = modulate(g.input, attention);
  out.projection_kernel = std::move(g.kernel);
  return out;
}

// ---------------------------------------------------------------------------
// Local response normalization across channels

struct LrnParams {
  double k = 2.0;
  double alpha = 0.002;
  double beta = 0.75;
  std::size_t window = 5;

  void validate() const {
    if (!(k > 0) || !(alpha >= 0) || !(beta > 0 && beta <= 1) || window % 2 == 0)
      throw ValidationError("LRN parameters need k > 0, alpha >= 0, 0 < beta <= 1, odd window");
  }
};

namespace detail {

/// k + alpha * sum of squares over the channel window, per element.
template <typename T>
Tensor<T> lrn_denominator(const Tensor<T>& x, const LrnParams& p) {
  const std::size_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  const long half = static_cast<long>(p.window / 2);
  Tensor<T> d(x.shape());
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const long lo = std::max(0L, static_cast<long>(ch) - half);
      const long hi = std::min(static_cast<long>(c) - 1, static_cast<long>(ch) + half);
      T* dst = d.raw() + (b * c + ch) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        T s = 0;
        for (long cc = lo; cc <= hi; ++cc) {
          const T v = x.raw()[(b * c + static_cast<std::size_t>(cc)) * plane + i];
          s += v * v;
        }
        dst[i] = static_cast<T>(p.k) + static_cast<T>(p.alpha) * s;
      }
    }
  return d;
}

}  // namespace detail

template <typename T>
Tensor<T> lrn(const Tensor<T>& x, const LrnParams& p = {}) {
  p.validate();
  eacnet::detail::require_rank(x, 4, "lrn");
  const Tensor<T> d = detail::lrn_denominator(x, p);
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i)
    out[i] = x[i] / std::pow(d[i], static_cast<T>(p.beta));
  return out;
}

/// Full quotient-rule derivative:
///   dx_j = g_j D_j^-b - 2 a b x_j sum_{c : j in window(c)} g_c x_c D_c^(-b-1)
template <typename T>
Tensor<T> lrn_backward(const Tensor<T>& x, const LrnParams& p, const Tensor<T>& upstream) {
  p.validate();
  eacnet::detail::require_rank(x, 4, "lrn");
  if (upstream.shape() != x.shape())
    throw ShapeError("lrn_backward: upstream " + shape_string(upstream.shape()) +
                     " does not match " + shape_string(x.shape()));
  const Tensor<T> d = detail::lrn_denominator(x, p);
  const T beta = static_cast<T>(p.beta);
  Tensor<T> weighted(x.shape());  // g_c x_c D_c^(-b-1)
  for (std::size_t i = 0; i < x.size(); ++i)
    weighted[i] = upstream[i] * x[i] * std::pow(d[i], -beta - T(1));
  const std::size_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  const long half = static_cast<long>(p.window / 2);
  const T coeff = T(2) * static_cast<T>(p.alpha) * beta;
  Tensor<T> dx(x.shape());
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const long lo = std::max(0L, static_cast<long>(ch) - half);
      const long hi = std::min(static_cast<long>(c) - 1, static_cast<long>(ch) + half);
      for (std::size_t i = 0; i < plane; ++i) {
        const std::size_t j = (b * c + ch) * plane + i;
        T s = 0;
        for (long cc = lo; cc <= hi; ++cc)
          s += weighted[(b * c + static_cast<std::size_t>(cc)) * plane + i];
        dx[j] = upstream[j] * std::pow(d[j], -beta) - coeff * x[j] * s;
      }
    }
  return dx;
}

// ---------------------------------------------------------------------------
// Region cropping

using geometry::GridCell;

/// Top-left corners of the 3x3 windows, [sample][region].
using CropWindows = std::vector<std::vector<GridCell>>;

inline CropWindows crop_windows(std::span<const geometry::AUCenterSet> centers,
                                std::size_t grid) {
  CropWindows out;
  out.reserve(centers.size());
  for (const auto& set : centers) {
    if (set.centers.size() != kRegionCount)
      throw ShapeError("crop: expected " + std::to_string(kRegionCount) + " AU centers, got " +
                       std::to_string(set.centers.size()));
    std::vector<GridCell> cells;
    for (const auto& c : set.centers) {
      const auto cell = geometry::map_center_to_grid(c.position, grid, kCropWindow);
      cells.push_back({cell.row - kCropWindow / 2, cell.col - kCropWindow / 2});
    }
    out.push_back(std::move(cells));
  }
  return out;
}

/// Slices one 3x3 window per AU center from f [N,C,G,G]; `centers` holds
/// one center set per sample, or a single set shared by the batch.
template <typename T>
std::vector<Tensor<T>> crop_forward(const Tensor<T>& f,
                                    std::span<const geometry::AUCenterSet> centers) {
  if (f.rank() != 4 || f.dim(2) != f.dim(3) || f.dim(2) < kCropWindow)
    throw ShapeError("crop: expected square [N,C,G,G] features with G >= 3, got " +
                     shape_string(f.shape()));
  if (centers.size() != f.dim(0) && centers.size() != 1)
    throw ShapeError("crop: need one center set per sample");
  const CropWindows win = crop_windows(centers, f.dim(2));
  const std::size_t n = f.dim(0), c = f.dim(1);
  std::vector<Tensor<T>> crops(kRegionCount, Tensor<T>({n, c, kCropWindow, kCropWindow}));
  for (std::size_t r = 0; r < kRegionCount; ++r)
    for (std::size_t b = 0; b < n; ++b) {
      const GridCell tl = win[win.size() == 1 ? 0 : b][r];
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = 0; y < kCropWindow; ++y)
          for (std::size_t x = 0; x < kCropWindow; ++x)
            crops[r].at(b, ch, y, x) = f.at(b, ch, tl.row + y, tl.col + x);
    }
  return crops;
}

/// Scatters the 20 crop gradients back into a zero tensor of `input_shape`;
/// overlapping windows accumulate.
template <typename T>
Tensor<T> crop_backward(const Shape& input_shape, std::span<const geometry::AUCenterSet> centers,
                        std::span<const Tensor<T>> upstream) {
  if (upstream.size() != kRegionCount)
    throw ShapeError("crop_backward: expected " + std::to_string(kRegionCount) +
                     " region gradients");
  const std::size_t n = input_shape.at(0), c = input_shape.at(1);
  const CropWindows win = crop_windows(centers, input_shape.at(2));
  Tensor<T> dx(input_shape);
  for (std::size_t r = 0; r < kRegionCount; ++r) {
    if (upstream[r].shape() != Shape{n, c, kCropWindow, kCropWindow})
      throw ShapeError("crop_backward: region gradient " + shape_string(upstream[r].shape()));
    for (std::size_t b = 0; b < n; ++b) {
      const GridCell tl = win[win.size() == 1 ? 0 : b][r];
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = 0; y < kCropWindow; ++y)
          for (std::size_t x = 0; x < kCropWindow; ++x)
            dx.at(b, ch, tl.row + y, tl.col + x) += upstream[r].at(b, ch, y, x);
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Region head: upscale x2 -> 3x3 valid conv (C->C) -> relu -> flatten ->
// dense -> relu

template <typename T>
struct RegionHeadParams {
  Tensor<T> conv_kernel;  // [C, C, 3, 3]
  Tensor<T> conv_bias;    // [C]
  Tensor<T> fc_weight;    // [C*4*4, width]
  Tensor<T> fc_bias;      // [width]
};

/// Intermediate values retained for the backward pass.
template <typename T>
struct RegionHeadTrace {
  Tensor<T> upscaled;  // [N,C,6,6]
  Tensor<T> conv_pre;  // [N,C,4,4] before relu
  Tensor<T> flat;      // [N,C*16] after relu
  Tensor<T> fc_pre;    // [N,width] before relu
  Tensor<T> output;    // [N,width]
};

template <typename T>
RegionHeadTrace<T> region_head_forward(const Tensor<T>& crop, const RegionHeadParams<T>& p) {
  RegionHeadTrace<T> t;
  t.upscaled = nearest_upscale2x(crop);
  t.conv_pre = conv2d(t.upscaled, p.conv_kernel, p.conv_bias);
  const std::size_t n = crop.dim(0);
  t.flat = relu(t.conv_pre).reshaped({n, t.conv_pre.size() / n});
  t.fc_pre = dense_forward(t.flat, p.fc_weight, p.fc_bias);
  t.output = relu(t.fc_pre);
  return t;
}

template <typename T>
struct RegionHeadGrads {
  Tensor<T> crop, conv_kernel, conv_bias, fc_weight, fc_bias;
};

template <typename T>
RegionHeadGrads<T> region_head_backward(const RegionHeadTrace<T>& t, const RegionHeadParams<T>& p,
                                        const Tensor<T>& upstream, GradRequest req = {}) {
  RegionHeadGrads<T> g;
  const Tensor<T> d_fc_pre = relu_backward(t.fc_pre, upstream);
  auto dense = dense_backward(t.flat, p.fc_weight, d_fc_pre, {true, req.params});
  const Tensor<T> d_conv_pre =
      relu_backward(t.conv_pre, dense.input.reshaped(t.conv_pre.shape()));
  auto conv = conv2d_backward(t.upscaled, p.conv_kernel, true, {}, d_conv_pre,
                              {req.input, req.params});
  if (req.input) {
    const Shape& s = t.upscaled.shape();
    g.crop = nearest_upscale2x_backward<T>({s[0], s[1], s[2] / 2, s[3] / 2}, conv.input);
  }
  g.conv_kernel = std::move(conv.kernel);
  g.conv_bias = std::move(conv.bias);
  g.fc_weight = std::move(dense.weight);
  g.fc_bias = std::move(dense.bias);
  return g;
}

// ---------------------------------------------------------------------------
// Concatenation of region heads

template <typename T>
Tensor<T> concat_regions(std::span<const Tensor<T>> heads) {
  if (heads.size() != kRegionCount)
    throw ShapeError("concat_regions: expected " + std::to_string(kRegionCount) + " heads, got " +
                     std::to_string(heads.size()));
  for (const auto& h : heads)
    if (h.rank() != 2 || h.shape() != heads[0].shape())
      throw ShapeError("concat_regions: head widths differ (" + shape_string(h.shape()) +
                       " vs " + shape_string(heads[0].shape()) + ")");
  return concat_columns(heads);
}

/// Splits the upstream gradient into the 20 contiguous per-region blocks.
template <typename T>
std::vector<Tensor<T>> concat_regions_backward(const Tensor<T>& upstream, std::size_t width) {
  if (upstream.rank() != 2 || upstream.dim(1) != width * kRegionCount)
    throw ShapeError("concat_regions_backward: upstream " + shape_string(upstream.shape()) +
                     " is not 20 blocks of width " + std::to_string(width));
  std::vector<Tensor<T>> out;
  out.reserve(kRegionCount);
  for (std::size_t r = 0; r < kRegionCount; ++r)
    out.push_back(slice_columns(upstream, r * width, width));
  return out;
}

}  // namespace eacnet::layers

#pragma once

// Dense row-major tensors (up to four axes: batch, channel, height, width)
// and the numeric primitives the network layers are built from. Every
// primitive has a forward definition and an analytic backward that returns
// gradients shaped like the corresponding inputs.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "eacnet/error.hpp"
#include "eacnet/parallel.hpp"

namespace eacnet {

using Shape = std::vector<std::size_t>;

inline std::string shape_string(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

inline std::size_t shape_size(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

template <typename T>
class Tensor {
  static_assert(std::is_floating_point_v<T>, "Tensor holds real numbers");

 public:
  using value_type = T;
  static constexpr std::size_t kMaxRank = 4;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0)) : shape_(std::move(shape)) {
    check_shape(shape_);
    data_.assign(shape_size(shape_), fill);
  }

  Tensor(Shape shape, std::vector<T> values) : shape_(std::move(shape)), data_(std::move(values)) {
    check_shape(shape_);
    if (data_.size() != shape_size(shape_))
      throw ShapeError("tensor " + shape_string(shape_) + " given " +
                       std::to_string(data_.size()) + " values");
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  T* raw() noexcept { return data_.data(); }
  const T* raw() const noexcept { return data_.data(); }
  const std::vector<T>& values() const noexcept { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  const T& at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
  T& at(std::size_t c, std::size_t h, std::size_t w) {
    return data_[(c * shape_[1] + h) * shape_[2] + w];
  }
  const T& at(std::size_t c, std::size_t h, std::size_t w) const {
    return data_[(c * shape_[1] + h) * shape_[2] + w];
  }
  T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  const T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }

  Tensor reshaped(Shape shape) const {
    if (shape_size(shape) != size())
      throw ShapeError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    return Tensor(std::move(shape), data_);
  }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  static void check_shape(const Shape& s) {
    if (s.empty() || s.size() > kMaxRank)
      throw ShapeError("tensor rank must be 1.." + std::to_string(kMaxRank) + ", got " +
                       shape_string(s));
    for (std::size_t e : s)
      if (e == 0) throw ShapeError("tensor extents must be positive, got " + shape_string(s));
  }

  Shape shape_;
  std::vector<T> data_;
};

namespace detail {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;

template <typename T>
void require_rank(const Tensor<T>& t, std::size_t rank, const char* what) {
  if (t.rank() != rank)
    throw ShapeError(std::string(what) + " expects rank " + std::to_string(rank) + ", got " +
                     shape_string(t.shape()));
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(what) + ": shape " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
}

inline void require_upstream(const Shape& expected, const Shape& got, const char* what) {
  if (expected != got)
    throw ShapeError(std::string(what) + ": upstream gradient " + shape_string(got) +
                     " does not match output " + shape_string(expected));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Convolution (cross-correlation, zero padding)

struct Conv2dConfig {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

/// Which gradients a backward call should produce.
struct GradRequest {
  bool input = true;
  bool params = true;
};

namespace detail {

struct ConvGeometry {
  std::size_t n, cin, h, w, cout, kh, kw, stride, pad, oh, ow;
  std::size_t patch() const { return cin * kh * kw; }
  std::size_t pixels() const { return oh * ow; }
};

template <typename T>
ConvGeometry conv_geometry(const Tensor<T>& input, const Tensor<T>& kernel,
                           const Conv2dConfig& cfg) {
  require_rank(input, 4, "conv2d input");
  require_rank(kernel, 4, "conv2d kernel");
  if (input.dim(1) != kernel.dim(1))
    throw ShapeError("conv2d: input " + shape_string(input.shape()) + " has " +
                     std::to_string(input.dim(1)) + " channels but kernel " +
                     shape_string(kernel.shape()) + " expects " + std::to_string(kernel.dim(1)));
  if (cfg.stride < 1) throw ShapeError("conv2d: stride must be >= 1");
  ConvGeometry g{input.dim(0), input.dim(1), input.dim(2), input.dim(3), kernel.dim(0),
                 kernel.dim(2), kernel.dim(3), cfg.stride, cfg.padding, 0, 0};
  if (g.kh > g.h + 2 * g.pad || g.kw > g.w + 2 * g.pad)
    throw ShapeError("conv2d: kernel " + shape_string(kernel.shape()) +
                     " larger than padded input " + shape_string(input.shape()));
  g.oh = (g.h + 2 * g.pad - g.kh) / g.stride + 1;
  g.ow = (g.w + 2 * g.pad - g.kw) / g.stride + 1;
  return g;
}

inline bool is_pointwise(const ConvGeometry& g) {
  return g.kh == 1 && g.kw == 1 && g.stride == 1 && g.pad == 0;
}

template <typename T>
void im2col(const T* in, const ConvGeometry& g, T* cols) {
  const std::size_t pixels = g.pixels();
  for (std::size_t c = 0; c < g.cin; ++c)
    for (std::size_t ki = 0; ki < g.kh; ++ki)
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        T* row = cols + ((c * g.kh + ki) * g.kw + kj) * pixels;
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ki) - static_cast<long>(g.pad);
          T* dst = row + oy * g.ow;
          if (iy < 0 || iy >= static_cast<long>(g.h)) {
            std::fill(dst, dst + g.ow, T(0));
            continue;
          }
          const T* src = in + (c * g.h + static_cast<std::size_t>(iy)) * g.w;
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kj) - static_cast<long>(g.pad);
            dst[ox] = (ix < 0 || ix >= static_cast<long>(g.w)) ? T(0) : src[ix];
          }
        }
      }
}

template <typename T>
void col2im_add(const T* cols, const ConvGeometry& g, T* out) {
  const std::size_t pixels = g.pixels();
  for (std::size_t c = 0; c < g.cin; ++c)
    for (std::size_t ki = 0; ki < g.kh; ++ki)
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        const T* row = cols + ((c * g.kh + ki) * g.kw + kj) * pixels;
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ki) - static_cast<long>(g.pad);
          if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
          T* dst = out + (c * g.h + static_cast<std::size_t>(iy)) * g.w;
          const T* src = row + oy * g.ow;
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kj) - static_cast<long>(g.pad);
            if (ix >= 0 && ix < static_cast<long>(g.w)) dst[ix] += src[ox];
          }
        }
      }
}

}  // namespace detail

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>* bias,
                 const Conv2dConfig& cfg = {}) {
  const auto g = detail::conv_geometry(input, kernel, cfg);
  if (bias && (bias->rank() != 1 || bias->dim(0) != g.cout))
    throw ShapeError("conv2d: bias " + shape_string(bias->shape()) + " does not match kernel " +
                     shape_string(kernel.shape()));
  Tensor<T> out({g.n, g.cout, g.oh, g.ow});
  const detail::ConstMatMap<T> k(kernel.raw(), g.cout, g.patch());
  parallel_for(g.n, [&](std::size_t n) {
    const T* in = input.raw() + n * g.cin * g.h * g.w;
    detail::MatMap<T> y(out.raw() + n * g.cout * g.pixels(), g.cout, g.pixels());
    if (detail::is_pointwise(g)) {
      y.noalias() = k * detail::ConstMatMap<T>(in, g.cin, g.pixels());
    } else {
      std::vector<T> cols(g.patch() * g.pixels());
      detail::im2col(in, g, cols.data());
      y.noalias() = k * detail::ConstMatMap<T>(cols.data(), g.patch(), g.pixels());
    }
    if (bias)
      for (std::size_t c = 0; c < g.cout; ++c) y.row(c).array() += (*bias)[c];
  });
  return out;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, const Conv2dConfig& cfg = {}) {
  return conv2d<T>(input, kernel, nullptr, cfg);
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias,
                 const Conv2dConfig& cfg = {}) {
  return conv2d<T>(input, kernel, &bias, cfg);
}

template <typename T>
struct Conv2dGrads {
  Tensor<T> input;   // empty when not requested
  Tensor<T> kernel;  // empty when not requested
  Tensor<T> bias;    // empty when not requested or the conv has no bias
};

/// Gradients of conv2d. Per-sample kernel gradients are reduced in sample
/// order so results are identical for any worker count.
template <typename T>
Conv2dGrads<T> conv2d_backward(const Tensor<T>& input, const Tensor<T>& kernel, bool has_bias,
                               const Conv2dConfig& cfg, const Tensor<T>& upstream,
                               GradRequest req = {}) {
  const auto g = detail::conv_geometry(input, kernel, cfg);
  detail::require_upstream({g.n, g.cout, g.oh, g.ow}, upstream.shape(), "conv2d_backward");
  Conv2dGrads<T> grads;
  if (req.input) grads.input = Tensor<T>(input.shape());
  std::vector<detail::RowMatrix<T>> per_sample(req.params ? g.n : 0);
  const detail::ConstMatMap<T> k(kernel.raw(), g.cout, g.patch());

  parallel_for(g.n, [&](std::size_t n) {
    const T* in = input.raw() + n * g.cin * g.h * g.w;
    const detail::ConstMatMap<T> dy(upstream.raw() + n * g.cout * g.pixels(), g.cout,
                                    g.pixels());
    const bool pointwise = detail::is_pointwise(g);
    if (req.params) {
      if (pointwise) {
        per_sample[n] = dy * detail::ConstMatMap<T>(in, g.cin, g.pixels()).transpose();
      } else {
        std::vector<T> cols(g.patch() * g.pixels());
        detail::im2col(in, g, cols.data());
        per_sample[n] =
            dy * detail::ConstMatMap<T>(cols.data(), g.patch(), g.pixels()).transpose();
      }
    }
    if (req.input) {
      T* dx = grads.input.raw() + n * g.cin * g.h * g.w;
      if (pointwise) {
        detail::MatMap<T>(dx, g.cin, g.pixels()).noalias() = k.transpose() * dy;
      } else {
        detail::RowMatrix<T> dcols = k.transpose() * dy;
        detail::col2im_add(dcols.data(), g, dx);
      }
    }
  });

  if (req.params) {
    grads.kernel = Tensor<T>(kernel.shape());
    detail::MatMap<T> dk(grads.kernel.raw(), g.cout, g.patch());
    for (std::size_t n = 0; n < g.n; ++n) dk += per_sample[n];
    if (has_bias) {
      grads.bias = Tensor<T>({g.cout});
      for (std::size_t n = 0; n < g.n; ++n)
        for (std::size_t c = 0; c < g.cout; ++c) {
          const T* row = upstream.raw() + (n * g.cout + c) * g.pixels();
          T s = 0;
          for (std::size_t i = 0; i < g.pixels(); ++i) s += row[i];
          grads.bias[c] += s;
        }
    }
  }
  return grads;
}

// ---------------------------------------------------------------------------
// 2x2 max pooling, stride 2

template <typename T>
struct MaxPool2Result {
  Tensor<T> output;
  std::vector<std::size_t> argmax;  // flat input index per output element
};

template <typename T>
MaxPool2Result<T> maxpool2(const Tensor<T>& input) {
  detail::require_rank(input, 4, "maxpool2");
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (h % 2 != 0 || w % 2 != 0)
    throw ShapeError("maxpool2 requires even spatial extents, got " +
                     shape_string(input.shape()));
  MaxPool2Result<T> r{Tensor<T>({n, c, h / 2, w / 2}), {}};
  r.argmax.resize(r.output.size());
  std::size_t o = 0;
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const std::size_t base = plane * h * w;
    for (std::size_t y = 0; y < h; y += 2)
      for (std::size_t x = 0; x < w; x += 2, ++o) {
        std::size_t best = base + y * w + x;
        for (std::size_t cand : {base + y * w + x + 1, base + (y + 1) * w + x,
                                 base + (y + 1) * w + x + 1})
          if (input[cand] > input[best]) best = cand;
        r.output[o] = input[best];
        r.argmax[o] = best;
      }
  }
  return r;
}

/// Routes each upstream value to the stored argmax position.
template <typename T>
Tensor<T> maxpool2_backward(const Shape& input_shape, std::span<const std::size_t> argmax,
                            const Tensor<T>& upstream) {
  if (input_shape.size() != 4) throw ShapeError("maxpool2_backward: input must be rank 4");
  detail::require_upstream({input_shape[0], input_shape[1], input_shape[2] / 2,
                            input_shape[3] / 2},
                           upstream.shape(), "maxpool2_backward");
  if (argmax.size() != upstream.size())
    throw ShapeError("maxpool2_backward: argmax map does not match upstream gradient");
  Tensor<T> dx(input_shape);
  for (std::size_t i = 0; i < argmax.size(); ++i) dx[argmax[i]] += upstream[i];
  return dx;
}

// ---------------------------------------------------------------------------
// Matrix product

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_rank(a, 2, "matmul lhs");
  detail::require_rank(b, 2, "matmul rhs");
  if (a.dim(1) != b.dim(0))
    throw ShapeError("matmul: " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  Tensor<T> out({a.dim(0), b.dim(1)});
  detail::MatMap<T>(out.raw(), a.dim(0), b.dim(1)).noalias() =
      detail::ConstMatMap<T>(a.raw(), a.dim(0), a.dim(1)) *
      detail::ConstMatMap<T>(b.raw(), b.dim(0), b.dim(1));
  return out;
}

template <typename T>
struct BinaryGrads {
  Tensor<T> a;
  Tensor<T> b;
};

template <typename T>
BinaryGrads<T> matmul_backward(const Tensor<T>& a, const Tensor<T>& b, const Tensor<T>& upstream,
                               GradRequest req = {}) {
  detail::require_rank(a, 2, "matmul lhs");
  detail::require_rank(b, 2, "matmul rhs");
  detail::require_upstream({a.dim(0), b.dim(1)}, upstream.shape(), "matmul_backward");
  const detail::ConstMatMap<T> am(a.raw(), a.dim(0), a.dim(1));
  const detail::ConstMatMap<T> bm(b.raw(), b.dim(0), b.dim(1));
  const detail::ConstMatMap<T> up(upstream.raw(), upstream.dim(0), upstream.dim(1));
  BinaryGrads<T> g;
  if (req.input) {
    g.a = Tensor<T>(a.shape());
    detail::MatMap<T>(g.a.raw(), a.dim(0), a.dim(1)).noalias() = up * bm.transpose();
  }
  if (req.params) {
    g.b = Tensor<T>(b.shape());
    detail::MatMap<T>(g.b.raw(), b.dim(0), b.dim(1)).noalias() = am.transpose() * up;
  }
  return g;
}

// ---------------------------------------------------------------------------
// Element-wise arithmetic

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "add");
  Tensor<T> out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
  return out;
}

template <typename T>
BinaryGrads<T> add_backward(const Tensor<T>& a, const Tensor<T>& b, const Tensor<T>& upstream) {
  detail::require_same_shape(a, b, "add_backward");
  detail::require_upstream(a.shape(), upstream.shape(), "add_backward");
  return {upstream, upstream};
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "mul");
  Tensor<T> out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b[i];
  return out;
}

template <typename T>
BinaryGrads<T> mul_backward(const Tensor<T>& a, const Tensor<T>& b, const Tensor<T>& upstream) {
  detail::require_same_shape(a, b, "mul_backward");
  detail::require_upstream(a.shape(), upstream.shape(), "mul_backward");
  return {mul(upstream, b), mul(upstream, a)};
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  Tensor<T> out = a;
  for (auto& v : out.data()) v *= s;
  return out;
}

template <typename T>
Tensor<T> scale_backward(const Tensor<T>& a, T s, const Tensor<T>& upstream) {
  detail::require_upstream(a.shape(), upstream.shape(), "scale_backward");
  return scale(upstream, s);
}

// ---------------------------------------------------------------------------
// Activations

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> out = x;
  for (auto& v : out.data()) v = v < T(0) ? T(0) : v;  // NaN passes through
  return out;
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& x, const Tensor<T>& upstream) {
  detail::require_upstream(x.shape(), upstream.shape(), "relu_backward");
  Tensor<T> dx(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) dx[i] = x[i] > T(0) ? upstream[i] : T(0);
  return dx;
}

template <typename T>
T sigmoid(T x) {
  return T(1) / (T(1) + std::exp(-x));
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  Tensor<T> out = x;
  for (auto& v : out.data()) v = sigmoid(v);
  return out;
}

template <typename T>
Tensor<T> sigmoid_backward(const Tensor<T>& x, const Tensor<T>& upstream) {
  detail::require_upstream(x.shape(), upstream.shape(), "sigmoid_backward");
  Tensor<T> dx(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T s = sigmoid(x[i]);
    dx[i] = upstream[i] * s * (T(1) - s);
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Resampling

/// Replicates every pixel into a 2x2 block.
template <typename T>
Tensor<T> nearest_upscale2x(const Tensor<T>& x) {
  detail::require_rank(x, 4, "nearest_upscale2x");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor<T> out({n, c, 2 * h, 2 * w});
  for (std::size_t p = 0; p < n * c; ++p)
    for (std::size_t y = 0; y < 2 * h; ++y)
      for (std::size_t xx = 0; xx < 2 * w; ++xx)
        out[(p * 2 * h + y) * 2 * w + xx] = x[(p * h + y / 2) * w + xx / 2];
  return out;
}

template <typename T>
Tensor<T> nearest_upscale2x_backward(const Shape& input_shape, const Tensor<T>& upstream) {
  if (input_shape.size() != 4) throw ShapeError("nearest_upscale2x_backward: rank 4 expected");
  const std::size_t n = input_shape[0], c = input_shape[1], h = input_shape[2],
                    w = input_shape[3];
  detail::require_upstream({n, c, 2 * h, 2 * w}, upstream.shape(), "nearest_upscale2x_backward");
  Tensor<T> dx(input_shape);
  for (std::size_t p = 0; p < n * c; ++p)
    for (std::size_t y = 0; y < 2 * h; ++y)
      for (std::size_t xx = 0; xx < 2 * w; ++xx)
        dx[(p * h + y / 2) * w + xx / 2] += upstream[(p * 2 * h + y) * 2 * w + xx];
  return dx;
}

namespace detail {

/// Corner-aligned source coordinate of output index i.
inline double aligned_coord(std::size_t i, std::size_t in, std::size_t out) {
  if (out <= 1 || in <= 1) return 0.0;
  return static_cast<double>(i) * static_cast<double>(in - 1) / static_cast<double>(out - 1);
}

struct Lerp1D {
  std::size_t lo, hi;
  double t;
};

inline Lerp1D lerp_axis(std::size_t i, std::size_t in, std::size_t out) {
  const double src = aligned_coord(i, in, out);
  std::size_t lo = static_cast<std::size_t>(std::floor(src));
  if (lo > in - 1) lo = in - 1;
  const std::size_t hi = std::min(lo + 1, in - 1);
  return {lo, hi, src - static_cast<double>(lo)};
}

}  // namespace detail

/// Corner-aligned bilinear resize of a rank-2 map. Interpolation uses
/// std::lerp, so constants are preserved and results stay inside the input
/// range.
template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& map, std::size_t out_h, std::size_t out_w) {
  detail::require_rank(map, 2, "bilinear_resize");
  if (out_h < 1 || out_w < 1) throw ShapeError("bilinear_resize: target extents must be >= 1");
  const std::size_t h = map.dim(0), w = map.dim(1);
  Tensor<T> out({out_h, out_w});
  std::vector<detail::Lerp1D> cols(out_w);
  for (std::size_t x = 0; x < out_w; ++x) cols[x] = detail::lerp_axis(x, w, out_w);
  for (std::size_t y = 0; y < out_h; ++y) {
    const auto ry = detail::lerp_axis(y, h, out_h);
    const T ty = static_cast<T>(ry.t);
    for (std::size_t x = 0; x < out_w; ++x) {
      const auto& rx = cols[x];
      const T tx = static_cast<T>(rx.t);
      const T top = std::lerp(map.at(ry.lo, rx.lo), map.at(ry.lo, rx.hi), tx);
      const T bottom = std::lerp(map.at(ry.hi, rx.lo), map.at(ry.hi, rx.hi), tx);
      out.at(y, x) = std::lerp(top, bottom, ty);
    }
  }
  return out;
}

template <typename T>
Tensor<T> bilinear_resize_backward(const Shape& input_shape, const Tensor<T>& upstream) {
  if (input_shape.size() != 2) throw ShapeError("bilinear_resize_backward: rank 2 expected");
  if (upstream.rank() != 2) throw ShapeError("bilinear_resize_backward: rank-2 upstream expected");
  const std::size_t h = input_shape[0], w = input_shape[1];
  const std::size_t out_h = upstream.dim(0), out_w = upstream.dim(1);
  Tensor<T> dx(input_shape);
  for (std::size_t y = 0; y < out_h; ++y) {
    const auto ry = detail::lerp_axis(y, h, out_h);
    for (std::size_t x = 0; x < out_w; ++x) {
      const auto rx = detail::lerp_axis(x, w, out_w);
      const T g = upstream.at(y, x);
      const T ty = static_cast<T>(ry.t), tx = static_cast<T>(rx.t);
      dx.at(ry.lo, rx.lo) += g * (1 - ty) * (1 - tx);
      dx.at(ry.lo, rx.hi) += g * (1 - ty) * tx;
      dx.at(ry.hi, rx.lo) += g * ty * (1 - tx);
      dx.at(ry.hi, rx.hi) += g * ty * tx;
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Structural helpers

/// Concatenates rank-2 tensors with equal row counts along columns.
template <typename T>
Tensor<T> concat_columns(std::span<const Tensor<T>> parts) {
  if (parts.empty()) throw ShapeError("concat_columns: nothing to concatenate");
  const std::size_t rows = parts[0].dim(0);
  std::size_t cols = 0;
  for (const auto& p : parts) {
    detail::require_rank(p, 2, "concat_columns");
    if (p.dim(0) != rows) throw ShapeError("concat_columns: row count mismatch");
    cols += p.dim(1);
  }
  Tensor<T> out({rows, cols});
  std::size_t offset = 0;
  for (const auto& p : parts) {
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(p.raw() + r * p.dim(1), p.dim(1), out.raw() + r * cols + offset);
    offset += p.dim(1);
  }
  return out;
}

/// Copies columns [begin, begin+width) of a rank-2 tensor.
template <typename T>
Tensor<T> slice_columns(const Tensor<T>& t, std::size_t begin, std::size_t width) {
  detail::require_rank(t, 2, "slice_columns");
  if (begin + width > t.dim(1)) throw ShapeError("slice_columns: range out of bounds");
  Tensor<T> out({t.dim(0), width});
  for (std::size_t r = 0; r < t.dim(0); ++r)
    std::copy_n(t.raw() + r * t.dim(1) + begin, width, out.raw() + r * width);
  return out;
}

template <typename T>
T sum(const Tensor<T>& t) {
  T s = 0;
  for (T v : t.data()) s += v;
  return s;
}

}  // namespace eacnet

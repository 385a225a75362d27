#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cstnet/error.hpp"
#include "cstnet/kernels.hpp"
#include "cstnet/tensor.hpp"

namespace cstnet {

// ---------------------------------------------------------------------------
// Convolution (cross-correlation, no kernel flip)

template <class T>
struct ConvGrads {
  BasicTensor<T> dx;
  BasicTensor<T> dweight;
  BasicTensor<T> dbias;
};

namespace detail {

template <class T>
void check_conv(const BasicTensor<T>& x, const BasicTensor<T>& weight, const PatchGeometry& g) {
  require_rank(x.shape(), 4, "conv2d input");
  require_rank(weight.shape(), 4, "conv2d weight");
  if (weight.extent(1) != x.extent(1)) {
    throw ShapeError("conv2d weight " + weight.shape().str() + " does not accept input " + x.shape().str());
  }
  if (weight.extent(2) != g.kernel_h || weight.extent(3) != g.kernel_w) {
    throw ShapeError("conv2d weight extents disagree with kernel geometry");
  }
  g.validate(x.extent(2), x.extent(3));
}

}  // namespace detail

/// `weight` is Cout×Cin×kh×kw, `bias` has Cout entries. Lowered per sample to
/// im2col + matmul, so each sample's output lands directly in C×H×W order.
template <class T>
BasicTensor<T> conv2d_forward(const BasicTensor<T>& x, const BasicTensor<T>& weight, const BasicTensor<T>& bias,
                              std::size_t stride = 1, std::size_t pad = 0) {
  const PatchGeometry g{weight.rank() == 4 ? weight.extent(2) : 0, weight.rank() == 4 ? weight.extent(3) : 0,
                        stride, pad};
  detail::check_conv(x, weight, g);
  if (bias.size() != weight.extent(0)) throw ShapeError("conv2d bias size differs from output channels");
  const std::size_t n = x.extent(0), cin = x.extent(1), h = x.extent(2), w = x.extent(3);
  const std::size_t cout = weight.extent(0);
  const std::size_t oh = g.out_h(h), ow = g.out_w(w), spatial = oh * ow;
  const std::size_t patch = cin * g.kernel_h * g.kernel_w;

  BasicTensor<T> y({n, cout, oh, ow});
  std::vector<T> cols(patch * spatial);
  for (std::size_t s = 0; s < n; ++s) {
    detail::im2col_sample(x.ptr() + s * cin * h * w, cin, h, w, g, cols.data(), spatial);
    T* ys = y.ptr() + s * cout * spatial;
    detail::gemm_acc(cout, patch, spatial, weight.ptr(), patch, cols.data(), spatial, ys, spatial);
    for (std::size_t o = 0; o < cout; ++o) {
      T* yo = ys + o * spatial;
      for (std::size_t p = 0; p < spatial; ++p) yo[p] += bias[o];
    }
  }
  return y;
}

/// Gradients of conv2d_forward. Sample contributions to dweight/dbias are
/// added in sample order. `want_dx = false` skips the input gradient.
template <class T>
ConvGrads<T> conv2d_backward(const BasicTensor<T>& x, const BasicTensor<T>& weight, const BasicTensor<T>& dy,
                             std::size_t stride = 1, std::size_t pad = 0, bool want_dx = true) {
  const PatchGeometry g{weight.rank() == 4 ? weight.extent(2) : 0, weight.rank() == 4 ? weight.extent(3) : 0,
                        stride, pad};
  detail::check_conv(x, weight, g);
  const std::size_t cout = weight.extent(0);
  const std::size_t n = x.extent(0), cin = x.extent(1), h = x.extent(2), w = x.extent(3);
  const std::size_t oh = g.out_h(h), ow = g.out_w(w), spatial = oh * ow;
  const std::size_t patch = cin * g.kernel_h * g.kernel_w;
  if (!(dy.shape() == Shape{n, cout, oh, ow})) {
    throw ShapeError("conv2d output gradient " + dy.shape().str() + " has wrong shape");
  }

  ConvGrads<T> grads{want_dx ? BasicTensor<T>(x.shape()) : BasicTensor<T>(), BasicTensor<T>(weight.shape()),
                     BasicTensor<T>({cout})};
  std::vector<T> cols(patch * spatial);
  std::vector<T> cols_t(patch * spatial);
  std::vector<T> dcols(want_dx ? patch * spatial : 0);
  for (std::size_t s = 0; s < n; ++s) {
    const T* dys = dy.ptr() + s * cout * spatial;
    detail::im2col_sample(x.ptr() + s * cin * h * w, cin, h, w, g, cols.data(), spatial);
    detail::transpose(patch, spatial, cols.data(), cols_t.data());
    detail::gemm_acc(cout, spatial, patch, dys, spatial, cols_t.data(), patch, grads.dweight.ptr(), patch);
    for (std::size_t o = 0; o < cout; ++o) {
      T acc{};
      for (std::size_t p = 0; p < spatial; ++p) acc += dys[o * spatial + p];
      grads.dbias[o] += acc;
    }
    if (want_dx) {
      std::fill(dcols.begin(), dcols.end(), T{});
      detail::gemm_tn_acc(patch, cout, spatial, weight.ptr(), patch, dys, spatial, dcols.data(), spatial);
      detail::col2im_sample(dcols.data(), spatial, cin, h, w, g, grads.dx.ptr() + s * cin * h * w);
    }
  }
  return grads;
}

// ---------------------------------------------------------------------------
// Pooling

template <class T>
struct PoolResult {
  BasicTensor<T> y;
  std::vector<std::uint32_t> argmax;  // flat input index per output element
};

/// 2×2 window, stride 2. Ties go to the first element in row-major scan.
template <class T>
PoolResult<T> maxpool2_forward(const BasicTensor<T>& x) {
  require_rank(x.shape(), 4, "maxpool2 input");
  const std::size_t n = x.extent(0), c = x.extent(1), h = x.extent(2), w = x.extent(3);
  if (h % 2 != 0 || w % 2 != 0) {
    throw ShapeError("maxpool2 needs even spatial extents, got " + x.shape().str());
  }
  const std::size_t oh = h / 2, ow = w / 2;
  PoolResult<T> out{BasicTensor<T>({n, c, oh, ow}), std::vector<std::uint32_t>(n * c * oh * ow)};
  std::size_t o = 0;
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const std::size_t base = plane * h * w;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox, ++o) {
        std::size_t best = base + (2 * oy) * w + 2 * ox;
        const std::size_t candidates[3] = {best + 1, best + w, best + w + 1};
        for (const std::size_t idx : candidates) {
          if (x[idx] > x[best]) best = idx;
        }
        out.y[o] = x[best];
        out.argmax[o] = static_cast<std::uint32_t>(best);
      }
    }
  }
  return out;
}

template <class T>
BasicTensor<T> maxpool2_backward(const Shape& input_shape, std::span<const std::uint32_t> argmax,
                                 const BasicTensor<T>& dy) {
  if (dy.size() != argmax.size()) throw ShapeError("maxpool2 gradient size differs from forward output");
  BasicTensor<T> dx(input_shape);
  for (std::size_t o = 0; o < argmax.size(); ++o) dx[argmax[o]] += dy[o];
  return dx;
}

/// Mean over non-overlapping factor×factor windows.
template <class T>
BasicTensor<T> avgpool_forward(const BasicTensor<T>& x, std::size_t factor) {
  require_rank(x.shape(), 4, "avgpool input");
  const std::size_t n = x.extent(0), c = x.extent(1), h = x.extent(2), w = x.extent(3);
  if (factor == 0 || h % factor != 0 || w % factor != 0) {
    throw ShapeError("avgpool factor " + std::to_string(factor) + " does not divide " + x.shape().str());
  }
  const std::size_t oh = h / factor, ow = w / factor;
  const T scale = T(1) / static_cast<T>(factor * factor);
  BasicTensor<T> y({n, c, oh, ow});
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const T* xp = x.ptr() + plane * h * w;
    T* yp = y.ptr() + plane * oh * ow;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        T acc{};
        for (std::size_t i = 0; i < factor; ++i) {
          for (std::size_t j = 0; j < factor; ++j) acc += xp[(oy * factor + i) * w + ox * factor + j];
        }
        yp[oy * ow + ox] = acc * scale;
      }
    }
  }
  return y;
}

template <class T>
BasicTensor<T> avgpool_backward(const Shape& input_shape, const BasicTensor<T>& dy, std::size_t factor) {
  require_rank(input_shape, 4, "avgpool input");
  const std::size_t n = input_shape[0], c = input_shape[1], h = input_shape[2], w = input_shape[3];
  const std::size_t oh = h / factor, ow = w / factor;
  if (!(dy.shape() == Shape{n, c, oh, ow})) throw ShapeError("avgpool gradient has wrong shape");
  const T scale = T(1) / static_cast<T>(factor * factor);
  BasicTensor<T> dx(input_shape);
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const T* gp = dy.ptr() + plane * oh * ow;
    T* dp = dx.ptr() + plane * h * w;
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) dp[y * w + x] = gp[(y / factor) * ow + x / factor] * scale;
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Elementwise

template <class T>
BasicTensor<T> relu_forward(const BasicTensor<T>& x) {
  BasicTensor<T> y = x;
  for (auto& v : y.data()) v = v > T{} ? v : T{};
  return y;
}

/// Passes gradient where the forward input was strictly positive.
template <class T>
BasicTensor<T> relu_backward(const BasicTensor<T>& x, const BasicTensor<T>& dy) {
  if (!(x.shape() == dy.shape())) throw ShapeError("relu gradient shape differs from input");
  BasicTensor<T> dx(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) dx[i] = x[i] > T{} ? dy[i] : T{};
  return dx;
}

// ---------------------------------------------------------------------------
// Dense

template <class T>
struct DenseGrads {
  BasicTensor<T> dx;
  BasicTensor<T> dweight;
  BasicTensor<T> dbias;
};

/// y = x·W + b with x N×F, W F×K, b K.
template <class T>
BasicTensor<T> dense_forward(const BasicTensor<T>& x, const BasicTensor<T>& weight, const BasicTensor<T>& bias) {
  require_rank(x.shape(), 2, "dense input");
  require_rank(weight.shape(), 2, "dense weight");
  if (x.extent(1) != weight.extent(0)) {
    throw ShapeError("dense input " + x.shape().str() + " does not match weight " + weight.shape().str());
  }
  if (bias.size() != weight.extent(1)) throw ShapeError("dense bias size differs from output width");
  BasicTensor<T> y = matmul(x, weight);
  const std::size_t k = weight.extent(1);
  for (std::size_t s = 0; s < x.extent(0); ++s) {
    for (std::size_t j = 0; j < k; ++j) y[s * k + j] += bias[j];
  }
  return y;
}

template <class T>
DenseGrads<T> dense_backward(const BasicTensor<T>& x, const BasicTensor<T>& weight, const BasicTensor<T>& dy) {
  require_rank(dy.shape(), 2, "dense output gradient");
  if (dy.extent(0) != x.extent(0) || dy.extent(1) != weight.extent(1)) {
    throw ShapeError("dense output gradient " + dy.shape().str() + " has wrong shape");
  }
  DenseGrads<T> g{matmul_nt(dy, weight), matmul_tn(x, dy), BasicTensor<T>({weight.extent(1)})};
  const std::size_t k = weight.extent(1);
  for (std::size_t s = 0; s < dy.extent(0); ++s) {
    for (std::size_t j = 0; j < k; ++j) g.dbias[j] += dy[s * k + j];
  }
  return g;
}

// ---------------------------------------------------------------------------
// Softmax cross-entropy

/// Row-wise softmax with max subtraction.
template <class T>
BasicTensor<T> softmax(const BasicTensor<T>& logits) {
  require_rank(logits.shape(), 2, "softmax input");
  const std::size_t n = logits.extent(0), k = logits.extent(1);
  BasicTensor<T> p(logits.shape());
  for (std::size_t s = 0; s < n; ++s) {
    const T* z = logits.ptr() + s * k;
    const double zmax = *std::max_element(z, z + k);
    double total = 0.0;
    for (std::size_t j = 0; j < k; ++j) total += std::exp(static_cast<double>(z[j]) - zmax);
    for (std::size_t j = 0; j < k; ++j) p[s * k + j] = static_cast<T>(std::exp(static_cast<double>(z[j]) - zmax) / total);
  }
  return p;
}

template <class T>
struct LossResult {
  double loss = 0.0;               // mean over the batch
  std::vector<double> per_sample;  // −log p[label]
  BasicTensor<T> dlogits;          // (p − onehot) / N
};

template <class T>
LossResult<T> softmax_cross_entropy(const BasicTensor<T>& logits, std::span<const int> labels) {
  require_rank(logits.shape(), 2, "cross-entropy logits");
  const std::size_t n = logits.extent(0), k = logits.extent(1);
  if (labels.size() != n) throw ShapeError("label count differs from logit rows");
  LossResult<T> out{0.0, std::vector<double>(n), BasicTensor<T>(logits.shape())};
  std::vector<double> e(k);
  for (std::size_t s = 0; s < n; ++s) {
    const int label = labels[s];
    if (label < 0 || static_cast<std::size_t>(label) >= k) {
      throw InputError("label " + std::to_string(label) + " outside [0," + std::to_string(k) + ")");
    }
    const T* z = logits.ptr() + s * k;
    const double zmax = *std::max_element(z, z + k);
    double total = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      e[j] = std::exp(static_cast<double>(z[j]) - zmax);
      total += e[j];
    }
    const double log_total = std::log(total);
    out.per_sample[s] = -(static_cast<double>(z[label]) - zmax - log_total);
    for (std::size_t j = 0; j < k; ++j) {
      const double p = e[j] / total - (static_cast<std::size_t>(label) == j ? 1.0 : 0.0);
      out.dlogits[s * k + j] = static_cast<T>(p / static_cast<double>(n));
    }
    out.loss += out.per_sample[s];
  }
  out.loss /= static_cast<double>(n);
  return out;
}

}  // namespace cstnet

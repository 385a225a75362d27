#pragma once

#include <algorithm>
#include <cstddef>
#include <string>
#include <vector>

#include "cstnet/error.hpp"
#include "cstnet/tensor.hpp"

namespace cstnet {

namespace detail {

// C[m×n] += A[m×k] · B[k×n], all row-major with the given leading strides.
// Each C[i,j] accumulates its k products in increasing t order.
template <class T>
void gemm_acc(std::size_t m, std::size_t k, std::size_t n, const T* a, std::size_t lda, const T* b,
              std::size_t ldb, T* c, std::size_t ldc) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * ldc;
    const T* arow = a + i * lda;
    for (std::size_t t = 0; t < k; ++t) {
      const T av = arow[t];
      const T* brow = b + t * ldb;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m×n] += Aᵀ · B where A is stored k×m.
template <class T>
void gemm_tn_acc(std::size_t m, std::size_t k, std::size_t n, const T* a, std::size_t lda, const T* b,
                 std::size_t ldb, T* c, std::size_t ldc) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * ldc;
    for (std::size_t t = 0; t < k; ++t) {
      const T av = a[t * lda + i];
      const T* brow = b + t * ldb;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <class T>
void transpose(std::size_t rows, std::size_t cols, const T* src, T* dst) {
  constexpr std::size_t kBlock = 32;
  for (std::size_t r0 = 0; r0 < rows; r0 += kBlock) {
    for (std::size_t c0 = 0; c0 < cols; c0 += kBlock) {
      const std::size_t r1 = std::min(rows, r0 + kBlock);
      const std::size_t c1 = std::min(cols, c0 + kBlock);
      for (std::size_t r = r0; r < r1; ++r) {
        for (std::size_t c = c0; c < c1; ++c) dst[c * rows + r] = src[r * cols + c];
      }
    }
  }
}

}  // namespace detail

/// C = A · B for 2-D tensors.
template <class T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_rank(a.shape(), 2, "matmul lhs");
  require_rank(b.shape(), 2, "matmul rhs");
  if (a.extent(1) != b.extent(0)) {
    throw ShapeError("matmul inner extents differ: " + a.shape().str() + " x " + b.shape().str());
  }
  const std::size_t m = a.extent(0), k = a.extent(1), n = b.extent(1);
  BasicTensor<T> c({m, n});
  detail::gemm_acc(m, k, n, a.ptr(), k, b.ptr(), n, c.ptr(), n);
  return c;
}

/// C = Aᵀ · B.
template <class T>
BasicTensor<T> matmul_tn(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_rank(a.shape(), 2, "matmul_tn lhs");
  require_rank(b.shape(), 2, "matmul_tn rhs");
  if (a.extent(0) != b.extent(0)) {
    throw ShapeError("matmul_tn inner extents differ: " + a.shape().str() + " x " + b.shape().str());
  }
  const std::size_t k = a.extent(0), m = a.extent(1), n = b.extent(1);
  BasicTensor<T> c({m, n});
  detail::gemm_tn_acc(m, k, n, a.ptr(), m, b.ptr(), n, c.ptr(), n);
  return c;
}

/// C = A · Bᵀ.
template <class T>
BasicTensor<T> matmul_nt(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_rank(a.shape(), 2, "matmul_nt lhs");
  require_rank(b.shape(), 2, "matmul_nt rhs");
  if (a.extent(1) != b.extent(1)) {
    throw ShapeError("matmul_nt inner extents differ: " + a.shape().str() + " x " + b.shape().str());
  }
  const std::size_t m = a.extent(0), k = a.extent(1), n = b.extent(0);
  std::vector<T> bt(k * n);
  detail::transpose(n, k, b.ptr(), bt.data());
  BasicTensor<T> c({m, n});
  detail::gemm_acc(m, k, n, a.ptr(), k, bt.data(), n, c.ptr(), n);
  return c;
}

/// Patch geometry shared by im2col, col2im and conv2d.
struct PatchGeometry {
  std::size_t kernel_h = 1;
  std::size_t kernel_w = 1;
  std::size_t stride = 1;
  std::size_t pad = 0;

  std::size_t out_h(std::size_t h) const { return (h + 2 * pad - kernel_h) / stride + 1; }
  std::size_t out_w(std::size_t w) const { return (w + 2 * pad - kernel_w) / stride + 1; }

  void validate(std::size_t h, std::size_t w) const {
    if (kernel_h == 0 || kernel_w == 0 || stride == 0) {
      throw ShapeError("kernel extents and stride must be positive");
    }
    if (h + 2 * pad < kernel_h || w + 2 * pad < kernel_w) {
      throw ShapeError("kernel larger than padded input");
    }
    if ((h + 2 * pad - kernel_h) % stride != 0 || (w + 2 * pad - kernel_w) % stride != 0) {
      throw ShapeError("input " + std::to_string(h) + "x" + std::to_string(w) + " with kernel " +
                       std::to_string(kernel_h) + "x" + std::to_string(kernel_w) + ", pad " + std::to_string(pad) +
                       ", stride " + std::to_string(stride) + " does not tile evenly");
    }
  }
};

namespace detail {

// Unrolls one C×H×W sample into rows of length `ld`, columns [0, Ho·Wo).
template <class T>
void im2col_sample(const T* x, std::size_t channels, std::size_t h, std::size_t w, const PatchGeometry& g,
                   T* cols, std::size_t ld) {
  const std::size_t oh = g.out_h(h), ow = g.out_w(w);
  std::size_t row = 0;
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t ki = 0; ki < g.kernel_h; ++ki) {
      for (std::size_t kj = 0; kj < g.kernel_w; ++kj, ++row) {
        T* dst = cols + row * ld;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ki) - static_cast<std::ptrdiff_t>(g.pad);
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const std::ptrdiff_t ix =
                static_cast<std::ptrdiff_t>(ox * g.stride + kj) - static_cast<std::ptrdiff_t>(g.pad);
            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(h) &&
                                ix < static_cast<std::ptrdiff_t>(w);
            dst[oy * ow + ox] = inside ? x[(c * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix)] : T{};
          }
        }
      }
    }
  }
}

// Adjoint of im2col_sample: adds every column entry back into its source pixel.
template <class T>
void col2im_sample(const T* cols, std::size_t ld, std::size_t channels, std::size_t h, std::size_t w,
                   const PatchGeometry& g, T* x) {
  const std::size_t oh = g.out_h(h), ow = g.out_w(w);
  std::size_t row = 0;
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t ki = 0; ki < g.kernel_h; ++ki) {
      for (std::size_t kj = 0; kj < g.kernel_w; ++kj, ++row) {
        const T* src = cols + row * ld;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ki) - static_cast<std::ptrdiff_t>(g.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const std::ptrdiff_t ix =
                static_cast<std::ptrdiff_t>(ox * g.stride + kj) - static_cast<std::ptrdiff_t>(g.pad);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
            x[(c * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix)] += src[oy * ow + ox];
          }
        }
      }
    }
  }
}

}  // namespace detail

/// Unrolls receptive fields into columns: (C·kh·kw) × (N·Ho·Wo).
/// Rows are channel-major, then kernel row, then kernel column; columns are
/// ordered by sample, then output row, then output column. Padding reads 0.
template <class T>
BasicTensor<T> im2col(const BasicTensor<T>& x, const PatchGeometry& g) {
  require_rank(x.shape(), 4, "im2col input");
  const std::size_t n = x.extent(0), c = x.extent(1), h = x.extent(2), w = x.extent(3);
  g.validate(h, w);
  const std::size_t spatial = g.out_h(h) * g.out_w(w);
  const std::size_t ld = n * spatial;
  BasicTensor<T> cols({c * g.kernel_h * g.kernel_w, ld});
  for (std::size_t s = 0; s < n; ++s) {
    detail::im2col_sample(x.ptr() + s * c * h * w, c, h, w, g, cols.ptr() + s * spatial, ld);
  }
  return cols;
}

/// Scatter-add inverse of im2col onto an N×C×H×W tensor.
template <class T>
BasicTensor<T> col2im(const BasicTensor<T>& cols, const Shape& image_shape, const PatchGeometry& g) {
  require_rank(image_shape, 4, "col2im target");
  require_rank(cols.shape(), 2, "col2im input");
  const std::size_t n = image_shape[0], c = image_shape[1], h = image_shape[2], w = image_shape[3];
  g.validate(h, w);
  const std::size_t spatial = g.out_h(h) * g.out_w(w);
  if (cols.extent(0) != c * g.kernel_h * g.kernel_w || cols.extent(1) != n * spatial) {
    throw ShapeError("col2im: columns " + cols.shape().str() + " do not match image " + image_shape.str());
  }
  BasicTensor<T> x(image_shape);
  for (std::size_t s = 0; s < n; ++s) {
    detail::col2im_sample(cols.ptr() + s * spatial, n * spatial, c, h, w, g, x.ptr() + s * c * h * w);
  }
  return x;
}

}  // namespace cstnet

#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>

#include "cstnet/error.hpp"
#include "cstnet/tensor.hpp"

namespace cstnet {

/// A 3×3 color mixing matrix, row-major: output channel r = Σ_c m(r,c)·input c.
struct ColorMatrix {
  std::array<double, 9> m{};

  static ColorMatrix identity() { return ColorMatrix{{1, 0, 0, 0, 1, 0, 0, 0, 1}}; }

  double& operator()(std::size_t r, std::size_t c) { return m[r * 3 + c]; }
  double operator()(std::size_t r, std::size_t c) const { return m[r * 3 + c]; }

  ColorMatrix operator*(const ColorMatrix& rhs) const {
    ColorMatrix out;
    for (std::size_t r = 0; r < 3; ++r) {
      for (std::size_t c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (std::size_t t = 0; t < 3; ++t) acc += (*this)(r, t) * rhs(t, c);
        out(r, c) = acc;
      }
    }
    return out;
  }

  ColorMatrix transposed() const {
    ColorMatrix out;
    for (std::size_t r = 0; r < 3; ++r) {
      for (std::size_t c = 0; c < 3; ++c) out(r, c) = (*this)(c, r);
    }
    return out;
  }

  bool finite() const {
    for (const double v : m) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  template <class T>
  BasicTensor<T> to_tensor() const {
    BasicTensor<T> out({3, 3});
    for (std::size_t i = 0; i < 9; ++i) out[i] = static_cast<T>(m[i]);
    return out;
  }

  template <class T>
  static ColorMatrix from_tensor(const BasicTensor<T>& t, std::size_t sample = 0) {
    if (t.size() < (sample + 1) * 9) throw ShapeError("tensor does not hold a 3x3 matrix at sample index");
    ColorMatrix out;
    for (std::size_t i = 0; i < 9; ++i) out.m[i] = static_cast<double>(t[sample * 9 + i]);
    return out;
  }

  friend bool operator==(const ColorMatrix&, const ColorMatrix&) = default;
};

/// Nine space-separated reals, row-major, full round-trip precision.
inline std::string format_color_matrix(const ColorMatrix& w) {
  std::ostringstream out;
  out << std::setprecision(17);
  for (std::size_t i = 0; i < 9; ++i) out << (i ? " " : "") << w.m[i];
  return out.str();
}

inline ColorMatrix parse_color_matrix(const std::string& text) {
  std::istringstream in(text);
  ColorMatrix w;
  for (std::size_t i = 0; i < 9; ++i) {
    if (!(in >> w.m[i])) throw FormatError("color matrix needs 9 reals, found " + std::to_string(i));
  }
  std::string extra;
  if (in >> extra) throw FormatError("color matrix has trailing content: " + extra);
  return w;
}

inline void write_color_matrix(const ColorMatrix& w, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << format_color_matrix(w) << '\n';
  if (!out) throw IoError("write failed: " + path);
}

inline ColorMatrix read_color_matrix(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_color_matrix(buf.str());
}

namespace detail {

template <class T>
void check_color_operands(const BasicTensor<T>& x, const BasicTensor<T>& w) {
  require_rank(x.shape(), 4, "color transform input");
  if (x.extent(1) != 3) {
    throw ShapeError("color transform needs 3 channels, got " + std::to_string(x.extent(1)));
  }
  const bool global = w.rank() == 2 && w.extent(0) == 3 && w.extent(1) == 3;
  const bool per_sample = w.rank() == 3 && w.extent(0) == x.extent(0) && w.extent(1) == 3 && w.extent(2) == 3;
  if (!global && !per_sample) {
    throw ShapeError("color matrix shape " + w.shape().str() + " is neither (3,3) nor (N,3,3) for input " +
                     x.shape().str());
  }
}

}  // namespace detail

/// y[n,:,h,w] = W⁽ⁿ⁾ · x[n,:,h,w]. `w` is (3,3) for one shared matrix or
/// (N,3,3) for one matrix per sample. Purely linear: no clamping.
template <class T>
BasicTensor<T> color_transform_forward(const BasicTensor<T>& x, const BasicTensor<T>& w) {
  detail::check_color_operands(x, w);
  for (const T v : w.data()) {
    if (!std::isfinite(v)) throw NumericError("color matrix contains a non-finite entry");
  }
  const std::size_t n = x.extent(0), plane = x.extent(2) * x.extent(3);
  const bool per_sample = w.rank() == 3;
  BasicTensor<T> y(x.shape());
  for (std::size_t s = 0; s < n; ++s) {
    const T* m = w.ptr() + (per_sample ? s * 9 : 0);
    const T* xs = x.ptr() + s * 3 * plane;
    T* ys = y.ptr() + s * 3 * plane;
    for (std::size_t o = 0; o < 3; ++o) {
      const T w0 = m[o * 3], w1 = m[o * 3 + 1], w2 = m[o * 3 + 2];
      T* yo = ys + o * plane;
      for (std::size_t p = 0; p < plane; ++p) yo[p] = w0 * xs[p] + w1 * xs[plane + p] + w2 * xs[2 * plane + p];
    }
  }
  return y;
}

template <class T>
struct ColorTransformGrads {
  BasicTensor<T> dx;
  BasicTensor<T> dw;  // same shape as the forward matrix operand
};

/// dx = Wᵀ·dy per pixel; dW⁽ⁿ⁾ = Σ_pixels dy·xᵀ, additionally summed over n
/// (in sample order) when `w` is a single shared matrix.
template <class T>
ColorTransformGrads<T> color_transform_backward(const BasicTensor<T>& x, const BasicTensor<T>& w,
                                                const BasicTensor<T>& dy) {
  detail::check_color_operands(x, w);
  if (!(dy.shape() == x.shape())) {
    throw ShapeError("color transform gradient " + dy.shape().str() + " does not match input " + x.shape().str());
  }
  const std::size_t n = x.extent(0), plane = x.extent(2) * x.extent(3);
  const bool per_sample = w.rank() == 3;
  ColorTransformGrads<T> g{BasicTensor<T>(x.shape()), BasicTensor<T>(w.shape())};
  for (std::size_t s = 0; s < n; ++s) {
    const T* m = w.ptr() + (per_sample ? s * 9 : 0);
    const T* xs = x.ptr() + s * 3 * plane;
    const T* dys = dy.ptr() + s * 3 * plane;
    T* dxs = g.dx.ptr() + s * 3 * plane;
    for (std::size_t c = 0; c < 3; ++c) {
      const T w0 = m[c], w1 = m[3 + c], w2 = m[6 + c];
      T* dxc = dxs + c * plane;
      for (std::size_t p = 0; p < plane; ++p) {
        dxc[p] = w0 * dys[p] + w1 * dys[plane + p] + w2 * dys[2 * plane + p];
      }
    }
    T* dm = g.dw.ptr() + (per_sample ? s * 9 : 0);
    for (std::size_t o = 0; o < 3; ++o) {
      for (std::size_t c = 0; c < 3; ++c) {
        T acc{};
        const T* dyo = dys + o * plane;
        const T* xc = xs + c * plane;
        for (std::size_t p = 0; p < plane; ++p) acc += dyo[p] * xc[p];
        dm[o * 3 + c] += acc;
      }
    }
  }
  return g;
}

/// Broadcast add of a per-channel offset (the optional affine extension).
template <class T>
BasicTensor<T> channel_offset_forward(const BasicTensor<T>& x, const BasicTensor<T>& offset) {
  require_rank(x.shape(), 4, "channel offset input");
  if (offset.size() != x.extent(1)) throw ShapeError("channel offset size does not match channel count");
  BasicTensor<T> y = x;
  const std::size_t plane = x.extent(2) * x.extent(3);
  for (std::size_t s = 0; s < x.extent(0); ++s) {
    for (std::size_t c = 0; c < x.extent(1); ++c) {
      T* yc = y.ptr() + (s * x.extent(1) + c) * plane;
      for (std::size_t p = 0; p < plane; ++p) yc[p] += offset[c];
    }
  }
  return y;
}

template <class T>
BasicTensor<T> channel_offset_backward(const BasicTensor<T>& dy) {
  require_rank(dy.shape(), 4, "channel offset gradient");
  BasicTensor<T> db({dy.extent(1)});
  const std::size_t plane = dy.extent(2) * dy.extent(3);
  for (std::size_t s = 0; s < dy.extent(0); ++s) {
    for (std::size_t c = 0; c < dy.extent(1); ++c) {
      const T* g = dy.ptr() + (s * dy.extent(1) + c) * plane;
      T acc{};
      for (std::size_t p = 0; p < plane; ++p) acc += g[p];
      db[c] += acc;
    }
  }
  return db;
}

}  // namespace cstnet

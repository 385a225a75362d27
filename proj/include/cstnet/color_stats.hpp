#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <sstream>
#include <string>

#include "cstnet/color_transform.hpp"
#include "cstnet/data.hpp"
#include "cstnet/error.hpp"
#include "cstnet/tensor.hpp"

namespace cstnet {

/// Channel mean and covariance over pixels treated as i.i.d. RGB vectors.
struct ChannelStats {
  std::array<double, 3> mean{};
  ColorMatrix cov{};
  std::size_t pixels = 0;
};

namespace detail {

// Two passes over a pixel source `get(i, c)` in [0,1] units; divisor n−1.
// Values are shifted by the first pixel, so constant data gives exact zeros.
template <class Get>
ChannelStats pixel_stats(std::size_t count, Get&& get) {
  if (count < 2) throw InputError("channel statistics need at least 2 pixels, got " + std::to_string(count));
  ChannelStats st;
  st.pixels = count;
  const std::array<double, 3> shift{get(0, 0), get(0, 1), get(0, 2)};
  std::array<double, 3> offset{};
  for (std::size_t i = 0; i < count; ++i) {
    for (std::size_t c = 0; c < 3; ++c) offset[c] += get(i, c) - shift[c];
  }
  for (double& o : offset) o /= static_cast<double>(count);
  for (std::size_t c = 0; c < 3; ++c) st.mean[c] = shift[c] + offset[c];
  std::array<double, 6> acc{};  // upper triangle 00 01 02 11 12 22
  for (std::size_t i = 0; i < count; ++i) {
    const double r = get(i, 0) - shift[0] - offset[0], g = get(i, 1) - shift[1] - offset[1],
                 b = get(i, 2) - shift[2] - offset[2];
    acc[0] += r * r;
    acc[1] += r * g;
    acc[2] += r * b;
    acc[3] += g * g;
    acc[4] += g * b;
    acc[5] += b * b;
  }
  const double denom = static_cast<double>(count - 1);
  const std::size_t map[3][3] = {{0, 1, 2}, {1, 3, 4}, {2, 4, 5}};
  for (std::size_t r = 0; r < 3; ++r) {
    for (std::size_t c = 0; c < 3; ++c) st.cov(r, c) = acc[map[r][c]] / denom;
  }
  return st;
}

}  // namespace detail

/// Statistics over every pixel of the listed images (all images if empty).
inline ChannelStats channel_stats(const Dataset& ds, std::span<const std::size_t> indices = {}) {
  std::vector<std::size_t> all;
  if (indices.empty()) {
    all.resize(ds.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    indices = all;
  }
  constexpr std::size_t plane = Dataset::kSide * Dataset::kSide;
  const std::uint8_t* base = ds.images.data();
  return detail::pixel_stats(indices.size() * plane, [&](std::size_t i, std::size_t c) {
    const std::size_t img = indices[i / plane];
    return static_cast<double>(base[img * Dataset::kImageBytes + c * plane + i % plane]) / 255.0;
  });
}

/// Statistics over an N×3×H×W tensor.
template <class T>
ChannelStats channel_stats(const BasicTensor<T>& images) {
  require_rank(images.shape(), 4, "channel_stats input");
  if (images.extent(1) != 3) throw ShapeError("channel_stats needs 3 channels");
  const std::size_t plane = images.extent(2) * images.extent(3);
  return detail::pixel_stats(images.extent(0) * plane, [&](std::size_t i, std::size_t c) {
    return static_cast<double>(images[(i / plane * 3 + c) * plane + i % plane]);
  });
}

/// Eigenvalues (descending) and matching unit eigenvectors as columns of `vectors`.
struct SymmetricEigen {
  std::array<double, 3> values{};
  ColorMatrix vectors{};
};

/// Cyclic Jacobi for a symmetric 3×3 matrix. Each eigenvector is signed so
/// its largest-magnitude component is positive.
inline SymmetricEigen eigen_symmetric3(const ColorMatrix& m) {
  double a[3][3];
  for (std::size_t r = 0; r < 3; ++r) {
    for (std::size_t c = 0; c < 3; ++c) {
      if (std::abs(m(r, c) - m(c, r)) > 1e-9 * (1.0 + std::abs(m(r, c)))) {
        throw InputError("eigen_symmetric3: matrix is not symmetric");
      }
      a[r][c] = 0.5 * (m(r, c) + m(c, r));
    }
  }
  double v[3][3] = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
  for (int sweep = 0; sweep < 64; ++sweep) {
    const double off = a[0][1] * a[0][1] + a[0][2] * a[0][2] + a[1][2] * a[1][2];
    const double diag = a[0][0] * a[0][0] + a[1][1] * a[1][1] + a[2][2] * a[2][2];
    if (off == 0.0 || off <= 1e-32 * diag) break;
    for (int p = 0; p < 2; ++p) {
      for (int q = p + 1; q < 3; ++q) {
        if (a[p][q] == 0.0) continue;
        const double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (int k = 0; k < 3; ++k) {
          const double akp = a[k][p], akq = a[k][q];
          a[k][p] = c * akp - s * akq;
          a[k][q] = s * akp + c * akq;
        }
        for (int k = 0; k < 3; ++k) {
          const double apk = a[p][k], aqk = a[q][k];
          a[p][k] = c * apk - s * aqk;
          a[q][k] = s * apk + c * aqk;
        }
        for (int k = 0; k < 3; ++k) {
          const double vkp = v[k][p], vkq = v[k][q];
          v[k][p] = c * vkp - s * vkq;
          v[k][q] = s * vkp + c * vkq;
        }
      }
    }
  }
  std::array<std::size_t, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return a[i][i] > a[j][j]; });
  SymmetricEigen out;
  for (std::size_t k = 0; k < 3; ++k) {
    const std::size_t src = order[k];
    out.values[k] = a[src][src];
    std::size_t lead = 0;
    for (std::size_t r = 1; r < 3; ++r) {
      if (std::abs(v[r][src]) > std::abs(v[lead][src])) lead = r;
    }
    const double sign = v[lead][src] < 0 ? -1.0 : 1.0;
    for (std::size_t r = 0; r < 3; ++r) out.vectors(r, k) = sign * v[r][src];
  }
  return out;
}

enum class KlMode { rotation, whitening };

inline KlMode parse_kl_mode(const std::string& name) {
  if (name == "rotation") return KlMode::rotation;
  if (name == "whitening") return KlMode::whitening;
  throw InputError("unknown transform mode '" + name + "' (expected rotation or whitening)");
}

inline constexpr double kWhiteningFloor = 1e-6;

/// Rotation: Qᵀ (rows are eigenvectors, largest variance first).
/// Whitening: (Λ + floor)^(−1/2) Qᵀ, refusing eigenvalues below the floor.
inline ColorMatrix fit_kl_transform(const ChannelStats& stats, KlMode mode) {
  const SymmetricEigen eig = eigen_symmetric3(stats.cov);
  ColorMatrix out = eig.vectors.transposed();
  if (mode == KlMode::whitening) {
    for (std::size_t k = 0; k < 3; ++k) {
      if (eig.values[k] < kWhiteningFloor) {
        std::ostringstream msg;
        msg << "cannot whiten: eigenvalue " << k << " = " << eig.values[k] << " is below floor " << kWhiteningFloor;
        throw ConditioningError(msg.str());
      }
      const double scale = 1.0 / std::sqrt(eig.values[k] + kWhiteningFloor);
      for (std::size_t c = 0; c < 3; ++c) out(k, c) *= scale;
    }
  }
  return out;
}

}  // namespace cstnet

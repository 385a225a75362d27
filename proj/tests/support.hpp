#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "cstnet/cstnet.hpp"

namespace testing_support {

namespace fs = std::filesystem;
using namespace cstnet;

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = fs::temp_directory_path() /
            ("cstnet-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  std::string str() const { return path_.string(); }
  std::string operator/(const std::string& name) const { return (path_ / name).string(); }

 private:
  fs::path path_;
};

inline void write_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline std::vector<std::uint8_t> read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::string read_text(const std::string& path) {
  const auto b = read_bytes(path);
  return {b.begin(), b.end()};
}

// Distinct RGB colours, one per class.
inline constexpr std::array<std::array<std::uint8_t, 3>, 10> kClassColors{{
    {230, 25, 75}, {60, 180, 75}, {255, 225, 25}, {0, 130, 200}, {245, 130, 48},
    {145, 30, 180}, {70, 240, 240}, {240, 50, 230}, {128, 128, 0}, {0, 0, 128},
}};

/// CIFAR-format records. Each image is its class colour plus pixel noise of
/// ±`noise` and a brightness jitter, so the classes are learnable but not
/// trivially identical.
inline std::vector<std::uint8_t> synthetic_records(std::size_t n, std::uint64_t seed, int noise = 40) {
  std::mt19937_64 gen(seed);
  std::vector<std::uint8_t> out;
  out.reserve(n * Dataset::kRecordBytes);
  for (std::size_t i = 0; i < n; ++i) {
    const int label = static_cast<int>(gen() % 10);
    const int jitter = noise > 0 ? static_cast<int>(gen() % (2 * noise + 1)) - noise : 0;
    out.push_back(static_cast<std::uint8_t>(label));
    for (int c = 0; c < 3; ++c) {
      for (std::size_t p = 0; p < Dataset::kSide * Dataset::kSide; ++p) {
        const int dn = noise > 0 ? static_cast<int>(gen() % (2 * noise + 1)) - noise : 0;
        const int v = kClassColors[static_cast<std::size_t>(label)][static_cast<std::size_t>(c)] + jitter / 2 + dn;
        out.push_back(static_cast<std::uint8_t>(std::clamp(v, 0, 255)));
      }
    }
  }
  return out;
}

/// Writes data_batch_1.bin (and more batches if `per_batch` < n).
inline void write_synthetic_cifar_dir(const std::string& dir, std::size_t n, std::uint64_t seed, int noise = 40,
                                      std::size_t per_batch = 0) {
  fs::create_directories(dir);
  if (per_batch == 0) per_batch = n;
  const auto all = synthetic_records(n, seed, noise);
  for (std::size_t b = 0; b * per_batch < n; ++b) {
    const std::size_t first = b * per_batch, last = std::min(n, first + per_batch);
    std::vector<std::uint8_t> part(all.begin() + static_cast<std::ptrdiff_t>(first * Dataset::kRecordBytes),
                                   all.begin() + static_cast<std::ptrdiff_t>(last * Dataset::kRecordBytes));
    write_bytes(dir + "/data_batch_" + std::to_string(b + 1) + ".bin", part);
  }
}

inline Dataset synthetic_dataset(std::size_t n, std::uint64_t seed, int noise = 40) {
  return parse_cifar10_batch(synthetic_records(n, seed, noise), "synthetic");
}

/// Solid colour images, label i % 10.
/// Primaries plus black; label i % 4.
inline constexpr std::array<std::array<std::uint8_t, 3>, 4> kSolidColors{{
    {255, 0, 0}, {0, 255, 0}, {0, 0, 255}, {0, 0, 0}}};

inline Dataset solid_color_dataset(std::size_t n) {
  std::vector<std::uint8_t> bytes;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t label = i % kSolidColors.size();
    bytes.push_back(static_cast<std::uint8_t>(label));
    for (std::size_t c = 0; c < 3; ++c) {
      bytes.insert(bytes.end(), Dataset::kSide * Dataset::kSide, kSolidColors[label][c]);
    }
  }
  return parse_cifar10_batch(bytes, "solid");
}

/// Real CIFAR-10 location: $CSTNET_CIFAR10_DIR, else data/cifar-10-batches-bin
/// relative to the source tree. Empty when data_batch_1.bin is absent.
inline std::string real_cifar_dir() {
  std::vector<std::string> candidates;
  if (const char* env = std::getenv("CSTNET_CIFAR10_DIR")) candidates.emplace_back(env);
#ifdef CSTNET_SOURCE_DIR
  candidates.emplace_back(std::string(CSTNET_SOURCE_DIR) + "/data/cifar-10-batches-bin");
#endif
  candidates.emplace_back("data/cifar-10-batches-bin");
  for (const auto& c : candidates) {
    if (fs::exists(fs::path(c) / "data_batch_1.bin")) return c;
  }
  return {};
}

template <class T>
BasicTensor<T> uniform_tensor(const Shape& shape, double lo, double hi, std::mt19937_64& gen) {
  std::uniform_real_distribution<double> dist(lo, hi);
  BasicTensor<T> t(shape);
  for (auto& v : t.data()) v = static_cast<T>(dist(gen));
  return t;
}

// ---------------------------------------------------------------------------
// Oracles: plain loops in double, written independently of the library.

inline std::vector<double> naive_matmul(const std::vector<double>& a, const std::vector<double>& b, std::size_t m,
                                        std::size_t k, std::size_t n) {
  std::vector<double> c(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t t = 0; t < k; ++t) c[i * n + j] += a[i * k + t] * b[t * n + j];
  return c;
}

/// Six nested loops (plus bias) over N, Cout, Ho, Wo, Cin, kh·kw.
template <class T>
std::vector<double> direct_conv(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& b,
                                std::size_t stride, std::size_t pad) {
  const std::size_t n = x.extent(0), cin = x.extent(1), h = x.extent(2), wd = x.extent(3);
  const std::size_t cout = w.extent(0), kh = w.extent(2), kw = w.extent(3);
  const std::size_t ho = (h + 2 * pad - kh) / stride + 1, wo = (wd + 2 * pad - kw) / stride + 1;
  std::vector<double> y(n * cout * ho * wo);
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t o = 0; o < cout; ++o)
      for (std::size_t i = 0; i < ho; ++i)
        for (std::size_t j = 0; j < wo; ++j) {
          double acc = b[o];
          for (std::size_t c = 0; c < cin; ++c)
            for (std::size_t u = 0; u < kh; ++u)
              for (std::size_t v = 0; v < kw; ++v) {
                const long r = static_cast<long>(i * stride + u) - static_cast<long>(pad);
                const long q = static_cast<long>(j * stride + v) - static_cast<long>(pad);
                if (r < 0 || q < 0 || r >= static_cast<long>(h) || q >= static_cast<long>(wd)) continue;
                acc += static_cast<double>(x[((s * cin + c) * h + static_cast<std::size_t>(r)) * wd +
                                             static_cast<std::size_t>(q)]) *
                       static_cast<double>(w[((o * cin + c) * kh + u) * kw + v]);
              }
          y[((s * cout + o) * ho + i) * wo + j] = acc;
        }
  return y;
}

/// y[n,:,h,w] = W(n) · x[n,:,h,w], one pixel at a time.
template <class T>
std::vector<double> per_pixel_transform(const BasicTensor<T>& x, const BasicTensor<T>& w) {
  const std::size_t n = x.extent(0), plane = x.extent(2) * x.extent(3);
  std::vector<double> y(x.size());
  for (std::size_t s = 0; s < n; ++s) {
    const std::size_t wo = w.rank() == 3 ? s * 9 : 0;
    for (std::size_t p = 0; p < plane; ++p) {
      const double px[3] = {x[(s * 3 + 0) * plane + p], x[(s * 3 + 1) * plane + p], x[(s * 3 + 2) * plane + p]};
      for (std::size_t r = 0; r < 3; ++r) {
        y[(s * 3 + r) * plane + p] = w[wo + r * 3] * px[0] + w[wo + r * 3 + 1] * px[1] + w[wo + r * 3 + 2] * px[2];
      }
    }
  }
  return y;
}

struct XentOracle {
  double loss = 0.0;
  std::vector<double> dlogits;
};

/// loss = mean(log Σ exp(z) − z_y) via long double log-sum-exp.
template <class T>
XentOracle direct_xent(const BasicTensor<T>& logits, const std::vector<int>& labels) {
  const std::size_t n = logits.extent(0), k = logits.extent(1);
  XentOracle o;
  o.dlogits.resize(n * k);
  for (std::size_t s = 0; s < n; ++s) {
    long double m = logits[s * k];
    for (std::size_t j = 1; j < k; ++j) m = std::max<long double>(m, logits[s * k + j]);
    long double z = 0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(static_cast<long double>(logits[s * k + j]) - m);
    const long double lse = m + std::log(z);
    o.loss += static_cast<double>(lse - static_cast<long double>(logits[s * k + static_cast<std::size_t>(labels[s])]));
    for (std::size_t j = 0; j < k; ++j) {
      const long double p = std::exp(static_cast<long double>(logits[s * k + j]) - lse);
      o.dlogits[s * k + j] =
          static_cast<double>((p - (static_cast<int>(j) == labels[s] ? 1.0L : 0.0L)) / static_cast<long double>(n));
    }
  }
  o.loss /= static_cast<double>(n);
  return o;
}

/// Largest value of each 2×2 window by scanning it.
template <class T>
std::vector<double> window_scan_maxpool(const BasicTensor<T>& x) {
  const std::size_t n = x.extent(0), c = x.extent(1), h = x.extent(2), w = x.extent(3);
  std::vector<double> y;
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i + 1 < h; i += 2)
        for (std::size_t j = 0; j + 1 < w; j += 2) {
          double best = -INFINITY;
          for (std::size_t u = 0; u < 2; ++u)
            for (std::size_t v = 0; v < 2; ++v) best = std::max<double>(best, x[((s * c + ch) * h + i + u) * w + j + v]);
          y.push_back(best);
        }
  return y;
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return a.size() == b.size() ? m : INFINITY;
}

template <class T>
std::vector<double> as_doubles(const BasicTensor<T>& t) {
  return {t.data().begin(), t.data().end()};
}

/// Reads tensor records from a checkpoint file with nothing but byte
/// arithmetic; returns (name, extents) pairs.
struct RawTensorEntry {
  std::string name;
  std::vector<std::uint32_t> extents;
  std::vector<float> values;
};

inline std::vector<RawTensorEntry> independent_checkpoint_scan(const std::vector<std::uint8_t>& b) {
  auto u16 = [&](std::size_t at) { return static_cast<std::uint32_t>(b.at(at) | (b.at(at + 1) << 8)); };
  auto u32 = [&](std::size_t at) {
    return static_cast<std::uint32_t>(b.at(at)) | static_cast<std::uint32_t>(b.at(at + 1)) << 8 |
           static_cast<std::uint32_t>(b.at(at + 2)) << 16 | static_cast<std::uint32_t>(b.at(at + 3)) << 24;
  };
  std::vector<RawTensorEntry> out;
  std::size_t pos = 4 + 2;
  pos += 4 + u32(pos);
  while (pos < b.size()) {
    RawTensorEntry e;
    const std::uint32_t len = u16(pos);
    pos += 2;
    e.name.assign(b.begin() + static_cast<std::ptrdiff_t>(pos), b.begin() + static_cast<std::ptrdiff_t>(pos + len));
    pos += len;
    const std::uint32_t rank = b.at(pos++);
    std::size_t count = 1;
    for (std::uint32_t r = 0; r < rank; ++r, pos += 4) {
      e.extents.push_back(u32(pos));
      count *= e.extents.back();
    }
    for (std::size_t i = 0; i < count; ++i, pos += 4) {
      const std::uint32_t bits = u32(pos);
      float f;
      std::memcpy(&f, &bits, 4);
      e.values.push_back(f);
    }
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace testing_support

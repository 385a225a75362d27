#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cstnet/error.hpp"
#include "cstnet/rng.hpp"
#include "cstnet/tensor.hpp"

namespace cstnet {

/// Labelled 3×32×32 byte images with the file/offset each record came from.
struct Dataset {
  static constexpr std::size_t kSide = 32;
  static constexpr std::size_t kChannels = 3;
  static constexpr std::size_t kImageBytes = kChannels * kSide * kSide;  // 3072
  static constexpr std::size_t kRecordBytes = kImageBytes + 1;             // 3073
  static constexpr int kClasses = 10;

  struct Origin {
    std::size_t file = 0;       // index into `files`
    std::uint64_t offset = 0;   // byte offset of the record's label byte
  };

  std::vector<std::uint8_t> images;  // N×3×32×32, plane order R, G, B
  std::vector<int> labels;
  std::vector<std::string> files;
  std::vector<Origin> origins;

  std::size_t size() const { return labels.size(); }

  std::span<const std::uint8_t> image(std::size_t i) const {
    return std::span<const std::uint8_t>(images).subspan(i * kImageBytes, kImageBytes);
  }

  /// Throws InputError unless every label is in range and counts agree.
  void validate() const {
    if (images.size() != labels.size() * kImageBytes) {
      throw InputError("dataset holds " + std::to_string(images.size()) + " image bytes for " +
                       std::to_string(labels.size()) + " labels");
    }
    for (const int label : labels) {
      if (label < 0 || label >= kClasses) throw InputError("dataset label " + std::to_string(label) + " out of range");
    }
  }

  void append(const Dataset& other) {
    const std::size_t file_base = files.size();
    files.insert(files.end(), other.files.begin(), other.files.end());
    images.insert(images.end(), other.images.begin(), other.images.end());
    labels.insert(labels.end(), other.labels.begin(), other.labels.end());
    for (Origin o : other.origins) {
      o.file += file_base;
      origins.push_back(o);
    }
  }
};

/// Parses one CIFAR-10 binary batch: records of 1 label byte then 1024 red,
/// 1024 green and 1024 blue bytes, each plane row-major 32×32.
inline Dataset parse_cifar10_batch(std::span<const std::uint8_t> bytes, const std::string& source) {
  if (bytes.empty() || bytes.size() % Dataset::kRecordBytes != 0) {
    throw FormatError(source + ": size " + std::to_string(bytes.size()) + " is not a positive multiple of " +
                      std::to_string(Dataset::kRecordBytes));
  }
  const std::size_t n = bytes.size() / Dataset::kRecordBytes;
  Dataset ds;
  ds.files.push_back(source);
  ds.images.resize(n * Dataset::kImageBytes);
  ds.labels.resize(n);
  ds.origins.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t offset = i * Dataset::kRecordBytes;
    const std::uint8_t label = bytes[offset];
    if (label > 9) {
      throw FormatError(source + ": record " + std::to_string(i) + " has label byte " + std::to_string(label));
    }
    ds.labels[i] = label;
    ds.origins[i] = {0, offset};
    std::copy_n(bytes.begin() + static_cast<std::ptrdiff_t>(offset + 1), Dataset::kImageBytes,
                ds.images.begin() + static_cast<std::ptrdiff_t>(i * Dataset::kImageBytes));
  }
  return ds;
}

inline std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed: " + path);
  return bytes;
}

inline Dataset load_cifar10_batch(const std::string& path) {
  const auto bytes = read_file_bytes(path);
  return parse_cifar10_batch(bytes, path);
}

/// Loads data_batch_1.bin, then data_batch_2.bin, ... from `dir` until at
/// least `min_records` records are present or the batches run out.
inline Dataset load_cifar10_dir(const std::string& dir, std::size_t min_records = 1) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw IoError("data directory not found: " + dir);
  Dataset ds;
  for (int b = 1; b <= 5 && ds.size() < min_records; ++b) {
    const fs::path file = fs::path(dir) / ("data_batch_" + std::to_string(b) + ".bin");
    if (!fs::exists(file)) {
      if (b == 1) throw IoError("missing " + file.string());
      break;
    }
    ds.append(load_cifar10_batch(file.string()));
  }
  return ds;
}

/// Per-channel means on the [0,1] scale, subtracted when present.
using ChannelMean = std::array<double, 3>;

/// Bytes to reals in [0,1] by division by 255.
template <class T = float>
BasicTensor<T> normalize(std::span<const std::uint8_t> bytes, const Shape& shape,
                         const std::optional<ChannelMean>& mean = std::nullopt) {
  if (bytes.size() != shape.size()) throw ShapeError("byte count does not match shape " + shape.str());
  BasicTensor<T> out(shape);
  for (std::size_t i = 0; i < bytes.size(); ++i) out[i] = static_cast<T>(bytes[i]) / T(255);
  if (mean) {
    require_rank(shape, 4, "mean-subtracted images");
    if (shape[1] != 3) throw ShapeError("mean subtraction needs 3 channels");
    const std::size_t plane = shape[2] * shape[3];
    for (std::size_t s = 0; s < shape[0]; ++s) {
      for (std::size_t c = 0; c < 3; ++c) {
        T* p = out.ptr() + (s * 3 + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) p[i] -= static_cast<T>((*mean)[c]);
      }
    }
  }
  return out;
}

/// Gathers the listed images into an N×3×32×32 tensor.
template <class T = float>
BasicTensor<T> batch_images(const Dataset& ds, std::span<const std::size_t> indices,
                            const std::optional<ChannelMean>& mean = std::nullopt) {
  if (indices.empty()) throw InputError("empty batch");
  std::vector<std::uint8_t> bytes(indices.size() * Dataset::kImageBytes);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= ds.size()) throw InputError("image index " + std::to_string(indices[i]) + " out of range");
    const auto img = ds.image(indices[i]);
    std::copy(img.begin(), img.end(), bytes.begin() + static_cast<std::ptrdiff_t>(i * Dataset::kImageBytes));
  }
  return normalize<T>(bytes, {indices.size(), 3, Dataset::kSide, Dataset::kSide}, mean);
}

inline std::vector<int> batch_labels(const Dataset& ds, std::span<const std::size_t> indices) {
  std::vector<int> labels(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) labels[i] = ds.labels.at(indices[i]);
  return labels;
}

/// In-place Fisher-Yates shuffle driven by `rng`.
inline void shuffle_indices(std::vector<std::size_t>& idx, RngStream& rng) {
  for (std::size_t i = idx.size(); i > 1; --i) {
    const std::size_t j = rng.uniform_index(i);
    std::swap(idx[i - 1], idx[j]);
  }
}

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// Shuffles all indices with stream (seed, "split") and takes prefixes.
inline Split make_split(const Dataset& ds, std::size_t n_train, std::size_t n_test, std::uint64_t seed) {
  if (n_train + n_test > ds.size()) {
    throw InputError("split of " + std::to_string(n_train) + "+" + std::to_string(n_test) + " exceeds " +
                     std::to_string(ds.size()) + " records");
  }
  std::vector<std::size_t> idx(ds.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  RngStream rng(seed, "split");
  shuffle_indices(idx, rng);
  Split split;
  split.train.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
  split.test.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train),
                    idx.begin() + static_cast<std::ptrdiff_t>(n_train + n_test));
  return split;
}

/// Training order for one epoch, a pure function of (train indices, seed, epoch).
inline std::vector<std::size_t> epoch_order(std::span<const std::size_t> train, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(train.begin(), train.end());
  RngStream rng(seed, "epoch/" + std::to_string(epoch));
  shuffle_indices(order, rng);
  return order;
}

/// Binary PPM (P6) after clamping to [0,1] and scaling with round-half-up.
/// Accepts 3×H×W or 1×3×H×W.
template <class T>
void export_ppm(const BasicTensor<T>& image, const std::string& path) {
  const bool batched = image.rank() == 4 && image.extent(0) == 1;
  if (!(image.rank() == 3 || batched)) throw ShapeError("export_ppm expects a 3×H×W image, got " + image.shape().str());
  const std::size_t c = image.extent(batched ? 1 : 0), h = image.extent(batched ? 2 : 1),
                    w = image.extent(batched ? 3 : 2);
  if (c != 3) throw ShapeError("export_ppm needs 3 channels");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << "P6\n" << w << ' ' << h << "\n255\n";
  std::vector<char> pixels(3 * h * w);
  const std::size_t plane = h * w;
  for (std::size_t p = 0; p < plane; ++p) {
    for (std::size_t ch = 0; ch < 3; ++ch) {
      const double raw = static_cast<double>(image[ch * plane + p]);
      const double v = std::isnan(raw) ? 0.0 : std::clamp(raw, 0.0, 1.0);
      pixels[p * 3 + ch] = static_cast<char>(static_cast<std::uint8_t>(std::floor(v * 255.0 + 0.5)));
    }
  }
  out.write(pixels.data(), static_cast<std::streamsize>(pixels.size()));
  if (!out) throw IoError("write failed: " + path);
}

}  // namespace cstnet

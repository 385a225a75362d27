#pragma once

#include <bit>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "cstnet/config.hpp"
#include "cstnet/data.hpp"
#include "cstnet/error.hpp"
#include "cstnet/network.hpp"
#include "cstnet/rng.hpp"

namespace cstnet {

// Layout, all integers little-endian:
//   "CSTN" | u16 version | u32 config length | config text
//   then per tensor until end of file:
//   u16 name length | name | u8 rank | u32 extent × rank | f32 × size
inline constexpr char kCheckpointMagic[4] = {'C', 'S', 'T', 'N'};
inline constexpr std::uint16_t kCheckpointVersion = 1;

namespace detail {

class ByteWriter {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u16(std::uint16_t v) {
    for (int i = 0; i < 2; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  const std::vector<std::uint8_t>& data() const { return out_; }

 private:
  std::vector<std::uint8_t> out_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> in) : in_(in) {}

  bool done() const { return pos_ == in_.size(); }

  std::span<const std::uint8_t> take(std::size_t n) {
    if (in_.size() - pos_ < n) throw FormatError("checkpoint truncated at byte " + std::to_string(pos_));
    auto s = in_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint8_t u8() { return take(1)[0]; }
  std::uint16_t u16() {
    auto s = take(2);
    return static_cast<std::uint16_t>(s[0] | (s[1] << 8));
  }
  std::uint32_t u32() {
    auto s = take(4);
    return static_cast<std::uint32_t>(s[0]) | (static_cast<std::uint32_t>(s[1]) << 8) |
           (static_cast<std::uint32_t>(s[2]) << 16) | (static_cast<std::uint32_t>(s[3]) << 24);
  }
  float f32() { return std::bit_cast<float>(u32()); }

 private:
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<std::uint8_t> encode_checkpoint(const Model<float>& model, const TrainConfig& cfg) {
  detail::ByteWriter w;
  w.bytes(kCheckpointMagic, 4);
  w.u16(kCheckpointVersion);
  const std::string echo = format_config(cfg) + "# rng = " + std::string(RngStream::kAlgorithm) + "\n";
  w.u32(static_cast<std::uint32_t>(echo.size()));
  w.bytes(echo.data(), echo.size());
  for (const auto& p : model.parameters()) {
    w.u16(static_cast<std::uint16_t>(p.name.size()));
    w.bytes(p.name.data(), p.name.size());
    w.u8(static_cast<std::uint8_t>(p.value.rank()));
    for (const std::size_t e : p.value.shape().dims()) w.u32(static_cast<std::uint32_t>(e));
    for (const float v : p.value.data()) w.f32(v);
  }
  return w.data();
}

inline void save_checkpoint(const Model<float>& model, const TrainConfig& cfg, const std::string& path) {
  const auto bytes = encode_checkpoint(model, cfg);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path);
}

struct Checkpoint {
  TrainConfig config;
  std::string config_text;
  Model<float> model;
};

/// One named tensor as stored in a checkpoint.
struct StoredTensor {
  std::string name;
  Tensor value;
};

struct DecodedCheckpoint {
  std::string config_text;
  std::vector<StoredTensor> tensors;
};

/// Parses the container without interpreting the config.
inline DecodedCheckpoint decode_checkpoint_container(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes);
  const auto magic = r.take(4);
  for (std::size_t i = 0; i < 4; ++i) {
    if (magic[i] != static_cast<std::uint8_t>(kCheckpointMagic[i])) throw FormatError("not a checkpoint: bad magic");
  }
  const std::uint16_t version = r.u16();
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  DecodedCheckpoint out;
  const std::uint32_t len = r.u32();
  const auto text = r.take(len);
  out.config_text.assign(text.begin(), text.end());
  while (!r.done()) {
    StoredTensor t;
    const std::uint16_t name_len = r.u16();
    const auto name = r.take(name_len);
    t.name.assign(name.begin(), name.end());
    const std::uint8_t rank = r.u8();
    if (rank < 1 || rank > Shape::kMaxRank) throw FormatError("tensor " + t.name + " has rank " + std::to_string(rank));
    std::vector<std::size_t> dims(rank);
    for (auto& d : dims) d = r.u32();
    Shape shape;
    try {
      shape = Shape(std::span<const std::size_t>(dims));
    } catch (const ShapeError& e) {
      throw FormatError("tensor " + t.name + ": " + e.what());
    }
    t.value = Tensor(shape);
    for (auto& v : t.value.data()) v = r.f32();
    out.tensors.push_back(std::move(t));
  }
  return out;
}

inline Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  DecodedCheckpoint raw = decode_checkpoint_container(bytes);
  Checkpoint ck;
  ck.config_text = raw.config_text;
  try {
    apply_config_text(ck.config, raw.config_text);
  } catch (const InputError& e) {
    throw FormatError(std::string("checkpoint config: ") + e.what());
  }
  NetworkSpec spec = NetworkSpec::standard(ck.config.variant);
  spec.color_offset = ck.config.color_offset;
  ck.model = Model<float>::create(spec, ck.config.seed);
  if (raw.tensors.size() != ck.model.parameters().size()) {
    throw FormatError("checkpoint has " + std::to_string(raw.tensors.size()) + " tensors, model needs " +
                      std::to_string(ck.model.parameters().size()));
  }
  for (auto& t : raw.tensors) {
    auto* p = ck.model.find(t.name);
    if (!p) throw FormatError("checkpoint tensor '" + t.name + "' is not part of a " +
                              std::string(to_string(ck.config.variant)) + " model");
    if (!(p->value.shape() == t.value.shape())) {
      throw FormatError("checkpoint tensor '" + t.name + "' has shape " + t.value.shape().str() + ", expected " +
                        p->value.shape().str());
    }
    p->value = std::move(t.value);
  }
  return ck;
}

inline Checkpoint load_checkpoint(const std::string& path) {
  return decode_checkpoint(read_file_bytes(path));
}

}  // namespace cstnet

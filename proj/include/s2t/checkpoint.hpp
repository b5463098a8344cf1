#pragma once

// Checkpoint layout (all integers unsigned 32-bit little-endian):
//
//   "S2T1"  version  json_len  json[json_len]  tensor_count
//   per tensor: name_len name[name_len] rank dims[rank] dtype(0 = f32) payload
//   crc32 of every preceding byte
//
// The JSON blob carries the network spec and training metadata.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <zlib.h>

#include "s2t/model.hpp"

namespace s2t {

inline constexpr char kCheckpointMagic[4] = {'S', '2', 'T', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

struct CheckpointMeta {
  std::int64_t epoch = 0;
  double best_val_mse = 0.0;
  std::uint64_t seed = 0;

  friend bool operator==(const CheckpointMeta&, const CheckpointMeta&) = default;
};

struct Checkpoint {
  Network<float> network;
  CheckpointMeta meta;
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);
  out.append(b, 4);
}

class Reader {
 public:
  explicit Reader(const std::string& bytes, std::size_t limit) : bytes_(bytes), limit_(limit) {}

  std::uint32_t u32() {
    std::uint32_t v;
    std::memcpy(&v, take(4), 4);
    return v;
  }
  const char* take(std::size_t n) {
    if (pos_ + n > limit_) throw Error(Errc::io_failure, "checkpoint truncated at byte " + std::to_string(pos_));
    const char* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::size_t pos() const { return pos_; }

 private:
  const std::string& bytes_;
  std::size_t limit_;
  std::size_t pos_ = 0;
};

inline std::uint32_t crc32_of(const char* data, std::size_t n) {
  return std::uint32_t(::crc32(::crc32(0L, Z_NULL, 0), reinterpret_cast<const Bytef*>(data), uInt(n)));
}

}  // namespace detail

inline std::string serialize_checkpoint(const Network<float>& net, const CheckpointMeta& meta) {
  nlohmann::json j;
  j["spec"] = {{"filters2", net.spec.filters2}, {"dropout_rate", net.spec.dropout_rate}};
  j["meta"] = {{"epoch", meta.epoch}, {"best_val_mse", meta.best_val_mse}, {"seed", meta.seed}};
  j["batchnorm"] = {{"epsilon", net.bn1.epsilon}, {"momentum", net.bn1.momentum}};
  const std::string blob = j.dump();

  std::string out(kCheckpointMagic, 4);
  detail::put_u32(out, kCheckpointVersion);
  detail::put_u32(out, std::uint32_t(blob.size()));
  out += blob;
  const auto tensors = net.named_tensors();
  detail::put_u32(out, std::uint32_t(tensors.size()));
  for (const auto& [name, t] : tensors) {
    detail::put_u32(out, std::uint32_t(name.size()));
    out += name;
    detail::put_u32(out, std::uint32_t(t->rank()));
    for (auto d : t->dims()) detail::put_u32(out, std::uint32_t(d));
    detail::put_u32(out, 0);
    out.append(reinterpret_cast<const char*>(t->data()), t->size() * sizeof(float));
  }
  detail::put_u32(out, detail::crc32_of(out.data(), out.size()));
  return out;
}

/// Parses checkpoint bytes. When `expected` is given, a checkpoint built for a
/// different architecture is rejected with TensorShapeMismatch.
inline Checkpoint deserialize_checkpoint(const std::string& bytes, const std::optional<NetworkSpec>& expected = {}) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) {
    throw Error(Errc::bad_magic, "not an S2T1 checkpoint");
  }
  detail::Reader r(bytes, bytes.size() - 4);
  r.take(4);
  const auto version = r.u32();
  if (version != kCheckpointVersion) {
    throw Error(Errc::version_mismatch, "checkpoint format version " + std::to_string(version) +
                                            ", this build reads version " + std::to_string(kCheckpointVersion));
  }
  std::uint32_t stored_crc;
  std::memcpy(&stored_crc, bytes.data() + bytes.size() - 4, 4);
  const auto actual_crc = detail::crc32_of(bytes.data(), bytes.size() - 4);
  if (stored_crc != actual_crc) throw Error(Errc::checksum_mismatch, "checkpoint CRC-32 mismatch (file corrupted)");

  const auto blob_len = r.u32();
  const char* blob = r.take(blob_len);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(blob, blob + blob_len);
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::io_failure, std::string("checkpoint header JSON: ") + e.what());
  }

  NetworkSpec spec{j.at("spec").at("filters2").get<int>(), j.at("spec").at("dropout_rate").get<double>()};
  if (expected && expected->filters2 != spec.filters2) {
    throw Error(Errc::tensor_shape_mismatch, "checkpoint has filters2=" + std::to_string(spec.filters2) +
                                                 ", requested filters2=" + std::to_string(expected->filters2));
  }
  Checkpoint ck{Network<float>(spec), {}};
  ck.meta.epoch = j.at("meta").at("epoch").get<std::int64_t>();
  ck.meta.best_val_mse = j.at("meta").at("best_val_mse").get<double>();
  ck.meta.seed = j.at("meta").at("seed").get<std::uint64_t>();
  if (j.contains("batchnorm")) {
    ck.network.bn1.epsilon = ck.network.bn2.epsilon = j["batchnorm"].at("epsilon").get<double>();
    ck.network.bn1.momentum = ck.network.bn2.momentum = j["batchnorm"].at("momentum").get<double>();
  }

  auto slots = ck.network.named_tensors();
  const auto count = r.u32();
  if (count != slots.size()) {
    throw Error(Errc::tensor_shape_mismatch, "checkpoint holds " + std::to_string(count) + " tensors, expected " +
                                                 std::to_string(slots.size()));
  }
  for (auto& [name, t] : slots) {
    const auto name_len = r.u32();
    const std::string got(r.take(name_len), name_len);
    if (got != name) throw Error(Errc::tensor_shape_mismatch, "expected tensor '" + name + "', found '" + got + "'");
    const auto rank = r.u32();
    Shape dims(rank);
    for (auto& d : dims) d = r.u32();
    const auto dtype = r.u32();
    if (dtype != 0) throw Error(Errc::tensor_shape_mismatch, name + ": unsupported dtype code " + std::to_string(dtype));
    if (dims != t->dims()) {
      throw Error(Errc::tensor_shape_mismatch, name + ": stored " + shape_str(dims) + ", network expects " +
                                                   shape_str(t->dims()));
    }
    std::memcpy(t->data(), r.take(t->size() * sizeof(float)), t->size() * sizeof(float));
  }
  if (r.pos() != bytes.size() - 4) throw Error(Errc::io_failure, "trailing bytes after last tensor");
  return ck;
}

inline void save_checkpoint(const Network<float>& net, const CheckpointMeta& meta, const std::string& path) {
  const auto bytes = serialize_checkpoint(net, meta);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::io_failure, "cannot write " + path);
  out.write(bytes.data(), std::streamsize(bytes.size()));
  if (!out) throw Error(Errc::io_failure, "write failed for " + path);
}

inline Checkpoint load_checkpoint(const std::string& path, const std::optional<NetworkSpec>& expected = {}) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io_failure, "cannot open " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes, expected);
}

}  // namespace s2t

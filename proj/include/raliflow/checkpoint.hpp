#pragma once

// Binary tensor archive:
//   "RLFW" | u32 version | u32 count |
//   count x { u16 name_len | name (UTF-8) | u8 ndim | u32 dims[ndim] | f64 data[] }
// All integers and floats little-endian.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "raliflow/optim.hpp"

namespace raliflow::ad {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Shape shape;
  std::vector<double> data;
};

namespace detail {

template <class T>
void put_le(std::string& out, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  out.append(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <class T>
T get_le(const std::string& in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw Error(ErrorCode::SchemaViolation, "truncated checkpoint");
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, in.data() + pos, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  pos += sizeof(T);
  T v;
  std::memcpy(&v, bytes, sizeof(T));
  return v;
}

}  // namespace detail

inline std::string encode_checkpoint(const std::vector<NamedTensor>& tensors) {
  std::string out = "RLFW";
  detail::put_le<std::uint32_t>(out, kCheckpointVersion);
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    if (t.name.size() > 0xFFFF) throw Error(ErrorCode::SchemaViolation, "tensor name too long");
    if (t.shape.size() > 0xFF) throw Error(ErrorCode::SchemaViolation, "tensor rank too large");
    if (shape_numel(t.shape) != t.data.size()) {
      throw Error(ErrorCode::ShapeMismatch, "checkpoint tensor " + t.name + " size mismatch");
    }
    detail::put_le<std::uint16_t>(out, static_cast<std::uint16_t>(t.name.size()));
    out += t.name;
    detail::put_le<std::uint8_t>(out, static_cast<std::uint8_t>(t.shape.size()));
    for (auto d : t.shape) detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    for (double x : t.data) detail::put_le<double>(out, x);
  }
  return out;
}

inline std::vector<NamedTensor> decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < 12 || bytes.compare(0, 4, "RLFW") != 0) {
    throw Error(ErrorCode::SchemaViolation, "not a checkpoint (bad magic)");
  }
  std::size_t pos = 4;
  const auto version = detail::get_le<std::uint32_t>(bytes, pos);
  if (version != kCheckpointVersion) {
    throw Error(ErrorCode::SchemaViolation, "unsupported checkpoint version " + std::to_string(version));
  }
  const auto count = detail::get_le<std::uint32_t>(bytes, pos);
  std::vector<NamedTensor> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    const auto len = detail::get_le<std::uint16_t>(bytes, pos);
    if (pos + len > bytes.size()) throw Error(ErrorCode::SchemaViolation, "truncated checkpoint");
    t.name = bytes.substr(pos, len);
    pos += len;
    const auto ndim = detail::get_le<std::uint8_t>(bytes, pos);
    for (std::uint8_t d = 0; d < ndim; ++d) t.shape.push_back(detail::get_le<std::uint32_t>(bytes, pos));
    t.data.resize(shape_numel(t.shape));
    for (auto& x : t.data) x = detail::get_le<double>(bytes, pos);
    out.push_back(std::move(t));
  }
  if (pos != bytes.size()) throw Error(ErrorCode::SchemaViolation, "trailing bytes in checkpoint");
  return out;
}

inline void write_checkpoint(const std::string& path, const std::vector<NamedTensor>& tensors) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error(ErrorCode::MissingFile, "cannot write " + path);
  const std::string bytes = encode_checkpoint(tensors);
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline std::vector<NamedTensor> read_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::MissingFile, "cannot read " + path);
  std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

/// Parameters plus Adam state ("adam.m/<name>", "adam.v/<name>",
/// "adam.step/<name>"), in registration order.
inline std::vector<NamedTensor> snapshot(const ParameterSet& params, bool with_optimizer = true) {
  std::vector<NamedTensor> out;
  for (const auto& p : params.items()) {
    const auto d = p.tensor.data();
    out.push_back({p.name, p.tensor.shape(), std::vector<double>(d.begin(), d.end())});
  }
  if (with_optimizer) {
    for (const auto& p : params.items()) {
      out.push_back({"adam.m/" + p.name, p.tensor.shape(), p.m});
      out.push_back({"adam.v/" + p.name, p.tensor.shape(), p.v});
      out.push_back({"adam.step/" + p.name, {1}, {static_cast<double>(p.step)}});
    }
  }
  return out;
}

/// Loads values (and optimizer state when present) into matching parameters.
/// Every parameter must be present with an identical shape.
inline void restore(ParameterSet& params, const std::vector<NamedTensor>& tensors) {
  auto find = [&](const std::string& name) -> const NamedTensor* {
    for (const auto& t : tensors) {
      if (t.name == name) return &t;
    }
    return nullptr;
  };
  for (auto& p : params.items()) {
    const NamedTensor* t = find(p.name);
    if (t == nullptr) throw Error(ErrorCode::SchemaViolation, "checkpoint lacks " + p.name);
    if (t->shape != p.tensor.shape()) {
      throw Error(ErrorCode::ShapeMismatch, "checkpoint shape mismatch for " + p.name);
    }
    std::copy(t->data.begin(), t->data.end(), p.tensor.mutable_data().begin());
    if (const NamedTensor* m = find("adam.m/" + p.name)) p.m = m->data;
    if (const NamedTensor* v = find("adam.v/" + p.name)) p.v = v->data;
    if (const NamedTensor* s = find("adam.step/" + p.name)) {
      p.step = static_cast<std::uint64_t>(s->data.at(0));
    }
  }
}

}  // namespace raliflow::ad

#pragma once

// Single-file checkpoint container for named f32 tensors.
//
// Layout (all integers little-endian):
//   magic   "DFAL"
//   u32     format version (1)
//   u32     tensor count
//   per tensor:
//     u32   name length, then that many UTF-8 bytes
//     u32   rank
//     u64   dims[rank]
//     f32   data[prod(dims)]
//
// Round trips are bit-exact; loaders reject bad magic, unknown versions,
// truncated payloads and trailing bytes.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "dfallm/nn/param.hpp"
#include "dfallm/nn/tensor.hpp"

namespace dfallm::nn {

struct IoError : std::runtime_error {
  explicit IoError(const std::string& m) : std::runtime_error(m) {}
};

struct NamedTensor {
  std::string name;
  std::vector<int> shape;
  std::vector<float> data;
};

namespace detail {
template <class V>
void put(std::string& buf, V v) {
  static_assert(std::is_trivially_copyable_v<V>);
  char tmp[sizeof(V)];
  std::memcpy(tmp, &v, sizeof(V));
  buf.append(tmp, sizeof(V));
}
template <class V>
V take(const std::string& buf, size_t& off, const std::string& path) {
  if (off + sizeof(V) > buf.size()) throw IoError("checkpoint truncated: " + path);
  V v;
  std::memcpy(&v, buf.data() + off, sizeof(V));
  off += sizeof(V);
  return v;
}
}  // namespace detail

inline void save_checkpoint(const std::string& path, const std::vector<NamedTensor>& tensors) {
  std::string buf;
  buf.append("DFAL", 4);
  detail::put<uint32_t>(buf, 1u);
  detail::put<uint32_t>(buf, static_cast<uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    if (numel_of(t.shape) != static_cast<int64_t>(t.data.size()))
      throw UsageError("checkpoint: tensor '" + t.name + "' shape " + shape_str(t.shape) + " vs " +
                       std::to_string(t.data.size()) + " values");
    detail::put<uint32_t>(buf, static_cast<uint32_t>(t.name.size()));
    buf.append(t.name);
    detail::put<uint32_t>(buf, static_cast<uint32_t>(t.shape.size()));
    for (int d : t.shape) detail::put<uint64_t>(buf, static_cast<uint64_t>(d));
    const size_t bytes = t.data.size() * sizeof(float);
    const size_t at = buf.size();
    buf.resize(at + bytes);
    std::memcpy(buf.data() + at, t.data.data(), bytes);
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open for write: " + path);
  f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!f) throw IoError("write failed: " + path);
}

inline std::vector<NamedTensor> load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open: " + path);
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  size_t off = 0;
  if (buf.size() < 4 || buf.compare(0, 4, "DFAL") != 0) throw IoError("bad checkpoint magic: " + path);
  off = 4;
  const uint32_t version = detail::take<uint32_t>(buf, off, path);
  if (version != 1) throw IoError("unsupported checkpoint version " + std::to_string(version) + ": " + path);
  const uint32_t count = detail::take<uint32_t>(buf, off, path);
  std::vector<NamedTensor> out;
  out.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    const uint32_t name_len = detail::take<uint32_t>(buf, off, path);
    if (off + name_len > buf.size()) throw IoError("checkpoint truncated: " + path);
    t.name.assign(buf.data() + off, name_len);
    off += name_len;
    const uint32_t rank = detail::take<uint32_t>(buf, off, path);
    if (rank > 8) throw IoError("checkpoint: implausible rank " + std::to_string(rank) + ": " + path);
    int64_t n = 1;
    for (uint32_t r = 0; r < rank; ++r) {
      const uint64_t d = detail::take<uint64_t>(buf, off, path);
      t.shape.push_back(static_cast<int>(d));
      n *= static_cast<int64_t>(d);
    }
    const size_t bytes = static_cast<size_t>(n) * sizeof(float);
    if (off + bytes > buf.size()) throw IoError("checkpoint truncated: " + path);
    t.data.resize(static_cast<size_t>(n));
    std::memcpy(t.data.data(), buf.data() + off, bytes);
    off += bytes;
    out.push_back(std::move(t));
  }
  if (off != buf.size()) throw IoError("checkpoint has trailing bytes: " + path);
  return out;
}

// --- ParamStore bridging -----------------------------------------------

inline std::vector<NamedTensor> snapshot(ParamStore<float>& store, const std::string& prefix = "") {
  std::vector<NamedTensor> out;
  for (auto* p : store.all()) {
    NamedTensor t;
    t.name = prefix + p->name;
    t.shape = p->value.shape;
    t.data = *p->value.data;
    out.push_back(std::move(t));
  }
  return out;
}

// Restores values into an existing store. Names must cover the store exactly
// (after stripping `prefix`); shape mismatches are errors.
inline void restore(ParamStore<float>& store, const std::vector<NamedTensor>& tensors,
                    const std::string& prefix = "") {
  size_t matched = 0;
  for (const auto& t : tensors) {
    if (t.name.rfind(prefix, 0) != 0) continue;
    const std::string key = t.name.substr(prefix.size());
    auto* p = store.find(key);
    if (!p) throw IoError("checkpoint: unexpected tensor '" + t.name + "'");
    if (p->value.shape != t.shape)
      throw IoError("checkpoint: tensor '" + t.name + "' shape " + shape_str(t.shape) +
                    " vs parameter " + shape_str(p->value.shape));
    *p->value.data = t.data;
    ++matched;
  }
  if (matched != store.size())
    throw IoError("checkpoint: restored " + std::to_string(matched) + " of " +
                  std::to_string(store.size()) + " parameters (prefix '" + prefix + "')");
}

}  // namespace dfallm::nn

#pragma once

// Minimal RIFF/WAVE io: 16-bit PCM, mono. Reading returns float samples in
// [-1, 1]; writing quantizes symmetrically so write(read(f)) is bit-exact.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "dfallm/errors.hpp"

namespace dfallm::corpus {

struct WavData {
  std::vector<float> samples;
  int sample_rate = 16000;
  double duration() const { return static_cast<double>(samples.size()) / sample_rate; }
};

namespace detail {
template <class V>
void put_le(std::string& buf, V v) {
  char tmp[sizeof(V)];
  std::memcpy(tmp, &v, sizeof(V));
  buf.append(tmp, sizeof(V));
}
template <class V>
V get_le(const std::string& buf, size_t off) {
  V v;
  std::memcpy(&v, buf.data() + off, sizeof(V));
  return v;
}
}  // namespace detail

inline int16_t float_to_pcm16(float x) {
  float c = x < -1.0f ? -1.0f : (x > 1.0f ? 1.0f : x);
  long v = std::lround(static_cast<double>(c) * 32767.0);
  if (v > 32767) v = 32767;
  if (v < -32768) v = -32768;
  return static_cast<int16_t>(v);
}

inline void write_wav(const std::string& path, const std::vector<float>& samples, int sample_rate) {
  const uint32_t data_bytes = static_cast<uint32_t>(samples.size() * 2);
  std::string buf;
  buf.reserve(44 + data_bytes);
  buf.append("RIFF", 4);
  detail::put_le<uint32_t>(buf, 36 + data_bytes);
  buf.append("WAVE", 4);
  buf.append("fmt ", 4);
  detail::put_le<uint32_t>(buf, 16);
  detail::put_le<uint16_t>(buf, 1);  // PCM
  detail::put_le<uint16_t>(buf, 1);  // mono
  detail::put_le<uint32_t>(buf, static_cast<uint32_t>(sample_rate));
  detail::put_le<uint32_t>(buf, static_cast<uint32_t>(sample_rate * 2));  // byte rate
  detail::put_le<uint16_t>(buf, 2);   // block align
  detail::put_le<uint16_t>(buf, 16);  // bits per sample
  buf.append("data", 4);
  detail::put_le<uint32_t>(buf, data_bytes);
  for (float s : samples) detail::put_le<int16_t>(buf, float_to_pcm16(s));
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("wav: cannot open for write: " + path);
  f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!f) throw DataError("wav: write failed: " + path);
}

inline WavData read_wav(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("wav: cannot open: " + path);
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (buf.size() < 12 || buf.compare(0, 4, "RIFF") != 0 || buf.compare(8, 4, "WAVE") != 0)
    throw DataError("wav: not a RIFF/WAVE file: " + path);
  WavData out;
  size_t off = 12;
  bool have_fmt = false, have_data = false;
  uint16_t bits = 0, channels = 0;
  while (off + 8 <= buf.size()) {
    const std::string id = buf.substr(off, 4);
    const uint32_t size = detail::get_le<uint32_t>(buf, off + 4);
    off += 8;
    if (off + size > buf.size()) throw DataError("wav: truncated chunk '" + id + "': " + path);
    if (id == "fmt ") {
      if (size < 16) throw DataError("wav: short fmt chunk: " + path);
      const uint16_t format = detail::get_le<uint16_t>(buf, off);
      channels = detail::get_le<uint16_t>(buf, off + 2);
      out.sample_rate = static_cast<int>(detail::get_le<uint32_t>(buf, off + 4));
      bits = detail::get_le<uint16_t>(buf, off + 14);
      if (format != 1) throw DataError("wav: only PCM supported: " + path);
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) throw DataError("wav: data chunk before fmt: " + path);
      if (channels != 1 || bits != 16) throw DataError("wav: expects 16-bit mono: " + path);
      const size_t n = size / 2;
      out.samples.resize(n);
      for (size_t i = 0; i < n; ++i) {
        const int16_t v = detail::get_le<int16_t>(buf, off + i * 2);
        out.samples[i] = static_cast<float>(v) / 32767.0f;
      }
      have_data = true;
    }
    off += size + (size & 1);  // chunks are word-aligned
  }
  if (!have_data) throw DataError("wav: no data chunk: " + path);
  return out;
}

// Duration in seconds straight from the header, without decoding samples.
inline double wav_duration(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("wav: cannot open: " + path);
  char head[12];
  f.read(head, 12);
  if (!f || std::strncmp(head, "RIFF", 4) != 0 || std::strncmp(head + 8, "WAVE", 4) != 0)
    throw DataError("wav: not a RIFF/WAVE file: " + path);
  uint32_t sample_rate = 0;
  uint16_t channels = 0, bits = 0;
  while (true) {
    char hdr[8];
    f.read(hdr, 8);
    if (!f) break;
    uint32_t size;
    std::memcpy(&size, hdr + 4, 4);
    if (std::strncmp(hdr, "fmt ", 4) == 0) {
      char fmt[16];
      f.read(fmt, 16);
      if (!f) throw DataError("wav: short fmt chunk: " + path);
      std::memcpy(&channels, fmt + 2, 2);
      std::memcpy(&sample_rate, fmt + 4, 4);
      std::memcpy(&bits, fmt + 14, 2);
      f.seekg(size - 16 + (size & 1), std::ios::cur);
    } else if (std::strncmp(hdr, "data", 4) == 0) {
      if (!sample_rate || channels != 1 || bits != 16) throw DataError("wav: expects 16-bit mono: " + path);
      return static_cast<double>(size / 2) / sample_rate;
    } else {
      f.seekg(size + (size & 1), std::ios::cur);
    }
  }
  throw DataError("wav: no data chunk: " + path);
}

}  // namespace dfallm::corpus

// Log-mel feature frontend.
//
// 40-band log-mel features from 25 ms windows (400 samples, zero-padded into
// a 512-point FFT) at a 20 ms hop, giving a 50 Hz base frame rate. The
// 12.5 Hz rate is an exact reshape: four consecutive 50 Hz frames stacked
// into one 160-dim frame, remainder truncated. Features are cached on disk
// keyed by clip id and a hash of the frontend configuration, so corpus-wide
// feature extraction pays the FFT cost once.

#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "dfallm/dsp/fft.hpp"
#include "dfallm/errors.hpp"
#include "dfallm/nn/rng.hpp"

namespace dfallm::frontend {

struct FrontendConfig {
  int n_fft = 400;           // analysis window length (samples)
  int hop = 320;             // 20 ms at 16 kHz -> 50 Hz base rate
  int n_mels = 40;
  double fmin_hz = 0.0;
  double fmax_hz = 8000.0;
  double frame_rate_hz = 50.0;  // 50 (per-frame) or 12.5 (stack of 4)
  int sample_rate = 16000;
};

// Frames per output step at the requested rate. The only supported rates are
// the encoder's native 50 Hz and the 4x-stacked 12.5 Hz.
inline int stack_factor(double frame_rate_hz) {
  if (frame_rate_hz == 50.0) return 1;
  if (frame_rate_hz == 12.5) return 4;
  throw ConfigError("unsupported frame rate " + std::to_string(frame_rate_hz) +
                    " Hz; supported rates are 12.5 and 50");
}

// Row-major [n_frames, dim] feature matrix.
struct Features {
  int n_frames = 0;
  int dim = 0;
  std::vector<float> data;
};

namespace detail {

inline double hz_to_mel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
inline double mel_to_hz(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

// Triangular mel filterbank as a dense [n_mels, n_bins] weight matrix.
inline std::vector<double> mel_filterbank(const FrontendConfig& cfg, int n_bins, int fft_len) {
  const double mel_lo = hz_to_mel(cfg.fmin_hz), mel_hi = hz_to_mel(cfg.fmax_hz);
  std::vector<double> edges(static_cast<size_t>(cfg.n_mels) + 2);
  for (size_t i = 0; i < edges.size(); ++i)
    edges[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * static_cast<double>(i) /
                                      static_cast<double>(cfg.n_mels + 1));
  std::vector<double> w(static_cast<size_t>(cfg.n_mels) * static_cast<size_t>(n_bins), 0.0);
  for (int m = 0; m < cfg.n_mels; ++m) {
    const double left = edges[static_cast<size_t>(m)], center = edges[static_cast<size_t>(m) + 1],
                 right = edges[static_cast<size_t>(m) + 2];
    for (int k = 0; k < n_bins; ++k) {
      const double f = static_cast<double>(k) * cfg.sample_rate / fft_len;
      double v = 0;
      if (f > left && f < center)
        v = (f - left) / (center - left);
      else if (f >= center && f < right)
        v = (right - f) / (right - center);
      w[static_cast<size_t>(m) * static_cast<size_t>(n_bins) + static_cast<size_t>(k)] = v;
    }
  }
  return w;
}

}  // namespace detail

// Base 50 Hz log-mel analysis, then optional stacking for 12.5 Hz.
inline Features log_mel(const std::vector<float>& x, const FrontendConfig& cfg) {
  const int stack = stack_factor(cfg.frame_rate_hz);
  if (static_cast<int>(x.size()) < cfg.n_fft)
    throw InputError("log_mel: waveform shorter than one analysis window");
  const size_t fft_len = dsp::next_pow2(static_cast<size_t>(cfg.n_fft));
  const int n_bins = static_cast<int>(fft_len) / 2 + 1;
  const std::vector<double> window = dsp::hann_window(static_cast<size_t>(cfg.n_fft));
  const std::vector<double> bank = detail::mel_filterbank(cfg, n_bins, static_cast<int>(fft_len));
  const float log_floor = std::log(1e-10f);

  // The tail window is zero-padded so every sample is analyzed; a clip of a
  // whole number of hops then maps to exactly duration * rate frames.
  const int t50 = 1 + (static_cast<int>(x.size()) - cfg.n_fft + cfg.hop - 1) / cfg.hop;
  std::vector<float> base(static_cast<size_t>(t50) * static_cast<size_t>(cfg.n_mels));
  std::vector<std::complex<double>> buf(fft_len);
  std::vector<double> power(static_cast<size_t>(n_bins));
  for (int t = 0; t < t50; ++t) {
    std::fill(buf.begin(), buf.end(), std::complex<double>(0, 0));
    const size_t off = static_cast<size_t>(t) * static_cast<size_t>(cfg.hop);
    for (int i = 0; i < cfg.n_fft; ++i) {
      const size_t idx = off + static_cast<size_t>(i);
      buf[static_cast<size_t>(i)] =
          (idx < x.size() ? x[idx] : 0.0f) * window[static_cast<size_t>(i)];
    }
    dsp::fft_inplace(buf, false);
    for (int k = 0; k < n_bins; ++k) power[static_cast<size_t>(k)] = std::norm(buf[static_cast<size_t>(k)]);
    for (int m = 0; m < cfg.n_mels; ++m) {
      double acc = 0;
      const double* row = bank.data() + static_cast<size_t>(m) * static_cast<size_t>(n_bins);
      for (int k = 0; k < n_bins; ++k) acc += row[static_cast<size_t>(k)] * power[static_cast<size_t>(k)];
      base[static_cast<size_t>(t) * static_cast<size_t>(cfg.n_mels) + static_cast<size_t>(m)] =
          std::max(static_cast<float>(std::log(acc + 0.0)), log_floor);
    }
  }

  Features out;
  out.n_frames = t50 / stack;  // truncate the remainder when stacking
  out.dim = cfg.n_mels * stack;
  out.data.assign(base.begin(),
                  base.begin() + static_cast<size_t>(out.n_frames) * static_cast<size_t>(out.dim));
  return out;
}

// --- frame timing ----------------------------------------------------------

inline int time_to_frame(double t_seconds, double frame_rate_hz) {
  if (t_seconds < 0) throw InputError("time_to_frame: negative time");
  return static_cast<int>(std::floor(t_seconds * frame_rate_hz));
}

inline double frame_to_time(int frame, double frame_rate_hz) {
  if (frame < 0) throw InputError("frame_to_time: negative frame index");
  return static_cast<double>(frame) / frame_rate_hz;
}

// --- disk cache -------------------------------------------------------------

inline std::string frontend_config_hash(const FrontendConfig& cfg) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "nfft=%d hop=%d mels=%d fmin=%.6g fmax=%.6g rate=%.6g sr=%d",
                cfg.n_fft, cfg.hop, cfg.n_mels, cfg.fmin_hz, cfg.fmax_hz, cfg.frame_rate_hz,
                cfg.sample_rate);
  char hex[17];
  std::snprintf(hex, sizeof(hex), "%016llx",
                static_cast<unsigned long long>(fnv1a64(buf)));
  return hex;
}

inline std::filesystem::path feature_cache_path(const std::string& cache_dir,
                                                const std::string& clip_id,
                                                const std::string& config_hash) {
  return std::filesystem::path(cache_dir) / (clip_id + "_" + config_hash + ".feat");
}

inline void write_features(const std::filesystem::path& path, const Features& f) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("write_features: cannot open " + path.string());
  const uint32_t t = static_cast<uint32_t>(f.n_frames), d = static_cast<uint32_t>(f.dim);
  out.write(reinterpret_cast<const char*>(&t), 4);
  out.write(reinterpret_cast<const char*>(&d), 4);
  out.write(reinterpret_cast<const char*>(f.data.data()),
            static_cast<std::streamsize>(f.data.size() * sizeof(float)));
  if (!out) throw DataError("write_features: short write to " + path.string());
}

inline Features read_features(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("read_features: cannot open " + path.string());
  uint32_t t = 0, d = 0;
  in.read(reinterpret_cast<char*>(&t), 4);
  in.read(reinterpret_cast<char*>(&d), 4);
  if (!in || t > (1u << 24) || d > (1u << 16))
    throw DataError("read_features: corrupt header in " + path.string());
  Features f;
  f.n_frames = static_cast<int>(t);
  f.dim = static_cast<int>(d);
  f.data.resize(static_cast<size_t>(t) * static_cast<size_t>(d));
  in.read(reinterpret_cast<char*>(f.data.data()),
          static_cast<std::streamsize>(f.data.size() * sizeof(float)));
  if (!in) throw DataError("read_features: truncated data in " + path.string());
  char extra;
  if (in.read(&extra, 1)) throw DataError("read_features: trailing bytes in " + path.string());
  return f;
}

// Cached extraction: hit the disk cache when a file for (clip id, config)
// exists, otherwise compute and populate it.
inline Features features_for_clip(const std::string& cache_dir, const std::string& clip_id,
                                  const std::vector<float>& waveform, const FrontendConfig& cfg) {
  const std::filesystem::path path =
      feature_cache_path(cache_dir, clip_id, frontend_config_hash(cfg));
  if (std::filesystem::exists(path)) return read_features(path);
  Features f = log_mel(waveform, cfg);
  std::filesystem::create_directories(cache_dir);
  write_features(path, f);
  return f;
}

}  // namespace dfallm::frontend

#pragma once

// Radix-2 FFT and the STFT helpers shared by the feature front-end and the
// spectral spoof transforms. Everything is double precision internally.

#include <complex>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace dfallm::dsp {

inline bool is_pow2(size_t n) { return n != 0 && (n & (n - 1)) == 0; }

inline size_t next_pow2(size_t n) {
  size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

// In-place iterative Cooley-Tukey. Size must be a power of two.
inline void fft_inplace(std::vector<std::complex<double>>& a, bool inverse = false) {
  const size_t n = a.size();
  if (!is_pow2(n)) throw std::invalid_argument("fft: size must be a power of two");
  // bit-reversal permutation
  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (size_t len = 2; len <= n; len <<= 1) {
    const double ang = 2.0 * M_PI / static_cast<double>(len) * (inverse ? 1.0 : -1.0);
    const std::complex<double> wl(std::cos(ang), std::sin(ang));
    for (size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (size_t j = 0; j < len / 2; ++j) {
        const std::complex<double> u = a[i + j];
        const std::complex<double> v = a[i + j + len / 2] * w;
        a[i + j] = u + v;
        a[i + j + len / 2] = u - v;
        w *= wl;
      }
    }
  }
  if (inverse) {
    const double inv = 1.0 / static_cast<double>(n);
    for (auto& x : a) x *= inv;
  }
}

// Periodic Hann window (constant-overlap-add friendly at hop = n/2 or n/4).
inline std::vector<double> hann_window(size_t n) {
  std::vector<double> w(n);
  for (size_t i = 0; i < n; ++i) w[i] = 0.5 - 0.5 * std::cos(2.0 * M_PI * static_cast<double>(i) / static_cast<double>(n));
  return w;
}

struct Stft {
  size_t n_fft;  // power of two
  size_t hop;
  // frames[f][k], k in [0, n_fft/2] (one-sided), complex spectra
  std::vector<std::vector<std::complex<double>>> frames;
  size_t source_len = 0;
};

// One-sided STFT with a periodic Hann analysis window. Frame f covers samples
// [f*hop, f*hop + n_fft); the tail is zero-padded.
inline Stft stft(const std::vector<float>& x, size_t n_fft, size_t hop) {
  if (!is_pow2(n_fft)) throw std::invalid_argument("stft: n_fft must be a power of two");
  Stft out;
  out.n_fft = n_fft;
  out.hop = hop;
  out.source_len = x.size();
  const auto win = hann_window(n_fft);
  const size_t n_frames = x.size() < n_fft ? 1 : 1 + (x.size() - n_fft + hop - 1) / hop;
  std::vector<std::complex<double>> buf(n_fft);
  out.frames.reserve(n_frames);
  for (size_t f = 0; f < n_frames; ++f) {
    const size_t start = f * hop;
    for (size_t i = 0; i < n_fft; ++i) {
      const size_t idx = start + i;
      buf[i] = idx < x.size() ? static_cast<double>(x[idx]) * win[i] : 0.0;
    }
    fft_inplace(buf, false);
    out.frames.emplace_back(buf.begin(), buf.begin() + static_cast<long>(n_fft / 2 + 1));
  }
  return out;
}

// Weighted overlap-add inverse with a Hann synthesis window and window-square
// normalization; reconstructs exactly source_len samples.
inline std::vector<float> istft(const Stft& s) {
  const size_t n_fft = s.n_fft;
  const auto win = hann_window(n_fft);
  const size_t total = s.source_len;
  std::vector<double> acc(total + n_fft, 0.0), norm(total + n_fft, 0.0);
  std::vector<std::complex<double>> buf(n_fft);
  for (size_t f = 0; f < s.frames.size(); ++f) {
    const auto& half = s.frames[f];
    for (size_t k = 0; k <= n_fft / 2; ++k) buf[k] = half[k];
    for (size_t k = n_fft / 2 + 1; k < n_fft; ++k) buf[k] = std::conj(half[n_fft - k]);
    fft_inplace(buf, true);
    const size_t start = f * s.hop;
    for (size_t i = 0; i < n_fft; ++i) {
      if (start + i >= acc.size()) break;
      acc[start + i] += buf[i].real() * win[i];
      norm[start + i] += win[i] * win[i];
    }
  }
  std::vector<float> y(total);
  for (size_t i = 0; i < total; ++i) y[i] = static_cast<float>(norm[i] > 1e-8 ? acc[i] / norm[i] : 0.0);
  return y;
}

// Mean power in [lo_hz, hi_hz) from a one-sided magnitude spectrum average —
// used by tests and the band-energy probe.
inline double band_power(const std::vector<float>& x, double sample_rate, double lo_hz, double hi_hz,
                         size_t n_fft = 1024, size_t hop = 256) {
  const Stft s = stft(x, n_fft, hop);
  const double bin_hz = sample_rate / static_cast<double>(n_fft);
  double acc = 0.0;
  size_t count = 0;
  for (const auto& fr : s.frames) {
    for (size_t k = 0; k <= n_fft / 2; ++k) {
      const double f = static_cast<double>(k) * bin_hz;
      if (f >= lo_hz && f < hi_hz) {
        acc += std::norm(fr[k]);
        ++count;
      }
    }
  }
  return count ? acc / static_cast<double>(count) : 0.0;
}

}  // namespace dfallm::dsp

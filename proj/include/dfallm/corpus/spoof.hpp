#pragma once

// The six spoof families. Each transform is fully determined by (input,
// parameters, seed). The families are engineered so each leaves a distinct,
// measurable signature: phase coherence (PhaseVocoder), quantization noise
// floor (Quantize), band truncation (BandLimit), vanishing period variance
// (PitchFlat), destroyed harmonicity with preserved envelope (NoiseVocoder),
// and localized artifacts (Splice).

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "dfallm/corpus/synth.hpp"
#include "dfallm/dsp/fft.hpp"
#include "dfallm/errors.hpp"
#include "dfallm/nn/rng.hpp"
#include "dfallm/nn/tensor.hpp"

namespace dfallm::corpus {

enum class SpoofKind { PhaseVocoder, Quantize, BandLimit, PitchFlat, NoiseVocoder, Splice };

inline std::string spoof_kind_name(SpoofKind k) {
  switch (k) {
    case SpoofKind::PhaseVocoder: return "phasevocoder";
    case SpoofKind::Quantize: return "quantize";
    case SpoofKind::BandLimit: return "bandlimit";
    case SpoofKind::PitchFlat: return "pitchflat";
    case SpoofKind::NoiseVocoder: return "noisevocoder";
    case SpoofKind::Splice: return "splice";
  }
  throw ConfigError("unknown spoof kind");
}

inline SpoofKind spoof_kind_from_name(const std::string& name) {
  if (name == "phasevocoder") return SpoofKind::PhaseVocoder;
  if (name == "quantize") return SpoofKind::Quantize;
  if (name == "bandlimit") return SpoofKind::BandLimit;
  if (name == "pitchflat") return SpoofKind::PitchFlat;
  if (name == "noisevocoder") return SpoofKind::NoiseVocoder;
  if (name == "splice") return SpoofKind::Splice;
  throw ConfigError("unknown spoof family '" + name + "'");
}

struct SpoofParams {
  SpoofKind kind = SpoofKind::Quantize;
  uint64_t quant_levels = 16;   // Quantize: amplitude levels (<= 64 in corpora)
  double cutoff_hz = 3400.0;    // BandLimit: FIR low-pass cutoff
  size_t stft_n_fft = 1024;     // PhaseVocoder / NoiseVocoder analysis size
  size_t stft_hop = 256;
};

namespace detail {

// windowed-sinc low-pass FIR (Hamming), odd tap count
inline std::vector<double> lowpass_taps(double cutoff_hz, double fs, int n_taps = 127) {
  std::vector<double> h(static_cast<size_t>(n_taps));
  const double fc = cutoff_hz / fs;
  const int mid = n_taps / 2;
  double sum = 0;
  for (int i = 0; i < n_taps; ++i) {
    const int m = i - mid;
    const double sinc = m == 0 ? 2.0 * fc : std::sin(2.0 * M_PI * fc * m) / (M_PI * m);
    const double w = 0.54 - 0.46 * std::cos(2.0 * M_PI * i / (n_taps - 1));
    h[static_cast<size_t>(i)] = sinc * w;
    sum += h[static_cast<size_t>(i)];
  }
  for (auto& v : h) v /= sum;  // unity DC gain
  return h;
}

// zero-phase-ish same-length convolution (group delay compensated)
inline std::vector<float> fir_filter(const std::vector<float>& x, const std::vector<double>& h) {
  const int n = static_cast<int>(x.size());
  const int k = static_cast<int>(h.size());
  const int mid = k / 2;
  std::vector<float> y(static_cast<size_t>(n), 0.0f);
  for (int i = 0; i < n; ++i) {
    double acc = 0;
    const int lo = std::max(0, i - (k - 1 - mid));
    const int hi = std::min(n - 1, i + mid);
    for (int j = lo; j <= hi; ++j) acc += static_cast<double>(x[static_cast<size_t>(j)]) * h[static_cast<size_t>(mid + i - j)];
    y[static_cast<size_t>(i)] = static_cast<float>(acc);
  }
  return y;
}

// Reflect-pad by `n` on both sides so STFT-resynthesis edge frames (where the
// overlap-add window normalization is partial) fall outside the kept region.
// Without this, modified-phase frames blow up into spikes at the clip edges.
inline std::vector<float> reflect_pad(const std::vector<float>& x, size_t n) {
  if (x.size() <= n + 1) throw InputError("reflect_pad: signal shorter than pad width");
  std::vector<float> out;
  out.reserve(x.size() + 2 * n);
  for (size_t i = n; i >= 1; --i) out.push_back(x[i]);
  out.insert(out.end(), x.begin(), x.end());
  for (size_t i = 2; i <= n + 1; ++i) out.push_back(x[x.size() - i]);
  return out;
}

inline std::vector<float> phase_vocoder(const std::vector<float>& x, const SpoofParams& p, Rng& rng) {
  const size_t pad = p.stft_n_fft;
  dsp::Stft s = dsp::stft(reflect_pad(x, pad), p.stft_n_fft, p.stft_hop);
  for (auto& frame : s.frames) {
    for (size_t k = 0; k < frame.size(); ++k) {
      const double mag = std::abs(frame[k]);
      const double phase = rng.uniform(0.0, 2.0 * M_PI);
      frame[k] = std::polar(mag, phase);
    }
    frame[0] = std::abs(frame[0]);                    // DC stays real
    frame.back() = std::abs(frame.back());            // Nyquist stays real
  }
  const std::vector<float> y = dsp::istft(s);
  return std::vector<float>(y.begin() + static_cast<long>(pad), y.begin() + static_cast<long>(pad + x.size()));
}

// mid-rise amplitude quantizer over [-1, 1]
inline std::vector<float> quantize(const std::vector<float>& x, uint64_t levels) {
  if (levels < 2) throw ConfigError("quantize: needs >= 2 levels");
  const double step = 2.0 / static_cast<double>(levels);
  std::vector<float> y(x.size());
  for (size_t i = 0; i < x.size(); ++i) {
    const double v = std::clamp(static_cast<double>(x[i]), -1.0, 1.0);
    double idx = std::floor((v + 1.0) / step);
    if (idx >= static_cast<double>(levels)) idx = static_cast<double>(levels) - 1.0;
    y[i] = static_cast<float>((idx + 0.5) * step - 1.0);
  }
  return y;
}

// low-pass + decimate to 8 kHz + linear-phase interpolate back to 16 kHz
inline std::vector<float> band_limit(const std::vector<float>& x, double cutoff_hz) {
  const auto lp = lowpass_taps(cutoff_hz, kSampleRate);
  std::vector<float> filtered = fir_filter(x, lp);
  std::vector<float> down(filtered.size() / 2 + (filtered.size() % 2));
  for (size_t i = 0; i < down.size(); ++i) down[i] = filtered[i * 2];
  std::vector<float> up(x.size(), 0.0f);
  for (size_t i = 0; i < down.size() && i * 2 < up.size(); ++i) up[i * 2] = down[i] * 2.0f;
  const auto interp = lowpass_taps(std::min(cutoff_hz, 3900.0), kSampleRate);
  return fir_filter(up, interp);
}

inline std::vector<float> noise_vocoder(const std::vector<float>& x, const SpoofParams& p, Rng& rng) {
  const size_t pad = p.stft_n_fft;
  dsp::Stft s = dsp::stft(reflect_pad(x, pad), p.stft_n_fft, p.stft_hop);
  const size_t bins = p.stft_n_fft / 2 + 1;
  // log-domain moving-average envelope wide enough to erase harmonic lines
  // (f0 <= 200 Hz -> line spacing <= 13 bins at 15.6 Hz/bin) while keeping
  // formant-scale structure
  const int half_width = 16;
  std::vector<double> logmag(bins), env(bins);
  for (auto& frame : s.frames) {
    for (size_t k = 0; k < bins; ++k) logmag[k] = std::log(std::abs(frame[k]) + 1e-10);
    for (size_t k = 0; k < bins; ++k) {
      const int lo = std::max(0, static_cast<int>(k) - half_width);
      const int hi = std::min(static_cast<int>(bins) - 1, static_cast<int>(k) + half_width);
      double acc = 0;
      for (int j = lo; j <= hi; ++j) acc += logmag[static_cast<size_t>(j)];
      env[k] = std::exp(acc / (hi - lo + 1));
    }
    for (size_t k = 0; k < bins; ++k) frame[k] = std::polar(env[k], rng.uniform(0.0, 2.0 * M_PI));
    frame[0] = std::abs(frame[0]);
    frame.back() = std::abs(frame.back());
  }
  const std::vector<float> y = dsp::istft(s);
  return std::vector<float>(y.begin() + static_cast<long>(pad), y.begin() + static_cast<long>(pad + x.size()));
}

}  // namespace detail

// Full-clip spoof rendering. PitchFlat is a resynthesis and therefore needs
// the originating ClipSpec; passing it for other kinds is harmless.
inline std::vector<float> apply_spoof(const std::vector<float>& waveform, const SpoofParams& params,
                                      uint64_t seed, const ClipSpec* origin = nullptr) {
  std::vector<float> y;
  Rng rng(derive_seed(seed, "spoof:" + spoof_kind_name(params.kind)));
  switch (params.kind) {
    case SpoofKind::PhaseVocoder:
      y = detail::phase_vocoder(waveform, params, rng);
      break;
    case SpoofKind::Quantize:
      y = detail::quantize(waveform, params.quant_levels);
      break;
    case SpoofKind::BandLimit:
      y = detail::band_limit(waveform, params.cutoff_hz);
      break;
    case SpoofKind::PitchFlat: {
      if (!origin) throw nn::UsageError("apply_spoof: PitchFlat requires the originating ClipSpec");
      ClipSpec flat = *origin;
      flat.jitter_frac = 0.0;
      flat.flat_f0 = true;
      y = synth_bonafide(flat).samples;
      break;
    }
    case SpoofKind::NoiseVocoder:
      y = detail::noise_vocoder(waveform, params, rng);
      break;
    case SpoofKind::Splice:
      throw nn::UsageError("apply_spoof: Splice is produced by make_partial_spoof");
  }
  if (y.size() != waveform.size()) y.resize(waveform.size(), 0.0f);
  peak_normalize(y);
  return y;
}

struct PartialSpoof {
  std::vector<float> samples;
  std::vector<std::pair<double, double>> segments;  // replaced intervals, seconds
};

// Replaces the given interior regions with the spoof rendering of the same
// positions, blended through 10 ms raised-cosine crossfades centered on the
// reported boundaries. Regions must be sorted, non-overlapping, strictly
// inside the clip (with room for the fades), and total under 100%.
inline PartialSpoof make_partial_spoof_at(const std::vector<float>& bonafide, const SpoofParams& params,
                                          uint64_t seed,
                                          const std::vector<std::pair<double, double>>& regions,
                                          const ClipSpec* origin = nullptr) {
  const double dur = static_cast<double>(bonafide.size()) / kSampleRate;
  if (dur < 1.0 - 1e-9) throw InputError("make_partial_spoof: clip shorter than 1.0 s");
  if (params.kind == SpoofKind::Splice)
    throw nn::UsageError("make_partial_spoof: pass the rendering family, not Splice");
  if (regions.empty()) throw InputError("make_partial_spoof: no regions given");
  const double fade = 0.010;
  double total = 0;
  double prev_end = 0;
  for (const auto& [s0, s1] : regions) {
    if (s1 <= s0) throw InputError("make_partial_spoof: empty or inverted region");
    if (s0 - fade / 2 <= 0 || s1 + fade / 2 >= dur)
      throw InputError("make_partial_spoof: region not strictly interior to the clip");
    if (s0 - fade < prev_end) throw InputError("make_partial_spoof: regions overlap or touch");
    prev_end = s1;
    total += s1 - s0;
  }
  if (total >= dur - 1e-9) throw InputError("make_partial_spoof: regions cover the whole clip");

  // spoof the whole clip once, then blend the regions in
  const std::vector<float> spoofed = apply_spoof(bonafide, params, seed, origin);
  PartialSpoof out;
  out.samples = bonafide;
  const int fade_n = static_cast<int>(fade * kSampleRate);  // 160 samples
  for (const auto& [s0, s1] : regions) {
    const int a = static_cast<int>(std::llround(s0 * kSampleRate));
    const int b = static_cast<int>(std::llround(s1 * kSampleRate));
    for (int i = a - fade_n / 2; i < b + fade_n / 2; ++i) {
      if (i < 0 || i >= static_cast<int>(out.samples.size())) continue;
      double w = 1.0;  // weight of the spoofed signal
      if (i < a + fade_n / 2) {
        const double u = (i - (a - fade_n / 2)) / static_cast<double>(fade_n);
        w = 0.5 - 0.5 * std::cos(M_PI * u);
      } else if (i >= b - fade_n / 2) {
        const double u = ((b + fade_n / 2) - i) / static_cast<double>(fade_n);
        w = 0.5 - 0.5 * std::cos(M_PI * u);
      }
      const size_t idx = static_cast<size_t>(i);
      out.samples[idx] = static_cast<float>((1.0 - w) * out.samples[idx] + w * spoofed[idx]);
    }
    out.segments.push_back({s0, s1});
  }
  return out;
}

// Region layout for a random splice: 1-2 interior regions covering 25-55% of
// the clip in total. Pure function of (duration, seed) so manifests can be
// built without rendering audio.
inline std::vector<std::pair<double, double>> draw_splice_regions(double dur, uint64_t seed) {
  Rng rng(derive_seed(seed, "splice"));
  const int n_regions = 1 + static_cast<int>(rng.below(2));
  const double total_frac = rng.uniform(0.25, 0.55);
  const double margin = 0.060;  // keeps fades strictly inside the clip
  const double min_gap = 0.120;

  std::vector<double> lens(static_cast<size_t>(n_regions));
  if (n_regions == 1) {
    lens[0] = total_frac * dur;
  } else {
    const double a = rng.uniform(0.35, 0.65);
    lens[0] = total_frac * dur * a;
    lens[1] = total_frac * dur * (1.0 - a);
  }
  double slack = dur - 2 * margin - (n_regions - 1) * min_gap;
  for (double l : lens) slack -= l;
  if (slack < 0) throw InputError("draw_splice_regions: regions do not fit the clip");
  std::vector<std::pair<double, double>> segs;
  double cursor = margin;
  for (int r = 0; r < n_regions; ++r) {
    const double offset = rng.uniform(0.0, slack * 0.8 / n_regions);
    const double start = cursor + offset;
    segs.push_back({start, start + lens[static_cast<size_t>(r)]});
    cursor = start + lens[static_cast<size_t>(r)] + min_gap;
  }
  return segs;
}

inline PartialSpoof make_partial_spoof(const std::vector<float>& bonafide, const SpoofParams& params,
                                       uint64_t seed, const ClipSpec* origin = nullptr) {
  const double dur = static_cast<double>(bonafide.size()) / kSampleRate;
  if (dur < 1.0 - 1e-9) throw InputError("make_partial_spoof: clip shorter than 1.0 s");
  return make_partial_spoof_at(bonafide, params, seed, draw_splice_regions(dur, seed), origin);
}

}  // namespace dfallm::corpus

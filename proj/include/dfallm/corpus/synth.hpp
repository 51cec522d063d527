#pragma once

// Bona-fide clip synthesis: an impulse-train source with a random-walk f0 and
// per-period jitter, shaped by cascaded formant resonators that follow a
// template sequence, plus a pink-noise floor and a per-clip spectral tilt.
// The tilt deliberately decouples high-band energy from the template id, so
// "which template" (semantic) and "how clean is the texture" (acoustic) are
// independent axes of the corpus.

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "dfallm/dsp/fft.hpp"
#include "dfallm/errors.hpp"
#include "dfallm/nn/rng.hpp"

namespace dfallm::corpus {

constexpr int kSampleRate = 16000;
constexpr double kTemplateHopS = 0.020;  // template-id track granularity

struct FormantTemplate {
  std::array<double, 3> freq_hz;
  std::array<double, 3> bandwidth_hz;
};

// Eight well-separated vowel-like resonance patterns.
inline const std::array<FormantTemplate, 8>& formant_templates() {
  static const std::array<FormantTemplate, 8> t = {{
      {{730, 1090, 2440}, {90, 110, 170}},   // 0: open central
      {{270, 2290, 3010}, {60, 100, 170}},   // 1: close front
      {{300, 870, 2240}, {60, 90, 160}},     // 2: close back
      {{530, 1840, 2480}, {70, 100, 170}},   // 3: mid front
      {{570, 840, 2410}, {80, 90, 170}},     // 4: mid back
      {{440, 1020, 2240}, {70, 90, 160}},    // 5: near-close back
      {{660, 1720, 2410}, {90, 110, 170}},   // 6: near-open front
      {{490, 1350, 1690}, {70, 100, 140}},   // 7: central, low F3
  }};
  return t;
}

struct TemplateSegment {
  int template_id = 0;
  double duration_s = 0.0;
};

struct ClipSpec {
  uint64_t seed = 0;
  double duration_s = 1.5;  // in [1.0, 2.0]
  int sample_rate = kSampleRate;
  double f0_lo = 90.0, f0_hi = 200.0;
  std::vector<TemplateSegment> template_sequence;
  // synthesis knobs drawn per clip (kept in the spec so resynthesis variants
  // can override individual fields)
  double jitter_frac = 0.008;    // per-period stddev, >= 0.003 for bona fide
  double noise_floor_db = -30.0; // pink floor relative to harmonic RMS
  bool flat_f0 = false;          // no random walk: constant f0
};

inline void validate_clip_spec(const ClipSpec& s) {
  if (s.sample_rate != kSampleRate) throw ConfigError("ClipSpec: sample_rate must be 16000");
  if (s.duration_s < 1.0 - 1e-9 || s.duration_s > 2.0 + 1e-9)
    throw ConfigError("ClipSpec: duration " + std::to_string(s.duration_s) + " outside [1.0, 2.0]");
  if (!(s.f0_lo > 0) || s.f0_hi < s.f0_lo) throw ConfigError("ClipSpec: bad f0 range");
  if (s.template_sequence.empty()) throw ConfigError("ClipSpec: empty template sequence");
  double sum = 0;
  for (const auto& seg : s.template_sequence) {
    if (seg.template_id < 0 || seg.template_id >= static_cast<int>(formant_templates().size()))
      throw ConfigError("ClipSpec: template id " + std::to_string(seg.template_id) + " out of range");
    if (seg.duration_s <= 0) throw ConfigError("ClipSpec: non-positive segment duration");
    sum += seg.duration_s;
  }
  if (std::abs(sum - s.duration_s) > 1e-6)
    throw ConfigError("ClipSpec: segment durations sum to " + std::to_string(sum) + ", clip is " +
                      std::to_string(s.duration_s));
}

// Draws a random clip spec for a sample id. Same (global_seed, id) -> same
// spec, independent of generation order.
inline ClipSpec make_clip_spec(uint64_t global_seed, const std::string& id, double f0_lo = 90.0,
                               double f0_hi = 200.0, double noise_floor_db = -30.0) {
  ClipSpec s;
  s.seed = derive_seed(global_seed, id);
  Rng rng(s.seed);
  Rng draw = rng.fork(1);
  s.duration_s = draw.uniform(1.0, 2.0);
  s.f0_lo = f0_lo;
  s.f0_hi = f0_hi;
  s.noise_floor_db = noise_floor_db;
  s.jitter_frac = draw.uniform(0.004, 0.015);
  const int n_segs = 2 + static_cast<int>(draw.below(3));  // 2-4 templates per clip
  std::vector<double> weights(n_segs);
  double wsum = 0;
  for (auto& w : weights) {
    w = draw.uniform(0.5, 1.5);
    wsum += w;
  }
  int prev = -1;
  double used = 0;
  for (int i = 0; i < n_segs; ++i) {
    TemplateSegment seg;
    do {
      seg.template_id = static_cast<int>(draw.below(formant_templates().size()));
    } while (seg.template_id == prev);
    prev = seg.template_id;
    seg.duration_s = (i == n_segs - 1) ? s.duration_s - used : s.duration_s * weights[i] / wsum;
    used += seg.duration_s;
    s.template_sequence.push_back(seg);
  }
  return s;
}

namespace detail {

// two-pole resonator; coefficients refreshed as formant targets glide
struct Resonator {
  double b0 = 1, a1 = 0, a2 = 0;
  double z1 = 0, z2 = 0;
  void set(double freq_hz, double bw_hz, double fs) {
    const double r = std::exp(-M_PI * bw_hz / fs);
    const double theta = 2.0 * M_PI * freq_hz / fs;
    a1 = 2.0 * r * std::cos(theta);
    a2 = -r * r;
    b0 = (1.0 - r * r) * std::sin(theta);  // ~unity gain at resonance
  }
  double tick(double x) {
    const double y = b0 * x + a1 * z1 + a2 * z2;
    z2 = z1;
    z1 = y;
    return y;
  }
};

// Paul Kellet's economy pink-noise filter over white gaussian input.
struct PinkNoise {
  double b0 = 0, b1 = 0, b2 = 0;
  double tick(double white) {
    b0 = 0.99765 * b0 + white * 0.0990460;
    b1 = 0.96300 * b1 + white * 0.2965164;
    b2 = 0.57000 * b2 + white * 1.0526913;
    return b0 + b1 + b2 + white * 0.1848;
  }
};

inline double rms(const std::vector<double>& x) {
  double s = 0;
  for (double v : x) s += v * v;
  return std::sqrt(s / std::max<size_t>(1, x.size()));
}

// whole-clip spectral tilt in dB/octave around 1 kHz, applied via FFT
inline void apply_tilt(std::vector<double>& x, double tilt_db_per_oct) {
  if (tilt_db_per_oct == 0.0) return;
  const size_t n = x.size();
  const size_t nfft = dsp::next_pow2(n);
  std::vector<std::complex<double>> buf(nfft, {0.0, 0.0});
  for (size_t i = 0; i < n; ++i) buf[i] = x[i];
  dsp::fft_inplace(buf, false);
  const double alpha = tilt_db_per_oct / (20.0 * std::log10(2.0));
  for (size_t k = 0; k <= nfft / 2; ++k) {
    const double f = std::max(50.0, static_cast<double>(k) * kSampleRate / static_cast<double>(nfft));
    const double g = std::pow(f / 1000.0, alpha);
    buf[k] *= g;
    if (k != 0 && k != nfft / 2) buf[nfft - k] *= g;
  }
  dsp::fft_inplace(buf, true);
  for (size_t i = 0; i < n; ++i) x[i] = buf[i].real();
}

}  // namespace detail

inline void peak_normalize(std::vector<float>& x, float peak = 0.9f) {
  float mx = 0;
  for (float v : x) mx = std::max(mx, std::abs(v));
  if (mx > 0) {
    const float g = peak / mx;
    for (auto& v : x) v *= g;
  }
}

struct BonafideClip {
  std::vector<float> samples;
  std::vector<int> template_track;  // one id per 20 ms frame
};

// Deterministic synthesis: all randomness comes from forks of spec.seed, so
// identical specs produce bit-identical waveforms.
inline BonafideClip synth_bonafide(const ClipSpec& spec) {
  validate_clip_spec(spec);
  const double fs = spec.sample_rate;
  const size_t n = static_cast<size_t>(std::llround(spec.duration_s * fs));
  Rng base(spec.seed);
  Rng walk_rng = base.fork(2);
  Rng jitter_rng = base.fork(3);
  Rng noise_rng = base.fork(4);
  Rng tilt_rng = base.fork(5);

  // impulse-train excitation with random-walk f0 and per-period jitter
  std::vector<double> excitation(n, 0.0);
  double f0 = spec.flat_f0 ? std::sqrt(spec.f0_lo * spec.f0_hi)
                           : walk_rng.uniform(spec.f0_lo + 0.15 * (spec.f0_hi - spec.f0_lo),
                                              spec.f0_hi - 0.15 * (spec.f0_hi - spec.f0_lo));
  double t = jitter_rng.uniform(0.0, fs / f0);  // random initial phase
  while (t < static_cast<double>(n)) {
    const size_t idx = static_cast<size_t>(t);
    if (idx < n) excitation[idx] += 1.0;
    double period = fs / f0;
    if (spec.jitter_frac > 0) period *= 1.0 + spec.jitter_frac * jitter_rng.normal();
    t += period;
    if (!spec.flat_f0) {
      f0 *= std::exp(0.02 * walk_rng.normal());
      f0 = std::min(spec.f0_hi, std::max(spec.f0_lo, f0));
    }
  }

  // template-id track: one id per 20 ms frame, from the segment sequence
  const int n_track = static_cast<int>(std::ceil(spec.duration_s / kTemplateHopS));
  std::vector<int> track(n_track, spec.template_sequence.front().template_id);
  {
    double acc = 0;
    size_t seg = 0;
    for (int fidx = 0; fidx < n_track; ++fidx) {
      const double center = (fidx + 0.5) * kTemplateHopS;
      while (seg + 1 < spec.template_sequence.size() &&
             center > acc + spec.template_sequence[seg].duration_s) {
        acc += spec.template_sequence[seg].duration_s;
        ++seg;
      }
      track[fidx] = spec.template_sequence[seg].template_id;
    }
  }

  // formant filtering with smoothly gliding targets (~12 ms time constant)
  const auto& templates = formant_templates();
  std::array<detail::Resonator, 3> res;
  std::array<double, 3> cur_f{}, cur_b{};
  {
    const auto& t0 = templates[static_cast<size_t>(track[0])];
    for (int i = 0; i < 3; ++i) {
      cur_f[i] = t0.freq_hz[i];
      cur_b[i] = t0.bandwidth_hz[i];
      res[i].set(cur_f[i], cur_b[i], fs);
    }
  }
  const double glide = 1.0 - std::exp(-1.0 / (0.012 * fs / 16.0));  // per 16-sample block
  std::vector<double> voiced(n, 0.0);
  for (size_t s = 0; s < n; ++s) {
    if (s % 16 == 0) {
      const int fidx = std::min<int>(n_track - 1, static_cast<int>(s / (kTemplateHopS * fs)));
      const auto& tgt = templates[static_cast<size_t>(track[fidx])];
      for (int i = 0; i < 3; ++i) {
        cur_f[i] += glide * (tgt.freq_hz[i] - cur_f[i]);
        cur_b[i] += glide * (tgt.bandwidth_hz[i] - cur_b[i]);
        res[i].set(cur_f[i], cur_b[i], fs);
      }
    }
    double v = excitation[s];
    double y = 0;
    for (int i = 0; i < 3; ++i) y += res[i].tick(v);
    voiced[s] = y;
  }

  // per-clip spectral tilt on the harmonic part only
  const double tilt = tilt_rng.uniform(-2.5, 2.5);
  detail::apply_tilt(voiced, tilt);

  // pink-noise floor relative to harmonic RMS
  const double sig_rms = detail::rms(voiced);
  std::vector<double> pink(n);
  detail::PinkNoise pn;
  for (size_t i = 0; i < n; ++i) pink[i] = pn.tick(noise_rng.normal());
  const double pink_rms = detail::rms(pink);
  const double target = sig_rms * std::pow(10.0, spec.noise_floor_db / 20.0);
  const double g = pink_rms > 0 ? target / pink_rms : 0.0;
  BonafideClip out;
  out.samples.resize(n);
  for (size_t i = 0; i < n; ++i) out.samples[i] = static_cast<float>(voiced[i] + g * pink[i]);
  peak_normalize(out.samples);
  out.template_track = std::move(track);
  return out;
}

}  // namespace dfallm::corpus

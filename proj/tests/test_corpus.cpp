// Corpus tests. Oracles here are independent signal measurements:
// autocorrelation for periodicity and period variance, STFT band energies for
// spectral effects, and phase-advance coherence for vocoder artifacts. The
// per-family statistical-gap tests pin the corpus's core promise: every spoof
// family is separable from bona fide by at least one simple statistic.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>

#include "dfallm/corpus/corpus.hpp"
#include "dfallm/corpus/spoof.hpp"
#include "dfallm/corpus/synth.hpp"
#include "dfallm/corpus/wav.hpp"
#include "dfallm/dsp/fft.hpp"

using namespace dfallm;
using namespace dfallm::corpus;

namespace {

// --- signal-measurement oracles (test-side only) ---------------------------

// raw autocorrelation peak lag over [lo, hi]
int autocorr_peak_lag(const std::vector<float>& x, int lo, int hi, size_t start, size_t len) {
  double best = -1e300;
  int best_lag = lo;
  for (int lag = lo; lag <= hi; ++lag) {
    double acc = 0;
    for (size_t i = start; i < start + len; ++i) acc += static_cast<double>(x[i]) * x[i + static_cast<size_t>(lag)];
    if (acc > best) {
      best = acc;
      best_lag = lag;
    }
  }
  return best_lag;
}

// normalized autocorrelation maximum in the plausible pitch-lag range,
// averaged over windows: ~1 for periodic signals, ~0 for noise
double periodicity(const std::vector<float>& x) {
  const int lo = 16000 / 260, hi = 16000 / 70;
  const size_t win = 640;  // 40 ms
  double acc = 0;
  int n = 0;
  for (size_t start = 0; start + win + static_cast<size_t>(hi) < x.size(); start += 480) {
    double e = 1e-12;
    for (size_t i = start; i < start + win; ++i) e += static_cast<double>(x[i]) * x[i];
    double best = 0;
    for (int lag = lo; lag <= hi; ++lag) {
      double c = 0, e2 = 1e-12;
      for (size_t i = start; i < start + win; ++i) {
        c += static_cast<double>(x[i]) * x[i + static_cast<size_t>(lag)];
        e2 += static_cast<double>(x[i + static_cast<size_t>(lag)]) * x[i + static_cast<size_t>(lag)];
      }
      best = std::max(best, c / std::sqrt(e * e2));
    }
    acc += best;
    ++n;
  }
  return n ? acc / n : 0.0;
}

// variance of per-window pitch-period estimates (in samples^2)
double period_variance(const std::vector<float>& x) {
  const int lo = 16000 / 260, hi = 16000 / 70;
  const size_t win = 640;
  std::vector<double> periods;
  for (size_t start = 0; start + win + static_cast<size_t>(hi) < x.size(); start += 320)
    periods.push_back(autocorr_peak_lag(x, lo, hi, start, win));
  if (periods.size() < 2) return 0.0;
  const double mean = std::accumulate(periods.begin(), periods.end(), 0.0) / static_cast<double>(periods.size());
  double var = 0;
  for (double p : periods) var += (p - mean) * (p - mean);
  return var / static_cast<double>(periods.size());
}

// waveform kurtosis: glottal-pulse excitation is spiky (heavy-tailed), while
// phase randomization Gaussianizes the waveform toward kurtosis 3
double kurtosis(const std::vector<float>& x) {
  double m2 = 0, m4 = 0;
  for (float v : x) {
    const double d = v;
    m2 += d * d;
    m4 += d * d * d * d;
  }
  m2 /= static_cast<double>(x.size());
  m4 /= static_cast<double>(x.size());
  return m4 / (m2 * m2 + 1e-30);
}

// spectral flatness of the average periodogram over [lo_hz, hi_hz):
// 0 for white noise, strongly negative for line spectra / sloped floors.
// Invariant to the per-clip tilt and to the quantizer level count.
double spectral_flatness(const std::vector<float>& x, double lo_hz, double hi_hz) {
  const dsp::Stft s = dsp::stft(x, 1024, 256);
  const double bin_hz = 16000.0 / 1024.0;
  double log_sum = 0, lin_sum = 0;
  int n = 0;
  const size_t k_lo = static_cast<size_t>(lo_hz / bin_hz), k_hi = static_cast<size_t>(hi_hz / bin_hz);
  for (size_t k = k_lo; k < k_hi; ++k) {
    double p = 1e-20;
    for (const auto& fr : s.frames) p += std::norm(fr[k]);
    log_sum += std::log(p);
    lin_sum += p;
    ++n;
  }
  return log_sum / n - std::log(lin_sum / n);
}

// within-clip regime-change statistic: spread of the smoothed per-frame
// log power above the highest formant skirt (bona fide clips keep a
// stationary noise floor up there;
// splice renderings jump by tens of dB inside the spoofed segments)
double band_power_spread(const std::vector<float>& x) {
  const dsp::Stft s = dsp::stft(x, 1024, 256);
  const double bin_hz = 16000.0 / 1024.0;
  std::vector<double> level;
  for (const auto& fr : s.frames) {
    double hi = 1e-20;
    for (size_t k = 0; k < fr.size(); ++k) {
      const double f = static_cast<double>(k) * bin_hz;
      if (f >= 6800 && f < 7900) hi += std::norm(fr[k]);
    }
    level.push_back(std::log(hi));
  }
  // smooth over ~6 frames (~0.1 s)
  std::vector<double> smooth;
  for (size_t i = 0; i + 6 <= level.size(); ++i) {
    double acc = 0;
    for (size_t j = i; j < i + 6; ++j) acc += level[j];
    smooth.push_back(acc / 6.0);
  }
  if (smooth.empty()) return 0.0;
  std::vector<double> sorted = smooth;
  std::sort(sorted.begin(), sorted.end());
  const double median = sorted[sorted.size() / 2];
  double spread = 0;
  for (double v : smooth) spread = std::max(spread, std::abs(v - median));
  return spread;
}

struct GapResult {
  double gap_sigmas;
  double mean_bona, mean_spoof;
  double bona_lo, bona_hi, spoof_lo, spoof_hi;
};

GapResult statistical_gap(const std::vector<double>& bona, const std::vector<double>& spoof) {
  auto stats = [](const std::vector<double>& v) {
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double var = 0;
    for (double x : v) var += (x - mean) * (x - mean);
    return std::pair<double, double>(mean, var / static_cast<double>(v.size()));
  };
  auto [mb, vb] = stats(bona);
  auto [ms, vs] = stats(spoof);
  const double pooled = std::sqrt(0.5 * (vb + vs) + 1e-18);
  auto [b0, b1] = std::minmax_element(bona.begin(), bona.end());
  auto [s0, s1] = std::minmax_element(spoof.begin(), spoof.end());
  return {std::abs(mb - ms) / pooled, mb, ms, *b0, *b1, *s0, *s1};
}

ClipSpec simple_spec(uint64_t seed, double f0, double jitter, double duration = 1.0,
                     double noise_db = -60.0) {
  ClipSpec s;
  s.seed = seed;
  s.duration_s = duration;
  s.f0_lo = s.f0_hi = f0;
  s.jitter_frac = jitter;
  s.noise_floor_db = noise_db;
  s.template_sequence = {{0, duration}};
  return s;
}

}  // namespace

// ---------------------------------------------------------------------------
// wav io

TEST_CASE("wav round trip is bit-exact") {
  const std::string path = "/tmp/dfallm_test.wav";
  ClipSpec s = make_clip_spec(42, "wavtest");
  auto clip = synth_bonafide(s);
  write_wav(path, clip.samples, kSampleRate);
  WavData back = read_wav(path);
  CHECK(back.sample_rate == 16000);
  REQUIRE(back.samples.size() == clip.samples.size());
  // the first write quantizes; re-writing what was read must be identical
  const std::string path2 = "/tmp/dfallm_test2.wav";
  write_wav(path2, back.samples, kSampleRate);
  std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
  std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(b1 == b2);
  CHECK(wav_duration(path) == doctest::Approx(s.duration_s).epsilon(1e-4));
  std::filesystem::remove(path);
  std::filesystem::remove(path2);
}

TEST_CASE("wav reader rejects malformed input") {
  const std::string path = "/tmp/dfallm_bad.wav";
  {
    std::ofstream f(path, std::ios::binary);
    f << "not a wav at all";
  }
  CHECK_THROWS_AS(read_wav(path), DataError);
  CHECK_THROWS_AS(wav_duration(path), DataError);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(read_wav("/tmp/does_not_exist_dfallm.wav"), DataError);
}

// ---------------------------------------------------------------------------
// bona fide synthesis

TEST_CASE("clip spec validation") {
  ClipSpec s = simple_spec(1, 120, 0.008);
  validate_clip_spec(s);
  ClipSpec bad = s;
  bad.duration_s = 2.5;
  CHECK_THROWS_AS(validate_clip_spec(bad), ConfigError);
  bad = s;
  bad.template_sequence = {{0, 0.4}};  // does not sum to duration
  CHECK_THROWS_AS(validate_clip_spec(bad), ConfigError);
  bad = s;
  bad.template_sequence = {{99, 1.0}};
  CHECK_THROWS_AS(validate_clip_spec(bad), ConfigError);
}

TEST_CASE("make_clip_spec: deterministic, durations sum exactly") {
  ClipSpec a = make_clip_spec(42, "clip_0001");
  ClipSpec b = make_clip_spec(42, "clip_0001");
  CHECK(a.seed == b.seed);
  CHECK(a.duration_s == b.duration_s);
  REQUIRE(a.template_sequence.size() == b.template_sequence.size());
  for (size_t i = 0; i < a.template_sequence.size(); ++i) {
    CHECK(a.template_sequence[i].template_id == b.template_sequence[i].template_id);
    CHECK(a.template_sequence[i].duration_s == b.template_sequence[i].duration_s);
  }
  validate_clip_spec(a);  // includes the exact-sum check
  ClipSpec c = make_clip_spec(43, "clip_0001");
  CHECK(c.seed != a.seed);
}

TEST_CASE("synth determinism: same spec twice is bit-identical") {
  ClipSpec s = make_clip_spec(7, "determinism");
  auto c1 = synth_bonafide(s);
  auto c2 = synth_bonafide(s);
  REQUIRE(c1.samples.size() == c2.samples.size());
  CHECK(std::memcmp(c1.samples.data(), c2.samples.data(), c1.samples.size() * sizeof(float)) == 0);
  CHECK(c1.template_track == c2.template_track);
}

TEST_CASE("fixed f0=100, zero jitter: autocorrelation peak at exactly 160 samples") {
  ClipSpec s = simple_spec(11, 100.0, 0.0);
  auto clip = synth_bonafide(s);
  const int lag = autocorr_peak_lag(clip.samples, 100, 300, 4000, 8000);
  CHECK(lag == 160);
}

TEST_CASE("template track has one id per 20 ms frame") {
  ClipSpec s = make_clip_spec(13, "tracklen");
  auto clip = synth_bonafide(s);
  CHECK(static_cast<int>(clip.template_track.size()) ==
        static_cast<int>(std::ceil(s.duration_s / 0.020)));
  // track follows the segment sequence
  double acc = 0;
  for (const auto& seg : s.template_sequence) {
    const int mid_frame = static_cast<int>((acc + seg.duration_s / 2) / 0.020);
    CHECK(clip.template_track[static_cast<size_t>(mid_frame)] == seg.template_id);
    acc += seg.duration_s;
  }
}

TEST_CASE("peak normalization lands on 0.9") {
  auto clip = synth_bonafide(make_clip_spec(17, "norm"));
  float mx = 0;
  for (float v : clip.samples) mx = std::max(mx, std::abs(v));
  CHECK(mx == doctest::Approx(0.9f).epsilon(1e-5));
}

// ---------------------------------------------------------------------------
// spoof transforms

TEST_CASE("quantize with 2^32 levels is a near-identity") {
  auto bona = synth_bonafide(make_clip_spec(19, "qid")).samples;
  SpoofParams p;
  p.kind = SpoofKind::Quantize;
  p.quant_levels = 1ull << 32;
  auto y = apply_spoof(bona, p, 123);
  REQUIRE(y.size() == bona.size());
  for (size_t i = 0; i < y.size(); i += 7) CHECK(std::abs(y[i] - bona[i]) < 1e-4f);
}

TEST_CASE("bandlimit kills energy above 4 kHz by >= 20 dB") {
  auto bona = synth_bonafide(make_clip_spec(23, "bl")).samples;
  SpoofParams p;
  p.kind = SpoofKind::BandLimit;
  auto y = apply_spoof(bona, p, 456);
  const double before = dsp::band_power(bona, 16000, 4000, 7900);
  const double after = dsp::band_power(y, 16000, 4000, 7900);
  CHECK(10.0 * std::log10(before / (after + 1e-30)) >= 20.0);
}

TEST_CASE("pitchflat: period variance collapses below 1% of the original's") {
  ClipSpec spec = make_clip_spec(29, "pf", 90, 200, -40);
  auto bona = synth_bonafide(spec).samples;
  SpoofParams p;
  p.kind = SpoofKind::PitchFlat;
  auto flat = apply_spoof(bona, p, 789, &spec);
  const double vb = period_variance(bona);
  const double vf = period_variance(flat);
  CHECK(vb > 0);
  CHECK(vf < 0.01 * vb);
}

TEST_CASE("pitchflat without the originating spec is a usage error") {
  auto bona = synth_bonafide(make_clip_spec(31, "pf2")).samples;
  SpoofParams p;
  p.kind = SpoofKind::PitchFlat;
  CHECK_THROWS_AS(apply_spoof(bona, p, 1), nn::UsageError);
}

TEST_CASE("spoof transforms are deterministic and length-preserving") {
  ClipSpec spec = make_clip_spec(37, "det");
  auto bona = synth_bonafide(spec).samples;
  for (SpoofKind k : {SpoofKind::PhaseVocoder, SpoofKind::Quantize, SpoofKind::BandLimit,
                      SpoofKind::PitchFlat, SpoofKind::NoiseVocoder}) {
    SpoofParams p;
    p.kind = k;
    auto y1 = apply_spoof(bona, p, 555, &spec);
    auto y2 = apply_spoof(bona, p, 555, &spec);
    REQUIRE(y1.size() == bona.size());
    CHECK(std::memcmp(y1.data(), y2.data(), y1.size() * sizeof(float)) == 0);
  }
  SpoofParams sp;
  sp.kind = SpoofKind::Splice;
  CHECK_THROWS_AS(apply_spoof(bona, sp, 1), nn::UsageError);
}

// ---------------------------------------------------------------------------
// partial spoofs

TEST_CASE("explicit splice region is echoed exactly") {
  ClipSpec spec = simple_spec(41, 130, 0.008, 2.0, -30);
  auto bona = synth_bonafide(spec).samples;
  SpoofParams p;
  p.kind = SpoofKind::Quantize;
  p.quant_levels = 8;
  auto out = make_partial_spoof_at(bona, p, 99, {{0.50, 1.00}});
  REQUIRE(out.segments.size() == 1);
  CHECK(out.segments[0].first == 0.50);
  CHECK(out.segments[0].second == 1.00);
  REQUIRE(out.samples.size() == bona.size());
  // untouched outside the crossfade zones (10 ms fades centered on bounds)
  const int a = static_cast<int>(0.50 * 16000), b = static_cast<int>(1.00 * 16000);
  for (int i = 0; i < a - 81; ++i) CHECK(out.samples[static_cast<size_t>(i)] == bona[static_cast<size_t>(i)]);
  for (size_t i = static_cast<size_t>(b) + 81; i < bona.size(); ++i) CHECK(out.samples[i] == bona[i]);
  // actually modified inside
  double dev = 0;
  for (int i = a + 200; i < b - 200; ++i)
    dev = std::max(dev, std::abs(static_cast<double>(out.samples[static_cast<size_t>(i)]) - bona[static_cast<size_t>(i)]));
  CHECK(dev > 1e-3);
}

TEST_CASE("splice rejects full-coverage and non-interior regions") {
  auto bona = synth_bonafide(simple_spec(43, 120, 0.008, 2.0)).samples;
  SpoofParams p;
  p.kind = SpoofKind::Quantize;
  CHECK_THROWS_AS(make_partial_spoof_at(bona, p, 1, {{0.0, 2.0}}), InputError);
  CHECK_THROWS_AS(make_partial_spoof_at(bona, p, 1, {{0.001, 1.999}}), InputError);
  CHECK_THROWS_AS(make_partial_spoof_at(bona, p, 1, {{0.5, 0.5}}), InputError);
  CHECK_THROWS_AS(make_partial_spoof_at(bona, p, 1, {{0.2, 0.6}, {0.55, 0.9}}), InputError);
  CHECK_THROWS_AS(make_partial_spoof_at(bona, p, 1, {}), InputError);
  std::vector<float> tiny(8000, 0.1f);
  CHECK_THROWS_AS(make_partial_spoof(tiny, p, 1), InputError);
}

TEST_CASE("random splices cover 20-60% with interior, sorted segments") {
  for (uint64_t seed = 0; seed < 30; ++seed) {
    const double dur = 1.0 + 0.033 * static_cast<double>(seed % 30);
    auto segs = draw_splice_regions(dur, seed);
    REQUIRE(!segs.empty());
    CHECK(segs.size() <= 2);
    double total = 0, prev = 0;
    for (auto [s0, s1] : segs) {
      CHECK(s0 > 0.0);
      CHECK(s1 < dur);
      CHECK(s0 >= prev);
      CHECK(s1 > s0);
      prev = s1;
      total += s1 - s0;
    }
    CHECK(total >= 0.20 * dur);
    CHECK(total <= 0.60 * dur);
  }
}

// ---------------------------------------------------------------------------
// per-family statistical gaps (the corpus's core separability promise)

TEST_CASE("statistical gap >= 3 sigma for every family vs bona fide") {
  const int n = 100;
  std::vector<std::vector<float>> bona(n);
  std::vector<ClipSpec> specs(n);
  for (int i = 0; i < n; ++i) {
    specs[static_cast<size_t>(i)] = make_clip_spec(1000, "gap_" + std::to_string(i));
    bona[static_cast<size_t>(i)] = synth_bonafide(specs[static_cast<size_t>(i)]).samples;
  }
  auto collect = [&](auto&& statistic, auto&& transform) {
    std::vector<double> sb, ss;
    for (int i = 0; i < n; ++i) {
      sb.push_back(statistic(bona[static_cast<size_t>(i)]));
      ss.push_back(statistic(transform(i)));
    }
    return statistical_gap(sb, ss);
  };

  SUBCASE("phasevocoder via waveform kurtosis") {
    auto stat = [](const std::vector<float>& x) { return std::log(kurtosis(x) - 2.5); };
    auto g = collect(stat, [&](int i) {
      SpoofParams p;
      p.kind = SpoofKind::PhaseVocoder;
      return apply_spoof(bona[static_cast<size_t>(i)], p, 2000 + static_cast<uint64_t>(i));
    });
    INFO("gap=", g.gap_sigmas, " bona=", g.mean_bona, " [", g.bona_lo, ",", g.bona_hi,
         "] spoof=", g.mean_spoof, " [", g.spoof_lo, ",", g.spoof_hi, "]");
    CHECK(g.gap_sigmas >= 3.0);
  }
  SUBCASE("quantize via distinct-value fraction") {
    auto stat = [](const std::vector<float>& x) {
      std::vector<float> v = x;
      std::sort(v.begin(), v.end());
      size_t distinct = static_cast<size_t>(std::unique(v.begin(), v.end()) - v.begin());
      return static_cast<double>(distinct) / static_cast<double>(x.size());
    };
    auto g = collect(stat, [&](int i) {
      SpoofParams p;
      p.kind = SpoofKind::Quantize;
      p.quant_levels = (i % 2) ? 8 : 16;
      return apply_spoof(bona[static_cast<size_t>(i)], p, 3000 + static_cast<uint64_t>(i));
    });
    INFO("gap=", g.gap_sigmas, " bona=", g.mean_bona, " [", g.bona_lo, ",", g.bona_hi,
         "] spoof=", g.mean_spoof, " [", g.spoof_lo, ",", g.spoof_hi, "]");
    CHECK(g.gap_sigmas >= 3.0);
  }
  SUBCASE("bandlimit via high-band power") {
    auto stat = [](const std::vector<float>& x) {
      return std::log(dsp::band_power(x, 16000, 4000, 7900) + 1e-30);
    };
    auto g = collect(stat, [&](int i) {
      SpoofParams p;
      p.kind = SpoofKind::BandLimit;
      return apply_spoof(bona[static_cast<size_t>(i)], p, 4000 + static_cast<uint64_t>(i));
    });
    INFO("gap=", g.gap_sigmas, " bona=", g.mean_bona, " [", g.bona_lo, ",", g.bona_hi,
         "] spoof=", g.mean_spoof, " [", g.spoof_lo, ",", g.spoof_hi, "]");
    CHECK(g.gap_sigmas >= 3.0);
  }
  SUBCASE("pitchflat via period variance") {
    auto stat = [](const std::vector<float>& x) { return std::log(period_variance(x) + 1e-6); };
    auto g = collect(stat, [&](int i) {
      SpoofParams p;
      p.kind = SpoofKind::PitchFlat;
      return apply_spoof(bona[static_cast<size_t>(i)], p, 5000 + static_cast<uint64_t>(i), &specs[static_cast<size_t>(i)]);
    });
    INFO("gap=", g.gap_sigmas, " bona=", g.mean_bona, " [", g.bona_lo, ",", g.bona_hi,
         "] spoof=", g.mean_spoof, " [", g.spoof_lo, ",", g.spoof_hi, "]");
    CHECK(g.gap_sigmas >= 3.0);
  }
  SUBCASE("noisevocoder via periodicity") {
    auto g = collect(periodicity, [&](int i) {
      SpoofParams p;
      p.kind = SpoofKind::NoiseVocoder;
      return apply_spoof(bona[static_cast<size_t>(i)], p, 6000 + static_cast<uint64_t>(i));
    });
    INFO("gap=", g.gap_sigmas, " bona=", g.mean_bona, " [", g.bona_lo, ",", g.bona_hi,
         "] spoof=", g.mean_spoof, " [", g.spoof_lo, ",", g.spoof_hi, "]");
    CHECK(g.gap_sigmas >= 3.0);
  }
  SUBCASE("splice via top-band power spread") {
    auto stat = [](const std::vector<float>& x) { return std::log(band_power_spread(x) + 0.05); };
    auto g = collect(stat, [&](int i) {
      const uint64_t seed = 7000 + static_cast<uint64_t>(i);
      const SpoofParams render = (i % 2) ? SpoofParams{SpoofKind::Quantize, 8, 3400.0, 1024, 256}
                                         : SpoofParams{SpoofKind::BandLimit, 16, 3400.0, 1024, 256};
      return make_partial_spoof(bona[static_cast<size_t>(i)], render, seed).samples;
    });
    INFO("gap=", g.gap_sigmas, " bona=", g.mean_bona, " [", g.bona_lo, ",", g.bona_hi,
         "] spoof=", g.mean_spoof, " [", g.spoof_lo, ",", g.spoof_hi, "]");
    CHECK(g.gap_sigmas >= 3.0);
  }
}

// ---------------------------------------------------------------------------
// corpus building

TEST_CASE("build_corpus: counts, balance, partition, determinism") {
  namespace fs = std::filesystem;
  const std::string dir = "/tmp/dfallm_test_corpus";
  fs::remove_all(dir);
  CorpusConfig cfg;
  cfg.out_dir = dir;
  cfg.seed = 42;
  cfg.train_per_family = 4;
  cfg.id_test_per_family = 2;
  cfg.ood_spoof_total = 6;
  cfg.ood_bona_total = 6;

  Manifest m = build_corpus(cfg);
  validate_manifest(m);

  // 50/50 balance per split; 5 train families
  std::map<std::string, std::pair<int, int>> split_counts;  // split -> (bona, spoof)
  for (const auto& r : m.records) {
    auto& c = split_counts[r.split];
    (r.label == "bonafide" ? c.first : c.second)++;
  }
  CHECK(split_counts["train"].second == 5 * 4);
  CHECK(split_counts["train"].first == 5 * 4);
  CHECK(split_counts["id_test"].second == 5 * 2);
  CHECK(split_counts["id_test"].first == 5 * 2);
  CHECK(split_counts["ood_test"].second == 6);
  CHECK(split_counts["ood_test"].first == 6);

  // OOD spoofs only from held-out families
  for (const auto& r : m.records)
    if (r.split == "ood_test" && r.label == "spoof") CHECK(r.family == "noisevocoder");
  // and no held-out family leaks into train/id_test
  for (const auto& r : m.records)
    if (r.split != "ood_test") CHECK(r.family != "noisevocoder");

  // segments: empty iff bonafide; full spoofs cover [0, dur); splices interior
  for (const auto& r : m.records) {
    if (r.label == "bonafide") {
      CHECK(r.segments.empty());
    } else {
      REQUIRE(!r.segments.empty());
      if (r.family == "splice")
        for (auto [s0, s1] : r.segments) CHECK(s0 > 0.0);
      else
        CHECK(r.segments[0].first == 0.0);
    }
  }

  // deterministic rebuild: identical manifest, regenerated wav bit-identical
  const fs::path victim = fs::path(dir) / m.records[3].wav_path;
  std::string before = [&] {
    std::ifstream f(victim, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  }();
  fs::remove(victim);
  Manifest m2 = build_corpus(cfg);
  std::string after = [&] {
    std::ifstream f(victim, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  }();
  CHECK(before == after);
  CHECK(m2.config_hash == m.config_hash);
  REQUIRE(m2.records.size() == m.records.size());
  for (size_t i = 0; i < m.records.size(); ++i) CHECK(m2.records[i].id == m.records[i].id);

  // manifest loads back identically
  Manifest loaded = load_manifest(dir);
  REQUIRE(loaded.records.size() == m.records.size());
  for (size_t i = 0; i < m.records.size(); ++i) {
    CHECK(loaded.records[i].id == m.records[i].id);
    CHECK(loaded.records[i].family == m.records[i].family);
    CHECK(loaded.records[i].segments == m.records[i].segments);
  }
  fs::remove_all(dir);
}

TEST_CASE("corpus config errors") {
  CorpusConfig cfg;
  cfg.out_dir = "/tmp/dfallm_cfg_err";
  cfg.train_families = {"quantize", "noisevocoder"};
  cfg.ood_holdout_families = {"noisevocoder"};
  CHECK_THROWS_AS(build_corpus(cfg), ConfigError);
  cfg.train_families = {"quantize", "quantize"};
  cfg.ood_holdout_families = {"noisevocoder"};
  CHECK_THROWS_AS(build_corpus(cfg), ConfigError);
  cfg.train_families = {"quantize", "nosuchfamily"};
  CHECK_THROWS_AS(build_corpus(cfg), ConfigError);
  cfg = CorpusConfig{};
  cfg.out_dir = "";
  CHECK_THROWS_AS(build_corpus(cfg), ConfigError);
}

TEST_CASE("manifest loader rejects malformed records") {
  namespace fs = std::filesystem;
  const std::string dir = "/tmp/dfallm_bad_manifest";
  fs::create_directories(dir);
  auto write_manifest = [&](const std::string& content) {
    std::ofstream f(fs::path(dir) / "manifest.jsonl", std::ios::trunc);
    f << content;
  };
  write_manifest("{not json\n");
  CHECK_THROWS_AS(load_manifest(dir), DataError);
  write_manifest(R"({"id":"a","wav_path":"w.wav","label":"spoof","family":"quantize","segments":[],"split":"train"})" "\n");
  CHECK_THROWS_AS(load_manifest(dir), DataError);  // spoof with empty segments
  write_manifest(R"({"id":"a","wav_path":"w.wav","label":"bonafide","family":"bonafide","segments":[],"split":"nope"})" "\n");
  CHECK_THROWS_AS(load_manifest(dir), DataError);  // bad split
  write_manifest(
      R"({"id":"b","wav_path":"w.wav","label":"bonafide","family":"bonafide","segments":[],"split":"train"})" "\n"
      R"({"id":"a","wav_path":"w.wav","label":"bonafide","family":"bonafide","segments":[],"split":"train"})" "\n");
  CHECK_THROWS_AS(load_manifest(dir), DataError);  // unsorted
  fs::remove_all(dir);
}

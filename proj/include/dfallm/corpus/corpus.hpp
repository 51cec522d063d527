#pragma once

// Corpus builder and manifest io. Every sample is a pure function of
// (global_seed, id): records are derived first without touching audio, then
// missing WAVs are rendered, so deleting any file and re-running build_corpus
// regenerates it bit-identically.
//
// Split design: five spoof families (phasevocoder, quantize, bandlimit,
// pitchflat, splice) appear in train and id_test; ood_test holds out the
// noisevocoder family entirely and shifts the bona-fide generator parameters
// (f0 range up, noise floor down). Each split is balanced 50/50
// bonafide/spoof.

#include <json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "dfallm/corpus/spoof.hpp"
#include "dfallm/corpus/synth.hpp"
#include "dfallm/corpus/wav.hpp"
#include "dfallm/errors.hpp"
#include "dfallm/nn/rng.hpp"

namespace dfallm::corpus {

struct SampleRecord {
  std::string id;
  std::string wav_path;  // relative to the corpus root
  std::string label;     // "bonafide" | "spoof"
  std::string family;    // "bonafide" or a spoof family name
  std::vector<std::pair<double, double>> segments;
  std::string split;     // "train" | "id_test" | "ood_test"
};

struct Manifest {
  std::string root;
  std::vector<SampleRecord> records;  // sorted by id
  std::string config_hash;
  std::map<std::string, int> family_counts;
};

struct CorpusConfig {
  std::string out_dir;
  uint64_t seed = 42;
  int train_per_family = 100;    // spoof clips per family; bonafide matched 1:1
  int id_test_per_family = 40;
  int ood_spoof_total = 200;     // all from the held-out family
  int ood_bona_total = 200;
  std::vector<std::string> train_families = {"phasevocoder", "quantize", "bandlimit", "pitchflat",
                                             "splice"};
  std::vector<std::string> ood_holdout_families = {"noisevocoder"};
  // bona-fide generator parameters per distribution
  double id_f0_lo = 90.0, id_f0_hi = 200.0, id_noise_floor_db = -30.0;
  double ood_f0_lo = 130.0, ood_f0_hi = 240.0, ood_noise_floor_db = -33.0;
};

namespace detail {

inline double floor3(double x) { return std::floor(x * 1000.0) / 1000.0; }
inline double round3(double x) { return std::round(x * 1000.0) / 1000.0; }

inline std::string config_canonical(const CorpusConfig& c) {
  nlohmann::ordered_json j;
  j["seed"] = c.seed;
  j["train_per_family"] = c.train_per_family;
  j["id_test_per_family"] = c.id_test_per_family;
  j["ood_spoof_total"] = c.ood_spoof_total;
  j["ood_bona_total"] = c.ood_bona_total;
  j["train_families"] = c.train_families;
  j["ood_holdout_families"] = c.ood_holdout_families;
  j["id_bona"] = {c.id_f0_lo, c.id_f0_hi, c.id_noise_floor_db};
  j["ood_bona"] = {c.ood_f0_lo, c.ood_f0_hi, c.ood_noise_floor_db};
  return j.dump();
}

inline std::string hash_hex(uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline std::string pad5(int i) {
  char buf[8];
  std::snprintf(buf, sizeof(buf), "%05d", i);
  return buf;
}

// per-sample spoof parameters, drawn deterministically from the sample seed
inline SpoofParams draw_spoof_params(const std::string& family, uint64_t sample_seed) {
  SpoofParams p;
  p.kind = spoof_kind_from_name(family);
  Rng rng(derive_seed(sample_seed, "params"));
  if (p.kind == SpoofKind::Quantize) p.quant_levels = rng.below(2) == 0 ? 8 : 16;
  return p;
}

// splice regions use rendering families with strong local artifacts
inline SpoofParams draw_splice_render(uint64_t sample_seed) {
  Rng rng(derive_seed(sample_seed, "splice_render"));
  SpoofParams p;
  if (rng.below(2) == 0) {
    p.kind = SpoofKind::Quantize;
    p.quant_levels = 8;
  } else {
    p.kind = SpoofKind::BandLimit;
    p.cutoff_hz = 3400.0;
  }
  return p;
}

}  // namespace detail

// The clip spec for any sample id, independent of generation order.
inline ClipSpec sample_clip_spec(const CorpusConfig& cfg, const SampleRecord& rec) {
  const bool ood = rec.split == "ood_test";
  const double lo = ood ? cfg.ood_f0_lo : cfg.id_f0_lo;
  const double hi = ood ? cfg.ood_f0_hi : cfg.id_f0_hi;
  const double nf = ood ? cfg.ood_noise_floor_db : cfg.id_noise_floor_db;
  return make_clip_spec(cfg.seed, rec.id, lo, hi, nf);
}

// Renders the audio for one record. Pure in (cfg.seed, rec.id).
inline std::vector<float> render_sample(const CorpusConfig& cfg, const SampleRecord& rec) {
  const ClipSpec spec = sample_clip_spec(cfg, rec);
  const BonafideClip bona = synth_bonafide(spec);
  if (rec.label == "bonafide") return bona.samples;
  const uint64_t sample_seed = derive_seed(cfg.seed, rec.id);
  if (rec.family == "splice") {
    const SpoofParams render = detail::draw_splice_render(sample_seed);
    return make_partial_spoof_at(bona.samples, render, sample_seed, rec.segments, &spec).samples;
  }
  const SpoofParams params = detail::draw_spoof_params(rec.family, sample_seed);
  return apply_spoof(bona.samples, params, sample_seed, &spec);
}

// Builds all records (no audio io). Sorted by id.
inline std::vector<SampleRecord> plan_records(const CorpusConfig& cfg) {
  for (const auto& f : cfg.train_families)
    for (const auto& h : cfg.ood_holdout_families)
      if (f == h) throw ConfigError("corpus: family '" + f + "' assigned to both train and OOD holdout");
  {
    std::set<std::string> seen;
    for (const auto& f : cfg.train_families) {
      spoof_kind_from_name(f);  // validates the name
      if (!seen.insert(f).second) throw ConfigError("corpus: duplicate train family '" + f + "'");
    }
  }

  std::vector<SampleRecord> recs;
  auto add = [&](const std::string& split, const std::string& family, const std::string& label, int idx) {
    SampleRecord r;
    r.split = split;
    r.family = family;
    r.label = label;
    r.id = split + "_" + family + "_" + detail::pad5(idx);
    r.wav_path = "wavs/" + r.id + ".wav";
    recs.push_back(std::move(r));
  };

  const int n_fam = static_cast<int>(cfg.train_families.size());
  for (const auto& fam : cfg.train_families) {
    for (int i = 0; i < cfg.train_per_family; ++i) add("train", fam, "spoof", i);
    for (int i = 0; i < cfg.id_test_per_family; ++i) add("id_test", fam, "spoof", i);
  }
  for (int i = 0; i < cfg.train_per_family * n_fam; ++i) add("train", "bonafide", "bonafide", i);
  for (int i = 0; i < cfg.id_test_per_family * n_fam; ++i) add("id_test", "bonafide", "bonafide", i);
  {
    // OOD spoofs drawn round-robin from the held-out families
    std::map<std::string, int> idx;
    for (int i = 0; i < cfg.ood_spoof_total; ++i) {
      const auto& fam = cfg.ood_holdout_families[static_cast<size_t>(i) % cfg.ood_holdout_families.size()];
      add("ood_test", fam, "spoof", idx[fam]++);
    }
  }
  for (int i = 0; i < cfg.ood_bona_total; ++i) add("ood_test", "bonafide", "bonafide", i);

  // segments; needs the clip duration, which the spec determines
  for (auto& r : recs) {
    if (r.label == "bonafide") continue;
    const ClipSpec spec = sample_clip_spec(cfg, r);
    if (r.family == "splice") {
      const uint64_t sample_seed = derive_seed(cfg.seed, r.id);
      for (auto [s0, s1] : draw_splice_regions(spec.duration_s, sample_seed))
        r.segments.push_back({detail::round3(s0), detail::round3(s1)});
    } else {
      r.segments.push_back({0.0, detail::floor3(spec.duration_s)});
    }
  }

  std::sort(recs.begin(), recs.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  return recs;
}

inline nlohmann::ordered_json record_to_json(const SampleRecord& r) {
  nlohmann::ordered_json j;
  j["id"] = r.id;
  j["wav_path"] = r.wav_path;
  j["label"] = r.label;
  j["family"] = r.family;
  auto segs = nlohmann::ordered_json::array();
  for (const auto& [s0, s1] : r.segments) {
    // fixed 3-decimal serialization
    char a[32], b[32];
    std::snprintf(a, sizeof(a), "%.3f", s0);
    std::snprintf(b, sizeof(b), "%.3f", s1);
    segs.push_back({std::stod(a), std::stod(b)});
  }
  j["segments"] = segs;
  j["split"] = r.split;
  return j;
}

inline SampleRecord record_from_json(const nlohmann::json& j) {
  SampleRecord r;
  try {
    r.id = j.at("id").get<std::string>();
    r.wav_path = j.at("wav_path").get<std::string>();
    r.label = j.at("label").get<std::string>();
    r.family = j.at("family").get<std::string>();
    r.split = j.at("split").get<std::string>();
    for (const auto& seg : j.at("segments")) r.segments.push_back({seg.at(0).get<double>(), seg.at(1).get<double>()});
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("manifest record: ") + e.what());
  }
  if (r.label != "bonafide" && r.label != "spoof") throw DataError("manifest: bad label '" + r.label + "'");
  if (r.split != "train" && r.split != "id_test" && r.split != "ood_test")
    throw DataError("manifest: bad split '" + r.split + "'");
  if ((r.label == "bonafide") != r.segments.empty())
    throw DataError("manifest: segments must be empty iff bonafide (id " + r.id + ")");
  double prev = -1;
  for (const auto& [s0, s1] : r.segments) {
    if (s0 < 0 || s1 <= s0 || s0 < prev) throw DataError("manifest: bad segments for id " + r.id);
    prev = s1;
  }
  return r;
}

// Writes manifest.jsonl and corpus_meta.json; renders WAVs that are missing
// (or all of them with force=true).
inline Manifest build_corpus(const CorpusConfig& cfg, bool force = false) {
  namespace fs = std::filesystem;
  if (cfg.out_dir.empty()) throw ConfigError("corpus: out_dir is empty");
  fs::create_directories(fs::path(cfg.out_dir) / "wavs");

  Manifest m;
  m.root = cfg.out_dir;
  m.records = plan_records(cfg);
  m.config_hash = detail::hash_hex(fnv1a64(detail::config_canonical(cfg)));

  std::string jsonl;
  for (const auto& r : m.records) {
    ++m.family_counts[r.family];
    jsonl += record_to_json(r).dump();
    jsonl += "\n";
  }

  for (const auto& r : m.records) {
    const fs::path wav = fs::path(cfg.out_dir) / r.wav_path;
    if (!force && fs::exists(wav)) continue;
    write_wav(wav.string(), render_sample(cfg, r), kSampleRate);
  }

  {
    std::ofstream f(fs::path(cfg.out_dir) / "manifest.jsonl", std::ios::trunc);
    if (!f) throw DataError("corpus: cannot write manifest.jsonl");
    f << jsonl;
  }
  {
    nlohmann::ordered_json meta;
    meta["config_hash"] = m.config_hash;
    meta["manifest_hash"] = detail::hash_hex(fnv1a64(jsonl));
    meta["config"] = nlohmann::ordered_json::parse(detail::config_canonical(cfg));
    auto counts = nlohmann::ordered_json::object();
    for (const auto& [fam, n] : m.family_counts) counts[fam] = n;
    meta["family_counts"] = counts;
    std::ofstream f(fs::path(cfg.out_dir) / "corpus_meta.json", std::ios::trunc);
    if (!f) throw DataError("corpus: cannot write corpus_meta.json");
    f << meta.dump(2) << "\n";
  }
  return m;
}

inline Manifest load_manifest(const std::string& dir) {
  namespace fs = std::filesystem;
  Manifest m;
  m.root = dir;
  std::ifstream f(fs::path(dir) / "manifest.jsonl");
  if (!f) throw DataError("corpus: cannot open manifest.jsonl in " + dir);
  std::string line;
  std::string jsonl;
  int line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DataError("manifest line " + std::to_string(line_no) + ": " + e.what());
    }
    m.records.push_back(record_from_json(j));
    ++m.family_counts[m.records.back().family];
    jsonl += line;
    jsonl += "\n";
  }
  for (size_t i = 1; i < m.records.size(); ++i)
    if (m.records[i - 1].id >= m.records[i].id) throw DataError("manifest: records not sorted by id");
  std::ifstream meta(fs::path(dir) / "corpus_meta.json");
  if (meta) {
    nlohmann::json j = nlohmann::json::parse(meta, nullptr, /*allow_exceptions=*/false);
    if (!j.is_discarded() && j.contains("config_hash")) m.config_hash = j["config_hash"].get<std::string>();
  }
  return m;
}

// Checks that every wav exists and decodes; counts match the records.
inline void validate_manifest(const Manifest& m) {
  namespace fs = std::filesystem;
  std::map<std::string, int> counts;
  for (const auto& r : m.records) {
    ++counts[r.family];
    const fs::path wav = fs::path(m.root) / r.wav_path;
    if (!fs::exists(wav)) throw DataError("manifest: missing wav " + wav.string());
    const double dur = wav_duration(wav.string());
    for (const auto& [s0, s1] : r.segments)
      if (s1 > dur + 1e-6) throw DataError("manifest: segment beyond clip end for id " + r.id);
  }
  if (counts != m.family_counts) throw DataError("manifest: family counts do not match records");
}

}  // namespace dfallm::corpus

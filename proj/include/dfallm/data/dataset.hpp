// Dataset assembly: corpus manifest records joined with cached frontend
// features, in the shape training and evaluation code consume.

#pragma once

#include <algorithm>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "dfallm/corpus/corpus.hpp"
#include "dfallm/corpus/wav.hpp"
#include "dfallm/errors.hpp"
#include "dfallm/frontend/features.hpp"

namespace dfallm::data {

struct Example {
  std::string id;
  std::string label;   // "bonafide" | "spoof"
  std::string family;  // "bonafide" or spoof family
  std::string split;   // "train" | "id_test" | "ood_test"
  std::vector<std::pair<double, double>> segments;
  double duration_s = 0;
  frontend::Features feats;
};

// Loads every record of `split` ("" = all splits), reading features through
// the on-disk cache under <corpus root>/features.
inline std::vector<Example> load_examples(const corpus::Manifest& m,
                                          const frontend::FrontendConfig& fc,
                                          const std::string& split = "") {
  const std::string cache_dir = (std::filesystem::path(m.root) / "features").string();
  std::vector<Example> out;
  for (const auto& r : m.records) {
    if (!split.empty() && r.split != split) continue;
    const std::string wav_path = (std::filesystem::path(m.root) / r.wav_path).string();
    const corpus::WavData wav = corpus::read_wav(wav_path);
    Example ex;
    ex.id = r.id;
    ex.label = r.label;
    ex.family = r.family;
    ex.split = r.split;
    ex.segments = r.segments;
    ex.duration_s = static_cast<double>(wav.samples.size()) / wav.sample_rate;
    ex.feats = frontend::features_for_clip(cache_dir, r.id, wav.samples, fc);
    out.push_back(std::move(ex));
  }
  return out;
}

// Canonical attribution class list: bona fide plus the spoof families present
// in the train split, sorted. The held-out family is deliberately absent —
// attribution is only scored in-distribution.
inline std::vector<std::string> attribution_classes(const corpus::Manifest& m) {
  std::set<std::string> fams;
  for (const auto& r : m.records)
    if (r.split == "train") fams.insert(r.family);
  if (fams.empty()) throw DataError("attribution_classes: manifest has no train records");
  return {fams.begin(), fams.end()};
}

inline int class_index(const std::vector<std::string>& classes, const std::string& family) {
  auto it = std::find(classes.begin(), classes.end(), family);
  if (it == classes.end())
    throw DataError("class_index: family '" + family + "' not in the class list");
  return static_cast<int>(it - classes.begin());
}

// Largest gold segment, the regression target for the 2-output localizer.
inline std::pair<double, double> largest_segment(
    const std::vector<std::pair<double, double>>& segs) {
  if (segs.empty()) throw DataError("largest_segment: no segments");
  auto best = segs[0];
  for (const auto& s : segs)
    if (s.second - s.first > best.second - best.first) best = s;
  return best;
}

}  // namespace dfallm::data

// Answer parsing, segment IoU, and evaluation reports.
//
// Parsing is total: any text is accepted, and anything outside the answer
// grammar becomes a parse failure that is retained and scored as incorrect —
// never dropped. Scoring conventions (recorded in every report header):
// "average" detection accuracy is the unweighted mean of the per-test-set
// accuracies (here: ID and OOD), and localization is evaluated only on clips
// with gold spoofed segments.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <regex>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "dfallm/corpus/corpus.hpp"
#include "dfallm/errors.hpp"
#include "dfallm/task.hpp"

namespace dfallm::harness {

// ---------------------------------------------------------------------------
// answer parsing

struct ParsedAnswer {
  bool ok = false;
  std::string label;  // detection: "fake"/"real"; attribution: class word
  std::vector<std::pair<double, double>> segments;  // localization
};

namespace detail {

inline std::vector<std::string> words(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream ss(text);
  std::string w;
  while (ss >> w) out.push_back(w);
  return out;
}

}  // namespace detail

// Detection: the leading token decides. Attribution: first class-word match.
// Localization: every "from <t> to <t>" pair, clamped to [0, duration], pairs
// with start >= end dropped; a text with no extractable pair is a failure,
// while extracted-but-all-dropped parses to an empty segment list (scores 0).
inline ParsedAnswer parse_answer(const std::string& text, Task task,
                                 const std::vector<std::string>& classes = {},
                                 double duration_s = std::numeric_limits<double>::infinity()) {
  ParsedAnswer p;
  switch (task) {
    case Task::Detection: {
      const auto w = detail::words(text);
      if (!w.empty() && (w[0] == "fake" || w[0] == "real")) {
        p.ok = true;
        p.label = w[0];
      }
      return p;
    }
    case Task::Attribution: {
      for (const auto& w : detail::words(text))
        if (std::find(classes.begin(), classes.end(), w) != classes.end()) {
          p.ok = true;
          p.label = w;
          return p;
        }
      return p;
    }
    default: {
      static const std::regex pair_re(R"(from\s+(\d+(?:\.\d+)?)\s+to\s+(\d+(?:\.\d+)?))");
      auto it = std::sregex_iterator(text.begin(), text.end(), pair_re);
      const auto end = std::sregex_iterator();
      bool any = false;
      for (; it != end; ++it) {
        any = true;
        double a = std::stod((*it)[1].str());
        double b = std::stod((*it)[2].str());
        a = std::clamp(a, 0.0, duration_s);
        b = std::clamp(b, 0.0, duration_s);
        if (a >= b) continue;
        p.segments.emplace_back(a, b);
      }
      p.ok = any;
      return p;
    }
  }
}

// ---------------------------------------------------------------------------
// segment IoU

// Sorted merge of overlapping (or touching) segments. Rejects start > end;
// zero-length segments are legal and contribute nothing.
inline std::vector<std::pair<double, double>> merge_segments(
    std::vector<std::pair<double, double>> segs) {
  for (const auto& [a, b] : segs) {
    if (!std::isfinite(a) || !std::isfinite(b) || a > b)
      throw InputError("merge_segments: malformed segment [" + std::to_string(a) + ", " +
                       std::to_string(b) + "]");
  }
  std::sort(segs.begin(), segs.end());
  std::vector<std::pair<double, double>> out;
  for (const auto& s : segs) {
    if (!out.empty() && s.first <= out.back().second)
      out.back().second = std::max(out.back().second, s.second);
    else
      out.push_back(s);
  }
  return out;
}

// Duration-measured IoU of the two merged unions. Identical unions give 1
// (vacuously for two empty lists); empty vs nonempty gives 0.
inline double segment_iou(const std::vector<std::pair<double, double>>& pred,
                          const std::vector<std::pair<double, double>>& gold) {
  const auto p = merge_segments(pred);
  const auto g = merge_segments(gold);
  double len_p = 0, len_g = 0, inter = 0;
  for (const auto& s : p) len_p += s.second - s.first;
  for (const auto& s : g) len_g += s.second - s.first;
  size_t i = 0, j = 0;
  while (i < p.size() && j < g.size()) {
    const double lo = std::max(p[i].first, g[j].first);
    const double hi = std::min(p[i].second, g[j].second);
    if (hi > lo) inter += hi - lo;
    if (p[i].second < g[j].second)
      ++i;
    else
      ++j;
  }
  const double uni = len_p + len_g - inter;
  if (uni <= 0) return 1.0;
  return inter / uni;
}

// ---------------------------------------------------------------------------
// predictions and reports

struct Prediction {
  std::string clip_id;
  Task task = Task::Detection;
  std::string text;  // raw generated text
  ParsedAnswer parsed;
};

// One scored prediction, kept so downstream analyses (per-family slices,
// failure inspection) never need to re-run evaluation.
struct ScoredPrediction {
  std::string clip_id;
  Task task = Task::Detection;
  std::string split;
  std::string family;
  double score = 0;  // 0/1 for detection and attribution, IoU for localization
  bool parse_ok = false;
};

struct EvalReport {
  double det_acc_id = 0;
  double det_acc_ood = 0;
  double det_acc_avg = 0;  // unweighted mean of the per-test-set accuracies
  double attrib_acc = 0;
  double loc_iou = 0;
  double parse_fail_rate = 0;
  int n_det_id = 0, n_det_ood = 0, n_attrib = 0, n_loc = 0;
  uint64_t seed = 0;
  std::string config_hash;
  std::vector<ScoredPrediction> details;
};

// Pure function of (predictions, manifest): scores every prediction against
// the manifest's gold labels. Parse failures score 0 and feed the failure
// rate; an unknown clip id or a localization prediction for a clip without
// gold segments is an evaluation-protocol error.
inline EvalReport compute_report(const std::vector<Prediction>& preds, const corpus::Manifest& m,
                                 uint64_t seed = 0, const std::string& config_hash = "") {
  std::map<std::string, const corpus::SampleRecord*> by_id;
  for (const auto& r : m.records) by_id[r.id] = &r;

  EvalReport rep;
  rep.seed = seed;
  rep.config_hash = config_hash;
  double det_id_sum = 0, det_ood_sum = 0, attrib_sum = 0, loc_sum = 0;
  int n_fail = 0;

  for (const auto& p : preds) {
    const auto it = by_id.find(p.clip_id);
    if (it == by_id.end())
      throw DataError("compute_report: prediction for unknown clip id '" + p.clip_id + "'");
    const corpus::SampleRecord& r = *it->second;

    ScoredPrediction sp;
    sp.clip_id = p.clip_id;
    sp.task = p.task;
    sp.split = r.split;
    sp.family = r.family;
    sp.parse_ok = p.parsed.ok;
    if (!p.parsed.ok) ++n_fail;

    switch (p.task) {
      case Task::Detection: {
        const bool gold_fake = r.label == "spoof";
        const bool correct = p.parsed.ok && (p.parsed.label == "fake") == gold_fake &&
                             (p.parsed.label == "fake" || p.parsed.label == "real");
        sp.score = correct ? 1.0 : 0.0;
        if (r.split == "ood_test") {
          det_ood_sum += sp.score;
          ++rep.n_det_ood;
        } else {
          det_id_sum += sp.score;
          ++rep.n_det_id;
        }
        break;
      }
      case Task::Attribution: {
        sp.score = p.parsed.ok && p.parsed.label == r.family ? 1.0 : 0.0;
        attrib_sum += sp.score;
        ++rep.n_attrib;
        break;
      }
      default: {
        if (r.segments.empty())
          throw DataError("compute_report: localization prediction for clip '" + p.clip_id +
                          "' which has no gold segments");
        sp.score = p.parsed.ok ? segment_iou(p.parsed.segments, r.segments) : 0.0;
        loc_sum += sp.score;
        ++rep.n_loc;
        break;
      }
    }
    rep.details.push_back(std::move(sp));
  }

  rep.det_acc_id = rep.n_det_id ? det_id_sum / rep.n_det_id : 0.0;
  rep.det_acc_ood = rep.n_det_ood ? det_ood_sum / rep.n_det_ood : 0.0;
  if (rep.n_det_id && rep.n_det_ood)
    rep.det_acc_avg = 0.5 * (rep.det_acc_id + rep.det_acc_ood);
  else
    rep.det_acc_avg = rep.n_det_id ? rep.det_acc_id : rep.det_acc_ood;
  rep.attrib_acc = rep.n_attrib ? attrib_sum / rep.n_attrib : 0.0;
  rep.loc_iou = rep.n_loc ? loc_sum / rep.n_loc : 0.0;
  rep.parse_fail_rate = preds.empty() ? 0.0 : static_cast<double>(n_fail) / preds.size();
  return rep;
}

}  // namespace dfallm::harness

// Closed task vocabulary and tokenizer.
//
// The token set is the union of special tokens, the three task prompts'
// words, answer words (labels, family names), digits, punctuation, and a
// small filler set used only for language pre-training. Tokenization is
// whitespace splitting with per-character splitting of digit/punctuation
// runs; detokenization restores the original surface string for every
// sentence the prompt and answer grammars can produce. Token order is part
// of the model contract (checkpoints index into it), so the list below is
// append-only.

#pragma once

#include <algorithm>
#include <fstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "dfallm/errors.hpp"

namespace dfallm::lm {

struct Vocab {
  std::vector<std::string> tokens;
  std::unordered_map<std::string, int> index;

  int bos = -1, eos = -1, pad = -1, audio = -1;

  int size() const { return static_cast<int>(tokens.size()); }
  int id(const std::string& tok) const {
    auto it = index.find(tok);
    if (it == index.end()) throw InputError("vocab: unknown token '" + tok + "'");
    return it->second;
  }
  bool contains(const std::string& tok) const { return index.count(tok) > 0; }
  const std::string& surface(int id_) const {
    if (id_ < 0 || id_ >= size()) throw InputError("vocab: token id out of range");
    return tokens[static_cast<size_t>(id_)];
  }
};

inline Vocab make_vocab() {
  Vocab v;
  v.tokens = {
      // specials
      "<bos>", "<eos>", "<pad>", "<audio>",
      // prompt words
      "Is", "this", "audio", "fake", "or", "real", "?",
      "Identify", "the", "specific", "source", "type", "spoofed", ".",
      "exact", "time", "segments", "in", "that", "contain", "content",
      // answer words
      "bonafide", "phasevocoder", "quantize", "bandlimit", "pitchflat", "noisevocoder",
      "splice", "from", "to", "and",
      // digits
      "0", "1", "2", "3", "4", "5", "6", "7", "8", "9",
      // extra punctuation / units
      "-", ":", "s",
      // filler words (pre-training text only)
      "a", "an", "of", "is", "was", "it", "clip", "sound", "signal", "yes", "no",
  };
  for (int i = 0; i < static_cast<int>(v.tokens.size()); ++i) v.index[v.tokens[static_cast<size_t>(i)]] = i;
  v.bos = v.index.at("<bos>");
  v.eos = v.index.at("<eos>");
  v.pad = v.index.at("<pad>");
  v.audio = v.index.at("<audio>");
  if (v.size() > 128) throw ConfigError("vocab exceeds the 128-token budget");
  return v;
}

namespace detail {
inline bool is_char_token(char c) {
  return (c >= '0' && c <= '9') || c == '.' || c == '-' || c == ':' || c == 's';
}
inline bool is_digit_word(const std::string& t) { return t.size() == 1 && t[0] >= '0' && t[0] <= '9'; }
}  // namespace detail

// Whitespace-separated words; digit/punctuation runs split per character;
// trailing sentence punctuation split off. Out-of-vocabulary words raise an
// error naming the word rather than being dropped.
inline std::vector<int> tokenize(const Vocab& v, const std::string& text) {
  std::vector<int> out;
  size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && text[i] == ' ') ++i;
    size_t j = i;
    while (j < text.size() && text[j] != ' ') ++j;
    if (j == i) break;
    const std::string word = text.substr(i, j - i);
    i = j;
    if (v.contains(word)) {
      out.push_back(v.id(word));
      continue;
    }
    const bool all_chars =
        std::all_of(word.begin(), word.end(), [](char c) { return detail::is_char_token(c); });
    if (all_chars) {
      for (char c : word) out.push_back(v.id(std::string(1, c)));
      continue;
    }
    const char last = word.back();
    const std::string head = word.substr(0, word.size() - 1);
    if ((last == '?' || last == '.' || last == ':') && v.contains(head)) {
      out.push_back(v.id(head));
      out.push_back(v.id(std::string(1, last)));
      continue;
    }
    throw InputError("tokenize: out-of-vocabulary word '" + word + "'");
  }
  return out;
}

// Inverse of tokenize on grammar-producible strings: punctuation attaches to
// the left, digit runs and decimal points glue into numbers.
inline std::string detokenize(const Vocab& v, const std::vector<int>& ids) {
  std::string out;
  for (size_t k = 0; k < ids.size(); ++k) {
    const std::string& tok = v.surface(ids[k]);
    bool glue = false;
    if (k > 0) {
      const std::string& prev = v.surface(ids[k - 1]);
      const bool prev_digit = detail::is_digit_word(prev);
      const bool cur_digit = detail::is_digit_word(tok);
      if (tok == "?" || tok == "." || tok == ":") glue = true;                       // real? audio. 0.
      if (prev_digit && (cur_digit || tok == "s")) glue = true;                      // 50, 2s
      if (cur_digit && (prev == "." || prev == "-" || prev == ":") && k >= 2 &&
          detail::is_digit_word(v.surface(ids[k - 2])))
        glue = true;                                                                 // 0.50, 1-2, 1:30
      if (tok == "-" && prev_digit) glue = true;
    }
    if (!out.empty() && !glue) out += ' ';
    out += tok;
  }
  return out;
}

// Vocabulary files are ordered token lists, one per line; order is contract.
inline void save_vocab(const std::string& path, const Vocab& v) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw DataError("save_vocab: cannot open " + path);
  for (const auto& t : v.tokens) f << t << "\n";
}

inline Vocab load_vocab(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("load_vocab: cannot open " + path);
  Vocab v;
  std::string line;
  while (std::getline(f, line))
    if (!line.empty()) v.tokens.push_back(line);
  for (int i = 0; i < static_cast<int>(v.tokens.size()); ++i) v.index[v.tokens[static_cast<size_t>(i)]] = i;
  const Vocab fresh = make_vocab();
  if (v.tokens != fresh.tokens)
    throw DataError("load_vocab: token list in " + path + " does not match this build's vocabulary");
  v.bos = fresh.bos;
  v.eos = fresh.eos;
  v.pad = fresh.pad;
  v.audio = fresh.audio;
  return v;
}

}  // namespace dfallm::lm

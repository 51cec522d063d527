// Decoder-only language model with optional LoRA adapters.
//
// Pre-LN transformer blocks with causal attention and a gated feed-forward
// (gate/up/down), learned positions, untied output head. LoRA adapters can
// be attached to the seven projection matrices of every block; while
// attached, the base weights are frozen and only adapter factors train.
// Merging folds scale*B*A into the base weights and removes the adapters.

#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dfallm/lm/vocab.hpp"
#include "dfallm/nn/ops.hpp"
#include "dfallm/nn/param.hpp"
#include "dfallm/nn/rng.hpp"

namespace dfallm::lm {

struct LmConfig {
  int n_layers = 4;
  int d_model = 128;
  int n_heads = 4;
  int d_ff = 256;
  int max_len = 1024;
  int vocab_size = 0;  // filled from the vocabulary at init
};

struct LoraConfig {
  int rank = 16;
  double alpha = 32.0;
  double scale() const { return alpha / rank; }
};

inline const std::vector<std::string>& lora_targets() {
  static const std::vector<std::string> t = {"q", "k", "v", "o", "gate", "up", "down"};
  return t;
}

template <class T>
struct Lm {
  LmConfig cfg;
  nn::ParamStore<T> params;    // base weights ("tok_emb", "l0.q.w", ...)
  nn::ParamStore<T> adapters;  // LoRA factors ("l0.q.a", "l0.q.b", ...), empty unless attached
  bool lora_attached = false;
  LoraConfig lora_cfg;

  static Lm init(const LmConfig& cfg, uint64_t seed) {
    if (cfg.vocab_size <= 0) throw ConfigError("Lm::init: vocab_size must be set");
    if (cfg.d_model % cfg.n_heads != 0)
      throw ConfigError("Lm::init: d_model not divisible by n_heads");
    Lm m;
    m.cfg = cfg;
    Rng rng(derive_seed(seed, "lm_init"));
    const double sd = 0.02;
    m.params.add_normal("tok_emb", {cfg.vocab_size, cfg.d_model}, rng, sd);
    m.params.add_normal("pos_emb", {cfg.max_len, cfg.d_model}, rng, sd);
    for (int i = 0; i < cfg.n_layers; ++i) {
      const std::string l = "l" + std::to_string(i) + ".";
      m.params.add_constant(l + "ln1.g", {cfg.d_model}, 1.0);
      m.params.add_constant(l + "ln1.b", {cfg.d_model}, 0.0);
      for (const char* t : {"q", "k", "v", "o"}) {
        m.params.add_normal(l + t + ".w", {cfg.d_model, cfg.d_model}, rng, sd);
        m.params.add_constant(l + std::string(t) + ".b", {cfg.d_model}, 0.0);
      }
      m.params.add_constant(l + "ln2.g", {cfg.d_model}, 1.0);
      m.params.add_constant(l + "ln2.b", {cfg.d_model}, 0.0);
      m.params.add_normal(l + "gate.w", {cfg.d_ff, cfg.d_model}, rng, sd);
      m.params.add_constant(l + "gate.b", {cfg.d_ff}, 0.0);
      m.params.add_normal(l + "up.w", {cfg.d_ff, cfg.d_model}, rng, sd);
      m.params.add_constant(l + "up.b", {cfg.d_ff}, 0.0);
      m.params.add_normal(l + "down.w", {cfg.d_model, cfg.d_ff}, rng, sd);
      m.params.add_constant(l + "down.b", {cfg.d_model}, 0.0);
    }
    m.params.add_constant("lnf.g", {cfg.d_model}, 1.0);
    m.params.add_constant("lnf.b", {cfg.d_model}, 0.0);
    m.params.add_normal("head.w", {cfg.vocab_size, cfg.d_model}, rng, sd);
    m.params.add_constant("head.b", {cfg.vocab_size}, 0.0);
    return m;
  }

  // A projection that is LoRA-adapted when adapters are attached.
  nn::Tensor<T> proj(const nn::Tensor<T>& x, const std::string& layer, const std::string& target) {
    auto& w = params.at(layer + target + ".w").value;
    auto& b = params.at(layer + target + ".b").value;
    if (!lora_attached) return nn::linear(x, w, b);
    auto& a = adapters.at(layer + target + ".a").value;
    auto& bb = adapters.at(layer + target + ".b").value;
    return nn::lora_linear(x, w, b, a, bb, lora_cfg.scale());
  }

  // Token embeddings only (no positions); fusion injects audio rows into this.
  nn::Tensor<T> embed_tokens(const std::vector<int>& flat_ids, int batch, int seq) {
    if (static_cast<int>(flat_ids.size()) != batch * seq)
      throw nn::ShapeError("embed_tokens: " + std::to_string(flat_ids.size()) + " ids for batch " +
                           std::to_string(batch) + " x seq " + std::to_string(seq));
    nn::Tensor<T> flat = nn::embedding(flat_ids, params.at("tok_emb").value);
    return nn::reshape(flat, {batch, seq, cfg.d_model});
  }

  // Transformer over [B,S,d] input embeddings (positions added here).
  // Returns next-token logits [B,S,V].
  nn::Tensor<T> forward_embedded(const nn::Tensor<T>& x, const std::vector<char>& key_valid = {}) {
    if (x.shape.size() != 3 || x.shape[2] != cfg.d_model)
      throw nn::ShapeError("forward_embedded: want [B,S," + std::to_string(cfg.d_model) + "], got " +
                           nn::shape_str(x.shape));
    if (x.shape[1] > cfg.max_len)
      throw nn::ShapeError("forward_embedded: sequence " + std::to_string(x.shape[1]) +
                           " exceeds max length " + std::to_string(cfg.max_len));
    nn::Tensor<T> h = nn::add_pos(x, params.at("pos_emb").value);
    for (int i = 0; i < cfg.n_layers; ++i) {
      const std::string l = "l" + std::to_string(i) + ".";
      nn::Tensor<T> n1 = nn::layer_norm(h, params.at(l + "ln1.g").value, params.at(l + "ln1.b").value);
      nn::Tensor<T> att = nn::attention(proj(n1, l, "q"), proj(n1, l, "k"), proj(n1, l, "v"),
                                        cfg.n_heads, /*causal=*/true, key_valid);
      h = nn::add(h, proj(att, l, "o"));
      nn::Tensor<T> n2 = nn::layer_norm(h, params.at(l + "ln2.g").value, params.at(l + "ln2.b").value);
      nn::Tensor<T> ff = nn::mul(nn::gelu(proj(n2, l, "gate")), proj(n2, l, "up"));
      h = nn::add(h, proj(ff, l, "down"));
    }
    h = nn::layer_norm(h, params.at("lnf.g").value, params.at("lnf.b").value);
    return nn::linear(h, params.at("head.w").value, params.at("head.b").value);
  }

  // Pure text forward: logits [B,S,V].
  nn::Tensor<T> forward(const std::vector<int>& flat_ids, int batch, int seq,
                        const std::vector<char>& key_valid = {}) {
    return forward_embedded(embed_tokens(flat_ids, batch, seq), key_valid);
  }
};

// --- LoRA lifecycle ---------------------------------------------------------

template <class T>
void attach_lora(Lm<T>& lm, const LoraConfig& lc, uint64_t seed) {
  if (lm.lora_attached) throw nn::UsageError("attach_lora: adapters already attached");
  if (lc.rank >= std::min(lm.cfg.d_model, lm.cfg.d_ff))
    throw ConfigError("attach_lora: rank must be smaller than the smallest targeted dimension");
  Rng rng(derive_seed(seed, "lora_init"));
  for (int i = 0; i < lm.cfg.n_layers; ++i) {
    const std::string l = "l" + std::to_string(i) + ".";
    for (const std::string& t : lora_targets()) {
      const int in = (t == "down") ? lm.cfg.d_ff : lm.cfg.d_model;
      const int out = (t == "gate" || t == "up") ? lm.cfg.d_ff : lm.cfg.d_model;
      lm.adapters.add_normal(l + t + ".a", {lc.rank, in}, rng, 0.02);
      lm.adapters.add_constant(l + t + ".b", {out, lc.rank}, 0.0);  // zero: initial no-op
    }
  }
  lm.params.set_all_trainable(false);  // frozen base while adapters are active
  lm.lora_cfg = lc;
  lm.lora_attached = true;
}

template <class T>
void merge_lora(Lm<T>& lm) {
  if (!lm.lora_attached) throw nn::UsageError("merge_lora: no adapters attached");
  const double scale = lm.lora_cfg.scale();
  for (int i = 0; i < lm.cfg.n_layers; ++i) {
    const std::string l = "l" + std::to_string(i) + ".";
    for (const std::string& t : lora_targets()) {
      auto& w = lm.params.at(l + t + ".w").value;  // [out, in]
      auto& a = lm.adapters.at(l + t + ".a").value;  // [r, in]
      auto& b = lm.adapters.at(l + t + ".b").value;  // [out, r]
      const int out = w.shape[0], in = w.shape[1], r = a.shape[0];
      for (int o = 0; o < out; ++o)
        for (int j = 0; j < in; ++j) {
          double acc = 0;
          for (int k = 0; k < r; ++k)
            acc += static_cast<double>((*b.data)[static_cast<size_t>(o) * r + static_cast<size_t>(k)]) *
                   (*a.data)[static_cast<size_t>(k) * in + static_cast<size_t>(j)];
          (*w.data)[static_cast<size_t>(o) * in + static_cast<size_t>(j)] += static_cast<T>(scale * acc);
        }
    }
  }
  lm.adapters = nn::ParamStore<T>{};
  lm.lora_attached = false;
  lm.params.set_all_trainable(true);
}

// --- generation --------------------------------------------------------------

struct GenResult {
  std::vector<int> ids;     // newly generated ids (no prefix), EOS included if reached
  bool truncated = false;   // stopped by budget before EOS
};

// Greedy decoding. `injections` carry (start position, [rows, d]) embedding
// spans spliced over the prefix (the audio placeholder run). AUDIO and PAD
// are masked out of the argmax so they can never be generated.
template <class T>
GenResult generate_greedy(Lm<T>& lm, const Vocab& v, const std::vector<int>& prefix,
                          const std::vector<std::pair<int, nn::Tensor<T>>>& injections,
                          int max_new) {
  if (max_new < 0 || max_new > 512) throw nn::UsageError("generate_greedy: max_new must be in [0,512]");
  nn::NoGradGuard ng;
  GenResult res;
  std::vector<int> ids = prefix;
  while (static_cast<int>(res.ids.size()) < max_new) {
    if (static_cast<int>(ids.size()) >= lm.cfg.max_len) {
      res.truncated = true;
      break;
    }
    nn::Tensor<T> emb = lm.embed_tokens(ids, 1, static_cast<int>(ids.size()));
    if (!injections.empty()) {
      std::vector<nn::RowInjection<T>> inj;
      for (const auto& [start, src] : injections) inj.push_back({0, start, src});
      emb = nn::inject_rows(emb, inj);
    }
    nn::Tensor<T> logits = lm.forward_embedded(emb);
    const int s = logits.shape[1], vs = logits.shape[2];
    const T* last = logits.ptr() + static_cast<int64_t>(s - 1) * vs;
    int best = -1;
    T best_v = 0;
    for (int t = 0; t < vs; ++t) {
      if (t == v.audio || t == v.pad) continue;
      if (best < 0 || last[t] > best_v) {
        best = t;
        best_v = last[t];
      }
    }
    res.ids.push_back(best);
    ids.push_back(best);
    if (best == v.eos) return res;
  }
  if (res.ids.empty() || res.ids.back() != v.eos) res.truncated = true;
  return res;
}

}  // namespace dfallm::lm

// Base LM pre-training on grammar-derived text.
//
// The synthetic text corpus mixes the three task prompt/answer grammars with
// randomized slot fillers (labels, class names, times drawn at random — so
// nothing correlates with any audio), number-sequence strings, and filler
// sentences. Next-token cross entropy over everything but padding gives the
// base model its syntax before it is frozen for fusion training.

#pragma once

#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "dfallm/lm/model.hpp"
#include "dfallm/lm/vocab.hpp"
#include "dfallm/nn/optim.hpp"

namespace dfallm::lm {

inline const std::vector<std::string>& class_words() {
  static const std::vector<std::string> w = {"bonafide",  "phasevocoder", "quantize", "bandlimit",
                                             "pitchflat", "noisevocoder", "splice"};
  return w;
}

namespace detail {

inline std::string format_time(double t) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%.2f", t);
  return buf;
}

inline std::string sample_sentence(Rng& rng) {
  static const std::vector<std::string> fillers = {"a",  "an",   "of",   "is",     "was", "it",
                                                   "clip", "sound", "signal", "yes", "no"};
  switch (static_cast<int>(rng.below(5))) {
    case 0:
      return std::string("Is this audio fake or real? ") + (rng.below(2) ? "fake" : "real");
    case 1:
      return "Identify the specific source type or the spoofed audio. " +
             class_words()[static_cast<size_t>(rng.below(class_words().size()))];
    case 2: {
      const double a = rng.uniform(0.0, 1.5);
      const double b = rng.uniform(a + 0.05, 2.0);
      std::string s = "Identify the exact time segments in this audio that contain spoofed content. "
                      "spoofed from " +
                      format_time(a) + " to " + format_time(b);
      if (rng.below(2)) {
        const double c = rng.uniform(0.0, 1.5);
        const double d = rng.uniform(c + 0.05, 2.0);
        s += " and from " + format_time(c) + " to " + format_time(d);
      }
      return s;
    }
    case 3: {
      // number runs separated by words, so token round trips stay unambiguous
      const int k = 3 + static_cast<int>(rng.below(6));
      std::string s;
      for (int i = 0; i < k; ++i) {
        if (i) s += rng.below(2) ? " to " : " and ";
        s += format_time(rng.uniform(0.0, 2.0));
      }
      return s;
    }
    default: {
      const int k = 3 + static_cast<int>(rng.below(7));
      std::string s;
      for (int i = 0; i < k; ++i) {
        if (i) s += ' ';
        s += fillers[static_cast<size_t>(rng.below(fillers.size()))];
      }
      return s + ".";
    }
  }
}

}  // namespace detail

struct PretrainLmConfig {
  int steps = 600;
  int batch = 8;
  double peak_lr = 3e-3;
  int warmup = 30;
  uint64_t seed = 42;
};

struct PretrainLmReport {
  double step0_loss = 0;
  double final_loss = 0;
  double heldout_ppl = 0;
  double uniform_ppl = 0;
};

namespace detail {

// Pad a batch of token sequences, build next-token (input, target, weight).
template <class T>
struct LmBatch {
  std::vector<int> inputs;  // [B * S]
  std::vector<int> targets;
  std::vector<T> weights;
  std::vector<char> key_valid;
  int b = 0, s = 0;
};

template <class T>
LmBatch<T> pack_next_token(const std::vector<std::vector<int>>& seqs, int pad_id) {
  LmBatch<T> out;
  out.b = static_cast<int>(seqs.size());
  size_t max_len = 0;
  for (const auto& s : seqs) max_len = std::max(max_len, s.size());
  out.s = static_cast<int>(max_len) - 1;  // predict positions 1..L-1
  out.inputs.assign(static_cast<size_t>(out.b) * static_cast<size_t>(out.s), pad_id);
  out.targets.assign(out.inputs.size(), pad_id);
  out.weights.assign(out.inputs.size(), T(0));
  out.key_valid.assign(out.inputs.size(), 0);
  for (int bi = 0; bi < out.b; ++bi) {
    const auto& seq = seqs[static_cast<size_t>(bi)];
    for (size_t i = 0; i + 1 < seq.size(); ++i) {
      const size_t at = static_cast<size_t>(bi) * static_cast<size_t>(out.s) + i;
      out.inputs[at] = seq[i];
      out.targets[at] = seq[i + 1];
      out.weights[at] = T(1);
      out.key_valid[at] = 1;
    }
  }
  return out;
}

template <class T>
nn::Tensor<T> batch_loss(Lm<T>& lm, const LmBatch<T>& batch) {
  nn::Tensor<T> logits = lm.forward(batch.inputs, batch.b, batch.s, batch.key_valid);
  nn::Tensor<T> flat = nn::reshape(logits, {batch.b * batch.s, logits.shape[2]});
  return nn::cross_entropy_masked(flat, batch.targets, batch.weights);
}

template <class T>
std::vector<std::vector<int>> sample_batch(const Vocab& v, Rng& rng, int n) {
  std::vector<std::vector<int>> seqs;
  for (int i = 0; i < n; ++i) {
    std::vector<int> ids = {v.bos};
    for (int t : tokenize(v, sample_sentence(rng))) ids.push_back(t);
    ids.push_back(v.eos);
    seqs.push_back(std::move(ids));
  }
  return seqs;
}

}  // namespace detail

inline PretrainLmReport pretrain_lm(Lm<float>& lm, const Vocab& v, const PretrainLmConfig& cfg) {
  Rng rng(derive_seed(cfg.seed, "lm_pretrain"));
  nn::AdamW<float> opt(lm.params.trainable());
  nn::CosineSchedule sched(cfg.peak_lr, cfg.steps, cfg.warmup);
  PretrainLmReport rep;
  for (int step = 0; step < cfg.steps; ++step) {
    auto batch = detail::pack_next_token<float>(detail::sample_batch<float>(v, rng, cfg.batch), v.pad);
    nn::Tensor<float> loss = detail::batch_loss(lm, batch);
    const double val = loss.item();
    if (step == 0) rep.step0_loss = val;
    rep.final_loss = val;
    nn::backward(loss);
    opt.step(sched.lr_at(step));
  }
  // held-out perplexity from a disjoint sampler stream
  Rng held(derive_seed(cfg.seed, "lm_pretrain_heldout"));
  nn::NoGradGuard ng;
  double total = 0;
  const int held_batches = 8;
  for (int i = 0; i < held_batches; ++i) {
    auto batch = detail::pack_next_token<float>(detail::sample_batch<float>(v, held, 8), v.pad);
    total += detail::batch_loss(lm, batch).item();
  }
  rep.heldout_ppl = std::exp(total / held_batches);
  rep.uniform_ppl = static_cast<double>(v.size());
  return rep;
}

}  // namespace dfallm::lm

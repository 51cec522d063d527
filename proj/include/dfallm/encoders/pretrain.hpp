// Encoder pre-training: the semantic/acoustic contrast.
//
// Both kinds train the same trunk on the same bona-fide clips; only the
// objective differs. SemanticFrameCls classifies the generating formant
// template per frame (supervised content proxy), AcousticMasked reconstructs
// masked log-mel frames (self-supervised signal proxy). Auxiliary parameters
// (classifier head, mask embedding, reconstruction head) live in a separate
// store that is discarded after pre-training, so the trunks stay
// parameter-identical.
//
// The pre-training set is its own fixed-size draw of bona-fide clips, a pure
// function of (seed, frontend config): pre-trained encoders can be cached per
// (kind, seed, frame rate) without depending on which evaluation corpus they
// are later used with.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <set>
#include <string>
#include <vector>

#include "dfallm/corpus/synth.hpp"
#include "dfallm/encoders/encoder.hpp"
#include "dfallm/frontend/features.hpp"
#include "dfallm/nn/optim.hpp"

namespace dfallm::encoders {

struct EncoderExample {
  frontend::Features feats;
  std::vector<int> frame_labels;  // template id per feature frame
};

// Template ids are tracked per 20 ms of audio; a feature frame (possibly a
// stack of several hops) takes the id at its center time.
inline std::vector<int> frame_template_ids(const std::vector<int>& track, int n_frames,
                                           const frontend::FrontendConfig& fc) {
  if (track.empty()) throw DataError("frame_template_ids: empty template track");
  const int stack = frontend::stack_factor(fc.frame_rate_hz);
  std::vector<int> out(static_cast<size_t>(n_frames));
  for (int j = 0; j < n_frames; ++j) {
    const int64_t first = static_cast<int64_t>(j) * stack * fc.hop;
    const int64_t center = first + (static_cast<int64_t>(fc.hop) * (stack - 1) + fc.n_fft) / 2;
    const double tc = static_cast<double>(center) / fc.sample_rate;
    const size_t idx =
        std::min(static_cast<size_t>(tc / corpus::kTemplateHopS), track.size() - 1);
    out[static_cast<size_t>(j)] = track[idx];
  }
  return out;
}

// Deterministic bona-fide pre-training examples. `tag` separates the train
// and held-out streams.
inline std::vector<EncoderExample> make_pretrain_examples(int n, uint64_t seed,
                                                          const frontend::FrontendConfig& fc,
                                                          const std::string& tag = "train",
                                                          double f0_lo = 90.0, double f0_hi = 200.0,
                                                          double noise_db = -30.0) {
  std::vector<EncoderExample> out;
  out.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    char id[48];
    std::snprintf(id, sizeof(id), "encpre_%s_%04d", tag.c_str(), i);
    const corpus::ClipSpec spec = corpus::make_clip_spec(seed, id, f0_lo, f0_hi, noise_db);
    const corpus::BonafideClip clip = corpus::synth_bonafide(spec);
    EncoderExample ex;
    ex.feats = frontend::log_mel(clip.samples, fc);
    ex.frame_labels = frame_template_ids(clip.template_track, ex.feats.n_frames, fc);
    out.push_back(std::move(ex));
  }
  return out;
}

// --- batching ----------------------------------------------------------------

namespace detail {

template <class T>
struct FeatureBatch {
  nn::Tensor<T> x;              // [B, S, in_dim], zero-padded
  std::vector<char> key_valid;  // flat [B*S]
  int b = 0, s = 0, dim = 0;
};

template <class T>
FeatureBatch<T> pack_features(const std::vector<const EncoderExample*>& exs) {
  FeatureBatch<T> out;
  out.b = static_cast<int>(exs.size());
  out.dim = exs[0]->feats.dim;
  for (const auto* e : exs) {
    out.s = std::max(out.s, e->feats.n_frames);
    if (e->feats.dim != out.dim)
      throw nn::ShapeError("pack_features: mixed feature dims in one batch");
  }
  out.x = nn::Tensor<T>::zeros({out.b, out.s, out.dim});
  out.key_valid.assign(static_cast<size_t>(out.b) * out.s, 0);
  for (int bi = 0; bi < out.b; ++bi) {
    const auto& f = exs[static_cast<size_t>(bi)]->feats;
    std::copy(f.data.begin(), f.data.end(),
              out.x.data->begin() + static_cast<int64_t>(bi) * out.s * out.dim);
    for (int j = 0; j < f.n_frames; ++j)
      out.key_valid[static_cast<size_t>(bi) * out.s + j] = 1;
  }
  return out;
}

}  // namespace detail

// --- masking -----------------------------------------------------------------

// Exactly ceil(fraction*t) masked positions, grown in spans of `span`
// consecutive frames (the last span truncates to hit the count exactly).
inline std::vector<int> draw_mask_positions(Rng& rng, int t, double fraction, int span) {
  if (!(fraction > 0.0 && fraction < 1.0))
    throw ConfigError("draw_mask_positions: mask fraction must be in (0,1), got " +
                      std::to_string(fraction));
  if (span < 1) throw ConfigError("draw_mask_positions: span must be >= 1");
  if (t <= 0) throw nn::UsageError("draw_mask_positions: empty sequence");
  const int target = std::min(t, static_cast<int>(std::ceil(fraction * t)));
  std::set<int> chosen;
  while (static_cast<int>(chosen.size()) < target) {
    const int start = static_cast<int>(rng.below(static_cast<uint64_t>(t)));
    for (int k = 0; k < span && static_cast<int>(chosen.size()) < target; ++k)
      if (start + k < t) chosen.insert(start + k);
  }
  return {chosen.begin(), chosen.end()};
}

// --- configs / reports ---------------------------------------------------------

// Both objectives train with the same budget so the contrast stays a pure
// objective comparison. The forward passes run in eval mode: at these step
// counts dropout barely moves held-out error but dilutes the representation
// contrast, so dropout is reserved for the downstream fine-tunes.
struct PretrainEncoderConfig {
  int steps = 2000;
  int batch = 8;
  double peak_lr = 3e-3;
  int warmup = 20;
  uint64_t seed = 42;
  int n_clips = 160;        // pre-training set size
  int heldout_clips = 40;   // evaluation set size
  double mask_fraction = 0.30;  // acoustic objective only
  int mask_span = 3;
};

struct PretrainSemanticReport {
  double step0_loss = 0;
  double final_loss = 0;
  double heldout_frame_acc = 0;
};

struct PretrainAcousticReport {
  double step0_mse = 0;
  double final_mse = 0;
  double heldout_masked_mse = 0;
  double heldout_mean_predictor_mse = 0;
};

// --- semantic objective ---------------------------------------------------------

inline PretrainSemanticReport pretrain_semantic(Encoder<float>& enc,
                                                const frontend::FrontendConfig& fc,
                                                const PretrainEncoderConfig& cfg) {
  if (enc.kind != EncoderKind::SemanticFrameCls)
    throw nn::UsageError("pretrain_semantic: encoder kind is not SemanticFrameCls");
  const int n_templates = static_cast<int>(corpus::formant_templates().size());
  auto train = make_pretrain_examples(cfg.n_clips, cfg.seed, fc, "train");
  auto held = make_pretrain_examples(cfg.heldout_clips, cfg.seed, fc, "held");

  nn::ParamStore<float> aux;  // discarded on return
  Rng init_rng(derive_seed(cfg.seed, "enc_sem_aux"));
  // near-zero head init keeps the step-0 loss at the uniform-prediction value
  aux.add_normal("cls.w", {n_templates, enc.cfg.d_model}, init_rng, 0.002);
  aux.add_constant("cls.b", {n_templates}, 0.0);

  std::vector<nn::Parameter<float>*> train_set = enc.params.trainable();
  for (auto* p : aux.trainable()) train_set.push_back(p);
  nn::AdamW<float> opt(train_set);
  nn::CosineSchedule sched(cfg.peak_lr, std::max(1, cfg.steps), std::min(cfg.warmup, cfg.steps));
  Rng rng(derive_seed(cfg.seed, "enc_sem_pretrain"));

  PretrainSemanticReport rep;
  for (int step = 0; step < cfg.steps; ++step) {
    std::vector<const EncoderExample*> batch;
    for (int i = 0; i < cfg.batch; ++i)
      batch.push_back(&train[static_cast<size_t>(rng.below(train.size()))]);
    auto fb = detail::pack_features<float>(batch);
    nn::Tensor<float> h = enc.encode(fb.x, fb.key_valid);  // eval-mode forward, see above
    nn::Tensor<float> logits = nn::linear(h, aux.at("cls.w").value, aux.at("cls.b").value);
    nn::Tensor<float> flat = nn::reshape(logits, {fb.b * fb.s, n_templates});
    std::vector<int> targets(static_cast<size_t>(fb.b) * fb.s, 0);
    std::vector<float> weights(targets.size(), 0.0f);
    for (int bi = 0; bi < fb.b; ++bi)
      for (int j = 0; j < batch[static_cast<size_t>(bi)]->feats.n_frames; ++j) {
        targets[static_cast<size_t>(bi) * fb.s + j] =
            batch[static_cast<size_t>(bi)]->frame_labels[static_cast<size_t>(j)];
        weights[static_cast<size_t>(bi) * fb.s + j] = 1.0f;
      }
    nn::Tensor<float> loss = nn::cross_entropy_masked(flat, targets, weights);
    const double val = loss.item();
    if (step == 0) rep.step0_loss = val;
    rep.final_loss = val;
    nn::backward(loss);
    opt.step(sched.lr_at(step));
  }

  // held-out per-frame accuracy
  nn::NoGradGuard ng;
  int64_t correct = 0, total = 0;
  for (const auto& ex : held) {
    std::vector<const EncoderExample*> one = {&ex};
    auto fb = detail::pack_features<float>(one);
    nn::Tensor<float> h = enc.encode(fb.x, fb.key_valid);
    nn::Tensor<float> logits = nn::linear(h, aux.at("cls.w").value, aux.at("cls.b").value);
    for (int j = 0; j < ex.feats.n_frames; ++j) {
      const float* row = logits.ptr() + static_cast<int64_t>(j) * n_templates;
      const int pred = static_cast<int>(std::max_element(row, row + n_templates) - row);
      correct += (pred == ex.frame_labels[static_cast<size_t>(j)]);
      ++total;
    }
  }
  rep.heldout_frame_acc = total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
  return rep;
}

// --- acoustic objective ----------------------------------------------------------

namespace detail {

// Contiguous runs of masked positions, for span-wise embedding injection.
inline std::vector<std::pair<int, int>> mask_runs(const std::vector<int>& pos) {
  std::vector<std::pair<int, int>> runs;  // (start, length)
  for (size_t i = 0; i < pos.size();) {
    size_t j = i + 1;
    while (j < pos.size() && pos[j] == pos[j - 1] + 1) ++j;
    runs.push_back({pos[i], static_cast<int>(j - i)});
    i = j;
  }
  return runs;
}

}  // namespace detail

inline PretrainAcousticReport pretrain_acoustic(Encoder<float>& enc,
                                                const frontend::FrontendConfig& fc,
                                                const PretrainEncoderConfig& cfg) {
  if (enc.kind != EncoderKind::AcousticMasked)
    throw nn::UsageError("pretrain_acoustic: encoder kind is not AcousticMasked");
  if (!(cfg.mask_fraction > 0.0 && cfg.mask_fraction < 1.0))
    throw ConfigError("pretrain_acoustic: mask fraction must be in (0,1)");
  auto train = make_pretrain_examples(cfg.n_clips, cfg.seed, fc, "train");
  auto held = make_pretrain_examples(cfg.heldout_clips, cfg.seed, fc, "held");
  const int in_dim = enc.cfg.in_dim;

  nn::ParamStore<float> aux;  // discarded on return
  Rng init_rng(derive_seed(cfg.seed, "enc_ac_aux"));
  aux.add_normal("mask_emb", {in_dim}, init_rng, 0.02);
  aux.add_normal("recon.w", {in_dim, enc.cfg.d_model}, init_rng, 0.02);
  aux.add_constant("recon.b", {in_dim}, 0.0);

  std::vector<nn::Parameter<float>*> train_set = enc.params.trainable();
  for (auto* p : aux.trainable()) train_set.push_back(p);
  nn::AdamW<float> opt(train_set);
  nn::CosineSchedule sched(cfg.peak_lr, std::max(1, cfg.steps), std::min(cfg.warmup, cfg.steps));
  Rng rng(derive_seed(cfg.seed, "enc_ac_pretrain"));

  // masked forward + loss for one packed batch; mask positions per element
  auto masked_loss = [&](const detail::FeatureBatch<float>& fb,
                         const std::vector<std::vector<int>>& masks) {
    nn::Tensor<float> emb1 = nn::reshape(aux.at("mask_emb").value, {1, in_dim});
    std::vector<nn::RowInjection<float>> inj;
    for (int bi = 0; bi < fb.b; ++bi)
      for (auto [start, len] : detail::mask_runs(masks[static_cast<size_t>(bi)])) {
        nn::Tensor<float> ones = nn::Tensor<float>::zeros({len, 1});
        std::fill(ones.data->begin(), ones.data->end(), 1.0f);
        inj.push_back({bi, start, nn::matmul(ones, emb1)});
      }
    nn::Tensor<float> x = nn::inject_rows(fb.x, inj);
    nn::Tensor<float> h = enc.encode(x, fb.key_valid);  // eval-mode forward, see above
    nn::Tensor<float> recon = nn::linear(h, aux.at("recon.w").value, aux.at("recon.b").value);
    nn::Tensor<float> flat = nn::reshape(recon, {fb.b * fb.s, in_dim});
    std::vector<float> target(fb.x.data->begin(), fb.x.data->end());
    std::vector<float> row_w(static_cast<size_t>(fb.b) * fb.s, 0.0f);
    for (int bi = 0; bi < fb.b; ++bi)
      for (int p : masks[static_cast<size_t>(bi)])
        row_w[static_cast<size_t>(bi) * fb.s + p] = 1.0f;
    return nn::mse_masked(flat, target, row_w);
  };

  PretrainAcousticReport rep;
  for (int step = 0; step < cfg.steps; ++step) {
    std::vector<const EncoderExample*> batch;
    for (int i = 0; i < cfg.batch; ++i)
      batch.push_back(&train[static_cast<size_t>(rng.below(train.size()))]);
    auto fb = detail::pack_features<float>(batch);
    std::vector<std::vector<int>> masks;
    for (const auto* e : batch)
      masks.push_back(draw_mask_positions(rng, e->feats.n_frames, cfg.mask_fraction, cfg.mask_span));
    nn::Tensor<float> loss = masked_loss(fb, masks);
    const double val = loss.item();
    if (step == 0) rep.step0_mse = val;
    rep.final_mse = val;
    nn::backward(loss);
    opt.step(sched.lr_at(step));
  }

  // held-out: same masking procedure from a fixed stream; compare against the
  // per-clip unmasked-mean predictor
  nn::NoGradGuard ng;
  Rng held_rng(derive_seed(cfg.seed, "enc_ac_heldout"));
  double model_total = 0, mean_total = 0;
  int64_t n_eval = 0;
  for (const auto& ex : held) {
    std::vector<const EncoderExample*> one = {&ex};
    auto fb = detail::pack_features<float>(one);
    auto mask = draw_mask_positions(held_rng, ex.feats.n_frames, cfg.mask_fraction, cfg.mask_span);
    std::vector<std::vector<int>> masks = {mask};
    model_total += masked_loss(fb, masks).item();
    // mean of unmasked frames as a constant prediction
    std::vector<char> is_masked(static_cast<size_t>(ex.feats.n_frames), 0);
    for (int p : mask) is_masked[static_cast<size_t>(p)] = 1;
    std::vector<double> mean(static_cast<size_t>(in_dim), 0.0);
    int n_unmasked = 0;
    for (int j = 0; j < ex.feats.n_frames; ++j) {
      if (is_masked[static_cast<size_t>(j)]) continue;
      ++n_unmasked;
      for (int d = 0; d < in_dim; ++d)
        mean[static_cast<size_t>(d)] += ex.feats.data[static_cast<size_t>(j) * in_dim + d];
    }
    for (auto& m : mean) m /= std::max(1, n_unmasked);
    double se = 0;
    for (int p : mask)
      for (int d = 0; d < in_dim; ++d) {
        const double c = ex.feats.data[static_cast<size_t>(p) * in_dim + d] - mean[static_cast<size_t>(d)];
        se += c * c;
      }
    mean_total += se / (static_cast<double>(mask.size()) * in_dim);
    ++n_eval;
  }
  rep.heldout_masked_mse = model_total / static_cast<double>(n_eval);
  rep.heldout_mean_predictor_mse = mean_total / static_cast<double>(n_eval);
  return rep;
}

}  // namespace dfallm::encoders

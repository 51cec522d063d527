// The full-model assembly: audio encoder -> linear projector -> decoder LM,
// with prompt construction, audio-embedding splicing, multitask LoRA
// fine-tuning, and greedy inference.
//
// Train/freeze split: the encoder and projector train fully, the base LM
// stays frozen, and only its LoRA adapters move. train_fusion() verifies the
// frozen half bit-for-bit after every run.
//
// Answer grammars (validated before any training target is tokenized, so an
// off-grammar answer fails loudly instead of becoming a silent label):
//   detection     -> "fake" | "real"
//   attribution   -> one class word (bona-fide label or spoof family)
//   localization  -> "spoofed from A to B" with zero or more " and from C to D"
// Times carry two decimals (10 ms grid): fine enough for segment scoring,
// and it keeps every number the same token length.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <regex>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "dfallm/data/dataset.hpp"
#include "dfallm/encoders/encoder.hpp"
#include "dfallm/errors.hpp"
#include "dfallm/frontend/features.hpp"
#include "dfallm/lm/model.hpp"
#include "dfallm/lm/vocab.hpp"
#include "dfallm/nn/checkpoint.hpp"
#include "dfallm/nn/ops.hpp"
#include "dfallm/nn/optim.hpp"
#include "dfallm/nn/param.hpp"
#include "dfallm/nn/rng.hpp"
#include "dfallm/task.hpp"

namespace dfallm::fusion {

// Assembly-level contract violations: audio span length mismatches,
// off-grammar answers, frozen-weight integrity failures.
struct FusionError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// prompts and answer grammar

inline const std::string& prompt_text(Task t) {
  static const std::string detection = "Is this audio fake or real?";
  static const std::string attribution = "Identify the specific source type or the spoofed audio.";
  static const std::string localization =
      "Identify the exact time segments in this audio that contain spoofed content.";
  switch (t) {
    case Task::Detection: return detection;
    case Task::Attribution: return attribution;
    default: return localization;
  }
}

// Two-decimal rendering used everywhere a time enters a token sequence.
inline std::string format_seconds(double s) {
  if (!std::isfinite(s) || s < 0) throw InputError("format_seconds: time must be finite and non-negative");
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", s);
  return buf;
}

inline std::string localization_answer(const std::vector<std::pair<double, double>>& segments) {
  if (segments.empty()) throw DataError("localization_answer: no segments to describe");
  std::string out = "spoofed";
  for (size_t i = 0; i < segments.size(); ++i) {
    out += (i == 0 ? " from " : " and from ");
    out += format_seconds(segments[i].first) + " to " + format_seconds(segments[i].second);
  }
  return out;
}

// Gold answer string for an example. Localization is only defined for clips
// that have spoofed segments; callers restrict that task to such clips.
inline std::string gold_answer(Task t, const data::Example& ex) {
  switch (t) {
    case Task::Detection: return ex.label == "spoof" ? "fake" : "real";
    case Task::Attribution: return ex.family;
    default: return localization_answer(ex.segments);
  }
}

namespace detail {

inline bool plain_word(const std::string& w) {
  if (w.empty() || w.find(' ') != std::string::npos) return false;
  return std::all_of(w.begin(), w.end(), [](char c) { return c >= 'a' && c <= 'z'; });
}

// Grammar gate for training targets and round-trip checks.
inline void check_answer(const lm::Vocab& v, Task t, const std::string& answer) {
  switch (t) {
    case Task::Detection:
      if (answer == "fake" || answer == "real") return;
      throw FusionError("detection answer must be 'fake' or 'real', got '" + answer + "'");
    case Task::Attribution:
      if (plain_word(answer) && v.contains(answer)) return;
      throw FusionError("attribution answer must be a single class word, got '" + answer + "'");
    default: {
      static const std::regex g(
          R"(^spoofed from \d+\.\d\d to \d+\.\d\d( and from \d+\.\d\d to \d+\.\d\d)*$)");
      if (std::regex_match(answer, g)) return;
      throw FusionError("localization answer outside the grammar: '" + answer + "'");
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// prompt sequences

// Token layout: [BOS][AUDIO x n_audio][question][answer][EOS]. The audio run
// comes first (one run, right after BOS), the answer and EOS exist only in
// training mode, and loss_mask marks exactly the answer+EOS positions.
struct PromptSequence {
  Task task = Task::Detection;
  std::vector<int> ids;
  std::vector<char> loss_mask;  // 1 on answer tokens and EOS, else 0
  int audio_start = 1;
  int n_audio = 0;
};

inline PromptSequence build_prompt(const lm::Vocab& v, Task task, int n_audio,
                                   const std::string& answer = "") {
  if (n_audio <= 0)
    throw FusionError("build_prompt: audio span must be positive, got " + std::to_string(n_audio));
  PromptSequence ps;
  ps.task = task;
  ps.n_audio = n_audio;
  ps.audio_start = 1;
  ps.ids.push_back(v.bos);
  ps.ids.insert(ps.ids.end(), static_cast<size_t>(n_audio), v.audio);
  const std::vector<int> q = lm::tokenize(v, prompt_text(task));
  ps.ids.insert(ps.ids.end(), q.begin(), q.end());
  ps.loss_mask.assign(ps.ids.size(), 0);
  if (!answer.empty()) {
    detail::check_answer(v, task, answer);
    const std::vector<int> a = lm::tokenize(v, answer);
    for (int id : a) {
      ps.ids.push_back(id);
      ps.loss_mask.push_back(1);
    }
    ps.ids.push_back(v.eos);
    ps.loss_mask.push_back(1);
  }
  return ps;
}

// ---------------------------------------------------------------------------
// splicing and loss

namespace detail {

template <class T>
nn::Tensor<T> features_tensor(const frontend::Features& f) {
  nn::Tensor<T> x = nn::Tensor<T>::zeros({1, f.n_frames, f.dim});
  T* p = x.ptr();
  for (size_t i = 0; i < f.data.size(); ++i) p[i] = static_cast<T>(f.data[i]);
  return x;
}

// Encoder output projected into LM embedding space: [n_frames, d_lm].
template <class T>
nn::Tensor<T> project_audio(encoders::Encoder<T>& enc, nn::ParamStore<T>& projector,
                            const frontend::Features& feats, bool train, Rng* rng) {
  nn::Tensor<T> h = enc.encode(features_tensor<T>(feats), {}, train, rng);
  nn::Tensor<T> flat = nn::reshape(h, {h.shape[1], h.shape[2]});
  return nn::linear(flat, projector.at("proj.w").value, projector.at("proj.b").value);
}

}  // namespace detail

// Embedding sequence for one prompt: AUDIO positions carry the projected
// encoder output, every other position the plain token embedding.
template <class T>
nn::Tensor<T> splice_embeddings(lm::Lm<T>& lm, encoders::Encoder<T>& enc,
                                nn::ParamStore<T>& projector, const frontend::Features& feats,
                                const PromptSequence& ps, bool train = false,
                                Rng* rng = nullptr) {
  nn::Tensor<T> p = detail::project_audio(enc, projector, feats, train, rng);
  if (p.shape[0] != ps.n_audio)
    throw FusionError("splice_embeddings: encoder produced " + std::to_string(p.shape[0]) +
                      " frames but the prompt reserves " + std::to_string(ps.n_audio) +
                      " audio positions");
  nn::Tensor<T> emb = lm.embed_tokens(ps.ids, 1, static_cast<int>(ps.ids.size()));
  return nn::inject_rows(emb, {{0, ps.audio_start, p}});
}

// Mean next-token cross-entropy over positions whose successor is masked in,
// i.e. exactly the answer tokens and EOS. `ids` and `loss_mask` are the
// (possibly padded) flat [batch*seq] token stream the logits were computed on.
template <class T>
nn::Tensor<T> answer_loss(const nn::Tensor<T>& logits, const std::vector<int>& ids,
                          const std::vector<char>& loss_mask) {
  if (logits.shape.size() != 3)
    throw nn::ShapeError("answer_loss: logits must be [batch,seq,vocab], got " +
                         nn::shape_str(logits.shape));
  const int b = logits.shape[0], s = logits.shape[1], vsz = logits.shape[2];
  if (static_cast<int>(ids.size()) != b * s || loss_mask.size() != ids.size())
    throw nn::ShapeError("answer_loss: " + std::to_string(ids.size()) + " ids / " +
                         std::to_string(loss_mask.size()) + " mask entries for " +
                         std::to_string(b * s) + " positions");
  std::vector<int> targets(ids.size(), 0);
  std::vector<T> weights(ids.size(), T(0));
  int64_t n_active = 0;
  for (int bi = 0; bi < b; ++bi)
    for (int t = 0; t + 1 < s; ++t) {
      const size_t pos = static_cast<size_t>(bi) * s + t;
      if (!loss_mask[pos + 1]) continue;
      targets[pos] = ids[pos + 1];
      weights[pos] = T(1);
      ++n_active;
    }
  if (n_active == 0) throw DataError("answer_loss: loss mask selects no positions");
  return nn::cross_entropy_masked(nn::reshape(logits, {b * s, vsz}), targets, weights);
}

template <class T>
nn::Tensor<T> answer_loss(const nn::Tensor<T>& logits, const PromptSequence& ps) {
  return answer_loss(logits, ps.ids, ps.loss_mask);
}

// ---------------------------------------------------------------------------
// the model bundle

struct BundleConfig {
  frontend::FrontendConfig frontend;
  encoders::EncoderKind kind = encoders::EncoderKind::SemanticFrameCls;
  encoders::EncoderConfig encoder;  // in_dim is filled from the frontend
  lm::LmConfig lm;                  // vocab_size is filled from the vocabulary
  lm::LoraConfig lora;
  uint64_t seed = 42;
};

struct ModelBundle {
  BundleConfig cfg;
  lm::Vocab vocab;
  encoders::Encoder<float> enc;
  lm::Lm<float> lm;
  nn::ParamStore<float> projector;  // "proj.w" [d_lm, d_enc], "proj.b" [d_lm]
};

// Fresh bundle with LoRA already attached (base LM frozen from the start).
// Pretrained encoder / LM weights are restored into it afterwards.
inline ModelBundle make_bundle(BundleConfig cfg) {
  cfg.encoder.in_dim = cfg.frontend.n_mels * frontend::stack_factor(cfg.frontend.frame_rate_hz);
  ModelBundle b;
  b.vocab = lm::make_vocab();
  cfg.lm.vocab_size = b.vocab.size();
  b.cfg = cfg;
  b.enc = encoders::Encoder<float>::init(cfg.encoder, cfg.kind, cfg.seed);
  b.lm = lm::Lm<float>::init(cfg.lm, cfg.seed);
  lm::attach_lora(b.lm, cfg.lora, derive_seed(cfg.seed, "fusion_lora"));
  Rng rng(derive_seed(cfg.seed, "projector"));
  b.projector.add_normal("proj.w", {cfg.lm.d_model, cfg.encoder.d_model}, rng, 0.02);
  b.projector.add_constant("proj.b", {cfg.lm.d_model}, 0.0);
  return b;
}

// ---------------------------------------------------------------------------
// bundle checkpoints (directory: meta.json + vocab.txt + weights.bin)

inline void save_bundle(ModelBundle& b, const std::string& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  nlohmann::json meta;
  meta["seed"] = b.cfg.seed;
  meta["encoder_kind"] = encoders::kind_name(b.cfg.kind);
  meta["frontend"] = {{"n_fft", b.cfg.frontend.n_fft},
                      {"hop", b.cfg.frontend.hop},
                      {"n_mels", b.cfg.frontend.n_mels},
                      {"fmin_hz", b.cfg.frontend.fmin_hz},
                      {"fmax_hz", b.cfg.frontend.fmax_hz},
                      {"frame_rate_hz", b.cfg.frontend.frame_rate_hz},
                      {"sample_rate", b.cfg.frontend.sample_rate}};
  meta["encoder"] = {{"n_layers", b.cfg.encoder.n_layers}, {"d_model", b.cfg.encoder.d_model},
                     {"n_heads", b.cfg.encoder.n_heads},   {"d_ff", b.cfg.encoder.d_ff},
                     {"in_dim", b.cfg.encoder.in_dim},     {"max_len", b.cfg.encoder.max_len},
                     {"dropout", b.cfg.encoder.dropout}};
  meta["lm"] = {{"n_layers", b.cfg.lm.n_layers}, {"d_model", b.cfg.lm.d_model},
                {"n_heads", b.cfg.lm.n_heads},   {"d_ff", b.cfg.lm.d_ff},
                {"max_len", b.cfg.lm.max_len},   {"vocab_size", b.cfg.lm.vocab_size}};
  meta["lora"] = {{"rank", b.cfg.lora.rank}, {"alpha", b.cfg.lora.alpha}};
  std::ofstream mf((fs::path(dir) / "meta.json").string(), std::ios::trunc);
  if (!mf) throw nn::IoError("save_bundle: cannot write meta.json under " + dir);
  mf << meta.dump(2) << "\n";
  lm::save_vocab((fs::path(dir) / "vocab.txt").string(), b.vocab);
  std::vector<nn::NamedTensor> tensors = nn::snapshot(b.enc.params, "enc.");
  for (auto& t : nn::snapshot(b.projector, "proj.")) tensors.push_back(std::move(t));
  for (auto& t : nn::snapshot(b.lm.params, "lm.")) tensors.push_back(std::move(t));
  for (auto& t : nn::snapshot(b.lm.adapters, "lora.")) tensors.push_back(std::move(t));
  nn::save_checkpoint((fs::path(dir) / "weights.bin").string(), tensors);
}

inline ModelBundle load_bundle(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream mf((fs::path(dir) / "meta.json").string());
  if (!mf) throw nn::IoError("load_bundle: cannot open meta.json under " + dir);
  nlohmann::json meta = nlohmann::json::parse(mf, nullptr, /*allow_exceptions=*/true);
  BundleConfig cfg;
  cfg.seed = meta.at("seed").get<uint64_t>();
  cfg.kind = encoders::kind_from_name(meta.at("encoder_kind").get<std::string>());
  const auto& f = meta.at("frontend");
  cfg.frontend.n_fft = f.at("n_fft").get<int>();
  cfg.frontend.hop = f.at("hop").get<int>();
  cfg.frontend.n_mels = f.at("n_mels").get<int>();
  cfg.frontend.fmin_hz = f.at("fmin_hz").get<double>();
  cfg.frontend.fmax_hz = f.at("fmax_hz").get<double>();
  cfg.frontend.frame_rate_hz = f.at("frame_rate_hz").get<double>();
  cfg.frontend.sample_rate = f.at("sample_rate").get<int>();
  const auto& e = meta.at("encoder");
  cfg.encoder.n_layers = e.at("n_layers").get<int>();
  cfg.encoder.d_model = e.at("d_model").get<int>();
  cfg.encoder.n_heads = e.at("n_heads").get<int>();
  cfg.encoder.d_ff = e.at("d_ff").get<int>();
  cfg.encoder.max_len = e.at("max_len").get<int>();
  cfg.encoder.dropout = e.at("dropout").get<double>();
  const auto& l = meta.at("lm");
  cfg.lm.n_layers = l.at("n_layers").get<int>();
  cfg.lm.d_model = l.at("d_model").get<int>();
  cfg.lm.n_heads = l.at("n_heads").get<int>();
  cfg.lm.d_ff = l.at("d_ff").get<int>();
  cfg.lm.max_len = l.at("max_len").get<int>();
  const auto& lo = meta.at("lora");
  cfg.lora.rank = lo.at("rank").get<int>();
  cfg.lora.alpha = lo.at("alpha").get<double>();
  ModelBundle b = make_bundle(cfg);
  // The meta's in_dim / vocab_size must agree with what make_bundle derived.
  if (e.at("in_dim").get<int>() != b.cfg.encoder.in_dim)
    throw nn::IoError("load_bundle: checkpoint in_dim " + std::to_string(e.at("in_dim").get<int>()) +
                      " does not match the frontend-derived " + std::to_string(b.cfg.encoder.in_dim));
  if (l.at("vocab_size").get<int>() != b.cfg.lm.vocab_size)
    throw nn::IoError("load_bundle: checkpoint vocab_size does not match this build's vocabulary");
  lm::Vocab disk = lm::load_vocab((fs::path(dir) / "vocab.txt").string());  // validates token order
  (void)disk;
  const std::vector<nn::NamedTensor> tensors =
      nn::load_checkpoint((fs::path(dir) / "weights.bin").string());
  nn::restore(b.enc.params, tensors, "enc.");
  nn::restore(b.projector, tensors, "proj.");
  nn::restore(b.lm.params, tensors, "lm.");
  nn::restore(b.lm.adapters, tensors, "lora.");
  b.lm.params.set_all_trainable(false);  // frozen base, as attach_lora left it
  return b;
}

// ---------------------------------------------------------------------------
// multitask fine-tuning

struct TrainConfig {
  int epochs = 4;
  int batch = 8;
  double peak_lr = 3e-4;  // model-scale default; the paper-scale 1e-5 is selectable
  int warmup = 20;
  uint64_t seed = 42;
  // Task mixing weights (relative sampling probabilities per step).
  double w_detection = 1.0;
  double w_attribution = 1.0;
  double w_localization = 1.0;
  std::string log_path;  // JSONL per-step log; empty = keep in memory only
};

struct StepLog {
  int step = 0;
  Task task = Task::Detection;
  double lr = 0;
  double loss = 0;
};

struct TrainReport {
  std::vector<StepLog> log;
  int steps_per_epoch = 0;
  int total_steps = 0;
};

namespace detail {

// Examples usable for a task: localization needs gold segments, the other
// tasks accept every clip.
inline std::vector<const data::Example*> usable_for(const std::vector<data::Example>& exs,
                                                    Task t) {
  std::vector<const data::Example*> out;
  for (const auto& e : exs) {
    if (t == Task::Localization && e.segments.empty()) continue;
    out.push_back(&e);
  }
  return out;
}

struct PackedBatch {
  std::vector<int> ids;        // [b*s], padded with PAD
  std::vector<char> mask;      // [b*s]
  std::vector<char> key_valid; // [b*s]
  int b = 0, s = 0;
};

inline PackedBatch pack_prompts(const lm::Vocab& v, const std::vector<PromptSequence>& prompts) {
  PackedBatch pb;
  pb.b = static_cast<int>(prompts.size());
  for (const auto& p : prompts) pb.s = std::max(pb.s, static_cast<int>(p.ids.size()));
  pb.ids.assign(static_cast<size_t>(pb.b) * pb.s, v.pad);
  pb.mask.assign(pb.ids.size(), 0);
  pb.key_valid.assign(pb.ids.size(), 0);
  for (int bi = 0; bi < pb.b; ++bi) {
    const auto& p = prompts[static_cast<size_t>(bi)];
    for (size_t j = 0; j < p.ids.size(); ++j) {
      const size_t pos = static_cast<size_t>(bi) * pb.s + j;
      pb.ids[pos] = p.ids[j];
      pb.mask[pos] = p.loss_mask[j];
      pb.key_valid[pos] = 1;
    }
  }
  return pb;
}

}  // namespace detail

// Multitask fine-tune: each step samples a task by mixing weight, then a
// batch (with replacement) from that task's usable clips. Trainable set is
// encoder + projector + LoRA adapters; the base LM must come out of the run
// bit-identical or the run fails.
inline TrainReport train_fusion(ModelBundle& b, const std::vector<data::Example>& train_examples,
                                const TrainConfig& cfg) {
  if (cfg.epochs <= 0 || cfg.batch <= 0) throw ConfigError("train_fusion: epochs and batch must be positive");
  if (cfg.peak_lr <= 0) throw ConfigError("train_fusion: peak_lr must be positive");
  if (cfg.w_detection < 0 || cfg.w_attribution < 0 || cfg.w_localization < 0 ||
      cfg.w_detection + cfg.w_attribution + cfg.w_localization <= 0)
    throw ConfigError("train_fusion: task weights must be non-negative with a positive sum");
  if (!b.lm.lora_attached) throw nn::UsageError("train_fusion: bundle has no LoRA adapters attached");
  if (train_examples.empty()) throw DataError("train_fusion: no training examples");

  const std::vector<std::pair<Task, double>> mix = {{Task::Detection, cfg.w_detection},
                                                    {Task::Attribution, cfg.w_attribution},
                                                    {Task::Localization, cfg.w_localization}};
  std::vector<std::vector<const data::Example*>> subsets;
  for (const auto& [t, w] : mix) {
    subsets.push_back(detail::usable_for(train_examples, t));
    if (w > 0 && subsets.back().empty())
      throw DataError(std::string("train_fusion: no usable clips for ") + task_name(t));
  }
  const double wsum = cfg.w_detection + cfg.w_attribution + cfg.w_localization;

  // Train/freeze split. The base LM was frozen by attach_lora; re-assert the
  // trainable halves so the contract holds regardless of the bundle's history.
  b.enc.params.set_all_trainable(true);
  b.projector.set_all_trainable(true);
  b.lm.params.set_all_trainable(false);
  b.lm.adapters.set_all_trainable(true);
  std::vector<nn::Parameter<float>*> trainable = b.enc.params.trainable();
  for (auto* p : b.projector.trainable()) trainable.push_back(p);
  for (auto* p : b.lm.adapters.trainable()) trainable.push_back(p);
  const std::vector<nn::NamedTensor> frozen_before = nn::snapshot(b.lm.params);

  TrainReport rep;
  rep.steps_per_epoch =
      static_cast<int>((train_examples.size() + cfg.batch - 1) / static_cast<size_t>(cfg.batch));
  rep.total_steps = cfg.epochs * rep.steps_per_epoch;
  nn::AdamW<float> opt(trainable);
  nn::CosineSchedule sched(cfg.peak_lr, std::max(1, rep.total_steps),
                           std::min(cfg.warmup, rep.total_steps));
  Rng rng(derive_seed(cfg.seed, "fusion_train"));

  for (int step = 0; step < rep.total_steps; ++step) {
    // task draw by mixing weight
    double u = rng.uniform() * wsum;
    size_t ti = 0;
    for (; ti + 1 < mix.size(); ++ti) {
      if (u < mix[ti].second) break;
      u -= mix[ti].second;
    }
    while (mix[ti].second <= 0) ++ti;  // never select a zero-weight task
    const Task task = mix[ti].first;
    const auto& pool = subsets[ti];

    std::vector<PromptSequence> prompts;
    std::vector<const data::Example*> picked;
    for (int i = 0; i < cfg.batch; ++i) {
      const data::Example* e = pool[static_cast<size_t>(rng.below(pool.size()))];
      picked.push_back(e);
      prompts.push_back(
          build_prompt(b.vocab, task, e->feats.n_frames, gold_answer(task, *e)));
    }
    auto pb = detail::pack_prompts(b.vocab, prompts);
    nn::Tensor<float> emb = b.lm.embed_tokens(pb.ids, pb.b, pb.s);
    std::vector<nn::RowInjection<float>> inj;
    for (int bi = 0; bi < pb.b; ++bi) {
      nn::Tensor<float> p = detail::project_audio(b.enc, b.projector,
                                                  picked[static_cast<size_t>(bi)]->feats,
                                                  /*train=*/true, &rng);
      inj.push_back({bi, prompts[static_cast<size_t>(bi)].audio_start, std::move(p)});
    }
    emb = nn::inject_rows(emb, inj);
    nn::Tensor<float> logits = b.lm.forward_embedded(emb, pb.key_valid);
    nn::Tensor<float> loss = answer_loss(logits, pb.ids, pb.mask);
    const double lr = sched.lr_at(step);
    rep.log.push_back({step, task, lr, loss.item()});
    nn::backward(loss);
    opt.step(lr);
  }

  const std::vector<nn::NamedTensor> frozen_after = nn::snapshot(b.lm.params);
  for (size_t i = 0; i < frozen_before.size(); ++i) {
    const auto& x = frozen_before[i];
    const auto& y = frozen_after[i];
    if (x.name != y.name || x.shape != y.shape ||
        std::memcmp(x.data.data(), y.data.data(), x.data.size() * sizeof(float)) != 0)
      throw FusionError("train_fusion: frozen base LM weight '" + x.name + "' changed during training");
  }

  if (!cfg.log_path.empty()) {
    std::ofstream f(cfg.log_path, std::ios::trunc);
    if (!f) throw DataError("train_fusion: cannot open log file " + cfg.log_path);
    for (const auto& s : rep.log) {
      nlohmann::json j = {{"step", s.step}, {"task", task_name(s.task)}, {"lr", s.lr}, {"loss", s.loss}};
      f << j.dump() << "\n";
    }
  }
  return rep;
}

// ---------------------------------------------------------------------------
// inference

// Greedy decode of the task answer for one clip. Returns the raw generated
// text (parsing and scoring are the harness's job).
inline std::string infer(ModelBundle& b, const frontend::Features& feats, Task task,
                         int max_new_tokens = 32) {
  const PromptSequence ps = build_prompt(b.vocab, task, feats.n_frames);
  nn::Tensor<float> p;
  {
    nn::NoGradGuard ng;
    p = detail::project_audio(b.enc, b.projector, feats, /*train=*/false, nullptr);
  }
  const lm::GenResult res =
      lm::generate_greedy(b.lm, b.vocab, ps.ids, {{ps.audio_start, p}}, max_new_tokens);
  std::vector<int> ids = res.ids;
  if (!ids.empty() && ids.back() == b.vocab.eos) ids.pop_back();
  return lm::detokenize(b.vocab, ids);
}

}  // namespace dfallm::fusion

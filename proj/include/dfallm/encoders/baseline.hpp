// Encoder-only baselines: linear heads on mean-pooled encoder output for
// detection and attribution, and a 2-output regressor for localization
// (predicting one (start, end) pair — multi-segment clips are represented by
// their largest segment, a documented limitation of this head shape).

#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "dfallm/data/dataset.hpp"
#include "dfallm/encoders/encoder.hpp"
#include "dfallm/encoders/pretrain.hpp"
#include "dfallm/nn/optim.hpp"
#include "dfallm/task.hpp"

namespace dfallm::encoders {

struct BaselineHeads {
  nn::ParamStore<float> params;
  int n_classes = 0;

  static BaselineHeads init(int d_model, int n_classes, uint64_t seed) {
    if (n_classes < 2) throw ConfigError("BaselineHeads: need at least 2 attribution classes");
    BaselineHeads h;
    h.n_classes = n_classes;
    Rng rng(derive_seed(seed, "baseline_heads"));
    h.params.add_normal("det.w", {2, d_model}, rng, 0.02);
    h.params.add_constant("det.b", {2}, 0.0);
    h.params.add_normal("attrib.w", {n_classes, d_model}, rng, 0.02);
    h.params.add_constant("attrib.b", {n_classes}, 0.0);
    h.params.add_normal("loc.w", {2, d_model}, rng, 0.02);
    h.params.add_constant("loc.b", {2}, 0.0);
    return h;
  }
};

struct BaselineConfig {
  int steps = 400;
  int batch = 8;
  double peak_lr = 1e-3;
  int warmup = 20;
  uint64_t seed = 42;
  bool finetune_encoder = true;  // false freezes the trunk, training heads only
};

namespace detail {

inline std::vector<const data::Example*> task_subset(const std::vector<data::Example>& exs,
                                                     Task task) {
  std::vector<const data::Example*> out;
  for (const auto& e : exs) {
    // the regressor only has one (start,end) slot: train it on spoofed clips
    // that carry segments (bona fide clips have nothing to localize)
    if (task == Task::Localization && e.segments.empty()) continue;
    out.push_back(&e);
  }
  if (out.empty()) throw DataError("baseline: no usable examples for this task");
  return out;
}

template <class T>
FeatureBatch<T> pack_examples(const std::vector<const data::Example*>& batch) {
  FeatureBatch<T> out;
  out.b = static_cast<int>(batch.size());
  out.dim = batch[0]->feats.dim;
  for (const auto* e : batch) {
    out.s = std::max(out.s, e->feats.n_frames);
    if (e->feats.dim != out.dim)
      throw nn::ShapeError("pack_examples: mixed feature dims in one batch");
  }
  out.x = nn::Tensor<T>::zeros({out.b, out.s, out.dim});
  out.key_valid.assign(static_cast<size_t>(out.b) * out.s, 0);
  for (int bi = 0; bi < out.b; ++bi) {
    const auto& f = batch[static_cast<size_t>(bi)]->feats;
    std::copy(f.data.begin(), f.data.end(),
              out.x.data->begin() + static_cast<int64_t>(bi) * out.s * out.dim);
    for (int j = 0; j < f.n_frames; ++j)
      out.key_valid[static_cast<size_t>(bi) * out.s + j] = 1;
  }
  return out;
}

}  // namespace detail

// Trains the head for `task` (plus the encoder when finetune_encoder) on the
// given examples. Returns the final-step loss.
inline double train_baseline(Encoder<float>& enc, BaselineHeads& heads,
                             const std::vector<data::Example>& examples,
                             const std::vector<std::string>& classes, Task task,
                             const BaselineConfig& cfg) {
  auto usable = detail::task_subset(examples, task);
  enc.params.set_all_trainable(cfg.finetune_encoder);
  std::vector<nn::Parameter<float>*> train_set;
  if (cfg.finetune_encoder)
    for (auto* p : enc.params.trainable()) train_set.push_back(p);
  const std::string head = task == Task::Detection   ? "det"
                           : task == Task::Attribution ? "attrib"
                                                       : "loc";
  train_set.push_back(&heads.params.at(head + ".w"));
  train_set.push_back(&heads.params.at(head + ".b"));
  nn::AdamW<float> opt(train_set);
  nn::CosineSchedule sched(cfg.peak_lr, std::max(1, cfg.steps), std::min(cfg.warmup, cfg.steps));
  Rng rng(derive_seed(cfg.seed, "baseline_train"));

  double final_loss = 0;
  for (int step = 0; step < cfg.steps; ++step) {
    std::vector<const data::Example*> batch;
    for (int i = 0; i < cfg.batch; ++i)
      batch.push_back(usable[static_cast<size_t>(rng.below(usable.size()))]);
    auto fb = detail::pack_examples<float>(batch);
    nn::Tensor<float> h = enc.encode(fb.x, fb.key_valid, /*train=*/true, &rng);
    nn::Tensor<float> pooled = nn::mean_rows_masked(h, fb.key_valid);  // [B, d]
    nn::Tensor<float> out =
        nn::linear(pooled, heads.params.at(head + ".w").value, heads.params.at(head + ".b").value);
    nn::Tensor<float> loss;
    if (task == Task::Localization) {
      std::vector<float> target;
      for (const auto* e : batch) {
        auto [s0, s1] = data::largest_segment(e->segments);
        target.push_back(static_cast<float>(s0));
        target.push_back(static_cast<float>(s1));
      }
      loss = nn::mse(out, target);
    } else {
      std::vector<int> targets;
      for (const auto* e : batch)
        targets.push_back(task == Task::Detection ? (e->label == "spoof" ? 1 : 0)
                                                  : data::class_index(classes, e->family));
      loss = nn::cross_entropy_masked(out, targets, std::vector<float>(batch.size(), 1.0f));
    }
    final_loss = loss.item();
    nn::backward(loss);
    opt.step(sched.lr_at(step));
  }
  enc.params.set_all_trainable(true);
  return final_loss;
}

struct BaselinePrediction {
  int cls = 0;          // detection: 0 bona fide / 1 spoof; attribution: class index
  double start_s = 0;   // localization only
  double end_s = 0;
};

inline BaselinePrediction predict_baseline(Encoder<float>& enc, const BaselineHeads& heads,
                                           const data::Example& ex, Task task) {
  nn::NoGradGuard ng;
  std::vector<const data::Example*> one = {&ex};
  auto fb = detail::pack_examples<float>(one);
  nn::Tensor<float> h = enc.encode(fb.x, fb.key_valid);
  nn::Tensor<float> pooled = nn::mean_rows_masked(h, fb.key_valid);
  const std::string head = task == Task::Detection   ? "det"
                           : task == Task::Attribution ? "attrib"
                                                       : "loc";
  auto& hp = const_cast<nn::ParamStore<float>&>(heads.params);  // read-only lookup
  nn::Tensor<float> out = nn::linear(pooled, hp.at(head + ".w").value, hp.at(head + ".b").value);
  BaselinePrediction pred;
  if (task == Task::Localization) {
    // clamp contract: 0 <= start <= end <= duration
    double s = out.ptr()[0], e = out.ptr()[1];
    s = std::clamp(s, 0.0, ex.duration_s);
    e = std::clamp(e, s, ex.duration_s);
    pred.start_s = s;
    pred.end_s = e;
  } else {
    const int n = out.shape[1];
    pred.cls = static_cast<int>(std::max_element(out.ptr(), out.ptr() + n) - out.ptr());
  }
  return pred;
}

}  // namespace dfallm::encoders

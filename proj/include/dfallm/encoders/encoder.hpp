// Audio feature encoder.
//
// A small non-causal pre-LN transformer over log-mel frames: input projection
// from the feature dimension, fixed sinusoidal positions, four blocks of
// attention plus gated feed-forward, final layer norm. Two encoder kinds share
// this architecture bit-for-bit and differ only in pre-training objective
// (per-frame template classification vs masked reconstruction); the kind tag
// never changes the parameter set, which keeps the comparison architecturally
// fair.

#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "dfallm/errors.hpp"
#include "dfallm/nn/ops.hpp"
#include "dfallm/nn/param.hpp"
#include "dfallm/nn/rng.hpp"

namespace dfallm::encoders {

enum class EncoderKind { SemanticFrameCls, AcousticMasked };

inline const char* kind_name(EncoderKind k) {
  return k == EncoderKind::SemanticFrameCls ? "semantic" : "acoustic";
}

inline EncoderKind kind_from_name(const std::string& s) {
  if (s == "semantic") return EncoderKind::SemanticFrameCls;
  if (s == "acoustic") return EncoderKind::AcousticMasked;
  throw ConfigError("encoder kind must be 'semantic' or 'acoustic', got '" + s + "'");
}

struct EncoderConfig {
  int n_layers = 4;
  int d_model = 128;
  int n_heads = 4;
  int d_ff = 256;
  int in_dim = 0;  // feature dimension (40 at 50 Hz, 160 at 12.5 Hz)
  int max_len = 1024;
  double dropout = 0.1;  // applied in training mode only
};

template <class T>
struct Encoder {
  EncoderConfig cfg;
  EncoderKind kind = EncoderKind::SemanticFrameCls;
  nn::ParamStore<T> params;
  std::shared_ptr<std::vector<T>> pos_table;  // sinusoidal, not trained

  static Encoder init(const EncoderConfig& cfg, EncoderKind kind, uint64_t seed) {
    if (cfg.in_dim <= 0) throw ConfigError("Encoder::init: in_dim must be set");
    if (cfg.d_model % cfg.n_heads != 0)
      throw ConfigError("Encoder::init: d_model not divisible by n_heads");
    if (!(cfg.dropout >= 0.0 && cfg.dropout < 1.0))
      throw ConfigError("Encoder::init: dropout must be in [0,1)");
    Encoder e;
    e.cfg = cfg;
    e.kind = kind;
    // identical init stream regardless of kind: parity is bit-exact
    Rng rng(derive_seed(seed, "enc_init"));
    const double sd = 0.02;
    e.params.add_normal("in_proj.w", {cfg.d_model, cfg.in_dim}, rng, sd);
    e.params.add_constant("in_proj.b", {cfg.d_model}, 0.0);
    for (int i = 0; i < cfg.n_layers; ++i) {
      const std::string l = "l" + std::to_string(i) + ".";
      e.params.add_constant(l + "ln1.g", {cfg.d_model}, 1.0);
      e.params.add_constant(l + "ln1.b", {cfg.d_model}, 0.0);
      for (const char* t : {"q", "k", "v", "o"}) {
        e.params.add_normal(l + t + ".w", {cfg.d_model, cfg.d_model}, rng, sd);
        e.params.add_constant(l + std::string(t) + ".b", {cfg.d_model}, 0.0);
      }
      e.params.add_constant(l + "ln2.g", {cfg.d_model}, 1.0);
      e.params.add_constant(l + "ln2.b", {cfg.d_model}, 0.0);
      e.params.add_normal(l + "gate.w", {cfg.d_ff, cfg.d_model}, rng, sd);
      e.params.add_constant(l + "gate.b", {cfg.d_ff}, 0.0);
      e.params.add_normal(l + "up.w", {cfg.d_ff, cfg.d_model}, rng, sd);
      e.params.add_constant(l + "up.b", {cfg.d_ff}, 0.0);
      e.params.add_normal(l + "down.w", {cfg.d_model, cfg.d_ff}, rng, sd);
      e.params.add_constant(l + "down.b", {cfg.d_model}, 0.0);
    }
    e.params.add_constant("lnf.g", {cfg.d_model}, 1.0);
    e.params.add_constant("lnf.b", {cfg.d_model}, 0.0);
    e.pos_table = make_pos_table(cfg.max_len, cfg.d_model);
    return e;
  }

  static std::shared_ptr<std::vector<T>> make_pos_table(int max_len, int d) {
    auto tab = std::make_shared<std::vector<T>>(static_cast<size_t>(max_len) * d);
    for (int p = 0; p < max_len; ++p)
      for (int i = 0; i < d / 2; ++i) {
        const double f = std::pow(10000.0, -2.0 * i / d);
        (*tab)[static_cast<size_t>(p) * d + 2 * i] = static_cast<T>(std::sin(p * f));
        (*tab)[static_cast<size_t>(p) * d + 2 * i + 1] = static_cast<T>(std::cos(p * f));
      }
    return tab;
  }

  // x is [B, S, in_dim]; returns [B, S, d_model]. In training mode, dropout
  // draws from `rng` after the attention and feed-forward sublayers.
  nn::Tensor<T> encode(const nn::Tensor<T>& x, const std::vector<char>& key_valid = {},
                       bool train = false, Rng* rng = nullptr) {
    if (x.shape.size() != 3 || x.shape[2] != cfg.in_dim)
      throw ConfigError("encode: want [B,S," + std::to_string(cfg.in_dim) + "] features, got " +
                        nn::shape_str(x.shape));
    if (x.shape[1] > cfg.max_len)
      throw nn::ShapeError("encode: sequence " + std::to_string(x.shape[1]) +
                           " exceeds max length " + std::to_string(cfg.max_len));
    if (train && cfg.dropout > 0 && !rng)
      throw nn::UsageError("encode: training mode with dropout needs an rng");
    nn::Tensor<T> h = nn::linear(x, params.at("in_proj.w").value, params.at("in_proj.b").value);
    h = add_sinusoidal(h);
    for (int i = 0; i < cfg.n_layers; ++i) {
      const std::string l = "l" + std::to_string(i) + ".";
      nn::Tensor<T> n1 =
          nn::layer_norm(h, params.at(l + "ln1.g").value, params.at(l + "ln1.b").value);
      nn::Tensor<T> att = nn::attention(
          nn::linear(n1, params.at(l + "q.w").value, params.at(l + "q.b").value),
          nn::linear(n1, params.at(l + "k.w").value, params.at(l + "k.b").value),
          nn::linear(n1, params.at(l + "v.w").value, params.at(l + "v.b").value), cfg.n_heads,
          /*causal=*/false, key_valid);
      att = nn::linear(att, params.at(l + "o.w").value, params.at(l + "o.b").value);
      if (train && cfg.dropout > 0) att = nn::dropout(att, cfg.dropout, *rng);
      h = nn::add(h, att);
      nn::Tensor<T> n2 =
          nn::layer_norm(h, params.at(l + "ln2.g").value, params.at(l + "ln2.b").value);
      nn::Tensor<T> ff =
          nn::mul(nn::gelu(nn::linear(n2, params.at(l + "gate.w").value,
                                      params.at(l + "gate.b").value)),
                  nn::linear(n2, params.at(l + "up.w").value, params.at(l + "up.b").value));
      ff = nn::linear(ff, params.at(l + "down.w").value, params.at(l + "down.b").value);
      if (train && cfg.dropout > 0) ff = nn::dropout(ff, cfg.dropout, *rng);
      h = nn::add(h, ff);
    }
    return nn::layer_norm(h, params.at("lnf.g").value, params.at("lnf.b").value);
  }

 private:
  nn::Tensor<T> add_sinusoidal(const nn::Tensor<T>& x) {
    nn::Tensor<T> pos = nn::Tensor<T>::zeros({x.shape[1], cfg.d_model});
    std::copy(pos_table->begin(),
              pos_table->begin() + static_cast<size_t>(x.shape[1]) * cfg.d_model,
              pos.data->begin());
    return nn::add_pos(x, pos);
  }
};

}  // namespace dfallm::encoders

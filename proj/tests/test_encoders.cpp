// Encoder tests: trunk parity between the two pre-training kinds, encode
// contracts, the semantic/acoustic pre-training objectives with their pinned
// quality bars, the high-band ridge probe, the mean-pool baselines, and
// dataset assembly from a corpus manifest.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "dfallm/corpus/corpus.hpp"
#include "dfallm/data/dataset.hpp"
#include "dfallm/encoders/baseline.hpp"
#include "dfallm/encoders/encoder.hpp"
#include "dfallm/encoders/pretrain.hpp"
#include "dfallm/encoders/probe.hpp"
#include "dfallm/nn/checkpoint.hpp"

using namespace dfallm;
using namespace dfallm::encoders;

namespace {

EncoderConfig enc50() {
  EncoderConfig ec;
  ec.in_dim = 40;
  return ec;
}

nn::Tensor<float> random_input(int b, int s, int dim, uint64_t seed) {
  nn::Tensor<float> x = nn::Tensor<float>::zeros({b, s, dim});
  Rng rng(seed);
  for (auto& v : *x.data) v = static_cast<float>(rng.normal());
  return x;
}

bool stores_equal(nn::ParamStore<float>& a, nn::ParamStore<float>& b) {
  if (a.size() != b.size()) return false;
  for (auto* pa : a.all()) {
    auto* pb = b.find(pa->name);
    if (!pb || pa->value.shape != pb->value.shape) return false;
    if (std::memcmp(pa->value.data->data(), pb->value.data->data(),
                    pa->value.data->size() * sizeof(float)) != 0)
      return false;
  }
  return true;
}

// Both kinds pre-trained once at the shipped defaults; shared across cases.
struct Trained {
  Encoder<float> sem, ac;
  PretrainSemanticReport sem_rep;
  PretrainAcousticReport ac_rep;
};

const Trained& trained() {
  static Trained t = [] {
    frontend::FrontendConfig fc;
    PretrainEncoderConfig pc;
    Trained tt{Encoder<float>::init(enc50(), EncoderKind::SemanticFrameCls, pc.seed),
               Encoder<float>::init(enc50(), EncoderKind::AcousticMasked, pc.seed),
               {},
               {}};
    tt.sem_rep = pretrain_semantic(tt.sem, fc, pc);
    tt.ac_rep = pretrain_acoustic(tt.ac, fc, pc);
    return tt;
  }();
  return t;
}

// Small corpus shared by the dataset/baseline cases.
const corpus::Manifest& tiny_manifest() {
  static corpus::Manifest m = [] {
    const std::string dir = "/tmp/dfallm_test_enc_corpus";
    std::filesystem::remove_all(dir);
    corpus::CorpusConfig cfg;
    cfg.out_dir = dir;
    cfg.seed = 42;
    cfg.train_per_family = 4;
    cfg.id_test_per_family = 2;
    cfg.ood_spoof_total = 6;
    cfg.ood_bona_total = 6;
    return corpus::build_corpus(cfg);
  }();
  return m;
}

const std::vector<data::Example>& tiny_train() {
  static std::vector<data::Example> exs = [] {
    frontend::FrontendConfig fc;
    return data::load_examples(tiny_manifest(), fc, "train");
  }();
  return exs;
}

}  // namespace

// ---------------------------------------------------------------------------
// trunk

TEST_CASE("encoder kinds: names round trip, unknown rejected") {
  CHECK(std::string(kind_name(EncoderKind::SemanticFrameCls)) == "semantic");
  CHECK(std::string(kind_name(EncoderKind::AcousticMasked)) == "acoustic");
  CHECK(kind_from_name("semantic") == EncoderKind::SemanticFrameCls);
  CHECK(kind_from_name("acoustic") == EncoderKind::AcousticMasked);
  CHECK_THROWS_AS(kind_from_name("wavelet"), ConfigError);
}

TEST_CASE("encoder init: kind never changes parameters, census matches closed form") {
  auto sem = Encoder<float>::init(enc50(), EncoderKind::SemanticFrameCls, 42);
  auto ac = Encoder<float>::init(enc50(), EncoderKind::AcousticMasked, 42);

  // bit-identical across kinds: the comparison is architecturally fair
  CHECK(stores_equal(sem.params, ac.params));

  // independent census: in_proj + 4 * (ln1 + qkvo + ln2 + gated ff) + lnf
  const int64_t in_proj = 128 * 40 + 128;
  const int64_t per_layer = (2 * 128)              // ln1
                            + 4 * (128 * 128 + 128)  // q k v o
                            + (2 * 128)            // ln2
                            + 2 * (256 * 128 + 256)  // gate, up
                            + (128 * 256 + 128);   // down
  const int64_t expect = in_proj + 4 * per_layer + 2 * 128;
  CHECK(sem.params.total_params() == expect);
  CHECK(expect == 667520);

  // different seed, different weights
  auto other = Encoder<float>::init(enc50(), EncoderKind::SemanticFrameCls, 43);
  CHECK_FALSE(stores_equal(sem.params, other.params));
}

TEST_CASE("encoder init: config validation") {
  EncoderConfig ec;  // in_dim unset
  CHECK_THROWS_AS(Encoder<float>::init(ec, EncoderKind::SemanticFrameCls, 42), ConfigError);
  ec = enc50();
  ec.n_heads = 3;  // 128 % 3 != 0
  CHECK_THROWS_AS(Encoder<float>::init(ec, EncoderKind::SemanticFrameCls, 42), ConfigError);
  ec = enc50();
  ec.dropout = 1.0;
  CHECK_THROWS_AS(Encoder<float>::init(ec, EncoderKind::SemanticFrameCls, 42), ConfigError);
}

TEST_CASE("sinusoidal position table matches sin/cos closed form") {
  auto tab = Encoder<float>::make_pos_table(8, 128);
  REQUIRE(tab->size() == 8u * 128u);
  // position 0: sin(0)=0 and cos(0)=1 interleaved
  for (int i = 0; i < 64; ++i) {
    CHECK((*tab)[2 * i] == 0.0f);
    CHECK((*tab)[2 * i + 1] == 1.0f);
  }
  for (int p : {1, 3, 7})
    for (int i : {0, 5, 63}) {
      const double f = std::pow(10000.0, -2.0 * i / 128.0);
      CHECK((*tab)[static_cast<size_t>(p) * 128 + 2 * i] ==
            doctest::Approx(std::sin(p * f)).epsilon(1e-6));
      CHECK((*tab)[static_cast<size_t>(p) * 128 + 2 * i + 1] ==
            doctest::Approx(std::cos(p * f)).epsilon(1e-6));
    }
}

TEST_CASE("encode: shapes, eval determinism, input validation") {
  auto enc = Encoder<float>::init(enc50(), EncoderKind::SemanticFrameCls, 42);
  auto x = random_input(2, 17, 40, 7);

  nn::Tensor<float> h1 = enc.encode(x);
  REQUIRE(h1.shape == std::vector<int>({2, 17, 128}));
  nn::Tensor<float> h2 = enc.encode(x);
  CHECK(std::memcmp(h1.ptr(), h2.ptr(), h1.data->size() * sizeof(float)) == 0);

  // wrong feature dim
  auto bad = random_input(1, 5, 39, 7);
  CHECK_THROWS_AS(enc.encode(bad), ConfigError);

  // too long for the position table
  EncoderConfig shorty = enc50();
  shorty.max_len = 16;
  auto enc2 = Encoder<float>::init(shorty, EncoderKind::SemanticFrameCls, 42);
  CHECK_THROWS_AS(enc2.encode(random_input(1, 17, 40, 7)), nn::ShapeError);

  // training mode with dropout requires an rng, and actually drops
  CHECK_THROWS_AS(enc.encode(x, {}, /*train=*/true, nullptr), nn::UsageError);
  Rng rng(11);
  nn::Tensor<float> hd = enc.encode(x, {}, /*train=*/true, &rng);
  double diff = 0;
  for (size_t i = 0; i < h1.data->size(); ++i)
    diff = std::max(diff, std::abs(static_cast<double>((*hd.data)[i] - (*h1.data)[i])));
  CHECK(diff > 1e-3);
}

TEST_CASE("encode: padded keys do not leak into valid rows") {
  auto enc = Encoder<float>::init(enc50(), EncoderKind::AcousticMasked, 42);
  const int t = 12, s = 20;
  auto alone = random_input(1, t, 40, 3);

  nn::Tensor<float> packed = nn::Tensor<float>::zeros({1, s, 40});
  std::copy(alone.data->begin(), alone.data->end(), packed.data->begin());
  std::vector<char> kv(static_cast<size_t>(s), 0);
  for (int j = 0; j < t; ++j) kv[static_cast<size_t>(j)] = 1;
  // garbage in the padded region must not matter
  Rng junk(99);
  for (size_t i = static_cast<size_t>(t) * 40; i < packed.data->size(); ++i)
    (*packed.data)[i] = static_cast<float>(10.0 * junk.normal());

  nn::Tensor<float> h_alone = enc.encode(alone);
  nn::Tensor<float> h_packed = enc.encode(packed, kv);
  double diff = 0;
  for (int64_t i = 0; i < static_cast<int64_t>(t) * 128; ++i)
    diff = std::max(diff, std::abs(static_cast<double>(h_packed.ptr()[i] - h_alone.ptr()[i])));
  CHECK(diff < 1e-5);
}

TEST_CASE("encode: permuting two distant frames changes outputs at those positions") {
  auto enc = Encoder<float>::init(enc50(), EncoderKind::SemanticFrameCls, 42);
  auto x = random_input(1, 30, 40, 5);
  nn::Tensor<float> h = enc.encode(x);

  nn::Tensor<float> y = nn::Tensor<float>::zeros({1, 30, 40});
  *y.data = *x.data;
  for (int d = 0; d < 40; ++d)
    std::swap((*y.data)[5 * 40 + d], (*y.data)[22 * 40 + d]);
  nn::Tensor<float> hy = enc.encode(y);

  auto row_diff = [&](int j) {
    double m = 0;
    for (int d = 0; d < 128; ++d)
      m = std::max(m, std::abs(static_cast<double>(hy.ptr()[j * 128 + d] - h.ptr()[j * 128 + d])));
    return m;
  };
  CHECK(row_diff(5) > 1e-3);
  CHECK(row_diff(22) > 1e-3);
}

// ---------------------------------------------------------------------------
// pre-training scaffolding

TEST_CASE("frame_template_ids: center-of-frame mapping at both rates") {
  std::vector<int> track(120);
  for (size_t i = 0; i < track.size(); ++i) track[i] = static_cast<int>(i % 8);

  frontend::FrontendConfig fc;  // 50 Hz: frame j centered at 320j + 200 samples
  auto ids50 = frame_template_ids(track, 30, fc);
  REQUIRE(ids50.size() == 30u);
  for (int j = 0; j < 30; ++j) {
    // t_center = 0.020 j + 0.0125 s -> floor(t/0.020) = j
    CHECK(ids50[static_cast<size_t>(j)] == track[static_cast<size_t>(j)]);
  }

  frontend::FrontendConfig fc12 = fc;
  fc12.frame_rate_hz = 12.5;  // stack of 4: center at 1280j + 680 samples
  auto ids12 = frame_template_ids(track, 20, fc12);
  REQUIRE(ids12.size() == 20u);
  for (int j = 0; j < 20; ++j) {
    // t_center = 0.080 j + 0.0425 s -> floor(t/0.020) = 4j + 2
    CHECK(ids12[static_cast<size_t>(j)] == track[static_cast<size_t>(4 * j + 2)]);
  }

  // past-the-end frames clamp to the last track entry
  auto clamped = frame_template_ids(track, 200, fc);
  CHECK(clamped.back() == track.back());

  CHECK_THROWS_AS(frame_template_ids({}, 5, fc), DataError);
}

TEST_CASE("draw_mask_positions: exact count, range, spans, validation") {
  for (uint64_t seed : {1u, 2u, 3u, 4u, 5u}) {
    Rng rng(seed);
    for (int t : {1, 2, 3, 10, 47, 100, 101}) {
      auto pos = draw_mask_positions(rng, t, 0.30, 3);
      const int want = std::min(t, static_cast<int>(std::ceil(0.30 * t)));
      CHECK(static_cast<int>(pos.size()) == want);
      CHECK(std::is_sorted(pos.begin(), pos.end()));
      CHECK(std::adjacent_find(pos.begin(), pos.end()) == pos.end());  // unique
      CHECK(pos.front() >= 0);
      CHECK(pos.back() < t);
    }
  }

  // same seed, same draw; different seeds eventually differ
  Rng a(7), b(7);
  auto pa = draw_mask_positions(a, 100, 0.30, 3);
  auto pb = draw_mask_positions(b, 100, 0.30, 3);
  CHECK(pa == pb);
  bool any_diff = false;
  for (uint64_t s = 0; s < 10 && !any_diff; ++s) {
    Rng c(s);
    any_diff = draw_mask_positions(c, 100, 0.30, 3) != pa;
  }
  CHECK(any_diff);

  // spans of 3 produce mostly-contiguous masks: mean run length well above 1
  {
    Rng rng(11);
    double runs_total = 0, positions_total = 0;
    for (int rep = 0; rep < 20; ++rep) {
      auto pos = draw_mask_positions(rng, 100, 0.30, 3);
      positions_total += static_cast<double>(pos.size());
      runs_total += static_cast<double>(detail::mask_runs(pos).size());
    }
    CHECK(positions_total / runs_total > 1.8);
  }

  Rng rng(1);
  CHECK_THROWS_AS(draw_mask_positions(rng, 10, 0.0, 3), ConfigError);
  CHECK_THROWS_AS(draw_mask_positions(rng, 10, 1.0, 3), ConfigError);
  CHECK_THROWS_AS(draw_mask_positions(rng, 10, -0.2, 3), ConfigError);
  CHECK_THROWS_AS(draw_mask_positions(rng, 10, 0.3, 0), ConfigError);
  CHECK_THROWS_AS(draw_mask_positions(rng, 0, 0.3, 3), nn::UsageError);
}

TEST_CASE("mask_runs: contiguous grouping") {
  CHECK(detail::mask_runs({}).empty());
  auto runs = detail::mask_runs({2, 3, 4, 9, 15, 16});
  REQUIRE(runs.size() == 3u);
  CHECK(runs[0] == std::pair<int, int>(2, 3));
  CHECK(runs[1] == std::pair<int, int>(9, 1));
  CHECK(runs[2] == std::pair<int, int>(15, 2));
}

TEST_CASE("pack_features: zero padding and key_valid layout") {
  frontend::FrontendConfig fc;
  auto exs = make_pretrain_examples(3, 5, fc, "packtest");
  std::vector<const EncoderExample*> ptrs = {&exs[0], &exs[1], &exs[2]};
  auto fb = detail::pack_features<float>(ptrs);
  CHECK(fb.b == 3);
  CHECK(fb.dim == 40);
  int longest = 0;
  for (const auto& e : exs) longest = std::max(longest, e.feats.n_frames);
  CHECK(fb.s == longest);
  for (int bi = 0; bi < 3; ++bi) {
    const auto& f = exs[static_cast<size_t>(bi)].feats;
    for (int j = 0; j < fb.s; ++j)
      CHECK(static_cast<int>(fb.key_valid[static_cast<size_t>(bi) * fb.s + j]) ==
            (j < f.n_frames ? 1 : 0));
    // padded rows are exactly zero
    for (int64_t i = static_cast<int64_t>(f.n_frames) * 40; i < static_cast<int64_t>(fb.s) * 40; ++i)
      CHECK((*fb.x.data)[static_cast<int64_t>(bi) * fb.s * 40 + i] == 0.0f);
    // copied rows match the source bit for bit
    CHECK(std::memcmp(fb.x.ptr() + static_cast<int64_t>(bi) * fb.s * 40, f.data.data(),
                      f.data.size() * sizeof(float)) == 0);
  }

  // mixed dims rejected
  frontend::FrontendConfig fc12;
  fc12.frame_rate_hz = 12.5;
  auto other = make_pretrain_examples(1, 5, fc12, "packtest12");
  std::vector<const EncoderExample*> mixed = {&exs[0], &other[0]};
  CHECK_THROWS_AS(detail::pack_features<float>(mixed), nn::ShapeError);
}

TEST_CASE("mse_masked: zero-weight rows carry no loss and no gradient") {
  nn::Tensor<float> pred = nn::Tensor<float>::zeros({4, 5}, /*requires_grad=*/true);
  Rng rng(3);
  for (auto& v : *pred.data) v = static_cast<float>(rng.normal());
  std::vector<float> target(20);
  for (auto& v : target) v = static_cast<float>(rng.normal());
  std::vector<float> w = {1.0f, 0.0f, 1.0f, 0.0f};

  nn::Tensor<float> l1 = nn::mse_masked(pred, target, w);
  const double v1 = l1.item();

  // perturb the excluded rows; the loss must not move
  nn::Tensor<float> pred2 = nn::Tensor<float>::zeros({4, 5}, /*requires_grad=*/true);
  *pred2.data = *pred.data;
  for (int d = 0; d < 5; ++d) {
    (*pred2.data)[1 * 5 + d] += 17.0f;
    (*pred2.data)[3 * 5 + d] -= 4.0f;
  }
  nn::Tensor<float> l2 = nn::mse_masked(pred2, target, w);
  CHECK(l2.item() == doctest::Approx(v1).epsilon(1e-12));

  // and the gradient at excluded rows is exactly zero
  nn::backward(l2);
  REQUIRE(pred2.grad);
  const auto& g = *pred2.grad;
  for (int d = 0; d < 5; ++d) {
    CHECK(g[1 * 5 + d] == 0.0f);
    CHECK(g[3 * 5 + d] == 0.0f);
    CHECK(g[0 * 5 + d] != 0.0f);
  }
}

// ---------------------------------------------------------------------------
// pre-training objectives

TEST_CASE("pretrain: wrong kind and bad mask fraction rejected") {
  frontend::FrontendConfig fc;
  PretrainEncoderConfig pc;
  auto sem = Encoder<float>::init(enc50(), EncoderKind::SemanticFrameCls, 42);
  auto ac = Encoder<float>::init(enc50(), EncoderKind::AcousticMasked, 42);
  CHECK_THROWS_AS(pretrain_semantic(ac, fc, pc), nn::UsageError);
  CHECK_THROWS_AS(pretrain_acoustic(sem, fc, pc), nn::UsageError);
  pc.mask_fraction = 1.5;
  CHECK_THROWS_AS(pretrain_acoustic(ac, fc, pc), ConfigError);
}

TEST_CASE("pretrain: zero steps leaves the trunk at its initialization") {
  frontend::FrontendConfig fc;
  PretrainEncoderConfig pc;
  pc.steps = 0;
  pc.n_clips = 3;
  pc.heldout_clips = 2;
  auto sem = Encoder<float>::init(enc50(), EncoderKind::SemanticFrameCls, 42);
  auto fresh = Encoder<float>::init(enc50(), EncoderKind::SemanticFrameCls, 42);
  pretrain_semantic(sem, fc, pc);
  CHECK(stores_equal(sem.params, fresh.params));

  auto ac = Encoder<float>::init(enc50(), EncoderKind::AcousticMasked, 42);
  auto fresh_ac = Encoder<float>::init(enc50(), EncoderKind::AcousticMasked, 42);
  pretrain_acoustic(ac, fc, pc);
  CHECK(stores_equal(ac.params, fresh_ac.params));
}

TEST_CASE("pretrain: deterministic per seed") {
  frontend::FrontendConfig fc;
  PretrainEncoderConfig pc;
  pc.steps = 6;
  pc.n_clips = 6;
  pc.heldout_clips = 2;

  auto s1 = Encoder<float>::init(enc50(), EncoderKind::SemanticFrameCls, 42);
  auto s2 = Encoder<float>::init(enc50(), EncoderKind::SemanticFrameCls, 42);
  auto r1 = pretrain_semantic(s1, fc, pc);
  auto r2 = pretrain_semantic(s2, fc, pc);
  CHECK(stores_equal(s1.params, s2.params));
  CHECK(r1.final_loss == r2.final_loss);

  auto a1 = Encoder<float>::init(enc50(), EncoderKind::AcousticMasked, 42);
  auto a2 = Encoder<float>::init(enc50(), EncoderKind::AcousticMasked, 42);
  auto ar1 = pretrain_acoustic(a1, fc, pc);
  auto ar2 = pretrain_acoustic(a2, fc, pc);
  CHECK(stores_equal(a1.params, a2.params));
  CHECK(ar1.heldout_masked_mse == ar2.heldout_masked_mse);
}

TEST_CASE("pretrain_semantic: uniform start, learned templates on held-out clips") {
  const auto& t = trained();
  // step-0 loss is the uniform-prediction value over the 8 templates
  CHECK(t.sem_rep.step0_loss == doctest::Approx(std::log(8.0)).epsilon(0.01));
  CHECK(t.sem_rep.final_loss < 0.25);
  // pinned bar: held-out per-frame template accuracy
  CHECK(t.sem_rep.heldout_frame_acc >= 0.80);
}

TEST_CASE("pretrain_acoustic: descent and held-out skill over the mean predictor") {
  const auto& t = trained();
  CHECK(t.ac_rep.step0_mse > t.ac_rep.final_mse);
  // pinned bar: masked reconstruction beats the per-clip unmasked-mean predictor
  CHECK(t.ac_rep.heldout_masked_mse < t.ac_rep.heldout_mean_predictor_mse);
  // the bar itself sits where the corpus puts it; catch silent drift
  CHECK(t.ac_rep.heldout_mean_predictor_mse > 0.8);
  CHECK(t.ac_rep.heldout_mean_predictor_mse < 2.0);
}

TEST_CASE("encoder checkpoint round trip is bit exact") {
  auto& t = const_cast<Trained&>(trained());
  const std::string path = "/tmp/dfallm_enc_ckpt.bin";
  nn::save_checkpoint(path, nn::snapshot(t.ac.params));
  auto fresh = Encoder<float>::init(enc50(), EncoderKind::AcousticMasked, 999);
  CHECK_FALSE(stores_equal(fresh.params, t.ac.params));
  nn::restore(fresh.params, nn::load_checkpoint(path));
  CHECK(stores_equal(fresh.params, t.ac.params));
  std::filesystem::remove(path);
}

// ---------------------------------------------------------------------------
// high-band probe

TEST_CASE("highband_log_energy: band contrast and stacking") {
  frontend::FrontendConfig fc;
  const int n = 16000;  // 1 s
  std::vector<float> hi(n), lo(n);
  for (int i = 0; i < n; ++i) {
    hi[static_cast<size_t>(i)] = 0.3f * std::sin(2.0 * M_PI * 6000.0 * i / 16000.0);
    lo[static_cast<size_t>(i)] = 0.3f * std::sin(2.0 * M_PI * 200.0 * i / 16000.0);
  }
  const int frames50 = 1 + (n - fc.n_fft) / fc.hop;
  auto e_hi = highband_log_energy(hi, fc, frames50);
  auto e_lo = highband_log_energy(lo, fc, frames50);
  REQUIRE(static_cast<int>(e_hi.size()) == frames50);
  for (int j = 0; j < frames50; ++j)
    CHECK(e_hi[static_cast<size_t>(j)] > e_lo[static_cast<size_t>(j)] + 10.0f);

  // stacked rate averages sub-frames of a steady tone to nearly the same value
  frontend::FrontendConfig fc12 = fc;
  fc12.frame_rate_hz = 12.5;
  auto e12 = highband_log_energy(hi, fc12, frames50 / 4);
  for (size_t j = 0; j < e12.size(); ++j) {
    float avg = 0;
    for (int k = 0; k < 4; ++k) avg += e_hi[4 * j + static_cast<size_t>(k)];
    avg /= 4.0f;
    CHECK(e12[j] == doctest::Approx(avg).epsilon(1e-4));
  }
}

TEST_CASE("highband probe: masked-reconstruction features keep more spectral detail") {
  auto& t = const_cast<Trained&>(trained());
  frontend::FrontendConfig fc;
  const double mse_sem = probe_highband_mse(t.sem, fc, 7);
  const double mse_ac = probe_highband_mse(t.ac, fc, 7);
  INFO("semantic=", mse_sem, " acoustic=", mse_ac);
  CHECK(std::isfinite(mse_sem));
  CHECK(std::isfinite(mse_ac));
  CHECK(mse_ac > 0.0);
  // the representation-contrast direction the whole comparison rests on
  CHECK(mse_ac < mse_sem);
}

// ---------------------------------------------------------------------------
// dataset assembly

TEST_CASE("load_examples: manifest joined with cached features") {
  frontend::FrontendConfig fc;
  const auto& exs = tiny_train();
  CHECK(exs.size() == 40u);  // 20 spoof + 20 bona fide
  int spoof = 0;
  for (const auto& e : exs) {
    CHECK(e.split == "train");
    CHECK(e.feats.dim == 40);
    CHECK(e.feats.n_frames >= 40);
    CHECK(e.duration_s >= 0.99);
    CHECK(e.duration_s <= 2.01);
    if (e.label == "spoof") {
      ++spoof;
      CHECK_FALSE(e.segments.empty());
    } else {
      CHECK(e.segments.empty());
    }
  }
  CHECK(spoof == 20);

  // second load reads the cache and reproduces features bit for bit
  auto again = data::load_examples(tiny_manifest(), fc, "train");
  REQUIRE(again.size() == exs.size());
  for (size_t i = 0; i < exs.size(); ++i) {
    CHECK(again[i].id == exs[i].id);
    CHECK(std::memcmp(again[i].feats.data.data(), exs[i].feats.data.data(),
                      exs[i].feats.data.size() * sizeof(float)) == 0);
  }

  // split filter: everything loads when unfiltered
  auto all = data::load_examples(tiny_manifest(), fc);
  CHECK(all.size() == tiny_manifest().records.size());
}

TEST_CASE("attribution classes: train families plus bona fide, sorted") {
  auto classes = data::attribution_classes(tiny_manifest());
  const std::vector<std::string> want = {"bandlimit", "bonafide",  "phasevocoder",
                                         "pitchflat", "quantize", "splice"};
  CHECK(classes == want);
  CHECK(data::class_index(classes, "bonafide") == 1);
  CHECK(data::class_index(classes, "splice") == 5);
  CHECK_THROWS_AS(data::class_index(classes, "noisevocoder"), DataError);

  corpus::Manifest empty;
  CHECK_THROWS_AS(data::attribution_classes(empty), DataError);
}

TEST_CASE("largest_segment picks the longest span") {
  using seg = std::pair<double, double>;
  CHECK(data::largest_segment({{0.3, 0.5}, {1.0, 1.9}}) == seg(1.0, 1.9));
  CHECK(data::largest_segment({{0.0, 2.0}}) == seg(0.0, 2.0));
  CHECK_THROWS_AS(data::largest_segment({}), DataError);
}

// ---------------------------------------------------------------------------
// mean-pool baselines

TEST_CASE("baseline heads: shapes and validation") {
  auto heads = BaselineHeads::init(128, 6, 42);
  CHECK(heads.params.at("det.w").value.shape == std::vector<int>({2, 128}));
  CHECK(heads.params.at("attrib.w").value.shape == std::vector<int>({6, 128}));
  CHECK(heads.params.at("loc.w").value.shape == std::vector<int>({2, 128}));
  CHECK_THROWS_AS(BaselineHeads::init(128, 1, 42), ConfigError);
}

TEST_CASE("baseline: untrained detection sits at chance on a balanced split") {
  auto enc = Encoder<float>::init(enc50(), EncoderKind::SemanticFrameCls, 42);
  auto heads = BaselineHeads::init(128, 6, 42);
  const auto& exs = tiny_train();
  int correct = 0;
  for (const auto& e : exs) {
    auto p = predict_baseline(enc, heads, e, Task::Detection);
    correct += (p.cls == (e.label == "spoof" ? 1 : 0));
  }
  const double acc = static_cast<double>(correct) / static_cast<double>(exs.size());
  INFO("untrained detection accuracy ", acc);
  CHECK(acc >= 0.45);
  CHECK(acc <= 0.55);
}

TEST_CASE("baseline: localization task subset and clamped predictions") {
  const auto& exs = tiny_train();
  auto subset = detail::task_subset(exs, Task::Localization);
  CHECK(subset.size() == 20u);  // spoofs only
  for (const auto* e : subset) CHECK_FALSE(e->segments.empty());

  std::vector<data::Example> bona_only;
  for (const auto& e : exs)
    if (e.label == "bonafide") bona_only.push_back(e);
  CHECK_THROWS_AS(detail::task_subset(bona_only, Task::Localization), DataError);

  // an untrained regressor still respects 0 <= start <= end <= duration
  auto enc = Encoder<float>::init(enc50(), EncoderKind::AcousticMasked, 42);
  auto heads = BaselineHeads::init(128, 6, 42);
  // exaggerate the head so raw outputs land far outside the valid range
  for (auto& v : *heads.params.at("loc.w").value.data) v *= 400.0f;
  for (const auto& e : exs) {
    auto p = predict_baseline(enc, heads, e, Task::Localization);
    CHECK(p.start_s >= 0.0);
    CHECK(p.start_s <= p.end_s);
    CHECK(p.end_s <= e.duration_s);
  }
}

TEST_CASE("train_baseline: frozen trunk stays bit-identical, fine-tuned trunk moves") {
  const auto& exs = tiny_train();
  auto classes = data::attribution_classes(tiny_manifest());
  BaselineConfig bc;
  bc.steps = 8;
  bc.finetune_encoder = false;

  auto enc = Encoder<float>::init(enc50(), EncoderKind::AcousticMasked, 42);
  auto fresh = Encoder<float>::init(enc50(), EncoderKind::AcousticMasked, 42);
  auto heads = BaselineHeads::init(128, static_cast<int>(classes.size()), 42);
  train_baseline(enc, heads, exs, classes, Task::Localization, bc);
  CHECK(stores_equal(enc.params, fresh.params));  // frozen
  CHECK(enc.params.trainable_params() == enc.params.total_params());  // restored after

  bc.finetune_encoder = true;
  train_baseline(enc, heads, exs, classes, Task::Detection, bc);
  CHECK_FALSE(stores_equal(enc.params, fresh.params));

  // deterministic per seed
  auto e1 = Encoder<float>::init(enc50(), EncoderKind::AcousticMasked, 42);
  auto e2 = Encoder<float>::init(enc50(), EncoderKind::AcousticMasked, 42);
  auto h1 = BaselineHeads::init(128, static_cast<int>(classes.size()), 42);
  auto h2 = BaselineHeads::init(128, static_cast<int>(classes.size()), 42);
  bc.steps = 6;
  const double l1 = train_baseline(e1, h1, exs, classes, Task::Detection, bc);
  const double l2 = train_baseline(e2, h2, exs, classes, Task::Detection, bc);
  CHECK(l1 == l2);
  CHECK(stores_equal(e1.params, e2.params));
  CHECK(stores_equal(h1.params, h2.params));
}

TEST_CASE("train_baseline: detection fits the tiny training split") {
  const auto& exs = tiny_train();
  auto classes = data::attribution_classes(tiny_manifest());
  auto enc = Encoder<float>::init(enc50(), EncoderKind::AcousticMasked, 42);
  auto heads = BaselineHeads::init(128, static_cast<int>(classes.size()), 42);
  BaselineConfig bc;
  bc.steps = 150;
  const double final_loss = train_baseline(enc, heads, exs, classes, Task::Detection, bc);
  INFO("final detection loss ", final_loss);
  CHECK(final_loss < 0.35);

  int correct = 0;
  for (const auto& e : exs) {
    auto p = predict_baseline(enc, heads, e, Task::Detection);
    correct += (p.cls == (e.label == "spoof" ? 1 : 0));
  }
  const double acc = static_cast<double>(correct) / static_cast<double>(exs.size());
  INFO("train-split detection accuracy ", acc);
  CHECK(acc >= 0.85);
}

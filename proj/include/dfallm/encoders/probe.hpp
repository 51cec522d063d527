// Representation-contrast probe: how much low-level spectral detail survives
// in frozen encoder features. A closed-form ridge regression maps encoder
// outputs to the frame's log energy above 4 kHz; lower held-out error means
// the representation kept more of the raw signal.

#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <complex>
#include <vector>

#include "dfallm/corpus/synth.hpp"
#include "dfallm/dsp/fft.hpp"
#include "dfallm/encoders/encoder.hpp"
#include "dfallm/encoders/pretrain.hpp"
#include "dfallm/frontend/features.hpp"

namespace dfallm::encoders {

// Per-encoder-frame log energy above `lo_hz`, framed exactly like the
// frontend (window n_fft, hop, zero-padded FFT); stacked frames average their
// sub-frames' log energies.
inline std::vector<float> highband_log_energy(const std::vector<float>& x,
                                              const frontend::FrontendConfig& fc,
                                              int n_frames, double lo_hz = 4000.0) {
  const int stack = frontend::stack_factor(fc.frame_rate_hz);
  const size_t nfft = dsp::next_pow2(static_cast<size_t>(fc.n_fft));
  const std::vector<double> win = dsp::hann_window(static_cast<size_t>(fc.n_fft));
  const int t_sub = 1 + (static_cast<int>(x.size()) - fc.n_fft) / fc.hop;
  const size_t k_lo = static_cast<size_t>(std::ceil(lo_hz * static_cast<double>(nfft) / fc.sample_rate));
  std::vector<double> sub(static_cast<size_t>(t_sub));
  std::vector<std::complex<double>> buf(nfft);
  for (int i = 0; i < t_sub; ++i) {
    std::fill(buf.begin(), buf.end(), std::complex<double>(0, 0));
    for (int j = 0; j < fc.n_fft; ++j)
      buf[static_cast<size_t>(j)] = x[static_cast<size_t>(i) * fc.hop + j] * win[static_cast<size_t>(j)];
    dsp::fft_inplace(buf);
    double acc = 0;
    for (size_t k = k_lo; k <= nfft / 2; ++k) acc += std::norm(buf[k]);
    sub[static_cast<size_t>(i)] = std::log(acc + 1e-10);
  }
  std::vector<float> out(static_cast<size_t>(n_frames));
  for (int j = 0; j < n_frames; ++j) {
    double acc = 0;
    for (int k = 0; k < stack; ++k) acc += sub[static_cast<size_t>(j) * stack + k];
    out[static_cast<size_t>(j)] = static_cast<float>(acc / stack);
  }
  return out;
}

// Ridge-regression probe on frozen features. Returns held-out MSE of the
// linear map from encoder outputs to high-band log energy.
inline double probe_highband_mse(Encoder<float>& enc, const frontend::FrontendConfig& fc,
                                 uint64_t seed, int n_train = 48, int n_eval = 16,
                                 double lambda = 1e-2) {
  const int d = enc.cfg.d_model;
  std::vector<std::vector<float>> rows;   // feature vectors (plus bias slot)
  std::vector<float> targets;
  std::vector<size_t> clip_end;  // row index where each clip ends (train/eval split by clip)
  nn::NoGradGuard ng;
  for (int i = 0; i < n_train + n_eval; ++i) {
    char id[40];
    std::snprintf(id, sizeof(id), "probe_%04d", i);
    const corpus::ClipSpec spec = corpus::make_clip_spec(seed, id);
    const corpus::BonafideClip clip = corpus::synth_bonafide(spec);
    const frontend::Features f = frontend::log_mel(clip.samples, fc);
    const std::vector<float> y = highband_log_energy(clip.samples, fc, f.n_frames);
    nn::Tensor<float> x = nn::Tensor<float>::zeros({1, f.n_frames, f.dim});
    std::copy(f.data.begin(), f.data.end(), x.data->begin());
    nn::Tensor<float> h = enc.encode(x);
    for (int j = 0; j < f.n_frames; ++j) {
      std::vector<float> row(static_cast<size_t>(d) + 1);
      std::copy(h.ptr() + static_cast<int64_t>(j) * d, h.ptr() + static_cast<int64_t>(j + 1) * d,
                row.begin());
      row[static_cast<size_t>(d)] = 1.0f;  // bias feature
      rows.push_back(std::move(row));
      targets.push_back(y[static_cast<size_t>(j)]);
    }
    clip_end.push_back(rows.size());
  }

  const size_t train_rows = clip_end[static_cast<size_t>(n_train) - 1];
  const int dd = d + 1;
  Eigen::MatrixXd xtx = Eigen::MatrixXd::Zero(dd, dd);
  Eigen::VectorXd xty = Eigen::VectorXd::Zero(dd);
  for (size_t r = 0; r < train_rows; ++r) {
    Eigen::Map<const Eigen::VectorXf> v(rows[r].data(), dd);
    const Eigen::VectorXd vd = v.cast<double>();
    xtx.noalias() += vd * vd.transpose();
    xty.noalias() += vd * static_cast<double>(targets[r]);
  }
  xtx.diagonal().array() += lambda * static_cast<double>(train_rows);
  const Eigen::VectorXd w = xtx.ldlt().solve(xty);

  double se = 0;
  size_t n = 0;
  for (size_t r = train_rows; r < rows.size(); ++r) {
    Eigen::Map<const Eigen::VectorXf> v(rows[r].data(), dd);
    const double pred = v.cast<double>().dot(w);
    const double c = pred - targets[r];
    se += c * c;
    ++n;
  }
  return se / static_cast<double>(n);
}

}  // namespace dfallm::encoders

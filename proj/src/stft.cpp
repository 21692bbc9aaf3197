#include "sepkit/stft.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "sepkit/fft.hpp"

namespace sepkit {

namespace {
constexpr double kWindowSumFloor = 1e-8;
}

void StftConfig::validate() const {
  if (!is_power_of_two(n_fft)) throw std::invalid_argument("n_fft must be a power of two");
  if (hop <= 0) throw std::invalid_argument("hop must be positive");
  if (win_length <= 0 || win_length > n_fft)
    throw std::invalid_argument("win_length must be in [1, n_fft]");
  if (hop > win_length) throw std::invalid_argument("hop must not exceed win_length");
}

std::vector<double> make_window(WindowKind kind, int win_length, int n_fft) {
  std::vector<double> w(n_fft, 0.0);
  const int offset = (n_fft - win_length) / 2;
  for (int i = 0; i < win_length; ++i) {
    double v = 1.0;
    switch (kind) {
      case WindowKind::hann:
        // periodic hann
        v = 0.5 * (1.0 - std::cos(2.0 * M_PI * i / win_length));
        break;
      case WindowKind::sqrt_hann:
        v = std::sqrt(0.5 * (1.0 - std::cos(2.0 * M_PI * i / win_length)));
        break;
      case WindowKind::rectangular:
        v = 1.0;
        break;
    }
    w[offset + i] = v;
  }
  return w;
}

long stft_frame_count(long num_samples, const StftConfig& cfg) {
  if (cfg.center_pad) return num_samples / cfg.hop + 1;
  if (num_samples < cfg.n_fft) return 0;
  return (num_samples - cfg.n_fft) / cfg.hop + 1;
}

ComplexSpectrogram stft(const Waveform& wave, const StftConfig& cfg) {
  cfg.validate();
  wave.validate();
  const long n_samples = wave.num_samples();
  if (n_samples == 0) throw std::invalid_argument("stft: empty input");

  const long frames = stft_frame_count(n_samples, cfg);
  if (frames <= 0) throw std::invalid_argument("stft: input shorter than one frame");
  const int bins = cfg.n_fft / 2 + 1;
  const int channels = wave.num_channels();
  const long pad = cfg.center_pad ? cfg.n_fft / 2 : 0;

  const std::vector<double> window = make_window(cfg.window, cfg.win_length, cfg.n_fft);

  ComplexSpectrogram spec(static_cast<int>(frames), bins, channels);
  spec.hop = cfg.hop;

  std::vector<double> frame(cfg.n_fft);
  for (int c = 0; c < channels; ++c) {
    const Signal& x = wave.channel(c);
    for (long t = 0; t < frames; ++t) {
      const long start = t * cfg.hop - pad;
      for (int i = 0; i < cfg.n_fft; ++i) {
        const long idx = start + i;
        const double s = (idx >= 0 && idx < n_samples) ? x[idx] : 0.0;
        frame[i] = s * window[i];
      }
      std::vector<Complex> bins_c = rfft(frame.data(), cfg.n_fft);
      for (int f = 0; f < bins; ++f) spec.at(static_cast<int>(t), f, c) = bins_c[f];
    }
  }
  spec.sample_rate = wave.sample_rate;
  return spec;
}

Waveform istft(const ComplexSpectrogram& spec, const StftConfig& cfg,
               long out_length, double sample_rate) {
  cfg.validate();
  const int bins = cfg.n_fft / 2 + 1;
  if (spec.bins != bins)
    throw std::invalid_argument("istft: spectrogram bins inconsistent with n_fft");
  if (spec.frames <= 0) throw std::invalid_argument("istft: empty spectrogram");

  const long pad = cfg.center_pad ? cfg.n_fft / 2 : 0;
  const long full_len = static_cast<long>(spec.frames - 1) * cfg.hop + cfg.n_fft;
  const std::vector<double> window = make_window(cfg.window, cfg.win_length, cfg.n_fft);

  Waveform out(spec.channels, out_length,
               spec.sample_rate > 0 ? spec.sample_rate : sample_rate);

  std::vector<double> acc(full_len);
  std::vector<double> wsum(full_len);
  std::vector<Complex> frame_bins(bins);
  for (int c = 0; c < spec.channels; ++c) {
    std::fill(acc.begin(), acc.end(), 0.0);
    std::fill(wsum.begin(), wsum.end(), 0.0);
    for (int t = 0; t < spec.frames; ++t) {
      for (int f = 0; f < bins; ++f) frame_bins[f] = spec.at(t, f, c);
      std::vector<double> x = irfft(frame_bins.data(), cfg.n_fft);
      const long start = static_cast<long>(t) * cfg.hop;
      for (int i = 0; i < cfg.n_fft; ++i) {
        acc[start + i] += x[i] * window[i];
        wsum[start + i] += window[i] * window[i];
      }
    }
    Signal& y = out.channel(c);
    for (long n = 0; n < out_length; ++n) {
      const long idx = n + pad;
      if (idx < full_len) y[n] = acc[idx] / std::max(wsum[idx], kWindowSumFloor);
    }
  }
  return out;
}

std::vector<Waveform> run_pipeline(const Waveform& mixture, const StftConfig& cfg,
                                   const Separator& separator) {
  if (!separator.apply) throw std::invalid_argument("run_pipeline: separator not set");
  const ComplexSpectrogram features = stft(mixture, cfg);
  std::vector<ComplexSpectrogram> separated = separator.apply(features);
  if (static_cast<int>(separated.size()) != separator.num_sources)
    throw std::runtime_error("run_pipeline: separator returned " +
                             std::to_string(separated.size()) + " outputs, expected " +
                             std::to_string(separator.num_sources));
  std::vector<Waveform> out;
  out.reserve(separated.size());
  for (const auto& s : separated) {
    if (s.frames != features.frames || s.bins != features.bins)
      throw std::runtime_error("run_pipeline: separator output shape mismatch");
    out.push_back(istft(s, cfg, mixture.num_samples(), mixture.sample_rate));
  }
  return out;
}

}  // namespace sepkit

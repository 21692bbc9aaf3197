#include "sepkit/synth.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "sepkit/fft.hpp"

namespace sepkit {

Signal white_noise(Rng& rng, long num_samples) {
  if (num_samples <= 0)
    throw std::invalid_argument("white_noise: num_samples must be > 0");
  Signal s(num_samples);
  for (auto& v : s) v = rng.normal();
  return s;
}

Signal modulated_laplacian(Rng& rng, long num_samples, double sample_rate) {
  if (num_samples <= 0)
    throw std::invalid_argument("modulated_laplacian: num_samples must be > 0");
  if (sample_rate <= 0.0)
    throw std::invalid_argument("modulated_laplacian: sample_rate must be > 0");
  const long seg = std::max(1l, std::lround(0.2 * sample_rate));
  Signal s(num_samples);
  double env = 1.0;
  for (long k = 0; k < num_samples; ++k) {
    if (k % seg == 0) {
      const double u = rng.uniform(0.1, 1.0);
      env = u * u;
    }
    const double u = rng.uniform() - 0.5;
    const double mag = -std::log(1.0 - 2.0 * std::fabs(u));
    s[k] = env * (u < 0 ? -mag : mag) * M_SQRT1_2;
  }
  return s;
}

Signal modulated_utterance(Rng& rng, long num_samples, double sample_rate) {
  if (num_samples <= 0)
    throw std::invalid_argument("modulated_utterance: num_samples must be > 0");
  if (sample_rate <= 0.0)
    throw std::invalid_argument("modulated_utterance: sample_rate must be > 0");
  const int bands = 12;
  const double f_lo = 100.0;
  const double f_hi = std::min(7600.0, 0.475 * sample_rate);
  long nfft = 1;
  while (nfft < num_samples) nfft <<= 1;

  Signal carrier(nfft, 0.0);
  Signal out(num_samples, 0.0);
  auto next_seg = [&rng, sample_rate]() {
    return std::lround(rng.uniform(0.15, 0.35) * sample_rate);
  };

  for (int b = 0; b < bands; ++b) {
    for (long k = 0; k < num_samples; ++k) carrier[k] = rng.normal();
    std::fill(carrier.begin() + num_samples, carrier.end(), 0.0);
    auto spec = rfft(carrier.data(), nfft);
    const double e0 = f_lo * std::pow(f_hi / f_lo, double(b) / bands);
    const double e1 = f_lo * std::pow(f_hi / f_lo, double(b + 1) / bands);
    for (size_t i = 0; i < spec.size(); ++i) {
      const double f = i * sample_rate / nfft;
      if (f < e0 || f >= e1) spec[i] = 0.0;
    }
    const Signal band = irfft(spec.data(), nfft);
    double amp = 0.0;
    long until = 0;
    for (long k = 0; k < num_samples; ++k) {
      if (k >= until) {
        const double u = rng.uniform(0.03, 1.0);
        amp = u * u;
        until = k + next_seg();
      }
      out[k] += amp * band[k];
    }
  }

  double gate = 1.0;
  long until = 0;
  for (long k = 0; k < num_samples; ++k) {
    if (k >= until) {
      gate = rng.uniform() < 0.3 ? 0.0 : 1.0;
      until = k + next_seg();
    }
    out[k] *= gate;
  }
  return out;
}

}  // namespace sepkit

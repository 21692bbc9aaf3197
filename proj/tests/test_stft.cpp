#include "sepkit/stft.hpp"

#include <cmath>
#include <complex>
#include <vector>

#include "doctest.h"
#include "sepkit/rng.hpp"

using namespace sepkit;

namespace {

Waveform random_wave(int channels, long n, uint64_t seed, double fs = 16000.0) {
  Rng rng(seed);
  Waveform w(channels, n, fs);
  for (int c = 0; c < channels; ++c)
    for (long i = 0; i < n; ++i) w.channel(c)[i] = rng.uniform(-1.0, 1.0);
  return w;
}

double rel_l2_error(const Signal& a, const Signal& b) {
  double num = 0.0, den = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    num += d * d;
    den += a[i] * a[i];
  }
  return std::sqrt(num / den);
}

}  // namespace

TEST_CASE("zero waveform maps to zero spectrogram of expected shape") {
  StftConfig cfg;
  Waveform w(1, 16000);
  ComplexSpectrogram spec = stft(w, cfg);
  CHECK(spec.bins == 257);
  CHECK(spec.frames == 16000 / 128 + 1);
  CHECK(spec.channels == 1);
  double mx = 0.0;
  for (const auto& v : spec.data) mx = std::max(mx, std::abs(v));
  CHECK(mx == 0.0);
}

TEST_CASE("pure tone at a bin center concentrates in that bin") {
  StftConfig cfg;
  cfg.n_fft = 256;
  cfg.win_length = 256;
  cfg.hop = 256;
  cfg.window = WindowKind::rectangular;
  cfg.center_pad = false;

  const int k = 19;
  Waveform w(1, 1024);
  for (long n = 0; n < 1024; ++n)
    w.channel(0)[n] = std::sin(2.0 * M_PI * k * n / 256.0);

  ComplexSpectrogram spec = stft(w, cfg);
  REQUIRE(spec.frames == 4);
  const double peak = std::abs(spec.at(0, k, 0));
  CHECK(peak == doctest::Approx(256.0 / 2.0).epsilon(1e-9));
  for (int f = 0; f < spec.bins; ++f) {
    if (f == k) continue;
    CHECK(std::abs(spec.at(0, f, 0)) / peak < 1e-10);
  }
}

TEST_CASE("round trip is near-perfect for hann at half and quarter hop") {
  for (int hop : {256, 128}) {
    StftConfig cfg;
    cfg.n_fft = 512;
    cfg.win_length = 512;
    cfg.hop = hop;
    cfg.window = WindowKind::hann;
    for (long n : {512L, 1000L, 4096L, 7777L}) {
      Waveform x = random_wave(1, n, 7000 + n + hop);
      Waveform y = istft(stft(x, cfg), cfg, n);
      CHECK(rel_l2_error(x.channel(0), y.channel(0)) < 1e-6);
    }
  }
}

TEST_CASE("stft is linear") {
  StftConfig cfg;
  Waveform x = random_wave(1, 2048, 11);
  Waveform y = random_wave(1, 2048, 12);
  const double a = 0.7, b = -1.3;
  Waveform z(1, 2048);
  for (long i = 0; i < 2048; ++i)
    z.channel(0)[i] = a * x.channel(0)[i] + b * y.channel(0)[i];

  ComplexSpectrogram X = stft(x, cfg), Y = stft(y, cfg), Z = stft(z, cfg);
  double mx = 0.0;
  for (size_t i = 0; i < Z.data.size(); ++i)
    mx = std::max(mx, std::abs(Z.data[i] - (a * X.data[i] + b * Y.data[i])));
  CHECK(mx < 1e-10);
}

TEST_CASE("istft is linear") {
  StftConfig cfg;
  Waveform x = random_wave(1, 3000, 21);
  Waveform y = random_wave(1, 3000, 22);
  ComplexSpectrogram X = stft(x, cfg), Y = stft(y, cfg);
  const double a = 2.25, b = 0.4;
  ComplexSpectrogram Z = X;
  for (size_t i = 0; i < Z.data.size(); ++i) Z.data[i] = a * X.data[i] + b * Y.data[i];

  Waveform xi = istft(X, cfg, 3000);
  Waveform yi = istft(Y, cfg, 3000);
  Waveform zi = istft(Z, cfg, 3000);
  double mx = 0.0;
  for (long i = 0; i < 3000; ++i)
    mx = std::max(mx, std::abs(zi.channel(0)[i] -
                               (a * xi.channel(0)[i] + b * yi.channel(0)[i])));
  CHECK(mx < 1e-10);
}

TEST_CASE("energy is preserved under window normalization at quarter hop") {
  StftConfig cfg;  // 512/128 hann, center
  const long n = 8192;
  Waveform x = random_wave(1, n, 31);
  // keep edge samples silent so every nonzero sample sees the full
  // overlap-add window sum
  for (long i = 0; i < 512; ++i) {
    x.channel(0)[i] = 0.0;
    x.channel(0)[n - 1 - i] = 0.0;
  }

  double e_time = 0.0;
  for (double v : x.channel(0)) e_time += v * v;

  ComplexSpectrogram X = stft(x, cfg);
  // half-spectrum energy back to full-spectrum, then /N for DFT scaling
  double e_spec = 0.0;
  for (int t = 0; t < X.frames; ++t) {
    for (int f = 0; f < X.bins; ++f) {
      const double p = std::norm(X.at(t, f, 0));
      const bool shared = f == 0 || f == X.bins - 1;
      e_spec += shared ? p : 2.0 * p;
    }
  }
  e_spec /= cfg.n_fft;

  std::vector<double> win = make_window(cfg.window, cfg.win_length, cfg.n_fft);
  double wsq = 0.0;
  for (double v : win) wsq += v * v;
  e_spec /= wsq / cfg.hop;  // constant overlap-add sum of w^2

  CHECK(std::abs(e_spec - e_time) / e_time < 1e-4);
}

TEST_CASE("zero spectrogram maps to zero waveform") {
  StftConfig cfg;
  ComplexSpectrogram spec(10, 257, 2);
  spec.hop = cfg.hop;
  spec.sample_rate = 16000.0;
  Waveform w = istft(spec, cfg, 1200);
  for (int c = 0; c < 2; ++c)
    for (double v : w.channel(c)) CHECK(v == 0.0);
}

TEST_CASE("frame counts follow the padding mode") {
  StftConfig cfg;
  CHECK(stft_frame_count(16000, cfg) == 126);
  CHECK(stft_frame_count(512, cfg) == 5);
  cfg.center_pad = false;
  CHECK(stft_frame_count(512, cfg) == 1);
  CHECK(stft_frame_count(640, cfg) == 2);
  CHECK(stft_frame_count(511, cfg) == 0);
}

TEST_CASE("DC and Nyquist bins are real for real input") {
  StftConfig cfg;
  Waveform x = random_wave(1, 4000, 41);
  ComplexSpectrogram X = stft(x, cfg);
  for (int t = 0; t < X.frames; ++t) {
    CHECK(std::abs(X.at(t, 0, 0).imag()) < 1e-9);
    CHECK(std::abs(X.at(t, X.bins - 1, 0).imag()) < 1e-9);
  }
}

TEST_CASE("invalid configs and inputs are rejected") {
  Waveform x = random_wave(1, 2048, 51);

  StftConfig bad_hop;
  bad_hop.hop = 1024;
  CHECK_THROWS_AS(stft(x, bad_hop), std::invalid_argument);

  StftConfig bad_fft;
  bad_fft.n_fft = 500;
  bad_fft.win_length = 500;
  CHECK_THROWS_AS(stft(x, bad_fft), std::invalid_argument);

  StftConfig cfg;
  Waveform empty;
  CHECK_THROWS_AS(stft(empty, cfg), std::invalid_argument);

  cfg.center_pad = false;
  Waveform tiny(1, 100);
  CHECK_THROWS_AS(stft(tiny, cfg), std::invalid_argument);
}

TEST_CASE("channels transform independently") {
  StftConfig cfg;
  Waveform a = random_wave(1, 3000, 61);
  Waveform b = random_wave(1, 3000, 62);
  Waveform both(2, 3000);
  both.channels[0] = a.channel(0);
  both.channels[1] = b.channel(0);

  ComplexSpectrogram A = stft(a, cfg), B = stft(b, cfg), AB = stft(both, cfg);
  double mx = 0.0;
  for (int t = 0; t < AB.frames; ++t) {
    for (int f = 0; f < AB.bins; ++f) {
      mx = std::max(mx, std::abs(AB.at(t, f, 0) - A.at(t, f, 0)));
      mx = std::max(mx, std::abs(AB.at(t, f, 1) - B.at(t, f, 0)));
    }
  }
  CHECK(mx == 0.0);
}

TEST_CASE("identity separator reproduces the mixture") {
  StftConfig cfg;
  Waveform x = random_wave(1, 9000, 71);
  Separator sep;
  sep.num_sources = 1;
  sep.apply = [](const ComplexSpectrogram& in) {
    return std::vector<ComplexSpectrogram>{in};
  };
  std::vector<Waveform> out = run_pipeline(x, cfg, sep);
  REQUIRE(out.size() == 1);
  CHECK(out[0].num_samples() == x.num_samples());
  CHECK(rel_l2_error(x.channel(0), out[0].channel(0)) < 1e-6);
}

TEST_CASE("a zeroing separator yields one live and one silent output") {
  StftConfig cfg;
  Waveform x = random_wave(1, 6000, 81);
  Separator sep;
  sep.num_sources = 2;
  sep.apply = [](const ComplexSpectrogram& in) {
    ComplexSpectrogram zero = in;
    std::fill(zero.data.begin(), zero.data.end(), Complex(0.0, 0.0));
    return std::vector<ComplexSpectrogram>{in, zero};
  };
  std::vector<Waveform> out = run_pipeline(x, cfg, sep);
  REQUIRE(out.size() == 2);
  CHECK(rel_l2_error(x.channel(0), out[0].channel(0)) < 1e-6);
  double silent = 0.0;
  for (double v : out[1].channel(0)) silent = std::max(silent, std::abs(v));
  CHECK(silent < 1e-12);
}

TEST_CASE("separator output count mismatch is an error") {
  StftConfig cfg;
  Waveform x = random_wave(1, 4000, 91);
  Separator sep;
  sep.num_sources = 2;
  sep.apply = [](const ComplexSpectrogram& in) {
    return std::vector<ComplexSpectrogram>{in};
  };
  CHECK_THROWS_AS(run_pipeline(x, cfg, sep), std::runtime_error);
}

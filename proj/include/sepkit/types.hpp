#ifndef SEPKIT_TYPES_HPP
#define SEPKIT_TYPES_HPP

#include <complex>
#include <stdexcept>
#include <string>
#include <vector>

namespace sepkit {

using Complex = std::complex<double>;
using Signal = std::vector<double>;

// Multichannel time-domain signal. Channels are planar and equal length.
struct Waveform {
  std::vector<Signal> channels;
  double sample_rate = 16000.0;

  Waveform() = default;
  Waveform(int num_channels, long num_samples, double fs = 16000.0)
      : channels(num_channels, Signal(num_samples, 0.0)), sample_rate(fs) {}

  int num_channels() const { return static_cast<int>(channels.size()); }
  long num_samples() const {
    return channels.empty() ? 0 : static_cast<long>(channels[0].size());
  }
  Signal& channel(int c) { return channels.at(c); }
  const Signal& channel(int c) const { return channels.at(c); }

  void validate() const {
    if (channels.empty()) throw std::invalid_argument("waveform has no channels");
    if (sample_rate <= 0.0) throw std::invalid_argument("sample_rate must be > 0");
    for (const auto& ch : channels)
      if (static_cast<long>(ch.size()) != num_samples())
        throw std::invalid_argument("waveform channels differ in length");
  }
};

// Complex time-frequency tensor, frames x bins x channels, channel axis last.
struct ComplexSpectrogram {
  int frames = 0;
  int bins = 0;
  int channels = 0;
  std::vector<Complex> data;
  int hop = 0;                  // analysis hop, for frame-rate bookkeeping
  double sample_rate = 0.0;

  ComplexSpectrogram() = default;
  ComplexSpectrogram(int t, int f, int c)
      : frames(t), bins(f), channels(c),
        data(static_cast<size_t>(t) * f * c, Complex(0.0, 0.0)) {}

  Complex& at(int t, int f, int c) {
    return data[(static_cast<size_t>(t) * bins + f) * channels + c];
  }
  const Complex& at(int t, int f, int c) const {
    return data[(static_cast<size_t>(t) * bins + f) * channels + c];
  }
  double frame_rate() const {
    return (hop > 0 && sample_rate > 0) ? sample_rate / hop : 0.0;
  }
  bool same_shape(const ComplexSpectrogram& o) const {
    return frames == o.frames && bins == o.bins && channels == o.channels;
  }
};

// Real-valued time-frequency mask in [0, 1], frames x bins.
struct TFMask {
  int frames = 0;
  int bins = 0;
  std::vector<double> values;

  TFMask() = default;
  TFMask(int t, int f) : frames(t), bins(f), values(static_cast<size_t>(t) * f, 0.0) {}

  double& at(int t, int f) { return values[static_cast<size_t>(t) * bins + f]; }
  double at(int t, int f) const { return values[static_cast<size_t>(t) * bins + f]; }
};

}  // namespace sepkit

#endif

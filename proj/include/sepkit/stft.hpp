#ifndef SEPKIT_STFT_HPP
#define SEPKIT_STFT_HPP

#include <functional>
#include <vector>

#include "sepkit/types.hpp"

namespace sepkit {

enum class WindowKind { hann, sqrt_hann, rectangular };

struct StftConfig {
  int n_fft = 512;        // power of two
  int hop = 128;
  int win_length = 512;   // <= n_fft, window zero-padded symmetrically
  WindowKind window = WindowKind::hann;
  bool center_pad = true;

  void validate() const;
};

// Analysis window of win_length samples, centered inside an n_fft frame.
std::vector<double> make_window(WindowKind kind, int win_length, int n_fft);

long stft_frame_count(long num_samples, const StftConfig& cfg);

// Per-channel transform; channel axis last. Real-input symmetry: n_fft/2+1 bins.
ComplexSpectrogram stft(const Waveform& wave, const StftConfig& cfg);

// Squared-window overlap-add synthesis, normalizer floored at 1e-8.
// Output cropped or zero-padded to out_length samples.
Waveform istft(const ComplexSpectrogram& spec, const StftConfig& cfg,
               long out_length, double sample_rate = 16000.0);

// Mapping from one spectrogram to num_sources feature tensors of equal shape.
struct Separator {
  int num_sources = 1;
  std::function<std::vector<ComplexSpectrogram>(const ComplexSpectrogram&)> apply;
};

// encoder(stft) -> separator -> decoder(istft); S waveforms, each the
// mixture's length.
std::vector<Waveform> run_pipeline(const Waveform& mixture, const StftConfig& cfg,
                                   const Separator& separator);

}  // namespace sepkit

#endif

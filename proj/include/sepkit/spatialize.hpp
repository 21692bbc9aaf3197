#ifndef SEPKIT_SPATIALIZE_HPP
#define SEPKIT_SPATIALIZE_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "sepkit/room.hpp"
#include "sepkit/types.hpp"

namespace sepkit {

// One spatialized utterance: the multichannel mixture and its components.
// mixture = target_reverberant + noise_sum holds elementwise by
// construction, and noise_sum = noise_points + noise_diffuse.
struct MixtureRecord {
  Waveform mixture;             // array channels
  Waveform target_reverberant;  // array channels
  Waveform target_anechoic;     // 1 ch: direct path at the reference mic
  Waveform noise_sum;           // point noises plus diffuse
  Waveform noise_points;        // scaled point noises only
  Waveform noise_diffuse;       // scaled diffuse noise only
  SceneSpec scene;
  std::string utterance_id;
};

// Spherically isotropic noise at the array: mutually decorrelated cuts of
// the source noise, mixed per STFT bin by C(f) with C(f)^H C(f) = Gamma(f),
// Gamma_ij(f) = sinc(2 pi f d_ij / c), C from the eigendecomposition of
// Gamma. out_samples = 0 takes 1/mic_count of the source length.
Waveform gen_diffuse(const Waveform& noise, const ArrayGeometry& array,
                     double sample_rate, long out_samples = 0);

// Gain for `noise` that lands signal/noise on target_snr_db, powers
// measured on channel 0 of each.
double snr_gain(const Waveform& signal_ref, const Waveform& noise,
                double target_snr_db);

// Convolves the utterance into the scene, draws point-noise clips from the
// bank without replacement (looped with a 50 ms crossfade or randomly
// cropped to length), adds sinc-coherent diffuse noise, and scales every
// noise to its sampled SNR against the reverberant target at mic 0. Clip
// and crop draws come from a substream of scene.rng_seed; the diffuse
// draws use a separate substream, so swapping the diffuse source never
// moves the point-noise signals.
MixtureRecord build_mixture(const Waveform& utterance, const SceneSpec& scene,
                            const std::vector<Signal>& noise_bank,
                            const Signal& diffuse_source,
                            const std::string& utterance_id = "");

struct SpatializeJob {
  std::string manifest_in;      // lines of "utterance_id<TAB>wav_path"
  std::string point_noise_dir;  // directory of mono WAV clips (or one file)
  std::string diffuse_bank;     // mono WAV file or directory of them
  std::string out_dir;
  uint64_t seed = 0;
  long count = 0;               // 0 = all manifest entries
  int jobs = 1;
};

// One MixtureRecord per manifest entry, written as float32 WAVs under
// out_dir/<utterance_id>/ plus a scene.meta sidecar with the full scene.
// Per-utterance RNG streams derive from (seed, line index), so parallel
// and serial runs are bit-exact. Returns the path of the written manifest
// (out_dir/manifest.tsv) whose columns point at the component files.
std::string spatialize_corpus(const SpatializeJob& job);

}  // namespace sepkit

#endif

#ifndef SEPKIT_WAV_HPP
#define SEPKIT_WAV_HPP

#include <string>

#include "sepkit/types.hpp"

namespace sepkit {

enum class WavFormat { pcm16, float32 };

// RIFF/WAVE reader. Accepts 16-bit PCM and 32-bit float, 1..8 channels.
Waveform read_wav(const std::string& path);

// Interleaves and writes; sample rate taken from the waveform.
void write_wav(const std::string& path, const Waveform& wave,
               WavFormat format = WavFormat::float32);

}  // namespace sepkit

#endif

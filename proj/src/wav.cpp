#include "sepkit/wav.hpp"

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <vector>

namespace sepkit {

namespace {

uint32_t read_u32(const uint8_t* p) {
  return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
         (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

uint16_t read_u16(const uint8_t* p) {
  return static_cast<uint16_t>(p[0] | (p[1] << 8));
}

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  out.push_back(v & 0xff);
  out.push_back((v >> 8) & 0xff);
  out.push_back((v >> 16) & 0xff);
  out.push_back((v >> 24) & 0xff);
}

void put_u16(std::vector<uint8_t>& out, uint16_t v) {
  out.push_back(v & 0xff);
  out.push_back((v >> 8) & 0xff);
}

constexpr uint16_t kFormatPcm = 1;
constexpr uint16_t kFormatFloat = 3;
constexpr uint16_t kFormatExtensible = 0xfffe;

}  // namespace

Waveform read_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open wav file: " + path);
  std::vector<uint8_t> raw((std::istreambuf_iterator<char>(in)),
                           std::istreambuf_iterator<char>());
  if (raw.size() < 44 || std::memcmp(raw.data(), "RIFF", 4) != 0 ||
      std::memcmp(raw.data() + 8, "WAVE", 4) != 0)
    throw std::runtime_error("not a RIFF/WAVE file: " + path);

  uint16_t format = 0, num_channels = 0, bits = 0;
  uint32_t sample_rate = 0;
  const uint8_t* data = nullptr;
  size_t data_size = 0;
  bool have_fmt = false;

  size_t pos = 12;
  while (pos + 8 <= raw.size()) {
    const uint8_t* chunk = raw.data() + pos;
    const uint32_t chunk_size = read_u32(chunk + 4);
    const size_t body = pos + 8;
    if (body + chunk_size > raw.size())
      throw std::runtime_error("truncated wav chunk in " + path);
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (chunk_size < 16) throw std::runtime_error("malformed fmt chunk in " + path);
      format = read_u16(raw.data() + body);
      num_channels = read_u16(raw.data() + body + 2);
      sample_rate = read_u32(raw.data() + body + 4);
      bits = read_u16(raw.data() + body + 14);
      if (format == kFormatExtensible && chunk_size >= 26)
        format = read_u16(raw.data() + body + 24);
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      data = raw.data() + body;
      data_size = chunk_size;
    }
    pos = body + chunk_size + (chunk_size & 1);
  }

  if (!have_fmt || data == nullptr)
    throw std::runtime_error("wav file missing fmt or data chunk: " + path);
  if (num_channels < 1 || num_channels > 8)
    throw std::runtime_error("unsupported channel count in " + path);
  const bool pcm16 = format == kFormatPcm && bits == 16;
  const bool f32 = format == kFormatFloat && bits == 32;
  if (!pcm16 && !f32)
    throw std::runtime_error("unsupported wav encoding in " + path +
                             " (need 16-bit PCM or 32-bit float)");

  const size_t bytes_per_sample = bits / 8;
  const size_t frame_bytes = bytes_per_sample * num_channels;
  const size_t frames = data_size / frame_bytes;

  Waveform wave(num_channels, static_cast<long>(frames),
                static_cast<double>(sample_rate));
  for (size_t n = 0; n < frames; ++n) {
    const uint8_t* p = data + n * frame_bytes;
    for (int c = 0; c < num_channels; ++c) {
      const uint8_t* s = p + c * bytes_per_sample;
      double v;
      if (pcm16) {
        int16_t q = static_cast<int16_t>(s[0] | (s[1] << 8));
        v = q / 32768.0;
      } else {
        uint32_t u = read_u32(s);
        float fv;
        std::memcpy(&fv, &u, 4);
        v = fv;
      }
      wave.channel(c)[n] = v;
    }
  }
  return wave;
}

void write_wav(const std::string& path, const Waveform& wave, WavFormat format) {
  wave.validate();
  const int channels = wave.num_channels();
  if (channels < 1 || channels > 8)
    throw std::runtime_error("unsupported channel count for wav output");
  const long frames = wave.num_samples();
  const uint16_t bits = format == WavFormat::pcm16 ? 16 : 32;
  const uint16_t tag = format == WavFormat::pcm16 ? kFormatPcm : kFormatFloat;
  const uint32_t byte_rate =
      static_cast<uint32_t>(wave.sample_rate) * channels * bits / 8;
  const uint16_t block_align = static_cast<uint16_t>(channels * bits / 8);
  const uint32_t data_size = static_cast<uint32_t>(frames) * block_align;

  std::vector<uint8_t> out;
  out.reserve(44 + data_size);
  out.insert(out.end(), {'R', 'I', 'F', 'F'});
  put_u32(out, 36 + data_size);
  out.insert(out.end(), {'W', 'A', 'V', 'E'});
  out.insert(out.end(), {'f', 'm', 't', ' '});
  put_u32(out, 16);
  put_u16(out, tag);
  put_u16(out, static_cast<uint16_t>(channels));
  put_u32(out, static_cast<uint32_t>(wave.sample_rate));
  put_u32(out, byte_rate);
  put_u16(out, block_align);
  put_u16(out, bits);
  out.insert(out.end(), {'d', 'a', 't', 'a'});
  put_u32(out, data_size);

  for (long n = 0; n < frames; ++n) {
    for (int c = 0; c < channels; ++c) {
      const double v = wave.channel(c)[n];
      if (format == WavFormat::pcm16) {
        long q32 = std::lrint(std::clamp(v, -1.0, 1.0) * 32768.0);
        int16_t q = static_cast<int16_t>(std::clamp(q32, -32768L, 32767L));
        out.push_back(q & 0xff);
        out.push_back((q >> 8) & 0xff);
      } else {
        float fv = static_cast<float>(v);
        uint32_t u;
        std::memcpy(&u, &fv, 4);
        put_u32(out, u);
      }
    }
  }

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write wav file: " + path);
  f.write(reinterpret_cast<const char*>(out.data()),
          static_cast<std::streamsize>(out.size()));
  if (!f) throw std::runtime_error("short write to " + path);
}

}  // namespace sepkit

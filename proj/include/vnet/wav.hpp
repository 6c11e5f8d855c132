#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>

#include "vnet/dsp.hpp"

namespace vnet {

namespace detail {

inline uint32_t rd_u32(const unsigned char* p) {
  return static_cast<uint32_t>(p[0]) | static_cast<uint32_t>(p[1]) << 8 |
         static_cast<uint32_t>(p[2]) << 16 | static_cast<uint32_t>(p[3]) << 24;
}
inline uint16_t rd_u16(const unsigned char* p) {
  return static_cast<uint16_t>(p[0] | p[1] << 8);
}
inline void wr_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}
inline void wr_u16(std::ostream& os, uint16_t v) {
  unsigned char b[2] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8)};
  os.write(reinterpret_cast<const char*>(b), 2);
}

}  // namespace detail

// PCM-16 RIFF reader. Stereo is averaged to mono; anything not at 24 kHz is
// resampled on the way in.
inline AudioClip read_wav(const std::string& path, int64_t target_rate = 24000) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw input_error("read_wav: cannot open " + path);
  std::vector<unsigned char> raw((std::istreambuf_iterator<char>(f)),
                                 std::istreambuf_iterator<char>());
  if (raw.size() < 12 || std::memcmp(raw.data(), "RIFF", 4) != 0 ||
      std::memcmp(raw.data() + 8, "WAVE", 4) != 0)
    throw input_error("read_wav: " + path + ": malformed RIFF/WAVE header");

  size_t pos = 12;
  bool have_fmt = false;
  uint16_t channels = 0, bits = 0, audio_format = 0;
  uint32_t sr = 0;
  const unsigned char* data_ptr = nullptr;
  uint32_t data_len = 0;
  bool have_data = false;
  while (pos + 8 <= raw.size()) {
    char id[5] = {0};
    std::memcpy(id, raw.data() + pos, 4);
    const uint32_t len = detail::rd_u32(raw.data() + pos + 4);
    if (pos + 8 + len > raw.size())
      throw input_error("read_wav: " + path + ": chunk '" + id + "' overruns the file");
    const unsigned char* body = raw.data() + pos + 8;
    if (std::memcmp(id, "fmt ", 4) == 0) {
      if (len < 16) throw input_error("read_wav: " + path + ": chunk 'fmt ' too short");
      audio_format = detail::rd_u16(body);
      channels = detail::rd_u16(body + 2);
      sr = detail::rd_u32(body + 4);
      bits = detail::rd_u16(body + 14);
      have_fmt = true;
    } else if (std::memcmp(id, "data", 4) == 0) {
      data_ptr = body;
      data_len = len;
      have_data = true;
    }
    pos += 8 + len + (len & 1);  // chunks are word-aligned
  }
  if (!have_fmt) throw input_error("read_wav: " + path + ": missing 'fmt ' chunk");
  if (!have_data) throw input_error("read_wav: " + path + ": missing 'data' chunk");
  if (audio_format != 1)
    throw input_error("read_wav: " + path + ": chunk 'fmt ': audio format " +
                      std::to_string(audio_format) + " is not PCM");
  if (bits != 16)
    throw input_error("read_wav: " + path + ": chunk 'fmt ': " + std::to_string(bits) +
                      "-bit samples unsupported (need 16)");
  if (channels < 1 || channels > 2)
    throw input_error("read_wav: " + path + ": chunk 'fmt ': " + std::to_string(channels) +
                      " channels unsupported");

  const size_t n_frames = data_len / (2 * channels);
  AudioClip clip;
  clip.sample_rate = sr;
  clip.samples.resize(n_frames);
  for (size_t i = 0; i < n_frames; ++i) {
    double acc = 0;
    for (uint16_t c = 0; c < channels; ++c) {
      const int16_t v = static_cast<int16_t>(detail::rd_u16(data_ptr + (i * channels + c) * 2));
      acc += static_cast<double>(v) / 32768.0;
    }
    clip.samples[i] = acc / channels;
  }
  if (clip.sample_rate != target_rate) {
    clip.samples = resample(clip.samples, clip.sample_rate, target_rate);
    clip.sample_rate = target_rate;
  }
  return clip;
}

inline void write_wav(const std::string& path, const AudioClip& clip) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw input_error("write_wav: cannot open " + path);
  const uint32_t n = static_cast<uint32_t>(clip.samples.size());
  const uint32_t data_len = n * 2;
  f.write("RIFF", 4);
  detail::wr_u32(f, 36 + data_len);
  f.write("WAVE", 4);
  f.write("fmt ", 4);
  detail::wr_u32(f, 16);
  detail::wr_u16(f, 1);   // PCM
  detail::wr_u16(f, 1);   // mono
  detail::wr_u32(f, static_cast<uint32_t>(clip.sample_rate));
  detail::wr_u32(f, static_cast<uint32_t>(clip.sample_rate * 2));
  detail::wr_u16(f, 2);   // block align
  detail::wr_u16(f, 16);  // bits
  f.write("data", 4);
  detail::wr_u32(f, data_len);
  for (uint32_t i = 0; i < n; ++i) {
    double v = std::lround(clip.samples[i] * 32768.0);
    v = std::min(32767.0, std::max(-32768.0, v));
    detail::wr_u16(f, static_cast<uint16_t>(static_cast<int16_t>(v)));
  }
  if (!f) throw fault_error("write_wav: short write to " + path);
}

}  // namespace vnet

#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace sonomap {

/// Decoded audio: samples per channel in [-1, 1].
struct AudioClip {
  int sample_rate = 0;
  std::vector<std::vector<double>> channels;  // 1 (mono) or 2 (stereo)

  int n_channels() const { return static_cast<int>(channels.size()); }
  std::size_t samples_per_channel() const { return channels.empty() ? 0 : channels[0].size(); }
  double duration_seconds() const {
    return sample_rate > 0 ? static_cast<double>(samples_per_channel()) / sample_rate : 0.0;
  }
};

namespace detail {
inline std::uint32_t read_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}
inline std::uint16_t read_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}
}  // namespace detail

/// Reads a PCM 16-bit little-endian WAV file. Any other encoding is rejected.
inline AudioClip read_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open WAV file: " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  if (bytes.size() < 44 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
    throw std::runtime_error("not a RIFF/WAVE file: " + path);

  int channels = 0, sample_rate = 0, bits = 0, format = 0;
  std::size_t data_off = 0, data_len = 0;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const std::string id(reinterpret_cast<const char*>(bytes.data() + pos), 4);
    const std::uint32_t len = detail::read_u32(bytes.data() + pos + 4);
    const std::size_t body = pos + 8;
    if (id == "fmt " && body + 16 <= bytes.size()) {
      format = detail::read_u16(bytes.data() + body);
      channels = detail::read_u16(bytes.data() + body + 2);
      sample_rate = static_cast<int>(detail::read_u32(bytes.data() + body + 4));
      bits = detail::read_u16(bytes.data() + body + 14);
    } else if (id == "data") {
      data_off = body;
      data_len = std::min<std::size_t>(len, bytes.size() - body);
    }
    pos = body + len + (len & 1);  // chunks are word aligned
  }
  if (format != 1 || bits != 16)
    throw std::runtime_error("unsupported WAV format (require 16-bit PCM): " + path);
  if (channels < 1 || channels > 2)
    throw std::runtime_error("unsupported channel count in " + path);
  if (sample_rate <= 0) throw std::runtime_error("invalid sample rate in " + path);
  if (data_off == 0) throw std::runtime_error("missing data chunk in " + path);

  const std::size_t n_frames = data_len / (2 * static_cast<std::size_t>(channels));
  AudioClip clip;
  clip.sample_rate = sample_rate;
  clip.channels.assign(static_cast<std::size_t>(channels), std::vector<double>(n_frames));
  const unsigned char* d = bytes.data() + data_off;
  for (std::size_t f = 0; f < n_frames; ++f)
    for (int c = 0; c < channels; ++c) {
      const std::size_t o = (f * channels + c) * 2;
      const auto raw = static_cast<std::int16_t>(d[o] | (d[o + 1] << 8));
      clip.channels[static_cast<std::size_t>(c)][f] = raw / 32768.0;
    }
  return clip;
}

/// Writes PCM 16-bit little-endian WAV.
inline void write_wav(const std::string& path, const AudioClip& clip) {
  const int channels = clip.n_channels();
  if (channels < 1) throw std::invalid_argument("clip has no channels");
  const std::size_t n_frames = clip.samples_per_channel();
  for (const auto& ch : clip.channels)
    if (ch.size() != n_frames) throw std::invalid_argument("channel length mismatch");

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write WAV file: " + path);
  const std::uint32_t data_len = static_cast<std::uint32_t>(n_frames * channels * 2);
  auto put_u32 = [&](std::uint32_t v) {
    const char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                       static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
    out.write(b, 4);
  };
  auto put_u16 = [&](std::uint16_t v) {
    const char b[2] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff)};
    out.write(b, 2);
  };
  out.write("RIFF", 4);
  put_u32(36 + data_len);
  out.write("WAVE", 4);
  out.write("fmt ", 4);
  put_u32(16);
  put_u16(1);  // PCM
  put_u16(static_cast<std::uint16_t>(channels));
  put_u32(static_cast<std::uint32_t>(clip.sample_rate));
  put_u32(static_cast<std::uint32_t>(clip.sample_rate * channels * 2));
  put_u16(static_cast<std::uint16_t>(channels * 2));
  put_u16(16);
  out.write("data", 4);
  put_u32(data_len);
  std::vector<char> buf(n_frames * static_cast<std::size_t>(channels) * 2);
  std::size_t o = 0;
  for (std::size_t f = 0; f < n_frames; ++f)
    for (int c = 0; c < channels; ++c) {
      double v = clip.channels[static_cast<std::size_t>(c)][f];
      v = std::max(-1.0, std::min(1.0, v));
      const auto q = static_cast<std::int16_t>(std::lrint(v * 32767.0));
      buf[o++] = static_cast<char>(q & 0xff);
      buf[o++] = static_cast<char>((q >> 8) & 0xff);
    }
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

}  // namespace sonomap

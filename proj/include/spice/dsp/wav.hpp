#pragma once

// 16-bit PCM RIFF/WAVE reading and writing.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "spice/dsp/audio.hpp"

namespace spice {

enum class Channel { kMix, kLeft, kRight };

inline Channel parse_channel(const std::string& s) {
  if (s == "mix") return Channel::kMix;
  if (s == "left") return Channel::kLeft;
  if (s == "right") return Channel::kRight;
  throw AudioError("unknown channel '" + s + "' (expected mix, left or right)");
}

namespace detail {

inline std::uint32_t read_u32(const unsigned char* p) {
  return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 |
         std::uint32_t(p[2]) << 16 | std::uint32_t(p[3]) << 24;
}
inline std::uint16_t read_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | p[1] << 8);
}
inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>(v >> 8));
}

}  // namespace detail

// Decodes a WAV file held in memory. Stereo files are reduced to one
// channel: the average for kMix, otherwise the selected side.
inline AudioBuffer decode_wav(const std::vector<unsigned char>& bytes,
                              Channel channel = Channel::kMix) {
  using detail::read_u16;
  using detail::read_u32;
  if (bytes.size() < 12 || std::string(bytes.begin(), bytes.begin() + 4) != "RIFF" ||
      std::string(bytes.begin() + 8, bytes.begin() + 12) != "WAVE") {
    throw AudioError("not a RIFF/WAVE file");
  }
  bool have_fmt = false;
  int channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const unsigned char* data = nullptr;
  std::size_t data_len = 0;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const std::string id(bytes.begin() + pos, bytes.begin() + pos + 4);
    const std::size_t len = read_u32(&bytes[pos + 4]);
    const std::size_t body = pos + 8;
    if (id == "fmt ") {
      if (len < 16 || body + len > bytes.size()) throw AudioError("truncated fmt chunk");
      std::uint16_t format = read_u16(&bytes[body]);
      channels = read_u16(&bytes[body + 2]);
      rate = read_u32(&bytes[body + 4]);
      bits = read_u16(&bytes[body + 14]);
      if (format == 0xFFFE && len >= 26) format = read_u16(&bytes[body + 24]);
      if (format != 1) {
        throw AudioError("unsupported WAV encoding (format tag " +
                         std::to_string(format) + ", need PCM)");
      }
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) throw AudioError("data chunk before fmt chunk");
      data = &bytes[body];
      data_len = std::min(len, bytes.size() - body);
      if (data_len < len) throw AudioError("truncated data chunk");
      break;
    }
    pos = body + len + (len & 1);
  }
  if (!have_fmt) throw AudioError("missing fmt chunk");
  if (data == nullptr) throw AudioError("missing data chunk");
  if (bits != 16) {
    throw AudioError("unsupported bit depth " + std::to_string(bits) + " (need 16)");
  }
  if (channels != 1 && channels != 2) {
    throw AudioError("unsupported channel count " + std::to_string(channels));
  }
  if (rate == 0) throw AudioError("zero sample rate");
  const std::size_t frame_bytes = 2 * static_cast<std::size_t>(channels);
  const std::size_t frames = data_len / frame_bytes;
  if (frames == 0) throw AudioError("zero-length audio");

  auto sample = [&](std::size_t i, int c) {
    const auto v = static_cast<std::int16_t>(read_u16(data + i * frame_bytes + 2 * c));
    return static_cast<double>(v) / 32768.0;
  };
  std::vector<double> out(frames);
  for (std::size_t i = 0; i < frames; ++i) {
    if (channels == 1) {
      out[i] = sample(i, 0);
    } else if (channel == Channel::kLeft) {
      out[i] = sample(i, 0);
    } else if (channel == Channel::kRight) {
      out[i] = sample(i, 1);
    } else {
      out[i] = 0.5 * (sample(i, 0) + sample(i, 1));
    }
  }
  return AudioBuffer(std::move(out), static_cast<int>(rate));
}

inline AudioBuffer load_wav(const std::string& path, Channel channel = Channel::kMix) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw AudioError("cannot open " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  try {
    return decode_wav(bytes, channel);
  } catch (const AudioError& e) {
    throw AudioError(path + ": " + e.what());
  }
}

// Mono 16-bit PCM. Samples are clipped to [-1, 1] before quantization.
inline std::string encode_wav(const AudioBuffer& audio) {
  audio.validate();
  const auto n = static_cast<std::uint32_t>(audio.size());
  std::string out;
  out.reserve(44 + 2 * n);
  out += "RIFF";
  detail::put_u32(out, 36 + 2 * n);
  out += "WAVEfmt ";
  detail::put_u32(out, 16);
  detail::put_u16(out, 1);
  detail::put_u16(out, 1);
  detail::put_u32(out, static_cast<std::uint32_t>(audio.sample_rate));
  detail::put_u32(out, static_cast<std::uint32_t>(audio.sample_rate) * 2);
  detail::put_u16(out, 2);
  detail::put_u16(out, 16);
  out += "data";
  detail::put_u32(out, 2 * n);
  for (double s : audio.samples) {
    const double q = std::round(std::clamp(s, -1.0, 1.0) * 32767.0);
    detail::put_u16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(q)));
  }
  return out;
}

inline void write_wav(const std::string& path, const AudioBuffer& audio) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw AudioError("cannot write " + path);
  const std::string bytes = encode_wav(audio);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw AudioError("short write to " + path);
}

}  // namespace spice

#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <mutex>
#include <span>
#include <string>
#include <vector>

#include "s2t/error.hpp"

namespace s2t {

inline constexpr std::size_t kClipSamples = 16000;
inline constexpr int kSampleRateHz = 16000;

/// One second of mono 16 kHz signed 16-bit PCM.
struct AudioClip {
  std::vector<std::int16_t> samples = std::vector<std::int16_t>(kClipSamples, 0);
  int sample_rate_hz = kSampleRateHz;
  std::string source_id;

  /// Copies up to 16000 samples and zero-pads the tail.
  static AudioClip from_samples(std::span<const std::int16_t> pcm, std::string source = {}) {
    AudioClip clip;
    const auto n = std::min(pcm.size(), kClipSamples);
    std::copy_n(pcm.begin(), n, clip.samples.begin());
    clip.source_id = std::move(source);
    return clip;
  }
};

namespace detail {

inline std::uint32_t read_u32le(const std::uint8_t* p) {
  return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) |
         (std::uint32_t(p[3]) << 24);
}

inline std::uint16_t read_u16le(const std::uint8_t* p) {
  return std::uint16_t(p[0] | (p[1] << 8));
}

inline void put_u32le(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(std::uint8_t(v >> (8 * i)));
}

inline void put_u16le(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(std::uint8_t(v));
  out.push_back(std::uint8_t(v >> 8));
}

}  // namespace detail

/// Decodes a RIFF/WAVE PCM container holding 16-bit mono 16 kHz audio.
/// Short clips are zero-padded at the end, long ones truncated to 16000 samples.
/// Chunks other than 'fmt ' and 'data' are skipped.
inline AudioClip decode_wav(std::span<const std::uint8_t> bytes, std::string source_id = {}) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw Error(Errc::malformed_container, "missing RIFF/WAVE header" +
                                               (source_id.empty() ? "" : " in " + source_id));
  }

  bool have_fmt = false;
  std::span<const std::uint8_t> payload;
  bool have_data = false;

  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const std::uint8_t* hdr = bytes.data() + pos;
    const std::uint32_t size = detail::read_u32le(hdr + 4);
    const std::size_t body = pos + 8;
    const std::size_t avail = bytes.size() - body;

    if (std::memcmp(hdr, "fmt ", 4) == 0) {
      if (size < 16 || avail < 16) throw Error(Errc::malformed_container, "truncated fmt chunk");
      const std::uint8_t* f = bytes.data() + body;
      const auto format = detail::read_u16le(f);
      const auto channels = detail::read_u16le(f + 2);
      const auto rate = detail::read_u32le(f + 4);
      const auto bits = detail::read_u16le(f + 14);
      if (format != 1 || channels != 1 || rate != std::uint32_t(kSampleRateHz) || bits != 16) {
        throw Error(Errc::unsupported_format,
                    "expected PCM(1)/1ch/16000Hz/16bit, found format=" + std::to_string(format) +
                        " channels=" + std::to_string(channels) + " rate=" + std::to_string(rate) +
                        " bits=" + std::to_string(bits));
      }
      have_fmt = true;
    } else if (std::memcmp(hdr, "data", 4) == 0) {
      // Some writers leave a streaming placeholder size; clamp to what is present.
      payload = bytes.subspan(body, std::min<std::size_t>(size, avail));
      have_data = true;
      if (have_fmt) break;
    }
    pos = body + std::size_t(size) + (size & 1u);
  }

  if (!have_fmt) throw Error(Errc::malformed_container, "no fmt chunk");
  if (!have_data) throw Error(Errc::malformed_container, "no data chunk");

  AudioClip clip;
  clip.source_id = std::move(source_id);
  const std::size_t n = std::min(payload.size() / 2, kClipSamples);
  for (std::size_t i = 0; i < n; ++i) {
    clip.samples[i] = std::int16_t(detail::read_u16le(payload.data() + 2 * i));
  }
  return clip;
}

inline std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io_failure, "cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline AudioClip read_wav_file(const std::string& path) {
  const auto bytes = read_file_bytes(path);
  return decode_wav(bytes, path);
}

/// Reads every sample of a 16-bit mono 16 kHz WAV without length normalization
/// (background-noise recordings run for minutes).
inline std::vector<std::int16_t> read_wav_samples_unbounded(const std::string& path) {
  const auto bytes = read_file_bytes(path);
  // Validate the header by decoding, then re-walk to the data chunk.
  (void)decode_wav(bytes, path);
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const std::uint32_t size = detail::read_u32le(bytes.data() + pos + 4);
    if (std::memcmp(bytes.data() + pos, "data", 4) == 0) {
      const std::size_t n = std::min<std::size_t>(size, bytes.size() - pos - 8) / 2;
      std::vector<std::int16_t> out(n);
      for (std::size_t i = 0; i < n; ++i) {
        out[i] = std::int16_t(detail::read_u16le(bytes.data() + pos + 8 + 2 * i));
      }
      return out;
    }
    pos += 8 + std::size_t(size) + (size & 1u);
  }
  return {};
}

inline std::vector<std::uint8_t> encode_wav(std::span<const std::int16_t> samples) {
  std::vector<std::uint8_t> out;
  out.reserve(44 + samples.size() * 2);
  const auto data_bytes = std::uint32_t(samples.size() * 2);
  out.insert(out.end(), {'R', 'I', 'F', 'F'});
  detail::put_u32le(out, 36 + data_bytes);
  out.insert(out.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  detail::put_u32le(out, 16);
  detail::put_u16le(out, 1);
  detail::put_u16le(out, 1);
  detail::put_u32le(out, kSampleRateHz);
  detail::put_u32le(out, kSampleRateHz * 2);
  detail::put_u16le(out, 2);
  detail::put_u16le(out, 16);
  out.insert(out.end(), {'d', 'a', 't', 'a'});
  detail::put_u32le(out, data_bytes);
  for (auto s : samples) detail::put_u16le(out, std::uint16_t(s));
  return out;
}

inline void write_wav_file(const std::string& path, std::span<const std::int16_t> samples) {
  const auto bytes = encode_wav(samples);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::io_failure, "cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
}

/// Sliding one-second window over a PCM stream. Single writer; readers copy
/// through snapshot(), which takes the lock.
class RingBuffer {
 public:
  RingBuffer() : data_(kClipSamples, 0) {}

  void push(std::span<const std::int16_t> chunk) {
    std::lock_guard lock(mutex_);
    written_ += chunk.size();
    if (chunk.size() >= kClipSamples) {
      chunk = chunk.last(kClipSamples);
    }
    for (auto s : chunk) {
      data_[cursor_] = s;
      cursor_ = (cursor_ + 1) % kClipSamples;
    }
  }

  /// The last 16000 samples seen, oldest first.
  std::vector<std::int16_t> snapshot() const {
    std::lock_guard lock(mutex_);
    std::vector<std::int16_t> out(kClipSamples);
    std::copy(data_.begin() + std::ptrdiff_t(cursor_), data_.end(), out.begin());
    std::copy(data_.begin(), data_.begin() + std::ptrdiff_t(cursor_),
              out.begin() + std::ptrdiff_t(kClipSamples - cursor_));
    return out;
  }

  void reset() {
    std::lock_guard lock(mutex_);
    std::fill(data_.begin(), data_.end(), std::int16_t{0});
    cursor_ = 0;
    written_ = 0;
  }

  std::size_t samples_written() const {
    std::lock_guard lock(mutex_);
    return written_;
  }

 private:
  mutable std::mutex mutex_;
  std::vector<std::int16_t> data_;
  std::size_t cursor_ = 0;
  std::size_t written_ = 0;
};

}  // namespace s2t

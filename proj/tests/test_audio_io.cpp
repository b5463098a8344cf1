#include <gtest/gtest.h>

#include <numeric>

#include "s2t/audio_io.hpp"
#include "support/test_util.hpp"

using namespace s2t;

namespace {

// Independent WAV writer: different code path from encode_wav, optional extra
// chunk in front of 'data' and configurable format fields.
struct WavSpec {
  std::uint16_t format = 1, channels = 1, bits = 16;
  std::uint32_t rate = 16000;
  bool list_chunk = false;
};

std::vector<std::uint8_t> hand_wav(const std::vector<std::int16_t>& pcm, WavSpec s = {}) {
  std::vector<std::uint8_t> b;
  auto tag = [&](const char* t) { b.insert(b.end(), t, t + 4); };
  auto u32 = [&](std::uint32_t v) {
    for (int i = 0; i < 4; ++i) b.push_back(std::uint8_t(v >> (8 * i)));
  };
  auto u16 = [&](std::uint16_t v) {
    b.push_back(std::uint8_t(v));
    b.push_back(std::uint8_t(v >> 8));
  };
  tag("RIFF");
  u32(0);  // patched below
  tag("WAVE");
  tag("fmt ");
  u32(16);
  u16(s.format);
  u16(s.channels);
  u32(s.rate);
  u32(s.rate * s.channels * s.bits / 8);
  u16(std::uint16_t(s.channels * s.bits / 8));
  u16(s.bits);
  if (s.list_chunk) {
    tag("LIST");
    u32(5);
    b.insert(b.end(), {'I', 'N', 'F', 'O', '!', 0});  // odd size + pad byte
  }
  tag("data");
  u32(std::uint32_t(pcm.size() * 2));
  for (auto v : pcm) u16(std::uint16_t(v));
  const auto riff = std::uint32_t(b.size() - 8);
  for (int i = 0; i < 4; ++i) b[4 + i] = std::uint8_t(riff >> (8 * i));
  return b;
}

std::vector<std::int16_t> ramp(std::size_t n, int start = -3000) {
  std::vector<std::int16_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = std::int16_t(start + int(i % 7000));
  return v;
}

}  // namespace

TEST(DecodeWav, FullSecondIsUnchanged) {
  const auto pcm = ramp(16000);
  const auto clip = decode_wav(hand_wav(pcm), "full");
  EXPECT_EQ(clip.samples, pcm);
  EXPECT_EQ(clip.sample_rate_hz, 16000);
  EXPECT_EQ(clip.source_id, "full");
}

TEST(DecodeWav, HalfSecondIsZeroPaddedAtTheEnd) {
  const auto pcm = ramp(8000, 1);
  const auto clip = decode_wav(hand_wav(pcm));
  ASSERT_EQ(clip.samples.size(), 16000u);
  EXPECT_TRUE(std::equal(pcm.begin(), pcm.end(), clip.samples.begin()));
  EXPECT_TRUE(std::all_of(clip.samples.begin() + 8000, clip.samples.end(), [](auto s) { return s == 0; }));
}

TEST(DecodeWav, LongClipIsTruncatedToFirstSecond) {
  const auto pcm = ramp(20000);
  const auto clip = decode_wav(hand_wav(pcm));
  EXPECT_TRUE(std::equal(clip.samples.begin(), clip.samples.end(), pcm.begin()));
}

TEST(DecodeWav, UnknownChunksAreSkipped) {
  const auto pcm = ramp(16000);
  EXPECT_EQ(decode_wav(hand_wav(pcm, {.list_chunk = true})).samples, pcm);
}

TEST(DecodeWav, EightBitIsUnsupportedAndReportsFoundValues) {
  try {
    decode_wav(hand_wav(ramp(100), {.bits = 8}));
    FAIL() << "expected UnsupportedFormat";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::unsupported_format);
    EXPECT_NE(std::string(e.what()).find("bits=8"), std::string::npos);
  }
}

TEST(DecodeWav, WrongRateChannelsOrCodecAreUnsupported) {
  for (WavSpec s : {WavSpec{.rate = 8000}, WavSpec{.channels = 2}, WavSpec{.format = 3}}) {
    try {
      decode_wav(hand_wav(ramp(100), s));
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), Errc::unsupported_format);
    }
  }
}

TEST(DecodeWav, BadHeaderIsMalformed) {
  auto bytes = hand_wav(ramp(10));
  bytes[0] = 'X';
  try {
    decode_wav(bytes);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::malformed_container);
  }
  const std::vector<std::uint8_t> tiny{'R', 'I', 'F'};
  EXPECT_THROW(decode_wav(tiny), Error);
}

TEST(DecodeWav, EncodeDecodeRoundTripViaFile) {
  support::TempDir dir;
  const auto pcm = ramp(12345);
  write_wav_file(dir.file("a.wav"), pcm);
  const auto clip = read_wav_file(dir.file("a.wav"));
  EXPECT_TRUE(std::equal(pcm.begin(), pcm.end(), clip.samples.begin()));
  EXPECT_EQ(read_wav_samples_unbounded(dir.file("a.wav")), pcm);
  EXPECT_EQ(encode_wav(pcm), hand_wav(pcm));
}

TEST(DecodeWav, MissingFileIsIoFailure) {
  try {
    read_wav_file("/nonexistent/nope.wav");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::io_failure);
  }
}

// Naive oracle: last 16000 of the zero-prefixed concatenation.
static std::vector<std::int16_t> ring_oracle(const std::vector<std::vector<std::int16_t>>& chunks) {
  std::vector<std::int16_t> all(16000, 0);
  for (const auto& c : chunks) all.insert(all.end(), c.begin(), c.end());
  return {all.end() - 16000, all.end()};
}

TEST(RingBuffer, StartsSilent) {
  RingBuffer r;
  const auto s = r.snapshot();
  ASSERT_EQ(s.size(), 16000u);
  EXPECT_TRUE(std::all_of(s.begin(), s.end(), [](auto v) { return v == 0; }));
}

TEST(RingBuffer, ExactWindowChunk) {
  RingBuffer r;
  const auto c = ramp(16000);
  r.push(c);
  EXPECT_EQ(r.snapshot(), c);
}

TEST(RingBuffer, OversizedChunkKeepsTail) {
  RingBuffer r;
  const auto c = ramp(20000);
  r.push(c);
  EXPECT_EQ(r.snapshot(), ring_oracle({c}));
  EXPECT_EQ(r.samples_written(), 20000u);
}

TEST(RingBuffer, ShortChunkIsPrecededBySilence) {
  RingBuffer r;
  const auto c = ramp(4000, 5);
  r.push(c);
  const auto s = r.snapshot();
  EXPECT_EQ(s, ring_oracle({c}));
  EXPECT_TRUE(std::all_of(s.begin(), s.begin() + 12000, [](auto v) { return v == 0; }));
}

TEST(RingBuffer, ResetClears) {
  RingBuffer r;
  r.push(ramp(5000, 100));
  r.reset();
  EXPECT_EQ(r.snapshot(), std::vector<std::int16_t>(16000, 0));
  EXPECT_EQ(r.samples_written(), 0u);
}

#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "oracles.hpp"
#include "ser/audio_io.hpp"
#include "ser/error.hpp"
#include "ser/rng.hpp"

using namespace ser;

TEST_SUITE("audio_io") {

TEST_CASE("one second of 48 kHz PCM16 decodes to 48000 samples") {
  std::vector<std::int16_t> pcm(48000, 1000);
  const auto clip = decode_wav(oracle::hand_wav(pcm, 48000));
  CHECK(clip.samples.size() == 48000);
  CHECK(clip.sample_rate == 48000);
  CHECK(clip.samples[17] == 1000.0 / 32768.0);
}

TEST_CASE("int16 extremes scale by 1/32768") {
  const auto clip = decode_wav(oracle::hand_wav({-32768, 32767, 0}, 8000));
  CHECK(clip.samples[0] == -1.0);
  CHECK(clip.samples[1] == 32767.0 / 32768.0);
  CHECK(clip.samples[2] == 0.0);
}

TEST_CASE("stereo downmix averages channels") {
  // L=+0.5, R=-0.5 interleaved
  std::vector<std::int16_t> pcm;
  for (int i = 0; i < 100; ++i) {
    pcm.push_back(16384);
    pcm.push_back(-16384);
  }
  const auto clip = decode_wav(oracle::hand_wav(pcm, 16000, 2));
  REQUIRE(clip.samples.size() == 100);
  for (double s : clip.samples) CHECK(s == 0.0);
}

TEST_CASE("downmix is linear in the channels") {
  Rng rng(5);
  std::vector<float> l(64), r(64), both, l_only, r_only;
  for (std::size_t i = 0; i < 64; ++i) {
    l[i] = static_cast<float>(rng.uniform(-1, 1));
    r[i] = static_cast<float>(rng.uniform(-1, 1));
    both.insert(both.end(), {l[i], r[i]});
    l_only.insert(l_only.end(), {l[i], 0.0f});
    r_only.insert(r_only.end(), {0.0f, r[i]});
  }
  const auto a = decode_wav(oracle::hand_wav_float(both, 16000, 2));
  const auto b = decode_wav(oracle::hand_wav_float(l_only, 16000, 2));
  const auto c = decode_wav(oracle::hand_wav_float(r_only, 16000, 2));
  for (std::size_t i = 0; i < 64; ++i) CHECK(std::abs(a.samples[i] - (b.samples[i] + c.samples[i])) < 1e-12);
}

TEST_CASE("float32 mono decodes exactly") {
  const auto clip = decode_wav(oracle::hand_wav_float({0.25f, -0.75f, 1.0f}, 22050, 1));
  CHECK(clip.samples == std::vector<double>{0.25, -0.75, 1.0});
  CHECK(clip.sample_rate == 22050);
}

TEST_CASE("encoder output matches the hand-built writer byte for byte") {
  AudioClip clip{{0.0, 0.5, -0.5}, 16000, ""};
  const auto enc = encode_wav(clip);
  CHECK(enc.bytes.size() == 44 + 6);
  CHECK(enc.bytes == oracle::hand_wav({0, 16384, -16384}, 16000));
  CHECK(enc.clipped == 0);
}

TEST_CASE("amplitudes beyond full scale are clipped and counted") {
  const auto enc = encode_wav(AudioClip{{1.5, -2.0, 0.1}, 8000, ""});
  CHECK(enc.clipped == 2);
  const auto back = decode_wav(enc.bytes);
  CHECK(back.samples[0] == 32767.0 / 32768.0);
  CHECK(back.samples[1] == -1.0);
}

TEST_CASE("round trip is exact on the 16-bit grid") {
  Rng rng(11);
  AudioClip clip{{}, 44100, ""};
  for (int i = 0; i < 5000; ++i) clip.samples.push_back((static_cast<double>(rng.uniform_index(65536)) - 32768.0) / 32768.0);
  const auto back = decode_wav(encode_wav(clip).bytes);
  CHECK(back.samples == clip.samples);
}

TEST_CASE("round trip error is bounded by one quantisation step") {
  Rng rng(12);
  AudioClip clip{{}, 8000, ""};
  for (int i = 0; i < 2000; ++i) clip.samples.push_back(rng.uniform(-0.99, 0.99));
  const auto back = decode_wav(encode_wav(clip).bytes);
  for (std::size_t i = 0; i < clip.samples.size(); ++i) CHECK(std::abs(back.samples[i] - clip.samples[i]) <= 0.5 / 32768.0 + 1e-15);
}

TEST_CASE("unsupported formats name the offending field") {
  auto bytes = oracle::hand_wav({0, 0}, 8000);
  bytes[34] = 24;  // bits_per_sample
  try {
    decode_wav(bytes);
    FAIL("expected UnsupportedFormatError");
  } catch (const UnsupportedFormatError& e) {
    CHECK(std::string(e.what()).find("bits_per_sample") != std::string::npos);
  }
  bytes = oracle::hand_wav({0, 0}, 8000);
  bytes[20] = 2;  // ADPCM
  CHECK_THROWS_AS(decode_wav(bytes), UnsupportedFormatError);
  bytes = oracle::hand_wav({0, 0, 0, 0, 0, 0}, 8000, 3);
  try {
    decode_wav(bytes);
    FAIL("expected UnsupportedFormatError");
  } catch (const UnsupportedFormatError& e) {
    CHECK(std::string(e.what()).find("num_channels") != std::string::npos);
  }
}

TEST_CASE("malformed containers are format errors") {
  auto bytes = oracle::hand_wav({1, 2, 3}, 8000);
  CHECK_THROWS_AS(decode_wav(std::span(bytes).first(10)), FormatError);
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(decode_wav(bad_magic), FormatError);
  auto short_fmt = bytes;
  short_fmt.resize(30);  // cut inside the fmt chunk
  CHECK_THROWS_AS(decode_wav(short_fmt), FormatError);
  auto no_data = bytes;
  no_data.resize(36);
  CHECK_THROWS_AS(decode_wav(no_data), FormatError);
}

TEST_CASE("a data chunk that overstates its size keeps the whole frames present") {
  auto bytes = oracle::hand_wav({1, 2, 3}, 8000);
  bytes.resize(bytes.size() - 3);
  const auto clip = decode_wav(bytes);
  CHECK(clip.samples.size() == 1);
}

TEST_CASE("unknown chunks are skipped") {
  auto bytes = oracle::hand_wav({100, -100}, 8000);
  std::vector<std::uint8_t> extra{'L', 'I', 'S', 'T', 3, 0, 0, 0, 'a', 'b', 'c', 0};
  bytes.insert(bytes.begin() + 12, extra.begin(), extra.end());
  const auto clip = decode_wav(bytes);
  CHECK(clip.samples.size() == 2);
}

TEST_CASE("decoded clips always satisfy the clip invariants") {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const auto n = 1 + rng.uniform_index(300);
    const auto ch = static_cast<std::uint16_t>(1 + rng.uniform_index(2));
    const auto sr = static_cast<std::uint32_t>(1000 + rng.uniform_index(96000));
    std::vector<std::int16_t> pcm(n * ch);
    for (auto& s : pcm) s = static_cast<std::int16_t>(static_cast<int>(rng.uniform_index(65536)) - 32768);
    const auto clip = decode_wav(oracle::hand_wav(pcm, sr, ch));
    CHECK_NOTHROW(validate_clip(clip));
    CHECK(clip.samples.size() == n);
    for (double s : clip.samples) CHECK((s >= -1.0 && s < 1.0));
  }
}

TEST_CASE("file round trip") {
  const auto path = std::filesystem::temp_directory_path() / "ser_audio_io_roundtrip.wav";
  const AudioClip clip{{0.0, 0.25, -0.25, 0.125}, 11025, ""};
  write_wav(path, clip);
  const auto back = read_wav(path);
  CHECK(back.samples == clip.samples);
  CHECK(back.sample_rate == 11025);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(read_wav(path), DataError);
}

TEST_CASE("synth_tone") {
  const auto a = synth_tone(440, 1.0, 16000, 1.0);
  CHECK(a.samples.size() == 16000);
  CHECK(a.samples[0] == 0.0);

  const auto b = synth_tone(4000, 1.0, 16000, 1.0);
  const double cycle[4] = {0, 1, 0, -1};
  for (std::size_t i = 0; i < 64; ++i) CHECK(std::abs(b.samples[i] - cycle[i % 4]) < 1e-12);

  const auto c = synth_tone(440, 2.0, 16000, 0.8);
  long double ss = 0;
  for (double s : c.samples) ss += static_cast<long double>(s) * s;
  CHECK(std::abs(std::sqrt(ss / c.samples.size()) - 0.8 / std::sqrt(2.0)) < 1e-3);

  CHECK_THROWS_AS(synth_tone(8000, 1.0, 16000, 1.0), DomainError);
  CHECK_THROWS_AS(synth_tone(0, 1.0, 16000, 1.0), DomainError);
  CHECK_THROWS_AS(synth_tone(100, 0.0, 16000, 1.0), DomainError);
}

TEST_CASE("validate_clip rejects bad clips") {
  CHECK_THROWS_AS(validate_clip(AudioClip{{}, 8000, ""}), DomainError);
  CHECK_THROWS_AS(validate_clip(AudioClip{{0.1}, 0, ""}), DomainError);
  CHECK_THROWS_AS(validate_clip(AudioClip{{NAN}, 8000, ""}), DomainError);
}

}

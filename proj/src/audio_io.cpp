#include "ser/audio_io.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "ser/binary_io.hpp"
#include "ser/error.hpp"

namespace ser {

namespace {

constexpr std::uint16_t kFormatPcm = 0x0001;
constexpr std::uint16_t kFormatFloat = 0x0003;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

struct FmtChunk {
  std::uint16_t format = 0;
  std::uint16_t channels = 0;
  std::uint32_t sample_rate = 0;
  std::uint16_t block_align = 0;
  std::uint16_t bits_per_sample = 0;
};

FmtChunk parse_fmt(ByteReader chunk) {
  if (chunk.remaining() < 16) throw FormatError("fmt chunk shorter than 16 bytes");
  FmtChunk fmt;
  fmt.format = chunk.u16();
  fmt.channels = chunk.u16();
  fmt.sample_rate = chunk.u32();
  chunk.u32();  // byte rate
  fmt.block_align = chunk.u16();
  fmt.bits_per_sample = chunk.u16();
  if (fmt.format == kFormatExtensible) {
    if (chunk.remaining() < 2 + 22) throw FormatError("extensible fmt chunk truncated");
    chunk.u16();  // cbSize
    chunk.u16();  // valid bits
    chunk.u32();  // channel mask
    // The sub-format GUID starts with the plain format tag.
    fmt.format = chunk.u16();
  }
  return fmt;
}

}  // namespace

void validate_clip(const AudioClip& clip) {
  if (clip.sample_rate <= 0) throw DomainError("sample_rate must be positive");
  if (clip.samples.empty()) throw DomainError("clip has no samples");
  for (double s : clip.samples) {
    if (!std::isfinite(s)) throw DomainError("clip contains a non-finite sample");
  }
}

AudioClip decode_wav(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  if (bytes.size() < 12) throw FormatError("file too short for a RIFF header");
  if (r.raw(4) != "RIFF") throw FormatError("missing RIFF magic");
  r.u32();  // riff size; trusted chunk-by-chunk instead
  if (r.raw(4) != "WAVE") throw FormatError("missing WAVE form type");

  FmtChunk fmt;
  bool have_fmt = false;
  std::span<const std::uint8_t> data;
  bool have_data = false;
  while (r.remaining() >= 8 && !have_data) {
    std::string id = r.raw(4);
    std::uint32_t size = r.u32();
    if (size > r.remaining()) {
      // Some writers leave a bogus size on the final data chunk.
      if (id != "data") throw FormatError("chunk '" + id + "' overruns file");
      size = static_cast<std::uint32_t>(r.remaining());
    }
    auto body = r.view(size);
    if (size % 2 == 1 && r.remaining() > 0) r.skip(1);
    if (id == "fmt ") {
      fmt = parse_fmt(ByteReader(body));
      have_fmt = true;
    } else if (id == "data") {
      data = body;
      have_data = true;
    }
  }
  if (!have_fmt) throw FormatError("missing fmt chunk");
  if (!have_data) throw FormatError("missing data chunk");

  if (fmt.format != kFormatPcm && fmt.format != kFormatFloat) {
    throw UnsupportedFormatError("unsupported audio_format: " + std::to_string(fmt.format));
  }
  if (fmt.format == kFormatPcm && fmt.bits_per_sample != 16) {
    throw UnsupportedFormatError("unsupported bits_per_sample for PCM: " +
                                 std::to_string(fmt.bits_per_sample));
  }
  if (fmt.format == kFormatFloat && fmt.bits_per_sample != 32) {
    throw UnsupportedFormatError("unsupported bits_per_sample for float: " +
                                 std::to_string(fmt.bits_per_sample));
  }
  if (fmt.channels != 1 && fmt.channels != 2) {
    throw UnsupportedFormatError("unsupported num_channels: " + std::to_string(fmt.channels));
  }
  if (fmt.sample_rate == 0) throw FormatError("sample_rate is zero");
  const std::size_t bytes_per_sample = fmt.bits_per_sample / 8;
  const std::size_t frame_bytes = bytes_per_sample * fmt.channels;
  if (fmt.block_align != frame_bytes) {
    throw FormatError("block_align " + std::to_string(fmt.block_align) + " does not match " +
                      std::to_string(frame_bytes));
  }

  const std::size_t frames = data.size() / frame_bytes;
  AudioClip clip;
  clip.sample_rate = static_cast<int>(fmt.sample_rate);
  clip.samples.resize(frames);
  ByteReader d(data);
  for (std::size_t i = 0; i < frames; ++i) {
    double acc = 0.0;
    for (int c = 0; c < fmt.channels; ++c) {
      double v;
      if (fmt.format == kFormatPcm) {
        v = d.i16() / 32768.0;
      } else {
        v = d.f32();
        if (!std::isfinite(v)) throw FormatError("non-finite float sample at frame " + std::to_string(i));
      }
      acc += v;
    }
    clip.samples[i] = fmt.channels == 2 ? acc * 0.5 : acc;
  }
  return clip;
}

AudioClip read_wav(const std::filesystem::path& path) {
  auto bytes = read_file_bytes(path);
  try {
    AudioClip clip = decode_wav(bytes);
    clip.source_id = path.filename().string();
    return clip;
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

EncodedWav encode_wav(const AudioClip& clip) {
  if (clip.sample_rate <= 0) throw DomainError("sample_rate must be positive");
  const auto data_bytes = static_cast<std::uint32_t>(clip.samples.size() * 2);
  ByteWriter w;
  w.raw("RIFF");
  w.u32(36 + data_bytes);
  w.raw("WAVE");
  w.raw("fmt ");
  w.u32(16);
  w.u16(kFormatPcm);
  w.u16(1);
  w.u32(static_cast<std::uint32_t>(clip.sample_rate));
  w.u32(static_cast<std::uint32_t>(clip.sample_rate) * 2);
  w.u16(2);
  w.u16(16);
  w.raw("data");
  w.u32(data_bytes);

  EncodedWav out;
  for (double s : clip.samples) {
    if (!(s >= -1.0 && s <= 1.0)) ++out.clipped;
    double scaled = std::round(s * 32768.0);
    if (std::isnan(scaled)) scaled = 0.0;
    scaled = std::clamp(scaled, -32768.0, 32767.0);
    w.i16(static_cast<std::int16_t>(scaled));
  }
  out.bytes = w.take();
  return out;
}

std::size_t write_wav(const std::filesystem::path& path, const AudioClip& clip) {
  auto enc = encode_wav(clip);
  write_file_bytes(path, enc.bytes);
  return enc.clipped;
}

AudioClip synth_tone(double freq, double duration, int sample_rate, double amplitude) {
  if (sample_rate <= 0) throw DomainError("sample_rate must be positive");
  if (!(freq > 0.0) || freq >= sample_rate / 2.0) {
    throw DomainError("tone frequency must lie in (0, Nyquist)");
  }
  if (!(duration > 0.0)) throw DomainError("duration must be positive");
  const auto n = static_cast<std::size_t>(std::llround(duration * sample_rate));
  AudioClip clip;
  clip.sample_rate = sample_rate;
  clip.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    clip.samples[i] =
        amplitude * std::sin(2.0 * std::numbers::pi * freq * static_cast<double>(i) / sample_rate);
  }
  return clip;
}

}  // namespace ser

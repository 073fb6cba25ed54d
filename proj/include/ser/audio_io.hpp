#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace ser {

/// Mono waveform. Amplitudes are nominally in [-1, 1].
struct AudioClip {
  std::vector<double> samples;
  int sample_rate = 0;
  std::string source_id;

  std::size_t size() const { return samples.size(); }
  double duration_seconds() const {
    return sample_rate > 0 ? static_cast<double>(samples.size()) / sample_rate : 0.0;
  }
};

/// Throws DomainError unless sample_rate > 0, samples non-empty and finite.
void validate_clip(const AudioClip& clip);

/// Decodes RIFF/WAVE, PCM16 or IEEE float32, 1 or 2 channels.
/// Stereo is downmixed by averaging; PCM16 is scaled by 1/32768.
AudioClip decode_wav(std::span<const std::uint8_t> bytes);
AudioClip read_wav(const std::filesystem::path& path);

struct EncodedWav {
  std::vector<std::uint8_t> bytes;
  /// Samples outside [-1, 1] that were clipped.
  std::size_t clipped = 0;
};

/// Encodes as 16-bit PCM mono with a canonical 44-byte header.
EncodedWav encode_wav(const AudioClip& clip);
std::size_t write_wav(const std::filesystem::path& path, const AudioClip& clip);

/// amplitude * sin(2*pi*freq*i/sample_rate) for round(duration*sample_rate) samples.
AudioClip synth_tone(double freq, double duration, int sample_rate, double amplitude);

}  // namespace ser

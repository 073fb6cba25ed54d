#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "ser/audio_io.hpp"
#include "ser/dataset.hpp"
#include "ser/features.hpp"
#include "ser/rng.hpp"

namespace ser {

/// Harmonic tone whose pitch, harmonic profile and tremolo rate depend on
/// the class, with small per-clip jitter and white noise. Used as a
/// class-separable stand-in corpus.
AudioClip synth_emotion_clip(EmotionLabel label, double seconds, int sample_rate, Rng& rng);

struct SyntheticCorpusOptions {
  std::size_t per_class = 8;  // at most 96
  double seconds = 1.0;
  double length_jitter = 0.1;  // fraction of seconds
  int sample_rate = 8000;
  std::uint64_t seed = 0;
};

/// Writes RAVDESS-style file names (03-01-EE-01-SS-RR-AA.wav) under dir and
/// returns the records, tagged as the synthetic corpus.
std::vector<SampleRecord> write_synthetic_corpus(const std::filesystem::path& dir,
                                                 const SyntheticCorpusOptions& options);

/// In-memory windows: per_class clips per class, extracted with cfg (whose
/// target_length must be set).
std::vector<LabeledWindow> synthetic_windows(std::size_t per_class, const PipelineConfig& cfg, double seconds,
                                             int sample_rate, std::uint64_t seed);

}  // namespace ser

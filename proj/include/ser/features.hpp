#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ser/audio_io.hpp"
#include "ser/dataset.hpp"
#include "ser/labels.hpp"

namespace ser {

/// Classifier input width: frames per feature window.
inline constexpr std::size_t kWindowFrames = 26;

/// n_mfcc x 26 MFCC matrix, row-major (coefficient-major).
struct FeatureWindow {
  std::size_t n_mfcc = 0;
  std::vector<double> values;
  bool standardized = false;

  std::size_t n_frames() const { return kWindowFrames; }
  double at(std::size_t coef, std::size_t frame) const { return values[coef * kWindowFrames + frame]; }
};

struct PipelineConfig {
  std::size_t n_mfcc = 13;
  std::size_t target_length = 0;  // samples; the training set's longest clip
  std::size_t frame_length = 2048;
  std::size_t n_mels = 26;
  double f_min = 0.0;
  double f_max = 0.0;  // 0 selects Nyquist
  bool augment_reverse = false;
  bool augment_invert = false;

  /// Throws ConfigError when the config cannot yield a 26-frame window.
  void validate() const;
  /// floor((target_length - frame_length) / 25).
  std::size_t hop_length() const;
  /// The filterbank is widened to at least n_mfcc bands.
  std::size_t effective_n_mels() const { return n_mels > n_mfcc ? n_mels : n_mfcc; }

  std::string to_json() const;
  static PipelineConfig from_json(const std::string& text);
};

/// Per-clip z-score; a constant clip maps to all zeros.
AudioClip normalize_loudness(const AudioClip& clip);

/// Zero-pads to target: ceil(pad/2) at the head, floor(pad/2) at the tail.
AudioClip pad_to_length(const AudioClip& clip, std::size_t target);

/// Keeps the centred `target` samples, dropping ceil(excess/2) from the head.
AudioClip truncate_to_length(const AudioClip& clip, std::size_t target);

/// pad_to_length or truncate_to_length, whichever applies.
AudioClip fit_to_length(const AudioClip& clip, std::size_t target);

AudioClip augment_reverse(const AudioClip& clip);
AudioClip augment_invert(const AudioClip& clip);

/// Z-scores all entries jointly (population std). Returns false, leaving the
/// data zeroed, for the degenerate constant case.
bool standardize_in_place(std::span<double> values);

/// Expects a normalized clip already padded to cfg.target_length.
FeatureWindow make_feature_window(const AudioClip& clip, const PipelineConfig& cfg);

/// normalize_loudness -> fit_to_length -> make_feature_window.
FeatureWindow extract_feature_window(const AudioClip& raw, const PipelineConfig& cfg);

/// Row-major: element (i, j) lands at i * 26 + j.
std::vector<double> flatten(const FeatureWindow& window);

struct LabeledWindow {
  std::string id;
  EmotionLabel label = EmotionLabel::neutral;
  FeatureWindow window;
};

struct AugmentationReport {
  std::size_t originals = 0;
  std::size_t reversed = 0;
  std::size_t inverted = 0;
  /// Inverted windows bit-identical to their source window. Polarity does not
  /// reach the MFCCs, so with invert enabled this equals `inverted`.
  std::size_t inverted_duplicates = 0;
};

struct ExtractedSet {
  std::vector<SampleRecord> records;  // originals followed by their augmentations
  std::vector<LabeledWindow> windows;  // parallel to records
  AugmentationReport report;
};

using ClipLoader = std::function<AudioClip(const SampleRecord&)>;

/// Longest clip over the records' non-augmented entries.
std::size_t max_clip_length(const std::vector<SampleRecord>& records, const ClipLoader& load);

/// Runs the pipeline on every record and appends "<id>#rev" / "<id>#inv"
/// augmentations inheriting label and split.
ExtractedSet extract_manifest(const std::vector<SampleRecord>& records, const ClipLoader& load,
                              const PipelineConfig& cfg);

/// Little-endian container: 16-byte header ("SERFEAT\0", u32 version,
/// u32 count), then per record: u32-prefixed id, u32 label, u32 n_mfcc,
/// u32 frames, n_mfcc*frames float32.
std::vector<std::uint8_t> encode_feature_cache(const std::vector<LabeledWindow>& windows);
std::vector<LabeledWindow> decode_feature_cache(std::span<const std::uint8_t> bytes);
void write_feature_cache(const std::filesystem::path& path, const std::vector<LabeledWindow>& windows);
std::vector<LabeledWindow> read_feature_cache(const std::filesystem::path& path);

}  // namespace ser

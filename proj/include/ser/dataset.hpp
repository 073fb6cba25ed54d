#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ser/labels.hpp"

namespace ser {

enum class Corpus { ravdess, tess, synthetic };

std::string_view corpus_name(Corpus c);
std::optional<Corpus> corpus_from_name(std::string_view s);

enum class Split { none, train, val, test };

std::string_view split_name(Split s);
std::optional<Split> split_from_name(std::string_view s);

struct SampleRecord {
  std::string id;
  std::filesystem::path path;
  EmotionLabel label = EmotionLabel::neutral;
  Corpus corpus = Corpus::ravdess;
  std::string actor;
  std::optional<std::string> augmented_from;
  Split split = Split::none;
};

/// "MM-VV-EE-II-SS-RR-AA.wav": modality 03 (audio-only), vocal channel 01
/// (speech), emotion 01..08, intensity 01..02, statement 01..02,
/// repetition 01..02, actor 01..24. Throws ParseError naming the field.
SampleRecord parse_ravdess_filename(std::string_view name);

/// "<OAF|YAF>_<word>_<emotion>.wav". "ps" (pleasant surprise) maps to
/// surprised and "fear" to fearful. TESS has no calm recordings.
SampleRecord parse_tess_filename(std::string_view name);

/// Recursively collects *.wav under root and parses each name. Files that do
/// not match the naming scheme are returned in `rejected`.
struct CorpusScan {
  std::vector<SampleRecord> records;
  std::vector<std::string> rejected;
};
CorpusScan scan_corpus(const std::filesystem::path& root, Corpus corpus);

struct ValidationReport {
  Corpus corpus = Corpus::ravdess;
  std::array<std::size_t, kNumEmotions> counts{};
  std::array<std::size_t, kNumEmotions> expected{};
  std::size_t total = 0;
  std::size_t expected_total = 0;
  bool pass = false;
  std::vector<std::string> problems;
  /// Set for TESS: "pleasant surprise" was folded into surprised.
  bool surprised_remapped = false;

  std::string to_text() const;
  /// class,count,expected,delta
  std::string to_csv() const;
};

/// Expected per-class counts of the full audio-only speech corpora.
std::array<std::size_t, kNumEmotions> expected_counts(Corpus corpus);

ValidationReport validate_manifest(const std::vector<SampleRecord>& records, Corpus corpus);

struct SplitRatios {
  double train = 0.6;
  double val = 0.2;
  double test = 0.2;
};

struct SplitOptions {
  SplitRatios ratios;
  std::uint64_t seed = 0;
  /// Cut whole actors instead of stratifying by label.
  bool actor_disjoint = false;
  std::size_t min_per_class = 5;
};

struct SplitAssignment {
  std::map<std::string, Split> by_id;
  std::uint64_t seed = 0;

  Split at(const std::string& id) const;
  std::array<std::size_t, 3> counts() const;  // train, val, test
};

/// Largest-remainder allocation of n items to (train, val, test); ties in the
/// fractional parts go to test first, then val, then train.
std::array<std::size_t, 3> proportional_cut(std::size_t n, const SplitRatios& ratios);

/// Per-class seeded shuffle of id-sorted records, then a proportional cut.
/// Augmented records are excluded from the draw and inherit their source's
/// split. Throws SplitError when a present class has fewer than
/// min_per_class originals or an augmented record's source is missing.
SplitAssignment stratified_split(const std::vector<SampleRecord>& records,
                                 const SplitOptions& options);

/// Copies assignment.by_id into each record's split field.
void apply_split(std::vector<SampleRecord>& records, const SplitAssignment& assignment);

/// id,path,corpus,label,actor,split,augmented_from
void write_manifest(const std::filesystem::path& path, const std::vector<SampleRecord>& records);
std::string manifest_to_csv(const std::vector<SampleRecord>& records);
std::vector<SampleRecord> read_manifest(const std::filesystem::path& path);

}  // namespace ser

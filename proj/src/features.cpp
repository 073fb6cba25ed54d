#include "ser/features.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "json.hpp"
#include "ser/binary_io.hpp"
#include "ser/dsp.hpp"
#include "ser/error.hpp"

namespace ser {

namespace {

constexpr std::string_view kCacheMagic{"SERFEAT\0", 8};
constexpr std::uint32_t kCacheVersion = 1;

}  // namespace

void PipelineConfig::validate() const {
  if (n_mfcc < 1) throw ConfigError("n_mfcc must be >= 1");
  if (frame_length < 2) throw ConfigError("frame_length must be >= 2");
  if (target_length < frame_length + (kWindowFrames - 1)) {
    throw ConfigError("target_length " + std::to_string(target_length) +
                      " is too short for 26 frames of " + std::to_string(frame_length) +
                      " samples; need at least " + std::to_string(frame_length + kWindowFrames - 1));
  }
  if (f_min < 0.0 || (f_max != 0.0 && f_max <= f_min)) throw ConfigError("invalid f_min/f_max");
}

std::size_t PipelineConfig::hop_length() const {
  return (target_length - frame_length) / (kWindowFrames - 1);
}

std::string PipelineConfig::to_json() const {
  nlohmann::json j = {
      {"version", 1},
      {"n_mfcc", n_mfcc},
      {"target_length", target_length},
      {"frame_length", frame_length},
      {"n_mels", n_mels},
      {"f_min", f_min},
      {"f_max", f_max},
      {"augment_reverse", augment_reverse},
      {"augment_invert", augment_invert},
  };
  return j.dump(2);
}

PipelineConfig PipelineConfig::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("pipeline config: ") + e.what());
  }
  if (!j.is_object() || j.value("version", 0) != 1) {
    throw FormatError("pipeline config: missing or unsupported version");
  }
  PipelineConfig c;
  try {
    c.n_mfcc = j.at("n_mfcc").get<std::size_t>();
    c.target_length = j.at("target_length").get<std::size_t>();
    c.frame_length = j.at("frame_length").get<std::size_t>();
    c.n_mels = j.at("n_mels").get<std::size_t>();
    c.f_min = j.value("f_min", 0.0);
    c.f_max = j.value("f_max", 0.0);
    c.augment_reverse = j.value("augment_reverse", false);
    c.augment_invert = j.value("augment_invert", false);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("pipeline config: ") + e.what());
  }
  return c;
}

AudioClip normalize_loudness(const AudioClip& clip) {
  if (clip.samples.empty()) throw DomainError("normalize_loudness: empty clip");
  AudioClip out = clip;
  standardize_in_place(out.samples);
  return out;
}

AudioClip pad_to_length(const AudioClip& clip, std::size_t target) {
  if (clip.samples.size() > target) {
    throw LengthError("pad_to_length: clip of " + std::to_string(clip.samples.size()) +
                      " samples exceeds target " + std::to_string(target));
  }
  const std::size_t pad = target - clip.samples.size();
  const std::size_t head = (pad + 1) / 2;
  AudioClip out;
  out.sample_rate = clip.sample_rate;
  out.source_id = clip.source_id;
  out.samples.assign(target, 0.0);
  std::copy(clip.samples.begin(), clip.samples.end(), out.samples.begin() + static_cast<std::ptrdiff_t>(head));
  return out;
}

AudioClip truncate_to_length(const AudioClip& clip, std::size_t target) {
  if (clip.samples.size() < target) {
    throw LengthError("truncate_to_length: clip shorter than target");
  }
  const std::size_t excess = clip.samples.size() - target;
  const std::size_t head = (excess + 1) / 2;
  AudioClip out;
  out.sample_rate = clip.sample_rate;
  out.source_id = clip.source_id;
  out.samples.assign(clip.samples.begin() + static_cast<std::ptrdiff_t>(head),
                     clip.samples.begin() + static_cast<std::ptrdiff_t>(head + target));
  return out;
}

AudioClip fit_to_length(const AudioClip& clip, std::size_t target) {
  return clip.samples.size() > target ? truncate_to_length(clip, target) : pad_to_length(clip, target);
}

AudioClip augment_reverse(const AudioClip& clip) {
  AudioClip out = clip;
  std::reverse(out.samples.begin(), out.samples.end());
  return out;
}

AudioClip augment_invert(const AudioClip& clip) {
  AudioClip out = clip;
  for (double& s : out.samples) s = -s;
  return out;
}

bool standardize_in_place(std::span<double> values) {
  if (values.empty()) return false;
  const double n = static_cast<double>(values.size());
  double sum = 0.0;
  for (double v : values) sum += v;
  const double mean = sum / n;
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / n);
  // Rounding in the mean leaves ~1e-17 residue on constant input.
  if (!(sd > 1e-12 * std::max(1.0, std::abs(mean)))) {
    std::fill(values.begin(), values.end(), 0.0);
    return false;
  }
  for (double& v : values) v = (v - mean) / sd;
  return true;
}

FeatureWindow make_feature_window(const AudioClip& clip, const PipelineConfig& cfg) {
  cfg.validate();
  if (clip.samples.size() != cfg.target_length) {
    throw LengthError("make_feature_window: clip has " + std::to_string(clip.samples.size()) +
                      " samples, pipeline expects " + std::to_string(cfg.target_length));
  }
  FeatureWindow w;
  w.n_mfcc = cfg.n_mfcc;
  w.values.assign(cfg.n_mfcc * kWindowFrames, 0.0);
  w.standardized = true;

  // No signal energy (silence, or a constant clip after normalization) is
  // the degenerate case: the window is all zeros.
  const bool silent = std::all_of(clip.samples.begin(), clip.samples.end(), [](double s) { return s == 0.0; });
  if (silent) return w;

  dsp::MfccConfig mc;
  mc.n_mfcc = cfg.n_mfcc;
  mc.frame_length = cfg.frame_length;
  mc.hop_length = cfg.hop_length();
  mc.n_mels = cfg.effective_n_mels();
  mc.f_min = cfg.f_min;
  mc.f_max = cfg.f_max;
  const dsp::MfccMatrix m = dsp::mfcc(clip, mc);
  if (m.n_frames < kWindowFrames) throw StateError("hop derivation produced fewer than 26 frames");
  for (std::size_t c = 0; c < cfg.n_mfcc; ++c) {
    for (std::size_t f = 0; f < kWindowFrames; ++f) w.values[c * kWindowFrames + f] = m.at(c, f);
  }
  standardize_in_place(w.values);
  return w;
}

FeatureWindow extract_feature_window(const AudioClip& raw, const PipelineConfig& cfg) {
  return make_feature_window(fit_to_length(normalize_loudness(raw), cfg.target_length), cfg);
}

std::vector<double> flatten(const FeatureWindow& window) { return window.values; }

std::size_t max_clip_length(const std::vector<SampleRecord>& records, const ClipLoader& load) {
  std::size_t longest = 0;
  for (const auto& r : records) {
    if (r.augmented_from) continue;
    longest = std::max(longest, load(r).samples.size());
  }
  return longest;
}

ExtractedSet extract_manifest(const std::vector<SampleRecord>& records, const ClipLoader& load,
                              const PipelineConfig& cfg) {
  cfg.validate();
  ExtractedSet out;
  for (const auto& r : records) {
    if (r.augmented_from) continue;
    AudioClip clip = load(r);
    validate_clip(clip);
    FeatureWindow base = extract_feature_window(clip, cfg);
    out.records.push_back(r);
    out.windows.push_back({r.id, r.label, base});
    ++out.report.originals;

    if (cfg.augment_reverse) {
      SampleRecord a = r;
      a.id = r.id + "#rev";
      a.augmented_from = r.id;
      out.records.push_back(a);
      out.windows.push_back({a.id, a.label, extract_feature_window(augment_reverse(clip), cfg)});
      ++out.report.reversed;
    }
    if (cfg.augment_invert) {
      SampleRecord a = r;
      a.id = r.id + "#inv";
      a.augmented_from = r.id;
      FeatureWindow inv = extract_feature_window(augment_invert(clip), cfg);
      if (inv.values == base.values) ++out.report.inverted_duplicates;
      out.records.push_back(a);
      out.windows.push_back({a.id, a.label, std::move(inv)});
      ++out.report.inverted;
    }
  }
  return out;
}

std::vector<std::uint8_t> encode_feature_cache(const std::vector<LabeledWindow>& windows) {
  ByteWriter w;
  w.raw(kCacheMagic);
  w.u32(kCacheVersion);
  w.u32(static_cast<std::uint32_t>(windows.size()));
  for (const auto& lw : windows) {
    if (lw.window.values.size() != lw.window.n_mfcc * kWindowFrames) {
      throw ShapeError("feature window " + lw.id + " has inconsistent size");
    }
    w.str(lw.id);
    w.u32(static_cast<std::uint32_t>(code(lw.label)));
    w.u32(static_cast<std::uint32_t>(lw.window.n_mfcc));
    w.u32(static_cast<std::uint32_t>(kWindowFrames));
    for (double v : lw.window.values) w.f32(static_cast<float>(v));
  }
  return w.take();
}

std::vector<LabeledWindow> decode_feature_cache(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  if (bytes.size() < 16 || r.raw(8) != kCacheMagic) throw FormatError("not a feature cache (bad magic)");
  const auto version = r.u32();
  if (version != kCacheVersion) {
    throw UnsupportedFormatError("unsupported feature cache version: " + std::to_string(version));
  }
  const auto count = r.u32();
  std::vector<LabeledWindow> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    LabeledWindow lw;
    lw.id = r.str();
    auto label = label_from_code(static_cast<int>(r.u32()));
    if (!label) throw FormatError("feature cache record " + lw.id + ": label out of range");
    lw.label = *label;
    lw.window.n_mfcc = r.u32();
    const auto frames = r.u32();
    if (frames != kWindowFrames || lw.window.n_mfcc == 0) {
      throw FormatError("feature cache record " + lw.id + ": bad shape");
    }
    lw.window.values.resize(lw.window.n_mfcc * frames);
    for (double& v : lw.window.values) v = r.f32();
    lw.window.standardized = true;
    out.push_back(std::move(lw));
  }
  if (!r.done()) throw FormatError("feature cache has trailing bytes");
  return out;
}

void write_feature_cache(const std::filesystem::path& path, const std::vector<LabeledWindow>& windows) {
  write_file_bytes(path, encode_feature_cache(windows));
}

std::vector<LabeledWindow> read_feature_cache(const std::filesystem::path& path) {
  return decode_feature_cache(read_file_bytes(path));
}

}  // namespace ser

#include "ser/synthetic.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>

#include "ser/error.hpp"

namespace ser {

AudioClip synth_emotion_clip(EmotionLabel label, double seconds, int sample_rate, Rng& rng) {
  const auto c = static_cast<double>(code(label));
  const double f0 = (140.0 + 55.0 * c) * rng.uniform(0.98, 1.02);
  const double tremolo = 2.0 + 1.5 * c;
  const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  // Harmonic weights rotate with the class so the spectral envelope differs.
  double weights[4];
  for (int h = 0; h < 4; ++h) weights[h] = 0.25 + 0.75 * std::abs(std::cos((c + 1.0) * (h + 1) * 0.7));
  const double nyquist = 0.5 * sample_rate;

  AudioClip clip;
  clip.sample_rate = sample_rate;
  const auto n = static_cast<std::size_t>(std::llround(seconds * sample_rate));
  if (n == 0) throw DomainError("synthetic clip needs a positive duration");
  clip.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / sample_rate;
    double v = 0.0;
    for (int h = 0; h < 4; ++h) {
      const double f = f0 * (h + 1);
      if (f < nyquist) v += weights[h] * std::sin(2.0 * std::numbers::pi * f * t + phase * (h + 1));
    }
    const double env = 0.6 + 0.4 * std::sin(2.0 * std::numbers::pi * tremolo * t);
    clip.samples[i] = 0.2 * env * v + 0.01 * rng.normal();
  }
  return clip;
}

std::vector<SampleRecord> write_synthetic_corpus(const std::filesystem::path& dir,
                                                 const SyntheticCorpusOptions& o) {
  if (o.per_class == 0 || o.per_class > 96) throw ConfigError("synthetic corpus needs 1..96 clips per class");
  std::filesystem::create_directories(dir);
  Rng rng(o.seed);
  std::vector<SampleRecord> records;
  for (std::size_t c = 0; c < kNumEmotions; ++c) {
    for (std::size_t i = 0; i < o.per_class; ++i) {
      const std::size_t actor = i % 24 + 1, statement = (i / 24) % 2 + 1, rep = (i / 48) % 2 + 1;
      char name[40];
      std::snprintf(name, sizeof name, "03-01-%02zu-01-%02zu-%02zu-%02zu.wav", c + 1, statement, rep, actor);
      const double seconds = o.seconds * (1.0 + o.length_jitter * rng.uniform(-1.0, 1.0));
      const auto clip = synth_emotion_clip(static_cast<EmotionLabel>(c), seconds, o.sample_rate, rng);
      SampleRecord r = parse_ravdess_filename(name);
      r.corpus = Corpus::synthetic;
      r.path = dir / name;
      write_wav(r.path, clip);
      records.push_back(std::move(r));
    }
  }
  return records;
}

std::vector<LabeledWindow> synthetic_windows(std::size_t per_class, const PipelineConfig& cfg, double seconds,
                                             int sample_rate, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<LabeledWindow> out;
  for (std::size_t i = 0; i < per_class; ++i) {
    for (std::size_t c = 0; c < kNumEmotions; ++c) {
      const auto label = static_cast<EmotionLabel>(c);
      const auto clip = synth_emotion_clip(label, seconds, sample_rate, rng);
      out.push_back({"syn" + std::to_string(c) + "_" + std::to_string(i), label, extract_feature_window(clip, cfg)});
    }
  }
  return out;
}

}  // namespace ser

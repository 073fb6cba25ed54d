#pragma once

// Small in-memory corpora shared by the unit and acceptance tests.

#include <cstdint>

#include "ser/features.hpp"
#include "ser/synthetic.hpp"

namespace fixture {

inline constexpr int kRate = 8000;

inline ser::PipelineConfig pipeline(std::size_t n_mfcc, double seconds) {
  ser::PipelineConfig cfg;
  cfg.n_mfcc = n_mfcc;
  cfg.frame_length = 256;
  cfg.target_length = static_cast<std::size_t>(seconds * kRate);
  return cfg;
}

inline ser::ExtractedSet synthetic_set(std::size_t n_mfcc, std::size_t per_class, std::uint64_t seed,
                                       double seconds = 0.5) {
  ser::ExtractedSet set;
  set.windows = ser::synthetic_windows(per_class, pipeline(n_mfcc, seconds), seconds, kRate, seed);
  for (const auto& w : set.windows) {
    ser::SampleRecord r;
    r.id = w.id;
    r.path = w.id + ".wav";
    r.label = w.label;
    r.corpus = ser::Corpus::synthetic;
    set.records.push_back(r);
  }
  set.report.originals = set.windows.size();
  return set;
}

}  // namespace fixture
